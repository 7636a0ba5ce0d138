use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::rng::SeededRng;
use super::tensor::Tensor2;
use super::NumericsError;

/// Nonlinearity between hidden layers. The last layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// `[d_in, hidden.., d_out]`
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self, NumericsError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NumericsError::Shape(format!(
                "an MLP needs at least one layer of positive widths, got {widths:?}"
            )));
        }
        Ok(Self {
            widths,
            activation: Activation::Relu,
        })
    }

    /// `layers` affine maps from `d_in` to `d_out`; hidden widths equal `hidden`.
    pub fn uniform(d_in: usize, hidden: usize, d_out: usize, layers: usize) -> Result<Self, NumericsError> {
        let mut widths = vec![d_in];
        widths.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
        widths.push(d_out);
        Self::new(widths)
    }

    pub fn d_in(&self) -> usize {
        self.widths[0]
    }

    pub fn d_out(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// An MLP whose weights live in a [`ParamStore`]. Weights are stored
/// `out × in` so a batch of row vectors maps through `x · Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers `{prefix}.{i}.weight` / `{prefix}.{i}.bias` with fan-in
    /// uniform weights and zero biases.
    pub fn register(store: &mut ParamStore, prefix: &str, spec: MlpSpec, rng: &mut SeededRng) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let wid = store.add(
                    &format!("{prefix}.{i}.weight"),
                    rng.uniform_tensor(fan_out, fan_in, bound),
                );
                let bid = store.add(&format!("{prefix}.{i}.bias"), Tensor2::zeros(1, fan_out));
                (wid, bid)
            })
            .collect();
        Self { spec, layers }
    }

    /// Rebinds to tensors already present in `store` (e.g. after loading).
    pub fn bind(store: &ParamStore, prefix: &str, spec: MlpSpec) -> Result<Self, NumericsError> {
        let mut layers = Vec::with_capacity(spec.layers());
        for (i, w) in spec.widths.windows(2).enumerate() {
            let find = |suffix: &str, shape: (usize, usize)| {
                let name = format!("{prefix}.{i}.{suffix}");
                let id = store.find(&name).ok_or_else(|| NumericsError::Missing(name.clone()))?;
                if store.value(id).shape() != shape {
                    return Err(NumericsError::Shape(format!(
                        "{name} has shape {:?}, expected {shape:?}",
                        store.value(id).shape()
                    )));
                }
                Ok(id)
            };
            layers.push((find("weight", (w[1], w[0]))?, find("bias", (1, w[1]))?));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Batched forward on the rows of `x`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let (_, cols) = g.shape(x);
        if cols != self.spec.d_in() {
            return Err(NumericsError::Shape(format!(
                "MLP expects inputs of width {}, got {cols}",
                self.spec.d_in()
            )));
        }
        let (w, b) = self.layers[0];
        let wv = g.param(store, w);
        let bv = g.param(store, b);
        let z = g.matmul_nt(x, wv)?;
        let z = g.add_row(z, bv)?;
        self.forward_after_first(g, store, z)
    }

    /// The first layer's pre-activation on `[l, r]` split by input columns:
    /// returns `(l·W_lᵀ + b, r·W_rᵀ)`, whose row sums give the pre-activation
    /// of any concatenated pair of rows.
    pub fn first_layer_halves(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        left: Var,
        right: Var,
    ) -> Result<(Var, Var), NumericsError> {
        let (wl_cols, wr_cols) = (g.shape(left).1, g.shape(right).1);
        if wl_cols + wr_cols != self.spec.d_in() {
            return Err(NumericsError::Shape(format!(
                "MLP expects inputs of width {}, got {wl_cols} + {wr_cols}",
                self.spec.d_in()
            )));
        }
        let (w, b) = self.layers[0];
        let wv = g.param(store, w);
        let bv = g.param(store, b);
        let wl = g.slice_cols(wv, 0, wl_cols)?;
        let wr = g.slice_cols(wv, wl_cols, wr_cols)?;
        let zl = g.matmul_nt(left, wl)?;
        let zl = g.add_row(zl, bv)?;
        let zr = g.matmul_nt(right, wr)?;
        Ok((zl, zr))
    }

    /// Every layer after the first, given the first layer's pre-activation.
    pub fn forward_after_first(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var, NumericsError> {
        let mut h = z;
        for &(w, b) in &self.layers[1..] {
            if self.spec.activation == Activation::Relu {
                h = g.relu(h);
            }
            let wv = g.param(store, w);
            let bv = g.param(store, b);
            let z = g.matmul_nt(h, wv)?;
            h = g.add_row(z, bv)?;
        }
        Ok(h)
    }

    /// Single-vector forward without recording gradients.
    pub fn forward_vec(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let mut g = Graph::new();
        let xv = g.constant(Tensor2::row_vector(x));
        let y = self.forward(&mut g, store, xv)?;
        Ok(g.value(y).row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(store: &mut ParamStore, name: &str, rows: &[Vec<f64>]) {
        let id = store.find(name).unwrap();
        *store.value_mut(id) = Tensor2::from_rows(rows).unwrap();
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(0);
        let mlp = Mlp::register(&mut store, "m", MlpSpec::new(vec![3, 4, 2]).unwrap(), &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        assert_eq!(mlp.forward_vec(&store, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_affine_layer_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(0);
        let mlp = Mlp::register(&mut store, "m", MlpSpec::new(vec![3, 3]).unwrap(), &mut rng);
        *store.value_mut(store.find("m.0.weight").unwrap()) = Tensor2::identity(3);
        let x = [0.5, -1.5, 2.25];
        assert_eq!(mlp.forward_vec(&store, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn two_layer_hand_example() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(0);
        let mlp = Mlp::register(&mut store, "m", MlpSpec::new(vec![2, 1, 1]).unwrap(), &mut rng);
        set(&mut store, "m.0.weight", &[vec![1.0, -1.0]]);
        set(&mut store, "m.0.bias", &[vec![0.0]]);
        set(&mut store, "m.1.weight", &[vec![2.0]]);
        set(&mut store, "m.1.bias", &[vec![1.0]]);
        assert_eq!(mlp.forward_vec(&store, &[3.0, 1.0]).unwrap(), vec![5.0]);
        // ReLU clips the hidden unit when it goes negative
        assert_eq!(mlp.forward_vec(&store, &[1.0, 3.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(0);
        let mlp = Mlp::register(&mut store, "m", MlpSpec::new(vec![3, 2]).unwrap(), &mut rng);
        assert!(matches!(
            mlp.forward_vec(&store, &[1.0, 2.0]),
            Err(NumericsError::Shape(_))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2]).is_err());
        assert_eq!(MlpSpec::uniform(4, 8, 2, 3).unwrap().widths, vec![4, 8, 8, 2]);
        assert_eq!(MlpSpec::uniform(4, 8, 2, 1).unwrap().widths, vec![4, 2]);
    }
}
