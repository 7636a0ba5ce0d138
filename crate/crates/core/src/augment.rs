//! Fusion network, disentanglement/reconstruction losses, pairwise and
//! Cartesian feature augmentation, and frequency-aware debias weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FrequencyTable, Pair, Vocab};
use crate::numerics::{self, Graph, Mlp, MlpSpec, NumericsError, ParamStore, SeededRng, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("{name} = {value} lies outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("ground-truth pair {0} is not a candidate")]
    NotCandidate(Pair),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Label set used by the pairwise augmentation softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PairCandidates {
    /// The training composition set `C^s`.
    #[default]
    Seen,
    /// The distinct ground-truth pairs of the current batch.
    Batch,
}

/// Label set used by the Cartesian augmentation softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CartesianCandidates {
    /// The deduplicated `B^a × B^o` label set of the batch.
    #[default]
    Batch,
    /// Every pair of A×O.
    Full,
}

/// `F_θ: ℝ^{2d} → ℝ^d` with residual mix `α`.
#[derive(Debug, Clone)]
pub struct FusionNet {
    pub mlp: Mlp,
    pub alpha: f64,
}

impl FusionNet {
    pub const PREFIX: &'static str = "fusion";

    pub fn spec(d: usize, layers: usize) -> Result<MlpSpec, NumericsError> {
        MlpSpec::uniform(2 * d, d, d, layers)
    }

    pub fn register(
        store: &mut ParamStore,
        d: usize,
        layers: usize,
        alpha: f64,
        rng: &mut SeededRng,
    ) -> Result<Self, AugmentError> {
        check_unit("alpha", alpha)?;
        Ok(Self {
            mlp: Mlp::register(store, Self::PREFIX, Self::spec(d, layers)?, rng),
            alpha,
        })
    }

    pub fn bind(store: &ParamStore, d: usize, layers: usize, alpha: f64) -> Result<Self, AugmentError> {
        check_unit("alpha", alpha)?;
        Ok(Self {
            mlp: Mlp::bind(store, Self::PREFIX, Self::spec(d, layers)?)?,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.mlp.spec().d_out()
    }

    /// `α·F_θ([v^a, v^o]) + (1−α)·(v^a + v^o)`, row by row. At `α = 0` the
    /// network is not evaluated; at `α = 1` the residual is dropped.
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, va: Var, vo: Var) -> Result<Var, NumericsError> {
        if g.shape(va) != g.shape(vo) {
            return Err(NumericsError::Shape(format!(
                "fuse of {:?} and {:?}",
                g.shape(va),
                g.shape(vo)
            )));
        }
        self.fuse_with(g, store, va, vo, Graph::add)
    }

    /// `fuse(v^a_i, v^o_j)` for every `i`, `j`, in i-major order. Row
    /// `i·m + i` is bitwise equal to row `i` of [`FusionNet::fuse`].
    pub fn fuse_outer(&self, g: &mut Graph, store: &ParamStore, va: Var, vo: Var) -> Result<Var, NumericsError> {
        self.fuse_with(g, store, va, vo, Graph::outer_sum)
    }

    /// The first layer is split by input columns and evaluated per input row,
    /// so `combine` (row-wise or all-pairs sum) only meets the later layers.
    fn fuse_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        va: Var,
        vo: Var,
        combine: fn(&mut Graph, Var, Var) -> Result<Var, NumericsError>,
    ) -> Result<Var, NumericsError> {
        if g.shape(va).1 != self.dim() || g.shape(vo).1 != self.dim() {
            return Err(NumericsError::Shape(format!(
                "fuse of {:?} and {:?} with d = {}",
                g.shape(va),
                g.shape(vo),
                self.dim()
            )));
        }
        let a = self.alpha;
        if a == 0.0 {
            return combine(g, va, vo);
        }
        let (zl, zr) = self.mlp.first_layer_halves(g, store, va, vo)?;
        if self.mlp.spec().layers() == 1 {
            if a == 1.0 {
                return combine(g, zl, zr);
            }
            let l = g.lincomb(zl, a, va, 1.0 - a)?;
            let r = g.lincomb(zr, a, vo, 1.0 - a)?;
            return combine(g, l, r);
        }
        let z = combine(g, zl, zr)?;
        let f = self.mlp.forward_after_first(g, store, z)?;
        if a == 1.0 {
            return Ok(f);
        }
        let resid = combine(g, va, vo)?;
        g.lincomb(f, a, resid, 1.0 - a)
    }

    pub fn fuse_vec(&self, store: &ParamStore, va: &[f64], vo: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let mut g = Graph::new();
        let a = g.constant(numerics::Tensor2::row_vector(va));
        let o = g.constant(numerics::Tensor2::row_vector(vo));
        let out = self.fuse(&mut g, store, a, o)?;
        Ok(g.value(out).row(0).to_vec())
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), AugmentError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(AugmentError::OutOfRange { name, value })
    }
}

/// Row-wise cosine of two equally shaped matrices (n×1).
pub fn row_cosine(g: &mut Graph, a: Var, b: Var) -> Result<Var, NumericsError> {
    let na = g.normalize_rows(a)?;
    let nb = g.normalize_rows(b)?;
    g.row_dot(na, nb)
}

/// Cosine score matrix between feature rows and candidate rows (n×K).
pub fn cosine_scores(g: &mut Graph, feats: Var, text: Var) -> Result<Var, NumericsError> {
    let nf = g.normalize_rows(feats)?;
    let nt = g.normalize_rows(text)?;
    g.matmul_nt(nf, nt)
}

/// Batch mean of `cos(v^a, T^o_gt) + cos(v^o, T^a_gt)`.
pub fn disentangle_loss(g: &mut Graph, va: Var, vo: Var, ta_gt: Var, to_gt: Var) -> Result<Var, NumericsError> {
    let c1 = row_cosine(g, va, to_gt)?;
    let c2 = row_cosine(g, vo, ta_gt)?;
    let s = g.add(c1, c2)?;
    Ok(g.mean(s))
}

pub fn disentangle_loss_vec(va: &[f64], vo: &[f64], ta_gt: &[f64], to_gt: &[f64]) -> Result<f64, NumericsError> {
    Ok(numerics::cosine(va, to_gt)? + numerics::cosine(vo, ta_gt)?)
}

/// Batch mean of `−cos(v^c_pseudo, v^c)`.
pub fn reconstruction_loss(g: &mut Graph, pseudo: Var, vc: Var) -> Result<Var, NumericsError> {
    let c = row_cosine(g, pseudo, vc)?;
    let m = g.mean(c);
    g.scalar_sum(&[(m, -1.0)])
}

pub fn reconstruction_loss_vec(pseudo: &[f64], vc: &[f64]) -> Result<f64, NumericsError> {
    Ok(-numerics::cosine(pseudo, vc)?)
}

/// Scores of pseudo features against candidate prompt rows and the mean
/// cross-entropy towards `targets` (indices into the candidate rows).
pub fn pairwise_aug(
    g: &mut Graph,
    pseudo: Var,
    prompts: Var,
    targets: &[usize],
    temperature: f64,
) -> Result<(Var, Var), NumericsError> {
    let scores = cosine_scores(g, pseudo, prompts)?;
    let loss = g.softmax_ce(scores, targets, None, temperature)?;
    Ok((scores, loss))
}

/// All `|B|²` pseudo features `fuse(v^a_i, v^o_j)` in i-major order with
/// labels `(a_i, o_j)`.
pub fn cartesian_pseudo(
    g: &mut Graph,
    store: &ParamStore,
    net: &FusionNet,
    va: Var,
    vo: Var,
    labels: &[Pair],
) -> Result<(Var, Vec<Pair>), NumericsError> {
    let b = labels.len();
    if g.shape(va).0 != b || g.shape(vo).0 != b {
        return Err(NumericsError::Shape(format!(
            "{} labels for batches of {} and {} rows",
            b,
            g.shape(va).0,
            g.shape(vo).0
        )));
    }
    let pseudo = net.fuse_outer(g, store, va, vo)?;
    let pairs = (0..b * b)
        .map(|k| Pair::new(labels[k / b].attr, labels[k % b].obj))
        .collect();
    Ok((pseudo, pairs))
}

/// Candidate list for a set of labels and the index of each label in it.
/// `Batch` deduplicates and sorts by composition index; `Full` is all of A×O.
pub fn label_candidates(labels: &[Pair], vocab: &Vocab, mode: CartesianCandidates) -> (Vec<Pair>, Vec<usize>) {
    let cands: Vec<Pair> = match mode {
        CartesianCandidates::Full => (0..vocab.n_comps()).map(|c| vocab.pair_of(c)).collect(),
        CartesianCandidates::Batch => {
            let mut c: Vec<usize> = labels.iter().map(|p| vocab.comp_index(*p)).collect();
            c.sort_unstable();
            c.dedup();
            c.into_iter().map(|i| vocab.pair_of(i)).collect()
        }
    };
    let targets = labels
        .iter()
        .map(|p| {
            cands
                .binary_search_by_key(&vocab.comp_index(*p), |q| vocab.comp_index(*q))
                .expect("every label is a candidate by construction")
        })
        .collect();
    (cands, targets)
}

/// Mean over pseudo features of `w_de · CE`.
pub fn cartesian_aug_loss(
    g: &mut Graph,
    pseudo: Var,
    prompts: Var,
    targets: &[usize],
    weights: &[f64],
    temperature: f64,
) -> Result<Var, NumericsError> {
    let scores = cosine_scores(g, pseudo, prompts)?;
    g.softmax_ce(scores, targets, Some(weights), temperature)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebiasConfig {
    /// Frequency-suppression exponent.
    pub rho: f64,
    /// Composition-level vs primitive-level blend.
    pub mu: f64,
}

impl DebiasConfig {
    pub fn new(rho: f64, mu: f64) -> Result<Self, AugmentError> {
        check_unit("rho", rho)?;
        check_unit("mu", mu)?;
        Ok(Self { rho, mu })
    }
}

/// `w(k) = (|K_k|+1)^−ρ / Σ_i (|K_i|+1)^−ρ · |X|`; the weights average to 1.
pub fn factor_weights(counts: &[u64], rho: f64) -> Vec<f64> {
    let raw: Vec<f64> = counts.iter().map(|&k| (k as f64 + 1.0).powf(-rho)).collect();
    let sum: f64 = raw.iter().sum();
    let n = counts.len() as f64;
    raw.iter().map(|r| r / sum * n).collect()
}

/// Per-factor debias weights; compositions range over all of A×O.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasWeights {
    pub attr: Vec<f64>,
    pub obj: Vec<f64>,
    pub comp: Vec<f64>,
    pub mu: f64,
    n_objs: usize,
}

impl DebiasWeights {
    pub fn from_counts(freq: &FrequencyTable, cfg: DebiasConfig) -> Self {
        Self {
            attr: factor_weights(&freq.attr_counts, cfg.rho),
            obj: factor_weights(&freq.obj_counts, cfg.rho),
            comp: factor_weights(&freq.comp_counts, cfg.rho),
            mu: cfg.mu,
            n_objs: freq.obj_counts.len(),
        }
    }

    /// `w_de(a, o) = μ·w^c + (1−μ)(w^a + w^o)`.
    pub fn pair_weight(&self, p: Pair) -> f64 {
        let c = p.attr * self.n_objs + p.obj;
        self.mu * self.comp[c] + (1.0 - self.mu) * (self.attr[p.attr] + self.obj[p.obj])
    }

    pub fn pair_weights(&self, pairs: &[Pair]) -> Vec<f64> {
        pairs.iter().map(|&p| self.pair_weight(p)).collect()
    }
}
