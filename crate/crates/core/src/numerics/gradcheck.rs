//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::rng::SeededRng;
use super::NumericsError;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Coordinates sampled from each parameter tensor; smaller tensors are checked exhaustively.
    pub coords_per_param: usize,
    pub seed: u64,
    /// How often a failing coordinate is moved off a possible ReLU kink and retried.
    pub max_nudges: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            coords_per_param: 20,
            seed: 0,
            max_nudges: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoordFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub nudged: usize,
    pub max_error: f64,
    pub failures: Vec<CoordFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn scalar_of<F>(store: &ParamStore, loss: &F) -> Result<f64, NumericsError>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var), NumericsError>,
{
    let (g, root) = loss(store)?;
    Ok(g.value(root).item())
}

fn analytic_at<F>(store: &mut ParamStore, loss: &F, id: ParamId, index: usize) -> Result<f64, NumericsError>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var), NumericsError>,
{
    store.zero_grads();
    let (g, root) = loss(store)?;
    g.backward(root, store);
    Ok(store.grad(id).data()[index])
}

fn numeric_at<F>(store: &mut ParamStore, loss: &F, id: ParamId, index: usize, h: f64) -> Result<f64, NumericsError>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var), NumericsError>,
{
    let orig = store.value(id).data()[index];
    store.value_mut(id).data_mut()[index] = orig + h;
    let plus = scalar_of(store, loss);
    store.value_mut(id).data_mut()[index] = orig - h;
    let minus = scalar_of(store, loss);
    store.value_mut(id).data_mut()[index] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

/// Compares the gradient deposited by `loss` against central differences on
/// sampled coordinates of every tensor in `params`.
///
/// The error measure is `|analytic − fd| / max(1, |fd|)`. Parameter values are
/// restored afterwards except for coordinates that had to be nudged.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    loss: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var), NumericsError>,
{
    let mut rng = SeededRng::new(cfg.seed);
    let mut report = GradCheckReport::default();

    store.zero_grads();
    let (g, root) = loss(store)?;
    g.backward(root, store);
    let mut analytic: Vec<Vec<f64>> = params.iter().map(|&id| store.grad(id).data().to_vec()).collect();

    for (pi, &id) in params.iter().enumerate() {
        let n = store.value(id).data().len();
        let coords: Vec<usize> = if n <= cfg.coords_per_param {
            (0..n).collect()
        } else {
            (0..cfg.coords_per_param).map(|_| rng.below(n)).collect()
        };
        for index in coords {
            let mut a = analytic[pi][index];
            let mut fd = numeric_at(store, &loss, id, index, cfg.step)?;
            let mut err = (a - fd).abs() / fd.abs().max(1.0);
            let mut nudges = 0;
            while err > cfg.rel_tol && nudges < cfg.max_nudges {
                nudges += 1;
                let delta = rng.uniform(-1e-3, 1e-3);
                store.value_mut(id).data_mut()[index] += delta;
                a = analytic_at(store, &loss, id, index)?;
                fd = numeric_at(store, &loss, id, index, cfg.step)?;
                err = (a - fd).abs() / fd.abs().max(1.0);
            }
            if nudges > 0 {
                report.nudged += 1;
                // the point moved; refresh the stored analytic gradients
                store.zero_grads();
                let (g, root) = loss(store)?;
                g.backward(root, store);
                analytic = params.iter().map(|&id| store.grad(id).data().to_vec()).collect();
            }
            report.checked += 1;
            report.max_error = report.max_error.max(err);
            if err > cfg.rel_tol || !err.is_finite() {
                report.failures.push(CoordFailure {
                    param: store.name(id).to_string(),
                    index,
                    analytic: a,
                    numeric: fd,
                    error: err,
                });
            }
        }
    }
    store.zero_grads();
    Ok(report)
}
