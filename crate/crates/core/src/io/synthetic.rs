//! Synthetic compositional data with known structure.
//!
//! Each attribute `a` and object `o` gets a random unit prototype `p_a`, `q_o`
//! in `k = d/2` dimensions. A sample of `(a, o)` is
//!
//! ```text
//! v = W·(p_a ⊕ q_o) + γ·√k·M·(p_a ⊙ q_o) + ε,   ε ~ N(0, σ²I)
//! ```
//!
//! with fixed Gaussian maps `W` (d×2k, entries of variance 1/d) and `M`
//! (d×k, variance 1/d). The bilinear term makes pure feature addition an
//! imperfect composition rule.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{Pair, Vocab};
use crate::numerics::{SeededRng, Tensor2};

use super::manifest::{Manifest, ManifestSample, PairDecl, PairKind, Split};
use super::{EmbeddingFile, IoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_attrs: usize,
    pub n_objs: usize,
    pub d_backbone: usize,
    pub seen_frac: f64,
    /// Mean training samples per seen pair.
    pub samples_per_pair: usize,
    /// Power-law exponent for long-tailed training counts; `None` is uniform.
    pub tail: Option<f64>,
    /// Samples per pair in each of val and test.
    pub eval_per_pair: usize,
    pub sigma: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_attrs: 8,
            n_objs: 10,
            d_backbone: 32,
            seen_frac: 0.6,
            samples_per_pair: 40,
            tail: None,
            eval_per_pair: 10,
            sigma: 0.15,
            gamma: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |m: &str| Err(IoError::Invalid(m.to_string()));
        if self.n_attrs * self.n_objs < 4 {
            return bad("N_a·N_o must be at least 4");
        }
        if !(self.seen_frac > 0.0 && self.seen_frac <= 1.0) {
            return bad("seen fraction must lie in (0, 1]");
        }
        if self.seen_pair_count() == 0 {
            return bad("seen fraction rounds to zero pairs");
        }
        if !(self.sigma >= 0.0) || !self.gamma.is_finite() {
            return bad("sigma must be non-negative and gamma finite");
        }
        if self.d_backbone < 2 {
            return bad("d_backbone must be at least 2");
        }
        if self.samples_per_pair == 0 {
            return bad("samples per pair must be positive");
        }
        if self.tail.is_some_and(|t| !(t >= 0.0)) {
            return bad("tail exponent must be non-negative");
        }
        Ok(())
    }

    pub fn seen_pair_count(&self) -> usize {
        (self.seen_frac * (self.n_attrs * self.n_objs) as f64).round() as usize
    }

    pub fn proto_dim(&self) -> usize {
        (self.d_backbone / 2).max(1)
    }
}

/// Generated dataset plus the hidden generative structure.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub embeddings: EmbeddingFile,
    pub manifest: Manifest,
    pub attr_protos: Tensor2,
    pub obj_protos: Tensor2,
    pub mixing: Tensor2,
    pub interaction: Tensor2,
    pub train_counts: Vec<(Pair, usize)>,
}

impl SyntheticData {
    /// Noise-free feature of `(a, o)`.
    pub fn clean_feature(&self, p: Pair, gamma: f64) -> Vec<f64> {
        feature(self, p, gamma)
    }
}

fn feature(d: &SyntheticData, p: Pair, gamma: f64) -> Vec<f64> {
    let pa = d.attr_protos.row(p.attr);
    let qo = d.obj_protos.row(p.obj);
    let k = pa.len();
    let concat: Vec<f64> = pa.iter().chain(qo).copied().collect();
    let had: Vec<f64> = pa.iter().zip(qo).map(|(x, y)| x * y).collect();
    let scale = gamma * (k as f64).sqrt();
    (0..d.mixing.rows())
        .map(|r| {
            let lin = crate::numerics::dot(d.mixing.row(r), &concat);
            let inter = crate::numerics::dot(d.interaction.row(r), &had);
            lin + scale * inter
        })
        .collect()
}

/// Integer counts proportional to `rank^-tail` summing to `total`, each ≥ 1.
fn power_law_counts(n: usize, total: usize, tail: f64) -> Vec<usize> {
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-tail)).collect();
    let wsum: f64 = weights.iter().sum();
    let spare = total.saturating_sub(n);
    let exact: Vec<f64> = weights.iter().map(|w| w / wsum * spare as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| 1 + x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    // largest remainder, ties to the lower rank
    order.sort_by(|&i, &j| {
        let (ri, rj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().take(total.max(n) - assigned) {
        counts[i] += 1;
    }
    counts
}

fn choose_seen(spec: &SyntheticSpec, rng: &mut SeededRng, vocab: &Vocab) -> BTreeSet<Pair> {
    let n_seen = spec.seen_pair_count();
    let cover = n_seen >= spec.n_attrs.max(spec.n_objs);
    let mut last = BTreeSet::new();
    // Uniform draws, redrawn (boundedly) until every primitive appears in a seen pair.
    for _ in 0..1000 {
        let mut all: Vec<usize> = (0..vocab.n_comps()).collect();
        rng.shuffle(&mut all);
        let seen: BTreeSet<Pair> = all[..n_seen].iter().map(|&c| vocab.pair_of(c)).collect();
        let attrs: BTreeSet<usize> = seen.iter().map(|p| p.attr).collect();
        let objs: BTreeSet<usize> = seen.iter().map(|p| p.obj).collect();
        if !cover || (attrs.len() == spec.n_attrs && objs.len() == spec.n_objs) {
            return seen;
        }
        last = seen;
    }
    last
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, IoError> {
    spec.validate()?;
    let d = spec.d_backbone;
    let k = spec.proto_dim();
    let vocab = Vocab::new(
        (0..spec.n_attrs).map(|i| format!("attr{i:02}")).collect(),
        (0..spec.n_objs).map(|i| format!("obj{i:02}")).collect(),
    )?;

    let mut proto_rng = SeededRng::derive(spec.seed, 1);
    let mut map_rng = SeededRng::derive(spec.seed, 2);
    let mut pair_rng = SeededRng::derive(spec.seed, 3);
    let mut noise_rng = SeededRng::derive(spec.seed, 4);

    let attr_rows: Vec<Vec<f64>> = (0..spec.n_attrs).map(|_| proto_rng.unit_vector(k)).collect();
    let obj_rows: Vec<Vec<f64>> = (0..spec.n_objs).map(|_| proto_rng.unit_vector(k)).collect();
    let std = 1.0 / (d as f64).sqrt();
    let mixing = map_rng.normal_tensor(d, 2 * k, std);
    let interaction = map_rng.normal_tensor(d, k, std);

    let seen = choose_seen(spec, &mut pair_rng, &vocab);
    let unseen: Vec<Pair> = (0..vocab.n_comps())
        .map(|c| vocab.pair_of(c))
        .filter(|p| !seen.contains(p))
        .collect();

    let seen_list: Vec<Pair> = seen.iter().copied().collect();
    let counts: Vec<usize> = match spec.tail {
        None => vec![spec.samples_per_pair; seen_list.len()],
        Some(t) => {
            let mut ranked = seen_list.clone();
            pair_rng.shuffle(&mut ranked);
            let c = power_law_counts(ranked.len(), spec.samples_per_pair * ranked.len(), t);
            seen_list
                .iter()
                .map(|p| c[ranked.iter().position(|q| q == p).expect("same set")])
                .collect()
        }
    };

    let mut data = SyntheticData {
        embeddings: EmbeddingFile::new(vec![], d, vec![])?,
        manifest: Manifest {
            vocab: vocab.clone(),
            pairs: vec![],
            samples: vec![],
        },
        attr_protos: Tensor2::from_rows(&attr_rows).map_err(|e| IoError::Invalid(e.to_string()))?,
        obj_protos: Tensor2::from_rows(&obj_rows).map_err(|e| IoError::Invalid(e.to_string()))?,
        mixing,
        interaction,
        train_counts: seen_list.iter().copied().zip(counts.iter().copied()).collect(),
    };

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    let mut emit = |split: Split, p: Pair, n: usize, rng: &mut SeededRng, data: &SyntheticData| {
        let clean = feature(data, p, spec.gamma);
        for _ in 0..n {
            let id = format!("{}_{:06}", split.as_str(), samples.len());
            let v: Vec<f64> = clean.iter().map(|x| x + spec.sigma * rng.normal()).collect();
            samples.push(ManifestSample {
                image_id: id.clone(),
                pair: p,
                split,
            });
            ids.push(id);
            rows.push(v);
        }
    };
    for (&p, &n) in seen_list.iter().zip(&counts) {
        emit(Split::Train, p, n, &mut noise_rng, &data);
    }
    let mut pairs = Vec::new();
    for split in [Split::Val, Split::Test] {
        for &p in &seen_list {
            emit(split, p, spec.eval_per_pair, &mut noise_rng, &data);
        }
        for &p in &unseen {
            emit(split, p, spec.eval_per_pair, &mut noise_rng, &data);
            pairs.push(PairDecl {
                split,
                kind: PairKind::Unseen,
                pair: p,
            });
        }
    }
    data.embeddings = EmbeddingFile::from_rows(ids, d, &rows)?;
    data.manifest.samples = samples;
    data.manifest.pairs = pairs;
    Ok(data)
}
