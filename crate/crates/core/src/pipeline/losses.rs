use serde::{Deserialize, Serialize};

use crate::augment::{self, CartesianCandidates, DebiasConfig, DebiasWeights, PairCandidates};
use crate::domain::{CompositionSpace, FrequencyTable, Pair};
use crate::encoders::TextKind;
use crate::numerics::{Graph, Tensor2, Var};

use super::model::{DefaModel, LossWeights};
use super::PipelineError;

/// Label set of the composition path softmax during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CompCandidates {
    /// Every pair of A×O.
    #[default]
    Full,
    /// The training compositions `C^s`.
    Seen,
}

/// Everything about the training label space that is fixed across batches.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub seen: Vec<Pair>,
    pub debias: DebiasWeights,
    pub comp_candidates: CompCandidates,
    pub pair_candidates: PairCandidates,
    pub cartesian_candidates: CartesianCandidates,
    seen_pos: Vec<Option<usize>>,
}

impl LossContext {
    pub fn new(
        space: &CompositionSpace,
        freq: &FrequencyTable,
        weights: &LossWeights,
        comp_candidates: CompCandidates,
        pair_candidates: PairCandidates,
        cartesian_candidates: CartesianCandidates,
    ) -> Result<Self, PipelineError> {
        let seen: Vec<Pair> = space.seen().iter().copied().collect();
        let mut seen_pos = vec![None; space.n_comps()];
        for (i, p) in seen.iter().enumerate() {
            seen_pos[space.comp_index(*p)] = Some(i);
        }
        let cfg = DebiasConfig::new(weights.rho, weights.mu)?;
        Ok(Self {
            seen,
            debias: DebiasWeights::from_counts(freq, cfg),
            comp_candidates,
            pair_candidates,
            cartesian_candidates,
            seen_pos,
        })
    }

    fn seen_index(&self, p: Pair, n_objs: usize) -> Result<usize, PipelineError> {
        self.seen_pos[p.attr * n_objs + p.obj].ok_or(PipelineError::NotSeen(p))
    }
}

/// Graph nodes of every loss term for one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLosses {
    pub l_attr: Var,
    pub l_obj: Var,
    pub l_comp: Var,
    pub l_cla: Var,
    pub l_dis: Var,
    pub l_rec: Var,
    pub l_pair: Var,
    pub l_cts: Var,
    pub total: Var,
}

/// Scalar values of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub l_cla: f64,
    pub l_dis: f64,
    pub l_rec: f64,
    pub l_pair: f64,
    pub l_cts: f64,
}

impl LossParts {
    pub const NAMES: [&'static str; 5] = ["l_cla", "l_dis", "l_rec", "l_pair", "l_cts"];

    pub fn values(&self) -> [f64; 5] {
        [self.l_cla, self.l_dis, self.l_rec, self.l_pair, self.l_cts]
    }

    pub fn read(g: &Graph, b: &BatchLosses) -> Self {
        Self {
            l_cla: g.value(b.l_cla).item(),
            l_dis: g.value(b.l_dis).item(),
            l_rec: g.value(b.l_rec).item(),
            l_pair: g.value(b.l_pair).item(),
            l_cts: g.value(b.l_cts).item(),
        }
    }
}

/// `L = L_cla + λ2·L_dis + λ3·L_rec + λ4·L_pair + λ5·L_cts`.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    parts.l_cla + w.lambda2 * parts.l_dis + w.lambda3 * parts.l_rec + w.lambda4 * parts.l_pair + w.lambda5 * parts.l_cts
}

/// `λ1·L^c + (1−λ1)·(L^a + L^o)` from per-path cross-entropies.
pub fn classification_loss(l_attr: f64, l_obj: f64, l_comp: f64, lambda1: f64) -> f64 {
    lambda1 * l_comp + (1.0 - lambda1) * (l_attr + l_obj)
}

/// Builds every loss term for a batch. Terms whose λ is zero are still
/// evaluated (for logging) but left out of `total`.
pub fn batch_losses(
    g: &mut Graph,
    model: &DefaModel,
    ctx: &LossContext,
    feats: Tensor2,
    labels: &[Pair],
) -> Result<BatchLosses, PipelineError> {
    let w = &model.weights;
    let store = &model.store;
    let vocab = &model.vocab;
    let n_objs = vocab.n_objs();
    if labels.is_empty() || feats.rows() != labels.len() {
        return Err(PipelineError::EmptyDataset("batch without samples"));
    }
    let attrs: Vec<usize> = labels.iter().map(|p| p.attr).collect();
    let objs: Vec<usize> = labels.iter().map(|p| p.obj).collect();

    let (va, vo, vc) = model.project_batch(g, feats)?;
    let ta = model.tokens.text_features(g, store, vocab, TextKind::Attr)?;
    let to = model.tokens.text_features(g, store, vocab, TextKind::Obj)?;
    let (tc, comp_targets) = match ctx.comp_candidates {
        CompCandidates::Full => (
            model.tokens.text_features(g, store, vocab, TextKind::Comp)?,
            labels.iter().map(|p| vocab.comp_index(*p)).collect::<Vec<_>>(),
        ),
        CompCandidates::Seen => (
            model.tokens.prompt_features_for(g, store, &ctx.seen)?,
            labels
                .iter()
                .map(|p| ctx.seen_index(*p, n_objs))
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };

    let sa = augment::cosine_scores(g, va, ta)?;
    let so = augment::cosine_scores(g, vo, to)?;
    let sc = augment::cosine_scores(g, vc, tc)?;
    let l_attr = g.softmax_ce(sa, &attrs, None, w.tau)?;
    let l_obj = g.softmax_ce(so, &objs, None, w.tau)?;
    let l_comp = g.softmax_ce(sc, &comp_targets, None, w.tau)?;
    let l_cla = g.scalar_sum(&[(l_comp, w.lambda1), (l_attr, 1.0 - w.lambda1), (l_obj, 1.0 - w.lambda1)])?;

    let ta_gt = g.gather_rows(ta, &attrs)?;
    let to_gt = g.gather_rows(to, &objs)?;
    let l_dis = augment::disentangle_loss(g, va, vo, ta_gt, to_gt)?;

    let pseudo = model.fusion.fuse(g, store, va, vo)?;
    let l_rec = augment::reconstruction_loss(g, pseudo, vc)?;

    let (pair_cands, pair_targets) = match ctx.pair_candidates {
        PairCandidates::Seen => (
            ctx.seen.clone(),
            labels
                .iter()
                .map(|p| ctx.seen_index(*p, n_objs))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        PairCandidates::Batch => augment::label_candidates(labels, vocab, CartesianCandidates::Batch),
    };
    let pair_prompts = model.tokens.prompt_features_for(g, store, &pair_cands)?;
    let (_, l_pair) = augment::pairwise_aug(g, pseudo, pair_prompts, &pair_targets, w.tau)?;

    let (cart, cart_labels) = augment::cartesian_pseudo(g, store, &model.fusion, va, vo, labels)?;
    let (cart_cands, cart_targets) = augment::label_candidates(&cart_labels, vocab, ctx.cartesian_candidates);
    let cart_prompts = model.tokens.prompt_features_for(g, store, &cart_cands)?;
    let cart_w = ctx.debias.pair_weights(&cart_labels);
    let l_cts = augment::cartesian_aug_loss(g, cart, cart_prompts, &cart_targets, &cart_w, w.tau)?;

    let mut terms = vec![(l_cla, 1.0)];
    for (v, lam) in [
        (l_dis, w.lambda2),
        (l_rec, w.lambda3),
        (l_pair, w.lambda4),
        (l_cts, w.lambda5),
    ] {
        if lam != 0.0 {
            terms.push((v, lam));
        }
    }
    let total = g.scalar_sum(&terms)?;
    Ok(BatchLosses {
        l_attr,
        l_obj,
        l_comp,
        l_cla,
        l_dis,
        l_rec,
        l_pair,
        l_cts,
        total,
    })
}
