use serde::{Deserialize, Serialize};

use crate::augment::{self, FusionNet};
use crate::domain::{Pair, Sample, Vocab};
use crate::encoders::{TextKind, TokenInit, TokenTable, VisualProjectors};
use crate::numerics::{Graph, MlpSpec, ParamId, ParamStore, SeededRng, Tensor2, Var};

use super::PipelineError;

/// Loss balance and scoring hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub mu: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.9,
            lambda2: 10.0,
            lambda3: 10.0,
            lambda4: 0.9,
            lambda5: 0.1,
            alpha: 0.8,
            beta: 0.5,
            rho: 0.5,
            mu: 0.8,
            tau: 0.01,
        }
    }
}

impl LossWeights {
    /// Classification loss only, scored by `S_cla` alone.
    pub fn baseline(self) -> Self {
        Self {
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            lambda5: 0.0,
            beta: 1.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for (name, v) in [
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be a non-negative finite number"));
            }
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("rho", self.rho),
            ("mu", self.mu),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau = {} must be positive", self.tau));
        }
        Ok(())
    }
}

/// Architecture of the trainable model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_backbone: usize,
    pub d: usize,
    pub proj_layers: usize,
    pub proj_hidden: usize,
    pub fusion_layers: usize,
}

impl ModelConfig {
    pub fn new(d_backbone: usize, d: usize) -> Self {
        Self {
            d_backbone,
            d,
            proj_layers: 2,
            proj_hidden: d,
            fusion_layers: 1,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.d_backbone == 0 || self.d == 0 || self.proj_hidden == 0 {
            return Err(PipelineError::Config("dimensions must be positive".into()));
        }
        if self.proj_layers == 0 || self.fusion_layers == 0 {
            return Err(PipelineError::Config(
                "projector and fusion layer counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn projector_spec(&self) -> Result<MlpSpec, PipelineError> {
        Ok(MlpSpec::uniform(
            self.d_backbone,
            self.proj_hidden,
            self.d,
            self.proj_layers,
        )?)
    }
}

/// Per-image scores over a candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBundle {
    pub candidates: Vec<Pair>,
    /// n × N_a
    pub s_attr: Tensor2,
    /// n × N_o
    pub s_obj: Tensor2,
    /// n × K; the remaining matrices are over the same candidates.
    pub s_comp: Tensor2,
    pub s_cla: Tensor2,
    pub s_pair: Tensor2,
    pub s: Tensor2,
}

/// Projectors, text path and fusion network with their parameters.
#[derive(Debug, Clone)]
pub struct DefaModel {
    pub store: ParamStore,
    pub projectors: VisualProjectors,
    pub tokens: TokenTable,
    pub fusion: FusionNet,
    pub vocab: Vocab,
    pub config: ModelConfig,
    pub weights: LossWeights,
}

/// Rows scored per forward graph at inference.
const SCORE_CHUNK: usize = 512;

impl DefaModel {
    pub fn new(
        vocab: Vocab,
        config: ModelConfig,
        weights: LossWeights,
        seed: u64,
        token_init: TokenInit,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        weights.validate()?;
        let mut store = ParamStore::new();
        let mut rng = SeededRng::derive(seed, 10);
        let projectors = VisualProjectors::register(&mut store, &config.projector_spec()?, &mut rng);
        let tokens = TokenTable::register(&mut store, &vocab, config.d, token_init, &mut rng)?;
        let fusion = FusionNet::register(&mut store, config.d, config.fusion_layers, weights.alpha, &mut rng)?;
        Ok(Self {
            store,
            projectors,
            tokens,
            fusion,
            vocab,
            config,
            weights,
        })
    }

    /// Rebinds the model structure to an existing parameter store.
    pub fn from_parts(
        store: ParamStore,
        contexts: Tensor2,
        vocab: Vocab,
        config: ModelConfig,
        weights: LossWeights,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        weights.validate()?;
        let projectors = VisualProjectors::bind(&store, &config.projector_spec()?)?;
        let tokens = TokenTable::bind(&store, config.d, contexts)?;
        let fusion = FusionNet::bind(&store, config.d, config.fusion_layers, weights.alpha)?;
        let expected = store.ids().count();
        let model = Self {
            store,
            projectors,
            tokens,
            fusion,
            vocab,
            config,
            weights,
        };
        if model.param_groups().iter().map(|(_, ids)| ids.len()).sum::<usize>() != expected {
            return Err(PipelineError::Checkpoint(
                "parameter store holds unexpected tensors".into(),
            ));
        }
        Ok(model)
    }

    /// Changes `α` in both the weights and the fusion network.
    pub fn set_alpha(&mut self, alpha: f64) {
        self.weights.alpha = alpha;
        self.fusion.alpha = alpha;
    }

    /// Parameter ids grouped by component.
    pub fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        vec![
            ("proj_attr", self.projectors.attr.param_ids().collect()),
            ("proj_obj", self.projectors.obj.param_ids().collect()),
            ("proj_comp", self.projectors.comp.param_ids().collect()),
            ("tokens", vec![self.tokens.attr_tokens, self.tokens.obj_tokens]),
            ("combiner", self.tokens.combiner.param_ids().collect()),
            ("fusion", self.fusion.mlp.param_ids().collect()),
        ]
    }

    pub fn features(samples: &[Sample]) -> Result<Tensor2, PipelineError> {
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.feature.clone()).collect();
        if rows.is_empty() {
            return Err(PipelineError::EmptyDataset("no samples to score"));
        }
        Ok(Tensor2::from_rows(&rows)?)
    }

    /// Full score bundle of `samples` over `candidates`.
    pub fn score_bundle(&self, samples: &[Sample], candidates: &[Pair]) -> Result<ScoreBundle, PipelineError> {
        let feats = Self::features(samples)?;
        if feats.cols() != self.config.d_backbone {
            return Err(PipelineError::Config(format!(
                "features have dim {}, model expects {}",
                feats.cols(),
                self.config.d_backbone
            )));
        }
        if candidates.is_empty() {
            return Err(PipelineError::Config("empty candidate set".into()));
        }
        for p in candidates {
            self.vocab.check(*p)?;
        }
        let n = feats.rows();
        let k = candidates.len();
        let mut out = ScoreBundle {
            candidates: candidates.to_vec(),
            s_attr: Tensor2::zeros(n, self.vocab.n_attrs()),
            s_obj: Tensor2::zeros(n, self.vocab.n_objs()),
            s_comp: Tensor2::zeros(n, k),
            s_cla: Tensor2::zeros(n, k),
            s_pair: Tensor2::zeros(n, k),
            s: Tensor2::zeros(n, k),
        };
        let store = &self.store;
        let mut g = Graph::new();
        let ta = self.tokens.text_features(&mut g, store, &self.vocab, TextKind::Attr)?;
        let to = self.tokens.text_features(&mut g, store, &self.vocab, TextKind::Obj)?;
        let tc = self.tokens.prompt_features_for(&mut g, store, candidates)?;
        let (ta, to, tc) = (g.value(ta).clone(), g.value(to).clone(), g.value(tc).clone());

        let mut start = 0;
        while start < n {
            let end = (start + SCORE_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let mut g = Graph::new();
            let x = g.constant(feats.gather_rows(&idx));
            let (va, vo, vc) = self.projectors.project(&mut g, store, x)?;
            let cta = g.constant(ta.clone());
            let cto = g.constant(to.clone());
            let ctc = g.constant(tc.clone());
            let sa = augment::cosine_scores(&mut g, va, cta)?;
            let so = augment::cosine_scores(&mut g, vo, cto)?;
            let sc = augment::cosine_scores(&mut g, vc, ctc)?;
            let pseudo = self.fusion.fuse(&mut g, store, va, vo)?;
            let sp = augment::cosine_scores(&mut g, pseudo, ctc)?;
            for (r, i) in (start..end).enumerate() {
                out.s_attr.row_mut(i).copy_from_slice(g.value(sa).row(r));
                out.s_obj.row_mut(i).copy_from_slice(g.value(so).row(r));
                out.s_comp.row_mut(i).copy_from_slice(g.value(sc).row(r));
                out.s_pair.row_mut(i).copy_from_slice(g.value(sp).row(r));
            }
            start = end;
        }
        out.s_cla = classification_scores(&out.s_attr, &out.s_obj, &out.s_comp, candidates, self.weights.lambda1);
        out.s = inference_score(&out.s_cla, &out.s_pair, self.weights.beta);
        Ok(out)
    }

    /// Combined inference score `S` of `samples` over `candidates`.
    pub fn inference_scores(&self, samples: &[Sample], candidates: &[Pair]) -> Result<Tensor2, PipelineError> {
        Ok(self.score_bundle(samples, candidates)?.s)
    }

    /// Index of the highest combined score per sample (lowest index on ties).
    pub fn predict(&self, samples: &[Sample], candidates: &[Pair]) -> Result<Vec<Pair>, PipelineError> {
        let s = self.inference_scores(samples, candidates)?;
        Ok((0..s.rows()).map(|i| candidates[argmax(s.row(i))]).collect())
    }

    /// The fused pseudo feature `v^c_pseudo` and the real `v^c` of each sample.
    pub fn pseudo_and_real(&self, samples: &[Sample]) -> Result<(Tensor2, Tensor2), PipelineError> {
        let feats = Self::features(samples)?;
        let mut g = Graph::new();
        let x = g.constant(feats);
        let (va, vo, vc) = self.projectors.project(&mut g, &self.store, x)?;
        let p = self.fusion.fuse(&mut g, &self.store, va, vo)?;
        Ok((g.value(p).clone(), g.value(vc).clone()))
    }

    /// `(v^a, v^o, v^c)` of each sample.
    pub fn project(&self, samples: &[Sample]) -> Result<(Tensor2, Tensor2, Tensor2), PipelineError> {
        let feats = Self::features(samples)?;
        let mut g = Graph::new();
        let x = g.constant(feats);
        let (va, vo, vc) = self.projectors.project(&mut g, &self.store, x)?;
        Ok((g.value(va).clone(), g.value(vo).clone(), g.value(vc).clone()))
    }

    /// Fuses row `i` of `va` with row `i` of `vo`.
    pub fn fuse_rows(&self, va: Tensor2, vo: Tensor2) -> Result<Tensor2, PipelineError> {
        let mut g = Graph::new();
        let a = g.constant(va);
        let o = g.constant(vo);
        let p = self.fusion.fuse(&mut g, &self.store, a, o)?;
        Ok(g.value(p).clone())
    }

    /// `T^a`, `T^o` and composition prompts for `pairs`, as plain matrices.
    pub fn text_matrices(&self, pairs: &[Pair]) -> Result<(Tensor2, Tensor2, Tensor2), PipelineError> {
        let mut g = Graph::new();
        let ta = self
            .tokens
            .text_features(&mut g, &self.store, &self.vocab, TextKind::Attr)?;
        let to = self
            .tokens
            .text_features(&mut g, &self.store, &self.vocab, TextKind::Obj)?;
        let tc = self.tokens.prompt_features_for(&mut g, &self.store, pairs)?;
        Ok((g.value(ta).clone(), g.value(to).clone(), g.value(tc).clone()))
    }

    /// Visual features of a batch as graph nodes.
    pub(crate) fn project_batch(&self, g: &mut Graph, feats: Tensor2) -> Result<(Var, Var, Var), PipelineError> {
        let x = g.constant(feats);
        Ok(self.projectors.project(g, &self.store, x)?)
    }
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `S_cla(a, o) = λ1·S^c(a, o) + (1−λ1)·(S^a(a) + S^o(o))` for each candidate.
pub fn classification_scores(
    s_attr: &Tensor2,
    s_obj: &Tensor2,
    s_comp: &Tensor2,
    candidates: &[Pair],
    lambda1: f64,
) -> Tensor2 {
    let n = s_comp.rows();
    let mut out = Tensor2::zeros(n, candidates.len());
    for i in 0..n {
        let (ra, ro, rc) = (s_attr.row(i), s_obj.row(i), s_comp.row(i));
        for (k, (o, p)) in out.row_mut(i).iter_mut().zip(candidates).enumerate() {
            *o = lambda1 * rc[k] + (1.0 - lambda1) * (ra[p.attr] + ro[p.obj]);
        }
    }
    out
}

/// `S = β·S_cla + (1−β)·S_pair`; `β = 1` returns `S_cla` unchanged.
pub fn inference_score(s_cla: &Tensor2, s_pair: &Tensor2, beta: f64) -> Tensor2 {
    if beta == 1.0 {
        return s_cla.clone();
    }
    let mut out = s_cla.clone();
    for (o, p) in out.data_mut().iter_mut().zip(s_pair.data()) {
        *o = beta * *o + (1.0 - beta) * p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_score_examples() {
        let sa = Tensor2::row_vector(&[0.4]);
        let so = Tensor2::row_vector(&[0.6]);
        let sc = Tensor2::row_vector(&[0.5]);
        let c = [Pair::new(0, 0)];
        assert!((classification_scores(&sa, &so, &sc, &c, 0.3).item() - 0.85).abs() < 1e-12);
        assert_eq!(classification_scores(&sa, &so, &sc, &c, 1.0).item(), 0.5);
        assert_eq!(classification_scores(&sa, &so, &sc, &c, 0.0).item(), 0.4 + 0.6);
    }

    #[test]
    fn inference_score_examples() {
        let cla = Tensor2::row_vector(&[0.8, 0.2]);
        let pair = Tensor2::row_vector(&[0.4, 0.9]);
        let s = inference_score(&cla, &pair, 0.5);
        assert!((s.get(0, 0) - 0.6).abs() < 1e-12 && (s.get(0, 1) - 0.55).abs() < 1e-12);
        assert_eq!(argmax(s.row(0)), 0);
        assert_eq!(inference_score(&cla, &pair, 1.0), cla);
        assert_eq!(argmax(inference_score(&cla, &pair, 0.0).row(0)), 1);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let w = LossWeights {
            lambda1: 1.5,
            ..Default::default()
        };
        assert!(w.validate().is_err());
        let w = LossWeights {
            lambda3: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
        let w = LossWeights {
            tau: 0.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
