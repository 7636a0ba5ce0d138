//! Visual projectors and learnable primitive-token text features.
//!
//! Text features are built by adding a fixed per-prompt context vector to the
//! learnable attribute and/or object tokens, mapping the sum through one shared
//! trainable affine combiner and L2-normalising each row. The same token tables
//! feed the attribute, object, composition and augmentation prompt paths.

use crate::domain::{Pair, Vocab};
use crate::io::EmbeddingFile;
use crate::numerics::{Graph, Mlp, MlpSpec, NumericsError, ParamId, ParamStore, SeededRng, Tensor2, Var};

/// Three independent MLPs mapping a backbone embedding to v^a, v^o, v^c.
#[derive(Debug, Clone)]
pub struct VisualProjectors {
    pub attr: Mlp,
    pub obj: Mlp,
    pub comp: Mlp,
}

impl VisualProjectors {
    pub const PREFIXES: [&'static str; 3] = ["proj_attr", "proj_obj", "proj_comp"];

    pub fn register(store: &mut ParamStore, spec: &MlpSpec, rng: &mut SeededRng) -> Self {
        let [a, o, c] = Self::PREFIXES;
        Self {
            attr: Mlp::register(store, a, spec.clone(), rng),
            obj: Mlp::register(store, o, spec.clone(), rng),
            comp: Mlp::register(store, c, spec.clone(), rng),
        }
    }

    pub fn bind(store: &ParamStore, spec: &MlpSpec) -> Result<Self, NumericsError> {
        let [a, o, c] = Self::PREFIXES;
        Ok(Self {
            attr: Mlp::bind(store, a, spec.clone())?,
            obj: Mlp::bind(store, o, spec.clone())?,
            comp: Mlp::bind(store, c, spec.clone())?,
        })
    }

    /// Batched projection of backbone rows `v` into (v^a, v^o, v^c).
    pub fn project(&self, g: &mut Graph, store: &ParamStore, v: Var) -> Result<(Var, Var, Var), NumericsError> {
        Ok((
            self.attr.forward(g, store, v)?,
            self.obj.forward(g, store, v)?,
            self.comp.forward(g, store, v)?,
        ))
    }

    pub fn project_vec(&self, store: &ParamStore, v: &[f64]) -> Result<[Vec<f64>; 3], NumericsError> {
        Ok([
            self.attr.forward_vec(store, v)?,
            self.obj.forward_vec(store, v)?,
            self.comp.forward_vec(store, v)?,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextKind {
    Attr,
    Obj,
    Comp,
}

impl TextKind {
    fn context_row(self) -> usize {
        match self {
            TextKind::Attr => 0,
            TextKind::Obj => 1,
            TextKind::Comp => 2,
        }
    }
}

/// How the learnable tokens are initialised.
#[derive(Debug, Clone)]
pub enum TokenInit {
    /// Uniform(±1/√d).
    Uniform,
    /// Rows taken from an imported table (`N_a×d` and `N_o×d`).
    Given { attrs: Tensor2, objs: Tensor2 },
}

/// Learnable primitive tokens, the fixed prompt contexts and the shared combiner.
#[derive(Debug, Clone)]
pub struct TokenTable {
    pub attr_tokens: ParamId,
    pub obj_tokens: ParamId,
    pub combiner: Mlp,
    /// Rows: attribute prompt, object prompt, composition prompt.
    contexts: Tensor2,
}

impl TokenTable {
    pub const ATTR_TOKENS: &'static str = "text.attr_tokens";
    pub const OBJ_TOKENS: &'static str = "text.obj_tokens";
    pub const COMBINER: &'static str = "text.combiner";

    pub fn register(
        store: &mut ParamStore,
        vocab: &Vocab,
        dim: usize,
        init: TokenInit,
        rng: &mut SeededRng,
    ) -> Result<Self, NumericsError> {
        let bound = 1.0 / (dim as f64).sqrt();
        let (attrs, objs) = match init {
            TokenInit::Uniform => (
                rng.uniform_tensor(vocab.n_attrs(), dim, bound),
                rng.uniform_tensor(vocab.n_objs(), dim, bound),
            ),
            TokenInit::Given { attrs, objs } => {
                if attrs.shape() != (vocab.n_attrs(), dim) || objs.shape() != (vocab.n_objs(), dim) {
                    return Err(NumericsError::Shape(format!(
                        "token tables {:?}/{:?} do not match {}x{dim} / {}x{dim}",
                        attrs.shape(),
                        objs.shape(),
                        vocab.n_attrs(),
                        vocab.n_objs()
                    )));
                }
                (attrs, objs)
            }
        };
        let attr_tokens = store.add(Self::ATTR_TOKENS, attrs);
        let obj_tokens = store.add(Self::OBJ_TOKENS, objs);
        let combiner = Mlp::register(store, Self::COMBINER, MlpSpec::new(vec![dim, dim])?, rng);
        let contexts = rng.uniform_tensor(3, dim, bound);
        Ok(Self {
            attr_tokens,
            obj_tokens,
            combiner,
            contexts,
        })
    }

    pub fn bind(store: &ParamStore, dim: usize, contexts: Tensor2) -> Result<Self, NumericsError> {
        let find = |n: &str| store.find(n).ok_or_else(|| NumericsError::Missing(n.to_string()));
        if contexts.shape() != (3, dim) {
            return Err(NumericsError::Shape(format!(
                "contexts have shape {:?}, expected (3, {dim})",
                contexts.shape()
            )));
        }
        Ok(Self {
            attr_tokens: find(Self::ATTR_TOKENS)?,
            obj_tokens: find(Self::OBJ_TOKENS)?,
            combiner: Mlp::bind(store, Self::COMBINER, MlpSpec::new(vec![dim, dim])?)?,
            contexts,
        })
    }

    pub fn contexts(&self) -> &Tensor2 {
        &self.contexts
    }

    pub fn contexts_mut(&mut self) -> &mut Tensor2 {
        &mut self.contexts
    }

    pub fn dim(&self) -> usize {
        self.contexts.cols()
    }

    fn context(&self, g: &mut Graph, kind: TextKind) -> Var {
        g.constant(Tensor2::row_vector(self.contexts.row(kind.context_row())))
    }

    fn encode(&self, g: &mut Graph, store: &ParamStore, summed: Var) -> Result<Var, NumericsError> {
        let h = self.combiner.forward(g, store, summed)?;
        g.normalize_rows(h)
    }

    /// `T^a` (one row per attribute) or `T^o` (one row per object); for
    /// `Comp`, one row per pair of A×O in canonical order.
    pub fn text_features(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        vocab: &Vocab,
        kind: TextKind,
    ) -> Result<Var, NumericsError> {
        match kind {
            TextKind::Attr => {
                let e = g.param(store, self.attr_tokens);
                let ctx = self.context(g, kind);
                let s = g.add_row(e, ctx)?;
                self.encode(g, store, s)
            }
            TextKind::Obj => {
                let e = g.param(store, self.obj_tokens);
                let ctx = self.context(g, kind);
                let s = g.add_row(e, ctx)?;
                self.encode(g, store, s)
            }
            TextKind::Comp => {
                let all: Vec<Pair> = (0..vocab.n_comps()).map(|c| vocab.pair_of(c)).collect();
                self.prompt_features_for(g, store, &all)
            }
        }
    }

    /// Composition-prompt features for an arbitrary list of pairs
    /// (duplicates produce duplicate rows).
    pub fn prompt_features_for(&self, g: &mut Graph, store: &ParamStore, pairs: &[Pair]) -> Result<Var, NumericsError> {
        let ea = g.param(store, self.attr_tokens);
        let eo = g.param(store, self.obj_tokens);
        let ai: Vec<usize> = pairs.iter().map(|p| p.attr).collect();
        let oi: Vec<usize> = pairs.iter().map(|p| p.obj).collect();
        let ga = g.gather_rows(ea, &ai)?;
        let go = g.gather_rows(eo, &oi)?;
        let ctx = self.context(g, TextKind::Comp);
        let with_ctx = g.add_row(ga, ctx)?;
        let s = g.add(with_ctx, go)?;
        self.encode(g, store, s)
    }

    /// Number of learnable token scalars, `(N_a + N_o)·d`.
    pub fn token_param_count(&self, store: &ParamStore) -> usize {
        store.value(self.attr_tokens).data().len() + store.value(self.obj_tokens).data().len()
    }
}

/// Reads a token table from an embedding file whose ids are `attr:<name>` and
/// `obj:<name>`. Every vocabulary entry must be present.
pub fn import_tokens(file: &EmbeddingFile, vocab: &Vocab) -> Result<TokenInit, NumericsError> {
    let dim = file.dim();
    let lookup = |key: String| -> Result<Vec<f64>, NumericsError> {
        let row = file.position(&key).ok_or(NumericsError::Missing(key))?;
        Ok(file.row_f64(row))
    };
    let mut attrs = Vec::with_capacity(vocab.n_attrs() * dim);
    for name in vocab.attributes() {
        attrs.extend(lookup(format!("attr:{name}"))?);
    }
    let mut objs = Vec::with_capacity(vocab.n_objs() * dim);
    for name in vocab.objects() {
        objs.extend(lookup(format!("obj:{name}"))?);
    }
    Ok(TokenInit::Given {
        attrs: Tensor2::from_vec(vocab.n_attrs(), dim, attrs)?,
        objs: Tensor2::from_vec(vocab.n_objs(), dim, objs)?,
    })
}
