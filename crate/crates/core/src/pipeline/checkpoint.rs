//! The `DEFC` checkpoint container.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "DEFC"
//! 4       4      version (u32 LE) = 1
//! 8       4      header length H (u32 LE)
//! 12      H      UTF-8 header, one `key=value` line per entry
//! 12+H    4      tensor count (u32 LE)
//! then per tensor:
//!         4      name length N (u32 LE)
//!         N      UTF-8 name
//!         4+4    rows, cols (u32 LE)
//!         8·r·c  f64 LE values, row-major
//! ```
//!
//! Parameters are stored in double precision so that a reloaded model scores
//! bit-identically. The fixed prompt contexts are stored as `text.contexts`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::domain::Vocab;
use crate::numerics::{ParamStore, Tensor2};

use super::model::{DefaModel, LossWeights, ModelConfig};
use super::PipelineError;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DEFC";
pub const CHECKPOINT_VERSION: u32 = 1;
const CONTEXTS: &str = "text.contexts";

fn header_of(model: &DefaModel, extra: &[(&str, String)]) -> BTreeMap<String, String> {
    let c = &model.config;
    let w = &model.weights;
    let mut h = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        h.insert(k.to_string(), v);
    };
    put("d_backbone", c.d_backbone.to_string());
    put("d", c.d.to_string());
    put("proj_layers", c.proj_layers.to_string());
    put("proj_hidden", c.proj_hidden.to_string());
    put("fusion_layers", c.fusion_layers.to_string());
    for (k, v) in [
        ("lambda1", w.lambda1),
        ("lambda2", w.lambda2),
        ("lambda3", w.lambda3),
        ("lambda4", w.lambda4),
        ("lambda5", w.lambda5),
        ("alpha", w.alpha),
        ("beta", w.beta),
        ("rho", w.rho),
        ("mu", w.mu),
        ("tau", w.tau),
    ] {
        put(k, v.to_string());
    }
    put("attrs", model.vocab.attributes().join("\t"));
    put("objs", model.vocab.objects().join("\t"));
    for (k, v) in extra {
        put(k, v.clone());
    }
    h
}

pub fn checkpoint_bytes(model: &DefaModel, extra: &[(&str, String)]) -> Result<Vec<u8>, PipelineError> {
    let header = header_of(model, extra);
    let mut text = String::new();
    for (k, v) in &header {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(PipelineError::Checkpoint(format!(
                "header entry {k:?} is not representable"
            )));
        }
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());

    let store = &model.store;
    let mut tensors: Vec<(&str, &Tensor2)> = store.ids().map(|id| (store.name(id), store.value(id))).collect();
    tensors.push((CONTEXTS, model.tokens.contexts()));
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(PipelineError::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PipelineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn text(&mut self, n: usize) -> Result<&'a str, PipelineError> {
        std::str::from_utf8(self.take(n)?).map_err(|_| PipelineError::Checkpoint("header is not UTF-8".into()))
    }
}

/// A loaded checkpoint: the model plus every header entry.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DefaModel,
    pub header: BTreeMap<String, String>,
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, PipelineError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(PipelineError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(PipelineError::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = r.u32()? as usize;
    let mut header = BTreeMap::new();
    for line in r.text(hlen)?.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| PipelineError::Checkpoint(format!("malformed header line {line:?}")))?;
        header.insert(k.to_string(), v.to_string());
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    let mut contexts = None;
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = r.text(nlen)?.to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(
            rows.checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| PipelineError::Checkpoint(format!("tensor {name} is too large")))?,
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(PipelineError::Checkpoint(format!(
                "tensor {name} has non-finite values"
            )));
        }
        let t = Tensor2::from_vec(rows, cols, data)?;
        if name == CONTEXTS {
            contexts = Some(t);
        } else if store.find(&name).is_some() {
            return Err(PipelineError::Checkpoint(format!("tensor {name} appears twice")));
        } else {
            store.add(&name, t);
        }
    }
    if r.pos != bytes.len() {
        return Err(PipelineError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let get = |k: &str| {
        header
            .get(k)
            .ok_or_else(|| PipelineError::Checkpoint(format!("header lacks {k}")))
    };
    let int = |k: &str| -> Result<usize, PipelineError> {
        get(k)?
            .parse()
            .map_err(|_| PipelineError::Checkpoint(format!("header {k} is not an integer")))
    };
    let real = |k: &str| -> Result<f64, PipelineError> {
        get(k)?
            .parse()
            .map_err(|_| PipelineError::Checkpoint(format!("header {k} is not a number")))
    };
    let config = ModelConfig {
        d_backbone: int("d_backbone")?,
        d: int("d")?,
        proj_layers: int("proj_layers")?,
        proj_hidden: int("proj_hidden")?,
        fusion_layers: int("fusion_layers")?,
    };
    let weights = LossWeights {
        lambda1: real("lambda1")?,
        lambda2: real("lambda2")?,
        lambda3: real("lambda3")?,
        lambda4: real("lambda4")?,
        lambda5: real("lambda5")?,
        alpha: real("alpha")?,
        beta: real("beta")?,
        rho: real("rho")?,
        mu: real("mu")?,
        tau: real("tau")?,
    };
    let names =
        |k: &str| -> Result<Vec<String>, PipelineError> { Ok(get(k)?.split('\t').map(str::to_string).collect()) };
    let vocab = Vocab::new(names("attrs")?, names("objs")?)?;
    let contexts = contexts.ok_or_else(|| PipelineError::Checkpoint("missing prompt contexts".into()))?;
    let model = DefaModel::from_parts(store, contexts, vocab, config, weights)?;
    Ok(Checkpoint { model, header })
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    model: &DefaModel,
    extra: &[(&str, String)],
) -> Result<(), PipelineError> {
    let bytes = checkpoint_bytes(model, extra)?;
    fs::write(path.as_ref(), bytes).map_err(|e| PipelineError::Io(crate::io::IoError::io(path.as_ref(), e)))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, PipelineError> {
    let bytes = fs::read(path.as_ref()).map_err(|e| PipelineError::Io(crate::io::IoError::io(path.as_ref(), e)))?;
    checkpoint_from_bytes(&bytes)
}
