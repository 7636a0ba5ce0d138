//! Tab-separated split manifest.
//!
//! ```text
//! attrs:<TAB>new<TAB>old
//! objs:<TAB>castle<TAB>bridge
//! pair:<TAB>test<TAB>unseen<TAB>old<TAB>castle
//! img_0001<TAB>new<TAB>castle<TAB>train
//! ```
//!
//! `attrs:` and `objs:` come first. `pair:` lines declare the seen or unseen
//! compositions of the val/test label spaces; sample lines give an image id,
//! its attribute, object and split. Blank lines and `#` comments are ignored.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::domain::{CompositionSpace, DomainError, Pair, Sample, Vocab};

use super::{EmbeddingFile, IoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairKind {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestSample {
    pub image_id: String,
    pub pair: Pair,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairDecl {
    pub split: Split,
    pub kind: PairKind,
    pub pair: Pair,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub vocab: Vocab,
    pub pairs: Vec<PairDecl>,
    pub samples: Vec<ManifestSample>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { line, msg: msg.into() }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut attrs: Option<Vec<String>> = None;
        let mut objs: Option<Vec<String>> = None;
        let mut vocab: Option<Vocab> = None;
        let mut pairs = Vec::new();
        let mut samples = Vec::new();
        let mut seen_ids = HashSet::new();

        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "attrs:" => {
                    if attrs.is_some() {
                        return Err(parse_err(ln, "repeated attrs: line"));
                    }
                    attrs = Some(fields[1..].iter().map(|s| s.to_string()).collect());
                }
                "objs:" => {
                    if objs.is_some() {
                        return Err(parse_err(ln, "repeated objs: line"));
                    }
                    objs = Some(fields[1..].iter().map(|s| s.to_string()).collect());
                }
                _ => {
                    if vocab.is_none() {
                        let (Some(a), Some(o)) = (attrs.clone(), objs.clone()) else {
                            return Err(parse_err(ln, "attrs: and objs: must precede other lines"));
                        };
                        vocab = Some(Vocab::new(a, o).map_err(|e| parse_err(ln, e.to_string()))?);
                    }
                    let v = vocab.as_ref().expect("vocab built above");
                    let resolve = |a: &str, o: &str| v.pair(a, o).map_err(|e| parse_err(ln, e.to_string()));
                    if fields[0] == "pair:" {
                        if fields.len() != 5 {
                            return Err(parse_err(ln, "pair: lines have 5 fields"));
                        }
                        let split = fields[1].parse::<Split>().map_err(|e| parse_err(ln, e))?;
                        let kind = match fields[2] {
                            "seen" => PairKind::Seen,
                            "unseen" => PairKind::Unseen,
                            other => return Err(parse_err(ln, format!("unknown pair kind {other:?}"))),
                        };
                        pairs.push(PairDecl {
                            split,
                            kind,
                            pair: resolve(fields[3], fields[4])?,
                        });
                    } else {
                        if fields.len() != 4 {
                            return Err(parse_err(ln, "sample lines have 4 fields"));
                        }
                        let id = fields[0];
                        if !seen_ids.insert(id.to_string()) {
                            return Err(parse_err(ln, format!("duplicate image id {id:?}")));
                        }
                        samples.push(ManifestSample {
                            image_id: id.to_string(),
                            pair: resolve(fields[1], fields[2])?,
                            split: fields[3].parse::<Split>().map_err(|e| parse_err(ln, e))?,
                        });
                    }
                }
            }
        }
        let vocab = match vocab {
            Some(v) => v,
            None => {
                let (Some(a), Some(o)) = (attrs, objs) else {
                    return Err(parse_err(0, "missing attrs: or objs: header"));
                };
                Vocab::new(a, o).map_err(|e| parse_err(0, e.to_string()))?
            }
        };
        Ok(Self { vocab, pairs, samples })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| IoError::io(path.as_ref(), e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("attrs:");
        for a in self.vocab.attributes() {
            out.push('\t');
            out.push_str(a);
        }
        out.push_str("\nobjs:");
        for o in self.vocab.objects() {
            out.push('\t');
            out.push_str(o);
        }
        out.push('\n');
        for d in &self.pairs {
            let (a, o) = self.vocab.pair_names(d.pair);
            let kind = match d.kind {
                PairKind::Seen => "seen",
                PairKind::Unseen => "unseen",
            };
            let _ = writeln!(out, "pair:\t{}\t{kind}\t{a}\t{o}", d.split.as_str());
        }
        for s in &self.samples {
            let (a, o) = self.vocab.pair_names(s.pair);
            let _ = writeln!(out, "{}\t{a}\t{o}\t{}", s.image_id, s.split.as_str());
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        fs::write(path.as_ref(), self.to_text()).map_err(|e| IoError::io(path.as_ref(), e))
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &ManifestSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    fn declared(&self, split: Split, kind: PairKind) -> BTreeSet<Pair> {
        self.pairs
            .iter()
            .filter(|d| d.split == split && d.kind == kind)
            .map(|d| d.pair)
            .collect()
    }

    /// Training composition set `C^s`: every training label plus any
    /// `pair: train seen` declarations.
    pub fn train_seen(&self) -> BTreeSet<Pair> {
        let mut s = self.declared(Split::Train, PairKind::Seen);
        s.extend(self.samples_in(Split::Train).map(|x| x.pair));
        s
    }

    /// The label space of a split. For val/test, seen pairs are the declared
    /// seen pairs plus sample labels found in `C^s`; unseen pairs are the
    /// declared unseen pairs plus the remaining sample labels.
    pub fn space(&self, split: Split) -> Result<CompositionSpace, IoError> {
        let train_seen = self.train_seen();
        let (seen, unseen) = match split {
            Split::Train => (train_seen.clone(), BTreeSet::new()),
            _ => {
                let mut seen = self.declared(split, PairKind::Seen);
                let mut unseen = self.declared(split, PairKind::Unseen);
                if let Some(p) = seen.difference(&train_seen).next() {
                    let (a, o) = self.vocab.pair_names(*p);
                    return Err(IoError::Invalid(format!(
                        "{} declares ({a}, {o}) seen but it has no training samples",
                        split.as_str()
                    )));
                }
                if let Some(p) = unseen.intersection(&train_seen).next() {
                    let (a, o) = self.vocab.pair_names(*p);
                    return Err(DomainError::Overlap(a.to_string(), o.to_string()).into());
                }
                for s in self.samples_in(split) {
                    if train_seen.contains(&s.pair) {
                        seen.insert(s.pair);
                    } else {
                        unseen.insert(s.pair);
                    }
                }
                (seen, unseen)
            }
        };
        Ok(CompositionSpace::new(self.vocab.clone(), seen, unseen)?)
    }

    /// Resolves the samples of `split` against an embedding file.
    pub fn load_samples(&self, split: Split, emb: &EmbeddingFile) -> Result<Vec<Sample>, IoError> {
        self.samples_in(split)
            .map(|s| {
                let row = emb
                    .position(&s.image_id)
                    .ok_or_else(|| IoError::MissingId(s.image_id.clone()))?;
                Ok(Sample {
                    image_id: s.image_id.clone(),
                    feature: emb.row_f64(row),
                    pair: s.pair,
                })
            })
            .collect()
    }
}

/// Every split of a manifest joined with its embeddings.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub train_space: CompositionSpace,
    pub val_space: CompositionSpace,
    pub test_space: CompositionSpace,
    pub dim: usize,
}

impl Dataset {
    pub fn assemble(manifest: Manifest, emb: &EmbeddingFile) -> Result<Self, IoError> {
        Ok(Self {
            train: manifest.load_samples(Split::Train, emb)?,
            val: manifest.load_samples(Split::Val, emb)?,
            test: manifest.load_samples(Split::Test, emb)?,
            train_space: manifest.space(Split::Train)?,
            val_space: manifest.space(Split::Val)?,
            test_space: manifest.space(Split::Test)?,
            dim: emb.dim(),
            manifest,
        })
    }

    pub fn load(manifest: impl AsRef<Path>, embeddings: impl AsRef<Path>) -> Result<Self, IoError> {
        let m = Manifest::read(manifest)?;
        let e = EmbeddingFile::read(embeddings)?;
        Self::assemble(m, &e)
    }
}
