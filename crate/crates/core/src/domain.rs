//! Vocabularies, composition label spaces and training-set frequency counts.
//!
//! Compositions are enumerated row-major over (attribute, object): the pair
//! `(a, o)` has index `a·N_o + o`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("empty {0} vocabulary")]
    EmptyVocabulary(&'static str),
    #[error("duplicate {kind} name {name:?}")]
    DuplicateName { kind: &'static str, name: String },
    #[error("unknown {kind} {name:?}")]
    UnknownPrimitive { kind: &'static str, name: String },
    #[error("composition ({0}, {1}) is declared both seen and unseen")]
    Overlap(String, String),
    #[error("pair index ({attr}, {obj}) outside a {n_attrs}x{n_objs} vocabulary")]
    OutOfBounds {
        attr: usize,
        obj: usize,
        n_attrs: usize,
        n_objs: usize,
    },
    #[error("sample {id:?} is labelled ({attr}, {obj}) which is not a seen composition")]
    NotSeen { id: String, attr: String, obj: String },
}

/// An (attribute, object) index pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub attr: usize,
    pub obj: usize,
}

impl Pair {
    pub const fn new(attr: usize, obj: usize) -> Self {
        Self { attr, obj }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.attr, self.obj)
    }
}

/// Name-level description of one split's label space.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpaceSpec {
    pub attributes: Vec<String>,
    pub objects: Vec<String>,
    pub seen: Vec<(String, String)>,
    pub unseen: Vec<(String, String)>,
}

/// Shared vocabularies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    attributes: Vec<String>,
    objects: Vec<String>,
    attr_index: HashMap<String, usize>,
    obj_index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(attributes: Vec<String>, objects: Vec<String>) -> Result<Self, DomainError> {
        if attributes.is_empty() {
            return Err(DomainError::EmptyVocabulary("attribute"));
        }
        if objects.is_empty() {
            return Err(DomainError::EmptyVocabulary("object"));
        }
        let attr_index = index_names(&attributes, "attribute")?;
        let obj_index = index_names(&objects, "object")?;
        Ok(Self {
            attributes,
            objects,
            attr_index,
            obj_index,
        })
    }

    pub fn n_attrs(&self) -> usize {
        self.attributes.len()
    }

    pub fn n_objs(&self) -> usize {
        self.objects.len()
    }

    pub fn n_comps(&self) -> usize {
        self.n_attrs() * self.n_objs()
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn attr(&self, name: &str) -> Result<usize, DomainError> {
        self.attr_index
            .get(name)
            .copied()
            .ok_or_else(|| DomainError::UnknownPrimitive {
                kind: "attribute",
                name: name.to_string(),
            })
    }

    pub fn obj(&self, name: &str) -> Result<usize, DomainError> {
        self.obj_index
            .get(name)
            .copied()
            .ok_or_else(|| DomainError::UnknownPrimitive {
                kind: "object",
                name: name.to_string(),
            })
    }

    pub fn pair(&self, attr: &str, obj: &str) -> Result<Pair, DomainError> {
        Ok(Pair::new(self.attr(attr)?, self.obj(obj)?))
    }

    pub fn comp_index(&self, p: Pair) -> usize {
        p.attr * self.n_objs() + p.obj
    }

    pub fn pair_of(&self, comp: usize) -> Pair {
        Pair::new(comp / self.n_objs(), comp % self.n_objs())
    }

    pub fn check(&self, p: Pair) -> Result<(), DomainError> {
        if p.attr >= self.n_attrs() || p.obj >= self.n_objs() {
            return Err(DomainError::OutOfBounds {
                attr: p.attr,
                obj: p.obj,
                n_attrs: self.n_attrs(),
                n_objs: self.n_objs(),
            });
        }
        Ok(())
    }

    pub fn pair_names(&self, p: Pair) -> (&str, &str) {
        (&self.attributes[p.attr], &self.objects[p.obj])
    }
}

fn index_names(names: &[String], kind: &'static str) -> Result<HashMap<String, usize>, DomainError> {
    let mut map = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if map.insert(n.clone(), i).is_some() {
            return Err(DomainError::DuplicateName { kind, name: n.clone() });
        }
    }
    Ok(map)
}

/// Vocabularies plus disjoint seen/unseen composition sets. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionSpace {
    vocab: Vocab,
    seen: BTreeSet<Pair>,
    unseen: BTreeSet<Pair>,
}

impl CompositionSpace {
    pub fn new(vocab: Vocab, seen: BTreeSet<Pair>, unseen: BTreeSet<Pair>) -> Result<Self, DomainError> {
        for &p in seen.iter().chain(&unseen) {
            vocab.check(p)?;
        }
        if let Some(p) = seen.intersection(&unseen).next() {
            let (a, o) = vocab.pair_names(*p);
            return Err(DomainError::Overlap(a.to_string(), o.to_string()));
        }
        Ok(Self { vocab, seen, unseen })
    }

    /// Builds and validates a space from names.
    pub fn build(spec: &SpaceSpec) -> Result<Self, DomainError> {
        let vocab = Vocab::new(spec.attributes.clone(), spec.objects.clone())?;
        let resolve = |pairs: &[(String, String)]| -> Result<BTreeSet<Pair>, DomainError> {
            pairs.iter().map(|(a, o)| vocab.pair(a, o)).collect()
        };
        let seen = resolve(&spec.seen)?;
        let unseen = resolve(&spec.unseen)?;
        Self::new(vocab, seen, unseen)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n_attrs(&self) -> usize {
        self.vocab.n_attrs()
    }

    pub fn n_objs(&self) -> usize {
        self.vocab.n_objs()
    }

    /// |A×O|.
    pub fn n_comps(&self) -> usize {
        self.vocab.n_comps()
    }

    pub fn comp_index(&self, p: Pair) -> usize {
        self.vocab.comp_index(p)
    }

    pub fn pair_of(&self, comp: usize) -> Pair {
        self.vocab.pair_of(comp)
    }

    pub fn seen(&self) -> &BTreeSet<Pair> {
        &self.seen
    }

    pub fn unseen(&self) -> &BTreeSet<Pair> {
        &self.unseen
    }

    pub fn is_seen(&self, p: Pair) -> bool {
        self.seen.contains(&p)
    }

    /// Closed-world test label set `C^s ∪ C^u`, in canonical order.
    pub fn test_closed(&self) -> Vec<Pair> {
        self.seen.union(&self.unseen).copied().collect()
    }

    /// Every pair of A×O in canonical order.
    pub fn full(&self) -> Vec<Pair> {
        (0..self.n_comps()).map(|c| self.pair_of(c)).collect()
    }

    /// Same vocabulary, different seen/unseen sets.
    pub fn with_sets(&self, seen: BTreeSet<Pair>, unseen: BTreeSet<Pair>) -> Result<Self, DomainError> {
        Self::new(self.vocab.clone(), seen, unseen)
    }
}

/// One image embedding and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub feature: Vec<f64>,
    pub pair: Pair,
}

/// Training-set occurrence counts per attribute, object and composition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    pub attr_counts: Vec<u64>,
    pub obj_counts: Vec<u64>,
    /// Indexed by composition index over A×O.
    pub comp_counts: Vec<u64>,
}

impl FrequencyTable {
    pub fn zeros(n_attrs: usize, n_objs: usize) -> Self {
        Self {
            attr_counts: vec![0; n_attrs],
            obj_counts: vec![0; n_objs],
            comp_counts: vec![0; n_attrs * n_objs],
        }
    }

    pub fn total(&self) -> u64 {
        self.comp_counts.iter().sum()
    }
}

/// Counts training labels. Every label must be a seen composition.
pub fn count_frequencies<'a, I>(labels: I, space: &CompositionSpace) -> Result<FrequencyTable, DomainError>
where
    I: IntoIterator<Item = (&'a str, Pair)>,
{
    let mut t = FrequencyTable::zeros(space.n_attrs(), space.n_objs());
    for (id, p) in labels {
        space.vocab().check(p)?;
        if !space.is_seen(p) {
            let (a, o) = space.vocab().pair_names(p);
            return Err(DomainError::NotSeen {
                id: id.to_string(),
                attr: a.to_string(),
                obj: o.to_string(),
            });
        }
        t.attr_counts[p.attr] += 1;
        t.obj_counts[p.obj] += 1;
        t.comp_counts[space.comp_index(p)] += 1;
    }
    Ok(t)
}

/// [`count_frequencies`] over samples.
pub fn count_sample_frequencies(samples: &[Sample], space: &CompositionSpace) -> Result<FrequencyTable, DomainError> {
    count_frequencies(samples.iter().map(|s| (s.image_id.as_str(), s.pair)), space)
}
