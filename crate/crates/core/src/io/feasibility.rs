//! Per-composition feasibility scores (`attribute<TAB>object<TAB>score` lines)
//! and the open-world candidate mask they induce.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::domain::{Pair, Vocab};

use super::IoError;

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityMask {
    /// Indexed by composition index over A×O.
    pub scores: Vec<f64>,
    pub threshold: f64,
}

impl FeasibilityMask {
    /// A mask that keeps every pair.
    pub fn all_pass(n_comps: usize) -> Self {
        Self {
            scores: vec![0.0; n_comps],
            threshold: f64::NEG_INFINITY,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// Pairs whose score is at least the threshold, plus every seen pair.
    pub fn candidates(&self, vocab: &Vocab, seen: &BTreeSet<Pair>) -> Vec<Pair> {
        (0..vocab.n_comps())
            .map(|c| vocab.pair_of(c))
            .filter(|p| seen.contains(p) || self.scores[vocab.comp_index(*p)] >= self.threshold)
            .collect()
    }

    /// Median of the scores of pairs outside `seen`.
    pub fn unseen_median(&self, vocab: &Vocab, seen: &BTreeSet<Pair>) -> Option<f64> {
        let mut xs: Vec<f64> = (0..vocab.n_comps())
            .filter(|&c| !seen.contains(&vocab.pair_of(c)))
            .map(|c| self.scores[c])
            .collect();
        if xs.is_empty() {
            return None;
        }
        xs.sort_by(f64::total_cmp);
        Some(xs[xs.len() / 2])
    }
}

pub fn parse_feasibility(text: &str, vocab: &Vocab) -> Result<FeasibilityMask, IoError> {
    let mut scores: Vec<Option<f64>> = vec![None; vocab.n_comps()];
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(IoError::Parse {
                line: ln,
                msg: "expected attribute, object and score".into(),
            });
        }
        let p = vocab.pair(f[0], f[1]).map_err(|e| IoError::Parse {
            line: ln,
            msg: e.to_string(),
        })?;
        let s: f64 = f[2].trim().parse().map_err(|_| IoError::Parse {
            line: ln,
            msg: format!("bad score {:?}", f[2]),
        })?;
        if !s.is_finite() {
            return Err(IoError::Parse {
                line: ln,
                msg: "non-finite score".into(),
            });
        }
        let slot = &mut scores[vocab.comp_index(p)];
        if slot.is_some() {
            return Err(IoError::Parse {
                line: ln,
                msg: format!("duplicate pair ({}, {})", f[0], f[1]),
            });
        }
        *slot = Some(s);
    }
    let scores = scores
        .into_iter()
        .enumerate()
        .map(|(c, s)| {
            s.ok_or_else(|| {
                let (a, o) = vocab.pair_names(vocab.pair_of(c));
                IoError::MissingPair(a.to_string(), o.to_string())
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeasibilityMask {
        scores,
        threshold: f64::NEG_INFINITY,
    })
}

/// Reads a complete score table over A×O. The threshold starts at −∞.
pub fn read_feasibility(path: impl AsRef<Path>, vocab: &Vocab) -> Result<FeasibilityMask, IoError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| IoError::io(path.as_ref(), e))?;
    parse_feasibility(&text, vocab)
}

pub fn feasibility_to_text(mask: &FeasibilityMask, vocab: &Vocab) -> String {
    let mut out = String::new();
    for c in 0..vocab.n_comps() {
        let (a, o) = vocab.pair_names(vocab.pair_of(c));
        out.push_str(&format!("{a}\t{o}\t{}\n", mask.scores[c]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new(vec!["a".into(), "b".into()], vec!["x".into(), "y".into(), "z".into()]).unwrap()
    }

    #[test]
    fn all_zero_scores_pass_everything_below_zero() {
        let v = vocab();
        let text: String = (0..6)
            .map(|c| {
                let (a, o) = v.pair_names(v.pair_of(c));
                format!("{a}\t{o}\t0\n")
            })
            .collect();
        let m = parse_feasibility(&text, &v).unwrap().with_threshold(-1.0);
        assert_eq!(m.candidates(&v, &BTreeSet::new()).len(), 6);
    }

    #[test]
    fn missing_pair_is_named() {
        let v = vocab();
        let text = "a\tx\t1\na\ty\t1\na\tz\t1\nb\tx\t1\nb\ty\t1\n";
        let err = parse_feasibility(text, &v).unwrap_err();
        assert!(matches!(&err, IoError::MissingPair(a, o) if a == "b" && o == "z"));
        assert!(err.to_string().contains("(b, z)"));
    }

    #[test]
    fn unknown_primitive_and_duplicates_rejected() {
        let v = vocab();
        assert!(parse_feasibility("q\tx\t1\n", &v).is_err());
        assert!(parse_feasibility("a\tx\t1\na\tx\t2\n", &v).is_err());
    }

    #[test]
    fn seen_pairs_are_never_removed() {
        let v = vocab();
        let m = FeasibilityMask {
            scores: vec![-5.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            threshold: 10.0,
        };
        let seen: BTreeSet<Pair> = [Pair::new(0, 0)].into_iter().collect();
        assert_eq!(m.candidates(&v, &seen), vec![Pair::new(0, 0)]);
    }

    #[test]
    fn median_threshold_keeps_about_half_of_the_rest() {
        let v = Vocab::new(
            (0..6).map(|i| format!("a{i}")).collect(),
            (0..7).map(|i| format!("o{i}")).collect(),
        )
        .unwrap();
        let scores: Vec<f64> = (0..42).map(|c| ((c * 17) % 42) as f64 / 42.0).collect();
        let seen: BTreeSet<Pair> = (0..42).step_by(5).map(|c| v.pair_of(c)).collect();
        let mask = FeasibilityMask { scores, threshold: 0.0 };
        let med = mask.unseen_median(&v, &seen).unwrap();
        let mask = mask.with_threshold(med);
        let kept = mask.candidates(&v, &seen).len();
        let rest = 42 - seen.len();
        // scores are distinct, so the median splits the rest into ⌈n/2⌉ kept
        assert_eq!(kept, seen.len() + rest - rest / 2);
        let text = feasibility_to_text(&mask, &v);
        assert_eq!(parse_feasibility(&text, &v).unwrap().scores, mask.scores);
    }
}
