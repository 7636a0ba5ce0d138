//! Generalized zero-shot evaluation by calibration sweep.
//!
//! A scalar bias `c` is added to every unseen-composition score. For each image
//! only its best seen candidate `k` and best unseen candidate `j` can win, and
//! the unseen one wins iff `fl(s_k − s_j) ≤ c`. The per-image gaps therefore
//! enumerate every bias at which a prediction changes, and the sweep over
//! `{−∞} ∪ gaps ∪ {+∞}` is exact.

use std::fmt::Write as _;

use thiserror::Error;

use crate::domain::{CompositionSpace, Pair, Sample};
use crate::io::FeasibilityMask;
use crate::numerics::{NumericsError, Tensor2};
use crate::pipeline::{DefaModel, PipelineError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no unseen-labeled images: unseen accuracy, HM and AUC are undefined")]
    NoUnseenImages,
    #[error("no seen-labeled images: seen accuracy, HM and AUC are undefined")]
    NoSeenImages,
    #[error("score matrix has no candidates")]
    NoCandidates,
    #[error("non-finite score at image {row}, candidate {col}")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("scoring failed: {0}")]
    Model(Box<PipelineError>),
}

impl From<PipelineError> for EvalError {
    fn from(e: PipelineError) -> Self {
        EvalError::Model(Box::new(e))
    }
}

/// Ground truth of one image relative to a candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalLabel {
    /// Candidate column of the true pair; `None` if the pair was filtered out.
    pub column: Option<usize>,
    /// Whether the true pair is a training composition.
    pub seen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub bias: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seen: f64,
    pub unseen: f64,
    pub hm: f64,
    pub auc: f64,
    /// Ascending in bias.
    pub curve: Vec<CurvePoint>,
    pub n_seen_images: usize,
    pub n_unseen_images: usize,
    pub n_candidates: usize,
}

impl EvalReport {
    /// `AUC=… HM=… Seen=… Unseen=…` in percent with one decimal.
    pub fn summary_line(&self) -> String {
        format!(
            "AUC={:.1} HM={:.1} Seen={:.1} Unseen={:.1}",
            100.0 * self.auc,
            100.0 * self.hm,
            100.0 * self.seen,
            100.0 * self.unseen
        )
    }

    /// `bias,seen_acc,unseen_acc` rows followed by a `# summary` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bias,seen_acc,unseen_acc\n");
        for p in &self.curve {
            let _ = writeln!(out, "{},{},{}", p.bias, p.seen_acc, p.unseen_acc);
        }
        let _ = writeln!(out, "# {}", self.summary_line());
        out
    }

    pub fn to_text(&self) -> String {
        format!(
            "{}\nimages: {} seen-labeled, {} unseen-labeled\ncandidates: {}\ncurve points: {}\n",
            self.summary_line(),
            self.n_seen_images,
            self.n_unseen_images,
            self.n_candidates,
            self.curve.len()
        )
    }
}

/// Bias range over which an image is classified correctly.
#[derive(Debug, Clone, Copy)]
enum Hit {
    Never,
    Always,
    /// Seen image correct while `c < gap`; unseen image correct while `c ≥ gap`.
    Gap(f64),
}

fn best_in(row: &[f64], take: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &s) in row.iter().enumerate() {
        if take(k) && best.is_none_or(|b| s > row[b]) {
            best = Some(k);
        }
    }
    best
}

/// Sweeps every decision-changing bias of `scores` (images × candidates).
/// `unseen_col[k]` marks candidate `k` as an unseen composition.
pub fn calibration_sweep(scores: &Tensor2, unseen_col: &[bool], labels: &[EvalLabel]) -> Result<EvalReport, EvalError> {
    let (n, k) = scores.shape();
    if unseen_col.len() != k || labels.len() != n {
        return Err(EvalError::Shape(format!(
            "{n}x{k} scores with {} column flags and {} labels",
            unseen_col.len(),
            labels.len()
        )));
    }
    if k == 0 {
        return Err(EvalError::NoCandidates);
    }
    if let Some(pos) = scores.data().iter().position(|x| !x.is_finite()) {
        return Err(EvalError::NonFinite {
            row: pos / k,
            col: pos % k,
        });
    }
    if let Some(l) = labels.iter().find(|l| l.column.is_some_and(|c| c >= k)) {
        return Err(EvalError::Shape(format!(
            "label column {:?} outside {k} candidates",
            l.column
        )));
    }
    let n_seen = labels.iter().filter(|l| l.seen).count();
    let n_unseen = n - n_seen;
    if n_unseen == 0 {
        return Err(EvalError::NoUnseenImages);
    }
    if n_seen == 0 {
        return Err(EvalError::NoSeenImages);
    }

    let mut gaps = Vec::with_capacity(n);
    let (mut seen_hits, mut unseen_hits) = (Vec::new(), Vec::new());
    for (i, label) in labels.iter().enumerate() {
        let row = scores.row(i);
        let ks = best_in(row, |c| !unseen_col[c]);
        let ju = best_in(row, |c| unseen_col[c]);
        let gap = match (ks, ju) {
            (Some(a), Some(b)) => Some(row[a] - row[b]),
            _ => None,
        };
        if let Some(g) = gap {
            gaps.push(g);
        }
        // the candidate predicted for the image: seen side if c < gap
        let hit = match (label.seen, label.column) {
            (_, None) => Hit::Never,
            (true, Some(c)) if ks == Some(c) => gap.map_or(Hit::Always, Hit::Gap),
            (false, Some(c)) if ju == Some(c) => gap.map_or(Hit::Always, Hit::Gap),
            _ => Hit::Never,
        };
        if label.seen {
            seen_hits.push(hit);
        } else {
            unseen_hits.push(hit);
        }
    }

    gaps.sort_by(f64::total_cmp);
    gaps.dedup();
    let mut biases = Vec::with_capacity(gaps.len() + 2);
    biases.push(f64::NEG_INFINITY);
    biases.extend(gaps.iter().copied());
    biases.push(f64::INFINITY);

    let split = |hits: &[Hit]| -> (u64, Vec<f64>) {
        let mut always = 0;
        let mut gs = Vec::new();
        for h in hits {
            match h {
                Hit::Always => always += 1,
                Hit::Gap(g) => gs.push(*g),
                Hit::Never => {}
            }
        }
        gs.sort_by(f64::total_cmp);
        (always, gs)
    };
    let (seen_always, seen_gaps) = split(&seen_hits);
    let (unseen_always, unseen_gaps) = split(&unseen_hits);

    let counts: Vec<(u64, u64)> = biases
        .iter()
        .map(|&b| {
            // seen correct: gap > b; unseen correct: gap ≤ b
            let le_s = seen_gaps.partition_point(|&g| g <= b) as u64;
            let le_u = unseen_gaps.partition_point(|&g| g <= b) as u64;
            (seen_always + seen_gaps.len() as u64 - le_s, unseen_always + le_u)
        })
        .collect();

    Ok(report_from_counts(&biases, &counts, n_seen as u64, n_unseen as u64, k))
}

fn report_from_counts(biases: &[f64], counts: &[(u64, u64)], n_s: u64, n_u: u64, k: usize) -> EvalReport {
    let (fs, fu) = (n_s as f64, n_u as f64);
    let curve: Vec<CurvePoint> = biases
        .iter()
        .zip(counts)
        .map(|(&bias, &(cs, cu))| CurvePoint {
            bias,
            seen_acc: cs as f64 / fs,
            unseen_acc: cu as f64 / fu,
        })
        .collect();
    let seen = curve.iter().map(|p| p.seen_acc).fold(0.0, f64::max);
    let unseen = curve.iter().map(|p| p.unseen_acc).fold(0.0, f64::max);
    let hm = curve
        .iter()
        .map(|p| harmonic_mean(p.seen_acc, p.unseen_acc))
        .fold(0.0, f64::max);
    let mut area: u128 = 0;
    for (i, &(cs, cu)) in counts.iter().enumerate() {
        let next = counts.get(i + 1).map_or(0, |c| c.0);
        area += u128::from(cs - next) * u128::from(cu);
    }
    let auc = area as f64 / (u128::from(n_s) * u128::from(n_u)) as f64;
    EvalReport {
        seen,
        unseen,
        hm,
        auc,
        curve,
        n_seen_images: n_s as usize,
        n_unseen_images: n_u as usize,
        n_candidates: k,
    }
}

pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

/// Labels of `samples` against a candidate list; seen-ness comes from `space`.
pub fn labels_for(samples: &[Sample], candidates: &[Pair], space: &CompositionSpace) -> Vec<EvalLabel> {
    labels_for_pairs(samples.iter().map(|s| s.pair), candidates, space)
}

fn labels_for_pairs(
    pairs: impl Iterator<Item = Pair>,
    candidates: &[Pair],
    space: &CompositionSpace,
) -> Vec<EvalLabel> {
    let mut col = vec![None; space.n_comps()];
    for (k, p) in candidates.iter().enumerate() {
        col[space.comp_index(*p)] = Some(k);
    }
    pairs
        .map(|p| EvalLabel {
            column: col[space.comp_index(p)],
            seen: space.is_seen(p),
        })
        .collect()
}

pub fn unseen_columns(candidates: &[Pair], space: &CompositionSpace) -> Vec<bool> {
    candidates.iter().map(|p| !space.is_seen(*p)).collect()
}

/// Sweep of precomputed scores over `candidates`.
pub fn evaluate_scores(
    scores: &Tensor2,
    candidates: &[Pair],
    samples: &[Sample],
    space: &CompositionSpace,
) -> Result<EvalReport, EvalError> {
    calibration_sweep(
        scores,
        &unseen_columns(candidates, space),
        &labels_for(samples, candidates, space),
    )
}

/// Candidates `C^s ∪ C^u` of `space`.
pub fn closed_world_eval(
    model: &DefaModel,
    samples: &[Sample],
    space: &CompositionSpace,
) -> Result<EvalReport, EvalError> {
    let candidates = space.test_closed();
    let scores = model.inference_scores(samples, &candidates)?;
    evaluate_scores(&scores, &candidates, samples, space)
}

/// Candidates are every pair of A×O that passes `mask`; seen pairs always pass.
pub fn open_world_eval(
    model: &DefaModel,
    samples: &[Sample],
    space: &CompositionSpace,
    mask: &FeasibilityMask,
) -> Result<EvalReport, EvalError> {
    if mask.scores.len() != space.n_comps() {
        return Err(EvalError::Shape(format!(
            "feasibility mask covers {} pairs, A×O has {}",
            mask.scores.len(),
            space.n_comps()
        )));
    }
    let candidates = mask.candidates(space.vocab(), space.seen());
    let scores = model.inference_scores(samples, &candidates)?;
    evaluate_scores(&scores, &candidates, samples, space)
}

/// Picks the feasibility threshold with the highest unseen accuracy on
/// `samples`, trying every distinct unseen-pair score and −∞. Ties go to the
/// higher threshold (the smaller candidate set).
pub fn select_threshold(
    model: &DefaModel,
    samples: &[Sample],
    space: &CompositionSpace,
    mask: &FeasibilityMask,
) -> Result<(f64, EvalReport), EvalError> {
    let full = space.full();
    let all_scores = model.inference_scores(samples, &full)?;
    let mut thresholds: Vec<f64> = (0..space.n_comps())
        .filter(|&c| !space.is_seen(space.pair_of(c)))
        .map(|c| mask.scores[c])
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds.push(f64::NEG_INFINITY);

    let mut best: Option<(f64, EvalReport)> = None;
    for t in thresholds {
        let m = mask.clone().with_threshold(t);
        let cands = m.candidates(space.vocab(), space.seen());
        let cols: Vec<usize> = cands.iter().map(|p| space.comp_index(*p)).collect();
        let mut sub = Tensor2::zeros(all_scores.rows(), cols.len());
        for r in 0..all_scores.rows() {
            let src = all_scores.row(r);
            for (dst, &c) in sub.row_mut(r).iter_mut().zip(&cols) {
                *dst = src[c];
            }
        }
        let rep = evaluate_scores(&sub, &cands, samples, space)?;
        if best.as_ref().is_none_or(|(_, b)| rep.unseen > b.unseen) {
            best = Some((t, rep));
        }
    }
    Ok(best.expect("at least the −∞ threshold is tried"))
}

/// How closely pseudo features of unseen compositions match real ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoFidelity {
    /// Mean cosine to real `v^c` of the same composition.
    pub same: f64,
    /// Mean cosine to real `v^c` of every other composition.
    pub other: f64,
    pub n_pairs: usize,
}

impl PseudoFidelity {
    pub fn margin(&self) -> f64 {
        self.same - self.other
    }
}

/// For every unseen composition `(a, o)` with samples in `real`, builds
/// `per_pair` pseudo features by fusing `v^a` of `donors` labeled `a` with `v^o`
/// of `donors` labeled `o` (chosen by `seed`), and compares them with the real
/// `v^c` of `real`. Scores are averaged per composition, then over
/// compositions.
pub fn pseudo_fidelity(
    model: &DefaModel,
    donors: &[Sample],
    real: &[Sample],
    space: &CompositionSpace,
    per_pair: usize,
    seed: u64,
) -> Result<PseudoFidelity, EvalError> {
    use crate::numerics::SeededRng;

    let (va, vo, _) = model.project(donors)?;
    let (_, _, vc) = model.project(real)?;
    let d = vc.cols();
    let unit = |row: &[f64]| -> Vec<f64> {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter().map(|x| x / n).collect()
    };

    // Sum of unit real features and sample count per composition.
    let mut sums: Vec<(Pair, Vec<f64>, usize)> = Vec::new();
    for (i, s) in real.iter().enumerate() {
        let pos = match sums.iter().position(|(p, _, _)| *p == s.pair) {
            Some(k) => k,
            None => {
                sums.push((s.pair, vec![0.0; d], 0));
                sums.len() - 1
            }
        };
        for (acc, x) in sums[pos].1.iter_mut().zip(unit(vc.row(i))) {
            *acc += x;
        }
        sums[pos].2 += 1;
    }
    let total: Vec<f64> = (0..d).map(|k| sums.iter().map(|s| s.1[k]).sum()).collect();
    let n_total: usize = sums.iter().map(|s| s.2).sum();

    let mut rng = SeededRng::derive(seed, 21);
    let (mut same, mut other, mut n_pairs) = (0.0, 0.0, 0usize);
    for (pair, sum, count) in &sums {
        if space.is_seen(*pair) || *count == n_total {
            continue;
        }
        let mut with_a: Vec<usize> = (0..donors.len())
            .filter(|&i| donors[i].pair.attr == pair.attr)
            .collect();
        let mut with_o: Vec<usize> = (0..donors.len()).filter(|&i| donors[i].pair.obj == pair.obj).collect();
        if with_a.is_empty() || with_o.is_empty() {
            continue;
        }
        rng.shuffle(&mut with_a);
        rng.shuffle(&mut with_o);
        let rows_a: Vec<Vec<f64>> = (0..per_pair)
            .map(|m| va.row(with_a[m % with_a.len()]).to_vec())
            .collect();
        let rows_o: Vec<Vec<f64>> = (0..per_pair)
            .map(|m| vo.row(with_o[m % with_o.len()]).to_vec())
            .collect();
        let pseudo = model.fuse_rows(Tensor2::from_rows(&rows_a)?, Tensor2::from_rows(&rows_o)?)?;
        let mut mean_p = vec![0.0; d];
        for r in 0..pseudo.rows() {
            for (acc, x) in mean_p.iter_mut().zip(unit(pseudo.row(r))) {
                *acc += x / pseudo.rows() as f64;
            }
        }
        let dot = |v: &[f64]| v.iter().zip(&mean_p).map(|(a, b)| a * b).sum::<f64>();
        let s_same = dot(sum);
        same += s_same / *count as f64;
        other += (dot(&total) - s_same) / (n_total - count) as f64;
        n_pairs += 1;
    }
    if n_pairs == 0 {
        return Err(EvalError::NoUnseenImages);
    }
    Ok(PseudoFidelity {
        same: same / n_pairs as f64,
        other: other / n_pairs as f64,
        n_pairs,
    })
}
