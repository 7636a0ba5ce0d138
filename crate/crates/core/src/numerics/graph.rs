//! Reverse-mode accumulation over a fixed set of matrix ops.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes hold their forward
//! values; [`Graph::backward`] walks the tape in reverse and deposits gradients
//! of parameter leaves into the [`ParamStore`] they were read from.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{self, matmul_nn, matmul_nt, matmul_tn, Tensor2};
use super::{NumericsError, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// x · wᵀ
    MatMulNt(Var, Var),
    /// x + broadcast row b
    AddRow(Var, Var),
    Add(Var, Var),
    Lincomb(Var, f64, Var, f64),
    Relu(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    /// Row `i·m + j` is `a_i + b_j` for `a` n×d and `b` m×d.
    OuterSum(Var, Var),
    /// Columns `start..start + width` of x.
    SliceCols(Var, usize),
    /// Row-wise L2 normalisation; stores the pre-normalisation norms.
    NormalizeRows(Var, Vec<f64>),
    /// Row-wise dot product of two equally shaped matrices (n×1 result).
    RowDot(Var, Var),
    /// Mean over every entry (1×1 result).
    Mean(Var),
    /// Weighted mean softmax cross-entropy; stores the softmax probabilities.
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        weights: Option<Vec<f64>>,
        temperature: f64,
        probs: Tensor2,
    },
    /// Σ cᵢ·xᵢ over 1×1 scalars.
    ScalarSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor2,
    op: Op,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor2) -> Var {
        self.push(t, Op::Leaf)
    }

    /// The leaf for a stored parameter. Reading the same parameter twice
    /// returns the same node so its gradient is accumulated once.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        self.param_leaves.insert(id, v);
        v
    }

    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Result<Var, NumericsError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.1 != ws.1 {
            return Err(NumericsError::Shape(format!(
                "matmul {}x{} by transposed {}x{}",
                xs.0, xs.1, ws.0, ws.1
            )));
        }
        let out = matmul_nt(self.value(x), self.value(w));
        Ok(self.push(out, Op::MatMulNt(x, w)))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, NumericsError> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs.0 != 1 || bs.1 != xs.1 {
            return Err(NumericsError::Shape(format!(
                "cannot broadcast {}x{} over {}x{}",
                bs.0, bs.1, xs.0, xs.1
            )));
        }
        let mut out = self.value(x).clone();
        let brow = self.value(b).row(0).to_vec();
        for r in 0..xs.0 {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&brow) {
                *o += *bv;
            }
        }
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `ca·a + cb·b`.
    pub fn lincomb(&mut self, a: Var, ca: f64, b: Var, cb: f64) -> Result<Var, NumericsError> {
        self.same_shape(a, b, "lincomb")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| ca * x + cb * y)
            .collect();
        let (r, c) = self.shape(a);
        let out = Tensor2::from_vec(r, c, data)?;
        Ok(self.push(out, Op::Lincomb(a, ca, b, cb)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (asz, bsz) = (self.shape(a), self.shape(b));
        if asz.0 != bsz.0 {
            return Err(NumericsError::Shape(format!("concat of {} and {} rows", asz.0, bsz.0)));
        }
        let mut data = Vec::with_capacity(asz.0 * (asz.1 + bsz.1));
        for r in 0..asz.0 {
            data.extend_from_slice(self.value(a).row(r));
            data.extend_from_slice(self.value(b).row(r));
        }
        let out = Tensor2::from_vec(asz.0, asz.1 + bsz.1, data)?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let rows = self.shape(x).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::Shape(format!(
                "row index {bad} out of range for {rows} rows"
            )));
        }
        let out = self.value(x).gather_rows(idx);
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec())))
    }

    /// Every pairwise row sum: row `i·m + j` of the result is `a_i + b_j`.
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let ((n, d), (m, db)) = (self.shape(a), self.shape(b));
        if d != db {
            return Err(NumericsError::Shape(format!("outer_sum of widths {d} and {db}")));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(n * m * d);
        for i in 0..n {
            let ar = va.row(i);
            for j in 0..m {
                data.extend(ar.iter().zip(vb.row(j)).map(|(x, y)| x + y));
            }
        }
        let out = Tensor2::from_vec(n * m, d, data)?;
        Ok(self.push(out, Op::OuterSum(a, b)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(x);
        if start + width > c {
            return Err(NumericsError::Shape(format!(
                "columns {start}..{} of a {c}-column matrix",
                start + width
            )));
        }
        let v = self.value(x);
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&v.row(i)[start..start + width]);
        }
        let out = Tensor2::from_vec(r, width, data)?;
        Ok(self.push(out, Op::SliceCols(x, start)))
    }

    /// Scales each row to unit L2 norm. Rows with norm at or below
    /// [`NORM_EPS`] are a degenerate-vector error.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = tensor::norm(row);
            if !(n > NORM_EPS) {
                return Err(NumericsError::Degenerate { row: r, norm: n });
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok(self.push(out, Op::NormalizeRows(x, norms)))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape(a, b, "row_dot")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = (0..va.rows())
            .map(|r| tensor::dot(va.row(r), vb.row(r)))
            .collect::<Vec<_>>();
        let out = Tensor2::from_vec(data.len(), 1, data)?;
        Ok(self.push(out, Op::RowDot(a, b)))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.data().len().max(1) as f64;
        let s: f64 = v.data().iter().sum();
        self.push(Tensor2::scalar(s / n), Op::Mean(x))
    }

    /// Mean over rows of `wᵢ · CE(logitsᵢ / τ, targetᵢ)`.
    pub fn softmax_ce(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: Option<&[f64]>,
        temperature: f64,
    ) -> Result<Var, NumericsError> {
        let (n, k) = self.shape(logits);
        if k == 0 {
            return Err(NumericsError::Empty("softmax over an empty label set"));
        }
        if targets.len() != n || weights.is_some_and(|w| w.len() != n) {
            return Err(NumericsError::Shape(format!(
                "{n} score rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(NumericsError::Shape(format!("target {bad} outside {k} labels")));
        }
        let s = self.value(logits);
        let mut probs = Tensor2::zeros(n, k);
        let mut total = 0.0;
        for i in 0..n {
            let (loss, p) = ce_row(s.row(i), targets[i], temperature);
            probs.row_mut(i).copy_from_slice(&p);
            total += weights.map_or(1.0, |w| w[i]) * loss;
        }
        let value = if n == 0 { 0.0 } else { total / n as f64 };
        Ok(self.push(
            Tensor2::scalar(value),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                weights: weights.map(<[f64]>::to_vec),
                temperature,
                probs,
            },
        ))
    }

    pub fn scalar_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var, NumericsError> {
        let mut s = 0.0;
        for &(v, c) in terms {
            if self.shape(v) != (1, 1) {
                return Err(NumericsError::Shape("scalar_sum of a non-scalar".into()));
            }
            s += c * self.value(v).item();
        }
        Ok(self.push(Tensor2::scalar(s), Op::ScalarSum(terms.to_vec())))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NumericsError::Shape(format!(
                "{what} of {}x{} and {}x{}",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        Ok(())
    }

    /// Back-propagates from the scalar `root` and adds parameter gradients
    /// into `store`.
    pub fn backward(&self, root: Var, store: &mut ParamStore) {
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        let (r, c) = self.shape(root);
        let mut seed = Tensor2::zeros(r, c);
        seed.fill(1.0);
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    if let Some(pid) = node.param {
                        store.grad_mut(pid).add_assign(&g);
                    }
                }
                Op::MatMulNt(x, w) => {
                    let dx = matmul_nn(&g, self.value(*w));
                    let dw = matmul_tn(&g, self.value(*x));
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                }
                Op::AddRow(x, b) => {
                    let mut db = Tensor2::zeros(1, g.cols());
                    for rr in 0..g.rows() {
                        for (d, gv) in db.row_mut(0).iter_mut().zip(g.row(rr)) {
                            *d += *gv;
                        }
                    }
                    accumulate(&mut grads, *b, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Lincomb(a, ca, b, cb) => {
                    let mut ga = g.clone();
                    ga.data_mut().iter_mut().for_each(|v| *v *= ca);
                    let mut gb = g;
                    gb.data_mut().iter_mut().for_each(|v| *v *= cb);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (gv, &ov) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        if ov <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a).1;
                    let cb = self.shape(*b).1;
                    let mut ga = Tensor2::zeros(g.rows(), ca);
                    let mut gb = Tensor2::zeros(g.rows(), cb);
                    for rr in 0..g.rows() {
                        ga.row_mut(rr).copy_from_slice(&g.row(rr)[..ca]);
                        gb.row_mut(rr).copy_from_slice(&g.row(rr)[ca..]);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::GatherRows(x, idx_list) => {
                    let (xr, xc) = self.shape(*x);
                    let mut gx = Tensor2::zeros(xr, xc);
                    for (rr, &src) in idx_list.iter().enumerate() {
                        for (d, gv) in gx.row_mut(src).iter_mut().zip(g.row(rr)) {
                            *d += *gv;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::OuterSum(a, b) => {
                    let ((n, d), m) = (self.shape(*a), self.shape(*b).0);
                    let mut ga = Tensor2::zeros(n, d);
                    let mut gb = Tensor2::zeros(m, d);
                    for i in 0..n {
                        for j in 0..m {
                            let gr = g.row(i * m + j);
                            for (x, y) in ga.row_mut(i).iter_mut().zip(gr) {
                                *x += *y;
                            }
                            for (x, y) in gb.row_mut(j).iter_mut().zip(gr) {
                                *x += *y;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SliceCols(x, start) => {
                    let (xr, xc) = self.shape(*x);
                    let mut gx = Tensor2::zeros(xr, xc);
                    for rr in 0..xr {
                        gx.row_mut(rr)[*start..*start + g.cols()].copy_from_slice(g.row(rr));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::NormalizeRows(x, norms) => {
                    // y = x/‖x‖  ⇒  dx = (g − (g·y) y) / ‖x‖
                    let y = &node.value;
                    let mut gx = g;
                    for (rr, &n) in norms.iter().enumerate() {
                        let gy = tensor::dot(gx.row(rr), y.row(rr));
                        for (d, yv) in gx.row_mut(rr).iter_mut().zip(y.row(rr)) {
                            *d = (*d - gy * yv) / n;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowDot(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = vb.clone();
                    let mut gb = va.clone();
                    for rr in 0..g.rows() {
                        let s = g.get(rr, 0);
                        ga.row_mut(rr).iter_mut().for_each(|v| *v *= s);
                        gb.row_mut(rr).iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Mean(x) => {
                    let (xr, xc) = self.shape(*x);
                    let n = (xr * xc).max(1) as f64;
                    let mut gx = Tensor2::zeros(xr, xc);
                    gx.fill(g.item() / n);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxCe {
                    logits,
                    targets,
                    weights,
                    temperature,
                    probs,
                } => {
                    let n = probs.rows();
                    let upstream = g.item();
                    let mut gl = probs.clone();
                    for i in 0..n {
                        let w = weights.as_ref().map_or(1.0, |w| w[i]);
                        let scale = upstream * w / (n as f64 * temperature);
                        let row = gl.row_mut(i);
                        row[targets[i]] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::ScalarSum(terms) => {
                    for &(v, coef) in terms {
                        accumulate(&mut grads, v, Tensor2::scalar(coef * g.item()));
                    }
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Loss and softmax probabilities of one row, using max-subtraction.
pub(crate) fn ce_row(scores: &[f64], target: usize, temperature: f64) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = scores.iter().map(|s| (s - max) / temperature).collect();
    let exps: Vec<f64> = shifted.iter().map(|z| z.exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - shifted[target];
    let probs = exps.iter().map(|e| e / z).collect();
    (loss, probs)
}
