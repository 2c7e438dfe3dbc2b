//! Define-by-run reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation appends a node whose inputs have strictly smaller ids, so
//! node order is already a topological order and the backward pass is a
//! single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Square(Var),
    Ln(Var),
    Recip1p(Var),
    ConcatCols(Var, Var),
    RowNormalize(Var),
    Sum(Var),
    Mean(Var),
    Rbf(Var, f64),
    /// Bandwidth and the row pair whose distance set it, if any.
    /// Bandwidth, the pair that set it, and the squared distances.
    RbfMedian(Var, f64, Option<(usize, usize)>, Matrix),
    Mask(Var, Vec<bool>),
    PairwiseSqDist(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v`'s value with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).as_slice()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `a + 1·bias` where `bias` is a single row broadcast over `a`'s rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(bias));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: am.shape(),
                right: bm.shape(),
            });
        }
        let mut value = am.clone();
        let b = bm.as_slice().to_vec();
        for r in 0..value.rows() {
            for (x, y) in value.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if let Some(bad) = m.as_slice().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Numeric(format!("log of non-positive value {bad}")));
        }
        let value = m.map(f64::ln);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Ln(a), rg))
    }

    /// `1 / (1 + a)`.
    pub fn recip1p(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| 1.0 / (1.0 + v));
        let rg = self.rg(a);
        self.push(value, Op::Recip1p(a), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_cols(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    /// Divide every row by its sum. Row sums must be nonzero.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut value = m.clone();
        for r in 0..value.rows() {
            let s: f64 = value.row(r).iter().sum();
            if s == 0.0 || !s.is_finite() {
                return Err(Error::Numeric(format!("row {r} sums to {s}")));
            }
            value.row_mut(r).iter_mut().for_each(|v| *v /= s);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::RowNormalize(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Gaussian-kernel similarity between all row pairs:
    /// `S_ij = exp(-‖x_i − x_j‖² / t)`.
    pub fn rbf(&mut self, x: Var, t: f64) -> Result<Var> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::param(format!("rbf bandwidth must be positive, got {t}")));
        }
        let value = rbf_kernel(self.value(x), t);
        let rg = self.rg(x);
        Ok(self.push(value, Op::Rbf(x, t), rg))
    }

    /// As [`Tape::rbf`] with `t` the median pairwise squared distance of the
    /// rows of `x` (1 when degenerate). Gradients flow through `t` as well.
    pub fn rbf_median(&mut self, x: Var) -> Var {
        let d = sq_dist_matrix(self.value(x));
        let rows: Vec<usize> = (0..d.rows()).collect();
        let pair = median_by(&rows, |i, j| d.get(i, j));
        let t = pair.map_or(1.0, |p| p.2);
        let value = rbf_from_dist(&d, t);
        let rg = self.rg(x);
        self.push(value, Op::RbfMedian(x, t, pair.map(|p| (p.0, p.1)), d), rg)
    }

    /// Zero the entries where `keep` is false; gradient only flows through
    /// kept entries.
    pub fn mask(&mut self, a: Var, keep: Vec<bool>) -> Result<Var> {
        let m = self.value(a);
        if keep.len() != m.len() {
            return Err(Error::Shape {
                op: "mask",
                left: m.shape(),
                right: (keep.len(), 1),
            });
        }
        let mut value = m.clone();
        for (v, &k) in value.as_mut_slice().iter_mut().zip(&keep) {
            if !k {
                *v = 0.0;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::Mask(a, keep), rg))
    }

    /// `D_ij = ‖a_i − b_j‖²` for rows of `a` (n×d) and `b` (k×d).
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.cols() != bm.cols() {
            return Err(Error::Shape {
                op: "pairwise_sq_dist",
                left: am.shape(),
                right: bm.shape(),
            });
        }
        let value = Matrix::from_fn(am.rows(), bm.rows(), |i, j| am.row_sq_dist(i, bm, j));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::PairwiseSqDist(a, b), rg))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: self.value(loss).shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
        if !self.rg(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.rg(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?)?;
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.rg(*bias) {
                    let sums = g.col_sums();
                    self.accumulate(grads, *bias, Matrix::from_vec(1, sums.len(), sums)?)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c))?,
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::Square(a) => {
                let ga = g.zip_map(self.value(*a), "square", |gv, x| 2.0 * x * gv)?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::Ln(a) => {
                let ga = g.zip_map(self.value(*a), "ln", |gv, x| gv / x)?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::Recip1p(a) => {
                let ga = g.zip_map(out, "recip1p", |gv, y| -gv * y * y)?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::ConcatCols(a, b) => {
                let split = self.value(*a).cols();
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.col_block(0, split)?)?;
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.col_block(split, g.cols())?)?;
                }
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let s: f64 = x.row(r).iter().sum();
                    let dot: f64 = g.row(r).iter().zip(out.row(r)).map(|(gv, y)| gv * y).sum();
                    for (dst, gv) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                        *dst = (gv - dot) / s;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.as_slice()[0]))?;
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let n = (r * c).max(1) as f64;
                self.accumulate(grads, *a, Matrix::filled(r, c, g.as_slice()[0] / n))?;
            }
            Op::Rbf(x, t) => {
                let gx = rbf_grad(self.value(*x), g, out, *t)?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::RbfMedian(x, t, pair, dist) => {
                let xm = self.value(*x);
                let mut gx = rbf_grad(xm, g, out, *t)?;
                if let Some((a, b)) = *pair {
                    // dS_ij/dt = S_ij D_ij / t², and t = D_ab.
                    let mut gt = 0.0;
                    for i in 0..xm.rows() {
                        for j in 0..xm.rows() {
                            gt += g.get(i, j) * out.get(i, j) * dist.get(i, j);
                        }
                    }
                    gt /= t * t;
                    for c in 0..xm.cols() {
                        let d = 2.0 * gt * (xm.get(a, c) - xm.get(b, c));
                        gx.set(a, c, gx.get(a, c) + d);
                        gx.set(b, c, gx.get(b, c) - d);
                    }
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::Mask(a, keep) => {
                let mut ga = g.clone();
                for (v, &k) in ga.as_mut_slice().iter_mut().zip(keep) {
                    if !k {
                        *v = 0.0;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::PairwiseSqDist(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let gb = g.matmul(bm)?;
                    let rs = g.row_sums();
                    let ga = Matrix::from_fn(am.rows(), am.cols(), |i, j| {
                        2.0 * (rs[i] * am.get(i, j) - gb.get(i, j))
                    });
                    self.accumulate(grads, *a, ga)?;
                }
                if self.rg(*b) {
                    let ga = g.t_matmul(am)?;
                    let cs = g.col_sums();
                    let gbm = Matrix::from_fn(bm.rows(), bm.cols(), |j, c| {
                        2.0 * (cs[j] * bm.get(j, c) - ga.get(j, c))
                    });
                    self.accumulate(grads, *b, gbm)?;
                }
            }
        }
        Ok(())
    }
}

/// Plain (non-recorded) RBF kernel matrix.
/// Gradient of `rbf(x, t)` with respect to `x` at fixed `t`. With
/// M = G⊙S + (G⊙S)ᵀ: dX = (-2/t)(diag(rowsum M)·X − M·X).
fn rbf_grad(xm: &Matrix, g: &Matrix, s: &Matrix, t: f64) -> Result<Matrix> {
    let gs = g.hadamard(s)?;
    let sym = gs.add(&gs.transpose())?;
    let mx = sym.matmul(xm)?;
    let rs = sym.row_sums();
    let coef = -2.0 / t;
    Ok(Matrix::from_fn(xm.rows(), xm.cols(), |i, j| {
        coef * (rs[i] * xm.get(i, j) - mx.get(i, j))
    }))
}

/// The pair among `rows` at the median of pairwise squared distances (the
/// upper middle for even counts) and that distance. `None` when fewer than
/// two rows are given or the median is not positive and finite.
pub fn median_pair(x: &Matrix, rows: &[usize]) -> Option<(usize, usize, f64)> {
    median_by(rows, |i, j| x.row_sq_dist(i, x, j))
}

fn median_by(rows: &[usize], dist: impl Fn(usize, usize) -> f64) -> Option<(usize, usize, f64)> {
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            d.push((dist(i, j), i, j));
        }
    }
    if d.is_empty() {
        return None;
    }
    let mid = d.len() / 2;
    let (_, &mut (m, i, j), _) = d.select_nth_unstable_by(mid, |p, q| p.0.total_cmp(&q.0).then((p.1, p.2).cmp(&(q.1, q.2))));
    (m > 0.0 && m.is_finite()).then_some((i, j, m))
}

pub fn rbf_kernel(x: &Matrix, t: f64) -> Matrix {
    rbf_from_dist(&sq_dist_matrix(x), t)
}

/// Symmetric squared distances between the rows of `x`, zero diagonal.
fn sq_dist_matrix(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = x.row_sq_dist(i, x, j);
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

fn rbf_from_dist(d: &Matrix, t: f64) -> Matrix {
    let n = d.rows();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        s.set(i, i, 1.0);
        for j in (i + 1)..n {
            let v = (-d.get(i, j) / t).exp();
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unused_nodes_get_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::from_rows(&[[1.0, 2.0]]));
        let b = tape.param(Matrix::from_rows(&[[3.0, 4.0]]));
        let sq = tape.square(a);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(b), Matrix::zeros(1, 2));
        assert_eq!(grads.get(a), Matrix::from_rows(&[[2.0, 4.0]]));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::from_rows(&[[3.0]]));
        let p = tape.mul(a, a).unwrap();
        let loss = tape.add(p, a).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a), Matrix::scalar(7.0));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(a), Err(Error::Shape { .. })));
    }

    #[test]
    fn constants_do_not_receive_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Matrix::from_rows(&[[2.0]]));
        let p = tape.param(Matrix::from_rows(&[[5.0]]));
        let m = tape.mul(c, p).unwrap();
        let loss = tape.sum(m);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p), Matrix::scalar(2.0));
        assert_eq!(grads.get(c), Matrix::zeros(1, 1));
    }

    #[test]
    fn rbf_rejects_bad_bandwidth() {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::zeros(3, 2));
        assert!(tape.rbf(x, 0.0).is_err());
        assert!(tape.rbf(x, -1.0).is_err());
    }

    #[test]
    fn rbf_median_gradient_includes_bandwidth() {
        // Five rows give ten distinct pairwise distances, so the median pair
        // is stable under the finite-difference step.
        let x = Matrix::from_rows(&[[0.0, 0.3], [1.1, -0.4], [0.2, 1.7], [-1.3, 0.5], [2.1, 1.2]]);
        let target = Matrix::from_fn(5, 5, |i, j| if (i + j) % 2 == 0 { 1.0 } else { 0.0 });
        let loss = |tape: &mut Tape, v: &[Var]| {
            let s = tape.rbf_median(v[0]);
            let c = tape.constant(target.clone());
            let d = tape.sub(s, c)?;
            let sq = tape.square(d);
            Ok(tape.sum(sq))
        };
        let err = crate::tensor::grad_check(loss, &[x.clone()], 1e-6).unwrap();
        assert!(err < 1e-7, "{err}");

        // Treating t as a constant would give a different gradient.
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let l = loss(&mut tape, &[v]).unwrap();
        let full = tape.backward(l).unwrap().get(v);
        let t = median_pair(&x, &[0, 1, 2, 3, 4]).unwrap().2;
        let mut tape = Tape::new();
        let v = tape.param(x);
        let s = tape.rbf(v, t).unwrap();
        let c = tape.constant(target);
        let d = tape.sub(s, c).unwrap();
        let sq = tape.square(d);
        let l = tape.sum(sq);
        let fixed = tape.backward(l).unwrap().get(v);
        assert!(full.max_abs_diff(&fixed) > 1e-3);
    }

    #[test]
    fn median_pair_upper_middle() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [3.0]]);
        // Squared distances: (0,1)=1, (0,2)=9, (1,2)=4 → median 4 at (1,2).
        assert_eq!(median_pair(&x, &[0, 1, 2]), Some((1, 2, 4.0)));
        assert_eq!(median_pair(&x, &[0]), None);
        let same = Matrix::zeros(3, 2);
        assert_eq!(median_pair(&same, &[0, 1, 2]), None);
    }
}
