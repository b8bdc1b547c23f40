//! A small reverse-mode automatic differentiation tape over `f64` matrices.
//!
//! Values are 2-D arrays; every operation appends a node recording its inputs.
//! [`Tape::backward`] walks the nodes in reverse and accumulates gradients only
//! along paths that reach a leaf created with `requires_grad = true`. Frozen
//! parameters enter as constants, so gradients still flow *through* them to
//! trainable inputs while they themselves never receive one.

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Epsilon inside layer normalisation.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Silu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, idx: Vec<usize> },
    SumSquares(Var),
    WeightedSum { x: Var, w: Mat },
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
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

    fn push(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// `a + row`, broadcasting a `1 × c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    /// `a ⊙ row`, broadcasting a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(silu);
        self.push(v, Op::Silu(a), &[a])
    }

    /// Per-row standardisation without affine parameters.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.dim();
        let mut out = Mat::zeros((r, c));
        let mut inv_std = Vec::with_capacity(r);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for (o, v) in out.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        self.push(out, Op::LayerNorm { x, inv_std }, &[x])
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked when
    /// `j > i + (cols - rows)`, i.e. the last query row sees every key.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let av = self.value(a);
        let (r, c) = av.dim();
        let offset = c as isize - r as isize;
        let mut out = Mat::zeros((r, c));
        for i in 0..r {
            let limit = if causal {
                ((i as isize + offset + 1).clamp(0, c as isize)) as usize
            } else {
                c
            };
            if limit == 0 {
                continue;
            }
            let row = av.row(i);
            let max = row
                .iter()
                .take(limit)
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for j in 0..limit {
                let e = (row[j] - max).exp();
                out[[i, j]] = e;
                sum += e;
            }
            for j in 0..limit {
                out[[i, j]] /= sum;
            }
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let v = self.value(x).slice(s![.., start..start + width]).to_owned();
        self.push(v, Op::SliceCols { x, start }, &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Output row `r` is input row `idx[r]`; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let mut v = Mat::zeros((idx.len(), xv.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).assign(&xv.row(i));
        }
        self.push(
            v,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        )
    }

    /// `Σ x²` as a `1 × 1` value.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|v| v * v).sum::<f64>();
        self.push(Mat::from_elem((1, 1), s), Op::SumSquares(x), &[x])
    }

    /// `Σ x ⊙ w` for a constant weight matrix, as a `1 × 1` value.
    pub fn weighted_sum(&mut self, x: Var, w: Mat) -> Var {
        let s = (self.value(x) * &w).sum();
        self.push(Mat::from_elem((1, 1), s), Op::WeightedSum { x, w }, &[x])
    }

    /// Sum of several `1 × 1` values.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Gradients of a `1 × 1` output with respect to every grad-requiring node.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Mat::ones(self.value(out).dim()));
        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*r) {
                    self.accumulate(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, r) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g * self.value(*r));
                }
                if self.needs(*r) {
                    let d = (g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *r, d);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g * *s),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Gelu(a) => {
                let mut d = self.value(*a).mapv(gelu_grad);
                d *= g;
                self.accumulate(grads, *a, d);
            }
            Op::Silu(a) => {
                let mut d = self.value(*a).mapv(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                d *= g;
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm { x, inv_std } => {
                let y = &node.value;
                let c = y.ncols() as f64;
                let mut d = Mat::zeros(y.dim());
                for i in 0..y.nrows() {
                    let gr = g.row(i);
                    let yr = y.row(i);
                    let mean_g = gr.sum() / c;
                    let mean_gy = gr.dot(&yr) / c;
                    for j in 0..y.ncols() {
                        d[[i, j]] = inv_std[i] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = g * y;
                let row_dot = d.sum_axis(Axis(1));
                Zip::from(d.rows_mut())
                    .and(y.rows())
                    .and(&row_dot)
                    .for_each(|mut dr, yr, &s| {
                        dr.zip_mut_with(&yr, |dv, &yv| *dv -= yv * s);
                    });
                self.accumulate(grads, *a, d);
            }
            Op::SliceCols { x, start } => {
                let mut d = Mat::zeros(self.value(*x).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.accumulate(grads, *x, d);
            }
            Op::SliceRows { x, start } => {
                let mut d = Mat::zeros(self.value(*x).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *x, d);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.needs(*p) {
                        self.accumulate(grads, *p, g.slice(s![.., at..at + w]).to_owned());
                    }
                    at += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    if self.needs(*p) {
                        self.accumulate(grads, *p, g.slice(s![at..at + h, ..]).to_owned());
                    }
                    at += h;
                }
            }
            Op::GatherRows { x, idx } => {
                let mut d = Mat::zeros(self.value(*x).dim());
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = d.row_mut(i);
                    row += &g.row(r);
                }
                self.accumulate(grads, *x, d);
            }
            Op::SumSquares(x) => {
                let d = self.value(*x) * (2.0 * g[[0, 0]]);
                self.accumulate(grads, *x, d);
            }
            Op::WeightedSum { x, w } => self.accumulate(grads, *x, w * g[[0, 0]]),
        }
    }
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn rand_mat(r: usize, c: usize, rng: &mut SeededRng) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.normal())
    }

    /// Central-difference check of `f` at `x0` against the tape gradient.
    fn check(x0: Mat, f: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone(), true);
        let out = f(&mut tape, x);
        let grads = tape.backward(out);
        let analytic = grads.get(x).cloned().unwrap_or_else(|| Mat::zeros(x0.dim()));
        let h = 1e-5;
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp[[r, c]] += delta;
                let mut t = Tape::new();
                let v = t.leaf(xp, true);
                let o = f(&mut t, v);
                t.scalar(o)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[[r, c]];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                "entry ({r},{c}): analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = SeededRng::new(1);
        let w = rand_mat(3, 4, &mut rng);
        let other = rand_mat(3, 4, &mut rng);
        let row = rand_mat(1, 4, &mut rng);
        check(rand_mat(3, 4, &mut rng), |t, x| {
            let g = t.gelu(x);
            let s = t.silu(x);
            let m = t.mul(g, s);
            let o = t.constant(other.clone());
            let a = t.add(m, o);
            let b = t.sub(a, x);
            let r = t.constant(row.clone());
            let c = t.mul_row(b, r);
            let d = t.add_row(c, r);
            let e = t.scale(d, 0.7);
            let f = t.add_scalar(e, 2.0);
            t.weighted_sum(f, w.clone())
        });
    }

    #[test]
    fn broadcast_row_grads() {
        let mut rng = SeededRng::new(2);
        let a = rand_mat(5, 3, &mut rng);
        let w = rand_mat(5, 3, &mut rng);
        check(rand_mat(1, 3, &mut rng), |t, r| {
            let av = t.constant(a.clone());
            let m = t.mul_row(av, r);
            let s = t.add_row(m, r);
            t.weighted_sum(s, w.clone())
        });
    }

    #[test]
    fn matmul_transpose_softmax() {
        let mut rng = SeededRng::new(3);
        let b = rand_mat(4, 5, &mut rng);
        let w = rand_mat(3, 3, &mut rng);
        for causal in [false, true] {
            check(rand_mat(3, 4, &mut rng), |t, x| {
                let bv = t.constant(b.clone());
                let p = t.matmul(x, bv);
                let pt = t.transpose(p);
                let sc = t.matmul(p, pt);
                let sm = t.softmax(sc, causal);
                t.weighted_sum(sm, w.clone())
            });
        }
    }

    #[test]
    fn layer_norm_grad() {
        let mut rng = SeededRng::new(4);
        let w = rand_mat(3, 6, &mut rng);
        check(rand_mat(3, 6, &mut rng), |t, x| {
            let y = t.layer_norm(x);
            t.weighted_sum(y, w.clone())
        });
    }

    #[test]
    fn structural_ops() {
        let mut rng = SeededRng::new(5);
        let w = rand_mat(6, 5, &mut rng);
        check(rand_mat(4, 5, &mut rng), |t, x| {
            let a = t.slice_cols(x, 1, 3);
            let b = t.slice_cols(x, 0, 2);
            let c = t.concat_cols(&[a, b]);
            let top = t.slice_rows(c, 0, 2);
            let g = t.gather_rows(c, &[3, 3, 1, 0]);
            let cat = t.concat_rows(&[top, g]);
            t.weighted_sum(cat, w.clone())
        });
        check(rand_mat(2, 3, &mut rng), |t, x| {
            let s = t.sum_squares(x);
            let s2 = t.sum_squares(x);
            t.sum_scalars(&[s, s2])
        });
    }

    #[test]
    fn causal_mask_zeroes_future() {
        let mut t = Tape::new();
        let x = t.constant(Mat::zeros((3, 3)));
        let y = t.softmax(x, true);
        let v = t.value(y);
        assert_eq!(v[[0, 1]], 0.0);
        assert_eq!(v[[0, 0]], 1.0);
        assert!((v[[2, 0]] - 1.0 / 3.0).abs() < 1e-15);
        // Rectangular: 2 queries over 4 keys, the last query sees all keys.
        let x = t.constant(Mat::zeros((2, 4)));
        let y = t.softmax(x, true);
        assert_eq!(t.value(y)[[0, 3]], 0.0);
        assert!((t.value(y)[[1, 3]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Mat::ones((2, 2)));
        let p = t.leaf(Mat::ones((2, 2)), true);
        let m = t.matmul(c, p);
        let s = t.sum_squares(m);
        let g = t.backward(s);
        assert!(g.get(c).is_none());
        assert!(g.get(p).is_some());
    }
}
