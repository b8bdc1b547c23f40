//! Named parameter storage and the layer building blocks shared by the
//! condition builder and the flow model.

use std::collections::BTreeMap;

use crate::autograd::{Gradients, Mat, Tape, Var};
use crate::rng::SeededRng;

/// Parameters keyed by dotted name; iteration order is lexicographic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Mat)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Mat::len).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.params.extend(other.params);
    }

    /// `name.w` (`d_in × d_out`, N(0, gain²/d_in)) and `name.b` (zeros).
    pub fn init_linear(&mut self, name: &str, d_in: usize, d_out: usize, gain: f64, rng: &mut SeededRng) {
        let std = gain / (d_in as f64).sqrt();
        self.init_normal(&format!("{name}.w"), d_in, d_out, std, rng);
        self.insert(format!("{name}.b"), Mat::zeros((1, d_out)));
    }

    /// `name.gamma` (ones) and `name.beta` (zeros).
    pub fn init_layer_norm(&mut self, name: &str, dim: usize) {
        self.insert(format!("{name}.gamma"), Mat::ones((1, dim)));
        self.insert(format!("{name}.beta"), Mat::zeros((1, dim)));
    }

    pub fn init_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut SeededRng) {
        self.insert(name, Mat::from_shape_fn((rows, cols), |_| rng.normal() * std));
    }

    /// Places every parameter on `tape`; `trainable = false` binds constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
                .collect(),
        }
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Panics on an unknown name: parameter names are fixed at construction.
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    pub fn extend(&mut self, other: Bound) {
        self.vars.extend(other.vars);
    }

    /// Per-parameter gradients; parameters off the loss path get zeros.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> BTreeMap<String, Mat> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let g = grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Mat::zeros(tape.shape(*v)));
                (k.clone(), g)
            })
            .collect()
    }
}

pub fn linear(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Var {
    let h = tape.matmul(x, p.get(&format!("{name}.w")));
    tape.add_row(h, p.get(&format!("{name}.b")))
}

pub fn layer_norm_affine(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Var {
    let n = tape.layer_norm(x);
    let s = tape.mul_row(n, p.get(&format!("{name}.gamma")));
    tape.add_row(s, p.get(&format!("{name}.beta")))
}

/// `fc2(GELU(fc1(x)))`.
pub fn feed_forward(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Var {
    let h = linear(tape, p, &format!("{name}.fc1"), x);
    let h = tape.gelu(h);
    linear(tape, p, &format!("{name}.fc2"), h)
}

pub fn init_feed_forward(params: &mut ParamSet, name: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut SeededRng) {
    params.init_linear(&format!("{name}.fc1"), d_in, hidden, 1.0, rng);
    params.init_linear(&format!("{name}.fc2"), hidden, d_out, 1.0, rng);
}

/// Multi-head scaled dot-product attention over already projected
/// queries (`n × d`), keys and values (`m × d`).
pub fn attend(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
    let d = tape.shape(q).1;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax(scores, causal);
        outs.push(tape.matmul(weights, vh));
    }
    if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)
    }
}

/// `name.{q,k,v,o}`: queries from `d_q`, keys/values from `d_kv`, output `d_q`.
pub fn init_attention(params: &mut ParamSet, name: &str, d_q: usize, d_kv: usize, rng: &mut SeededRng) {
    params.init_linear(&format!("{name}.q"), d_q, d_q, 1.0, rng);
    params.init_linear(&format!("{name}.k"), d_kv, d_q, 1.0, rng);
    params.init_linear(&format!("{name}.v"), d_kv, d_q, 1.0, rng);
    params.init_linear(&format!("{name}.o"), d_q, d_q, 1.0, rng);
}

/// Key and value projections of a context sequence.
pub fn project_kv(tape: &mut Tape, p: &Bound, name: &str, context: Var) -> (Var, Var) {
    let k = linear(tape, p, &format!("{name}.k"), context);
    let v = linear(tape, p, &format!("{name}.v"), context);
    (k, v)
}

/// Attention of `x` over pre-projected keys/values, followed by the output map.
pub fn attention(
    tape: &mut Tape,
    p: &Bound,
    name: &str,
    x: Var,
    kv: (Var, Var),
    heads: usize,
    causal: bool,
) -> Var {
    let q = linear(tape, p, &format!("{name}.q"), x);
    let a = attend(tape, q, kv.0, kv.1, heads, causal);
    linear(tape, p, &format!("{name}.o"), a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_manual() {
        let mut params = ParamSet::new();
        let mut rng = SeededRng::new(0);
        params.init_linear("l", 3, 2, 1.0, &mut rng);
        params.insert("l.b", Mat::from_shape_vec((1, 2), vec![0.5, -1.0]).unwrap());
        let x = Mat::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = linear(&mut tape, &p, "l", xv);
        let expected = x.dot(params.get("l.w").unwrap()) + params.get("l.b").unwrap();
        assert_eq!(tape.value(y), &expected);
    }

    #[test]
    fn single_key_attention_returns_value() {
        let mut tape = Tape::new();
        let q = tape.constant(Mat::from_elem((3, 4), 0.3));
        let k = tape.constant(Mat::from_elem((1, 4), -2.0));
        let v = tape.constant(Mat::from_shape_fn((1, 4), |(_, j)| j as f64));
        let out = attend(&mut tape, q, k, v, 2, false);
        for r in 0..3 {
            for c in 0..4 {
                assert!((tape.value(out)[[r, c]] - c as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unused_params_get_zero_gradients() {
        let mut params = ParamSet::new();
        params.insert("used", Mat::ones((1, 2)));
        params.insert("unused", Mat::ones((2, 2)));
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, true);
        let loss = tape.sum_squares(p.get("used"));
        let grads = p.gradients(&tape, &tape.backward(loss));
        assert_eq!(grads["used"], Mat::from_elem((1, 2), 2.0));
        assert_eq!(grads["unused"], Mat::zeros((2, 2)));
    }

    #[test]
    fn subset_filters_by_prefix() {
        let mut params = ParamSet::new();
        params.insert("a.x", Mat::zeros((1, 1)));
        params.insert("b.x", Mat::zeros((1, 3)));
        assert_eq!(params.subset("b.").num_scalars(), 3);
    }
}
