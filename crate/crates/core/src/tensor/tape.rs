use std::collections::HashMap;

use super::ops::{self, sigmoid_scalar};
use super::{Grid, ParamId, ParamStore, Vec1};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities inside binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    Conv1d { x: Var, w: Var, b: Var, c_in: usize, c_out: usize, t: usize, k: usize },
    Dense { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    MeanOverRows { x: Var, rows: usize, cols: usize },
    MeanOverCols { x: Var, rows: usize, cols: usize },
    MulRow { a: Var, x: Var, cols: usize },
    MulCol { a: Var, x: Var, cols: usize },
    Concat { x: Var, y: Var },
    Add { x: Var, y: Var },
    Reshape(Var),
    WeightedSum { x: Var, weights: Vec<f64> },
    Bce { p: Var, targets: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. One tape per forward pass; tapes are not shared between threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

fn expect_rank(shape: &[usize], rank: usize, what: &str) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::shape(format!("{what}: expected rank {rank}, got shape {shape:?}")));
    }
    Ok(())
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    /// Reads a rank-2 node back as a grid.
    pub fn grid(&self, v: Var) -> Grid {
        let n = self.node(v);
        assert_eq!(n.shape.len(), 2, "node is not a grid");
        Grid::new(n.shape[0], n.shape[1], n.value.clone()).expect("tape grids are well formed")
    }

    pub fn vec1(&self, v: Var) -> Vec1 {
        Vec1::new(self.node(v).value.clone())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "node is not a scalar");
        n.value[0]
    }

    pub fn input_grid(&mut self, x: &Grid) -> Var {
        self.push(vec![x.rows(), x.cols()], x.values().to_vec(), Op::Input)
    }

    pub fn input_vec(&mut self, x: &Vec1) -> Var {
        self.push(vec![x.len()], x.values().to_vec(), Op::Input)
    }

    /// Binds a stored parameter as a leaf; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.shape(id).to_vec(), store.values(id).to_vec(), Op::Param);
        self.bound.insert(id, v);
        v
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        expect_rank(&xs, 2, "conv1d input")?;
        expect_rank(&ws, 3, "conv1d weight")?;
        let (c_in, t) = (xs[0], xs[1]);
        let (c_out, k) = (ws[0], ws[2]);
        if ws[1] != c_in {
            return Err(Error::shape(format!("conv1d expects {} input channels, got {c_in}", ws[1])));
        }
        if bs != [c_out] {
            return Err(Error::shape(format!("conv1d bias shape {bs:?}, expected [{c_out}]")));
        }
        if k % 2 == 0 {
            return Err(Error::shape(format!("kernel size must be odd, got {k}")));
        }
        let value = ops::conv1d_forward(self.value(x), c_in, t, self.value(w), self.value(b), c_out, k);
        Ok(self.push(vec![c_out, t], value, Op::Conv1d { x, w, b, c_in, c_out, t, k }))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        expect_rank(&xs, 1, "dense input")?;
        expect_rank(&ws, 2, "dense weight")?;
        if ws[1] != xs[0] || self.shape(b) != [ws[0]] {
            return Err(Error::shape(format!("dense layer {ws:?} does not accept input {xs:?}")));
        }
        let value = ops::dense_forward(self.value(x), self.value(w), self.value(b), ws[0]);
        Ok(self.push(vec![ws[0]], value, Op::Dense { x, w, b }))
    }

    /// Sign of every ReLU input recorded so far, in recording order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(&self.node(x).value),
                _ => None,
            })
            .flatten()
            .map(|&v| v > 0.0)
            .collect()
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let value = n.value.iter().map(|v| v.max(0.0)).collect();
        self.push(n.shape.clone(), value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let value = n.value.iter().map(|&v| sigmoid_scalar(v)).collect();
        self.push(n.shape.clone(), value, Op::Sigmoid(x))
    }

    pub fn mean_over_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        expect_rank(&s, 2, "mean_over_rows")?;
        let value = ops::mean_over_rows_raw(self.value(x), s[0], s[1]);
        Ok(self.push(vec![s[1]], value, Op::MeanOverRows { x, rows: s[0], cols: s[1] }))
    }

    pub fn mean_over_cols(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        expect_rank(&s, 2, "mean_over_cols")?;
        let value = ops::mean_over_cols_raw(self.value(x), s[0], s[1]);
        Ok(self.push(vec![s[0]], value, Op::MeanOverCols { x, rows: s[0], cols: s[1] }))
    }

    pub fn mul_row(&mut self, a: Var, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        expect_rank(&s, 2, "mul_row target")?;
        if self.shape(a) != [s[1]] {
            return Err(Error::shape(format!("row gate {:?} against grid {s:?}", self.shape(a))));
        }
        let value = ops::mul_row_raw(self.value(a), self.value(x), s[1]);
        Ok(self.push(s.clone(), value, Op::MulRow { a, x, cols: s[1] }))
    }

    pub fn mul_col(&mut self, a: Var, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        expect_rank(&s, 2, "mul_col target")?;
        if self.shape(a) != [s[0]] {
            return Err(Error::shape(format!("column gate {:?} against grid {s:?}", self.shape(a))));
        }
        let value = ops::mul_col_raw(self.value(a), self.value(x), s[1]);
        Ok(self.push(s.clone(), value, Op::MulCol { a, x, cols: s[1] }))
    }

    pub fn concat_rows(&mut self, x: Var, y: Var) -> Result<Var> {
        let (xs, ys) = (self.shape(x).to_vec(), self.shape(y).to_vec());
        expect_rank(&xs, 2, "concat_rows")?;
        expect_rank(&ys, 2, "concat_rows")?;
        if xs[1] != ys[1] {
            return Err(Error::shape(format!("cannot stack {xs:?} over {ys:?}")));
        }
        let mut value = self.value(x).to_vec();
        value.extend_from_slice(self.value(y));
        Ok(self.push(vec![xs[0] + ys[0], xs[1]], value, Op::Concat { x, y }))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        if self.shape(x) != self.shape(y) {
            return Err(Error::shape(format!("cannot add {:?} and {:?}", self.shape(x), self.shape(y))));
        }
        let value = self.value(x).iter().zip(self.value(y)).map(|(a, b)| a + b).collect();
        Ok(self.push(self.shape(x).to_vec(), value, Op::Add { x, y }))
    }

    /// Reinterprets the values under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape(x))));
        }
        let value = self.value(x).to_vec();
        Ok(self.push(shape, value, Op::Reshape(x)))
    }

    /// `Σ weights[i] · x[i]`, a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape("weighted_sum: weight count differs from element count"));
        }
        let value = self.value(x).iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(vec![], vec![value], Op::WeightedSum { x, weights }))
    }

    /// Weighted binary cross-entropy `-Σ wᵢ [yᵢ ln pᵢ + (1-yᵢ) ln(1-pᵢ)]` with
    /// `pᵢ` clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, p: Var, targets: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        let n = self.value(p).len();
        if targets.len() != n || weights.len() != n {
            return Err(Error::shape("bce: targets/weights length differs from predictions"));
        }
        let value = self
            .value(p)
            .iter()
            .zip(targets.iter().zip(&weights))
            .map(|(&pi, (&y, &w))| {
                let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -w * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
            })
            .sum();
        Ok(self.push(vec![], vec![value], Op::Bce { p, targets, weights }))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_scaled(loss, 1.0)
    }

    /// Reverse sweep seeded with `d loss = seed`.
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward operation".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("loss variable does not belong to this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::State(format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].shape)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![seed]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, delta: Vec<f64>| match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(delta).for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Input | Op::Param => {}
                Op::Conv1d { x, w, b, c_in, c_out, t, k } => {
                    let (gx, gw, gb) =
                        ops::conv1d_backward(self.value(*x), *c_in, *t, self.value(*w), *c_out, *k, &g);
                    acc(*x, gx);
                    acc(*w, gw);
                    acc(*b, gb);
                }
                Op::Dense { x, w, b } => {
                    let (gx, gw, gb) = ops::dense_backward(self.value(*x), self.value(*w), &g);
                    acc(*x, gx);
                    acc(*w, gw);
                    acc(*b, gb);
                }
                Op::Relu(x) => {
                    let d = self.value(*x).iter().zip(&g).map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 }).collect();
                    acc(*x, d);
                }
                Op::Sigmoid(x) => {
                    let d = node.value.iter().zip(&g).map(|(&s, &gi)| gi * s * (1.0 - s)).collect();
                    acc(*x, d);
                }
                Op::MeanOverRows { x, rows, cols } => {
                    let d = (0..rows * cols).map(|i| g[i % cols] / *rows as f64).collect();
                    acc(*x, d);
                }
                Op::MeanOverCols { x, rows, cols } => {
                    let d = (0..rows * cols).map(|i| g[i / cols] / *cols as f64).collect();
                    acc(*x, d);
                }
                Op::MulRow { a, x, cols } => {
                    let (av, xv) = (self.value(*a), self.value(*x));
                    let mut ga = vec![0.0; *cols];
                    let mut gx = vec![0.0; xv.len()];
                    for i in 0..xv.len() {
                        ga[i % cols] += g[i] * xv[i];
                        gx[i] = g[i] * av[i % cols];
                    }
                    acc(*a, ga);
                    acc(*x, gx);
                }
                Op::MulCol { a, x, cols } => {
                    let (av, xv) = (self.value(*a), self.value(*x));
                    let mut ga = vec![0.0; av.len()];
                    let mut gx = vec![0.0; xv.len()];
                    for i in 0..xv.len() {
                        ga[i / cols] += g[i] * xv[i];
                        gx[i] = g[i] * av[i / cols];
                    }
                    acc(*a, ga);
                    acc(*x, gx);
                }
                Op::Concat { x, y } => {
                    let split = self.value(*x).len();
                    acc(*x, g[..split].to_vec());
                    acc(*y, g[split..].to_vec());
                }
                Op::Add { x, y } => {
                    acc(*x, g.clone());
                    acc(*y, g.clone());
                }
                Op::Reshape(x) => acc(*x, g.clone()),
                Op::WeightedSum { x, weights } => {
                    acc(*x, weights.iter().map(|w| w * g[0]).collect());
                }
                Op::Bce { p, targets, weights } => {
                    let d = self
                        .value(*p)
                        .iter()
                        .zip(targets.iter().zip(weights))
                        .map(|(&pi, (&y, &w))| {
                            if pi < BCE_EPS || pi > 1.0 - BCE_EPS {
                                0.0
                            } else {
                                -w * (y / pi - (1.0 - y) / (1.0 - pi)) * g[0]
                            }
                        })
                        .collect();
                    acc(*p, d);
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients { by_node: grads, bound: self.bound.clone() })
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
    bound: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient with respect to a recorded value; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.by_node.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a stored parameter; `None` if it was never bound or unused.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.bound.get(&id).and_then(|&v| self.wrt(v))
    }

    /// One gradient per store entry, zero-filled for parameters the loss did not touch.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        store
            .ids()
            .map(|id| self.param(id).map_or_else(|| vec![0.0; store.values(id).len()], <[f64]>::to_vec))
            .collect()
    }
}
