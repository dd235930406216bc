//! Define-by-run reverse-mode autodiff on dense row-major matrices.
//!
//! A `Graph` is a tape: every builder method computes its value eagerly
//! and records the operation. `backward` walks the tape once in reverse
//! and accumulates parameter gradients into a [`ParamStore`]. Tapes are
//! rebuilt per forward pass; parameter values are `Arc`-shared, so leaves
//! do not copy weights.
//!
//! Only parameters receive gradients. Geometry, distances, and other
//! environment quantities enter as constants.

use std::sync::Arc;

use ndarray::ArrayView2;

use crate::scalar::Scalar;

use super::params::{ParamId, ParamStore};

/// Scalars the tape can run on: needs ndarray's matmul on top of the
/// arithmetic in [`Scalar`].
pub trait GraphScalar: Scalar + ndarray::LinalgScalar {
    /// Finite stand-in for log(0) that survives exp/mul round trips
    /// without producing NaN.
    fn masked_neg() -> Self {
        Self::from_f64_c(-1e30)
    }
}

impl GraphScalar for f32 {}
impl GraphScalar for f64 {}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct Tensor<F> {
    pub data: Arc<Vec<F>>,
    pub rows: usize,
    pub cols: usize,
}

impl<F: GraphScalar> Tensor<F> {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// (r,c) + (1,c), the bias pattern.
    AddRowBroadcast(NodeId, NodeId),
    /// (r,c) * (r,1), the cutoff-column pattern.
    MulColBroadcast(NodeId, NodeId),
    /// Replicate a (1,c) row r times.
    RepeatRows(NodeId, usize),
    Scale(NodeId, F),
    AddConst(NodeId, F),
    Neg(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    /// Shifted softplus ln(0.5 e^x + 0.5).
    Ssp(NodeId),
    SumAll(NodeId),
    SumRows(NodeId),
    Row(NodeId, usize),
    Entry(NodeId, usize, usize),
    GatherRows(NodeId, Arc<Vec<usize>>),
    /// Sum input rows into output rows by segment id.
    SegmentSum(NodeId, Arc<Vec<usize>>),
    ConcatCols(NodeId, NodeId),
    Reshape(NodeId),
    /// Log-softmax over a (1,n) row; entries with mask=false are excluded
    /// and produce `masked_neg()`.
    MaskedLogSoftmax(NodeId, Arc<Vec<bool>>),
    Min(NodeId, NodeId),
    ClampConst(NodeId, F, F),
}

struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
}

/// One forward tape.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: GraphScalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: GraphScalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> F {
        let t = self.value(id);
        assert_eq!((t.rows, t.cols), (1, 1), "node is not a scalar");
        t.data[0]
    }

    fn push(&mut self, op: Op<F>, data: Vec<F>, rows: usize, cols: usize) -> NodeId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { op, value: Tensor { data: Arc::new(data), rows, cols } });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, data: Vec<F>, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Constant, data, rows, cols)
    }

    pub fn scalar_const(&mut self, v: F) -> NodeId {
        self.constant(vec![v], 1, 1)
    }

    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        let p = store.get(id);
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Tensor { data: p.value.clone(), rows: p.rows, cols: p.cols },
        });
        self.nodes.len() - 1
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].value.rows, self.nodes[id].value.cols)
    }

    fn data(&self, id: NodeId) -> &[F] {
        &self.nodes[id].value.data
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul inner dimensions differ: {ac} vs {br}");
        let av = ArrayView2::from_shape((ar, ac), self.data(a)).unwrap();
        let bv = ArrayView2::from_shape((br, bc), self.data(b)).unwrap();
        let out = av.dot(&bv);
        // iterate in logical order: dot may return a transposed layout
        let data = out.iter().copied().collect();
        self.push(Op::MatMul(a, b), data, ar, bc)
    }

    fn zip(&mut self, a: NodeId, b: NodeId, f: impl Fn(F, F) -> F, op: Op<F>) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert_eq!(self.shape(b), (ar, ac), "elementwise shape mismatch");
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b).iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(op, data, ar, ac)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert_eq!(self.shape(row), (1, ac), "bias row shape mismatch");
        let mut data = Vec::with_capacity(ar * ac);
        for r in 0..ar {
            for c in 0..ac {
                data.push(self.data(a)[r * ac + c] + self.data(row)[c]);
            }
        }
        self.push(Op::AddRowBroadcast(a, row), data, ar, ac)
    }

    pub fn mul_col_broadcast(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert_eq!(self.shape(col), (ar, 1), "column factor shape mismatch");
        let mut data = Vec::with_capacity(ar * ac);
        for r in 0..ar {
            for c in 0..ac {
                data.push(self.data(a)[r * ac + c] * self.data(col)[r]);
            }
        }
        self.push(Op::MulColBroadcast(a, col), data, ar, ac)
    }

    pub fn repeat_rows(&mut self, a: NodeId, n: usize) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert_eq!(ar, 1, "repeat_rows needs a single row");
        let mut data = Vec::with_capacity(n * ac);
        for _ in 0..n {
            data.extend_from_slice(self.data(a));
        }
        self.push(Op::RepeatRows(a, n), data, n, ac)
    }

    fn map(&mut self, a: NodeId, f: impl Fn(F) -> F, op: Op<F>) -> NodeId {
        let (ar, ac) = self.shape(a);
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        self.push(op, data, ar, ac)
    }

    pub fn scale(&mut self, a: NodeId, s: F) -> NodeId {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: NodeId, c: F) -> NodeId {
        self.map(a, |x| x + c, Op::AddConst(a, c))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| -x, Op::Neg(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| if x > F::zero() { x } else { F::zero() }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x.exp(), Op::Exp(a))
    }

    /// Shifted softplus ln(0.5 e^x + 0.5); zero at zero, smooth everywhere.
    pub fn ssp(&mut self, a: NodeId) -> NodeId {
        let half = F::from_f64_c(0.5);
        self.map(a, |x| (half * x.exp() + half).ln(), Op::Ssp(a))
    }

    pub fn clamp_const(&mut self, a: NodeId, lo: F, hi: F) -> NodeId {
        assert!(lo <= hi);
        self.map(a, |x| x.max(lo).min(hi), Op::ClampConst(a, lo, hi))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.data(a).iter().copied().sum();
        self.push(Op::SumAll(a), vec![s], 1, 1)
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let mut data = vec![F::zero(); ac];
        for r in 0..ar {
            for c in 0..ac {
                data[c] += self.data(a)[r * ac + c];
            }
        }
        self.push(Op::SumRows(a), data, 1, ac)
    }

    pub fn row(&mut self, a: NodeId, r: usize) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert!(r < ar, "row {r} out of range for {ar} rows");
        let data = self.data(a)[r * ac..(r + 1) * ac].to_vec();
        self.push(Op::Row(a, r), data, 1, ac)
    }

    pub fn entry(&mut self, a: NodeId, r: usize, c: usize) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert!(r < ar && c < ac, "entry ({r},{c}) out of range");
        let v = self.data(a)[r * ac + c];
        self.push(Op::Entry(a, r, c), vec![v], 1, 1)
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> NodeId {
        let (ar, ac) = self.shape(a);
        let mut data = Vec::with_capacity(indices.len() * ac);
        for &i in &indices {
            assert!(i < ar, "gather index {i} out of range for {ar} rows");
            data.extend_from_slice(&self.data(a)[i * ac..(i + 1) * ac]);
        }
        let n = indices.len();
        self.push(Op::GatherRows(a, Arc::new(indices)), data, n, ac)
    }

    pub fn segment_sum(&mut self, a: NodeId, segments: Vec<usize>, n_seg: usize) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert_eq!(segments.len(), ar, "one segment id per input row");
        let mut data = vec![F::zero(); n_seg * ac];
        for (r, &s) in segments.iter().enumerate() {
            assert!(s < n_seg, "segment id {s} out of range");
            for c in 0..ac {
                data[s * ac + c] += self.data(a)[r * ac + c];
            }
        }
        self.push(Op::SegmentSum(a, Arc::new(segments)), data, n_seg, ac)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ar, br, "concat_cols row mismatch");
        let mut data = Vec::with_capacity(ar * (ac + bc));
        for r in 0..ar {
            data.extend_from_slice(&self.data(a)[r * ac..(r + 1) * ac]);
            data.extend_from_slice(&self.data(b)[r * bc..(r + 1) * bc]);
        }
        self.push(Op::ConcatCols(a, b), data, ar, ac + bc)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert_eq!(ar * ac, rows * cols, "reshape must preserve element count");
        let data = self.data(a).to_vec();
        self.push(Op::Reshape(a), data, rows, cols)
    }

    /// Log-softmax over a (1,n) row restricted to `mask`; masked entries
    /// come out as `masked_neg()`. At least one entry must be valid.
    pub fn masked_log_softmax(&mut self, a: NodeId, mask: Vec<bool>) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert_eq!(ar, 1, "masked_log_softmax expects one row");
        assert_eq!(mask.len(), ac, "mask length mismatch");
        assert!(mask.iter().any(|&m| m), "all entries masked");
        let x = self.data(a);
        let mut m = F::neg_infinity();
        for (i, &v) in x.iter().enumerate() {
            if mask[i] && v > m {
                m = v;
            }
        }
        let mut sum = F::zero();
        for (i, &v) in x.iter().enumerate() {
            if mask[i] {
                sum += (v - m).exp();
            }
        }
        let lse = m + sum.ln();
        let data = x
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask[i] { v - lse } else { F::masked_neg() })
            .collect();
        self.push(Op::MaskedLogSoftmax(a, Arc::new(mask)), data, 1, ac)
    }

    /// Reverse pass from a scalar node; parameter gradients accumulate
    /// into `store` (on top of whatever is already there).
    pub fn backward(&self, out: NodeId, seed: F, store: &mut ParamStore<F>) {
        let t = self.value(out);
        assert_eq!((t.rows, t.cols), (1, 1), "backward starts from a scalar");
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[out] = Some(vec![seed]);

        for id in (0..=out).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => {
                    let dst = store.grad_mut(*pid);
                    for (d, s) in dst.iter_mut().zip(&g) {
                        *d += *s;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ar, ac) = self.shape(*a);
                    let (_, bc) = self.shape(*b);
                    let gv = ArrayView2::from_shape((ar, bc), g.as_slice()).unwrap();
                    let av = ArrayView2::from_shape((ar, ac), self.data(*a)).unwrap();
                    let bv = ArrayView2::from_shape((ac, bc), self.data(*b)).unwrap();
                    let ga = gv.dot(&bv.t());
                    let gb = av.t().dot(&gv);
                    accumulate(&mut grads, *a, ga.iter().copied().collect());
                    accumulate(&mut grads, *b, gb.iter().copied().collect());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    let gb = g.iter().map(|&x| -x).collect();
                    accumulate(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let ga = g.iter().zip(self.data(*b)).map(|(&x, &y)| x * y).collect();
                    let gb = g.iter().zip(self.data(*a)).map(|(&x, &y)| x * y).collect();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Min(a, b) => {
                    let av = self.data(*a);
                    let bv = self.data(*b);
                    let mut ga = vec![F::zero(); g.len()];
                    let mut gb = vec![F::zero(); g.len()];
                    for i in 0..g.len() {
                        if av[i] <= bv[i] {
                            ga[i] = g[i];
                        } else {
                            gb[i] = g[i];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRowBroadcast(a, row) => {
                    let (_, ac) = self.shape(*a);
                    accumulate(&mut grads, *a, g.clone());
                    let mut grow = vec![F::zero(); ac];
                    for (i, &x) in g.iter().enumerate() {
                        grow[i % ac] += x;
                    }
                    accumulate(&mut grads, *row, grow);
                }
                Op::MulColBroadcast(a, col) => {
                    let (ar, ac) = self.shape(*a);
                    let colv = self.data(*col);
                    let av = self.data(*a);
                    let mut ga = vec![F::zero(); ar * ac];
                    let mut gcol = vec![F::zero(); ar];
                    for r in 0..ar {
                        for c in 0..ac {
                            let i = r * ac + c;
                            ga[i] = g[i] * colv[r];
                            gcol[r] += g[i] * av[i];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *col, gcol);
                }
                Op::RepeatRows(a, n) => {
                    let (_, ac) = self.shape(*a);
                    let mut ga = vec![F::zero(); ac];
                    for r in 0..*n {
                        for c in 0..ac {
                            ga[c] += g[r * ac + c];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Scale(a, s) => {
                    let ga = g.iter().map(|&x| x * *s).collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::AddConst(a, _) | Op::Reshape(a) => {
                    accumulate(&mut grads, *a, g);
                }
                Op::Neg(a) => {
                    let ga = g.iter().map(|&x| -x).collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = g
                        .iter()
                        .zip(self.data(*a))
                        .map(|(&gi, &x)| if x > F::zero() { gi } else { F::zero() })
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g
                        .iter()
                        .zip(node.value.data.iter())
                        .map(|(&gi, &y)| gi * (F::one() - y * y))
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g
                        .iter()
                        .zip(node.value.data.iter())
                        .map(|(&gi, &y)| gi * y)
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Ssp(a) => {
                    // d/dx ln(0.5 e^x + 0.5) = sigmoid(x)
                    let ga = g
                        .iter()
                        .zip(self.data(*a))
                        .map(|(&gi, &x)| gi / (F::one() + (-x).exp()))
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::ClampConst(a, lo, hi) => {
                    let ga = g
                        .iter()
                        .zip(self.data(*a))
                        .map(|(&gi, &x)| if x >= *lo && x <= *hi { gi } else { F::zero() })
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let (ar, ac) = self.shape(*a);
                    accumulate(&mut grads, *a, vec![g[0]; ar * ac]);
                }
                Op::SumRows(a) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ga = Vec::with_capacity(ar * ac);
                    for _ in 0..ar {
                        ga.extend_from_slice(&g);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Row(a, r) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ga = vec![F::zero(); ar * ac];
                    ga[r * ac..(r + 1) * ac].copy_from_slice(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Entry(a, r, c) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ga = vec![F::zero(); ar * ac];
                    ga[r * ac + c] = g[0];
                    accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows(a, indices) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ga = vec![F::zero(); ar * ac];
                    for (r, &i) in indices.iter().enumerate() {
                        for c in 0..ac {
                            ga[i * ac + c] += g[r * ac + c];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SegmentSum(a, segments) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ga = vec![F::zero(); ar * ac];
                    for (r, &s) in segments.iter().enumerate() {
                        for c in 0..ac {
                            ga[r * ac + c] = g[s * ac + c];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let (ar, ac) = self.shape(*a);
                    let (_, bc) = self.shape(*b);
                    let mut ga = Vec::with_capacity(ar * ac);
                    let mut gb = Vec::with_capacity(ar * bc);
                    for r in 0..ar {
                        let base = r * (ac + bc);
                        ga.extend_from_slice(&g[base..base + ac]);
                        gb.extend_from_slice(&g[base + ac..base + ac + bc]);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MaskedLogSoftmax(a, mask) => {
                    let y = &node.value.data;
                    let mut gsum = F::zero();
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            gsum += g[i];
                        }
                    }
                    let ga = mask
                        .iter()
                        .enumerate()
                        .map(|(i, &m)| {
                            if m {
                                g[i] - y[i].exp() * gsum
                            } else {
                                F::zero()
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
    }
}

fn accumulate<F: GraphScalar>(grads: &mut [Option<Vec<F>>], id: NodeId, g: Vec<F>) {
    match &mut grads[id] {
        Some(dst) => {
            for (d, s) in dst.iter_mut().zip(&g) {
                *d += *s;
            }
        }
        slot => *slot = Some(g),
    }
}
