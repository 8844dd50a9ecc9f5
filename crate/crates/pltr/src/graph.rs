//! Reverse-mode autodiff over row-major f64 matrices.
//!
//! A [`Graph`] is a write-once tape: every operation appends a node holding
//! its value, and [`Graph::backward`] walks the tape in reverse to produce
//! exact analytic gradients. Everything is f64 and sequential, so a fixed
//! input yields bit-identical values and gradients on every run.

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Mat::from_vec(1, 1, vec![v])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!((self.rows, self.cols), (1, 1), "item() needs a 1x1 matrix");
        self.data[0]
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// c += a . b
    fn matmul_acc(a: &Mat, b: &Mat, c: &mut Mat) {
        assert_eq!(a.cols, b.rows);
        assert_eq!((c.rows, c.cols), (a.rows, b.cols));
        for i in 0..a.rows {
            let a_row = a.row(i);
            let c_row = &mut c.data[i * b.cols..(i + 1) * b.cols];
            for (k, &aik) in a_row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b_row = b.row(k);
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += aik * bv;
                }
            }
        }
    }

    /// c += a . b^T
    fn matmul_nt_acc(a: &Mat, b: &Mat, c: &mut Mat) {
        assert_eq!(a.cols, b.cols);
        assert_eq!((c.rows, c.cols), (a.rows, b.rows));
        for i in 0..a.rows {
            let a_row = a.row(i);
            for j in 0..b.rows {
                let b_row = b.row(j);
                let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                c.data[i * b.rows + j] += dot;
            }
        }
    }

    /// c += a^T . b
    fn matmul_tn_acc(a: &Mat, b: &Mat, c: &mut Mat) {
        assert_eq!(a.rows, b.rows);
        assert_eq!((c.rows, c.cols), (a.cols, b.cols));
        for k in 0..a.rows {
            let a_row = a.row(k);
            let b_row = b.row(k);
            for (i, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let c_row = &mut c.data[i * b.cols..(i + 1) * b.cols];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += av * bv;
                }
            }
        }
    }
}

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Gather { src: NodeId, ids: Vec<usize> },
    Add(NodeId, NodeId),
    /// Broadcast-add a 1xC bias to every row.
    AddRow { a: NodeId, bias: NodeId },
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// a . b^T
    MatMulNt(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols { src: NodeId, start: usize },
    RowSoftmax { src: NodeId },
    RowLogSoftmax { src: NodeId },
    LayerNorm { src: NodeId, gamma: NodeId, beta: NodeId },
    Gelu(NodeId),
    /// -mean over (row, col) picks of a log-probability matrix.
    PickNllMean { logp: NodeId, picks: Vec<(usize, usize)> },
    /// Elementwise weighted sum of same-shape nodes.
    WeightedSum(Vec<(NodeId, f64)>),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    pub fn gather(&mut self, src: NodeId, ids: &[usize]) -> NodeId {
        let s = &self.nodes[src].value;
        let mut out = Mat::zeros(ids.len(), s.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(s.row(id));
        }
        self.push(out, Op::Gather { src, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let out = Mat::from_vec(va.rows, va.cols, data);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[bias].value);
        assert_eq!(vb.rows, 1);
        assert_eq!(va.cols, vb.cols);
        let mut out = va.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&vb.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow { a, bias })
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let va = &self.nodes[a].value;
        let data = va.data.iter().map(|x| x * k).collect();
        let out = Mat::from_vec(va.rows, va.cols, data);
        self.push(out, Op::Scale(a, k))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        let mut out = Mat::zeros(va.rows, vb.cols);
        Mat::matmul_acc(va, vb, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// a . b^T  (used for logits against embedding rows)
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        let mut out = Mat::zeros(va.rows, vb.rows);
        Mat::matmul_nt_acc(va, vb, &mut out);
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.rows;
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            assert_eq!(v.rows, rows);
            for r in 0..rows {
                out.data[r * cols + offset..r * cols + offset + v.cols]
                    .copy_from_slice(v.row(r));
            }
            offset += v.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let v = &self.nodes[src].value;
        assert!(start + len <= v.cols);
        let mut out = Mat::zeros(v.rows, len);
        for r in 0..v.rows {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { src, start })
    }

    /// Row-wise softmax; `mask` (same shape) is added to the logits first,
    /// with large negative entries excluding positions.
    pub fn row_softmax(&mut self, src: NodeId, mask: Option<Mat>) -> NodeId {
        let v = &self.nodes[src].value;
        if let Some(m) = &mask {
            assert_eq!((m.rows, m.cols), (v.rows, v.cols));
        }
        let mut out = Mat::zeros(v.rows, v.cols);
        for r in 0..v.rows {
            let row = v.row(r);
            let masked: Vec<f64> = match &mask {
                Some(m) => row.iter().zip(m.row(r)).map(|(x, y)| x + y).collect(),
                None => row.to_vec(),
            };
            softmax_into(&masked, out.row_mut(r));
        }
        self.push(out, Op::RowSoftmax { src })
    }

    pub fn row_log_softmax(&mut self, src: NodeId) -> NodeId {
        let v = &self.nodes[src].value;
        let mut out = Mat::zeros(v.rows, v.cols);
        for r in 0..v.rows {
            let row = v.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for (o, &x) in out.row_mut(r).iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        self.push(out, Op::RowLogSoftmax { src })
    }

    /// Per-row layer normalization with learned 1xC gain and bias.
    pub fn layer_norm(&mut self, src: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let (v, g, b) =
            (&self.nodes[src].value, &self.nodes[gamma].value, &self.nodes[beta].value);
        assert_eq!(g.rows, 1);
        assert_eq!(b.rows, 1);
        assert_eq!(g.cols, v.cols);
        assert_eq!(b.cols, v.cols);
        let mut out = Mat::zeros(v.rows, v.cols);
        for r in 0..v.rows {
            let row = v.row(r);
            let (mean, inv_std) = row_moments(row);
            for (c, (o, &x)) in out.row_mut(r).iter_mut().zip(row).enumerate() {
                *o = g.data[c] * ((x - mean) * inv_std) + b.data[c];
            }
        }
        self.push(out, Op::LayerNorm { src, gamma, beta })
    }

    pub fn gelu(&mut self, src: NodeId) -> NodeId {
        let v = &self.nodes[src].value;
        let data = v.data.iter().map(|&x| gelu(x)).collect();
        let out = Mat::from_vec(v.rows, v.cols, data);
        self.push(out, Op::Gelu(src))
    }

    /// Mean negative log-likelihood of the picked entries of a
    /// log-probability matrix; returns a 1x1 node.
    pub fn pick_nll_mean(&mut self, logp: NodeId, picks: &[(usize, usize)]) -> NodeId {
        assert!(!picks.is_empty(), "nll needs at least one scored position");
        let v = &self.nodes[logp].value;
        let sum: f64 = picks.iter().map(|&(r, c)| v.get(r, c)).sum();
        let out = Mat::scalar(-sum / picks.len() as f64);
        self.push(out, Op::PickNllMean { logp, picks: picks.to_vec() })
    }

    /// Elementwise weighted sum of same-shape nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        assert!(!terms.is_empty());
        let shape = {
            let v = &self.nodes[terms[0].0].value;
            (v.rows, v.cols)
        };
        let mut out = Mat::zeros(shape.0, shape.1);
        for &(id, w) in terms {
            let v = &self.nodes[id].value;
            assert_eq!((v.rows, v.cols), shape);
            for (o, &x) in out.data.iter_mut().zip(&v.data) {
                *o += w * x;
            }
        }
        self.push(out, Op::WeightedSum(terms.to_vec()))
    }

    /// Backpropagate from a 1x1 loss node; returns one gradient slot per
    /// node (None where no gradient flowed).
    pub fn backward(&mut self, loss: NodeId) -> Vec<Option<Mat>> {
        assert_eq!(
            (self.nodes[loss].value.rows, self.nodes[loss].value.cols),
            (1, 1),
            "backward needs a scalar loss"
        );
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Mat::scalar(1.0));

        for id in (0..=loss).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            grads[id] = Some(grad);
            let grad = grads[id].as_ref().unwrap().clone();
            match self.nodes[id].op.clone() {
                Op::Leaf => {}
                Op::Gather { src, ids } => {
                    let g = self.grad_slot(&mut grads, src);
                    for (r, &row_id) in ids.iter().enumerate() {
                        for (gv, &dv) in g.row_mut(row_id).iter_mut().zip(grad.row(r)) {
                            *gv += dv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, &grad);
                    self.accumulate(&mut grads, b, &grad);
                }
                Op::AddRow { a, bias } => {
                    self.accumulate(&mut grads, a, &grad);
                    let g = self.grad_slot(&mut grads, bias);
                    for r in 0..grad.rows {
                        for (gv, &dv) in g.data.iter_mut().zip(grad.row(r)) {
                            *gv += dv;
                        }
                    }
                }
                Op::Scale(a, k) => {
                    let scaled =
                        Mat::from_vec(grad.rows, grad.cols, grad.data.iter().map(|x| x * k).collect());
                    self.accumulate(&mut grads, a, &scaled);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.nodes[a].value.clone(), self.nodes[b].value.clone());
                    {
                        let g = self.grad_slot(&mut grads, a);
                        Mat::matmul_nt_acc(&grad, &vb, g);
                    }
                    {
                        let g = self.grad_slot(&mut grads, b);
                        Mat::matmul_tn_acc(&va, &grad, g);
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (va, vb) = (self.nodes[a].value.clone(), self.nodes[b].value.clone());
                    {
                        let g = self.grad_slot(&mut grads, a);
                        Mat::matmul_acc(&grad, &vb, g);
                    }
                    {
                        let g = self.grad_slot(&mut grads, b);
                        Mat::matmul_tn_acc(&grad, &va, g);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for part in parts {
                        let cols = self.nodes[part].value.cols;
                        let mut slice = Mat::zeros(grad.rows, cols);
                        for r in 0..grad.rows {
                            slice
                                .row_mut(r)
                                .copy_from_slice(&grad.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(&mut grads, part, &slice);
                        offset += cols;
                    }
                }
                Op::SliceCols { src, start } => {
                    let g = self.grad_slot(&mut grads, src);
                    for r in 0..grad.rows {
                        let row = grad.row(r);
                        let target = &mut g.row_mut(r)[start..start + row.len()];
                        for (t, &d) in target.iter_mut().zip(row) {
                            *t += d;
                        }
                    }
                }
                Op::RowSoftmax { src } => {
                    // dx = (dy - sum(dy*y)) * y per row
                    let y = self.nodes[id].value.clone();
                    let mut dx = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let dot: f64 =
                            grad.row(r).iter().zip(y.row(r)).map(|(d, v)| d * v).sum();
                        for ((o, &d), &v) in
                            dx.row_mut(r).iter_mut().zip(grad.row(r)).zip(y.row(r))
                        {
                            *o = (d - dot) * v;
                        }
                    }
                    self.accumulate(&mut grads, src, &dx);
                }
                Op::RowLogSoftmax { src } => {
                    // dx = dy - softmax(x) * rowsum(dy); softmax = exp(logp)
                    let y = self.nodes[id].value.clone();
                    let mut dx = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let dsum: f64 = grad.row(r).iter().sum();
                        for ((o, &d), &lp) in
                            dx.row_mut(r).iter_mut().zip(grad.row(r)).zip(y.row(r))
                        {
                            *o = d - lp.exp() * dsum;
                        }
                    }
                    self.accumulate(&mut grads, src, &dx);
                }
                Op::LayerNorm { src, gamma, beta } => {
                    let x = self.nodes[src].value.clone();
                    let g = self.nodes[gamma].value.clone();
                    let n = x.cols as f64;
                    let mut dx = Mat::zeros(x.rows, x.cols);
                    let mut dgamma = Mat::zeros(1, x.cols);
                    let mut dbeta = Mat::zeros(1, x.cols);
                    for r in 0..x.rows {
                        let row = x.row(r);
                        let (mean, inv_std) = row_moments(row);
                        let xhat: Vec<f64> =
                            row.iter().map(|&v| (v - mean) * inv_std).collect();
                        let dy = grad.row(r);
                        let mut sum_gdy = 0.0;
                        let mut sum_gdy_xhat = 0.0;
                        for c in 0..x.cols {
                            let gdy = g.data[c] * dy[c];
                            sum_gdy += gdy;
                            sum_gdy_xhat += gdy * xhat[c];
                            dgamma.data[c] += dy[c] * xhat[c];
                            dbeta.data[c] += dy[c];
                        }
                        for c in 0..x.cols {
                            let gdy = g.data[c] * dy[c];
                            dx.set(
                                r,
                                c,
                                inv_std * (gdy - sum_gdy / n - xhat[c] * sum_gdy_xhat / n),
                            );
                        }
                    }
                    self.accumulate(&mut grads, src, &dx);
                    self.accumulate(&mut grads, gamma, &dgamma);
                    self.accumulate(&mut grads, beta, &dbeta);
                }
                Op::Gelu(src) => {
                    let x = self.nodes[src].value.clone();
                    let mut dx = Mat::zeros(x.rows, x.cols);
                    for (o, (&xv, &d)) in dx.data.iter_mut().zip(x.data.iter().zip(&grad.data)) {
                        *o = d * gelu_grad(xv);
                    }
                    self.accumulate(&mut grads, src, &dx);
                }
                Op::PickNllMean { logp, picks } => {
                    let upstream = grad.item();
                    let shape = {
                        let v = &self.nodes[logp].value;
                        (v.rows, v.cols)
                    };
                    let mut d = Mat::zeros(shape.0, shape.1);
                    let scale = -upstream / picks.len() as f64;
                    for (r, c) in picks {
                        d.data[r * shape.1 + c] += scale;
                    }
                    self.accumulate(&mut grads, logp, &d);
                }
                Op::WeightedSum(terms) => {
                    for (term, w) in terms {
                        let scaled = Mat::from_vec(
                            grad.rows,
                            grad.cols,
                            grad.data.iter().map(|x| x * w).collect(),
                        );
                        self.accumulate(&mut grads, term, &scaled);
                    }
                }
            }
        }
        grads
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Option<Mat>], id: NodeId) -> &'a mut Mat {
        let v = &self.nodes[id].value;
        grads[id].get_or_insert_with(|| Mat::zeros(v.rows, v.cols))
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], id: NodeId, delta: &Mat) {
        let g = self.grad_slot(grads, id);
        for (gv, &dv) in g.data.iter_mut().zip(&delta.data) {
            *gv += dv;
        }
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LN_EPS).sqrt())
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
