//! Tape-based reverse-mode differentiation over a fixed set of coarse
//! primitives (dense, temporal convolution, LSTM layer, losses).
//!
//! Layout conventions:
//! - sequences are `[batch, time, features]`, row-major;
//! - conv kernels are `[filters, in_channels, kernel]`;
//! - LSTM weights are `[4H, in]` / `[4H, H]` with gate blocks ordered
//!   input, forget, cell, output.

use super::gemm::{gemm, MatRef};
use super::tensor::{check_finite, Tensor};
use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Smallest value allowed into `log1p` by the squared-log loss.
pub const MSLE_FLOOR: f32 = -1.0 + 1e-4;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        packed: Vec<f32>,
    },
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        cache: LstmCache,
    },
    LastStep(Var),
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
    Mae(Var, Var),
    Mse(Var, Var),
    Msle(Var, Var),
    Cosine(Var, Var),
    L1(Var),
    SquaredNorm(Var),
}

#[derive(Debug)]
struct LstmCache {
    /// Activated gates `[B, T, 4H]`.
    gates: Vec<f32>,
    /// Cell states `[B, T, H]`.
    cells: Vec<f32>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Single use: build, read outputs, call `backward` once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a differentiable leaf. `None` when the loss does not
    /// depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros of `shape` when unreachable.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        expected: format!("{:?}", expected),
        found: format!("{:?}", found),
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[f32] {
        self.nodes[var.0].value.data()
    }

    fn push(&mut self, op: &'static str, value: Tensor, node_op: Op, inputs: &[Var]) -> Result<Var, NumericsError> {
        value.ensure_finite(op)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable leaf (model parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable leaf (input data, frozen targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, node: Op) -> Result<Var, NumericsError> {
        self.same_shape(op, a, b)?;
        let data: Vec<f32> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_raw(self.shape(a).to_vec(), data);
        self.push(op, value, node, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Result<Var, NumericsError> {
        let data = self.data(a).iter().map(|&x| x * factor).collect();
        let value = Tensor::from_raw(self.shape(a).to_vec(), data);
        self.push("scale", value, Op::Scale(a, factor), &[a])
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s: f64 = self.data(a).iter().map(|&v| v as f64).sum();
        self.push("sum", Tensor::from_raw(vec![1], vec![s as f32]), Op::Sum(a), &[a])
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let n = self.data(a).len().max(1) as f64;
        let s: f64 = self.data(a).iter().map(|&v| v as f64).sum();
        self.push("mean", Tensor::from_raw(vec![1], vec![(s / n) as f32]), Op::Mean(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let data = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::from_raw(self.shape(a).to_vec(), data);
        self.push("relu", value, Op::Relu(a), &[a])
    }

    /// Multiplies by a fixed mask (already scaled for inverted dropout).
    pub fn dropout(&mut self, a: Var, mask: Vec<f32>) -> Result<Var, NumericsError> {
        if mask.len() != self.data(a).len() {
            return Err(mismatch("dropout", self.data(a).len(), mask.len()));
        }
        let data = self.data(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::from_raw(self.shape(a).to_vec(), data);
        self.push("dropout", value, Op::Dropout { x: a, mask }, &[a])
    }

    /// `x [N, D] · wᵀ [D, M] + b [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(mismatch("linear", "x [N,D], w [M,D], b [M]", (xs, ws, bs)));
        }
        let (n, d, m) = (xs[0], xs[1], ws[0]);
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.data(b));
        }
        gemm(
            1.0,
            MatRef::rows(self.data(x), n, d),
            MatRef::transposed(self.data(w), m, d),
            1.0,
            &mut out,
            m,
        );
        self.push("linear", Tensor::from_raw(vec![n, m], out), Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Valid temporal convolution, stride 1. `x [B, T, C]`, `w [F, C, K]`,
    /// `b [F]` → `[B, T-K+1, F]`. Each kernel spans all input channels.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] || bs != [ws[0]] || xs[1] < ws[2] {
            return Err(mismatch("conv1d", "x [B,T,C], w [F,C,K], b [F], T >= K", (xs, ws, bs)));
        }
        let (batch, t_in, c) = (xs[0], xs[1], xs[2]);
        let (f, k) = (ws[0], ws[2]);
        let t_out = t_in - k + 1;
        let kc = k * c;
        // repack [F, C, K] -> [F, K, C] so each output row reads one
        // contiguous K*C slice of the input
        let wd = self.data(w);
        let mut packed = vec![0.0f32; f * kc];
        for fi in 0..f {
            for ci in 0..c {
                for ki in 0..k {
                    packed[fi * kc + ki * c + ci] = wd[(fi * c + ci) * k + ki];
                }
            }
        }
        let xd = self.data(x);
        let bd = self.data(b);
        let mut out = vec![0.0f32; batch * t_out * f];
        for bi in 0..batch {
            let ob = &mut out[bi * t_out * f..(bi + 1) * t_out * f];
            for row in ob.chunks_mut(f) {
                row.copy_from_slice(bd);
            }
            let xb = &xd[bi * t_in * c..(bi + 1) * t_in * c];
            let a = MatRef {
                data: xb,
                rows: t_out,
                cols: kc,
                row_stride: c,
                col_stride: 1,
            };
            gemm(1.0, a, MatRef::transposed(&packed, f, kc), 1.0, ob, f);
        }
        let value = Tensor::from_raw(vec![batch, t_out, f], out);
        self.push("conv1d", value, Op::Conv1d { x, w, b, packed }, &[x, w, b])
    }

    /// Full-sequence LSTM layer from zero initial state. `x [B, T, I]`,
    /// `w_ih [4H, I]`, `w_hh [4H, H]`, `b [4H]` → hidden states `[B, T, H]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<Var, NumericsError> {
        let (xs, wis, whs, bs) = (self.shape(x), self.shape(w_ih), self.shape(w_hh), self.shape(b));
        let ok = xs.len() == 3
            && wis.len() == 2
            && whs.len() == 2
            && wis[0] % 4 == 0
            && whs[0] == wis[0]
            && whs[1] * 4 == whs[0]
            && wis[1] == xs[2]
            && bs == [wis[0]];
        if !ok {
            return Err(mismatch("lstm", "x [B,T,I], w_ih [4H,I], w_hh [4H,H], b [4H]", (xs, wis, whs, bs)));
        }
        let (batch, t_len, input) = (xs[0], xs[1], xs[2]);
        let h = whs[1];
        let g4 = 4 * h;
        let bd = self.data(b);
        // input projections for every (b, t) at once
        let mut gates = Vec::with_capacity(batch * t_len * g4);
        for _ in 0..batch * t_len {
            gates.extend_from_slice(bd);
        }
        gemm(
            1.0,
            MatRef::rows(self.data(x), batch * t_len, input),
            MatRef::transposed(self.data(w_ih), g4, input),
            1.0,
            &mut gates,
            g4,
        );
        let mut cells = vec![0.0f32; batch * t_len * h];
        let mut hs = vec![0.0f32; batch * t_len * h];
        let whh = self.data(w_hh);
        for t in 0..t_len {
            if t > 0 {
                let prev = MatRef {
                    data: &hs[(t - 1) * h..],
                    rows: batch,
                    cols: h,
                    row_stride: t_len * h,
                    col_stride: 1,
                };
                gemm(1.0, prev, MatRef::transposed(whh, g4, h), 1.0, &mut gates[t * g4..], t_len * g4);
            }
            for bi in 0..batch {
                let row = (bi * t_len + t) * g4;
                let z = &mut gates[row..row + g4];
                let cell_row = (bi * t_len + t) * h;
                for j in 0..h {
                    let i_g = sigmoid(z[j]);
                    let f_g = sigmoid(z[h + j]);
                    let g_g = z[2 * h + j].tanh();
                    let o_g = sigmoid(z[3 * h + j]);
                    z[j] = i_g;
                    z[h + j] = f_g;
                    z[2 * h + j] = g_g;
                    z[3 * h + j] = o_g;
                    let c_prev = if t > 0 { cells[cell_row - h + j] } else { 0.0 };
                    let c_new = f_g * c_prev + i_g * g_g;
                    cells[cell_row + j] = c_new;
                    hs[cell_row + j] = o_g * c_new.tanh();
                }
            }
        }
        check_finite("lstm", &cells)?;
        let value = Tensor::from_raw(vec![batch, t_len, h], hs);
        self.push(
            "lstm",
            value,
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                cache: LstmCache { gates, cells },
            },
            &[x, w_ih, w_hh, b],
        )
    }

    /// `[B, T, H]` → `[B, H]` at the final timestep.
    pub fn last_step(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xs = self.shape(x);
        if xs.len() != 3 || xs[1] == 0 {
            return Err(mismatch("last_step", "[B, T>0, H]", xs));
        }
        let (batch, t_len, h) = (xs[0], xs[1], xs[2]);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(batch * h);
        for bi in 0..batch {
            let start = (bi * t_len + t_len - 1) * h;
            out.extend_from_slice(&xd[start..start + h]);
        }
        self.push("last_step", Tensor::from_raw(vec![batch, h], out), Op::LastStep(x), &[x])
    }

    /// Row-wise softmax over `[N, M]`.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(mismatch("softmax", "[N, M]", xs));
        }
        let m = xs[1];
        let out = softmax_rows(self.data(x), m);
        let value = Tensor::from_raw(xs.to_vec(), out);
        self.push("softmax", value, Op::Softmax(x), &[x])
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NumericsError> {
        let ls = self.shape(logits);
        if ls.len() != 2 || ls[0] != labels.len() || ls[0] == 0 {
            return Err(mismatch("softmax_cross_entropy", ("[N, M]", labels.len()), ls));
        }
        let m = ls[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(NumericsError::InvalidArgument(format!("label {} out of range for {} classes", bad, m)));
        }
        let probs = softmax_rows(self.data(logits), m);
        let mut total = 0.0f64;
        for (row, &l) in self.data(logits).chunks(m).zip(labels) {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            total += lse - row[l] as f64;
        }
        let loss = (total / labels.len() as f64) as f32;
        self.push(
            "softmax_cross_entropy",
            Tensor::from_raw(vec![1], vec![loss]),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Mean absolute error over all elements.
    pub fn mae(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mae", a, b)?;
        let n = self.data(a).len().max(1) as f64;
        let s: f64 = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
        self.push("mae", Tensor::from_raw(vec![1], vec![(s / n) as f32]), Op::Mae(a, b), &[a, b])
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mse", a, b)?;
        let n = self.data(a).len().max(1) as f64;
        let s: f64 = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum();
        self.push("mse", Tensor::from_raw(vec![1], vec![(s / n) as f32]), Op::Mse(a, b), &[a, b])
    }

    /// Mean squared logarithmic error; inputs clamped to [`MSLE_FLOOR`]
    /// before `log1p`.
    pub fn msle(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("msle", a, b)?;
        let n = self.data(a).len().max(1) as f64;
        let s: f64 = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| {
                let d = log1p_clamped(x) - log1p_clamped(y);
                d * d
            })
            .sum();
        self.push("msle", Tensor::from_raw(vec![1], vec![(s / n) as f32]), Op::Msle(a, b), &[a, b])
    }

    /// Mean over rows of `1 - cos(a_i, b_i)` for `[N, D]` inputs. A pair
    /// containing a zero vector contributes 1 and no gradient.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("cosine", a, b)?;
        let s = self.shape(a);
        if s.len() != 2 || s[0] == 0 {
            return Err(mismatch("cosine", "[N>0, D]", s));
        }
        let d = s[1];
        let n = s[0];
        let mut total = 0.0f64;
        for (ra, rb) in self.data(a).chunks(d).zip(self.data(b).chunks(d)) {
            total += 1.0 - cosine_row(ra, rb).map(|(c, _, _)| c).unwrap_or(0.0);
        }
        self.push(
            "cosine",
            Tensor::from_raw(vec![1], vec![(total / n as f64) as f32]),
            Op::Cosine(a, b),
            &[a, b],
        )
    }

    /// Sum of absolute values.
    pub fn l1(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s: f64 = self.data(a).iter().map(|&v| (v as f64).abs()).sum();
        self.push("l1", Tensor::from_raw(vec![1], vec![s as f32]), Op::L1(a), &[a])
    }

    /// Sum of squares.
    pub fn squared_norm(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).sum_squares();
        self.push("squared_norm", Tensor::from_raw(vec![1], vec![s as f32]), Op::SquaredNorm(a), &[a])
    }

    /// Reverse pass from a scalar node. Returns gradients for every node
    /// that depends on a parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(mismatch("backward", "scalar loss", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            check_finite("backward", &upstream)?;
            self.backward_node(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.requires_grad => Some(Tensor::from_raw(node.value.shape().to_vec(), g)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node, up: &[f32], grads: &mut [Option<Vec<f32>>]) {
        macro_rules! slot {
            ($v:expr) => {
                slot(grads, $v, self.data($v).len())
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        let g = slot!(v);
                        g.iter_mut().zip(up).for_each(|(g, u)| *g += u);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    let g = slot!(*a);
                    g.iter_mut().zip(up).for_each(|(g, u)| *g += u);
                }
                if self.wants(*b) {
                    let g = slot!(*b);
                    g.iter_mut().zip(up).for_each(|(g, u)| *g -= u);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let other = self.data(*b);
                    let g = slot!(*a);
                    for ((g, u), o) in g.iter_mut().zip(up).zip(other) {
                        *g += u * o;
                    }
                }
                if self.wants(*b) {
                    let other = self.data(*a);
                    let g = slot!(*b);
                    for ((g, u), o) in g.iter_mut().zip(up).zip(other) {
                        *g += u * o;
                    }
                }
            }
            Op::Scale(a, factor) => {
                let g = slot!(*a);
                g.iter_mut().zip(up).for_each(|(g, u)| *g += u * factor);
            }
            Op::Sum(a) => {
                let g = slot!(*a);
                g.iter_mut().for_each(|g| *g += up[0]);
            }
            Op::Mean(a) => {
                let n = self.data(*a).len().max(1) as f32;
                let g = slot!(*a);
                g.iter_mut().for_each(|g| *g += up[0] / n);
            }
            Op::Relu(a) => {
                let x = self.data(*a);
                let g = slot!(*a);
                for ((g, u), &x) in g.iter_mut().zip(up).zip(x) {
                    if x > 0.0 {
                        *g += u;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let g = slot!(*x);
                for ((g, u), m) in g.iter_mut().zip(up).zip(mask) {
                    *g += u * m;
                }
            }
            Op::Linear { x, w, b } => {
                let (n, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let m = self.shape(*w)[0];
                if self.wants(*x) {
                    let wd = self.data(*w);
                    let g = slot!(*x);
                    gemm(1.0, MatRef::rows(up, n, m), MatRef::rows(wd, m, d), 1.0, g, d);
                }
                if self.wants(*w) {
                    let xd = self.data(*x);
                    let g = slot!(*w);
                    gemm(1.0, MatRef::transposed(up, n, m), MatRef::rows(xd, n, d), 1.0, g, d);
                }
                if self.wants(*b) {
                    let g = slot!(*b);
                    for row in up.chunks(m) {
                        g.iter_mut().zip(row).for_each(|(g, u)| *g += u);
                    }
                }
            }
            Op::Conv1d { x, w, b, packed } => self.conv1d_backward(*x, *w, *b, packed, up, grads),
            Op::Lstm { x, w_ih, w_hh, b, cache } => {
                self.lstm_backward(*x, *w_ih, *w_hh, *b, cache, node.value.data(), up, grads)
            }
            Op::LastStep(x) => {
                let xs = self.shape(*x);
                let (t_len, h) = (xs[1], xs[2]);
                let g = slot!(*x);
                for (bi, row) in up.chunks(h).enumerate() {
                    let start = (bi * t_len + t_len - 1) * h;
                    g[start..start + h].iter_mut().zip(row).for_each(|(g, u)| *g += u);
                }
            }
            Op::Softmax(x) => {
                let m = self.shape(*x)[1];
                let y = node.value.data();
                let g = slot!(*x);
                for ((grow, urow), yrow) in g.chunks_mut(m).zip(up.chunks(m)).zip(y.chunks(m)) {
                    let dot: f64 = urow.iter().zip(yrow).map(|(&u, &y)| u as f64 * y as f64).sum();
                    for ((g, &u), &y) in grow.iter_mut().zip(urow).zip(yrow) {
                        *g += y * (u - dot as f32);
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let m = self.shape(*logits)[1];
                let scale = up[0] / labels.len() as f32;
                let g = slot!(*logits);
                for ((grow, prow), &l) in g.chunks_mut(m).zip(probs.chunks(m)).zip(labels) {
                    for (j, (g, &p)) in grow.iter_mut().zip(prow).enumerate() {
                        let target = if j == l { 1.0 } else { 0.0 };
                        *g += scale * (p - target);
                    }
                }
            }
            Op::Mae(a, b) => {
                let n = self.data(*a).len().max(1) as f32;
                let sign: Vec<f32> = self
                    .data(*a)
                    .iter()
                    .zip(self.data(*b))
                    .map(|(&x, &y)| {
                        if x > y {
                            1.0
                        } else if x < y {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.pair_grad(*a, *b, &sign, up[0] / n, grads);
            }
            Op::Mse(a, b) => {
                let n = self.data(*a).len().max(1) as f32;
                let diff: Vec<f32> = self.data(*a).iter().zip(self.data(*b)).map(|(&x, &y)| x - y).collect();
                self.pair_grad(*a, *b, &diff, 2.0 * up[0] / n, grads);
            }
            Op::Msle(a, b) => {
                let n = self.data(*a).len().max(1) as f32;
                let scale = 2.0 * up[0] / n;
                let (ad, bd) = (self.data(*a), self.data(*b));
                let diffs: Vec<f32> = ad
                    .iter()
                    .zip(bd)
                    .map(|(&x, &y)| (log1p_clamped(x) - log1p_clamped(y)) as f32)
                    .collect();
                if self.wants(*a) {
                    let g = slot!(*a);
                    for ((g, &d), &x) in g.iter_mut().zip(&diffs).zip(ad) {
                        if x > MSLE_FLOOR {
                            *g += scale * d / (1.0 + x);
                        }
                    }
                }
                if self.wants(*b) {
                    let g = slot!(*b);
                    for ((g, &d), &y) in g.iter_mut().zip(&diffs).zip(bd) {
                        if y > MSLE_FLOOR {
                            *g -= scale * d / (1.0 + y);
                        }
                    }
                }
            }
            Op::Cosine(a, b) => {
                let s = self.shape(*a);
                let (n, d) = (s[0], s[1]);
                let scale = -up[0] / n as f32;
                let (ad, bd) = (self.data(*a), self.data(*b));
                let mut ga = vec![0.0f32; ad.len()];
                let mut gb = vec![0.0f32; bd.len()];
                for i in 0..n {
                    let ra = &ad[i * d..(i + 1) * d];
                    let rb = &bd[i * d..(i + 1) * d];
                    let Some((c, na, nb)) = cosine_row(ra, rb) else {
                        continue;
                    };
                    for j in 0..d {
                        let (x, y) = (ra[j] as f64, rb[j] as f64);
                        ga[i * d + j] = (scale as f64 * (y / (na * nb) - c * x / (na * na))) as f32;
                        gb[i * d + j] = (scale as f64 * (x / (na * nb) - c * y / (nb * nb))) as f32;
                    }
                }
                if self.wants(*a) {
                    let g = slot!(*a);
                    g.iter_mut().zip(&ga).for_each(|(g, v)| *g += v);
                }
                if self.wants(*b) {
                    let g = slot!(*b);
                    g.iter_mut().zip(&gb).for_each(|(g, v)| *g += v);
                }
            }
            Op::L1(a) => {
                let x = self.data(*a);
                let g = slot!(*a);
                for (g, &x) in g.iter_mut().zip(x) {
                    if x > 0.0 {
                        *g += up[0];
                    } else if x < 0.0 {
                        *g -= up[0];
                    }
                }
            }
            Op::SquaredNorm(a) => {
                let x = self.data(*a);
                let g = slot!(*a);
                for (g, &x) in g.iter_mut().zip(x) {
                    *g += 2.0 * up[0] * x;
                }
            }
        }
    }

    /// Accumulates `+scale·d` into `a` and `−scale·d` into `b`.
    fn pair_grad(&self, a: Var, b: Var, d: &[f32], scale: f32, grads: &mut [Option<Vec<f32>>]) {
        if self.wants(a) {
            let g = grads[a.0].get_or_insert_with(|| vec![0.0; d.len()]);
            g.iter_mut().zip(d).for_each(|(g, d)| *g += scale * d);
        }
        if self.wants(b) {
            let g = grads[b.0].get_or_insert_with(|| vec![0.0; d.len()]);
            g.iter_mut().zip(d).for_each(|(g, d)| *g -= scale * d);
        }
    }

    fn conv1d_backward(&self, x: Var, w: Var, b: Var, packed: &[f32], up: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let (batch, t_in, c) = (xs[0], xs[1], xs[2]);
        let (f, k) = (ws[0], ws[2]);
        let t_out = t_in - k + 1;
        let kc = k * c;
        if self.wants(b) {
            let g = grads[b.0].get_or_insert_with(|| vec![0.0; f]);
            for row in up.chunks(f) {
                g.iter_mut().zip(row).for_each(|(g, u)| *g += u);
            }
        }
        let xd = self.data(x);
        if self.wants(w) {
            let mut gp = vec![0.0f32; f * kc];
            for bi in 0..batch {
                let ub = &up[bi * t_out * f..(bi + 1) * t_out * f];
                let a = MatRef {
                    data: &xd[bi * t_in * c..(bi + 1) * t_in * c],
                    rows: t_out,
                    cols: kc,
                    row_stride: c,
                    col_stride: 1,
                };
                gemm(1.0, MatRef::transposed(ub, t_out, f), a, 1.0, &mut gp, kc);
            }
            let g = grads[w.0].get_or_insert_with(|| vec![0.0; f * kc]);
            for fi in 0..f {
                for ci in 0..c {
                    for ki in 0..k {
                        g[(fi * c + ci) * k + ki] += gp[fi * kc + ki * c + ci];
                    }
                }
            }
        }
        if self.wants(x) {
            let mut cols = vec![0.0f32; t_out * kc];
            let g = grads[x.0].get_or_insert_with(|| vec![0.0; batch * t_in * c]);
            for bi in 0..batch {
                let ub = &up[bi * t_out * f..(bi + 1) * t_out * f];
                gemm(1.0, MatRef::rows(ub, t_out, f), MatRef::rows(packed, f, kc), 0.0, &mut cols, kc);
                let gb = &mut g[bi * t_in * c..(bi + 1) * t_in * c];
                for t in 0..t_out {
                    let dst = &mut gb[t * c..t * c + kc];
                    dst.iter_mut().zip(&cols[t * kc..(t + 1) * kc]).for_each(|(d, s)| *d += s);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_backward(
        &self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        cache: &LstmCache,
        hs: &[f32],
        up: &[f32],
        grads: &mut [Option<Vec<f32>>],
    ) {
        let xs = self.shape(x);
        let (batch, t_len, input) = (xs[0], xs[1], xs[2]);
        let h = self.shape(w_hh)[1];
        let g4 = 4 * h;
        let whh = self.data(w_hh);
        let mut dz = vec![0.0f32; batch * t_len * g4];
        let mut dh_next = vec![0.0f32; batch * h];
        let mut dc_next = vec![0.0f32; batch * h];
        for t in (0..t_len).rev() {
            for bi in 0..batch {
                let row = (bi * t_len + t) * g4;
                let cell_row = (bi * t_len + t) * h;
                let gates = &cache.gates[row..row + g4];
                let dzr = &mut dz[row..row + g4];
                for j in 0..h {
                    let (i_g, f_g, g_g, o_g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                    let c = cache.cells[cell_row + j];
                    let c_prev = if t > 0 { cache.cells[cell_row - h + j] } else { 0.0 };
                    let tc = c.tanh();
                    let dh = up[cell_row + j] + dh_next[bi * h + j];
                    let d_o = dh * tc;
                    let dc = dh * o_g * (1.0 - tc * tc) + dc_next[bi * h + j];
                    dc_next[bi * h + j] = dc * f_g;
                    dzr[j] = dc * g_g * i_g * (1.0 - i_g);
                    dzr[h + j] = dc * c_prev * f_g * (1.0 - f_g);
                    dzr[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                    dzr[3 * h + j] = d_o * o_g * (1.0 - o_g);
                }
            }
            let dzt = MatRef {
                data: &dz[t * g4..],
                rows: batch,
                cols: g4,
                row_stride: t_len * g4,
                col_stride: 1,
            };
            gemm(1.0, dzt, MatRef::rows(whh, g4, h), 0.0, &mut dh_next, h);
        }
        if self.wants(b) {
            let g = grads[b.0].get_or_insert_with(|| vec![0.0; g4]);
            for row in dz.chunks(g4) {
                g.iter_mut().zip(row).for_each(|(g, u)| *g += u);
            }
        }
        if self.wants(w_hh) && t_len > 1 {
            let g = grads[w_hh.0].get_or_insert_with(|| vec![0.0; g4 * h]);
            for bi in 0..batch {
                let dzb = &dz[(bi * t_len + 1) * g4..(bi + 1) * t_len * g4];
                let hb = &hs[bi * t_len * h..((bi + 1) * t_len - 1) * h];
                gemm(
                    1.0,
                    MatRef::transposed(dzb, t_len - 1, g4),
                    MatRef::rows(hb, t_len - 1, h),
                    1.0,
                    g,
                    h,
                );
            }
        }
        let xd = self.data(x);
        if self.wants(w_ih) {
            let g = grads[w_ih.0].get_or_insert_with(|| vec![0.0; g4 * input]);
            gemm(
                1.0,
                MatRef::transposed(&dz, batch * t_len, g4),
                MatRef::rows(xd, batch * t_len, input),
                1.0,
                g,
                input,
            );
        }
        if self.wants(x) {
            let wih = self.data(w_ih);
            let g = grads[x.0].get_or_insert_with(|| vec![0.0; batch * t_len * input]);
            gemm(
                1.0,
                MatRef::rows(&dz, batch * t_len, g4),
                MatRef::rows(wih, g4, input),
                1.0,
                g,
                input,
            );
        }
    }
}

fn slot(grads: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut Vec<f32> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn softmax_rows(x: &[f32], m: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(m) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / total) as f32));
    }
    out
}

fn log1p_clamped(x: f32) -> f64 {
    (x.max(MSLE_FLOOR) as f64).ln_1p()
}

/// `(cos, |a|, |b|)`, or `None` when either row is the zero vector.
fn cosine_row(a: &[f32], b: &[f32]) -> Option<(f64, f64, f64)> {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // sqrt of the product keeps cos(a, a) at exactly 1
    Some((dot / (na * nb).sqrt(), na.sqrt(), nb.sqrt()))
}
