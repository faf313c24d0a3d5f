//! Wengert tape: every op appends a node holding its value and the inputs
//! needed by its backward rule. `backward` replays the tape in reverse.
//!
//! A tape is single-threaded and single-use; parallel training builds one
//! tape per sample.

use super::kernels::{col2im3, gemm, gemm_nt, gemm_tn, im2col3, transpose};
use super::{matrix_dims, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probabilities below this floor are clamped inside the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        target: usize,
    },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<T>,
    },
    AvgPool2(Var),
    Upsample2(Var),
    Mse(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: g.clone(),
        })
    }

    /// Gradient, or zeros when nothing flowed into `v`.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(&self.nodes[v.0].value.shape))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (&self.value(a).shape, &self.value(b).shape);
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let x = self.value(a);
        let out = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| f(v)).collect(),
        };
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    fn zip(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, |v| v * c, Op::Scale(a, c))
    }

    /// Adds a row vector (any shape with `cols` elements) to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let (_, n) = matrix_dims("add_row", x)?;
        if b.len() != n {
            return Err(Error::shape(
                "add_row",
                format!("bias of {} values for {n} columns", b.len()),
            ));
        }
        let mut data = x.data.clone();
        for row in data.chunks_exact_mut(n.max(1)) {
            for (v, &bj) in row.iter_mut().zip(&b.data) {
                *v += bj;
            }
        }
        let out = Tensor {
            shape: x.shape.clone(),
            data,
        };
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    /// Multiplies row `i` of `a` by `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, sv) = (self.value(a), self.value(s));
        let (m, n) = matrix_dims("scale_rows", x)?;
        if sv.len() != m {
            return Err(Error::shape(
                "scale_rows",
                format!("{} scales for {m} rows", sv.len()),
            ));
        }
        let mut data = x.data.clone();
        for (row, &si) in data.chunks_exact_mut(n.max(1)).zip(&sv.data) {
            for v in row {
                *v *= si;
            }
        }
        let out = Tensor {
            shape: x.shape.clone(),
            data,
        };
        let rg = self.rg(&[a, s]);
        Ok(self.push(out, Op::ScaleRows(a, s), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, T::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(T::zero()), Op::Relu(a))
    }

    /// Softmax over all elements, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::InvalidArgument("softmax of an empty tensor".into()));
        }
        let out = Tensor {
            shape: x.shape.clone(),
            data: softmax_slice(&x.data),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// `-ln(max(probs[target], 1e-12))` as a one-element tensor.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var> {
        let p = self.value(probs);
        if target >= p.len() {
            return Err(Error::InvalidArgument(format!(
                "target class {target} out of range for {} classes",
                p.len()
            )));
        }
        let pt = p.data[target].max(T::lit(PROB_FLOOR));
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Tensor::scalar(-pt.ln()),
            Op::CrossEntropy { probs, target },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s: T = x.data.iter().copied().sum();
        let m = s / T::lit(x.len().max(1) as f64);
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Column-wise mean of a matrix, returned as `[1, cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = matrix_dims("mean_rows", x)?;
        if m == 0 {
            return Err(Error::InvalidArgument("mean over zero rows".into()));
        }
        let mut acc = vec![T::zero(); n];
        for row in x.data.chunks_exact(n.max(1)) {
            for (s, &v) in acc.iter_mut().zip(row) {
                *s += v;
            }
        }
        let inv = T::one() / T::lit(m as f64);
        acc.iter_mut().for_each(|s| *s *= inv);
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor {
                shape: vec![1, n],
                data: acc,
            },
            Op::MeanRows(a),
            rg,
        ))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let out = self.value(a).select_rows(idx)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// 3×3 convolution, stride 1, zero padding 1.
    /// `x: [C,H,W]`, `w: [O, C·9]`, `b: [O]` → `[O,H,W]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let [c, h, wd] = match xv.shape.as_slice() {
            &[c, h, w] => [c, h, w],
            s => {
                return Err(Error::shape(
                    "conv3x3",
                    format!("input {s:?} is not [C,H,W]"),
                ))
            }
        };
        let (o, k) = matrix_dims("conv3x3", wv)?;
        if k != c * 9 || bv.len() != o {
            return Err(Error::shape(
                "conv3x3",
                format!(
                    "weights {:?} / bias {} for {c} channels",
                    wv.shape,
                    bv.len()
                ),
            ));
        }
        let hw = h * wd;
        let cols = im2col3(&xv.data, c, h, wd);
        let mut out = vec![T::zero(); o * hw];
        gemm(&wv.data, &cols, &mut out, o, k, hw);
        for (plane, &bias) in out.chunks_exact_mut(hw).zip(&bv.data) {
            plane.iter_mut().for_each(|v| *v += bias);
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor {
                shape: vec![o, h, wd],
                data: out,
            },
            Op::Conv3x3 { x, w, b, cols },
            rg,
        ))
    }

    /// 2×2 average pooling of a `[C,H,W]` tensor with even H and W.
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let [c, h, w] = chw("avg_pool2", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "avg_pool2",
                format!("odd spatial size {h}x{w}"),
            ));
        }
        let (h2, w2) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            let src = &x.data[ch * h * w..];
            for y in 0..h2 {
                for xx in 0..w2 {
                    let s = src[2 * y * w + 2 * xx]
                        + src[2 * y * w + 2 * xx + 1]
                        + src[(2 * y + 1) * w + 2 * xx]
                        + src[(2 * y + 1) * w + 2 * xx + 1];
                    out[ch * h2 * w2 + y * w2 + xx] = s * quarter;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor {
                shape: vec![c, h2, w2],
                data: out,
            },
            Op::AvgPool2(a),
            rg,
        ))
    }

    /// Nearest-neighbour 2× upsampling of a `[C,H,W]` tensor.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let [c, h, w] = chw("upsample2", x)?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[ch * h2 * w2 + y * w2 + xx] = x.data[ch * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor {
                shape: vec![c, h2, w2],
                data: out,
            },
            Op::Upsample2(a),
            rg,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", a, target)?;
        let (x, t) = (self.value(a), self.value(target));
        let s: T = x
            .data
            .iter()
            .zip(&t.data)
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum();
        let m = s / T::lit(x.len().max(1) as f64);
        let rg = self.rg(&[a, target]);
        Ok(self.push(Tensor::scalar(m), Op::Mse(a, target), rg))
    }

    // ── reverse pass ─────────────────────────────────────────────────

    /// Back-propagates from a one-element output. Gradients of earlier
    /// `backward` calls are discarded.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let ov = self.value(out);
        if ov.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", ov.shape),
            ));
        }
        if !ov.is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", ov.data[0])));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(vec![T::one()]);

        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &[T]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(&nodes[a.0].value);
                let n = nodes[b.0].value.shape[1];
                if nodes[a.0].requires_grad {
                    let bv = &nodes[b.0].value.data;
                    acc(nodes, grads, *a, |ga| gemm_nt(g, bv, ga, m, n, k));
                }
                if nodes[b.0].requires_grad {
                    let av = &nodes[a.0].value.data;
                    acc(nodes, grads, *b, |gb| gemm_tn(av, g, gb, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = dims2(&nodes[a.0].value);
                // output is [n, m]
                let gt = transpose(g, n, m);
                acc(nodes, grads, *a, |ga| add_into(ga, &gt));
            }
            Op::Add(a, b) => {
                acc(nodes, grads, *a, |ga| add_into(ga, g));
                acc(nodes, grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(nodes, grads, *a, |ga| add_into(ga, g));
                acc(nodes, grads, *b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(d, &s)| *d -= s)
                });
            }
            Op::Mul(a, b) => {
                let av = &nodes[a.0].value.data;
                let bv = &nodes[b.0].value.data;
                acc(nodes, grads, *a, |ga| {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += s * y;
                    }
                });
                acc(nodes, grads, *b, |gb| {
                    for ((d, &s), &x) in gb.iter_mut().zip(g).zip(av) {
                        *d += s * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(nodes, grads, *a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s * c)
                });
            }
            Op::AddRow(a, bias) => {
                acc(nodes, grads, *a, |ga| add_into(ga, g));
                let n = nodes[bias.0].value.len();
                acc(nodes, grads, *bias, |gb| {
                    for row in g.chunks_exact(n.max(1)) {
                        add_into(gb, row);
                    }
                });
            }
            Op::ScaleRows(a, s) => {
                let n = nodes[a.0].value.cols();
                let sv = &nodes[s.0].value.data;
                let av = &nodes[a.0].value.data;
                acc(nodes, grads, *a, |ga| {
                    for ((grow, gin), &si) in ga
                        .chunks_exact_mut(n.max(1))
                        .zip(g.chunks_exact(n.max(1)))
                        .zip(sv)
                    {
                        grow.iter_mut().zip(gin).for_each(|(d, &x)| *d += x * si);
                    }
                });
                acc(nodes, grads, *s, |gs| {
                    for ((d, gin), arow) in gs
                        .iter_mut()
                        .zip(g.chunks_exact(n.max(1)))
                        .zip(av.chunks_exact(n.max(1)))
                    {
                        *d += gin.iter().zip(arow).map(|(&x, &y)| x * y).sum::<T>();
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &nodes[idx].value.data;
                let local: Vec<T> = y
                    .iter()
                    .zip(g)
                    .map(|(&y, &s)| s * (T::one() - y * y))
                    .collect();
                acc(nodes, grads, *a, |ga| add_into(ga, &local));
            }
            Op::Sigmoid(a) => {
                let y = &nodes[idx].value.data;
                let local: Vec<T> = y
                    .iter()
                    .zip(g)
                    .map(|(&y, &s)| s * y * (T::one() - y))
                    .collect();
                acc(nodes, grads, *a, |ga| add_into(ga, &local));
            }
            Op::Relu(a) => {
                let y = &nodes[idx].value.data;
                let local: Vec<T> = y
                    .iter()
                    .zip(g)
                    .map(|(&y, &s)| if y > T::zero() { s } else { T::zero() })
                    .collect();
                acc(nodes, grads, *a, |ga| add_into(ga, &local));
            }
            Op::Softmax(a) => {
                let y = &nodes[idx].value.data;
                let dot: T = y.iter().zip(g).map(|(&y, &s)| y * s).sum();
                let local: Vec<T> = y.iter().zip(g).map(|(&y, &s)| y * (s - dot)).collect();
                acc(nodes, grads, *a, |ga| add_into(ga, &local));
            }
            Op::CrossEntropy { probs, target } => {
                let p = nodes[probs.0].value.data[*target];
                let t = *target;
                if p >= T::lit(PROB_FLOOR) {
                    let d = -g[0] / p;
                    acc(nodes, grads, *probs, |gp| gp[t] += d);
                }
            }
            Op::Sum(a) => {
                let s = g[0];
                acc(nodes, grads, *a, |ga| ga.iter_mut().for_each(|d| *d += s));
            }
            Op::Mean(a) => {
                let n = nodes[a.0].value.len().max(1);
                let s = g[0] / T::lit(n as f64);
                acc(nodes, grads, *a, |ga| ga.iter_mut().for_each(|d| *d += s));
            }
            Op::MeanRows(a) => {
                let (m, n) = dims2(&nodes[a.0].value);
                let inv = T::one() / T::lit(m as f64);
                acc(nodes, grads, *a, |ga| {
                    for row in ga.chunks_exact_mut(n.max(1)) {
                        row.iter_mut().zip(g).for_each(|(d, &s)| *d += s * inv);
                    }
                });
            }
            Op::GatherRows(a, rows) => {
                let n = nodes[a.0].value.cols();
                acc(nodes, grads, *a, |ga| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut ga[r * n..(r + 1) * n], &g[k * n..(k + 1) * n]);
                    }
                });
            }
            Op::Reshape(a) => acc(nodes, grads, *a, |ga| add_into(ga, g)),
            Op::Conv3x3 { x, w, b, cols } => {
                let [c, h, wd] = chw_unchecked(&nodes[x.0].value);
                let hw = h * wd;
                let (o, k) = dims2(&nodes[w.0].value);
                acc(nodes, grads, *w, |gw| gemm_nt(g, cols, gw, o, hw, k));
                acc(nodes, grads, *b, |gb| {
                    for (d, plane) in gb.iter_mut().zip(g.chunks_exact(hw)) {
                        *d += plane.iter().copied().sum::<T>();
                    }
                });
                if nodes[x.0].requires_grad {
                    let wv = &nodes[w.0].value.data;
                    let mut dcols = vec![T::zero(); k * hw];
                    gemm_tn(wv, g, &mut dcols, o, k, hw);
                    acc(nodes, grads, *x, |gx| col2im3(&dcols, gx, c, h, wd));
                }
            }
            Op::AvgPool2(a) => {
                let [c, h, w] = chw_unchecked(&nodes[a.0].value);
                let (h2, w2) = (h / 2, w / 2);
                let quarter = T::lit(0.25);
                acc(nodes, grads, *a, |ga| {
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                ga[ch * h * w + y * w + xx] +=
                                    g[ch * h2 * w2 + (y / 2) * w2 + xx / 2] * quarter;
                            }
                        }
                    }
                });
            }
            Op::Upsample2(a) => {
                let [c, h, w] = chw_unchecked(&nodes[a.0].value);
                let (h2, w2) = (2 * h, 2 * w);
                acc(nodes, grads, *a, |ga| {
                    for ch in 0..c {
                        for y in 0..h2 {
                            for xx in 0..w2 {
                                ga[ch * h * w + (y / 2) * w + xx / 2] +=
                                    g[ch * h2 * w2 + y * w2 + xx];
                            }
                        }
                    }
                });
            }
            Op::Mse(a, t) => {
                let n = nodes[a.0].value.len().max(1);
                let k = T::lit(2.0) * g[0] / T::lit(n as f64);
                let diff: Vec<T> = nodes[a.0]
                    .value
                    .data
                    .iter()
                    .zip(&nodes[t.0].value.data)
                    .map(|(&p, &q)| k * (p - q))
                    .collect();
                acc(nodes, grads, *a, |ga| add_into(ga, &diff));
                acc(nodes, grads, *t, |gt| {
                    gt.iter_mut().zip(&diff).for_each(|(d, &s)| *d -= s)
                });
            }
        }
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_slice<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn acc<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let n = nodes[v.0].value.len();
    f(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]));
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn dims2<T>(t: &Tensor<T>) -> (usize, usize) {
    (t.shape[0], t.shape[1])
}

fn chw<T>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 3]> {
    match t.shape.as_slice() {
        &[c, h, w] => Ok([c, h, w]),
        s => Err(Error::shape(op, format!("expected [C,H,W], got {s:?}"))),
    }
}

fn chw_unchecked<T>(t: &Tensor<T>) -> [usize; 3] {
    [t.shape[0], t.shape[1], t.shape[2]]
}
