use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Conv2d(Var, Tensor),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
    LeakyClip {
        input: Var,
        max: f64,
        alpha: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// A dynamically built computation graph.
///
/// Nodes are appended in evaluation order, which is already a topological
/// order, so [`Graph::backward`] walks the node list in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `c = op(a) * op(b) + beta * c` where `op` optionally transposes.
/// `a` is stored row-major as `m×k` (or `k×m` if `ta`), `b` as `k×n` (or `n×k` if `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths were checked against the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scalar leaky saturation: identity up to `max`, slope `alpha` above.
pub fn leaky_clip(x: f64, max: f64, alpha: f64) -> f64 {
    if x <= max {
        x
    } else {
        alpha * (x - max) + max
    }
}

/// Derivative of [`leaky_clip`] with respect to its input.
pub fn leaky_clip_slope(x: f64, max: f64, alpha: f64) -> f64 {
    if x <= max {
        1.0
    } else {
        alpha
    }
}

fn reduced_shape(shape: &[usize], axis: Option<usize>) -> Vec<usize> {
    match axis {
        None => Vec::new(),
        Some(a) => shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != a)
            .map(|(_, &d)| d)
            .collect(),
    }
}

/// `(outer, axis_len, inner)` split of `shape` around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sum_axis(t: &Tensor, axis: Option<usize>) -> Tensor {
    match axis {
        None => Tensor::scalar(t.data().iter().sum()),
        Some(a) => {
            let (outer, len, inner) = axis_split(t.shape(), a);
            let mut out = vec![0.0; outer * inner];
            let d = t.data();
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += d[base + i];
                    }
                }
            }
            Tensor::new(reduced_shape(t.shape(), axis), out).expect("reduced shape")
        }
    }
}

/// Spatial dims and batch count of a `[h,w]` or `[b,h,w]` tensor.
fn image_dims(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [h, w] => Some((1, h, w)),
        [b, h, w] => Some((b, h, w)),
        _ => None,
    }
}

fn correlate(input: &[f64], out: &mut [f64], b: usize, h: usize, w: usize, kernel: &Tensor) {
    let r = kernel.shape()[0];
    let c = (r / 2) as isize;
    let k = kernel.data();
    for n in 0..b {
        let img = &input[n * h * w..(n + 1) * h * w];
        let dst = &mut out[n * h * w..(n + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for u in 0..r {
                    let y = i as isize + u as isize - c;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for v in 0..r {
                        let x = j as isize + v as isize - c;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        acc += k[u * r + v] * img[y as usize * w + x as usize];
                    }
                }
                dst[i * w + j] = acc;
            }
        }
    }
}

fn correlate_adjoint(dy: &[f64], dx: &mut [f64], b: usize, h: usize, w: usize, kernel: &Tensor) {
    let r = kernel.shape()[0];
    let c = (r / 2) as isize;
    let k = kernel.data();
    for n in 0..b {
        let g = &dy[n * h * w..(n + 1) * h * w];
        let dst = &mut dx[n * h * w..(n + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let gij = g[i * w + j];
                if gij == 0.0 {
                    continue;
                }
                for u in 0..r {
                    let y = i as isize + u as isize - c;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for v in 0..r {
                        let x = j as isize + v as isize - c;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        dst[y as usize * w + x as usize] += k[u * r + v] * gij;
                    }
                }
            }
        }
    }
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// A trainable leaf. After [`Graph::backward`] its gradient is always present.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2("matmul")?;
        let (k2, n) = tb.dims2("matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("transpose")?;
        let d = t.data();
        let value = Tensor::from_fn(vec![c, r], |idx| {
            let (i, j) = (idx / r, idx % r);
            d[j * c + i]
        });
        let rg = self.rg(a);
        Ok(self.push(Op::Transpose(a), value, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a), value, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(Op::Sigmoid(a), value, rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(Op::LeakyRelu(a, slope), value, rg)
    }

    fn broadcast_binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if tb.is_scalar() {
            let y = tb.item();
            Ok(ta.map(|x| f(x, y)))
        } else if ta.is_scalar() {
            let x = ta.item();
            Ok(tb.map(|y| f(x, y)))
        } else {
            Err(dim_err(op, ta, tb))
        }
    }

    /// Elementwise sum; shapes must match or one side must be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    /// Elementwise product; shapes must match or one side must be a scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), value, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(Op::AddScalar(a), value, rg)
    }

    fn check_axis(&self, a: Var, axis: Option<usize>, op: &'static str) -> Result<()> {
        let rank = self.value(a).shape().len();
        match axis {
            Some(ax) if ax >= rank => Err(Error::Index {
                what: op,
                index: ax,
                bound: rank,
            }),
            _ => Ok(()),
        }
    }

    /// Sum over one axis, or over everything when `axis` is `None`.
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_axis(a, axis, "sum axis")?;
        let value = sum_axis(self.value(a), axis);
        let rg = self.rg(a);
        Ok(self.push(Op::Sum(a, axis), value, rg))
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_axis(a, axis, "mean axis")?;
        let t = self.value(a);
        let n = match axis {
            None => t.len(),
            Some(ax) => t.shape()[ax],
        };
        let value = sum_axis(t, axis).map(|s| s / n as f64);
        let rg = self.rg(a);
        Ok(self.push(Op::Mean(a, axis), value, rg))
    }

    fn row_broadcast(
        &self,
        op: &'static str,
        x: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (tx, tr) = (self.value(x), self.value(row));
        let (_, n) = tx.dims2(op)?;
        if tr.len() != n || tr.shape().len() > 2 {
            return Err(dim_err(op, tx, tr));
        }
        let r = tr.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, r[i % n]))
            .collect();
        Tensor::new(tx.shape().to_vec(), data)
    }

    /// `x[i,j] + row[j]` for an `m×n` matrix and a length-`n` row.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let value = self.row_broadcast("add_row", x, row, |v, r| v + r)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Op::AddRow(x, row), value, rg))
    }

    /// `x[i,j] * row[j]` for an `m×n` matrix and a length-`n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let value = self.row_broadcast("mul_row", x, row, |v, r| v * r)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Op::MulRow(x, row), value, rg))
    }

    /// Same-size 2-D correlation with a constant odd-width kernel and zero
    /// padding. Accepts `[h,w]` or a batch `[b,h,w]`.
    pub fn conv2d_fixed(&mut self, image: Var, kernel: &Tensor) -> Result<Var> {
        let (r, r2) = kernel.dims2("conv2d kernel")?;
        if r != r2 || r % 2 == 0 {
            return Err(Error::config(format!(
                "conv2d kernel must be square with odd width, got {r}x{r2}"
            )));
        }
        let t = self.value(image);
        let (b, h, w) = image_dims(t.shape()).ok_or_else(|| dim_err("conv2d", t, kernel))?;
        let mut out = vec![0.0; t.len()];
        correlate(t.data(), &mut out, b, h, w, kernel);
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(image);
        Ok(self.push(Op::Conv2d(image, kernel.clone()), value, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (batch, classes) = t.dims2("softmax_cross_entropy")?;
        if labels.len() != batch {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy labels",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                bound: classes,
            });
        }
        let mut probs = vec![0.0; batch * classes];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &t.data()[i * classes..(i + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            for c in 0..classes {
                probs[i * classes + c] = (row[c] - log_z).exp();
            }
            loss += log_z - row[label];
        }
        let value = Tensor::scalar(loss / batch as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            value,
            rg,
        ))
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(dim_err("mse_loss", tp, tt));
        }
        let n = tp.len().max(1) as f64;
        let s: f64 = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Op::Mse(pred, target), Tensor::scalar(s / n), rg))
    }

    pub fn leaky_clip(&mut self, a: Var, max: f64, alpha: f64) -> Var {
        let value = self.value(a).map(|x| leaky_clip(x, max, alpha));
        let rg = self.rg(a);
        self.push(
            Op::LeakyClip {
                input: a,
                max,
                alpha,
            },
            value,
            rg,
        )
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(delta) {
                    *a += d;
                }
            }
            None => {
                node.grad =
                    Some(Tensor::new(node.value.shape().to_vec(), delta.to_vec()).expect("shape"));
            }
        }
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Every trainable leaf ends up with a gradient; leaves the loss does
    /// not depend on get zeros. Gradients from earlier calls are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.accumulate(loss, &[1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &grad);
            self.nodes[idx].grad = Some(grad);
        }

        for node in &mut self.nodes {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, grad: &Tensor) {
        let g = grad.data();
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2("matmul").expect("checked");
                let n = self.value(b).shape()[1];
                if self.rg(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.value(b).data(), true, 0.0, &mut da);
                    self.accumulate(a, &da);
                }
                if self.rg(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(a).data(), true, g, false, 0.0, &mut db);
                    self.accumulate(b, &db);
                }
            }
            &Op::Transpose(a) => {
                let (r, c) = self.value(a).dims2("transpose").expect("checked");
                // grad is c×r
                let da: Vec<f64> = (0..r * c)
                    .map(|idx| {
                        let (i, j) = (idx / c, idx % c);
                        g[j * r + i]
                    })
                    .collect();
                self.accumulate(a, &da);
            }
            &Op::Reshape(a) => self.accumulate(a, g),
            &Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.data();
                let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(a, &da);
            }
            &Op::LeakyRelu(a, slope) => {
                let x = self.value(a).data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x >= 0.0 { *g } else { slope * g })
                    .collect();
                self.accumulate(a, &da);
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if !self.rg(v) {
                        continue;
                    }
                    if self.value(v).len() == g.len() {
                        self.accumulate(v, g);
                    } else {
                        let s: f64 = g.iter().sum();
                        self.accumulate(v, &[s]);
                    }
                }
            }
            &Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if !self.rg(v) {
                        continue;
                    }
                    let o = self.value(other);
                    let d: Vec<f64> = if o.is_scalar() && g.len() != 1 {
                        let y = o.item();
                        g.iter().map(|g| g * y).collect()
                    } else {
                        g.iter().zip(o.data()).map(|(g, y)| g * y).collect()
                    };
                    if self.value(v).len() == d.len() {
                        self.accumulate(v, &d);
                    } else {
                        let s: f64 = d.iter().sum();
                        self.accumulate(v, &[s]);
                    }
                }
            }
            &Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|g| c * g).collect();
                self.accumulate(a, &da);
            }
            &Op::AddScalar(a) => self.accumulate(a, g),
            &Op::Sum(a, axis) | &Op::Mean(a, axis) => {
                let is_mean = matches!(op, Op::Mean(..));
                let shape = self.value(a).shape().to_vec();
                let mut da = vec![0.0; shape.iter().product()];
                match axis {
                    None => {
                        let s = if is_mean {
                            g[0] / da.len() as f64
                        } else {
                            g[0]
                        };
                        da.fill(s);
                    }
                    Some(ax) => {
                        let (outer, len, inner) = axis_split(&shape, ax);
                        let f = if is_mean { 1.0 / len as f64 } else { 1.0 };
                        for o in 0..outer {
                            for l in 0..len {
                                for i in 0..inner {
                                    da[(o * len + l) * inner + i] = f * g[o * inner + i];
                                }
                            }
                        }
                    }
                }
                self.accumulate(a, &da);
            }
            &Op::AddRow(x, row) => {
                let n = self.value(row).len();
                if self.rg(x) {
                    self.accumulate(x, g);
                }
                if self.rg(row) {
                    let mut dr = vec![0.0; n];
                    for (i, gi) in g.iter().enumerate() {
                        dr[i % n] += gi;
                    }
                    self.accumulate(row, &dr);
                }
            }
            &Op::MulRow(x, row) => {
                let n = self.value(row).len();
                if self.rg(x) {
                    let r = self.value(row).data();
                    let dx: Vec<f64> = g.iter().enumerate().map(|(i, g)| g * r[i % n]).collect();
                    self.accumulate(x, &dx);
                }
                if self.rg(row) {
                    let xv = self.value(x).data();
                    let mut dr = vec![0.0; n];
                    for (i, gi) in g.iter().enumerate() {
                        dr[i % n] += gi * xv[i];
                    }
                    self.accumulate(row, &dr);
                }
            }
            Op::Conv2d(a, kernel) => {
                let a = *a;
                if self.rg(a) {
                    let (b, h, w) = image_dims(self.value(a).shape()).expect("checked");
                    let mut da = vec![0.0; g.len()];
                    correlate_adjoint(g, &mut da, b, h, w, kernel);
                    self.accumulate(a, &da);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                let batch = labels.len();
                let classes = probs.len() / batch.max(1);
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * classes + l] -= 1.0;
                }
                let s = g[0] / batch as f64;
                d.iter_mut().for_each(|v| *v *= s);
                self.accumulate(logits, &d);
            }
            &Op::Mse(p, t) => {
                let (tp, tt) = (self.value(p), self.value(t));
                let s = 2.0 * g[0] / tp.len().max(1) as f64;
                let dp: Vec<f64> = tp
                    .data()
                    .iter()
                    .zip(tt.data())
                    .map(|(p, t)| s * (p - t))
                    .collect();
                if self.rg(t) {
                    let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                    self.accumulate(t, &dt);
                }
                self.accumulate(p, &dp);
            }
            &Op::LeakyClip { input, max, alpha } => {
                let x = self.value(input).data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| g * leaky_clip_slope(x, max, alpha))
                    .collect();
                self.accumulate(input, &da);
            }
        }
        self.nodes[idx].op = op;
    }
}
