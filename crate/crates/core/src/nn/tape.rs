//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D array; scalars are `1×1`. Elementwise binary ops
//! broadcast a `1×n`, `m×1` or `1×1` operand against the other one.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'s> {
    Own(Mat),
    Ref(&'s Mat),
}

impl Value<'_> {
    fn get(&self) -> &Mat {
        match self {
            Value::Own(m) => m,
            Value::Ref(m) => m,
        }
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm(Var, Mat),
    MaxRows(Var, Vec<usize>),
    Norm(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    PermuteCols(Var, Vec<usize>),
    PairsToSym(Var),
}

struct Node<'s> {
    value: Value<'s>,
    op: Op,
    grad: bool,
    param: Option<(u64, ParamId)>,
}

/// Records a computation so that gradients can be pulled back from a scalar.
pub struct Tape<'s> {
    nodes: Vec<Node<'s>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn unbroadcast(g: Mat, shape: (usize, usize)) -> Mat {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn row_softmax(x: &Mat) -> Mat {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

fn row_log_softmax(x: &Mat) -> Mat {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    y
}

/// Side of the upper-triangle pair list: `m(m-1)/2 = p`.
fn side_for_pairs(p: usize) -> usize {
    let m = ((1.0 + (1.0 + 8.0 * p as f64).sqrt()) / 2.0).round() as usize;
    assert_eq!(m * (m - 1) / 2, p, "{p} is not a triangular pair count");
    m
}

impl<'s> Tape<'s> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Own(value), op, grad, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.nodes[v.0].value.get()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Grads::wrt`].
    pub fn variable(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant_ref(&mut self, value: &'s Mat) -> Var {
        self.nodes.push(Node { value: Value::Ref(value), op: Op::Leaf, grad: false, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter without copying it. Frozen stores produce
    /// constants.
    pub fn param(&mut self, store: &'s ParamStore, id: ParamId) -> Var {
        let trainable = !store.frozen;
        self.nodes.push(Node {
            value: Value::Ref(store.get(id)),
            op: Op::Leaf,
            grad: trainable,
            param: trainable.then_some((store.uid(), id)),
        });
        Var(self.nodes.len() - 1)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = (va.nrows().max(vb.nrows()), va.ncols().max(vb.ncols()));
        let va = va.broadcast(shape).unwrap_or_else(|| panic!("cannot broadcast {:?} to {shape:?}", va.dim()));
        let vb = vb.broadcast(shape).unwrap_or_else(|| panic!("cannot broadcast {:?} to {shape:?}", vb.dim()));
        let out = Zip::from(&va).and(&vb).map_collect(|&x, &y| f(x, y));
        let grad = self.g(a) || self.g(b);
        self.push(out, op, grad)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).mapv(f);
        let grad = self.g(a);
        self.push(out, op, grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        let grad = self.g(a) || self.g(b);
        self.push(out, Op::MatMul(a, b), grad)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let grad = self.g(a);
        self.push(out, Op::Transpose(a), grad)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let grad = self.g(a);
        self.push(out, Op::Sum(a), grad)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums as a `1×n` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let grad = self.g(a);
        self.push(out, Op::SumRows(a), grad)
    }

    /// Row sums as an `m×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let grad = self.g(a);
        self.push(out, Op::SumCols(a), grad)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = row_softmax(self.value(a));
        let grad = self.g(a);
        self.push(out, Op::Softmax(a), grad)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = row_log_softmax(self.value(a));
        let grad = self.g(a);
        self.push(out, Op::LogSoftmax(a), grad)
    }

    /// Row-wise standardization `(x - mean) / sqrt(var + eps)`.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut y = x.clone();
        let mut inv = Array2::zeros((x.nrows(), 1));
        for (r, mut row) in y.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv[[r, 0]] = is;
            row.mapv_inplace(|v| (v - mean) * is);
        }
        let grad = self.g(a);
        self.push(y, Op::LayerNorm(a, inv), grad)
    }

    /// Column-wise maximum over rows, as a `1×n` row. The first maximal row
    /// receives the gradient.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut arg = vec![0usize; x.ncols()];
        let mut out = Array2::from_elem((1, x.ncols()), f64::NEG_INFINITY);
        for (r, row) in x.rows().into_iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v > out[[0, c]] {
                    out[[0, c]] = v;
                    arg[c] = r;
                }
            }
        }
        let grad = self.g(a);
        self.push(out, Op::MaxRows(a, arg), grad)
    }

    /// Frobenius norm. The gradient at the origin is taken as zero.
    pub fn norm(&mut self, a: Var) -> Var {
        let n = self.value(a).iter().map(|v| v * v).sum::<f64>().sqrt();
        let grad = self.g(a);
        self.push(Array2::from_elem((1, 1), n), Op::Norm(a), grad)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        let flat: Vec<f64> = x.iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), flat).expect("reshape size mismatch");
        let grad = self.g(a);
        self.push(out, Op::Reshape(a), grad)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts differ");
        let grad = parts.iter().any(|&p| self.g(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), grad)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts differ");
        let grad = parts.iter().any(|&p| self.g(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), grad)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let grad = self.g(a);
        self.push(out, Op::SliceCols(a, start), grad)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let grad = self.g(a);
        self.push(out, Op::SliceRows(a, start), grad)
    }

    /// Rows `idx` of `a` in order; repeated indices accumulate gradient.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), idx);
        let grad = self.g(a);
        self.push(out, Op::GatherRows(a, idx.to_vec()), grad)
    }

    /// Output column `k` is input column `perm[k]`.
    pub fn permute_cols(&mut self, a: Var, perm: &[usize]) -> Var {
        let out = self.value(a).select(Axis(1), perm);
        let grad = self.g(a);
        self.push(out, Op::PermuteCols(a, perm.to_vec()), grad)
    }

    /// Scatters an upper-triangle pair column (`p×1`, lexicographic order)
    /// into a symmetric `m×m` matrix with zero diagonal.
    pub fn pairs_to_sym(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert_eq!(x.ncols(), 1, "pairs_to_sym takes a column");
        let m = side_for_pairs(x.nrows());
        let mut out = Array2::zeros((m, m));
        let mut k = 0;
        for i in 0..m {
            for j in i + 1..m {
                out[[i, j]] = x[[k, 0]];
                out[[j, i]] = x[[k, 0]];
                k += 1;
            }
        }
        let grad = self.g(a);
        self.push(out, Op::PairsToSym(a), grad)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let y = node.value.get();
            let want = |v: Var| self.nodes[v.0].grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    if want(*a) {
                        acc(&mut grads, *a, unbroadcast(g.clone(), self.value(*a).dim()));
                    }
                    if want(*b) {
                        acc(&mut grads, *b, unbroadcast(g.clone(), self.value(*b).dim()));
                    }
                }
                Op::Sub(a, b) => {
                    if want(*a) {
                        acc(&mut grads, *a, unbroadcast(g.clone(), self.value(*a).dim()));
                    }
                    if want(*b) {
                        acc(&mut grads, *b, unbroadcast(-&g, self.value(*b).dim()));
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if want(*a) {
                        acc(&mut grads, *a, unbroadcast(&g * vb, va.dim()));
                    }
                    if want(*b) {
                        acc(&mut grads, *b, unbroadcast(&g * va, vb.dim()));
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if want(*a) {
                        acc(&mut grads, *a, unbroadcast(&g / vb, va.dim()));
                    }
                    if want(*b) {
                        let gb = -(&g * y) / vb;
                        acc(&mut grads, *b, unbroadcast(gb, vb.dim()));
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if want(*a) {
                        acc(&mut grads, *a, g.dot(&vb.t()));
                    }
                    if want(*b) {
                        acc(&mut grads, *b, va.t().dot(&g));
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Neg(a) => acc(&mut grads, *a, -g),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, Zip::from(&g).and(x).map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 }));
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, Zip::from(&g).and(y).map_collect(|&g, &y| g * y * (1.0 - y))),
                Op::Tanh(a) => acc(&mut grads, *a, Zip::from(&g).and(y).map_collect(|&g, &y| g * (1.0 - y * y))),
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, Zip::from(&g).and(x).map_collect(|&g, &x| g * gelu_grad(x)));
                }
                Op::Exp(a) => acc(&mut grads, *a, g * y),
                Op::Ln(a) => acc(&mut grads, *a, g / self.value(*a)),
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, Zip::from(&g).and(x).map_collect(|&g, &x| g * sigmoid(x)));
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, Zip::from(&g).and(x).map_collect(|&g, &x| 2.0 * g * x));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        Zip::from(&g).and(x).map_collect(|&g, &x| if x >= *lo && x <= *hi { g } else { 0.0 }),
                    );
                }
                Op::Sum(a) => {
                    let dim = self.value(*a).dim();
                    acc(&mut grads, *a, Array2::from_elem(dim, g[[0, 0]]));
                }
                Op::SumRows(a) => {
                    let dim = self.value(*a).dim();
                    acc(&mut grads, *a, g.broadcast(dim).unwrap().to_owned());
                }
                Op::SumCols(a) => {
                    let dim = self.value(*a).dim();
                    acc(&mut grads, *a, g.broadcast(dim).unwrap().to_owned());
                }
                Op::Softmax(a) => {
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, y * &(&g - &dot));
                }
                Op::LogSoftmax(a) => {
                    let gs = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let p = y.mapv(f64::exp);
                    acc(&mut grads, *a, &g - &(&p * &gs));
                }
                Op::LayerNorm(a, inv) => {
                    let n = y.ncols() as f64;
                    let mg = g.sum_axis(Axis(1)).insert_axis(Axis(1)) / n;
                    let mgy = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1)) / n;
                    let dx = (&g - &mg - &(y * &mgy)) * inv;
                    acc(&mut grads, *a, dx);
                }
                Op::MaxRows(a, arg) => {
                    let mut dx = Array2::zeros(self.value(*a).dim());
                    for (c, &r) in arg.iter().enumerate() {
                        dx[[r, c]] = g[[0, c]];
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::Norm(a) => {
                    let n = y[[0, 0]];
                    let x = self.value(*a);
                    let dx = if n > 0.0 { x * (g[[0, 0]] / n) } else { Array2::zeros(x.dim()) };
                    acc(&mut grads, *a, dx);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    acc(&mut grads, *a, Array2::from_shape_vec(dim, flat).unwrap());
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if want(p) {
                            acc(&mut grads, p, g.slice(s![.., c..c + w]).to_owned());
                        }
                        c += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        if want(p) {
                            acc(&mut grads, p, g.slice(s![r..r + h, ..]).to_owned());
                        }
                        r += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut dx = Array2::zeros(self.value(*a).dim());
                    dx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, dx);
                }
                Op::SliceRows(a, start) => {
                    let mut dx = Array2::zeros(self.value(*a).dim());
                    dx.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, dx);
                }
                Op::GatherRows(a, idx) => {
                    let mut dx = Array2::zeros(self.value(*a).dim());
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = dx.row_mut(r);
                        row += &g.row(k);
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::PermuteCols(a, perm) => {
                    let mut dx = Array2::zeros(self.value(*a).dim());
                    for (k, &c) in perm.iter().enumerate() {
                        let mut col = dx.column_mut(c);
                        col += &g.column(k);
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::PairsToSym(a) => {
                    let m = g.nrows();
                    let mut dx = Array2::zeros(self.value(*a).dim());
                    let mut k = 0;
                    for i in 0..m {
                        for j in i + 1..m {
                            dx[[k, 0]] = g[[i, j]] + g[[j, i]];
                            k += 1;
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (i, p)))
            .collect();
        Grads { grads, params }
    }
}

/// Result of [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
    params: Vec<(usize, (u64, ParamId))>,
}

impl Grads {
    /// Gradient of a leaf created with [`Tape::variable`] or
    /// [`Tape::param`]; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for every parameter of `store`, summed over all of its
    /// bindings on the tape.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Option<Mat>> {
        let mut out: Vec<Option<Mat>> = (0..store.len()).map(|_| None).collect();
        for &(node, (uid, id)) in &self.params {
            if uid != store.uid() {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                match &mut out[id.0] {
                    Some(e) => *e += g,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}
