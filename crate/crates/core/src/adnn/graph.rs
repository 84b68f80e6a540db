use std::sync::Arc;

use super::{Activation, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Act { x: Var, act: Activation },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Shift(Var),
    Abs(Var),
    ColAffine { x: Var, scale: Arc<Vec<T>> },
    MulCol { x: Var, s: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    SumCols(Var),
    SumAll(Var),
    QuatToMat(Var),
    Rotate { q: Var, v: Var },
    QuatStep { q: Var, w: Var, dt: T, norm: Vec<T> },
    RowFn { inputs: Vec<Var>, jac: Vec<T> },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    grad: bool,
}

/// Tape of recorded operations.
///
/// Values are computed eagerly. Nodes built only from constants do not
/// track gradients, and [`Graph::stop_grad`] cuts the flow explicitly.
pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph { nodes: Vec::new() }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed there.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Rotation matrix entries of a unit quaternion and their partial
/// derivatives with respect to (w, x, y, z).
pub(crate) fn quat_mat_jac<T: Real>(q: [T; 4]) -> ([T; 9], [[T; 4]; 9]) {
    let [w, x, y, z] = q;
    let one = T::one();
    let two = T::from_f64(2.0);
    let four = T::from_f64(4.0);
    let z0 = T::zero();
    let r = [
        one - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        one - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        one - two * (x * x + y * y),
    ];
    let j = [
        [z0, z0, -four * y, -four * z],
        [-two * z, two * y, two * x, -two * w],
        [two * y, two * z, two * w, two * x],
        [two * z, two * y, two * x, two * w],
        [z0, -four * x, z0, -four * z],
        [-two * x, -two * w, two * z, two * y],
        [-two * y, two * z, -two * w, two * x],
        [two * x, two * w, two * z, two * y],
        [z0, -four * x, -four * y, z0],
    ];
    (r, j)
}

fn quat_of<T: Real>(t: &Tensor<T>, r: usize) -> [T; 4] {
    let s = t.row_slice(r);
    [s[0], s[1], s[2], s[3]]
}

/// `(0, ω) ⊗ q`.
fn omega_mul<T: Real>(w: [T; 3], q: [T; 4]) -> [T; 4] {
    [
        -w[0] * q[1] - w[1] * q[2] - w[2] * q[3],
        w[0] * q[0] + w[1] * q[3] - w[2] * q[2],
        -w[0] * q[3] + w[1] * q[0] + w[2] * q[1],
        w[0] * q[2] - w[1] * q[1] + w[2] * q[0],
    ]
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, grad: bool) -> Var {
        self.nodes.push(Node { value: Arc::new(value), op, grad });
        Var(self.nodes.len() - 1)
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shared(&self, v: Var) -> Arc<Tensor<T>> {
        self.nodes[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.g(v)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_shared(&mut self, t: Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Same value as `x`, zero gradient backward.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let t = self.shared(x);
        self.constant_shared(t)
    }

    /// `x · w + b` with `b` a single row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let [n, k] = xv.shape();
        let [k2, m] = wv.shape();
        assert_eq!(k, k2, "linear: input has {k} columns, weight has {k2} rows");
        assert_eq!(bv.shape(), [1, m], "linear: bias shape");
        let mut out = Tensor::zeros(n, m);
        {
            let od = out.data_mut();
            for r in 0..n {
                od[r * m..(r + 1) * m].copy_from_slice(bv.data());
            }
            T::gemm(n, k, m, xv.data(), false, wv.data(), false, od, T::one());
        }
        let grad = self.g(x) || self.g(w) || self.g(b);
        self.push(out, Op::Linear { x, w, b }, grad)
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let out = self.value(x).map(|v| act.apply(v));
        let grad = self.g(x);
        self.push(out, Op::Act { x, act }, grad)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise op on mismatched shapes");
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(av.rows(), av.cols(), data).expect("shape");
        let grad = self.g(a) || self.g(b);
        self.push(out, op, grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        let grad = self.g(a);
        self.push(out, Op::Scale(a, c), grad)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v + c);
        let grad = self.g(a);
        self.push(out, Op::Shift(a), grad)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.abs());
        let grad = self.g(a);
        self.push(out, Op::Abs(a), grad)
    }

    /// Per-column `x * scale + shift`.
    pub fn col_affine(&mut self, x: Var, scale: Arc<Vec<T>>, shift: &[T]) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        assert!(scale.len() == c && shift.len() == c, "col_affine: {c} columns");
        let out = Tensor::from_fn(xv.rows(), c, |r, j| xv.get(r, j) * scale[j] + shift[j]);
        let grad = self.g(x);
        self.push(out, Op::ColAffine { x, scale }, grad)
    }

    /// Multiplies each row of `x` by the matching entry of the column `s`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!(sv.shape(), [xv.rows(), 1], "mul_col: scale column shape");
        let out = Tensor::from_fn(xv.rows(), xv.cols(), |r, j| xv.get(r, j) * sv.get(r, 0));
        let grad = self.g(x) || self.g(s);
        self.push(out, Op::MulCol { x, s }, grad)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let out = Tensor::from_fn(xv.rows(), len, |r, j| xv.get(r, start + j));
        let grad = self.g(x);
        self.push(out, Op::SliceCols { x, start }, grad)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols: row mismatch");
            let c = pv.cols();
            for r in 0..rows {
                out.data_mut()[r * cols + off..r * cols + off + c].copy_from_slice(pv.row_slice(r));
            }
            off += c;
        }
        let grad = parts.iter().any(|&p| self.g(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), grad)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.rows(), "slice_rows out of range");
        let c = xv.cols();
        let out = Tensor::new(len, c, xv.data()[start * c..(start + len) * c].to_vec()).expect("shape");
        let grad = self.g(x);
        self.push(out, Op::SliceRows { x, start }, grad)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows: column mismatch");
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::new(rows, cols, data).expect("shape");
        let grad = parts.iter().any(|&p| self.g(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), grad)
    }

    /// Row sums as a column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_fn(xv.rows(), 1, |r, _| xv.row_slice(r).iter().copied().sum());
        let grad = self.g(x);
        self.push(out, Op::SumCols(x), grad)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let grad = self.g(x);
        self.push(Tensor::filled(1, 1, s), Op::SumAll(x), grad)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum_all(x);
        self.scale(s, T::one() / T::from_f64(n as f64))
    }

    /// Quaternion rows `[w x y z]` to row-major rotation matrices.
    pub fn quat_to_mat(&mut self, q: Var) -> Var {
        let qv = self.value(q);
        assert_eq!(qv.cols(), 4, "quat_to_mat expects 4 columns");
        let mut out = Tensor::zeros(qv.rows(), 9);
        for r in 0..qv.rows() {
            let (m, _) = quat_mat_jac(quat_of(qv, r));
            out.data_mut()[r * 9..r * 9 + 9].copy_from_slice(&m);
        }
        let grad = self.g(q);
        self.push(out, Op::QuatToMat(q), grad)
    }

    /// Rotates each row of `v` by the matching quaternion row of `q`.
    /// `v` may be a single row shared by every quaternion.
    pub fn rotate(&mut self, q: Var, v: Var) -> Var {
        let (qv, vv) = (self.value(q), self.value(v));
        assert_eq!(qv.cols(), 4, "rotate: quaternion columns");
        assert_eq!(vv.cols(), 3, "rotate: vector columns");
        assert!(vv.rows() == qv.rows() || vv.rows() == 1, "rotate: row mismatch");
        let n = qv.rows();
        let mut out = Tensor::zeros(n, 3);
        for r in 0..n {
            let (m, _) = quat_mat_jac(quat_of(qv, r));
            let a = vv.row_slice(if vv.rows() == 1 { 0 } else { r });
            for i in 0..3 {
                out.data_mut()[r * 3 + i] = m[3 * i] * a[0] + m[3 * i + 1] * a[1] + m[3 * i + 2] * a[2];
            }
        }
        let grad = self.g(q) || self.g(v);
        self.push(out, Op::Rotate { q, v }, grad)
    }

    /// One explicit step `q + dt·½(0,ω)⊗q` followed by renormalization.
    pub fn quat_step(&mut self, q: Var, w: Var, dt: T) -> Var {
        let (qv, wv) = (self.value(q), self.value(w));
        assert_eq!(qv.cols(), 4, "quat_step: quaternion columns");
        assert_eq!(wv.shape(), [qv.rows(), 3], "quat_step: angular velocity shape");
        let n = qv.rows();
        let half = T::from_f64(0.5) * dt;
        let mut out = Tensor::zeros(n, 4);
        let mut norm = Vec::with_capacity(n);
        for r in 0..n {
            let qq = quat_of(qv, r);
            let ww = wv.row_slice(r);
            let d = omega_mul([ww[0], ww[1], ww[2]], qq);
            let p: Vec<T> = (0..4).map(|i| qq[i] + half * d[i]).collect();
            let len = p.iter().map(|&v| v * v).sum::<T>().sqrt();
            for i in 0..4 {
                out.data_mut()[r * 4 + i] = p[i] / len;
            }
            norm.push(len);
        }
        let grad = self.g(q) || self.g(w);
        self.push(out, Op::QuatStep { q, w, dt, norm }, grad)
    }

    /// Row-wise function of the concatenated input rows. `f(row, inputs)`
    /// returns the output row and its Jacobian (row-major, outputs × inputs).
    pub fn row_fn(
        &mut self,
        inputs: &[Var],
        out_cols: usize,
        mut f: impl FnMut(usize, &[f64]) -> (Vec<f64>, Vec<f64>),
    ) -> Var {
        let n = self.value(inputs[0]).rows();
        assert!(inputs.iter().all(|&v| self.value(v).rows() == n), "row_fn: row mismatch");
        let in_cols: usize = inputs.iter().map(|&v| self.value(v).cols()).sum();
        let mut out = Tensor::zeros(n, out_cols);
        let mut jac = Vec::with_capacity(n * out_cols * in_cols);
        let mut row = Vec::with_capacity(in_cols);
        for r in 0..n {
            row.clear();
            for &v in inputs {
                row.extend(self.value(v).row_slice(r).iter().map(|x| x.as_f64()));
            }
            let (y, j) = f(r, &row);
            assert!(y.len() == out_cols && j.len() == out_cols * in_cols, "row_fn: output sizes");
            for (o, v) in out.data_mut()[r * out_cols..(r + 1) * out_cols].iter_mut().zip(y) {
                *o = T::from_f64(v);
            }
            jac.extend(j.into_iter().map(T::from_f64));
        }
        let grad = inputs.iter().any(|&v| self.g(v));
        self.push(out, Op::RowFn { inputs: inputs.to_vec(), jac }, grad)
    }

    /// Reverse sweep from a scalar (1x1) node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.shape(loss), [1, 1], "backward needs a scalar loss");
        self.backward_with(loss, Tensor::filled(1, 1, T::one()))
    }

    /// Reverse sweep seeded with an arbitrary cotangent for `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(out), "seed shape");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if !self.g(out) {
            return Gradients { grads };
        }
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut Tensor<T>> {
        if !self.g(v) {
            return None;
        }
        let [r, c] = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn acc_map(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: &Tensor<T>, f: impl Fn(usize, T) -> T) {
        if let Some(b) = self.buf(grads, v) {
            for (k, (d, &gv)) in b.data_mut().iter_mut().zip(g.data()).enumerate() {
                *d = *d + f(k, gv);
            }
        }
    }

    fn propagate(&self, op: &Op<T>, y: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let [n, k] = xv.shape();
                let m = wv.cols();
                if let Some(dx) = self.buf(grads, *x) {
                    T::gemm(n, m, k, g.data(), false, wv.data(), true, dx.data_mut(), T::one());
                }
                if let Some(dw) = self.buf(grads, *w) {
                    T::gemm(k, n, m, xv.data(), true, g.data(), false, dw.data_mut(), T::one());
                }
                if let Some(db) = self.buf(grads, *b) {
                    let d = db.data_mut();
                    for r in 0..n {
                        for (dj, &gj) in d.iter_mut().zip(g.row_slice(r)) {
                            *dj = *dj + gj;
                        }
                    }
                }
            }
            Op::Act { x, act } => {
                let xv = self.value(*x);
                self.acc_map(grads, *x, g, |k, gv| gv * act.derivative(xv.data()[k], y.data()[k]));
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, g, |_, gv| gv);
                self.acc_map(grads, *b, g, |_, gv| gv);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, g, |_, gv| gv);
                self.acc_map(grads, *b, g, |_, gv| -gv);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc_map(grads, *a, g, |k, gv| gv * bv.data()[k]);
                self.acc_map(grads, *b, g, |k, gv| gv * av.data()[k]);
            }
            Op::Scale(a, c) => self.acc_map(grads, *a, g, |_, gv| gv * *c),
            Op::Shift(a) => self.acc_map(grads, *a, g, |_, gv| gv),
            Op::Abs(a) => {
                let av = self.value(*a);
                self.acc_map(grads, *a, g, |k, gv| {
                    let v = av.data()[k];
                    if v > T::zero() {
                        gv
                    } else if v < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                });
            }
            Op::ColAffine { x, scale } => {
                let c = g.cols();
                self.acc_map(grads, *x, g, |k, gv| gv * scale[k % c]);
            }
            Op::MulCol { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let c = xv.cols();
                self.acc_map(grads, *x, g, |k, gv| gv * sv.data()[k / c]);
                if let Some(ds) = self.buf(grads, *s) {
                    for r in 0..xv.rows() {
                        let dot: T = xv.row_slice(r).iter().zip(g.row_slice(r)).map(|(&a, &b)| a * b).sum();
                        ds.data_mut()[r] = ds.data_mut()[r] + dot;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let c = g.cols();
                if let Some(dx) = self.buf(grads, *x) {
                    let xc = dx.cols();
                    for r in 0..g.rows() {
                        for j in 0..c {
                            let k = r * xc + start + j;
                            dx.data_mut()[k] = dx.data_mut()[k] + g.get(r, j);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if let Some(dp) = self.buf(grads, p) {
                        for r in 0..g.rows() {
                            for j in 0..pc {
                                let k = r * pc + j;
                                dp.data_mut()[k] = dp.data_mut()[k] + g.get(r, off + j);
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::SliceRows { x, start } => {
                let c = g.cols();
                if let Some(dx) = self.buf(grads, *x) {
                    let d = &mut dx.data_mut()[start * c..start * c + g.len()];
                    for (dv, &gv) in d.iter_mut().zip(g.data()) {
                        *dv = *dv + gv;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(dp) = self.buf(grads, p) {
                        for (dv, &gv) in dp.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                            *dv = *dv + gv;
                        }
                    }
                    off += n;
                }
            }
            Op::SumCols(x) => {
                let c = self.value(*x).cols();
                if let Some(dx) = self.buf(grads, *x) {
                    for (k, dv) in dx.data_mut().iter_mut().enumerate() {
                        *dv = *dv + g.data()[k / c];
                    }
                }
            }
            Op::SumAll(x) => {
                let s = g.data()[0];
                if let Some(dx) = self.buf(grads, *x) {
                    for dv in dx.data_mut() {
                        *dv = *dv + s;
                    }
                }
            }
            Op::QuatToMat(q) => {
                let qv = self.value(*q);
                if let Some(dq) = self.buf(grads, *q) {
                    for r in 0..qv.rows() {
                        let (_, jac) = quat_mat_jac(quat_of(qv, r));
                        for (e, row) in jac.iter().enumerate() {
                            let ge = g.get(r, e);
                            for (c, &j) in row.iter().enumerate() {
                                dq.data_mut()[r * 4 + c] = dq.data_mut()[r * 4 + c] + ge * j;
                            }
                        }
                    }
                }
            }
            Op::Rotate { q, v } => {
                let (qv, vv) = (self.value(*q), self.value(*v));
                let shared = vv.rows() == 1;
                for r in 0..qv.rows() {
                    let (m, jac) = quat_mat_jac(quat_of(qv, r));
                    let a = vv.row_slice(if shared { 0 } else { r });
                    let gr = g.row_slice(r);
                    if let Some(dq) = self.buf(grads, *q) {
                        for i in 0..3 {
                            for j in 0..3 {
                                let coef = gr[i] * a[j];
                                for c in 0..4 {
                                    dq.data_mut()[r * 4 + c] = dq.data_mut()[r * 4 + c] + coef * jac[3 * i + j][c];
                                }
                            }
                        }
                    }
                    if let Some(dv) = self.buf(grads, *v) {
                        let vr = if shared { 0 } else { r };
                        for j in 0..3 {
                            let s = gr[0] * m[j] + gr[1] * m[3 + j] + gr[2] * m[6 + j];
                            dv.data_mut()[vr * 3 + j] = dv.data_mut()[vr * 3 + j] + s;
                        }
                    }
                }
            }
            Op::RowFn { inputs, jac } => {
                let (n, oc) = (g.rows(), g.cols());
                let ic = jac.len() / (n * oc).max(1);
                let mut off = 0;
                for &p in inputs {
                    let pc = self.value(p).cols();
                    if let Some(dp) = self.buf(grads, p) {
                        for r in 0..n {
                            let j = &jac[r * oc * ic..(r + 1) * oc * ic];
                            let gr = g.row_slice(r);
                            for c in 0..pc {
                                let s: T = (0..oc).map(|o| gr[o] * j[o * ic + off + c]).sum();
                                dp.data_mut()[r * pc + c] = dp.data_mut()[r * pc + c] + s;
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::QuatStep { q, w, dt, norm } => {
                let (qv, wv) = (self.value(*q), self.value(*w));
                let half = T::from_f64(0.5) * *dt;
                for r in 0..qv.rows() {
                    let o = quat_of(y, r);
                    let gr = g.row_slice(r);
                    let dot: T = (0..4).map(|i| o[i] * gr[i]).sum();
                    let gp: Vec<T> = (0..4).map(|i| (gr[i] - o[i] * dot) / norm[r]).collect();
                    let qq = quat_of(qv, r);
                    let ww = wv.row_slice(r);
                    if let Some(dq) = self.buf(grads, *q) {
                        // dp/dq = I + half * L(ω)
                        let l = [
                            [T::zero(), -ww[0], -ww[1], -ww[2]],
                            [ww[0], T::zero(), -ww[2], ww[1]],
                            [ww[1], ww[2], T::zero(), -ww[0]],
                            [ww[2], -ww[1], ww[0], T::zero()],
                        ];
                        for c in 0..4 {
                            let mut s = gp[c];
                            for i in 0..4 {
                                s = s + half * l[i][c] * gp[i];
                            }
                            dq.data_mut()[r * 4 + c] = dq.data_mut()[r * 4 + c] + s;
                        }
                    }
                    if let Some(dw) = self.buf(grads, *w) {
                        let mq = [
                            [-qq[1], -qq[2], -qq[3]],
                            [qq[0], qq[3], -qq[2]],
                            [-qq[3], qq[0], qq[1]],
                            [qq[2], -qq[1], qq[0]],
                        ];
                        for c in 0..3 {
                            let s: T = (0..4).map(|i| mq[i][c] * gp[i]).sum();
                            dw.data_mut()[r * 3 + c] = dw.data_mut()[r * 3 + c] + half * s;
                        }
                    }
                }
            }
        }
    }
}
