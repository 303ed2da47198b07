//! A small reverse-mode automatic differentiation tape over dense matrices.
//!
//! Every value is a 2-D array. Sequences are laid out time-major, so a batch of
//! `B` sequences of length `L` with `C` channels is an `(L*B, C)` matrix whose
//! row `s*B + b` is element `s` of sample `b`.
//!
//! Nodes are appended in evaluation order, which is a valid topological order,
//! so [`Tape::backward`] is a single reverse sweep.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// Adds a `(1, n)` row to every row.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Elementwise product with a constant of the same shape.
    MulConst(Var, Array2<F>),
    Scale(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    StackRows(Vec<Var>),
    /// `out[i] = a[idx[i]]`
    GatherRows(Var, Vec<usize>),
    /// Tiles an `(n, c)` matrix `reps` times vertically.
    TileRows(Var, usize),
    SoftmaxRows(Var),
    /// Column-wise maximum over all rows; stores the winning row per column.
    MaxRows(Var, Vec<usize>),
    Gru(GruCache<F>),
    /// `sum_r w_r * sum_c (a - target)^2`
    WeightedSqErr(Var, Array2<F>, Vec<F>),
    /// Mean softmax cross-entropy; stores the softmax probabilities.
    CrossEntropy(Var, Vec<usize>, Array2<F>),
}

struct GruCache<F> {
    xp: Var,
    hp: Var,
    h: Var,
    mask: Option<Vec<F>>,
    r: Array2<F>,
    u: Array2<F>,
    n: Array2<F>,
}

struct Node<F> {
    value: Array2<F>,
    op: Op<F>,
}

/// Records operations so gradients can be computed by [`Tape::backward`].
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(1024) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Array2<F>) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(F::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > F::zero() { x } else { F::zero() });
        self.push(v, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<F>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, end))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<F>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::StackRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let v = self.value(a).select(Axis(0), &idx);
        self.push(v, Op::GatherRows(a, idx))
    }

    pub fn tile_rows(&mut self, a: Var, reps: usize) -> Var {
        let src = self.value(a);
        let views: Vec<ArrayView2<F>> = (0..reps).map(|_| src.view()).collect();
        let v = concatenate(Axis(0), &views).expect("tile");
        self.push(v, Op::TileRows(a, reps))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(F::neg_infinity(), |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn max_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let (rows, cols) = src.dim();
        assert!(rows > 0, "max over an empty set");
        let mut arg = vec![0usize; cols];
        let mut out = Array2::zeros((1, cols));
        for c in 0..cols {
            let mut best = src[[0, c]];
            for r in 1..rows {
                if src[[r, c]] > best {
                    best = src[[r, c]];
                    arg[c] = r;
                }
            }
            out[[0, c]] = best;
        }
        self.push(out, Op::MaxRows(a, arg))
    }

    /// One gated-recurrent-unit update for a batch.
    ///
    /// `xp` and `hp` are the `(B, 3H)` input and hidden projections (biases
    /// included) ordered as reset, update, candidate. Rows whose `mask` entry
    /// is zero keep their previous state.
    pub fn gru(&mut self, xp: Var, hp: Var, h: Var, mask: Option<Vec<F>>) -> Var {
        let hdim = self.shape(h).1;
        let xpv = self.value(xp);
        let hpv = self.value(hp);
        let hv = self.value(h);
        let r = (&xpv.slice(s![.., 0..hdim]) + &hpv.slice(s![.., 0..hdim])).mapv(sigmoid);
        let u = (&xpv.slice(s![.., hdim..2 * hdim]) + &hpv.slice(s![.., hdim..2 * hdim]))
            .mapv(sigmoid);
        let n = (&xpv.slice(s![.., 2 * hdim..]) + &(&r * &hpv.slice(s![.., 2 * hdim..])))
            .mapv(F::tanh);
        let mut out = &n + &(&u * &(hv - &n));
        if let Some(m) = &mask {
            for (mut row, (&mi, prev)) in out.rows_mut().into_iter().zip(m.iter().zip(hv.rows())) {
                if mi == F::zero() {
                    row.assign(&prev);
                }
            }
        }
        self.push(out, Op::Gru(GruCache { xp, hp, h, mask, r, u, n }))
    }

    pub fn weighted_sq_err(&mut self, a: Var, target: Array2<F>, row_weights: Vec<F>) -> Var {
        let diff = self.value(a) - &target;
        let mut total = F::zero();
        for (row, &w) in diff.rows().into_iter().zip(&row_weights) {
            if w != F::zero() {
                total += w * row.fold(F::zero(), |acc, &d| acc + d * d);
            }
        }
        self.push(Array2::from_elem((1, 1), total), Op::WeightedSqErr(a, target, row_weights))
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let lv = self.value(logits);
        let mut probs = lv.clone();
        let mut total = F::zero();
        for (mut row, &y) in probs.rows_mut().into_iter().zip(&labels) {
            let m = row.fold(F::neg_infinity(), |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let sum = row.sum();
            total += sum.ln() - (row[y].ln());
            row.mapv_inplace(|x| x / sum);
        }
        let n = F::of(labels.len() as f64);
        self.push(Array2::from_elem((1, 1), total / n), Op::CrossEntropy(logits, labels, probs))
    }

    /// Reverse sweep from a `(1, 1)` node. Returns one gradient slot per node.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.value(root).raw_dim()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Array2<F>, grads: &mut [Option<Array2<F>>]) {
        fn acc<F: Scalar>(grads: &mut [Option<Array2<F>>], v: Var, d: Array2<F>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot => *slot = Some(d),
            }
        }
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(grads, *a, g.dot(&self.value(*b).t()));
                acc(grads, *b, self.value(*a).t().dot(g));
            }
            Op::MatMulT(a, b) => {
                acc(grads, *a, g.dot(self.value(*b)));
                acc(grads, *b, g.t().dot(self.value(*a)));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(grads, *a, g.clone());
                acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g * self.value(*b));
                acc(grads, *b, g * self.value(*a));
            }
            Op::MulConst(a, c) => acc(grads, *a, g * c),
            Op::Scale(a, k) => acc(grads, *a, g * *k),
            Op::Sigmoid(a) => {
                let y = &node.value;
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d = *d * y * (F::one() - y));
                acc(grads, *a, d);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d = *d * (F::one() - y * y));
                acc(grads, *a, d);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                Zip::from(&mut d).and(x).for_each(|d, &x| {
                    if x <= F::zero() {
                        *d = F::zero()
                    }
                });
                acc(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    acc(grads, *p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                acc(grads, *a, d);
            }
            Op::SliceRows(a, start, end) => {
                let slot = grads[a.0].get_or_insert_with(|| Array2::zeros(self.value(*a).raw_dim()));
                let mut part = slot.slice_mut(s![*start..*end, ..]);
                part += g;
            }
            Op::StackRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = self.shape(*p).0;
                    acc(grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                for (out_row, &src) in idx.iter().enumerate() {
                    let mut row = d.row_mut(src);
                    row += &g.row(out_row);
                }
                acc(grads, *a, d);
            }
            Op::TileRows(a, reps) => {
                let n = self.shape(*a).0;
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                for r in 0..*reps {
                    d += &g.slice(s![r * n..(r + 1) * n, ..]);
                }
                acc(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Array2::zeros(y.raw_dim());
                for ((mut drow, yrow), grow) in d.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                    let dot = yrow.dot(&grow);
                    Zip::from(&mut drow).and(&yrow).and(&grow).for_each(|d, &y, &g| *d = y * (g - dot));
                }
                acc(grads, *a, d);
            }
            Op::MaxRows(a, arg) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                for (c, &r) in arg.iter().enumerate() {
                    d[[r, c]] = g[[0, c]];
                }
                acc(grads, *a, d);
            }
            Op::Gru(cache) => self.gru_backward(cache, g, grads),
            Op::WeightedSqErr(a, target, w) => {
                let scale = g[[0, 0]];
                let mut d = self.value(*a) - target;
                for (mut row, &wr) in d.rows_mut().into_iter().zip(w) {
                    let k = scale * wr * F::of(2.0);
                    row.mapv_inplace(|x| x * k);
                }
                acc(grads, *a, d);
            }
            Op::CrossEntropy(logits, labels, probs) => {
                let n = F::of(labels.len() as f64);
                let k = g[[0, 0]] / n;
                let mut d = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    d[[r, y]] -= F::one();
                }
                d.mapv_inplace(|x| x * k);
                acc(grads, *logits, d);
            }
        }
    }

    fn gru_backward(&self, c: &GruCache<F>, g: &Array2<F>, grads: &mut [Option<Array2<F>>]) {
        let hdim = c.r.ncols();
        let rows = c.r.nrows();
        let hv = self.value(c.h);
        let hpv = self.value(c.hp);
        let mut dxp = Array2::zeros((rows, 3 * hdim));
        let mut dhp = Array2::zeros((rows, 3 * hdim));
        let mut dh = Array2::zeros((rows, hdim));
        let one = F::one();
        for b in 0..rows {
            let m = c.mask.as_ref().map_or(one, |m| m[b]);
            for k in 0..hdim {
                let go = g[[b, k]];
                if m == F::zero() {
                    dh[[b, k]] = go;
                    continue;
                }
                let (r, u, n) = (c.r[[b, k]], c.u[[b, k]], c.n[[b, k]]);
                let hprev = hv[[b, k]];
                dh[[b, k]] = go * u;
                let du = go * (hprev - n);
                let dn = go * (one - u);
                let dpre_n = dn * (one - n * n);
                let hpn = hpv[[b, 2 * hdim + k]];
                let dr = dpre_n * hpn;
                let dpre_r = dr * r * (one - r);
                let dpre_u = du * u * (one - u);
                dxp[[b, k]] = dpre_r;
                dxp[[b, hdim + k]] = dpre_u;
                dxp[[b, 2 * hdim + k]] = dpre_n;
                dhp[[b, k]] = dpre_r;
                dhp[[b, hdim + k]] = dpre_u;
                dhp[[b, 2 * hdim + k]] = dpre_n * r;
            }
        }
        let acc = |grads: &mut [Option<Array2<F>>], v: Var, d: Array2<F>| match &mut grads[v.0] {
            Some(existing) => *existing += &d,
            slot => *slot = Some(d),
        };
        acc(grads, c.xp, dxp);
        acc(grads, c.hp, dhp);
        acc(grads, c.h, dh);
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Array2<F>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros of `shape` when `v` did not reach the root.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Array2<F> {
        self.grads[v.0].take().unwrap_or_else(|| Array2::zeros(shape))
    }
}
