//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so the node index order is a
//! topological order and the backward pass simply walks it in reverse.

use super::matrix::{matmul_a_bt_acc, matmul_at_b_acc};
use super::{Matrix, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// m×n plus a 1×n row broadcast over every row.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    LogSoftmax(NodeId),
    /// Same-padded temporal unfolding: row t holds rows t-k/2 .. t+k/2 of the source.
    Im2Col { src: NodeId, kernel: usize },
    /// Non-overlapping max pooling over rows; trailing rows are dropped.
    MaxPool { src: NodeId, argmax: Vec<usize> },
    Gather { table: NodeId, ids: Vec<usize> },
    /// Row `i * k + j` equals `a_i + b_j`.
    OuterAdd(NodeId, NodeId),
    SumAll(NodeId),
}

#[derive(Debug)]
struct Node<F> {
    value: Matrix<F>,
    op: Op,
}

/// A recorded computation.
#[derive(Debug, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

/// Per-node gradient accumulators produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Matrix<F>>>,
    shapes: Vec<(usize, usize)>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of node `id`; zero when the node had no downstream use.
    pub fn get(&self, id: NodeId) -> Matrix<F> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix<F>> {
        self.grads[id.0].take()
    }
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::usage(what()))
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<F> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Matrix<F>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix<F>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        check(self.shape(a) == self.shape(b), || {
            format!("add shape mismatch {:?} vs {:?}", self.shape(a), self.shape(b))
        })?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        check(self.shape(row) == (1, c), || {
            format!("row broadcast mismatch {:?} vs {:?}", (r, c), self.shape(row))
        })?;
        let mut v = self.value(a).clone();
        let b = self.value(row).row(0).to_vec();
        for i in 0..r {
            for (x, &y) in v.row_mut(i).iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        check(self.shape(a) == self.shape(b), || {
            format!("mul shape mismatch {:?} vs {:?}", self.shape(a), self.shape(b))
        })?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let v = Matrix::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(F::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(F::zero()));
        self.push(v, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        check(!parts.is_empty(), || "concat of nothing".into())?;
        let rows = self.shape(parts[0]).0;
        check(parts.iter().all(|&p| self.shape(p).0 == rows), || {
            "concat_cols row mismatch".into()
        })?;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                v.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        check(!parts.is_empty(), || "concat of nothing".into())?;
        let cols = self.shape(parts[0]).1;
        check(parts.iter().all(|&p| self.shape(p).1 == cols), || {
            "concat_rows column mismatch".into()
        })?;
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let v = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        check(start <= end && end <= cols, || {
            format!("column slice {start}..{end} out of 0..{cols}")
        })?;
        let src = self.value(a);
        let mut v = Matrix::zeros(rows, end - start);
        for r in 0..rows {
            v.row_mut(r).copy_from_slice(&src.row(r)[start..end]);
        }
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        check(start <= end && end <= rows, || {
            format!("row slice {start}..{end} out of 0..{rows}")
        })?;
        let data = self.value(a).data()[start * cols..end * cols].to_vec();
        let v = Matrix::from_vec(end - start, cols, data)?;
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            super::logspace::log_softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::LogSoftmax(a))
    }

    pub fn im2col(&mut self, src: NodeId, kernel: usize) -> Result<NodeId> {
        check(kernel >= 1, || "kernel size must be positive".into())?;
        let x = self.value(src);
        let (t, d) = x.shape();
        let left = (kernel - 1) / 2;
        let mut v = Matrix::zeros(t, kernel * d);
        for row in 0..t {
            for j in 0..kernel {
                let s = row as isize + j as isize - left as isize;
                if s >= 0 && (s as usize) < t {
                    v.row_mut(row)[j * d..(j + 1) * d].copy_from_slice(x.row(s as usize));
                }
            }
        }
        Ok(self.push(v, Op::Im2Col { src, kernel }))
    }

    pub fn max_pool(&mut self, src: NodeId, size: usize) -> Result<NodeId> {
        check(size >= 1, || "pool size must be positive".into())?;
        let x = self.value(src);
        let (t, d) = x.shape();
        let out_t = t / size;
        check(out_t >= 1, || format!("{t} rows cannot be pooled by {size}"))?;
        let mut v = Matrix::zeros(out_t, d);
        let mut argmax = vec![0usize; out_t * d];
        for o in 0..out_t {
            for c in 0..d {
                let mut best = o * size;
                let mut best_v = x.get(best, c);
                for r in o * size + 1..(o + 1) * size {
                    let xv = x.get(r, c);
                    if xv > best_v {
                        best = r;
                        best_v = xv;
                    }
                }
                v.set(o, c, best_v);
                argmax[o * d + c] = best;
            }
        }
        Ok(self.push(v, Op::MaxPool { src, argmax }))
    }

    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.shape(table);
        check(ids.iter().all(|&i| i < rows), || "gather index out of range".into())?;
        let t = self.value(table);
        let mut v = Matrix::zeros(ids.len(), cols);
        for (r, &i) in ids.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(i));
        }
        Ok(self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn outer_add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape(a);
        let (k, n2) = self.shape(b);
        check(n == n2, || "outer_add width mismatch".into())?;
        let va = self.value(a);
        let vb = self.value(b);
        let mut v = Matrix::zeros(m * k, n);
        for i in 0..m {
            let ar = va.row(i);
            for j in 0..k {
                let br = vb.row(j);
                for ((o, &x), &y) in v.row_mut(i * k + j).iter_mut().zip(ar).zip(br) {
                    *o = x + y;
                }
            }
        }
        Ok(self.push(v, Op::OuterAdd(a, b)))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::SumAll(a))
    }

    /// Propagates the seeded output gradients back to every node.
    pub fn backward(&self, seeds: Vec<(NodeId, Matrix<F>)>) -> Result<Gradients<F>> {
        let mut grads: Vec<Option<Matrix<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            check(g.shape() == self.shape(id), || {
                format!("seed shape {:?} does not match node {:?}", g.shape(), self.shape(id))
            })?;
            accumulate(&mut grads, id, g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &Matrix<F>, grads: &mut [Option<Matrix<F>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let ga = slot(grads, *a, va.shape());
                matmul_a_bt_acc(g, vb, ga);
                let gb = slot(grads, *b, vb.shape());
                matmul_at_b_acc(va, g, gb);
            }
            Op::Add(a, b) => {
                slot(grads, *a, g.shape()).add_assign(g);
                slot(grads, *b, g.shape()).add_assign(g);
            }
            Op::AddRow(a, row) => {
                slot(grads, *a, g.shape()).add_assign(g);
                let gr = slot(grads, *row, (1, g.cols()));
                for r in 0..g.rows() {
                    for (o, &x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let ga = slot(grads, *a, g.shape());
                for ((o, &gv), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                    *o += gv * y;
                }
                let gb = slot(grads, *b, g.shape());
                for ((o, &gv), &x) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                    *o += gv * x;
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let ga = slot(grads, *a, g.shape());
                for ((o, &gv), &yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * (F::one() - yv * yv);
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let ga = slot(grads, *a, g.shape());
                for ((o, &gv), &yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * yv * (F::one() - yv);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let ga = slot(grads, *a, g.shape());
                for ((o, &gv), &xv) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                    if xv > F::zero() {
                        *o += gv;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let shape = self.shape(p);
                    let gp = slot(grads, p, shape);
                    for r in 0..shape.0 {
                        for (o, &x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + shape.1]) {
                            *o += x;
                        }
                    }
                    off += shape.1;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let shape = self.shape(p);
                    let n = shape.0 * shape.1;
                    let gp = slot(grads, p, shape);
                    for (o, &x) in gp.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                        *o += x;
                    }
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                let ga = slot(grads, *a, self.shape(*a));
                for r in 0..g.rows() {
                    for (o, &x) in ga.row_mut(r)[*start..].iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let shape = self.shape(*a);
                let ga = slot(grads, *a, shape);
                let off = start * shape.1;
                for (o, &x) in ga.data_mut()[off..].iter_mut().zip(g.data()) {
                    *o += x;
                }
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let ga = slot(grads, *a, g.shape());
                for r in 0..g.rows() {
                    let gs: F = g.row(r).iter().copied().sum();
                    for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o += gv - yv.exp() * gs;
                    }
                }
            }
            Op::Im2Col { src, kernel } => {
                let (t, d) = self.shape(*src);
                let left = (kernel - 1) / 2;
                let gs = slot(grads, *src, (t, d));
                for row in 0..t {
                    for j in 0..*kernel {
                        let s = row as isize + j as isize - left as isize;
                        if s >= 0 && (s as usize) < t {
                            let part = &g.row(row)[j * d..(j + 1) * d];
                            for (o, &x) in gs.row_mut(s as usize).iter_mut().zip(part) {
                                *o += x;
                            }
                        }
                    }
                }
            }
            Op::MaxPool { src, argmax } => {
                let shape = self.shape(*src);
                let d = shape.1;
                let gs = slot(grads, *src, shape);
                for (i, &gv) in g.data().iter().enumerate() {
                    let c = i % d;
                    let r = argmax[i];
                    let cur = gs.get(r, c);
                    gs.set(r, c, cur + gv);
                }
            }
            Op::Gather { table, ids } => {
                let gt = slot(grads, *table, self.shape(*table));
                for (r, &i) in ids.iter().enumerate() {
                    for (o, &x) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::OuterAdd(a, b) => {
                let (m, n) = self.shape(*a);
                let k = self.shape(*b).0;
                {
                    let ga = slot(grads, *a, (m, n));
                    for i in 0..m {
                        for j in 0..k {
                            for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(i * k + j)) {
                                *o += x;
                            }
                        }
                    }
                }
                let gb = slot(grads, *b, (k, n));
                for i in 0..m {
                    for j in 0..k {
                        for (o, &x) in gb.row_mut(j).iter_mut().zip(g.row(i * k + j)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let gv = g.get(0, 0);
                let ga = slot(grads, *a, self.shape(*a));
                for o in ga.data_mut() {
                    *o += gv;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn slot<F: Real>(
    grads: &mut [Option<Matrix<F>>],
    id: NodeId,
    shape: (usize, usize),
) -> &mut Matrix<F> {
    grads[id.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn accumulate<F: Real>(grads: &mut [Option<Matrix<F>>], id: NodeId, g: Matrix<F>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        empty => *empty = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of `sum(w ⊙ f(leaves))` for a graph builder.
    fn fd_check(
        shapes: &[(usize, usize)],
        seed: u64,
        build: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leaves: Vec<Matrix<f64>> = shapes
            .iter()
            .map(|&(r, c)| Matrix::uniform(r, c, 1.0, &mut rng))
            .collect();
        let eval = |vals: &[Matrix<f64>]| -> (Graph<f64>, NodeId, Vec<NodeId>) {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = vals.iter().map(|m| g.leaf(m.clone())).collect();
            let out = build(&mut g, &ids);
            (g, out, ids)
        };
        let (g0, out0, _) = eval(&leaves);
        let weights = Matrix::uniform(g0.shape(out0).0, g0.shape(out0).1, 1.0, &mut rng);
        let objective = |vals: &[Matrix<f64>]| {
            let (g, out, _) = eval(vals);
            g.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (g, out, ids) = eval(&leaves);
        let grads = g.backward(vec![(out, weights.clone())]).unwrap();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for (li, id) in ids.iter().enumerate() {
            let analytic = grads.get(*id);
            for k in 0..leaves[li].len() {
                let mut plus = leaves.clone();
                plus[li].data_mut()[k] += eps;
                let mut minus = leaves.clone();
                minus[li].data_mut()[k] -= eps;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                let a = analytic.data()[k];
                worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
            }
        }
        worst
    }

    #[test]
    fn matmul_add_row_gradients() {
        let err = fd_check(&[(3, 4), (4, 2), (1, 2)], 1, |g, l| {
            let m = g.matmul(l[0], l[1]).unwrap();
            g.add_row(m, l[2]).unwrap()
        });
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn elementwise_gradients() {
        let err = fd_check(&[(2, 3), (2, 3)], 2, |g, l| {
            let s = g.add(l[0], l[1]).unwrap();
            let t = g.tanh(s);
            let sg = g.sigmoid(l[1]);
            let r = g.relu(l[0]);
            let p = g.mul(t, sg).unwrap();
            g.add(p, r).unwrap()
        });
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn structural_gradients() {
        let err = fd_check(&[(3, 2), (3, 3), (4, 5)], 3, |g, l| {
            let c = g.concat_cols(&[l[0], l[1]]).unwrap();
            let s = g.slice_cols(c, 1, 4).unwrap();
            let r = g.slice_rows(s, 1, 3).unwrap();
            let rows = g.concat_rows(&[r, s]).unwrap();
            let ls = g.log_softmax(rows);
            let gathered = g.gather(l[2], &[3, 0, 3]).unwrap();
            let gs = g.slice_cols(gathered, 0, 3).unwrap();
            let o = g.outer_add(gs, ls).unwrap();
            g.sum_all(o)
        });
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn conv_pool_gradients() {
        let err = fd_check(&[(9, 3), (15, 4)], 4, |g, l| {
            let cols = g.im2col(l[0], 5).unwrap();
            let y = g.matmul(cols, l[1]).unwrap();
            g.max_pool(y, 2).unwrap()
        });
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn unused_node_has_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Matrix::filled(2, 2, 1.0));
        let unused = g.leaf(Matrix::filled(3, 1, 2.0));
        let s = g.sum_all(a);
        let grads = g.backward(vec![(s, Matrix::filled(1, 1, 1.0))]).unwrap();
        assert_eq!(grads.get(unused), Matrix::zeros(3, 1));
        assert_eq!(grads.get(a), Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn max_pool_drops_remainder() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Matrix::zeros(33, 2));
        let p = g.max_pool(a, 4).unwrap();
        assert_eq!(g.shape(p), (8, 2));
    }
}
