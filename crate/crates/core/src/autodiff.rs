//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! Every value on the tape is a `rows x cols` matrix (scalars are `1 x 1`).
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid reverse topological order. Reductions accumulate in `f64`.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNt(Var, Var),
    Add(Var, Var),
    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    AddRow(Var, Var),
    Scale(Var, f64),
    /// `a * s` with `s` a `1 x 1` node.
    MulScalar(Var, Var),
    Relu(Var),
    RowSoftmax(Var),
    Lookup {
        table: Var,
        rows: Vec<usize>,
    },
    MeanPoolRows {
        x: Var,
        mask: Vec<bool>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
    },
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node<F> {
    rows: usize,
    cols: usize,
    value: Vec<F>,
    op: Op,
}

/// A computation tape. Build it forward with the op methods, then call
/// [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Graph<F = f32> {
    nodes: Vec<Node<F>>,
    params: Vec<(Var, String)>,
}

/// Gradients of a scalar with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Grads<F> {
    grads: Vec<Vec<F>>,
}

impl<F: Real> Grads<F> {
    pub fn wrt(&self, v: Var) -> &[F] {
        &self.grads[v.0]
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {}x{} and {}x{}", a.0, a.1, b.0, b.1))
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<F>, op: Op) -> Result<Var> {
        debug_assert_eq!(rows * cols, value.len());
        if let Some(bad) = value.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at element {bad} of {op:?} output")));
        }
        self.nodes.push(Node { rows, cols, value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input. Gradients flow into it but are not collected.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<F>) -> Result<Var> {
        if rows * cols != value.len() {
            return Err(Error::Shape(format!("constant {rows}x{cols} given {} values", value.len())));
        }
        self.push(rows, cols, value, Op::Leaf)
    }

    /// Bind a named parameter from `store` as a leaf. Its gradient is added
    /// back into the store by [`Graph::backward_into`].
    pub fn param(&mut self, store: &ParamStore<F>, name: &str) -> Result<Var> {
        let t = store.value(name)?;
        let (rows, cols) = t.matrix_dims();
        let v = self.push(rows, cols, t.data().to_vec(), Op::Leaf)?;
        self.params.push((v, name.to_string()));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![F::zero(); m * n];
        let mut acc = vec![0f64; n];
        for i in 0..m {
            acc.iter_mut().for_each(|x| *x = 0.0);
            for p in 0..k {
                let x = av[i * k + p].as_f64();
                if x == 0.0 {
                    continue;
                }
                for (j, slot) in acc.iter_mut().enumerate() {
                    *slot += x * bv[p * n + j].as_f64();
                }
            }
            for j in 0..n {
                out[i * n + j] = F::from_f64(acc[j]);
            }
        }
        self.push(m, n, out, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul_nt", (m, k), (n, k2)));
        }
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bv[j * k..(j + 1) * k];
                let dot: f64 = ar.iter().zip(br).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
                out[i * n + j] = F::from_f64(dot);
            }
        }
        self.push(m, n, out, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da == db {
            let out = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(&x, &y)| x + y).collect();
            return self.push(da.0, da.1, out, Op::Add(a, b));
        }
        if db.0 == 1 && db.1 == da.1 {
            let bv = &self.nodes[b.0].value;
            let out = self.nodes[a.0].value.iter().enumerate().map(|(i, &x)| x + bv[i % da.1]).collect();
            return self.push(da.0, da.1, out, Op::AddRow(a, b));
        }
        Err(shape_err("add", da, db))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let (r, k) = self.dims(a);
        let cf = F::from_f64(c);
        let out = self.nodes[a.0].value.iter().map(|&x| x * cf).collect();
        self.push(r, k, out, Op::Scale(a, c))
    }

    /// Multiply every element of `a` by the `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.dims(s) != (1, 1) {
            return Err(shape_err("mul_scalar", self.dims(a), self.dims(s)));
        }
        let (r, k) = self.dims(a);
        let sv = self.nodes[s.0].value[0];
        let out = self.nodes[a.0].value.iter().map(|&x| x * sv).collect();
        self.push(r, k, out, Op::MulScalar(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (r, k) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|&x| x.max(F::zero())).collect();
        self.push(r, k, out, Op::Relu(a))
    }

    /// Numerically stable softmax along each row.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let (r, k) = self.dims(a);
        let av = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(r * k);
        for row in av.chunks(k.max(1)) {
            out.extend(softmax_f64(row).into_iter().map(F::from_f64));
        }
        self.push(r, k, out, Op::RowSoftmax(a))
    }

    /// Gather rows of `table`.
    pub fn embedding_lookup(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (n, k) = self.dims(table);
        if let Some(&bad) = rows.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("lookup row {bad} out of range for table of {n} rows")));
        }
        let tv = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(rows.len() * k);
        for &i in rows {
            out.extend_from_slice(&tv[i * k..(i + 1) * k]);
        }
        self.push(rows.len(), k, out, Op::Lookup { table, rows: rows.to_vec() })
    }

    /// Mean over the rows selected by `mask`, giving a single row.
    pub fn mean_pool_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, k) = self.dims(x);
        if mask.len() != r {
            return Err(Error::Shape(format!("mask of length {} for {r} rows", mask.len())));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Shape("mean_pool_rows: mask selects no rows".into()));
        }
        let xv = &self.nodes[x.0].value;
        let mut acc = vec![0f64; k];
        for (row, _) in xv.chunks(k).zip(mask).filter(|(_, &m)| m) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v.as_f64();
            }
        }
        let out = acc.into_iter().map(|a| F::from_f64(a / count as f64)).collect();
        self.push(1, k, out, Op::MeanPoolRows { x, mask: mask.to_vec() })
    }

    /// `-log softmax(logits)[target]` over all elements of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        if target >= lv.len() {
            return Err(Error::Shape(format!("target {target} out of range for {} logits", lv.len())));
        }
        let max = lv.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|x| (x.as_f64() - max).exp()).sum::<f64>().ln();
        let loss = lse - lv[target].as_f64();
        self.push(1, 1, vec![F::from_f64(loss)], Op::CrossEntropy { logits, target })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.nodes[a.0].value.iter().map(|x| x.as_f64()).sum();
        self.push(1, 1, vec![F::from_f64(s)], Op::Sum(a))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Grads<F>> {
        if self.dims(loss) != (1, 1) {
            let (r, c) = self.dims(loss);
            return Err(Error::Shape(format!("backward needs a scalar loss, got {r}x{c}")));
        }
        let mut grads: Vec<Vec<F>> = self.nodes.iter().map(|n| vec![F::zero(); n.value.len()]).collect();
        grads[loss.0][0] = F::one();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            if g.iter().all(|x| x.is_zero()) {
                grads[idx] = g;
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = g;
        }
        Ok(Grads { grads })
    }

    fn backprop_node(&self, node: &Node<F>, g: &[F], grads: &mut [Vec<F>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                // dA = G B^T
                for i in 0..m {
                    let gr = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let br = &bv[p * n..(p + 1) * n];
                        let s: f64 = gr.iter().zip(br).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
                        grads[a.0][i * k + p] = grads[a.0][i * k + p] + F::from_f64(s);
                    }
                }
                // dB = A^T G
                let mut acc = vec![0f64; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let x = av[i * k + p].as_f64();
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            acc[p * n + j] += x * g[i * n + j].as_f64();
                        }
                    }
                }
                for (dst, s) in grads[b.0].iter_mut().zip(acc) {
                    *dst = *dst + F::from_f64(s);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                // dA = G B
                let mut acc = vec![0f64; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j].as_f64();
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            acc[i * k + p] += gij * bv[j * k + p].as_f64();
                        }
                    }
                }
                for (dst, s) in grads[a.0].iter_mut().zip(acc) {
                    *dst = *dst + F::from_f64(s);
                }
                // dB = G^T A
                let mut acc = vec![0f64; n * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j].as_f64();
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            acc[j * k + p] += gij * av[i * k + p].as_f64();
                        }
                    }
                }
                for (dst, s) in grads[b.0].iter_mut().zip(acc) {
                    *dst = *dst + F::from_f64(s);
                }
            }
            Op::Add(a, b) => {
                for (dst, &x) in grads[a.0].iter_mut().zip(g) {
                    *dst = *dst + x;
                }
                for (dst, &x) in grads[b.0].iter_mut().zip(g) {
                    *dst = *dst + x;
                }
            }
            Op::AddRow(a, b) => {
                for (dst, &x) in grads[a.0].iter_mut().zip(g) {
                    *dst = *dst + x;
                }
                let mut acc = vec![0f64; cols];
                for (i, &x) in g.iter().enumerate() {
                    acc[i % cols] += x.as_f64();
                }
                for (dst, s) in grads[b.0].iter_mut().zip(acc) {
                    *dst = *dst + F::from_f64(s);
                }
            }
            Op::Scale(a, c) => {
                let cf = F::from_f64(*c);
                for (dst, &x) in grads[a.0].iter_mut().zip(g) {
                    *dst = *dst + x * cf;
                }
            }
            Op::MulScalar(a, s) => {
                let sv = self.nodes[s.0].value[0];
                let av = &self.nodes[a.0].value;
                let ds: f64 = av.iter().zip(g).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
                for (dst, &x) in grads[a.0].iter_mut().zip(g) {
                    *dst = *dst + x * sv;
                }
                grads[s.0][0] = grads[s.0][0] + F::from_f64(ds);
            }
            Op::Relu(a) => {
                let av = &self.nodes[a.0].value;
                for ((dst, &x), &inp) in grads[a.0].iter_mut().zip(g).zip(av) {
                    if inp > F::zero() {
                        *dst = *dst + x;
                    }
                }
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    for c in 0..cols {
                        let d = yr[c].as_f64() * (gr[c].as_f64() - dot);
                        let dst = &mut grads[a.0][r * cols + c];
                        *dst = *dst + F::from_f64(d);
                    }
                }
            }
            Op::Lookup { table, rows: idx } => {
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..cols {
                        let dst = &mut grads[table.0][i * cols + c];
                        *dst = *dst + g[r * cols + c];
                    }
                }
            }
            Op::MeanPoolRows { x, mask } => {
                let count = mask.iter().filter(|&&m| m).count() as f64;
                for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    for c in 0..cols {
                        let dst = &mut grads[x.0][r * cols + c];
                        *dst = *dst + F::from_f64(g[c].as_f64() / count);
                    }
                }
            }
            Op::CrossEntropy { logits, target } => {
                let lv = &self.nodes[logits.0].value;
                let p = softmax_f64(lv);
                let scale = g[0].as_f64();
                for (i, (dst, pi)) in grads[logits.0].iter_mut().zip(p).enumerate() {
                    let onehot = if i == *target { 1.0 } else { 0.0 };
                    *dst = *dst + F::from_f64(scale * (pi - onehot));
                }
            }
            Op::Sum(a) => {
                for dst in grads[a.0].iter_mut() {
                    *dst = *dst + g[0];
                }
            }
        }
    }

    /// Run [`Graph::backward`] and add parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<F>) -> Result<()> {
        let grads = self.backward(loss)?;
        for (v, name) in &self.params {
            let p = store.get_mut(name)?;
            for (dst, &x) in p.grad.data_mut().iter_mut().zip(grads.wrt(*v)) {
                *dst = *dst + x;
            }
        }
        Ok(())
    }
}

/// Stable softmax in `f64`.
pub(crate) fn softmax_f64<F: Real>(row: &[F]) -> Vec<f64> {
    let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x.as_f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::tensor::Tensor;

    #[test]
    fn relu_definition() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(1, 3, vec![0.0; 3]).unwrap();
        let y = g.row_softmax(x).unwrap();
        for &p in g.value(y) {
            assert!((p - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_on_large_logits() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(2, 3, vec![1000.0, 999.0, -1000.0, -5.0, 80.0, 3.0]).unwrap();
        let y = g.row_softmax(x).unwrap();
        for row in g.value(y).chunks(3) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn cross_entropy_matches_scalar_evaluation() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let l = g.cross_entropy(x, 2).unwrap();
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expected = -(3f64.exp() / z).ln();
        assert!((g.scalar(l) - expected).abs() < 1e-12);
        assert!((g.scalar(l) - 0.40760596444438).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(2, 3, vec![0.0; 6]).unwrap();
        let b = g.constant(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
        let c = g.constant(1, 2, vec![0.0; 2]).unwrap();
        assert!(matches!(g.add(a, c), Err(Error::Shape(_))));
        assert!(matches!(g.backward(a), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(1, 1, vec![f32::MAX]).unwrap();
        assert!(matches!(g.scale(a, 10.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn linear_gradient_is_input_broadcast() {
        // loss = sum(x W) with x fixed: dL/dW[p][j] = x[p].
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::new(vec![3, 2], vec![0.3, -1.0, 2.0, 0.5, 0.1, 0.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let x = g.constant(1, 3, vec![1.5, -2.0, 4.0]).unwrap();
        let w = g.param(&store, "w").unwrap();
        let y = g.matmul(x, w).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(w), &[1.5, 1.5, -2.0, -2.0, 4.0, 4.0]);
    }

    #[test]
    fn unreachable_parameter_has_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        store.insert("a", Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        store.insert("b", Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, "a").unwrap();
        let _b = g.param(&store, "b").unwrap();
        let l = g.sum(a).unwrap();
        g.backward_into(l, &mut store).unwrap();
        assert_eq!(store.get("a").unwrap().grad.data(), &[1.0, 1.0]);
        assert_eq!(store.get("b").unwrap().grad.data(), &[0.0, 0.0]);
    }

    fn toy_store(seed: u64) -> ParamStore<f64> {
        use rand::Rng as _;
        let mut rng = crate::rng::Rng::new(seed).stream(&[9]);
        let mut s = ParamStore::new();
        let mut add = |name: &str, shape: Vec<usize>| {
            let t = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
            s.insert(name, t).unwrap();
        };
        add("table", vec![5, 4]);
        add("w1", vec![4, 8]);
        add("b1", vec![1, 8]);
        add("w2", vec![8, 3]);
        add("s", vec![1, 1]);
        s
    }

    /// Exercises every op on one tape.
    fn every_op_loss(g: &mut Graph<f64>, s: &ParamStore<f64>) -> Result<Var> {
        let table = g.param(s, "table")?;
        let w1 = g.param(s, "w1")?;
        let b1 = g.param(s, "b1")?;
        let w2 = g.param(s, "w2")?;
        let sc = g.param(s, "s")?;
        let x = g.embedding_lookup(table, &[0, 3, 3, 1])?;
        let h = g.matmul(x, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h)?;
        let att = g.matmul_nt(x, x)?;
        let att = g.mul_scalar(att, sc)?;
        let att = g.scale(att, 0.5)?;
        let att = g.row_softmax(att)?;
        let mixed = g.matmul(att, h)?;
        let mixed = g.add(mixed, h)?;
        let pooled = g.mean_pool_rows(mixed, &[true, false, true, true])?;
        let logits = g.matmul(pooled, w2)?;
        g.cross_entropy(logits, 1)
    }

    #[test]
    fn every_op_passes_gradient_check() {
        let store = toy_store(11);
        let report = check_gradients(&store, 1e-3, every_op_loss).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.checked, 20 + 32 + 8 + 24 + 1);
    }
}
