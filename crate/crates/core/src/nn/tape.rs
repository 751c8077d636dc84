//! Reverse-mode automatic differentiation over 2-D matrices.
//!
//! A [`Tape`] records one forward pass. Parameters are borrowed from a slice
//! of matrices and never copied; their gradients are accumulated into a
//! caller-provided buffer so that one buffer can collect a whole batch.

use super::tensor::{dot, Matrix};

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    MeanRows(NodeId),
    Gather(NodeId, Vec<usize>),
    BagMean(NodeId, Vec<Vec<usize>>),
}

struct Node {
    op: Op,
    value: Option<Matrix>,
}

pub struct Tape<'p> {
    params: &'p [Matrix],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Matrix]) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(128),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        match (&self.nodes[id].op, &self.nodes[id].value) {
            (Op::Param(i), _) => &self.params[*i],
            (_, Some(v)) => v,
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
        });
        self.nodes.len() - 1
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(Op::MatMulNt(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    /// Adds the single row `b` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bias = self.value(b);
        debug_assert_eq!(bias.rows, 1);
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&bias.data) {
                *x += y;
            }
        }
        self.push(Op::AddRow(a, b), v)
    }

    /// `x · W + b`
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let data = x
            .data
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
            .collect();
        let v = Matrix {
            rows: x.rows,
            cols: x.cols,
            data,
        };
        self.push(Op::Gelu(a), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let cols = xv.cols;
        let mut xhat = Matrix::zeros(xv.rows, cols);
        let mut out = Matrix::zeros(xv.rows, cols);
        let mut rstd = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat.set(r, c, h);
                out.set(r, c, h * g.data[c] + b.data[c]);
            }
        }
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            out,
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let x = self.value(a);
        let mut v = Matrix::zeros(x.rows, width);
        for r in 0..x.rows {
            v.row_mut(r)
                .copy_from_slice(&x.row(r)[start..start + width]);
        }
        self.push(Op::SliceCols(a, start), v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                v.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, count: usize) -> NodeId {
        let x = self.value(a);
        let v = Matrix {
            rows: count,
            cols: x.cols,
            data: x.data[start * x.cols..(start + count) * x.cols].to_vec(),
        };
        self.push(Op::SliceRows(a, start), v)
    }

    /// Column means as a single row.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = Matrix::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, &y) in v.data.iter_mut().zip(x.row(r)) {
                *o += y;
            }
        }
        let n = x.rows as f64;
        for o in &mut v.data {
            *o /= n;
        }
        self.push(Op::MeanRows(a), v)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Matrix::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(Op::Gather(table, ids.to_vec()), v)
    }

    /// One output row per bag: the mean of the selected `table` rows.
    pub fn bag_mean(&mut self, table: NodeId, bags: Vec<Vec<usize>>) -> NodeId {
        let t = self.value(table);
        let mut v = Matrix::zeros(bags.len(), t.cols);
        for (r, bag) in bags.iter().enumerate() {
            let out = v.row_mut(r);
            for &id in bag {
                for (o, &x) in out.iter_mut().zip(t.row(id)) {
                    *o += x;
                }
            }
            let n = bag.len().max(1) as f64;
            for o in out.iter_mut() {
                *o /= n;
            }
        }
        self.push(Op::BagMean(table, bags), v)
    }

    /// Back-propagates `seed` (the gradient of the loss with respect to
    /// `root`). Parameter gradients are added into `param_grads`; the returned
    /// vector holds the gradient of every non-parameter node that received one.
    pub fn backward(
        &self,
        root: NodeId,
        seed: Matrix,
        param_grads: &mut [Matrix],
    ) -> Vec<Option<Matrix>> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(seed);

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input => {
                    grads[id] = Some(g);
                }
                Op::Param(i) => {
                    param_grads[*i].add_assign(&g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b));
                    let gb = self.value(*a).matmul_tn(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    // out = A Bᵀ: dA = G B, dB = Gᵀ A
                    let ga = g.matmul(self.value(*b));
                    let gb = g.matmul_tn(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, &x) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, g.scale(*s));
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (gv, &x) in ga.data.iter_mut().zip(&x.data) {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *gv *= 0.5 * (1.0 + t) + 0.5 * x * dt;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let p = self.value(id);
                    let mut ga = g;
                    for r in 0..p.rows {
                        let pr = p.row(r);
                        let inner = dot(ga.row(r), pr);
                        for (gv, &pv) in ga.row_mut(r).iter_mut().zip(pr) {
                            *gv = pv * (*gv - inner);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gam = self.value(*gamma);
                    let cols = g.cols;
                    let mut gg = Matrix::zeros(1, cols);
                    let mut gbeta = Matrix::zeros(1, cols);
                    let mut gx = Matrix::zeros(g.rows, cols);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..g.rows {
                        let (gr, hr) = (g.row(r), xhat.row(r));
                        for c in 0..cols {
                            gg.data[c] += gr[c] * hr[c];
                            gbeta.data[c] += gr[c];
                            dxhat[c] = gr[c] * gam.data[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dh = dot(&dxhat, hr) / cols as f64;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            out[c] = rstd[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gbeta);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows, src.cols);
                    for r in 0..g.rows {
                        ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows, src.cols);
                    ga.data[start * src.cols..(start + g.rows) * src.cols]
                        .copy_from_slice(&g.data);
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let n = src.rows as f64;
                    let mut ga = Matrix::zeros(src.rows, src.cols);
                    for r in 0..src.rows {
                        for (o, &x) in ga.row_mut(r).iter_mut().zip(&g.data) {
                            *o = x / n;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather(table, ids) => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows, t.cols);
                    for (r, &i) in ids.iter().enumerate() {
                        for (o, &x) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::BagMean(table, bags) => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows, t.cols);
                    for (r, bag) in bags.iter().enumerate() {
                        let n = bag.len().max(1) as f64;
                        for &i in bag {
                            for (o, &x) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                                *o += x / n;
                            }
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `sum(out ⊙ w)` with respect to every input entry.
    fn check<F>(inputs: Vec<Matrix>, build: F)
    where
        F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    {
        let run = |xs: &[Matrix]| -> (f64, Vec<Matrix>) {
            let mut tape = Tape::new(&[]);
            let ids: Vec<_> = xs.iter().map(|x| tape.input(x.clone())).collect();
            let out = build(&mut tape, &ids);
            let v = tape.value(out).clone();
            // fixed, non-uniform output weighting
            let w: Vec<f64> = (0..v.data.len()).map(|i| ((i * 7 % 5) as f64) - 1.7).collect();
            let loss = dot(&v.data, &w);
            let seed = Matrix::from_vec(v.rows, v.cols, w).unwrap();
            let grads = tape.backward(out, seed, &mut []);
            let g = ids
                .iter()
                .zip(xs)
                .map(|(&i, x)| grads[i].clone().unwrap_or_else(|| Matrix::zeros(x.rows, x.cols)))
                .collect();
            (loss, g)
        };
        let (_, analytic) = run(&inputs);
        let eps = 1e-6;
        for (k, x) in inputs.iter().enumerate() {
            for j in 0..x.data.len() {
                let mut plus = inputs.clone();
                plus[k].data[j] += eps;
                let mut minus = inputs.clone();
                minus[k].data[j] -= eps;
                let numeric = (run(&plus).0 - run(&minus).0) / (2.0 * eps);
                let a = analytic[k].data[j];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                    "input {k} entry {j}: analytic {a}, numeric {numeric}"
                );
            }
        }
    }

    fn mat(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_grads() {
        check(vec![mat(3, 4, 1), mat(4, 2, 2)], |t, x| t.matmul(x[0], x[1]));
        check(vec![mat(3, 4, 3), mat(5, 4, 4)], |t, x| t.matmul_nt(x[0], x[1]));
    }

    #[test]
    fn elementwise_grads() {
        check(vec![mat(3, 4, 5), mat(1, 4, 6)], |t, x| t.add_row(x[0], x[1]));
        check(vec![mat(3, 4, 7)], |t, x| t.gelu(x[0]));
        check(vec![mat(3, 4, 8)], |t, x| t.softmax_rows(x[0]));
        check(vec![mat(2, 3, 9), mat(2, 3, 10)], |t, x| {
            let s = t.add(x[0], x[1]);
            t.scale(s, -0.3)
        });
    }

    #[test]
    fn layer_norm_grads() {
        check(vec![mat(3, 5, 11), mat(1, 5, 12), mat(1, 5, 13)], |t, x| {
            t.layer_norm(x[0], x[1], x[2])
        });
    }

    #[test]
    fn structural_grads() {
        check(vec![mat(3, 6, 14)], |t, x| t.slice_cols(x[0], 2, 3));
        check(vec![mat(3, 2, 15), mat(3, 3, 16)], |t, x| t.concat_cols(&[x[0], x[1], x[0]]));
        check(vec![mat(5, 2, 17)], |t, x| t.slice_rows(x[0], 1, 3));
        check(vec![mat(4, 3, 18)], |t, x| t.mean_rows(x[0]));
        check(vec![mat(6, 3, 19)], |t, x| t.gather(x[0], &[2, 0, 2, 5]));
        check(vec![mat(6, 3, 20)], |t, x| t.bag_mean(x[0], vec![vec![1, 1, 4], vec![0], vec![5, 3]]));
    }

    #[test]
    fn parameters_accumulate_into_buffer() {
        let params = vec![mat(2, 2, 21)];
        let mut tape = Tape::new(&params);
        let p = tape.param(0);
        let x = tape.input(mat(1, 2, 22));
        let y = tape.matmul(x, p);
        let y2 = tape.matmul(x, p);
        let out = tape.add(y, y2);
        let mut buf = vec![Matrix::zeros(2, 2)];
        tape.backward(out, Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap(), &mut buf);
        let xv = tape.value(x).clone();
        for r in 0..2 {
            for c in 0..2 {
                assert!((buf[0].get(r, c) - 2.0 * xv.data[r]).abs() < 1e-12);
            }
        }
    }
}
