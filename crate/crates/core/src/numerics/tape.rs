//! Reverse-mode gradient tape.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep is a single reverse pass.

use super::ops::{
    gelu, gelu_grad, layer_norm_row, matmul_into, matmul_nt_into, matmul_tn_into, softmax_in_place,
};
use super::{NumericsError, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    AddConst(Var),
    Scale(Var, F),
    LayerNormRows {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Gelu(Var),
    SoftmaxRows(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    CrossEntropySum {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
    params: Vec<Var>,
}

/// Gradients for every parameter registered on the tape, in registration order.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    params: Vec<Var>,
    grads: Vec<Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.params
            .iter()
            .position(|&p| p == v)
            .map(|i| &self.grads[i])
    }

    pub fn into_vec(self) -> Vec<Tensor<F>> {
        self.grads
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push(v);
        v
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (x.dims2(), y.dims2());
        if k != k2 || y.shape().len() != 2 {
            return Err(shape_err("matmul", x.shape(), y.shape()));
        }
        let mut out = vec![F::zero(); m * n];
        matmul_into(x.data(), y.data(), &mut out, m, k, n);
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        let ((m, k), (n, k2)) = (x.dims2(), y.dims2());
        if k != k2 {
            return Err(shape_err("matmul_nt", x.shape(), y.shape()));
        }
        let mut out = vec![F::zero(); m * n];
        matmul_nt_into(x.data(), y.data(), &mut out, m, k, n);
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (m, n) = xv.dims2();
        if bv.len() != n {
            return Err(shape_err("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let shape = if xv.shape().len() == 1 { vec![n] } else { vec![m, n] };
        let rg = self.grad_of(&[x, bias]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddRow(x, bias), rg))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x.shape(), y.shape()));
        }
        let out: Vec<F> = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let shape = x.shape().to_vec();
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Add(a, b), rg))
    }

    /// Adds a fixed offset; the offset is not differentiated.
    pub fn add_const(&mut self, x: Var, offset: &Tensor<F>) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if xv.shape() != offset.shape() {
            return Err(shape_err("add_const", xv.shape(), offset.shape()));
        }
        let out: Vec<F> = xv.data().iter().zip(offset.data()).map(|(&p, &q)| p + q).collect();
        let shape = xv.shape().to_vec();
        let rg = self.grad_of(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddConst(x), rg))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.grad_of(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Row-wise layer normalisation.
    pub fn layer_norm_rows(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        eps: F,
    ) -> Result<Var, NumericsError> {
        let (xv, g, s) = (self.value(x), self.value(gain), self.value(shift));
        let (m, n) = xv.dims2();
        if g.len() != n || s.len() != n {
            return Err(shape_err("layer_norm", xv.shape(), g.shape()));
        }
        let mut out = vec![F::zero(); m * n];
        let mut xhat = vec![F::zero(); m * n];
        let mut inv_std = Vec::with_capacity(m);
        let ones = vec![F::one(); n];
        let zeros = vec![F::zero(); n];
        for r in 0..m {
            let row = &xv.data()[r * n..(r + 1) * n];
            let is = layer_norm_row(row, &ones, &zeros, eps, &mut xhat[r * n..(r + 1) * n]);
            inv_std.push(is);
            for c in 0..n {
                out[r * n + c] = g.data()[c] * xhat[r * n + c] + s.data()[c];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.grad_of(&[x, gain, shift]);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNormRows {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let rg = self.grad_of(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let (_, n) = out.dims2();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.grad_of(&[x]);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        if start + len > n || len == 0 {
            return Err(NumericsError::Shape(format!(
                "slice {start}..{} of {n} columns",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&xv.data()[r * n + start..r * n + start + len]);
        }
        let rg = self.grad_of(&[x]);
        Ok(self.push(Tensor::new(&[m, len], out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let m = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dims2().1).collect();
        if parts.iter().any(|&p| self.value(p).dims2().0 != m) {
            return Err(NumericsError::Shape("concat_cols row mismatch".into()));
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.grad_of(parts);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.grad_of(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Sum over rows of `-log softmax(row)[target]`.
    pub fn cross_entropy_sum(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        let (m, n) = lv.dims2();
        if targets.len() != m {
            return Err(NumericsError::Shape(format!(
                "{} targets for {m} rows",
                targets.len()
            )));
        }
        let mut probs = lv.data().to_vec();
        let mut total = F::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(NumericsError::Contract(format!(
                    "target {t} out of range for {n} logits"
                )));
            }
            let row = &lv.data()[r * n..(r + 1) * n];
            total += super::ops::log_sum_exp(row) - row[t];
            softmax_in_place(&mut probs[r * n..(r + 1) * n]);
        }
        let rg = self.grad_of(&[logits]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropySum {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Parameters the loss does not reach
    /// get zero gradients.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<F>, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::Contract(format!(
                "gradient seed must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = self
            .params
            .iter()
            .map(|&p| {
                grads
                    .get(p.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Tensor::zeros(self.value(p).shape()))
            })
            .collect();
        Ok(Gradients {
            params: self.params.clone(),
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, f: impl FnOnce(&mut [F])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()));
        f(slot.data_mut());
    }

    fn backward_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ((m, k), (_, n)) = (av.dims2(), bv.dims2());
                self.accumulate(grads, *a, |da| matmul_nt_into(gd, bv.data(), da, m, n, k));
                self.accumulate(grads, *b, |db| matmul_tn_into(av.data(), gd, db, m, k, n));
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ((m, k), (n, _)) = (av.dims2(), bv.dims2());
                self.accumulate(grads, *a, |da| matmul_into(gd, bv.data(), da, m, n, k));
                self.accumulate(grads, *b, |db| matmul_tn_into(gd, av.data(), db, m, n, k));
            }
            Op::AddRow(x, b) => {
                let n = self.value(*b).len();
                self.accumulate(grads, *x, |dx| add_into(dx, gd));
                self.accumulate(grads, *b, |db| {
                    for row in gd.chunks(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |da| add_into(da, gd));
                self.accumulate(grads, *b, |db| add_into(db, gd));
            }
            Op::AddConst(x) => self.accumulate(grads, *x, |dx| add_into(dx, gd)),
            Op::Scale(x, f) => self.accumulate(grads, *x, |dx| {
                for (d, &gv) in dx.iter_mut().zip(gd) {
                    *d += gv * *f;
                }
            }),
            Op::LayerNormRows {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let n = gv.len();
                self.accumulate(grads, *gain, |dg| {
                    for (row_g, row_h) in gd.chunks(n).zip(xhat.chunks(n)) {
                        for c in 0..n {
                            dg[c] += row_g[c] * row_h[c];
                        }
                    }
                });
                self.accumulate(grads, *shift, |ds| {
                    for row in gd.chunks(n) {
                        add_into(ds, row);
                    }
                });
                self.accumulate(grads, *x, |dx| {
                    let nf = F::of(n as f64);
                    for (r, (row_g, row_h)) in gd.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut mean_d = F::zero();
                        let mut mean_dh = F::zero();
                        for c in 0..n {
                            let d = row_g[c] * gv[c];
                            mean_d += d;
                            mean_dh += d * row_h[c];
                        }
                        mean_d = mean_d / nf;
                        mean_dh = mean_dh / nf;
                        for c in 0..n {
                            let d = row_g[c] * gv[c];
                            dx[r * n + c] += inv_std[r] * (d - mean_d - row_h[c] * mean_dh);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += gd[i] * gelu_grad(xv[i]);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let n = node.value.dims2().1;
                self.accumulate(grads, *x, |dx| {
                    for r in 0..y.len() / n {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &gd[r * n..(r + 1) * n];
                        let dotp: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for c in 0..n {
                            dx[r * n + c] += yr[c] * (gr[c] - dotp);
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (m, w) = node.value.dims2();
                let n = self.value(*x).dims2().1;
                self.accumulate(grads, *x, |dx| {
                    for r in 0..m {
                        add_into(&mut dx[r * n + start..r * n + start + w], &gd[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, n) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    self.accumulate(grads, p, |dp| {
                        for r in 0..m {
                            add_into(&mut dp[r * w..(r + 1) * w], &gd[r * n + offset..r * n + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Sum(x) => {
                let g0 = gd[0];
                self.accumulate(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += g0));
            }
            Op::CrossEntropySum {
                logits,
                targets,
                probs,
            } => {
                let g0 = gd[0];
                let n = self.value(*logits).dims2().1;
                self.accumulate(grads, *logits, |dl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..n {
                            let onehot = if c == t { F::one() } else { F::zero() };
                            dl[r * n + c] += g0 * (probs[r * n + c] - onehot);
                        }
                    }
                });
            }
        }
    }
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference check of every parameter entry. `build` records a
    /// scalar loss from the given parameter vars.
    fn check<B>(inputs: Vec<Tensor<f64>>, build: B) -> f64
    where
        B: Fn(&mut Tape<f64>, &[Var]) -> Var,
    {
        let eval = |values: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
            let loss = build(&mut tape, &vars);
            (tape.value(loss).data()[0], tape.gradients(loss).unwrap().into_vec())
        };
        let (_, analytic) = eval(&inputs);
        let h = 1e-4;
        let mut worst = 0.0f64;
        for p in 0..inputs.len() {
            for i in 0..inputs[p].len() {
                let mut plus = inputs.clone();
                plus[p].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[p].data_mut()[i] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = analytic[p].data()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::full(&[3, 2], 0.5));
        let loss = tape.sum(w);
        let g = tape.gradients(loss).unwrap();
        assert!(g.get(w).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::full(&[2], 2.0));
        let unused = tape.param(Tensor::full(&[4], 3.0));
        let loss = tape.sum(w);
        let g = tape.gradients(loss).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_seed_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.gradients(w), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn affine_cross_entropy_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![random(&[3, 4], &mut rng), random(&[4, 5], &mut rng), random(&[5], &mut rng)];
        let worst = check(inputs, |t, v| {
            let y = t.affine(v[0], v[1], v[2]).unwrap();
            t.cross_entropy_sum(y, &[1, 4, 0]).unwrap()
        });
        assert!(worst <= 1e-5, "relative error {worst}");
    }

    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..8 {
            let inputs = vec![
                random(&[4, 6], &mut rng),
                random(&[6], &mut rng),
                random(&[6], &mut rng),
                random(&[5, 6], &mut rng),
                random(&[4, 4], &mut rng),
            ];
            let worst = check(inputs, |t, v| {
                let ln = t.layer_norm_rows(v[0], v[1], v[2], 1e-5).unwrap();
                let g = t.gelu(ln);
                let att = t.matmul_nt(g, v[3]).unwrap();
                let left = t.slice_cols(att, 0, 2).unwrap();
                let right = t.slice_cols(att, 2, 3).unwrap();
                let cat = t.concat_cols(&[right, left]).unwrap();
                let sm = t.softmax_rows(cat);
                let mixed = t.matmul(v[4], sm).unwrap();
                let scaled = t.scale(mixed, 0.7);
                let shifted = t.add_const(scaled, &Tensor::full(&[4, 5], 0.25)).unwrap();
                let both = t.add(shifted, mixed).unwrap();
                let ce = t.cross_entropy_sum(both, &[0, 3, 2, 4]).unwrap();
                let s = t.sum(sm);
                t.add(ce, s).unwrap()
            });
            assert!(worst <= 1e-5, "trial {trial}: relative error {worst}");
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut tape = Tape::<f32>::new();
        let l = tape.param(Tensor::zeros(&[2, 3]));
        assert!(tape.cross_entropy_sum(l, &[0, 3]).is_err());
    }
}
