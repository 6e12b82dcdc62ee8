//! Define-by-run reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. Nodes that do not
//! depend on any leaf are marked as constants and skipped during the
//! backward sweep.

use super::tensor::Tensor;
use crate::error::{MemsimError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sin(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    /// Forward value supplied by the caller, identity backward.
    StraightThrough(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every tracked node after a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node { op, value, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push_checked(&mut self, op: Op, value: Tensor, inputs: &[Var], name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        Ok(self.push(op, value, tracked))
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push_checked(Op::MatMul(a, b), v, &[a, b], "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push_checked(Op::Add(a, b), v, &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push_checked(Op::Sub(a, b), v, &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        self.push_checked(Op::Mul(a, b), v, &[a, b], "mul")
    }

    /// Matrix plus a row vector broadcast over rows.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let v = self.value(m).add_row(self.value(row))?;
        self.push_checked(Op::AddRow(m, row), v, &[m, row], "add_row")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).scale(c);
        self.push_checked(Op::Scale(a, c), v, &[a], "scale")
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::sin);
        self.push_checked(Op::Sin(a), v, &[a], "sin")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::abs);
        self.push_checked(Op::Abs(a), v, &[a], "abs")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push_checked(Op::Square(a), v, &[a], "square")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push_checked(Op::Sum(a), v, &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(MemsimError::dim("mean", "empty tensor"));
        }
        let v = Tensor::scalar(self.value(a).mean());
        self.push_checked(Op::Mean(a), v, &[a], "mean")
    }

    /// Records `forward` as the value of `f(a)` while passing gradients
    /// through unchanged. Used for converter quantization and other
    /// forward-only non-idealities.
    pub fn straight_through(&mut self, a: Var, forward: Tensor) -> Result<Var> {
        if forward.shape() != self.value(a).shape() {
            return Err(MemsimError::dim(
                "straight_through",
                format!("{:?} vs {:?}", forward.shape(), self.value(a).shape()),
            ));
        }
        self.push_checked(Op::StraightThrough(a), forward, &[a], "straight_through")
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(MemsimError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match node.op {
                Op::Leaf | Op::Constant => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.tracked(a) {
                        let ga = g.matmul_t(false, self.value(b), true)?;
                        accumulate(&mut grads, a, ga);
                    }
                    if self.tracked(b) {
                        let gb = self.value(a).matmul_t(true, &g, false)?;
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.tracked(b) {
                        accumulate(&mut grads, b, g.clone());
                    }
                    if self.tracked(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.tracked(b) {
                        accumulate(&mut grads, b, g.scale(-1.0));
                    }
                    if self.tracked(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.tracked(a) {
                        accumulate(&mut grads, a, g.mul(self.value(b))?);
                    }
                    if self.tracked(b) {
                        accumulate(&mut grads, b, g.mul(self.value(a))?);
                    }
                }
                Op::AddRow(m, row) => {
                    if self.tracked(row) {
                        let shape = self.value(row).shape().to_vec();
                        let gr = g.column_sums()?.reshape(shape)?;
                        accumulate(&mut grads, row, gr);
                    }
                    if self.tracked(m) {
                        accumulate(&mut grads, m, g);
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, g.scale(c)),
                Op::Sin(a) => {
                    let ga = g.zip_with(self.value(a), "sin'", |g, x| g * x.cos())?;
                    accumulate(&mut grads, a, ga);
                }
                Op::Abs(a) => {
                    let ga = g.zip_with(self.value(a), "abs'", |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_with(self.value(a), "square'", |g, x| 2.0 * g * x)?;
                    accumulate(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let ga = Tensor::full(self.value(a).shape(), g.item()?);
                    accumulate(&mut grads, a, ga);
                }
                Op::Mean(a) => {
                    let n = self.value(a).len() as f64;
                    let ga = Tensor::full(self.value(a).shape(), g.item()? / n);
                    accumulate(&mut grads, a, ga);
                }
                Op::StraightThrough(a) => accumulate(&mut grads, a, g),
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.square(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn sin_derivative_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.sin(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(t.backward(x), Err(MemsimError::Contract(_))));
    }

    #[test]
    fn non_finite_raises() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1e200));
        assert!(matches!(t.square(x), Err(MemsimError::NonFinite { .. })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let k = t.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let x = t.leaf(Tensor::matrix(2, 1, vec![0.5, -0.5]).unwrap());
        let y = t.matmul(k, x).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(k).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    type Build = fn(&mut Tape, Var, Var) -> Result<Var>;

    /// Central finite differences over every input coordinate.
    fn check_primitive(name: &str, shape_a: &[usize], shape_b: &[usize], build: Build) {
        let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 31 + 7);
        let draw = |shape: &[usize], rng: &mut ChaCha8Rng| {
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
        };
        let a0 = draw(shape_a, &mut rng);
        let b0 = draw(shape_b, &mut rng);
        // Project the output with fixed random weights so each op yields a scalar.
        let eval = |a: &Tensor, b: &Tensor| -> (f64, Tape, Var, Var, Var) {
            let mut t = Tape::new();
            let va = t.leaf(a.clone());
            let vb = t.leaf(b.clone());
            let out = build(&mut t, va, vb).unwrap();
            let mut prng = ChaCha8Rng::seed_from_u64(99);
            let shape = t.value(out).shape().to_vec();
            let w = draw(&shape, &mut prng);
            let wv = t.constant(w);
            let prod = t.mul(out, wv).unwrap();
            let loss = t.sum(prod).unwrap();
            (t.value(loss).item().unwrap(), t, loss, va, vb)
        };
        let (_, tape, loss, va, vb) = eval(&a0, &b0);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-5;
        for (which, base) in [(0, &a0), (1, &b0)] {
            let analytic = grads.get_or_zeros(if which == 0 { va } else { vb }, base.shape());
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus.data_mut()[i] += h;
                let mut minus = base.clone();
                minus.data_mut()[i] -= h;
                let (fp, fm) = if which == 0 {
                    (eval(&plus, &b0).0, eval(&minus, &b0).0)
                } else {
                    (eval(&a0, &plus).0, eval(&a0, &minus).0)
                };
                let fd = (fp - fm) / (2.0 * h);
                let an = analytic.data()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4, "{name}: input {which}[{i}] fd={fd} analytic={an}");
            }
        }
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        check_primitive("matmul", &[3, 4], &[4, 2], |t, a, b| t.matmul(a, b));
        check_primitive("add", &[2, 3], &[2, 3], |t, a, b| t.add(a, b));
        check_primitive("sub", &[2, 3], &[2, 3], |t, a, b| t.sub(a, b));
        check_primitive("mul", &[2, 3], &[2, 3], |t, a, b| t.mul(a, b));
        check_primitive("add_row", &[4, 3], &[3], |t, a, b| t.add_row(a, b));
        check_primitive("scale", &[2, 2], &[1], |t, a, _| t.scale(a, -1.7));
        check_primitive("sin", &[3, 3], &[1], |t, a, _| t.sin(a));
        check_primitive("abs", &[3, 3], &[1], |t, a, _| t.abs(a));
        check_primitive("square", &[3, 3], &[1], |t, a, _| t.square(a));
        check_primitive("sum", &[3, 3], &[1], |t, a, _| t.sum(a));
        check_primitive("mean", &[3, 3], &[1], |t, a, _| t.mean(a));
    }
}
