//! Multilayer perceptrons with analytic gradients.
//!
//! Layer `k` computes `z = h Wₖᵀ + bₖ` with `Wₖ` of shape `out × in`. Every
//! weight matrix is a matrix slot; all biases are concatenated into `θ`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tree::ParamTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxXent,
    Mse,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::Config(format!("unknown activation {s:?}, expected tanh or relu"))),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax_xent" => Ok(LossKind::SoftmaxXent),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::Config(format!("unknown loss {s:?}, expected softmax_xent or mse"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::SoftmaxXent => "softmax_xent",
            LossKind::Mse => "mse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `[input, hidden…, output]`; at least two entries.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// One example per row.
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: ModelSpec,
}

struct Trace {
    /// Input to each layer (`inputs` first).
    layer_inputs: Vec<Matrix>,
    /// Pre-activations of every layer; the last one is the output.
    pre: Vec<Matrix>,
}

impl Mlp {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.layer_dims.len() < 2 {
            return Err(Error::Config("model.layer_dims needs at least an input and an output size".into()));
        }
        if spec.layer_dims.contains(&0) {
            return Err(Error::Config("model.layer_dims entries must be positive".into()));
        }
        if spec.loss == LossKind::SoftmaxXent && *spec.layer_dims.last().expect("checked above") < 2 {
            return Err(Error::Config("softmax_xent needs at least two output classes".into()));
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> usize {
        self.spec.layer_dims.len() - 1
    }

    pub fn outputs(&self) -> usize {
        *self.spec.layer_dims.last().expect("validated in new")
    }

    /// Weights drawn from `N(0, 1/fan_in)` with the spec's seed; zero biases.
    pub fn init_params(&self) -> ParamTree {
        self.init_params_with(&mut ChaCha8Rng::seed_from_u64(self.spec.seed))
    }

    pub fn init_params_with<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamTree {
        let dims = &self.spec.layer_dims;
        let matrices = dims
            .windows(2)
            .map(|w| {
                let mut m = Matrix::random_normal(w[1], w[0], rng);
                m.scale(1.0 / (w[0] as f64).sqrt());
                m
            })
            .collect();
        ParamTree::new(matrices, vec![0.0; dims[1..].iter().sum()])
    }

    fn check(&self, params: &ParamTree, batch: &Batch) -> Result<()> {
        let dims = &self.spec.layer_dims;
        if params.matrices.len() != self.layers()
            || params.matrices.iter().zip(dims.windows(2)).any(|(m, w)| m.shape() != (w[1], w[0]))
            || params.base.len() != dims[1..].iter().sum::<usize>()
        {
            return Err(Error::Dimension("parameters do not match the model layout".into()));
        }
        if batch.inputs.cols() != dims[0] {
            return Err(Error::Dimension(format!("model expects {} inputs, batch has {}", dims[0], batch.inputs.cols())));
        }
        let n = batch.len();
        match (&batch.targets, self.spec.loss) {
            (Targets::Classes(c), LossKind::SoftmaxXent) => {
                if c.len() != n {
                    return Err(Error::Dimension(format!("{} class targets for {n} examples", c.len())));
                }
                if let Some(bad) = c.iter().find(|&&k| k >= self.outputs()) {
                    return Err(Error::Dimension(format!("class {bad} out of range for {} outputs", self.outputs())));
                }
            }
            (Targets::Values(v), LossKind::Mse) => {
                if v.shape() != (n, self.outputs()) {
                    return Err(Error::Dimension(format!(
                        "targets are {}x{}, expected {n}x{}",
                        v.rows(),
                        v.cols(),
                        self.outputs()
                    )));
                }
            }
            _ => return Err(Error::Dimension("target kind does not match the loss".into())),
        }
        Ok(())
    }

    fn activate(&self, z: &Matrix) -> Matrix {
        let mut h = z.clone();
        match self.spec.activation {
            Activation::Tanh => h.as_mut_slice().iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Relu => h.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0)),
        }
        h
    }

    fn forward(&self, params: &ParamTree, inputs: &Matrix) -> Result<Trace> {
        let mut layer_inputs = vec![inputs.clone()];
        let mut pre = Vec::with_capacity(self.layers());
        let mut offset = 0;
        for (k, w) in params.matrices.iter().enumerate() {
            let mut z = layer_inputs[k].matmul_nt(w)?;
            let bias = &params.base[offset..offset + w.rows()];
            offset += w.rows();
            for i in 0..z.rows() {
                for (j, b) in bias.iter().enumerate() {
                    z.set(i, j, z.get(i, j) + b);
                }
            }
            if k + 1 < self.layers() {
                layer_inputs.push(self.activate(&z));
            }
            pre.push(z);
        }
        Ok(Trace { layer_inputs, pre })
    }

    /// Loss and its gradient with respect to the network output.
    fn loss_and_output_grad(&self, out: &Matrix, targets: &Targets) -> (f64, Matrix) {
        let n = out.rows() as f64;
        let mut grad = Matrix::zeros(out.rows(), out.cols());
        let mut loss = 0.0;
        match targets {
            Targets::Values(y) => {
                for ((g, o), t) in grad.as_mut_slice().iter_mut().zip(out.as_slice()).zip(y.as_slice()) {
                    let r = o - t;
                    loss += r * r;
                    *g = 2.0 * r / n;
                }
            }
            Targets::Classes(c) => {
                for (i, &class) in c.iter().enumerate() {
                    let row = out.row(i);
                    let top = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let sum: f64 = row.iter().map(|x| (x - top).exp()).sum();
                    loss += top + sum.ln() - row[class];
                    for (j, x) in row.iter().enumerate() {
                        let p = (x - top).exp() / sum;
                        grad.set(i, j, (p - if j == class { 1.0 } else { 0.0 }) / n);
                    }
                }
            }
        }
        (loss / n, grad)
    }

    pub fn forward_loss(&self, params: &ParamTree, batch: &Batch) -> Result<f64> {
        self.check(params, batch)?;
        let trace = self.forward(params, &batch.inputs)?;
        Ok(self.loss_and_output_grad(trace.pre.last().expect("at least one layer"), &batch.targets).0)
    }

    pub fn predict(&self, params: &ParamTree, inputs: &Matrix) -> Result<Matrix> {
        let mut trace = self.forward(params, inputs)?;
        Ok(trace.pre.pop().expect("at least one layer"))
    }

    /// Fraction of examples whose largest output is the target class.
    pub fn accuracy(&self, params: &ParamTree, batch: &Batch) -> Result<f64> {
        self.check(params, batch)?;
        let Targets::Classes(classes) = &batch.targets else {
            return Err(Error::Dimension("accuracy needs class targets".into()));
        };
        let out = self.predict(params, &batch.inputs)?;
        let hits = classes
            .iter()
            .enumerate()
            .filter(|&(i, &c)| {
                let row = out.row(i);
                row.iter().enumerate().all(|(j, &x)| x < row[c] || j == c)
            })
            .count();
        Ok(hits as f64 / classes.len() as f64)
    }

    pub fn backward(&self, params: &ParamTree, batch: &Batch) -> Result<(f64, ParamTree)> {
        self.check(params, batch)?;
        let trace = self.forward(params, &batch.inputs)?;
        let (loss, mut delta) = self.loss_and_output_grad(trace.pre.last().expect("at least one layer"), &batch.targets);
        let mut grads = params.zeros_like();
        let mut offset = params.base.len();
        for k in (0..self.layers()).rev() {
            grads.matrices[k] = delta.matmul_tn(&trace.layer_inputs[k])?;
            offset -= delta.cols();
            for i in 0..delta.rows() {
                for (j, &d) in delta.row(i).iter().enumerate() {
                    grads.base[offset + j] += d;
                }
            }
            if k > 0 {
                let mut back = delta.matmul(&params.matrices[k])?;
                let z = &trace.pre[k - 1];
                let h = &trace.layer_inputs[k];
                for ((b, &zi), &hi) in back.as_mut_slice().iter_mut().zip(z.as_slice()).zip(h.as_slice()) {
                    *b *= match self.spec.activation {
                        Activation::Tanh => 1.0 - hi * hi,
                        Activation::Relu => {
                            if zi > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                }
                delta = back;
            }
        }
        Ok((loss, grads))
    }

    /// Sign pattern of every hidden pre-activation (`true` when positive).
    pub fn activation_pattern(&self, params: &ParamTree, batch: &Batch) -> Result<Vec<bool>> {
        self.check(params, batch)?;
        let trace = self.forward(params, &batch.inputs)?;
        Ok(trace.pre[..self.layers() - 1].iter().flat_map(|z| z.as_slice().iter().map(|&x| x > 0.0)).collect())
    }
}

/// Coordinates compared by [`finite_diff_check`] when the model is larger.
pub const FD_SAMPLE: usize = 64;
const FD_SEED: u64 = 0x005e_edfd;

/// Largest relative error between central differences and the analytic
/// gradient over a seeded subset of coordinates (all of them when there are
/// at most [`FD_SAMPLE`]). The denominator is `max(|fd|, |analytic|, 1e-8)`.
/// For ReLU networks, coordinates whose perturbation flips any hidden
/// activation are skipped.
pub fn finite_diff_check(model: &Mlp, params: &ParamTree, batch: &Batch, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let (_, analytic) = model.backward(params, batch)?;
    let n = params.num_params();
    let coords: Vec<usize> = if n <= FD_SAMPLE {
        (0..n).collect()
    } else {
        sample(&mut ChaCha8Rng::seed_from_u64(FD_SEED), n, FD_SAMPLE).into_vec()
    };
    let relu = model.spec.activation == Activation::Relu;
    let pattern = if relu { model.activation_pattern(params, batch)? } else { Vec::new() };
    let mut worst = 0.0_f64;
    let mut probe = params.clone();
    for i in coords {
        let x = params.get_flat(i);
        probe.set_flat(i, x + h);
        let plus = model.forward_loss(&probe, batch)?;
        let kink_plus = relu && model.activation_pattern(&probe, batch)? != pattern;
        probe.set_flat(i, x - h);
        let minus = model.forward_loss(&probe, batch)?;
        let kink_minus = relu && model.activation_pattern(&probe, batch)? != pattern;
        probe.set_flat(i, x);
        if kink_plus || kink_minus {
            continue;
        }
        let fd = (plus - minus) / (2.0 * h);
        let an = analytic.get_flat(i);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Gaussian batch helper for tests and examples.
pub fn random_batch<R: Rng + ?Sized>(model: &Mlp, n: usize, rng: &mut R) -> Batch {
    let dims = &model.spec.layer_dims;
    let inputs = Matrix::random_normal(n, dims[0], rng);
    let targets = match model.spec.loss {
        LossKind::Mse => Targets::Values(Matrix::random_normal(n, model.outputs(), rng)),
        LossKind::SoftmaxXent => Targets::Classes((0..n).map(|_| rng.random_range(0..model.outputs())).collect()),
    };
    Batch { inputs, targets }
}

/// Parameters with every entry drawn from `N(0, scale²)`, biases included.
pub fn random_params<R: Rng + ?Sized>(model: &Mlp, scale: f64, rng: &mut R) -> ParamTree {
    let mut p = model.init_params_with(rng);
    for i in 0..p.num_params() {
        p.set_flat(i, scale * rng.sample::<f64, _>(StandardNormal));
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(dims: &[usize], activation: Activation, loss: LossKind) -> Mlp {
        Mlp::new(ModelSpec { layer_dims: dims.to_vec(), activation, loss, seed: 1 }).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let m = model(&[3, 4, 5], Activation::Tanh, LossKind::SoftmaxXent);
        let p = m.init_params().zeros_like();
        let batch = Batch { inputs: Matrix::random_normal(6, 3, &mut ChaCha8Rng::seed_from_u64(0)), targets: Targets::Classes(vec![0, 1, 2, 3, 4, 0]) };
        assert!((m.forward_loss(&p, &batch).unwrap() - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn mse_is_zero_on_own_outputs() {
        let m = model(&[3, 4, 2], Activation::Relu, LossKind::Mse);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = m.init_params();
        let inputs = Matrix::random_normal(5, 3, &mut rng);
        let out = m.predict(&p, &inputs).unwrap();
        let batch = Batch { inputs, targets: Targets::Values(out) };
        assert_eq!(m.forward_loss(&p, &batch).unwrap(), 0.0);
    }

    #[test]
    fn linear_mse_gradient_is_outer_product() {
        let m = model(&[3, 2], Activation::Tanh, LossKind::Mse);
        let p = ParamTree::new(vec![Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, -1.0, 1.0]]).unwrap()], vec![0.5, 0.0]);
        let x = [1.0, 2.0, -1.0];
        let y = [0.0, 1.0];
        let batch = Batch { inputs: Matrix::new(1, 3, x.to_vec()).unwrap(), targets: Targets::Values(Matrix::new(1, 2, y.to_vec()).unwrap()) };
        let (loss, g) = m.backward(&p, &batch).unwrap();
        let pred = [1.0 - 2.0 + 0.5, -2.0 - 1.0];
        assert!((loss - ((pred[0] - y[0]).powi(2) + (pred[1] - y[1]).powi(2))).abs() < 1e-14);
        for i in 0..2 {
            for (j, xj) in x.iter().enumerate() {
                assert!((g.matrices[0].get(i, j) - 2.0 * (pred[i] - y[i]) * xj).abs() < 1e-14);
            }
            assert!((g.base[i] - 2.0 * (pred[i] - y[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_vanishes_at_an_exact_fit() {
        let m = model(&[3, 5, 2], Activation::Tanh, LossKind::Mse);
        let p = m.init_params();
        let inputs = Matrix::random_normal(4, 3, &mut ChaCha8Rng::seed_from_u64(9));
        let out = m.predict(&p, &inputs).unwrap();
        let (_, g) = m.backward(&p, &Batch { inputs, targets: Targets::Values(out) }).unwrap();
        assert!(g.frob_norm() <= 1e-8);
    }

    #[test]
    fn finite_differences_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (dims, act, loss) in [
            (vec![3, 2], Activation::Tanh, LossKind::Mse),
            (vec![4, 6, 3], Activation::Tanh, LossKind::Mse),
            (vec![5, 7, 4, 3], Activation::Tanh, LossKind::SoftmaxXent),
            (vec![4, 8, 3], Activation::Relu, LossKind::Mse),
        ] {
            let m = model(&dims, act, loss);
            let p = random_params(&m, 0.7, &mut rng);
            let batch = random_batch(&m, 6, &mut rng);
            let err = finite_diff_check(&m, &p, &batch, 1e-5).unwrap();
            let tol = if dims.len() == 2 { 1e-7 } else { 1e-4 };
            assert!(err <= tol, "{dims:?} {act} {loss}: {err:e}");
        }
    }

    #[test]
    fn shape_errors() {
        let m = model(&[3, 2], Activation::Tanh, LossKind::Mse);
        let p = m.init_params();
        let batch = Batch { inputs: Matrix::zeros(2, 4), targets: Targets::Values(Matrix::zeros(2, 2)) };
        assert!(matches!(m.forward_loss(&p, &batch), Err(Error::Dimension(_))));
        let batch = Batch { inputs: Matrix::zeros(2, 3), targets: Targets::Classes(vec![0, 1]) };
        assert!(matches!(m.forward_loss(&p, &batch), Err(Error::Dimension(_))));
        assert!(Mlp::new(ModelSpec { layer_dims: vec![3], activation: Activation::Tanh, loss: LossKind::Mse, seed: 0 }).is_err());
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for loss in [LossKind::Mse, LossKind::SoftmaxXent] {
            let m = model(&[3, 4, 3], Activation::Relu, loss);
            for _ in 0..20 {
                let p = random_params(&m, 3.0, &mut rng);
                let b = random_batch(&m, 5, &mut rng);
                assert!(m.forward_loss(&p, &b).unwrap() >= 0.0);
            }
        }
    }
}
