//! L2-regularized logistic mention model with soft-label (weighted) training.
//!
//! The training objective for examples `(x_i, q1_i, q0_i)` is
//!
//! ```text
//! -Σ_i [q1_i log p_i + q0_i log(1 - p_i)] + ‖β‖² / (2c),   p_i = σ(β·x_i + b)
//! ```
//!
//! with the intercept `b` left unregularized. Hard labels are the special case
//! `q ∈ {0, 1}`. The objective is convex and is minimized with full-batch
//! L-BFGS until the gradient norm drops below `tol`.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::HashedVector;
use crate::scalar::{sigmoid, softplus, Real};

const MAGIC: &[u8; 8] = b"EEMODEL\0";
const FORMAT_VERSION: u32 = 1;
const LBFGS_HISTORY: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct MentionModel<T> {
    pub weights: Vec<T>,
    pub intercept: T,
}

impl<T: Real> MentionModel<T> {
    pub fn zeros(dim: usize) -> Self {
        MentionModel {
            weights: vec![T::zero(); dim],
            intercept: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn check_dim(&self, x: &HashedVector<T>) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        Ok(())
    }

    /// `β·x + b`.
    pub fn logit(&self, x: &HashedVector<T>) -> Result<T> {
        self.check_dim(x)?;
        Ok(x.dot(&self.weights) + self.intercept)
    }

    /// `σ(β·x + b)`, kept inside the open interval (0, 1): results that would
    /// round to 0 or 1 are clamped to the nearest representable interior value.
    pub fn predict_prob(&self, x: &HashedVector<T>) -> Result<T> {
        Ok(prob_from_logit(self.logit(x)?))
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 + 1 + 8 + (self.dim() + 1) * T::WIDTH as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(T::WIDTH);
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        self.intercept.write_le(&mut out);
        for w in &self.weights {
            w.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = 8 + 4 + 1 + 8;
        if bytes.len() < header || &bytes[..8] != MAGIC {
            return Err(Error::ModelFormat("not a model file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        if bytes[12] != T::WIDTH {
            return Err(Error::ModelFormat(format!(
                "scalar width {} does not match requested width {}",
                bytes[12],
                T::WIDTH
            )));
        }
        let dim = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes")) as usize;
        let w = T::WIDTH as usize;
        if bytes.len() != header + (dim + 1) * w {
            return Err(Error::ModelFormat(format!("truncated or oversized body for dim {dim}")));
        }
        let body = &bytes[header..];
        let intercept = T::read_le(&body[..w]);
        let weights = body[w..].chunks_exact(w).map(T::read_le).collect();
        let model = MentionModel { weights, intercept };
        if !model.is_finite() {
            return Err(Error::ModelFormat("non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Clamped sigmoid shared by prediction paths.
pub fn prob_from_logit<T: Real>(z: T) -> T {
    let p = sigmoid(z);
    let hi = T::one() - T::epsilon() / T::lit(2.0);
    p.max(T::min_positive_value()).min(hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedExample<T> {
    pub x: HashedVector<T>,
    /// Weight of the label-1 term.
    pub q1: T,
    /// Weight of the label-0 term.
    pub q0: T,
}

impl<T: Real> WeightedExample<T> {
    pub fn hard(x: HashedVector<T>, label: bool) -> Self {
        let (q1, q0) = if label { (T::one(), T::zero()) } else { (T::zero(), T::one()) };
        WeightedExample { x, q1, q0 }
    }

    pub fn soft(x: HashedVector<T>, q: T) -> Self {
        WeightedExample {
            x,
            q1: q,
            q0: T::one() - q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Inverse regularization strength.
    pub c: f64,
    /// Gradient-norm stopping threshold.
    pub tol: f64,
    pub max_iter: usize,
    /// Recorded in run metadata; the optimizer itself is deterministic.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 0.1,
            tol: 1e-6,
            max_iter: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub weights: Vec<T>,
    pub intercept: T,
}

impl<T: Real> Gradient<T> {
    pub fn norm(&self) -> T {
        (self.weights.iter().fold(self.intercept * self.intercept, |a, &g| a + g * g)).sqrt()
    }
}

fn example_terms<T: Real>(z: T, q1: T, q0: T) -> (T, T) {
    // loss and d loss / d z
    let loss = q1 * softplus(-z) + q0 * softplus(z);
    let dz = (q1 + q0) * sigmoid(z) - q1;
    (loss, dz)
}

/// Negative weighted log-likelihood plus `‖β‖²/(2c)` and its gradient.
pub fn loss_and_gradient<T: Real>(
    model: &MentionModel<T>,
    examples: &[WeightedExample<T>],
    c: T,
) -> Result<(T, Gradient<T>)> {
    let inv_c = T::one() / c;
    let mut loss = model.weights.iter().fold(T::zero(), |a, &w| a + w * w) * inv_c / T::lit(2.0);
    let mut grad = Gradient {
        weights: model.weights.iter().map(|&w| w * inv_c).collect(),
        intercept: T::zero(),
    };
    for ex in examples {
        if ex.q1 < T::zero() || ex.q0 < T::zero() {
            return Err(Error::Validation("negative example weight".into()));
        }
        let z = model.logit(&ex.x)?;
        let (l, dz) = example_terms(z, ex.q1, ex.q0);
        loss = loss + l;
        grad.intercept = grad.intercept + dz;
        for (i, v) in ex.x.iter() {
            grad.weights[i] = grad.weights[i] + dz * v;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub model: MentionModel<T>,
    pub iterations: usize,
    pub grad_norm: T,
    pub loss: T,
    pub converged: bool,
}

/// Trains from a zero initialization.
pub fn train_weighted<T: Real>(
    examples: &[WeightedExample<T>],
    dim: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_weighted_from(&MentionModel::zeros(dim), examples, config)
}

/// Problem restricted to the feature indices that occur in some example;
/// every other weight has optimum exactly zero.
struct Compressed<T> {
    active: Vec<usize>,
    rows: Vec<(Vec<u32>, Vec<T>, T, T)>,
    inv_c: T,
}

impl<T: Real> Compressed<T> {
    fn new(examples: &[WeightedExample<T>], inv_c: T) -> Self {
        let mut active: Vec<usize> = examples.iter().flat_map(|e| e.x.iter().map(|(i, _)| i)).collect();
        active.sort_unstable();
        active.dedup();
        let rows = examples
            .iter()
            .map(|e| {
                let (idx, val) = e
                    .x
                    .iter()
                    .map(|(i, v)| (active.binary_search(&i).expect("active index") as u32, v))
                    .unzip();
                (idx, val, e.q1, e.q0)
            })
            .collect();
        Compressed { active, rows, inv_c }
    }

    fn n_params(&self) -> usize {
        self.active.len() + 1
    }

    /// Returns the objective, writing the gradient into `grad`.
    fn eval(&self, theta: &[T], grad: &mut [T]) -> T {
        let k = self.active.len();
        let (w, b) = (&theta[..k], theta[k]);
        let mut loss = T::zero();
        for (g, &wi) in grad[..k].iter_mut().zip(w) {
            *g = wi * self.inv_c;
            loss = loss + wi * wi;
        }
        loss = loss * self.inv_c / T::lit(2.0);
        grad[k] = T::zero();
        for (idx, val, q1, q0) in &self.rows {
            let z = idx
                .iter()
                .zip(val)
                .fold(b, |a, (&i, &v)| a + w[i as usize] * v);
            let (l, dz) = example_terms(z, *q1, *q0);
            loss = loss + l;
            grad[k] = grad[k] + dz;
            for (&i, &v) in idx.iter().zip(val) {
                grad[i as usize] = grad[i as usize] + dz * v;
            }
        }
        loss
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Trains starting from `init`; deterministic for fixed inputs.
pub fn train_weighted_from<T: Real>(
    init: &MentionModel<T>,
    examples: &[WeightedExample<T>],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let dim = init.dim();
    for ex in examples {
        if ex.x.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: ex.x.dim(),
            });
        }
        if !(ex.q1 >= T::zero() && ex.q0 >= T::zero()) {
            return Err(Error::Validation("example weights must be non-negative".into()));
        }
    }
    if !examples.iter().any(|e| e.q1 + e.q0 > T::zero()) {
        return Err(Error::Validation("no example carries positive weight".into()));
    }

    let problem = Compressed::new(examples, T::one() / T::lit(config.c));
    let n = problem.n_params();
    let k = problem.active.len();
    let tol = T::lit(config.tol);

    let mut theta: Vec<T> = problem.active.iter().map(|&i| init.weights[i]).collect();
    theta.push(init.intercept);
    let mut grad = vec![T::zero(); n];
    let mut f = problem.eval(&theta, &mut grad);
    if !f.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }

    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(LBFGS_HISTORY);
    let mut new_theta = vec![T::zero(); n];
    let mut new_grad = vec![T::zero(); n];
    let mut iterations = 0;
    let mut gnorm = dot(&grad, &grad).sqrt();
    let c1 = T::lit(1e-4);
    let slack = T::lit(4.0) * T::epsilon();
    // Rounding error of the loss grows with the number of summed rows.
    let sum_scale = T::from_usize_lossy(problem.rows.len().max(1)).sqrt();

    while gnorm > tol && iterations < config.max_iter {
        iterations += 1;

        // two-loop recursion
        let mut d: Vec<T> = grad.iter().map(|&g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = *rho * dot(s, &d);
            for (di, &yi) in d.iter_mut().zip(y) {
                *di = *di - a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for di in &mut d {
                *di = *di * gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let bcoef = *rho * dot(y, &d);
            for (di, &si) in d.iter_mut().zip(s) {
                *di = *di + si * (a - bcoef);
            }
        }
        let mut gd = dot(&grad, &d);
        if !(gd < T::zero()) {
            history.clear();
            for (di, &g) in d.iter_mut().zip(&grad) {
                *di = -g;
            }
            gd = -gnorm * gnorm;
        }

        let mut step = if history.is_empty() {
            (T::one() / gnorm).min(T::one())
        } else {
            T::one()
        };
        let mut accepted = false;
        let mut new_f = f;
        for _ in 0..60 {
            for ((nt, &t), &di) in new_theta.iter_mut().zip(&theta).zip(&d) {
                *nt = t + step * di;
            }
            new_f = problem.eval(&new_theta, &mut new_grad);
            if !new_f.is_finite() {
                step = step / T::lit(2.0);
                continue;
            }
            let noise = slack * f.abs().max(T::one());
            if new_f <= f + c1 * step * gd + noise {
                accepted = true;
                break;
            }
            // Near the optimum the predicted decrease falls below the rounding
            // error of the summed loss; accept a step that does not increase
            // the loss beyond that error and clearly shrinks the gradient.
            if new_f <= f + noise * sum_scale && dot(&new_grad, &new_grad).sqrt() <= T::lit(0.9) * gnorm {
                accepted = true;
                break;
            }
            step = step / T::lit(2.0);
        }
        if !accepted {
            if !new_f.is_finite() {
                return Err(Error::NonFinite { iteration: iterations });
            }
            break;
        }

        let s: Vec<T> = new_theta.iter().zip(&theta).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = new_grad.iter().zip(&grad).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == LBFGS_HISTORY {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }
        std::mem::swap(&mut theta, &mut new_theta);
        std::mem::swap(&mut grad, &mut new_grad);
        let stalled = new_f == f && step * dot(&d, &d).sqrt() <= T::epsilon();
        f = new_f;
        gnorm = dot(&grad, &grad).sqrt();
        if stalled {
            break;
        }
    }

    let mut weights = vec![T::zero(); dim];
    for (slot, &i) in problem.active.iter().enumerate() {
        weights[i] = theta[slot];
    }
    let model = MentionModel {
        weights,
        intercept: theta[k],
    };
    Ok(TrainOutcome {
        model,
        iterations,
        grad_norm: gnorm,
        loss: f,
        converged: gnorm <= tol,
    })
}
