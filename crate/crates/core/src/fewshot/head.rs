use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::FewShotError;
use crate::Label;

/// L2 strength of the classification head (inverse regularization `C`).
pub const L2_C: f64 = 1.0;
const TOLERANCE: f64 = 1e-4;

/// Binary logistic model; `predict_proba` is P(intermittent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticHead {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub width: usize,
}

impl LogisticHead {
    pub fn check_width(&self) -> Result<(), FewShotError> {
        if self.weights.len() != self.width {
            return Err(FewShotError::WidthMismatch { expected: self.width, found: self.weights.len() });
        }
        Ok(())
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64, FewShotError> {
        if x.len() != self.width {
            return Err(FewShotError::WidthMismatch { expected: self.width, found: x.len() });
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, FewShotError> {
        self.decision(x).map(sigmoid)
    }

    /// Probability ≥ 0.5 is intermittent.
    pub fn predict(&self, x: &[f64]) -> Result<Label, FewShotError> {
        Ok(label_for(self.predict_proba(x)?))
    }
}

pub fn label_for(probability: f64) -> Label {
    if probability >= 0.5 {
        Label::Intermittent
    } else {
        Label::Regular
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

/// Fits `0.5 |w|^2 + C * sum logloss` by damped Newton iterations, with the
/// intercept left unpenalized. Stops when the gradient's max-norm drops
/// below 1e-4 or after `max_iter` iterations.
pub fn train_head(embeddings: &[Vec<f64>], labels: &[Label], max_iter: u32) -> Result<LogisticHead, FewShotError> {
    if embeddings.len() != labels.len() {
        return Err(FewShotError::InvalidInput("embeddings and labels differ in length"));
    }
    if embeddings.is_empty() {
        return Err(FewShotError::EmptyTrainingSet);
    }
    let width = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != width) {
        return Err(FewShotError::WidthMismatch { expected: width, found: bad.len() });
    }
    let positives = labels.iter().filter(|l| l.is_intermittent()).count();
    if positives == 0 || positives == labels.len() {
        return Err(FewShotError::SingleClass);
    }
    let y: Vec<f64> = labels.iter().map(|l| f64::from(l.as_u8())).collect();
    let p = width + 1;
    // theta = [w..., b]
    let mut theta = vec![0.0; p];
    let objective = |theta: &[f64]| -> f64 {
        let reg: f64 = theta[..width].iter().map(|w| w * w).sum::<f64>() * 0.5;
        let loss: f64 = embeddings
            .iter()
            .zip(&y)
            .map(|(x, &yi)| {
                let z = dot(&theta[..width], x) + theta[width];
                softplus(z) - yi * z
            })
            .sum();
        reg + L2_C * loss
    };
    let mut f = objective(&theta);
    for _ in 0..max_iter {
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for i in 0..width {
            grad[i] = theta[i];
            hess[i * p + i] = 1.0;
        }
        for (x, &yi) in embeddings.iter().zip(&y) {
            let z = dot(&theta[..width], x) + theta[width];
            let pi = sigmoid(z);
            let r = L2_C * (pi - yi);
            let s = L2_C * pi * (1.0 - pi);
            for a in 0..p {
                let xa = if a < width { x[a] } else { 1.0 };
                grad[a] += r * xa;
                if s == 0.0 {
                    continue;
                }
                for b in 0..=a {
                    let xb = if b < width { x[b] } else { 1.0 };
                    hess[a * p + b] += s * xa * xb;
                }
            }
        }
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) <= TOLERANCE {
            break;
        }
        let step = cholesky_solve(&mut hess, p, &grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(th, s)| th - t * s).collect();
            let fc = objective(&cand);
            if fc.is_finite() && fc <= f {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(FewShotError::InvalidInput("non-finite classifier weights"));
    }
    let bias = theta.pop().unwrap();
    Ok(LogisticHead { weights: theta, bias, width })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `H s = g` for symmetric positive definite `H` given by its lower
/// triangle (row-major, `p x p`). Adds jitter to the diagonal if a pivot
/// collapses.
fn cholesky_solve(h: &mut [f64], p: usize, g: &[f64]) -> Vec<f64> {
    let original: Vec<f64> = h.to_vec();
    let mut jitter = 0.0;
    loop {
        if jitter > 0.0 {
            h.copy_from_slice(&original);
            for i in 0..p {
                h[i * p + i] += jitter;
            }
        }
        if factor(h, p) {
            break;
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
    }
    // forward then back substitution with L and L^T
    let mut z = g.to_vec();
    for i in 0..p {
        let mut s = z[i];
        for k in 0..i {
            s -= h[i * p + k] * z[k];
        }
        z[i] = s / h[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = z[i];
        for k in i + 1..p {
            s -= h[k * p + i] * z[k];
        }
        z[i] = s / h[i * p + i];
    }
    z
}

fn factor(h: &mut [f64], p: usize) -> bool {
    for j in 0..p {
        let mut d = h[j * p + j];
        for k in 0..j {
            d -= h[j * p + k] * h[j * p + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = libm::sqrt(d);
        h[j * p + j] = d;
        for i in j + 1..p {
            let mut s = h[i * p + j];
            for k in 0..j {
                s -= h[i * p + k] * h[j * p + k];
            }
            h[i * p + j] = s / d;
        }
    }
    true
}
