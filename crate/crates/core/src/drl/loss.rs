//! Loss machinery: the softmax surrogate policy, the demonstration
//! cross-entropy, multi-step returns, and the combined batched objective
//! with its analytic gradient.

use thiserror::Error;

use super::qnet::{Hidden, QNetwork};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("teacher policy contains a zero probability at action {0}")]
    ZeroTeacherProbability(usize),
}

/// Softmax of the Q-values (max-subtracted); order-preserving surrogate for
/// the argmax policy so gradients exist.
pub fn dummy_policy(q: &[f64]) -> Vec<f64> {
    let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Demonstration loss as written: `-sum_u dummy(u) * log teacher(u)`, with
/// the gradient flowing through the dummy policy.
pub fn demonstration_loss(q: &[f64], teacher: &[f64]) -> Result<f64, LossError> {
    if let Some(i) = teacher.iter().position(|&p| p <= 0.0) {
        return Err(LossError::ZeroTeacherProbability(i));
    }
    let pi = dummy_policy(q);
    Ok(-pi
        .iter()
        .zip(teacher)
        .map(|(p, t)| p * t.ln())
        .sum::<f64>())
}

/// dL_D/dq for the as-written direction.
fn demonstration_grad_as_written(pi: &[f64], log_teacher: &[f64]) -> Vec<f64> {
    let mean: f64 = pi.iter().zip(log_teacher).map(|(p, l)| p * l).sum();
    pi.iter()
        .zip(log_teacher)
        .map(|(p, l)| p * (mean - l))
        .collect()
}

/// Conventional distillation direction: `-sum_u teacher(u) * log dummy(u)`.
fn demonstration_conventional(pi: &[f64], teacher: &[f64]) -> f64 {
    -teacher
        .iter()
        .zip(pi)
        .map(|(t, p)| t * p.ln())
        .sum::<f64>()
}

fn demonstration_grad_conventional(pi: &[f64], teacher: &[f64]) -> Vec<f64> {
    pi.iter().zip(teacher).map(|(p, t)| p - t).collect()
}

/// Which cross-entropy direction the demonstration term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CeDirection {
    /// As written in the loss definition: gradient through the dummy policy.
    AsWritten,
    /// Conventional distillation, teacher weights on log dummy.
    Conventional,
}

/// Multi-step return target description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NStepTarget {
    pub r_hat: f64,
    /// How many steps ahead the bootstrap observation sits.
    pub bootstrap_steps: usize,
    /// Discount applied to the bootstrap value.
    pub bootstrap_discount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NStepMode {
    /// Standard n-step return: `sum_{i<eta} lambda^i r_{t+i}`, bootstrap at
    /// `t + eta` discounted by `lambda^eta`.
    Standard,
    /// Literal form: `sum_{i=1..eta} lambda^eta r_{t+i}` with the bootstrap
    /// one step ahead, kept for comparison.
    PaperLiteral,
}

/// Computes the multi-step return over a reward window starting at the
/// transition's own reward; a window shorter than `eta` truncates it.
pub fn nstep_return(window: &[f64], lambda: f64, eta: usize, mode: NStepMode) -> NStepTarget {
    assert!(!window.is_empty(), "reward window must not be empty");
    match mode {
        NStepMode::Standard => {
            let eta_eff = eta.min(window.len()).max(1);
            let mut r_hat = 0.0;
            let mut disc = 1.0;
            for &r in &window[..eta_eff] {
                r_hat += disc * r;
                disc *= lambda;
            }
            NStepTarget {
                r_hat,
                bootstrap_steps: eta_eff,
                bootstrap_discount: disc,
            }
        }
        NStepMode::PaperLiteral => {
            let eta_eff = eta.min(window.len().saturating_sub(1)).max(1);
            let weight = lambda.powi(eta_eff as i32);
            let r_hat: f64 = window
                .iter()
                .skip(1)
                .take(eta_eff)
                .map(|&r| weight * r)
                .sum();
            NStepTarget {
                r_hat,
                bootstrap_steps: 1,
                bootstrap_discount: weight,
            }
        }
    }
}

/// One replay sample prepared for the combined loss: the TD target is
/// already assembled from the (detached) target network.
#[derive(Debug, Clone)]
pub struct LossSample {
    pub obs: Vec<f64>,
    pub hidden: Hidden,
    pub action: usize,
    pub target: f64,
    pub teacher: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub total: f64,
    pub td: f64,
    pub demonstration: f64,
}

/// Mean squared TD error plus `alpha` times the mean demonstration loss over
/// the batch; accumulates dL/dtheta into `grad`.
pub fn combined_loss_grad(
    net: &QNetwork,
    batch: &[LossSample],
    alpha: f64,
    direction: CeDirection,
    grad: &mut [f64],
) -> LossParts {
    assert!(!batch.is_empty());
    let inv_b = 1.0 / batch.len() as f64;
    let mut parts = LossParts::default();
    for sample in batch {
        let cache = net.forward_cached(&sample.obs, &sample.hidden);
        let q = &cache.q;
        let mut dq = vec![0.0; q.len()];

        let td_err = sample.target - q[sample.action];
        parts.td += td_err * td_err * inv_b;
        dq[sample.action] += -2.0 * td_err * inv_b;

        if alpha != 0.0 {
            if let Some(teacher) = &sample.teacher {
                let pi = dummy_policy(q);
                match direction {
                    CeDirection::AsWritten => {
                        let log_teacher: Vec<f64> = teacher.iter().map(|t| t.ln()).collect();
                        let ld: f64 = -pi
                            .iter()
                            .zip(&log_teacher)
                            .map(|(p, l)| p * l)
                            .sum::<f64>();
                        parts.demonstration += ld * inv_b;
                        for (g, d) in dq
                            .iter_mut()
                            .zip(demonstration_grad_as_written(&pi, &log_teacher))
                        {
                            *g += alpha * inv_b * d;
                        }
                    }
                    CeDirection::Conventional => {
                        let ld = demonstration_conventional(&pi, teacher);
                        parts.demonstration += ld * inv_b;
                        for (g, d) in dq
                            .iter_mut()
                            .zip(demonstration_grad_conventional(&pi, teacher))
                        {
                            *g += alpha * inv_b * d;
                        }
                    }
                }
            }
        }
        net.backward(&cache, &dq, grad);
    }
    parts.total = parts.td + alpha * parts.demonstration;
    parts
}

/// Loss value only, for finite-difference checks.
pub fn combined_loss_value(
    net: &QNetwork,
    batch: &[LossSample],
    alpha: f64,
    direction: CeDirection,
) -> f64 {
    let inv_b = 1.0 / batch.len() as f64;
    let mut td = 0.0;
    let mut demo = 0.0;
    for sample in batch {
        let (q, _) = net.forward(&sample.obs, &sample.hidden);
        let e = sample.target - q[sample.action];
        td += e * e * inv_b;
        if alpha != 0.0 {
            if let Some(teacher) = &sample.teacher {
                let pi = dummy_policy(&q);
                demo += match direction {
                    CeDirection::AsWritten => {
                        -pi.iter().zip(teacher).map(|(p, t)| p * t.ln()).sum::<f64>()
                    }
                    CeDirection::Conventional => demonstration_conventional(&pi, teacher),
                } * inv_b;
            }
        }
    }
    td + alpha * demo
}


#[cfg(test)]
mod gradcheck {
    use super::*;
    use crate::demonstrators::teacher_policy;
    use crate::drl::qnet::{Dims, Hidden, QNetwork};
    use crate::rng::{seeded_rng, Stream};
    use rand::Rng;

    fn random_batch<R: Rng>(net: &QNetwork, n: usize, teachers: bool, rng: &mut R) -> Vec<LossSample> {
        (0..n)
            .map(|_| {
                let obs: Vec<f64> = (0..net.dims.obs).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let hidden = Hidden {
                    h: (0..net.dims.hidden).map(|_| rng.gen_range(-0.8..0.8)).collect(),
                    c: (0..net.dims.hidden).map(|_| rng.gen_range(-0.8..0.8)).collect(),
                };
                LossSample {
                    obs,
                    hidden,
                    action: rng.gen_range(0..3),
                    target: rng.gen_range(-3.0..3.0),
                    teacher: teachers.then(|| teacher_policy(rng.gen_range(0..3), 0.05)),
                }
            })
            .collect()
    }

    fn check(direction: CeDirection, alpha: f64, teachers: bool, seed: u64) -> f64 {
        let mut rng = seeded_rng(seed, Stream::WeightInit(9));
        let mut net = QNetwork::new(Dims::small(5, 6));
        net.init_xavier(&mut rng);
        let batch = random_batch(&net, 4, teachers, &mut rng);

        let mut analytic = vec![0.0; net.theta.len()];
        combined_loss_grad(&net, &batch, alpha, direction, &mut analytic);

        let eps = 1e-5;
        let mut numeric = vec![0.0; net.theta.len()];
        for i in 0..net.theta.len() {
            let orig = net.theta[i];
            net.theta[i] = orig + eps;
            let up = combined_loss_value(&net, &batch, alpha, direction);
            net.theta[i] = orig - eps;
            let down = combined_loss_value(&net, &batch, alpha, direction);
            net.theta[i] = orig;
            numeric[i] = (up - down) / (2.0 * eps);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        diff / scale.max(1e-12)
    }

    #[test]
    fn combined_loss_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let rel = check(CeDirection::AsWritten, 7.5, true, seed);
            assert!(rel < 1e-6, "seed {seed}: rel err {rel}");
        }
    }

    #[test]
    fn td_only_gradient_matches_finite_differences() {
        let rel = check(CeDirection::AsWritten, 0.0, false, 11);
        assert!(rel < 1e-6, "rel err {rel}");
    }

    #[test]
    fn conventional_ce_gradient_matches_finite_differences() {
        let rel = check(CeDirection::Conventional, 3.0, true, 12);
        assert!(rel < 1e-6, "rel err {rel}");
    }
}
