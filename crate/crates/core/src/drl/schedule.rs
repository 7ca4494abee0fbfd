//! Exploration and annealing schedules.

use super::Hyperparams;

/// Exponential epsilon decay from `eps_start` at epoch 0 to `eps_end` at
/// epoch `eps_last`, constant afterwards (exact at both ends).
pub fn epsilon_schedule(h: &Hyperparams, epoch: usize) -> f64 {
    if epoch >= h.eps_last {
        return h.eps_end;
    }
    let frac = epoch as f64 / h.eps_last as f64;
    h.eps_start * (h.eps_end / h.eps_start).powf(frac)
}

/// Shifted-sigmoid annealing weight for the demonstration loss:
/// `A(t) = 1 - sigmoid(alpha_min + alpha_step * t)`, normalized so the
/// factor starts at `alpha_amp` and reaches zero at `alpha_term`, staying
/// zero afterwards. Non-increasing in the epoch.
pub fn anneal_factor(h: &Hyperparams, epoch: usize) -> f64 {
    if epoch > h.alpha_term {
        return 0.0;
    }
    let a = |t: f64| 1.0 - 1.0 / (1.0 + (-h.alpha_min - h.alpha_step * t).exp());
    let a0 = a(0.0);
    let a_term = a(h.alpha_term as f64);
    // The ratio is computed first so the factor is exactly alpha_amp at 0.
    h.alpha_amp * ((a(epoch as f64) - a_term) / (a0 - a_term))
}

/// Epsilon-greedy selection over the three Q-values; exact ties resolve to
/// the lowest index.
pub fn select_action<R: rand::Rng>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q.len())
    } else {
        argmax(q)
    }
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, Stream};

    #[test]
    fn epsilon_endpoints_exact() {
        let h = Hyperparams::default();
        assert_eq!(epsilon_schedule(&h, 0), 0.1);
        assert_eq!(epsilon_schedule(&h, 100), 0.01);
        assert_eq!(epsilon_schedule(&h, 150), 0.01);
    }

    #[test]
    fn epsilon_geometric_midpoint() {
        let h = Hyperparams::default();
        let mid = epsilon_schedule(&h, 50);
        assert!((mid - (0.1f64 * 0.01).sqrt()).abs() < 1e-12, "mid={mid}");
        assert!((mid - 0.0316227766).abs() < 1e-9);
    }

    #[test]
    fn anneal_endpoints() {
        let h = Hyperparams::default();
        assert_eq!(anneal_factor(&h, 0), 200.0);
        assert_eq!(anneal_factor(&h, 50), 0.0);
        assert_eq!(anneal_factor(&h, 51), 0.0);
        assert_eq!(anneal_factor(&h, 1000), 0.0);
    }

    #[test]
    fn anneal_midpoint_is_half_amplitude() {
        // The shifted sigmoid is symmetric around alpha_term / 2 with the
        // default alpha_min = -3, alpha_step = 0.12.
        let h = Hyperparams::default();
        assert!((anneal_factor(&h, 25) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn anneal_non_increasing() {
        let h = Hyperparams::default();
        let mut prev = f64::INFINITY;
        for t in 0..80 {
            let a = anneal_factor(&h, t);
            assert!(a <= prev + 1e-12);
            prev = a;
        }
    }

    #[test]
    fn greedy_selection_and_tie_break() {
        let mut rng = seeded_rng(0, Stream::Explore(0));
        assert_eq!(select_action(&[1.0, 5.0, 2.0], 0.0, &mut rng), 1);
        assert_eq!(select_action(&[3.0, 3.0, 1.0], 0.0, &mut rng), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = seeded_rng(7, Stream::Explore(0));
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[select_action(&[9.0, 0.0, -9.0], 1.0, &mut rng)] += 1;
        }
        for c in counts {
            let p = c as f64 / n as f64;
            assert!((p - 1.0 / 3.0).abs() < 0.01, "p={p}");
        }
    }
}
