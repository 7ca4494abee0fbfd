//! Time-varying OD demand and its seeded realization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::net::RegionIdx;
use crate::rng::{seeded_rng, Stream};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdDemand {
    pub origin: RegionIdx,
    pub destination: RegionIdx,
    pub weight: f64,
}

/// Demand profile: total volume spread over OD pairs according to their
/// weights and over time according to a piecewise-linear peak curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemandProfile {
    pub total_veh: f64,
    pub horizon_s: f64,
    /// Std-dev of each per-interval draw as a fraction of its mean.
    pub noise_ratio: f64,
    pub peak_curve: Vec<(f64, f64)>,
    pub od: Vec<OdDemand>,
}

impl DemandProfile {
    pub fn scaled(&self, factor: f64) -> DemandProfile {
        let mut p = self.clone();
        p.total_veh *= factor;
        p
    }

    /// Piecewise-linear curve weight at a time fraction of the horizon.
    pub fn curve_weight(&self, t_frac: f64) -> f64 {
        let pts = &self.peak_curve;
        if t_frac <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let (t0, v0) = w[0];
            let (t1, v1) = w[1];
            if t_frac <= t1 {
                return v0 + (v1 - v0) * (t_frac - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1].1
    }

    /// Mean starts per OD per interval, normalized so the per-interval means
    /// sum exactly to `total_veh` over the horizon.
    pub fn mean_table(&self, dt_seconds: f64) -> Vec<Vec<f64>> {
        let steps = (self.horizon_s / dt_seconds).round() as usize;
        let weight_sum: f64 = self.od.iter().map(|o| o.weight).sum();
        let shape: Vec<f64> = (0..steps)
            .map(|t| self.curve_weight((t as f64 + 0.5) / steps as f64))
            .collect();
        let shape_sum: f64 = shape.iter().sum();
        let mut table = vec![vec![0.0; self.od.len()]; steps];
        if weight_sum <= 0.0 || shape_sum <= 0.0 {
            return table;
        }
        for (t, row) in table.iter_mut().enumerate() {
            let time_share = shape[t] / shape_sum;
            for (k, o) in self.od.iter().enumerate() {
                row[k] = self.total_veh * time_share * o.weight / weight_sum;
            }
        }
        table
    }
}

/// Realized per-interval, per-OD trip starts.
#[derive(Debug, Clone)]
pub struct RealizedDemand {
    /// `starts[t][od]` in vehicles for interval t.
    pub starts: Vec<Vec<f64>>,
    pub total: f64,
}

/// Draws the realized trip table: per-OD, per-interval `Normal(m, noise*m)`
/// truncated at zero, deterministic per seed.
pub fn sample_demand(profile: &DemandProfile, dt_seconds: f64, seed: u64) -> RealizedDemand {
    let means = profile.mean_table(dt_seconds);
    let mut rng = seeded_rng(seed, Stream::Demand);
    let mut starts = Vec::with_capacity(means.len());
    let mut total = 0.0;
    for row in &means {
        let mut out = Vec::with_capacity(row.len());
        for &m in row {
            let v = if profile.noise_ratio == 0.0 || m == 0.0 {
                m
            } else {
                let normal = Normal::new(m, profile.noise_ratio * m).expect("valid normal");
                normal.sample(&mut rng).max(0.0)
            };
            total += v;
            out.push(v);
        }
        starts.push(out);
    }
    RealizedDemand { starts, total }
}

/// Samples a trip-leg distance within a region: uniform in
/// `[0.5, 1.5] * mean_leg`, capped at the region's longest route.
pub fn sample_leg_distance<R: Rng>(mean_leg_km: f64, l_max_km: f64, rng: &mut R) -> f64 {
    let draw = rng.gen_range(0.5..1.5) * mean_leg_km;
    draw.min(l_max_km)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(noise: f64) -> DemandProfile {
        DemandProfile {
            total_veh: 3600.0,
            horizon_s: 600.0,
            noise_ratio: noise,
            peak_curve: vec![(0.0, 0.5), (0.5, 1.0), (1.0, 0.25)],
            od: vec![
                OdDemand {
                    origin: 0,
                    destination: 1,
                    weight: 3.0,
                },
                OdDemand {
                    origin: 1,
                    destination: 0,
                    weight: 1.0,
                },
            ],
        }
    }

    #[test]
    fn zero_noise_realizes_means_exactly() {
        let p = profile(0.0);
        let realized = sample_demand(&p, 1.0, 7);
        let means = p.mean_table(1.0);
        assert_eq!(realized.starts, means);
        let sum: f64 = realized.starts.iter().flatten().sum();
        assert!((sum - 3600.0).abs() < 1e-6);
    }

    #[test]
    fn same_seed_is_deterministic() {
        let p = profile(0.3);
        let a = sample_demand(&p, 1.0, 42);
        let b = sample_demand(&p, 1.0, 42);
        assert_eq!(a.starts, b.starts);
        let c = sample_demand(&p, 1.0, 43);
        assert_ne!(a.starts, c.starts);
    }

    #[test]
    fn draw_statistics_match_normal() {
        // 1e5 draws at mean 100, std 30: sample mean within 1%, std within 5%.
        let p = DemandProfile {
            total_veh: 100.0 * 100_000.0,
            horizon_s: 100_000.0,
            noise_ratio: 0.3,
            peak_curve: vec![(0.0, 1.0), (1.0, 1.0)],
            od: vec![OdDemand {
                origin: 0,
                destination: 0,
                weight: 1.0,
            }],
        };
        let realized = sample_demand(&p, 1.0, 5);
        let n = 100_000.0;
        let mean: f64 = realized.starts.iter().flatten().sum::<f64>() / n;
        let var: f64 = realized
            .starts
            .iter()
            .flatten()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!((mean - 100.0).abs() < 1.0, "mean {mean}");
        assert!((var.sqrt() - 30.0).abs() < 1.5, "std {}", var.sqrt());
    }

    #[test]
    fn curve_interpolates_and_clamps() {
        let p = profile(0.0);
        assert_eq!(p.curve_weight(0.0), 0.5);
        assert_eq!(p.curve_weight(0.25), 0.75);
        assert_eq!(p.curve_weight(1.0), 0.25);
        assert_eq!(p.curve_weight(2.0), 0.25);
    }
}
