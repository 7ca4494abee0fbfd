//! Classical teacher controllers: an integral ramp-metering law and a
//! proportional-integral perimeter gating law, quantized onto the shared
//! three-action space, plus per-agent grid-search tuning.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::demand::DemandProfile;
use crate::engine::{
    run_episode, AgentKind, Policy, SimBundle, SimOptions, Simulation, ACTION_HOLD, ACTION_LOWER,
    ACTION_RAISE,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlineaParams {
    /// Integral gain per vehicle.
    pub gain: f64,
    /// Target vehicle count in the metered mainline cell.
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingParams {
    pub kp: f64,
    pub ki: f64,
    /// Target accumulation of the gated region.
    pub threshold: f64,
}

/// Continuous metering-rate update: `KI * (threshold - n)`.
pub fn alinea_step(params: &AlineaParams, merge_cell_count: f64) -> f64 {
    params.gain * (params.threshold - merge_cell_count)
}

/// Continuous perimeter-rate update:
/// `-KP * (N(t+1) - N(t)) + KI * (threshold - N(t))`.
pub fn gating_step(params: &GatingParams, acc_prev: f64, acc_curr: f64) -> f64 {
    -params.kp * (acc_curr - acc_prev) + params.ki * (params.threshold - acc_prev)
}

/// Maps a continuous rate update onto the discrete action space by sign.
pub fn quantize_control(update: f64) -> usize {
    if update > 0.0 {
        ACTION_RAISE
    } else if update < 0.0 {
        ACTION_LOWER
    } else {
        ACTION_HOLD
    }
}

/// Smoothed demonstrator policy: probability `1 - 2*kappa` on the teacher
/// action and `kappa` on each alternative, keeping every log finite.
pub fn teacher_policy(action: usize, kappa: f64) -> [f64; 3] {
    assert!(kappa > 0.0 && kappa < 1.0 / 3.0, "kappa in (0, 1/3)");
    let mut p = [kappa; 3];
    p[action] = 1.0 - 2.0 * kappa;
    p
}

/// Tuned demonstrator parameters for every agent of a scenario
/// (ramp agents first, then perimeter agents, matching the roster order).
#[derive(Debug, Clone)]
pub struct DemonstratorParams {
    pub ramps: Vec<AlineaParams>,
    pub perimeters: Vec<GatingParams>,
}

impl DemonstratorParams {
    /// Thresholds at the critical values: metered-cell critical count for
    /// ramps, MFD critical accumulation for perimeters.
    pub fn defaults(bundle: &SimBundle) -> Self {
        let net = &bundle.net;
        let ramps = net
            .ramp_agents
            .iter()
            .map(|a| AlineaParams {
                gain: 0.01,
                threshold: net.roads[a.mainline].critical_cell_count(),
            })
            .collect();
        let perimeters = net
            .perimeter_agents
            .iter()
            .map(|a| {
                let spec = &net.regions[a.region];
                GatingParams {
                    kp: 0.0,
                    ki: 1.0,
                    threshold: spec.mfd.critical_accumulation(spec.l_sum_km),
                }
            })
            .collect();
        DemonstratorParams { ramps, perimeters }
    }
}

/// Stateful demonstrator over all agents; also usable as a teacher oracle
/// during DRL rollouts.
pub struct DemonstratorPolicy {
    pub params: DemonstratorParams,
    /// Which agents actually act; inactive agents hold.
    pub active: Vec<bool>,
    prev_acc: Vec<Option<f64>>,
}

impl DemonstratorPolicy {
    pub fn new(params: DemonstratorParams) -> Self {
        let n = params.ramps.len() + params.perimeters.len();
        DemonstratorPolicy {
            params,
            active: vec![true; n],
            prev_acc: vec![None; n],
        }
    }

    pub fn solo(params: DemonstratorParams, agent: usize) -> Self {
        let n = params.ramps.len() + params.perimeters.len();
        let mut active = vec![false; n];
        active[agent] = true;
        DemonstratorPolicy {
            params,
            active,
            prev_acc: vec![None; n],
        }
    }

    /// Demonstrator action for one agent at the simulator's current state.
    pub fn action_for(&mut self, agent: usize, sim: &Simulation) -> usize {
        let n_ramps = self.params.ramps.len();
        match &sim.agents()[agent].kind {
            AgentKind::Ramp { .. } => {
                let n = sim.merge_cell_count(agent);
                quantize_control(alinea_step(&self.params.ramps[agent], n))
            }
            AgentKind::Perimeter { region, .. } => {
                let curr = sim.region_accumulation(*region);
                let prev = self.prev_acc[agent].unwrap_or(curr);
                self.prev_acc[agent] = Some(curr);
                let p = &self.params.perimeters[agent - n_ramps];
                quantize_control(gating_step(p, prev, curr))
            }
        }
    }
}

impl Policy for DemonstratorPolicy {
    fn decide(&mut self, _t: usize, sim: &Simulation, _obs: &[Vec<f64>]) -> Vec<usize> {
        (0..sim.agents().len())
            .map(|i| {
                let a = self.action_for(i, sim);
                if self.active[i] {
                    a
                } else {
                    ACTION_HOLD
                }
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum GridSearchError {
    #[error("empty parameter grid for agent '{0}'")]
    EmptyGrid(String),
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub agent: String,
    pub params: String,
    pub ttt_s: f64,
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub params: DemonstratorParams,
    pub table: Vec<GridRow>,
}

/// Default per-agent candidate grids around the critical thresholds.
pub fn default_grids(bundle: &SimBundle) -> (Vec<Vec<AlineaParams>>, Vec<Vec<GatingParams>>) {
    let net = &bundle.net;
    let ramp_grids = net
        .ramp_agents
        .iter()
        .map(|a| {
            let critical = net.roads[a.mainline].critical_cell_count();
            // The last candidate sits near the jam count and is effectively
            // inert; the search can turn a harmful meter off.
            [0.6, 1.0, 1.5, 2.5, 6.0]
                .iter()
                .map(|m| AlineaParams {
                    gain: 0.01,
                    threshold: m * critical,
                })
                .collect()
        })
        .collect();
    let gating_grids = net
        .perimeter_agents
        .iter()
        .map(|a| {
            let spec = &net.regions[a.region];
            let critical = spec.mfd.critical_accumulation(spec.l_sum_km);
            let mut grid = Vec::new();
            for kp in [0.0, 1.0] {
                for m in [0.8, 1.2, 1.8] {
                    grid.push(GatingParams {
                        kp,
                        ki: 1.0,
                        threshold: m * critical,
                    });
                }
            }
            // Effectively inert candidate far above any reachable
            // accumulation.
            grid.push(GatingParams {
                kp: 0.0,
                ki: 1.0,
                threshold: 20.0 * critical,
            });
            grid
        })
        .collect();
    (ramp_grids, gating_grids)
}

/// Per-agent sequential grid search minimizing episode average travel time.
/// Agents tune one at a time in roster order with the already-tuned agents
/// active, so each argmin is taken in the control context it will actually
/// run in; the joint parameter space is never searched. Ties break on the
/// first candidate.
pub fn grid_search_tune(
    bundle: &Arc<SimBundle>,
    profile: &DemandProfile,
    seed: u64,
    ramp_grids: &[Vec<AlineaParams>],
    gating_grids: &[Vec<GatingParams>],
) -> Result<GridSearchOutcome, GridSearchError> {
    let n_ramps = bundle.net.ramp_agents.len();
    let mut tuned = DemonstratorParams::defaults(bundle);
    let mut active = vec![false; bundle.agents.len()];
    let mut table = Vec::new();

    let evaluate = |params: DemonstratorParams, active: Vec<bool>| -> f64 {
        let sim = Simulation::new(
            Arc::clone(bundle),
            profile,
            SimOptions {
                episode_seed: seed,
                ..SimOptions::default()
            },
        );
        let mut policy = DemonstratorPolicy::new(params);
        policy.active = active;
        let out = run_episode(sim, &mut policy, 0.0);
        out.metrics.ttt_avg_s.unwrap_or(f64::INFINITY)
    };

    for (i, agent) in bundle.agents.iter().enumerate() {
        active[i] = true;
        let rows: Vec<(String, f64)> = match &agent.kind {
            AgentKind::Ramp { .. } => {
                let grid = &ramp_grids[i];
                if grid.is_empty() {
                    return Err(GridSearchError::EmptyGrid(agent.name.clone()));
                }
                let ttts: Vec<f64> = grid
                    .par_iter()
                    .map(|p| {
                        let mut params = tuned.clone();
                        params.ramps[i] = *p;
                        evaluate(params, active.clone())
                    })
                    .collect();
                let best = argmin(&ttts);
                tuned.ramps[i] = grid[best];
                grid.iter()
                    .zip(&ttts)
                    .map(|(p, &t)| (format!("gain={} threshold={}", p.gain, p.threshold), t))
                    .collect()
            }
            AgentKind::Perimeter { .. } => {
                let grid = &gating_grids[i - n_ramps];
                if grid.is_empty() {
                    return Err(GridSearchError::EmptyGrid(agent.name.clone()));
                }
                let ttts: Vec<f64> = grid
                    .par_iter()
                    .map(|p| {
                        let mut params = tuned.clone();
                        params.perimeters[i - n_ramps] = *p;
                        evaluate(params, active.clone())
                    })
                    .collect();
                let best = argmin(&ttts);
                tuned.perimeters[i - n_ramps] = grid[best];
                grid.iter()
                    .zip(&ttts)
                    .map(|(p, &t)| {
                        (
                            format!("kp={} ki={} threshold={}", p.kp, p.ki, p.threshold),
                            t,
                        )
                    })
                    .collect()
            }
        };
        for (params, ttt_s) in rows {
            table.push(GridRow {
                agent: agent.name.clone(),
                params,
                ttt_s,
            });
        }
    }

    Ok(GridSearchOutcome {
        params: tuned,
        table,
    })
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alinea_examples() {
        let p = AlineaParams {
            gain: 0.01,
            threshold: 50.0,
        };
        assert_eq!(alinea_step(&p, 50.0), 0.0);
        assert!((alinea_step(&p, 30.0) - 0.2).abs() < 1e-12);
        let double = AlineaParams {
            gain: 0.02,
            threshold: 50.0,
        };
        assert!((alinea_step(&double, 30.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gating_examples() {
        let p = GatingParams {
            kp: 0.1,
            ki: 0.05,
            threshold: 80.0,
        };
        assert_eq!(
            gating_step(
                &GatingParams {
                    kp: 0.1,
                    ki: 0.05,
                    threshold: 100.0
                },
                100.0,
                100.0
            ),
            0.0
        );
        // Rising accumulation above the threshold pushes the rate down.
        assert!(gating_step(&p, 100.0, 120.0) < 0.0);
        assert!((gating_step(&p, 100.0, 120.0) - (-3.0)).abs() < 1e-12);
    }

    #[test]
    fn quantization_by_sign() {
        assert_eq!(quantize_control(0.2), ACTION_RAISE);
        assert_eq!(quantize_control(0.0), ACTION_HOLD);
        assert_eq!(quantize_control(-3.0), ACTION_LOWER);
    }

    #[test]
    fn quantized_alinea_ignores_gain_magnitude() {
        for gain in [1e-6, 0.01, 5.0] {
            let p = AlineaParams {
                gain,
                threshold: 10.0,
            };
            assert_eq!(quantize_control(alinea_step(&p, 3.0)), ACTION_RAISE);
            assert_eq!(quantize_control(alinea_step(&p, 30.0)), ACTION_LOWER);
        }
    }

    #[test]
    fn teacher_policy_smoothing() {
        let p = teacher_policy(ACTION_RAISE, 0.05);
        assert_eq!(p, [0.9, 0.05, 0.05]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for kappa in [0.01, 0.1, 0.33] {
            if kappa >= 1.0 / 3.0 {
                continue;
            }
            let p = teacher_policy(ACTION_LOWER, kappa);
            assert!(p.iter().all(|&x| x > 0.0));
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, ACTION_LOWER);
        }
    }
}
