//! The demonstration-guided training loop: per-epoch rollouts with
//! epsilon-greedy exploration, per-agent replay buffers and networks,
//! multi-step targets against a periodically cloned target network, and the
//! annealed demonstration term. Ablation modes strip components to recover
//! the plain DQN/DRQN baselines.

use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{
    combined_loss_grad, nstep_return, CeDirection, LossSample, NStepMode,
};
use super::opt::{clip_grad_norm, Adam};
use super::qnet::{Dims, Hidden, QNetwork};
use super::replay::{ReplayBuffer, Transition};
use super::schedule::{anneal_factor, argmax, epsilon_schedule, select_action};
use crate::demand::DemandProfile;
use crate::demonstrators::{teacher_policy, DemonstratorParams, DemonstratorPolicy};
use crate::engine::{run_episode, Policy, SimBundle, SimOptions, Simulation};
use crate::rng::{seeded_rng, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("unknown training mode '{0}'")]
    UnknownMode(String),
    #[error("mode {0:?} needs demonstrator parameters")]
    MissingTeacher(TrainMode),
    #[error("checkpoint io: {0}")]
    Checkpoint(String),
}

/// Training configurations; the ablations of the coordinated-control study
/// plus the memoryless DQN baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    /// Demonstration loss + multi-step returns + recurrent history.
    Proposed,
    /// Demonstration loss, single-step returns.
    NoNsteps,
    /// Multi-step returns without the demonstration loss.
    NoDemonstrator,
    /// Neither demonstration nor multi-step returns (the DRQN baseline).
    NoDemonstratorNoNsteps,
    /// DRQN configuration with the recurrent state pinned to zero.
    Dqn,
}

impl TrainMode {
    pub fn uses_demonstration(self) -> bool {
        matches!(self, TrainMode::Proposed | TrainMode::NoNsteps)
    }

    pub fn uses_nsteps(self) -> bool {
        matches!(self, TrainMode::Proposed | TrainMode::NoDemonstrator)
    }

    pub fn recurrent(self) -> bool {
        !matches!(self, TrainMode::Dqn)
    }

    pub fn parse(s: &str) -> Result<Self, TrainError> {
        match s {
            "proposed" => Ok(TrainMode::Proposed),
            "no-nsteps" => Ok(TrainMode::NoNsteps),
            "no-demonstrator" => Ok(TrainMode::NoDemonstrator),
            "no-demonstrator-no-nsteps" | "drqn" => Ok(TrainMode::NoDemonstratorNoNsteps),
            "dqn" => Ok(TrainMode::Dqn),
            other => Err(TrainError::UnknownMode(other.to_string())),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TrainMode::Proposed => "proposed",
            TrainMode::NoNsteps => "no-nsteps",
            TrainMode::NoDemonstrator => "no-demonstrator",
            TrainMode::NoDemonstratorNoNsteps => "no-demonstrator-no-nsteps",
            TrainMode::Dqn => "dqn",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Replay capacity per agent.
    pub n_b: usize,
    /// Optimization passes per epoch.
    pub n_o: usize,
    /// Target-clone period in epochs.
    pub n_c: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_last: usize,
    pub alpha_min: f64,
    pub alpha_step: f64,
    pub alpha_term: usize,
    pub alpha_amp: f64,
    /// Multi-step return length.
    pub eta: usize,
    /// Discount factor.
    pub lambda: f64,
    pub batch: usize,
    pub learning_rate: f64,
    /// Teacher-policy smoothing mass on the non-demonstrated actions.
    pub kappa: f64,
    pub grad_clip: f64,
    pub nstep_mode: NStepMode,
    pub ce_direction: CeDirection,
    pub enc1: usize,
    pub enc2: usize,
    pub hidden: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_b: 30_000,
            n_o: 1,
            n_c: 5,
            eps_start: 0.1,
            eps_end: 0.01,
            eps_last: 100,
            alpha_min: -3.0,
            alpha_step: 0.12,
            alpha_term: 50,
            alpha_amp: 200.0,
            eta: 30,
            lambda: 0.99,
            batch: 128,
            learning_rate: 3e-6,
            kappa: 0.05,
            grad_clip: 10.0,
            nstep_mode: NStepMode::Standard,
            ce_direction: CeDirection::AsWritten,
            enc1: 100,
            enc2: 100,
            hidden: 100,
        }
    }
}

impl Hyperparams {
    pub fn dims_for(&self, obs: usize) -> Dims {
        Dims {
            obs,
            enc1: self.enc1,
            enc2: self.enc2,
            hidden: self.hidden,
            actions: 3,
        }
    }

    /// Stable content hash for checkpoint compatibility checks.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("serializable");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedAgent {
    pub name: String,
    pub dims: Dims,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub cumulative_reward: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub mean_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub agents: Vec<TrainedAgent>,
    pub log: Vec<TrainLogRow>,
    pub mode: TrainMode,
}

struct StepRecord {
    hidden: Hidden,
    obs: Vec<f64>,
    action: usize,
    teacher: Option<usize>,
}

/// Rollout policy: epsilon-greedy over the per-agent Q-networks, recording
/// the trajectory and the teacher's action on the same observations.
struct RolloutPolicy<'a> {
    nets: &'a [QNetwork],
    hidden: Vec<Hidden>,
    epsilon: f64,
    recurrent: bool,
    rngs: &'a mut [ChaCha8Rng],
    teacher: Option<DemonstratorPolicy>,
    traj: Vec<Vec<StepRecord>>,
    rewards: Vec<f64>,
}

impl<'a> RolloutPolicy<'a> {
    fn new(
        nets: &'a [QNetwork],
        rngs: &'a mut [ChaCha8Rng],
        epsilon: f64,
        recurrent: bool,
        teacher: Option<DemonstratorPolicy>,
    ) -> Self {
        let hidden = nets.iter().map(|n| n.zero_hidden()).collect();
        let traj = nets.iter().map(|_| Vec::new()).collect();
        RolloutPolicy {
            nets,
            hidden,
            epsilon,
            recurrent,
            rngs,
            teacher,
            traj,
            rewards: Vec::new(),
        }
    }
}

impl Policy for RolloutPolicy<'_> {
    fn decide(&mut self, _t: usize, sim: &Simulation, obs: &[Vec<f64>]) -> Vec<usize> {
        let mut actions = Vec::with_capacity(obs.len());
        for i in 0..obs.len() {
            let h_in = if self.recurrent {
                self.hidden[i].clone()
            } else {
                self.nets[i].zero_hidden()
            };
            let (q, h_next) = self.nets[i].forward(&obs[i], &h_in);
            let action = select_action(&q, self.epsilon, &mut self.rngs[i]);
            let teacher = self.teacher.as_mut().map(|tp| tp.action_for(i, sim));
            self.traj[i].push(StepRecord {
                hidden: h_in,
                obs: obs[i].clone(),
                action,
                teacher,
            });
            if self.recurrent {
                self.hidden[i] = h_next;
            }
            actions.push(action);
        }
        actions
    }

    fn window_feedback(&mut self, _t: usize, reward: f64, _sim: &Simulation) {
        self.rewards.push(reward);
    }
}

fn train_episode_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ ((epoch as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15))
}

/// Runs the full training algorithm and returns the trained agents plus the
/// per-epoch reward curve.
#[allow(clippy::too_many_arguments)]
pub fn train(
    bundle: &Arc<SimBundle>,
    profile: &DemandProfile,
    teacher: Option<&DemonstratorParams>,
    hyper: &Hyperparams,
    mode: TrainMode,
    seed: u64,
    epochs: usize,
    c_r: f64,
) -> Result<TrainOutput, TrainError> {
    if mode.uses_demonstration() && teacher.is_none() {
        return Err(TrainError::MissingTeacher(mode));
    }
    let agents = &bundle.agents;
    let n_agents = agents.len();

    let mut nets: Vec<QNetwork> = agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut net = QNetwork::new(hyper.dims_for(a.obs_dim));
            net.init_xavier(&mut seeded_rng(seed, Stream::WeightInit(i)));
            net
        })
        .collect();
    let mut targets: Vec<Vec<f64>> = nets.iter().map(|n| n.clone_target()).collect();
    let mut buffers: Vec<ReplayBuffer> = (0..n_agents).map(|_| ReplayBuffer::new(hyper.n_b)).collect();
    let mut explore_rngs: Vec<ChaCha8Rng> = (0..n_agents)
        .map(|i| seeded_rng(seed, Stream::Explore(i)))
        .collect();
    let mut replay_rngs: Vec<ChaCha8Rng> = (0..n_agents)
        .map(|i| seeded_rng(seed, Stream::Replay(i)))
        .collect();
    let mut adams: Vec<Adam> = nets
        .iter()
        .map(|n| Adam::new(n.theta.len(), hyper.learning_rate))
        .collect();

    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let epsilon = epsilon_schedule(hyper, epoch);
        let alpha = if mode.uses_demonstration() {
            anneal_factor(hyper, epoch)
        } else {
            0.0
        };

        // Rollout.
        let sim = Simulation::new(
            Arc::clone(bundle),
            profile,
            SimOptions {
                episode_seed: train_episode_seed(seed, epoch),
                ..SimOptions::default()
            },
        );
        let teacher_policy_state = teacher.map(|p| DemonstratorPolicy::new(p.clone()));
        let mut rollout = RolloutPolicy::new(
            &nets,
            &mut explore_rngs,
            epsilon,
            mode.recurrent(),
            teacher_policy_state,
        );
        let out = run_episode(sim, &mut rollout, c_r);
        let cumulative_reward: f64 = rollout.rewards.iter().sum();
        let rewards = std::mem::take(&mut rollout.rewards);
        let traj = std::mem::take(&mut rollout.traj);
        drop(rollout);
        let _ = out;

        // Assemble transitions with multi-step targets.
        let eta = if mode.uses_nsteps() { hyper.eta } else { 1 };
        let t_max = rewards.len();
        for (i, agent_traj) in traj.into_iter().enumerate() {
            debug_assert_eq!(agent_traj.len(), t_max);
            for (t, rec) in agent_traj.iter().enumerate() {
                let target = nstep_return(&rewards[t..], hyper.lambda, eta, hyper.nstep_mode);
                let boot_idx = t + target.bootstrap_steps;
                let bootstrap = (boot_idx < t_max)
                    .then(|| {
                        let b = &agent_traj[boot_idx];
                        (b.obs.clone(), b.hidden.clone())
                    });
                buffers[i].push(Transition {
                    hidden: rec.hidden.clone(),
                    obs: rec.obs.clone(),
                    action: rec.action,
                    reward: rewards[t],
                    n_step_return: target.r_hat,
                    bootstrap,
                    bootstrap_discount: target.bootstrap_discount,
                    teacher_action: rec.teacher,
                });
            }
        }

        // Optimization passes; agents are independent.
        let losses: Vec<f64> = nets
            .par_iter_mut()
            .zip(targets.par_iter())
            .zip(buffers.par_iter())
            .zip(replay_rngs.par_iter_mut())
            .zip(adams.par_iter_mut())
            .map(|((((net, target_theta), buffer), rng), adam)| {
                if buffer.len() < hyper.batch {
                    return f64::NAN;
                }
                let target_net = QNetwork {
                    dims: net.dims,
                    layout: net.layout.clone(),
                    theta: target_theta.clone(),
                };
                let mut grad = vec![0.0; net.theta.len()];
                let mut loss_sum = 0.0;
                for _ in 0..hyper.n_o {
                    let batch = buffer.sample(hyper.batch, rng).expect("size checked");
                    let samples: Vec<LossSample> = batch
                        .iter()
                        .map(|tr| {
                            let bootstrap_value = tr.bootstrap.as_ref().map_or(0.0, |(o, h)| {
                                let (q, _) = target_net.forward(o, h);
                                q[argmax(&q)]
                            });
                            LossSample {
                                obs: tr.obs.clone(),
                                hidden: tr.hidden.clone(),
                                action: tr.action,
                                target: tr.n_step_return
                                    + tr.bootstrap_discount * bootstrap_value,
                                teacher: tr
                                    .teacher_action
                                    .map(|a| teacher_policy(a, hyper.kappa)),
                            }
                        })
                        .collect();
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let parts =
                        combined_loss_grad(net, &samples, alpha, hyper.ce_direction, &mut grad);
                    clip_grad_norm(&mut grad, hyper.grad_clip);
                    adam.step(&mut net.theta, &grad);
                    loss_sum += parts.total;
                }
                loss_sum / hyper.n_o as f64
            })
            .collect();
        let finite: Vec<f64> = losses.into_iter().filter(|l| l.is_finite()).collect();
        let mean_loss = if finite.is_empty() {
            0.0
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };

        // Periodic target clone.
        if (epoch + 1) % hyper.n_c == 0 {
            for (net, target) in nets.iter().zip(targets.iter_mut()) {
                *target = net.clone_target();
            }
        }

        log.push(TrainLogRow {
            epoch,
            cumulative_reward,
            epsilon,
            alpha,
            mean_loss,
        });
    }

    let trained = nets
        .into_iter()
        .zip(agents)
        .map(|(net, a)| TrainedAgent {
            name: a.name.clone(),
            dims: net.dims,
            theta: net.theta,
        })
        .collect();
    Ok(TrainOutput {
        agents: trained,
        log,
        mode,
    })
}

/// Greedy evaluation policy over trained agents (epsilon = 0).
pub struct GreedyPolicy {
    nets: Vec<QNetwork>,
    hidden: Vec<Hidden>,
    recurrent: bool,
}

impl GreedyPolicy {
    pub fn new(agents: &[TrainedAgent], recurrent: bool) -> Self {
        let nets: Vec<QNetwork> = agents
            .iter()
            .map(|a| {
                let mut net = QNetwork::new(a.dims);
                net.theta = a.theta.clone();
                net
            })
            .collect();
        let hidden = nets.iter().map(|n| n.zero_hidden()).collect();
        GreedyPolicy {
            nets,
            hidden,
            recurrent,
        }
    }
}

impl Policy for GreedyPolicy {
    fn decide(&mut self, _t: usize, _sim: &Simulation, obs: &[Vec<f64>]) -> Vec<usize> {
        let mut actions = Vec::with_capacity(obs.len());
        for i in 0..obs.len() {
            let h_in = if self.recurrent {
                self.hidden[i].clone()
            } else {
                self.nets[i].zero_hidden()
            };
            let (q, h_next) = self.nets[i].forward(&obs[i], &h_in);
            if self.recurrent {
                self.hidden[i] = h_next;
            }
            actions.push(argmax(&q));
        }
        actions
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    agent: String,
    obs_dim: usize,
    dims: Dims,
    hyper_hash: String,
    theta: Vec<f64>,
}

/// Writes one checkpoint file per agent into `dir`.
pub fn save_checkpoints(
    dir: &Path,
    agents: &[TrainedAgent],
    hyper: &Hyperparams,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    for a in agents {
        let file = CheckpointFile {
            agent: a.name.clone(),
            obs_dim: a.dims.obs,
            dims: a.dims,
            hyper_hash: hyper.hash(),
            theta: a.theta.clone(),
        };
        let path = dir.join(format!("{}.json", a.name));
        let text =
            serde_json::to_string(&file).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    }
    Ok(())
}

/// Loads checkpoints for the named agents from `dir`.
pub fn load_checkpoints(dir: &Path, agent_names: &[String]) -> Result<Vec<TrainedAgent>, TrainError> {
    agent_names
        .iter()
        .map(|name| {
            let path = dir.join(format!("{name}.json"));
            let text = std::fs::read_to_string(&path).map_err(|e| {
                TrainError::Checkpoint(format!("{}: {e}", path.display()))
            })?;
            let file: CheckpointFile = serde_json::from_str(&text)
                .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
            Ok(TrainedAgent {
                name: file.agent,
                dims: file.dims,
                theta: file.theta,
            })
        })
        .collect()
}
