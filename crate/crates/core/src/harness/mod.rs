//! Experiment orchestration: scenario matrix, ablations, sensitivity sweeps,
//! and deterministic CSV export.

pub mod scenario;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::config::{load_network_config, ConfigError, Scenario};
use crate::demand::DemandProfile;
use crate::demonstrators::{
    default_grids, grid_search_tune, DemonstratorParams, DemonstratorPolicy, GridRow,
    GridSearchError, GridSearchOutcome,
};
use crate::drl::{
    load_checkpoints, save_checkpoints, train, GreedyPolicy, Hyperparams, TrainError, TrainMode,
    TrainOutput,
};
use crate::engine::{
    build_bundle, run_episode, EpisodeOutput, NoControl, Policy, SimBundle, SimOptions, Simulation,
};
use crate::net::Network;
use crate::plan::PlanError;
use scenario::{builtin_small, SmallOptions};

/// Seed used to measure the reward baseline on a no-control episode.
const BASELINE_SEED: u64 = 9_999_991;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    GridSearch(#[from] GridSearchError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioChoice {
    BuiltinSmall,
    Path(PathBuf),
}

impl ScenarioChoice {
    pub fn parse(s: &str) -> Self {
        if s == "builtin-small" {
            ScenarioChoice::BuiltinSmall
        } else {
            ScenarioChoice::Path(PathBuf::from(s))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    None,
    Ramp,
    Perimeter,
    Both,
}

impl ControlMode {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "none" => Ok(ControlMode::None),
            "ramp" => Ok(ControlMode::Ramp),
            "perimeter" => Ok(ControlMode::Perimeter),
            "both" => Ok(ControlMode::Both),
            other => Err(HarnessError::InvalidSpec(format!(
                "unknown control mode '{other}'"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ControlMode::None => "none",
            ControlMode::Ramp => "ramp",
            ControlMode::Perimeter => "perimeter",
            ControlMode::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerChoice {
    NoControl,
    Demonstrator,
    Dqn,
    Drqn,
    Proposed,
    NoNsteps,
    NoDemonstrator,
}

impl ControllerChoice {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "none" | "no-control" => Ok(ControllerChoice::NoControl),
            "demonstrator" => Ok(ControllerChoice::Demonstrator),
            "dqn" => Ok(ControllerChoice::Dqn),
            "drqn" => Ok(ControllerChoice::Drqn),
            "proposed" => Ok(ControllerChoice::Proposed),
            "no-nsteps" => Ok(ControllerChoice::NoNsteps),
            "no-demonstrator" => Ok(ControllerChoice::NoDemonstrator),
            other => Err(HarnessError::InvalidSpec(format!(
                "unknown controller '{other}'"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ControllerChoice::NoControl => "none",
            ControllerChoice::Demonstrator => "demonstrator",
            ControllerChoice::Dqn => "dqn",
            ControllerChoice::Drqn => "drqn",
            ControllerChoice::Proposed => "proposed",
            ControllerChoice::NoNsteps => "no-nsteps",
            ControllerChoice::NoDemonstrator => "no-demonstrator",
        }
    }

    pub fn train_mode(self) -> Option<TrainMode> {
        match self {
            ControllerChoice::Proposed => Some(TrainMode::Proposed),
            ControllerChoice::NoNsteps => Some(TrainMode::NoNsteps),
            ControllerChoice::NoDemonstrator => Some(TrainMode::NoDemonstrator),
            ControllerChoice::Drqn => Some(TrainMode::NoDemonstratorNoNsteps),
            ControllerChoice::Dqn => Some(TrainMode::Dqn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: ScenarioChoice,
    pub mode: ControlMode,
    pub controller: ControllerChoice,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub demand_scale: f64,
    /// Desk-scale divisor: shortens the builtin horizon to 1 h and divides
    /// the demand volume.
    pub desk_scale: Option<f64>,
    pub hyper: Hyperparams,
    pub out_dir: PathBuf,
    pub dump_dynamics: bool,
    /// Overrides the measured no-control reward baseline when set.
    pub reward_baseline: Option<f64>,
}

impl ExperimentSpec {
    pub fn desk(out_dir: PathBuf) -> Self {
        ExperimentSpec {
            scenario: ScenarioChoice::BuiltinSmall,
            mode: ControlMode::Both,
            controller: ControllerChoice::Proposed,
            seeds: vec![1, 2, 3],
            epochs: 30,
            demand_scale: 1.0,
            desk_scale: Some(2.8),
            hyper: desk_hyperparams(),
            out_dir,
            dump_dynamics: false,
            reward_baseline: None,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::InvalidSpec("seeds must be non-empty".into()));
        }
        if !(0.1..=3.0).contains(&self.demand_scale) {
            return Err(HarnessError::InvalidSpec(format!(
                "demand scale {} outside [0.1, 3]",
                self.demand_scale
            )));
        }
        Ok(())
    }
}

/// Training intensity suitable for 30-epoch desk runs. The annealing
/// amplitude is raised to keep the demonstration term dominant against the
/// squared TD errors of desk-scale returns; the schedule shapes and the
/// other published constants stay at their defaults.
pub fn desk_hyperparams() -> Hyperparams {
    Hyperparams {
        learning_rate: 1e-3,
        n_o: 20,
        alpha_amp: 5e4,
        ..Hyperparams::default()
    }
}

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub control: String,
    pub model: String,
    pub reward: Option<f64>,
    pub ttt_s: Option<f64>,
    pub delay: Option<f64>,
    pub speed_kmh: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub control: String,
    pub model: String,
    pub reward_mean: Option<f64>,
    pub reward_std: Option<f64>,
    pub ttt_mean: Option<f64>,
    pub ttt_std: Option<f64>,
    pub delay_mean: Option<f64>,
    pub delay_std: Option<f64>,
    pub speed_mean: Option<f64>,
    pub speed_std: Option<f64>,
    pub n: usize,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
    pub reward_baseline: f64,
    pub tuning_tables: Vec<GridRow>,
    pub files: Vec<PathBuf>,
}

/// Everything fixed across the seeds of one experiment.
struct ExperimentContext {
    net: Arc<Network>,
    profile: DemandProfile,
    reward_baseline: f64,
    demand_scale: f64,
}

impl ExperimentContext {
    fn new(spec: &ExperimentSpec) -> Result<Self, HarnessError> {
        spec.validate()?;
        let scenario = load_spec_scenario(spec)?;
        let net = Arc::new(apply_mode(&scenario.network, spec.mode));
        let profile = scenario.demand;
        let reward_baseline = match spec.reward_baseline {
            Some(c_r) => c_r,
            None => {
                let baseline_bundle =
                    Arc::new(build_bundle(Arc::clone(&net), &profile, BASELINE_SEED)?);
                measure_reward_baseline(&baseline_bundle, &profile)
            }
        };
        Ok(ExperimentContext {
            net,
            profile,
            reward_baseline,
            demand_scale: spec.demand_scale,
        })
    }

    fn bundle(&self, seed: u64) -> Result<Arc<SimBundle>, HarnessError> {
        Ok(Arc::new(build_bundle(
            Arc::clone(&self.net),
            &self.profile,
            seed,
        )?))
    }

    fn eval(
        &self,
        bundle: &Arc<SimBundle>,
        policy: &mut dyn Policy,
        seed: u64,
        scale: f64,
        record_dynamics: bool,
    ) -> EpisodeOutput {
        let sim = Simulation::new(
            Arc::clone(bundle),
            &self.profile,
            SimOptions {
                episode_seed: seed,
                demand_scale: scale,
                audit: false,
                record_dynamics,
            },
        );
        run_episode(sim, policy, self.reward_baseline)
    }
}

pub fn load_spec_scenario(spec: &ExperimentSpec) -> Result<Scenario, HarnessError> {
    match (&spec.scenario, spec.desk_scale) {
        (ScenarioChoice::BuiltinSmall, Some(divisor)) => {
            Ok(builtin_small(SmallOptions::desk(divisor)))
        }
        (ScenarioChoice::BuiltinSmall, None) => Ok(builtin_small(SmallOptions::full())),
        (ScenarioChoice::Path(p), desk) => {
            let mut s = load_network_config(p)?;
            if let Some(divisor) = desk {
                s.demand.total_veh /= divisor;
            }
            Ok(s)
        }
    }
}

/// Restricts the declared agents to the requested control mode.
pub fn apply_mode(net: &Network, mode: ControlMode) -> Network {
    let mut out = net.clone();
    match mode {
        ControlMode::None => {
            out.ramp_agents.clear();
            out.perimeter_agents.clear();
        }
        ControlMode::Ramp => out.perimeter_agents.clear(),
        ControlMode::Perimeter => out.ramp_agents.clear(),
        ControlMode::Both => {}
    }
    out
}

/// Mean per-window completions of a seeded no-control episode, rounded;
/// the reward normalization constant.
pub fn measure_reward_baseline(bundle: &Arc<SimBundle>, profile: &DemandProfile) -> f64 {
    let sim = Simulation::new(
        Arc::clone(bundle),
        profile,
        SimOptions {
            episode_seed: BASELINE_SEED,
            ..SimOptions::default()
        },
    );
    let decision_steps = sim.decision_steps;
    let out = run_episode(sim, &mut NoControl, 0.0);
    let windows = (out.metrics.steps / decision_steps).max(1);
    (out.metrics.total_completed / windows as f64).round()
}

fn row_from_output(
    control: &str,
    model: &str,
    seed: u64,
    out: &EpisodeOutput,
) -> ResultRow {
    ResultRow {
        control: control.to_string(),
        model: model.to_string(),
        reward: Some(out.metrics.cumulative_reward),
        ttt_s: out.metrics.ttt_avg_s,
        delay: out.metrics.delay,
        speed_kmh: out.metrics.speed_avg_kmh,
        seed,
    }
}

/// Per-interval metrics of one evaluation episode: bookkeeping counters,
/// the window rewards, and every agent's control rate.
fn export_interval_metrics(
    dir: &Path,
    tag: &str,
    agent_names: &[String],
    out: &EpisodeOutput,
) -> Result<PathBuf, HarnessError> {
    let path = dir.join(format!("metrics_{tag}.csv"));
    let mut w = csv_writer(&path)?;
    let mut header = String::from("t,n_inj,n_run,n_com,reward");
    for name in agent_names {
        header.push_str(&format!(",rate_{name}"));
    }
    writeln!(w, "{header}").map_err(io_err(&path))?;
    for r in &out.metrics.series {
        let mut line = format!(
            "{},{},{},{},{}",
            r.t, r.injected_cum, r.running, r.completed, r.reward
        );
        for rate in &r.rates {
            line.push_str(&format!(",{rate}"));
        }
        writeln!(w, "{line}").map_err(io_err(&path))?;
    }
    Ok(path)
}

fn dump_dynamics_files(
    dir: &Path,
    tag: &str,
    out: &EpisodeOutput,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    let densities = dir.join(format!("densities_{tag}.csv"));
    {
        let mut w = csv_writer(&densities)?;
        writeln!(w, "t,road,cell,vehicles").map_err(io_err(&densities))?;
        for r in &out.cell_density_rows {
            writeln!(w, "{},{},{},{}", r.t, r.road, r.cell, r.vehicles)
                .map_err(io_err(&densities))?;
        }
    }
    files.push(densities);
    let regions = dir.join(format!("regions_{tag}.csv"));
    {
        let mut w = csv_writer(&regions)?;
        writeln!(w, "t,region,accumulation,speed_kmh,inflow,outflow")
            .map_err(io_err(&regions))?;
        for r in &out.region_curve_rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.t, r.region, r.accumulation, r.speed_kmh, r.inflow, r.outflow
            )
            .map_err(io_err(&regions))?;
        }
    }
    files.push(regions);
    Ok(files)
}

fn csv_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).map_err(io_err(path))?,
    ))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the raw result rows with a deterministic column order.
pub fn export_results(rows: &[ResultRow], dir: &Path) -> Result<PathBuf, HarnessError> {
    let path = dir.join("results.csv");
    let mut w = csv_writer(&path)?;
    writeln!(w, "control,model,reward,ttt_s,delay,speed_kmh,seed").map_err(io_err(&path))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.control,
            r.model,
            fmt_opt(r.reward),
            fmt_opt(r.ttt_s),
            fmt_opt(r.delay),
            fmt_opt(r.speed_kmh),
            r.seed
        )
        .map_err(io_err(&path))?;
    }
    Ok(path)
}

/// Parses a results file back; used by the export round-trip checks.
pub fn parse_results(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(HarnessError::InvalidSpec(format!(
                "malformed results line '{line}'"
            )));
        }
        let opt = |s: &str| -> Option<f64> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        rows.push(ResultRow {
            control: parts[0].to_string(),
            model: parts[1].to_string(),
            reward: opt(parts[2]),
            ttt_s: opt(parts[3]),
            delay: opt(parts[4]),
            speed_kmh: opt(parts[5]),
            seed: parts[6].parse().map_err(|_| {
                HarnessError::InvalidSpec(format!("bad seed in line '{line}'"))
            })?,
        });
    }
    Ok(rows)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

/// Aggregates raw rows into mean +- std per (control, model).
pub fn aggregate_rows(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.control.clone(), r.model.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.iter()
        .map(|(control, model)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| &r.control == control && &r.model == model)
                .collect();
            let collect = |f: fn(&ResultRow) -> Option<f64>| -> Vec<f64> {
                group.iter().filter_map(|r| f(r)).collect()
            };
            let (reward_mean, reward_std) = mean_std(&collect(|r| r.reward));
            let (ttt_mean, ttt_std) = mean_std(&collect(|r| r.ttt_s));
            let (delay_mean, delay_std) = mean_std(&collect(|r| r.delay));
            let (speed_mean, speed_std) = mean_std(&collect(|r| r.speed_kmh));
            AggregateRow {
                control: control.clone(),
                model: model.clone(),
                reward_mean,
                reward_std,
                ttt_mean,
                ttt_std,
                delay_mean,
                delay_std,
                speed_mean,
                speed_std,
                n: group.len(),
            }
        })
        .collect()
}

pub fn export_aggregates(rows: &[AggregateRow], dir: &Path) -> Result<PathBuf, HarnessError> {
    let path = dir.join("aggregate.csv");
    let mut w = csv_writer(&path)?;
    writeln!(
        w,
        "control,model,reward_mean,reward_std,ttt_mean,ttt_std,delay_mean,delay_std,speed_mean,speed_std,n"
    )
    .map_err(io_err(&path))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.control,
            r.model,
            fmt_opt(r.reward_mean),
            fmt_opt(r.reward_std),
            fmt_opt(r.ttt_mean),
            fmt_opt(r.ttt_std),
            fmt_opt(r.delay_mean),
            fmt_opt(r.delay_std),
            fmt_opt(r.speed_mean),
            fmt_opt(r.speed_std),
            r.n
        )
        .map_err(io_err(&path))?;
    }
    Ok(path)
}

fn export_tuning(rows: &[GridRow], dir: &Path) -> Result<PathBuf, HarnessError> {
    let path = dir.join("tuning.csv");
    let mut w = csv_writer(&path)?;
    writeln!(w, "agent,params,ttt_s").map_err(io_err(&path))?;
    for r in rows {
        writeln!(w, "{},{},{}", r.agent, r.params, r.ttt_s).map_err(io_err(&path))?;
    }
    Ok(path)
}

fn export_train_log(out: &TrainOutput, seed: u64, dir: &Path) -> Result<PathBuf, HarnessError> {
    let path = dir.join(format!("training_{}_{seed}.csv", out.mode.label()));
    let mut w = csv_writer(&path)?;
    writeln!(w, "epoch,cumulative_reward,epsilon,alpha,mean_loss").map_err(io_err(&path))?;
    for r in &out.log {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch, r.cumulative_reward, r.epsilon, r.alpha, r.mean_loss
        )
        .map_err(io_err(&path))?;
    }
    Ok(path)
}

fn tune_for(
    ctx: &ExperimentContext,
    bundle: &Arc<SimBundle>,
    seed: u64,
) -> Result<GridSearchOutcome, HarnessError> {
    let (ramp_grids, gating_grids) = default_grids(bundle);
    Ok(grid_search_tune(
        bundle,
        &ctx.profile.scaled(ctx.demand_scale),
        seed,
        &ramp_grids,
        &gating_grids,
    )?)
}

/// One full experiment: per seed, tune or train as the controller requires,
/// then run one greedy evaluation episode; emits raw and aggregate rows.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, HarnessError> {
    let ctx = ExperimentContext::new(spec)?;
    let control = spec.mode.label();
    let mut rows = Vec::new();
    let mut tuning_tables = Vec::new();
    let mut files = Vec::new();

    for &seed in &spec.seeds {
        let bundle = ctx.bundle(seed)?;
        let agent_names: Vec<String> = bundle.agents.iter().map(|a| a.name.clone()).collect();
        // Shared no-control baseline row.
        let base = ctx.eval(
            &bundle,
            &mut NoControl,
            seed,
            spec.demand_scale,
            spec.dump_dynamics,
        );
        files.push(export_interval_metrics(
            &spec.out_dir,
            &format!("none_{seed}"),
            &agent_names,
            &base,
        )?);
        if spec.dump_dynamics {
            files.extend(dump_dynamics_files(
                &spec.out_dir,
                &format!("none_{seed}"),
                &base,
            )?);
        }
        rows.push(row_from_output(control, "none", seed, &base));

        if spec.mode == ControlMode::None
            || spec.controller == ControllerChoice::NoControl
        {
            continue;
        }
        match spec.controller {
            ControllerChoice::NoControl => unreachable!(),
            ControllerChoice::Demonstrator => {
                let tuned = tune_for(&ctx, &bundle, seed)?;
                tuning_tables.extend(tuned.table.clone());
                let mut policy = DemonstratorPolicy::new(tuned.params);
                let out = ctx.eval(&bundle, &mut policy, seed, spec.demand_scale, spec.dump_dynamics);
                files.push(export_interval_metrics(
                    &spec.out_dir,
                    &format!("demonstrator_{seed}"),
                    &agent_names,
                    &out,
                )?);
                if spec.dump_dynamics {
                    files.extend(dump_dynamics_files(
                        &spec.out_dir,
                        &format!("demonstrator_{seed}"),
                        &out,
                    )?);
                }
                rows.push(row_from_output(control, "demonstrator", seed, &out));
            }
            controller => {
                let mode = controller.train_mode().expect("trainable controller");
                let teacher: Option<DemonstratorParams> = if mode.uses_demonstration() {
                    let tuned = tune_for(&ctx, &bundle, seed)?;
                    tuning_tables.extend(tuned.table.clone());
                    Some(tuned.params)
                } else {
                    None
                };
                let profile = ctx.profile.scaled(ctx.demand_scale);
                let trained = train(
                    &bundle,
                    &profile,
                    teacher.as_ref(),
                    &spec.hyper,
                    mode,
                    seed,
                    spec.epochs,
                    ctx.reward_baseline,
                )?;
                files.push(export_train_log(&trained, seed, &spec.out_dir)?);
                let ckpt_dir = spec.out_dir.join(format!("checkpoints_{seed}"));
                save_checkpoints(&ckpt_dir, &trained.agents, &spec.hyper)?;
                let mut policy = GreedyPolicy::new(&trained.agents, mode.recurrent());
                let out = ctx.eval(&bundle, &mut policy, seed, spec.demand_scale, spec.dump_dynamics);
                files.push(export_interval_metrics(
                    &spec.out_dir,
                    &format!("{}_{seed}", controller.label()),
                    &agent_names,
                    &out,
                )?);
                if spec.dump_dynamics {
                    files.extend(dump_dynamics_files(
                        &spec.out_dir,
                        &format!("{}_{seed}", controller.label()),
                        &out,
                    )?);
                }
                rows.push(row_from_output(control, controller.label(), seed, &out));
            }
        }
    }

    let aggregates = aggregate_rows(&rows);
    files.push(export_results(&rows, &spec.out_dir)?);
    files.push(export_aggregates(&aggregates, &spec.out_dir)?);
    if !tuning_tables.is_empty() {
        files.push(export_tuning(&tuning_tables, &spec.out_dir)?);
    }
    Ok(ExperimentResult {
        rows,
        aggregates,
        reward_baseline: ctx.reward_baseline,
        tuning_tables,
        files,
    })
}

/// The four coordinated-control configurations with shared seeds.
pub fn ablation_suite(spec: &ExperimentSpec) -> Result<Vec<ExperimentResult>, HarnessError> {
    if spec.mode != ControlMode::Both {
        return Err(HarnessError::InvalidSpec(
            "ablations run in coordinated (both) mode".into(),
        ));
    }
    let controllers = [
        ControllerChoice::Proposed,
        ControllerChoice::NoNsteps,
        ControllerChoice::NoDemonstrator,
        ControllerChoice::Drqn,
    ];
    let mut results = Vec::new();
    for controller in controllers {
        let mut sub = spec.clone();
        sub.controller = controller;
        sub.out_dir = spec.out_dir.join(controller.label());
        results.push(run_experiment(&sub)?);
    }
    // Combined table across the four configurations.
    let all_rows: Vec<ResultRow> = results.iter().flat_map(|r| r.rows.clone()).collect();
    export_results(&all_rows, &spec.out_dir)?;
    export_aggregates(&aggregate_rows(&all_rows), &spec.out_dir)?;
    Ok(results)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub scale: f64,
    pub seed: u64,
    pub ttt_none_s: Option<f64>,
    pub ttt_control_s: Option<f64>,
    pub delay_none: Option<f64>,
    pub delay_control: Option<f64>,
    pub speed_none: Option<f64>,
    pub speed_control: Option<f64>,
}

/// Evaluates a fixed controller against no control across demand scales,
/// without retraining. DRL controllers load their checkpoints from the
/// experiment output directory; the demonstrator re-tunes once at the base
/// scale.
pub fn sensitivity_sweep(
    spec: &ExperimentSpec,
    scales: &[f64],
) -> Result<Vec<SweepRow>, HarnessError> {
    let ctx = ExperimentContext::new(spec)?;
    for &s in scales {
        if !(0.1..=3.0).contains(&s) {
            return Err(HarnessError::InvalidSpec(format!(
                "sweep scale {s} outside [0.1, 3]"
            )));
        }
    }
    let mut rows = Vec::new();
    for &seed in &spec.seeds {
        let bundle = ctx.bundle(seed)?;
        // The controller is fixed once per seed at the base scale.
        enum Fixed {
            Demo(DemonstratorParams),
            Net(Vec<crate::drl::TrainedAgent>, bool),
        }
        let fixed = match spec.controller {
            ControllerChoice::Demonstrator => Fixed::Demo(tune_for(&ctx, &bundle, seed)?.params),
            ControllerChoice::NoControl => {
                return Err(HarnessError::InvalidSpec(
                    "sweep needs a controller to compare against no control".into(),
                ))
            }
            controller => {
                let mode = controller.train_mode().expect("trainable controller");
                let dir = spec.out_dir.join(format!("checkpoints_{seed}"));
                let names: Vec<String> =
                    bundle.agents.iter().map(|a| a.name.clone()).collect();
                let agents = load_checkpoints(&dir, &names)?;
                Fixed::Net(agents, mode.recurrent())
            }
        };
        for &scale in scales {
            let base = ctx.eval(&bundle, &mut NoControl, seed, scale, false);
            let out = match &fixed {
                Fixed::Demo(params) => {
                    let mut policy = DemonstratorPolicy::new(params.clone());
                    ctx.eval(&bundle, &mut policy, seed, scale, false)
                }
                Fixed::Net(agents, recurrent) => {
                    let mut policy = GreedyPolicy::new(agents, *recurrent);
                    ctx.eval(&bundle, &mut policy, seed, scale, false)
                }
            };
            rows.push(SweepRow {
                scale,
                seed,
                ttt_none_s: base.metrics.ttt_avg_s,
                ttt_control_s: out.metrics.ttt_avg_s,
                delay_none: base.metrics.delay,
                delay_control: out.metrics.delay,
                speed_none: base.metrics.speed_avg_kmh,
                speed_control: out.metrics.speed_avg_kmh,
            });
        }
    }
    export_sweep(&rows, &spec.out_dir)?;
    Ok(rows)
}

fn export_sweep(rows: &[SweepRow], dir: &Path) -> Result<PathBuf, HarnessError> {
    let path = dir.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    writeln!(
        w,
        "scale,seed,ttt_none_s,ttt_control_s,delay_none,delay_control,speed_none,speed_control"
    )
    .map_err(io_err(&path))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.scale,
            r.seed,
            fmt_opt(r.ttt_none_s),
            fmt_opt(r.ttt_control_s),
            fmt_opt(r.delay_none),
            fmt_opt(r.delay_control),
            fmt_opt(r.speed_none),
            fmt_opt(r.speed_control)
        )
        .map_err(io_err(&path))?;
    }
    Ok(path)
}
