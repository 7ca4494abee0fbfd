//! Experiment runner. `RAYON_NUM_THREADS` bounds the worker pool used for
//! grid-search points and per-agent optimization.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mesomacro::drl::{CeDirection, NStepMode};
use mesomacro::harness::{
    ablation_suite, desk_hyperparams, run_experiment, sensitivity_sweep, ControlMode,
    ControllerChoice, ExperimentSpec, ScenarioChoice,
};

#[derive(Parser)]
#[command(
    name = "mesomacro",
    about = "Meso-macro traffic simulation with demonstration-guided deep-Q control",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune-or-train the chosen controller, then evaluate it per seed.
    Run(RunArgs),
    /// Grid-search the demonstrator parameters and write the tuning table.
    Tune(CommonArgs),
    /// The four coordinated-control training configurations, shared seeds.
    Ablate(RunArgs),
    /// Evaluate a fixed controller across demand scales (no retraining).
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// `builtin-small` or a path to a scenario JSON file.
    #[arg(long, default_value = "builtin-small")]
    scenario: String,
    /// Which agents act: none | ramp | perimeter | both.
    #[arg(long, default_value = "both")]
    mode: String,
    /// none | demonstrator | dqn | drqn | proposed | no-nsteps | no-demonstrator.
    #[arg(long, default_value = "demonstrator")]
    controller: String,
    /// Comma-separated list of run seeds.
    #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Training epochs for DRL controllers.
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Demand multiplier in [0.1, 3].
    #[arg(long, default_value_t = 1.0)]
    demand_scale: f64,
    /// Desk-scale divisor: 1 h horizon with demand divided by this factor.
    /// Omit for the full-scale 3 h scenario.
    #[arg(long)]
    desk_scale: Option<f64>,
    /// Output directory for CSVs and checkpoints.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write per-window cell densities and region accumulation curves.
    #[arg(long, default_value_t = false)]
    dump_dynamics: bool,
    /// Use the literal multi-step return form (discount outside the sum,
    /// bootstrap one step ahead) instead of the standard n-step target.
    #[arg(long, default_value_t = false)]
    paper_literal_nstep: bool,
    /// Demonstration cross-entropy direction: as-written | conventional.
    #[arg(long, default_value = "as-written")]
    ce_direction: String,
    /// Fixed reward baseline; measured from a no-control episode when unset.
    #[arg(long)]
    reward_baseline: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Demand scales to evaluate.
    #[arg(long, default_value = "0.6,0.8,1.0,1.1,1.3,1.5", value_delimiter = ',')]
    scales: Vec<f64>,
}

fn spec_from(args: &CommonArgs) -> Result<ExperimentSpec> {
    let mut hyper = if args.desk_scale.is_some() {
        desk_hyperparams()
    } else {
        mesomacro::drl::Hyperparams::default()
    };
    if args.paper_literal_nstep {
        hyper.nstep_mode = NStepMode::PaperLiteral;
    }
    hyper.ce_direction = match args.ce_direction.as_str() {
        "as-written" => CeDirection::AsWritten,
        "conventional" => CeDirection::Conventional,
        other => bail!("unknown ce direction '{other}'"),
    };
    Ok(ExperimentSpec {
        scenario: ScenarioChoice::parse(&args.scenario),
        mode: ControlMode::parse(&args.mode)?,
        controller: ControllerChoice::parse(&args.controller)?,
        seeds: args.seeds.clone(),
        epochs: args.epochs,
        demand_scale: args.demand_scale,
        desk_scale: args.desk_scale,
        hyper,
        out_dir: args.out.clone(),
        dump_dynamics: args.dump_dynamics,
        reward_baseline: args.reward_baseline,
    })
}

fn print_rows(result: &mesomacro::harness::ExperimentResult) {
    println!("reward baseline C_r = {}", result.reward_baseline);
    println!("control,model,reward,ttt_s,delay,speed_kmh,seed");
    for r in &result.rows {
        println!(
            "{},{},{},{},{},{},{}",
            r.control,
            r.model,
            r.reward.map(|v| format!("{v:.2}")).unwrap_or_default(),
            r.ttt_s.map(|v| format!("{v:.2}")).unwrap_or_default(),
            r.delay.map(|v| format!("{v:.3}")).unwrap_or_default(),
            r.speed_kmh.map(|v| format!("{v:.2}")).unwrap_or_default(),
            r.seed
        );
    }
    for a in &result.aggregates {
        println!(
            "aggregate: {}/{} reward {} +- {}  ttt {} +- {}",
            a.control,
            a.model,
            a.reward_mean.map(|v| format!("{v:.2}")).unwrap_or_default(),
            a.reward_std.map(|v| format!("{v:.2}")).unwrap_or_default(),
            a.ttt_mean.map(|v| format!("{v:.2}")).unwrap_or_default(),
            a.ttt_std.map(|v| format!("{v:.2}")).unwrap_or_default(),
        );
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let spec = spec_from(&args.common)?;
            let result = run_experiment(&spec).context("run failed")?;
            print_rows(&result);
            println!("wrote {} files under {}", result.files.len(), spec.out_dir.display());
        }
        Command::Tune(args) => {
            let mut spec = spec_from(&args)?;
            spec.controller = ControllerChoice::Demonstrator;
            let result = run_experiment(&spec).context("tune failed")?;
            for row in &result.tuning_tables {
                println!("{},{},{:.2}", row.agent, row.params, row.ttt_s);
            }
            print_rows(&result);
        }
        Command::Ablate(args) => {
            let spec = spec_from(&args.common)?;
            let results = ablation_suite(&spec).context("ablation failed")?;
            for r in &results {
                print_rows(r);
            }
        }
        Command::Sweep(args) => {
            let spec = spec_from(&args.common)?;
            let rows = sensitivity_sweep(&spec, &args.scales).context("sweep failed")?;
            println!("scale,seed,ttt_none_s,ttt_control_s");
            for r in &rows {
                println!(
                    "{},{},{},{}",
                    r.scale,
                    r.seed,
                    r.ttt_none_s.map(|v| format!("{v:.2}")).unwrap_or_default(),
                    r.ttt_control_s
                        .map(|v| format!("{v:.2}"))
                        .unwrap_or_default()
                );
            }
        }
    }
    Ok(())
}
