//! Acceptance suite. Each test checks one criterion at its stated tolerance
//! and prints a `acceptance: <criterion> PASS` line (visible with
//! `cargo test -- --nocapture`). Heavy fixtures (tuned demonstrators,
//! trained students) are computed once and shared across criteria.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use mesomacro::config::{
    build_scenario, ControlSection, DemandSection, OdSection, RegionSection, RoadSection,
    ScenarioFile,
};
use mesomacro::demonstrators::{teacher_policy, DemonstratorParams, DemonstratorPolicy};
use mesomacro::drl::{
    anneal_factor, combined_loss_grad, combined_loss_value, epsilon_schedule, CeDirection, Dims,
    Hidden, Hyperparams, LossSample, NStepMode, QNetwork,
};
use mesomacro::engine::{build_bundle, run_episode, NoControl, SimOptions, Simulation};
use mesomacro::harness::scenario::{builtin_small, SmallOptions};
use mesomacro::harness::{
    run_experiment, sensitivity_sweep, ControlMode, ControllerChoice, ExperimentSpec,
    ExperimentResult, ScenarioChoice,
};
use mesomacro::net::{MfdParams, RoadKind};
use mesomacro::plan::Leg;
use mesomacro::rng::{seeded_rng, Stream};
use rand::Rng;

const DESK_DIVISOR: f64 = 2.8;
const SEEDS: [u64; 3] = [1, 2, 3];

fn desk_scenario() -> mesomacro::config::Scenario {
    builtin_small(SmallOptions::desk(DESK_DIVISOR))
}

fn desk_spec(controller: ControllerChoice, out: &std::path::Path) -> ExperimentSpec {
    let mut spec = ExperimentSpec::desk(out.to_path_buf());
    spec.controller = controller;
    spec.desk_scale = Some(DESK_DIVISOR);
    spec.seeds = SEEDS.to_vec();
    spec.epochs = 30;
    spec
}

struct Shared {
    result: ExperimentResult,
    elapsed_s: f64,
}

fn shared_run(controller: ControllerChoice, slot: &'static OnceLock<Shared>) -> &'static Shared {
    slot.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = desk_spec(controller, dir.path());
        let start = Instant::now();
        let result = run_experiment(&spec).unwrap();
        Shared {
            result,
            elapsed_s: start.elapsed().as_secs_f64(),
        }
    })
}

fn demonstrator_result() -> &'static Shared {
    static SLOT: OnceLock<Shared> = OnceLock::new();
    shared_run(ControllerChoice::Demonstrator, &SLOT)
}

fn proposed_result() -> &'static Shared {
    static SLOT: OnceLock<Shared> = OnceLock::new();
    shared_run(ControllerChoice::Proposed, &SLOT)
}

fn no_demonstrator_result() -> &'static Shared {
    static SLOT: OnceLock<Shared> = OnceLock::new();
    shared_run(ControllerChoice::NoDemonstrator, &SLOT)
}

fn rows_of<'a>(r: &'a ExperimentResult, model: &str) -> Vec<&'a mesomacro::harness::ResultRow> {
    r.rows.iter().filter(|w| w.model == model).collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// Mass conservation over a full desk-scale episode.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_mass_conservation() {
    let start = Instant::now();
    let scenario = desk_scenario();
    let net = Arc::new(scenario.network.clone());
    let bundle = Arc::new(build_bundle(Arc::clone(&net), &scenario.demand, 1).unwrap());
    let sim = Simulation::new(
        Arc::clone(&bundle),
        &scenario.demand,
        SimOptions {
            episode_seed: 1,
            audit: true,
            ..SimOptions::default()
        },
    );
    let out = run_episode(sim, &mut NoControl, 0.0);
    let mass_violations: Vec<&String> = out
        .audit_violations
        .iter()
        .filter(|v| v.contains("mass conservation"))
        .collect();
    assert!(mass_violations.is_empty(), "{mass_violations:?}");
    let mut cum = 0.0;
    for r in &out.metrics.series {
        cum += r.completed;
        let gap = r.injected_cum - r.running - cum;
        assert!(gap.abs() < 1e-6, "t={} gap={gap}", r.t);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "episode took {elapsed}s");
    println!("acceptance: mass-conservation PASS ({elapsed:.1}s)");
}

// ---------------------------------------------------------------------------
// Flow-constraint audit: merge and mainline inequalities hold at every
// interval of congested episodes, metered and unmetered.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_flow_constraint_audit() {
    let scenario = desk_scenario();
    let net = Arc::new(scenario.network.clone());
    let bundle = Arc::new(build_bundle(Arc::clone(&net), &scenario.demand, 2).unwrap());
    let options = SimOptions {
        episode_seed: 2,
        audit: true,
        ..SimOptions::default()
    };

    let sim = Simulation::new(Arc::clone(&bundle), &scenario.demand, options.clone());
    let out = run_episode(sim, &mut NoControl, 0.0);
    assert!(out.audit_violations.is_empty(), "{:?}", out.audit_violations);

    // Metered branch under active control.
    let sim = Simulation::new(Arc::clone(&bundle), &scenario.demand, options);
    let mut policy = DemonstratorPolicy::new(DemonstratorParams::defaults(&bundle));
    let out = run_episode(sim, &mut policy, 0.0);
    assert!(out.audit_violations.is_empty(), "{:?}", out.audit_violations);
    println!("acceptance: flow-constraint-audit PASS");
}

// ---------------------------------------------------------------------------
// Per-road oracle equivalence: a 3-cell road driven by the full engine
// matches an independent brute-force stepper to 1e-9 over 100 intervals.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_actm_oracle_equivalence() {
    // 3-cell mainline inside the ACTM region; trips start at the source
    // cell and finish at the sink cell.
    let v = 90.0;
    let delta = v / 3600.0;
    let file = ScenarioFile {
        dt_seconds: 1.0,
        control: ControlSection::default(),
        nodes: vec!["f0".into(), "f1".into()],
        roads: vec![RoadSection {
            id: "m".into(),
            from: "f0".into(),
            to: "f1".into(),
            kind: RoadKind::Mainline,
            length_km: 3.0 * delta,
            v_max_kmh: v,
            w_kmh: 30.0,
            q_max_vph: 1.2 * 3600.0,
            n_hat_per_km: 12.0 / delta,
            lanes: 1,
            merges_into: None,
            diverges_from: None,
        }],
        regions: vec![RegionSection {
            id: "F".into(),
            nodes: vec!["f0".into(), "f1".into()],
            l_max_km: 0.0,
            mfd: MfdParams::Underwood {
                v_free_kmh: 90.0,
                critical_accumulation_veh: 100.0,
            },
        }],
        freeway_region: "F".into(),
        ramp_agents: vec![],
        perimeter_agents: vec![],
        demand: DemandSection {
            total_veh: 70.0,
            horizon_s: 40.0,
            noise_ratio: 0.0,
            peak_curve: vec![(0.0, 1.0), (0.5, 1.6), (1.0, 0.4)],
            od: vec![OdSection {
                from: "F".into(),
                to: "F".into(),
                weight: 1.0,
            }],
        },
    };
    let scenario = build_scenario(&file).unwrap();
    let net = Arc::new(scenario.network.clone());
    let bundle = Arc::new(build_bundle(Arc::clone(&net), &scenario.demand, 4).unwrap());
    assert_eq!(bundle.paths.paths.len(), 1);
    assert!(matches!(
        bundle.paths.paths[0].legs[0],
        Leg::Actm { road: 0, .. }
    ));
    let mut sim = Simulation::new(
        Arc::clone(&bundle),
        &scenario.demand,
        SimOptions {
            episode_seed: 4,
            audit: true,
            ..SimOptions::default()
        },
    );
    let starts = mesomacro::demand::sample_demand(&scenario.demand, 1.0, 4).starts;

    // Independent brute-force stepper over the published cell laws.
    let n_hat = 12.0;
    let wv = 30.0 / 90.0;
    let q = 1.2;
    let mut queue = 0.0;
    let mut n = [0.0f64; 3];
    for t in 0..100 {
        if t < starts.len() {
            queue += starts[t][0];
        }
        let mu = (n_hat - n[0]).min(queue).max(0.0);
        let nu = n[2];
        let f01 = n[0].min(wv * (n_hat - n[1])).min(q).max(0.0);
        let f12 = n[1].min(wv * (n_hat - n[2])).min(q).max(0.0);
        queue -= mu;
        n[0] += mu - f01;
        n[1] += f01 - f12;
        n[2] += f12 - nu;

        let out = sim.step(None);
        let engine = sim.road_cell_totals(0);
        for k in 0..3 {
            assert!(
                (engine[k] - n[k]).abs() < 1e-9,
                "t={t} cell {k}: engine {} oracle {}",
                engine[k],
                n[k]
            );
        }
        assert!((out.completed - nu).abs() < 1e-9, "t={t}");
        assert!((sim.road_start_queue_total(0) - queue).abs() < 1e-9, "t={t}");
    }
    println!("acceptance: actm-oracle-equivalence PASS");
}

// ---------------------------------------------------------------------------
// Per-region oracle equivalence: a single bathtub region matches an
// independent remaining-distance stepper to 1e-9 over 100 intervals.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_bathtub_oracle_equivalence() {
    let file = ScenarioFile {
        dt_seconds: 1.0,
        control: ControlSection::default(),
        nodes: vec!["ra".into(), "rb".into(), "f0".into()],
        roads: vec![
            RoadSection {
                id: "i1".into(),
                from: "ra".into(),
                to: "rb".into(),
                kind: RoadKind::Urban,
                length_km: 5.0,
                v_max_kmh: 50.0,
                w_kmh: 20.0,
                q_max_vph: 1800.0,
                n_hat_per_km: 300.0,
                lanes: 2,
                merges_into: None,
                diverges_from: None,
            },
            RoadSection {
                id: "i2".into(),
                from: "rb".into(),
                to: "ra".into(),
                kind: RoadKind::Urban,
                length_km: 5.0,
                v_max_kmh: 50.0,
                w_kmh: 20.0,
                q_max_vph: 1800.0,
                n_hat_per_km: 300.0,
                lanes: 2,
                merges_into: None,
                diverges_from: None,
            },
        ],
        regions: vec![
            RegionSection {
                id: "R".into(),
                nodes: vec!["ra".into(), "rb".into()],
                l_max_km: 5.0,
                mfd: MfdParams::Underwood {
                    v_free_kmh: 90.0,
                    critical_accumulation_veh: 700.0,
                },
            },
            RegionSection {
                id: "F".into(),
                nodes: vec!["f0".into()],
                l_max_km: 0.0,
                mfd: MfdParams::Underwood {
                    v_free_kmh: 90.0,
                    critical_accumulation_veh: 100.0,
                },
            },
        ],
        freeway_region: "F".into(),
        ramp_agents: vec![],
        perimeter_agents: vec![],
        demand: DemandSection {
            total_veh: 900.0,
            horizon_s: 60.0,
            noise_ratio: 0.0,
            peak_curve: vec![(0.0, 0.8), (0.4, 1.5), (1.0, 0.5)],
            od: vec![OdSection {
                from: "R".into(),
                to: "R".into(),
                weight: 1.0,
            }],
        },
    };
    let scenario = build_scenario(&file).unwrap();
    let net = Arc::new(scenario.network.clone());
    let bundle = Arc::new(build_bundle(Arc::clone(&net), &scenario.demand, 6).unwrap());
    let Leg::Urban { distance_km, .. } = bundle.paths.paths[0].legs[0] else {
        panic!("intra path expected");
    };
    let mut sim = Simulation::new(
        Arc::clone(&bundle),
        &scenario.demand,
        SimOptions {
            episode_seed: 6,
            audit: true,
            ..SimOptions::default()
        },
    );
    let starts = mesomacro::demand::sample_demand(&scenario.demand, 1.0, 6).starts;

    // Independent cohort list with explicit remaining distances.
    let mut cohorts: Vec<(f64, f64)> = Vec::new();
    let mut acc = 0.0f64;
    for t in 0..100 {
        let born = if t < starts.len() { starts[t][0] } else { 0.0 };
        let v = 90.0 * (-acc / 700.0f64).exp();
        let travel = v / 3600.0;
        let mut completed = 0.0;
        cohorts.retain_mut(|(xi, size)| {
            if *xi <= travel {
                completed += *size;
                false
            } else {
                *xi -= travel;
                true
            }
        });
        if born > 0.0 {
            cohorts.push((distance_km, born));
        }
        acc += born - completed;

        let out = sim.step(None);
        assert!(
            (sim.region_speed(0) - v).abs() < 1e-9,
            "t={t}: speed {} vs {v}",
            sim.region_speed(0)
        );
        assert!(
            (sim.region_accumulation(0) - acc).abs() < 1e-9,
            "t={t}: acc {} vs {acc}",
            sim.region_accumulation(0)
        );
        assert!((out.completed - completed).abs() < 1e-9, "t={t}");
    }
    assert!(acc > 0.0 || !cohorts.is_empty() || sim.cum_completed() > 0.0);
    println!("acceptance: bathtub-oracle-equivalence PASS");
}

// ---------------------------------------------------------------------------
// Gradient correctness of the combined loss over >= 20 random draws.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_gradient_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        let mut rng = seeded_rng(1000 + draw, Stream::WeightInit(0));
        let mut net = QNetwork::new(Dims::small(6, 7));
        net.init_xavier(&mut rng);
        let batch: Vec<LossSample> = (0..5)
            .map(|_| LossSample {
                obs: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                hidden: Hidden {
                    h: (0..7).map(|_| rng.gen_range(-0.8..0.8)).collect(),
                    c: (0..7).map(|_| rng.gen_range(-0.8..0.8)).collect(),
                },
                action: rng.gen_range(0..3),
                target: rng.gen_range(-5.0..5.0),
                teacher: Some(teacher_policy(rng.gen_range(0..3), 0.05)),
            })
            .collect();
        let alpha = if draw % 3 == 0 { 0.0 } else { 25.0 };
        let direction = if draw % 2 == 0 {
            CeDirection::AsWritten
        } else {
            CeDirection::Conventional
        };

        let mut analytic = vec![0.0; net.theta.len()];
        combined_loss_grad(&net, &batch, alpha, direction, &mut analytic);

        let eps = 1e-5;
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..net.theta.len() {
            let orig = net.theta[i];
            net.theta[i] = orig + eps;
            let up = combined_loss_value(&net, &batch, alpha, direction);
            net.theta[i] = orig - eps;
            let down = combined_loss_value(&net, &batch, alpha, direction);
            net.theta[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            norm2 += numeric * numeric;
        }
        let rel = (diff2 / norm2.max(1e-24)).sqrt();
        worst = worst.max(rel);
        assert!(rel < 1e-4, "draw {draw}: rel err {rel}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "gradient check took {elapsed}s");
    println!("acceptance: gradient-correctness PASS (worst rel err {worst:.2e}, {elapsed:.1}s)");
}

// ---------------------------------------------------------------------------
// Schedule exactness: annealing endpoints and epsilon endpoints.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_schedule_exactness() {
    let h = Hyperparams::default();
    // Published constants stay pinned as defaults.
    assert_eq!(h.n_b, 30_000);
    assert_eq!(h.n_o, 1);
    assert_eq!(h.eps_start, 0.1);
    assert_eq!(h.eps_end, 0.01);
    assert_eq!(h.eps_last, 100);
    assert_eq!(h.alpha_min, -3.0);
    assert_eq!(h.alpha_step, 0.12);
    assert_eq!(h.alpha_term, 50);
    assert_eq!(h.alpha_amp, 200.0);
    assert_eq!(h.eta, 30);
    assert_eq!(h.lambda, 0.99);
    assert_eq!(h.batch, 128);
    assert_eq!(h.learning_rate, 3e-6);

    assert_eq!(anneal_factor(&h, 0), 200.0);
    for t in 51..200 {
        assert_eq!(anneal_factor(&h, t), 0.0);
    }
    assert_eq!(epsilon_schedule(&h, 0), 0.1);
    for m in 100..300 {
        assert_eq!(epsilon_schedule(&h, m), 0.01);
    }
    println!("acceptance: schedule-exactness PASS");
}

// ---------------------------------------------------------------------------
// No-op equivalence: all rates pinned at 1 reproduce the uncontrolled
// branches bit-exactly.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_noop_equivalence() {
    let scenario = desk_scenario();
    // Controlled branches with every rate at 1.
    let with_agents = Arc::new(scenario.network.clone());
    let bundle_a = Arc::new(build_bundle(Arc::clone(&with_agents), &scenario.demand, 3).unwrap());
    assert_eq!(bundle_a.agents.len(), 8);
    // Uncontrolled branches: no agents declared at all.
    let stripped = Arc::new(mesomacro::harness::apply_mode(
        &scenario.network,
        ControlMode::None,
    ));
    let bundle_b = Arc::new(build_bundle(Arc::clone(&stripped), &scenario.demand, 3).unwrap());
    let opts = SimOptions {
        episode_seed: 3,
        ..SimOptions::default()
    };
    let out_a = run_episode(
        Simulation::new(Arc::clone(&bundle_a), &scenario.demand, opts.clone()),
        &mut NoControl,
        7.0,
    );
    let out_b = run_episode(
        Simulation::new(Arc::clone(&bundle_b), &scenario.demand, opts),
        &mut NoControl,
        7.0,
    );
    assert_eq!(out_a.metrics.series.len(), out_b.metrics.series.len());
    for (ra, rb) in out_a.metrics.series.iter().zip(&out_b.metrics.series) {
        assert_eq!(ra.injected_cum.to_bits(), rb.injected_cum.to_bits(), "t={}", ra.t);
        assert_eq!(ra.running.to_bits(), rb.running.to_bits(), "t={}", ra.t);
        assert_eq!(ra.completed.to_bits(), rb.completed.to_bits(), "t={}", ra.t);
        assert_eq!(ra.reward.to_bits(), rb.reward.to_bits(), "t={}", ra.t);
    }
    assert_eq!(
        out_a.metrics.ttt_avg_s.unwrap().to_bits(),
        out_b.metrics.ttt_avg_s.unwrap().to_bits()
    );
    println!("acceptance: noop-equivalence PASS");
}

// ---------------------------------------------------------------------------
// Demonstrator efficacy: tuned classical control cuts average travel time
// by at least 5% against no control on every seed.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_demonstrator_efficacy() {
    let shared = demonstrator_result();
    assert!(
        shared.elapsed_s < 600.0,
        "demonstrator experiment took {}s",
        shared.elapsed_s
    );
    let base = rows_of(&shared.result, "none");
    let demo = rows_of(&shared.result, "demonstrator");
    assert_eq!(base.len(), SEEDS.len());
    assert_eq!(demo.len(), SEEDS.len());
    for (b, d) in base.iter().zip(&demo) {
        assert_eq!(b.seed, d.seed);
        let ttt_none = b.ttt_s.unwrap();
        let ttt_demo = d.ttt_s.unwrap();
        let cut = (ttt_none - ttt_demo) / ttt_none;
        assert!(
            cut >= 0.05,
            "seed {}: demonstrator cut only {:.1}% ({} vs {})",
            b.seed,
            cut * 100.0,
            ttt_demo,
            ttt_none
        );
    }
    println!(
        "acceptance: demonstrator-efficacy PASS ({:.0}s)",
        shared.elapsed_s
    );
}

// ---------------------------------------------------------------------------
// Student matches or beats the teacher after 30 desk-scale epochs.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_student_vs_teacher() {
    let teacher = demonstrator_result();
    let student = proposed_result();
    assert!(
        student.elapsed_s < 1800.0,
        "student training took {}s",
        student.elapsed_s
    );
    let teacher_mean = mean(
        rows_of(&teacher.result, "demonstrator")
            .iter()
            .map(|r| r.reward.unwrap()),
    );
    let student_mean = mean(
        rows_of(&student.result, "proposed")
            .iter()
            .map(|r| r.reward.unwrap()),
    );
    assert!(
        student_mean >= teacher_mean,
        "student mean reward {student_mean:.1} below teacher {teacher_mean:.1}"
    );
    println!(
        "acceptance: student-vs-teacher PASS (student {student_mean:.1} vs teacher {teacher_mean:.1})"
    );
}

// ---------------------------------------------------------------------------
// Ablation ordering: demonstration guidance does not hurt; the proposed
// configuration matches or beats the no-demonstrator configuration.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_ablation_ordering() {
    let proposed = proposed_result();
    let ablated = no_demonstrator_result();
    let proposed_mean = mean(
        rows_of(&proposed.result, "proposed")
            .iter()
            .map(|r| r.reward.unwrap()),
    );
    let ablated_mean = mean(
        rows_of(&ablated.result, "no-demonstrator")
            .iter()
            .map(|r| r.reward.unwrap()),
    );
    assert!(
        proposed_mean >= ablated_mean,
        "proposed {proposed_mean:.1} below no-demonstrator {ablated_mean:.1}"
    );
    // Shared seeds give bit-identical no-control baselines across rows.
    for (a, b) in rows_of(&proposed.result, "none")
        .iter()
        .zip(rows_of(&ablated.result, "none").iter())
    {
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.ttt_s.unwrap().to_bits(), b.ttt_s.unwrap().to_bits());
    }
    println!(
        "acceptance: ablation-ordering PASS (proposed {proposed_mean:.1} vs no-demonstrator {ablated_mean:.1})"
    );
}

// ---------------------------------------------------------------------------
// Sensitivity shape: the control gap nearly vanishes at 60% demand and is
// far smaller than the gap at 110% demand.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_sensitivity_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = desk_spec(ControllerChoice::Demonstrator, dir.path());
    spec.scenario = ScenarioChoice::BuiltinSmall;
    let rows = sensitivity_sweep(&spec, &[0.6, 1.1]).unwrap();
    let gap_at = |scale: f64| {
        mean(
            rows.iter()
                .filter(|r| r.scale == scale)
                .map(|r| r.ttt_none_s.unwrap() - r.ttt_control_s.unwrap()),
        )
    };
    let gap_low = gap_at(0.6);
    let gap_high = gap_at(1.1);
    assert!(
        gap_low <= 0.2 * gap_high,
        "gap at 0.6 = {gap_low:.1}s vs 20% of gap at 1.1 = {:.1}s",
        0.2 * gap_high
    );
    println!("acceptance: sensitivity-shape PASS (gap {gap_low:.1}s vs {gap_high:.1}s)");
}

// ---------------------------------------------------------------------------
// Determinism: identical seeds produce byte-identical result files.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_determinism() {
    let run_once = |dir: &std::path::Path| {
        let mut spec = desk_spec(ControllerChoice::Demonstrator, dir);
        spec.seeds = vec![1];
        run_experiment(&spec).unwrap();
        (
            std::fs::read(dir.join("results.csv")).unwrap(),
            std::fs::read(dir.join("aggregate.csv")).unwrap(),
            std::fs::read(dir.join("tuning.csv")).unwrap(),
        )
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = run_once(dir_a.path());
    let b = run_once(dir_b.path());
    assert_eq!(a.0, b.0, "results.csv differs between identical runs");
    assert_eq!(a.1, b.1, "aggregate.csv differs between identical runs");
    assert_eq!(a.2, b.2, "tuning.csv differs between identical runs");
    println!("acceptance: determinism PASS");
}

// ---------------------------------------------------------------------------
// Supporting exactness checks used by several criteria.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_nstep_and_policy_surrogate() {
    // eta = 1 with zeroed history is the classic one-step DQN target.
    let t = mesomacro::drl::nstep_return(&[2.0, 5.0], 0.99, 1, NStepMode::Standard);
    assert_eq!(t.r_hat, 2.0);
    assert_eq!(t.bootstrap_steps, 1);
    assert_eq!(t.bootstrap_discount, 0.99);
    // Softmax surrogate preserves the argmax for random Q vectors.
    let mut rng = seeded_rng(3, Stream::Explore(0));
    for _ in 0..200 {
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let pi = mesomacro::drl::dummy_policy(&q);
        assert_eq!(mesomacro::drl::argmax(&q), mesomacro::drl::argmax(&pi));
    }
    println!("acceptance: nstep-and-policy-surrogate PASS");
}
