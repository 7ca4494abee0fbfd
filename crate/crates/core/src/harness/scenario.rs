//! Built-in scenarios. The small network mirrors the corridor layout used
//! throughout: one 3 km freeway (both directions) with four metered
//! on-ramps, two off-ramps, and four gated urban regions around it. Demand
//! follows a morning-peak curve rising to its maximum about two thirds into
//! the horizon.

use crate::config::{
    build_scenario, ControlSection, DemandSection, OdSection, PerimeterAgentSection,
    RampAgentSection, RampJunction, RegionSection, RoadSection, Scenario, ScenarioFile,
};
use crate::net::{MfdParams, RoadKind};

/// Total morning-peak demand of the full-scale small scenario.
pub const SMALL_TOTAL_VEH: f64 = 47_271.0;
/// Full-scale demand horizon (3 h).
pub const SMALL_HORIZON_S: f64 = 10_800.0;

#[derive(Debug, Clone, Copy)]
pub struct SmallOptions {
    pub horizon_s: f64,
    pub total_veh: f64,
    pub noise_ratio: f64,
}

impl SmallOptions {
    /// Full-scale settings: 3 h peak, full volume.
    pub fn full() -> Self {
        SmallOptions {
            horizon_s: SMALL_HORIZON_S,
            total_veh: SMALL_TOTAL_VEH,
            noise_ratio: 0.3,
        }
    }

    /// Desk-scale settings: 1 h horizon, demand divided by `divisor`.
    pub fn desk(divisor: f64) -> Self {
        SmallOptions {
            horizon_s: 3_600.0,
            total_veh: SMALL_TOTAL_VEH / divisor,
            noise_ratio: 0.3,
        }
    }
}

fn road(
    id: &str,
    from: &str,
    to: &str,
    kind: RoadKind,
    length_km: f64,
    v_max: f64,
    w: f64,
    q_vph: f64,
    n_hat_per_km: f64,
    lanes: u32,
) -> RoadSection {
    RoadSection {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        kind,
        length_km,
        v_max_kmh: v_max,
        w_kmh: w,
        q_max_vph: q_vph,
        n_hat_per_km,
        lanes,
        merges_into: None,
        diverges_from: None,
    }
}

fn junction(road: &str, cell: usize) -> Option<RampJunction> {
    Some(RampJunction {
        road: road.into(),
        cell,
    })
}

/// The small corridor network: regions R1..R4, an eastbound and a westbound
/// 3 km mainline, four on-ramps and two off-ramps, urban links R1->R2->R3.
pub fn small_scenario_file(opts: SmallOptions) -> ScenarioFile {
    let mut nodes = Vec::new();
    for r in 1..=4 {
        nodes.push(format!("r{r}_a"));
        nodes.push(format!("r{r}_b"));
    }
    for n in [
        "f_eb_m1", "f_eb_m2", "f_eb_d1", "f_wb_m1", "f_wb_m2", "f_wb_d1",
    ] {
        nodes.push(n.into());
    }

    let mut roads = Vec::new();
    // Mainlines: 90 km/h, 25 m cells, capacity 6000 veh/h over 3 lanes.
    roads.push(road(
        "fwy_eb", "r1_b", "r4_a", RoadKind::Mainline, 3.0, 90.0, 18.0, 5400.0, 450.0, 3,
    ));
    roads.push(road(
        "fwy_wb", "r4_b", "r1_a", RoadKind::Mainline, 3.0, 90.0, 18.0, 5400.0, 450.0, 3,
    ));
    // On-ramps: merge stations at 1 km and 2 km of each direction.
    let mut ramp = road(
        "ramp_eb_r2", "r2_b", "f_eb_m1", RoadKind::OnRamp, 0.3, 54.0, 18.0, 1800.0, 180.0, 1,
    );
    ramp.merges_into = junction("fwy_eb", 40);
    roads.push(ramp);
    let mut ramp = road(
        "ramp_eb_r3", "r3_b", "f_eb_m2", RoadKind::OnRamp, 0.3, 54.0, 18.0, 1800.0, 180.0, 1,
    );
    ramp.merges_into = junction("fwy_eb", 80);
    roads.push(ramp);
    let mut ramp = road(
        "ramp_wb_r3", "r3_b", "f_wb_m1", RoadKind::OnRamp, 0.3, 54.0, 18.0, 1800.0, 180.0, 1,
    );
    ramp.merges_into = junction("fwy_wb", 40);
    roads.push(ramp);
    let mut ramp = road(
        "ramp_wb_r2", "r2_b", "f_wb_m2", RoadKind::OnRamp, 0.3, 54.0, 18.0, 1800.0, 180.0, 1,
    );
    ramp.merges_into = junction("fwy_wb", 80);
    roads.push(ramp);
    // Off-ramps at 1.5 km.
    let mut off = road(
        "off_eb_r3", "f_eb_d1", "r3_a", RoadKind::OffRamp, 0.3, 54.0, 18.0, 1800.0, 180.0, 1,
    );
    off.diverges_from = junction("fwy_eb", 60);
    roads.push(off);
    let mut off = road(
        "off_wb_r2", "f_wb_d1", "r2_a", RoadKind::OffRamp, 0.3, 54.0, 18.0, 1800.0, 180.0, 1,
    );
    off.diverges_from = junction("fwy_wb", 60);
    roads.push(off);
    // One-way urban chain R1 -> R2 -> R3; return trips ride the freeway.
    roads.push(road(
        "ub_12", "r1_b", "r2_a", RoadKind::Urban, 1.0, 50.0, 20.0, 3600.0, 300.0, 2,
    ));
    roads.push(road(
        "ub_23", "r2_b", "r3_a", RoadKind::Urban, 1.0, 50.0, 20.0, 3600.0, 300.0, 2,
    ));
    // Internal urban roads: 20 km and 6000 jam vehicles per region.
    for r in 1..=4 {
        for (k, (from, to)) in [("a", "b"), ("b", "a"), ("a", "b"), ("b", "a"), ("a", "b")]
            .iter()
            .enumerate()
        {
            roads.push(road(
                &format!("iu_{r}_{k}"),
                &format!("r{r}_{from}"),
                &format!("r{r}_{to}"),
                RoadKind::Urban,
                4.0,
                50.0,
                20.0,
                3600.0,
                300.0,
                2,
            ));
        }
    }

    let mfd = MfdParams::Underwood {
        v_free_kmh: 90.0,
        critical_accumulation_veh: 1265.0,
    };
    let mut regions: Vec<RegionSection> = (1..=4)
        .map(|r| RegionSection {
            id: format!("R{r}"),
            nodes: vec![format!("r{r}_a"), format!("r{r}_b")],
            l_max_km: 10.0,
            mfd: mfd.clone(),
        })
        .collect();
    regions.push(RegionSection {
        id: "F".into(),
        nodes: vec![
            "f_eb_m1".into(),
            "f_eb_m2".into(),
            "f_eb_d1".into(),
            "f_wb_m1".into(),
            "f_wb_m2".into(),
            "f_wb_d1".into(),
        ],
        l_max_km: 0.0,
        mfd: mfd.clone(),
    });

    let od = [
        ("R1", "R4", 2.5),
        ("R2", "R4", 2.0),
        ("R3", "R4", 1.5),
        ("R1", "R3", 1.5),
        ("R1", "R2", 2.5),
        ("R2", "R3", 0.7),
        ("R4", "R1", 1.0),
        ("R4", "R2", 2.0),
        ("R4", "R3", 0.7),
        ("R3", "R1", 1.0),
        ("R3", "R2", 1.0),
        ("R2", "R1", 0.8),
        ("R1", "R1", 0.4),
        ("R2", "R2", 0.4),
        ("R3", "R3", 0.4),
        ("R4", "R4", 0.4),
    ]
    .iter()
    .map(|(f, t, w)| OdSection {
        from: (*f).into(),
        to: (*t).into(),
        weight: *w,
    })
    .collect();

    ScenarioFile {
        dt_seconds: 1.0,
        control: ControlSection::default(),
        nodes,
        roads,
        regions,
        freeway_region: "F".into(),
        ramp_agents: ["ramp_eb_r2", "ramp_eb_r3", "ramp_wb_r3", "ramp_wb_r2"]
            .iter()
            .map(|r| RampAgentSection {
                id: format!("meter_{r}"),
                on_ramp: (*r).into(),
            })
            .collect(),
        perimeter_agents: (1..=4)
            .map(|r| PerimeterAgentSection {
                id: format!("gate_R{r}"),
                region: format!("R{r}"),
            })
            .collect(),
        demand: DemandSection {
            total_veh: opts.total_veh,
            horizon_s: opts.horizon_s,
            noise_ratio: opts.noise_ratio,
            peak_curve: vec![(0.0, 0.40), (0.33, 0.75), (0.67, 1.0), (1.0, 0.30)],
            od,
        },
    }
}

pub fn builtin_small(opts: SmallOptions) -> Scenario {
    build_scenario(&small_scenario_file(opts)).expect("built-in scenario is valid")
}

/// A two-agent micro network for fast tests: two regions, one short mainline
/// with a single metered ramp, one gated region.
pub fn toy_scenario() -> Scenario {
    let nodes = vec![
        "r1_a".into(),
        "r1_b".into(),
        "r2_a".into(),
        "r2_b".into(),
        "f_m1".into(),
    ];
    let mut roads = vec![
        road(
            "fwy", "r1_b", "r2_a", RoadKind::Mainline, 1.0, 90.0, 18.0, 3600.0, 300.0, 2,
        ),
        road(
            "ub_21", "r2_b", "r1_a", RoadKind::Urban, 1.0, 50.0, 20.0, 1800.0, 150.0, 1,
        ),
        road(
            "iu_1", "r1_a", "r1_b", RoadKind::Urban, 2.0, 50.0, 20.0, 1800.0, 300.0, 2,
        ),
        road(
            "iu_1b", "r1_b", "r1_a", RoadKind::Urban, 2.0, 50.0, 20.0, 1800.0, 300.0, 2,
        ),
        road(
            "iu_2", "r2_a", "r2_b", RoadKind::Urban, 2.0, 50.0, 20.0, 1800.0, 300.0, 2,
        ),
        road(
            "iu_2b", "r2_b", "r2_a", RoadKind::Urban, 2.0, 50.0, 20.0, 1800.0, 300.0, 2,
        ),
    ];
    let mut ramp = road(
        "ramp_r1", "r1_a", "f_m1", RoadKind::OnRamp, 0.3, 54.0, 18.0, 1200.0, 150.0, 1,
    );
    ramp.merges_into = junction("fwy", 20);
    roads.push(ramp);

    let mfd = MfdParams::Underwood {
        v_free_kmh: 90.0,
        critical_accumulation_veh: 400.0,
    };
    build_scenario(&ScenarioFile {
        dt_seconds: 1.0,
        control: ControlSection::default(),
        nodes,
        roads,
        regions: vec![
            RegionSection {
                id: "R1".into(),
                nodes: vec!["r1_a".into(), "r1_b".into()],
                l_max_km: 3.0,
                mfd: mfd.clone(),
            },
            RegionSection {
                id: "R2".into(),
                nodes: vec!["r2_a".into(), "r2_b".into()],
                l_max_km: 3.0,
                mfd: mfd.clone(),
            },
            RegionSection {
                id: "F".into(),
                nodes: vec!["f_m1".into()],
                l_max_km: 0.0,
                mfd,
            },
        ],
        freeway_region: "F".into(),
        ramp_agents: vec![RampAgentSection {
            id: "meter_ramp_r1".into(),
            on_ramp: "ramp_r1".into(),
        }],
        perimeter_agents: vec![PerimeterAgentSection {
            id: "gate_R2".into(),
            region: "R2".into(),
        }],
        demand: DemandSection {
            total_veh: 1200.0,
            horizon_s: 300.0,
            noise_ratio: 0.3,
            peak_curve: vec![(0.0, 0.5), (0.6, 1.0), (1.0, 0.4)],
            od: vec![
                OdSection {
                    from: "R1".into(),
                    to: "R2".into(),
                    weight: 3.0,
                },
                OdSection {
                    from: "R2".into(),
                    to: "R1".into(),
                    weight: 1.0,
                },
                OdSection {
                    from: "R1".into(),
                    to: "R1".into(),
                    weight: 0.5,
                },
                OdSection {
                    from: "R2".into(),
                    to: "R2".into(),
                    weight: 0.5,
                },
            ],
        },
    })
    .expect("toy scenario is valid")
}
