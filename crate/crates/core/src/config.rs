//! Scenario file schema and loader. The file is JSON with a `network`
//! portion (nodes, roads, regions, agents) and a `demand` portion (OD table,
//! peak ratio curve, total volume). Field names are documented in the README;
//! unknown fields are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{DemandProfile, OdDemand};
use crate::net::{
    cell_count, ControlParams, MfdParams, Network, PerimeterAgentSpec, RampAgentSpec, RegionSpec,
    Road, RoadKind,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("region partition overlap, duplicated nodes: {0:?}")]
    PartitionOverlap(Vec<String>),
    #[error("nodes not covered by any region: {0:?}")]
    PartitionGap(Vec<String>),
    #[error("unknown {kind} reference '{name}' in {context}")]
    UnknownReference {
        kind: &'static str,
        name: String,
        context: String,
    },
    #[error("invalid value for {field} on {entity}: {reason}")]
    InvalidValue {
        field: &'static str,
        entity: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_dt")]
    pub dt_seconds: f64,
    #[serde(default)]
    pub control: ControlSection,
    pub nodes: Vec<String>,
    pub roads: Vec<RoadSection>,
    pub regions: Vec<RegionSection>,
    pub freeway_region: String,
    #[serde(default)]
    pub ramp_agents: Vec<RampAgentSection>,
    #[serde(default)]
    pub perimeter_agents: Vec<PerimeterAgentSection>,
    pub demand: DemandSection,
}

fn default_dt() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub u_min: f64,
    pub u_max: f64,
    pub delta_u: f64,
    pub decision_period_s: f64,
    pub zeta: f64,
    pub gamma: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        let c = ControlParams::default();
        ControlSection {
            u_min: c.u_min,
            u_max: c.u_max,
            delta_u: c.delta_u,
            decision_period_s: c.decision_period_s,
            zeta: c.zeta,
            gamma: c.gamma,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSection {
    pub id: String,
    pub from: String,
    pub to: String,
    pub kind: RoadKind,
    pub length_km: f64,
    pub v_max_kmh: f64,
    pub w_kmh: f64,
    /// Capacity in veh/hour; converted to veh per unit interval at load.
    pub q_max_vph: f64,
    /// Jam vehicle count per km over all lanes.
    pub n_hat_per_km: f64,
    pub lanes: u32,
    #[serde(default)]
    pub merges_into: Option<RampJunction>,
    #[serde(default)]
    pub diverges_from: Option<RampJunction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampJunction {
    pub road: String,
    pub cell: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub id: String,
    pub nodes: Vec<String>,
    pub l_max_km: f64,
    pub mfd: MfdParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampAgentSection {
    pub id: String,
    pub on_ramp: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerimeterAgentSection {
    pub id: String,
    pub region: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    pub total_veh: f64,
    pub horizon_s: f64,
    #[serde(default = "default_noise")]
    pub noise_ratio: f64,
    /// Piecewise-linear demand shape as (time fraction of horizon, weight).
    pub peak_curve: Vec<(f64, f64)>,
    pub od: Vec<OdSection>,
}

fn default_noise() -> f64 {
    0.3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdSection {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

/// A loaded, validated scenario: static network plus demand profile.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: Network,
    pub demand: DemandProfile,
}

/// Loads and validates a scenario file.
pub fn load_network_config(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: ScenarioFile =
        serde_json::from_str(&text).map_err(|e| ConfigError::Schema(e.to_string()))?;
    build_scenario(&file)
}

/// Validates a parsed scenario file and builds the runtime network.
pub fn build_scenario(file: &ScenarioFile) -> Result<Scenario, ConfigError> {
    if file.dt_seconds <= 0.0 {
        return Err(ConfigError::InvalidValue {
            field: "dt_seconds",
            entity: "scenario".into(),
            reason: "must be positive".into(),
        });
    }
    let dt = file.dt_seconds;

    let mut node_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, n) in file.nodes.iter().enumerate() {
        if node_index.insert(n.as_str(), i).is_some() {
            return Err(ConfigError::Schema(format!("duplicate node id '{n}'")));
        }
    }
    let lookup_node = |name: &str, context: &str| {
        node_index
            .get(name)
            .copied()
            .ok_or_else(|| ConfigError::UnknownReference {
                kind: "node",
                name: name.to_string(),
                context: context.to_string(),
            })
    };

    // Region partition: pairwise disjoint, union covers all nodes.
    let mut node_region = vec![usize::MAX; file.nodes.len()];
    let mut duplicated = BTreeSet::new();
    for (d, region) in file.regions.iter().enumerate() {
        for n in &region.nodes {
            let idx = lookup_node(n, &format!("region '{}'", region.id))?;
            if node_region[idx] != usize::MAX {
                duplicated.insert(n.clone());
            }
            node_region[idx] = d;
        }
    }
    if !duplicated.is_empty() {
        return Err(ConfigError::PartitionOverlap(
            duplicated.into_iter().collect(),
        ));
    }
    let uncovered: Vec<String> = node_region
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == usize::MAX)
        .map(|(i, _)| file.nodes[i].clone())
        .collect();
    if !uncovered.is_empty() {
        return Err(ConfigError::PartitionGap(uncovered));
    }

    let freeway_region = file
        .regions
        .iter()
        .position(|r| r.id == file.freeway_region)
        .ok_or_else(|| ConfigError::UnknownReference {
            kind: "region",
            name: file.freeway_region.clone(),
            context: "freeway_region".into(),
        })?;

    let mut road_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, r) in file.roads.iter().enumerate() {
        if road_index.insert(r.id.as_str(), i).is_some() {
            return Err(ConfigError::Schema(format!("duplicate road id '{}'", r.id)));
        }
    }

    let mut roads = Vec::with_capacity(file.roads.len());
    for r in &file.roads {
        let entity = format!("road '{}'", r.id);
        let positive = |field: &'static str, value: f64| -> Result<(), ConfigError> {
            if value > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::InvalidValue {
                    field,
                    entity: entity.clone(),
                    reason: format!("must be positive, got {value}"),
                })
            }
        };
        positive("length_km", r.length_km)?;
        positive("v_max_kmh", r.v_max_kmh)?;
        positive("w_kmh", r.w_kmh)?;
        positive("q_max_vph", r.q_max_vph)?;
        positive("n_hat_per_km", r.n_hat_per_km)?;
        if r.w_kmh > r.v_max_kmh {
            return Err(ConfigError::InvalidValue {
                field: "w_kmh",
                entity,
                reason: format!("spillback speed {} exceeds v_max {}", r.w_kmh, r.v_max_kmh),
            });
        }
        let delta_km = r.v_max_kmh / 3600.0 * dt;
        let n_cells = cell_count(r.length_km, delta_km);
        roads.push(Road {
            name: r.id.clone(),
            head: lookup_node(&r.from, &format!("road '{}'", r.id))?,
            tail: lookup_node(&r.to, &format!("road '{}'", r.id))?,
            length_km: r.length_km,
            v_max_kmh: r.v_max_kmh,
            w_kmh: r.w_kmh,
            lanes: r.lanes,
            kind: r.kind,
            q_max: r.q_max_vph / 3600.0 * dt,
            n_hat_cell: r.n_hat_per_km * delta_km,
            n_hat_total: r.n_hat_per_km * r.length_km,
            delta_km,
            n_cells,
            merge_into: None,
            diverge_from: None,
        });
    }

    // Resolve ramp junctions after all roads exist.
    let mut merge_cells: BTreeMap<(usize, usize), String> = BTreeMap::new();
    for (i, r) in file.roads.iter().enumerate() {
        let entity = format!("road '{}'", r.id);
        match (r.kind, &r.merges_into, &r.diverges_from) {
            (RoadKind::OnRamp, Some(j), None) => {
                let main = resolve_junction(&road_index, &roads, j, &entity)?;
                if merge_cells.insert(main, r.id.clone()).is_some() {
                    return Err(ConfigError::InvalidValue {
                        field: "merges_into",
                        entity,
                        reason: format!("cell {} already used by another ramp", j.cell),
                    });
                }
                roads[i].merge_into = Some(main);
            }
            (RoadKind::OffRamp, None, Some(j)) => {
                let main = resolve_junction(&road_index, &roads, j, &entity)?;
                if merge_cells.insert(main, r.id.clone()).is_some() {
                    return Err(ConfigError::InvalidValue {
                        field: "diverges_from",
                        entity,
                        reason: format!("cell {} already used by another ramp", j.cell),
                    });
                }
                roads[i].diverge_from = Some(main);
            }
            (RoadKind::Mainline | RoadKind::Urban, None, None) => {}
            _ => {
                return Err(ConfigError::InvalidValue {
                    field: "kind",
                    entity,
                    reason: "on-ramps need merges_into, off-ramps need diverges_from, \
                             other kinds take neither"
                        .into(),
                });
            }
        }
    }

    // Overflow guard for merge cells: with gamma < 1 a full supply term can
    // overfill a cell; the defaults (gamma = zeta = 1) always pass.
    let c = &file.control;
    for road in roads.iter().filter(|r| r.kind == RoadKind::Mainline) {
        let wv = road.w_over_v();
        if c.zeta * (1.0 - c.gamma * wv) > (1.0 - wv) + 1e-12 {
            return Err(ConfigError::InvalidValue {
                field: "gamma",
                entity: format!("road '{}'", road.name),
                reason: format!(
                    "zeta*(1-gamma*w/v) = {} exceeds 1-w/v = {}; merge cells could overfill",
                    c.zeta * (1.0 - c.gamma * wv),
                    1.0 - wv
                ),
            });
        }
    }

    let mut regions = Vec::with_capacity(file.regions.len());
    for (d, section) in file.regions.iter().enumerate() {
        let nodes: Vec<usize> = section
            .nodes
            .iter()
            .map(|n| node_index[n.as_str()])
            .collect();
        let mut internal = Vec::new();
        let mut out_boundary = Vec::new();
        let mut in_boundary = Vec::new();
        let mut l_sum = 0.0;
        let mut n_hat = 0.0;
        for (i, road) in roads.iter().enumerate() {
            let head_in = node_region[road.head] == d;
            let tail_in = node_region[road.tail] == d;
            if head_in && tail_in {
                internal.push(i);
                l_sum += road.length_km;
                n_hat += road.n_hat_total;
            } else if head_in {
                out_boundary.push(i);
            } else if tail_in && road.merge_into.is_none() {
                // A merged tail discharges into a mainline cell, not into
                // the region that happens to hold the junction node.
                in_boundary.push(i);
            }
        }
        if d != freeway_region && section.l_max_km > l_sum + 1e-9 {
            return Err(ConfigError::InvalidValue {
                field: "l_max_km",
                entity: format!("region '{}'", section.id),
                reason: format!(
                    "longest route {} exceeds total internal length {l_sum}",
                    section.l_max_km
                ),
            });
        }
        regions.push(RegionSpec {
            name: section.id.clone(),
            nodes,
            l_sum_km: l_sum,
            l_max_km: section.l_max_km,
            n_hat_total: n_hat,
            mfd: section.mfd.clone(),
            internal_roads: internal,
            out_boundary,
            in_boundary,
        });
    }

    let mut ramp_agents = Vec::new();
    for a in &file.ramp_agents {
        let on_ramp = *road_index.get(a.on_ramp.as_str()).ok_or_else(|| {
            ConfigError::UnknownReference {
                kind: "road",
                name: a.on_ramp.clone(),
                context: format!("ramp agent '{}'", a.id),
            }
        })?;
        let (mainline, merge_cell) =
            roads[on_ramp]
                .merge_into
                .ok_or_else(|| ConfigError::InvalidValue {
                    field: "on_ramp",
                    entity: format!("ramp agent '{}'", a.id),
                    reason: format!("road '{}' has no merge junction", a.on_ramp),
                })?;
        ramp_agents.push(RampAgentSpec {
            name: a.id.clone(),
            on_ramp,
            mainline,
            merge_cell,
        });
    }
    let mut perimeter_agents = Vec::new();
    for a in &file.perimeter_agents {
        let region = file
            .regions
            .iter()
            .position(|r| r.id == a.region)
            .ok_or_else(|| ConfigError::UnknownReference {
                kind: "region",
                name: a.region.clone(),
                context: format!("perimeter agent '{}'", a.id),
            })?;
        if region == freeway_region {
            return Err(ConfigError::InvalidValue {
                field: "region",
                entity: format!("perimeter agent '{}'", a.id),
                reason: "cannot gate the ACTM region".into(),
            });
        }
        perimeter_agents.push(PerimeterAgentSpec {
            name: a.id.clone(),
            region,
        });
    }

    if !(c.u_min > 0.0 && c.u_min < c.u_max && c.u_max <= 1.0) {
        return Err(ConfigError::InvalidValue {
            field: "u_min/u_max",
            entity: "control".into(),
            reason: format!("need 0 < u_min < u_max <= 1, got {} and {}", c.u_min, c.u_max),
        });
    }
    if !(c.gamma >= 0.0 && c.gamma <= 1.0) || !(c.zeta > 0.0 && c.zeta <= 1.0) {
        return Err(ConfigError::InvalidValue {
            field: "gamma/zeta",
            entity: "control".into(),
            reason: "gamma in [0,1], zeta in (0,1]".into(),
        });
    }

    let network = Network {
        dt_seconds: dt,
        node_names: file.nodes.clone(),
        roads,
        regions,
        freeway_region,
        node_region,
        control: ControlParams {
            u_min: c.u_min,
            u_max: c.u_max,
            delta_u: c.delta_u,
            decision_period_s: c.decision_period_s,
            zeta: c.zeta,
            gamma: c.gamma,
        },
        ramp_agents,
        perimeter_agents,
    };

    let demand = build_demand(&network, &file.demand)?;
    Ok(Scenario { network, demand })
}

fn resolve_junction(
    road_index: &BTreeMap<&str, usize>,
    roads: &[Road],
    j: &RampJunction,
    entity: &str,
) -> Result<(usize, usize), ConfigError> {
    let main = *road_index
        .get(j.road.as_str())
        .ok_or_else(|| ConfigError::UnknownReference {
            kind: "road",
            name: j.road.clone(),
            context: entity.to_string(),
        })?;
    if roads[main].kind != RoadKind::Mainline {
        return Err(ConfigError::InvalidValue {
            field: "road",
            entity: entity.to_string(),
            reason: format!("'{}' is not a mainline road", j.road),
        });
    }
    let cells = roads[main].n_cells;
    // Ramps attach to general cells only (not the source or sink cell).
    if j.cell == 0 || j.cell + 1 >= cells {
        return Err(ConfigError::InvalidValue {
            field: "cell",
            entity: entity.to_string(),
            reason: format!("cell {} outside general range 1..{}", j.cell, cells - 1),
        });
    }
    Ok((main, j.cell))
}

fn build_demand(net: &Network, section: &DemandSection) -> Result<DemandProfile, ConfigError> {
    if section.total_veh < 0.0 || section.horizon_s <= 0.0 || section.noise_ratio < 0.0 {
        return Err(ConfigError::InvalidValue {
            field: "demand",
            entity: "demand".into(),
            reason: "total_veh >= 0, horizon_s > 0, noise_ratio >= 0".into(),
        });
    }
    if section.peak_curve.len() < 2 {
        return Err(ConfigError::InvalidValue {
            field: "peak_curve",
            entity: "demand".into(),
            reason: "need at least two points".into(),
        });
    }
    for w in section.peak_curve.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(ConfigError::InvalidValue {
                field: "peak_curve",
                entity: "demand".into(),
                reason: "time fractions must be strictly increasing".into(),
            });
        }
    }
    if section.peak_curve.iter().any(|&(t, v)| !(0.0..=1.0).contains(&t) || v < 0.0) {
        return Err(ConfigError::InvalidValue {
            field: "peak_curve",
            entity: "demand".into(),
            reason: "time fractions in [0,1], weights >= 0".into(),
        });
    }
    let mut od = Vec::new();
    for pair in &section.od {
        let from = net
            .region_index(&pair.from)
            .ok_or_else(|| ConfigError::UnknownReference {
                kind: "region",
                name: pair.from.clone(),
                context: "demand od".into(),
            })?;
        let to = net
            .region_index(&pair.to)
            .ok_or_else(|| ConfigError::UnknownReference {
                kind: "region",
                name: pair.to.clone(),
                context: "demand od".into(),
            })?;
        if pair.weight < 0.0 {
            return Err(ConfigError::InvalidValue {
                field: "weight",
                entity: format!("od {}->{}", pair.from, pair.to),
                reason: "must be non-negative".into(),
            });
        }
        od.push(OdDemand {
            origin: from,
            destination: to,
            weight: pair.weight,
        });
    }
    Ok(DemandProfile {
        total_veh: section.total_veh,
        horizon_s: section.horizon_s,
        noise_ratio: section.noise_ratio,
        peak_curve: section.peak_curve.clone(),
        od,
    })
}
