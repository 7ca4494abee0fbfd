//! Static network representation: directed road graph, region partition,
//! cell discretization for ACTM roads, and MFD speed functions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeIdx = usize;
pub type RoadIdx = usize;
pub type RegionIdx = usize;

#[derive(Debug, Error)]
pub enum MfdError {
    #[error("accumulation must be non-negative, got {0}")]
    NegativeAccumulation(f64),
    #[error("density must be non-negative, got {0}")]
    NegativeDensity(f64),
    #[error("junction density gamma_d must be non-negative, got {0}")]
    NegativeGamma(f64),
    #[error("degree density deg_t must be positive, got {0}")]
    NonPositiveDegreeDensity(f64),
}

/// Regional speed-accumulation relation. The Underwood form stores the
/// critical accumulation directly (veh); the topology form derives speed
/// from junction density and node-degree density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MfdParams {
    Underwood {
        v_free_kmh: f64,
        critical_accumulation_veh: f64,
    },
    Topology {
        junctions_per_km: f64,
        degree_per_km2: f64,
    },
}

impl MfdParams {
    /// Space-mean speed (km/h) at the given accumulation. `l_sum_km` is only
    /// used by the topology form, which is parameterized in density.
    pub fn speed(&self, accumulation: f64, l_sum_km: f64) -> Result<f64, MfdError> {
        match *self {
            MfdParams::Underwood {
                v_free_kmh,
                critical_accumulation_veh,
            } => underwood_speed(accumulation, v_free_kmh, critical_accumulation_veh),
            MfdParams::Topology {
                junctions_per_km,
                degree_per_km2,
            } => mfd_from_topology(accumulation / l_sum_km, junctions_per_km, degree_per_km2),
        }
    }

    pub fn v_free(&self) -> f64 {
        match *self {
            MfdParams::Underwood { v_free_kmh, .. } => v_free_kmh,
            MfdParams::Topology {
                junctions_per_km, ..
            } => MFD_TOPOLOGY_V0 * (-MFD_TOPOLOGY_GAMMA_COEF * junctions_per_km).exp(),
        }
    }

    /// Accumulation at which flow peaks; used as the default Gating threshold.
    pub fn critical_accumulation(&self, l_sum_km: f64) -> f64 {
        match *self {
            MfdParams::Underwood {
                critical_accumulation_veh,
                ..
            } => critical_accumulation_veh,
            MfdParams::Topology { degree_per_km2, .. } => {
                MFD_TOPOLOGY_DENSITY_SCALE / degree_per_km2 * l_sum_km
            }
        }
    }
}

pub const MFD_TOPOLOGY_V0: f64 = 53.874;
pub const MFD_TOPOLOGY_GAMMA_COEF: f64 = 0.077;
pub const MFD_TOPOLOGY_DENSITY_SCALE: f64 = 3.161e6;

/// Underwood speed: `v = v_free * exp(-accumulation / critical)`.
pub fn underwood_speed(
    accumulation: f64,
    v_free_kmh: f64,
    critical_accumulation_veh: f64,
) -> Result<f64, MfdError> {
    if accumulation < 0.0 {
        return Err(MfdError::NegativeAccumulation(accumulation));
    }
    Ok(v_free_kmh * (-accumulation / critical_accumulation_veh).exp())
}

/// Topology-calibrated Underwood speed from junction density (junctions/km)
/// and node-degree density (degree/km^2); `k` is vehicle density in veh/km.
pub fn mfd_from_topology(k: f64, gamma_d: f64, deg_t: f64) -> Result<f64, MfdError> {
    if k < 0.0 {
        return Err(MfdError::NegativeDensity(k));
    }
    if gamma_d < 0.0 {
        return Err(MfdError::NegativeGamma(gamma_d));
    }
    if deg_t <= 0.0 {
        return Err(MfdError::NonPositiveDegreeDensity(deg_t));
    }
    Ok(MFD_TOPOLOGY_V0
        * (-MFD_TOPOLOGY_GAMMA_COEF * gamma_d).exp()
        * (-k / (MFD_TOPOLOGY_DENSITY_SCALE / deg_t)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadKind {
    Mainline,
    OnRamp,
    OffRamp,
    Urban,
}

impl RoadKind {
    /// ACTM-simulated kinds; urban roads only contribute capacity and length.
    pub fn is_actm(self) -> bool {
        !matches!(self, RoadKind::Urban)
    }
}

/// A directed road. ACTM kinds are discretized into cells of length
/// `delta_km = v_max * dt`; urban roads are bookkeeping-only (boundary
/// capacity, region length and jam totals).
#[derive(Debug, Clone)]
pub struct Road {
    pub name: String,
    pub head: NodeIdx,
    pub tail: NodeIdx,
    pub length_km: f64,
    pub v_max_kmh: f64,
    pub w_kmh: f64,
    pub lanes: u32,
    pub kind: RoadKind,
    /// Capacity in veh per unit interval (converted from veh/h at load).
    pub q_max: f64,
    /// Jam vehicle count per cell (ACTM kinds).
    pub n_hat_cell: f64,
    /// Jam vehicle count for the whole road.
    pub n_hat_total: f64,
    pub delta_km: f64,
    pub n_cells: usize,
    /// For on-ramps: mainline road and general-cell index the ramp feeds.
    pub merge_into: Option<(RoadIdx, usize)>,
    /// For off-ramps: mainline road and general-cell index the ramp drains.
    pub diverge_from: Option<(RoadIdx, usize)>,
}

impl Road {
    pub fn w_over_v(&self) -> f64 {
        self.w_kmh / self.v_max_kmh
    }

    /// Critical vehicle count per cell (count at which the free-flow branch
    /// reaches capacity); default ALINEA threshold.
    pub fn critical_cell_count(&self) -> f64 {
        self.q_max
    }
}

#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub name: String,
    pub nodes: Vec<NodeIdx>,
    /// Total internal road length (km), derived from internal urban roads.
    pub l_sum_km: f64,
    /// Longest route length (km), declared in the config.
    pub l_max_km: f64,
    /// Jam accumulation (veh), derived as the sum of internal road jam counts.
    pub n_hat_total: f64,
    pub mfd: MfdParams,
    pub internal_roads: Vec<RoadIdx>,
    /// Boundary roads leaving this region (head inside, tail outside).
    pub out_boundary: Vec<RoadIdx>,
    /// Boundary roads entering this region (head outside, tail inside).
    pub in_boundary: Vec<RoadIdx>,
}

impl RegionSpec {
    /// Uncontrolled outflow boundary capacity (veh per interval).
    pub fn c_margin_out(&self, roads: &[Road]) -> f64 {
        self.out_boundary.iter().map(|&r| roads[r].q_max).sum()
    }

    /// Uncontrolled inflow boundary capacity (veh per interval).
    pub fn c_margin_in(&self, roads: &[Road]) -> f64 {
        self.in_boundary.iter().map(|&r| roads[r].q_max).sum()
    }

    pub fn mean_leg_km(&self) -> f64 {
        (self.l_sum_km / REGION_LEG_FACTOR).min(self.l_max_km)
    }
}

/// Characteristic divisor for per-leg trip distances within a region.
pub const REGION_LEG_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Copy)]
pub struct ControlParams {
    pub u_min: f64,
    pub u_max: f64,
    pub delta_u: f64,
    pub decision_period_s: f64,
    pub zeta: f64,
    pub gamma: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            u_min: 0.1,
            u_max: 1.0,
            delta_u: 0.05,
            decision_period_s: 30.0,
            zeta: 1.0,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RampAgentSpec {
    pub name: String,
    /// The on-ramp road whose discharge is metered.
    pub on_ramp: RoadIdx,
    /// Metered mainline road and merge cell (copied from the ramp road).
    pub mainline: RoadIdx,
    pub merge_cell: usize,
}

#[derive(Debug, Clone)]
pub struct PerimeterAgentSpec {
    pub name: String,
    pub region: RegionIdx,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub dt_seconds: f64,
    pub node_names: Vec<String>,
    pub roads: Vec<Road>,
    pub regions: Vec<RegionSpec>,
    pub freeway_region: RegionIdx,
    /// Region membership per node.
    pub node_region: Vec<RegionIdx>,
    pub control: ControlParams,
    pub ramp_agents: Vec<RampAgentSpec>,
    pub perimeter_agents: Vec<PerimeterAgentSpec>,
}

impl Network {
    pub fn region_of_node(&self, n: NodeIdx) -> RegionIdx {
        self.node_region[n]
    }

    pub fn is_bathtub_region(&self, d: RegionIdx) -> bool {
        d != self.freeway_region
    }

    pub fn road_index(&self, name: &str) -> Option<RoadIdx> {
        self.roads.iter().position(|r| r.name == name)
    }

    pub fn region_index(&self, name: &str) -> Option<RegionIdx> {
        self.regions.iter().position(|r| r.name == name)
    }

    /// Region the road's source cell pulls from, when the head node lies in a
    /// bathtub region. On-ramp and mainline heads anchored in urban regions
    /// are the region-to-ACTM interfaces.
    pub fn source_feed_region(&self, road: RoadIdx) -> Option<RegionIdx> {
        let r = &self.roads[road];
        if !r.kind.is_actm() {
            return None;
        }
        let d = self.region_of_node(r.head);
        self.is_bathtub_region(d).then_some(d)
    }

    /// Region the road's sink cell discharges into, when the tail node lies
    /// in a bathtub region and the tail is not a merge connection.
    pub fn sink_drain_region(&self, road: RoadIdx) -> Option<RegionIdx> {
        let r = &self.roads[road];
        if !r.kind.is_actm() || r.merge_into.is_some() {
            return None;
        }
        let d = self.region_of_node(r.tail);
        self.is_bathtub_region(d).then_some(d)
    }
}

/// Vertex of the region adjacency graph: bathtub regions plus individual
/// ACTM roads (whose source/sink cells act as interface vertices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AdjVertex {
    Region(RegionIdx),
    Road(RoadIdx),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjEdgeKind {
    /// Urban boundary road between two bathtub regions.
    UrbanBoundary(RoadIdx),
    /// Bathtub region feeding an ACTM road's source cell.
    RegionToRoad,
    /// ACTM road sink cell draining into a bathtub region.
    RoadToRegion,
    /// On-ramp sink merging into a mainline general cell.
    Merge(usize),
    /// Mainline general cell diverging into an off-ramp source.
    Diverge(usize),
    /// ACTM sink cell feeding another ACTM source cell at a shared node.
    RoadToRoad,
}

/// Region adjacency used for path planning and perimeter-agent neighborhoods.
#[derive(Debug, Clone, Default)]
pub struct RegionAdjacency {
    pub edges: Vec<(AdjVertex, AdjVertex, AdjEdgeKind)>,
}

impl RegionAdjacency {
    pub fn has_edge(&self, from: AdjVertex, to: AdjVertex) -> bool {
        self.edges.iter().any(|&(f, t, _)| f == from && t == to)
    }

    pub fn neighbors_of_region(&self, d: RegionIdx) -> Vec<AdjVertex> {
        let me = AdjVertex::Region(d);
        let mut out: Vec<AdjVertex> = self
            .edges
            .iter()
            .filter_map(|&(f, t, _)| {
                if f == me {
                    Some(t)
                } else if t == me {
                    Some(f)
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Builds the region adjacency graph from boundary roads and ramp couplings.
pub fn partition_network(net: &Network) -> RegionAdjacency {
    let mut edges = Vec::new();
    for (i, road) in net.roads.iter().enumerate() {
        let head_d = net.region_of_node(road.head);
        let tail_d = net.region_of_node(road.tail);
        match road.kind {
            RoadKind::Urban => {
                if head_d != tail_d
                    && net.is_bathtub_region(head_d)
                    && net.is_bathtub_region(tail_d)
                {
                    edges.push((
                        AdjVertex::Region(head_d),
                        AdjVertex::Region(tail_d),
                        AdjEdgeKind::UrbanBoundary(i),
                    ));
                }
            }
            _ => {
                if let Some(d) = net.source_feed_region(i) {
                    edges.push((
                        AdjVertex::Region(d),
                        AdjVertex::Road(i),
                        AdjEdgeKind::RegionToRoad,
                    ));
                }
                if let Some(d) = net.sink_drain_region(i) {
                    edges.push((
                        AdjVertex::Road(i),
                        AdjVertex::Region(d),
                        AdjEdgeKind::RoadToRegion,
                    ));
                }
                if let Some((main, cell)) = road.merge_into {
                    edges.push((
                        AdjVertex::Road(i),
                        AdjVertex::Road(main),
                        AdjEdgeKind::Merge(cell),
                    ));
                }
                if let Some((main, cell)) = road.diverge_from {
                    edges.push((
                        AdjVertex::Road(main),
                        AdjVertex::Road(i),
                        AdjEdgeKind::Diverge(cell),
                    ));
                }
            }
        }
    }
    // Sink-to-source chaining of ACTM roads sharing a freeway-region node.
    for (i, a) in net.roads.iter().enumerate() {
        if !a.kind.is_actm() || a.merge_into.is_some() {
            continue;
        }
        if net.is_bathtub_region(net.region_of_node(a.tail)) {
            continue;
        }
        for (j, b) in net.roads.iter().enumerate() {
            if i == j || !b.kind.is_actm() || b.diverge_from.is_some() {
                continue;
            }
            if b.head == a.tail {
                edges.push((AdjVertex::Road(i), AdjVertex::Road(j), AdjEdgeKind::RoadToRoad));
            }
        }
    }
    RegionAdjacency { edges }
}

/// Number of cells for a road of length `l` with cell length `delta`.
pub fn cell_count(length_km: f64, delta_km: f64) -> usize {
    ((length_km / delta_km) - 1e-9).ceil().max(1.0) as usize
}
