//! The per-interval simulation loop coupling the ACTM freeway model and the
//! bathtub regions, plus agent observations, rewards, and episode metrics.
//!
//! Interval order: apply control (on decision boundaries), inject demand,
//! compute region speeds, compute ACTM flows, collect boundary demands, run
//! the proportional allocation, resolve transfers, apply conservation
//! updates, then advance the bathtub regions. Every computation reads
//! start-of-interval state; updates commit at the end of the interval.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::actm::{ActmSystem, FlowAudit, SinkTarget, StepFlows};
use crate::alloc::{allocate_proportional, TransferRequest};
use crate::bathtub::{self, NewCohort, NextHop, RegionState};
use crate::demand::{sample_demand, DemandProfile, RealizedDemand};
use crate::metrics::{finalize_metrics, EpisodeMetrics, IntervalRecord};
use crate::net::{AdjVertex, Network, RegionAdjacency, RegionIdx};
use crate::plan::{plan_all, Leg, PathSet, PlanError};

/// Discrete action space shared by every agent: raise, hold, lower.
pub const ACTION_RAISE: usize = 0;
pub const ACTION_HOLD: usize = 1;
pub const ACTION_LOWER: usize = 2;
pub const N_ACTIONS: usize = 3;

pub fn action_delta(action: usize, delta_u: f64) -> f64 {
    match action {
        ACTION_RAISE => delta_u,
        ACTION_HOLD => 0.0,
        ACTION_LOWER => -delta_u,
        _ => panic!("action index {action} out of range"),
    }
}

/// Static description of one controllable agent.
#[derive(Debug, Clone)]
pub struct AgentInfo {
    pub name: String,
    pub kind: AgentKind,
    pub obs_dim: usize,
}

#[derive(Debug, Clone)]
pub enum AgentKind {
    Ramp {
        /// Local ACTM indices.
        main: usize,
        ramp: usize,
        merge_cell: usize,
    },
    Perimeter {
        region: RegionIdx,
        neighbors: Vec<ObsNeighbor>,
    },
}

#[derive(Debug, Clone)]
pub enum ObsNeighbor {
    Region {
        region: RegionIdx,
        /// Total capacity of the boundary roads shared with this neighbor.
        exchange_capacity: f64,
    },
    RoadInterface {
        local: usize,
        /// True when the interface is the road's source cell (region feeds
        /// it); false for a sink cell draining into the region.
        source_side: bool,
    },
}

/// Immutable per-run data shared by all episodes of a run.
#[derive(Debug)]
pub struct SimBundle {
    pub net: Arc<Network>,
    pub adjacency: RegionAdjacency,
    pub paths: PathSet,
    pub agents: Vec<AgentInfo>,
}

pub fn build_bundle(
    net: Arc<Network>,
    demand: &DemandProfile,
    seed: u64,
) -> Result<SimBundle, PlanError> {
    let adjacency = crate::net::partition_network(&net);
    let paths = plan_all(&net, &adjacency, &demand.od, seed)?;
    let agents = build_agents(&net, &adjacency, &paths);
    Ok(SimBundle {
        net,
        adjacency,
        paths,
        agents,
    })
}

fn build_agents(net: &Network, adjacency: &RegionAdjacency, paths: &PathSet) -> Vec<AgentInfo> {
    // Local ACTM indices mirror ActmSystem::new's construction order.
    let system = ActmSystem::new(net, paths);
    let mut agents = Vec::new();
    for spec in &net.ramp_agents {
        agents.push(AgentInfo {
            name: spec.name.clone(),
            kind: AgentKind::Ramp {
                main: system.local_of_road[spec.mainline].expect("mainline not ACTM"),
                ramp: system.local_of_road[spec.on_ramp].expect("ramp not ACTM"),
                merge_cell: spec.merge_cell,
            },
            obs_dim: 15,
        });
    }
    for spec in &net.perimeter_agents {
        let d = spec.region;
        let mut neighbors = Vec::new();
        for v in adjacency.neighbors_of_region(d) {
            match v {
                AdjVertex::Region(other) => {
                    let exchange_capacity: f64 = net
                        .roads
                        .iter()
                        .filter(|r| {
                            let hd = net.region_of_node(r.head);
                            let td = net.region_of_node(r.tail);
                            (hd == d && td == other) || (hd == other && td == d)
                        })
                        .map(|r| r.q_max)
                        .sum();
                    neighbors.push(ObsNeighbor::Region {
                        region: other,
                        exchange_capacity,
                    });
                }
                AdjVertex::Road(r) => {
                    let local = system.local_of_road[r].expect("interface not ACTM");
                    let source_side = net.source_feed_region(r) == Some(d);
                    neighbors.push(ObsNeighbor::RoadInterface { local, source_side });
                }
            }
        }
        let obs_dim = 3 + 4 * neighbors.len();
        agents.push(AgentInfo {
            name: spec.name.clone(),
            kind: AgentKind::Perimeter {
                region: d,
                neighbors,
            },
            obs_dim,
        });
    }
    agents
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub episode_seed: u64,
    pub demand_scale: f64,
    pub audit: bool,
    /// Record per-window cell densities and region curves.
    pub record_dynamics: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            episode_seed: 0,
            demand_scale: 1.0,
            audit: false,
            record_dynamics: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct RampWindow {
    f_up: f64,
    f_down: f64,
    ramp_in: f64,
}

/// Per-window dynamics rows for debug dumps.
#[derive(Debug, Clone)]
pub struct CellDensityRow {
    pub t: u32,
    pub road: String,
    pub cell: usize,
    pub vehicles: f64,
}

#[derive(Debug, Clone)]
pub struct RegionCurveRow {
    pub t: u32,
    pub region: String,
    pub accumulation: f64,
    pub speed_kmh: f64,
    pub inflow: f64,
    pub outflow: f64,
}

pub struct Simulation {
    pub bundle: Arc<SimBundle>,
    demand: RealizedDemand,
    pub horizon_steps: usize,
    pub max_steps: usize,
    pub decision_steps: usize,
    t: usize,
    actm: ActmSystem,
    regions: Vec<Option<RegionState>>,
    audit: FlowAudit,
    options: SimOptions,

    cum_injected: f64,
    cum_completed: f64,
    veh_km: f64,
    freeflow_ttt_s: f64,
    series: Vec<IntervalRecord>,

    // Window accumulators for observations, reset at decision boundaries.
    completions_window: f64,
    region_starts_win: Vec<f64>,
    region_ends_win: Vec<f64>,
    region_in_win: Vec<f64>,
    region_out_win: Vec<f64>,
    road_mu_win: Vec<f64>,
    road_nu_win: Vec<f64>,
    ramp_win: Vec<RampWindow>,
    exchange_win: BTreeMap<(AdjVertex, AdjVertex), f64>,

    pub cell_density_rows: Vec<CellDensityRow>,
    pub region_curve_rows: Vec<RegionCurveRow>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepOutcome {
    pub completed: f64,
    /// Completions of the just-finished control window, present on the last
    /// interval of each window.
    pub window_completions: Option<f64>,
}

impl Simulation {
    pub fn new(bundle: Arc<SimBundle>, profile: &DemandProfile, options: SimOptions) -> Self {
        let net = &bundle.net;
        let scaled = profile.scaled(options.demand_scale);
        let demand = sample_demand(&scaled, net.dt_seconds, options.episode_seed);
        let horizon_steps = demand.starts.len();
        let decision_steps = (net.control.decision_period_s / net.dt_seconds).round() as usize;

        let actm = ActmSystem::new(net, &bundle.paths);
        let mut regions: Vec<Option<RegionState>> = (0..net.regions.len())
            .map(|d| net.is_bathtub_region(d).then(|| RegionState::new(d)))
            .collect();
        for spec in &net.perimeter_agents {
            if let Some(r) = regions[spec.region].as_mut() {
                r.controlled = true;
            }
        }

        // Volume-weighted free-flow travel time over the realized table.
        let mut ff_num = 0.0;
        let mut ff_den = 0.0;
        for row in &demand.starts {
            for (k, &v) in row.iter().enumerate() {
                if let Some(pid) = bundle.paths.od_to_path[k] {
                    ff_num += v * bundle.paths.paths[pid].freeflow_s;
                    ff_den += v;
                }
            }
        }
        let freeflow_ttt_s = if ff_den > 0.0 { ff_num / ff_den } else { 0.0 };

        let n_regions = net.regions.len();
        let n_local = actm.roads.len();
        let ramp_count = net.ramp_agents.len();
        let audit = FlowAudit {
            enabled: options.audit,
            violations: Vec::new(),
        };
        Simulation {
            bundle,
            demand,
            horizon_steps,
            max_steps: horizon_steps * 2,
            decision_steps,
            t: 0,
            actm,
            regions,
            audit,
            options,
            cum_injected: 0.0,
            cum_completed: 0.0,
            veh_km: 0.0,
            freeflow_ttt_s,
            series: Vec::new(),
            completions_window: 0.0,
            region_starts_win: vec![0.0; n_regions],
            region_ends_win: vec![0.0; n_regions],
            region_in_win: vec![0.0; n_regions],
            region_out_win: vec![0.0; n_regions],
            road_mu_win: vec![0.0; n_local],
            road_nu_win: vec![0.0; n_local],
            ramp_win: vec![RampWindow::default(); ramp_count],
            exchange_win: BTreeMap::new(),
            cell_density_rows: Vec::new(),
            region_curve_rows: Vec::new(),
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn net(&self) -> &Network {
        &self.bundle.net
    }

    pub fn paths(&self) -> &PathSet {
        &self.bundle.paths
    }

    pub fn agents(&self) -> &[AgentInfo] {
        &self.bundle.agents
    }

    pub fn running(&self) -> f64 {
        let regions: f64 = self
            .regions
            .iter()
            .flatten()
            .map(|r| r.accumulation)
            .sum();
        self.actm.total_vehicles() + regions
    }

    pub fn audit_violations(&self) -> &[String] {
        &self.audit.violations
    }

    pub fn region_accumulation(&self, d: RegionIdx) -> f64 {
        self.regions[d].as_ref().map_or(0.0, |r| r.accumulation)
    }

    /// Per-cell vehicle totals of an ACTM road by its network index.
    pub fn road_cell_totals(&self, road: usize) -> &[f64] {
        let local = self.actm.local_of_road[road].expect("ACTM road");
        &self.actm.roads[local].totals
    }

    pub fn road_start_queue_total(&self, road: usize) -> f64 {
        let local = self.actm.local_of_road[road].expect("ACTM road");
        self.actm.roads[local].queued()
    }

    pub fn region_speed(&self, d: RegionIdx) -> f64 {
        self.regions[d].as_ref().map_or(0.0, |r| r.speed_kmh)
    }

    pub fn cum_injected(&self) -> f64 {
        self.cum_injected
    }

    pub fn cum_completed(&self) -> f64 {
        self.cum_completed
    }

    /// Mainline merge-cell vehicle count observed by a ramp teacher.
    pub fn merge_cell_count(&self, agent: usize) -> f64 {
        match &self.bundle.agents[agent].kind {
            AgentKind::Ramp {
                main, merge_cell, ..
            } => self.actm.roads[*main].totals[*merge_cell],
            _ => panic!("agent {agent} is not a ramp"),
        }
    }

    pub fn rate_of(&self, agent: usize) -> f64 {
        match &self.bundle.agents[agent].kind {
            AgentKind::Ramp {
                main, merge_cell, ..
            } => self.actm.roads[*main].meter[*merge_cell],
            AgentKind::Perimeter { region, .. } => self.regions[*region]
                .as_ref()
                .map_or(1.0, |r| r.perimeter_rate),
        }
    }

    fn apply_actions(&mut self, actions: &[usize]) {
        let control = self.bundle.net.control;
        assert_eq!(
            actions.len(),
            self.bundle.agents.len(),
            "one action per declared agent"
        );
        for (i, &a) in actions.iter().enumerate() {
            let delta = action_delta(a, control.delta_u);
            match &self.bundle.agents[i].kind {
                AgentKind::Ramp {
                    main, merge_cell, ..
                } => {
                    let r = &mut self.actm.roads[*main].meter[*merge_cell];
                    *r = (*r + delta).clamp(control.u_min, control.u_max);
                }
                AgentKind::Perimeter { region, .. } => {
                    if let Some(state) = self.regions[*region].as_mut() {
                        state.perimeter_rate =
                            (state.perimeter_rate + delta).clamp(control.u_min, control.u_max);
                    }
                }
            }
        }
    }

    fn reset_windows(&mut self) {
        self.completions_window = 0.0;
        self.region_starts_win.iter_mut().for_each(|v| *v = 0.0);
        self.region_ends_win.iter_mut().for_each(|v| *v = 0.0);
        self.region_in_win.iter_mut().for_each(|v| *v = 0.0);
        self.region_out_win.iter_mut().for_each(|v| *v = 0.0);
        self.road_mu_win.iter_mut().for_each(|v| *v = 0.0);
        self.road_nu_win.iter_mut().for_each(|v| *v = 0.0);
        self.ramp_win.iter_mut().for_each(|w| *w = RampWindow::default());
        self.exchange_win.clear();
    }

    /// Executes one unit interval. Actions are only accepted on decision
    /// boundaries; observations must be taken before calling this.
    pub fn step(&mut self, actions: Option<&[usize]>) -> StepOutcome {
        let bundle = Arc::clone(&self.bundle);
        let net = &*bundle.net;
        let paths = &bundle.paths;
        let dt_h = net.dt_seconds / 3600.0;
        let window_start = self.t % self.decision_steps == 0;
        if window_start {
            self.reset_windows();
            if let Some(actions) = actions {
                self.apply_actions(actions);
            }
        } else {
            assert!(actions.is_none(), "actions only apply on decision boundaries");
        }

        // Demand injection for this interval.
        let mut arrivals: Vec<Vec<NewCohort>> = vec![Vec::new(); net.regions.len()];
        if self.t < self.horizon_steps {
            let row_idx = self.t;
            for k in 0..self.demand.starts[row_idx].len() {
                let size = self.demand.starts[row_idx][k];
                if size <= 0.0 {
                    continue;
                }
                let Some(pid) = paths.od_to_path[k] else { continue };
                self.cum_injected += size;
                match &paths.paths[pid].legs[0] {
                    Leg::Urban {
                        region,
                        distance_km,
                    } => {
                        arrivals[*region].push(NewCohort {
                            path: pid,
                            leg: 0,
                            size,
                            distance_km: *distance_km,
                        });
                        self.region_starts_win[*region] += size;
                    }
                    Leg::Actm { road, .. } => {
                        let local = self.actm.local_of_road[*road].expect("ACTM origin road");
                        let slot = self.actm.roads[local]
                            .slot_of_path(pid)
                            .expect("origin slot");
                        self.actm.roads[local].start_queue[slot] += size;
                    }
                }
            }
        }
        let region_starts_now: Vec<f64> = (0..net.regions.len())
            .map(|d| arrivals[d].iter().map(|c| c.size).sum())
            .collect();

        // Region speeds from start-of-interval accumulation.
        let mut travel_km = vec![0.0; net.regions.len()];
        for (d, region) in self.regions.iter_mut().enumerate() {
            let Some(state) = region else { continue };
            let v = state.compute_speed(&net.regions[d]);
            state.speed_kmh = v;
            travel_km[d] = v * dt_h;
            self.veh_km += state.moving() * travel_km[d];
        }

        // ACTM flows from start-of-interval state.
        let flows = self.actm.compute_flows(net, &mut self.audit);

        // Boundary demand collection.
        let mut exits = Vec::with_capacity(net.regions.len());
        for (d, region) in self.regions.iter_mut().enumerate() {
            exits.push(
                region
                    .as_mut()
                    .map(|state| state.collect_boundary(travel_km[d], paths)),
            );
        }

        // Global proportional allocation over all boundary interfaces.
        // Sender slots: one per bathtub region, then one per ACTM road.
        // Receiver slots in the same arrangement.
        let n_regions = net.regions.len();
        let n_local = self.actm.roads.len();
        let sender_slot = |e: AdjVertex, actm: &ActmSystem| -> usize {
            match e {
                AdjVertex::Region(d) => d,
                AdjVertex::Road(r) => n_regions + actm.local_of_road[r].unwrap(),
            }
        };
        let mut sender_caps = vec![0.0; n_regions + n_local];
        let mut receiver_supplies = vec![0.0; n_regions + n_local];
        for d in 0..n_regions {
            if let Some(state) = &self.regions[d] {
                let spec = &net.regions[d];
                sender_caps[d] = spec.c_margin_out(&net.roads);
                receiver_supplies[d] = bathtub::region_supply(
                    spec.n_hat_total,
                    state.accumulation,
                    region_starts_now[d],
                    spec.c_margin_in(&net.roads),
                    state.perimeter_rate,
                    state.controlled,
                );
            }
        }
        for local in 0..n_local {
            let road = self.actm.road(net, local);
            let state = &self.actm.roads[local];
            let fl = &flows.per_road[local];
            let (demand_cap, supply) =
                crate::actm::cell_demand_supply(road, state, fl.mu_eff, fl.nu);
            // The sender cap is the road capacity; the sink content net of
            // completions is already the sum of the raw per-slot offers.
            sender_caps[n_regions + local] = demand_cap.min(road.q_max);
            receiver_supplies[n_regions + local] = supply;
        }

        #[derive(Debug)]
        enum RequestMeta {
            RegionHop { region: usize, hop: NextHop },
            RoadSlot { local: usize, slot: usize },
        }
        let mut requests = Vec::new();
        let mut metas = Vec::new();
        for d in 0..n_regions {
            let (Some(state), Some(pending)) = (&self.regions[d], &exits[d]) else {
                continue;
            };
            for (hop, mass) in state.boundary_demand(pending, paths) {
                let receiver = match hop {
                    NextHop::Region(r) => sender_slot(AdjVertex::Region(r), &self.actm),
                    NextHop::Road(r) => sender_slot(AdjVertex::Road(r), &self.actm),
                    NextHop::Done => continue,
                };
                requests.push(TransferRequest {
                    sender: d,
                    receiver,
                    amount: mass,
                });
                metas.push(RequestMeta::RegionHop { region: d, hop });
            }
        }
        for local in 0..n_local {
            let state = &self.actm.roads[local];
            // A merged tail drains through the on-ramp flow, never through
            // the boundary allocation.
            if net.roads[state.road_idx].merge_into.is_some() {
                continue;
            }
            let sink = state.n_cells - 1;
            for (s, slot) in state.slots.iter().enumerate() {
                let amount = state.cell_slot(sink, s);
                if amount <= 0.0 {
                    continue;
                }
                let receiver = match slot.sink_target {
                    SinkTarget::Terminate => continue,
                    SinkTarget::Region(d) => d,
                    SinkTarget::Road(l2) => n_regions + l2,
                };
                requests.push(TransferRequest {
                    sender: n_regions + local,
                    receiver,
                    amount,
                });
                metas.push(RequestMeta::RoadSlot { local, slot: s });
            }
        }
        let granted = allocate_proportional(&requests, &sender_caps, &receiver_supplies);

        // Distribute grants.
        let mut region_budgets: Vec<BTreeMap<NextHop, f64>> =
            vec![BTreeMap::new(); n_regions];
        let mut granted_in: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_local];
        let mut granted_out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_local];
        for (meta, &g) in metas.iter().zip(&granted) {
            if g <= 0.0 {
                continue;
            }
            match meta {
                RequestMeta::RegionHop { region, hop } => {
                    region_budgets[*region].insert(*hop, g);
                }
                RequestMeta::RoadSlot { local, slot } => {
                    let state = &self.actm.roads[*local];
                    let info = &state.slots[*slot];
                    granted_out[*local].push((*slot, g));
                    let sender_entity = AdjVertex::Road(state.road_idx);
                    match info.sink_target {
                        SinkTarget::Region(d) => {
                            let path = &paths.paths[info.path];
                            let leg = info.leg_idx + 1;
                            let Leg::Urban { distance_km, .. } = &path.legs[leg] else {
                                panic!("region target without urban leg");
                            };
                            arrivals[d].push(NewCohort {
                                path: info.path,
                                leg,
                                size: g,
                                distance_km: *distance_km,
                            });
                            self.region_in_win[d] += g;
                            *self
                                .exchange_win
                                .entry((sender_entity, AdjVertex::Region(d)))
                                .or_insert(0.0) += g;
                        }
                        SinkTarget::Road(l2) => {
                            let target_slot = self.actm.roads[l2]
                                .slot_of_path(info.path)
                                .expect("path continues on target road");
                            granted_in[l2].push((target_slot, g));
                            let e2 = AdjVertex::Road(self.actm.roads[l2].road_idx);
                            *self
                                .exchange_win
                                .entry((sender_entity, e2))
                                .or_insert(0.0) += g;
                        }
                        SinkTarget::Terminate => unreachable!(),
                    }
                }
            }
        }

        // Region boundary resolution: completions and transfers out.
        let mut completed_this = 0.0;
        for d in 0..n_regions {
            let Some(state) = self.regions[d].as_mut() else {
                continue;
            };
            let pending = exits[d].take().unwrap();
            let budgets = std::mem::take(&mut region_budgets[d]);
            let (completed, transfers) = state.resolve_boundary(pending, &budgets, paths);
            completed_this += completed;
            self.region_ends_win[d] += completed;
            for tr in transfers {
                self.region_out_win[d] += tr.size;
                match tr.hop {
                    NextHop::Region(d2) => {
                        let path = &paths.paths[tr.path];
                        let leg = tr.leg + 1;
                        let Leg::Urban { distance_km, .. } = &path.legs[leg] else {
                            panic!("region hop without urban leg");
                        };
                        arrivals[d2].push(NewCohort {
                            path: tr.path,
                            leg,
                            size: tr.size,
                            distance_km: *distance_km,
                        });
                        self.region_in_win[d2] += tr.size;
                        *self
                            .exchange_win
                            .entry((AdjVertex::Region(d), AdjVertex::Region(d2)))
                            .or_insert(0.0) += tr.size;
                    }
                    NextHop::Road(r) => {
                        let local = self.actm.local_of_road[r].expect("ACTM hop");
                        let slot = self.actm.roads[local]
                            .slot_of_path(tr.path)
                            .expect("path enters road");
                        granted_in[local].push((slot, tr.size));
                        *self
                            .exchange_win
                            .entry((AdjVertex::Region(d), AdjVertex::Road(r)))
                            .or_insert(0.0) += tr.size;
                    }
                    NextHop::Done => unreachable!("completions handled separately"),
                }
            }
        }

        // ACTM conservation update.
        let road_completions =
            self.actm
                .advance(net, &flows, &granted_in, &granted_out, &mut self.audit);
        for (local, &c) in road_completions.iter().enumerate() {
            completed_this += c;
            self.road_nu_win[local] += flows.per_road[local].nu;
            self.road_mu_win[local] += flows.per_road[local].mu_eff;
            let delta = self.actm.road(net, local).delta_km;
            let fl = &flows.per_road[local];
            let moved_cells: f64 = fl.internal.iter().sum();
            self.veh_km += delta * moved_cells;
        }

        // Bathtub advection and insertions.
        for d in 0..n_regions {
            let Some(state) = self.regions[d].as_mut() else {
                continue;
            };
            state.finish_interval(travel_km[d], &arrivals[d]);
        }

        // Window accumulators for ramp agents.
        self.accumulate_ramp_windows(&flows);

        self.cum_completed += completed_this;
        self.completions_window += completed_this;
        let running = self.running();

        if self.options.audit {
            let gap = self.cum_injected - running - self.cum_completed;
            if gap.abs() > 1e-6 {
                self.audit
                    .violations
                    .push(format!("t={}: mass conservation gap {gap}", self.t));
            }
        }

        let window_end = (self.t + 1) % self.decision_steps == 0;
        let rates: Vec<f64> = (0..self.bundle.agents.len())
            .map(|i| self.rate_of(i))
            .collect();
        self.series.push(IntervalRecord {
            t: self.t as u32,
            injected_cum: self.cum_injected,
            running,
            completed: completed_this,
            reward: 0.0,
            rates,
        });

        if window_end && self.options.record_dynamics {
            self.record_dynamics_rows();
        }

        self.t += 1;
        StepOutcome {
            completed: completed_this,
            window_completions: window_end.then_some(self.completions_window),
        }
    }

    fn accumulate_ramp_windows(&mut self, flows: &StepFlows) {
        for (i, agent) in self.bundle.agents.iter().enumerate() {
            if let AgentKind::Ramp {
                main, merge_cell, ..
            } = &agent.kind
            {
                let fl = &flows.per_road[*main];
                let k = *merge_cell;
                let w = &mut self.ramp_win[i];
                w.f_up += fl.internal[k - 1];
                w.f_down += fl.internal[k];
                w.ramp_in += fl.ramp_in[k];
            }
        }
    }

    fn record_dynamics_rows(&mut self) {
        let net = &*self.bundle.net;
        let t = self.t as u32;
        for state in &self.actm.roads {
            let name = &net.roads[state.road_idx].name;
            for (cell, &n) in state.totals.iter().enumerate() {
                self.cell_density_rows.push(CellDensityRow {
                    t,
                    road: name.clone(),
                    cell,
                    vehicles: n,
                });
            }
        }
        for (d, region) in self.regions.iter().enumerate() {
            let Some(state) = region else { continue };
            self.region_curve_rows.push(RegionCurveRow {
                t,
                region: net.regions[d].name.clone(),
                accumulation: state.accumulation,
                speed_kmh: state.speed_kmh,
                inflow: self.region_in_win[d],
                outflow: self.region_out_win[d],
            });
        }
    }

    /// Observation vector for one agent, from instantaneous counts and the
    /// accumulators of the elapsed control window, scaled by jam quantities.
    pub fn observe(&self, agent: usize) -> Vec<f64> {
        let net = &*self.bundle.net;
        let window = self.decision_steps as f64;
        match &self.bundle.agents[agent].kind {
            AgentKind::Ramp {
                main,
                ramp,
                merge_cell,
            } => {
                let main_road = self.actm.road(net, *main);
                let ramp_state = &self.actm.roads[*ramp];
                let ramp_road = self.actm.road(net, *ramp);
                let k = *merge_cell;
                let ramp_sink = ramp_state.n_cells - 1;
                let cells = [
                    (*main, k - 1),
                    (*main, k),
                    (*main, k + 1),
                    (*ramp, ramp_sink),
                ];
                let mut obs = Vec::with_capacity(15);
                for (local, cell) in cells {
                    let state = &self.actm.roads[local];
                    let road = self.actm.road(net, local);
                    let starts = if cell == 0 { self.road_mu_win[local] } else { 0.0 };
                    let ends = if cell == state.n_cells - 1 {
                        self.road_nu_win[local]
                    } else {
                        0.0
                    };
                    obs.push(starts / (road.q_max * window));
                    obs.push(ends / (road.q_max * window));
                    obs.push(state.totals[cell] / road.n_hat_cell);
                }
                let w = &self.ramp_win[agent];
                obs.push(w.f_up / (main_road.q_max * window));
                obs.push(w.f_down / (main_road.q_max * window));
                obs.push(w.ramp_in / (ramp_road.q_max * window));
                obs
            }
            AgentKind::Perimeter { region, neighbors } => {
                let d = *region;
                let spec = &net.regions[d];
                let scale = spec.n_hat_total / 100.0;
                let mut obs = Vec::with_capacity(3 + 4 * neighbors.len());
                obs.push(self.region_starts_win[d] / scale);
                obs.push(self.region_ends_win[d] / scale);
                obs.push(self.region_accumulation(d) / spec.n_hat_total);
                for n in neighbors {
                    match n {
                        ObsNeighbor::Region { region: other, .. } => {
                            let ospec = &net.regions[*other];
                            let oscale = ospec.n_hat_total / 100.0;
                            obs.push(self.region_starts_win[*other] / oscale);
                            obs.push(self.region_ends_win[*other] / oscale);
                            obs.push(self.region_accumulation(*other) / ospec.n_hat_total);
                        }
                        ObsNeighbor::RoadInterface { local, source_side } => {
                            let state = &self.actm.roads[*local];
                            let road = self.actm.road(net, *local);
                            let cell = if *source_side { 0 } else { state.n_cells - 1 };
                            obs.push(self.road_mu_win[*local] / (road.q_max * window));
                            obs.push(self.road_nu_win[*local] / (road.q_max * window));
                            obs.push(state.totals[cell] / road.n_hat_cell);
                        }
                    }
                }
                for n in neighbors {
                    let (entity, capacity) = match n {
                        ObsNeighbor::Region {
                            region: other,
                            exchange_capacity,
                        } => (AdjVertex::Region(*other), *exchange_capacity),
                        ObsNeighbor::RoadInterface { local, .. } => {
                            let state = &self.actm.roads[*local];
                            let road = self.actm.road(net, *local);
                            (AdjVertex::Road(state.road_idx), road.q_max)
                        }
                    };
                    let me = AdjVertex::Region(d);
                    let inflow = self
                        .exchange_win
                        .get(&(entity, me))
                        .copied()
                        .unwrap_or(0.0);
                    let outflow = self
                        .exchange_win
                        .get(&(me, entity))
                        .copied()
                        .unwrap_or(0.0);
                    obs.push((inflow + outflow) / (capacity.max(1e-9) * window));
                }
                obs
            }
        }
    }

    /// Finishes the episode and computes summary metrics. The reward column
    /// of the series is filled by the runner.
    pub fn into_output(self) -> EpisodeOutput {
        let metrics = finalize_metrics(
            self.series,
            self.bundle.net.dt_seconds,
            self.freeflow_ttt_s,
            self.veh_km,
        );
        EpisodeOutput {
            metrics,
            cell_density_rows: self.cell_density_rows,
            region_curve_rows: self.region_curve_rows,
            audit_violations: self.audit.violations,
        }
    }

    pub fn set_series_reward(&mut self, interval_index: usize, reward: f64) {
        self.series[interval_index].reward = reward;
    }

    pub fn series_len(&self) -> usize {
        self.series.len()
    }
}

/// A control policy driving all agents of a simulation.
pub trait Policy {
    /// One action index per agent; called on each decision boundary before
    /// the interval executes.
    fn decide(&mut self, t: usize, sim: &Simulation, obs: &[Vec<f64>]) -> Vec<usize>;
    /// Reward feedback after each control window.
    fn window_feedback(&mut self, _window_start_t: usize, _reward: f64, _sim: &Simulation) {}
}

/// Keeps every rate at its initial value.
pub struct NoControl;

impl Policy for NoControl {
    fn decide(&mut self, _t: usize, sim: &Simulation, _obs: &[Vec<f64>]) -> Vec<usize> {
        vec![ACTION_HOLD; sim.agents().len()]
    }
}

/// Everything an episode leaves behind.
#[derive(Debug)]
pub struct EpisodeOutput {
    pub metrics: EpisodeMetrics,
    pub cell_density_rows: Vec<CellDensityRow>,
    pub region_curve_rows: Vec<RegionCurveRow>,
    pub audit_violations: Vec<String>,
}

/// Runs an episode to the demand horizon plus drain (or the hard cap at
/// twice the horizon), with rewards `window completions - c_r`.
pub fn run_episode(mut sim: Simulation, policy: &mut dyn Policy, c_r: f64) -> EpisodeOutput {
    let decision_steps = sim.decision_steps;
    loop {
        let t = sim.t();
        if t >= sim.max_steps {
            break;
        }
        let actions = if t % decision_steps == 0 {
            if t >= sim.horizon_steps && sim.running() < 1.0 {
                break;
            }
            let obs: Vec<Vec<f64>> = (0..sim.agents().len()).map(|i| sim.observe(i)).collect();
            Some(policy.decide(t, &sim, &obs))
        } else {
            None
        };
        let outcome = sim.step(actions.as_deref());
        if let Some(wc) = outcome.window_completions {
            let reward = wc - c_r;
            sim.set_series_reward(sim.series_len() - 1, reward);
            let window_start = sim.t() - decision_steps.min(sim.t());
            policy.window_feedback(window_start, reward, &sim);
        }
    }
    sim.into_output()
}
