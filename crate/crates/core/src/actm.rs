//! Per-interval freeway dynamics: demand/supply, mainline flows, on-/off-ramp
//! flows, and cell conservation. All flow computations read start-of-interval
//! state; the conservation update is a separate exclusive phase.
//!
//! Units: vehicle counts per cell, flows in veh per unit interval. With cell
//! length `delta = v_max * dt`, the free-flow term moves one cell per interval
//! (factor 1) and the congested term carries the ratio `w / v_max`.

use crate::net::{Network, Road, RoadIdx};
use crate::plan::{Leg, PathSet, RoadEntry, RoadExit};

/// Tolerance for clamping tiny negative masses left by f64 cancellation.
pub const MASS_EPS: f64 = 1e-9;

/// Where a road sink discharges vehicles of one path slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkTarget {
    /// Trip ends here; sink content of this slot counts into nu.
    Terminate,
    /// Next leg is an urban region.
    Region(usize),
    /// Next leg is another ACTM road (local index), entered at its source.
    Road(usize),
}

/// One path traversing one road.
#[derive(Debug, Clone)]
pub struct SlotInfo {
    pub path: usize,
    /// Index of this road's leg within the path.
    pub leg_idx: usize,
    pub entry_cell: usize,
    pub exit_cell: usize,
    pub exit_is_diverge: bool,
    pub sink_target: SinkTarget,
}

#[derive(Debug, Clone)]
pub struct ActmRoadState {
    pub road_idx: RoadIdx,
    pub n_cells: usize,
    pub slots: Vec<SlotInfo>,
    /// Destination composition, `comp[cell * slots + slot]` in vehicles.
    pub comp: Vec<f64>,
    /// Per-cell totals, kept in sync with `comp`.
    pub totals: Vec<f64>,
    /// Per-cell metering rate; only merge cells are ever controlled.
    pub meter: Vec<f64>,
    /// Vehicles that started on this road and wait outside the source cell.
    pub start_queue: Vec<f64>,
}

impl ActmRoadState {
    pub fn new(road_idx: RoadIdx, n_cells: usize, slots: Vec<SlotInfo>) -> Self {
        let n_slots = slots.len();
        ActmRoadState {
            road_idx,
            n_cells,
            slots,
            comp: vec![0.0; n_cells * n_slots],
            totals: vec![0.0; n_cells],
            meter: vec![1.0; n_cells],
            start_queue: vec![0.0; n_slots],
        }
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_of_path(&self, path: usize) -> Option<usize> {
        self.slots.iter().position(|s| s.path == path)
    }

    pub fn cell_slot(&self, cell: usize, slot: usize) -> f64 {
        self.comp[cell * self.n_slots() + slot]
    }

    pub fn queued(&self) -> f64 {
        self.start_queue.iter().sum()
    }

    /// Vehicles on the road including the external start queue.
    pub fn total_vehicles(&self) -> f64 {
        self.totals.iter().sum::<f64>() + self.queued()
    }

    /// Trips that finish on this road this interval: the terminating share of
    /// the sink cell at start of interval.
    pub fn nu(&self) -> f64 {
        let sink = self.n_cells - 1;
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.sink_target == SinkTarget::Terminate)
            .map(|(i, _)| self.cell_slot(sink, i))
            .sum()
    }

    /// Starts admitted into the source cell this interval, bounded by the
    /// free space so the cell bound is never violated by injection.
    pub fn mu_eff(&self, road: &Road) -> f64 {
        (road.n_hat_cell - self.totals[0])
            .min(self.queued())
            .max(0.0)
    }

    fn recompute_totals(&mut self) {
        let n_slots = self.n_slots();
        for k in 0..self.n_cells {
            let row = &self.comp[k * n_slots..(k + 1) * n_slots];
            self.totals[k] = row.iter().sum();
        }
    }
}

/// Demand and supply of a road at its boundaries, per the cell formulas:
/// demand from the sink cell net of completions, supply from the receiving
/// (source) cell net of injections, scaled by `w / v_max`.
pub fn cell_demand_supply(road: &Road, state: &ActmRoadState, mu_eff: f64, nu: f64) -> (f64, f64) {
    let sink = state.totals[state.n_cells - 1];
    let source = state.totals[0];
    let demand = (sink - nu).min(road.q_max).max(0.0);
    let supply = (road.w_over_v() * (road.n_hat_cell - source - mu_eff))
        .min(road.q_max)
        .max(0.0);
    (demand, supply)
}

#[derive(Debug, Clone, Copy)]
pub struct MergeLink {
    /// Local index of the on-ramp road.
    pub ramp: usize,
    /// Local index of the mainline road.
    pub main: usize,
    pub cell: usize,
    pub metered: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct DivergeLink {
    /// Local index of the off-ramp road.
    pub off: usize,
    /// Local index of the mainline road.
    pub main: usize,
    pub cell: usize,
}

/// Flows of one road for one interval.
#[derive(Debug, Clone, Default)]
pub struct RoadFlows {
    /// `internal[k]` is the flow from cell k to k+1; the sink entry stays 0.
    pub internal: Vec<f64>,
    /// On-ramp inflow per cell (nonzero only at merge cells).
    pub ramp_in: Vec<f64>,
    /// Off-ramp outflow per cell (nonzero only at diverge cells).
    pub ramp_out: Vec<f64>,
    pub mu_eff: f64,
    pub nu: f64,
}

/// All ACTM flows of one interval, including the composition draws that the
/// conservation update re-applies.
#[derive(Debug, Clone)]
pub struct StepFlows {
    pub per_road: Vec<RoadFlows>,
    /// Per merge link: slot-level draw from the ramp pool (ramp slot space).
    pub merge_draws: Vec<Vec<f64>>,
}

/// Records flow-constraint violations when enabled (test hook).
#[derive(Debug, Default)]
pub struct FlowAudit {
    pub enabled: bool,
    pub violations: Vec<String>,
}

impl FlowAudit {
    pub fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if self.enabled && !ok {
            self.violations.push(msg());
        }
    }
}

const AUDIT_TOL: f64 = 1e-9;

#[derive(Debug)]
pub struct ActmSystem {
    pub roads: Vec<ActmRoadState>,
    /// net road index -> local index
    pub local_of_road: Vec<Option<usize>>,
    pub merges: Vec<MergeLink>,
    /// Per merge: map from ramp slot to mainline slot.
    pub merge_slot_maps: Vec<Vec<Option<usize>>>,
    pub diverges: Vec<DivergeLink>,
    /// Per local road and slot: (off-ramp local idx, off-ramp slot) for
    /// diverging exits.
    pub diverge_targets: Vec<Vec<Option<(usize, usize)>>>,
}

impl ActmSystem {
    pub fn new(net: &Network, paths: &PathSet) -> Self {
        let mut local_of_road = vec![None; net.roads.len()];
        let mut roads = Vec::new();
        for (i, road) in net.roads.iter().enumerate() {
            if !road.kind.is_actm() {
                continue;
            }
            local_of_road[i] = Some(roads.len());
            roads.push((i, road));
        }

        // Slot tables from the planned paths.
        let mut slot_tables: Vec<Vec<SlotInfo>> = vec![Vec::new(); roads.len()];
        for (pid, path) in paths.paths.iter().enumerate() {
            for (li, leg) in path.legs.iter().enumerate() {
                let Leg::Actm { road, entry, exit } = leg else {
                    continue;
                };
                let local = local_of_road[*road].expect("path leg on non-ACTM road");
                let (_, r) = roads[local];
                let entry_cell = match entry {
                    RoadEntry::Source => 0,
                    RoadEntry::Merge(c) => *c,
                };
                let (exit_cell, exit_is_diverge) = match exit {
                    RoadExit::Sink => (r.n_cells - 1, false),
                    RoadExit::Diverge(c) => (*c, true),
                };
                let sink_target = if exit_is_diverge {
                    // Placeholder; diverging exits never reach the sink.
                    SinkTarget::Terminate
                } else {
                    match path.legs.get(li + 1) {
                        None => SinkTarget::Terminate,
                        Some(Leg::Urban { region, .. }) => SinkTarget::Region(*region),
                        Some(Leg::Actm { road: next, .. }) => {
                            SinkTarget::Road(local_of_road[*next].expect("next leg not ACTM"))
                        }
                    }
                };
                slot_tables[local].push(SlotInfo {
                    path: pid,
                    leg_idx: li,
                    entry_cell,
                    exit_cell,
                    exit_is_diverge,
                    sink_target,
                });
            }
        }

        let mut states: Vec<ActmRoadState> = roads
            .iter()
            .zip(slot_tables)
            .map(|(&(idx, road), slots)| ActmRoadState::new(idx, road.n_cells, slots))
            .collect();

        let mut merges = Vec::new();
        let mut diverges = Vec::new();
        for (local, &(idx, road)) in roads.iter().enumerate() {
            if let Some((main, cell)) = road.merge_into {
                let main_local = local_of_road[main].expect("merge into non-ACTM road");
                let metered = net
                    .ramp_agents
                    .iter()
                    .any(|a| a.on_ramp == idx);
                merges.push(MergeLink {
                    ramp: local,
                    main: main_local,
                    cell,
                    metered,
                });
            }
            if let Some((main, cell)) = road.diverge_from {
                let main_local = local_of_road[main].expect("diverge from non-ACTM road");
                diverges.push(DivergeLink {
                    off: local,
                    main: main_local,
                    cell,
                });
            }
        }

        let merge_slot_maps = merges
            .iter()
            .map(|m| {
                states[m.ramp]
                    .slots
                    .iter()
                    .map(|s| states[m.main].slot_of_path(s.path))
                    .collect()
            })
            .collect();

        let diverge_targets = states
            .iter()
            .map(|rs| {
                rs.slots
                    .iter()
                    .map(|s| {
                        if !s.exit_is_diverge {
                            return None;
                        }
                        let link = diverges
                            .iter()
                            .find(|d| {
                                d.main == local_of_road[rs.road_idx].unwrap()
                                    && d.cell == s.exit_cell
                            })
                            .expect("diverge exit without off-ramp link");
                        let off_slot = states[link.off]
                            .slot_of_path(s.path)
                            .expect("path missing on off-ramp");
                        Some((link.off, off_slot))
                    })
                    .collect()
            })
            .collect();

        // Rebuild because of the borrow in diverge_targets construction.
        for rs in &mut states {
            rs.recompute_totals();
        }

        ActmSystem {
            roads: states,
            local_of_road,
            merges,
            merge_slot_maps,
            diverges,
            diverge_targets,
        }
    }

    pub fn road<'a>(&self, net: &'a Network, local: usize) -> &'a Road {
        &net.roads[self.roads[local].road_idx]
    }

    fn diverge_at(&self, main_local: usize, cell: usize) -> Option<&DivergeLink> {
        self.diverges
            .iter()
            .find(|d| d.main == main_local && d.cell == cell)
    }

    /// Supply available at an off-ramp's first cell, used to bound the
    /// diverging share of the mainline flow.
    fn off_ramp_supply(&self, net: &Network, off_local: usize) -> f64 {
        let road = self.road(net, off_local);
        let state = &self.roads[off_local];
        (road.w_over_v() * (road.n_hat_cell - state.totals[0]))
            .min(road.q_max)
            .max(0.0)
    }

    /// Computes every flow for one interval from start-of-interval state.
    /// Order: pipe flows on ramp roads, merge inflows, mainline flows with
    /// blending, then off-ramp flows from the split ratio.
    pub fn compute_flows(&self, net: &Network, audit: &mut FlowAudit) -> StepFlows {
        let zeta = net.control.zeta;
        let gamma = net.control.gamma;
        let n_roads = self.roads.len();
        let mut per_road: Vec<RoadFlows> = (0..n_roads)
            .map(|i| {
                let rs = &self.roads[i];
                RoadFlows {
                    internal: vec![0.0; rs.n_cells],
                    ramp_in: vec![0.0; rs.n_cells],
                    ramp_out: vec![0.0; rs.n_cells],
                    mu_eff: rs.mu_eff(self.road(net, i)),
                    nu: rs.nu(),
                }
            })
            .collect();

        // Pipe flows: every non-mainline ACTM road moves vehicles without
        // blending or splitting.
        for (local, rs) in self.roads.iter().enumerate() {
            let road = self.road(net, local);
            if road.kind == crate::net::RoadKind::Mainline {
                continue;
            }
            let wv = road.w_over_v();
            for k in 0..rs.n_cells - 1 {
                let free = rs.totals[k];
                let supply = wv * (road.n_hat_cell - rs.totals[k + 1]);
                per_road[local].internal[k] = free.min(supply).min(road.q_max).max(0.0);
            }
        }

        // Merge inflows: queue availability includes the arrival into the
        // ramp sink this interval.
        let mut merge_draws = Vec::with_capacity(self.merges.len());
        for m in &self.merges {
            let ramp_state = &self.roads[m.ramp];
            let ramp_road = self.road(net, m.ramp);
            let main_state = &self.roads[m.main];
            let main_road = self.road(net, m.main);
            let n_slots = ramp_state.n_slots();
            let sink = ramp_state.n_cells - 1;

            let mut pool = vec![0.0; n_slots];
            for s in 0..n_slots {
                pool[s] = ramp_state.cell_slot(sink, s);
            }
            if ramp_state.n_cells >= 2 {
                let k = sink - 1;
                let inflow = per_road[m.ramp].internal[k];
                if inflow > 0.0 && ramp_state.totals[k] > 0.0 {
                    let frac = inflow / ramp_state.totals[k];
                    for s in 0..n_slots {
                        pool[s] += ramp_state.cell_slot(k, s) * frac;
                    }
                }
            }
            let pool_total: f64 = pool.iter().sum();

            let cap = ramp_road.q_max.min(main_road.q_max);
            let capacity = if m.metered {
                main_state.meter[m.cell] * cap
            } else {
                cap
            };
            let space = zeta * (main_road.n_hat_cell - main_state.totals[m.cell]);
            let r = pool_total.min(space).min(capacity).max(0.0);

            audit.check(r <= pool_total + AUDIT_TOL, || {
                format!("merge {}->{}: R exceeds queue availability", m.ramp, m.main)
            });
            audit.check(r <= space + AUDIT_TOL, || {
                format!("merge {}->{}: R exceeds mainline space", m.ramp, m.main)
            });
            audit.check(r <= capacity + AUDIT_TOL, || {
                format!("merge {}->{}: R exceeds capacity", m.ramp, m.main)
            });

            let mut draws = vec![0.0; n_slots];
            if r > 0.0 && pool_total > 0.0 {
                let frac = r / pool_total;
                for s in 0..n_slots {
                    draws[s] = pool[s] * frac;
                }
            }
            per_road[m.main].ramp_in[m.cell] = r;
            merge_draws.push(draws);
        }

        // Mainline flows with on-ramp blending and endogenous split ratios.
        for (local, rs) in self.roads.iter().enumerate() {
            let road = self.road(net, local);
            if road.kind != crate::net::RoadKind::Mainline {
                continue;
            }
            let wv = road.w_over_v();
            let k_cells = rs.n_cells;
            let ramp_in = per_road[local].ramp_in.clone();
            for k in 0..k_cells - 1 {
                let pool_k = rs.totals[k] + gamma * ramp_in[k];
                let pool_next = rs.totals[k + 1] + gamma * ramp_in[k + 1];
                // Exit mass of the diverge cell: vehicles whose path leaves
                // here. Merge arrivals never exit at their entry cell.
                let exit_mass: f64 = rs
                    .slots
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.exit_is_diverge && s.exit_cell == k)
                    .map(|(s, _)| rs.cell_slot(k, s))
                    .sum();
                let through = pool_k - exit_mass;
                let supply = wv * (road.n_hat_cell - pool_next);

                let (f, s_out) = if exit_mass <= MASS_EPS {
                    (through.min(supply).min(road.q_max).max(0.0), 0.0)
                } else {
                    let link = self
                        .diverge_at(local, k)
                        .expect("exit mass at cell without diverge link");
                    let off_supply = self.off_ramp_supply(net, link.off);
                    let off_cap = self.road(net, link.off).q_max;
                    if through <= MASS_EPS {
                        // Everybody in the cell leaves through the off-ramp.
                        let s_out = exit_mass.min(off_supply).min(off_cap).max(0.0);
                        (0.0, s_out)
                    } else {
                        let beta = exit_mass / pool_k;
                        let guard = through / exit_mass * off_supply;
                        let f = through
                            .min(supply)
                            .min(road.q_max)
                            .min(guard)
                            .max(0.0);
                        (f, beta / (1.0 - beta) * f)
                    }
                };

                audit.check(f + s_out <= pool_k + AUDIT_TOL, || {
                    format!("road {} cell {k}: f+S exceeds v*(n+gamma*R)", road.name)
                });
                audit.check(f <= wv * (road.n_hat_cell - pool_next) + AUDIT_TOL, || {
                    format!("road {} cell {k}: f exceeds downstream supply", road.name)
                });
                audit.check(f <= road.q_max + AUDIT_TOL, || {
                    format!("road {} cell {k}: f exceeds q_max", road.name)
                });

                per_road[local].internal[k] = f;
                per_road[local].ramp_out[k] = s_out;
            }
        }

        StepFlows {
            per_road,
            merge_draws,
        }
    }

    /// Conservation update: applies one interval of flows plus boundary
    /// exchanges. `granted_in[local]` are (slot, veh) additions to source
    /// cells; `granted_out[local]` are (slot, veh) removals from sink cells.
    /// Returns per-road completions.
    pub fn advance(
        &mut self,
        net: &Network,
        flows: &StepFlows,
        granted_in: &[Vec<(usize, f64)>],
        granted_out: &[Vec<(usize, f64)>],
        audit: &mut FlowAudit,
    ) -> Vec<f64> {
        let gamma = net.control.gamma;
        let n_roads = self.roads.len();

        // Slot-level deltas per road, assembled from immutable state.
        let mut deltas: Vec<Vec<f64>> = self
            .roads
            .iter()
            .map(|rs| vec![0.0; rs.comp.len()])
            .collect();
        let mut queue_draw: Vec<Vec<f64>> = self
            .roads
            .iter()
            .map(|rs| vec![0.0; rs.n_slots()])
            .collect();
        let mut completions = vec![0.0; n_roads];

        // Ramp arrivals into merge cells (and removals from ramp sinks).
        for (mi, m) in self.merges.iter().enumerate() {
            let draws = &flows.merge_draws[mi];
            let ramp_sink = self.roads[m.ramp].n_cells - 1;
            let n_ramp_slots = self.roads[m.ramp].n_slots();
            let n_main_slots = self.roads[m.main].n_slots();
            for s in 0..n_ramp_slots {
                if draws[s] == 0.0 {
                    continue;
                }
                deltas[m.ramp][ramp_sink * n_ramp_slots + s] -= draws[s];
                let main_slot = self.merge_slot_maps[mi][s]
                    .expect("merging path missing on mainline");
                deltas[m.main][m.cell * n_main_slots + main_slot] += draws[s];
            }
        }

        for local in 0..n_roads {
            let rs = &self.roads[local];
            let fl = &flows.per_road[local];
            let n_slots = rs.n_slots();
            let sink = rs.n_cells - 1;

            // Start injections, drawn proportionally from the queue.
            if fl.mu_eff > 0.0 {
                let queued = rs.queued();
                let frac = fl.mu_eff / queued;
                for s in 0..n_slots {
                    let moved = rs.start_queue[s] * frac;
                    queue_draw[local][s] = moved;
                    deltas[local][s] += moved;
                }
            }

            // Internal movements. The through flow f draws proportionally
            // from the non-exiting mass (including the blended share of this
            // interval's ramp arrival); the off-ramp flow S draws from the
            // mass whose path exits at this cell.
            for k in 0..rs.n_cells - 1 {
                let f = fl.internal[k];
                let s_out = fl.ramp_out[k];
                if f <= 0.0 && s_out <= 0.0 {
                    continue;
                }
                let ramp_draws: Option<(&[f64], &[Option<usize>])> = self
                    .merges
                    .iter()
                    .enumerate()
                    .find(|(_, m)| m.main == local && m.cell == k)
                    .map(|(mi, _)| {
                        (
                            flows.merge_draws[mi].as_slice(),
                            self.merge_slot_maps[mi].as_slice(),
                        )
                    });
                let mut pool = vec![0.0; n_slots];
                for s in 0..n_slots {
                    pool[s] = rs.cell_slot(k, s);
                }
                if let Some((draws, map)) = ramp_draws {
                    for (rs_slot, d) in draws.iter().enumerate() {
                        if *d > 0.0 {
                            pool[map[rs_slot].unwrap()] += gamma * d;
                        }
                    }
                }
                let exits_here =
                    |s: usize| rs.slots[s].exit_is_diverge && rs.slots[s].exit_cell == k;
                if f > 0.0 {
                    let through_total: f64 = (0..n_slots)
                        .filter(|&s| !exits_here(s))
                        .map(|s| pool[s])
                        .sum();
                    if through_total > 0.0 {
                        let frac = (f / through_total).min(1.0);
                        for s in 0..n_slots {
                            if exits_here(s) {
                                continue;
                            }
                            let moved = pool[s] * frac;
                            if moved > 0.0 {
                                deltas[local][k * n_slots + s] -= moved;
                                deltas[local][(k + 1) * n_slots + s] += moved;
                            }
                        }
                    }
                }
                if s_out > 0.0 {
                    let exit_total: f64 = (0..n_slots)
                        .filter(|&s| exits_here(s))
                        .map(|s| pool[s])
                        .sum();
                    if exit_total > 0.0 {
                        let frac = (s_out / exit_total).min(1.0);
                        for s in 0..n_slots {
                            if !exits_here(s) {
                                continue;
                            }
                            let moved = pool[s] * frac;
                            if moved > 0.0 {
                                let (off_local, off_slot) = self.diverge_targets[local][s]
                                    .expect("diverging slot without target");
                                deltas[local][k * n_slots + s] -= moved;
                                deltas[off_local][off_slot] += moved;
                            }
                        }
                    }
                }
            }

            // Sink: completions and boundary outflows.
            for (s, slot) in rs.slots.iter().enumerate() {
                if slot.sink_target == SinkTarget::Terminate {
                    let amount = rs.cell_slot(sink, s);
                    if amount > 0.0 {
                        deltas[local][sink * n_slots + s] -= amount;
                        completions[local] += amount;
                    }
                }
            }
            for &(s, amount) in &granted_out[local] {
                deltas[local][sink * n_slots + s] -= amount;
            }
            // Source: boundary inflows.
            for &(s, amount) in &granted_in[local] {
                deltas[local][s] += amount;
            }
        }

        // Apply deltas and refresh totals.
        for local in 0..n_roads {
            let rs = &mut self.roads[local];
            for s in 0..rs.n_slots() {
                rs.start_queue[s] -= queue_draw[local][s];
                if rs.start_queue[s] < 0.0 {
                    debug_assert!(rs.start_queue[s] > -MASS_EPS);
                    rs.start_queue[s] = 0.0;
                }
            }
            for (c, d) in rs.comp.iter_mut().zip(&deltas[local]) {
                *c += d;
                if *c < 0.0 {
                    if *c < -MASS_EPS && audit.enabled {
                        audit
                            .violations
                            .push(format!("road {local}: negative mass {c}"));
                    }
                    *c = 0.0;
                }
            }
            rs.recompute_totals();
        }

        // Cell bound audit.
        if audit.enabled {
            for (local, rs) in self.roads.iter().enumerate() {
                let road = self.road(net, local);
                for (k, &n) in rs.totals.iter().enumerate() {
                    audit.check(n <= road.n_hat_cell + AUDIT_TOL, || {
                        format!("road {} cell {k}: count {n} above jam {}", road.name, road.n_hat_cell)
                    });
                }
            }
        }

        completions
    }

    /// Total vehicles across all ACTM roads including start queues.
    pub fn total_vehicles(&self) -> f64 {
        self.roads.iter().map(|r| r.total_vehicles()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ControlParams, MfdParams, RegionSpec, RoadKind};
    use crate::plan::{Leg, Path, PathSet, RoadEntry, RoadExit};
    use proptest::prelude::*;

    fn test_road(
        name: &str,
        kind: RoadKind,
        n_cells: usize,
        v: f64,
        w: f64,
        q_per_interval: f64,
        n_hat_cell: f64,
    ) -> Road {
        let delta_km = v / 3600.0;
        Road {
            name: name.into(),
            head: 0,
            tail: 1,
            length_km: delta_km * n_cells as f64,
            v_max_kmh: v,
            w_kmh: w,
            lanes: 1,
            kind,
            q_max: q_per_interval,
            n_hat_cell,
            n_hat_total: n_hat_cell * n_cells as f64,
            delta_km,
            n_cells,
            merge_into: None,
            diverge_from: None,
        }
    }

    fn net_of(roads: Vec<Road>, metered_ramps: Vec<usize>) -> Network {
        let n_nodes = 2 * roads.len();
        let ramp_agents = metered_ramps
            .iter()
            .map(|&r| {
                let (mainline, merge_cell) = roads[r].merge_into.unwrap();
                crate::net::RampAgentSpec {
                    name: format!("meter_{r}"),
                    on_ramp: r,
                    mainline,
                    merge_cell,
                }
            })
            .collect();
        Network {
            dt_seconds: 1.0,
            node_names: (0..n_nodes).map(|i| format!("n{i}")).collect(),
            roads,
            regions: vec![RegionSpec {
                name: "F".into(),
                nodes: (0..n_nodes).collect(),
                l_sum_km: 0.0,
                l_max_km: 0.0,
                n_hat_total: 0.0,
                mfd: MfdParams::Underwood {
                    v_free_kmh: 90.0,
                    critical_accumulation_veh: 100.0,
                },
                internal_roads: vec![],
                out_boundary: vec![],
                in_boundary: vec![],
            }],
            freeway_region: 0,
            node_region: vec![0; n_nodes],
            control: ControlParams::default(),
            ramp_agents,
            perimeter_agents: vec![],
        }
    }

    /// One path running the full length of road 0.
    fn through_paths(n_roads: usize) -> PathSet {
        let _ = n_roads;
        PathSet {
            paths: vec![Path {
                origin: 0,
                destination: 0,
                legs: vec![Leg::Actm {
                    road: 0,
                    entry: RoadEntry::Source,
                    exit: RoadExit::Sink,
                }],
                freeflow_s: 0.0,
            }],
            od_to_path: vec![Some(0)],
        }
    }

    fn audit() -> FlowAudit {
        FlowAudit {
            enabled: true,
            violations: Vec::new(),
        }
    }

    #[test]
    fn demand_supply_spec_values() {
        // Single-cell road so the source and sink cell coincide.
        let road = test_road("r", RoadKind::Mainline, 1, 90.0, 30.0, 40.0, 50.0);
        let net = net_of(vec![road], vec![]);
        let mut sys = ActmSystem::new(&net, &through_paths(1));
        // Empty cell: demand zero.
        let (d, _) = cell_demand_supply(&net.roads[0], &sys.roads[0], 0.0, 0.0);
        assert_eq!(d, 0.0);
        // 20 vehicles: D = 20, S = (30/90) * (50 - 20) = 10.
        sys.roads[0].comp[0] = 20.0;
        sys.roads[0].totals[0] = 20.0;
        let (d, s) = cell_demand_supply(&net.roads[0], &sys.roads[0], 0.0, 0.0);
        assert_eq!(d, 20.0);
        assert!((s - 10.0).abs() < 1e-12);
        // Above capacity: demand clamps to q_max.
        sys.roads[0].comp[0] = 45.0;
        sys.roads[0].totals[0] = 45.0;
        let (d, _) = cell_demand_supply(&net.roads[0], &sys.roads[0], 0.0, 0.0);
        assert_eq!(d, 40.0);
    }

    #[test]
    fn mainline_flow_spec_values() {
        let road = test_road("m", RoadKind::Mainline, 3, 90.0, 30.0, 30.0, 50.0);
        let net = net_of(vec![road], vec![]);
        let mut sys = ActmSystem::new(&net, &through_paths(1));
        let mut a = audit();

        // Empty cell: no flow.
        let flows = sys.compute_flows(&net, &mut a);
        assert_eq!(flows.per_road[0].internal, vec![0.0, 0.0, 0.0]);

        // 10 vehicles, empty downstream: free-flow term binds at 10.
        sys.roads[0].comp[0] = 10.0;
        sys.roads[0].totals[0] = 10.0;
        let flows = sys.compute_flows(&net, &mut a);
        assert_eq!(flows.per_road[0].internal[0], 10.0);

        // Jammed downstream: supply term zero.
        sys.roads[0].comp[1] = 50.0;
        sys.roads[0].totals[1] = 50.0;
        let flows = sys.compute_flows(&net, &mut a);
        assert_eq!(flows.per_road[0].internal[0], 0.0);
        assert!(a.violations.is_empty(), "{:?}", a.violations);
    }

    fn merge_fixture(metered: bool) -> (Network, ActmSystem) {
        let mut main = test_road("m", RoadKind::Mainline, 4, 90.0, 30.0, 30.0, 50.0);
        main.head = 0;
        main.tail = 1;
        let mut ramp = test_road("r", RoadKind::OnRamp, 2, 54.0, 18.0, 20.0, 10.0);
        ramp.head = 2;
        ramp.tail = 3;
        ramp.merge_into = Some((0, 1));
        let net = net_of(vec![main, ramp], if metered { vec![1] } else { vec![] });
        let paths = PathSet {
            paths: vec![Path {
                origin: 0,
                destination: 0,
                legs: vec![
                    Leg::Actm {
                        road: 1,
                        entry: RoadEntry::Source,
                        exit: RoadExit::Sink,
                    },
                    Leg::Actm {
                        road: 0,
                        entry: RoadEntry::Merge(1),
                        exit: RoadExit::Sink,
                    },
                ],
                freeflow_s: 0.0,
            }],
            od_to_path: vec![Some(0)],
        };
        let sys = ActmSystem::new(&net, &paths);
        (net, sys)
    }

    #[test]
    fn ramp_flow_spec_values() {
        let (net, mut sys) = merge_fixture(true);
        let mut a = audit();

        // Empty ramp queue: R = 0.
        let flows = sys.compute_flows(&net, &mut a);
        assert_eq!(flows.per_road[0].ramp_in[1], 0.0);

        // Ample queue and space, metered at 0.5: R = 0.5 * min(20, 30) = 10.
        let sink = (sys.roads[1].n_cells - 1) * sys.roads[1].n_slots();
        sys.roads[1].comp[sink] = 15.0;
        sys.roads[1].recompute_totals();
        sys.roads[0].meter[1] = 0.5;
        let flows = sys.compute_flows(&net, &mut a);
        assert!((flows.per_road[0].ramp_in[1] - 10.0).abs() < 1e-12);

        // Mainline merge cell at jam: R = 0.
        let merge_idx = sys.roads[0].n_slots();
        sys.roads[0].comp[merge_idx] = 50.0;
        sys.roads[0].recompute_totals();
        let flows = sys.compute_flows(&net, &mut a);
        assert_eq!(flows.per_road[0].ramp_in[1], 0.0);
        assert!(a.violations.is_empty(), "{:?}", a.violations);
    }

    #[test]
    fn metered_rate_one_equals_unmetered_bitwise() {
        let (net_m, mut sys_m) = merge_fixture(true);
        let (net_u, mut sys_u) = merge_fixture(false);
        for sys in [&mut sys_m, &mut sys_u] {
            let sink = (sys.roads[1].n_cells - 1) * sys.roads[1].n_slots();
            let merge_idx = sys.roads[0].n_slots();
            sys.roads[1].comp[sink] = 7.25;
            sys.roads[1].comp[sink - 1] = 3.5;
            sys.roads[0].comp[merge_idx] = 12.125;
            sys.roads[0].recompute_totals();
            sys.roads[1].recompute_totals();
        }
        assert!(sys_m.merges[0].metered);
        assert!(!sys_u.merges[0].metered);
        let fm = sys_m.compute_flows(&net_m, &mut FlowAudit::default());
        let fu = sys_u.compute_flows(&net_u, &mut FlowAudit::default());
        for (a, b) in fm.per_road.iter().zip(&fu.per_road) {
            for (x, y) in a.internal.iter().zip(&b.internal) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.ramp_in.iter().zip(&b.ramp_in) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn advance_spec_values() {
        let road = test_road("m", RoadKind::Mainline, 3, 90.0, 30.0, 30.0, 50.0);
        let net = net_of(vec![road], vec![]);
        let mut sys = ActmSystem::new(&net, &through_paths(1));
        let mut a = audit();

        // No flows, no injections: state unchanged.
        let flows = sys.compute_flows(&net, &mut a);
        sys.advance(&net, &flows, &[vec![]], &[vec![]], &mut a);
        assert_eq!(sys.roads[0].totals, vec![0.0, 0.0, 0.0]);

        // Inject 5 into the empty source cell.
        sys.roads[0].start_queue[0] = 5.0;
        let flows = sys.compute_flows(&net, &mut a);
        assert_eq!(flows.per_road[0].mu_eff, 5.0);
        sys.advance(&net, &flows, &[vec![]], &[vec![]], &mut a);
        assert_eq!(sys.roads[0].totals[0], 5.0);
        assert_eq!(sys.roads[0].queued(), 0.0);
        assert!(a.violations.is_empty(), "{:?}", a.violations);
    }

    #[test]
    fn conservation_over_many_intervals() {
        // Path terminates at the sink, so completions close the ledger.
        let road = test_road("m", RoadKind::Mainline, 3, 90.0, 30.0, 2.0, 12.0);
        let net = net_of(vec![road], vec![]);
        let mut sys = ActmSystem::new(&net, &through_paths(1));
        let mut audit = audit();
        let mut injected = 0.0;
        let mut completed = 0.0;
        for t in 0..200 {
            if t < 120 {
                let inflow = 0.9 + 0.3 * ((t % 7) as f64 / 7.0);
                sys.roads[0].start_queue[0] += inflow;
                injected += inflow;
            }
            let flows = sys.compute_flows(&net, &mut audit);
            let done = sys.advance(&net, &flows, &[vec![]], &[vec![]], &mut audit);
            completed += done[0];
            let on_road = sys.total_vehicles();
            assert!(
                (injected - on_road - completed).abs() < 1e-9,
                "t={t} gap={}",
                injected - on_road - completed
            );
        }
        assert!(completed > 0.0);
        assert!(audit.violations.is_empty(), "{:?}", audit.violations);
    }

    proptest! {
        #[test]
        fn flows_bounded_and_non_negative(
            cells in proptest::collection::vec(0.0f64..12.0, 4),
            queue in 0.0f64..5.0,
        ) {
            let road = test_road("m", RoadKind::Mainline, 4, 90.0, 30.0, 2.0, 12.0);
            let net = net_of(vec![road], vec![]);
            let mut sys = ActmSystem::new(&net, &through_paths(1));
            for (k, v) in cells.iter().enumerate() {
                sys.roads[0].comp[k] = *v;
            }
            sys.roads[0].recompute_totals();
            sys.roads[0].start_queue[0] = queue;
            let mut a = FlowAudit { enabled: true, violations: vec![] };
            let flows = sys.compute_flows(&net, &mut a);
            for f in &flows.per_road[0].internal {
                prop_assert!(*f >= 0.0);
                prop_assert!(*f <= 2.0 + 1e-12);
            }
            prop_assert!(a.violations.is_empty());
            // One conservation step from an arbitrary state.
            let before = sys.total_vehicles();
            let mu = flows.per_road[0].mu_eff;
            let nu = flows.per_road[0].nu;
            let done = sys.advance(&net, &flows, &[vec![]], &[vec![]], &mut a);
            let after = sys.total_vehicles();
            prop_assert!((done[0] - nu).abs() < 1e-12);
            let _ = mu;
            prop_assert!((before - after - done[0]).abs() < 1e-9);
        }
    }
}
