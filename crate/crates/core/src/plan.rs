//! Trip path planning over the abstract region/road graph. Vehicles travel
//! urban legs (region + remaining distance) and ACTM legs (road with an
//! entry/exit locus); the planner picks the shortest-distance sequence using
//! mean leg distances for regions and physical lengths for roads.

use std::collections::HashMap;

use petgraph::algo::astar;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::Rng;
use thiserror::Error;

use crate::demand::sample_leg_distance;
use crate::net::{AdjEdgeKind, AdjVertex, Network, RegionAdjacency, RegionIdx, RoadIdx};
use crate::rng::{seeded_rng, Stream};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no route from region '{from}' to region '{to}'")]
    Unreachable { from: String, to: String },
    #[error("path for od '{from}' -> '{to}' revisits '{entity}'")]
    Revisit {
        from: String,
        to: String,
        entity: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoadEntry {
    Source,
    /// Entered through an on-ramp merging at this general cell.
    Merge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoadExit {
    Sink,
    /// Left through the off-ramp diverging at this general cell.
    Diverge(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Leg {
    Urban {
        region: RegionIdx,
        distance_km: f64,
    },
    Actm {
        road: RoadIdx,
        entry: RoadEntry,
        exit: RoadExit,
    },
}

#[derive(Debug, Clone)]
pub struct Path {
    pub origin: RegionIdx,
    pub destination: RegionIdx,
    pub legs: Vec<Leg>,
    /// Free-flow traversal time in seconds, for the delay metric.
    pub freeflow_s: f64,
}

impl Path {
    /// Position of the leg a vehicle occupies when on the given road.
    pub fn leg_on_road(&self, road: RoadIdx) -> Option<usize> {
        self.legs
            .iter()
            .position(|l| matches!(l, Leg::Actm { road: r, .. } if *r == road))
    }
}

/// All planned paths for a scenario, one per OD pair with positive weight.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub paths: Vec<Path>,
    /// Index into `paths` per OD table entry; `None` for zero-weight pairs.
    pub od_to_path: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Vertex {
    Region(RegionIdx),
    /// About to enter the source cell of a road.
    In(RoadIdx),
    /// Just left the sink cell of a road.
    Out(RoadIdx),
    /// In the given mainline cell, having arrived via an on-ramp.
    MergeAt(RoadIdx, usize),
    /// At the given mainline cell, where an off-ramp diverges.
    DivergeAt(RoadIdx, usize),
}

impl Vertex {
    fn road(self) -> Option<RoadIdx> {
        match self {
            Vertex::In(r) | Vertex::Out(r) | Vertex::MergeAt(r, _) | Vertex::DivergeAt(r, _) => {
                Some(r)
            }
            Vertex::Region(_) => None,
        }
    }
}

pub struct Planner<'a> {
    net: &'a Network,
    graph: DiGraph<Vertex, f64>,
    index: HashMap<Vertex, NodeIndex>,
}

impl<'a> Planner<'a> {
    pub fn new(net: &'a Network, adjacency: &RegionAdjacency) -> Self {
        let mut graph = DiGraph::new();
        let mut index: HashMap<Vertex, NodeIndex> = HashMap::new();
        let mut node = |graph: &mut DiGraph<Vertex, f64>, v: Vertex| -> NodeIndex {
            *index.entry(v).or_insert_with(|| graph.add_node(v))
        };

        // Per-road locus chains: source, merge/diverge cells, sink.
        for (i, road) in net.roads.iter().enumerate() {
            if !road.kind.is_actm() {
                continue;
            }
            let mut loci: Vec<(usize, Vertex)> = vec![(0, Vertex::In(i))];
            for other in &net.roads {
                if let Some((main, cell)) = other.merge_into {
                    if main == i {
                        loci.push((cell, Vertex::MergeAt(i, cell)));
                    }
                }
                if let Some((main, cell)) = other.diverge_from {
                    if main == i {
                        loci.push((cell, Vertex::DivergeAt(i, cell)));
                    }
                }
            }
            loci.push((road.n_cells - 1, Vertex::Out(i)));
            loci.sort_by_key(|&(cell, _)| cell);
            for pair in loci.windows(2) {
                let (c0, v0) = pair[0];
                let (c1, v1) = pair[1];
                let a = node(&mut graph, v0);
                let b = node(&mut graph, v1);
                graph.add_edge(a, b, (c1 - c0) as f64 * road.delta_km);
            }
        }

        // Cross edges from the region adjacency. Region traversal cost sits
        // on the region's outgoing edges; the destination leg is a constant
        // per OD and does not affect the argmin.
        for &(from, to, kind) in &adjacency.edges {
            match (from, to, kind) {
                (AdjVertex::Region(a), AdjVertex::Region(b), AdjEdgeKind::UrbanBoundary(_)) => {
                    let u = node(&mut graph, Vertex::Region(a));
                    let v = node(&mut graph, Vertex::Region(b));
                    graph.add_edge(u, v, net.regions[a].mean_leg_km());
                }
                (AdjVertex::Region(d), AdjVertex::Road(r), AdjEdgeKind::RegionToRoad) => {
                    let u = node(&mut graph, Vertex::Region(d));
                    let v = node(&mut graph, Vertex::In(r));
                    graph.add_edge(u, v, net.regions[d].mean_leg_km());
                }
                (AdjVertex::Road(r), AdjVertex::Region(d), AdjEdgeKind::RoadToRegion) => {
                    let u = node(&mut graph, Vertex::Out(r));
                    let v = node(&mut graph, Vertex::Region(d));
                    graph.add_edge(u, v, 0.0);
                }
                (AdjVertex::Road(ramp), AdjVertex::Road(main), AdjEdgeKind::Merge(cell)) => {
                    let u = node(&mut graph, Vertex::Out(ramp));
                    let v = node(&mut graph, Vertex::MergeAt(main, cell));
                    graph.add_edge(u, v, 0.0);
                }
                (AdjVertex::Road(main), AdjVertex::Road(off), AdjEdgeKind::Diverge(cell)) => {
                    let u = node(&mut graph, Vertex::DivergeAt(main, cell));
                    let v = node(&mut graph, Vertex::In(off));
                    graph.add_edge(u, v, 0.0);
                }
                (AdjVertex::Road(a), AdjVertex::Road(b), AdjEdgeKind::RoadToRoad) => {
                    let u = node(&mut graph, Vertex::Out(a));
                    let v = node(&mut graph, Vertex::In(b));
                    graph.add_edge(u, v, 0.0);
                }
                _ => {}
            }
        }

        Planner { net, graph, index }
    }

    /// Plans the shortest-distance path for one OD pair. Urban leg distances
    /// are sampled here and frozen into the path. Trips from or to the ACTM
    /// region start at a road source cell / end at a road sink cell.
    pub fn plan_trip<R: Rng>(
        &self,
        origin: RegionIdx,
        destination: RegionIdx,
        rng: &mut R,
    ) -> Result<Path, PlanError> {
        let net = self.net;
        let err = || PlanError::Unreachable {
            from: net.regions[origin].name.clone(),
            to: net.regions[destination].name.clone(),
        };
        let freeway = net.freeway_region;
        if origin == destination && origin != freeway {
            return self.assemble(origin, destination, &[Vertex::Region(origin)], rng);
        }

        let starts: Vec<NodeIndex> = if origin == freeway {
            self.index
                .iter()
                .filter(|(v, _)| matches!(v, Vertex::In(_)))
                .map(|(_, &n)| n)
                .collect()
        } else {
            self.index
                .get(&Vertex::Region(origin))
                .map(|&n| vec![n])
                .unwrap_or_default()
        };
        let is_goal = |v: Vertex| -> bool {
            if destination == freeway {
                matches!(v, Vertex::Out(_))
            } else {
                v == Vertex::Region(destination)
            }
        };

        let mut best: Option<(f64, Vec<NodeIndex>)> = None;
        for &start in &starts {
            if let Some((cost, nodes)) = astar(
                &self.graph,
                start,
                |n| is_goal(self.graph[n]),
                |e| *e.weight(),
                |_| 0.0,
            ) {
                if best.as_ref().map_or(true, |(c, _)| cost < *c) {
                    best = Some((cost, nodes));
                }
            }
        }
        let (_, nodes) = best.ok_or_else(err)?;
        let vertices: Vec<Vertex> = nodes.iter().map(|&n| self.graph[n]).collect();
        self.assemble(origin, destination, &vertices, rng)
    }

    fn assemble<R: Rng>(
        &self,
        origin: RegionIdx,
        destination: RegionIdx,
        vertices: &[Vertex],
        rng: &mut R,
    ) -> Result<Path, PlanError> {
        let net = self.net;
        let mut legs = Vec::new();
        let mut i = 0;
        while i < vertices.len() {
            match vertices[i] {
                Vertex::Region(d) => {
                    let spec = &net.regions[d];
                    legs.push(Leg::Urban {
                        region: d,
                        distance_km: sample_leg_distance(
                            spec.l_sum_km / crate::net::REGION_LEG_FACTOR,
                            spec.l_max_km,
                            rng,
                        ),
                    });
                    i += 1;
                }
                first @ (Vertex::In(_) | Vertex::MergeAt(_, _)) => {
                    let r = first.road().unwrap();
                    let entry = match first {
                        Vertex::MergeAt(_, cell) => RoadEntry::Merge(cell),
                        _ => RoadEntry::Source,
                    };
                    let mut exit = RoadExit::Sink;
                    while i < vertices.len() {
                        match vertices[i] {
                            Vertex::Out(rr) if rr == r => {
                                i += 1;
                                break;
                            }
                            Vertex::DivergeAt(rr, cell) if rr == r => {
                                // Exit here only when leaving the road's
                                // locus chain; otherwise pass through.
                                let leaves = vertices
                                    .get(i + 1)
                                    .map_or(true, |next| next.road() != Some(r));
                                i += 1;
                                if leaves {
                                    exit = RoadExit::Diverge(cell);
                                    break;
                                }
                            }
                            v if v.road() == Some(r) => i += 1,
                            _ => break,
                        }
                    }
                    legs.push(Leg::Actm { road: r, entry, exit });
                }
                Vertex::Out(_) | Vertex::DivergeAt(_, _) => i += 1,
            }
        }

        // Engine bookkeeping assumes a path occupies each entity at most once.
        let mut seen = std::collections::HashSet::new();
        for leg in &legs {
            let key = match leg {
                Leg::Urban { region, .. } => (0usize, *region),
                Leg::Actm { road, .. } => (1usize, *road),
            };
            if !seen.insert(key) {
                let entity = match leg {
                    Leg::Urban { region, .. } => net.regions[*region].name.clone(),
                    Leg::Actm { road, .. } => net.roads[*road].name.clone(),
                };
                return Err(PlanError::Revisit {
                    from: net.regions[origin].name.clone(),
                    to: net.regions[destination].name.clone(),
                    entity,
                });
            }
        }

        let freeflow_s = legs
            .iter()
            .map(|leg| match leg {
                Leg::Urban {
                    region,
                    distance_km,
                } => distance_km / net.regions[*region].mfd.v_free() * 3600.0,
                Leg::Actm { road, entry, exit } => {
                    let r = &net.roads[*road];
                    let from = match entry {
                        RoadEntry::Source => 0,
                        RoadEntry::Merge(c) => *c,
                    };
                    let to = match exit {
                        RoadExit::Sink => r.n_cells - 1,
                        RoadExit::Diverge(c) => *c,
                    };
                    (to - from + 1) as f64 * r.delta_km / r.v_max_kmh * 3600.0
                }
            })
            .sum();

        Ok(Path {
            origin,
            destination,
            legs,
            freeflow_s,
        })
    }
}

/// Plans one path per OD pair of the demand table (zero-weight pairs skipped).
pub fn plan_all(
    net: &Network,
    adjacency: &RegionAdjacency,
    od: &[crate::demand::OdDemand],
    seed: u64,
) -> Result<PathSet, PlanError> {
    let planner = Planner::new(net, adjacency);
    let mut rng = seeded_rng(seed, Stream::LegDistance);
    let mut paths = Vec::new();
    let mut od_to_path = Vec::with_capacity(od.len());
    for pair in od {
        if pair.weight <= 0.0 {
            od_to_path.push(None);
            continue;
        }
        let path = planner.plan_trip(pair.origin, pair.destination, &mut rng)?;
        od_to_path.push(Some(paths.len()));
        paths.push(path);
    }
    Ok(PathSet { paths, od_to_path })
}
