//! Exact min-cost flow on the three-layer transportation network
//! `source -> requests -> facilities -> sink`.
//!
//! The solver is successive shortest augmenting paths with node potentials.
//! All arc costs are non-negative, so potentials start at zero and Dijkstra
//! stays valid on reduced costs. Costs are generic: plain distances use
//! `i64`, scarcity-priced networks use exact `BigRational`.
//!
//! Equal-cost optima are resolved deterministically: arcs are stored with
//! requests in index order and facilities in id order, and Dijkstra settles
//! nodes by `(distance, node index)` with strict relaxation.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::{self, Debug, Write as _};
use std::ops::{Add, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::error::{OfaError, Result};
use crate::grid::{manhattan_distance, CapacityLedger, Facility, GridInstance, GridPoint};

/// Arc cost domain. Exact arithmetic only.
pub trait FlowCost: Clone + Ord + Debug + Zero + Add<Output = Self> + Sub<Output = Self> {
    fn from_distance(d: u32) -> Self;
    fn render(&self) -> String;
}

impl FlowCost for i64 {
    fn from_distance(d: u32) -> Self {
        i64::from(d)
    }

    fn render(&self) -> String {
        self.to_string()
    }
}

impl FlowCost for BigRational {
    fn from_distance(d: u32) -> Self {
        BigRational::from_integer(BigInt::from(d))
    }

    fn render(&self) -> String {
        self.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Source,
    Request(usize),
    Facility(usize),
    Sink,
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Source => write!(f, "s"),
            Node::Request(i) => write!(f, "u{}", i + 1),
            Node::Facility(id) => write!(f, "f{id}"),
            Node::Sink => write!(f, "t"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowArc<C> {
    pub from: Node,
    pub to: Node,
    pub capacity: u32,
    pub cost: C,
}

/// Capacity into the sink from one facility node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkArcs<C> {
    /// One arc of the given capacity at cost zero.
    Single(u32),
    /// Parallel unit arcs; entry `k` is the price of the `(k+1)`-th unit.
    /// Prices must be non-decreasing for the encoding to be convex.
    Units(Vec<C>),
}

impl<C> SinkArcs<C> {
    fn capacity(&self) -> u32 {
        match self {
            SinkArcs::Single(c) => *c,
            SinkArcs::Units(v) => v.len() as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowNetwork<C> {
    num_requests: usize,
    num_facilities: usize,
    arcs: Vec<FlowArc<C>>,
}

impl<C: FlowCost> FlowNetwork<C> {
    /// Generic transportation network. Facilities whose sink capacity is zero
    /// get neither incoming nor outgoing arcs.
    pub fn transportation(
        num_requests: usize,
        sinks: &[SinkArcs<C>],
        mut cost: impl FnMut(usize, usize) -> C,
    ) -> Self {
        let mut arcs = Vec::new();
        for u in 0..num_requests {
            arcs.push(FlowArc {
                from: Node::Source,
                to: Node::Request(u),
                capacity: 1,
                cost: C::zero(),
            });
        }
        for u in 0..num_requests {
            for (f, sink) in sinks.iter().enumerate() {
                if sink.capacity() > 0 {
                    arcs.push(FlowArc {
                        from: Node::Request(u),
                        to: Node::Facility(f),
                        capacity: 1,
                        cost: cost(u, f),
                    });
                }
            }
        }
        for (f, sink) in sinks.iter().enumerate() {
            match sink {
                SinkArcs::Single(0) => {}
                SinkArcs::Single(cap) => arcs.push(FlowArc {
                    from: Node::Facility(f),
                    to: Node::Sink,
                    capacity: *cap,
                    cost: C::zero(),
                }),
                SinkArcs::Units(prices) => {
                    for price in prices {
                        arcs.push(FlowArc {
                            from: Node::Facility(f),
                            to: Node::Sink,
                            capacity: 1,
                            cost: price.clone(),
                        });
                    }
                }
            }
        }
        Self {
            num_requests,
            num_facilities: sinks.len(),
            arcs,
        }
    }

    pub fn arcs(&self) -> &[FlowArc<C>] {
        &self.arcs
    }

    pub fn num_requests(&self) -> usize {
        self.num_requests
    }

    pub fn num_facilities(&self) -> usize {
        self.num_facilities
    }

    fn node_count(&self) -> usize {
        self.num_requests + self.num_facilities + 2
    }

    fn index(&self, node: Node) -> usize {
        match node {
            Node::Source => 0,
            Node::Request(u) => 1 + u,
            Node::Facility(f) => 1 + self.num_requests + f,
            Node::Sink => 1 + self.num_requests + self.num_facilities,
        }
    }
}

/// Network for one batch: `(u -> f)` priced by `cost_fn` for every facility
/// with `remcap > 0`, and `(f -> t)` with capacity `remcap`.
pub fn build_batch_network<C: FlowCost>(
    batch: &[GridPoint],
    ledger: &CapacityLedger,
    instance: &GridInstance,
    mut cost_fn: impl FnMut(GridPoint, &Facility) -> C,
) -> FlowNetwork<C> {
    let sinks: Vec<SinkArcs<C>> = ledger
        .as_slice()
        .iter()
        .map(|&r| SinkArcs::Single(r))
        .collect();
    FlowNetwork::transportation(batch.len(), &sinks, |u, f| {
        cost_fn(batch[u], instance.facility(f))
    })
}

/// [`build_batch_network`] with Manhattan arc costs.
pub fn build_distance_network(
    batch: &[GridPoint],
    ledger: &CapacityLedger,
    instance: &GridInstance,
) -> FlowNetwork<i64> {
    build_batch_network(batch, ledger, instance, |u, f| {
        i64::from(manhattan_distance(u, f.location))
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSolution<C> {
    /// Flow per arc, aligned with [`FlowNetwork::arcs`].
    pub arc_flows: Vec<u32>,
    pub total_cost: C,
    /// Facility id per request node, for the requests that received flow.
    pub assignment: Vec<Option<usize>>,
}

impl<C> FlowSolution<C> {
    pub fn flow_value(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }

    /// Assignment for a full solve, where every request carries flow.
    pub fn complete_assignment(&self) -> Option<Vec<usize>> {
        self.assignment.iter().copied().collect()
    }
}

struct Residual<C> {
    head: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<u32>,
    cost: Vec<C>,
    // adjacency: per node, edge ids in insertion order
    adj: Vec<Vec<usize>>,
}

impl<C: FlowCost> Residual<C> {
    fn new(network: &FlowNetwork<C>) -> Self {
        let n = network.node_count();
        let mut r = Residual {
            head: Vec::new(),
            to: Vec::new(),
            cap: Vec::new(),
            cost: Vec::new(),
            adj: vec![Vec::new(); n],
        };
        for arc in &network.arcs {
            let (a, b) = (network.index(arc.from), network.index(arc.to));
            r.push(a, b, arc.capacity, arc.cost.clone());
            r.push(b, a, 0, C::zero() - arc.cost.clone());
        }
        r
    }

    fn push(&mut self, from: usize, to: usize, cap: u32, cost: C) {
        self.adj[from].push(self.to.len());
        self.head.push(from);
        self.to.push(to);
        self.cap.push(cap);
        self.cost.push(cost);
    }
}

/// Integral minimum-cost flow of value `required_flow` from source to sink.
pub fn solve_min_cost_flow<C: FlowCost>(
    network: &FlowNetwork<C>,
    required_flow: usize,
) -> Result<FlowSolution<C>> {
    let n = network.node_count();
    let source = network.index(Node::Source);
    let sink = network.index(Node::Sink);
    let mut res = Residual::new(network);
    let mut potential = vec![C::zero(); n];
    let mut sent = 0usize;

    while sent < required_flow {
        let (dist, parent) = dijkstra(&res, &potential, source);
        let Some(dist_sink) = dist[sink].clone() else {
            return Err(OfaError::InfeasibleFlow {
                max_flow: sent as u64,
                required: required_flow as u64,
            });
        };
        for v in 0..n {
            let d = match &dist[v] {
                Some(d) if *d < dist_sink => d.clone(),
                _ => dist_sink.clone(),
            };
            potential[v] = potential[v].clone() + d;
        }
        // every source arc has capacity 1, so each path carries one unit
        let mut v = sink;
        while v != source {
            let e = parent[v].expect("sink reachable implies a parent chain");
            res.cap[e] -= 1;
            res.cap[e ^ 1] += 1;
            v = res.head[e];
        }
        sent += 1;
    }

    let arc_flows: Vec<u32> = (0..network.arcs.len())
        .map(|i| res.cap[2 * i + 1])
        .collect();
    let mut total_cost = C::zero();
    let mut assignment = vec![None; network.num_requests];
    for (arc, &flow) in network.arcs.iter().zip(&arc_flows) {
        if flow == 0 {
            continue;
        }
        for _ in 0..flow {
            total_cost = total_cost + arc.cost.clone();
        }
        if let (Node::Request(u), Node::Facility(f)) = (arc.from, arc.to) {
            assignment[u] = Some(f);
        }
    }
    Ok(FlowSolution {
        arc_flows,
        total_cost,
        assignment,
    })
}

type Dist<C> = Vec<Option<C>>;

fn dijkstra<C: FlowCost>(
    res: &Residual<C>,
    potential: &[C],
    source: usize,
) -> (Dist<C>, Vec<Option<usize>>) {
    let n = potential.len();
    let mut dist: Dist<C> = vec![None; n];
    let mut parent = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = Some(C::zero());
    heap.push(Reverse((C::zero(), source)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for &e in &res.adj[u] {
            if res.cap[e] == 0 {
                continue;
            }
            let v = res.to[e];
            if done[v] {
                continue;
            }
            let reduced = res.cost[e].clone() + potential[u].clone() - potential[v].clone();
            let nd = d.clone() + reduced;
            let better = match &dist[v] {
                None => true,
                Some(old) => nd < *old,
            };
            if better {
                dist[v] = Some(nd.clone());
                parent[v] = Some(e);
                heap.push(Reverse((nd, v)));
            }
        }
    }
    (dist, parent)
}

/// Bellman-Ford search for a negative-cost cycle in the residual network of
/// `solution`. An optimal flow has none.
pub fn residual_has_negative_cycle<C: FlowCost>(
    network: &FlowNetwork<C>,
    solution: &FlowSolution<C>,
) -> bool {
    let n = network.node_count();
    let mut edges: Vec<(usize, usize, C)> = Vec::new();
    for (arc, &flow) in network.arcs.iter().zip(&solution.arc_flows) {
        let (a, b) = (network.index(arc.from), network.index(arc.to));
        if flow < arc.capacity {
            edges.push((a, b, arc.cost.clone()));
        }
        if flow > 0 {
            edges.push((b, a, C::zero() - arc.cost.clone()));
        }
    }
    // virtual source at distance zero to every node
    let mut dist = vec![C::zero(); n];
    for _ in 0..n {
        let mut changed = false;
        for (a, b, c) in &edges {
            let nd = dist[*a].clone() + c.clone();
            if nd < dist[*b] {
                dist[*b] = nd;
                changed = true;
            }
        }
        if !changed {
            return false;
        }
    }
    true
}

/// Two-table text dump: the request-to-facility arcs with capacity and cost,
/// then every arc carrying positive flow.
pub fn format_flow_tables<C: FlowCost>(
    network: &FlowNetwork<C>,
    solution: &FlowSolution<C>,
    facility_name: impl Fn(usize) -> String,
) -> String {
    let name = |node: Node| match node {
        Node::Facility(f) => facility_name(f),
        other => other.to_string(),
    };
    let mut out = String::new();
    out.push_str("Arc | Capacity | Cost\n");
    for arc in &network.arcs {
        if matches!((arc.from, arc.to), (Node::Request(_), Node::Facility(_))) {
            let _ = writeln!(
                out,
                "({}->{}) | {} | {}",
                name(arc.from),
                name(arc.to),
                arc.capacity,
                arc.cost.render()
            );
        }
    }
    out.push_str("\nEdge | Flow\n");
    for (arc, &flow) in network.arcs.iter().zip(&solution.arc_flows) {
        if flow > 0 {
            let _ = writeln!(out, "({}->{}) | {}", name(arc.from), name(arc.to), flow);
        }
    }
    let _ = writeln!(out, "\nTotal cost = {}", solution.total_cost.render());
    out
}
