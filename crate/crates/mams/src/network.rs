//! Simulated communication fabric and the global scheduler.
//!
//! Agents run in lockstep rounds: each round every agent drains its inbox,
//! then (if active) expands one vertex and publishes it. Published messages
//! become deliverable no earlier than the next round; the delivery policy
//! may hold them longer, but per-sender order is always preserved at every
//! receiver. The run terminates when every agent is inactive and every
//! inbox is empty.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::MultiResGraph;
use crate::geom::{Point, Region};
use crate::merge::{Heuristic, Path};
use crate::search::{AgentState, StepCtx, VertexMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceEvent {
    Expand,
    Publish,
    Deliver,
    Adopt,
    Surgery,
    Inactivate,
    Reactivate,
}

/// One line of the newline-delimited run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord<const D: usize> {
    pub round: u64,
    pub agent: usize,
    pub event: TraceEvent,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub region: Option<Region<D>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f: Option<f64>,
}

/// Serialize a trace as JSON lines.
pub fn trace_to_string<const D: usize>(trace: &[TraceRecord<D>]) -> String {
    let mut out = String::new();
    for record in trace {
        out.push_str(&serde_json::to_string(record).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

/// Parse a JSON-lines trace.
pub fn trace_from_str<const D: usize>(text: &str) -> Result<Vec<TraceRecord<D>>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Global record of where every cost-to-come value came from, keyed by the
/// exact bit pattern. Adoption copies values verbatim between agents, so a
/// value's provenance chain stays intact across agent boundaries and a path
/// can be stitched back from any final goal cost.
#[derive(Debug, Default, Clone)]
pub struct Provenance<const D: usize> {
    edges: HashMap<(Region<D>, u64), (Region<D>, u64)>,
}

impl<const D: usize> Provenance<D> {
    pub fn record(&mut self, region: Region<D>, g: f64, pred: Region<D>, pred_g: f64) {
        self.edges.insert((region, g.to_bits()), (pred, pred_g.to_bits()));
    }

    pub fn lookup(&self, region: Region<D>, g: f64) -> Option<(Region<D>, f64)> {
        self.edges
            .get(&(region, g.to_bits()))
            .map(|(r, bits)| (*r, f64::from_bits(*bits)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Every published message reaches every other agent.
    Broadcast,
    /// Agent i forwards only to agent i + 1.
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryPolicy {
    /// Deliverable in the next round.
    Immediate,
    /// Held for k extra rounds.
    Delayed(u32),
    /// Per-message seeded random extra delay in [0, max]; per-sender order
    /// is still preserved at each receiver.
    Random { max: u32 },
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub topology: Topology,
    pub policy: DeliveryPolicy,
    pub seed: u64,
    pub round_budget: u64,
    pub strict_adopt: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            topology: Topology::Broadcast,
            policy: DeliveryPolicy::Immediate,
            seed: 0,
            round_budget: 2_000_000,
            strict_adopt: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("round budget of {budget} exhausted without termination")]
    RoundBudgetExceeded { budget: u64 },
    #[error("no agents to run")]
    NoAgents,
}

struct Envelope<const D: usize> {
    deliver_at: u64,
    seq: u64,
    msg: VertexMessage<D>,
}

/// Per-agent FIFO inboxes with pluggable topology and delivery policy.
pub struct Bus<const D: usize> {
    inboxes: Vec<Vec<Envelope<D>>>,
    topology: Topology,
    policy: DeliveryPolicy,
    rng: ChaCha8Rng,
    /// Last scheduled delivery round per (sender, receiver) channel; random
    /// delays are clamped to keep channels FIFO.
    channel_last: HashMap<(usize, usize), u64>,
    seq: u64,
    published: u64,
    enqueued: u64,
    delivered: u64,
}

impl<const D: usize> Bus<D> {
    pub fn new(agents: usize, topology: Topology, policy: DeliveryPolicy, seed: u64) -> Self {
        Bus {
            inboxes: (0..agents).map(|_| Vec::new()).collect(),
            topology,
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            channel_last: HashMap::new(),
            seq: 0,
            published: 0,
            enqueued: 0,
            delivered: 0,
        }
    }

    fn receivers(&self, sender: usize) -> Vec<usize> {
        match self.topology {
            Topology::Broadcast => {
                (0..self.inboxes.len()).filter(|&r| r != sender).collect()
            }
            Topology::Chain => {
                if sender + 1 < self.inboxes.len() {
                    vec![sender + 1]
                } else {
                    Vec::new()
                }
            }
        }
    }

    pub fn publish(&mut self, sender: usize, msg: VertexMessage<D>, round: u64) {
        self.published += 1;
        for receiver in self.receivers(sender) {
            let delay = match self.policy {
                DeliveryPolicy::Immediate => 0,
                DeliveryPolicy::Delayed(k) => k as u64,
                DeliveryPolicy::Random { max } => self.rng.gen_range(0..=max) as u64,
            };
            let floor = self.channel_last.get(&(sender, receiver)).copied().unwrap_or(0);
            let at = (round + 1 + delay).max(floor);
            self.channel_last.insert((sender, receiver), at);
            self.inboxes[receiver].push(Envelope { deliver_at: at, seq: self.seq, msg });
            self.seq += 1;
            self.enqueued += 1;
        }
    }

    /// Messages deliverable to `agent` at `round`, in (deliver round,
    /// enqueue order) order.
    pub fn take_ready(&mut self, agent: usize, round: u64) -> Vec<VertexMessage<D>> {
        let inbox = &mut self.inboxes[agent];
        let mut ready: Vec<Envelope<D>> = Vec::new();
        let mut rest: Vec<Envelope<D>> = Vec::with_capacity(inbox.len());
        for env in inbox.drain(..) {
            if env.deliver_at <= round {
                ready.push(env);
            } else {
                rest.push(env);
            }
        }
        *inbox = rest;
        ready.sort_by_key(|e| (e.deliver_at, e.seq));
        self.delivered += ready.len() as u64;
        ready.into_iter().map(|e| e.msg).collect()
    }

    pub fn all_empty(&self) -> bool {
        self.inboxes.iter().all(Vec::is_empty)
    }

    pub fn published(&self) -> u64 {
        self.published
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }
}

/// Everything a finished run exposes.
pub struct RunOutcome<const D: usize> {
    pub agents: Vec<AgentState<D>>,
    pub trace: Vec<TraceRecord<D>>,
    pub provenance: Provenance<D>,
    /// Finest start vertex across the initial abstractions.
    pub start_vertex: Region<D>,
    /// Finest goal vertex across the initial abstractions.
    pub goal_vertex: Region<D>,
    pub rounds: u64,
    /// Expansion-driven messages (excludes the activation exchange).
    pub messages: u64,
    pub sync_messages: u64,
    /// Message copies placed into inboxes (fan-out applied).
    pub enqueued: u64,
    /// Message copies handed to receivers.
    pub delivered: u64,
}

impl<const D: usize> RunOutcome<D> {
    /// Final cost-to-come at the finest goal vertex, per agent.
    pub fn goal_costs(&self) -> Vec<Option<f64>> {
        self.agents.iter().map(|a| a.g_of(&self.goal_vertex)).collect()
    }

    /// Best final goal cost across agents; `None` means no path.
    pub fn goal_cost(&self) -> Option<f64> {
        self.goal_costs().into_iter().flatten().min_by(f64::total_cmp)
    }

    /// Goal cost as seen by the last agent (the chain's tail).
    pub fn tail_goal_cost(&self) -> Option<f64> {
        self.goal_costs().last().copied().flatten()
    }

    pub fn total_expansions(&self) -> u64 {
        self.agents.iter().map(|a| a.expansions()).sum()
    }

    /// Rebuild the best path by walking cost provenance backwards from the
    /// goal. Returns `None` when no agent reached the goal vertex.
    pub fn extract_path(&self) -> Option<Path<D>> {
        let cost = self.goal_cost()?;
        let mut vertices = vec![self.goal_vertex];
        let mut cur = (self.goal_vertex, cost);
        let mut guard = 0u64;
        while cur.1 != 0.0 {
            let (pred, pred_g) = self.provenance.lookup(cur.0, cur.1)?;
            vertices.push(pred);
            cur = (pred, pred_g);
            guard += 1;
            if guard > 1_000_000 {
                return None;
            }
        }
        vertices.reverse();
        Some(Path { vertices, cost })
    }
}

/// Optional omniscient assertion evaluated at every round start: while the
/// goal is unexpanded, some agent must hold an open vertex or pending
/// message on the optimal path with f not above the optimal cost.
pub struct FrontierCheck<const D: usize> {
    pub path: BTreeSet<Region<D>>,
    pub optimal_cost: f64,
}

/// Run the full distributed search over the given initial abstractions.
///
/// `forbidden` optionally restricts one agent (the refinement mover) from
/// relaxing across specific directed region pairs.
pub fn run<const D: usize>(
    graphs: Vec<MultiResGraph<D>>,
    start: Point<D>,
    goal: Point<D>,
    heuristic: Heuristic,
    sim: &SimConfig,
    forbidden: Option<(usize, Arc<BTreeSet<(Region<D>, Region<D>)>>)>,
    frontier_check: Option<&FrontierCheck<D>>,
) -> Result<RunOutcome<D>, RunError> {
    if graphs.is_empty() {
        return Err(RunError::NoAgents);
    }
    let n = graphs.len();
    let mut agents: Vec<AgentState<D>> = graphs
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let mut a = AgentState::new(i, g, &start, goal, heuristic);
            a.set_strict_adopt(sim.strict_adopt);
            a
        })
        .collect();
    if let Some((mover, set)) = forbidden {
        agents[mover].set_forbidden(set);
    }

    // The finest start and goal vertices over the initial abstractions; all
    // regions containing a point are nested, so the minimum is unique.
    let start_vertex = agents
        .iter()
        .map(|a| a.start_vertex())
        .min_by_key(|r| (r.depth, *r))
        .expect("at least one agent");
    let goal_vertex = agents
        .iter()
        .filter_map(|a| a.goal_vertex())
        .min_by_key(|r| (r.depth, *r))
        .expect("initial covers locate the goal");

    let mut trace: Vec<TraceRecord<D>> = Vec::new();
    let mut provenance = Provenance::default();
    for agent in &agents {
        provenance.record(agent.start_vertex(), 0.0, agent.start_vertex(), 0.0);
    }

    // Activation: agents exchange start vertices before any expansion, so
    // every agent anchors cost zero at the finest known start region. This
    // exchange ignores topology and delivery policy.
    let sync_msgs: Vec<VertexMessage<D>> = agents.iter().map(|a| a.start_message()).collect();
    let mut sync_messages = 0u64;
    for msg in &sync_msgs {
        for agent in agents.iter_mut() {
            if agent.id() == msg.sender {
                continue;
            }
            let mut ctx = StepCtx { round: 0, trace: &mut trace, provenance: &mut provenance };
            ctx.trace.push(TraceRecord {
                round: 0,
                agent: agent.id(),
                event: TraceEvent::Deliver,
                region: Some(msg.region),
                g: Some(msg.g),
                h: Some(msg.h),
                f: None,
            });
            agent.process_message(msg, &mut ctx);
        }
        sync_messages += 1;
    }

    let mut bus: Bus<D> = Bus::new(n, sim.topology, sim.policy, sim.seed);
    let mut round: u64 = 0;
    loop {
        if agents.iter().all(|a| !a.is_active()) && bus.all_empty() {
            break;
        }
        if round >= sim.round_budget {
            return Err(RunError::RoundBudgetExceeded { budget: sim.round_budget });
        }
        if let Some(check) = frontier_check {
            assert_frontier(&agents, &bus, check, goal_vertex, round);
        }
        for i in 0..n {
            let inbox = bus.take_ready(i, round);
            for msg in &inbox {
                trace.push(TraceRecord {
                    round,
                    agent: i,
                    event: TraceEvent::Deliver,
                    region: Some(msg.region),
                    g: Some(msg.g),
                    h: Some(msg.h),
                    f: None,
                });
            }
            let mut ctx = StepCtx { round, trace: &mut trace, provenance: &mut provenance };
            let published = agents[i].step(&inbox, &mut ctx);
            if let Some(msg) = published {
                trace.push(TraceRecord {
                    round,
                    agent: i,
                    event: TraceEvent::Publish,
                    region: Some(msg.region),
                    g: Some(msg.g),
                    h: Some(msg.h),
                    f: Some(msg.g + msg.h),
                });
                bus.publish(i, msg, round);
            }
        }
        round += 1;
    }

    Ok(RunOutcome {
        agents,
        trace,
        provenance,
        start_vertex,
        goal_vertex,
        rounds: round,
        messages: bus.published(),
        sync_messages,
        enqueued: bus.enqueued(),
        delivered: bus.delivered(),
    })
}

/// Broadcast-topology convenience wrapper.
pub fn run_broadcast<const D: usize>(
    graphs: Vec<MultiResGraph<D>>,
    start: Point<D>,
    goal: Point<D>,
    heuristic: Heuristic,
    sim: &SimConfig,
) -> Result<RunOutcome<D>, RunError> {
    let sim = SimConfig { topology: Topology::Broadcast, ..sim.clone() };
    run(graphs, start, goal, heuristic, &sim, None, None)
}

/// Sequential-chain variant: agent i forwards expansion results to agent
/// i + 1 only. The tail agent's answer is optimal in the partially merged
/// graph formed by what was actually forwarded, which may be worse than the
/// broadcast answer.
pub fn run_chain<const D: usize>(
    graphs: Vec<MultiResGraph<D>>,
    start: Point<D>,
    goal: Point<D>,
    heuristic: Heuristic,
    sim: &SimConfig,
) -> Result<RunOutcome<D>, RunError> {
    let sim = SimConfig { topology: Topology::Chain, ..sim.clone() };
    run(graphs, start, goal, heuristic, &sim, None, None)
}

fn assert_frontier<const D: usize>(
    agents: &[AgentState<D>],
    bus: &Bus<D>,
    check: &FrontierCheck<D>,
    goal_vertex: Region<D>,
    round: u64,
) {
    let tol = 1e-9;
    let goal_done = agents
        .iter()
        .any(|a| a.was_popped(&goal_vertex) && a.g_of(&goal_vertex).is_some());
    if goal_done {
        return;
    }
    let open_ok = agents.iter().any(|a| {
        a.open_vertices()
            .iter()
            .any(|(v, f)| check.path.contains(v) && *f <= check.optimal_cost + tol)
    });
    let inbox_ok = bus.inboxes.iter().any(|inbox| {
        inbox
            .iter()
            .any(|e| check.path.contains(&e.msg.region) && e.msg.g + e.msg.h <= check.optimal_cost + tol)
    });
    assert!(
        open_ok || inbox_ok,
        "round {round}: no agent holds an open vertex or pending message on the optimal path"
    );
}
