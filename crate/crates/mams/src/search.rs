//! The per-agent distributed search state machine.
//!
//! Each agent runs A* over its own multi-resolution graph and broadcasts a
//! vertex exactly when it expands it. Incoming vertices are matched against
//! the local graph by region: an exact match updates costs, a strictly finer
//! vertex replaces the local coarse one (graph surgery), a strictly coarser
//! one is discarded, and an unrelated vertex (its coarse container was
//! already removed) is spliced in. An agent goes inactive when it pops its
//! goal vertex or exhausts its queue, and a useful incoming vertex wakes it
//! up again.

use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::abstraction::MultiResGraph;
use crate::geom::{Point, Region};
use crate::merge::{Heuristic, QueueEntry};
use crate::network::{Provenance, TraceEvent, TraceRecord};

/// The broadcast payload: the expanded vertex with the sender's cost-to-come
/// and heuristic, plus the predecessor region that lets receivers stitch
/// paths and resolve the adoption guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexMessage<const D: usize> {
    pub region: Region<D>,
    pub g: f64,
    pub h: f64,
    pub sender: usize,
    pub pred: Region<D>,
}

#[derive(Debug, Error)]
pub enum MessageError {
    #[error("region {0} does not fit the world")]
    BadRegion(String),
    #[error("negative cost fields g={0} h={1}")]
    NegativeCost(f64, f64),
}

impl<const D: usize> VertexMessage<D> {
    pub fn validate(&self, world_depth: u8) -> Result<(), MessageError> {
        for region in [&self.region, &self.pred] {
            let side = region.side();
            let world = 1i64 << world_depth;
            let fits = region.depth <= world_depth
                && region.origin.iter().all(|&o| {
                    o >= 0 && o % side == 0 && o + side <= world
                });
            if !fits {
                return Err(MessageError::BadRegion(format!("{region:?}")));
            }
        }
        if self.g < 0.0 || self.h < 0.0 || self.g.is_nan() || self.h.is_nan() {
            return Err(MessageError::NegativeCost(self.g, self.h));
        }
        Ok(())
    }
}

/// Mutable context threaded through a step: the global trace, the global
/// cost provenance, and the current round number.
pub struct StepCtx<'a, const D: usize> {
    pub round: u64,
    pub trace: &'a mut Vec<TraceRecord<D>>,
    pub provenance: &'a mut Provenance<D>,
}

impl<const D: usize> StepCtx<'_, D> {
    fn record(&mut self, agent: usize, event: TraceEvent, region: Option<Region<D>>, g: Option<f64>, h: Option<f64>, f: Option<f64>) {
        self.trace.push(TraceRecord { round: self.round, agent, event, region, g, h, f });
    }
}

/// How an incoming region relates to the local vertex set. Dyadic regions
/// are nested or interior-disjoint, so one covered cell decides.
enum Relation<const D: usize> {
    Equal(Region<D>),
    LocalCoarser(Region<D>),
    LocalFiner,
    Uncovered,
}

/// One agent's complete search state.
pub struct AgentState<const D: usize> {
    id: usize,
    graph: MultiResGraph<D>,
    open: BinaryHeap<QueueEntry<D>>,
    in_open: HashSet<Region<D>>,
    closed: HashSet<Region<D>>,
    g: HashMap<Region<D>, f64>,
    h: HashMap<Region<D>, f64>,
    f: HashMap<Region<D>, f64>,
    pred: HashMap<Region<D>, Region<D>>,
    active: bool,
    start: Region<D>,
    goal_point: Point<D>,
    goal_vertex: Option<Region<D>>,
    heuristic: Heuristic,
    strict_adopt: bool,
    forbidden: Arc<BTreeSet<(Region<D>, Region<D>)>>,
    expansions: u64,
    popped_goals: HashSet<Region<D>>,
}

impl<const D: usize> AgentState<D> {
    pub fn new(
        id: usize,
        graph: MultiResGraph<D>,
        start_point: &Point<D>,
        goal_point: Point<D>,
        heuristic: Heuristic,
    ) -> Self {
        let start = graph
            .locate(start_point)
            .expect("initial abstraction covers the world");
        let goal_vertex = graph.locate(&goal_point);
        let lambda2 = graph.weights().lambda2;
        let h0 = heuristic.evaluate(&start, &goal_point, lambda2);
        let mut state = AgentState {
            id,
            graph,
            open: BinaryHeap::new(),
            in_open: HashSet::new(),
            closed: HashSet::new(),
            g: HashMap::new(),
            h: HashMap::new(),
            f: HashMap::new(),
            pred: HashMap::new(),
            active: true,
            start,
            goal_point,
            goal_vertex,
            heuristic,
            strict_adopt: false,
            forbidden: Arc::new(BTreeSet::new()),
            expansions: 0,
            popped_goals: HashSet::new(),
        };
        state.g.insert(start, 0.0);
        state.h.insert(start, h0);
        state.f.insert(start, h0);
        state.pred.insert(start, start);
        state.push_open(start, 0.0, h0);
        state
    }

    /// Literal reading of the adoption guard: the predecessor must exist in
    /// the vertex set as an exact region, instead of resolving through
    /// containment.
    pub fn set_strict_adopt(&mut self, strict: bool) {
        self.strict_adopt = strict;
    }

    /// Directed region pairs this agent must not relax across.
    pub fn set_forbidden(&mut self, forbidden: Arc<BTreeSet<(Region<D>, Region<D>)>>) {
        self.forbidden = forbidden;
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn graph(&self) -> &MultiResGraph<D> {
        &self.graph
    }

    pub fn start_vertex(&self) -> Region<D> {
        self.start
    }

    pub fn goal_vertex(&self) -> Option<Region<D>> {
        self.goal_vertex
    }

    pub fn expansions(&self) -> u64 {
        self.expansions
    }

    pub fn g_of(&self, v: &Region<D>) -> Option<f64> {
        self.g.get(v).copied()
    }

    pub fn h_of(&self, v: &Region<D>) -> Option<f64> {
        self.h.get(v).copied()
    }

    pub fn predecessor(&self, v: &Region<D>) -> Option<Region<D>> {
        self.pred.get(v).copied()
    }

    pub fn is_closed(&self, v: &Region<D>) -> bool {
        self.closed.contains(v)
    }

    pub fn is_open(&self, v: &Region<D>) -> bool {
        self.in_open.contains(v)
    }

    pub fn open_is_empty(&self) -> bool {
        self.in_open.is_empty()
    }

    /// Has this agent ever popped `v` (closed it, or popped it as a goal)?
    pub fn was_popped(&self, v: &Region<D>) -> bool {
        self.closed.contains(v) || self.popped_goals.contains(v)
    }

    /// Open vertices with their f values; order is unspecified.
    pub fn open_vertices(&self) -> Vec<(Region<D>, f64)> {
        self.in_open.iter().map(|v| (*v, self.f[v])).collect()
    }

    /// The message announcing this agent's start vertex during activation.
    pub fn start_message(&self) -> VertexMessage<D> {
        VertexMessage {
            region: self.start,
            g: 0.0,
            h: self.h[&self.start],
            sender: self.id,
            pred: self.start,
        }
    }

    fn current_g(&self, v: &Region<D>) -> f64 {
        self.g.get(v).copied().unwrap_or(f64::INFINITY)
    }

    fn heuristic_for(&mut self, v: &Region<D>) -> f64 {
        if let Some(&h) = self.h.get(v) {
            return h;
        }
        let lambda2 = self.graph.weights().lambda2;
        let h = self.heuristic.evaluate(v, &self.goal_point, lambda2);
        self.h.insert(*v, h);
        h
    }

    fn push_open(&mut self, v: Region<D>, g: f64, h: f64) {
        let f = g + h;
        self.f.insert(v, f);
        self.open.push(QueueEntry { f, g, region: v });
        self.in_open.insert(v);
    }

    /// Pop the best live entry; stale entries (superseded g or f, or removed
    /// from OPEN) are skipped lazily.
    fn pop_valid(&mut self) -> Option<Region<D>> {
        while let Some(entry) = self.open.pop() {
            if !self.in_open.contains(&entry.region) {
                continue;
            }
            if self.g.get(&entry.region) != Some(&entry.g)
                || self.f.get(&entry.region) != Some(&entry.f)
            {
                continue;
            }
            self.in_open.remove(&entry.region);
            return Some(entry.region);
        }
        None
    }

    fn classify(&self, s: &Region<D>) -> Relation<D> {
        for cell in s.cells() {
            if let Some(u) = self.graph.cover_of(&cell) {
                return if u == *s {
                    Relation::Equal(u)
                } else if u.strictly_contains(s) {
                    Relation::LocalCoarser(u)
                } else {
                    Relation::LocalFiner
                };
            }
        }
        Relation::Uncovered
    }

    fn relocate_goal(&mut self) {
        self.goal_vertex = self.graph.locate(&self.goal_point);
    }

    /// Handle one received vertex.
    pub fn process_message(&mut self, msg: &VertexMessage<D>, ctx: &mut StepCtx<'_, D>) {
        match self.classify(&msg.region) {
            Relation::Equal(v) => {
                if !self.closed.contains(&v) || self.current_g(&v) > msg.g {
                    self.adopt(msg, ctx);
                }
            }
            Relation::LocalCoarser(v) => {
                // Finer information: splice the received vertex in place of
                // the local coarse one. Cells of `v` outside the received
                // region become holes until other messages fill them.
                ctx.record(
                    self.id,
                    TraceEvent::Surgery,
                    Some(msg.region),
                    self.g.get(&v).copied(),
                    self.h.get(&v).copied(),
                    self.f.get(&v).copied(),
                );
                let was_goal = self.goal_vertex == Some(v);
                self.graph.remove_vertex(&v);
                self.in_open.remove(&v);
                self.closed.remove(&v);
                self.g.remove(&v);
                self.h.remove(&v);
                self.f.remove(&v);
                self.pred.remove(&v);
                self.graph.insert_vertex(msg.region);
                if was_goal || msg.region.contains_point(&self.goal_point) {
                    self.relocate_goal();
                }
                self.adopt(msg, ctx);
            }
            Relation::LocalFiner => {
                // Local knowledge is already finer than the message.
            }
            Relation::Uncovered => {
                // The coarse container was removed earlier; add the vertex
                // and wire it to whatever it touches.
                self.graph.insert_vertex(msg.region);
                if msg.region.contains_point(&self.goal_point) {
                    self.relocate_goal();
                }
                self.adopt(msg, ctx);
            }
        }
    }

    /// Can the receiver relate the message's predecessor to its own map?
    fn pred_resolvable(&self, pred: &Region<D>) -> bool {
        if self.strict_adopt {
            return self.graph.contains(pred);
        }
        // Any covered cell under the predecessor region implies a vertex
        // nested with it one way or the other.
        pred.cells().any(|c| self.graph.cover_of(&c).is_some())
    }

    /// Fold the message costs into the local state. The cost-to-come never
    /// increases; the heuristic is the max of local and received knowledge.
    /// Reactivates the agent whenever the message improved something.
    fn adopt(&mut self, msg: &VertexMessage<D>, ctx: &mut StepCtx<'_, D>) {
        if !self.pred_resolvable(&msg.pred) {
            return;
        }
        let v = msg.region;
        let cur_g = self.current_g(&v);
        let local_h = self.heuristic_for(&v);
        let new_h = local_h.max(msg.h);
        let improved_g = msg.g < cur_g;
        let raised_h = new_h > local_h;
        if raised_h {
            self.h.insert(v, new_h);
        }
        if improved_g {
            self.g.insert(v, msg.g);
            self.pred.insert(v, msg.pred);
            self.closed.remove(&v);
            self.push_open(v, msg.g, new_h);
            ctx.record(self.id, TraceEvent::Adopt, Some(v), Some(msg.g), Some(new_h), Some(msg.g + new_h));
            if !self.active {
                self.active = true;
                ctx.record(self.id, TraceEvent::Reactivate, None, None, None, None);
            }
        } else if raised_h && self.in_open.contains(&v) {
            // Same g, sharper bound: refresh the queue entry's f.
            self.push_open(v, cur_g, new_h);
            ctx.record(self.id, TraceEvent::Adopt, Some(v), Some(cur_g), Some(new_h), Some(cur_g + new_h));
        }
    }

    /// Expand a popped vertex: goal detection, then neighbor relaxation.
    fn expand(&mut self, s: Region<D>, ctx: &mut StepCtx<'_, D>) {
        if Some(s) == self.goal_vertex {
            self.popped_goals.insert(s);
            self.active = false;
            ctx.record(self.id, TraceEvent::Inactivate, Some(s), self.g.get(&s).copied(), None, None);
            return;
        }
        self.closed.insert(s);
        let g_s = self.g[&s];
        for n in self.graph.neighbors(&s).to_vec() {
            if self.closed.contains(&n) {
                continue;
            }
            if self.forbidden.contains(&(s, n)) {
                continue;
            }
            let Some(step) = self.graph.entry_cost(&n) else { continue };
            let cand = g_s + step;
            if cand < self.current_g(&n) {
                let h = self.heuristic_for(&n);
                self.g.insert(n, cand);
                self.pred.insert(n, s);
                self.push_open(n, cand, h);
                ctx.provenance.record(n, cand, s, g_s);
            }
        }
    }

    /// One scheduler step: drain the inbox, then (when active) expand the
    /// best open vertex and return it for publication. Returns `None` when
    /// inactive or when the queue ran dry (which inactivates the agent).
    pub fn step(
        &mut self,
        inbox: &[VertexMessage<D>],
        ctx: &mut StepCtx<'_, D>,
    ) -> Option<VertexMessage<D>> {
        for msg in inbox {
            self.process_message(msg, ctx);
        }
        if !self.active {
            return None;
        }
        let Some(s) = self.pop_valid() else {
            self.active = false;
            ctx.record(self.id, TraceEvent::Inactivate, None, None, None, None);
            return None;
        };
        self.expansions += 1;
        let g = self.g[&s];
        let h = self.h[&s];
        ctx.record(self.id, TraceEvent::Expand, Some(s), Some(g), Some(h), Some(g + h));
        self.expand(s, ctx);
        Some(VertexMessage {
            region: s,
            g,
            h,
            sender: self.id,
            pred: self.pred.get(&s).copied().unwrap_or(s),
        })
    }
}

impl<const D: usize> std::fmt::Debug for AgentState<D> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentState")
            .field("id", &self.id)
            .field("active", &self.active)
            .field("open", &self.in_open.len())
            .field("closed", &self.closed.len())
            .field("expansions", &self.expansions)
            .finish()
    }
}
