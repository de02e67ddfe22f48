//! Per-agent multi-resolution graph construction.
//!
//! Starting from the tree root, a region is kept as a single vertex when it
//! is far enough from the agent (`||p - p_i||_2 - sqrt(d) > alpha * 2^k`),
//! otherwise it is split into its 2^d children, bottoming out at unit cells.
//! The result tiles the world with fine cells near the agent and coarse ones
//! far away. Edges connect every pair of regions whose closed intersection
//! has dimension >= 1, and the cost of an edge is a property of its
//! destination: `2^(d*k) * (lambda1 * V + lambda2)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::geom::{cell_index, dist2, Point, Region};
use crate::world::Tree;

/// Comparisons against the selection threshold treat differences within this
/// band as "not greater", so platform-level rounding cannot flip a vertex.
pub const SELECT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("lambda weights must lie in (0, 1], got {0}")]
    BadLambda(f64),
    #[error("agent position {0:?} is outside the world")]
    OutsideWorld(Vec<f64>),
}

/// Cost weights of the traversal model: `lambda1` scales risk content,
/// `lambda2` penalizes region volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl CostWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self, ConfigError> {
        for l in [lambda1, lambda2] {
            if !(l > 0.0 && l <= 1.0) {
                return Err(ConfigError::BadLambda(l));
            }
        }
        Ok(CostWeights { lambda1, lambda2 })
    }
}

impl Default for CostWeights {
    /// The weights used throughout the benchmark suite.
    fn default() -> Self {
        CostWeights { lambda1: 0.999, lambda2: 0.001 }
    }
}

/// One agent's abstraction parameters.
#[derive(Debug, Clone)]
pub struct AgentConfig<const D: usize> {
    pub id: usize,
    pub position: Point<D>,
    pub alpha: f64,
    pub weights: CostWeights,
}

impl<const D: usize> AgentConfig<D> {
    pub fn new(
        id: usize,
        position: Point<D>,
        alpha: f64,
        weights: CostWeights,
        world_depth: u8,
    ) -> Result<Self, ConfigError> {
        if !(alpha > 0.0) {
            return Err(ConfigError::BadAlpha(alpha));
        }
        let side = (1i64 << world_depth) as f64;
        if !position.iter().all(|&c| (0.0..=side).contains(&c)) {
            return Err(ConfigError::OutsideWorld(position.to_vec()));
        }
        Ok(AgentConfig { id, position, alpha, weights })
    }
}

/// True when the region is kept as a single vertex for an agent at
/// `agent_pos`: distance from the agent to the region center, minus the
/// sqrt(d) offset, exceeds `alpha * side`.
pub fn selects_vertex<const D: usize>(
    region: &Region<D>,
    agent_pos: &Point<D>,
    alpha: f64,
) -> bool {
    let threshold = alpha * region.side() as f64 + (D as f64).sqrt();
    // Compare squared magnitudes; the left side is exact for dyadic centers.
    let d2 = dist2(&region.center(), agent_pos);
    d2 - threshold * threshold > SELECT_TOL
}

/// A graph whose vertices tile (a subset of) the world with dyadic regions.
///
/// Used for three things: an agent's own abstraction, the merged graph over
/// several agents, and the flat finest-resolution grid. Message-driven
/// updates can remove a vertex without covering the exposed area, so the
/// tiling may temporarily have holes; the `cover` index maps each unit cell
/// to the vertex covering it, if any.
#[derive(Clone)]
pub struct MultiResGraph<const D: usize> {
    tree: Arc<Tree<D>>,
    weights: CostWeights,
    adjacency: BTreeMap<Region<D>, Vec<Region<D>>>,
    cover: Vec<Option<Region<D>>>,
}

impl<const D: usize> MultiResGraph<D> {
    fn empty(tree: Arc<Tree<D>>, weights: CostWeights) -> Self {
        let cells = 1usize << (D as u32 * tree.depth() as u32);
        MultiResGraph { tree, weights, adjacency: BTreeMap::new(), cover: vec![None; cells] }
    }

    /// Build from an explicit vertex set whose regions must be pairwise
    /// interior-disjoint.
    pub fn from_vertices(
        tree: Arc<Tree<D>>,
        weights: CostWeights,
        vertices: impl IntoIterator<Item = Region<D>>,
    ) -> Self {
        let mut graph = Self::empty(tree, weights);
        for v in vertices {
            graph.insert_vertex(v);
        }
        graph
    }

    /// All-leaf graph: one vertex per unit cell.
    pub fn flat(tree: Arc<Tree<D>>, weights: CostWeights) -> Self {
        let root: Region<D> = Region::root(tree.depth());
        Self::from_vertices(tree, weights, root.cells().map(Region::cell))
    }

    pub fn tree(&self) -> &Arc<Tree<D>> {
        &self.tree
    }

    pub fn weights(&self) -> CostWeights {
        self.weights
    }

    pub fn world_depth(&self) -> u8 {
        self.tree.depth()
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn contains(&self, v: &Region<D>) -> bool {
        self.adjacency.contains_key(v)
    }

    /// Vertices in deterministic (region) order.
    pub fn vertices(&self) -> impl Iterator<Item = &Region<D>> {
        self.adjacency.keys()
    }

    /// Neighbors of `v` in deterministic order.
    pub fn neighbors(&self, v: &Region<D>) -> &[Region<D>] {
        self.adjacency.get(v).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Cost of entering `v` from any neighbor, `None` when `v` is
    /// impassable. This is the Eq.-style destination cost
    /// `2^(d*k) * (lambda1 * V + lambda2)`.
    pub fn entry_cost(&self, v: &Region<D>) -> Option<f64> {
        if self.tree.blocked(v) {
            return None;
        }
        Some(entry_cost(&self.tree, self.weights, v))
    }

    /// Directed edge cost, `None` when the pair is not adjacent or the
    /// destination is impassable.
    pub fn cost(&self, from: &Region<D>, to: &Region<D>) -> Option<f64> {
        if !self.neighbors(from).contains(to) {
            return None;
        }
        self.entry_cost(to)
    }

    /// Vertex covering the given unit cell, if any.
    pub fn cover_of(&self, cell: &[i64; D]) -> Option<Region<D>> {
        self.cover[cell_index(cell, self.tree.side())]
    }

    /// The vertex whose region contains the point. Interior containment
    /// wins; a point on a shared boundary resolves to the candidate with the
    /// lexicographically smallest center. Returns `None` only when the point
    /// falls in a hole left by vertex removal.
    pub fn locate(&self, point: &Point<D>) -> Option<Region<D>> {
        let side = self.tree.side();
        // Candidate covers live around the cells incident to the point.
        let mut candidates: Vec<Region<D>> = Vec::new();
        let mut corner = [0i64; D];
        for i in 0..D {
            corner[i] = (point[i].floor() as i64).clamp(0, side - 1);
        }
        let mut stack = vec![corner];
        // Points on grid lines touch up to 2^D cells; enumerate them.
        for i in 0..D {
            if point[i].fract() == 0.0 && point[i] > 0.0 && (point[i] as i64) < side {
                for j in 0..stack.len() {
                    let mut c = stack[j];
                    c[i] -= 1;
                    if c[i] >= 0 {
                        stack.push(c);
                    }
                }
            }
        }
        for cell in stack {
            if let Some(v) = self.cover[cell_index(&cell, side)] {
                if v.contains_point(point) && !candidates.contains(&v) {
                    candidates.push(v);
                }
            }
        }
        if let Some(v) = candidates.iter().find(|v| v.interior_contains_point(point)) {
            return Some(*v);
        }
        candidates.into_iter().min_by_key(|v| v.center_x2())
    }

    /// Insert a vertex and connect it to every existing vertex its region
    /// touches. The region must not overlap any current vertex.
    pub fn insert_vertex(&mut self, v: Region<D>) {
        debug_assert!(!self.contains(&v));
        let side = self.tree.side();
        let mut neighbors: Vec<Region<D>> = Vec::new();
        for cell in v.shell_cells(self.tree.depth()) {
            if let Some(u) = self.cover[cell_index(&cell, side)] {
                if u.touches(&v) && !neighbors.contains(&u) {
                    neighbors.push(u);
                }
            }
        }
        neighbors.sort();
        for u in &neighbors {
            let list = self.adjacency.get_mut(u).expect("neighbor must exist");
            match list.binary_search(&v) {
                Ok(_) => {}
                Err(pos) => list.insert(pos, v),
            }
        }
        for cell in v.cells() {
            self.cover[cell_index(&cell, side)] = Some(v);
        }
        self.adjacency.insert(v, neighbors);
    }

    /// Remove a vertex, its edges, and its cover entries. Cells it covered
    /// become holes unless re-covered later.
    pub fn remove_vertex(&mut self, v: &Region<D>) {
        let Some(neighbors) = self.adjacency.remove(v) else {
            return;
        };
        for u in neighbors {
            if let Some(list) = self.adjacency.get_mut(&u) {
                if let Ok(pos) = list.binary_search(v) {
                    list.remove(pos);
                }
            }
        }
        let side = self.tree.side();
        for cell in v.cells() {
            let slot = &mut self.cover[cell_index(&cell, side)];
            if *slot == Some(*v) {
                *slot = None;
            }
        }
    }

    /// Total covered volume in unit cells.
    pub fn covered_volume(&self) -> i64 {
        self.vertices().map(Region::volume).sum()
    }
}

impl<const D: usize> std::fmt::Debug for MultiResGraph<D> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultiResGraph")
            .field("vertices", &self.adjacency.len())
            .field("world_depth", &self.tree.depth())
            .finish()
    }
}

/// Destination-side traversal cost of a region.
pub fn entry_cost<const D: usize>(tree: &Tree<D>, weights: CostWeights, v: &Region<D>) -> f64 {
    let volume = v.volume() as f64; // 2^(d*k)
    volume * (weights.lambda1 * tree.value(v) + weights.lambda2)
}

/// Build an agent's abstraction by top-down refinement from the root.
pub fn build_abstraction<const D: usize>(
    tree: &Arc<Tree<D>>,
    config: &AgentConfig<D>,
) -> MultiResGraph<D> {
    let mut vertices = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(region) = stack.pop() {
        if region.depth == 0 || selects_vertex(&region, &config.position, config.alpha) {
            vertices.push(region);
        } else {
            stack.extend(region.children());
        }
    }
    vertices.sort();
    MultiResGraph::from_vertices(Arc::clone(tree), config.weights, vertices)
}
