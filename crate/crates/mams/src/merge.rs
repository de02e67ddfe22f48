//! Merged-graph semantics and a standard A* over any region graph.
//!
//! The merged graph over several agents keeps only the fine vertices of the
//! union of their vertex sets: a vertex survives unless some other vertex's
//! region is strictly inside its own. Because all regions are dyadic, the
//! surviving regions tile the world exactly. A* over these graphs serves
//! both as the flat-resolution baseline and as the optimality oracle for the
//! distributed search.

use std::collections::{BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::abstraction::{CostWeights, MultiResGraph};
use crate::geom::{cell_index, linf, Point, Region};
use crate::world::Tree;

/// True when no region in `set` is strictly contained in `v`.
pub fn is_fine<const D: usize>(v: &Region<D>, set: &[Region<D>]) -> bool {
    !set.iter().any(|u| v.strictly_contains(u))
}

/// Merge agents' graphs: deduplicate regions, keep the fine ones, rebuild
/// adjacency. Input order does not matter.
pub fn merge_graphs<const D: usize>(graphs: &[MultiResGraph<D>]) -> MultiResGraph<D> {
    assert!(!graphs.is_empty(), "merge needs at least one graph");
    let tree = Arc::clone(graphs[0].tree());
    let weights = graphs[0].weights();
    let union: Vec<Region<D>> = {
        let mut set: Vec<Region<D>> = graphs.iter().flat_map(|g| g.vertices().copied()).collect();
        set.sort();
        set.dedup();
        set
    };
    merge_regions(tree, weights, &union)
}

/// Merge an explicit region union into its fine tiling.
pub fn merge_regions<const D: usize>(
    tree: Arc<Tree<D>>,
    weights: CostWeights,
    union: &[Region<D>],
) -> MultiResGraph<D> {
    // Paint cells coarse-to-fine; a vertex is fine exactly when it still owns
    // every cell of its region afterwards.
    let side = tree.side();
    let cells = 1usize << (D as u32 * tree.depth() as u32);
    let mut paint: Vec<Option<Region<D>>> = vec![None; cells];
    let mut ordered: Vec<Region<D>> = union.to_vec();
    ordered.sort_by_key(|r| std::cmp::Reverse(r.depth));
    for region in &ordered {
        for cell in region.cells() {
            paint[cell_index(&cell, side)] = Some(*region);
        }
    }
    let fine: Vec<Region<D>> = union
        .iter()
        .copied()
        .filter(|r| r.cells().all(|c| paint[cell_index(&c, side)] == Some(*r)))
        .collect();
    MultiResGraph::from_vertices(tree, weights, fine)
}

/// Heuristic selector for the searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heuristic {
    /// h = 0 everywhere; turns A* into Dijkstra. The trusted oracle mode.
    Zero,
    /// `lambda2 * max(0, linf(center, goal_point) - side/2)`.
    ///
    /// Admissible for the volume-scaled cost model: entering a region of
    /// side `s` costs at least `lambda2 * s^d >= lambda2 * s`, while it
    /// advances the Chebyshev distance to the goal point by at most `s`
    /// plus half the side of the region being left, and the two half-side
    /// slacks telescope along any path.
    ScaledChebyshev,
}

impl Heuristic {
    pub fn evaluate<const D: usize>(
        &self,
        v: &Region<D>,
        goal_point: &Point<D>,
        lambda2: f64,
    ) -> f64 {
        match self {
            Heuristic::Zero => 0.0,
            Heuristic::ScaledChebyshev => {
                let slack = v.side() as f64 / 2.0;
                lambda2 * (linf(&v.center(), goal_point) - slack).max(0.0)
            }
        }
    }
}

/// A path through a region graph with its accumulated cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Path<const D: usize> {
    pub vertices: Vec<Region<D>>,
    pub cost: f64,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("start vertex {0} is not in the graph")]
    StartNotInGraph(String),
    #[error("goal vertex {0} is not in the graph")]
    GoalNotInGraph(String),
}

/// Everything A* did, whether or not a path came out of it.
#[derive(Debug, Clone)]
pub struct SearchOutcome<const D: usize> {
    pub path: Option<Path<D>>,
    /// Vertices in expansion (pop) order, goal included.
    pub expanded: Vec<Region<D>>,
}

/// Priority-queue entry ordered for deterministic pops: lowest f first, then
/// highest g, then smallest region id. `BinaryHeap` is a max-heap, so the
/// ordering is inverted where needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct QueueEntry<const D: usize> {
    pub f: f64,
    pub g: f64,
    pub region: Region<D>,
}

impl<const D: usize> Eq for QueueEntry<D> {}

impl<const D: usize> Ord for QueueEntry<D> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then_with(|| other.region.cmp(&self.region))
    }
}

impl<const D: usize> PartialOrd for QueueEntry<D> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Standard A* from `start` to `goal` over a region graph. Requires the
/// heuristic to be admissible for the graph's cost model.
pub fn astar<const D: usize>(
    graph: &MultiResGraph<D>,
    start: Region<D>,
    goal: Region<D>,
    heuristic: Heuristic,
    goal_point: &Point<D>,
) -> Result<SearchOutcome<D>, SearchError> {
    if !graph.contains(&start) {
        return Err(SearchError::StartNotInGraph(format!("{start:?}")));
    }
    if !graph.contains(&goal) {
        return Err(SearchError::GoalNotInGraph(format!("{goal:?}")));
    }
    let lambda2 = graph.weights().lambda2;
    let h = |v: &Region<D>| heuristic.evaluate(v, goal_point, lambda2);

    let mut g: HashMap<Region<D>, f64> = HashMap::new();
    let mut pred: HashMap<Region<D>, Region<D>> = HashMap::new();
    let mut closed: HashSet<Region<D>> = HashSet::new();
    let mut open: BinaryHeap<QueueEntry<D>> = BinaryHeap::new();
    let mut expanded: Vec<Region<D>> = Vec::new();

    if graph.entry_cost(&start).is_none() {
        // An impassable start has no outgoing traversal semantics.
        return Ok(SearchOutcome { path: None, expanded });
    }

    g.insert(start, 0.0);
    open.push(QueueEntry { f: h(&start), g: 0.0, region: start });

    while let Some(entry) = open.pop() {
        let s = entry.region;
        if closed.contains(&s) || g.get(&s) != Some(&entry.g) {
            continue; // stale entry
        }
        expanded.push(s);
        if s == goal {
            let mut vertices = vec![s];
            let mut cur = s;
            while cur != start {
                cur = pred[&cur];
                vertices.push(cur);
            }
            vertices.reverse();
            return Ok(SearchOutcome { path: Some(Path { vertices, cost: entry.g }), expanded });
        }
        closed.insert(s);
        for n in graph.neighbors(&s) {
            if closed.contains(n) {
                continue;
            }
            let Some(step) = graph.entry_cost(n) else { continue };
            let cand = entry.g + step;
            if g.get(n).map_or(true, |&cur| cand < cur) {
                g.insert(*n, cand);
                pred.insert(*n, s);
                open.push(QueueEntry { f: cand + h(n), g: cand, region: *n });
            }
        }
    }
    Ok(SearchOutcome { path: None, expanded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{build_abstraction, AgentConfig};
    use crate::world::{build_tree, OccupancyMap};

    fn tree_from(cells: Vec<f64>, depth: u8) -> Arc<Tree<2>> {
        build_tree(&OccupancyMap::<2>::new(depth, cells).unwrap())
    }

    fn zero_tree(depth: u8) -> Arc<Tree<2>> {
        tree_from(vec![0.0; 1usize << (2 * depth as u32)], depth)
    }

    #[test]
    fn fine_vertex_examples() {
        let unit: Region<2> = Region::cell([0, 0]);
        let parent: Region<2> = Region::new(1, [0, 0]);
        let grand: Region<2> = Region::new(2, [0, 0]);
        // A unit cell is fine in any set.
        assert!(is_fine(&unit, &[unit, parent, grand]));
        // A depth-1 vertex next to one of its children is coarse.
        assert!(!is_fine(&parent, &[parent, unit]));
        // Strict containment is enough; direct parenthood is not required.
        assert!(!is_fine(&grand, &[grand, unit]));
        assert!(is_fine(&grand, &[grand, Region::cell([4, 4])]));
    }

    #[test]
    fn merging_a_single_graph_is_identity() {
        let tree = zero_tree(3);
        let config =
            AgentConfig::new(0, [0.5, 0.5], 1.0, CostWeights::default(), 3).unwrap();
        let graph = build_abstraction(&tree, &config);
        let merged = merge_graphs(std::slice::from_ref(&graph));
        let a: Vec<_> = graph.vertices().copied().collect();
        let b: Vec<_> = merged.vertices().copied().collect();
        assert_eq!(a, b);
        for v in graph.vertices() {
            assert_eq!(graph.neighbors(v), merged.neighbors(v));
        }
    }

    #[test]
    fn coarse_vertex_gives_way_to_finer_cover() {
        // Two hand-built tilings of a 4x4 world: one keeps the north-east
        // quadrant coarse, the other refines it. The merged graph replaces
        // the coarse vertex with the four finer ones.
        let tree = zero_tree(2);
        let coarse_quad: Region<2> = Region::new(1, [2, 2]);
        let mut tiles_a: Vec<Region<2>> = vec![coarse_quad];
        for q in [[0, 0], [2, 0], [0, 2]] {
            tiles_a.extend(Region::<2>::new(1, q).children());
        }
        let tiles_b: Vec<Region<2>> = (0..4)
            .flat_map(|qy| (0..4).map(move |qx| Region::cell([qx, qy])))
            .collect();
        let a = MultiResGraph::from_vertices(Arc::clone(&tree), CostWeights::default(), tiles_a);
        let b = MultiResGraph::from_vertices(Arc::clone(&tree), CostWeights::default(), tiles_b);
        let merged = merge_graphs(&[a, b]);
        assert!(!merged.contains(&coarse_quad));
        for kid in coarse_quad.children() {
            assert!(merged.contains(&kid));
        }
        assert_eq!(merged.covered_volume(), 16);
    }

    #[test]
    fn merge_matches_the_brute_force_containment_oracle() {
        let tree = zero_tree(4);
        let positions = [[0.5, 0.5], [15.5, 15.5], [8.0, 3.0]];
        let graphs: Vec<_> = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let c = AgentConfig::new(i, p, 1.0, CostWeights::default(), 4).unwrap();
                build_abstraction(&tree, &c)
            })
            .collect();
        let merged = merge_graphs(&graphs);

        // Oracle: O(n^2) pairwise strict-containment filter over the union.
        let mut union: Vec<Region<2>> =
            graphs.iter().flat_map(|g| g.vertices().copied()).collect();
        union.sort();
        union.dedup();
        let mut expect: Vec<Region<2>> =
            union.iter().copied().filter(|v| is_fine(v, &union)).collect();
        expect.sort();

        let got: Vec<Region<2>> = merged.vertices().copied().collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn merge_is_idempotent_and_order_independent() {
        let tree = zero_tree(3);
        let graphs: Vec<_> = [[0.5, 7.5], [6.5, 1.5]]
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let c = AgentConfig::new(i, p, 0.8, CostWeights::default(), 3).unwrap();
                build_abstraction(&tree, &c)
            })
            .collect();
        let ab = merge_graphs(&graphs);
        let ba = merge_graphs(&[graphs[1].clone(), graphs[0].clone()]);
        let twice = merge_graphs(std::slice::from_ref(&ab));
        let v1: Vec<_> = ab.vertices().copied().collect();
        let v2: Vec<_> = ba.vertices().copied().collect();
        let v3: Vec<_> = twice.vertices().copied().collect();
        assert_eq!(v1, v2);
        assert_eq!(v1, v3);
    }

    #[test]
    fn astar_identity_when_start_is_goal() {
        let tree = zero_tree(1);
        let graph = MultiResGraph::flat(tree, CostWeights::default());
        let cell = Region::cell([0, 0]);
        let out = astar(&graph, cell, cell, Heuristic::Zero, &[0.5, 0.5]).unwrap();
        let path = out.path.unwrap();
        assert_eq!(path.cost, 0.0);
        assert_eq!(path.vertices, vec![cell]);
    }

    #[test]
    fn astar_matches_exhaustive_enumeration_on_the_free_square() {
        // 2x2 free map, corner to opposite corner: two unit moves at
        // lambda2 each. Oracle: enumerate all simple paths.
        let tree = zero_tree(1);
        let graph = MultiResGraph::flat(Arc::clone(&tree), CostWeights::default());
        let start = Region::cell([0, 0]);
        let goal = Region::cell([1, 1]);

        fn enumerate(
            graph: &MultiResGraph<2>,
            at: Region<2>,
            goal: Region<2>,
            seen: &mut Vec<Region<2>>,
            cost: f64,
            best: &mut f64,
        ) {
            if at == goal {
                *best = best.min(cost);
                return;
            }
            for n in graph.neighbors(&at).to_vec() {
                if seen.contains(&n) {
                    continue;
                }
                let step = graph.entry_cost(&n).unwrap();
                seen.push(n);
                enumerate(graph, n, goal, seen, cost + step, best);
                seen.pop();
            }
        }
        let mut best = f64::INFINITY;
        enumerate(&graph, start, goal, &mut vec![start], 0.0, &mut best);
        assert!((best - 0.002).abs() < 1e-15);

        let out = astar(&graph, start, goal, Heuristic::Zero, &[1.5, 1.5]).unwrap();
        assert!((out.path.unwrap().cost - best).abs() < 1e-15);
    }

    #[test]
    fn astar_routes_around_expensive_cells_like_dijkstra() {
        // Goal pocket guarded by risk-1-adjacent cells (0.999) versus a
        // cheap detour; verify cost equals an independent Dijkstra.
        #[rustfmt::skip]
        let cells = vec![
            0.0, 0.999, 0.0, 0.0,
            0.0, 0.999, 0.0, 0.0,
            0.0, 0.999, 0.999, 0.0,
            0.0, 0.0,   0.0,  0.0,
        ];
        let tree = tree_from(cells, 2);
        let graph = MultiResGraph::flat(Arc::clone(&tree), CostWeights::default());
        let start = Region::cell([0, 0]);
        let goal = Region::cell([3, 0]);

        // Plain Dijkstra, no machinery shared with astar. Non-negative f64
        // bit patterns order like the values, so bits work as heap keys.
        let mut dist: HashMap<Region<2>, f64> = HashMap::new();
        let mut heap: BinaryHeap<(std::cmp::Reverse<u64>, Region<2>)> = BinaryHeap::new();
        dist.insert(start, 0.0);
        heap.push((std::cmp::Reverse(0.0f64.to_bits()), start));
        while let Some((std::cmp::Reverse(k), v)) = heap.pop() {
            let dv = f64::from_bits(k);
            if dist.get(&v) != Some(&dv) {
                continue;
            }
            for n in graph.neighbors(&v) {
                let Some(c) = graph.entry_cost(n) else { continue };
                let cand = dv + c;
                if dist.get(n).map_or(true, |&cur| cand < cur) {
                    dist.insert(*n, cand);
                    heap.push((std::cmp::Reverse(cand.to_bits()), *n));
                }
            }
        }

        let out = astar(&graph, start, goal, Heuristic::Zero, &goal.center()).unwrap();
        let a = out.path.unwrap().cost;
        assert!((a - dist[&goal]).abs() < 1e-12);
        let out2 =
            astar(&graph, start, goal, Heuristic::ScaledChebyshev, &goal.center()).unwrap();
        assert!((out2.path.unwrap().cost - a).abs() < 1e-12);
    }

    #[test]
    fn unreachable_goal_reports_no_path() {
        // Wall of exact 1.0 risk separates the two columns.
        #[rustfmt::skip]
        let cells = vec![
            0.0, 1.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
        ];
        let tree = tree_from(cells, 2);
        let graph = MultiResGraph::flat(tree, CostWeights::default());
        let out = astar(
            &graph,
            Region::cell([0, 0]),
            Region::cell([3, 3]),
            Heuristic::Zero,
            &[3.5, 3.5],
        )
        .unwrap();
        assert!(out.path.is_none());
        assert!(!out.expanded.is_empty());
    }

    #[test]
    fn missing_endpoints_are_errors() {
        let tree = zero_tree(1);
        let graph = MultiResGraph::flat(tree, CostWeights::default());
        let inside = Region::cell([0, 0]);
        let outside = Region::cell([7, 7]);
        assert!(matches!(
            astar(&graph, outside, inside, Heuristic::Zero, &[0.5, 0.5]),
            Err(SearchError::StartNotInGraph(_))
        ));
        assert!(matches!(
            astar(&graph, inside, outside, Heuristic::Zero, &[0.5, 0.5]),
            Err(SearchError::GoalNotInGraph(_))
        ));
    }

    #[test]
    fn scaled_chebyshev_never_exceeds_true_cost_to_go() {
        // Admissibility oracle: reverse Dijkstra from the goal. Note the
        // uncorrected center-to-center form would fail this on mixed
        // resolutions, which is why the half-side slack exists.
        let tree = tree_from(
            (0..64).map(|i| (i % 7) as f64 / 10.0).collect::<Vec<_>>(),
            3,
        );
        let config =
            AgentConfig::new(0, [0.5, 0.5], 1.0, CostWeights::default(), 3).unwrap();
        let graph = build_abstraction(&tree, &config);
        let goal_point = [7.5, 7.5];
        let goal = graph.locate(&goal_point).unwrap();

        // True cost-to-go: Dijkstra over reversed edges (cost of entering
        // the head still applies).
        let mut dist: HashMap<Region<2>, f64> = HashMap::new();
        let mut heap: BinaryHeap<QueueEntry<2>> = BinaryHeap::new();
        dist.insert(goal, 0.0);
        heap.push(QueueEntry { f: 0.0, g: 0.0, region: goal });
        while let Some(QueueEntry { g, region, .. }) = heap.pop() {
            if dist.get(&region) != Some(&g) {
                continue;
            }
            // Walking backwards, the forward edge u -> region pays the cost
            // of entering `region`.
            let step = match graph.entry_cost(&region) {
                Some(c) => c,
                None => continue,
            };
            for u in graph.neighbors(&region) {
                let cand = g + step;
                if dist.get(u).map_or(true, |&cur| cand < cur) {
                    dist.insert(*u, cand);
                    heap.push(QueueEntry { f: cand, g: cand, region: *u });
                }
            }
        }

        let lambda2 = graph.weights().lambda2;
        for v in graph.vertices() {
            if let Some(&true_cost) = dist.get(v) {
                let h = Heuristic::ScaledChebyshev.evaluate(v, &goal_point, lambda2);
                assert!(
                    h <= true_cost + 1e-12,
                    "inadmissible at {v:?}: h={h} > cost-to-go={true_cost}"
                );
            }
        }
    }
}
