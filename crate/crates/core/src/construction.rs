//! Tour construction from sampled spanning trees.
//!
//! Two routes produce Hamiltonian cycles. The first performs a randomized
//! depth-first traversal of the tree, choosing uniformly among unvisited
//! neighbors at every branch point; the visit order is the tour, which costs
//! at most twice the tree weight under the triangle inequality. The second
//! combines the tree with a perfect matching on its odd-degree vertices,
//! walks an Eulerian circuit of the multigraph (sub-circuit order randomized
//! uniformly), and shortcuts repeated vertices by first occurrence, costing
//! at most the tree weight plus the matching weight.
//!
//! Deterministic first-child traversal is also provided: distinct trees can
//! collapse onto one tour under it, which is exactly why the randomized
//! variants exist. [`traversal_collision_check`] reproduces that collapse
//! and verifies randomization breaks it.

use crate::instance::{cycle_cost, EdgeId, Instance, InstanceError};
use crate::policy::{Matching, SpanningTree};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error("order is not a permutation of 0..{n}")]
    NotPermutation { n: usize },
    #[error("tour requires at least 3 vertices, got {n}")]
    TooSmall { n: usize },
    #[error("vertex {vertex} has odd degree {degree}; Eulerian circuit needs all degrees even")]
    OddDegree { vertex: usize, degree: usize },
    #[error("multigraph support is disconnected: vertex {vertex} unreachable")]
    DisconnectedSupport { vertex: usize },
    #[error("matching does not cover exactly the tree's odd-degree set")]
    MatchingMismatch,
    #[error("tree has {tree_n} vertices but instance has {inst_n}")]
    SizeMismatch { tree_n: usize, inst_n: usize },
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// A Hamiltonian cycle: visit order, derived canonical edge set (sorted),
/// and total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    order: Vec<usize>,
    edges: Vec<EdgeId>,
    cost: f64,
}

impl Tour {
    pub fn from_order(inst: &Instance, order: Vec<usize>) -> Result<Self, ConstructionError> {
        let n = inst.n();
        if n < 3 {
            return Err(ConstructionError::TooSmall { n });
        }
        if order.len() != n {
            return Err(ConstructionError::NotPermutation { n });
        }
        let mut seen = vec![false; n];
        for &v in &order {
            if v >= n || seen[v] {
                return Err(ConstructionError::NotPermutation { n });
            }
            seen[v] = true;
        }
        let mut edges: Vec<EdgeId> = (0..n)
            .map(|i| EdgeId::new(order[i], order[(i + 1) % n]))
            .collect();
        edges.sort();
        debug_assert!(edges.windows(2).all(|w| w[0] != w[1]));
        let cost = cycle_cost(inst, &order);
        Ok(Self { order, edges, cost })
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Canonical edge set, sorted ascending.
    pub fn edge_set(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }
}

fn check_tree(tree: &SpanningTree, inst: &Instance) -> Result<(), ConstructionError> {
    if tree.n != inst.n() {
        return Err(ConstructionError::SizeMismatch {
            tree_n: tree.n,
            inst_n: inst.n(),
        });
    }
    Ok(())
}

fn tree_adjacency(tree: &SpanningTree) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); tree.n];
    for e in &tree.edges {
        adj[e.u()].push(e.v());
        adj[e.v()].push(e.u());
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    adj
}

/// Depth-first traversal of the tree from `start`; `pick` selects among the
/// current vertex's unvisited neighbors. The visit order is the tour.
fn double_tree_order(
    tree: &SpanningTree,
    start: usize,
    mut pick: impl FnMut(usize) -> usize,
) -> Vec<usize> {
    let adj = tree_adjacency(tree);
    let mut visited = vec![false; tree.n];
    let mut stack = vec![start];
    let mut order = Vec::with_capacity(tree.n);
    visited[start] = true;
    order.push(start);
    while let Some(&current) = stack.last() {
        let unvisited: Vec<usize> = adj[current]
            .iter()
            .copied()
            .filter(|&v| !visited[v])
            .collect();
        if unvisited.is_empty() {
            stack.pop();
            continue;
        }
        let next = unvisited[pick(unvisited.len())];
        visited[next] = true;
        order.push(next);
        stack.push(next);
    }
    order
}

/// Randomized double-tree construction: DFS from vertex 0 choosing uniformly
/// among unvisited tree neighbors, shortcutting by the visited set. The
/// resulting tour costs at most 2 x the tree weight.
pub fn randomized_double_tree(
    tree: &SpanningTree,
    inst: &Instance,
    rng: &mut ChaCha8Rng,
) -> Result<Tour, ConstructionError> {
    randomized_double_tree_from(tree, inst, 0, rng)
}

/// Randomized double-tree construction from a chosen start vertex; a
/// diversity knob, off (vertex 0) by default for reproducibility.
pub fn randomized_double_tree_from(
    tree: &SpanningTree,
    inst: &Instance,
    start: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tour, ConstructionError> {
    check_tree(tree, inst)?;
    if start >= tree.n {
        return Err(ConstructionError::Instance(
            crate::instance::InstanceError::VertexOutOfRange {
                index: start,
                n: tree.n,
            },
        ));
    }
    let order = double_tree_order(tree, start, |k| if k == 1 { 0 } else { rng.random_range(0..k) });
    Tour::from_order(inst, order)
}

/// Double-tree construction with deterministic first-child traversal
/// (always the smallest-index unvisited neighbor).
pub fn deterministic_double_tree(
    tree: &SpanningTree,
    inst: &Instance,
) -> Result<Tour, ConstructionError> {
    check_tree(tree, inst)?;
    let order = double_tree_order(tree, 0, |_| 0);
    Tour::from_order(inst, order)
}

/// Vertices with odd degree in the tree, sorted ascending. Always even in
/// count and at least 2 (every tree has leaves).
pub fn odd_degree_set(tree: &SpanningTree) -> Vec<usize> {
    tree.degrees()
        .iter()
        .enumerate()
        .filter_map(|(v, &d)| (d % 2 == 1).then_some(v))
        .collect()
}

/// Hierholzer's construction with a pluggable edge chooser; `pick(k)` selects
/// among the k unused incident edges at the current vertex.
fn eulerian_circuit_with(
    n: usize,
    multiedges: &[EdgeId],
    mut pick: impl FnMut(usize) -> usize,
) -> Result<Vec<usize>, ConstructionError> {
    // adjacency as (neighbor, edge slot) with a used flag per slot
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (slot, e) in multiedges.iter().enumerate() {
        adj[e.u()].push((e.v(), slot));
        adj[e.v()].push((e.u(), slot));
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    if let Some(vertex) = (0..n).find(|&v| degree[v] % 2 == 1) {
        return Err(ConstructionError::OddDegree {
            vertex,
            degree: degree[vertex],
        });
    }
    let Some(start) = (0..n).find(|&v| degree[v] > 0) else {
        return Err(ConstructionError::DisconnectedSupport { vertex: 0 });
    };

    let mut used = vec![false; multiedges.len()];
    let mut stack = vec![start];
    let mut circuit = Vec::with_capacity(multiedges.len() + 1);
    while let Some(&v) = stack.last() {
        let open: Vec<(usize, usize)> = adj[v]
            .iter()
            .copied()
            .filter(|&(_, slot)| !used[slot])
            .collect();
        if open.is_empty() {
            circuit.push(v);
            stack.pop();
        } else {
            let (next, slot) = open[pick(open.len())];
            used[slot] = true;
            degree[v] -= 1;
            degree[next] -= 1;
            stack.push(next);
        }
    }
    circuit.reverse();
    if circuit.len() != multiedges.len() + 1 {
        // some edges were unreachable from the start vertex
        let vertex = (0..n).find(|&v| degree[v] > 0).unwrap_or(0);
        return Err(ConstructionError::DisconnectedSupport { vertex });
    }
    Ok(circuit)
}

/// Closed walk traversing every multiedge exactly once, starting at the
/// smallest-index vertex with positive degree. Deterministic: unused edges
/// are taken in sorted neighbor order.
pub fn eulerian_circuit(n: usize, multiedges: &[EdgeId]) -> Result<Vec<usize>, ConstructionError> {
    eulerian_circuit_with(n, multiedges, |_| 0)
}

/// Christofides-style construction with a supplied matching: unions the tree
/// and the matching into a multigraph (duplicate edges kept), walks a
/// randomized Eulerian circuit, and shortcuts repeated vertices by first
/// occurrence. Cost is at most tree weight + matching weight.
pub fn christofides_variant(
    tree: &SpanningTree,
    matching: &Matching,
    inst: &Instance,
    rng: &mut ChaCha8Rng,
) -> Result<Tour, ConstructionError> {
    check_tree(tree, inst)?;
    let odd = odd_degree_set(tree);
    let covered: BTreeSet<usize> = matching
        .edges
        .iter()
        .flat_map(|e| [e.u(), e.v()])
        .collect();
    if matching.odd != odd || !covered.iter().eq(odd.iter()) {
        return Err(ConstructionError::MatchingMismatch);
    }
    let mut multiedges = tree.edges.clone();
    multiedges.extend_from_slice(&matching.edges);
    let walk = eulerian_circuit_with(tree.n, &multiedges, |k| {
        if k == 1 {
            0
        } else {
            rng.random_range(0..k)
        }
    })?;
    let mut seen = vec![false; tree.n];
    let mut order = Vec::with_capacity(tree.n);
    for v in walk {
        if !seen[v] {
            seen[v] = true;
            order.push(v);
        }
    }
    Tour::from_order(inst, order)
}

/// The two fixed trees used by [`traversal_collision_check`]: a star and a
/// broom on six vertices sharing exactly one edge, both of which
/// first-child traversal maps to the visit order 0..5.
pub fn collision_trees() -> (Instance, SpanningTree, SpanningTree) {
    // regular hexagon, scaled into the unit square
    let coords: Vec<[f64; 2]> = (0..6)
        .map(|i| {
            let angle = std::f64::consts::PI / 3.0 * i as f64;
            [0.5 + 0.5 * angle.cos(), 0.5 + 0.5 * angle.sin()]
        })
        .collect();
    let inst = Instance::new("collision6", coords, None).unwrap();
    let star = SpanningTree::try_new(
        6,
        (1..6).map(|v| EdgeId::new(0, v)).collect(),
    )
    .unwrap();
    let broom = SpanningTree::try_new(
        6,
        vec![
            EdgeId::new(0, 1),
            EdgeId::new(1, 2),
            EdgeId::new(2, 3),
            EdgeId::new(3, 4),
            EdgeId::new(3, 5),
        ],
    )
    .unwrap();
    (inst, star, broom)
}

/// Result of the deterministic-collapse check on [`collision_trees`].
#[derive(Debug, Clone, Copy)]
pub struct TraversalCollision {
    /// Deterministic traversal mapped both trees to the same tour edge set.
    pub deterministic_identical: bool,
    /// Distinct tour edge sets seen from the star under randomized traversal.
    pub distinct_star: usize,
    /// Distinct tour edge sets seen from the broom under randomized traversal.
    pub distinct_broom: usize,
}

/// Verifies that two near-disjoint trees collapse to one identical tour
/// under deterministic traversal, while randomized traversal over `seeds`
/// seeds recovers multiple distinct tours from each tree.
pub fn traversal_collision_check(seeds: u64) -> TraversalCollision {
    let (inst, star, broom) = collision_trees();
    let det_star = deterministic_double_tree(&star, &inst).unwrap();
    let det_broom = deterministic_double_tree(&broom, &inst).unwrap();
    let deterministic_identical = det_star.edge_set() == det_broom.edge_set();

    let distinct = |tree: &SpanningTree| {
        let mut sets = BTreeSet::new();
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tour = randomized_double_tree(tree, &inst, &mut rng).unwrap();
            sets.insert(tour.edge_set().to_vec());
        }
        sets.len()
    };
    TraversalCollision {
        deterministic_identical,
        distinct_star: distinct(&star),
        distinct_broom: distinct(&broom),
    }
}
