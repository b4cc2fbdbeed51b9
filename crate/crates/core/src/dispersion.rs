//! Quality filtering and diverse subset selection over tour pools.
//!
//! A candidate pool is first filtered to tours within a factor `c` of the
//! reference optimum. From the survivors, a greedy furthest-insertion pass
//! picks `k` tours: it seeds with one tour, then repeatedly adds the
//! candidate whose edges were seen least among the already-selected tours.
//! That score is maintained in an edge-frequency map, so each round costs
//! one pass over the remaining candidates instead of a pairwise sweep.
//!
//! The frequency score sums raw intersection counts, which is a monotone
//! surrogate for the pairwise Jaccard sum (equal-size edge sets make Jaccard
//! monotone in the intersection per pair, but the sum over pairs is not an
//! affine function of the summed intersections). The exhaustive oracle in
//! [`greedy_select_bruteforce_oracle`] quantifies the gap on small pools.

use crate::construction::Tour;
use crate::instance::{edge_index, EdgeId};
use crate::reference::ReferenceCost;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DispersionError {
    #[error("tours have different sizes: {a} vs {b}")]
    SizeMismatch { a: usize, b: usize },
    #[error("dispersion factor must be >= 1, got {c}")]
    InvalidFactor { c: f64 },
    #[error("pool has only {available} distinct tours after filtering, need {needed}")]
    InsufficientPool { needed: usize, available: usize },
    #[error("pairwise statistics need at least 2 tours, got {count}")]
    TooFewTours { count: usize },
    #[error("subset enumeration budget exceeded: C({m},{k}) > {budget}")]
    BudgetExceeded { m: usize, k: usize, budget: u64 },
}

/// Jaccard similarity of two sorted edge sets: |A ∩ B| / |A ∪ B|.
pub fn edge_set_jaccard(a: &[EdgeId], b: &[EdgeId]) -> f64 {
    let (mut i, mut j, mut shared) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - shared;
    if union == 0 {
        return 1.0;
    }
    shared as f64 / union as f64
}

/// Jaccard similarity of two tours' edge sets. With both sets of size n this
/// equals m / (2n - m) for intersection size m; 1 on identical tours, 0 on
/// edge-disjoint ones.
pub fn jaccard(a: &Tour, b: &Tour) -> Result<f64, DispersionError> {
    if a.n() != b.n() {
        return Err(DispersionError::SizeMismatch { a: a.n(), b: b.n() });
    }
    Ok(edge_set_jaccard(a.edge_set(), b.edge_set()))
}

/// A candidate pool tied to its instance and reference cost.
#[derive(Debug, Clone)]
pub struct SolutionPool {
    pub instance: String,
    pub tours: Vec<Tour>,
    pub reference: ReferenceCost,
}

/// The survivors of a cost filter at factor `c`, in original pool order.
#[derive(Debug, Clone)]
pub struct FilteredPool {
    pub instance: String,
    pub tours: Vec<Tour>,
    pub c: f64,
    pub reference: ReferenceCost,
}

/// Keeps tours with cost <= c x reference, preserving pool order. An empty
/// result is legal.
pub fn cost_filter(pool: &SolutionPool, c: f64) -> Result<FilteredPool, DispersionError> {
    if !(c >= 1.0) {
        return Err(DispersionError::InvalidFactor { c });
    }
    let threshold = c * pool.reference.value;
    let tours = pool
        .tours
        .iter()
        .filter(|t| t.cost() <= threshold)
        .cloned()
        .collect();
    Ok(FilteredPool {
        instance: pool.instance.clone(),
        tours,
        c,
        reference: pool.reference,
    })
}

/// How the first tour of a greedy selection is picked.
pub enum FirstTour<'a> {
    /// Lowest pool index (deterministic default).
    Lowest,
    /// Uniformly among the distinct tours.
    Random(&'a mut ChaCha8Rng),
}

/// A selected k-subset with its pairwise Jaccard statistics.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// Indices into the filtered pool, in selection order.
    pub indices: Vec<usize>,
    pub tours: Vec<Tour>,
    pub avg_jaccard: f64,
    pub std_jaccard: f64,
    pub c: f64,
    pub k: usize,
}

/// Mean and population standard deviation of Jaccard over all unordered
/// pairs.
pub fn pairwise_stats(tours: &[Tour]) -> Result<(f64, f64), DispersionError> {
    if tours.len() < 2 {
        return Err(DispersionError::TooFewTours { count: tours.len() });
    }
    let mut values = Vec::with_capacity(tours.len() * (tours.len() - 1) / 2);
    for i in 0..tours.len() {
        for j in (i + 1)..tours.len() {
            values.push(jaccard(&tours[i], &tours[j])?);
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    Ok((mean, var.sqrt()))
}

fn stats_with_convention(tours: &[Tour]) -> Result<(f64, f64), DispersionError> {
    if tours.len() < 2 {
        // single tour: no pairs, zero by convention
        return Ok((0.0, 0.0));
    }
    pairwise_stats(tours)
}

/// Number of pairwise-distinct edge sets in a pool.
pub fn distinct_edge_sets(tours: &[Tour]) -> usize {
    distinct_indices(tours).len()
}

/// Positions of pool tours with pairwise-distinct edge sets, keeping the
/// first occurrence of each set.
fn distinct_indices(tours: &[Tour]) -> Vec<usize> {
    let mut seen: std::collections::HashSet<&[EdgeId]> = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (i, t) in tours.iter().enumerate() {
        if seen.insert(t.edge_set()) {
            out.push(i);
        }
    }
    out
}

/// Greedy furthest insertion: deduplicates identical edge sets, seeds with
/// one tour, then k-1 times adds the candidate minimizing the summed
/// frequency of its edges among the selected tours (ties to the lowest pool
/// index), updating the frequency map after each pick.
pub fn greedy_select(
    pool: &FilteredPool,
    k: usize,
    first: FirstTour<'_>,
) -> Result<SelectionResult, DispersionError> {
    let distinct = distinct_indices(&pool.tours);
    if distinct.len() < k || k == 0 {
        return Err(DispersionError::InsufficientPool {
            needed: k,
            available: distinct.len(),
        });
    }
    let n = pool.tours[distinct[0]].n();
    let mut freq = vec![0u32; n * (n - 1) / 2];
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut remaining: Vec<usize> = distinct;

    let seed_pos = match first {
        FirstTour::Lowest => 0,
        FirstTour::Random(rng) => rng.random_range(0..remaining.len()),
    };
    let seed = remaining.remove(seed_pos);
    for e in pool.tours[seed].edge_set() {
        freq[edge_index(n, *e)] += 1;
    }
    selected.push(seed);

    for _ in 1..k {
        let mut best_pos = 0;
        let mut best_score = u64::MAX;
        for (pos, &cand) in remaining.iter().enumerate() {
            let score: u64 = pool.tours[cand]
                .edge_set()
                .iter()
                .map(|e| u64::from(freq[edge_index(n, *e)]))
                .sum();
            if score < best_score {
                best_score = score;
                best_pos = pos;
            }
        }
        let winner = remaining.remove(best_pos);
        for e in pool.tours[winner].edge_set() {
            freq[edge_index(n, *e)] += 1;
        }
        selected.push(winner);
    }

    let tours: Vec<Tour> = selected.iter().map(|&i| pool.tours[i].clone()).collect();
    let (avg, std) = stats_with_convention(&tours)?;
    Ok(SelectionResult {
        indices: selected,
        tours,
        avg_jaccard: avg,
        std_jaccard: std,
        c: pool.c,
        k,
    })
}

fn binomial(m: u64, k: u64) -> u64 {
    if k > m {
        return 0;
    }
    let k = k.min(m - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc.saturating_mul(m - i) / (i + 1);
    }
    acc
}

const ORACLE_BUDGET: u64 = 1_000_000;

/// Exhaustive minimizer of the average pairwise Jaccard over all k-subsets
/// of the distinct tours; ties go to the lexicographically smallest index
/// set. Test oracle for the greedy's approximation quality.
pub fn greedy_select_bruteforce_oracle(
    pool: &FilteredPool,
    k: usize,
) -> Result<SelectionResult, DispersionError> {
    let distinct = distinct_indices(&pool.tours);
    let m = distinct.len();
    if m < k || k == 0 {
        return Err(DispersionError::InsufficientPool {
            needed: k,
            available: m,
        });
    }
    if binomial(m as u64, k as u64) > ORACLE_BUDGET {
        return Err(DispersionError::BudgetExceeded {
            m,
            k,
            budget: ORACLE_BUDGET,
        });
    }
    // precompute pairwise similarities among distinct tours
    let mut sim = vec![0.0; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let v = jaccard(&pool.tours[distinct[i]], &pool.tours[distinct[j]])?;
            sim[i * m + j] = v;
            sim[j * m + i] = v;
        }
    }

    fn next_combination(subset: &mut [usize], m: usize) -> bool {
        let k = subset.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if subset[i] != i + m - k {
                subset[i] += 1;
                for j in (i + 1)..k {
                    subset[j] = subset[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }

    let mut best_subset: Vec<usize> = (0..k).collect();
    let mut best_sum = f64::INFINITY;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let mut sum = 0.0;
        for a in 0..k {
            for b in (a + 1)..k {
                sum += sim[subset[a] * m + subset[b]];
            }
        }
        // lexicographic enumeration plus strict improvement keeps the
        // lexicographically smallest optimal subset
        if sum < best_sum {
            best_sum = sum;
            best_subset = subset.clone();
        }
        if !next_combination(&mut subset, m) {
            break;
        }
    }

    let indices: Vec<usize> = best_subset.iter().map(|&p| distinct[p]).collect();
    let tours: Vec<Tour> = indices.iter().map(|&i| pool.tours[i].clone()).collect();
    let (avg, std) = stats_with_convention(&tours)?;
    Ok(SelectionResult {
        indices,
        tours,
        avg_jaccard: avg,
        std_jaccard: std,
        c: pool.c,
        k,
    })
}
