//! Euclidean TSP instances: loading, generation, normalization, edge weights.
//!
//! Instances are immutable after construction and safe to share across
//! threads. Coordinates may be raw (as parsed) or normalized to the unit
//! square; [`normalize`] translates the bounding box to the origin and scales
//! both axes by the single larger side, preserving aspect ratio.
//!
//! TSPLIB support is limited to `TYPE: TSP` with `EDGE_WEIGHT_TYPE: EUC_2D`.
//! Distances are *not* rounded to integers: the pipeline operates in
//! normalized coordinates, so TSPLIB's integer-rounding convention is
//! deliberately dropped. Registry costs (see [`parse_registry`]) are
//! therefore expected in normalized units.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

/// Instances up to this size carry a precomputed n×n weight matrix;
/// above it, weights are computed on demand.
const WEIGHT_MATRIX_CEILING: usize = 2048;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("instance needs at least {min} vertices, got {n}")]
    InvalidSize { n: usize, min: usize },
    #[error("coordinate {index} is not finite")]
    NonFiniteCoordinate { index: usize },
    #[error("all points coincide; normalization is undefined")]
    DegenerateGeometry,
    #[error("vertex {index} out of range for instance of size {n}")]
    VertexOutOfRange { index: usize, n: usize },
    #[error("line {line_no}: malformed TSPLIB record: {content:?}")]
    MalformedLine { line_no: usize, content: String },
    #[error("line {line_no}: unsupported TYPE {value:?} (only TSP is supported)")]
    UnsupportedType { line_no: usize, value: String },
    #[error("line {line_no}: unsupported EDGE_WEIGHT_TYPE {value:?} (only EUC_2D is supported)")]
    UnsupportedWeightType { line_no: usize, value: String },
    #[error("DIMENSION is {expected} but {actual} coordinate records were found")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("missing {keyword} in TSPLIB header")]
    MissingKeyword { keyword: &'static str },
    #[error("line {line_no}: malformed registry record: {content:?}")]
    RegistryLine { line_no: usize, content: String },
}

/// A canonical undirected edge: endpoints stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId {
    u: usize,
    v: usize,
}

impl EdgeId {
    /// Builds the canonical edge between two distinct vertices.
    pub fn new(a: usize, b: usize) -> Self {
        assert!(a != b, "self-loop ({a},{a}) is not a valid edge");
        if a < b {
            Self { u: a, v: b }
        } else {
            Self { u: b, v: a }
        }
    }

    pub fn u(&self) -> usize {
        self.u
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.u, self.v)
    }
}

impl std::fmt::Display for EdgeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.u, self.v)
    }
}

/// All canonical edges of the complete graph on `n` vertices, in
/// lexicographic order.
pub fn all_edges(n: usize) -> Vec<EdgeId> {
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for u in 0..n {
        for v in (u + 1)..n {
            edges.push(EdgeId::new(u, v));
        }
    }
    edges
}

/// Position of a canonical edge in the [`all_edges`] enumeration.
pub fn edge_index(n: usize, e: EdgeId) -> usize {
    let (u, v) = e.endpoints();
    debug_assert!(v < n);
    u * (2 * n - u - 1) / 2 + (v - u - 1)
}

/// A complete Euclidean TSP instance.
#[derive(Debug, Clone)]
pub struct Instance {
    name: String,
    coords: Vec<[f64; 2]>,
    best_known_cost: Option<f64>,
    weights: Option<Vec<f64>>,
}

impl Instance {
    /// Builds an instance from raw coordinates. Requires n ≥ 3 and finite
    /// coordinates; does not normalize.
    pub fn new(
        name: impl Into<String>,
        coords: Vec<[f64; 2]>,
        best_known_cost: Option<f64>,
    ) -> Result<Self, InstanceError> {
        let n = coords.len();
        if n < 3 {
            return Err(InstanceError::InvalidSize { n, min: 3 });
        }
        for (index, c) in coords.iter().enumerate() {
            if !(c[0].is_finite() && c[1].is_finite()) {
                return Err(InstanceError::NonFiniteCoordinate { index });
            }
        }
        let weights = (n <= WEIGHT_MATRIX_CEILING).then(|| {
            let mut w = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = euclidean(coords[i], coords[j]);
                    w[i * n + j] = d;
                    w[j * n + i] = d;
                }
            }
            w
        });
        Ok(Self {
            name: name.into(),
            coords,
            best_known_cost,
            weights,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn coord(&self, v: usize) -> [f64; 2] {
        self.coords[v]
    }

    pub fn best_known_cost(&self) -> Option<f64> {
        self.best_known_cost
    }

    pub fn with_best_known(mut self, cost: f64) -> Self {
        self.best_known_cost = Some(cost);
        self
    }

    /// Euclidean distance between two vertices. Panics on out-of-range
    /// indices; use [`edge_weight`] for a checked lookup.
    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i * self.coords.len() + j],
            None => euclidean(self.coords[i], self.coords[j]),
        }
    }
}

#[inline]
fn euclidean(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Weight of a canonical edge, with bounds checking.
pub fn edge_weight(inst: &Instance, e: EdgeId) -> Result<f64, InstanceError> {
    let (u, v) = e.endpoints();
    if v >= inst.n() {
        return Err(InstanceError::VertexOutOfRange {
            index: v.max(u),
            n: inst.n(),
        });
    }
    Ok(inst.dist(u, v))
}

/// Length of the closed cycle visiting `order` and returning to its start.
pub fn cycle_cost(inst: &Instance, order: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..order.len() {
        let j = (i + 1) % order.len();
        total += inst.dist(order[i], order[j]);
    }
    total
}

/// Normalizes coordinates in place: bounding-box minimum to the origin, both
/// axes divided by the larger bounding-box side. Fails when all points
/// coincide.
pub fn normalize_coords(coords: &mut [[f64; 2]]) -> Result<(), InstanceError> {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in coords.iter() {
        min_x = min_x.min(c[0]);
        min_y = min_y.min(c[1]);
        max_x = max_x.max(c[0]);
        max_y = max_y.max(c[1]);
    }
    let side = (max_x - min_x).max(max_y - min_y);
    if side <= 0.0 {
        return Err(InstanceError::DegenerateGeometry);
    }
    for c in coords.iter_mut() {
        c[0] = (c[0] - min_x) / side;
        c[1] = (c[1] - min_y) / side;
    }
    Ok(())
}

/// Returns a normalized copy of the instance; relative distances are scaled
/// by one global factor, so tour structure is unchanged.
pub fn normalize(inst: &Instance) -> Result<Instance, InstanceError> {
    let mut coords = inst.coords.clone();
    normalize_coords(&mut coords)?;
    Instance::new(inst.name.clone(), coords, inst.best_known_cost)
}

/// Samples `n` vertices uniformly from the unit square.
pub fn random_instance(n: usize, rng: &mut ChaCha8Rng) -> Result<Instance, InstanceError> {
    if n < 3 {
        return Err(InstanceError::InvalidSize { n, min: 3 });
    }
    let coords = (0..n)
        .map(|_| {
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            [x, y]
        })
        .collect();
    Instance::new(format!("random{n}"), coords, None)
}

/// Parses the TSPLIB keyword format (EUC_2D node-coordinate instances only).
/// Coordinates are returned raw; apply [`normalize`] before running the
/// pipeline. TSPLIB's 1-based vertex indices are remapped to 0-based.
pub fn parse_tsplib(text: &str) -> Result<Instance, InstanceError> {
    let mut name = String::new();
    let mut dimension: Option<usize> = None;
    let mut weight_type_seen = false;
    let mut coords: Vec<Option<[f64; 2]>> = Vec::new();
    let mut in_coords = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "EOF" {
            break;
        }
        if in_coords {
            let mut it = line.split_whitespace();
            let (a, b, c) = (it.next(), it.next(), it.next());
            let (Some(a), Some(b), Some(c)) = (a, b, c) else {
                return Err(InstanceError::MalformedLine {
                    line_no,
                    content: line.to_string(),
                });
            };
            let malformed = || InstanceError::MalformedLine {
                line_no,
                content: line.to_string(),
            };
            let idx: usize = a.parse().map_err(|_| malformed())?;
            let x: f64 = b.parse().map_err(|_| malformed())?;
            let y: f64 = c.parse().map_err(|_| malformed())?;
            let dim = dimension.ok_or(InstanceError::MissingKeyword {
                keyword: "DIMENSION",
            })?;
            if idx == 0 || idx > dim {
                return Err(InstanceError::VertexOutOfRange { index: idx, n: dim });
            }
            coords[idx - 1] = Some([x, y]);
            continue;
        }
        if line == "NODE_COORD_SECTION" {
            let dim = dimension.ok_or(InstanceError::MissingKeyword {
                keyword: "DIMENSION",
            })?;
            coords = vec![None; dim];
            in_coords = true;
            continue;
        }
        let (keyword, value) = match line.split_once(':') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => (line, ""),
        };
        match keyword {
            "NAME" => name = value.to_string(),
            "TYPE" => {
                if value != "TSP" {
                    return Err(InstanceError::UnsupportedType {
                        line_no,
                        value: value.to_string(),
                    });
                }
            }
            "DIMENSION" => {
                let d: usize = value.parse().map_err(|_| InstanceError::MalformedLine {
                    line_no,
                    content: line.to_string(),
                })?;
                dimension = Some(d);
            }
            "EDGE_WEIGHT_TYPE" => {
                if value != "EUC_2D" {
                    return Err(InstanceError::UnsupportedWeightType {
                        line_no,
                        value: value.to_string(),
                    });
                }
                weight_type_seen = true;
            }
            // COMMENT and other informational keywords are ignored.
            _ => {}
        }
    }

    let dim = dimension.ok_or(InstanceError::MissingKeyword {
        keyword: "DIMENSION",
    })?;
    if !weight_type_seen {
        return Err(InstanceError::MissingKeyword {
            keyword: "EDGE_WEIGHT_TYPE",
        });
    }
    let filled: Vec<[f64; 2]> = coords.iter().copied().flatten().collect();
    if filled.len() != dim {
        return Err(InstanceError::DimensionMismatch {
            expected: dim,
            actual: filled.len(),
        });
    }
    Instance::new(name, filled, None)
}

/// Parses a best-known-cost registry: one `instance_name cost` per line,
/// costs in normalized units. Blank lines and `#` comments are skipped.
pub fn parse_registry(text: &str) -> Result<BTreeMap<String, f64>, InstanceError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let bad = || InstanceError::RegistryLine {
            line_no: i + 1,
            content: line.to_string(),
        };
        let name = it.next().ok_or_else(bad)?;
        let cost: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if it.next().is_some() || !cost.is_finite() || cost <= 0.0 {
            return Err(bad());
        }
        map.insert(name.to_string(), cost);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn square() -> Instance {
        Instance::new(
            "square",
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn edge_id_canonicalizes() {
        assert_eq!(EdgeId::new(3, 1), EdgeId::new(1, 3));
        assert_eq!(EdgeId::new(3, 1).endpoints(), (1, 3));
    }

    #[test]
    fn edge_index_matches_enumeration() {
        for n in [3, 4, 7, 12] {
            for (i, e) in all_edges(n).iter().enumerate() {
                assert_eq!(edge_index(n, *e), i);
            }
        }
    }

    #[test]
    fn weight_is_symmetric_and_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inst = random_instance(20, &mut rng).unwrap();
        for e in all_edges(20) {
            let (u, v) = e.endpoints();
            let direct = euclidean(inst.coord(u), inst.coord(v));
            assert_eq!(edge_weight(&inst, e).unwrap(), direct);
            assert_eq!(inst.dist(u, v), inst.dist(v, u));
        }
        assert_eq!(inst.dist(5, 5), 0.0);
    }

    #[test]
    fn weight_345_triangle() {
        let inst = Instance::new(
            "t",
            vec![[0.0, 0.0], [0.6, 0.8], [0.3, 0.3]],
            None,
        )
        .unwrap();
        let w = edge_weight(&inst, EdgeId::new(0, 1)).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edge_weight_checks_bounds() {
        let inst = square();
        assert!(matches!(
            edge_weight(&inst, EdgeId::new(0, 9)),
            Err(InstanceError::VertexOutOfRange { .. })
        ));
    }

    #[test]
    fn triangle_inequality_holds_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = random_instance(50, &mut rng).unwrap();
        let n = inst.n();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if i != j && j != k && i != k {
                        assert!(inst.dist(i, k) <= inst.dist(i, j) + inst.dist(j, k) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn normalize_scales_by_larger_side() {
        let mut coords = vec![[0.0, 0.0], [10.0, 5.0]];
        normalize_coords(&mut coords).unwrap();
        assert_eq!(coords, vec![[0.0, 0.0], [1.0, 0.5]]);
    }

    #[test]
    fn normalize_identity_on_unit_bbox() {
        let coords = vec![[0.0, 0.0], [1.0, 1.0], [0.25, 0.75]];
        let inst = Instance::new("id", coords.clone(), None).unwrap();
        let norm = normalize(&inst).unwrap();
        assert_eq!(norm.coords(), coords.as_slice());
    }

    #[test]
    fn normalize_handles_zero_y_range() {
        let mut coords = vec![[2.0, 2.0], [2.0, 2.0], [4.0, 2.0]];
        normalize_coords(&mut coords).unwrap();
        assert_eq!(coords, vec![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn normalize_rejects_coincident_points() {
        let mut coords = vec![[3.0, 3.0], [3.0, 3.0]];
        assert!(matches!(
            normalize_coords(&mut coords),
            Err(InstanceError::DegenerateGeometry)
        ));
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = Instance::new(
            "raw",
            (0..30)
                .map(|_| [rng.random::<f64>() * 900.0, rng.random::<f64>() * 400.0])
                .collect(),
            None,
        )
        .unwrap();
        let once = normalize(&inst).unwrap();
        let twice = normalize(&once).unwrap();
        for (a, b) in once.coords().iter().zip(twice.coords()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        for c in once.coords() {
            assert!((0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1]));
        }
    }

    #[test]
    fn random_instance_is_deterministic_and_in_range() {
        let a = random_instance(40, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_instance(40, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.coords(), b.coords());
        let big = random_instance(1000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(big
            .coords()
            .iter()
            .all(|c| (0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1])));
    }

    #[test]
    fn random_instance_rejects_tiny() {
        assert!(matches!(
            random_instance(2, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(InstanceError::InvalidSize { .. })
        ));
    }

    const SMALL_TSP: &str = "NAME: tiny\nTYPE: TSP\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n1 0.0 0.0\n2 3.0 0.0\n3 0.0 4.0\nEOF\n";

    #[test]
    fn parse_minimal_instance() {
        let inst = parse_tsplib(SMALL_TSP).unwrap();
        assert_eq!(inst.name(), "tiny");
        assert_eq!(inst.n(), 3);
        assert_eq!(inst.coords(), &[[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]);
    }

    #[test]
    fn parse_rejects_dimension_mismatch() {
        let text = "NAME: bad\nTYPE: TSP\nDIMENSION: 5\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 1 0\n3 0 1\n4 1 1\nEOF\n";
        assert!(matches!(
            parse_tsplib(text),
            Err(InstanceError::DimensionMismatch {
                expected: 5,
                actual: 4
            })
        ));
    }

    #[test]
    fn parse_rejects_unsupported_weight_type() {
        let text = SMALL_TSP.replace("EUC_2D", "GEO");
        match parse_tsplib(&text) {
            Err(InstanceError::UnsupportedWeightType { line_no, value }) => {
                assert_eq!(line_no, 4);
                assert_eq!(value, "GEO");
            }
            other => panic!("expected weight-type error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_malformed_coordinate_line() {
        let text = SMALL_TSP.replace("2 3.0 0.0", "2 oops");
        assert!(matches!(
            parse_tsplib(&text),
            Err(InstanceError::MalformedLine { line_no: 7, .. })
        ));
    }

    #[test]
    fn parse_is_deterministic() {
        let a = parse_tsplib(SMALL_TSP).unwrap();
        let b = parse_tsplib(SMALL_TSP).unwrap();
        assert_eq!(a.coords(), b.coords());
        assert_eq!(a.name(), b.name());
    }

    #[test]
    fn registry_roundtrip() {
        let reg = parse_registry("# comment\nberlin52 0.61\n\neil101 0.55\n").unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(reg["berlin52"], 0.61);
        assert!(parse_registry("berlin52 not-a-number\n").is_err());
        assert!(parse_registry("berlin52 -2.0\n").is_err());
    }
}
