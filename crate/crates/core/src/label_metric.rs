//! Label spaces and ground distance matrices on them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for the symmetry and zero-diagonal checks.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Largest label space supported by the dense transport solver.
pub const MAX_LABELS: usize = 64;

/// Tumour tree metric on the five-class brain tumour label space
/// (background, necrotic core, edema, non-enhancing core, enhancing tumour).
pub const BRATS_TREE_MATRIX: [[f64; 5]; 5] = [
    [0.0, 1.0, 1.0, 1.0, 1.0],
    [1.0, 0.0, 0.6, 0.2, 0.5],
    [1.0, 0.6, 0.0, 0.6, 0.7],
    [1.0, 0.2, 0.6, 0.0, 0.5],
    [1.0, 0.5, 0.7, 0.5, 0.0],
];

pub const BRATS_LABEL_NAMES: [&str; 5] = [
    "background",
    "necrotic_core",
    "edema",
    "non_enhancing_core",
    "enhancing_tumour",
];

/// An ordered label set with ids `0..len` and a designated background label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
    background: usize,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>, background: usize) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidLabelSpace(format!(
                "need at least 2 labels, got {}",
                names.len()
            )));
        }
        if names.len() > MAX_LABELS {
            return Err(Error::InvalidLabelSpace(format!(
                "at most {MAX_LABELS} labels are supported, got {}",
                names.len()
            )));
        }
        if background >= names.len() {
            return Err(Error::InvalidLabelSpace(format!(
                "background id {background} is not a label (size {})",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(Error::InvalidLabelSpace(format!("label {i} has an empty name")));
            }
            if names[..i].contains(n) {
                return Err(Error::InvalidLabelSpace(format!("duplicate label name `{n}`")));
            }
        }
        Ok(Self { names, background })
    }

    /// Labels named `label_0 .. label_{n-1}` with background 0.
    pub fn anonymous(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| format!("label_{i}")), 0)
    }

    /// The five-class brain tumour label space, background 0.
    pub fn brats() -> Self {
        Self::new(BRATS_LABEL_NAMES, 0).expect("static label space is valid")
    }

    pub fn binary() -> Self {
        Self::new(["background", "foreground"], 0).expect("static label space is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn background(&self) -> usize {
        self.background
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// A validated ground distance matrix `M` on a [`LabelSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroundMetric {
    space: LabelSpace,
    m: Vec<f64>,
    extremal_violations: Vec<(usize, usize)>,
}

impl GroundMetric {
    /// Validates `rows` as a distance matrix on `space`.
    ///
    /// The matrix must be square of size `|L|`, finite, nonnegative, symmetric
    /// and zero on the diagonal (both within [`SYMMETRY_TOLERANCE`]). It is
    /// stored symmetrised. Failing the background-extremal condition is not an
    /// error; see [`GroundMetric::is_background_extremal`].
    pub fn from_matrix(rows: &[Vec<f64>], space: LabelSpace) -> Result<Self> {
        let n = space.len();
        if rows.len() != n {
            return Err(Error::InvalidMetric(format!(
                "expected {n} rows, found {}",
                rows.len()
            )));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMetric(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(flat, space)
    }

    /// Same as [`GroundMetric::from_matrix`] with a row-major buffer.
    pub fn from_flat(m: Vec<f64>, space: LabelSpace) -> Result<Self> {
        let n = space.len();
        if m.len() != n * n {
            return Err(Error::InvalidMetric(format!(
                "expected {} entries for a {n}x{n} matrix, found {}",
                n * n,
                m.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = m[i * n + j];
                if !v.is_finite() {
                    return Err(Error::InvalidMetric(format!("entry ({i},{j}) is not finite")));
                }
                if v < 0.0 {
                    return Err(Error::InvalidMetric(format!("entry ({i},{j}) = {v} is negative")));
                }
            }
            if m[i * n + i].abs() > SYMMETRY_TOLERANCE {
                return Err(Error::InvalidMetric(format!(
                    "diagonal entry ({i},{i}) = {} is not zero",
                    m[i * n + i]
                )));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (m[i * n + j], m[j * n + i]);
                if (a - b).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::InvalidMetric(format!(
                        "asymmetric entries ({i},{j}) = {a} and ({j},{i}) = {b}"
                    )));
                }
            }
        }

        let mut sym = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[i * n + j] + m[j * n + i]);
                sym[i * n + j] = v;
                sym[j * n + i] = v;
            }
        }
        let extremal_violations = find_extremal_violations(&sym, n, space.background());
        Ok(Self {
            space,
            m: sym,
            extremal_violations,
        })
    }

    /// The discrete metric: 1 between distinct labels.
    pub fn zero_one(space: LabelSpace) -> Self {
        let n = space.len();
        let m = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { 1.0 })
            .collect();
        Self::from_flat(m, space).expect("discrete metric is valid")
    }

    /// Path-length metric of a weighted tree whose first `|L|` nodes are the
    /// labels.
    pub fn from_tree(tree: &LabelTree, space: LabelSpace) -> Result<Self> {
        let n = space.len();
        if tree.node_count() < n {
            return Err(Error::InvalidTree(format!(
                "tree has {} nodes but the label space has {n} labels",
                tree.node_count()
            )));
        }
        let mut m = vec![0.0; n * n];
        for src in 0..n {
            let dist = tree.distances_from(src);
            for dst in 0..n {
                m[src * n + dst] = dist[dst];
            }
        }
        Self::from_flat(m, space)
    }

    /// The tumour tree metric on [`LabelSpace::brats`].
    pub fn brats_tree() -> Self {
        let rows: Vec<Vec<f64>> = BRATS_TREE_MATRIX.iter().map(|r| r.to_vec()).collect();
        Self::from_matrix(&rows, LabelSpace::brats()).expect("static tree matrix is valid")
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn size(&self) -> usize {
        self.space.len()
    }

    #[inline]
    pub fn get(&self, l: usize, l2: usize) -> f64 {
        self.m[l * self.space.len() + l2]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.m
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.m.chunks(self.size()).map(<[f64]>::to_vec).collect()
    }

    pub fn max_entry(&self) -> f64 {
        self.m.iter().copied().fold(0.0, f64::max)
    }

    /// Distance of each label to the background, `M[l, b]`.
    pub fn background_distances(&self) -> Vec<f64> {
        let b = self.space.background();
        (0..self.size()).map(|l| self.get(l, b)).collect()
    }

    /// True when, for all foreground `l, l'`, `M[l, b] >= M[l, l']`.
    pub fn is_background_extremal(&self) -> bool {
        self.extremal_violations.is_empty()
    }

    /// Pairs `(l, l')` with `M[l, b] < M[l, l']`.
    pub fn extremal_violations(&self) -> &[(usize, usize)] {
        &self.extremal_violations
    }

    /// Checks the triangle inequality on every triple, within `tol`.
    pub fn satisfies_triangle_inequality(&self, tol: f64) -> bool {
        let n = self.size();
        (0..n).all(|a| {
            (0..n).all(|b| (0..n).all(|c| self.get(a, c) <= self.get(a, b) + self.get(b, c) + tol))
        })
    }

    /// Parses the plain-text metric format.
    ///
    /// ```text
    /// labels: background,necrotic_core,edema
    /// background: 0
    /// 0,1,1
    /// 1,0,0.5
    /// 1,0.5,0
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let perr = |line: usize, reason: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            reason,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (ln, first) = lines
            .next()
            .ok_or_else(|| perr(1, "missing `labels:` line".into()))?;
        let names = first
            .strip_prefix("labels:")
            .ok_or_else(|| perr(ln, "expected `labels: <names>`".into()))?;
        let names: Vec<&str> = names.split(',').map(str::trim).collect();

        let (ln, second) = lines
            .next()
            .ok_or_else(|| perr(ln + 1, "missing `background:` line".into()))?;
        let bg = second
            .strip_prefix("background:")
            .ok_or_else(|| perr(ln, "expected `background: <id>`".into()))?
            .trim();
        let bg: usize = bg
            .parse()
            .map_err(|_| perr(ln, format!("background id `{bg}` is not an integer")))?;
        let space = LabelSpace::new(names, bg).map_err(|e| perr(ln, e.to_string()))?;

        let mut rows = Vec::with_capacity(space.len());
        let mut last = ln;
        for (ln, line) in lines {
            last = ln;
            let row = line
                .split(',')
                .map(|t| {
                    let t = t.trim();
                    t.parse::<f64>()
                        .map_err(|_| perr(ln, format!("`{t}` is not a decimal number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_matrix(&rows, space).map_err(|e| perr(last, e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Serialises to the format read by [`GroundMetric::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "labels: {}", self.space.names().join(","));
        let _ = writeln!(out, "background: {}", self.space.background());
        for row in self.m.chunks(self.size()) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

fn find_extremal_violations(m: &[f64], n: usize, b: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for l in (0..n).filter(|&l| l != b) {
        for l2 in (0..n).filter(|&l2| l2 != b) {
            if m[l * n + b] < m[l * n + l2] {
                out.push((l, l2));
            }
        }
    }
    out
}

/// A weighted tree whose nodes `0..|L|` stand for labels; any further nodes
/// are internal.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTree {
    node_count: usize,
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl LabelTree {
    pub fn new(node_count: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidTree("tree has no nodes".into()));
        }
        if edges.len() + 1 != node_count {
            return Err(Error::InvalidTree(format!(
                "a tree on {node_count} nodes has {} edges, found {}",
                node_count - 1,
                edges.len()
            )));
        }
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b, w) in &edges {
            if a >= node_count || b >= node_count {
                return Err(Error::InvalidTree(format!("edge ({a},{b}) references a missing node")));
            }
            if a == b {
                return Err(Error::InvalidTree(format!("self-loop on node {a}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidTree(format!("edge ({a},{b}) has invalid weight {w}")));
            }
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        let tree = Self {
            node_count,
            edges,
            adjacency,
        };
        // n - 1 edges plus connectivity rules out cycles.
        if tree.distances_from(0).iter().any(|d| d.is_nan()) {
            return Err(Error::InvalidTree("tree is disconnected".into()));
        }
        Ok(tree)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Path lengths from `src` to every node; NaN for unreachable nodes.
    fn distances_from(&self, src: usize) -> Vec<f64> {
        let mut dist = vec![f64::NAN; self.node_count];
        dist[src] = 0.0;
        let mut stack = vec![src];
        while let Some(u) = stack.pop() {
            for &(v, w) in &self.adjacency[u] {
                if dist[v].is_nan() {
                    dist[v] = dist[u] + w;
                    stack.push(v);
                }
            }
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space(n: usize) -> LabelSpace {
        LabelSpace::anonymous(n).unwrap()
    }

    /// All-pairs shortest paths, used as an independent oracle for tree metrics.
    fn floyd_warshall(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for &(a, b, w) in edges {
            d[a][b] = d[a][b].min(w);
            d[b][a] = d[b][a].min(w);
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    #[test]
    fn label_space_rules() {
        assert!(LabelSpace::new(["a"], 0).is_err());
        assert!(LabelSpace::new(["a", "b"], 2).is_err());
        assert!(LabelSpace::new(["a", "a"], 0).is_err());
        let s = LabelSpace::brats();
        assert_eq!(s.len(), 5);
        assert_eq!(s.id_of("edema"), Some(2));
    }

    #[test]
    fn zero_one_matrices() {
        for n in [2, 3, 5] {
            let m = GroundMetric::zero_one(space(n));
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(m.get(i, j), if i == j { 0.0 } else { 1.0 });
                }
            }
            assert!(m.is_background_extremal());
        }
        let two = GroundMetric::zero_one(space(2));
        assert_eq!(two.rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn zero_one_equals_matrix_constructor() {
        let n = 5;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        let a = GroundMetric::from_matrix(&rows, space(n)).unwrap();
        assert_eq!(a, GroundMetric::zero_one(space(n)));
    }

    #[test]
    fn brats_tree_matrix_is_valid_and_extremal() {
        let m = GroundMetric::brats_tree();
        assert!(m.is_background_extremal());
        assert_eq!(m.get(1, 2), 0.6);
        assert_eq!(m.get(1, 3), 0.2);
        assert_eq!(m.get(2, 4), 0.7);
        assert!(m.satisfies_triangle_inequality(1e-12));
    }

    #[test]
    fn binary_matrix_is_valid() {
        let m = GroundMetric::from_matrix(&[vec![0.0, 1.0], vec![1.0, 0.0]], space(2)).unwrap();
        assert!(m.is_background_extremal());
    }

    #[test]
    fn validation_errors() {
        let s = space(2);
        assert!(GroundMetric::from_matrix(&[vec![0.0, 1.0]], s.clone()).is_err());
        assert!(GroundMetric::from_matrix(&[vec![0.0, 1.0], vec![1.0]], s.clone()).is_err());
        assert!(GroundMetric::from_matrix(&[vec![0.0, -1.0], vec![-1.0, 0.0]], s.clone()).is_err());
        assert!(GroundMetric::from_matrix(&[vec![0.0, 1.0], vec![0.9, 0.0]], s.clone()).is_err());
        assert!(GroundMetric::from_matrix(&[vec![0.1, 1.0], vec![1.0, 0.0]], s.clone()).is_err());
        assert!(GroundMetric::from_matrix(&[vec![0.0, f64::NAN], vec![f64::NAN, 0.0]], s).is_err());
    }

    #[test]
    fn small_asymmetry_is_averaged() {
        let m = GroundMetric::from_matrix(&[vec![0.0, 1.0], vec![1.0 + 1e-13, 0.0]], space(2)).unwrap();
        assert_eq!(m.get(0, 1), m.get(1, 0));
    }

    #[test]
    fn extremal_violation_is_a_warning() {
        let rows = vec![
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.0, 1.0],
            vec![0.5, 1.0, 0.0],
        ];
        let m = GroundMetric::from_matrix(&rows, space(3)).unwrap();
        assert!(!m.is_background_extremal());
        assert_eq!(m.extremal_violations(), &[(1, 2), (2, 1)]);
    }

    #[test]
    fn revalidation_is_idempotent() {
        let m = GroundMetric::brats_tree();
        let again = GroundMetric::from_matrix(&m.rows(), m.space().clone()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn star_tree_gives_unit_distances() {
        // centre node 4 is internal
        let tree = LabelTree::new(5, (0..4).map(|l| (l, 4, 0.5)).collect()).unwrap();
        let m = GroundMetric::from_tree(&tree, space(4)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn path_tree_sums_weights() {
        let tree = LabelTree::new(3, vec![(0, 1, 0.2), (1, 2, 0.3)]).unwrap();
        let m = GroundMetric::from_tree(&tree, space(3)).unwrap();
        assert!((m.get(0, 2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn six_node_tree_matches_floyd_warshall() {
        let edges = vec![
            (5, 0, 0.5),
            (5, 2, 0.3),
            (2, 1, 0.3),
            (2, 3, 0.25),
            (3, 4, 0.2),
        ];
        let tree = LabelTree::new(6, edges.clone()).unwrap();
        let m = GroundMetric::from_tree(&tree, space(5)).unwrap();
        let oracle = floyd_warshall(6, &edges);
        for i in 0..5 {
            for j in 0..5 {
                assert!((m.get(i, j) - oracle[i][j]).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn tree_errors() {
        assert!(LabelTree::new(3, vec![(0, 1, 1.0)]).is_err());
        assert!(LabelTree::new(4, vec![(0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0)]).is_err());
        assert!(LabelTree::new(2, vec![(0, 2, 1.0)]).is_err());
        assert!(LabelTree::new(2, vec![(0, 1, -1.0)]).is_err());
        let small = LabelTree::new(2, vec![(0, 1, 1.0)]).unwrap();
        assert!(GroundMetric::from_tree(&small, space(3)).is_err());
    }

    #[test]
    fn text_format_roundtrip() {
        let m = GroundMetric::brats_tree();
        let text = m.to_text();
        assert!(text.starts_with("labels: background,necrotic_core,"));
        let back = GroundMetric::parse(&text, "mem").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "labels: a,b\nbackground: 0\n0,1\n1,zero\n";
        let err = GroundMetric::parse(text, "m.csv").unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
        assert!(GroundMetric::parse("background: 0\n", "m").is_err());
        assert!(GroundMetric::parse("labels: a,b\nbackground: x\n", "m").is_err());
    }

    fn random_tree() -> impl Strategy<Value = (usize, LabelTree)> {
        (2usize..7, 0usize..4).prop_flat_map(|(labels, internal)| {
            let nodes = labels + internal;
            (
                Just(labels),
                proptest::collection::vec((any::<prop::sample::Index>(), 0.0f64..2.0), nodes - 1),
            )
                .prop_map(move |(labels, picks)| {
                    // node k+1 attaches to a random earlier node
                    let edges = picks
                        .iter()
                        .enumerate()
                        .map(|(k, (idx, w))| (k + 1, idx.index(k + 1), *w))
                        .collect();
                    (labels, LabelTree::new(nodes, edges).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn tree_metrics_satisfy_triangle_inequality((labels, tree) in random_tree()) {
            let m = GroundMetric::from_tree(&tree, space(labels)).unwrap();
            prop_assert!(m.satisfies_triangle_inequality(1e-12));
        }
    }
}
