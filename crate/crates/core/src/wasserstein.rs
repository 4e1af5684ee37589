//! Wasserstein (earth mover's) distance between label probability vectors.
//!
//! [`emd_lp`] solves the transport linear program exactly with a dense
//! transportation simplex. [`emd_crisp`] is the closed form for a one-hot
//! target: the product plan `T[l, l'] = p[l] * q[l']` is optimal, so the
//! distance is `sum_l M[l, gt] * p[l]`.

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::label_metric::GroundMetric;
use crate::segmentation::{check_pair, CrispSegmentation, Dims, ProbSegmentation};

/// Accepted deviation of a probability vector's sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

const VOXEL_CHUNK: usize = 4096;

/// Checks nonnegativity and renormalises when the sum is within
/// [`PROB_SUM_TOLERANCE`] of 1.
pub(crate) fn normalise_in_place(v: &mut [f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidProbability("empty vector".into()));
    }
    for (l, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::InvalidProbability(format!("entry {l} is not finite")));
        }
        if x < 0.0 {
            return Err(Error::InvalidProbability(format!("entry {l} = {x} is negative")));
        }
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(Error::InvalidProbability(format!(
            "entries sum to {sum}, outside 1 +/- {PROB_SUM_TOLERANCE}"
        )));
    }
    if sum != 1.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(())
}

/// A point of the probability simplex on `|L|` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        normalise_in_place(&mut values)?;
        Ok(Self(values))
    }

    pub fn one_hot(len: usize, label: usize) -> Result<Self> {
        if label >= len {
            return Err(Error::LabelOutOfRange { label, size: len });
        }
        let mut v = vec![0.0; len];
        v[label] = 1.0;
        Ok(Self(v))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Joint distribution `T` with marginals `p` (rows) and `q` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    n: usize,
    t: Vec<f64>,
}

impl TransportPlan {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, l: usize, l2: usize) -> f64 {
        self.t[l * self.n + l2]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.t
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.t.chunks(self.n).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.t[i * self.n + j]).sum())
            .collect()
    }

    pub fn cost(&self, metric: &GroundMetric) -> f64 {
        self.t
            .iter()
            .zip(metric.as_slice())
            .map(|(t, m)| t * m)
            .sum()
    }
}

/// Exact Wasserstein distance `W^M(p, q)` and an optimal plan.
pub fn emd_lp(p: &ProbVector, q: &ProbVector, metric: &GroundMetric) -> Result<(f64, TransportPlan)> {
    let n = metric.size();
    if p.len() != n || q.len() != n {
        return Err(Error::mismatch(
            "emd_lp",
            format!("{n} labels"),
            format!("p: {}, q: {}", p.len(), q.len()),
        ));
    }
    let t = solve_transport(p.as_slice(), q.as_slice(), metric.as_slice());
    let plan = TransportPlan { n, t };
    let value = plan.cost(metric);
    Ok((value, plan))
}

/// Closed-form `W^M(p, one_hot(gt))`.
pub fn emd_crisp(p: &ProbVector, gt: usize, metric: &GroundMetric) -> Result<f64> {
    let n = metric.size();
    if p.len() != n {
        return Err(Error::mismatch("emd_crisp", format!("{n} labels"), p.len()));
    }
    if gt >= n {
        return Err(Error::LabelOutOfRange { label: gt, size: n });
    }
    Ok(crisp_distance(p.as_slice(), gt, metric))
}

/// `sum_l M[l, gt] * p[l]`, with no validation. Linear in `p`.
#[inline]
pub(crate) fn crisp_distance(p: &[f64], gt: usize, metric: &GroundMetric) -> f64 {
    let n = metric.size();
    let m = metric.as_slice();
    // M is symmetric, so row gt is column gt.
    let row = &m[gt * n..(gt + 1) * n];
    p.iter().zip(row).fold(0.0, |acc, (pl, ml)| acc + pl * ml)
}

/// Per-voxel distances to a crisp ground truth and their ordered total.
#[derive(Debug, Clone, PartialEq)]
pub struct EmdMap {
    pub dims: Dims,
    pub per_voxel: Vec<f64>,
    pub total: f64,
}

pub fn emd_map_crisp(pred: &ProbSegmentation, gt: &CrispSegmentation, metric: &GroundMetric) -> Result<EmdMap> {
    emd_map_crisp_with(pred, gt, metric, Execution::default())
}

/// [`emd_map_crisp`] with an explicit execution mode. The total is a
/// sequential sum in voxel order whatever the mode.
pub fn emd_map_crisp_with(
    pred: &ProbSegmentation,
    gt: &CrispSegmentation,
    metric: &GroundMetric,
    exec: Execution,
) -> Result<EmdMap> {
    check_pair(pred, gt, "emd_map_crisp")?;
    if metric.size() != pred.num_labels() {
        return Err(Error::mismatch("emd_map_crisp metric", pred.num_labels(), metric.size()));
    }
    let per_voxel = per_voxel_distances(pred.probs(), gt.labels(), metric, exec);
    let total = exec::ordered_sum(&per_voxel);
    Ok(EmdMap {
        dims: pred.dims().clone(),
        per_voxel,
        total,
    })
}

pub(crate) fn per_voxel_distances(probs: &[f64], labels: &[u8], metric: &GroundMetric, exec: Execution) -> Vec<f64> {
    let n = metric.size();
    let mut out = vec![0.0; labels.len()];
    exec::fill_chunks(&mut out, VOXEL_CHUNK, exec, |start, chunk| {
        for (k, d) in chunk.iter_mut().enumerate() {
            let i = start + k;
            *d = crisp_distance(&probs[i * n..(i + 1) * n], labels[i] as usize, metric);
        }
    });
    out
}

/// Dense transportation simplex for a square cost matrix.
///
/// Starts from the north-west corner solution, prices with potentials
/// `u_i + v_j = c_ij` on the basis tree, and pivots with Bland's rule
/// (lowest-index entering cell, lowest-index leaving cell among ties), which
/// rules out cycling on degenerate bases.
fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Vec<f64> {
    let n = supply.len();
    let m = demand.len();
    debug_assert_eq!(cost.len(), n * m);

    let mut flow = vec![0.0; n * m];
    let mut basic = vec![false; n * m];
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n + m - 1);

    // North-west corner: a staircase of exactly n + m - 1 cells, so the basis
    // is a spanning tree of the bipartite row/column graph even when
    // degenerate.
    let (mut ra, mut rb) = (supply.to_vec(), demand.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]);
        flow[i * m + j] = x;
        basic[i * m + j] = true;
        basis.push((i, j));
        ra[i] -= x;
        rb[j] -= x;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if j == m - 1 || (i < n - 1 && ra[i] <= rb[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = cost.iter().fold(1.0_f64, |a, c| a.max(c.abs()));
    let tol = 1e-13 * scale;
    let max_pivots = 50 * (n * m).pow(2) + 1000;

    let nodes = n + m;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut seen = vec![false; nodes];
    let mut stack = Vec::with_capacity(nodes);

    for _ in 0..max_pivots {
        // Tree adjacency; node r < n is row r, node n + c is column c.
        adj.iter_mut().for_each(Vec::clear);
        for &(r, c) in &basis {
            adj[r].push(n + c);
            adj[n + c].push(r);
        }

        // Potentials from the root row 0.
        seen.iter_mut().for_each(|s| *s = false);
        u[0] = 0.0;
        seen[0] = true;
        stack.clear();
        stack.push(0);
        while let Some(a) = stack.pop() {
            for &b in &adj[a] {
                if seen[b] {
                    continue;
                }
                seen[b] = true;
                if a < n {
                    let c = b - n;
                    v[c] = cost[a * m + c] - u[a];
                } else {
                    let r = b;
                    u[r] = cost[r * m + (a - n)] - v[a - n];
                }
                stack.push(b);
            }
        }

        let entering = (0..n * m).find(|&k| {
            let (r, c) = (k / m, k % m);
            !basic[k] && cost[k] - u[r] - v[c] < -tol
        });
        let Some(k) = entering else {
            break;
        };
        let (er, ec) = (k / m, k % m);

        // Unique tree path from row er to column ec.
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        seen.iter_mut().for_each(|s| *s = false);
        seen[er] = true;
        stack.clear();
        stack.push(er);
        while let Some(a) = stack.pop() {
            if a == n + ec {
                break;
            }
            for &b in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    parent[b] = a;
                    stack.push(b);
                }
            }
        }
        let mut path_cells = Vec::new();
        let mut node = n + ec;
        while node != er {
            let p = parent[node];
            let cell = if p < n { p * m + (node - n) } else { node * m + (p - n) };
            path_cells.push(cell);
            node = p;
        }
        // path_cells runs from column ec back to row er; the cell adjacent to
        // the entering cell on either end loses flow, signs alternate.
        let minus: Vec<usize> = path_cells.iter().copied().step_by(2).collect();
        let plus: Vec<usize> = path_cells.iter().copied().skip(1).step_by(2).collect();

        let theta = minus.iter().map(|&c| flow[c]).fold(f64::INFINITY, f64::min);
        let leaving = minus
            .iter()
            .copied()
            .filter(|&c| flow[c] == theta)
            .min()
            .expect("cycle has at least one decreasing cell");

        for &c in &minus {
            flow[c] = (flow[c] - theta).max(0.0);
        }
        for &c in &plus {
            flow[c] += theta;
        }
        flow[k] = theta;
        flow[leaving] = 0.0;
        basic[leaving] = false;
        basic[k] = true;
        let pos = basis
            .iter()
            .position(|&(r, c)| r * m + c == leaving)
            .expect("leaving cell is basic");
        basis[pos] = (er, ec);
    }
    flow
}
