#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use wdice::label_metric::LabelTree;
use wdice::{GroundMetric, LabelSpace};

/// Dense two-phase tableau simplex for `min c.x` subject to `A x = b`,
/// `x >= 0`, with Bland's rule. Written independently of the transport
/// solver in the library so it can serve as an oracle.
pub fn simplex_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let m = a.len();
    let n = c.len();
    // columns: n originals, m artificials, then rhs
    let width = n + m + 1;
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
            let mut row = vec![0.0; width];
            for j in 0..n {
                row[j] = sign * a[i][j];
            }
            row[n + i] = 1.0;
            row[width - 1] = sign * b[i];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();

    // phase one: minimise the sum of artificials
    let mut cost1 = vec![0.0; n + m];
    cost1[n..].iter_mut().for_each(|v| *v = 1.0);
    run(&mut t, &mut basis, &cost1, n + m);

    // drive any remaining artificial out of the basis where possible
    for r in 0..m {
        if basis[r] >= n {
            if let Some(j) = (0..n).find(|&j| t[r][j].abs() > 1e-11) {
                pivot(&mut t, r, j);
                basis[r] = j;
            }
        }
    }

    let mut cost2 = vec![0.0; n + m];
    cost2[..n].copy_from_slice(c);
    run(&mut t, &mut basis, &cost2, n);
    basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j < n)
        .map(|(r, &j)| c[j] * t[r][width - 1])
        .sum()
}

fn pivot(t: &mut [Vec<f64>], r: usize, j: usize) {
    let p = t[r][j];
    t[r].iter_mut().for_each(|v| *v /= p);
    let row = t[r].clone();
    for (k, other) in t.iter_mut().enumerate() {
        if k != r {
            let f = other[j];
            if f != 0.0 {
                for (o, v) in other.iter_mut().zip(&row) {
                    *o -= f * v;
                }
            }
        }
    }
}

/// Runs simplex iterations allowing only columns `< allowed` to enter.
fn run(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) {
    let width = t[0].len();
    loop {
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let reduced = cost[j] - basis.iter().enumerate().map(|(r, &bj)| cost[bj] * t[r][j]).sum::<f64>();
            reduced < -1e-12
        });
        let Some(j) = entering else { return };
        let mut best: Option<(f64, usize)> = None;
        for r in 0..t.len() {
            if t[r][j] > 1e-12 {
                let ratio = t[r][width - 1] / t[r][j];
                let better = match best {
                    None => true,
                    Some((q, br)) => ratio < q - 1e-15 || (ratio <= q + 1e-15 && basis[r] < basis[br]),
                };
                if better {
                    best = Some((ratio, r));
                }
            }
        }
        let (_, r) = best.expect("transport problems are bounded");
        pivot(t, r, j);
        basis[r] = j;
    }
}

/// Transport LP between `p` and `q` under `metric`, via [`simplex_min`].
pub fn transport_oracle(p: &[f64], q: &[f64], metric: &GroundMetric) -> f64 {
    let n = p.len();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..n {
        let mut row = vec![0.0; n * n];
        (0..n).for_each(|j| row[i * n + j] = 1.0);
        a.push(row);
        b.push(p[i]);
    }
    // one column constraint is implied by the others
    for j in 0..n - 1 {
        let mut row = vec![0.0; n * n];
        (0..n).for_each(|i| row[i * n + j] = 1.0);
        a.push(row);
        b.push(q[j]);
    }
    let c: Vec<f64> = (0..n * n).map(|k| metric.get(k / n, k % n)).collect();
    simplex_min(&a, &b, &c)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    if v.iter().sum::<f64>() == 0.0 {
        v[rng.gen_range(0..n)] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Random valid metric: a symmetric matrix with zero diagonal, either a
/// random tree metric or arbitrary non-negative entries.
pub fn random_metric(rng: &mut ChaCha8Rng, n: usize) -> GroundMetric {
    let space = LabelSpace::anonymous(n).unwrap();
    if rng.gen_bool(0.5) {
        random_tree_metric(rng, n)
    } else {
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.gen_range(0.0..2.0);
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        GroundMetric::from_matrix(&m, space).unwrap()
    }
}

/// Tree metric over `n` labels plus up to three internal nodes.
pub fn random_tree_metric(rng: &mut ChaCha8Rng, n: usize) -> GroundMetric {
    let extra = rng.gen_range(0..=3);
    let nodes = n + extra;
    let edges: Vec<(usize, usize, f64)> = (1..nodes)
        .map(|k| (rng.gen_range(0..k), k, rng.gen_range(0.05..1.0)))
        .collect();
    let tree = LabelTree::new(nodes, edges).unwrap();
    GroundMetric::from_tree(&tree, LabelSpace::anonymous(n).unwrap()).unwrap()
}

/// Relative error with a floor on the denominator so that near-zero
/// derivatives are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
