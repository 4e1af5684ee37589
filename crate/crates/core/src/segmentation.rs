//! Crisp and probabilistic segmentations on 1D/2D/3D voxel grids.
//!
//! Probabilities are stored voxel-major: the `|L|` entries of voxel `i` are
//! contiguous at `i * |L|`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wasserstein::normalise_in_place;

/// Grid dimensions, between one and three axes, each at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims(Vec<usize>);

impl Dims {
    pub fn new(axes: impl Into<Vec<usize>>) -> Result<Self> {
        let axes = axes.into();
        if axes.is_empty() || axes.len() > 3 {
            return Err(Error::invalid_arg("dims", format!("expected 1 to 3 axes, got {}", axes.len())));
        }
        if axes.contains(&0) {
            return Err(Error::invalid_arg("dims", "axes must be nonzero"));
        }
        Ok(Self(axes))
    }

    pub fn d1(n: usize) -> Self {
        Self::new(vec![n]).expect("nonzero 1D grid")
    }

    pub fn d2(h: usize, w: usize) -> Self {
        Self::new(vec![h, w]).expect("nonzero 2D grid")
    }

    pub fn axes(&self) -> &[usize] {
        &self.0
    }

    pub fn voxel_count(&self) -> usize {
        self.0.iter().product()
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("x"))
    }
}

/// Hard per-voxel labels `g^i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrispSegmentation {
    dims: Dims,
    num_labels: usize,
    labels: Vec<u8>,
}

impl CrispSegmentation {
    pub fn new(dims: Dims, num_labels: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != dims.voxel_count() {
            return Err(Error::mismatch("crisp segmentation", dims.voxel_count(), labels.len()));
        }
        if num_labels < 2 || num_labels > 256 {
            return Err(Error::invalid_arg("num_labels", format!("{num_labels} is out of range")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_labels) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                size: num_labels,
            });
        }
        Ok(Self {
            dims,
            num_labels,
            labels,
        })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Voxel count per label.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_labels];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

/// Per-voxel label probability vectors `p^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSegmentation {
    dims: Dims,
    num_labels: usize,
    probs: Vec<f64>,
}

impl ProbSegmentation {
    /// Validates every voxel as a probability vector, renormalising those
    /// whose sum drifted by at most `1e-6`.
    pub fn new(dims: Dims, num_labels: usize, mut probs: Vec<f64>) -> Result<Self> {
        Self::check_shape(&dims, num_labels, &probs)?;
        for (i, v) in probs.chunks_mut(num_labels).enumerate() {
            normalise_in_place(v).map_err(|e| match e {
                Error::InvalidProbability(r) => Error::InvalidProbability(format!("voxel {i}: {r}")),
                other => other,
            })?;
        }
        Ok(Self {
            dims,
            num_labels,
            probs,
        })
    }

    /// Wraps arbitrary finite values without the simplex check. Losses and
    /// their gradients are defined on this unconstrained domain.
    pub fn unconstrained(dims: Dims, num_labels: usize, probs: Vec<f64>) -> Result<Self> {
        Self::check_shape(&dims, num_labels, &probs)?;
        if probs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProbability("non-finite entry".into()));
        }
        Ok(Self {
            dims,
            num_labels,
            probs,
        })
    }

    fn check_shape(dims: &Dims, num_labels: usize, probs: &[f64]) -> Result<()> {
        if num_labels < 2 {
            return Err(Error::invalid_arg("num_labels", "need at least 2 labels"));
        }
        let expected = dims.voxel_count() * num_labels;
        if probs.len() != expected {
            return Err(Error::mismatch("probability map", expected, probs.len()));
        }
        Ok(())
    }

    /// One-hot encoding of a crisp segmentation.
    pub fn from_crisp(g: &CrispSegmentation) -> Self {
        let n = g.num_labels();
        let mut probs = vec![0.0; g.len() * n];
        for (i, &l) in g.labels().iter().enumerate() {
            probs[i * n + l as usize] = 1.0;
        }
        Self {
            dims: g.dims().clone(),
            num_labels: n,
            probs,
        }
    }

    pub fn uniform(dims: Dims, num_labels: usize) -> Self {
        let probs = vec![1.0 / num_labels as f64; dims.voxel_count() * num_labels];
        Self {
            dims,
            num_labels,
            probs,
        }
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn len(&self) -> usize {
        self.dims.voxel_count()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    #[inline]
    pub fn voxel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_labels..(i + 1) * self.num_labels]
    }

    /// Most probable label per voxel; ties resolve to the lowest id.
    pub fn argmax(&self) -> CrispSegmentation {
        let labels = self
            .probs
            .chunks(self.num_labels)
            .map(|v| {
                let mut best = 0;
                for (l, &x) in v.iter().enumerate() {
                    if x > v[best] {
                        best = l;
                    }
                }
                best as u8
            })
            .collect();
        CrispSegmentation::new(self.dims.clone(), self.num_labels, labels)
            .expect("argmax labels are in range")
    }
}

/// Checks that `p` and `g` share grid and label count.
pub(crate) fn check_pair(p: &ProbSegmentation, g: &CrispSegmentation, context: &'static str) -> Result<()> {
    if p.dims() != g.dims() {
        return Err(Error::mismatch(context, g.dims(), p.dims()));
    }
    if p.num_labels() != g.num_labels() {
        return Err(Error::mismatch(context, format!("{} labels", g.num_labels()), format!("{} labels", p.num_labels())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_rules() {
        assert!(Dims::new(vec![]).is_err());
        assert!(Dims::new(vec![1, 2, 3, 4]).is_err());
        assert!(Dims::new(vec![4, 0]).is_err());
        assert_eq!(Dims::new(vec![2, 3, 4]).unwrap().voxel_count(), 24);
        assert_eq!(Dims::d2(3, 4).to_string(), "3x4");
    }

    #[test]
    fn crisp_rejects_out_of_range_labels() {
        let err = CrispSegmentation::new(Dims::d1(3), 3, vec![0, 1, 3]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 3, size: 3 }));
        assert!(CrispSegmentation::new(Dims::d1(3), 3, vec![0, 1]).is_err());
    }

    #[test]
    fn prob_segmentation_renormalises_small_drift() {
        let p = ProbSegmentation::new(Dims::d1(1), 2, vec![0.3, 0.7 + 5e-7]).unwrap();
        let s: f64 = p.voxel(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(ProbSegmentation::new(Dims::d1(1), 2, vec![0.3, 0.8]).is_err());
        assert!(ProbSegmentation::new(Dims::d1(1), 2, vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn one_hot_and_argmax_roundtrip() {
        let g = CrispSegmentation::new(Dims::d2(2, 2), 3, vec![0, 2, 1, 2]).unwrap();
        let p = ProbSegmentation::from_crisp(&g);
        assert_eq!(p.voxel(1), &[0.0, 0.0, 1.0]);
        assert_eq!(p.argmax(), g);
        assert_eq!(g.histogram(), vec![1, 1, 2]);
    }
}
