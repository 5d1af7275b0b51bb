//! LDA subspace fitting and projection.
//!
//! Scatter matrices are the textbook sums: `S_w = Σ_i Σ_j (x_ij − m_i)(x_ij − m_i)ᵀ`
//! and `S_b = Σ_i n_i (m_i − m)(m_i − m)ᵀ`. The generalized problem
//! `S_b v = ρ (S_w + λI) v` is reduced to a symmetric one through the
//! Cholesky factor of `S_w + λI`.

mod model_file;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::movement::Movement;
use crate::signal::FeatureVector;

pub use model_file::{decode_model, encode_model, read_model_file, write_model_file};

/// Eigenvalue below which the fit is reported as degenerate (no class
/// separation at all).
const DEGENERATE_EIGENVALUE: f64 = 1e-10;

/// Dimensions shown by the Reviewer.
pub const VIEW_DIMS: usize = 3;

/// Labeled feature vectors grouped by movement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    classes: BTreeMap<Movement, Vec<Vec<f64>>>,
}

impl CalibrationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replace every sample of `movement`.
    pub fn set_class(&mut self, movement: Movement, samples: Vec<Vec<f64>>) {
        self.classes.insert(movement, samples);
    }

    pub fn push(&mut self, movement: Movement, sample: Vec<f64>) {
        self.classes.entry(movement).or_default().push(sample);
    }

    pub fn extend_from(&mut self, vectors: impl IntoIterator<Item = FeatureVector>) -> Result<()> {
        for v in vectors {
            let label = v
                .label
                .ok_or_else(|| Error::InvalidCalibration("unlabeled feature vector".into()))?;
            self.push(label, v.values);
        }
        Ok(())
    }

    pub fn class(&self, movement: Movement) -> Option<&[Vec<f64>]> {
        self.classes.get(&movement).map(Vec::as_slice)
    }

    pub fn movements(&self) -> impl Iterator<Item = Movement> + '_ {
        self.classes.keys().copied()
    }

    pub fn classes(&self) -> impl Iterator<Item = (Movement, &[Vec<f64>])> {
        self.classes.iter().map(|(m, v)| (*m, v.as_slice()))
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_samples(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn dim(&self) -> Option<usize> {
        self.classes.values().flatten().next().map(Vec::len)
    }

    pub fn validate(&self) -> Result<usize> {
        if !self.classes.contains_key(&Movement::Rest) {
            return Err(Error::InvalidCalibration("rest class missing".into()));
        }
        if self.classes.len() < 2 {
            return Err(Error::InvalidCalibration("need rest and at least one movement".into()));
        }
        let d = self.dim().unwrap_or(0);
        if d == 0 {
            return Err(Error::InvalidCalibration("feature dimension is zero".into()));
        }
        for (movement, samples) in &self.classes {
            if samples.len() < 2 {
                return Err(Error::InvalidCalibration(format!(
                    "{movement} has {} samples, need at least 2",
                    samples.len()
                )));
            }
            for s in samples {
                if s.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: s.len(),
                    });
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidCalibration(format!("{movement} has non-finite features")));
                }
            }
        }
        Ok(d)
    }

    /// SHA-256 over the class table and raw feature bits.
    pub fn provenance(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"calibration/v1");
        for (movement, samples) in &self.classes {
            hasher.update([movement.id()]);
            hasher.update((samples.len() as u64).to_le_bytes());
            for s in samples {
                hasher.update((s.len() as u64).to_le_bytes());
                for v in s {
                    hasher.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Regularization {
    /// `1e-3 × trace(S_w) / d`.
    #[default]
    Auto,
    Fixed(f64),
}

/// A fitted discriminant subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub(crate) dim: usize,
    /// Discriminant dimensions used for classification, `min(k − 1, d)`.
    pub(crate) p: usize,
    /// d × cols, column-major; `cols = max(p, min(3, d))` so the Reviewer
    /// always has three axes to draw.
    pub(crate) basis: DMatrix<f64>,
    pub(crate) eigenvalues: Vec<f64>,
    pub(crate) mean: DVector<f64>,
    pub(crate) lambda: f64,
    pub(crate) degenerate: bool,
    pub(crate) classes: Vec<ClassEntry>,
    pub(crate) provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassEntry {
    pub movement: Movement,
    pub count: usize,
    /// Projected class mean, all `cols` components.
    pub centroid: Vec<f64>,
}

impl SubspaceModel {
    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn stored_axes(&self) -> usize {
        self.basis.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// True when the between-class scatter vanished and the basis carries no
    /// discriminative information.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn global_mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn movements(&self) -> impl Iterator<Item = Movement> + '_ {
        self.classes.iter().map(|c| c.movement)
    }

    /// Centroid in the p-dimensional classification subspace.
    pub fn centroid(&self, movement: Movement) -> Option<&[f64]> {
        self.classes
            .iter()
            .find(|c| c.movement == movement)
            .map(|c| &c.centroid[..self.p])
    }

    /// `basisᵀ (x − m)`, truncated to the p classification dimensions.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.project_all(x)?;
        y.truncate(self.p);
        Ok(y)
    }

    /// Projection onto every stored axis, including Reviewer padding.
    pub fn project_all(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        Ok(self
            .basis
            .column_iter()
            .map(|col| col.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn rest_view(&self) -> Result<[f64; VIEW_DIMS]> {
        let rest = self
            .classes
            .iter()
            .find(|c| c.movement == Movement::Rest)
            .ok_or(Error::MissingClass(Movement::Rest))?;
        Ok(view3(&rest.centroid))
    }

    /// First three subspace coordinates translated so the rest centroid
    /// sits at the origin.
    pub fn reviewer_coords(&self, x: &[f64]) -> Result<[f64; VIEW_DIMS]> {
        let y = view3(&self.project_all(x)?);
        let rest = self.rest_view()?;
        Ok([y[0] - rest[0], y[1] - rest[1], y[2] - rest[2]])
    }

    /// Reviewer-space centroid of every class (rest is the origin).
    pub fn reviewer_centroids(&self) -> Result<Vec<(Movement, [f64; VIEW_DIMS])>> {
        let rest = self.rest_view()?;
        Ok(self
            .classes
            .iter()
            .map(|c| {
                let v = view3(&c.centroid);
                (c.movement, [v[0] - rest[0], v[1] - rest[1], v[2] - rest[2]])
            })
            .collect())
    }
}

fn view3(y: &[f64]) -> [f64; VIEW_DIMS] {
    let mut out = [0.0; VIEW_DIMS];
    for (o, v) in out.iter_mut().zip(y) {
        *o = *v;
    }
    out
}

pub fn fit_lda(cal: &CalibrationSet, regularization: Regularization) -> Result<SubspaceModel> {
    let d = cal.validate()?;
    let k = cal.num_classes();
    let n_total = cal.num_samples();

    let mut mean = DVector::<f64>::zeros(d);
    for (_, samples) in cal.classes() {
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
    }
    mean /= n_total as f64;

    let mut s_w = DMatrix::<f64>::zeros(d, d);
    let mut s_b = DMatrix::<f64>::zeros(d, d);
    let mut class_means = Vec::with_capacity(k);
    for (movement, samples) in cal.classes() {
        let mut m_i = DVector::<f64>::zeros(d);
        for s in samples {
            m_i += DVector::from_column_slice(s);
        }
        m_i /= samples.len() as f64;
        for s in samples {
            let dx = DVector::from_column_slice(s) - &m_i;
            s_w.ger(1.0, &dx, &dx, 1.0);
        }
        let dm = &m_i - &mean;
        s_b.ger(samples.len() as f64, &dm, &dm, 1.0);
        class_means.push((movement, samples.len(), m_i));
    }

    let lambda = match regularization {
        Regularization::Auto => 1e-3 * s_w.trace() / d as f64,
        Regularization::Fixed(l) if l >= 0.0 && l.is_finite() => l,
        Regularization::Fixed(l) => return Err(Error::InvalidArgument(format!("regularization must be ≥ 0, got {l}"))),
    };
    let mut a = s_w;
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let chol = a.cholesky().ok_or(Error::RegularizationRequired)?;
    let l = chol.l();
    // M = L⁻¹ S_b L⁻ᵀ
    let l_inv_sb = l.solve_lower_triangular(&s_b).ok_or(Error::RegularizationRequired)?;
    let m = l
        .solve_lower_triangular(&l_inv_sb.transpose())
        .ok_or(Error::RegularizationRequired)?;
    let m = (&m + m.transpose()) * 0.5;
    let eigen = SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eigen.eigenvalues[j]
            .partial_cmp(&eigen.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let p = (k - 1).min(d);
    let cols = p.max(VIEW_DIMS.min(d));
    // unit pooled within-class variance along every axis
    let scale = ((n_total - k) as f64).sqrt();
    let lt = l.transpose();
    let mut basis = DMatrix::<f64>::zeros(d, cols);
    let mut eigenvalues = Vec::with_capacity(cols);
    for (col, &idx) in order.iter().take(cols).enumerate() {
        let u = eigen.eigenvectors.column(idx).into_owned();
        let mut v = lt.solve_upper_triangular(&u).ok_or(Error::RegularizationRequired)? * scale;
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v = -v;
        }
        basis.set_column(col, &v);
        eigenvalues.push(eigen.eigenvalues[idx].max(0.0));
    }
    let degenerate = eigenvalues.first().copied().unwrap_or(0.0) <= DEGENERATE_EIGENVALUE;

    let classes = class_means
        .into_iter()
        .map(|(movement, count, m_i)| {
            let dm = m_i - &mean;
            ClassEntry {
                movement,
                count,
                centroid: basis.tr_mul(&dm).iter().copied().collect(),
            }
        })
        .collect();

    Ok(SubspaceModel {
        dim: d,
        p,
        basis,
        eigenvalues,
        mean,
        lambda,
        degenerate,
        classes,
        provenance: cal.provenance(),
    })
}
