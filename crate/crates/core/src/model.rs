//! Mixture components, the mixture model itself and the outlier store.

use serde::{Deserialize, Serialize};

use crate::error::{GmmError, Result};
use crate::math::{clamp_eigenvalues, is_symmetric, log_sum_exp, min_eigenvalue, CovFactor, Matrix, Vector};

/// Constraint on component covariances. Diagonal and spherical estimates are
/// the full scatter matrix projected onto the constraint, which is also their
/// maximum-likelihood value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceStructure {
    #[default]
    Full,
    Diagonal,
    Spherical,
}

impl CovarianceStructure {
    pub const ALL: [CovarianceStructure; 3] = [CovarianceStructure::Full, CovarianceStructure::Diagonal, CovarianceStructure::Spherical];

    pub fn name(self) -> &'static str {
        match self {
            CovarianceStructure::Full => "full",
            CovarianceStructure::Diagonal => "diagonal",
            CovarianceStructure::Spherical => "spherical",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| GmmError::Config(format!("unknown covariance structure '{name}' (expected full, diagonal or spherical)")))
    }

    /// Free covariance parameters of one `d`-dimensional component.
    pub fn parameters(self, d: usize) -> usize {
        match self {
            CovarianceStructure::Full => d * (d + 1) / 2,
            CovarianceStructure::Diagonal => d,
            CovarianceStructure::Spherical => 1,
        }
    }

    pub fn project(self, cov: Matrix) -> Matrix {
        let d = cov.nrows();
        match self {
            CovarianceStructure::Full => cov,
            CovarianceStructure::Diagonal => Matrix::from_diagonal(&cov.diagonal()),
            CovarianceStructure::Spherical => Matrix::identity(d, d) * (cov.trace() / d as f64),
        }
    }

    /// Projection followed by an eigenvalue floor.
    pub fn project_floored(self, cov: Matrix, floor: f64) -> Matrix {
        match self {
            CovarianceStructure::Full if min_eigenvalue(&cov) < floor => clamp_eigenvalues(&cov, floor),
            CovarianceStructure::Full => cov,
            _ => {
                let mut out = self.project(cov);
                for i in 0..out.nrows() {
                    out[(i, i)] = out[(i, i)].max(floor);
                }
                out
            }
        }
    }

    /// Most constrained structure every matrix satisfies exactly.
    pub fn infer<'a>(covs: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let mut out = CovarianceStructure::Spherical;
        for c in covs {
            let d = c.nrows();
            let off_diagonal_zero = (0..d).all(|i| (0..d).all(|j| i == j || c[(i, j)] == 0.0));
            if !off_diagonal_zero {
                return CovarianceStructure::Full;
            }
            if (1..d).any(|i| c[(i, i)] != c[(0, 0)]) {
                out = CovarianceStructure::Diagonal;
            }
        }
        out
    }
}

impl std::fmt::Display for CovarianceStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One Gaussian component: weight, mean, covariance and the effective number
/// of points it summarizes.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vector,
    pub covariance: Matrix,
    pub count: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vector, covariance: Matrix, count: f64) -> Self {
        Self { weight, mean, covariance, count }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let d = self.mean.len();
        if self.covariance.nrows() != d || self.covariance.ncols() != d {
            return Err(GmmError::Shape(format!("component {index}: mean has {d} entries, covariance {}x{}", self.covariance.nrows(), self.covariance.ncols())));
        }
        if !(0.0..=1.0).contains(&self.weight) || !self.weight.is_finite() {
            return Err(GmmError::InvalidModel(format!("component {index}: weight {} outside [0,1]", self.weight)));
        }
        if self.count.is_nan() || self.count < 0.0 {
            return Err(GmmError::InvalidModel(format!("component {index}: negative count {}", self.count)));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::InvalidModel(format!("component {index}: non-finite mean")));
        }
        if !is_symmetric(&self.covariance) {
            return Err(GmmError::InvalidModel(format!("component {index}: covariance not symmetric")));
        }
        Ok(())
    }
}

/// Ordered mixture of Gaussian components, plus the outlier threshold (log
/// likelihood units) and the number of online rounds applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub components: Vec<GaussianComponent>,
    pub threshold: Option<f64>,
    pub round: u64,
    pub dimension: usize,
    pub structure: CovarianceStructure,
}

/// Where a point was classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Assignment {
    Component(usize),
    Outlier,
}

impl Assignment {
    pub fn component(self) -> Option<usize> {
        match self {
            Assignment::Component(i) => Some(i),
            Assignment::Outlier => None,
        }
    }

    pub fn is_outlier(self) -> bool {
        matches!(self, Assignment::Outlier)
    }
}

impl MixtureModel {
    /// Builds a model, checking dimensions, weight normalization and
    /// covariance symmetry.
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components.first().ok_or_else(|| GmmError::InvalidModel("mixture has no components".into()))?;
        let dimension = first.dim();
        let model = Self { components, threshold: None, round: 0, dimension, structure: CovarianceStructure::Full };
        model.validate()?;
        Ok(model)
    }

    pub fn with_structure(mut self, structure: CovarianceStructure) -> Self {
        self.structure = structure;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn total_count(&self) -> f64 {
        self.components.iter().map(|c| c.count).sum()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.count).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(GmmError::InvalidModel("mixture has no components".into()));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.dim() != self.dimension {
                return Err(GmmError::Shape(format!("component {i} has dimension {}, model {}", c.dim(), self.dimension)));
            }
            c.validate(i)?;
        }
        let sum = self.weight_sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(GmmError::InvalidModel(format!("weights sum to {sum}")));
        }
        Ok(())
    }

    /// Rescales weights to sum to one.
    pub fn normalize_weights(&mut self) {
        let sum = self.weight_sum();
        if sum > 0.0 {
            for c in &mut self.components {
                c.weight /= sum;
            }
        }
    }

    /// Factorizes every covariance once for repeated evaluation.
    pub fn prepare(&self) -> Result<PreparedMixture> {
        PreparedMixture::new(&self.components)
    }

    pub fn threshold(&self) -> Result<f64> {
        self.threshold.ok_or_else(|| GmmError::InvalidModel("model has no outlier threshold".into()))
    }
}

#[derive(Debug, Clone)]
struct PreparedComponent {
    log_weight: f64,
    mean: Vec<f64>,
    factor: CovFactor,
}

/// A mixture with factorized covariances, ready for bulk evaluation.
#[derive(Debug, Clone)]
pub struct PreparedMixture {
    comps: Vec<PreparedComponent>,
    dim: usize,
}

/// Reusable buffers for [`PreparedMixture`] evaluation.
#[derive(Debug, Clone)]
pub struct Workspace {
    diff: Vec<f64>,
    scratch: Vec<f64>,
    pub log_terms: Vec<f64>,
}

impl Workspace {
    pub fn new(dim: usize, k: usize) -> Self {
        Self { diff: vec![0.0; dim], scratch: vec![0.0; dim], log_terms: vec![0.0; k] }
    }
}

impl PreparedMixture {
    pub fn new(components: &[GaussianComponent]) -> Result<Self> {
        if components.is_empty() {
            return Err(GmmError::InvalidModel("mixture has no components".into()));
        }
        let dim = components[0].dim();
        let comps = components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if c.dim() != dim {
                    return Err(GmmError::Shape(format!("component {i} has dimension {}, expected {dim}", c.dim())));
                }
                Ok(PreparedComponent {
                    log_weight: if c.weight > 0.0 { c.weight.ln() } else { f64::NEG_INFINITY },
                    mean: c.mean.as_slice().to_vec(),
                    factor: CovFactor::new(&c.covariance, i)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { comps, dim })
    }

    pub fn k(&self) -> usize {
        self.comps.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(self.dim, self.comps.len())
    }

    pub fn factor(&self, i: usize) -> &CovFactor {
        &self.comps[i].factor
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(GmmError::Shape(format!("point has {} entries, model dimension {}", x.len(), self.dim)));
        }
        Ok(())
    }

    /// Fills `ws.log_terms[i] = ln ω_i + ln g(x | μ_i, Σ_i)` and returns their
    /// log-sum-exp. `shift` is subtracted from `x` first (the robust fit's
    /// outlier vector).
    pub fn log_terms_shifted(&self, x: &[f64], shift: Option<&[f64]>, ws: &mut Workspace) -> f64 {
        for (k, c) in self.comps.iter().enumerate() {
            for j in 0..self.dim {
                let s = shift.map_or(0.0, |o| o[j]);
                ws.diff[j] = x[j] - s - c.mean[j];
            }
            ws.log_terms[k] = c.log_weight + c.factor.log_density_of_offset(&ws.diff, &mut ws.scratch);
        }
        log_sum_exp(&ws.log_terms)
    }

    pub fn log_likelihood_ws(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        self.log_terms_shifted(x, None, ws)
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let mut ws = self.workspace();
        Ok(self.log_likelihood_ws(x, &mut ws))
    }

    /// Writes posterior responsibilities into `out` and returns `ln p(x)`.
    pub fn posteriors_ws(&self, x: &[f64], shift: Option<&[f64]>, ws: &mut Workspace, out: &mut [f64]) -> f64 {
        let ll = self.log_terms_shifted(x, shift, ws);
        if ll.is_finite() {
            for (o, t) in out.iter_mut().zip(&ws.log_terms) {
                *o = (t - ll).exp();
            }
        } else {
            // every term underflowed: fall back to the largest term
            let best = argmax(&ws.log_terms);
            out.iter_mut().enumerate().for_each(|(i, o)| *o = if i == best { 1.0 } else { 0.0 });
        }
        ll
    }

    pub fn posteriors(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x)?;
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.k()];
        let ll = self.posteriors_ws(x, None, &mut ws, &mut out);
        Ok((out, ll))
    }

    /// Component with the largest `ω_i g(x | μ_i, Σ_i)`, using the terms
    /// left in the workspace by the last evaluation.
    pub fn best_component(ws: &Workspace) -> usize {
        argmax(&ws.log_terms)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Identifies where an outlier came from: the offline set is round 0, online
/// batch `T` is round `T`; `index` is the position within that set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Origin {
    pub round: u64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierRecord {
    pub point: Vector,
    pub origin: Origin,
}

/// Accumulated outliers carried between rounds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutlierStore {
    records: Vec<OutlierRecord>,
}

impl OutlierStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[OutlierRecord] {
        &self.records
    }

    pub fn points(&self) -> impl Iterator<Item = &Vector> {
        self.records.iter().map(|r| &r.point)
    }

    /// Adds a point; rejects non-finite vectors and duplicate origins.
    pub fn push(&mut self, point: Vector, origin: Origin) -> Result<()> {
        if point.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::NonFinite { parameter: 0, sample: origin.index });
        }
        if self.records.iter().any(|r| r.origin == origin) {
            return Err(GmmError::InvalidModel(format!("duplicate outlier origin {origin:?}")));
        }
        self.records.push(OutlierRecord { point, origin });
        Ok(())
    }

    pub fn from_records(records: Vec<OutlierRecord>) -> Result<Self> {
        let mut store = Self::new();
        for r in records {
            store.push(r.point, r.origin)?;
        }
        Ok(store)
    }

    pub fn into_records(self) -> Vec<OutlierRecord> {
        self.records
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(w: f64, m: [f64; 2]) -> GaussianComponent {
        GaussianComponent::new(w, Vector::from_vec(m.to_vec()), Matrix::identity(2, 2), 1.0)
    }

    #[test]
    fn model_validation() {
        assert!(MixtureModel::new(vec![]).is_err());
        assert!(MixtureModel::new(vec![comp(0.5, [0.0, 0.0])]).is_err());
        assert!(MixtureModel::new(vec![comp(0.5, [0.0, 0.0]), comp(0.5, [1.0, 0.0])]).is_ok());
        let mut bad = comp(1.0, [0.0, 0.0]);
        bad.covariance[(0, 1)] = 0.3;
        assert!(MixtureModel::new(vec![bad]).is_err());
    }

    #[test]
    fn posteriors_sum_to_one() {
        let m = MixtureModel::new(vec![comp(0.3, [0.0, 0.0]), comp(0.7, [1.0, 1.0])]).unwrap();
        let p = m.prepare().unwrap();
        let (post, _) = p.posteriors(&[0.4, 0.2]).unwrap();
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.posteriors(&[0.0]).is_err());
    }

    #[test]
    fn outlier_store_rejects_duplicates() {
        let mut s = OutlierStore::new();
        let o = Origin { round: 0, index: 3 };
        s.push(Vector::zeros(2), o).unwrap();
        assert!(s.push(Vector::zeros(2), o).is_err());
        assert!(s.push(Vector::from_vec(vec![f64::NAN, 0.0]), Origin { round: 1, index: 0 }).is_err());
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn structure_projections() {
        let c = Matrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        assert_eq!(CovarianceStructure::Full.project(c.clone()), c);
        assert_eq!(CovarianceStructure::Diagonal.project(c.clone()), Matrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 2.0]));
        assert_eq!(CovarianceStructure::Spherical.project(c.clone()), Matrix::identity(2, 2) * 3.0);
        assert_eq!(CovarianceStructure::parse("diagonal").unwrap(), CovarianceStructure::Diagonal);
        assert!(CovarianceStructure::parse("banded").is_err());
        assert_eq!(CovarianceStructure::Full.parameters(4), 10);
    }
}
