//! Embeddings, probability weights, cost matrices, and the two angular
//! distances with their analytic gradients.
//!
//! Everything here is an immutable value; all functions are pure.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// A point in the common patch/prompt embedding space.
///
/// Entries are finite and the dimension is at least 1; both are checked at
/// construction. Norms are *not* forced to 1 here; normalisation is the
/// encoder's job.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Array1<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_array(Array1::from_vec(values))
    }

    pub fn from_array(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice().expect("contiguous")
    }

    pub fn norm(&self) -> f64 {
        self.values.dot(&self.values).sqrt()
    }

    /// Rescale to unit norm. Errors on the zero vector.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Self {
            values: &self.values / n,
        })
    }
}

/// A probability vector: nonnegative entries summing to 1 within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Array1<f64>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("weight vector"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!("entry {w} is not a mass")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights(format!("entries sum to {sum}, not 1")));
        }
        Ok(Self {
            weights: Array1::from_vec(weights),
        })
    }

    /// The uniform distribution over `k` points, `1/k` each.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(Self {
            weights: Array1::from_elem(k, 1.0 / k as f64),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.weights
    }
}

/// See [`WeightVector::uniform`].
pub fn uniform_weights(k: usize) -> Result<WeightVector> {
    WeightVector::uniform(k)
}

/// An n×m matrix of pairwise distances, all entries finite and >= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
}

impl CostMatrix {
    pub fn from_entries(entries: Array2<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("cost matrix"));
        }
        for ((i, j), &c) in entries.indexed_iter() {
            if !c.is_finite() {
                return Err(Error::CostEntry {
                    row: i,
                    col: j,
                    source: Box::new(Error::NonFinite("cost".into())),
                });
            }
            if c < 0.0 {
                return Err(Error::CostEntry {
                    row: i,
                    col: j,
                    source: Box::new(Error::InvalidArgument(format!("negative cost {c}"))),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// Which distance populates cost matrices and drives gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    /// `1 - <u,v>/(|u||v|)`, in [0, 2]. The default.
    #[default]
    Cosine,
    /// `arccos` of the cosine similarity, in [0, pi].
    Geodesic,
}

impl Metric {
    pub fn distance(self, u: &Embedding, v: &Embedding) -> Result<f64> {
        match self {
            Metric::Cosine => cosine_distance(u, v),
            Metric::Geodesic => geodesic_distance(u, v),
        }
    }

    /// Gradient of the distance with respect to `u`.
    pub fn grad_u(self, u: &Embedding, v: &Embedding) -> Result<Array1<f64>> {
        distance_grad(self, u, v)
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Geodesic => "geodesic",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "geodesic" => Ok(Metric::Geodesic),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

/// Cosine similarity clamped to [-1, 1] so that rounding can never push
/// `arccos` or the distance range out of domain.
fn clamped_cosine_similarity(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((u.values().dot(v.values()) / (nu * nv)).clamp(-1.0, 1.0))
}

/// `1 - cos(u, v)`, in [0, 2].
pub fn cosine_distance(u: &Embedding, v: &Embedding) -> Result<f64> {
    Ok(1.0 - clamped_cosine_similarity(u, v)?)
}

/// Angle between `u` and `v`, in [0, pi].
pub fn geodesic_distance(u: &Embedding, v: &Embedding) -> Result<f64> {
    Ok(clamped_cosine_similarity(u, v)?.acos())
}

/// Similarity `s = <u,v>/(|u||v|)` and its gradient with respect to `u`.
fn similarity_and_grad(u: &Embedding, v: &Embedding) -> Result<(f64, Array1<f64>)> {
    let s = clamped_cosine_similarity(u, v)?;
    let nu = u.norm();
    let nv = v.norm();
    let dot = u.values().dot(v.values());
    let grad = v.values() / (nu * nv) - &(u.values() * (dot / (nu.powi(3) * nv)));
    Ok((s, grad))
}

/// Analytic gradient of `metric(u, v)` with respect to `u`.
///
/// For the geodesic the derivative of `arccos` blows up as the vectors become
/// collinear; within 1e-9 of |cos| = 1 this is reported as
/// [`Error::GradientSingularity`] rather than silently clamped.
pub fn distance_grad(metric: Metric, u: &Embedding, v: &Embedding) -> Result<Array1<f64>> {
    let (s, grad_s) = similarity_and_grad(u, v)?;
    match metric {
        Metric::Cosine => Ok(-grad_s),
        Metric::Geodesic => {
            if s.abs() >= 1.0 - 1e-9 {
                return Err(Error::GradientSingularity { cos_sim: s });
            }
            Ok(grad_s * (-1.0 / (1.0 - s * s).sqrt()))
        }
    }
}

/// Pairwise distances `metric(us[i], vs[j])`, shape n×m.
pub fn build_cost_matrix(us: &[Embedding], vs: &[Embedding], metric: Metric) -> Result<CostMatrix> {
    if us.is_empty() {
        return Err(Error::Empty("source embeddings"));
    }
    if vs.is_empty() {
        return Err(Error::Empty("target embeddings"));
    }
    let mut entries = Array2::zeros((us.len(), vs.len()));
    for (i, u) in us.iter().enumerate() {
        for (j, v) in vs.iter().enumerate() {
            entries[(i, j)] = metric.distance(u, v).map_err(|e| Error::CostEntry {
                row: i,
                col: j,
                source: Box::new(e),
            })?;
        }
    }
    Ok(CostMatrix { entries })
}
