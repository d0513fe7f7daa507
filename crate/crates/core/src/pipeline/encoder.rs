//! The stand-in patch encoder: average-pool, fixed random projection,
//! L2-normalize. Unit-norm outputs match an angularly trained embedding
//! space; like the generator it is drawn once from a seed and never trained.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::measures::Embedding;
use crate::pipeline::generator::Image;
use crate::rng;

#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pool: usize,
    projection: Array2<f64>,
    patch_res: usize,
}

/// Forward quantities the backward pass reuses: the unit output and the
/// pre-normalization norm.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub unit: Array1<f64>,
    pub norm: f64,
}

impl ToyEncoder {
    /// `patch_res` must be divisible by `pool`. The projection is drawn from
    /// the `encoder-weights` stream of `seed`, N(0, 1/pooled_len).
    pub fn new(patch_res: usize, pool: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if patch_res == 0 || pool == 0 || embed_dim == 0 {
            return Err(Error::InvalidConfig(
                "encoder dimensions must be positive".into(),
            ));
        }
        if !patch_res.is_multiple_of(pool) {
            return Err(Error::InvalidConfig(format!(
                "pool factor {pool} does not divide patch resolution {patch_res}"
            )));
        }
        let side = patch_res / pool;
        let pooled_len = side * side * 3;
        let std = 1.0 / (pooled_len as f64).sqrt();
        let mut rng = rng::stream(seed, "encoder-weights");
        let projection = Array2::from_shape_fn((embed_dim, pooled_len), |_| {
            std * rng::standard_normal(&mut rng)
        });
        Ok(Self {
            pool,
            projection,
            patch_res,
        })
    }

    pub fn patch_res(&self) -> usize {
        self.patch_res
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn encode(&self, patch: &Image) -> Result<Embedding> {
        Ok(self.encode_with_cache(patch)?.0)
    }

    pub fn encode_with_cache(&self, patch: &Image) -> Result<(Embedding, EncoderCache)> {
        let pooled = self.pool_forward(patch)?;
        let y = self.projection.dot(&pooled);
        let norm = y.dot(&y).sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateEncoding);
        }
        let unit = y / norm;
        let emb = Embedding::from_array(unit.clone())?;
        Ok((emb, EncoderCache { unit, norm }))
    }

    /// Backward through normalize, projection and pooling:
    /// `y_bar = (e_bar - <e_bar, e> e)/|y|`, then the two linear transposes.
    pub fn vjp(&self, cache: &EncoderCache, cotangent: &Array1<f64>) -> Result<Array3<f64>> {
        if cotangent.len() != self.embed_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim(),
                got: cotangent.len(),
            });
        }
        let along = cache.unit.dot(cotangent);
        let y_bar = (cotangent - &(cache.unit.clone() * along)) / cache.norm;
        let pooled_bar = self.projection.t().dot(&y_bar);
        Ok(self.pool_backward(&pooled_bar))
    }

    /// Directional derivative at `patch` along `dpatch`.
    pub fn jvp(&self, patch: &Image, dpatch: &Array3<f64>) -> Result<Array1<f64>> {
        if dpatch.shape() != patch.pixels().shape() {
            return Err(Error::DimensionMismatch {
                expected: patch.pixels().len(),
                got: dpatch.len(),
            });
        }
        let (_, cache) = self.encode_with_cache(patch)?;
        let dpooled = self.pool_linear(dpatch);
        let dy = self.projection.dot(&dpooled);
        let along = cache.unit.dot(&dy);
        Ok((dy - cache.unit.clone() * along) / cache.norm)
    }

    fn pool_forward(&self, patch: &Image) -> Result<Array1<f64>> {
        if patch.height() != self.patch_res || patch.width() != self.patch_res {
            return Err(Error::DimensionMismatch {
                expected: self.patch_res,
                got: patch.height(),
            });
        }
        Ok(self.pool_linear(patch.pixels()))
    }

    fn pool_linear(&self, pixels: &Array3<f64>) -> Array1<f64> {
        let side = self.patch_res / self.pool;
        let inv = 1.0 / (self.pool * self.pool) as f64;
        let mut pooled = Array1::zeros(side * side * 3);
        for by in 0..side {
            for bx in 0..side {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for dy in 0..self.pool {
                        for dx in 0..self.pool {
                            acc += pixels[(by * self.pool + dy, bx * self.pool + dx, c)];
                        }
                    }
                    pooled[(by * side + bx) * 3 + c] = acc * inv;
                }
            }
        }
        pooled
    }

    fn pool_backward(&self, pooled_bar: &Array1<f64>) -> Array3<f64> {
        let side = self.patch_res / self.pool;
        let inv = 1.0 / (self.pool * self.pool) as f64;
        let mut out = Array3::zeros((self.patch_res, self.patch_res, 3));
        for by in 0..side {
            for bx in 0..side {
                for c in 0..3 {
                    let v = pooled_bar[(by * side + bx) * 3 + c] * inv;
                    for dy in 0..self.pool {
                        for dx in 0..self.pool {
                            out[(by * self.pool + dy, bx * self.pool + dx, c)] = v;
                        }
                    }
                }
            }
        }
        out
    }
}
