//! The end-to-end differentiable loop: latent -> generator -> patch sampler
//! -> encoder -> aggregation loss, with the hand-written vector-Jacobian
//! chain back to the latent and plain gradient descent on top.
//!
//! Every stage exposes an exact VJP, so the composed backward pass needs no
//! autodiff framework and can be checked stage by stage with dot-product
//! tests and end to end against finite differences.

pub mod encoder;
pub mod generator;
pub mod patches;

pub use encoder::{EncoderCache, ToyEncoder};
pub use generator::{Image, LatentState, ToyGenerator};
pub use patches::{
    extract_patch, patch_vjp, patch_vjp_into, sample_patches, PatchGeometry, PatchSampler,
};

use ndarray::{Array1, Array3};

use crate::diagnostics;
use crate::error::{Error, Result};
use crate::loss::{evaluate, AggregationMode, LossReport};
use crate::measures::{Embedding, Metric, WeightVector};
use crate::rng;
use crate::sinkhorn::check_marginals;

/// The m prompts, given directly as unit-norm embedding vectors.
#[derive(Debug, Clone)]
pub struct PromptSet {
    labels: Vec<String>,
    embeddings: Vec<Embedding>,
}

impl PromptSet {
    pub fn new(labels: Vec<String>, embeddings: Vec<Embedding>) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::Empty("prompt set"));
        }
        if labels.len() != embeddings.len() {
            return Err(Error::DimensionMismatch {
                expected: embeddings.len(),
                got: labels.len(),
            });
        }
        let d = embeddings[0].dim();
        for e in &embeddings {
            if e.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: e.dim(),
                });
            }
            if (e.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "prompt embeddings must be unit norm, got {}",
                    e.norm()
                )));
            }
        }
        Ok(Self { labels, embeddings })
    }

    /// Normalize each vector, then build. Labels default to P0, P1, ...
    pub fn from_raw(labels: Option<Vec<String>>, raw: Vec<Embedding>) -> Result<Self> {
        let labels = labels
            .unwrap_or_else(|| (0..raw.len()).map(|j| format!("P{j}")).collect());
        let embeddings = raw
            .into_iter()
            .map(|e| e.normalized())
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels, embeddings)
    }

    /// `m` random unit prompts from the `prompts` stream of `seed`.
    pub fn random(m: usize, dim: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Empty("prompt set"));
        }
        let mut r = rng::stream(seed, "prompts");
        let raw = (0..m)
            .map(|_| {
                Embedding::from_array(Array1::from_shape_fn(dim, |_| {
                    rng::standard_normal(&mut r)
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_raw(None, raw)
    }

    /// A pair of antipodal unit prompts (cosine distance 2 apart), the
    /// two-prompt benchmark configuration.
    pub fn antipodal(dim: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, "prompts");
        let v = Embedding::from_array(Array1::from_shape_fn(dim, |_| {
            rng::standard_normal(&mut r)
        }))?
        .normalized()?;
        let anti = Embedding::from_array(-v.values().clone())?;
        Self::new(vec!["P0".into(), "P1".into()], vec![v, anti])
    }

    /// Antipodal pair whose axis is the mean initial patch embedding, so a
    /// run from `seed` starts with most patches on the P0 side. An antipodal
    /// pair zeroes the mean loss gradient, which freezes the mean-mode run
    /// at this imbalance; OT has to move patches across the boundary.
    pub fn aligned_antipodal(
        generator: &ToyGenerator,
        sampler: &PatchSampler,
        encoder: &ToyEncoder,
        n_probe: usize,
        seed: u64,
    ) -> Result<Self> {
        let z0 = LatentState::random(generator.latent_dim(), seed)?;
        let image = generator.generate(&z0)?;
        let mut r = rng::stream(seed, "prompt-align");
        let geometries = sampler.draw(image.height(), image.width(), n_probe, &mut r)?;
        let mut mean = Array1::zeros(encoder.embed_dim());
        for geo in &geometries {
            mean += encoder.encode(&extract_patch(&image, geo)?)?.values();
        }
        let axis = Embedding::from_array(mean)?.normalized()?;
        let anti = Embedding::from_array(-axis.values().clone())?;
        Self::new(vec!["P0".into(), "P1".into()], vec![axis, anti])
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }
}

/// Knobs of the descent loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub n_patches: usize,
    pub mode: AggregationMode,
    pub seed: u64,
    pub resample_each_iteration: bool,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.n_patches == 0 {
            return Err(Error::InvalidConfig("n_patches must be >= 1".into()));
        }
        if let AggregationMode::OptimalTransport(cfg) = self.mode {
            cfg.validate()?;
        }
        Ok(())
    }
}

/// One row per descent iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub iteration: usize,
    pub loss: f64,
    pub transport_cost: f64,
    pub marginal_error: f64,
    /// How many patches are closest to each prompt; sums to n_patches.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub rows: Vec<TrajectoryRow>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub image: Image,
    pub geometries: Vec<PatchGeometry>,
    pub embeddings: Vec<Embedding>,
    enc_caches: Vec<EncoderCache>,
    pub report: LossReport,
}

/// The assembled stages. Generator and encoder are fixed seeded maps; only
/// the latent changes during optimisation.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub generator: ToyGenerator,
    pub sampler: PatchSampler,
    pub encoder: ToyEncoder,
    pub prompts: PromptSet,
    pub metric: Metric,
}

impl Pipeline {
    pub fn validate(&self) -> Result<()> {
        self.sampler
            .validate_for(self.generator.height(), self.generator.width())?;
        if self.encoder.patch_res() != self.sampler.out_res {
            return Err(Error::InvalidConfig(format!(
                "encoder expects {}x{} patches but the sampler produces {}x{}",
                self.encoder.patch_res(),
                self.encoder.patch_res(),
                self.sampler.out_res,
                self.sampler.out_res
            )));
        }
        if self.encoder.embed_dim() != self.prompts.dim() {
            return Err(Error::InvalidConfig(format!(
                "encoder embeds into {} dimensions but prompts have {}",
                self.encoder.embed_dim(),
                self.prompts.dim()
            )));
        }
        Ok(())
    }

    /// Loss value at `z` for fixed patch geometries, plus the cache for
    /// [`Pipeline::backward`].
    pub fn forward_loss(
        &self,
        z: &LatentState,
        geometries: &[PatchGeometry],
        mode: &AggregationMode,
        strict: bool,
    ) -> Result<(f64, ForwardCache)> {
        let image = self.generator.generate(z)?;
        let mut embeddings = Vec::with_capacity(geometries.len());
        let mut enc_caches = Vec::with_capacity(geometries.len());
        for (i, geo) in geometries.iter().enumerate() {
            let patch = extract_patch(&image, geo).map_err(|e| Error::AtPatch {
                index: i,
                source: Box::new(e),
            })?;
            let (emb, cache) = self
                .encoder
                .encode_with_cache(&patch)
                .map_err(|e| Error::AtPatch {
                    index: i,
                    source: Box::new(e),
                })?;
            embeddings.push(emb);
            enc_caches.push(cache);
        }
        let report = evaluate(
            mode,
            &embeddings,
            self.prompts.embeddings(),
            self.metric,
            strict,
        )?;
        let value = report.value;
        Ok((
            value,
            ForwardCache {
                image,
                geometries: geometries.to_vec(),
                embeddings,
                enc_caches,
                report,
            },
        ))
    }

    /// Gradient of the forward value with respect to `z`: per-patch loss
    /// gradients through the encoder, scattered back onto the image, then
    /// through the generator.
    pub fn backward(&self, cache: &ForwardCache) -> Result<Array1<f64>> {
        let mut image_cot = Array3::zeros((
            self.generator.height(),
            self.generator.width(),
            3,
        ));
        for i in 0..cache.geometries.len() {
            let patch_cot = self
                .encoder
                .vjp(&cache.enc_caches[i], &cache.report.patch_gradients[i])
                .map_err(|e| Error::AtPatch {
                    index: i,
                    source: Box::new(e),
                })?;
            patch_vjp_into(&cache.geometries[i], &patch_cot, &mut image_cot)?;
        }
        self.generator.vjp(&cache.image, &image_cot)
    }

    /// Plain gradient descent `z <- z - lr * grad`, recording one trajectory
    /// row per iteration. Geometries are redrawn from the `patch-geometry`
    /// stream each iteration when `resample_each_iteration`, otherwise the
    /// initial draw is frozen for the whole run.
    pub fn optimize(
        &self,
        cfg: &OptimizerConfig,
        z0: &LatentState,
        strict: bool,
    ) -> Result<(LatentState, TrajectoryRecord)> {
        cfg.validate()?;
        self.validate()?;
        let (h, w) = (self.generator.height(), self.generator.width());
        let mut geo_rng = rng::stream(cfg.seed, "patch-geometry");
        let mut geometries = self.sampler.draw(h, w, cfg.n_patches, &mut geo_rng)?;
        let a = WeightVector::uniform(cfg.n_patches)?;
        let b = WeightVector::uniform(self.prompts.len())?;

        let mut z = z0.clone();
        let mut rows = Vec::with_capacity(cfg.iterations);
        for iteration in 0..cfg.iterations {
            if cfg.resample_each_iteration && iteration > 0 {
                geometries = self.sampler.draw(h, w, cfg.n_patches, &mut geo_rng)?;
            }
            let (loss, cache) = self
                .forward_loss(&z, &geometries, &cfg.mode, strict)
                .map_err(|e| Error::AtIteration {
                    iteration,
                    source: Box::new(e),
                })?;
            let grad = self.backward(&cache).map_err(|e| Error::AtIteration {
                iteration,
                source: Box::new(e),
            })?;
            let assignment =
                diagnostics::assign_patches(&cache.embeddings, &self.prompts, self.metric)?;
            let marginal_error = check_marginals(&cache.report.coupling, &a, &b)?;
            rows.push(TrajectoryRow {
                iteration,
                loss,
                transport_cost: cache.report.transport_cost,
                marginal_error,
                counts: assignment.counts,
            });
            z = LatentState::from_array(z.values() - &(grad * cfg.learning_rate))?;
        }
        Ok((z, TrajectoryRecord { rows }))
    }
}
