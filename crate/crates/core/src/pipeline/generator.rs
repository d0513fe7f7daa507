//! The stand-in image generator: a fixed random affine map followed by tanh.
//!
//! It is never trained. Weights are a deterministic function of the seed, so
//! gradients through it are exactly checkable and runs are reproducible.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::rng;

/// An h×w RGB image with entries in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array3<f64>,
}

impl Image {
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        if pixels.shape()[2] != 3 {
            return Err(Error::InvalidArgument(format!(
                "image needs 3 channels, got {}",
                pixels.shape()[2]
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        Ok(Self { pixels })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }
}

/// Latent coordinates `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    z: Array1<f64>,
}

impl LatentState {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        Self::from_array(Array1::from_vec(z))
    }

    pub fn from_array(z: Array1<f64>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::Empty("latent"));
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("latent".into()));
        }
        Ok(Self { z })
    }

    /// Standard normal draw from the `init-latent` stream of `seed`.
    pub fn random(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, "init-latent");
        Self::from_array(Array1::from_shape_fn(dim, |_| rng::standard_normal(&mut rng)))
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.z
    }
}

/// `x = tanh(W z + c)` reshaped to h×w×3.
#[derive(Debug, Clone)]
pub struct ToyGenerator {
    weight: Array2<f64>,
    bias: Array1<f64>,
    height: usize,
    width: usize,
}

impl ToyGenerator {
    /// Weights from the `generator-weights` stream of `seed`: rows of `W`
    /// drawn N(0, 1/d_z) so pre-activations stay in tanh's responsive range,
    /// bias N(0, 0.01).
    pub fn new(height: usize, width: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        if height == 0 || width == 0 || latent_dim == 0 {
            return Err(Error::InvalidConfig(
                "generator dimensions must be positive".into(),
            ));
        }
        let out = height * width * 3;
        let mut rng = rng::stream(seed, "generator-weights");
        let w_std = 1.0 / (latent_dim as f64).sqrt();
        let weight =
            Array2::from_shape_fn((out, latent_dim), |_| w_std * rng::standard_normal(&mut rng));
        let bias = Array1::from_shape_fn(out, |_| 0.1 * rng::standard_normal(&mut rng));
        Ok(Self {
            weight,
            bias,
            height,
            width,
        })
    }

    /// Explicit weights; used by tests that need e.g. a zero bias.
    pub fn from_parts(
        weight: Array2<f64>,
        bias: Array1<f64>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let out = height * width * 3;
        if weight.nrows() != out || bias.len() != out {
            return Err(Error::DimensionMismatch {
                expected: out,
                got: weight.nrows(),
            });
        }
        Ok(Self {
            weight,
            bias,
            height,
            width,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn generate(&self, z: &LatentState) -> Result<Image> {
        if z.dim() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                got: z.dim(),
            });
        }
        let pre = self.weight.dot(z.values()) + &self.bias;
        let flat = pre.mapv(f64::tanh);
        let pixels = flat
            .into_shape_with_order((self.height, self.width, 3))
            .expect("shape fixed at construction");
        Ok(Image { pixels })
    }

    /// `z_bar = W^T (x_bar ⊙ (1 - x^2))` where `x` is the generated image.
    pub fn vjp(&self, image: &Image, cotangent: &Array3<f64>) -> Result<Array1<f64>> {
        if cotangent.shape() != image.pixels.shape() {
            return Err(Error::DimensionMismatch {
                expected: image.pixels.len(),
                got: cotangent.len(),
            });
        }
        let n = self.height * self.width * 3;
        let mut scaled = Array1::zeros(n);
        for (k, (&x, &ct)) in image.pixels.iter().zip(cotangent.iter()).enumerate() {
            scaled[k] = ct * (1.0 - x * x);
        }
        Ok(self.weight.t().dot(&scaled))
    }

    /// Directional derivative `dx = (1 - x^2) ⊙ (W dz)`.
    pub fn jvp(&self, image: &Image, dz: &Array1<f64>) -> Result<Array3<f64>> {
        if dz.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                got: dz.len(),
            });
        }
        let lin = self.weight.dot(dz);
        let mut out = Array3::zeros((self.height, self.width, 3));
        for (k, (o, &x)) in out.iter_mut().zip(image.pixels.iter()).enumerate() {
            *o = lin[k] * (1.0 - x * x);
        }
        Ok(out)
    }
}
