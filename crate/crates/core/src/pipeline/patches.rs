//! Random axis-aligned crops, bilinearly resized to a fixed resolution.
//!
//! A geometry is drawn once and then held fixed, which makes the patch a
//! sparse linear function of the image pixels; its transpose is the exact
//! backward map. Overlapping patches accumulate additively on the way back.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::generator::Image;

/// One crop: top-left corner, square side length, output resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    /// Column of the top-left corner, pixels.
    pub x0: usize,
    /// Row of the top-left corner, pixels.
    pub y0: usize,
    /// Side length of the square crop, pixels.
    pub size: usize,
    /// The crop is resized to out_res × out_res.
    pub out_res: usize,
}

impl PatchGeometry {
    fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        if self.size == 0 || self.out_res == 0 {
            return Err(Error::InvalidArgument(
                "patch size and resolution must be positive".into(),
            ));
        }
        if self.y0 + self.size > height || self.x0 + self.size > width {
            return Err(Error::InvalidArgument(format!(
                "crop ({},{})+{} leaves the {height}x{width} image",
                self.y0, self.x0, self.size
            )));
        }
        Ok(())
    }

    /// Source coordinate for output index `k` (align-corners mapping, so
    /// out_res == size degenerates to an exact sub-grid copy).
    fn source_coord(&self, origin: usize, k: usize) -> f64 {
        if self.out_res == 1 {
            origin as f64 + (self.size - 1) as f64 / 2.0
        } else {
            origin as f64 + k as f64 * (self.size - 1) as f64 / (self.out_res - 1) as f64
        }
    }
}

/// Size bounds and output resolution for geometry draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSampler {
    pub size_min: usize,
    pub size_max: usize,
    pub out_res: usize,
}

impl PatchSampler {
    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        if self.size_min == 0 || self.out_res == 0 {
            return Err(Error::InvalidConfig(
                "patch sizes and resolution must be positive".into(),
            ));
        }
        if self.size_min > self.size_max {
            return Err(Error::InvalidConfig(format!(
                "patch size bounds inverted: {} > {}",
                self.size_min, self.size_max
            )));
        }
        if self.size_max > height || self.size_max > width {
            return Err(Error::InvalidConfig(format!(
                "largest patch ({}) exceeds the {height}x{width} image",
                self.size_max
            )));
        }
        Ok(())
    }

    /// Draw `n` geometries from the stream: size uniform in
    /// [size_min, size_max], corner uniform among valid placements.
    pub fn draw(
        &self,
        height: usize,
        width: usize,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<PatchGeometry>> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one patch".into()));
        }
        self.validate_for(height, width)?;
        Ok((0..n)
            .map(|_| {
                let size = rng.random_range(self.size_min..=self.size_max);
                let y0 = rng.random_range(0..=height - size);
                let x0 = rng.random_range(0..=width - size);
                PatchGeometry {
                    x0,
                    y0,
                    size,
                    out_res: self.out_res,
                }
            })
            .collect())
    }
}

/// Draw `n` geometries and extract their patches.
pub fn sample_patches(
    img: &Image,
    sampler: &PatchSampler,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<PatchGeometry>, Vec<Image>)> {
    let geometries = sampler.draw(img.height(), img.width(), n, rng)?;
    let patches = geometries
        .iter()
        .map(|g| extract_patch(img, g))
        .collect::<Result<Vec<_>>>()?;
    Ok((geometries, patches))
}

/// Bilinear crop-and-resize of the geometry's region to out_res × out_res.
pub fn extract_patch(img: &Image, geo: &PatchGeometry) -> Result<Image> {
    geo.validate_for(img.height(), img.width())?;
    let p = geo.out_res;
    let src = img.pixels();
    let mut out = Array3::zeros((p, p, 3));
    for py in 0..p {
        let (iy0, iy1, wy) = split_coord(geo.source_coord(geo.y0, py));
        for px in 0..p {
            let (ix0, ix1, wx) = split_coord(geo.source_coord(geo.x0, px));
            for c in 0..3 {
                out[(py, px, c)] = (1.0 - wy) * (1.0 - wx) * src[(iy0, ix0, c)]
                    + (1.0 - wy) * wx * src[(iy0, ix1, c)]
                    + wy * (1.0 - wx) * src[(iy1, ix0, c)]
                    + wy * wx * src[(iy1, ix1, c)];
            }
        }
    }
    Image::new(out)
}

/// Transpose of [`extract_patch`]: scatter a patch cotangent back onto an
/// image-shaped cotangent of the given dimensions.
pub fn patch_vjp(
    geo: &PatchGeometry,
    height: usize,
    width: usize,
    cotangent: &Array3<f64>,
) -> Result<Array3<f64>> {
    let mut acc = Array3::zeros((height, width, 3));
    patch_vjp_into(geo, cotangent, &mut acc)?;
    Ok(acc)
}

/// As [`patch_vjp`], accumulating into an existing buffer.
pub fn patch_vjp_into(
    geo: &PatchGeometry,
    cotangent: &Array3<f64>,
    acc: &mut Array3<f64>,
) -> Result<()> {
    let (height, width) = (acc.shape()[0], acc.shape()[1]);
    geo.validate_for(height, width)?;
    let p = geo.out_res;
    if cotangent.shape() != [p, p, 3] {
        return Err(Error::DimensionMismatch {
            expected: p * p * 3,
            got: cotangent.len(),
        });
    }
    for py in 0..p {
        let (iy0, iy1, wy) = split_coord(geo.source_coord(geo.y0, py));
        for px in 0..p {
            let (ix0, ix1, wx) = split_coord(geo.source_coord(geo.x0, px));
            for c in 0..3 {
                let ct = cotangent[(py, px, c)];
                acc[(iy0, ix0, c)] += (1.0 - wy) * (1.0 - wx) * ct;
                acc[(iy0, ix1, c)] += (1.0 - wy) * wx * ct;
                acc[(iy1, ix0, c)] += wy * (1.0 - wx) * ct;
                acc[(iy1, ix1, c)] += wy * wx * ct;
            }
        }
    }
    Ok(())
}

fn split_coord(coord: f64) -> (usize, usize, f64) {
    let i0 = coord.floor() as usize;
    let w = coord - i0 as f64;
    // At w == 0 the second index carries zero weight; aliasing it onto the
    // first keeps it in bounds on the crop's far edge.
    let i1 = if w == 0.0 { i0 } else { i0 + 1 };
    (i0, i1, w)
}
