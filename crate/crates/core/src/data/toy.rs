//! Built-in stand-in for a frozen vision backbone, and feature-cache
//! construction at the three blur levels.
//!
//! The toy encoder box-averages the image to 32×32, flattens it (gray images
//! are replicated to three channels), subtracts the mean, applies a fixed
//! seeded Gaussian projection and L2-normalizes.

use crate::blur::{fovea_blur, BlurParams, Image};
use crate::error::{Result, UbpError};
use crate::numkernel::Rng;
use crate::uncertainty::{BlurLevel, RadiusRule};

use super::cache::FeatureCache;

pub const TOY_SIDE: usize = 32;
pub const TOY_FEATURES: usize = 3 * TOY_SIDE * TOY_SIDE;

/// Anything that maps an image to a unit-norm embedding.
pub trait VisionEncoder {
    fn dim(&self) -> usize;
    fn tag(&self) -> String;
    fn encode(&self, img: &Image) -> Result<Vec<f32>>;
}

/// Per-axis area weights for resampling `n_in` samples onto `n_out` bins.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut ws = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    ws.push((i, overlap / scale));
                }
                i += 1;
            }
            ws
        })
        .collect()
}

/// Box-averaged 32×32×3 feature vector, channel-major, not centered.
pub fn toy_pixels(img: &Image) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let rows = area_weights(h, TOY_SIDE);
    let cols = area_weights(w, TOY_SIDE);
    let mut out = Vec::with_capacity(TOY_FEATURES);
    for c in 0..3 {
        let plane = img.plane(if img.channels() == 1 { 0 } else { c });
        for rw in &rows {
            for cw in &cols {
                let mut acc = 0.0;
                for &(r, wr) in rw {
                    for &(q, wq) in cw {
                        acc += wr * wq * plane[r * w + q];
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Mean-centered toy pixels, the input to the projection.
pub fn centered_toy_pixels(img: &Image) -> Vec<f64> {
    let mut v = toy_pixels(img);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    v
}

#[derive(Debug, Clone)]
pub struct ToyVisionEncoder {
    dim: usize,
    seed: u64,
    // dim × TOY_FEATURES, row-major
    projection: Vec<f64>,
}

impl ToyVisionEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(UbpError::Contract("toy encoder dim must be positive".into()));
        }
        let mut rng = Rng::new(seed).derive("toy-vision-projection");
        let scale = 1.0 / (TOY_FEATURES as f64).sqrt();
        let projection = (0..dim * TOY_FEATURES).map(|_| rng.normal() * scale).collect();
        Ok(Self {
            dim,
            seed,
            projection,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl VisionEncoder for ToyVisionEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("toy-d{}-s{}", self.dim, self.seed)
    }

    fn encode(&self, img: &Image) -> Result<Vec<f32>> {
        let x = centered_toy_pixels(img);
        let y: Vec<f64> = self
            .projection
            .chunks_exact(TOY_FEATURES)
            .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum())
            .collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(UbpError::Degenerate(
                "toy encoder got a constant image; its embedding has no direction".into(),
            ));
        }
        Ok(y.iter().map(|v| (v / norm) as f32).collect())
    }
}

/// Embedding of the image foveally blurred at radius `r`.
pub fn encode_at_radius(encoder: &dyn VisionEncoder, img: &Image, r: f64, lambda: f64) -> Result<Vec<f32>> {
    encoder.encode(&fovea_blur(img, &BlurParams::centered(r, lambda))?)
}

/// Encodes every image at the rule's three radii.
pub fn build_feature_cache(
    images: &[(u32, Image)],
    encoder: &dyn VisionEncoder,
    rule: &RadiusRule,
    lambda: f64,
) -> Result<FeatureCache> {
    let mut cache = FeatureCache::new(encoder.dim(), encoder.tag());
    for (id, img) in images {
        let v = BlurLevel::ALL
            .map(|level| encode_at_radius(encoder, img, rule.radius(level), lambda));
        let [low, base, high] = v;
        cache.insert(*id, [&low?, &base?, &high?])?;
    }
    Ok(cache)
}

/// Cache whose three levels all hold the embedding at one fixed radius.
/// Used for fixed-radius training.
pub fn build_fixed_radius_cache(
    images: &[(u32, Image)],
    encoder: &dyn VisionEncoder,
    radius: f64,
    lambda: f64,
) -> Result<FeatureCache> {
    let mut cache = FeatureCache::new(encoder.dim(), format!("{}-r{radius}", encoder.tag()));
    for (id, img) in images {
        let v = encode_at_radius(encoder, img, radius, lambda)?;
        cache.insert(*id, [&v, &v, &v])?;
    }
    Ok(cache)
}
