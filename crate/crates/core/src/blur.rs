//! Foveated Gaussian blur.
//!
//! A blur radius is turned into a discrete separable Gaussian kernel, the
//! image is blurred uniformly, and the result is blended with the original
//! using a weight that decays exponentially with distance from the fixation
//! point:
//!
//! ```text
//! x_blur = G_r * x                       (separable, reflect-101 borders)
//! alpha(i, j) = exp(-lambda * d(i, j) / L)
//! out = alpha ⊙ x + (1 - alpha) ⊙ x_blur
//! ```
//!
//! `L` is the distance from the fixation point to the farthest pixel, so the
//! periphery keeps `exp(-lambda)` of the sharp image.

use crate::error::{contract, Result};
use crate::numkernel::{Matrix, Rng};

/// Default fovea decay rate.
pub const DEFAULT_LAMBDA: f64 = 2.0;

/// Image with values in `[0, 1]`, stored as channel-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        contract!(height >= 1 && width >= 1, "image must be at least 1x1");
        contract!(
            channels == 1 || channels == 3,
            "images have 1 or 3 channels, got {channels}"
        );
        contract!(
            data.len() == height * width * channels,
            "image data has {} values, expected {height}x{width}x{channels}",
            data.len()
        );
        contract!(
            data.iter().all(|v| (0.0..=1.0).contains(v)),
            "image values must lie in [0, 1]"
        );
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Geometric center, the default fixation point.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.height as f64 - 1.0) / 2.0,
            (self.width as f64 - 1.0) / 2.0,
        )
    }

    fn with_data(&self, data: Vec<f64>) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }
}

/// Normalized symmetric 1-D Gaussian of length `2k + 1`. The 2-D kernel is
/// its outer product with itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    half_width: usize,
    sigma: f64,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn size(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlurKernel {
    Identity,
    Gaussian(Kernel),
}

impl BlurKernel {
    pub fn is_identity(&self) -> bool {
        matches!(self, BlurKernel::Identity)
    }
}

/// Blur configuration for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurParams {
    /// Kernel size in pixels; below 1 means no blur.
    pub radius: f64,
    pub lambda: f64,
    /// Fixation point as (row, col). `None` is the image center.
    pub center: Option<(f64, f64)>,
}

impl BlurParams {
    pub fn centered(radius: f64, lambda: f64) -> Self {
        Self {
            radius,
            lambda,
            center: None,
        }
    }
}

/// Maps a continuous radius to a discrete kernel.
///
/// `r < 1` (including every negative radius) is no blur. Otherwise the
/// kernel size is `K = 2k + 1` with `k = round((r - 1) / 2)`, at least 1,
/// and `sigma = K / 6`.
pub fn radius_to_kernel(r: f64) -> BlurKernel {
    if !(r >= 1.0) {
        return BlurKernel::Identity;
    }
    let k = (((r - 1.0) / 2.0).round() as usize).max(1);
    let size = (2 * k + 1) as f64;
    BlurKernel::Gaussian(
        gaussian_kernel_1d(k, size / 6.0).expect("k >= 1 and sigma > 0 by construction"),
    )
}

pub fn gaussian_kernel_1d(k: usize, sigma: f64) -> Result<Kernel> {
    contract!(k >= 1, "kernel half width must be at least 1");
    contract!(
        sigma > 0.0 && sigma.is_finite(),
        "kernel sigma must be positive, got {sigma}"
    );
    let raw: Vec<f64> = (0..=2 * k)
        .map(|i| {
            let m = i as f64 - k as f64;
            (-(m * m) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // exact mirror symmetry regardless of summation order
    for i in 0..k {
        let avg = 0.5 * (weights[i] + weights[2 * k - i]);
        weights[i] = avg;
        weights[2 * k - i] = avg;
    }
    Ok(Kernel {
        half_width: k,
        sigma,
        weights,
    })
}

/// Reflect-101 border index (`dcb|abcd|cba`), valid for any offset.
#[inline]
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Separable convolution, horizontal pass then vertical pass.
pub fn uniform_blur(img: &Image, kernel: &BlurKernel) -> Image {
    let kernel = match kernel {
        BlurKernel::Identity => return img.clone(),
        BlurKernel::Gaussian(k) => k,
    };
    let (h, w) = (img.height, img.width);
    let k = kernel.half_width as isize;
    let mut out = Vec::with_capacity(img.data.len());
    let mut tmp = vec![0.0; h * w];
    for c in 0..img.channels {
        let plane = img.plane(c);
        for row in 0..h {
            let src = &plane[row * w..(row + 1) * w];
            for col in 0..w {
                let mut acc = 0.0;
                for (t, wt) in kernel.weights.iter().enumerate() {
                    acc += wt * src[reflect101(col as isize + t as isize - k, w)];
                }
                tmp[row * w + col] = acc;
            }
        }
        for row in 0..h {
            for col in 0..w {
                let mut acc = 0.0;
                for (t, wt) in kernel.weights.iter().enumerate() {
                    acc += wt * tmp[reflect101(row as isize + t as isize - k, h) * w + col];
                }
                out.push(acc.clamp(0.0, 1.0));
            }
        }
    }
    img.with_data(out)
}

/// Blend weight per pixel, `exp(-lambda * d / L)`.
pub fn fovea_alpha_map(h: usize, w: usize, lambda: f64, center: (f64, f64)) -> Result<Matrix<f64>> {
    contract!(h >= 1 && w >= 1, "alpha map needs a non-empty image");
    contract!(
        lambda >= 0.0 && lambda.is_finite(),
        "lambda must be non-negative, got {lambda}"
    );
    let (cr, cc) = center;
    contract!(
        (0.0..=(h - 1) as f64).contains(&cr) && (0.0..=(w - 1) as f64).contains(&cc),
        "fovea center ({cr}, {cc}) outside a {h}x{w} image"
    );
    let corners = [
        (0.0, 0.0),
        (0.0, (w - 1) as f64),
        ((h - 1) as f64, 0.0),
        ((h - 1) as f64, (w - 1) as f64),
    ];
    let max_dist = corners
        .iter()
        .map(|&(r, c)| (r - cr).hypot(c - cc))
        .fold(0.0, f64::max);
    Ok(Matrix::from_fn(h, w, |i, j| {
        if max_dist == 0.0 {
            return 1.0;
        }
        let d = (i as f64 - cr).hypot(j as f64 - cc);
        (-lambda * d / max_dist).exp()
    }))
}

/// `alpha ⊙ sharp + (1 - alpha) ⊙ blurred`, the same alpha for every channel.
pub fn blend(sharp: &Image, blurred: &Image, alpha: &Matrix<f64>) -> Result<Image> {
    contract!(
        sharp.height == blurred.height
            && sharp.width == blurred.width
            && sharp.channels == blurred.channels,
        "blend: image shapes differ"
    );
    contract!(
        alpha.shape() == (sharp.height, sharp.width),
        "blend: alpha map is {:?}, image is {}x{}",
        alpha.shape(),
        sharp.height,
        sharp.width
    );
    let plane = sharp.height * sharp.width;
    let a = alpha.as_slice();
    let data = sharp
        .data
        .iter()
        .zip(&blurred.data)
        .enumerate()
        .map(|(idx, (&x, &y))| {
            let al = a[idx % plane];
            (al * x + (1.0 - al) * y).clamp(0.0, 1.0)
        })
        .collect();
    Ok(sharp.with_data(data))
}

pub fn fovea_blur(img: &Image, params: &BlurParams) -> Result<Image> {
    let kernel = radius_to_kernel(params.radius);
    let center = params.center.unwrap_or_else(|| img.center());
    let alpha = fovea_alpha_map(img.height, img.width, params.lambda, center)?;
    if kernel.is_identity() {
        return Ok(img.clone());
    }
    let blurred = uniform_blur(img, &kernel);
    blend(img, &blurred, &alpha)
}

/// Sum of squared 5-point Laplacian responses over all channels, with
/// reflect-101 borders. Measures remaining high-frequency detail.
pub fn high_frequency_energy(img: &Image) -> f64 {
    let (h, w) = (img.height, img.width);
    let mut energy = 0.0;
    for c in 0..img.channels {
        let p = img.plane(c);
        let at = |r: isize, q: isize| p[reflect101(r, h) * w + reflect101(q, w)];
        for r in 0..h as isize {
            for q in 0..w as isize {
                let lap = at(r - 1, q) + at(r + 1, q) + at(r, q - 1) + at(r, q + 1) - 4.0 * at(r, q);
                energy += lap * lap;
            }
        }
    }
    energy
}

/// Additive Gaussian pixel noise, clamped back into `[0, 1]`.
pub fn add_gaussian_noise(img: &Image, sigma: f64, rng: &mut Rng) -> Image {
    let data = img
        .data
        .iter()
        .map(|&v| (v + sigma * rng.normal()).clamp(0.0, 1.0))
        .collect();
    img.with_data(data)
}

/// Block-average by `factor` then nearest-neighbour upsample back to the
/// original size.
pub fn low_resolution(img: &Image, factor: usize) -> Result<Image> {
    contract!(factor >= 1, "low-resolution factor must be at least 1");
    let (h, w) = (img.height, img.width);
    let (sh, sw) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut out = Vec::with_capacity(img.data.len());
    for c in 0..img.channels {
        let p = img.plane(c);
        let mut small = vec![0.0; sh * sw];
        for br in 0..sh {
            for bc in 0..sw {
                let rows = br * factor..((br + 1) * factor).min(h);
                let cols = bc * factor..((bc + 1) * factor).min(w);
                let n = (rows.len() * cols.len()) as f64;
                let s: f64 = rows
                    .flat_map(|r| cols.clone().map(move |q| (r, q)))
                    .map(|(r, q)| p[r * w + q])
                    .sum();
                small[br * sw + bc] = s / n;
            }
        }
        for r in 0..h {
            for q in 0..w {
                out.push(small[(r / factor) * sw + q / factor]);
            }
        }
    }
    Ok(img.with_data(out))
}
