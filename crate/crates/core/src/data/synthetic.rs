//! Synthetic paired image / brain-signal data with a known generating map.
//!
//! Images are sums of colored gratings in three frequency bands, driven by a
//! per-concept coefficient vector plus per-image jitter. An optional bank of
//! high-frequency "detail" gratings gets fresh random weights per image and
//! carries no concept information. The "brain" sees a low-passed view of
//! each image:
//!
//! ```text
//! view   = leak * x + (1 - leak) * fovea_blur(x, system_radius)
//! latent = A · centered_toy_pixels(view)            (A fixed, seeded)
//! clean  = Σ_j latent_j · spatial_j ⊗ temporal_j    (scaled to unit RMS)
//! trial  = exp(-drift * |ξ|) · clean
//!          + noise_sigma · Σ_j ν_j · source_j         (source noise)
//!          + sensor_noise · ε                         (electrode noise)
//! ```
//!
//! `source_j` is the pattern of latent `j` scaled so that `noise_sigma = 1`
//! matches the RMS latent activation. Source noise lives in the same
//! subspace as the signal, so no decoder can average it away across
//! electrodes.
//!
//! Training and test concepts are disjoint, so test retrieval is zero-shot.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::epochs::EpochTensor;
use super::toy::{centered_toy_pixels, TOY_FEATURES};
use crate::blur::{fovea_blur, BlurParams, Image};
use crate::error::{contract, Result};
use crate::numkernel::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Total concepts, training plus test.
    pub n_concepts: usize,
    pub n_test_concepts: usize,
    /// When set, replaces `n_test_concepts` with this fraction of
    /// `n_concepts`, rounded to the nearest integer.
    pub test_fraction: Option<f64>,
    /// Training images per concept. Test concepts get one image each.
    pub images_per_concept: usize,
    pub trials_per_image: usize,
    pub test_trials_per_image: usize,
    pub channels: usize,
    pub timepoints: usize,
    pub sample_rate_hz: u32,
    pub image_size: usize,
    pub n_latent: usize,
    pub gratings_per_band: usize,
    /// Relative amplitude of the low, mid and high frequency bands.
    pub band_gains: [f64; 3],
    pub concept_jitter: f64,
    /// High-frequency gratings with per-image random weights, unrelated to
    /// the concept.
    pub detail_gratings: usize,
    pub detail_gain: f64,
    pub mix_matrix_seed: u64,
    pub noise_sigma: f64,
    pub sensor_noise: f64,
    pub attention_drift: f64,
    pub highfreq_leak: f64,
    pub system_radius: f64,
    pub blur_lambda: f64,
    pub subject: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_concepts: 60,
            n_test_concepts: 10,
            test_fraction: None,
            images_per_concept: 10,
            trials_per_image: 4,
            test_trials_per_image: 80,
            channels: 17,
            timepoints: 32,
            sample_rate_hz: 250,
            image_size: 64,
            n_latent: 32,
            gratings_per_band: 8,
            band_gains: [1.0, 1.0, 1.0],
            concept_jitter: 0.5,
            detail_gratings: 0,
            detail_gain: 1.0,
            mix_matrix_seed: 7,
            noise_sigma: 1.0,
            sensor_noise: 0.5,
            attention_drift: 0.0,
            highfreq_leak: 0.0,
            system_radius: 11.0,
            blur_lambda: crate::blur::DEFAULT_LAMBDA,
            subject: "synthetic".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        contract!(
            self.n_concepts >= 1
                && self.images_per_concept >= 1
                && self.trials_per_image >= 1
                && self.test_trials_per_image >= 1
                && self.channels >= 1
                && self.timepoints >= 1
                && self.image_size >= 2
                && self.n_latent >= 1
                && self.gratings_per_band >= 1
                && self.sample_rate_hz >= 1,
            "synthetic counts must all be at least 1 (image_size at least 2)"
        );
        if let Some(f) = self.test_fraction {
            contract!((0.0..1.0).contains(&f), "test_fraction must lie in [0, 1), got {f}");
        }
        contract!(
            self.n_test() >= 1 && self.n_test() < self.n_concepts,
            "need at least one test concept and one training concept"
        );
        contract!(
            self.noise_sigma >= 0.0
                && self.noise_sigma.is_finite()
                && self.sensor_noise >= 0.0
                && self.sensor_noise.is_finite(),
            "noise levels must be non-negative"
        );
        contract!(
            self.detail_gain >= 0.0 && self.detail_gain.is_finite(),
            "detail_gain must be non-negative"
        );
        contract!(self.attention_drift >= 0.0, "attention_drift must be non-negative");
        contract!(
            (0.0..=1.0).contains(&self.highfreq_leak),
            "highfreq_leak must lie in [0, 1]"
        );
        contract!(
            self.band_gains.iter().all(|g| *g >= 0.0) && self.band_gains.iter().any(|g| *g > 0.0),
            "band gains must be non-negative and not all zero"
        );
        Ok(())
    }

    /// Number of held-out test concepts.
    pub fn n_test(&self) -> usize {
        match self.test_fraction {
            Some(f) => (f * self.n_concepts as f64).round() as usize,
            None => self.n_test_concepts,
        }
    }

    fn n_gratings(&self) -> usize {
        3 * self.gratings_per_band
    }
}

/// What the generator knows and a decoder should not.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub concept_of: BTreeMap<u32, u32>,
    pub train_concepts: Vec<u32>,
    pub test_concepts: Vec<u32>,
    pub train_image_ids: Vec<u32>,
    pub test_image_ids: Vec<u32>,
    /// Noiseless signal per image, `channels × timepoints` row-major.
    pub clean: BTreeMap<u32, Vec<f32>>,
    /// Unit source-noise pattern of each latent, same layout as `clean`.
    pub sources: Vec<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: EpochTensor,
    pub test: EpochTensor,
    pub images: Vec<(u32, Image)>,
    pub truth: GroundTruth,
}

/// Fixed parts of the generator that depend only on the mix seed.
struct World {
    basis: Vec<Vec<f64>>,
    detail: Vec<Vec<f64>>,
    amplitude: f64,
    mixing: Vec<f64>,
    spatial: Vec<Vec<f64>>,
    temporal: Vec<Vec<f64>>,
}

const BANDS: [(f64, f64); 3] = [(1.0, 3.0), (4.0, 8.0), (9.0, 15.0)];
// target per-pixel standard deviation before clamping
const PIXEL_STD: f64 = 0.12;

fn build_world(spec: &SyntheticSpec) -> World {
    let root = Rng::new(spec.mix_matrix_seed);
    let s = spec.image_size;
    let mut rng = root.derive("gratings");
    let mut basis = Vec::with_capacity(spec.n_gratings());
    for (band, &(f_lo, f_hi)) in BANDS.iter().enumerate() {
        for _ in 0..spec.gratings_per_band {
            basis.push(grating(&mut rng, s, f_lo, f_hi, spec.band_gains[band]));
        }
    }
    let (f_lo, f_hi) = BANDS[2];
    let mut rng = root.derive("detail");
    let detail = (0..spec.detail_gratings)
        .map(|_| grating(&mut rng, s, f_lo, f_hi, spec.detail_gain))
        .collect();
    let coef_var = 1.0 + spec.concept_jitter * spec.concept_jitter;
    let gain_sq: f64 = coef_var * spec.band_gains.iter().map(|g| g * g).sum::<f64>() * spec.gratings_per_band as f64
        + spec.detail_gain * spec.detail_gain * spec.detail_gratings as f64;
    // cosines have mean square 1/2, colors mean square 1 per channel
    let amplitude = PIXEL_STD / (0.5 * gain_sq).sqrt();

    let mut rng = root.derive("mixing");
    let scale = 1.0 / (TOY_FEATURES as f64).sqrt();
    let mixing = (0..spec.n_latent * TOY_FEATURES).map(|_| rng.normal() * scale).collect();

    let mut rng = root.derive("spatial");
    let spatial = (0..spec.n_latent)
        .map(|_| (0..spec.channels).map(|_| rng.normal()).collect())
        .collect();

    let mut rng = root.derive("temporal");
    let t_len = spec.timepoints as f64;
    let temporal = (0..spec.n_latent)
        .map(|_| {
            let latency = rng.uniform(0.15, 0.85) * t_len;
            let width = rng.uniform(0.05, 0.15) * t_len;
            let freq = rng.uniform(0.5, 3.0) / t_len;
            let phase = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
            let mut w: Vec<f64> = (0..spec.timepoints)
                .map(|t| {
                    let d = (t as f64 - latency) / width.max(0.5);
                    (-0.5 * d * d).exp() * (2.0 * std::f64::consts::PI * freq * t as f64 + phase).cos()
                })
                .collect();
            let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                w.iter_mut().for_each(|v| *v /= n);
            }
            w
        })
        .collect();

    World {
        basis,
        detail,
        amplitude,
        mixing,
        spatial,
        temporal,
    }
}

/// A colored grating with `f_lo..f_hi` cycles per image width.
fn grating(rng: &mut Rng, s: usize, f_lo: f64, f_hi: f64, gain: f64) -> Vec<f64> {
    let f = rng.uniform(f_lo, f_hi);
    let theta = rng.uniform(0.0, std::f64::consts::PI);
    let phase = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
    let mut color = [rng.normal(), rng.normal(), rng.normal()];
    let cn = color.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-9);
    color.iter_mut().for_each(|c| *c *= 3f64.sqrt() / cn);
    let (ct, st) = (theta.cos(), theta.sin());
    let mut img = Vec::with_capacity(3 * s * s);
    for col in color {
        for r in 0..s {
            for q in 0..s {
                let u = (q as f64 * ct + r as f64 * st) / s as f64;
                let v = (2.0 * std::f64::consts::PI * f * u + phase).cos();
                img.push(gain * col * v);
            }
        }
    }
    img
}

/// `coefs` weights the concept basis followed by the detail bank.
fn render(world: &World, spec: &SyntheticSpec, coefs: &[f64]) -> Result<Image> {
    let s = spec.image_size;
    let mut data = vec![0.0; 3 * s * s];
    for (c, b) in coefs.iter().zip(world.basis.iter().chain(&world.detail)) {
        for (d, v) in data.iter_mut().zip(b) {
            *d += c * v;
        }
    }
    for d in &mut data {
        *d = (0.5 + world.amplitude * *d).clamp(0.0, 1.0);
    }
    Image::new(s, s, 3, data)
}

/// Latent activations of one image.
fn latents(world: &World, spec: &SyntheticSpec, img: &Image) -> Result<Vec<f64>> {
    let blurred = fovea_blur(img, &BlurParams::centered(spec.system_radius, spec.blur_lambda))?;
    let view: Vec<f64> = img
        .as_slice()
        .iter()
        .zip(blurred.as_slice())
        .map(|(x, b)| spec.highfreq_leak * x + (1.0 - spec.highfreq_leak) * b)
        .collect();
    let view = Image::new(img.height(), img.width(), img.channels(), view)?;
    let feat = centered_toy_pixels(&view);
    Ok(world
        .mixing
        .chunks_exact(TOY_FEATURES)
        .map(|row| row.iter().zip(&feat).map(|(m, f)| m * f).sum())
        .collect())
}

/// Sensor pattern of each latent for one subject.
fn patterns(world: &World, spatial: &[Vec<f64>]) -> Vec<Vec<f64>> {
    spatial
        .iter()
        .zip(&world.temporal)
        .map(|(sp, tw)| sp.iter().flat_map(|s| tw.iter().map(move |t| s * t)).collect())
        .collect()
}

fn mix(latent: &[f64], patterns: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (a, p) in latent.iter().zip(patterns) {
        for (o, v) in out.iter_mut().zip(p) {
            *o += a * v;
        }
    }
    out
}

/// Images and ground truth without any trials.
pub fn generate_clean(spec: &SyntheticSpec, rng: &Rng) -> Result<(Vec<(u32, Image)>, GroundTruth)> {
    let subjects = generate_clean_subjects(spec, 1, rng)?;
    let (images, mut truths) = subjects;
    Ok((images, truths.remove(0)))
}

fn generate_clean_subjects(
    spec: &SyntheticSpec,
    n_subjects: usize,
    rng: &Rng,
) -> Result<(Vec<(u32, Image)>, Vec<GroundTruth>)> {
    spec.validate()?;
    let world = build_world(spec);
    let k = spec.n_gratings();

    let mut order: Vec<u32> = (0..spec.n_concepts as u32).collect();
    rng.derive("split").shuffle(&mut order);
    let mut test_concepts = order[..spec.n_test()].to_vec();
    let mut train_concepts = order[spec.n_test()..].to_vec();
    test_concepts.sort_unstable();
    train_concepts.sort_unstable();

    let mut crng = rng.derive("concepts");
    let concept_coefs: Vec<Vec<f64>> = (0..spec.n_concepts)
        .map(|_| (0..k).map(|_| crng.normal()).collect())
        .collect();

    let mut jrng = rng.derive("jitter");
    let mut drng = rng.derive("detail-weights");
    let mut images = Vec::new();
    let mut concept_of = BTreeMap::new();
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    let mut next_id = 0u32;
    let plan = train_concepts
        .iter()
        .map(|&c| (c, spec.images_per_concept, false))
        .chain(test_concepts.iter().map(|&c| (c, 1, true)));
    for (concept, n_images, is_test) in plan {
        for _ in 0..n_images {
            let mut coefs: Vec<f64> = concept_coefs[concept as usize]
                .iter()
                .map(|c| c + spec.concept_jitter * jrng.normal())
                .collect();
            coefs.extend((0..spec.detail_gratings).map(|_| drng.normal()));
            images.push((next_id, render(&world, spec, &coefs)?));
            concept_of.insert(next_id, concept);
            if is_test {
                test_ids.push(next_id);
            } else {
                train_ids.push(next_id);
            }
            next_id += 1;
        }
    }

    let image_latents: Vec<(u32, Vec<f64>)> = images
        .iter()
        .map(|(id, img)| Ok((*id, latents(&world, spec, img)?)))
        .collect::<Result<_>>()?;
    let mut truths = Vec::with_capacity(n_subjects);
    for subject in 0..n_subjects {
        // subjects share the world but differ in where sources project
        let spatial: Vec<Vec<f64>> = if subject == 0 {
            world.spatial.clone()
        } else {
            let mut srng = Rng::new(spec.mix_matrix_seed).derive_indexed("subject-spatial", subject as u64);
            world
                .spatial
                .iter()
                .map(|row| row.iter().map(|v| v + 0.3 * srng.normal()).collect())
                .collect()
        };
        let pats = patterns(&world, &spatial);
        let len = spec.channels * spec.timepoints;
        let mut raw = BTreeMap::new();
        let (mut power, mut latent_power) = (0.0, 0.0);
        for (id, lat) in &image_latents {
            let s = mix(lat, &pats, len);
            power += s.iter().map(|v| v * v).sum::<f64>();
            latent_power += lat.iter().map(|v| v * v).sum::<f64>();
            raw.insert(*id, s);
        }
        let rms = (power / (images.len() * len) as f64).sqrt();
        let gain = if rms > 0.0 { 1.0 / rms } else { 0.0 };
        let latent_rms = (latent_power / (images.len() * spec.n_latent) as f64).sqrt();
        let clean = raw
            .into_iter()
            .map(|(id, s)| (id, s.into_iter().map(|v| (v * gain) as f32).collect()))
            .collect();
        let sources = pats
            .iter()
            .map(|p| p.iter().map(|v| (v * gain * latent_rms) as f32).collect())
            .collect();
        truths.push(GroundTruth {
            concept_of: concept_of.clone(),
            train_concepts: train_concepts.clone(),
            test_concepts: test_concepts.clone(),
            train_image_ids: train_ids.clone(),
            test_image_ids: test_ids.clone(),
            clean,
            sources,
        });
    }
    Ok((images, truths))
}

/// `gain · clean + source noise + sensor noise` into `out`.
#[allow(clippy::too_many_arguments)]
fn noisy_copy(
    spec: &SyntheticSpec,
    truth: &GroundTruth,
    clean: &[f32],
    gain: f64,
    source_sigma: f64,
    sensor_sigma: f64,
    out: &mut [f64],
    rng: &mut Rng,
) {
    for (o, &c) in out.iter_mut().zip(clean) {
        *o = gain * f64::from(c);
    }
    if source_sigma > 0.0 {
        for src in &truth.sources {
            let nu = source_sigma * rng.normal();
            for (o, &p) in out.iter_mut().zip(src) {
                *o += nu * f64::from(p);
            }
        }
    }
    if sensor_sigma > 0.0 {
        for o in out.iter_mut() {
            *o += sensor_sigma * rng.normal();
        }
    }
    debug_assert_eq!(out.len(), spec.channels * spec.timepoints);
}

fn trials(
    spec: &SyntheticSpec,
    truth: &GroundTruth,
    ids: &[u32],
    per_image: usize,
    subject: &str,
    rng: &mut Rng,
) -> Result<EpochTensor> {
    let len = spec.channels * spec.timepoints;
    let mut data = Vec::with_capacity(ids.len() * per_image * len);
    let mut image_ids = Vec::with_capacity(ids.len() * per_image);
    let mut buf = vec![0.0; len];
    for &id in ids {
        let clean = &truth.clean[&id];
        for _ in 0..per_image {
            let gain = (-spec.attention_drift * rng.normal().abs()).exp();
            noisy_copy(spec, truth, clean, gain, spec.noise_sigma, spec.sensor_noise, &mut buf, rng);
            data.extend(buf.iter().map(|&v| v as f32));
            image_ids.push(id);
        }
    }
    EpochTensor::new(spec.channels, spec.timepoints, spec.sample_rate_hz, image_ids, subject, data)
}

pub fn generate_synthetic(spec: &SyntheticSpec, rng: &Rng) -> Result<SyntheticDataset> {
    let mut all = generate_subjects(spec, 1, rng)?;
    Ok(all.remove(0))
}

/// Several subjects sharing one set of images and concepts. Subject `i` is
/// labeled `sub-{i+1:02}`, except a single subject keeps `spec.subject`.
pub fn generate_subjects(spec: &SyntheticSpec, n_subjects: usize, rng: &Rng) -> Result<Vec<SyntheticDataset>> {
    contract!(n_subjects >= 1, "need at least one subject");
    let (images, truths) = generate_clean_subjects(spec, n_subjects, rng)?;
    let mut out = Vec::with_capacity(n_subjects);
    for (i, truth) in truths.into_iter().enumerate() {
        let label = if n_subjects == 1 {
            spec.subject.clone()
        } else {
            format!("sub-{:02}", i + 1)
        };
        let mut trng = rng.derive_indexed("trials", i as u64);
        let train = trials(spec, &truth, &truth.train_image_ids, spec.trials_per_image, &label, &mut trng)?;
        let test = trials(spec, &truth, &truth.test_image_ids, spec.test_trials_per_image, &label, &mut trng)?;
        out.push(SyntheticDataset {
            train,
            test,
            images: images.clone(),
            truth,
        });
    }
    Ok(out)
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let d = (aa * bb).sqrt();
    if d > 0.0 {
        ab / d
    } else {
        0.0
    }
}

fn nearest(query: &[f32], gallery: &[&[f32]]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, g) in gallery.iter().enumerate() {
        let s = cosine(query, g);
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// Top-1 accuracy (percent) of matching each query against the clean
/// signals of the gallery images by cosine similarity.
pub fn oracle_top1(truth: &GroundTruth, queries: &EpochTensor, gallery: &[u32]) -> Result<f64> {
    contract!(!gallery.is_empty(), "empty gallery");
    contract!(queries.n_samples >= 1, "no queries");
    let templates: Vec<&[f32]> = gallery
        .iter()
        .map(|id| {
            truth
                .clean
                .get(id)
                .map(Vec::as_slice)
                .ok_or_else(|| crate::UbpError::Data(format!("image id {id} has no clean signal")))
        })
        .collect::<Result<_>>()?;
    let mut hits = 0usize;
    for i in 0..queries.n_samples {
        let pick = nearest(queries.sample(i), &templates);
        hits += usize::from(gallery[pick] == queries.image_ids[i]);
    }
    Ok(100.0 * hits as f64 / queries.n_samples as f64)
}

/// Monte-Carlo oracle top-1 (percent) on trial-averaged test queries.
pub fn oracle_top1_monte_carlo(spec: &SyntheticSpec, truth: &GroundTruth, draws: usize, rng: &mut Rng) -> f64 {
    let gallery: Vec<&[f32]> = truth
        .test_image_ids
        .iter()
        .map(|id| truth.clean[id].as_slice())
        .collect();
    // the mean of n trials has the same law as one trial with noise / √n
    let n = spec.test_trials_per_image as f64;
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut buf = vec![0.0; gallery[0].len()];
    for _ in 0..draws {
        for (target, clean) in gallery.iter().enumerate() {
            let gain = (0..spec.test_trials_per_image)
                .map(|_| (-spec.attention_drift * rng.normal().abs()).exp())
                .sum::<f64>()
                / n;
            let (src, sen) = (spec.noise_sigma / n.sqrt(), spec.sensor_noise / n.sqrt());
            noisy_copy(spec, truth, clean, gain, src, sen, &mut buf, rng);
            let query: Vec<f32> = buf.iter().map(|&v| v as f32).collect();
            hits += usize::from(nearest(&query, &gallery) == target);
            total += 1;
        }
    }
    100.0 * hits as f64 / total as f64
}

/// Source-noise level at which the oracle's averaged-query top-1 is close
/// to `target_top1` percent, found by bisection in log space.
pub fn calibrate_noise(spec: &SyntheticSpec, target_top1: f64, rng: &Rng) -> Result<f64> {
    contract!(
        target_top1 > 0.0 && target_top1 < 100.0,
        "target top-1 must be strictly between 0 and 100"
    );
    let (_, truth) = generate_clean(spec, rng)?;
    let accuracy = |sigma: f64| {
        let mut s = spec.clone();
        s.noise_sigma = sigma;
        // common random numbers keep the curve monotone across probes
        oracle_top1_monte_carlo(&s, &truth, 200, &mut rng.derive("calibration"))
    };
    let (mut lo, mut hi) = (1e-3f64, 1e3f64);
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        if accuracy(mid) > target_top1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}
