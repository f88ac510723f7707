//! Epoched brain recordings and the preprocessing steps applied to them.

use std::collections::HashMap;

use log::info;

use crate::error::{contract, Result, UbpError};
use crate::numkernel::Matrix;

/// 63-channel montage of the THINGS-EEG recordings, in file order.
pub const THINGS_EEG_MONTAGE: [&str; 63] = [
    "Fp1", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7", "F5", "F3", "F1", "F2", "F4", "F6",
    "F8", "FT9", "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8", "FT10", "T7",
    "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8", "TP9", "TP7", "CP5", "CP3", "CP1", "CPz",
    "CP2", "CP4", "CP6", "TP8", "TP10", "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8",
    "PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2",
];

/// Occipital and parietal channels used for visual decoding.
pub const VISUAL_CHANNELS: [&str; 17] = [
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO3", "POz", "PO4", "PO8", "O1",
    "Oz", "O2",
];

/// On-disk sample precision. Data is always `f32` in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageDtype {
    F16,
    F32,
}

/// Preprocessed recordings: `n_samples × n_channels × n_timepoints`,
/// row-major, with one stimulus id per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTensor {
    pub n_samples: usize,
    pub n_channels: usize,
    pub n_timepoints: usize,
    pub sample_rate_hz: u32,
    pub image_ids: Vec<u32>,
    pub subject: String,
    pub storage: StorageDtype,
    pub data: Vec<f32>,
}

/// A channel addressed by position or by montage name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelRef {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for ChannelRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().parse::<usize>() {
            Ok(i) => ChannelRef::Index(i),
            Err(_) => ChannelRef::Name(s.trim().to_string()),
        })
    }
}

impl EpochTensor {
    pub fn new(
        n_channels: usize,
        n_timepoints: usize,
        sample_rate_hz: u32,
        image_ids: Vec<u32>,
        subject: impl Into<String>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let n_samples = image_ids.len();
        contract!(
            n_channels >= 1 && n_timepoints >= 1,
            "epochs need at least one channel and one timepoint"
        );
        contract!(
            data.len() == n_samples * n_channels * n_timepoints,
            "epoch data has {} values, expected {n_samples}x{n_channels}x{n_timepoints}",
            data.len()
        );
        contract!(sample_rate_hz >= 1, "sample rate must be positive");
        Ok(Self {
            n_samples,
            n_channels,
            n_timepoints,
            sample_rate_hz,
            image_ids,
            subject: subject.into(),
            storage: StorageDtype::F32,
            data,
        })
    }

    pub fn sample_len(&self) -> usize {
        self.n_channels * self.n_timepoints
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn value(&self, sample: usize, channel: usize, t: usize) -> f32 {
        self.data[(sample * self.n_channels + channel) * self.n_timepoints + t]
    }

    /// Each sample flattened row-major (channel by channel) into one row.
    pub fn to_matrix(&self) -> Matrix<f32> {
        Matrix::new(self.n_samples, self.sample_len(), self.data.clone())
            .expect("epoch data is finite and correctly sized")
    }

    /// Samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self {
            n_samples: indices.len(),
            image_ids: indices.iter().map(|&i| self.image_ids[i]).collect(),
            data,
            ..self.clone_header()
        }
    }

    /// Distinct image ids in order of first appearance.
    pub fn distinct_ids(&self) -> Vec<u32> {
        let mut seen = std::collections::HashSet::new();
        self.image_ids
            .iter()
            .copied()
            .filter(|id| seen.insert(*id))
            .collect()
    }

    fn clone_header(&self) -> Self {
        Self {
            n_samples: 0,
            n_channels: self.n_channels,
            n_timepoints: self.n_timepoints,
            sample_rate_hz: self.sample_rate_hz,
            image_ids: Vec::new(),
            subject: self.subject.clone(),
            storage: self.storage,
            data: Vec::new(),
        }
    }

    /// Concatenates recordings with identical layout (e.g. several subjects).
    pub fn concat(parts: &[&EpochTensor], subject: &str) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| UbpError::Data("nothing to concatenate".into()))?;
        let mut out = Self {
            subject: subject.to_string(),
            ..first.clone_header()
        };
        for p in parts {
            contract!(
                p.n_channels == first.n_channels
                    && p.n_timepoints == first.n_timepoints
                    && p.sample_rate_hz == first.sample_rate_hz,
                "cannot concatenate epochs with different layouts"
            );
            out.n_samples += p.n_samples;
            out.image_ids.extend_from_slice(&p.image_ids);
            out.data.extend_from_slice(&p.data);
        }
        Ok(out)
    }
}

fn resolve_channel(r: &ChannelRef, n_channels: usize) -> Result<usize> {
    match r {
        ChannelRef::Index(i) if *i < n_channels => Ok(*i),
        ChannelRef::Index(i) => Err(UbpError::Contract(format!(
            "channel index {i} out of range for {n_channels} channels"
        ))),
        ChannelRef::Name(name) => {
            if n_channels != THINGS_EEG_MONTAGE.len() {
                return Err(UbpError::Contract(format!(
                    "channel {name:?} requested by name, but names are only known for the \
                     {}-channel montage (tensor has {n_channels})",
                    THINGS_EEG_MONTAGE.len()
                )));
            }
            THINGS_EEG_MONTAGE
                .iter()
                .position(|m| m.eq_ignore_ascii_case(name))
                .ok_or_else(|| UbpError::Contract(format!("unknown channel {name:?}")))
        }
    }
}

/// Channel subset in the requested order.
pub fn select_channels(e: &EpochTensor, channels: &[ChannelRef]) -> Result<EpochTensor> {
    contract!(!channels.is_empty(), "no channels selected");
    let idx = channels
        .iter()
        .map(|c| resolve_channel(c, e.n_channels))
        .collect::<Result<Vec<_>>>()?;
    let t = e.n_timepoints;
    let mut data = Vec::with_capacity(e.n_samples * idx.len() * t);
    for s in 0..e.n_samples {
        let sample = e.sample(s);
        for &c in &idx {
            data.extend_from_slice(&sample[c * t..(c + 1) * t]);
        }
    }
    Ok(EpochTensor {
        n_channels: idx.len(),
        n_samples: e.n_samples,
        image_ids: e.image_ids.clone(),
        data,
        ..e.clone_header()
    })
}

fn ms_to_index(ms: f64, rate: u32) -> Result<usize> {
    let exact = ms * f64::from(rate) / 1000.0;
    let idx = exact.round();
    contract!(
        idx >= 0.0 && (exact - idx).abs() < 1e-9,
        "{ms} ms does not fall on a sample at {rate} Hz"
    );
    Ok(idx as usize)
}

/// Keeps `[start, end)` ms (time 0 is the first stored sample), then every
/// `factor`-th sample. With `antialias` each kept sample is the mean of the
/// `factor` samples starting at it.
pub fn crop_and_downsample(
    e: &EpochTensor,
    window_ms: (f64, f64),
    factor: usize,
    antialias: bool,
) -> Result<EpochTensor> {
    contract!(factor >= 1, "decimation factor must be at least 1");
    let start = ms_to_index(window_ms.0, e.sample_rate_hz)?;
    let end = ms_to_index(window_ms.1, e.sample_rate_hz)?;
    contract!(
        start < end && end <= e.n_timepoints,
        "window {:?} ms is outside the {} recorded samples",
        window_ms,
        e.n_timepoints
    );
    contract!(
        (end - start) % factor == 0,
        "window of {} samples is not divisible by factor {factor}",
        end - start
    );
    contract!(
        e.sample_rate_hz % factor as u32 == 0,
        "sample rate {} Hz is not divisible by factor {factor}",
        e.sample_rate_hz
    );
    let new_t = (end - start) / factor;
    let mut data = Vec::with_capacity(e.n_samples * e.n_channels * new_t);
    for row in e.data.chunks_exact(e.n_timepoints) {
        for k in 0..new_t {
            let pos = start + k * factor;
            let v = if antialias {
                row[pos..pos + factor].iter().sum::<f32>() / factor as f32
            } else {
                row[pos]
            };
            data.push(v);
        }
    }
    Ok(EpochTensor {
        n_timepoints: new_t,
        sample_rate_hz: e.sample_rate_hz / factor as u32,
        n_samples: e.n_samples,
        image_ids: e.image_ids.clone(),
        data,
        ..e.clone_header()
    })
}

/// Subtracts the mean of the first `prestim_samples` samples from every
/// channel of every epoch. Skipped (with a notice) when there are none.
pub fn baseline_correct(e: &EpochTensor, prestim_samples: usize) -> Result<EpochTensor> {
    if prestim_samples == 0 {
        info!("no pre-stimulus samples in {:?}; baseline correction skipped", e.subject);
        return Ok(e.clone());
    }
    contract!(
        prestim_samples < e.n_timepoints,
        "{prestim_samples} pre-stimulus samples leave nothing of a {}-sample epoch",
        e.n_timepoints
    );
    let mut out = e.clone();
    for row in out.data.chunks_exact_mut(e.n_timepoints) {
        let base = row[..prestim_samples].iter().sum::<f32>() / prestim_samples as f32;
        row.iter_mut().for_each(|v| *v -= base);
    }
    Ok(out)
}

fn group_by_id(e: &EpochTensor) -> (Vec<u32>, HashMap<u32, Vec<usize>>) {
    let order = e.distinct_ids();
    let mut groups: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, &id) in e.image_ids.iter().enumerate() {
        groups.entry(id).or_default().push(i);
    }
    (order, groups)
}

/// One sample per image id (first-appearance order), the mean of its trials.
pub fn average_repetitions(e: &EpochTensor) -> EpochTensor {
    let (order, groups) = group_by_id(e);
    let len = e.sample_len();
    let mut data = Vec::with_capacity(order.len() * len);
    for id in &order {
        let trials = &groups[id];
        let mut acc = vec![0.0f64; len];
        for &t in trials {
            for (a, &v) in acc.iter_mut().zip(e.sample(t)) {
                *a += f64::from(v);
            }
        }
        let n = trials.len() as f64;
        data.extend(acc.iter().map(|a| (a / n) as f32));
    }
    EpochTensor {
        n_samples: order.len(),
        image_ids: order,
        data,
        ..e.clone_header()
    }
}

/// Mean over image ids of the mean (over channels × timepoints) across-trial
/// standard deviation (n - 1 divisor).
pub fn subject_variability(e: &EpochTensor) -> Result<f64> {
    let (order, groups) = group_by_id(e);
    contract!(!order.is_empty(), "variability of an empty recording");
    if let Some(id) = order.iter().find(|id| groups[id].len() < 2) {
        return Err(UbpError::Contract(format!(
            "image {id} has a single trial; variability needs repetitions"
        )));
    }
    let len = e.sample_len();
    let mut total = 0.0;
    for id in &order {
        let trials = &groups[id];
        let k = trials.len() as f64;
        let mut sd_sum = 0.0;
        for p in 0..len {
            let vals = trials.iter().map(|&t| f64::from(e.sample(t)[p]));
            let mean = vals.clone().sum::<f64>() / k;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
            sd_sum += var.sqrt();
        }
        total += sd_sum / len as f64;
    }
    Ok(total / order.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;

    fn ramp(n_samples: usize, channels: usize, t: usize, rate: u32) -> EpochTensor {
        let data = (0..n_samples * channels * t).map(|v| v as f32).collect();
        let ids = (0..n_samples as u32).collect();
        EpochTensor::new(channels, t, rate, ids, "s1", data).unwrap()
    }

    #[test]
    fn montage_sizes() {
        assert_eq!(THINGS_EEG_MONTAGE.len(), 63);
        for name in VISUAL_CHANNELS {
            assert!(THINGS_EEG_MONTAGE.contains(&name), "{name}");
        }
    }

    #[test]
    fn select_all_is_identity() {
        let e = ramp(3, 4, 5, 100);
        let all: Vec<ChannelRef> = (0..4).map(ChannelRef::Index).collect();
        assert_eq!(select_channels(&e, &all).unwrap(), e);
    }

    #[test]
    fn select_visual_channels_by_name() {
        let e = ramp(2, 63, 4, 1000);
        let refs: Vec<ChannelRef> = VISUAL_CHANNELS.iter().map(|n| n.parse().unwrap()).collect();
        let sel = select_channels(&e, &refs).unwrap();
        assert_eq!(sel.n_channels, 17);
        let oz = THINGS_EEG_MONTAGE.iter().position(|&n| n == "Oz").unwrap();
        assert_eq!(sel.value(1, 15, 2), e.value(1, oz, 2));
    }

    #[test]
    fn reversed_selection() {
        let e = ramp(2, 5, 3, 100);
        let rev: Vec<ChannelRef> = (0..5).rev().map(ChannelRef::Index).collect();
        let sel = select_channels(&e, &rev).unwrap();
        for s in 0..2 {
            for c in 0..5 {
                for t in 0..3 {
                    assert_eq!(sel.value(s, c, t), e.value(s, 4 - c, t));
                }
            }
        }
    }

    #[test]
    fn unknown_channels() {
        let e = ramp(1, 63, 2, 100);
        assert!(select_channels(&e, &["Xx9".parse().unwrap()]).is_err());
        assert!(select_channels(&e, &[ChannelRef::Index(63)]).is_err());
        let small = ramp(1, 4, 2, 100);
        assert!(select_channels(&small, &["Oz".parse().unwrap()]).is_err());
    }

    #[test]
    fn factor_one_only_crops() {
        let e = ramp(2, 2, 10, 1000);
        let c = crop_and_downsample(&e, (2.0, 7.0), 1, false).unwrap();
        assert_eq!(c.n_timepoints, 5);
        assert_eq!(c.sample_rate_hz, 1000);
        assert_eq!(c.value(1, 1, 0), e.value(1, 1, 2));
    }

    #[test]
    fn decimate_to_250_hz() {
        let e = ramp(2, 3, 1000, 1000);
        let d = crop_and_downsample(&e, (0.0, 1000.0), 4, false).unwrap();
        assert_eq!((d.n_timepoints, d.sample_rate_hz), (250, 250));
        for s in 0..2 {
            for c in 0..3 {
                for k in 0..250 {
                    assert_eq!(d.value(s, c, k), e.value(s, c, 4 * k));
                }
            }
        }
    }

    #[test]
    fn antialias_averages_blocks() {
        let e = ramp(1, 1, 8, 1000);
        let d = crop_and_downsample(&e, (0.0, 8.0), 4, true).unwrap();
        assert_eq!(d.data, vec![1.5, 5.5]);
    }

    #[test]
    fn misaligned_windows() {
        let e = ramp(1, 1, 100, 250);
        assert!(crop_and_downsample(&e, (1.0, 40.0), 1, false).is_err());
        assert!(crop_and_downsample(&e, (0.0, 404.0), 1, false).is_err());
        assert!(crop_and_downsample(&e, (0.0, 12.0), 2, false).is_err());
        assert!(crop_and_downsample(&e, (0.0, 0.0), 1, false).is_err());
    }

    #[test]
    fn baseline() {
        let e = EpochTensor::new(1, 4, 1000, vec![1], "s", vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(baseline_correct(&e, 2).unwrap().data, vec![-1.0, 1.0, 3.0, 5.0]);
        assert_eq!(baseline_correct(&e, 0).unwrap(), e);
        assert!(baseline_correct(&e, 4).is_err());
    }

    #[test]
    fn averaging() {
        let single = ramp(3, 2, 2, 100);
        assert_eq!(average_repetitions(&single), single);
        let e = EpochTensor::new(1, 2, 100, vec![7, 7, 3], "s", vec![1.0, 2.0, 1.0, 2.0, 5.0, 6.0]).unwrap();
        let a = average_repetitions(&e);
        assert_eq!(a.image_ids, vec![7, 3]);
        assert_eq!(a.data, vec![1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn averaging_shrinks_noise() {
        let mut rng = Rng::new(1);
        let (trials, points) = (80, 400);
        let data: Vec<f32> = (0..trials * points).map(|_| rng.normal() as f32).collect();
        let e = EpochTensor::new(1, points, 100, vec![0; trials], "s", data).unwrap();
        let a = average_repetitions(&e);
        let sd = (a.data.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>() / points as f64).sqrt();
        let expect = 1.0 / (trials as f64).sqrt();
        assert!((sd - expect).abs() < 0.1 * expect, "{sd} vs {expect}");
    }

    #[test]
    fn variability() {
        let same = EpochTensor::new(1, 2, 100, vec![1, 1], "s", vec![0.5, 0.2, 0.5, 0.2]).unwrap();
        assert_eq!(subject_variability(&same).unwrap(), 0.0);

        let mut rng = Rng::new(2);
        let (trials, points, sigma) = (80, 500, 0.7);
        let data: Vec<f32> = (0..trials * points).map(|_| (sigma * rng.normal()) as f32).collect();
        let e = EpochTensor::new(1, points, 100, vec![4; trials], "s", data).unwrap();
        let v = subject_variability(&e).unwrap();
        // E[sample sd] ≈ σ (1 - 1/(4k)); well within 2% at k = 80
        assert!((v - sigma).abs() < 0.02 * sigma, "{v}");

        let doubled = EpochTensor {
            data: e.data.iter().map(|x| 2.0 * x).collect(),
            ..e.clone()
        };
        assert!((subject_variability(&doubled).unwrap() - 2.0 * v).abs() < 1e-6);
    }

    #[test]
    fn variability_after_averaging_errors() {
        let e = EpochTensor::new(1, 2, 100, vec![1, 1], "s", vec![0.5, 0.2, 0.4, 0.1]).unwrap();
        assert!(subject_variability(&average_repetitions(&e)).is_err());
    }
}
