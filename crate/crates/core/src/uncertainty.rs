//! Running Gaussian model of paired similarity scores and the per-sample
//! blur radius it drives.
//!
//! Diagonal scores of each batch are summarized by their mean and unbiased
//! variance; both are smoothed across batches with an exponential moving
//! average. Once warmed up, the tracker yields the interval
//! `[mu - z·sigma, mu + z·sigma]`, and every visited sample gets
//!
//! ```text
//! r(s) = r0 - c   if s < lo
//!        r0 + c   if s > hi
//!        r0       otherwise (bounds inclusive)
//! ```
//!
//! `flip` swaps the two outer branches.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result, UbpError};

pub const DEFAULT_Z: f64 = 1.96;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_R0: f64 = 0.25;
pub const DEFAULT_C: f64 = 10.0;

/// Mean and unbiased (n - 1) variance.
pub fn batch_stats(scores: &[f64]) -> Result<(f64, f64)> {
    let n = scores.len();
    contract!(n >= 2, "batch statistics need at least 2 scores, got {n}");
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, var))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTracker {
    pub mu_hat: f64,
    pub var_hat: f64,
    pub momentum: f64,
    pub z: f64,
    pub warmup_batches: u64,
    pub batches_seen: u64,
}

impl SimilarityTracker {
    pub fn new(momentum: f64, z: f64, warmup_batches: u64) -> Result<Self> {
        contract!(
            (0.0..1.0).contains(&momentum),
            "momentum must lie in [0, 1), got {momentum}"
        );
        contract!(z >= 0.0 && z.is_finite(), "critical value must be >= 0, got {z}");
        Ok(Self {
            mu_hat: 0.0,
            var_hat: 0.0,
            momentum,
            z,
            warmup_batches,
            batches_seen: 0,
        })
    }

    /// Folds one batch of scores in. The first batch initializes the
    /// estimates directly.
    pub fn update(&mut self, scores: &[f64]) -> Result<()> {
        let (mean, var) = batch_stats(scores)?;
        if self.batches_seen == 0 {
            self.mu_hat = mean;
            self.var_hat = var;
        } else {
            let m = self.momentum;
            self.mu_hat = m * self.mu_hat + (1.0 - m) * mean;
            self.var_hat = m * self.var_hat + (1.0 - m) * var;
        }
        self.batches_seen += 1;
        Ok(())
    }

    pub fn is_ready(&self) -> bool {
        self.batches_seen >= self.warmup_batches.max(1)
    }

    pub fn confidence_interval(&self) -> Result<(f64, f64)> {
        if !self.is_ready() {
            return Err(UbpError::NotReady(format!(
                "tracker has seen {} of {} warmup batches",
                self.batches_seen,
                self.warmup_batches.max(1)
            )));
        }
        let half = self.z * self.var_hat.max(0.0).sqrt();
        Ok((self.mu_hat - half, self.mu_hat + half))
    }
}

/// Which of the three radius branches a score fell into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurLevel {
    Low,
    Base,
    High,
}

impl BlurLevel {
    pub const ALL: [BlurLevel; 3] = [BlurLevel::Low, BlurLevel::Base, BlurLevel::High];

    pub fn index(self) -> usize {
        match self {
            BlurLevel::Low => 0,
            BlurLevel::Base => 1,
            BlurLevel::High => 2,
        }
    }
}

/// The radius rule's constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusRule {
    pub r0: f64,
    pub c: f64,
    pub flip: bool,
}

impl Default for RadiusRule {
    fn default() -> Self {
        Self {
            r0: DEFAULT_R0,
            c: DEFAULT_C,
            flip: false,
        }
    }
}

impl RadiusRule {
    pub fn radius(&self, level: BlurLevel) -> f64 {
        match level {
            BlurLevel::Low => self.r0 - self.c,
            BlurLevel::Base => self.r0,
            BlurLevel::High => self.r0 + self.c,
        }
    }

    /// The three radii in (low, base, high) order.
    pub fn levels(&self) -> [f64; 3] {
        BlurLevel::ALL.map(|l| self.radius(l))
    }

    pub fn level_of(&self, r: f64) -> Option<BlurLevel> {
        BlurLevel::ALL.into_iter().find(|&l| self.radius(l) == r)
    }

    pub fn classify(&self, s: f64, lo: f64, hi: f64) -> BlurLevel {
        let (below, above) = if self.flip {
            (BlurLevel::High, BlurLevel::Low)
        } else {
            (BlurLevel::Low, BlurLevel::High)
        };
        if s < lo {
            below
        } else if s > hi {
            above
        } else {
            BlurLevel::Base
        }
    }
}

pub fn assign_radius(s: f64, lo: f64, hi: f64, r0: f64, c: f64, flip: bool) -> f64 {
    let rule = RadiusRule { r0, c, flip };
    rule.radius(rule.classify(s, lo, hi))
}

/// How many assignments fell into each branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub low: u64,
    pub base: u64,
    pub high: u64,
}

impl BranchCounts {
    pub fn record(&mut self, level: BlurLevel) {
        match level {
            BlurLevel::Low => self.low += 1,
            BlurLevel::Base => self.base += 1,
            BlurLevel::High => self.high += 1,
        }
    }

    pub fn merge(&mut self, other: &BranchCounts) {
        self.low += other.low;
        self.base += other.base;
        self.high += other.high;
    }

    pub fn total(&self) -> u64 {
        self.low + self.base + self.high
    }
}

/// Current blur radius of every training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusTable {
    radii: Vec<f64>,
    rule: RadiusRule,
}

impl RadiusTable {
    /// Every sample starts at `r0`.
    pub fn new(n_samples: usize, rule: RadiusRule) -> Self {
        Self {
            radii: vec![rule.r0; n_samples],
            rule,
        }
    }

    pub fn from_radii(radii: Vec<f64>, rule: RadiusRule) -> Result<Self> {
        if let Some(bad) = radii.iter().find(|&&r| rule.level_of(r).is_none()) {
            return Err(UbpError::Format(format!(
                "radius {bad} is not one of {:?}",
                rule.levels()
            )));
        }
        Ok(Self { radii, rule })
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn rule(&self) -> RadiusRule {
        self.rule
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn radius(&self, id: usize) -> f64 {
        self.radii[id]
    }

    pub fn level(&self, id: usize) -> BlurLevel {
        self.rule
            .level_of(self.radii[id])
            .expect("table entries are always one of the three levels")
    }

    /// Reassigns every visited sample from its score in the current batch.
    /// Before the tracker is warmed up every visited sample gets `r0`.
    pub fn update(&mut self, ids: &[usize], scores: &[f64], tracker: &SimilarityTracker) -> Result<BranchCounts> {
        contract!(
            ids.len() == scores.len(),
            "{} sample ids but {} scores",
            ids.len(),
            scores.len()
        );
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.radii.len()) {
            return Err(UbpError::Contract(format!(
                "sample id {bad} outside a table of {}",
                self.radii.len()
            )));
        }
        let interval = tracker.confidence_interval().ok();
        let mut counts = BranchCounts::default();
        for (&id, &s) in ids.iter().zip(scores) {
            let level = match interval {
                Some((lo, hi)) => self.rule.classify(s, lo, hi),
                None => BlurLevel::Base,
            };
            self.radii[id] = self.rule.radius(level);
            counts.record(level);
        }
        Ok(counts)
    }
}
