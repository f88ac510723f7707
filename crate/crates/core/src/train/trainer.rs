use std::collections::BTreeSet;

use log::{debug, info};
use serde::Serialize;

use super::adamw::{adamw_step, AdamWState};
use super::checkpoint::Checkpoint;
use super::config::{Mode, TrainConfig};
use crate::data::cache::FeatureCache;
use crate::data::epochs::EpochTensor;
use crate::encoder::{backward, encode, forward, init_params, EncoderParams};
use crate::error::{contract, Result, UbpError};
use crate::eval::metrics::{map_score, rank_gallery, topk_accuracy};
use crate::loss::{sce_backward, similarity_matrix, softplus};
use crate::numkernel::{Matrix, Rng};
use crate::uncertainty::{BlurLevel, BranchCounts, RadiusTable, SimilarityTracker};

/// Everything one training step reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: EncoderParams<f32>,
    pub optimizer: AdamWState<f32>,
    pub tracker: SimilarityTracker,
    pub table: RadiusTable,
    pub epochs_done: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss.
    pub loss: f64,
    /// Tracker interval at the end of the epoch, if warmed up.
    pub interval: Option<(f64, f64)>,
    pub branches: BranchCounts,
    pub temperature: f64,
    pub val_top1: Option<f64>,
    pub val_map: Option<f64>,
}

/// First line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunHeader {
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub train_subjects: Vec<String>,
    pub heldout_subject: Option<String>,
    pub n_train: usize,
    pub n_val: usize,
    pub config: TrainConfig,
}

/// One line of a training log: the header first, then one record per epoch.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogRecord<'a> {
    Header(&'a RunHeader),
    Epoch(&'a EpochLog),
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Snapshot with the best validation score (the last epoch when
    /// training ran without validation).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
    pub header: RunHeader,
}

/// Training pairs as a design matrix plus image ids.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub x: Matrix<f32>,
    pub ids: Vec<u32>,
}

impl PairSet {
    pub fn from_epochs(e: &EpochTensor) -> Self {
        Self {
            x: e.to_matrix(),
            ids: e.image_ids.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn subset(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            x: self.x.select_rows(rows)?,
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
        })
    }
}

/// Splits off whole images for validation. Returns (train, validation).
pub fn validation_split(pairs: &PairSet, fraction: f64, seed: u64) -> Result<(PairSet, Option<PairSet>)> {
    if fraction <= 0.0 {
        return Ok((pairs.clone(), None));
    }
    let mut images: Vec<u32> = pairs.ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let n_val = ((fraction * images.len() as f64).ceil() as usize).max(2);
    if images.len() < n_val + 2 {
        return Err(UbpError::Data(format!(
            "{} distinct images are too few for a {:.0}% validation split",
            images.len(),
            fraction * 100.0
        )));
    }
    Rng::new(seed).derive("validation-split").shuffle(&mut images);
    let held: BTreeSet<u32> = images[..n_val].iter().copied().collect();
    let (val_rows, train_rows): (Vec<usize>, Vec<usize>) = (0..pairs.len()).partition(|&i| held.contains(&pairs.ids[i]));
    Ok((pairs.subset(&train_rows)?, Some(pairs.subset(&val_rows)?)))
}

/// Concatenates the training data of every subject except `heldout`.
pub fn leave_one_subject_out(subjects: &[EpochTensor], heldout: &str) -> Result<EpochTensor> {
    if subjects.len() < 2 {
        return Err(UbpError::Config(format!(
            "inter-subject training needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    let rest: Vec<&EpochTensor> = subjects.iter().filter(|s| s.subject != heldout).collect();
    if rest.len() == subjects.len() {
        return Err(UbpError::Config(format!("held-out subject {heldout:?} is not among the inputs")));
    }
    if rest.is_empty() {
        return Err(UbpError::Data("no training subjects remain".into()));
    }
    let label = rest.iter().map(|s| s.subject.as_str()).collect::<Vec<_>>().join("+");
    EpochTensor::concat(&rest, &label)
}

/// Batches for one epoch. A trailing batch of a single pair is merged into
/// the previous one since the contrastive loss needs two pairs.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("checked non-empty");
        batches.last_mut().expect("more than one batch").extend(tail);
    }
    batches
}

pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    let full = n.div_ceil(batch_size);
    if full > 1 && n % batch_size == 1 {
        full - 1
    } else {
        full
    }
}

impl TrainState {
    /// Fresh parameters; the tracker treats the whole first epoch as warmup.
    pub fn init(cfg: &TrainConfig, input_dim: usize, proj_dim: usize, n_train: usize) -> Result<Self> {
        let params = init_params(input_dim, proj_dim, &mut Rng::new(cfg.seed).derive("init"))?;
        let warmup = batches_per_epoch(n_train, cfg.batch_size) as u64 + 1;
        Ok(Self {
            optimizer: AdamWState::new(&params),
            params,
            tracker: SimilarityTracker::new(cfg.ema_momentum, cfg.z, warmup)?,
            table: RadiusTable::new(n_train, cfg.rule()),
            epochs_done: 0,
        })
    }
}

/// One pass over the training pairs.
pub fn train_epoch(state: &mut TrainState, pairs: &PairSet, cache: &FeatureCache, cfg: &TrainConfig) -> Result<EpochLog> {
    contract!(pairs.len() >= 2, "need at least 2 training pairs, got {}", pairs.len());
    contract!(
        state.table.len() == pairs.len(),
        "radius table covers {} pairs, training set has {}",
        state.table.len(),
        pairs.len()
    );
    contract!(
        cache.dim() == state.params.proj_dim(),
        "feature cache dim {} differs from encoder dim {}",
        cache.dim(),
        state.params.proj_dim()
    );
    let enc_cfg = cfg.encoder_config();
    let root = Rng::new(cfg.seed);
    let epoch = state.epochs_done;
    let mut order_rng = root.derive_indexed("batch-order", epoch as u64);
    let batches = epoch_batches(pairs.len(), cfg.batch_size, &mut order_rng);
    let (lr, wd) = (cfg.learning_rate(), cfg.weight_decay);

    let mut loss_sum = 0.0;
    let mut branches = BranchCounts::default();
    for (b, batch) in batches.iter().enumerate() {
        let ids: Vec<u32> = batch.iter().map(|&i| pairs.ids[i]).collect();
        // radius assigned on an earlier visit, never from this batch's score
        let levels: Vec<BlurLevel> = batch
            .iter()
            .map(|&i| if cfg.blur_prior { state.table.level(i) } else { BlurLevel::Base })
            .collect();
        let h_v = cache.gather(&ids, &levels)?;
        let x = pairs.x.select_rows(batch)?;
        let mut dropout = root.derive_indexed("dropout", state.optimizer.step);
        let (h_b, fwd) = forward(&state.params, &x, &enc_cfg, true, &mut dropout)?;
        let m = similarity_matrix(&h_b, &h_v, state.params.tau_raw)?;
        let out = sce_backward(&m, &h_b, &h_v, state.params.tau_raw, true)?;
        if !out.value.is_finite() {
            return Err(UbpError::Degenerate(format!("loss became non-finite in epoch {epoch}, batch {b}")));
        }
        let scores: Vec<f64> = out.diag_scores.iter().map(|&s| f64::from(s)).collect();
        state.tracker.update(&scores)?;
        let counts = if cfg.blur_prior {
            state.table.update(batch, &scores, &state.tracker)?
        } else {
            BranchCounts {
                base: batch.len() as u64,
                ..BranchCounts::default()
            }
        };
        branches.merge(&counts);

        let (mut grads, _) = backward(&state.params, &fwd, &enc_cfg, &out.grad_hb)?;
        grads.tau_raw = out.grad_tau_raw;
        adamw_step(&mut state.params, &grads, &mut state.optimizer, lr, wd)?;
        loss_sum += f64::from(out.value);
        debug!("epoch {epoch} batch {b}: loss {:.5}", out.value);
    }
    state.epochs_done += 1;
    Ok(EpochLog {
        epoch,
        loss: loss_sum / batches.len() as f64,
        interval: state.tracker.confidence_interval().ok(),
        branches,
        temperature: f64::from(softplus(state.params.tau_raw)),
        val_top1: None,
        val_map: None,
    })
}

/// Top-1 and mAP of validation pairs against a gallery of their distinct
/// images at the base level.
pub fn validate(params: &EncoderParams<f32>, cfg: &TrainConfig, val: &PairSet, cache: &FeatureCache) -> Result<(f64, f64)> {
    let gallery_ids: Vec<u32> = val.ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let gallery = cache.gather_level(&gallery_ids, BlurLevel::Base)?;
    let h = encode(params, &val.x, &cfg.encoder_config())?;
    let targets: Vec<usize> = val
        .ids
        .iter()
        .map(|id| gallery_ids.binary_search(id).expect("gallery built from these ids"))
        .collect();
    let res = rank_gallery(&h, &gallery, &targets)?;
    Ok((topk_accuracy(&res, 1), map_score(&res)))
}

fn snapshot(state: &TrainState, cfg: &TrainConfig, best_val_top1: f64) -> Checkpoint {
    Checkpoint {
        params: state.params.clone(),
        config: cfg.clone(),
        epoch: state.epochs_done as u32,
        best_val_top1,
        optimizer: state.optimizer.clone(),
        tracker: state.tracker.clone(),
        table: state.table.clone(),
    }
}

/// Full training run with early stopping on validation top-1 (ties broken
/// by validation mAP). Stops once `patience` epochs pass without
/// improvement. `on_record` sees the header and every epoch record as they
/// are produced.
pub fn fit(
    cfg: &TrainConfig,
    train: &EpochTensor,
    cache: &FeatureCache,
    heldout_subject: Option<&str>,
    mut on_record: impl FnMut(LogRecord<'_>) -> Result<()>,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.n_samples == 0 {
        return Err(UbpError::Data("training set is empty".into()));
    }
    if cfg.mode == Mode::Inter && heldout_subject.is_none() {
        return Err(UbpError::Config("inter mode needs a held-out subject".into()));
    }
    for id in train.distinct_ids() {
        if !cache.contains(id) {
            return Err(UbpError::Data(format!("image id {id} missing from feature cache")));
        }
    }
    let all = PairSet::from_epochs(train);
    let (pairs, val) = validation_split(&all, cfg.val_fraction, cfg.seed)?;
    if pairs.len() < 2 {
        return Err(UbpError::Data("fewer than 2 training pairs after the validation split".into()));
    }
    let header = RunHeader {
        mode: cfg.mode,
        seed: cfg.seed,
        config_hash: crate::provenance::config_hash(cfg),
        train_subjects: train.subject.split('+').map(str::to_string).collect(),
        heldout_subject: heldout_subject.map(str::to_string),
        n_train: pairs.len(),
        n_val: val.as_ref().map_or(0, PairSet::len),
        config: cfg.clone(),
    };
    info!(
        "training on {} pairs ({} validation), {} epochs, batch {}",
        header.n_train, header.n_val, cfg.epochs, cfg.batch_size
    );

    on_record(LogRecord::Header(&header))?;

    let mut state = TrainState::init(cfg, train.sample_len(), cache.dim(), pairs.len())?;
    let mut logs = Vec::new();
    let mut best: Option<(f64, f64, usize, Checkpoint)> = None;
    for epoch in 0..cfg.epochs {
        let mut log = train_epoch(&mut state, &pairs, cache, cfg)?;
        if let Some(val) = &val {
            let (top1, map) = validate(&state.params, cfg, val, cache)?;
            log.val_top1 = Some(top1);
            log.val_map = Some(map);
            let improved = best
                .as_ref()
                .is_none_or(|(bt, bm, _, _)| top1 > *bt || (top1 == *bt && map > *bm));
            if improved {
                best = Some((top1, map, epoch, snapshot(&state, cfg, top1)));
            }
        }
        info!(
            "epoch {epoch}: loss {:.4}, val top-1 {:?}, branches {:?}",
            log.loss, log.val_top1, log.branches
        );
        on_record(LogRecord::Epoch(&log))?;
        logs.push(log);
        if let Some((_, _, best_epoch, _)) = &best {
            if epoch - best_epoch > cfg.patience {
                info!("early stop after epoch {epoch}, best was {best_epoch}");
                break;
            }
        }
    }
    let last = snapshot(&state, cfg, best.as_ref().map_or(f64::NAN, |b| b.0));
    let (best_epoch, mut best) = match best {
        Some((_, _, e, c)) => (e, c),
        None => (logs.len() - 1, last.clone()),
    };
    best.best_val_top1 = last.best_val_top1;
    Ok(FitResult {
        best,
        last,
        best_epoch,
        logs,
        header,
    })
}
