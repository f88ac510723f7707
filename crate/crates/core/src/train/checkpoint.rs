//! Training checkpoint: the encoder weight block followed by optimizer,
//! tracker, radius table and the effective configuration.
//!
//! ```text
//! "UBPC" | version u32 | params | config (u32 len + JSON) | epoch u32
//! | best_val_top1 f64 | adam step u64 | adam m params | adam v params
//! | tracker: mu, var, momentum, z (f64) warmup, seen (u64)
//! | table: r0, c (f64) flip u8 | n u32 | radii f64 × n
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::adamw::AdamWState;
use super::config::TrainConfig;
use crate::binio::{self, io_err};
use crate::encoder::{read_header, read_param_block, write_header, write_param_block, EncoderParams};
use crate::error::{Result, UbpError};
use crate::uncertainty::{RadiusRule, RadiusTable, SimilarityTracker};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams<f32>,
    pub config: TrainConfig,
    /// Epochs completed when this snapshot was taken.
    pub epoch: u32,
    /// NaN when training ran without validation.
    pub best_val_top1: f64,
    pub optimizer: AdamWState<f32>,
    pub tracker: SimilarityTracker,
    pub table: RadiusTable,
}

impl Checkpoint {
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        let config = serde_json::to_string(&self.config)
            .map_err(|e| UbpError::Config(format!("cannot serialize config: {e}")))?;
        (|| -> std::io::Result<()> {
            write_header(w)?;
            write_param_block(w, &self.params)?;
            binio::write_str(w, &config)?;
            binio::write_u32(w, self.epoch)?;
            binio::write_f64s(w, &[self.best_val_top1])?;
            binio::write_u64(w, self.optimizer.step)?;
            write_param_block(w, &self.optimizer.m)?;
            write_param_block(w, &self.optimizer.v)?;
            let t = &self.tracker;
            binio::write_f64s(w, &[t.mu_hat, t.var_hat, t.momentum, t.z])?;
            binio::write_u64(w, t.warmup_batches)?;
            binio::write_u64(w, t.batches_seen)?;
            let rule = self.table.rule();
            binio::write_f64s(w, &[rule.r0, rule.c])?;
            binio::write_u8(w, u8::from(rule.flip))?;
            binio::write_u32(w, self.table.len() as u32)?;
            binio::write_f64s(w, self.table.radii())
        })()
        .map_err(io_err("checkpoint"))
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        read_header(r)?;
        let params = read_param_block(r)?;
        let config_text = binio::read_str(r, "checkpoint config")?;
        let config: TrainConfig = serde_json::from_str(&config_text)
            .map_err(|e| UbpError::Format(format!("checkpoint config: {e}")))?;
        let epoch = binio::read_u32(r, "checkpoint epoch")?;
        let best_val_top1 = binio::read_f64s(r, 1, "checkpoint validation score")?[0];
        let step = binio::read_u64(r, "optimizer step")?;
        let m = read_param_block(r)?;
        let v = read_param_block(r)?;
        if !params.same_shape(&m) || !params.same_shape(&v) {
            return Err(UbpError::Format("optimizer moments do not match the weights".into()));
        }
        let tv = binio::read_f64s(r, 4, "tracker state")?;
        let warmup_batches = binio::read_u64(r, "tracker state")?;
        let batches_seen = binio::read_u64(r, "tracker state")?;
        let rv = binio::read_f64s(r, 2, "radius rule")?;
        let flip = match binio::read_u8(r, "radius rule")? {
            0 => false,
            1 => true,
            other => return Err(UbpError::Format(format!("bad flip flag {other}"))),
        };
        let n = binio::read_u32(r, "radius table")? as usize;
        let radii = binio::read_f64s(r, n, "radius table")?;
        binio::expect_eof(r, "checkpoint")?;
        let table = RadiusTable::from_radii(radii, RadiusRule { r0: rv[0], c: rv[1], flip })?;
        Ok(Self {
            params,
            config,
            epoch,
            best_val_top1,
            optimizer: AdamWState {
                m,
                v,
                step,
                ..AdamWState::new(&EncoderParams::zeros(1, 1))
            },
            tracker: SimilarityTracker {
                mu_hat: tv[0],
                var_hat: tv[1],
                momentum: tv[2],
                z: tv[3],
                warmup_batches,
                batches_seen,
            },
            table,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| UbpError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| UbpError::io(path, e))?;
        Self::read(&mut bytes.as_slice()).map_err(|e| match e {
            UbpError::Format(m) => UbpError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
