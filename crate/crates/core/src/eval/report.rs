use serde::{Deserialize, Serialize};

use super::metrics::{map_score, mean_similarity, rank_gallery, topk_accuracy, RetrievalResult};
use crate::data::cache::FeatureCache;
use crate::data::epochs::EpochTensor;
use crate::encoder::{encode, EncoderParams};
use crate::error::{Result, UbpError};
use crate::train::TrainConfig;
use crate::uncertainty::BlurLevel;

/// Which cached level the gallery is encoded at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GalleryBlur {
    /// The base radius r0.
    #[default]
    Base,
    /// Whichever cached level has no blur (radius below 1).
    None,
    Low,
    High,
}

impl std::str::FromStr for GalleryBlur {
    type Err = UbpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Self::Base),
            "none" => Ok(Self::None),
            "low" => Ok(Self::Low),
            "high" => Ok(Self::High),
            other => Err(UbpError::Config(format!(
                "gallery blur must be base, none, low or high, got {other:?}"
            ))),
        }
    }
}

impl GalleryBlur {
    pub fn level(self, cfg: &TrainConfig) -> Result<BlurLevel> {
        Ok(match self {
            Self::Base => BlurLevel::Base,
            Self::Low => BlurLevel::Low,
            Self::High => BlurLevel::High,
            Self::None => {
                let rule = cfg.rule();
                [BlurLevel::Base, BlurLevel::Low, BlurLevel::High]
                    .into_iter()
                    .find(|&l| rule.radius(l) < 1.0)
                    .ok_or_else(|| {
                        UbpError::Config(format!(
                            "no cached level is unblurred for radii {:?}",
                            rule.levels()
                        ))
                    })?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub subject: String,
    pub mode: String,
    pub gallery_size: usize,
    pub top1: f64,
    pub top5: f64,
    pub map: f64,
    pub mean_similarity: f64,
    pub seed: u64,
    pub config_hash: String,
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl Report {
    /// Pretty JSON with sorted keys and floats rounded to 6 decimals.
    pub fn to_json(&self) -> String {
        let mut rounded = self.clone();
        for v in [
            &mut rounded.top1,
            &mut rounded.top5,
            &mut rounded.map,
            &mut rounded.mean_similarity,
        ] {
            *v = round6(*v);
        }
        let value = serde_json::to_value(&rounded).expect("report is plain data");
        // serde_json maps are ordered by key
        let mut text = serde_json::to_string_pretty(&value).expect("report is plain data");
        text.push('\n');
        text
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: Report,
    pub result: RetrievalResult,
    pub query_ids: Vec<u32>,
    pub gallery_ids: Vec<u32>,
}

impl Evaluation {
    /// `query_id,true_rank,top5_ids` with the ids space-separated.
    pub fn rank_csv(&self) -> String {
        let mut out = String::from("query_id,true_rank,top5_ids\n");
        for ((id, rank), order) in self
            .query_ids
            .iter()
            .zip(&self.result.true_ranks)
            .zip(&self.result.rankings)
        {
            let top: Vec<String> = order.iter().take(5).map(|&g| self.gallery_ids[g].to_string()).collect();
            out.push_str(&format!("{id},{rank},{}\n", top.join(" ")));
        }
        out
    }
}

/// Encodes every test sample and ranks it against the distinct test images
/// (ascending id order) taken from the cache at the chosen level.
pub fn evaluate(
    params: &EncoderParams<f32>,
    cfg: &TrainConfig,
    test: &EpochTensor,
    cache: &FeatureCache,
    blur: GalleryBlur,
) -> Result<Evaluation> {
    if test.n_samples == 0 {
        return Err(UbpError::Data("test set is empty".into()));
    }
    if test.sample_len() != params.input_dim() {
        return Err(UbpError::Data(format!(
            "test samples have {} features, the encoder expects {}",
            test.sample_len(),
            params.input_dim()
        )));
    }
    let mut gallery_ids = test.distinct_ids();
    gallery_ids.sort_unstable();
    if gallery_ids.len() < 2 {
        return Err(UbpError::Data("test set covers fewer than 2 images".into()));
    }
    let gallery = cache.gather_level(&gallery_ids, blur.level(cfg)?)?;
    let h_b = encode(params, &test.to_matrix(), &cfg.encoder_config())?;
    let targets: Vec<usize> = test
        .image_ids
        .iter()
        .map(|id| gallery_ids.binary_search(id).expect("gallery built from the test ids"))
        .collect();
    let result = rank_gallery(&h_b, &gallery, &targets)?;
    let paired = gallery.select_rows(&targets)?;
    let report = Report {
        subject: test.subject.clone(),
        mode: cfg.mode.to_string(),
        gallery_size: gallery_ids.len(),
        top1: topk_accuracy(&result, 1),
        top5: topk_accuracy(&result, 5),
        map: map_score(&result),
        mean_similarity: mean_similarity(&h_b, &paired)?,
        seed: cfg.seed,
        config_hash: crate::provenance::config_hash(cfg),
    };
    Ok(Evaluation {
        report,
        result,
        query_ids: test.image_ids.clone(),
        gallery_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_keys_are_sorted_and_floats_rounded() {
        let r = Report {
            subject: "sub-01".into(),
            mode: "intra".into(),
            gallery_size: 10,
            top1: 1.0 / 3.0,
            top5: 90.0,
            map: 50.0,
            mean_similarity: 0.123456789,
            seed: 7,
            config_hash: "abc".into(),
        };
        let text = r.to_json();
        let keys: Vec<&str> = text
            .lines()
            .filter_map(|l| l.trim().strip_prefix('"'))
            .map(|l| l.split('"').next().unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
        assert!(text.contains("0.333333"));
        assert!(text.contains("0.123457"));
    }

    #[test]
    fn gallery_blur_none_finds_the_unblurred_level() {
        let cfg = TrainConfig::default();
        assert_eq!(GalleryBlur::None.level(&cfg).unwrap(), BlurLevel::Base);
        let blurred_base = TrainConfig { r0: 5.0, c: 10.0, ..cfg.clone() };
        assert_eq!(GalleryBlur::None.level(&blurred_base).unwrap(), BlurLevel::Low);
        let all_blurred = TrainConfig { r0: 15.0, c: 2.0, ..cfg };
        assert!(GalleryBlur::None.level(&all_blurred).is_err());
        assert!("sharp".parse::<GalleryBlur>().is_err());
    }
}
