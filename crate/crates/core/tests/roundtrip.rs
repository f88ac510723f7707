//! Public-API round trips and invariants across modules.

use proptest::prelude::*;
use ubp_core::blur::{fovea_blur, BlurParams, Image};
use ubp_core::data::epochs::average_repetitions;
use ubp_core::data::formats::{load_epochs, load_image, save_epochs, save_image};
use ubp_core::data::synthetic::{generate_synthetic, SyntheticSpec};
use ubp_core::data::toy::{build_feature_cache, ToyVisionEncoder};
use ubp_core::data::FeatureCache;
use ubp_core::eval::{evaluate, GalleryBlur};
use ubp_core::loss::sce_loss;
use ubp_core::train::{fit, Checkpoint, TrainConfig};
use ubp_core::uncertainty::{assign_radius, RadiusRule};
use ubp_core::{Matrix, Rng};

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_concepts: 12,
        n_test_concepts: 4,
        trials_per_image: 3,
        ..SyntheticSpec::default()
    }
}

#[test]
fn files_written_by_the_engine_read_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&small_spec(), &Rng::new(1)).unwrap();

    let epochs = dir.path().join("train.ubpe");
    save_epochs(&epochs, &data.train).unwrap();
    assert_eq!(load_epochs(&epochs).unwrap(), data.train);

    let (id, img) = &data.images[0];
    let path = dir.path().join(format!("{id}.ubpi"));
    save_image(&path, img).unwrap();
    let back = load_image(&path).unwrap();
    let err = back
        .as_slice()
        .iter()
        .zip(img.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");

    let cfg = TrainConfig::default();
    let encoder = ToyVisionEncoder::new(16, 1).unwrap();
    let cache = build_feature_cache(&data.images, &encoder, &cfg.rule(), cfg.blur_lambda).unwrap();
    let cache_path = dir.path().join("features.ubpf");
    cache.save(&cache_path).unwrap();
    assert_eq!(FeatureCache::load(&cache_path).unwrap(), cache);
}

#[test]
fn a_saved_checkpoint_evaluates_like_the_live_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&small_spec(), &Rng::new(2)).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let encoder = ToyVisionEncoder::new(16, 1).unwrap();
    let cache = build_feature_cache(&data.images, &encoder, &cfg.rule(), cfg.blur_lambda).unwrap();
    let result = fit(&cfg, &average_repetitions(&data.train), &cache, None, |_| Ok(())).unwrap();

    let path = dir.path().join("best.ubpc");
    result.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes().unwrap(), result.best.to_bytes().unwrap());

    let test = average_repetitions(&data.test);
    let live = evaluate(&result.best.params, &cfg, &test, &cache, GalleryBlur::Base).unwrap();
    let restored = evaluate(&loaded.params, &cfg, &test, &cache, GalleryBlur::Base).unwrap();
    assert_eq!(live.report.to_json(), restored.report.to_json());
}

proptest! {
    #[test]
    fn assigned_radii_stay_on_the_three_levels(
        s in -5.0f64..5.0,
        lo in -2.0f64..2.0,
        width in 0.0f64..2.0,
        flip in any::<bool>(),
    ) {
        let rule = RadiusRule { flip, ..RadiusRule::default() };
        let r = assign_radius(s, lo, lo + width, rule.r0, rule.c, flip);
        prop_assert!(rule.levels().contains(&r));
        prop_assert_eq!(r, rule.radius(rule.classify(s, lo, lo + width)));
    }

    #[test]
    fn loss_ignores_a_constant_offset(n in 2usize..12, shift in -30.0f64..30.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let m = Matrix::from_fn(n, n, |_, _| 3.0 * rng.normal());
        let a = sce_loss(&m).unwrap();
        let b = sce_loss(&m.map(|v| v + shift)).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn blur_output_stays_in_the_pixel_range(
        h in 3usize..20,
        w in 3usize..20,
        r in 0.0f64..45.0,
        lambda in 0.1f64..6.0,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let img = Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap();
        let out = fovea_blur(&img, &BlurParams::centered(r, lambda)).unwrap();
        prop_assert!(out.as_slice().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }
}
