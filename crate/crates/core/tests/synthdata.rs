mod common;

use anticomp::synthdata::{
    compress, generate_dataset, generate_fake_pair, generate_real_image, generate_sample,
    make_paired_dataset, quantization_table, zeroed_ac_count, CompressionLevel, Dataset,
    DatasetConfig, DatasetManifest, Image, Label,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn q(v: u32) -> CompressionLevel {
    CompressionLevel::new(v).unwrap()
}

fn noise_image(seed: u64, size: usize) -> Image {
    common::random_image(&mut ChaCha8Rng::seed_from_u64(seed), size)
}

fn mid_range_noise(seed: u64, size: usize) -> Image {
    let px = noise_image(seed, size).pixels().iter().map(|&p| 64 + p / 2).collect();
    Image::new(size, size, px).unwrap()
}

/// Largest per-pixel change of a second compression pass, and the first pass.
fn second_pass_drift(img: &Image, quality: u32) -> (i16, Image) {
    let once = compress(img, q(quality)).unwrap();
    let twice = compress(&once, q(quality)).unwrap();
    let drift = once
        .pixels()
        .iter()
        .zip(twice.pixels())
        .map(|(&x, &y)| (i16::from(x) - i16::from(y)).abs())
        .max()
        .unwrap();
    (drift, once)
}

#[test]
fn zeroed_ac_count_grows_as_quality_drops_on_50_images() {
    for seed in 0..50u64 {
        let img = if seed % 2 == 0 {
            generate_real_image(seed, 32).unwrap()
        } else {
            noise_image(seed, 32)
        };
        let counts: Vec<usize> = [90, 60, 30]
            .iter()
            .map(|&v| zeroed_ac_count(&img, q(v)).unwrap())
            .collect();
        assert!(counts[0] <= counts[1] && counts[1] <= counts[2], "seed {seed}: {counts:?}");
    }
}

#[test]
fn masks_do_not_depend_on_compression_levels() {
    let base = DatasetConfig { count: 12, ..DatasetConfig::default() };
    let other = DatasetConfig { hq_quality: 75, lq_quality: 10, ..base.clone() };
    for i in 0..12 {
        let a = generate_sample(&base, i, Label::Fake).unwrap();
        let b = generate_sample(&other, i, Label::Fake).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_ne!(a.lq, b.lq);
        assert!(a.mask.count_nonzero() > 0);
    }
}

#[test]
fn dataset_invariants() {
    let config = DatasetConfig { count: 40, ..DatasetConfig::default() };
    let (manifest, samples) = generate_dataset(&config).unwrap();
    manifest.validate().unwrap();
    let s = &manifest.splits;
    let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 40);
    for sample in &samples {
        assert_eq!(sample.hq.height(), sample.lq.height());
        assert_eq!(sample.mask.height(), sample.hq.height());
        match sample.label {
            Label::Fake => assert!(sample.mask.count_nonzero() > 0),
            Label::Real => assert_eq!(sample.mask.count_nonzero(), 0),
        }
    }
    assert_eq!(samples.iter().filter(|s| s.label.is_fake()).count(), 20);
}

#[test]
fn generation_is_a_pure_function_of_seed_and_config() {
    let config = DatasetConfig { count: 10, seed: 4, ..DatasetConfig::default() };
    let a = generate_dataset(&config).unwrap();
    let b = generate_dataset(&config).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&DatasetConfig { seed: 5, ..config.clone() }).unwrap();
    assert_ne!(a.1, c.1);
    // Sample content does not depend on generation order.
    let late = generate_sample(&config, 9, a.1[9].label).unwrap();
    assert_eq!(late, a.1[9]);
}

#[test]
fn on_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = DatasetConfig { count: 10, ..DatasetConfig::default() };
    let manifest = make_paired_dataset(&config, dir.path()).unwrap();
    assert_eq!(DatasetManifest::load(dir.path()).unwrap(), manifest);
    let data = Dataset::load(dir.path()).unwrap();
    let (_, samples) = generate_dataset(&config).unwrap();
    for (e, s) in manifest.entries.iter().zip(&samples) {
        assert_eq!(&data.get(e).unwrap(), s);
    }
    let other = tempfile::tempdir().unwrap();
    make_paired_dataset(&config, other.path()).unwrap();
    for name in ["manifest.json", "hq/pair00003.png", "mask/pair00007.png"] {
        assert_eq!(
            std::fs::read(dir.path().join(name)).unwrap(),
            std::fs::read(other.path().join(name)).unwrap()
        );
    }
}

#[test]
fn fake_pair_is_deterministic() {
    assert_eq!(generate_fake_pair(1, 2, 32).unwrap(), generate_fake_pair(1, 2, 32).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quantization_divisors_grow_as_quality_drops(a in 1u32..=100, b in 1u32..=100) {
        let (hi, lo) = (a.max(b), a.min(b));
        let (th, tl) = (quantization_table(q(hi)), quantization_table(q(lo)));
        for (rh, rl) in th.iter().zip(tl.iter()) {
            for (h, l) in rh.iter().zip(rl.iter()) {
                prop_assert!(l >= h);
            }
        }
    }

    #[test]
    fn zeroed_ac_count_is_monotone(seed in any::<u64>(), a in 1u32..=100, b in 1u32..=100) {
        let img = noise_image(seed, 16);
        let (hi, lo) = (a.max(b), a.min(b));
        prop_assert!(zeroed_ac_count(&img, q(hi)).unwrap() <= zeroed_ac_count(&img, q(lo)).unwrap());
    }

    #[test]
    fn second_pass_drift_is_at_most_two(seed in any::<u64>(), quality in 1u32..=100) {
        // Mid-range noise never clips on reconstruction.
        prop_assert!(second_pass_drift(&mid_range_noise(seed, 32), quality).0 <= 2);
    }

    #[test]
    fn larger_drift_only_comes_from_clamping(seed in any::<u64>(), quality in 1u32..=100, smooth in any::<bool>()) {
        let img = if smooth { generate_real_image(seed, 32).unwrap() } else { noise_image(seed, 32) };
        let (drift, once) = second_pass_drift(&img, quality);
        if drift > 2 {
            prop_assert!(once.pixels().iter().any(|&p| p == 0 || p == 255));
        }
    }
}

#[test]
fn mixed_pairs_take_the_exact_share() {
    let config = DatasetConfig {
        count: 30,
        mixed_hq_quality: Some(100),
        mixed_fraction: 0.4,
        ..DatasetConfig::default()
    };
    let (manifest, samples) = generate_dataset(&config).unwrap();
    let mixed = manifest.entries.iter().filter(|e| e.hq_quality == Some(100)).count();
    assert_eq!(mixed, 12);
    assert!(manifest.entries.iter().all(|e| matches!(e.hq_quality, Some(100) | Some(90))));
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(&generate_sample(&config, i, s.label).unwrap(), s);
    }
    assert_eq!(manifest.config.as_ref(), Some(&config));
    let bad = DatasetConfig { mixed_hq_quality: Some(20), ..config };
    assert!(bad.validate().unwrap_err().to_string().contains("mixedHqQuality"));
}

#[test]
fn constant_images_keep_their_value() {
    // Only the DC coefficient 8·(v − 128) is nonzero, so the value can move by at
    // most half a DC divisor / 8, and not at all once the divisor is ≤ 8.
    for quality in 1..=100 {
        let d = f64::from(quantization_table(q(quality))[0][0]);
        for v in (0..=255u8).step_by(5) {
            let img = Image::filled(16, 16, [v, v, v]).unwrap();
            let out = compress(&img, q(quality)).unwrap();
            let first = out.pixels()[0];
            assert!(out.pixels().iter().all(|&p| p == first), "q{quality} v{v} not constant");
            let moved = (f64::from(first) - f64::from(v)).abs();
            assert!(moved <= (d / 16.0).ceil(), "q{quality} v{v} moved {moved}");
            if d <= 8.0 {
                assert_eq!(first, v, "q{quality}");
            }
        }
    }
    assert!(quantization_table(q(75))[0][0] <= 8);
}
