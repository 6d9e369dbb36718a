mod common;

use anticomp::autograd::{grad, Tensor};
use anticomp::losses::{at_loss, attention_transfer_term, dis_loss, gan_losses, total_loss, LossWeights};
use anticomp::model::{Collection, GanMode, Variant};
use anticomp::synthdata::Label;
use common::gradcheck;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_tensor(rows: &[Vec<f64>]) -> Tensor {
    let d = rows[0].len();
    Tensor::from_vec(&[rows.len(), d], rows.concat())
}

fn random_rows(rng: &mut impl Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

#[test]
fn dis_loss_matches_loop_oracle_on_100_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = LossWeights::default();
    for _ in 0..100 {
        let n = rng.random_range(1..=16);
        let d = rng.random_range(1..=12);
        // Scales straddle both radii so every hinge is exercised.
        let scale = [0.05, 1.0, 8.0][rng.random_range(0..3)];
        let ch = random_rows(&mut rng, n, d, scale);
        let cl = random_rows(&mut rng, n, d, scale);
        let labels: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.5) { Label::Fake } else { Label::Real })
            .collect();
        let got = dis_loss(Some(&to_tensor(&ch)), &to_tensor(&cl), &labels, &w).unwrap();
        let want = common::dis_oracle(Some(&ch), &cl, &labels, w.r_minus, w.r_plus, w.lambda3);
        assert!(common::close(got.loss.item(), want, 1e-9), "{} vs {want}", got.loss.item());
        assert!(common::close(got.per_term.sum(), want, 1e-9));
        let single = dis_loss(None, &to_tensor(&cl), &labels, &w).unwrap();
        let want = common::dis_oracle(None, &cl, &labels, w.r_minus, w.r_plus, w.lambda3);
        assert!(common::close(single.loss.item(), want, 1e-9));
    }
}

#[test]
fn at_loss_matches_loop_oracle_on_100_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.random_range(1..=16);
        let a = rng.random_range(1..=5);
        let maps = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..a * a).map(|_| rng.random_range(1e-4..1.0 - 1e-4)).collect())
                .collect()
        };
        let mh = maps(&mut rng);
        let ml = maps(&mut rng);
        let masks: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..a * a).map(|_| f64::from(rng.random_bool(0.3) as u8)).collect())
            .collect();
        let t = |rows: &[Vec<f64>]| Tensor::from_vec(&[n, 1, a, a], rows.concat());
        for transfer in [false, true] {
            let got = at_loss(Some(&t(&mh)), &t(&ml), &t(&masks), transfer, false).unwrap();
            let want = common::at_oracle(&mh, &ml, &masks, transfer);
            assert!(common::close(got.loss.item(), want, 1e-9), "{} vs {want}", got.loss.item());
        }
    }
}

#[test]
fn gradient_check_full_objective() {
    let variant = Variant {
        bidirectional_transfer: true,
        ..Variant::full()
    };
    let config = gradcheck::tiny_config(variant);
    let results = gradcheck::check(&config, &gradcheck::all_collections(&config), 5);
    for c in gradcheck::all_collections(&config) {
        let total: f64 = results.iter().filter(|r| r.collection == c).map(|r| r.analytic_norm).sum();
        assert!(total > 0.0, "{} receives no gradient", c.name());
    }
    for r in &results {
        assert!(
            r.rel_error < 1e-4,
            "{}/{}: relative error {:e}",
            r.collection.name(),
            r.name,
            r.rel_error
        );
    }
}

#[test]
fn gradient_check_with_stopped_transfer_target() {
    // With the default one-way transfer the high branch sees a stop-gradient,
    // so only collections outside it are compared to the plain derivative.
    let config = gradcheck::tiny_config(Variant::full());
    let collections: Vec<Collection> = gradcheck::all_collections(&config)
        .into_iter()
        .filter(|c| !matches!(c, Collection::HeadHigh | Collection::AttentionHigh))
        .collect();
    for r in gradcheck::check(&config, &collections, 6) {
        assert!(r.rel_error < 1e-4, "{}/{}: {:e}", r.collection.name(), r.name, r.rel_error);
    }
}

#[test]
fn transfer_term_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let v: Vec<f64> = (0..2 * 16).map(|_| rng.random_range(0.01..1.0)).collect();
        let m = Tensor::from_vec(&[2, 1, 4, 4], v.clone());
        let c = rng.random_range(0.1..10.0);
        let scaled = Tensor::from_vec(&[2, 1, 4, 4], v.iter().map(|x| x * c).collect());
        assert!(attention_transfer_term(&m, &scaled, false).unwrap().item() < 1e-12);
    }
}

#[test]
fn log_generator_loss_is_stationary_at_one_half() {
    // D emits the same p for both orders of every pair.
    let p = Tensor::parameter(ndarray::ArrayD::from_elem(ndarray::IxDyn(&[6]), 0.5));
    let (_, g) = gan_losses(&p, &p, GanMode::Log).unwrap();
    let gr = grad(&g, &[&p], false).remove(0);
    assert!(gr.to_vec().iter().all(|v| v.abs() < 1e-12));
    let q = Tensor::parameter(ndarray::ArrayD::from_elem(ndarray::IxDyn(&[6]), 0.7));
    let (_, g) = gan_losses(&q, &q, GanMode::Log).unwrap();
    assert!(grad(&g, &[&q], false)[0].to_vec().iter().all(|v| v.abs() > 1e-3));
}

#[test]
fn zero_configuration_gives_zero_loss() {
    let w = LossWeights::default();
    let labels = [Label::Real, Label::Fake, Label::Fake];
    let rows = vec![vec![0.05, 0.0], vec![18.0, 0.0], vec![0.0, -30.0]];
    let d = dis_loss(Some(&to_tensor(&rows)), &to_tensor(&rows), &labels, &w).unwrap();
    assert_eq!(d.loss.item(), 0.0);
    let mut moved = rows.clone();
    moved[0][1] = 0.01;
    let d = dis_loss(Some(&to_tensor(&rows)), &to_tensor(&moved), &labels, &w).unwrap();
    assert!(d.loss.item() > 0.0);
}

proptest! {
    #[test]
    fn losses_are_non_negative(
        seed in 0u64..10_000,
        n in 1usize..9,
        scale in prop::sample::select(vec![0.01, 1.0, 10.0, 40.0]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = LossWeights::default();
        let ch = random_rows(&mut rng, n, 4, scale);
        let cl = random_rows(&mut rng, n, 4, scale);
        let labels: Vec<Label> = (0..n).map(|i| if i % 2 == 0 { Label::Real } else { Label::Fake }).collect();
        let dis = dis_loss(Some(&to_tensor(&ch)), &to_tensor(&cl), &labels, &w).unwrap();
        prop_assert!(dis.loss.item() >= 0.0);
        let maps: Vec<f64> = (0..n * 4).map(|_| rng.random_range(0.0..=1.0)).collect();
        let masks: Vec<f64> = (0..n * 4).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect();
        let m = Tensor::from_vec(&[n, 1, 2, 2], maps);
        let g = Tensor::from_vec(&[n, 1, 2, 2], masks);
        let at = at_loss(Some(&m), &m, &g, true, false).unwrap();
        prop_assert!(at.loss.item() >= 0.0);
        let dr = Tensor::from_vec(&[n], (0..n).map(|_| rng.random_range(0.0..=1.0)).collect());
        let ds = Tensor::from_vec(&[n], (0..n).map(|_| rng.random_range(0.0..=1.0)).collect());
        let (d_loss, g_loss) = gan_losses(&dr, &ds, GanMode::Log).unwrap();
        prop_assert!(d_loss.item() >= 0.0);
        let (total, report) = total_loss(&dis, Some(&g_loss), Some(&at), d_loss.item(), &w);
        let want = dis.loss.item() + w.lambda1 * g_loss.item() + w.lambda2 * at.loss.item();
        prop_assert!((total.item() - want).abs() <= 1e-12 * want.abs().max(1.0));
        prop_assert_eq!(report.total, total.item());
    }
}
