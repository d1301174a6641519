use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turbo_gep::gepnet::{GepnetConfig, WeightArchive};
use turbo_gep::gnn::GnnHyperparams;
use turbo_gep::numerics::SeededRng;
use turbo_gep::training::{
    generate_dataset, generate_ext_labels, j_function, read_dataset, sample_prior_llrs, train_step1, train_step3, write_dataset, IaLut,
    TrainingSpec, IA_SET,
};
use turbo_gep::turbo::{synthetic_training_llrs, LlrScaler};

fn tiny_config() -> GepnetConfig {
    GepnetConfig {
        gnn: GnnHyperparams { n_u: 4, n_h1: 8, n_h2: 4, rounds: 1 },
        ..Default::default()
    }
}

fn tiny_spec() -> TrainingSpec {
    TrainingSpec {
        channel: turbo_gep::channel::ChannelModelSpec::rayleigh(2, 2),
        step1_samples: 64,
        step2_samples: 32,
        val_samples: 0,
        epochs: 500,
        step3_epochs: 20,
        batch_size: 16,
        lr: 3e-3,
        ..Default::default()
    }
}

#[test]
fn lut_inverts_j_function() {
    let lut = IaLut::standard();
    let mut last = -1.0;
    for &(ia, mu) in lut.entries() {
        assert!(IA_SET.contains(&ia));
        let back = if mu == 0.0 { 0.0 } else { j_function(mu, 128).unwrap() };
        assert!((back - ia).abs() < 1e-3, "I_A {ia}: J(mu) = {back}");
        assert!(mu > last, "mu not increasing at {ia}");
        last = mu;
    }
}

#[test]
fn j_function_against_monte_carlo() {
    // I = 1 − E[log2(1 + e^{−L})] for L ~ N(μ, 2μ) given bit 1.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for mu in [0.5, 2.0, 8.0] {
        let llrs = sample_prior_llrs(&vec![1u8; 400_000], mu, &mut rng);
        let mc = 1.0 - llrs.iter().map(|l| (1.0 + (-l).exp()).log2()).sum::<f64>() / llrs.len() as f64;
        let q = j_function(mu, 128).unwrap();
        assert!((mc - q).abs() < 3e-3, "mu {mu}: {mc} vs {q}");
    }
}

#[test]
fn synthetic_llr_moments() {
    let lut = IaLut::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for &(ia, mu) in lut.entries().iter().filter(|e| e.1 > 0.0 && e.0 < 1.0) {
        let l = sample_prior_llrs(&vec![1u8; 1_000_000], mu, &mut rng);
        let mean = l.iter().sum::<f64>() / l.len() as f64;
        let var = l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l.len() as f64;
        assert!((mean / mu - 1.0).abs() < 0.01, "I_A {ia}: mean {mean}");
        assert!((var / (2.0 * mu) - 1.0).abs() < 0.01, "I_A {ia}: var {var}");
    }
}

#[test]
fn scaler_quantile_coverage() {
    let lut = IaLut::standard();
    let scaler = LlrScaler::synthetic(&lut, 0.97, 100_000, 0);
    let fresh = synthetic_training_llrs(&lut, 1_000_000, 77);
    let inside = fresh.iter().filter(|l| l.abs() <= scaler.r).count() as f64 / fresh.len() as f64;
    assert!((0.96..=0.98).contains(&inside), "coverage {inside}");
}

#[test]
fn scaler_bounds_magnitude() {
    let scaler = LlrScaler::new(5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..100 {
        let mut l: Vec<f64> = (0..20).map(|_| rng.random_range(-40.0..40.0)).collect();
        let before = l.clone();
        scaler.apply(&mut l);
        let top = l.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(top <= 5.0 + 1e-12);
        // signs and ratios survive
        for (a, b) in l.iter().zip(&before) {
            assert!(a * b >= 0.0);
        }
    }
}

#[test]
fn step1_overfits_small_set() {
    let spec = tiny_spec();
    let lut = IaLut::standard();
    let data = generate_dataset(&spec, &lut, spec.step1_samples, SeededRng::new(3)).unwrap();
    let mut first = None;
    let out = train_step1(&spec, &tiny_config(), &data, &[], &mut |s| {
        first.get_or_insert(s.train_loss);
    })
    .unwrap();
    let last = out.history.iter().map(|h| h.train_loss).fold(f64::INFINITY, f64::min);
    let first = first.unwrap();
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn training_is_reproducible() {
    let spec = TrainingSpec { epochs: 3, ..tiny_spec() };
    let lut = IaLut::standard();
    let data = generate_dataset(&spec, &lut, 32, SeededRng::new(4)).unwrap();
    let a = train_step1(&spec, &tiny_config(), &data, &data, &mut |_| {}).unwrap();
    let b = train_step1(&spec, &tiny_config(), &data, &data, &mut |_| {}).unwrap();
    assert_eq!(a.archive.to_bytes().unwrap(), b.archive.to_bytes().unwrap());
}

#[test]
fn step3_warm_start_beats_cold_start() {
    let spec = TrainingSpec { epochs: 60, step3_epochs: 15, lr: 1e-3, ..tiny_spec() };
    let lut = IaLut::standard();
    let root = SeededRng::new(5);
    let data = generate_dataset(&spec, &lut, 1024, root.child(1)).unwrap();
    let app = train_step1(&spec, &tiny_config(), &data, &[], &mut |_| {}).unwrap().archive;
    let model = app.model().unwrap();
    let c = spec.modulation.constellation();
    let mut labelled = generate_dataset(&spec, &lut, 128, root.child(2)).unwrap();
    generate_ext_labels(&model, &mut labelled, &c).unwrap();
    let warm = train_step3(&spec, &app, &labelled, &[], &mut |_| {}).unwrap();
    let cold_init = train_step1(&TrainingSpec { epochs: 0, ..spec.clone() }, &tiny_config(), &data, &[], &mut |_| {}).unwrap().archive;
    let cold = train_step3(&spec, &cold_init, &labelled, &[], &mut |_| {}).unwrap();
    // epochs needed to reach the cold run's final loss
    let threshold = cold.history.last().unwrap().train_loss;
    let reach = |h: &[turbo_gep::training::EpochStats]| h.iter().position(|e| e.train_loss <= threshold).map(|p| p + 1);
    let w = reach(&warm.history).expect("warm start never reached the threshold");
    let k = reach(&cold.history).unwrap();
    assert!(w < k, "warm {w} epochs vs cold {k}");
}

#[test]
fn label_cache_roundtrip_feeds_step3() {
    let spec = TrainingSpec { epochs: 2, step3_epochs: 2, ..tiny_spec() };
    let lut = IaLut::standard();
    let mut data = generate_dataset(&spec, &lut, 16, SeededRng::new(6)).unwrap();
    let app = train_step1(&spec, &tiny_config(), &data, &[], &mut |_| {}).unwrap().archive;
    generate_ext_labels(&app.model().unwrap(), &mut data, &spec.modulation.constellation()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("labels.gepd");
    write_dataset(&p, &data).unwrap();
    let back = read_dataset(&p).unwrap();
    let a = train_step3(&spec, &app, &data, &[], &mut |_| {}).unwrap();
    let b = train_step3(&spec, &app, &back, &[], &mut |_| {}).unwrap();
    assert_eq!(a.archive.params, b.archive.params);
    let bytes = a.archive.to_bytes().unwrap();
    let re = WeightArchive::from_bytes(&bytes, None).unwrap();
    assert_eq!(re.meta.step, 3);
}
