mod support;

use mfom_core::mfom::{self, CounterParams, DiscriminantBatch, LabelMatrix, MfomConfig, Objective};
use mfom_core::scoring::DcfParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::gradcheck;

#[test]
fn objective_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let worst = (0..60)
        .map(|_| gradcheck::objective_case(&mut rng, 1e-6))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn end_to_end_gradients_through_the_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let worst = (0..10)
        .map(|_| gradcheck::network_case(&mut rng, 1e-6))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn sharp_counters_recover_discrete_rates() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut checked = 0;
    while checked < 30 {
        if let Some((miss, fa)) = gradcheck::sharpness_case(&mut rng) {
            assert!(miss < 1e-3 && fa < 1e-3, "{miss} {fa}");
            checked += 1;
        }
    }
}

#[test]
fn eer_gradient_at_the_kink_drops_the_penalty() {
    // single binary sample: soft miss and false-alarm rates coincide
    let g = DiscriminantBatch::new(ndarray::array![[0.8, 0.3]]).unwrap();
    let y = LabelMatrix::one_hot(&[0], 2).unwrap();
    let cp = CounterParams::new(2);
    let cfg = MfomConfig::default();
    let eer = mfom::grad_objective(&g, &y, &cp, &cfg, Objective::Eer).unwrap();
    // with the penalty contributing 0, E_EER has the gradient of P_fa alone,
    // which is a DCF objective weighting only false alarms
    let fa_only = MfomConfig {
        dcf: DcfParams::new(1.0, 1.0 / (1.0 - 1e-12), 1e-12).unwrap(),
        ..cfg
    };
    let fa = mfom::grad_objective(&g, &y, &cp, &fa_only, Objective::Dcf).unwrap();
    for (a, b) in eer.d_g.iter().zip(fa.d_g.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}
