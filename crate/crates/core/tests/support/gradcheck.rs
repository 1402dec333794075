//! Finite-difference harness for the MFoM objectives and the network.

use mfom_core::mfom::{self, CounterParams, DiscriminantBatch, LabelMatrix, MfomConfig, Objective};
use mfom_core::model::{self, MlpParams};
use ndarray::{Array1, Array2};
use rand::Rng;

use super::{central_diff, rel_err};

/// Denominator floor for relative errors, so near-zero gradients are
/// compared on an absolute scale.
pub const FLOOR: f64 = 1e-4;
/// EER penalty kink: cases with `|Pm - Pf|` below this are skipped.
pub const KINK: f64 = 1e-4;

pub fn random_labels(rng: &mut impl Rng, b: usize, m: usize) -> LabelMatrix {
    loop {
        let y = if m == 2 {
            let classes: Vec<usize> = (0..b).map(|_| rng.random_range(0..2)).collect();
            LabelMatrix::one_hot(&classes, 2)
        } else {
            LabelMatrix::new(Array2::from_shape_fn((b, m), |_| {
                f64::from(rng.random_range(0..2u8))
            }))
        };
        if let Ok(y) = y {
            return y;
        }
    }
}

pub fn random_counter(rng: &mut impl Rng, m: usize) -> CounterParams {
    CounterParams {
        alpha: Array1::from_shape_fn(m, |_| rng.random_range(0.5..3.0)),
        beta: Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0)),
    }
}

fn value(
    g: &Array2<f64>,
    y: &LabelMatrix,
    cp: &CounterParams,
    cfg: &MfomConfig,
    which: Objective,
) -> f64 {
    mfom::objective(
        &DiscriminantBatch::new(g.clone()).unwrap(),
        y,
        cp,
        cfg,
        which,
    )
    .unwrap()
}

/// Worst relative error of dE/dG, dE/dalpha and dE/dbeta over both
/// objectives for one random batch. The EER objective is skipped at its kink.
pub fn objective_case(rng: &mut impl Rng, h: f64) -> f64 {
    let b = rng.random_range(1..=8);
    let m = rng.random_range(2..=3);
    let g = Array2::from_shape_fn((b, m), |_| rng.random_range(-2.0..2.0));
    let y = random_labels(rng, b, m);
    let cp = random_counter(rng, m);
    let cfg = MfomConfig {
        eta: rng.random_range(0.5..2.0),
        ..MfomConfig::with_prior(rng.random_range(0.01..0.5)).unwrap()
    };
    let batch = DiscriminantBatch::new(g.clone()).unwrap();
    let rates = mfom::soft_rates(&batch, &y, &cp, &cfg).unwrap();
    let mut worst = 0.0f64;
    for which in [Objective::Dcf, Objective::Eer] {
        if which == Objective::Eer && (rates.p_miss - rates.p_fa).abs() < KINK {
            continue;
        }
        let grads = mfom::grad_objective(&batch, &y, &cp, &cfg, which).unwrap();
        assert_eq!(grads.value, value(&g, &y, &cp, &cfg, which));
        for ((i, k), &analytic) in grads.d_g.indexed_iter() {
            let numeric = central_diff(
                |v| {
                    let mut g2 = g.clone();
                    g2[[i, k]] = v;
                    value(&g2, &y, &cp, &cfg, which)
                },
                g[[i, k]],
                h,
            );
            worst = worst.max(rel_err(analytic, numeric, FLOOR));
        }
        worst = worst.max(counter_error(
            &grads.d_alpha,
            &grads.d_beta,
            &cp,
            h,
            |cp2| value(&g, &y, cp2, &cfg, which),
        ));
    }
    worst
}

fn counter_error(
    d_alpha: &Array1<f64>,
    d_beta: &Array1<f64>,
    cp: &CounterParams,
    h: f64,
    f: impl Fn(&CounterParams) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..cp.n_classes() {
        let numeric = central_diff(
            |v| {
                let mut cp2 = cp.clone();
                cp2.alpha[k] = v;
                f(&cp2)
            },
            cp.alpha[k],
            h,
        );
        worst = worst.max(rel_err(d_alpha[k], numeric, FLOOR));
        let numeric = central_diff(
            |v| {
                let mut cp2 = cp.clone();
                cp2.beta[k] = v;
                f(&cp2)
            },
            cp.beta[k],
            h,
        );
        worst = worst.max(rel_err(d_beta[k], numeric, FLOOR));
    }
    worst
}

// Resample until no hidden pre-activation sits near the ReLU kink.
fn random_network(rng: &mut impl Rng, x: &Array2<f64>, h: usize) -> MlpParams {
    loop {
        let mut params = model::init_mlp(rng.random(), x.ncols(), h, 2).unwrap();
        params.b1.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        params.b2.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let pre = x.dot(&params.w1.t()) + &params.b1;
        if pre.iter().all(|z| z.abs() > 1e-3) {
            return params;
        }
    }
}

#[derive(Clone, Copy)]
enum Loss {
    Ce,
    Mfom(Objective),
}

fn network_loss(
    params: &MlpParams,
    cp: &CounterParams,
    x: &Array2<f64>,
    y: &LabelMatrix,
    loss: Loss,
) -> f64 {
    let (g, _) = model::forward(params, x.view()).unwrap();
    match loss {
        Loss::Ce => model::ce_loss_and_grad(&g, &y.view().to_owned()).unwrap().0,
        Loss::Mfom(which) => mfom::objective(
            &DiscriminantBatch::new(g).unwrap(),
            y,
            cp,
            &MfomConfig::default(),
            which,
        )
        .unwrap(),
    }
}

/// Worst relative error of the end-to-end gradient (network weights, and
/// alpha and beta for the MFoM losses) for one random network, under
/// cross-entropy and both MFoM objectives.
pub fn network_case(rng: &mut impl Rng, h: f64) -> f64 {
    let b = rng.random_range(4..=10);
    let x = Array2::from_shape_fn((b, 2), |_| rng.random_range(-2.0..2.0));
    let classes: Vec<usize> = (0..b).map(|i| (i + rng.random_range(0..2)) % 2).collect();
    let y = LabelMatrix::one_hot(&classes, 2)
        .or_else(|_| LabelMatrix::one_hot(&(0..b).map(|i| i % 2).collect::<Vec<_>>(), 2))
        .unwrap();
    let hidden = rng.random_range(3..=8);
    let params = random_network(rng, &x, hidden);
    let cp = random_counter(rng, 2);
    let cfg = MfomConfig::default();
    let mut worst = 0.0f64;

    for loss in [
        Loss::Ce,
        Loss::Mfom(Objective::Dcf),
        Loss::Mfom(Objective::Eer),
    ] {
        let (g, cache) = model::forward(&params, x.view()).unwrap();
        let (d_g, counter_grads) = match loss {
            Loss::Ce => (
                model::ce_loss_and_grad(&g, &y.view().to_owned()).unwrap().1,
                None,
            ),
            Loss::Mfom(which) => {
                let batch = DiscriminantBatch::new(g.clone()).unwrap();
                let rates = mfom::soft_rates(&batch, &y, &cp, &cfg).unwrap();
                if which == Objective::Eer && (rates.p_miss - rates.p_fa).abs() < KINK {
                    continue;
                }
                let gr = mfom::grad_objective(&batch, &y, &cp, &cfg, which).unwrap();
                (gr.d_g, Some((gr.d_alpha, gr.d_beta)))
            }
        };
        let grads = model::backward(&params, &cache, &d_g).unwrap().flatten();
        let start = params.flatten();
        for (i, &analytic) in grads.iter().enumerate() {
            let numeric = central_diff(
                |v| {
                    let mut p2 = params.clone();
                    *p2.param_mut(i) = v;
                    network_loss(&p2, &cp, &x, &y, loss)
                },
                start[i],
                h,
            );
            worst = worst.max(rel_err(analytic, numeric, FLOOR));
        }
        if let Some((d_alpha, d_beta)) = counter_grads {
            worst = worst.max(counter_error(&d_alpha, &d_beta, &cp, h, |cp2| {
                network_loss(&params, cp2, &x, &y, loss)
            }));
        }
    }
    worst
}

/// For alpha = 200, beta = 0: the largest gap between soft and discrete
/// miss and false-alarm rates on one random batch, or `None` when some
/// `|psi| <= 0.05` and the batch is rejected.
pub fn sharpness_case(rng: &mut impl Rng) -> Option<(f64, f64)> {
    let b = rng.random_range(2..=16);
    let m = rng.random_range(2..=3);
    let g = Array2::from_shape_fn((b, m), |_| rng.random_range(-1.0..1.0));
    let y = random_labels(rng, b, m);
    let cp = CounterParams::uniform(m, 200.0, 0.0);
    let batch = DiscriminantBatch::new(g).unwrap();
    let rates = mfom::soft_rates(&batch, &y, &cp, &MfomConfig::default()).unwrap();
    if rates.psi.iter().any(|p| p.abs() <= 0.05) {
        return None;
    }
    // discrete decisions straight from psi: psi < 0 assigns the class, so a
    // unit label is missed when psi >= 0 and a zero label is a false alarm
    // when psi < 0
    let (mut misses, mut fas) = (0.0, 0.0);
    for ((i, k), &p) in rates.psi.indexed_iter() {
        let assigned = p < 0.0;
        if y.view()[[i, k]] == 1.0 {
            misses += f64::from(u8::from(!assigned));
        } else {
            fas += f64::from(u8::from(assigned));
        }
    }
    let miss = misses / y.n_units();
    let fa = fas / y.n_zeros();
    Some(((rates.p_miss - miss).abs(), (rates.p_fa - fa).abs()))
}
