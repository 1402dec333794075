//! wasm-bindgen exports for the static demo in `www/`. Every export takes
//! plain numbers or text and returns a JSON string; errors become a JS
//! exception carrying the message.

use mfom_core::mfom::{self, CounterParams};
use mfom_core::scorefile;
use mfom_core::scoring::{self, DcfParams, ScoreSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const PRIORS: [f64; 3] = [0.1, 0.05, 0.01];

#[derive(Debug, Serialize)]
pub struct DcfRow {
    pub p_tar: f64,
    pub normalized: f64,
    pub threshold: f64,
}

#[derive(Debug, Serialize)]
pub struct Evaluation {
    pub n_target: usize,
    pub n_nontarget: usize,
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: Vec<DcfRow>,
    /// (probit p_fa, probit p_miss) pairs.
    pub det: Vec<[f64; 2]>,
}

pub fn evaluation(set: &ScoreSet) -> Result<Evaluation, String> {
    let e = scoring::eer(set).map_err(|e| e.to_string())?;
    let min_dcf = PRIORS
        .iter()
        .map(|&p| {
            let r = DcfParams::with_prior(p).and_then(|d| scoring::min_dcf(set, &d));
            r.map(|r| DcfRow {
                p_tar: p,
                normalized: r.normalized,
                threshold: r.threshold,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let det = scoring::det_points(set)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|d| [d.x, d.y])
        .collect();
    Ok(Evaluation {
        n_target: set.n_target(),
        n_nontarget: set.n_nontarget(),
        eer: e.eer,
        eer_threshold: e.threshold,
        min_dcf,
        det,
    })
}

/// Gaussian target and nontarget scores with unit variance.
pub fn gaussian_scores(
    separation: f64,
    n_target: usize,
    n_nontarget: usize,
    seed: u64,
) -> Result<ScoreSet, String> {
    if !separation.is_finite() {
        return Err("separation must be finite".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tar = Normal::new(separation, 1.0).map_err(|e| e.to_string())?;
    let non = Normal::new(0.0, 1.0).map_err(|e| e.to_string())?;
    let t: Vec<f64> = (0..n_target).map(|_| tar.sample(&mut rng)).collect();
    let n: Vec<f64> = (0..n_nontarget).map(|_| non.sample(&mut rng)).collect();
    let set = ScoreSet::from_scores(&t, &n).map_err(|e| e.to_string())?;
    set.ensure_both_classes().map_err(|e| e.to_string())?;
    Ok(set)
}

#[derive(Debug, Serialize)]
pub struct CounterCurve {
    pub psi: Vec<f64>,
    pub soft: Vec<f64>,
    pub step: Vec<f64>,
}

/// The smooth error counter over psi in [-range, range] next to the 0/1
/// count it approximates.
pub fn counter_curve(
    alpha: f64,
    beta: f64,
    range: f64,
    points: usize,
) -> Result<CounterCurve, String> {
    if !(range > 0.0 && range.is_finite()) || points < 2 {
        return Err("need a positive range and at least 2 points".into());
    }
    let cp = CounterParams::uniform(1, alpha, beta);
    cp.validate().map_err(|e| e.to_string())?;
    let psi: Vec<f64> = (0..points)
        .map(|i| -range + 2.0 * range * i as f64 / (points - 1) as f64)
        .collect();
    let soft = psi
        .iter()
        .map(|&p| mfom::smooth_counter(&[p], &cp).map(|l| l[0]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let step = psi
        .iter()
        .map(|&p| if p < 0.0 { 0.0 } else { 1.0 })
        .collect();
    Ok(CounterCurve { psi, soft, step })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn evaluate_gaussian(
    separation: f64,
    n_target: u32,
    n_nontarget: u32,
    seed: u32,
) -> Result<String, JsValue> {
    to_json(
        gaussian_scores(
            separation,
            n_target as usize,
            n_nontarget as usize,
            u64::from(seed),
        )
        .and_then(|s| evaluation(&s)),
    )
}

#[wasm_bindgen]
pub fn evaluate_csv(text: &str) -> Result<String, JsValue> {
    to_json(
        scorefile::parse_scores_str(text)
            .and_then(|s| s.ensure_both_classes().map(|()| s))
            .map_err(|e| e.to_string())
            .and_then(|s| evaluation(&s)),
    )
}

#[wasm_bindgen]
pub fn smooth_counter_curve(alpha: f64, beta: f64) -> Result<String, JsValue> {
    to_json(counter_curve(alpha, beta, 5.0, 201))
}
