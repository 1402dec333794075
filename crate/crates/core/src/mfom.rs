//! Maximal figure-of-merit objectives.
//!
//! The pipeline for a minibatch of discriminant scores `G` (B×M) with binary
//! labels `Y` (B×M) is
//!
//! 1. units-vs-zeros misclassification measure: for class `k` of a sample,
//!    `psi_k = -g_k + (1/eta) ln(mean_{j in I} exp(eta g_j))`, where `I` is
//!    the set of zero-labelled classes when `y_k = 1` and the set of
//!    unit-labelled classes when `y_k = 0`;
//! 2. smooth error counter `l_k = sigmoid(alpha_k psi_k + beta_k)`;
//! 3. soft rates `P_miss = sum(l * y) / P` and `P_fa = sum((1 - l)(1 - y)) / N`,
//!    with `P` and `N` the number of unit and zero label entries in the batch;
//! 4. either the DCF objective `c_miss p_tar P_miss + c_fa (1 - p_tar) P_fa`
//!    or the EER objective `P_fa + lambda |P_miss - P_fa|`.
//!
//! [`grad_objective`] returns exact derivatives of the objective with
//! respect to `G`, `alpha` and `beta`.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::DcfParams;

/// Lower bound kept on every `alpha_k` by [`CounterParams::project`].
pub const ALPHA_FLOOR: f64 = 1e-3;

/// Binary B×M label matrix. Every row holds at least one 1 and one 0, so the
/// competitor set of every class is non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(Array2<f64>);

impl LabelMatrix {
    pub fn new(y: Array2<f64>) -> Result<Self> {
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::domain("label entries must be 0 or 1"));
        }
        for (i, row) in y.outer_iter().enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            if ones == 0 || ones == row.len() {
                return Err(Error::domain(format!(
                    "label row {i} needs at least one unit and one zero entry"
                )));
            }
        }
        Ok(LabelMatrix(y))
    }

    /// One-hot rows from class indices.
    pub fn one_hot(classes: &[usize], n_classes: usize) -> Result<Self> {
        let mut y = Array2::zeros((classes.len(), n_classes));
        for (i, &c) in classes.iter().enumerate() {
            if c >= n_classes {
                return Err(Error::domain(format!(
                    "class index {c} out of range for {n_classes} classes"
                )));
            }
            y[[i, c]] = 1.0;
        }
        Self::new(y)
    }

    pub fn view(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    /// Number of unit entries (P).
    pub fn n_units(&self) -> f64 {
        self.0.sum()
    }

    /// Number of zero entries (N).
    pub fn n_zeros(&self) -> f64 {
        self.0.len() as f64 - self.n_units()
    }
}

/// B×M matrix of finite discriminant scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminantBatch(Array2<f64>);

impl DiscriminantBatch {
    pub fn new(g: Array2<f64>) -> Result<Self> {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("discriminant scores must be finite"));
        }
        Ok(DiscriminantBatch(g))
    }

    pub fn view(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }
}

/// Per-class scale (`alpha`) and shift (`beta`) of the smooth error counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterParams {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
}

impl CounterParams {
    /// `alpha = 1`, `beta = 0`: the counter starts as a plain logistic.
    pub fn new(n_classes: usize) -> Self {
        CounterParams {
            alpha: Array1::ones(n_classes),
            beta: Array1::zeros(n_classes),
        }
    }

    pub fn uniform(n_classes: usize, alpha: f64, beta: f64) -> Self {
        CounterParams {
            alpha: Array1::from_elem(n_classes, alpha),
            beta: Array1::from_elem(n_classes, beta),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != self.beta.len() {
            return Err(Error::domain("alpha and beta lengths differ"));
        }
        if self.alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::domain("alpha entries must be positive and finite"));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("beta entries must be finite"));
        }
        Ok(())
    }

    /// Clamps every `alpha_k` to at least [`ALPHA_FLOOR`].
    pub fn project(&mut self) {
        self.alpha.mapv_inplace(|a| a.max(ALPHA_FLOOR));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfomConfig {
    /// Smoothing constant of the competitor mean.
    pub eta: f64,
    /// Weight of the `|P_miss - P_fa|` penalty in the EER objective.
    pub lambda: f64,
    pub dcf: DcfParams,
}

impl Default for MfomConfig {
    fn default() -> Self {
        MfomConfig {
            eta: 1.0,
            lambda: 0.5,
            dcf: DcfParams {
                c_miss: 1.0,
                c_fa: 1.0,
                p_tar: 0.1,
            },
        }
    }
}

impl MfomConfig {
    pub fn with_prior(p_tar: f64) -> Result<Self> {
        let cfg = MfomConfig {
            dcf: DcfParams::with_prior(p_tar)?,
            ..Default::default()
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::domain(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.lambda == 0.0 || !self.lambda.is_finite() {
            return Err(Error::domain(format!(
                "lambda must be non-zero, got {}",
                self.lambda
            )));
        }
        self.dcf.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Dcf,
    Eer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradients {
    pub value: f64,
    pub d_g: Array2<f64>,
    pub d_alpha: Array1<f64>,
    pub d_beta: Array1<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Kolmogorov (log-mean-exp) mean of `g` over `members`, plus the softmax
/// weights of the members, which are its partial derivatives.
fn competitor_mean(g: ArrayView1<f64>, members: &[usize], eta: f64) -> (f64, Vec<f64>) {
    if let [only] = members {
        return (g[*only], vec![1.0]);
    }
    let max = members
        .iter()
        .map(|&j| eta * g[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = members.iter().map(|&j| (eta * g[j] - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mean = (max + total.ln() - (members.len() as f64).ln()) / eta;
    (mean, exps.into_iter().map(|e| e / total).collect())
}

/// Misclassification measure and competitor weights for one row.
struct RowMeasure {
    psi: Vec<f64>,
    units: Vec<usize>,
    zeros: Vec<usize>,
    unit_weights: Vec<f64>,
    zero_weights: Vec<f64>,
}

fn row_measure(g: ArrayView1<f64>, y: ArrayView1<f64>, eta: f64) -> Result<RowMeasure> {
    if g.len() != y.len() {
        return Err(Error::domain(format!(
            "score row has {} classes but label row has {}",
            g.len(),
            y.len()
        )));
    }
    let units: Vec<usize> = (0..y.len()).filter(|&k| y[k] == 1.0).collect();
    let zeros: Vec<usize> = (0..y.len()).filter(|&k| y[k] != 1.0).collect();
    if units.is_empty() || zeros.is_empty() {
        return Err(Error::domain(
            "competitor set is empty: label row needs a unit and a zero entry",
        ));
    }
    // unit-labelled classes compete against the zeros and vice versa
    let (zero_mean, zero_weights) = competitor_mean(g, &zeros, eta);
    let (unit_mean, unit_weights) = competitor_mean(g, &units, eta);
    let psi = (0..g.len())
        .map(|k| {
            let mean = if y[k] == 1.0 { zero_mean } else { unit_mean };
            -g[k] + mean
        })
        .collect();
    Ok(RowMeasure {
        psi,
        units,
        zeros,
        unit_weights,
        zero_weights,
    })
}

/// Units-vs-zeros misclassification measure of one sample. Negative entries
/// mean the class is on the correct side of its competitors.
pub fn misclassification_measure(g_row: &[f64], y_row: &[f64], eta: f64) -> Result<Vec<f64>> {
    if eta.is_nan() || eta <= 0.0 {
        return Err(Error::domain(format!("eta must be positive, got {eta}")));
    }
    let m = row_measure(ArrayView1::from(g_row), ArrayView1::from(y_row), eta)?;
    Ok(m.psi)
}

/// Row-wise misclassification measure for a whole batch.
pub fn misclassification_matrix(
    g: &DiscriminantBatch,
    y: &LabelMatrix,
    eta: f64,
) -> Result<Array2<f64>> {
    check_shapes(g, y)?;
    let mut psi = Array2::zeros(g.shape());
    for (i, (g_row, y_row)) in g.0.outer_iter().zip(y.0.outer_iter()).enumerate() {
        let m = row_measure(g_row, y_row, eta)?;
        psi.row_mut(i).assign(&Array1::from(m.psi));
    }
    Ok(psi)
}

/// Smooth error counter `l_k = 1 / (1 + exp(-alpha_k psi_k - beta_k))`.
pub fn smooth_counter(psi: &[f64], params: &CounterParams) -> Result<Vec<f64>> {
    if psi.len() != params.n_classes() {
        return Err(Error::domain(
            "psi length does not match counter parameters",
        ));
    }
    Ok(psi
        .iter()
        .enumerate()
        .map(|(k, &p)| sigmoid(params.alpha[k] * p + params.beta[k]))
        .collect())
}

fn counter_matrix(psi: &Array2<f64>, params: &CounterParams) -> Array2<f64> {
    let mut l = psi.clone();
    for mut row in l.outer_iter_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = sigmoid(params.alpha[k] * *v + params.beta[k]);
        }
    }
    l
}

fn check_label_shape(l: &Array2<f64>, y: &LabelMatrix) -> Result<()> {
    if l.dim() != y.shape() {
        return Err(Error::domain(format!(
            "counter matrix shape {:?} does not match labels {:?}",
            l.dim(),
            y.shape()
        )));
    }
    Ok(())
}

/// Soft miss rate: counter mass on unit-labelled entries over their count.
pub fn soft_p_miss(l: &Array2<f64>, y: &LabelMatrix) -> Result<f64> {
    check_label_shape(l, y)?;
    let p = y.n_units();
    if p == 0.0 {
        return Err(Error::domain("no unit labels in batch"));
    }
    let misses: f64 = l.iter().zip(y.0.iter()).map(|(l, y)| l * y).sum();
    Ok(misses / p)
}

/// Soft false-alarm rate: complement counter mass on zero-labelled entries.
pub fn soft_p_fa(l: &Array2<f64>, y: &LabelMatrix) -> Result<f64> {
    check_label_shape(l, y)?;
    let n = y.n_zeros();
    if n == 0.0 {
        return Err(Error::domain("no zero labels in batch"));
    }
    let fas: f64 = l
        .iter()
        .zip(y.0.iter())
        .map(|(l, y)| (1.0 - l) * (1.0 - y))
        .sum();
    Ok(fas / n)
}

/// Hard counterpart of the soft rates: class `k` is assigned wherever
/// `psi_k < 0`. Returns `(p_miss, p_fa)`.
pub fn discrete_rates(psi: &Array2<f64>, y: &LabelMatrix) -> Result<(f64, f64)> {
    check_label_shape(psi, y)?;
    let mut misses = 0usize;
    let mut fas = 0usize;
    for (&p, &lab) in psi.iter().zip(y.0.iter()) {
        let assigned = p < 0.0;
        if lab == 1.0 && !assigned {
            misses += 1;
        }
        if lab == 0.0 && assigned {
            fas += 1;
        }
    }
    Ok((misses as f64 / y.n_units(), fas as f64 / y.n_zeros()))
}

fn check_shapes(g: &DiscriminantBatch, y: &LabelMatrix) -> Result<()> {
    if g.shape() != y.shape() {
        return Err(Error::domain(format!(
            "score shape {:?} does not match label shape {:?}",
            g.shape(),
            y.shape()
        )));
    }
    if g.shape().0 == 0 {
        return Err(Error::domain("empty batch"));
    }
    Ok(())
}

/// Intermediate values of one objective evaluation.
#[derive(Debug, Clone)]
pub struct SoftRates {
    pub psi: Array2<f64>,
    pub counters: Array2<f64>,
    pub p_miss: f64,
    pub p_fa: f64,
}

pub fn soft_rates(
    g: &DiscriminantBatch,
    y: &LabelMatrix,
    cp: &CounterParams,
    cfg: &MfomConfig,
) -> Result<SoftRates> {
    cfg.validate()?;
    cp.validate()?;
    if cp.n_classes() != g.shape().1 {
        return Err(Error::domain(format!(
            "counter parameters cover {} classes, scores have {}",
            cp.n_classes(),
            g.shape().1
        )));
    }
    let psi = misclassification_matrix(g, y, cfg.eta)?;
    let counters = counter_matrix(&psi, cp);
    let p_miss = soft_p_miss(&counters, y)?;
    let p_fa = soft_p_fa(&counters, y)?;
    Ok(SoftRates {
        psi,
        counters,
        p_miss,
        p_fa,
    })
}

/// Objective value and its partials with respect to the two soft rates.
fn combine(which: Objective, cfg: &MfomConfig, p_miss: f64, p_fa: f64) -> (f64, f64, f64) {
    match which {
        Objective::Dcf => {
            let w_miss = cfg.dcf.c_miss * cfg.dcf.p_tar;
            let w_fa = cfg.dcf.c_fa * (1.0 - cfg.dcf.p_tar);
            (w_miss * p_miss + w_fa * p_fa, w_miss, w_fa)
        }
        Objective::Eer => {
            let gap = p_miss - p_fa;
            // subgradient 0 at the kink
            let sign = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
            let value = p_fa + cfg.lambda * gap.abs();
            (value, cfg.lambda * sign, 1.0 - cfg.lambda * sign)
        }
    }
}

pub fn objective(
    g: &DiscriminantBatch,
    y: &LabelMatrix,
    cp: &CounterParams,
    cfg: &MfomConfig,
    which: Objective,
) -> Result<f64> {
    let rates = soft_rates(g, y, cp, cfg)?;
    Ok(combine(which, cfg, rates.p_miss, rates.p_fa).0)
}

/// Smoothed detection cost.
pub fn dcf_objective(
    g: &DiscriminantBatch,
    y: &LabelMatrix,
    cp: &CounterParams,
    cfg: &MfomConfig,
) -> Result<f64> {
    objective(g, y, cp, cfg, Objective::Dcf)
}

/// Smoothed equal error rate, `P_fa + lambda |P_miss - P_fa|`.
pub fn eer_objective(
    g: &DiscriminantBatch,
    y: &LabelMatrix,
    cp: &CounterParams,
    cfg: &MfomConfig,
) -> Result<f64> {
    objective(g, y, cp, cfg, Objective::Eer)
}

/// Exact gradients of the selected objective.
///
/// Chain: `dE/dl` from the rate weights, `dl/dz = l (1 - l)` for
/// `z = alpha psi + beta`, then `dz/dalpha = psi`, `dz/dbeta = 1`,
/// `dz/dpsi = alpha`, and finally `dpsi_k/dg_k = -1`,
/// `dpsi_k/dg_j = softmax_j(eta g)` over the competitor set of `k`.
pub fn grad_objective(
    g: &DiscriminantBatch,
    y: &LabelMatrix,
    cp: &CounterParams,
    cfg: &MfomConfig,
    which: Objective,
) -> Result<ObjectiveGradients> {
    let rates = soft_rates(g, y, cp, cfg)?;
    let (value, d_miss, d_fa) = combine(which, cfg, rates.p_miss, rates.p_fa);
    let p = y.n_units();
    let n = y.n_zeros();
    let (b, m) = g.shape();

    let mut d_g = Array2::zeros((b, m));
    let mut d_alpha = Array1::zeros(m);
    let mut d_beta = Array1::zeros(m);

    for i in 0..b {
        let g_row = g.0.row(i);
        let y_row = y.0.row(i);
        let measure = row_measure(g_row, y_row, cfg.eta)?;
        let mut d_psi = vec![0.0; m];
        for k in 0..m {
            let l = rates.counters[[i, k]];
            let d_l = if y_row[k] == 1.0 {
                d_miss / p
            } else {
                -d_fa / n
            };
            let d_z = d_l * l * (1.0 - l);
            d_alpha[k] += d_z * measure.psi[k];
            d_beta[k] += d_z;
            d_psi[k] = d_z * cp.alpha[k];
        }
        let mut d_row = d_g.row_mut(i);
        for k in 0..m {
            d_row[k] -= d_psi[k];
            let (members, weights) = if y_row[k] == 1.0 {
                (&measure.zeros, &measure.zero_weights)
            } else {
                (&measure.units, &measure.unit_weights)
            };
            for (&j, &w) in members.iter().zip(weights) {
                d_row[j] += d_psi[k] * w;
            }
        }
    }

    Ok(ObjectiveGradients {
        value,
        d_g,
        d_alpha,
        d_beta,
    })
}
