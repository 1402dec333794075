//! Discrete detection metrics over labelled trial scores.
//!
//! Decision rule throughout: a trial with `score >= t` is accepted as a
//! target, `score < t` is rejected. A rejected target is a miss, an accepted
//! nontarget is a false alarm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Target,
    Nontarget,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Target => "target",
            Label::Nontarget => "nontarget",
        }
    }
}

/// One detector output. Higher scores are more target-like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub trial_id: String,
    pub label: Label,
    pub score: f64,
}

impl TrialScore {
    pub fn new(trial_id: impl Into<String>, label: Label, score: f64) -> Self {
        TrialScore {
            trial_id: trial_id.into(),
            label,
            score,
        }
    }
}

/// An ordered collection of trials with cached class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    trials: Vec<TrialScore>,
    n_target: usize,
    n_nontarget: usize,
}

impl ScoreSet {
    /// Fails if any score is NaN or infinite. A set missing one of the
    /// classes is allowed here; the metrics reject it.
    pub fn new(trials: Vec<TrialScore>) -> Result<Self> {
        if let Some(bad) = trials.iter().find(|t| !t.score.is_finite()) {
            return Err(Error::domain(format!(
                "trial '{}' has non-finite score {}",
                bad.trial_id, bad.score
            )));
        }
        let n_target = trials.iter().filter(|t| t.label == Label::Target).count();
        let n_nontarget = trials.len() - n_target;
        Ok(ScoreSet {
            trials,
            n_target,
            n_nontarget,
        })
    }

    /// Builds a set from bare score lists, numbering trials `t0, t1, ...`
    /// and `n0, n1, ...`.
    pub fn from_scores(targets: &[f64], nontargets: &[f64]) -> Result<Self> {
        let trials = targets
            .iter()
            .enumerate()
            .map(|(i, &s)| TrialScore::new(format!("t{i}"), Label::Target, s))
            .chain(
                nontargets
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| TrialScore::new(format!("n{i}"), Label::Nontarget, s)),
            )
            .collect();
        Self::new(trials)
    }

    pub fn trials(&self) -> &[TrialScore] {
        &self.trials
    }

    /// Number of target trials (P).
    pub fn n_target(&self) -> usize {
        self.n_target
    }

    /// Number of nontarget trials (N).
    pub fn n_nontarget(&self) -> usize {
        self.n_nontarget
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Returns a copy with every score mapped through `f`.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.trials
                .iter()
                .map(|t| TrialScore::new(t.trial_id.clone(), t.label, f(t.score)))
                .collect(),
        )
    }

    fn scores_of(&self, label: Label) -> impl Iterator<Item = f64> + '_ {
        self.trials
            .iter()
            .filter(move |t| t.label == label)
            .map(|t| t.score)
    }

    /// Every metric needs at least one trial of each class.
    pub fn ensure_both_classes(&self) -> Result<()> {
        if self.n_target == 0 || self.n_nontarget == 0 {
            return Err(Error::domain(format!(
                "score set needs at least one target and one nontarget trial (P = {}, N = {})",
                self.n_target, self.n_nontarget
            )));
        }
        Ok(())
    }
}

/// Detection cost model: miss and false-alarm costs plus the target prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcfParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_tar: f64,
}

impl DcfParams {
    pub fn new(c_miss: f64, c_fa: f64, p_tar: f64) -> Result<Self> {
        let params = DcfParams {
            c_miss,
            c_fa,
            p_tar,
        };
        params.validate()?;
        Ok(params)
    }

    /// Unit costs at the given prior.
    pub fn with_prior(p_tar: f64) -> Result<Self> {
        Self::new(1.0, 1.0, p_tar)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_miss > 0.0 && self.c_miss.is_finite()) {
            return Err(Error::domain(format!(
                "c_miss must be positive, got {}",
                self.c_miss
            )));
        }
        if !(self.c_fa > 0.0 && self.c_fa.is_finite()) {
            return Err(Error::domain(format!(
                "c_fa must be positive, got {}",
                self.c_fa
            )));
        }
        if !(self.p_tar > 0.0 && self.p_tar < 1.0) {
            return Err(Error::domain(format!(
                "p_tar must lie in (0, 1), got {}",
                self.p_tar
            )));
        }
        Ok(())
    }

    /// Cost of the better of the two trivial systems (accept all / reject all).
    pub fn normalizer(&self) -> f64 {
        (self.c_miss * self.p_tar).min(self.c_fa * (1.0 - self.p_tar))
    }

    /// Weighted cost of a pair of error rates.
    pub fn cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        self.c_miss * self.p_tar * p_miss + self.c_fa * (1.0 - self.p_tar) * p_fa
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRatePoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcfResult {
    pub raw: f64,
    pub normalized: f64,
    pub threshold: f64,
}

impl DcfResult {
    fn new(params: &DcfParams, raw: f64, threshold: f64) -> Self {
        DcfResult {
            raw,
            normalized: raw / params.normalizer(),
            threshold,
        }
    }
}

/// Fraction of target trials scoring strictly below `t`.
pub fn p_miss_at(set: &ScoreSet, t: f64) -> Result<f64> {
    if set.n_target == 0 {
        return Err(Error::domain("p_miss is undefined without target trials"));
    }
    let misses = set.scores_of(Label::Target).filter(|&s| s < t).count();
    Ok(misses as f64 / set.n_target as f64)
}

/// Fraction of nontarget trials scoring at or above `t`.
pub fn p_fa_at(set: &ScoreSet, t: f64) -> Result<f64> {
    if set.n_nontarget == 0 {
        return Err(Error::domain("p_fa is undefined without nontarget trials"));
    }
    let false_alarms = set.scores_of(Label::Nontarget).filter(|&s| s >= t).count();
    Ok(false_alarms as f64 / set.n_nontarget as f64)
}

/// Sentinels placed strictly outside the observed score range.
fn sentinels(min: f64, max: f64) -> (f64, f64) {
    (min - min.abs().max(1.0), max + max.abs().max(1.0))
}

/// Evaluates both error rates at every distinct score, plus one sentinel
/// below the minimum (accept everything) and one above the maximum (reject
/// everything). Points come back in ascending threshold order.
pub fn sweep(set: &ScoreSet) -> Result<Vec<ErrorRatePoint>> {
    set.ensure_both_classes()?;
    let p = set.n_target as f64;
    let n = set.n_nontarget as f64;

    let mut sorted: Vec<(f64, bool)> = set
        .trials
        .iter()
        .map(|t| (t.score, t.label == Label::Target))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (below, above) = sentinels(sorted[0].0, sorted[sorted.len() - 1].0);
    let mut points = Vec::with_capacity(sorted.len() + 2);
    points.push(ErrorRatePoint {
        threshold: below,
        p_miss: 0.0,
        p_fa: 1.0,
    });

    // Targets strictly below the current threshold, nontargets at or above it.
    let mut targets_below = 0usize;
    let mut nontargets_above = set.n_nontarget;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        points.push(ErrorRatePoint {
            threshold: t,
            p_miss: targets_below as f64 / p,
            p_fa: nontargets_above as f64 / n,
        });
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                targets_below += 1;
            } else {
                nontargets_above -= 1;
            }
            i += 1;
        }
    }

    points.push(ErrorRatePoint {
        threshold: above,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    Ok(points)
}

/// Equal error rate, linearly interpolated between the two sweep points
/// that bracket the sign change of `p_miss - p_fa`.
pub fn eer(set: &ScoreSet) -> Result<EerResult> {
    let points = sweep(set)?;
    // The first sentinel has p_miss - p_fa = -1 and the last +1, so a
    // crossing always exists.
    let idx = points
        .iter()
        .position(|pt| pt.p_miss - pt.p_fa >= 0.0)
        .expect("sweep ends at p_miss = 1, p_fa = 0");
    let hi = points[idx];
    let hi_diff = hi.p_miss - hi.p_fa;
    if hi_diff == 0.0 {
        return Ok(EerResult {
            eer: hi.p_miss,
            threshold: hi.threshold,
        });
    }
    let lo = points[idx - 1];
    let lo_diff = lo.p_miss - lo.p_fa;
    let frac = -lo_diff / (hi_diff - lo_diff);
    Ok(EerResult {
        eer: lo.p_miss + frac * (hi.p_miss - lo.p_miss),
        threshold: lo.threshold + frac * (hi.threshold - lo.threshold),
    })
}

/// Detection cost at a fixed threshold.
pub fn actual_dcf(set: &ScoreSet, params: &DcfParams, t: f64) -> Result<DcfResult> {
    params.validate()?;
    set.ensure_both_classes()?;
    let raw = params.cost(p_miss_at(set, t)?, p_fa_at(set, t)?);
    Ok(DcfResult::new(params, raw, t))
}

/// Minimum detection cost over the sweep thresholds. Ties go to the lowest
/// threshold.
pub fn min_dcf(set: &ScoreSet, params: &DcfParams) -> Result<DcfResult> {
    params.validate()?;
    let points = sweep(set)?;
    let mut best = &points[0];
    let mut best_cost = params.cost(best.p_miss, best.p_fa);
    for pt in &points[1..] {
        let cost = params.cost(pt.p_miss, pt.p_fa);
        if cost < best_cost {
            best = pt;
            best_cost = cost;
        }
    }
    Ok(DcfResult::new(params, best_cost, best.threshold))
}

/// A sweep point together with its probit-warped DET coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
    /// `probit(p_fa)`, after clamping.
    pub x: f64,
    /// `probit(p_miss)`, after clamping.
    pub y: f64,
}

/// DET curve coordinates for every sweep point, in threshold order.
///
/// Rates are clamped into `[eps, 1 - eps]` with `eps = 1 / (2 max(P, N))`
/// so zero and unit rates stay finite on probit axes.
pub fn det_points(set: &ScoreSet) -> Result<Vec<DetPoint>> {
    let points = sweep(set)?;
    let eps = 0.5 / set.n_target.max(set.n_nontarget) as f64;
    let warp = |p: f64| probit(p.clamp(eps, 1.0 - eps));
    points
        .into_iter()
        .map(|pt| {
            Ok(DetPoint {
                threshold: pt.threshold,
                p_miss: pt.p_miss,
                p_fa: pt.p_fa,
                x: warp(pt.p_fa)?,
                y: warp(pt.p_miss)?,
            })
        })
        .collect()
}

/// Inverse of the standard normal CDF.
///
/// Wichura's AS 241 (PPND16) rational approximations; relative accuracy is
/// about 1e-16 across the double-precision range.
#[allow(clippy::excessive_precision)]
pub fn probit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probit needs p in (0, 1), got {p}")));
    }

    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    // For p > 0.5 the subtraction 1 - p is exact.
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < 0.0 { -value } else { value })
}
