//! Two-layer perceptron with hand-written forward and backward passes.
//!
//! `hidden = relu(W1 x + b1)`, `g_k = logistic(W2 hidden + b2)_k`. The
//! per-class logistic outputs are the discriminant scores fed to the MFoM
//! objectives.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfom::CounterParams;

/// Network weights. The same struct carries gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// H×D
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// M×H
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpParams {
    pub fn zeros(d: usize, h: usize, m: usize) -> Self {
        MlpParams {
            w1: Array2::zeros((h, d)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((m, h)),
            b2: Array1::zeros(m),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (d, h, m) = self.dims();
        Self::zeros(d, h, m)
    }

    /// `(input, hidden, classes)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.ncols(), self.w1.nrows(), self.w2.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, m) = self.dims();
        if d == 0 || h == 0 || m == 0 {
            return Err(Error::domain("network dimensions must be positive"));
        }
        if self.b1.len() != h || self.w2.ncols() != h || self.b2.len() != m {
            return Err(Error::domain("inconsistent network parameter shapes"));
        }
        if self
            .tensors()
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::domain("network parameters must be finite"));
        }
        Ok(())
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    /// All parameters in `w1, b1, w2, b2` order, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Mutable access to the `i`-th entry of [`MlpParams::flatten`].
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if i < t.len() {
                return &mut t[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Cross-entropy pretraining defaults.
    pub fn pretrain(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            seed,
        }
    }

    /// MFoM fine-tuning defaults.
    pub fn finetune(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 0.005,
            momentum: 0.9,
            epochs: 5,
            batch_size: 32,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::domain("momentum must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::domain("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

/// Feature rows with one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl LabeledDataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::domain("dataset is empty"));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::domain("feature and label row counts differ"));
        }
        for row in y.outer_iter() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::domain("label rows must be one-hot"));
            }
        }
        Ok(LabeledDataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.y.ncols()
    }

    /// Index of the unit entry of each label row.
    pub fn classes(&self) -> Vec<usize> {
        self.y
            .outer_iter()
            .map(|row| row.iter().position(|&v| v == 1.0).unwrap())
            .collect()
    }

    pub fn select(&self, rows: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (self.x.select(Axis(0), rows), self.y.select(Axis(0), rows))
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_mlp(seed: u64, d: usize, h: usize, m: usize) -> Result<MlpParams> {
    if d == 0 || h == 0 || m == 0 {
        return Err(Error::domain("network dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::zeros(d, h, m);
    let s1 = (6.0 / (d + h) as f64).sqrt();
    params.w1.mapv_inplace(|_| rng.random_range(-s1..=s1));
    let s2 = (6.0 / (h + m) as f64).sqrt();
    params.w2.mapv_inplace(|_| rng.random_range(-s2..=s2));
    Ok(params)
}

/// Intermediates kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Array2<f64>,
    pre_hidden: Array2<f64>,
    hidden: Array2<f64>,
    output: Array2<f64>,
    dims: (usize, usize, usize),
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Returns the B×M scores, each in (0, 1), and the cache for backward.
pub fn forward(params: &MlpParams, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    let dims = params.dims();
    if x.ncols() != dims.0 {
        return Err(Error::domain(format!(
            "input has {} features, network expects {}",
            x.ncols(),
            dims.0
        )));
    }
    let pre_hidden = x.dot(&params.w1.t()) + &params.b1;
    let hidden = pre_hidden.mapv(|v| v.max(0.0));
    // clamped so saturated units still report a score strictly inside (0, 1)
    let output = (hidden.dot(&params.w2.t()) + &params.b2)
        .mapv(|z| logistic(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON));
    let cache = ForwardCache {
        x: x.to_owned(),
        pre_hidden,
        hidden,
        output: output.clone(),
        dims,
    };
    Ok((output, cache))
}

/// Clamp applied to scores inside the cross-entropy logarithms.
pub const CE_CLAMP: f64 = 1e-12;

/// Mean over the batch of the per-class binary cross-entropy, and its exact
/// gradient with respect to the scores.
pub fn ce_loss_and_grad(g: &Array2<f64>, y: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if g.dim() != y.dim() {
        return Err(Error::domain("score and label shapes differ"));
    }
    let b = g.nrows() as f64;
    let mut loss = 0.0;
    let mut d_g = Array2::zeros(g.dim());
    Zip::from(&mut d_g).and(g).and(y).for_each(|d, &g, &y| {
        let g = g.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        loss -= y * g.ln() + (1.0 - y) * (1.0 - g).ln();
        *d = (-y / g + (1.0 - y) / (1.0 - g)) / b;
    });
    Ok((loss / b, d_g))
}

/// Gradients of the upstream objective with respect to every network
/// parameter, given `d_g = dE/dG`.
pub fn backward(params: &MlpParams, cache: &ForwardCache, d_g: &Array2<f64>) -> Result<MlpParams> {
    if params.dims() != cache.dims {
        return Err(Error::domain(
            "forward cache was produced by a different network",
        ));
    }
    if d_g.dim() != cache.output.dim() {
        return Err(Error::domain(
            "upstream gradient shape does not match forward output",
        ));
    }
    let d_out = d_g * &cache.output.mapv(|g| g * (1.0 - g));
    let w2 = d_out.t().dot(&cache.hidden);
    let b2 = d_out.sum_axis(Axis(0));
    let mut d_hidden = d_out.dot(&params.w2);
    Zip::from(&mut d_hidden)
        .and(&cache.pre_hidden)
        .for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
    let w1 = d_hidden.t().dot(&cache.x);
    let b1 = d_hidden.sum_axis(Axis(0));
    Ok(MlpParams { w1, b1, w2, b2 })
}

/// `velocity <- momentum * velocity - lr * grad; param <- param + velocity`
pub fn momentum_update(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) {
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

pub fn sgd_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    velocity: &mut MlpParams,
    cfg: &TrainConfig,
) {
    for ((p, g), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(velocity.tensors_mut())
    {
        momentum_update(p, g, v, cfg.learning_rate, cfg.momentum);
    }
}

/// Network weights, counter parameters and the seed they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub mlp: MlpParams,
    pub counter: CounterParams,
}

const CHECKPOINT_MAGIC: &str = "mfom-checkpoint 1";

fn push_row(out: &mut String, name: &str, values: &[f64]) {
    out.push_str(name);
    for v in values {
        // 17 significant digits round-trip every f64
        write!(out, " {v:.16e}").unwrap();
    }
    out.push('\n');
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let (d, h, m) = self.mlp.dims();
        let mut out = format!("{CHECKPOINT_MAGIC}\nseed {}\ndims {d} {h} {m}\n", self.seed);
        let [w1, b1, w2, b2] = self.mlp.tensors();
        push_row(&mut out, "w1", w1);
        push_row(&mut out, "b1", b1);
        push_row(&mut out, "w2", w2);
        push_row(&mut out, "b2", b2);
        push_row(&mut out, "alpha", self.counter.alpha.as_slice().unwrap());
        push_row(&mut out, "beta", self.counter.beta.as_slice().unwrap());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("checkpoint truncated before '{what}'")))
        };

        let (line, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::parse(line, format!("expected '{CHECKPOINT_MAGIC}'")));
        }

        let (line, seed) = next("seed")?;
        let seed = seed
            .strip_prefix("seed ")
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::parse(line, "expected 'seed <u64>'"))?;

        let (line, dims) = next("dims")?;
        let dims: Vec<usize> = dims
            .strip_prefix("dims ")
            .map(|s| {
                s.split_whitespace()
                    .filter_map(|v| v.parse().ok())
                    .collect()
            })
            .unwrap_or_default();
        let &[d, h, m] = dims.as_slice() else {
            return Err(Error::parse(line, "expected 'dims <D> <H> <M>'"));
        };

        let mut read = |name: &str, len: usize| -> Result<Vec<f64>> {
            let (line, row) = next(name)?;
            let mut fields = row.split_whitespace();
            if fields.next() != Some(name) {
                return Err(Error::parse(line, format!("expected '{name}' row")));
            }
            let values = fields
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(line, format!("bad number in '{name}': {e}")))?;
            if values.len() != len {
                return Err(Error::parse(
                    line,
                    format!("'{name}' has {} values, expected {len}", values.len()),
                ));
            }
            Ok(values)
        };

        let shape_err = |e: ndarray::ShapeError| Error::domain(e.to_string());
        let mlp = MlpParams {
            w1: Array2::from_shape_vec((h, d), read("w1", h * d)?).map_err(shape_err)?,
            b1: Array1::from(read("b1", h)?),
            w2: Array2::from_shape_vec((m, h), read("w2", m * h)?).map_err(shape_err)?,
            b2: Array1::from(read("b2", m)?),
        };
        let counter = CounterParams {
            alpha: Array1::from(read("alpha", m)?),
            beta: Array1::from(read("beta", m)?),
        };
        mlp.validate()?;
        counter.validate()?;
        Ok(Checkpoint { seed, mlp, counter })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_mlp(7, 2, 16, 2).unwrap();
        let b = init_mlp(7, 2, 16, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_mlp(8, 2, 16, 2).unwrap());
        assert!(a.b1.iter().chain(a.b2.iter()).all(|&v| v == 0.0));
        let s1 = (6.0f64 / 18.0).sqrt();
        assert!(a.w1.iter().all(|v| v.abs() <= s1));
        assert!(init_mlp(0, 0, 4, 2).is_err());
    }

    #[test]
    fn zero_network_outputs_half() {
        let params = MlpParams::zeros(3, 4, 2);
        let x = array![[1.0, -2.0, 0.5], [0.0, 0.0, 9.0]];
        let (g, _) = forward(&params, x.view()).unwrap();
        assert_eq!(g.dim(), (2, 2));
        assert!(g.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_checks_input_width() {
        let params = MlpParams::zeros(3, 4, 2);
        assert!(forward(&params, array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn ce_examples() {
        let g = Array2::from_elem((3, 2), 0.5);
        let y = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let (loss, _) = ce_loss_and_grad(&g, &y).unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((loss - 1.386_294).abs() < 1e-6);

        let perfect = y.mapv(|v| v.clamp(CE_CLAMP, 1.0 - CE_CLAMP));
        let (loss, _) = ce_loss_and_grad(&perfect, &y).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn ce_gradient_matches_differences() {
        let g = array![[0.3, 0.8], [0.55, 0.1]];
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let (_, d_g) = ce_loss_and_grad(&g, &y).unwrap();
        let h = 1e-6;
        for idx in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            let mut up = g.clone();
            up[idx] += h;
            let mut down = g.clone();
            down[idx] -= h;
            let numeric = (ce_loss_and_grad(&up, &y).unwrap().0
                - ce_loss_and_grad(&down, &y).unwrap().0)
                / (2.0 * h);
            let rel = (numeric - d_g[idx]).abs() / d_g[idx].abs().max(1e-3);
            assert!(rel < 1e-5, "{idx:?}: {numeric} vs {}", d_g[idx]);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let params = init_mlp(3, 2, 4, 2).unwrap();
        let x = array![[0.3, -1.0], [2.0, 0.5]];
        let (g, cache) = forward(&params, x.view()).unwrap();
        let grads = backward(&params, &cache, &Array2::zeros(g.dim())).unwrap();
        assert!(grads.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let params = init_mlp(3, 2, 4, 2).unwrap();
        let (g, cache) = forward(&params, array![[0.3, -1.0]].view()).unwrap();
        let other = init_mlp(3, 2, 5, 2).unwrap();
        assert!(backward(&other, &cache, &g).is_err());
        assert!(backward(&params, &cache, &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut params = init_mlp(1, 2, 3, 2).unwrap();
        let before = params.clone();
        let mut grads = params.zeros_like();
        let mut velocity = params.zeros_like();
        let cfg = TrainConfig {
            momentum: 0.0,
            ..TrainConfig::pretrain(0)
        };
        sgd_step(&mut params, &grads, &mut velocity, &cfg);
        assert_eq!(params, before);

        grads.b2.fill(2.0);
        sgd_step(&mut params, &grads, &mut velocity, &cfg);
        assert_eq!(params.b2, array![-0.1, -0.1]);
        assert_eq!(params.w1, before.w1);

        // momentum carries the previous step forward
        let cfg = TrainConfig::pretrain(0);
        let mut p1 = before.clone();
        let mut v1 = before.zeros_like();
        sgd_step(&mut p1, &grads, &mut v1, &cfg);
        sgd_step(&mut p1, &grads, &mut v1, &cfg);
        let expected = -0.1 + (0.9 * -0.1 - 0.1);
        assert!((p1.b2[0] - expected).abs() < 1e-15);

        let mut p2 = before.clone();
        let mut v2 = before.zeros_like();
        sgd_step(&mut p2, &grads, &mut v2, &cfg);
        sgd_step(&mut p2, &grads, &mut v2, &cfg);
        assert_eq!(p1, p2);
        assert_eq!(v1, v2);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(Checkpoint::from_text("").is_err());
        assert!(Checkpoint::from_text("mfom-checkpoint 2\n").is_err());
        let ck = Checkpoint {
            seed: 1,
            mlp: init_mlp(1, 2, 3, 2).unwrap(),
            counter: CounterParams::new(2),
        };
        let text = ck.to_text().replace("b1 ", "b1 1.0 ");
        match Checkpoint::from_text(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn checkpoint_round_trips_exactly(
            seed in any::<u64>(),
            weights in prop::collection::vec(-1e6f64..1e6, 2 * 3 + 3 + 2 * 3 + 2),
            alpha in prop::collection::vec(1e-3f64..1e3, 2),
            beta in prop::collection::vec(-1e3f64..1e3, 2),
        ) {
            let mut mlp = MlpParams::zeros(2, 3, 2);
            for (i, w) in weights.iter().enumerate() {
                *mlp.param_mut(i) = *w;
            }
            let ck = Checkpoint {
                seed,
                mlp,
                counter: CounterParams { alpha: Array1::from(alpha), beta: Array1::from(beta) },
            };
            let back = Checkpoint::from_text(&ck.to_text()).unwrap();
            prop_assert_eq!(back, ck);
        }

        #[test]
        fn outputs_stay_in_unit_interval(
            seed in any::<u64>(),
            x in prop::collection::vec(-50.0f64..50.0, 8),
        ) {
            let params = init_mlp(seed, 2, 16, 2).unwrap();
            let x = Array2::from_shape_vec((4, 2), x).unwrap();
            let (g, _) = forward(&params, x.view()).unwrap();
            prop_assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
