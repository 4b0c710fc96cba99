//! Permutation-invariant composite loss, optimizer and training loop.

use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{normalize_input, DatasetError, DatasetRecord};
use crate::geometry::{ShapeFamily, MAX_WALLS};
use crate::model::{
    backward, forward, init_params, ModelError, NetworkOutput, NetworkParams, OutputGrad,
    WALL_PARAMS,
};

pub type WallRows = [[f64; WALL_PARAMS]; MAX_WALLS];
pub type Permutation = [usize; MAX_WALLS];

/// Weight of the decision loss in the total.
pub const DECISION_WEIGHT: f64 = 0.1;
pub const ANGULAR_EPS: f64 = 1e-12;
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("angular loss is undefined when both wall matrices are zero")]
    BothZero,
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn dot_norms(a_hat: &WallRows, a_gt: &WallRows) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut nh = 0.0;
    let mut ng = 0.0;
    for (rh, rg) in a_hat.iter().zip(a_gt) {
        for (h, g) in rh.iter().zip(rg) {
            dot += h * g;
            nh += h * h;
            ng += g * g;
        }
    }
    (dot, nh.sqrt(), ng.sqrt())
}

/// `1 - |<a_hat, a_gt>| / (|a_hat| |a_gt| + eps)` over the flattened matrices.
pub fn angular_loss(a_hat: &WallRows, a_gt: &WallRows) -> Result<f64, TrainError> {
    let (dot, nh, ng) = dot_norms(a_hat, a_gt);
    if nh == 0.0 && ng == 0.0 {
        return Err(TrainError::BothZero);
    }
    Ok(1.0 - dot.abs() / (nh * ng + ANGULAR_EPS))
}

fn bce_term(p_hat: f64, p: f64, clamp: f64) -> f64 {
    let q = p_hat.clamp(clamp, 1.0 - clamp);
    -(p * q.ln() + (1.0 - p) * (1.0 - q).ln())
}

/// Mean binary cross entropy over the wall slots.
pub fn decision_loss(p_hat: &[f64; MAX_WALLS], p_gt: &[f64; MAX_WALLS]) -> f64 {
    decision_loss_clamped(p_hat, p_gt, BCE_CLAMP)
}

pub fn decision_loss_clamped(p_hat: &[f64; MAX_WALLS], p_gt: &[f64; MAX_WALLS], clamp: f64) -> f64 {
    p_hat
        .iter()
        .zip(p_gt)
        .map(|(&q, &p)| bce_term(q, p, clamp))
        .sum::<f64>()
        / MAX_WALLS as f64
}

/// Rows of `rows` reordered so that output row `i` is input row `perm[i]`.
pub fn permute_rows<T: Copy>(rows: &[T; MAX_WALLS], perm: &Permutation) -> [T; MAX_WALLS] {
    std::array::from_fn(|i| rows[perm[i]])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub gamma: f64,
    pub beta: f64,
    pub total: f64,
    /// Ground-truth row assigned to each predicted slot.
    pub permutation: Permutation,
}

impl LossBreakdown {
    fn new(gamma: f64, beta: f64, permutation: Permutation) -> Self {
        Self {
            gamma,
            beta,
            total: gamma + DECISION_WEIGHT * beta,
            permutation,
        }
    }
}

/// Calls `f` on every permutation of `0..MAX_WALLS` (Heap's algorithm),
/// starting with the identity.
pub fn for_each_permutation(mut f: impl FnMut(&Permutation)) {
    let mut perm: Permutation = std::array::from_fn(|i| i);
    let mut c = [0usize; MAX_WALLS];
    f(&perm);
    let mut i = 1;
    while i < MAX_WALLS {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            f(&perm);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Exact minimum of the composite loss over all assignments of ground-truth
/// rows to predicted slots.
///
/// Norms do not depend on the assignment, so each candidate costs a sum over
/// precomputed slot-pair tables: row dot products for the angular term and
/// per-slot cross entropies for the decision term.
pub fn pit_total_loss(
    a_hat: &WallRows,
    p_hat: &[f64; MAX_WALLS],
    a_gt: &WallRows,
    p_gt: &[f64; MAX_WALLS],
) -> Result<LossBreakdown, TrainError> {
    pit_total_loss_clamped(a_hat, p_hat, a_gt, p_gt, BCE_CLAMP)
}

pub fn pit_total_loss_clamped(
    a_hat: &WallRows,
    p_hat: &[f64; MAX_WALLS],
    a_gt: &WallRows,
    p_gt: &[f64; MAX_WALLS],
    clamp: f64,
) -> Result<LossBreakdown, TrainError> {
    let (_, nh, ng) = dot_norms(a_hat, a_gt);
    if nh == 0.0 && ng == 0.0 {
        return Err(TrainError::BothZero);
    }
    let denom = nh * ng + ANGULAR_EPS;
    let mut dots = [[0.0; MAX_WALLS]; MAX_WALLS];
    let mut bces = [[0.0; MAX_WALLS]; MAX_WALLS];
    for i in 0..MAX_WALLS {
        for j in 0..MAX_WALLS {
            dots[i][j] = a_hat[i].iter().zip(&a_gt[j]).map(|(h, g)| h * g).sum();
            bces[i][j] = bce_term(p_hat[i], p_gt[j], clamp) / MAX_WALLS as f64;
        }
    }
    let mut best = f64::INFINITY;
    let mut best_perm: Permutation = std::array::from_fn(|i| i);
    for_each_permutation(|perm| {
        let mut dot = 0.0;
        let mut bce = 0.0;
        for (i, &j) in perm.iter().enumerate() {
            dot += dots[i][j];
            bce += bces[i][j];
        }
        let total = 1.0 - dot.abs() / denom + DECISION_WEIGHT * bce;
        if total < best {
            best = total;
            best_perm = *perm;
        }
    });
    let gamma = angular_loss(a_hat, &permute_rows(a_gt, &best_perm))?;
    let beta = decision_loss_clamped(p_hat, &permute_rows(p_gt, &best_perm), clamp);
    Ok(LossBreakdown::new(gamma, beta, best_perm))
}

/// Gradient of `gamma + 0.1 beta` with respect to the network outputs for an
/// already-permuted ground truth.
pub fn loss_gradient(
    out: &NetworkOutput,
    a_gt_perm: &WallRows,
    p_gt_perm: &[f64; MAX_WALLS],
    clamp: f64,
) -> OutputGrad {
    let (dot, nh, ng) = dot_norms(&out.a_hat, a_gt_perm);
    let denom = nh * ng + ANGULAR_EPS;
    let sign = if dot > 0.0 {
        1.0
    } else if dot < 0.0 {
        -1.0
    } else {
        0.0
    };
    let radial = if nh > 0.0 {
        dot.abs() * ng / (nh * denom * denom)
    } else {
        0.0
    };
    let mut grad = OutputGrad::default();
    for w in 0..MAX_WALLS {
        for ((g, &t), &a) in grad.d_a_hat[w]
            .iter_mut()
            .zip(&a_gt_perm[w])
            .zip(&out.a_hat[w])
        {
            *g = -sign * t / denom + radial * a;
        }
        let q = out.p_hat[w];
        if q > clamp && q < 1.0 - clamp {
            let p = p_gt_perm[w];
            grad.d_p_hat[w] = DECISION_WEIGHT * (-p / q + (1.0 - p) / (1.0 - q)) / MAX_WALLS as f64;
        }
    }
    grad
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_params(params: &NetworkParams, config: &TrainConfig) -> Self {
        Self::new(
            params.param_count(),
            config.beta1,
            config.beta2,
            config.adam_eps,
        )
    }

    /// Applies one update; fails before touching anything if a gradient is
    /// not finite.
    pub fn update<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: &[f64],
        lr: f64,
    ) -> Result<(), TrainError> {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient);
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn optimizer_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    let flat: Vec<f64> = grads.values().copied().collect();
    state.update(params.values_mut(), &flat, lr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub bce_clamp: f64,
    /// Stop as soon as the mean validation loss drops below this value.
    pub stop_below: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            bce_clamp: BCE_CLAMP,
            stop_below: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_owned()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning rate must be positive");
        }
        if self.max_epochs == 0 {
            return bad("epoch count must be positive");
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad("patience must be in 1..=max_epochs");
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return bad("moment decay rates must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0 && self.bce_clamp > 0.0 && self.bce_clamp < 0.5) {
            return bad("epsilons must be positive");
        }
        Ok(())
    }
}

/// A normalized network input with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: Vec<f32>,
    pub walls: WallRows,
    pub presence: [f64; MAX_WALLS],
    pub num_walls: usize,
    pub shape_family: ShapeFamily,
    pub seed: u64,
}

impl TrainingSample {
    pub fn from_record(record: &DatasetRecord) -> Result<Self, DatasetError> {
        Ok(Self {
            input: normalize_input(&record.rir)?,
            walls: record.walls_f64(),
            presence: record.presence_f64(),
            num_walls: record.num_walls as usize,
            shape_family: record.shape_family,
            seed: record.seed,
        })
    }
}

pub fn prepare_samples(records: &[DatasetRecord]) -> Result<Vec<TrainingSample>, DatasetError> {
    records.iter().map(TrainingSample::from_record).collect()
}

/// Loss and parameter gradient for one sample, with the best permutation held fixed.
pub fn sample_gradient(
    params: &NetworkParams,
    sample: &TrainingSample,
    clamp: f64,
) -> Result<(LossBreakdown, NetworkParams), TrainError> {
    let (out, cache) = forward(params, &sample.input)?;
    let loss = pit_total_loss_clamped(
        &out.a_hat,
        &out.p_hat,
        &sample.walls,
        &sample.presence,
        clamp,
    )?;
    let a_gt = permute_rows(&sample.walls, &loss.permutation);
    let p_gt = permute_rows(&sample.presence, &loss.permutation);
    let grad = loss_gradient(&out, &a_gt, &p_gt, clamp);
    Ok((loss, backward(params, &cache, &grad)?))
}

pub fn sample_loss(
    params: &NetworkParams,
    sample: &TrainingSample,
    clamp: f64,
) -> Result<LossBreakdown, TrainError> {
    let (out, _) = forward(params, &sample.input)?;
    pit_total_loss_clamped(
        &out.a_hat,
        &out.p_hat,
        &sample.walls,
        &sample.presence,
        clamp,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossMeans {
    pub gamma: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossMeans {
    fn of(losses: &[LossBreakdown]) -> Self {
        let n = losses.len() as f64;
        let mut m = Self::default();
        for l in losses {
            m.gamma += l.gamma;
            m.beta += l.beta;
            m.total += l.total;
        }
        Self {
            gamma: m.gamma / n,
            beta: m.beta / n,
            total: m.total / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossMeans,
    pub val: LossMeans,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: NetworkParams,
    pub best_epoch: usize,
    pub best_val_total: f64,
    pub history: Vec<EpochRecord>,
}

/// Mean losses of `params` over a dataset.
pub fn evaluate_loss(
    params: &NetworkParams,
    samples: &[TrainingSample],
    clamp: f64,
) -> Result<LossMeans, TrainError> {
    let losses = samples
        .par_iter()
        .map(|s| sample_loss(params, s, clamp))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LossMeans::of(&losses))
}

pub fn train(
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with(train_set, val_set, config, init_params(config.seed), |_| {})
}

/// Mini-batch training with early stopping on the mean validation loss.
///
/// Per-sample gradients may be computed in parallel but are summed in batch
/// order, so results do not depend on the thread count.
pub fn train_with(
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    config: &TrainConfig,
    init: NetworkParams,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    let mut params = init;
    let mut adam = AdamState::for_params(&params, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = (params.clone(), 0, f64::INFINITY);
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut train_losses = Vec::with_capacity(train_set.len());
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| sample_gradient(&params, &train_set[i], config.bce_clamp))
                .collect::<Result<Vec<_>, _>>()?;
            let mut grads = params.zeros_like();
            for (loss, g) in &results {
                grads.add_scaled(g, 1.0 / batch.len() as f64);
                train_losses.push(*loss);
            }
            optimizer_step(&mut params, &grads, &mut adam, config.learning_rate)?;
        }
        let val = evaluate_loss(&params, val_set, config.bce_clamp)?;
        let record = EpochRecord {
            epoch,
            train: LossMeans::of(&train_losses),
            val,
        };
        history.push(record);
        on_epoch(&record);

        if val.total < best.2 {
            best = (params.clone(), epoch, val.total);
            stale = 0;
            if config.stop_below.is_some_and(|target| val.total < target) {
                break;
            }
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best_params: best.0,
        best_epoch: best.1,
        best_val_total: best.2,
        history,
    })
}

pub fn write_history(w: &mut impl Write, history: &[EpochRecord]) -> io::Result<()> {
    writeln!(
        w,
        "epoch,train_gamma,train_beta,train_total,val_gamma,val_beta,val_total"
    )?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.train.gamma,
            r.train.beta,
            r.train.total,
            r.val.gamma,
            r.val.beta,
            r.val.total
        )?;
    }
    Ok(())
}

pub fn save_history(path: &Path, history: &[EpochRecord]) -> io::Result<()> {
    let mut buf = Vec::new();
    write_history(&mut buf, history)?;
    std::fs::write(path, buf)
}
