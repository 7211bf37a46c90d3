//! Deterministic Adam minimization of the exact objective with
//! validation-based early stopping and best-checkpoint return.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Objective, ParamGrads, VaeParams, PARAM_BLOCK_NAMES};

/// Updates between validation evaluations.
pub const VALIDATION_INTERVAL: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchSize {
    Full,
    Minibatch(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_updates: usize,
    /// Early stopping after `patience_fraction · max_updates` updates without
    /// a validation improvement.
    pub patience_fraction: f64,
    pub batch_size: BatchSize,
    pub seed: u64,
    pub init_scale: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dec_var: f64,
    /// Start each scan point from the previous point's parameters.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            max_updates: 500_000,
            patience_fraction: 0.1,
            batch_size: BatchSize::Full,
            seed: 0,
            init_scale: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dec_var: 1.0,
            warm_start: false,
        }
    }
}

impl TrainConfig {
    /// Budget for desk-scale runs on synthetic data: 20k full-batch updates
    /// with a step size large enough to reach `O(10)` encoder weights.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            max_updates: 20_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.patience_fraction > 0.0 && self.patience_fraction <= 1.0) {
            return bad("patience_fraction must lie in (0, 1]");
        }
        if self.max_updates == 0 {
            return bad("max_updates must be at least 1");
        }
        if !(self.dec_var > 0.0 && self.dec_var.is_finite()) {
            return bad("dec_var must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam decay rates must lie in [0, 1)");
        }
        if self.batch_size == BatchSize::Minibatch(0) {
            return bad("batch size must be positive");
        }
        Ok(())
    }

    pub fn patience_updates(&self) -> usize {
        ((self.patience_fraction * self.max_updates as f64).ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub update: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// Best-validation checkpoint.
    pub params: VaeParams,
    pub history: Vec<HistoryEntry>,
    pub stopped_early: bool,
    pub updates_used: usize,
    pub best_val_loss: f64,
}

/// Small Gaussian encoder-mean and decoder weights, zero log-variance head
/// (σ² = 1), zero biases.
pub fn init_params(d: usize, m: usize, seed: u64, init_scale: f64, dec_var: f64) -> VaeParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut p = VaeParams::collapsed(Array1::zeros(d), m, dec_var);
    p.enc_mean = Array2::from_shape_fn((m, d), |_| init_scale * normal.sample(&mut rng));
    p.dec = Array2::from_shape_fn((d, m), |_| init_scale * normal.sample(&mut rng));
    p
}

/// Adam moment estimates over the flattened parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut VaeParams, grads: &ParamGrads, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let n = params.n_trainable();
    if state.first.len() != n || state.second.len() != n {
        return Err(Error::ShapeError(format!(
            "optimizer state has {} entries, model has {n}",
            state.first.len()
        )));
    }
    for (name, block) in PARAM_BLOCK_NAMES.iter().zip(grads.blocks()) {
        if block.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient((*name).into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let mut offset = 0;
    for (p_block, g_block) in params.blocks_mut().into_iter().zip(grads.blocks()) {
        if p_block.len() != g_block.len() {
            return Err(Error::ShapeError("gradient layout differs from parameters".into()));
        }
        for (i, (p, &g)) in p_block.iter_mut().zip(g_block).enumerate() {
            let j = offset + i;
            state.first[j] = b1 * state.first[j] + (1.0 - b1) * g;
            state.second[j] = b2 * state.second[j] + (1.0 - b2) * g * g;
            let m_hat = state.first[j] / correction1;
            let v_hat = state.second[j] / correction2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
        offset += p_block.len();
    }
    Ok(())
}

/// Trains from a fresh initialization (see [`init_params`]).
pub fn train_to_equilibrium(train: &Dataset, val: &Dataset, beta: f64, latent_dim: usize, cfg: &TrainConfig) -> Result<TrainResult> {
    let init = init_params(train.n_features(), latent_dim, cfg.seed, cfg.init_scale, cfg.dec_var);
    train_from(init, train, val, beta, cfg)
}

/// Minimizes the exact loss from `init` until the update budget is spent or
/// validation stops improving; returns the best-validation checkpoint.
pub fn train_from(init: VaeParams, train: &Dataset, val: &Dataset, beta: f64, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if train.n_features() != val.n_features() || init.input_dim() != train.n_features() {
        return Err(Error::ShapeError(format!(
            "train has {} features, validation {}, model {}",
            train.n_features(),
            val.n_features(),
            init.input_dim()
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!("beta must be non-negative, got {beta}")));
    }
    let mut params = init;
    params.dec_var = cfg.dec_var;
    let train_obj = Objective::new(train);
    let val_obj = Objective::new(val);
    let mut state = AdamState::new(params.n_trainable());
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let patience = cfg.patience_updates();
    let abort = |update: usize, e: Error| Error::TrainingAborted {
        update,
        source: Box::new(e),
    };

    let mut history = Vec::new();
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut last_improvement = 0;
    let mut stopped_early = false;
    let mut updates_used = 0;

    for update in 0..cfg.max_updates {
        let (train_loss, grads) = match cfg.batch_size {
            BatchSize::Full => train_obj.loss_and_gradients(&params, beta),
            BatchSize::Minibatch(size) => {
                let n = train.n_samples();
                let mut idx = sample(&mut batch_rng, n, size.min(n).max(2)).into_vec();
                idx.sort_unstable();
                Objective::new(&train.select(&idx)?).loss_and_gradients(&params, beta)
            }
        }
        .map_err(|e| abort(update, e))?;

        if update % VALIDATION_INTERVAL == 0 {
            let val_loss = val_obj.loss(&params, beta).map_err(|e| abort(update, e))?.total;
            history.push(HistoryEntry {
                update,
                train_loss: train_loss.total,
                val_loss,
            });
            if val_loss < best_val {
                best_val = val_loss;
                best = params.clone();
                last_improvement = update;
            } else if update - last_improvement >= patience {
                stopped_early = true;
                break;
            }
        }
        adam_step(&mut params, &grads, &mut state, cfg).map_err(|e| abort(update, e))?;
        updates_used = update + 1;
    }

    if !stopped_early {
        let train_loss = train_obj.loss(&params, beta).map_err(|e| abort(updates_used, e))?.total;
        let val_loss = val_obj.loss(&params, beta).map_err(|e| abort(updates_used, e))?.total;
        history.push(HistoryEntry {
            update: updates_used,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = params;
        }
    }

    Ok(TrainResult {
        params: best,
        history,
        stopped_early,
        updates_used,
        best_val_loss: best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian, random_split};

    fn train_val(spectrum: &[f64], n_train: usize, n_val: usize) -> (Dataset, Dataset) {
        let n = n_train + 2 * n_val;
        let ds = generate_gaussian(spectrum, n, 1).unwrap();
        let split = random_split(n, 0, n_train as f64 / n as f64, n_val as f64 / n as f64).unwrap();
        let (train, val, _) = split.apply(&ds).unwrap();
        (train, val)
    }
    use crate::model::{loss_gradients, posterior_observables};

    #[test]
    fn zero_init_is_collapsed_point() {
        let p = init_params(3, 2, 1, 0.0, 1.0);
        assert_eq!(p, VaeParams::collapsed(Array1::zeros(3), 2, 1.0));
    }

    #[test]
    fn init_is_deterministic_and_small() {
        assert_eq!(init_params(8, 16, 4, 1e-2, 1.0), init_params(8, 16, 4, 1e-2, 1.0));
        for seed in 0..50 {
            let p = init_params(8, 16, seed, 1e-2, 1.0);
            let max = p.blocks().iter().flat_map(|b| b.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(max < 6e-2, "seed {seed}: {max}");
        }
    }

    fn constant_grads(p: &VaeParams, g: f64) -> ParamGrads {
        ParamGrads {
            enc_mean: p.enc_mean.mapv(|_| g),
            enc_mean_bias: p.enc_mean_bias.mapv(|_| g),
            enc_logvar: p.enc_logvar.mapv(|_| g),
            enc_logvar_bias: p.enc_logvar_bias.mapv(|_| g),
            dec: p.dec.mapv(|_| g),
            dec_bias: p.dec_bias.mapv(|_| g),
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        for g in [0.5, -3.0] {
            let p0 = init_params(2, 2, 0, 0.1, 1.0);
            let mut p = p0.clone();
            let mut state = AdamState::new(p.n_trainable());
            adam_step(&mut p, &constant_grads(&p0, g), &mut state, &cfg).unwrap();
            for (a, b) in p.blocks().iter().zip(p0.blocks()) {
                for (x, y) in a.iter().zip(b) {
                    let delta = x - y;
                    assert!((delta + cfg.learning_rate * g.signum()).abs() < 1e-6, "{delta}");
                }
            }
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let cfg = TrainConfig::default();
        let p0 = init_params(3, 2, 0, 0.1, 1.0);
        let mut p = p0.clone();
        let mut state = AdamState::new(p.n_trainable());
        for _ in 0..100 {
            adam_step(&mut p, &constant_grads(&p0, 0.0), &mut state, &cfg).unwrap();
        }
        assert_eq!(p, p0);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let cfg = TrainConfig::default();
        let mut p = init_params(2, 1, 0, 0.1, 1.0);
        let mut g = constant_grads(&p, 1.0);
        g.dec[[1, 0]] = f64::NAN;
        let mut state = AdamState::new(p.n_trainable());
        assert!(matches!(adam_step(&mut p, &g, &mut state, &cfg), Err(Error::NonFiniteGradient(_))));
    }

    #[test]
    fn invalid_config() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            patience_fraction: 1.5,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    fn one_mode_cfg() -> TrainConfig {
        TrainConfig {
            max_updates: 20_000,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn one_mode_active_and_collapsed() {
        let (train, val) = train_val(&[1.0], 2000, 500);
        let lambda = crate::spectra::pca_spectrum(&train).unwrap().eigenvalues[0];
        // β = τ λ / σ²_dec
        let active = train_to_equilibrium(&train, &val, 0.5 * lambda, 1, &one_mode_cfg()).unwrap();
        let m2 = posterior_observables(&active.params, &train).unwrap()[0].signal_fraction;
        assert!((m2 - 0.5).abs() < 0.02, "M² = {m2}");
        let collapsed = train_to_equilibrium(&train, &val, 2.0 * lambda, 1, &one_mode_cfg()).unwrap();
        let m2 = posterior_observables(&collapsed.params, &train).unwrap()[0].signal_fraction;
        assert!(m2 <= 0.01, "M² = {m2}");
    }

    #[test]
    fn training_is_deterministic_and_returns_best_checkpoint() {
        let (train, val) = train_val(&[1.0, 0.3], 300, 100);
        let cfg = TrainConfig {
            max_updates: 500,
            ..TrainConfig::desk()
        };
        let a = train_to_equilibrium(&train, &val, 0.2, 3, &cfg).unwrap();
        let b = train_to_equilibrium(&train, &val, 0.2, 3, &cfg).unwrap();
        assert_eq!(a, b);
        let min_recorded = a.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        let returned = Objective::new(&val).loss(&a.params, 0.2).unwrap().total;
        assert!(returned <= min_recorded);
        assert_eq!(returned, a.best_val_loss);
    }

    #[test]
    fn early_stopping_when_validation_stalls() {
        let (train, val) = train_val(&[1.0], 200, 100);
        // far above threshold: the collapsed point is reached quickly and
        // validation stops improving
        let cfg = TrainConfig {
            max_updates: 100_000,
            patience_fraction: 0.01,
            ..TrainConfig::desk()
        };
        let r = train_to_equilibrium(&train, &val, 50.0, 1, &cfg).unwrap();
        assert!(r.stopped_early);
        assert!(r.updates_used < cfg.max_updates);
    }

    #[test]
    fn minibatch_mode_runs() {
        let (train, val) = train_val(&[1.0, 0.5], 400, 100);
        let cfg = TrainConfig {
            max_updates: 200,
            batch_size: BatchSize::Minibatch(64),
            ..TrainConfig::desk()
        };
        let r = train_to_equilibrium(&train, &val, 0.1, 2, &cfg).unwrap();
        assert!(r.best_val_loss.is_finite());
    }

    #[test]
    fn converged_gradient_is_small() {
        let (train, val) = train_val(&[0.5, 0.25, 0.125, 0.125], 4000, 4000);
        let v = train.total_variance();
        let r = train_to_equilibrium(&train, &val, 0.2 * v, 8, &TrainConfig::desk()).unwrap();
        let loss = Objective::new(&train).loss(&r.params, 0.2 * v).unwrap().total;
        let g = loss_gradients(&r.params, &train, 0.2 * v).unwrap().norm();
        assert!(g <= 1e-3 * (1.0 + loss.abs()), "grad norm {g}, loss {loss}");
        let active = posterior_observables(&r.params, &train)
            .unwrap()
            .iter()
            .filter(|o| o.signal_fraction > 0.1)
            .count();
        assert_eq!(active, 2);
    }
}
