//! SGD-with-momentum training with per-step metric hooks.
//!
//! The schedule is a linear warmup to `peak_lr` followed by cosine decay to
//! zero, heavy-ball updates `v ← momentum·v − lr·g; θ ← θ + v`, and
//! epoch-wise reshuffled minibatches drawn from a named RNG stream, so a
//! run is bit-reproducible from its config.

use ndarray::Array1;

use crate::analysis::effective_rank;
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngState};
use crate::model::{forward, init_lazy, init_rich, loss_and_grad, Mlp, Regime};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fraction of steps spent on the linear warmup.
    pub warmup_frac: f64,
    pub seed: u64,
    /// Metric record cadence in steps.
    pub eval_every: usize,
    /// Compute the effective rank of `W` at each record (one small SVD).
    pub track_effrank: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 128,
            peak_lr: 0.5,
            momentum: 0.9,
            weight_decay: 0.0,
            warmup_frac: 0.05,
            seed: 0,
            eval_every: 100,
            track_effrank: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.peak_lr <= 0.0 {
            return Err(Error::InvalidInput(format!("peak_lr = {} must be > 0", self.peak_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!(
                "momentum = {} must be in [0, 1)",
                self.momentum
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) || self.warmup_frac == 0.0 {
            return Err(Error::InvalidInput(format!(
                "warmup_frac = {} must be in (0, 1)",
                self.warmup_frac
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidInput("batch_size and eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Hyperparameter grid presets. The full-length presets run 20 000 steps;
/// the `*_desk` variants shorten to 4 000 steps for interactive use and CI.
pub mod presets {
    use super::TrainConfig;
    use crate::model::Regime;

    /// Grid defaults per regime: rich peaks at lr 0.5, lazy at 0.05; batch
    /// 128; no weight decay.
    pub fn full(regime: Regime, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: 20_000,
            peak_lr: match regime {
                Regime::Rich => 0.5,
                Regime::Lazy => 0.05,
            },
            seed,
            ..TrainConfig::default()
        }
    }

    /// Desk-scale variant: 4 000 steps, same grid point.
    pub fn desk(regime: Regime, seed: u64) -> TrainConfig {
        TrainConfig { steps: 4_000, ..full(regime, seed) }
    }

    /// The full tuning grid as (name, config) pairs.
    pub fn grid(regime: Regime, seed: u64) -> Vec<(String, TrainConfig)> {
        let lrs: &[f64] = match regime {
            Regime::Rich => &[0.5, 1.0],
            Regime::Lazy => &[0.01, 0.05],
        };
        let mut out = Vec::new();
        for &peak_lr in lrs {
            for &batch_size in &[128usize, 256] {
                for &weight_decay in &[0.0, 1e-4] {
                    let name = format!("{regime}-lr{peak_lr}-b{batch_size}-wd{weight_decay}");
                    out.push((
                        name,
                        TrainConfig {
                            peak_lr,
                            batch_size,
                            weight_decay,
                            seed,
                            ..TrainConfig::default()
                        },
                    ));
                }
            }
        }
        out
    }
}

/// One metric record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    /// Minibatch loss at this step (before the update).
    pub train_loss: f64,
    /// Minibatch accuracy at this step.
    pub train_acc: f64,
    pub val_acc: f64,
    /// Effective rank of `W`, or NaN-free fallback 0 when tracking is off.
    pub effrank_w: f64,
    pub lr: f64,
}

/// Time series of metric records, strictly increasing in `step`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// CSV rendering: `step,train_loss,train_acc,val_acc,effrank_W,lr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,train_acc,val_acc,effrank_W,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                r.step, r.train_loss, r.train_acc, r.val_acc, r.effrank_w, r.lr
            ));
        }
        out
    }
}

/// Learning rate at `step`: linear warmup from 0 over
/// `warmup_frac · steps` steps, then cosine decay to 0 at the final step.
pub fn lr_at(config: &TrainConfig, step: usize) -> f64 {
    let warmup = ((config.warmup_frac * config.steps as f64).floor() as usize).max(1);
    if step < warmup {
        return config.peak_lr * step as f64 / warmup as f64;
    }
    let last = config.steps.saturating_sub(1);
    if last <= warmup {
        return config.peak_lr;
    }
    let t = (step - warmup) as f64 / (last - warmup) as f64;
    config.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Fraction of rows where the argmax prediction matches the label.
pub fn evaluate(net: &Mlp, data: &LabeledDataset) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let preds = crate::model::predict(net, &data.x)?;
    let correct = preds.iter().zip(data.y.iter()).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / data.n() as f64)
}

fn batch_accuracy(logits: &Matrix, y: &[usize]) -> f64 {
    let preds = crate::model::argmax_rows(logits);
    preds.iter().zip(y.iter()).filter(|(p, y)| p == y).count() as f64 / y.len() as f64
}

/// Trains `net` on `data`, logging every `eval_every` steps. Validation
/// accuracy comes from `val` when given, else from the training set.
pub fn train(
    net: Mlp,
    data: &LabeledDataset,
    val: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<(Mlp, TrainLog)> {
    config.validate()?;
    if net.d() != data.d() {
        return Err(Error::Shape(format!(
            "network expects d={}, dataset has d={}",
            net.d(),
            data.d()
        )));
    }
    if net.c() != data.num_classes {
        return Err(Error::Shape(format!(
            "network has {} outputs, dataset {} classes",
            net.c(),
            data.num_classes
        )));
    }
    let mut net = net;
    let mut log = TrainLog::default();
    if config.steps == 0 {
        return Ok((net, log));
    }

    let mut shuffle_rng = RngState::new(config.seed).stream("train.shuffle");
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n; // force a shuffle on first use

    let mut vw = Matrix::zeros(net.w.raw_dim());
    let mut vb = Array1::zeros(net.b.raw_dim());
    let mut va = Matrix::zeros(net.a.raw_dim());
    let mut last_finite = f64::NAN;

    for step in 0..config.steps {
        if cursor >= n {
            for i in (1..n).rev() {
                let j = rand::Rng::gen_range(&mut shuffle_rng, 0..=i);
                order.swap(i, j);
            }
            cursor = 0;
        }
        let take = config.batch_size.min(n - cursor);
        let idx = &order[cursor..cursor + take];
        cursor += take;

        let xb = data.x.select(ndarray::Axis(0), idx);
        let yb: Vec<usize> = idx.iter().map(|&i| data.y[i]).collect();

        let lr = lr_at(config, step);
        let (loss, grads) = loss_and_grad(&net, &xb, &yb, config.weight_decay)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, last_loss: last_finite });
        }
        last_finite = loss;

        if step % config.eval_every == 0 || step + 1 == config.steps {
            let logits = forward(&net, &xb)?;
            let val_acc = match val {
                Some(v) => evaluate(&net, v)?,
                None => evaluate(&net, data)?,
            };
            let effrank_w = if config.track_effrank {
                effective_rank(&net.w).unwrap_or(0.0)
            } else {
                0.0
            };
            log.records.push(TrainRecord {
                step,
                train_loss: loss,
                train_acc: batch_accuracy(&logits, &yb),
                val_acc,
                effrank_w,
                lr,
            });
        }

        vw *= config.momentum;
        vw.scaled_add(-lr, &grads.dw);
        net.w += &vw;
        vb *= config.momentum;
        vb.scaled_add(-lr, &grads.db);
        net.b += &vb;
        va *= config.momentum;
        va.scaled_add(-lr, &grads.da);
        net.a += &va;

        if net.w.iter().any(|v| !v.is_finite()) || net.a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step, last_loss: last_finite });
        }
    }
    Ok((net, log))
}

/// Fresh initialization for `regime` followed by [`train`]; the init draws
/// from the `"init"` stream of the config seed.
pub fn init_and_train(
    regime: Regime,
    m: usize,
    data: &LabeledDataset,
    val: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<(Mlp, TrainLog)> {
    let mut init_rng = RngState::new(config.seed).stream("init");
    let net = match regime {
        Regime::Rich => init_rich(m, data.d(), data.num_classes, &mut init_rng)?,
        Regime::Lazy => init_lazy(m, data.d(), data.num_classes, &mut init_rng)?,
    };
    train(net, data, val, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_ifm, IfmSpec};
    use crate::linalg::RngState;
    use approx::assert_relative_eq;

    fn quick_config(steps: usize) -> TrainConfig {
        TrainConfig { steps, eval_every: 50, track_effrank: false, ..TrainConfig::default() }
    }

    #[test]
    fn lr_schedule_shape() {
        let config = TrainConfig { steps: 1000, peak_lr: 0.4, warmup_frac: 0.1, ..Default::default() };
        assert_eq!(lr_at(&config, 0), 0.0);
        // End of warmup hits the peak exactly.
        assert_relative_eq!(lr_at(&config, 100), 0.4, max_relative = 1e-15);
        // Monotone ramp during warmup.
        assert!(lr_at(&config, 50) < lr_at(&config, 99));
        // Final step decays to ~0.
        assert!(lr_at(&config, 999) < 1e-3 * config.peak_lr);
        // Direct formula check mid-decay.
        let t = (550.0 - 100.0) / (999.0 - 100.0);
        assert_relative_eq!(
            lr_at(&config, 550),
            0.4 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()),
            max_relative = 1e-12
        );
    }

    #[test]
    fn evaluate_counts_matches() {
        use ndarray::array;
        let net = Mlp {
            w: array![[1.0, 0.0], [-1.0, 0.0]],
            b: ndarray::Array1::zeros(2),
            a: array![[-1.0, 1.0], [1.0, -1.0]],
            out_scale: 1.0,
            regime: Regime::Rich,
        };
        // Predicts class 1 when x0 > 0. Build a 10-row fixture with 3
        // deliberate label mismatches: rows 0, 4, 7.
        let x = array![
            [1.0, 0.3],
            [2.0, -0.5],
            [-1.0, 0.1],
            [-2.0, 0.0],
            [0.5, 1.0],
            [3.0, 0.2],
            [-0.5, 0.4],
            [-1.5, -0.2],
            [2.5, 0.6],
            [-3.0, 0.9]
        ];
        let y = vec![0, 1, 0, 0, 0, 1, 0, 1, 1, 0];
        let ds = crate::datasets::LabeledDataset {
            x,
            y,
            num_classes: 2,
            meta: crate::datasets::FeatureMeta {
                linear_coord: Some(0),
                margin_gamma: Some(1.0),
                coord_roles: vec![
                    crate::datasets::CoordRole::Linear,
                    crate::datasets::CoordRole::Noise,
                ],
            },
        };
        assert_relative_eq!(evaluate(&net, &ds).unwrap(), 0.7);
    }

    #[test]
    fn zero_steps_returns_net_unchanged() {
        let spec = IfmSpec {
            d: 5,
            gamma: 1.0,
            n_train: 32,
            n_val: 8,
            n_test: 8,
            num_nonlinear: 2,
            num_noise: 2,
            seed: 3,
        };
        let data = gen_ifm(&spec).unwrap().train;
        let net = crate::model::init_rich(10, 5, 2, &mut RngState::new(1).stream("init")).unwrap();
        let config = TrainConfig { steps: 0, ..Default::default() };
        let (out, log) = train(net.clone(), &data, None, &config).unwrap();
        assert_eq!(out, net);
        assert!(log.records.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let spec = IfmSpec {
            d: 6,
            gamma: 1.5,
            n_train: 64,
            n_val: 16,
            n_test: 16,
            num_nonlinear: 3,
            num_noise: 2,
            seed: 8,
        };
        let splits = gen_ifm(&spec).unwrap();
        let config = quick_config(120);
        let run = || {
            init_and_train(Regime::Rich, 16, &splits.train, Some(&splits.val), &config).unwrap()
        };
        let (n1, l1) = run();
        let (n2, l2) = run();
        assert_eq!(n1, n2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn separable_data_trains_to_high_accuracy() {
        let spec = IfmSpec {
            d: 10,
            gamma: 1.5,
            n_train: 256,
            n_val: 64,
            n_test: 64,
            num_nonlinear: 5,
            num_noise: 4,
            seed: 21,
        };
        let splits = gen_ifm(&spec).unwrap();
        for regime in [Regime::Rich, Regime::Lazy] {
            let config = TrainConfig {
                steps: 600,
                seed: 1,
                eval_every: 1,
                peak_lr: presets::desk(regime, 1).peak_lr,
                track_effrank: false,
                ..TrainConfig::default()
            };
            let (net, log) =
                init_and_train(regime, 32, &splits.train, Some(&splits.val), &config).unwrap();
            if regime == Regime::Rich {
                let acc = evaluate(&net, &splits.train).unwrap();
                assert!(acc >= 0.99, "train accuracy {acc}");
            }
            // Window-100 smoothed minibatch loss decreases over the run.
            let smooth = |window: &[TrainRecord]| {
                window.iter().map(|r| r.train_loss).sum::<f64>() / window.len() as f64
            };
            let head = smooth(&log.records[..100]);
            let tail = smooth(&log.records[log.records.len() - 100..]);
            assert!(tail < head, "{regime}: smoothed loss {head} -> {tail}");
        }
    }

    #[test]
    fn log_steps_strictly_increase() {
        let spec = IfmSpec {
            d: 4,
            gamma: 1.0,
            n_train: 40,
            n_val: 8,
            n_test: 8,
            num_nonlinear: 2,
            num_noise: 1,
            seed: 5,
        };
        let data = gen_ifm(&spec).unwrap().train;
        let config = TrainConfig { steps: 130, eval_every: 25, ..Default::default() };
        let (_, log) = init_and_train(Regime::Lazy, 8, &data, None, &config).unwrap();
        for pair in log.records.windows(2) {
            assert!(pair[1].step > pair[0].step);
        }
        assert_eq!(log.records.last().unwrap().step, 129);
        assert!(log.records.iter().all(|r| r.train_loss.is_finite() && r.val_acc.is_finite()));
    }
}
