//! Minibatch training on `L_task + α_align L_align + α_KL L_KL`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{aggregate_losses_var, EvalSet};

use super::adam::Adam;
use super::layers::NORM_MOMENTUM;
use super::model::{Model, ModelConfig};
use super::tape::{Mat, Tape};

/// Inputs `n × d_in` and targets `n × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Mat,
    pub y: Mat,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx.iter()),
            y: self.y.select_rows(idx.iter()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 5e-5,
            batch: 1024,
            seed: 0,
        }
    }
}

/// Mean losses over the batches of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub task: f64,
    pub align: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
}

pub fn mse(pred: &Mat, target: &Mat) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    (pred - target).map(|v| v * v).mean()
}

/// Test-time mean squared error.
pub fn evaluate_mse(model: &Model, data: &Dataset) -> Result<f64> {
    Ok(mse(&model.predict(&data.x)?, &data.y))
}

pub fn train(config: &ModelConfig, data: &Dataset, opts: &TrainOptions) -> Result<TrainOutcome> {
    let model = Model::new(config.clone(), opts.seed)?;
    train_model(model, data, opts)
}

/// Continues training an existing model.
pub fn train_model(mut model: Model, data: &Dataset, opts: &TrainOptions) -> Result<TrainOutcome> {
    if opts.batch == 0 || !(opts.lr > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if data.y.ncols() != model.config.outputs {
        return Err(Error::Shape {
            expected: format!("n x {}", model.config.outputs),
            got: format!("{} x {}", data.y.nrows(), data.y.ncols()),
        });
    }
    let config = model.config.clone();
    let pairs = config.resolved_kl_pairs();
    let evals: Vec<(String, EvalSet)> = config
        .trained_ids()
        .into_iter()
        .map(|id| {
            let plan = model.likelihood(&id).map(|p| p.plan.clone())?;
            Ok((id, EvalSet::new(&plan, 0)))
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5EED_0F_BA7C);
    let mut opt = Adam::new(opts.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut n_batches = 0;
        for chunk in order.chunks(opts.batch) {
            let batch = data.rows(chunk);
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &batch.x, true)?;
            let target = tape.constant(batch.y.clone());
            let diff = tape.sub(fwd.output, target);
            let sq = tape.square(diff);
            let task = tape.mean(sq);
            let mut total = task;
            let (mut align_v, mut kl_v) = (0.0, 0.0);
            if !fwd.norms.is_empty() {
                let entries: Vec<_> = fwd
                    .norms
                    .iter()
                    .map(|(id, vars)| {
                        let eval = &evals.iter().find(|(e, _)| e == id).expect("eval set per id").1;
                        (id.clone(), *vars, eval)
                    })
                    .collect();
                let (align, kl) = aggregate_losses_var(&mut tape, &entries, &pairs)?;
                align_v = tape.scalar(align);
                kl_v = tape.scalar(kl);
                let a = tape.scale(align, config.alpha_align);
                let k = tape.scale(kl, config.alpha_kl);
                total = tape.add(total, a);
                total = tape.add(total, k);
            }
            let task_v = tape.scalar(task);
            let total_v = tape.scalar(total);
            if !total_v.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("task {task_v}, align {align_v}, kl {kl_v}"),
                });
            }
            let grads = tape.backward(total);
            let g: Vec<Vec<f64>> = fwd
                .params
                .iter()
                .map(|v| grads.of(*v, &tape).as_slice().to_vec())
                .collect();
            if g.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            opt.step(&mut model.params_mut(), &g);
            for (s, ms) in model.state.iter_mut().zip(&fwd.batch_ms) {
                for (r, m) in s.running_ms.iter_mut().zip(ms) {
                    *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * m;
                }
            }
            sums[0] += task_v;
            sums[1] += align_v;
            sums[2] += kl_v;
            sums[3] += total_v;
            n_batches += 1;
        }
        let n = n_batches as f64;
        history.push(EpochStats {
            epoch,
            task: sums[0] / n,
            align: sums[1] / n,
            kl: sums[2] / n,
            total: sums[3] / n,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Per-epoch history as CSV.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,task,align,kl,total\n");
    for h in history {
        out.push_str(&format!("{},{},{},{},{}\n", h.epoch, h.task, h.align, h.kl, h.total));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::Group;
    use crate::kernelproj::Mode;
    use crate::nn::model::Nonlinearity;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = Mat::from_fn(n, 1, |r, _| x[(r, 1)] / x.row(r).norm().max(1e-9));
        Dataset { x, y }
    }

    fn small(mode: Mode) -> ModelConfig {
        let mut c = ModelConfig::vectors(Group::o2(), mode, Nonlinearity::Gated, 1);
        c.multiplicity = 2;
        c
    }

    #[test]
    fn equivariant_mode_leaves_density_untouched() {
        let mut cfg = small(Mode::Equivariant);
        cfg.alpha_align = 0.0;
        cfg.alpha_kl = 0.0;
        let opts = TrainOptions {
            epochs: 3,
            lr: 1e-2,
            batch: 32,
            seed: 1,
        };
        let out = train(&cfg, &toy(64, 0), &opts).unwrap();
        assert!(out.model.likelihoods.iter().all(|l| l.logits.values.iter().all(|v| *v == 0.0)));
        assert!(out.history.iter().all(|h| h.align == 0.0 && h.kl == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let opts = TrainOptions {
            epochs: 20,
            lr: 1e-2,
            batch: 64,
            seed: 7,
        };
        let data = toy(128, 1);
        let a = train(&small(Mode::Probabilistic), &data, &opts).unwrap();
        let b = train(&small(Mode::Probabilistic), &data, &opts).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.state, b.model.state);
        assert!(a.history.last().unwrap().task < a.history[0].task);
    }

    #[test]
    fn divergence_is_reported() {
        let opts = TrainOptions {
            epochs: 1,
            lr: 1e-2,
            batch: 8,
            seed: 0,
        };
        let mut data = toy(8, 2);
        data.y[(0, 0)] = f64::NAN;
        let err = train(&small(Mode::Equivariant), &data, &opts).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, .. }));
    }
}
