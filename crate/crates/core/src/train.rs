//! Adam optimizer and the mini-batch training loop.

use crate::data::{normalize, Dataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, ModelParams};
use crate::rng::{derive_seed, RngState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            epochs: 10,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps_hat > 0.0
            && self.epochs >= 1
            && self.batch_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }
}

/// First and second moment estimates, one tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Returns the new parameters and state.
pub fn adam_step(
    params: &[Tensor],
    grads: &[Tensor],
    state: &AdamState,
    cfg: &TrainConfig,
) -> Result<(Vec<Tensor>, AdamState)> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Shape {
            expected: vec![params.len()],
            actual: vec![grads.len()],
        });
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        for other in [g, m, v] {
            if other.shape() != p.shape() {
                return Err(Error::shape(p.shape(), other.shape()));
            }
        }
    }

    let t = state.t + 1;
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    let mut new_params = params.to_vec();
    let mut new_m = state.m.clone();
    let mut new_v = state.v.clone();
    for (i, g) in grads.iter().enumerate() {
        let p = new_params[i].data_mut();
        let m = new_m[i].data_mut();
        let v = new_v[i].data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps_hat);
        }
    }
    Ok((
        new_params,
        AdamState {
            m: new_m,
            v: new_v,
            t,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the predictions made during the epoch, before each update.
    pub train_accuracy_percent: f64,
}

/// Mean loss and parameter gradients over one batch of prepared examples.
pub fn batch_gradients(
    model: &ModelParams,
    inputs: &[(Tensor, usize)],
) -> Result<(f64, usize, Vec<Tensor>)> {
    let mut sum: Option<Vec<Tensor>> = None;
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, y) in inputs {
        let (l, logits, grads) = model.loss_and_param_grads(x, *y)?;
        loss += l;
        if argmax(logits.data()) == *y {
            correct += 1;
        }
        sum = Some(match sum {
            None => grads,
            Some(mut acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                        *av += gv;
                    }
                }
                acc
            }
        });
    }
    let n = inputs.len() as f64;
    let mean = sum
        .expect("non-empty batch")
        .into_iter()
        .map(|t| t.scale(1.0 / n))
        .collect();
    Ok((loss / n, correct, mean))
}

/// Trains `model` for `cfg.epochs` passes over `dataset`, reshuffling each
/// epoch from `cfg.seed`. The last partial batch is kept.
pub fn train(
    model: &ModelParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    train_with_progress(model, dataset, cfg, |_| {})
}

pub fn train_with_progress(
    model: &ModelParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams, Vec<EpochLog>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let prepared = prepare(model, dataset)?;

    let mut model = model.clone();
    let mut state = AdamState::new(model.params());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = RngState::new(derive_seed(cfg.seed, &[epoch as u64])).permutation(prepared.len());
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Tensor, usize)> = chunk.iter().map(|&i| prepared[i].clone()).collect();
            let (loss, batch_correct, grads) = batch_gradients(&model, &batch)?;
            loss_sum += loss * batch.len() as f64;
            correct += batch_correct;
            let (params, next) = adam_step(model.params(), &grads, &state, cfg)?;
            model = model.with_params(params)?;
            state = next;
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / prepared.len() as f64,
            train_accuracy_percent: 100.0 * correct as f64 / prepared.len() as f64,
        };
        log::info!(
            "epoch {}: loss {:.4}, train accuracy {:.2}%",
            entry.epoch,
            entry.mean_loss,
            entry.train_accuracy_percent
        );
        on_epoch(&entry);
        log.push(entry);
    }
    Ok((model, log))
}

fn prepare(model: &ModelParams, dataset: &Dataset) -> Result<Vec<(Tensor, usize)>> {
    dataset
        .examples()
        .iter()
        .map(|(img, label)| {
            if *label >= model.num_classes() {
                return Err(Error::Label {
                    label: *label,
                    num_classes: model.num_classes(),
                });
            }
            Ok((normalize(img), *label))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_signs;
    use crate::nn::build_model_with_filters;

    #[test]
    fn single_scalar_step() {
        let p = [Tensor::from_vec(vec![1.0])];
        let g = [Tensor::from_vec(vec![0.5])];
        let cfg = TrainConfig::default();
        let (p2, st) = adam_step(&p, &g, &AdamState::new(&p), &cfg).unwrap();
        // m_hat = g and v_hat = g^2 on the first step.
        let want = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8);
        assert_eq!(p2[0].data()[0], want);
        assert!((p2[0].data()[0] - 0.999).abs() < 1e-6);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut rng = RngState::new(1);
        let p = vec![Tensor::normal(&[3, 4], 0.0, 1.0, &mut rng), Tensor::normal(&[4], 0.0, 1.0, &mut rng)];
        let g: Vec<Tensor> = p.iter().map(|t| Tensor::zeros(t.shape())).collect();
        let cfg = TrainConfig::default();
        let (p2, st) = adam_step(&p, &g, &AdamState::new(&p), &cfg).unwrap();
        assert_eq!(p2, p);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = [Tensor::zeros(&[2])];
        let g = [Tensor::zeros(&[3])];
        let st = AdamState::new(&p);
        assert!(matches!(
            adam_step(&p, &g, &st, &TrainConfig::default()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn empty_dataset_and_bad_labels() {
        let model = build_model_with_filters(16, 3, [2, 2, 2], 4, &mut RngState::new(0)).unwrap();
        let empty = Dataset::new(Vec::new(), vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert!(matches!(train(&model, &empty, &TrainConfig::default()), Err(Error::Data(_))));

        let ds = synth_signs(4, 2, 16, 1).unwrap();
        assert!(matches!(
            train(&model, &ds, &TrainConfig::default()),
            Err(Error::Label { .. })
        ));
    }

    #[test]
    fn overfits_a_single_example() {
        let ds = synth_signs(2, 1, 16, 3).unwrap();
        let one = Dataset::new(vec![ds.examples()[0].clone()], ds.class_names().to_vec()).unwrap();
        let model = build_model_with_filters(16, 2, [4, 4, 4], 8, &mut RngState::new(2)).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            ..Default::default()
        };
        let (_, log) = train(&model, &one, &cfg).unwrap();
        assert!(log.last().unwrap().mean_loss < 0.01, "{:?}", log.last());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = synth_signs(3, 4, 16, 5).unwrap();
        let model = build_model_with_filters(16, 3, [2, 3, 4], 6, &mut RngState::new(6)).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 5,
            ..Default::default()
        };
        let (a, la) = train(&model, &ds, &cfg).unwrap();
        let (b, lb) = train(&model, &ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn fixed_batch_loss_decreases() {
        let ds = synth_signs(4, 8, 32, 9).unwrap();
        let model = crate::nn::build_model(32, 4, 256, &mut RngState::new(10)).unwrap();
        let batch: Vec<(Tensor, usize)> = ds.examples().iter().map(|(i, l)| (normalize(i), *l)).collect();
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(model.params());
        let mut model = model;
        let mut losses = Vec::new();
        for _ in 0..6 {
            let (loss, _, grads) = batch_gradients(&model, &batch).unwrap();
            losses.push(loss);
            let (p, s) = adam_step(model.params(), &grads, &state, &cfg).unwrap();
            model = model.with_params(p).unwrap();
            state = s;
        }
        let non_decreasing = losses.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(non_decreasing <= 1, "{losses:?}");
    }
}
