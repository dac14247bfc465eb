//! Mini-batch SGD with Nesterov momentum and L2 regularization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{gemm, Op};
use super::model::{masked_softmax, Classifier, MlpArchitecture};
use crate::error::{contract, Error, Result};
use crate::types::{ExpertiseDomain, LabeledSample};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            l2_lambda: 1e-4,
            epochs: 10,
            batch_size: 32,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::InvalidConfig("l2_lambda must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..self.clone()
        }
    }
}

/// Trains a classifier restricted to `mask` on `dataset`.
///
/// The parameters are drawn from a ChaCha8 stream seeded with
/// `cfg.rng_seed`; the same stream then drives the per-epoch shuffles, so
/// the result is a pure function of the inputs.
pub fn train(
    dataset: &[LabeledSample],
    arch: &MlpArchitecture,
    mask: &ExpertiseDomain,
    cfg: &TrainConfig,
) -> Result<Classifier> {
    arch.validate()?;
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(contract("training set is empty"));
    }
    for (i, s) in dataset.iter().enumerate() {
        if s.features.len() != arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: arch.input_dim,
                got: s.features.len(),
            });
        }
        if !mask.contains(s.label) {
            return Err(contract(format!(
                "sample {i} has label {} outside the class mask {mask}",
                s.label
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut model = Classifier::initialize(arch, mask.clone(), &mut rng)?;
    let mut trainer = Trainer::new(&model, cfg.batch_size);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            trainer.step(&mut model, dataset, batch, cfg);
        }
    }
    Ok(model)
}

/// Reusable buffers for batched forward/backward passes.
struct Trainer {
    /// Layer inputs; `inputs[0]` is the feature batch.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    grad_w: Vec<Vec<f64>>,
    grad_b: Vec<Vec<f64>>,
    vel_w: Vec<Vec<f64>>,
    vel_b: Vec<Vec<f64>>,
    mask_flags: Vec<bool>,
}

impl Trainer {
    fn new(model: &Classifier, max_batch: usize) -> Self {
        let layers = model.layers();
        let mut inputs = vec![vec![0.0; max_batch * model.input_dim()]];
        for l in &layers[..layers.len() - 1] {
            inputs.push(vec![0.0; max_batch * l.out_dim()]);
        }
        let per_out = |scale: usize| -> Vec<Vec<f64>> {
            layers.iter().map(|l| vec![0.0; scale * l.out_dim()]).collect()
        };
        let per_w = || -> Vec<Vec<f64>> {
            layers
                .iter()
                .map(|l| vec![0.0; l.out_dim() * l.in_dim()])
                .collect()
        };
        Self {
            inputs,
            pre: per_out(max_batch),
            delta: per_out(max_batch),
            grad_w: per_w(),
            grad_b: per_out(1),
            vel_w: per_w(),
            vel_b: per_out(1),
            mask_flags: model.class_mask().to_mask(model.num_classes()),
        }
    }

    fn step(
        &mut self,
        model: &mut Classifier,
        dataset: &[LabeledSample],
        batch: &[usize],
        cfg: &TrainConfig,
    ) {
        let b = batch.len();
        let n_layers = model.layers().len();
        let act_relu = |z: f64| z.max(0.0);
        let input_dim = model.input_dim();
        let k = model.num_classes();

        for (r, &idx) in batch.iter().enumerate() {
            self.inputs[0][r * input_dim..(r + 1) * input_dim]
                .copy_from_slice(&dataset[idx].features);
        }

        // Forward.
        for l in 0..n_layers {
            let layer = &model.layers()[l];
            let (out, inp) = (layer.out_dim(), layer.in_dim());
            let z = &mut self.pre[l][..b * out];
            for row in z.chunks_exact_mut(out) {
                row.copy_from_slice(&layer.bias);
            }
            gemm(
                b,
                inp,
                out,
                &self.inputs[l][..b * inp],
                Op::N,
                layer.weights.data(),
                Op::T,
                1.0,
                z,
            );
            if l + 1 < n_layers {
                let next = &mut self.inputs[l + 1][..b * out];
                for (a, &zv) in next.iter_mut().zip(z.iter()) {
                    *a = act_relu(zv);
                }
            }
        }

        // d(mean CE)/d logits = (p - onehot) / b over the mask.
        let mask = model.class_mask().clone();
        let inv_b = 1.0 / b as f64;
        {
            let logits = &self.pre[n_layers - 1][..b * k];
            let d = &mut self.delta[n_layers - 1][..b * k];
            for (r, &idx) in batch.iter().enumerate() {
                let probs = masked_softmax(&logits[r * k..(r + 1) * k], &mask);
                let label = dataset[idx].label;
                for c in 0..k {
                    d[r * k + c] = if self.mask_flags[c] {
                        let y = if c == label { 1.0 } else { 0.0 };
                        (probs[c] - y) * inv_b
                    } else {
                        0.0
                    };
                }
            }
        }

        // Backward.
        for l in (0..n_layers).rev() {
            let layer = &model.layers()[l];
            let (out, inp) = (layer.out_dim(), layer.in_dim());
            let delta = &self.delta[l][..b * out];
            gemm(
                out,
                b,
                inp,
                delta,
                Op::T,
                &self.inputs[l][..b * inp],
                Op::N,
                0.0,
                &mut self.grad_w[l],
            );
            let gb = &mut self.grad_b[l];
            gb.fill(0.0);
            for row in delta.chunks_exact(out) {
                for (g, &dv) in gb.iter_mut().zip(row) {
                    *g += dv;
                }
            }
            if l > 0 {
                let (lower, upper) = self.delta.split_at_mut(l);
                let d_prev = &mut lower[l - 1][..b * inp];
                gemm(
                    b,
                    out,
                    inp,
                    &upper[0][..b * out],
                    Op::N,
                    layer.weights.data(),
                    Op::N,
                    0.0,
                    d_prev,
                );
                for (dv, &z) in d_prev.iter_mut().zip(&self.pre[l - 1][..b * inp]) {
                    if z <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
        }

        // Nesterov update in velocity form:
        //   v <- mu v - lr g;  theta <- theta + mu v - lr g
        let (lr, mu, lambda) = (cfg.learning_rate, cfg.momentum, cfg.l2_lambda);
        for l in 0..n_layers {
            let layer = &mut model.layers_mut()[l];
            update(
                layer.weights.data_mut(),
                &self.grad_w[l],
                &mut self.vel_w[l],
                lr,
                mu,
                lambda,
            );
            update(
                &mut layer.bias,
                &self.grad_b[l],
                &mut self.vel_b[l],
                lr,
                mu,
                lambda,
            );
        }
    }
}

#[inline]
fn update(params: &mut [f64], grad: &[f64], vel: &mut [f64], lr: f64, mu: f64, lambda: f64) {
    for ((p, &g), v) in params.iter_mut().zip(grad).zip(vel.iter_mut()) {
        let g = g + lambda * *p;
        *v = mu * *v - lr * g;
        *p += mu * *v - lr * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rejects_label_outside_mask() {
        let arch = MlpArchitecture::new(1, vec![], 3).unwrap();
        let mask = ExpertiseDomain::new([0, 1], 3).unwrap();
        let data = vec![LabeledSample::new(vec![0.1], 2)];
        let err = train(&data, &arch, &mask, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn single_class_mask_only_decays() {
        // With a one-class mask the softmax is constant 1, the data gradient is
        // zero, and only the L2 term moves the parameters.
        let arch = MlpArchitecture::new(3, vec![4], 3).unwrap();
        let mask = ExpertiseDomain::new([1], 3).unwrap();
        let data = vec![LabeledSample::new(vec![0.2, 0.4, 0.6], 1); 8];
        let mut model = Classifier::initialize(
            &arch,
            mask.clone(),
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let cfg = TrainConfig {
            l2_lambda: 1e-2,
            momentum: 0.0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&model, cfg.batch_size);
        let batch: Vec<usize> = (0..8).collect();
        let mut prev = model.parameter_norm_sq();
        for _ in 0..20 {
            trainer.step(&mut model, &data, &batch, &cfg);
            let now = model.parameter_norm_sq();
            assert!(now < prev, "norm did not decrease: {now} >= {prev}");
            prev = now;
        }
    }
}
