//! Gradient-sign attacks against single classifiers and against a voting
//! ensemble.
//!
//! Every step is `x <- clip(x ± ε·sign(∇x L))`, with `sign(0) = 0` and the
//! clip applied after each step. Iterated attacks compose the per-step
//! budget, so `‖x' - x‖∞ ≤ ε·t`.

use std::fmt;

use crate::ensemble::Ensemble;
use crate::error::{contract, Error, Result};
use crate::nn::{Classifier, PROB_FLOOR};
use crate::types::{LabeledSample, ProbVector};

pub mod csv;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub iterations: usize,
    pub target_class: Option<usize>,
    pub clip_min: f64,
    pub clip_max: f64,
}

impl AttackConfig {
    /// Untargeted, unit feature box.
    pub fn new(epsilon: f64, iterations: usize) -> Self {
        Self {
            epsilon,
            iterations,
            target_class: None,
            clip_min: 0.0,
            clip_max: 1.0,
        }
    }

    pub fn targeted(mut self, target: usize) -> Self {
        self.target_class = Some(target);
        self
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.clip_min < self.clip_max) {
            return Err(Error::InvalidConfig("clip_min must be below clip_max".into()));
        }
        if let Some(t) = self.target_class {
            if t >= num_classes {
                return Err(Error::InvalidConfig(format!(
                    "target class {t} outside 0..{num_classes}"
                )));
            }
        }
        Ok(())
    }

    /// Largest possible `‖x' - x‖∞` after all iterations.
    pub fn budget(&self) -> f64 {
        self.epsilon * self.iterations as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackSource {
    Fgs,
    Tfgs,
    Ifgs,
    EnsembleFgs,
}

impl AttackSource {
    pub fn tag(self) -> &'static str {
        match self {
            AttackSource::Fgs => "FGS",
            AttackSource::Tfgs => "TFGS",
            AttackSource::Ifgs => "IFGS",
            AttackSource::EnsembleFgs => "EnsembleFGS",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "FGS" => Some(AttackSource::Fgs),
            "TFGS" => Some(AttackSource::Tfgs),
            "IFGS" => Some(AttackSource::Ifgs),
            "EnsembleFGS" => Some(AttackSource::EnsembleFgs),
            _ => None,
        }
    }
}

impl fmt::Display for AttackSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialSample {
    pub features: Vec<f64>,
    pub true_label: usize,
    pub source: AttackSource,
    pub origin_model_id: String,
    pub epsilon: f64,
    pub iterations: usize,
}

impl AdversarialSample {
    pub fn as_labeled(&self) -> LabeledSample {
        LabeledSample::new(self.features.clone(), self.true_label)
    }
}

/// Anything that predicts class probabilities and exposes the gradient of
/// `-log h_class(x)` with respect to `x`.
pub trait AttackSurface {
    fn num_classes(&self) -> usize;
    fn predict(&self, features: &[f64]) -> Result<ProbVector>;
    fn loss_gradient(&self, features: &[f64], class: usize) -> Result<Vec<f64>>;
}

impl AttackSurface for Classifier {
    fn num_classes(&self) -> usize {
        Classifier::num_classes(self)
    }

    fn predict(&self, features: &[f64]) -> Result<ProbVector> {
        self.forward(features)
    }

    fn loss_gradient(&self, features: &[f64], class: usize) -> Result<Vec<f64>> {
        Ok(self.class_loss_gradient(features, class)?.1)
    }
}

impl AttackSurface for Ensemble {
    fn num_classes(&self) -> usize {
        Ensemble::num_classes(self)
    }

    fn predict(&self, features: &[f64]) -> Result<ProbVector> {
        Ensemble::predict(self, features)
    }

    fn loss_gradient(&self, features: &[f64], class: usize) -> Result<Vec<f64>> {
        ensemble_class_gradient(self, features, class)
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One signed-gradient step from `x`: ascend the loss of `label`, or descend
/// the loss of the target class when the config is targeted.
pub fn attack_step<M: AttackSurface + ?Sized>(
    model: &M,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    let (class, dir) = match cfg.target_class {
        Some(t) => (t, -1.0),
        None => (label, 1.0),
    };
    let grad = model.loss_gradient(x, class)?;
    Ok(x
        .iter()
        .zip(&grad)
        .map(|(&xi, &g)| (xi + dir * cfg.epsilon * sign(g)).clamp(cfg.clip_min, cfg.clip_max))
        .collect())
}

/// All iterates `x_1 .. x_t` of an iterated attack, `t = cfg.iterations`.
pub fn trajectory<M: AttackSurface + ?Sized>(
    model: &M,
    sample: &LabeledSample,
    cfg: &AttackConfig,
) -> Result<Vec<Vec<f64>>> {
    check(model.num_classes(), sample, cfg)?;
    let mut out = Vec::with_capacity(cfg.iterations);
    let mut x = sample.features.clone();
    for _ in 0..cfg.iterations {
        x = attack_step(model, &x, sample.label, cfg)?;
        out.push(x.clone());
    }
    Ok(out)
}

fn check(num_classes: usize, sample: &LabeledSample, cfg: &AttackConfig) -> Result<()> {
    cfg.validate(num_classes)?;
    if sample.label >= num_classes {
        return Err(contract(format!("label {} out of range", sample.label)));
    }
    if cfg.target_class == Some(sample.label) {
        return Err(contract("target class equals the true label"));
    }
    Ok(())
}

fn finish(
    features: Vec<f64>,
    sample: &LabeledSample,
    source: AttackSource,
    origin: &str,
    cfg: &AttackConfig,
    iterations: usize,
) -> AdversarialSample {
    AdversarialSample {
        features,
        true_label: sample.label,
        source,
        origin_model_id: origin.to_string(),
        epsilon: cfg.epsilon,
        iterations,
    }
}

/// Fast gradient sign: `clip(x + ε·sign(∇x L(h(x), y)))`.
pub fn fgs(
    model: &Classifier,
    sample: &LabeledSample,
    cfg: &AttackConfig,
    origin: &str,
) -> Result<AdversarialSample> {
    if cfg.target_class.is_some() {
        return Err(contract("fgs is untargeted; use tfgs"));
    }
    check(model.num_classes(), sample, cfg)?;
    let x = attack_step(model, &sample.features, sample.label, cfg)?;
    Ok(finish(x, sample, AttackSource::Fgs, origin, cfg, 1))
}

/// Targeted fast gradient sign: `clip(x - ε·sign(∇x L(h(x), target)))`.
pub fn tfgs(
    model: &Classifier,
    sample: &LabeledSample,
    cfg: &AttackConfig,
    origin: &str,
) -> Result<AdversarialSample> {
    if cfg.target_class.is_none() {
        return Err(contract("tfgs needs a target class"));
    }
    check(model.num_classes(), sample, cfg)?;
    let x = attack_step(model, &sample.features, sample.label, cfg)?;
    Ok(finish(x, sample, AttackSource::Tfgs, origin, cfg, 1))
}

/// Iterated fast gradient sign with per-step ε and per-step clipping.
pub fn ifgs(
    model: &Classifier,
    sample: &LabeledSample,
    cfg: &AttackConfig,
    origin: &str,
) -> Result<AdversarialSample> {
    if cfg.target_class.is_some() {
        return Err(contract("ifgs is untargeted"));
    }
    let x = trajectory(model, sample, cfg)?
        .pop()
        .expect("iterations >= 1");
    Ok(finish(x, sample, AttackSource::Ifgs, origin, cfg, cfg.iterations))
}

/// Least-likely class under `model` at `x`, excluding `label`; the usual
/// T-FGS target. Ties go to the lowest index.
pub fn least_likely_target<M: AttackSurface + ?Sized>(model: &M, x: &[f64], label: usize) -> Result<usize> {
    let p = model.predict(x)?;
    let mut best: Option<usize> = None;
    for c in (0..p.len()).filter(|&c| c != label) {
        if best.is_none_or(|b| p.get(c) < p.get(b)) {
            best = Some(c);
        }
    }
    best.ok_or_else(|| contract("need at least two classes for a target"))
}

/// Gradient of `-log h̄_class(x)` through the voting mechanism.
///
/// The activated set is frozen at `x`. Writing `∂h^i_c/∂x = -h^i_c ∇x L^i`,
/// the chain rule `β·(1/|H|)·Σ ∂h^i_c/∂x` with `β = -1/h̄_c` becomes
/// `Σ w_i ∇x L^i` with `w_i = h^i_c / (h̄_c·|H|)`. Members that cannot
/// predict `class` contribute nothing.
pub fn ensemble_class_gradient(ensemble: &Ensemble, features: &[f64], class: usize) -> Result<Vec<f64>> {
    if class >= ensemble.num_classes() {
        return Err(contract(format!("class {class} out of range")));
    }
    let vote = ensemble.vote(features)?;
    let h_bar = vote.prediction.get(class).max(PROB_FLOOR);
    let n_active = vote.activated.len() as f64;
    let mut grad = vec![0.0; features.len()];
    for &i in &vote.activated {
        let member = &ensemble.members()[i];
        let p = vote.member_outputs[i].get(class);
        if !member.class_mask().contains(class) || p == 0.0 {
            continue;
        }
        let w = p / (h_bar * n_active);
        let (_, g) = member.class_loss_gradient(features, class)?;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += w * gi;
        }
    }
    Ok(grad)
}

/// Ensemble-loss input gradient for a labeled sample.
pub fn ensemble_gradient(ensemble: &Ensemble, sample: &LabeledSample) -> Result<Vec<f64>> {
    ensemble_class_gradient(ensemble, &sample.features, sample.label)
}

/// Signed-gradient attack on the ensemble; honors `iterations` and an
/// optional target.
pub fn ensemble_fgs(
    ensemble: &Ensemble,
    sample: &LabeledSample,
    cfg: &AttackConfig,
    origin: &str,
) -> Result<AdversarialSample> {
    let x = trajectory(ensemble, sample, cfg)?
        .pop()
        .expect("iterations >= 1");
    Ok(finish(x, sample, AttackSource::EnsembleFgs, origin, cfg, cfg.iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpArchitecture;
    use crate::types::ExpertiseDomain;

    fn zero_net() -> Classifier {
        let arch = MlpArchitecture::new(4, vec![3], 3).unwrap();
        Classifier::zeros(arch, ExpertiseDomain::full(3)).unwrap()
    }

    fn sample() -> LabeledSample {
        LabeledSample::new(vec![0.1, 0.5, 0.9, 0.0], 1)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let net = zero_net();
        let s = sample();
        assert_eq!(fgs(&net, &s, &AttackConfig::new(0.3, 1), "z").unwrap().features, s.features);
        assert_eq!(
            tfgs(&net, &s, &AttackConfig::new(0.3, 1).targeted(2), "z").unwrap().features,
            s.features
        );
        assert_eq!(ifgs(&net, &s, &AttackConfig::new(0.3, 7), "z").unwrap().features, s.features);
        let ens = Ensemble::new(vec![net.clone(), net], vec![0, 1], vec!["a".into(), "b".into()], Default::default()).unwrap();
        assert_eq!(
            ensemble_fgs(&ens, &s, &AttackConfig::new(0.3, 2), "e").unwrap().features,
            s.features
        );
    }

    #[test]
    fn target_equal_to_label_is_rejected() {
        let err = tfgs(&zero_net(), &sample(), &AttackConfig::new(0.1, 1).targeted(1), "z");
        assert!(matches!(err, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn fgs_rejects_targeted_config() {
        assert!(fgs(&zero_net(), &sample(), &AttackConfig::new(0.1, 1).targeted(0), "z").is_err());
        assert!(tfgs(&zero_net(), &sample(), &AttackConfig::new(0.1, 1), "z").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::new(0.0, 1).validate(3).is_err());
        assert!(AttackConfig::new(0.1, 0).validate(3).is_err());
        assert!(AttackConfig::new(0.1, 1).targeted(3).validate(3).is_err());
        assert!((AttackConfig::new(3e-3, 10).budget() - 0.03).abs() < 1e-15);
    }

    #[test]
    fn source_tags_round_trip() {
        for s in [AttackSource::Fgs, AttackSource::Tfgs, AttackSource::Ifgs, AttackSource::EnsembleFgs] {
            assert_eq!(AttackSource::parse(s.tag()), Some(s));
        }
    }
}
