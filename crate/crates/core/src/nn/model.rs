//! Feed-forward classifier with a masked softmax head.

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{contract, Error, Result};
use crate::types::{ExpertiseDomain, LabeledSample, ProbVector};

/// Probabilities below this are clamped before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be >= 2".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `(out, in)` shape of every layer, input side first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

/// Affine layer `z = W a + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// He-style uniform init: `U(-sqrt(6/in), sqrt(6/in))`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let mut layer = Self::zeros(out_dim, in_dim);
        for w in layer.weights.data_mut() {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// A trained (or initialized) network `h: X -> [0,1]^K`.
///
/// Probabilities of classes outside `class_mask` are exactly zero: the
/// softmax runs over the masked logits only.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    arch: MlpArchitecture,
    layers: Vec<DenseLayer>,
    class_mask: ExpertiseDomain,
}

/// Per-layer pre-activations of one forward pass.
struct Trace {
    pre: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl Classifier {
    /// Assembles a classifier from explicit layers, checking every shape.
    pub fn from_parts(
        arch: MlpArchitecture,
        layers: Vec<DenseLayer>,
        class_mask: ExpertiseDomain,
    ) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(contract(format!(
                "architecture has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, ((out, inp), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.out_dim() != *out || layer.in_dim() != *inp || layer.bias.len() != *out {
                return Err(contract(format!(
                    "layer {i}: expected {out}x{inp}, got {}x{} (bias {})",
                    layer.out_dim(),
                    layer.in_dim(),
                    layer.bias.len()
                )));
            }
        }
        if class_mask.min_num_classes() > arch.num_classes {
            return Err(contract(format!(
                "class mask {class_mask} exceeds {} classes",
                arch.num_classes
            )));
        }
        Ok(Self {
            arch,
            layers,
            class_mask,
        })
    }

    /// All weights and biases zero; predicts the uniform distribution over the mask.
    pub fn zeros(arch: MlpArchitecture, class_mask: ExpertiseDomain) -> Result<Self> {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| DenseLayer::zeros(o, i))
            .collect();
        Self::from_parts(arch, layers, class_mask)
    }

    /// Random He-uniform initialization drawn from `rng`.
    pub fn initialize<R: Rng + ?Sized>(
        arch: &MlpArchitecture,
        class_mask: ExpertiseDomain,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| DenseLayer::he_uniform(o, i, rng))
            .collect();
        Self::from_parts(arch.clone(), layers, class_mask)
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn class_mask(&self) -> &ExpertiseDomain {
        &self.class_mask
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    /// Sum of squared parameters (weights and biases).
    pub fn parameter_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.frobenius_sq() + l.bias.iter().map(|b| b * b).sum::<f64>())
            .sum()
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if !self.class_mask.contains(class) {
            return Err(contract(format!(
                "class {class} is outside the class mask {}",
                self.class_mask
            )));
        }
        Ok(())
    }

    fn trace(&self, features: &[f64]) -> Trace {
        let act = self.arch.activation;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut input: Vec<f64> = features.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.out_dim()];
            layer.weights.matvec_into(&input, &mut z);
            for (zj, bj) in z.iter_mut().zip(&layer.bias) {
                *zj += bj;
            }
            if i + 1 < self.layers.len() {
                input = z.iter().map(|&v| act.apply(v)).collect();
            }
            pre.push(z);
        }
        let logits = pre.last().expect("at least one layer");
        let probs = masked_softmax(logits, &self.class_mask);
        Trace { pre, probs }
    }

    /// Backpropagates a logit cotangent down to the input features.
    fn input_gradient(&self, trace: &Trace, d_logits: Vec<f64>) -> Vec<f64> {
        let act = self.arch.activation;
        let mut grad = d_logits;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let mut d_in = vec![0.0; layer.in_dim()];
            layer.weights.matvec_transposed_into(&grad, &mut d_in);
            if i > 0 {
                for (g, &z) in d_in.iter_mut().zip(&trace.pre[i - 1]) {
                    *g *= act.derivative(z);
                }
            }
            grad = d_in;
        }
        grad
    }

    /// Class probabilities for one input.
    pub fn forward(&self, features: &[f64]) -> Result<ProbVector> {
        self.check_input(features)?;
        Ok(ProbVector(self.trace(features).probs))
    }

    /// Cross-entropy `-log h_class(x)` and its gradient with respect to `x`.
    pub fn class_loss_gradient(&self, features: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
        self.check_input(features)?;
        self.check_class(class)?;
        let trace = self.trace(features);
        let loss = -trace.probs[class].max(PROB_FLOOR).ln();
        let mut d_logits = trace.probs.clone();
        d_logits[class] -= 1.0;
        let grad = self.input_gradient(&trace, d_logits);
        Ok((loss, grad))
    }

    /// Loss and input gradient for a labeled sample.
    pub fn loss_and_input_gradient(&self, sample: &LabeledSample) -> Result<(f64, Vec<f64>)> {
        self.class_loss_gradient(&sample.features, sample.label)
    }

    /// `h_class(x)` and `∂h_class/∂x`. Classes outside the mask give `(0, 0)`.
    pub fn prob_input_gradient(&self, features: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
        self.check_input(features)?;
        if class >= self.arch.num_classes {
            return Err(contract(format!("class {class} out of range")));
        }
        let trace = self.trace(features);
        let p = trace.probs[class];
        if !self.class_mask.contains(class) {
            return Ok((0.0, vec![0.0; self.arch.input_dim]));
        }
        // ∂p_k/∂z_j = p_k (δ_kj - p_j) over the mask; probs are 0 elsewhere.
        let d_logits: Vec<f64> = trace
            .probs
            .iter()
            .enumerate()
            .map(|(j, &pj)| if j == class { p * (1.0 - pj) } else { -p * pj })
            .collect();
        let grad = self.input_gradient(&trace, d_logits);
        Ok((p, grad))
    }

    /// Average masked cross-entropy over `dataset`.
    pub fn mean_loss(&self, dataset: &[LabeledSample]) -> Result<f64> {
        if dataset.is_empty() {
            return Err(contract("mean_loss on an empty dataset"));
        }
        let mut total = 0.0;
        for s in dataset {
            self.check_input(&s.features)?;
            self.check_class(s.label)?;
            total += -self.trace(&s.features).probs[s.label].max(PROB_FLOOR).ln();
        }
        Ok(total / dataset.len() as f64)
    }

    /// Fraction of `dataset` whose argmax equals the label.
    pub fn accuracy(&self, dataset: &[LabeledSample]) -> Result<f64> {
        if dataset.is_empty() {
            return Err(contract("accuracy on an empty dataset"));
        }
        let mut correct = 0usize;
        for s in dataset {
            if self.forward(&s.features)?.argmax() == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }
}

/// Softmax over the entries selected by `mask`; everything else is exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &ExpertiseDomain) -> Vec<f64> {
    let mut probs = vec![0.0; logits.len()];
    let max = mask
        .classes()
        .iter()
        .map(|&c| logits[c])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &c in mask.classes() {
        let e = (logits[c] - max).exp();
        probs[c] = e;
        sum += e;
    }
    for &c in mask.classes() {
        probs[c] /= sum;
    }
    probs
}
