#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use specens::nn::{DenseLayer, Matrix};
use specens::{Classifier, ExpertiseDomain, LabeledSample, MlpArchitecture};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian blobs with means drawn in `[0.2, 0.8]^dim`, clipped to `[0,1]`.
pub fn blobs(k: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Vec<LabeledSample> {
    let mut r = rng(seed);
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| r.random_range(0.2..0.8)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).unwrap();
    let mut out = Vec::with_capacity(k * per_class);
    for _ in 0..per_class {
        for (c, m) in means.iter().enumerate() {
            let x = m.iter().map(|&mu| (mu + noise.sample(&mut r)).clamp(0.0, 1.0)).collect();
            out.push(LabeledSample::new(x, c));
        }
    }
    out
}

/// Random network with non-zero biases so ReLU kinks land anywhere.
pub fn random_classifier<R: Rng>(r: &mut R, arch: &MlpArchitecture, mask: ExpertiseDomain) -> Classifier {
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(o, i)| {
            let w: Vec<f64> = (0..o * i).map(|_| r.random_range(-1.0..1.0)).collect();
            DenseLayer {
                weights: Matrix::from_vec(o, i, w).unwrap(),
                bias: (0..o).map(|_| r.random_range(-0.5..0.5)).collect(),
            }
        })
        .collect();
    Classifier::from_parts(arch.clone(), layers, mask).unwrap()
}

pub fn random_mask<R: Rng>(r: &mut R, k: usize, must_contain: usize) -> ExpertiseDomain {
    let mut c: Vec<usize> = (0..k).filter(|_| r.random_bool(0.5)).collect();
    c.push(must_contain);
    ExpertiseDomain::new(c, k).unwrap()
}

/// Independent forward pass: pre-activations of hidden layers and masked
/// softmax computed with plain loops.
pub fn naive_forward(model: &Classifier, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut a = x.to_vec();
    let mut pre = Vec::new();
    let n = model.layers().len();
    for (li, layer) in model.layers().iter().enumerate() {
        let w = &layer.weights;
        let z: Vec<f64> = (0..w.rows())
            .map(|r| layer.bias[r] + (0..w.cols()).map(|c| w.get(r, c) * a[c]).sum::<f64>())
            .collect();
        if li + 1 < n {
            a = z.iter().map(|&v| v.max(0.0)).collect();
            pre.push(z);
        } else {
            a = z;
        }
    }
    let mask = model.class_mask();
    let mx = mask.classes().iter().map(|&c| a[c]).fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = mask.classes().iter().map(|&c| (a[c] - mx).exp()).sum();
    let probs = (0..a.len())
        .map(|c| if mask.contains(c) { (a[c] - mx).exp() / denom } else { 0.0 })
        .collect();
    (pre, probs)
}

pub fn activation_pattern(model: &Classifier, x: &[f64]) -> Vec<bool> {
    naive_forward(model, x).0.into_iter().flatten().map(|z| z > 0.0).collect()
}

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central difference of `f` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += FD_STEP;
    xm[i] -= FD_STEP;
    (f(&xp) - f(&xm)) / (2.0 * FD_STEP)
}

pub fn shifted(x: &[f64], i: usize, h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[i] += h;
    y
}

pub fn one_hot(k: usize, c: usize) -> specens::ProbVector {
    let mut v = vec![0.0; k];
    v[c] = 1.0;
    specens::ProbVector(v)
}
