//! Risk with rejection, threshold sweeps and white-box success rates.
//!
//! A prediction is rejected at `τ` when its top confidence is not strictly
//! above `τ`. Clean risk counts kept-but-wrong and rejected-but-right
//! samples; adversarial risk counts only kept-and-wrong adversaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::attacks::{self, AdversarialSample, AttackConfig, AttackSource, AttackSurface};
use crate::csvio;
use crate::ensemble::{decide, Decision};
use crate::error::{contract, Result};
use crate::types::LabeledSample;

/// What a model did with one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOutcome {
    pub true_label: usize,
    pub predicted: usize,
    pub confidence: f64,
}

impl SampleOutcome {
    pub fn correct(&self) -> bool {
        self.predicted == self.true_label
    }

    pub fn rejected(&self, tau: f64) -> bool {
        self.confidence <= tau
    }
}

/// Tallies behind one point of a clean-risk curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CleanCounts {
    pub kept_correct: usize,
    pub kept_wrong: usize,
    pub rejected_correct: usize,
    pub rejected_wrong: usize,
}

impl CleanCounts {
    pub fn total(&self) -> usize {
        self.kept_correct + self.kept_wrong + self.rejected_correct + self.rejected_wrong
    }

    pub fn risk(&self) -> f64 {
        (self.kept_wrong + self.rejected_correct) as f64 / self.total() as f64
    }
}

/// Tallies behind one point of an adversarial-risk curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AdvCounts {
    pub kept_wrong: usize,
    pub total: usize,
}

impl AdvCounts {
    pub fn risk(&self) -> f64 {
        self.kept_wrong as f64 / self.total as f64
    }
}

pub fn outcome<M: AttackSurface + ?Sized>(model: &M, features: &[f64], label: usize) -> Result<SampleOutcome> {
    let p = model.predict(features)?;
    let predicted = p.argmax();
    Ok(SampleOutcome {
        true_label: label,
        predicted,
        confidence: p.get(predicted),
    })
}

pub fn clean_outcomes<M: AttackSurface + ?Sized>(model: &M, dataset: &[LabeledSample]) -> Result<Vec<SampleOutcome>> {
    dataset.iter().map(|s| outcome(model, &s.features, s.label)).collect()
}

pub fn adversarial_outcomes<M: AttackSurface + ?Sized>(
    model: &M,
    adversaries: &[AdversarialSample],
) -> Result<Vec<SampleOutcome>> {
    adversaries
        .iter()
        .map(|a| outcome(model, &a.features, a.true_label))
        .collect()
}

pub fn clean_counts(outcomes: &[SampleOutcome], tau: f64) -> CleanCounts {
    let mut c = CleanCounts::default();
    for o in outcomes {
        match (o.rejected(tau), o.correct()) {
            (false, true) => c.kept_correct += 1,
            (false, false) => c.kept_wrong += 1,
            (true, true) => c.rejected_correct += 1,
            (true, false) => c.rejected_wrong += 1,
        }
    }
    c
}

pub fn adv_counts(outcomes: &[SampleOutcome], tau: f64) -> AdvCounts {
    AdvCounts {
        kept_wrong: outcomes.iter().filter(|o| !o.rejected(tau) && !o.correct()).count(),
        total: outcomes.len(),
    }
}

/// `E_D|τ` over a clean dataset.
pub fn risk_clean<M: AttackSurface + ?Sized>(model: &M, dataset: &[LabeledSample], tau: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(contract("risk_clean needs a non-empty dataset"));
    }
    Ok(clean_counts(&clean_outcomes(model, dataset)?, tau).risk())
}

/// `E_A|τ` over an adversary set.
pub fn risk_adv<M: AttackSurface + ?Sized>(model: &M, adversaries: &[AdversarialSample], tau: f64) -> Result<f64> {
    if adversaries.is_empty() {
        return Err(contract("risk_adv needs a non-empty adversary set"));
    }
    Ok(adv_counts(&adversarial_outcomes(model, adversaries)?, tau).risk())
}

/// `{0.00, 0.01, ..., 0.99}`.
pub fn tau_grid() -> Vec<f64> {
    (0..100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvCurve {
    pub name: String,
    pub e_a: Vec<f64>,
    pub counts: Vec<AdvCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    pub taus: Vec<f64>,
    pub e_d: Vec<f64>,
    pub clean_counts: Vec<CleanCounts>,
    pub e_a: Vec<AdvCurve>,
}

impl RiskCurve {
    pub fn compute(taus: &[f64], clean: &[SampleOutcome], adversary_sets: &[(&str, &[SampleOutcome])]) -> Result<Self> {
        if taus.is_empty() || taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(contract("taus must be non-empty and strictly ascending"));
        }
        if clean.is_empty() || adversary_sets.iter().any(|(_, o)| o.is_empty()) {
            return Err(contract("risk curves need non-empty sample sets"));
        }
        let clean_counts: Vec<CleanCounts> = taus.iter().map(|&t| clean_counts(clean, t)).collect();
        let e_d = clean_counts.iter().map(CleanCounts::risk).collect();
        let e_a = adversary_sets
            .iter()
            .map(|(name, outs)| {
                let counts: Vec<AdvCounts> = taus.iter().map(|&t| adv_counts(outs, t)).collect();
                AdvCurve {
                    name: name.to_string(),
                    e_a: counts.iter().map(AdvCounts::risk).collect(),
                    counts,
                }
            })
            .collect();
        Ok(Self {
            taus: taus.to_vec(),
            e_d,
            clean_counts,
            e_a,
        })
    }

    pub fn adversary_set(&self, name: &str) -> Option<&AdvCurve> {
        self.e_a.iter().find(|c| c.name == name)
    }

    /// Index of `tau` on the grid, if present.
    pub fn index_of(&self, tau: f64) -> Option<usize> {
        self.taus.iter().position(|&t| t == tau)
    }

    pub fn write_csv(&self, path: &Path, config_hash: &str) -> Result<()> {
        let mut header = vec!["tau".to_string(), "e_d".to_string()];
        header.extend(self.e_a.iter().map(|c| format!("e_a_{}", c.name)));
        header.extend(["kept_correct", "kept_wrong", "rejected_correct", "rejected_wrong"].map(String::from));
        header.extend(self.e_a.iter().map(|c| format!("kept_wrong_{}", c.name)));
        header.extend(self.e_a.iter().map(|c| format!("n_{}", c.name)));
        let rows: Vec<Vec<String>> = (0..self.taus.len())
            .map(|i| {
                let cc = self.clean_counts[i];
                let mut r = vec![format!("{:.2}", self.taus[i]), self.e_d[i].to_string()];
                r.extend(self.e_a.iter().map(|c| c.e_a[i].to_string()));
                r.extend([cc.kept_correct, cc.kept_wrong, cc.rejected_correct, cc.rejected_wrong].map(|v| v.to_string()));
                r.extend(self.e_a.iter().map(|c| c.counts[i].kept_wrong.to_string()));
                r.extend(self.e_a.iter().map(|c| c.counts[i].total.to_string()));
                r
            })
            .collect();
        csvio::write(path, config_hash, &header, &rows)
    }
}

/// The grid `τ` minimizing `E_D + E_A` for one adversary set; lowest `τ`
/// wins ties.
pub fn optimum_threshold(curve: &RiskCurve, adversary_set: &str) -> Result<f64> {
    let adv = curve
        .adversary_set(adversary_set)
        .ok_or_else(|| contract(format!("no adversary set named {adversary_set:?}")))?;
    let mut best = 0;
    for i in 1..curve.taus.len() {
        if curve.e_d[i] + adv.e_a[i] < curve.e_d[best] + adv.e_a[best] {
            best = i;
        }
    }
    Ok(curve.taus[best])
}

/// How a model's operating threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Minimize `E_D + E_A` over the curve for the named set.
    Optimize,
    /// A pinned threshold, e.g. `0.5` for specialist ensembles.
    Fixed(f64),
}

pub fn select_threshold(curve: &RiskCurve, adversary_set: &str, mode: ThresholdMode) -> Result<f64> {
    match mode {
        ThresholdMode::Optimize => optimum_threshold(curve, adversary_set),
        ThresholdMode::Fixed(t) => Ok(t),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessRateReport {
    pub model_id: String,
    pub attack: AttackSource,
    pub tau_star: f64,
    pub success_rate: f64,
    pub t: usize,
    pub n: usize,
    /// Per sample: the first iterate (1-based) that fooled the model.
    pub first_success: Vec<Option<usize>>,
}

impl SuccessRateReport {
    /// Success rate if the attack had stopped after `t` iterations.
    pub fn success_rate_at(&self, t: usize) -> f64 {
        let hits = self.first_success.iter().filter(|f| f.is_some_and(|i| i <= t)).count();
        hits as f64 / self.n as f64
    }
}

/// Keeps the samples the model classifies correctly without rejecting.
pub fn accepted_correct<M: AttackSurface + ?Sized>(
    model: &M,
    samples: &[LabeledSample],
    tau: f64,
) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for s in samples {
        if decide(&model.predict(&s.features)?, tau) == Decision::Class(s.label) {
            out.push(s.clone());
        }
    }
    Ok(out)
}

/// White-box attack on `model`: a sample counts as a success if any iterate
/// is classified as a wrong class with confidence above `tau_star`.
/// Callers normally pass only `accepted_correct` samples.
///
/// For `AttackSource::Tfgs` without a fixed target, each sample targets its
/// least-likely class at the clean input.
pub fn whitebox_success_rate<M: AttackSurface + ?Sized>(
    model: &M,
    model_id: &str,
    samples: &[LabeledSample],
    cfg: &AttackConfig,
    attack: AttackSource,
    tau_star: f64,
) -> Result<SuccessRateReport> {
    if samples.is_empty() {
        return Err(contract("no samples to attack"));
    }
    let targeted = attack == AttackSource::Tfgs || cfg.target_class.is_some();
    let mut first_success = Vec::with_capacity(samples.len());
    for s in samples {
        let mut c = cfg.clone();
        if targeted && c.target_class.is_none() {
            c.target_class = Some(attacks::least_likely_target(model, &s.features, s.label)?);
        }
        let mut hit = None;
        for (i, x) in attacks::trajectory(model, s, &c)?.iter().enumerate() {
            if let Decision::Class(k) = decide(&model.predict(x)?, tau_star) {
                if k != s.label {
                    hit = Some(i + 1);
                    break;
                }
            }
        }
        first_success.push(hit);
    }
    let n = samples.len();
    let success_rate = first_success.iter().filter(|f| f.is_some()).count() as f64 / n as f64;
    Ok(SuccessRateReport {
        model_id: model_id.to_string(),
        attack,
        tau_star,
        success_rate,
        t: cfg.iterations,
        n,
        first_success,
    })
}

/// Per-sample decision log: id, labels, confidence and the decision taken
/// at every threshold of record (`-1` for reject).
pub fn write_decision_log(
    path: &Path,
    config_hash: &str,
    outcomes: &[SampleOutcome],
    taus: &[(String, f64)],
) -> Result<()> {
    let mut header = ["sample_id", "true_label", "predicted", "confidence"].map(String::from).to_vec();
    header.extend(taus.iter().map(|(name, t)| format!("decision_{name}@{t:.2}")));
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut r = vec![
                i.to_string(),
                o.true_label.to_string(),
                o.predicted.to_string(),
                o.confidence.to_string(),
            ];
            r.extend(taus.iter().map(|(_, t)| {
                if o.rejected(*t) {
                    "-1".to_string()
                } else {
                    o.predicted.to_string()
                }
            }));
            r
        })
        .collect();
    csvio::write(path, config_hash, &header, &rows)
}

/// Reads the outcome columns back from a decision log.
pub fn read_decision_log(path: &Path) -> Result<Vec<SampleOutcome>> {
    let table = csvio::read(path)?;
    table
        .rows
        .iter()
        .map(|(ln, r)| {
            Ok(SampleOutcome {
                true_label: csvio::parse(&r[1], *ln, "true_label")?,
                predicted: csvio::parse(&r[2], *ln, "predicted")?,
                confidence: csvio::parse(&r[3], *ln, "confidence")?,
            })
        })
        .collect()
}

/// One row of a detection summary: risks in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub method: String,
    pub tau: f64,
    pub e_d: f64,
    pub e_a: Vec<(String, f64)>,
}

/// Aligned plain-text table with percentages.
pub fn render_detection_table(rows: &[DetectionRow]) -> String {
    let mut out = String::new();
    let sets: Vec<&str> = rows
        .first()
        .map(|r| r.e_a.iter().map(|(n, _)| n.as_str()).collect())
        .unwrap_or_default();
    write!(out, "{:<22}{:>8}{:>10}", "method", "tau", "E_D(%)").unwrap();
    for s in &sets {
        write!(out, "{:>14}", format!("E_A {s}(%)")).unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{:<22}{:>8.2}{:>10.2}", r.method, r.tau, 100.0 * r.e_d).unwrap();
        for (_, v) in &r.e_a {
            write!(out, "{:>14.2}", 100.0 * v).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Aligned success-rate table, one row per model and one column per attack.
pub fn render_success_table(reports: &[SuccessRateReport]) -> String {
    let mut models: Vec<&str> = Vec::new();
    let mut attacks: Vec<(AttackSource, usize)> = Vec::new();
    for r in reports {
        if !models.contains(&r.model_id.as_str()) {
            models.push(&r.model_id);
        }
        if !attacks.contains(&(r.attack, r.t)) {
            attacks.push((r.attack, r.t));
        }
    }
    let mut out = String::new();
    write!(out, "{:<22}{:>8}", "model", "tau*").unwrap();
    for (a, t) in &attacks {
        write!(out, "{:>14}", format!("{a} t={t}")).unwrap();
    }
    out.push('\n');
    for m in models {
        let tau = reports.iter().find(|r| r.model_id == m).map_or(0.0, |r| r.tau_star);
        write!(out, "{m:<22}{tau:>8.2}").unwrap();
        for (a, t) in &attacks {
            match reports.iter().find(|r| r.model_id == m && r.attack == *a && r.t == *t) {
                Some(r) => write!(out, "{:>14.2}", 100.0 * r.success_rate).unwrap(),
                None => write!(out, "{:>14}", "-").unwrap(),
            }
        }
        out.push('\n');
    }
    out
}
