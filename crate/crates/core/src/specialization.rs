//! Expertise domains from a fooling matrix.
//!
//! Row `i` of the fooling matrix holds the rates at which FGS adversaries of
//! class `i` land in each class. Each row is split at its mean fooling rate
//! into a "high" domain (the classes `i` is most often fooled into) and a
//! "low" domain (the rest); both keep `i` itself. The `2K` domains are
//! deduplicated and the generalist domain is appended last.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::attacks::{self, AdversarialSample, AttackConfig};
use crate::csvio;
use crate::error::{contract, format_err, Error, Result};
use crate::nn::Classifier;
use crate::types::{ExpertiseDomain, LabeledSample};

#[derive(Debug, Clone, PartialEq)]
pub struct FoolingMatrix {
    k: usize,
    /// `counts[i][j]`: adversaries of true class `i` predicted as `j`.
    counts: Vec<Vec<u64>>,
    rates: Vec<Vec<f64>>,
    samples_per_class: usize,
}

impl FoolingMatrix {
    /// Builds rates from raw tallies; every row must sum to `samples_per_class`.
    pub fn from_counts(counts: Vec<Vec<u64>>, samples_per_class: usize) -> Result<Self> {
        let k = counts.len();
        if k < 2 {
            return Err(contract("fooling matrix needs at least 2 classes"));
        }
        if samples_per_class == 0 {
            return Err(contract("samples_per_class must be >= 1"));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != k {
                return Err(contract(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            let total: u64 = row.iter().sum();
            if total != samples_per_class as u64 {
                return Err(contract(format!(
                    "row {i} tallies {total} adversaries, expected {samples_per_class}"
                )));
            }
        }
        let rates = counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / samples_per_class as f64).collect())
            .collect();
        Ok(Self {
            k,
            counts,
            rates,
            samples_per_class,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn rates(&self) -> &[Vec<f64>] {
        &self.rates
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rates[i]
    }

    pub fn samples_per_class(&self) -> usize {
        self.samples_per_class
    }

    /// Writes `<stem>_rates.csv` and `<stem>_counts.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str, config_hash: &str) -> Result<()> {
        let header: Vec<String> = std::iter::once("true_class".to_string())
            .chain((0..self.k).map(|j| format!("c{j}")))
            .collect();
        let rows = |f: &dyn Fn(usize, usize) -> String| -> Vec<Vec<String>> {
            (0..self.k)
                .map(|i| {
                    std::iter::once(i.to_string())
                        .chain((0..self.k).map(|j| f(i, j)))
                        .collect()
                })
                .collect()
        };
        csvio::write(
            &dir.join(format!("{stem}_rates.csv")),
            config_hash,
            &header,
            &rows(&|i, j| self.rates[i][j].to_string()),
        )?;
        csvio::write(
            &dir.join(format!("{stem}_counts.csv")),
            config_hash,
            &header,
            &rows(&|i, j| self.counts[i][j].to_string()),
        )
    }

    /// Reloads a matrix from its counts CSV.
    pub fn load_counts(path: &Path) -> Result<Self> {
        let table = csvio::read(path)?;
        let mut counts = Vec::new();
        for (ln, r) in &table.rows {
            let row = r[1..]
                .iter()
                .map(|f| csvio::parse::<u64>(f, *ln, "count"))
                .collect::<Result<Vec<_>>>()?;
            counts.push(row);
        }
        let per_class = counts.first().map_or(0, |r| r.iter().sum::<u64>()) as usize;
        Self::from_counts(counts, per_class).map_err(|e| format_err(0, e.to_string()))
    }
}

/// FGS-attacks the first `per_class` correctly classified samples of every
/// class and tallies where the adversaries land.
pub fn compute_fooling_matrix(
    classifier: &Classifier,
    samples: &[LabeledSample],
    attack_cfg: &AttackConfig,
    per_class: usize,
    origin: &str,
) -> Result<(FoolingMatrix, Vec<AdversarialSample>)> {
    let k = classifier.num_classes();
    if per_class == 0 {
        return Err(contract("per_class must be >= 1"));
    }
    let mut picked: Vec<Vec<&LabeledSample>> = vec![Vec::new(); k];
    for s in samples {
        if s.label >= k {
            return Err(contract(format!("label {} out of range", s.label)));
        }
        if picked[s.label].len() < per_class && classifier.forward(&s.features)?.argmax() == s.label {
            picked[s.label].push(s);
        }
    }
    if let Some((class, got)) = picked.iter().enumerate().find(|(_, v)| v.len() < per_class) {
        return Err(Error::InsufficientSamples {
            class,
            available: got.len(),
            required: per_class,
        });
    }

    let mut counts = vec![vec![0u64; k]; k];
    let mut adversaries = Vec::with_capacity(k * per_class);
    for (class, group) in picked.iter().enumerate() {
        for s in group {
            let adv = attacks::fgs(classifier, s, attack_cfg, origin)?;
            let pred = classifier.forward(&adv.features)?.argmax();
            counts[class][pred] += 1;
            adversaries.push(adv);
        }
    }
    Ok((FoolingMatrix::from_counts(counts, per_class)?, adversaries))
}

/// How the per-row threshold `μ_i` is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregator {
    /// `μ_i = (1/(K-1)) Σ_{j≠i} c_ij`.
    #[default]
    MeanOffDiagonal,
    /// `μ_i = Σ_j c_ij`, the literal row sum.
    SumAsWritten,
}

impl Aggregator {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::MeanOffDiagonal => "mean-off-diagonal",
            Aggregator::SumAsWritten => "sum-as-written",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean-off-diagonal" => Some(Aggregator::MeanOffDiagonal),
            "sum-as-written" => Some(Aggregator::SumAsWritten),
            _ => None,
        }
    }
}

/// Splits one fooling-matrix row into its high and low domains.
///
/// High is `{j ≠ i : c_ij > μ_i} ∪ {i}`; low is the complement plus `i`. The
/// diagonal never takes part in the comparison and ties go to low.
pub fn split_row(
    row: &[f64],
    own_class: usize,
    aggregator: Aggregator,
) -> Result<(ExpertiseDomain, ExpertiseDomain)> {
    let k = row.len();
    if k < 2 || own_class >= k {
        return Err(contract(format!("own class {own_class} invalid for row of length {k}")));
    }
    if row.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(contract("fooling rates must lie in [0, 1]"));
    }
    let mu = match aggregator {
        Aggregator::MeanOffDiagonal => {
            let off: f64 = (0..k).filter(|&j| j != own_class).map(|j| row[j]).sum();
            off / (k - 1) as f64
        }
        Aggregator::SumAsWritten => row.iter().sum(),
    };
    let high: Vec<usize> = (0..k)
        .filter(|&j| j == own_class || row[j] > mu)
        .collect();
    let low: Vec<usize> = (0..k)
        .filter(|&j| j == own_class || !high.contains(&j))
        .collect();
    Ok((ExpertiseDomain::new(high, k)?, ExpertiseDomain::new(low, k)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    High,
    Low,
}

/// Which rule produced a domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainOrigin {
    Row { class: usize, split: Split },
    Generalist,
}

impl DomainOrigin {
    fn label(self) -> String {
        match self {
            DomainOrigin::Row { class, split: Split::High } => format!("high:{class}"),
            DomainOrigin::Row { class, split: Split::Low } => format!("low:{class}"),
            DomainOrigin::Generalist => "generalist".to_string(),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        if s == "generalist" {
            return Some(DomainOrigin::Generalist);
        }
        let (kind, class) = s.split_once(':')?;
        let class = class.parse().ok()?;
        let split = match kind {
            "high" => Split::High,
            "low" => Split::Low,
            _ => return None,
        };
        Some(DomainOrigin::Row { class, split })
    }
}

/// Deduplicated expertise domains; the generalist is always last.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSet {
    k: usize,
    domains: Vec<ExpertiseDomain>,
    provenance: Vec<Vec<DomainOrigin>>,
}

impl DomainSet {
    /// A set holding only the generalist.
    pub fn generalist_only(k: usize) -> Self {
        Self {
            k,
            domains: vec![ExpertiseDomain::full(k)],
            provenance: vec![vec![DomainOrigin::Generalist]],
        }
    }

    /// Deduplicates `candidates` (first occurrence wins, provenance merged)
    /// and appends the generalist. Candidates equal to the full class set are
    /// merged into the generalist entry.
    pub fn from_candidates(
        k: usize,
        candidates: impl IntoIterator<Item = (ExpertiseDomain, DomainOrigin)>,
    ) -> Self {
        let full = ExpertiseDomain::full(k);
        let mut domains: Vec<ExpertiseDomain> = Vec::new();
        let mut provenance: Vec<Vec<DomainOrigin>> = Vec::new();
        let mut generalist = Vec::new();
        for (d, origin) in candidates {
            if d == full {
                generalist.push(origin);
            } else if let Some(pos) = domains.iter().position(|x| *x == d) {
                provenance[pos].push(origin);
            } else {
                domains.push(d);
                provenance.push(vec![origin]);
            }
        }
        generalist.push(DomainOrigin::Generalist);
        domains.push(full);
        provenance.push(generalist);
        Self {
            k,
            domains,
            provenance,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn domains(&self) -> &[ExpertiseDomain] {
        &self.domains
    }

    pub fn provenance(&self) -> &[Vec<DomainOrigin>] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn provenance_label(&self, j: usize) -> String {
        self.provenance[j]
            .iter()
            .map(|o| o.label())
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// One line per domain: sorted class indices, then `# provenance`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# expertise domains, num_classes = {}", self.k).unwrap();
        for (j, d) in self.domains.iter().enumerate() {
            let classes: Vec<String> = d.classes().iter().map(|c| c.to_string()).collect();
            writeln!(out, "{}  # {}", classes.join(" "), self.provenance_label(j)).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut k = None;
        let mut candidates = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i as u64 + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.split("num_classes =").nth(1) {
                    k = Some(csvio::parse::<usize>(v.trim(), ln, "num_classes")?);
                }
                continue;
            }
            let k = k.ok_or_else(|| format_err(ln, "num_classes header must come first"))?;
            let (classes, comment) = line.split_once('#').unwrap_or((line, ""));
            let classes = classes
                .split_whitespace()
                .map(|c| csvio::parse::<usize>(c, ln, "class"))
                .collect::<Result<Vec<_>>>()?;
            let domain = ExpertiseDomain::new(classes, k).map_err(|e| format_err(ln, e.to_string()))?;
            let origins: Vec<DomainOrigin> = comment
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| DomainOrigin::parse(s).ok_or_else(|| format_err(ln, format!("bad provenance {s:?}"))))
                .collect::<Result<_>>()?;
            candidates.push((domain, origins));
        }
        let k = k.ok_or_else(|| format_err(1, "missing num_classes header"))?;
        let mut domains = Vec::new();
        let mut provenance = Vec::new();
        for (d, o) in candidates {
            domains.push(d);
            provenance.push(o);
        }
        if domains.last() != Some(&ExpertiseDomain::full(k)) {
            return Err(format_err(0, "the generalist domain must be listed last"));
        }
        Ok(Self {
            k,
            domains,
            provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Splits every row and deduplicates: at most `2K + 1` domains.
pub fn derive_domains(fm: &FoolingMatrix, aggregator: Aggregator) -> Result<DomainSet> {
    let k = fm.num_classes();
    let mut candidates = Vec::with_capacity(2 * k);
    for i in 0..k {
        let (high, low) = split_row(fm.row(i), i, aggregator)?;
        candidates.push((high, DomainOrigin::Row { class: i, split: Split::High }));
        candidates.push((low, DomainOrigin::Row { class: i, split: Split::Low }));
    }
    Ok(DomainSet::from_candidates(k, candidates))
}
