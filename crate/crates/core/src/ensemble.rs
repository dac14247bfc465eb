//! Specialist ensembles and the vote-based fusion of their predictions.
//!
//! For an input `x` every member votes for its own argmax. The most voted
//! class `k*` is a *winner* when it collects every vote it can possibly
//! collect; the prediction is then the average of the members whose domain
//! contains `k*`. Without a winner all `M` members are averaged, which caps
//! the voters' share of the top class below `0.5 + 1/(2M)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{contract, format_err, Error, Result};
use crate::nn::{self, Classifier, MlpArchitecture, TrainConfig};
use crate::specialization::DomainSet;
use crate::types::{ExpertiseDomain, LabeledSample, ProbVector};

/// How the winner test of the voting mechanism is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WinnerRule {
    /// `v_{k*}` must equal the number of members whose domain contains `k*`.
    #[default]
    PerClassCapacity,
    /// `v_{k*}` must reach `ceil(M/2)`.
    HalfEnsemble,
}

impl WinnerRule {
    pub fn as_str(self) -> &'static str {
        match self {
            WinnerRule::PerClassCapacity => "per-class-capacity",
            WinnerRule::HalfEnsemble => "half-ensemble",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per-class-capacity" => Some(WinnerRule::PerClassCapacity),
            "half-ensemble" => Some(WinnerRule::HalfEnsemble),
            _ => None,
        }
    }
}

/// Outcome of one vote.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult {
    pub votes: Vec<usize>,
    pub winner: Option<usize>,
    /// Member indices averaged into `prediction`, ascending.
    pub activated: Vec<usize>,
    pub prediction: ProbVector,
    pub member_outputs: Vec<ProbVector>,
}

impl VoteResult {
    pub fn num_members(&self) -> usize {
        self.member_outputs.len()
    }
}

/// `n_k`: number of domains containing each class.
pub fn capacities(domains: &[ExpertiseDomain], num_classes: usize) -> Vec<usize> {
    let mut n = vec![0; num_classes];
    for d in domains {
        for &c in d.classes() {
            n[c] += 1;
        }
    }
    n
}

/// Runs the voting mechanism on precomputed member outputs.
pub fn vote_outputs(
    outputs: Vec<ProbVector>,
    domains: &[ExpertiseDomain],
    capacities: &[usize],
    rule: WinnerRule,
) -> VoteResult {
    assert_eq!(outputs.len(), domains.len(), "one domain per member output");
    assert!(!outputs.is_empty(), "vote needs at least one member");
    let k = capacities.len();
    let m = outputs.len();

    let mut votes = vec![0usize; k];
    for out in &outputs {
        votes[out.argmax()] += 1;
    }
    let mut top = 0;
    for c in 1..k {
        if votes[c] > votes[top] {
            top = c;
        }
    }
    let is_winner = match rule {
        WinnerRule::PerClassCapacity => votes[top] == capacities[top],
        WinnerRule::HalfEnsemble => votes[top] >= m.div_ceil(2),
    };
    let (winner, activated): (Option<usize>, Vec<usize>) = if is_winner {
        let act = (0..m).filter(|&j| domains[j].contains(top)).collect();
        (Some(top), act)
    } else {
        (None, (0..m).collect())
    };

    let mut sum = vec![0.0; k];
    for &j in &activated {
        for (s, &p) in sum.iter_mut().zip(outputs[j].as_slice()) {
            *s += p;
        }
    }
    let n = activated.len() as f64;
    for s in &mut sum {
        *s /= n;
    }

    VoteResult {
        votes,
        winner,
        activated,
        prediction: ProbVector(sum),
        member_outputs: outputs,
    }
}

/// Thresholded decision: a class, or rejection as the extra class `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Class(usize),
    Reject,
}

impl Decision {
    pub fn is_reject(self) -> bool {
        matches!(self, Decision::Reject)
    }
}

/// Returns the argmax class when its probability is strictly above `tau`.
pub fn decide(prediction: &ProbVector, tau: f64) -> Decision {
    let k = prediction.argmax();
    if prediction.get(k) > tau {
        Decision::Class(k)
    } else {
        Decision::Reject
    }
}

/// Voter-mass bound in a disagreement vote.
#[derive(Debug, Clone, PartialEq)]
pub struct VoterMassCheck {
    /// `(1/M) * Σ_{j votes k} h^j_k(x)` per class.
    pub voter_mass: Vec<f64>,
    /// `0.5 + 1/(2M)`.
    pub bound: f64,
    /// `max_k voter_mass_k < bound`.
    pub holds: bool,
    /// `h̄_k(x) - voter_mass_k`, mass contributed by non-voting members.
    pub slack: Vec<f64>,
}

pub fn voter_mass_bound(m: usize) -> f64 {
    0.5 + 1.0 / (2.0 * m as f64)
}

pub fn voter_mass_check(vote: &VoteResult, m: usize) -> Result<VoterMassCheck> {
    if vote.winner.is_some() {
        return Err(contract(
            "voter-mass bound applies to disagreement votes only",
        ));
    }
    if m != vote.num_members() {
        return Err(contract(format!(
            "vote has {} members, M = {m} given",
            vote.num_members()
        )));
    }
    let k = vote.votes.len();
    let mut voter_mass = vec![0.0; k];
    for out in &vote.member_outputs {
        let c = out.argmax();
        voter_mass[c] += out.get(c);
    }
    for v in &mut voter_mass {
        *v /= m as f64;
    }
    let bound = voter_mass_bound(m);
    let max = voter_mass.iter().copied().fold(0.0, f64::max);
    let slack = vote
        .prediction
        .as_slice()
        .iter()
        .zip(&voter_mass)
        .map(|(h, v)| h - v)
        .collect();
    Ok(VoterMassCheck {
        voter_mass,
        bound,
        holds: max < bound,
        slack,
    })
}

/// Trained members, one per expertise domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<Classifier>,
    domains: Vec<ExpertiseDomain>,
    capacities: Vec<usize>,
    seeds: Vec<u64>,
    /// Free-text origin of each member, written to the domains file.
    labels: Vec<String>,
    rule: WinnerRule,
}

impl Ensemble {
    /// Wraps already trained members; each member's class mask is its domain.
    pub fn new(members: Vec<Classifier>, seeds: Vec<u64>, labels: Vec<String>, rule: WinnerRule) -> Result<Self> {
        if members.is_empty() {
            return Err(contract("an ensemble needs at least one member"));
        }
        if seeds.len() != members.len() || labels.len() != members.len() {
            return Err(contract("seeds and labels must match the member count"));
        }
        let k = members[0].num_classes();
        let d = members[0].input_dim();
        if members.iter().any(|m| m.num_classes() != k || m.input_dim() != d) {
            return Err(contract("all members must share input_dim and num_classes"));
        }
        let domains: Vec<ExpertiseDomain> = members.iter().map(|m| m.class_mask().clone()).collect();
        let capacities = capacities(&domains, k);
        Ok(Self {
            members,
            domains,
            capacities,
            seeds,
            labels,
            rule,
        })
    }

    pub fn members(&self) -> &[Classifier] {
        &self.members
    }

    pub fn domains(&self) -> &[ExpertiseDomain] {
        &self.domains
    }

    pub fn capacities(&self) -> &[usize] {
        &self.capacities
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rule(&self) -> WinnerRule {
        self.rule
    }

    pub fn with_rule(mut self, rule: WinnerRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.members[0].num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn vote(&self, features: &[f64]) -> Result<VoteResult> {
        let outputs = self
            .members
            .iter()
            .map(|m| m.forward(features))
            .collect::<Result<Vec<_>>>()?;
        Ok(vote_outputs(outputs, &self.domains, &self.capacities, self.rule))
    }

    pub fn predict(&self, features: &[f64]) -> Result<ProbVector> {
        Ok(self.vote(features)?.prediction)
    }

    /// Writes `domains.txt`, one `member_NN.spnn` per member and `manifest.txt`.
    pub fn save_dir(&self, dir: &Path, train_config_hash: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut domains = String::new();
        for (d, label) in self.domains.iter().zip(&self.labels) {
            let classes: Vec<String> = d.classes().iter().map(|c| c.to_string()).collect();
            writeln!(domains, "{}  # {label}", classes.join(" ")).unwrap();
        }
        fs::write(dir.join("domains.txt"), domains)?;

        let mut manifest = String::new();
        writeln!(manifest, "# specialist ensemble manifest").unwrap();
        writeln!(manifest, "num_classes = {}", self.num_classes()).unwrap();
        writeln!(manifest, "members = {}", self.len()).unwrap();
        writeln!(manifest, "winner_rule = {}", self.rule.as_str()).unwrap();
        writeln!(manifest, "train_config_hash = {train_config_hash}").unwrap();
        let caps: Vec<String> = self.capacities.iter().map(|c| c.to_string()).collect();
        writeln!(manifest, "capacities = {}", caps.join(" ")).unwrap();
        for (j, (m, seed)) in self.members.iter().zip(&self.seeds).enumerate() {
            let file = format!("member_{j:02}.spnn");
            nn::io::save(m, &dir.join(&file))?;
            writeln!(manifest, "member = {j} {file} {seed} {}", nn::io::fingerprint(m)).unwrap();
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let domains_txt = fs::read_to_string(dir.join("domains.txt"))?;
        let labels: Vec<String> = domains_txt
            .lines()
            .map(|l| l.split_once('#').map_or("", |(_, c)| c).trim().to_string())
            .collect();
        let mut rule = WinnerRule::default();
        let mut members = Vec::new();
        let mut seeds = Vec::new();
        for (ln, line) in manifest.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format_err(ln as u64 + 1, "expected key = value"))?;
            match key.trim() {
                "winner_rule" => {
                    rule = WinnerRule::parse(value.trim())
                        .ok_or_else(|| format_err(ln as u64 + 1, "unknown winner rule"))?;
                }
                "member" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() < 3 {
                        return Err(format_err(ln as u64 + 1, "member line needs index, file, seed"));
                    }
                    members.push(nn::io::load(&dir.join(parts[1]))?);
                    seeds.push(
                        parts[2]
                            .parse()
                            .map_err(|_| format_err(ln as u64 + 1, "bad seed"))?,
                    );
                }
                _ => {}
            }
        }
        if labels.len() != members.len() {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "domains.txt lists {} domains, manifest {} members",
                    labels.len(),
                    members.len()
                ),
            });
        }
        Self::new(members, seeds, labels, rule)
    }
}

/// Trains one member per domain of `domains`, on exactly the samples whose
/// label lies in that domain. Member `j` uses seed `cfg.rng_seed + j`.
pub fn build_ensemble(
    dataset: &[LabeledSample],
    domains: &DomainSet,
    arch: &MlpArchitecture,
    cfg: &TrainConfig,
    rule: WinnerRule,
) -> Result<Ensemble> {
    let k = arch.num_classes;
    let mut seen = vec![false; k];
    for s in dataset {
        if s.label >= k {
            return Err(contract(format!("label {} out of range", s.label)));
        }
        seen[s.label] = true;
    }
    if let Some(c) = seen.iter().position(|&s| !s) {
        return Err(contract(format!("training data has no sample of class {c}")));
    }

    let mut members = Vec::with_capacity(domains.len());
    let mut seeds = Vec::with_capacity(domains.len());
    for (j, domain) in domains.domains().iter().enumerate() {
        let subset: Vec<LabeledSample> = dataset
            .iter()
            .filter(|s| domain.contains(s.label))
            .cloned()
            .collect();
        if subset.is_empty() {
            return Err(Error::EmptyDomain {
                domain: j,
                classes: domain.to_string(),
            });
        }
        let seed = cfg.rng_seed.wrapping_add(j as u64);
        members.push(nn::train(&subset, arch, domain, &cfg.with_seed(seed))?);
        seeds.push(seed);
    }
    let labels = (0..domains.len()).map(|j| domains.provenance_label(j)).collect();
    Ensemble::new(members, seeds, labels, rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(c: &[usize], k: usize) -> ExpertiseDomain {
        ExpertiseDomain::new(c.iter().copied(), k).unwrap()
    }

    fn one_hot(k: usize, c: usize) -> ProbVector {
        let mut v = vec![0.0; k];
        v[c] = 1.0;
        ProbVector(v)
    }

    #[test]
    fn decide_is_strict() {
        assert_eq!(decide(&ProbVector(vec![0.6, 0.4]), 0.5), Decision::Class(0));
        assert_eq!(decide(&ProbVector(vec![0.5, 0.5]), 0.5), Decision::Reject);
        assert_eq!(decide(&ProbVector(vec![0.0, 1.0]), 0.0), Decision::Class(1));
    }

    #[test]
    fn bound_for_21_members() {
        assert!((voter_mass_bound(21) - 0.52381).abs() < 1e-5);
        assert!((voter_mass_bound(21) - (0.5 + 1.0 / 42.0)).abs() < 1e-15);
    }

    #[test]
    fn unanimity_gives_one_hot() {
        let domains = vec![dom(&[0, 1], 3), dom(&[0, 2], 3), dom(&[0, 1, 2], 3)];
        let caps = capacities(&domains, 3);
        let outs = vec![one_hot(3, 0); 3];
        let v = vote_outputs(outs, &domains, &caps, WinnerRule::PerClassCapacity);
        assert_eq!(v.winner, Some(0));
        assert_eq!(v.prediction, one_hot(3, 0));
    }

    #[test]
    fn voter_mass_check_rejects_winner_votes() {
        let domains = vec![dom(&[0, 1], 2)];
        let v = vote_outputs(vec![one_hot(2, 0)], &domains, &[1, 1], WinnerRule::PerClassCapacity);
        assert!(voter_mass_check(&v, 1).is_err());
    }

    #[test]
    fn one_hot_disagreement_voter_mass_is_vote_share() {
        // Seven members over three classes, each class in exactly four domains.
        let domains = vec![
            dom(&[0, 1], 3),
            dom(&[0, 2], 3),
            dom(&[1, 2], 3),
            dom(&[0], 3),
            dom(&[1], 3),
            dom(&[2], 3),
            dom(&[0, 1, 2], 3),
        ];
        let caps = capacities(&domains, 3);
        assert_eq!(caps, vec![4, 4, 4]);
        let labels = [0, 0, 1, 0, 1, 2, 2];
        let outs = labels.iter().map(|&c| one_hot(3, c)).collect();
        let v = vote_outputs(outs, &domains, &caps, WinnerRule::PerClassCapacity);
        assert_eq!(v.winner, None);
        let chk = voter_mass_check(&v, 7).unwrap();
        assert_eq!(chk.voter_mass, vec![3.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0]);
        assert!(chk.holds);
        assert!(chk.slack.iter().all(|&s| s.abs() < 1e-15));
    }
}
