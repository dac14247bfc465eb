//! Resumable experiment pipeline.
//!
//! Every stage reads its inputs from the run directory, writes its outputs
//! there and leaves a stamp listing them with the config hash. A stage whose
//! stamp matches the current hash and whose outputs all exist is skipped.

use std::cell::OnceCell;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use specens::attacks::{self, AdversarialSample, AttackConfig, AttackSource, AttackSurface};
use specens::evaluation::{
    self, adv_counts, adversarial_outcomes, clean_counts, clean_outcomes, select_threshold, tau_grid,
    whitebox_success_rate, DetectionRow, RiskCurve, SuccessRateReport, ThresholdMode,
};
use specens::nn::io as model_io;
use specens::specialization::{compute_fooling_matrix, derive_domains, DomainSet, FoolingMatrix};
use specens::{csvio, decide, nn, Classifier, Decision, Ensemble, ExpertiseDomain, LabeledSample, Result};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::data::{self, DatasetBundle};
use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Train,
    FoolingMatrix,
    DeriveDomains,
    BuildEnsemble,
    Attack,
    Sweep,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Train,
        Stage::FoolingMatrix,
        Stage::DeriveDomains,
        Stage::BuildEnsemble,
        Stage::Attack,
        Stage::Sweep,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::FoolingMatrix => "fooling-matrix",
            Stage::DeriveDomains => "derive-domains",
            Stage::BuildEnsemble => "build-ensemble",
            Stage::Attack => "attack",
            Stage::Sweep => "sweep",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

/// Models compared in the detection and white-box tables.
pub const VICTIMS: [&str; 3] = ["naive", "pure", "specialists"];
/// Black-box adversary sets, generated on the substitute.
pub const BLACKBOX_SETS: [&str; 2] = ["fgs", "tfgs"];

pub mod paths {
    pub const DATASET: &str = "dataset.txt";
    pub const CONFIG: &str = "config.toml";
    pub const NAIVE: &str = "models/naive.spnn";
    pub const SUBSTITUTE: &str = "models/substitute.spnn";
    pub const PURE: &str = "models/pure";
    pub const SPECIALISTS: &str = "models/specialists";
    pub const FOOLING_DIR: &str = "fooling";
    pub const FOOLING_ADV: &str = "fooling/adversaries.csv";
    pub const DOMAINS: &str = "domains.txt";
    pub const THRESHOLDS: &str = "thresholds.csv";
    pub const TABLE1: &str = "table1.txt";
    pub const TABLE1_CSV: &str = "table1.csv";
    pub const TABLE3: &str = "table3.txt";
    pub const TABLE3_CSV: &str = "table3.csv";

    pub fn blackbox(set: &str) -> String {
        format!("adversaries/blackbox_{set}.csv")
    }

    pub fn curve(model: &str) -> String {
        format!("curves/curve_{model}.csv")
    }

    pub fn decisions(model: &str, set: &str) -> String {
        format!("logs/decisions_{model}_{set}.csv")
    }

    pub fn whitebox(model: &str, attack: &str) -> String {
        format!("whitebox/{model}_{attack}.csv")
    }
}

/// Seed offsets keep every trained model's stream distinct.
const SUBSTITUTE_SEED: u64 = 1;
const PURE_SEED: u64 = 100;
const SPECIALIST_SEED: u64 = 1000;

pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
    hash: String,
    data: OnceCell<DatasetBundle>,
    verbose: bool,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> std::result::Result<Self, HarnessError> {
        cfg.validate()?;
        let out = cfg.output_dir.clone();
        let hash = cfg.hash();
        Ok(Self {
            cfg,
            out,
            hash,
            data: OnceCell::new(),
            verbose: false,
        })
    }

    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[{}] {}", self.cfg.name, msg.as_ref());
        }
    }

    /// Runs `stages` in order; fresh stages are skipped unless `force`.
    pub fn run(&self, stages: &[Stage], force: bool) -> std::result::Result<Vec<(Stage, StageStatus)>, HarnessError> {
        let stage_err = |stage: Stage| move |source| HarnessError::Stage { stage: stage.name(), source };
        fs::create_dir_all(&self.out)
            .map_err(|e| stage_err(stages.first().copied().unwrap_or(Stage::Train))(e.into()))?;
        let mut report = Vec::new();
        for &stage in stages {
            if !force && self.is_fresh(stage) {
                self.log(format!("{}: up to date", stage.name()));
                report.push((stage, StageStatus::Skipped));
                continue;
            }
            self.log(format!("{}: running", stage.name()));
            let outputs = self.run_stage(stage).map_err(stage_err(stage))?;
            self.write_stamp(stage, &outputs).map_err(stage_err(stage))?;
            report.push((stage, StageStatus::Ran));
        }
        Ok(report)
    }

    pub fn run_all(&self, force: bool) -> std::result::Result<Vec<(Stage, StageStatus)>, HarnessError> {
        self.run(&Stage::ALL, force)
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.out.join("stamps").join(format!("{}.stamp", stage.name()))
    }

    fn write_stamp(&self, stage: Stage, outputs: &[String]) -> Result<()> {
        let mut s = format!("config_hash = {}\n", self.hash);
        for o in outputs {
            writeln!(s, "output = {o}").unwrap();
        }
        let p = self.stamp_path(stage);
        fs::create_dir_all(p.parent().unwrap())?;
        fs::write(p, s)?;
        Ok(())
    }

    /// Stamp present, hash matching and every listed output on disk.
    pub fn is_fresh(&self, stage: Stage) -> bool {
        let Ok(text) = fs::read_to_string(self.stamp_path(stage)) else {
            return false;
        };
        let mut hash_ok = false;
        for line in text.lines() {
            match line.split_once(" = ") {
                Some(("config_hash", h)) => hash_ok = h == self.hash,
                Some(("output", o)) if !self.out.join(o).exists() => return false,
                _ => {}
            }
        }
        hash_ok
    }

    fn run_stage(&self, stage: Stage) -> Result<Vec<String>> {
        match stage {
            Stage::Train => self.stage_train(),
            Stage::FoolingMatrix => self.stage_fooling(),
            Stage::DeriveDomains => self.stage_domains(),
            Stage::BuildEnsemble => self.stage_build(),
            Stage::Attack => self.stage_attack(),
            Stage::Sweep => self.stage_sweep(),
            Stage::Evaluate => self.stage_evaluate(),
        }
    }

    pub fn data(&self) -> Result<&DatasetBundle> {
        if let Some(d) = self.data.get() {
            return Ok(d);
        }
        let d = match &self.cfg.dataset {
            DatasetSpec::Mnist {
                dir,
                train_limit,
                test_limit,
            } => data::load_mnist(dir, *train_limit, *test_limit)?,
            DatasetSpec::Synthetic {
                num_classes,
                dim,
                train_per_class,
                test_per_class,
                spread,
                seed,
            } => data::make_synthetic(*num_classes, *dim, *train_per_class, *test_per_class, *spread, *seed)?,
        };
        Ok(self.data.get_or_init(|| d))
    }

    fn arch(&self) -> Result<specens::MlpArchitecture> {
        let d = self.data()?;
        self.cfg
            .architecture(d.input_dim, d.num_classes)
            .map_err(|e| specens::Error::InvalidConfig(e.to_string()))
    }

    fn write_text(&self, rel: &str, body: &str) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(p, format!("# config_hash={}\n{body}", self.hash))?;
        Ok(())
    }

    fn ensure_parent(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn load_classifier(&self, rel: &str) -> Result<Classifier> {
        model_io::load(&self.path(rel))
    }

    pub fn load_ensemble(&self, rel: &str) -> Result<Ensemble> {
        Ensemble::load_dir(&self.path(rel))
    }

    /// Loads one of the compared models by id.
    pub fn load_victim(&self, id: &str) -> Result<Box<dyn AttackSurface>> {
        Ok(match id {
            "naive" => Box::new(self.load_classifier(paths::NAIVE)?),
            "substitute" => Box::new(self.load_classifier(paths::SUBSTITUTE)?),
            "pure" => Box::new(self.load_ensemble(paths::PURE)?),
            "specialists" => Box::new(self.load_ensemble(paths::SPECIALISTS)?),
            other => return Err(specens::Error::ContractViolation(format!("unknown model {other}"))),
        })
    }

    fn ensemble_outputs(dir: &str, ens: &Ensemble) -> Vec<String> {
        let mut v = vec![format!("{dir}/manifest.txt"), format!("{dir}/domains.txt")];
        v.extend((0..ens.len()).map(|j| format!("{dir}/member_{j:02}.spnn")));
        v
    }

    fn stage_train(&self) -> Result<Vec<String>> {
        let d = self.data()?;
        let arch = self.arch()?;
        let full = ExpertiseDomain::full(d.num_classes);
        self.write_text(paths::DATASET, &d.describe())?;
        fs::write(self.path(paths::CONFIG), self.cfg.to_toml())?;

        let seed = self.cfg.seed;
        self.log("training naive model");
        let naive = nn::train(&d.train, &arch, &full, &self.cfg.train_config(seed))?;
        model_io::save(&naive, &self.ensure_parent(paths::NAIVE)?)?;
        self.log("training substitute model");
        let sub = nn::train(&d.train, &arch, &full, &self.cfg.train_config(seed + SUBSTITUTE_SEED))?;
        model_io::save(&sub, &self.path(paths::SUBSTITUTE))?;

        let n = self.cfg.ensemble.pure_members;
        let mut members = Vec::with_capacity(n);
        let mut seeds = Vec::with_capacity(n);
        for j in 0..n as u64 {
            self.log(format!("training pure-ensemble member {}/{n}", j + 1));
            let s = seed + PURE_SEED + j;
            members.push(nn::train(&d.train, &arch, &full, &self.cfg.train_config(s))?);
            seeds.push(s);
        }
        let labels = (0..n).map(|j| format!("generalist {j}")).collect();
        let pure = Ensemble::new(members, seeds, labels, self.cfg.winner_rule().unwrap_or_default())?;
        pure.save_dir(&self.path(paths::PURE), &self.hash)?;

        let mut outputs: Vec<String> = [paths::DATASET, paths::CONFIG, paths::NAIVE, paths::SUBSTITUTE]
            .map(String::from)
            .to_vec();
        outputs.extend(Self::ensemble_outputs(paths::PURE, &pure));
        Ok(outputs)
    }

    fn stage_fooling(&self) -> Result<Vec<String>> {
        let d = self.data()?;
        let naive = self.load_classifier(paths::NAIVE)?;
        let cfg = AttackConfig::new(self.cfg.fooling.epsilon, 1);
        let (fm, advs) = compute_fooling_matrix(&naive, &d.train, &cfg, self.cfg.fooling.per_class, "naive")?;
        let dir = self.path(paths::FOOLING_DIR);
        fs::create_dir_all(&dir)?;
        fm.save(&dir, "fooling", &self.hash)?;
        let adv_path = self.path(paths::FOOLING_ADV);
        attacks::csv::write(&adv_path, &self.hash, &advs)?;
        attacks::csv::write_meta(
            &adv_path,
            &self.hash,
            &model_io::fingerprint(&naive),
            &cfg,
            &[("samples", "train".into()), ("per_class", self.cfg.fooling.per_class.to_string())],
        )?;
        Ok(vec![
            "fooling/fooling_rates.csv".into(),
            "fooling/fooling_counts.csv".into(),
            paths::FOOLING_ADV.into(),
            format!("{}.meta", paths::FOOLING_ADV),
        ])
    }

    pub fn load_fooling_matrix(&self) -> Result<FoolingMatrix> {
        FoolingMatrix::load_counts(&self.path("fooling/fooling_counts.csv"))
    }

    fn stage_domains(&self) -> Result<Vec<String>> {
        let fm = self.load_fooling_matrix()?;
        let agg = self
            .cfg
            .aggregator()
            .map_err(|e| specens::Error::InvalidConfig(e.to_string()))?;
        let ds = derive_domains(&fm, agg)?;
        ds.save(&self.path(paths::DOMAINS))?;
        self.log(format!("{} expertise domains", ds.len()));
        Ok(vec![paths::DOMAINS.into()])
    }

    fn stage_build(&self) -> Result<Vec<String>> {
        let d = self.data()?;
        let ds = DomainSet::load(&self.path(paths::DOMAINS))?;
        let arch = self.arch()?;
        let rule = self
            .cfg
            .winner_rule()
            .map_err(|e| specens::Error::InvalidConfig(e.to_string()))?;
        let cfg = self.cfg.train_config(self.cfg.seed + SPECIALIST_SEED);
        let ens = specens::build_ensemble(&d.train, &ds, &arch, &cfg, rule)?;
        ens.save_dir(&self.path(paths::SPECIALISTS), &self.hash)?;
        Ok(Self::ensemble_outputs(paths::SPECIALISTS, &ens))
    }

    fn stage_attack(&self) -> Result<Vec<String>> {
        let d = self.data()?;
        let sub = self.load_classifier(paths::SUBSTITUTE)?;
        let n = self.cfg.blackbox.num_adversaries;
        let clean: Vec<&LabeledSample> = d
            .test
            .iter()
            .filter(|s| matches!(sub.forward(&s.features), Ok(p) if p.argmax() == s.label))
            .take(n)
            .collect();
        if clean.len() < n {
            return Err(specens::Error::ContractViolation(format!(
                "substitute classifies only {} test samples correctly, {n} adversaries requested",
                clean.len()
            )));
        }
        let fgs_cfg = AttackConfig::new(self.cfg.blackbox.fgs_epsilon, 1);
        let tfgs_base = AttackConfig::new(self.cfg.blackbox.tfgs_epsilon, 1);
        let mut fgs_set = Vec::with_capacity(n);
        let mut tfgs_set = Vec::with_capacity(n);
        for s in &clean {
            fgs_set.push(attacks::fgs(&sub, s, &fgs_cfg, "substitute")?);
            let target = attacks::least_likely_target(&sub, &s.features, s.label)?;
            tfgs_set.push(attacks::tfgs(&sub, s, &tfgs_base.clone().targeted(target), "substitute")?);
        }
        let fp = model_io::fingerprint(&sub);
        let mut outputs = Vec::new();
        for (set, advs, cfg, target) in [
            ("fgs", &fgs_set, &fgs_cfg, "none"),
            ("tfgs", &tfgs_set, &tfgs_base, "least-likely"),
        ] {
            let rel = paths::blackbox(set);
            let p = self.ensure_parent(&rel)?;
            attacks::csv::write(&p, &self.hash, advs)?;
            attacks::csv::write_meta(
                &p,
                &self.hash,
                &fp,
                cfg,
                &[
                    ("target", target.into()),
                    ("samples", "test, correctly classified by the substitute".into()),
                ],
            )?;
            outputs.push(rel.clone());
            outputs.push(format!("{rel}.meta"));
        }
        Ok(outputs)
    }

    pub fn load_blackbox(&self, set: &str) -> Result<Vec<AdversarialSample>> {
        attacks::csv::read(&self.path(&paths::blackbox(set)))
    }

    fn threshold_mode(&self, model: &str) -> ThresholdMode {
        if model == "specialists" {
            ThresholdMode::Fixed(self.cfg.evaluation.specialist_tau)
        } else {
            self.cfg.evaluation.baseline_tau.map_or(ThresholdMode::Optimize, ThresholdMode::Fixed)
        }
    }

    fn stage_sweep(&self) -> Result<Vec<String>> {
        let d = self.data()?;
        let sets: Vec<(&str, Vec<AdversarialSample>)> = BLACKBOX_SETS
            .iter()
            .map(|s| Ok((*s, self.load_blackbox(s)?)))
            .collect::<Result<_>>()?;
        let grid = tau_grid();
        let mut outputs = Vec::new();
        let mut rows = Vec::new();
        let mut thresholds = Vec::new();
        for model_id in VICTIMS {
            self.log(format!("sweeping {model_id}"));
            let model = self.load_victim(model_id)?;
            let clean = clean_outcomes(model.as_ref(), &d.test)?;
            let adv: Vec<(&str, Vec<evaluation::SampleOutcome>)> = sets
                .iter()
                .map(|(name, a)| Ok((*name, adversarial_outcomes(model.as_ref(), a)?)))
                .collect::<Result<_>>()?;
            let adv_refs: Vec<(&str, &[evaluation::SampleOutcome])> =
                adv.iter().map(|(n, o)| (*n, o.as_slice())).collect();
            let curve = RiskCurve::compute(&grid, &clean, &adv_refs)?;
            let mode = self.threshold_mode(model_id);
            let tau = select_threshold(&curve, "fgs", mode)?;
            let rel = paths::curve(model_id);
            curve.write_csv(&self.ensure_parent(&rel)?, &self.hash)?;
            outputs.push(rel);

            let record = [("tau_star".to_string(), tau)];
            let log = paths::decisions(model_id, "clean");
            evaluation::write_decision_log(&self.ensure_parent(&log)?, &self.hash, &clean, &record)?;
            outputs.push(log);
            for (name, o) in &adv {
                let log = paths::decisions(model_id, name);
                evaluation::write_decision_log(&self.path(&log), &self.hash, o, &record)?;
                outputs.push(log);
            }

            rows.push(DetectionRow {
                method: model_id.to_string(),
                tau,
                e_d: clean_counts(&clean, tau).risk(),
                e_a: adv.iter().map(|(n, o)| (n.to_string(), adv_counts(o, tau).risk())).collect(),
            });
            let mode_s = match mode {
                ThresholdMode::Optimize => "argmin E_D+E_A over fgs".to_string(),
                ThresholdMode::Fixed(_) => "fixed".to_string(),
            };
            thresholds.push(vec![model_id.to_string(), tau.to_string(), mode_s]);
        }
        csvio::write(
            &self.path(paths::THRESHOLDS),
            &self.hash,
            &["model", "tau_star", "mode"].map(String::from),
            &thresholds,
        )?;
        self.write_text(paths::TABLE1, &evaluation::render_detection_table(&rows))?;
        let mut header = vec!["method".to_string(), "tau".into(), "e_d".into()];
        header.extend(BLACKBOX_SETS.iter().map(|s| format!("e_a_{s}")));
        let csv_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut v = vec![r.method.clone(), r.tau.to_string(), r.e_d.to_string()];
                v.extend(r.e_a.iter().map(|(_, x)| x.to_string()));
                v
            })
            .collect();
        csvio::write(&self.path(paths::TABLE1_CSV), &self.hash, &header, &csv_rows)?;
        outputs.extend([paths::THRESHOLDS, paths::TABLE1, paths::TABLE1_CSV].map(String::from));
        Ok(outputs)
    }

    /// Operating thresholds recorded by the sweep stage.
    pub fn load_thresholds(&self) -> Result<Vec<(String, f64)>> {
        let t = csvio::read(&self.path(paths::THRESHOLDS))?;
        t.rows
            .iter()
            .map(|(ln, r)| Ok((r[0].clone(), csvio::parse(&r[1], *ln, "tau_star")?)))
            .collect()
    }

    pub fn whitebox_attacks(&self) -> [(&'static str, AttackSource, AttackConfig); 3] {
        let w = &self.cfg.whitebox;
        [
            ("fgs", AttackSource::Fgs, w.fgs.attack_config()),
            ("tfgs", AttackSource::Tfgs, w.tfgs.attack_config()),
            ("ifgs", AttackSource::Ifgs, w.ifgs.attack_config()),
        ]
    }

    fn stage_evaluate(&self) -> Result<Vec<String>> {
        let d = self.data()?;
        let taus = self.load_thresholds()?;
        let n = self.cfg.whitebox.num_samples;
        let mut reports: Vec<SuccessRateReport> = Vec::new();
        let mut outputs = Vec::new();
        for model_id in VICTIMS {
            let tau = taus
                .iter()
                .find(|(m, _)| m == model_id)
                .map(|(_, t)| *t)
                .ok_or_else(|| specens::Error::ContractViolation(format!("no threshold for {model_id}")))?;
            let model = self.load_victim(model_id)?;
            let mut ids = Vec::with_capacity(n);
            let mut samples = Vec::with_capacity(n);
            for (i, s) in d.test.iter().enumerate() {
                if samples.len() == n {
                    break;
                }
                if decide(&model.predict(&s.features)?, tau) == Decision::Class(s.label) {
                    ids.push(i);
                    samples.push(s.clone());
                }
            }
            if samples.is_empty() {
                return Err(specens::Error::ContractViolation(format!(
                    "{model_id} accepts no test sample correctly at tau {tau}"
                )));
            }
            for (name, source, cfg) in self.whitebox_attacks() {
                self.log(format!("white-box {name} on {model_id} ({} samples)", samples.len()));
                let rep = whitebox_success_rate(model.as_ref(), model_id, &samples, &cfg, source, tau)?;
                let rel = paths::whitebox(model_id, name);
                let rows: Vec<Vec<String>> = ids
                    .iter()
                    .zip(&samples)
                    .zip(&rep.first_success)
                    .map(|((i, s), f)| vec![i.to_string(), s.label.to_string(), f.map_or(0, |v| v).to_string()])
                    .collect();
                csvio::write(
                    &self.ensure_parent(&rel)?,
                    &self.hash,
                    &["sample_id", "true_label", "first_success_iteration"].map(String::from),
                    &rows,
                )?;
                outputs.push(rel);
                reports.push(rep);
            }
        }
        self.write_text(paths::TABLE3, &evaluation::render_success_table(&reports))?;
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                vec![
                    r.model_id.clone(),
                    r.attack.tag().to_string(),
                    r.t.to_string(),
                    r.tau_star.to_string(),
                    r.n.to_string(),
                    r.success_rate.to_string(),
                ]
            })
            .collect();
        csvio::write(
            &self.path(paths::TABLE3_CSV),
            &self.hash,
            &["model", "attack", "t", "tau_star", "n", "success_rate"].map(String::from),
            &rows,
        )?;
        outputs.extend([paths::TABLE3, paths::TABLE3_CSV].map(String::from));
        Ok(outputs)
    }
}
