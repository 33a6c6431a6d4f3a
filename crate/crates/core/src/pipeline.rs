//! Experiment orchestration shared by the command-line tool and the tests.
//!
//! The in-memory functions ([`build_dataset`], [`train_and_evaluate`],
//! [`transfer`]) run a whole study without touching disk. The `cmd_*`
//! functions run one stage each, reading the previous stage's artifacts from
//! the output directory and writing their own next to a `provenance.txt`.
//!
//! Seeds: every stage derives its own seed from the master seed with
//! [`seed::stage`] and a fixed label (`topologies`, `campaign`, `splits`,
//! `train`, `transfer-topologies-<kind>`, `transfer-campaign-<kind>`,
//! `finetune-select`), so any stage can be rerun alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::{self, MetricsReport};
use crate::features::{self, DatasetSplit, GedfSample, Manifest, SplitFractions, Variant, WINDOW_LENGTHS};
use crate::grid::{build_laplacian, GridCase, NetworkMatrices};
use crate::learn::{self, Checkpoint, Encoder, Model, TrainConfig};
use crate::simulator::{self, CampaignConfig, CampaignSummary, TrajectoryRecord};
use crate::topogen::{self, Topology, TopologyKind};
use crate::{case39, powerflow, seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// `swap4` or `remove1`..`remove3`.
    pub kind: String,
    pub count: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            kind: "swap4".into(),
            count: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// Branch-removal counts, one dataset each.
    pub removals: Vec<usize>,
    pub count: usize,
    /// Share of each transfer dataset used for fine-tuning.
    pub fraction: f64,
    pub window: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            removals: vec![1, 2, 3],
            count: 10,
            fraction: 0.2,
            window: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in case name or path to a case file.
    pub case: String,
    pub output: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` uses all available cores.
    pub workers: Option<usize>,
    pub topologies: TopologyConfig,
    pub campaign: CampaignConfig,
    pub windows: Vec<f64>,
    pub split: SplitFractions,
    pub train: TrainConfig,
    pub transfer: TransferConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            case: "ieee39".into(),
            output: PathBuf::from("runs/default"),
            seed: 2024,
            workers: None,
            topologies: TopologyConfig::default(),
            campaign: CampaignConfig::default(),
            windows: vec![0.05],
            split: SplitFractions::default(),
            train: TrainConfig::default(),
            transfer: TransferConfig::default(),
        }
    }
}

fn check_window(w: f64) -> Result<()> {
    features::window_columns(w).map(|_| ()).map_err(|e| Error::Configuration(e.to_string()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Configuration(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Configuration(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !case39::names().contains(&self.case.as_str()) && !Path::new(&self.case).is_file() {
            return Err(Error::Configuration(format!("case `{}` is neither built in nor an existing file", self.case)));
        }
        self.kind()?;
        if self.windows.is_empty() {
            return Err(Error::Configuration("at least one window length is required".into()));
        }
        for &w in self.windows.iter().chain([&self.transfer.window]) {
            check_window(w)?;
        }
        if self.transfer.removals.iter().any(|m| !(1..=3).contains(m)) {
            return Err(Error::Configuration("transfer removals must lie in 1..=3".into()));
        }
        if !(self.transfer.fraction > 0.0 && self.transfer.fraction < 1.0) {
            return Err(Error::Configuration("transfer fraction must lie in (0, 1)".into()));
        }
        if !(self.campaign.load_low > 0.0 && self.campaign.load_low <= self.campaign.load_high) {
            return Err(Error::Configuration("load range must satisfy 0 < low ≤ high".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> Result<TopologyKind> {
        TopologyKind::parse(&self.topologies.kind)
            .ok_or_else(|| Error::Configuration(format!("unknown topology kind `{}`", self.topologies.kind)))
    }

    pub fn base_case(&self) -> Result<GridCase> {
        if case39::names().contains(&self.case.as_str()) {
            return case39::load_case(&self.case);
        }
        let case = GridCase::from_text(&fs::read_to_string(&self.case)?)?;
        let sol = powerflow::solve(&case, &vec![1.0; case.n_buses()])?;
        if !sol.converged {
            return Err(Error::InvalidCase(format!("power flow of `{}` does not converge", self.case)));
        }
        Ok(case)
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(case39::sha256_hex(self.to_toml()?.as_bytes()))
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        seed::stage(self.seed, label)
    }

    /// Training config with its seed derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed("train"),
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Scl,
    Sl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Scl => "scl",
            Method::Sl => "sl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "scl" => Some(Method::Scl),
            "sl" => Some(Method::Sl),
            _ => None,
        }
    }
}

/// Directory name for a window length, e.g. `w050` for 0.05 s.
pub fn window_tag(w: f64) -> String {
    format!("w{:03}", (w * 1000.0).round() as u64)
}

/// Generates `count` topologies; any exhausted seed fails the whole batch
/// with a per-seed listing.
pub fn generate_topologies(base: &GridCase, kind: TopologyKind, count: usize, stage_seed: u64) -> Result<Vec<Topology>> {
    let results = topogen::generate_many(base, kind, count, stage_seed);
    let mut out = Vec::with_capacity(count);
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => out.push(t),
            Err(e) => failures.push(format!("index {i} (seed {}): {e}", seed::item(stage_seed, i as u64))),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        log::error!("topology generation failed:\n{}", failures.join("\n"));
        Err(Error::GenerationExhausted {
            attempts: topogen::MAX_REJECTIONS,
        })
    }
}

/// `A` and `A†` for a topology, from its base-load voltage magnitudes.
pub fn topology_matrices(case: &GridCase) -> Result<NetworkMatrices> {
    let sol = powerflow::solve(case, &vec![1.0; case.n_buses()])?;
    if !sol.converged {
        return Err(Error::Numerical(format!("base-load power flow of `{}` does not converge", case.name)));
    }
    build_laplacian(case, &sol.vmag)
}

/// Samples for every (variant, window) pair, aligned with `keys`.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// `(topology_id, scenario_id)` in sweep order.
    pub keys: Vec<(String, String)>,
    pub windows: Vec<f64>,
    pub samples: BTreeMap<(Variant, String), Vec<GedfSample>>,
    pub summary: CampaignSummary,
}

impl Dataset {
    pub fn get(&self, variant: Variant, window: f64) -> Result<&[GedfSample]> {
        self.samples
            .get(&(variant, window_tag(window)))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidInput(format!("dataset has no {} samples for window {window}", variant.as_str())))
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.values().next().map_or_else(Vec::new, |s| s.iter().map(|x| x.label).collect())
    }
}

/// Extracts every (variant, window) sample of one record; `None` if any
/// window does not fit the stored trajectory.
fn extract_all(record: &TrajectoryRecord, matrices: &NetworkMatrices, windows: &[f64]) -> Option<Vec<((Variant, String), GedfSample)>> {
    let mut out = Vec::new();
    for &w in windows {
        for variant in [Variant::Gedf, Variant::Raw] {
            match features::extract(record, matrices, w, variant) {
                Ok(s) => out.push(((variant, window_tag(w)), s)),
                Err(e) => {
                    log::warn!("scenario {} dropped: {e}", record.scenario.id);
                    return None;
                }
            }
        }
    }
    Some(out)
}

/// Simulates the campaign and extracts features on the fly, keeping only
/// the feature matrices in memory.
pub fn build_dataset(topologies: &[Topology], campaign: &CampaignConfig, windows: &[f64], stage_seed: u64) -> Result<Dataset> {
    for &w in windows {
        check_window(w)?;
    }
    let matrices = topologies
        .iter()
        .map(|t| topology_matrices(&t.case))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset {
        windows: windows.to_vec(),
        ..Default::default()
    };
    let summary = simulator::run_campaign(topologies, campaign, stage_seed, |ti, rec| {
        if let Some(items) = extract_all(&rec, &matrices[ti], windows) {
            ds.keys.push((rec.scenario.topology_id.clone(), rec.scenario.id.clone()));
            for (key, s) in items {
                ds.samples.entry(key).or_default().push(s);
            }
        }
    })?;
    ds.summary = summary;
    Ok(ds)
}

fn pick(samples: &[GedfSample], idx: &[usize]) -> Vec<GedfSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

pub fn train(method: Method, train: &[GedfSample], val: &[GedfSample], config: &TrainConfig) -> Result<(Model, learn::History)> {
    match method {
        Method::Scl => learn::train_scl(train, val, config),
        Method::Sl => learn::train_sl(train, val, config),
    }
}

pub fn evaluate_model(model: &Model, samples: &[GedfSample]) -> Result<MetricsReport> {
    let inputs: Vec<_> = samples.iter().map(|s| &s.matrix).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    eval::evaluate(&model.logits(&inputs)?, &labels)
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub model: Model,
    pub history: learn::History,
    /// T1 then T2.
    pub reports: Vec<MetricsReport>,
}

impl Outcome {
    pub fn t1(&self) -> &MetricsReport {
        &self.reports[0]
    }

    pub fn t2(&self) -> &MetricsReport {
        &self.reports[1]
    }
}

/// Trains on the split's train part and reports T1 and T2.
pub fn train_and_evaluate(samples: &[GedfSample], split: &DatasetSplit, method: Method, config: &TrainConfig) -> Result<Outcome> {
    let variant = samples.first().map_or("", |s| s.variant.as_str());
    let (model, history) = train(method, &pick(samples, &split.train), &pick(samples, &split.validation), config)?;
    let mut reports = Vec::new();
    for (name, idx) in [("T1", &split.t1), ("T2", &split.t2)] {
        let r = evaluate_model(&model, &pick(samples, idx))?;
        reports.push(r.with_context(name, variant, method.as_str(), config.seed));
    }
    Ok(Outcome { model, history, reports })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub fine_tune_count: usize,
    pub evaluation_count: usize,
    /// Classifier on the transferred encoder.
    pub transferred: MetricsReport,
    /// Classifier on a randomly initialized frozen encoder, same data.
    pub random_encoder: MetricsReport,
}

/// Fine-tunes a fresh classifier on a stratified `fraction` of `samples`
/// (by topology) and evaluates on the rest, for the transferred encoder
/// and for a random one.
pub fn transfer(encoder: &Encoder, samples: &[GedfSample], fraction: f64, config: &TrainConfig, select_seed: u64, split_name: &str) -> Result<TransferOutcome> {
    let groups: Vec<String> = samples.iter().map(|s| s.topology_id.clone()).collect();
    let (chosen, rest) = features::stratified_subset(&groups, fraction, select_seed);
    if chosen.is_empty() || rest.is_empty() {
        return Err(Error::InvalidInput(format!("{} samples cannot be split {fraction}/{}", samples.len(), 1.0 - fraction)));
    }
    let tune = pick(samples, &chosen);
    let test = pick(samples, &rest);
    let variant = samples[0].variant.as_str();
    let (classifier, _) = learn::finetune(encoder, &tune, config)?;
    let transferred = evaluate_model(
        &Model {
            encoder: encoder.clone(),
            classifier,
        },
        &test,
    )?
    .with_context(split_name, variant, "finetune", config.seed);
    let (rows, cols) = encoder.input_shape;
    let random = Encoder::init(rows, cols, seed::stage(config.seed, "random-encoder"))?;
    let (classifier, _) = learn::finetune(&random, &tune, config)?;
    let random_encoder = evaluate_model(&Model { encoder: random, classifier }, &test)?.with_context(split_name, variant, "random", config.seed);
    Ok(TransferOutcome {
        fine_tune_count: chosen.len(),
        evaluation_count: rest.len(),
        transferred,
        random_encoder,
    })
}

// ---------------------------------------------------------------------------
// On-disk stages

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn provenance(config: &ExperimentConfig, dir: &Path, stage: &str, stage_seed: u64) -> Result<()> {
    let text = format!(
        "config_sha256 {}\nmaster_seed {}\nstage {stage}\nstage_seed {stage_seed}\n",
        config.hash()?,
        config.seed
    );
    write(&dir.join("provenance.txt"), text)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn topologies_dir(config: &ExperimentConfig) -> PathBuf {
    config.output.join("topologies")
}

pub fn records_dir(config: &ExperimentConfig) -> PathBuf {
    config.output.join("records")
}

pub fn dataset_dir(config: &ExperimentConfig, window: f64) -> PathBuf {
    config.output.join("datasets").join(window_tag(window))
}

pub fn model_path(config: &ExperimentConfig, method: Method, variant: Variant, window: f64) -> PathBuf {
    config
        .output
        .join("models")
        .join(format!("{}-{}-{}.ckpt", method.as_str(), variant.as_str(), window_tag(window)))
}

pub fn report_path(config: &ExperimentConfig, name: &str) -> PathBuf {
    config.output.join("reports").join(format!("{name}.json"))
}

/// Writes one `<id>.topo` file per topology plus `manifest.txt`.
pub fn cmd_gen_topologies(config: &ExperimentConfig) -> Result<Vec<Topology>> {
    config.validate()?;
    let base = config.base_case()?;
    let stage_seed = config.stage_seed("topologies");
    let topologies = generate_topologies(&base, config.kind()?, config.topologies.count, stage_seed)?;
    let dir = topologies_dir(config);
    let mut manifest = String::new();
    for t in &topologies {
        write(&dir.join(format!("{}.topo", t.id)), t.to_text())?;
        manifest.push_str(&t.id);
        manifest.push('\n');
    }
    write(&dir.join("manifest.txt"), manifest)?;
    provenance(config, &dir, "topologies", stage_seed)?;
    Ok(topologies)
}

pub fn load_topologies(config: &ExperimentConfig) -> Result<Vec<Topology>> {
    let dir = topologies_dir(config);
    read_lines(&dir.join("manifest.txt"))?
        .iter()
        .map(|id| Topology::from_text(&fs::read_to_string(dir.join(format!("{id}.topo")))?))
        .collect()
}

/// Runs the campaign over the saved topologies and writes one record per
/// scenario, `failed.txt` and `summary.json`. Fails with a numerical error
/// when fewer than 95% of scenarios succeed.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<CampaignSummary> {
    config.validate()?;
    let topologies = load_topologies(config)?;
    let stage_seed = config.stage_seed("campaign");
    let dir = records_dir(config);
    let mut io_error = None;
    let mut written = Vec::new();
    let summary = simulator::run_campaign(&topologies, &config.campaign, stage_seed, |_, rec| {
        let path = dir.join(&rec.scenario.topology_id).join(format!("{}.rec", rec.scenario.id));
        if let Err(e) = write(&path, simulator::write_record(&rec)) {
            io_error.get_or_insert(e);
        }
        written.push(rec.scenario.id.clone());
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let mut expected = Vec::new();
    for (ti, t) in topologies.iter().enumerate() {
        expected.extend(simulator::scenarios_for(t, ti, &config.campaign, stage_seed)?.into_iter().map(|s| s.id));
    }
    let written: std::collections::HashSet<String> = written.into_iter().collect();
    let failed: Vec<String> = expected.into_iter().filter(|id| !written.contains(id)).collect();
    write(&dir.join("failed.txt"), failed.join("\n"))?;
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    provenance(config, &dir, "campaign", stage_seed)?;
    log::info!(
        "{} scenarios, {} stable, {} unstable, {} failed (ratio {:.2}:1)",
        summary.scenarios,
        summary.stable,
        summary.unstable,
        summary.failed,
        summary.stable_ratio()
    );
    if summary.success_rate() < 0.95 {
        return Err(Error::Numerical(format!(
            "only {:.1}% of scenarios succeeded",
            100.0 * summary.success_rate()
        )));
    }
    Ok(summary)
}

/// Reads every record of the saved campaign in sweep order, failing with a
/// list of gaps if any record is missing without being logged as failed.
fn load_records(config: &ExperimentConfig, topologies: &[Topology]) -> Result<Vec<(usize, TrajectoryRecord)>> {
    let dir = records_dir(config);
    let stage_seed = config.stage_seed("campaign");
    let failed: std::collections::HashSet<String> = read_lines(&dir.join("failed.txt"))?.into_iter().collect();
    let mut out = Vec::new();
    let mut gaps = Vec::new();
    for (ti, t) in topologies.iter().enumerate() {
        for sc in simulator::scenarios_for(t, ti, &config.campaign, stage_seed)? {
            let path = dir.join(&t.id).join(format!("{}.rec", sc.id));
            match fs::read_to_string(&path) {
                Ok(text) => out.push((ti, simulator::read_record(&text)?)),
                Err(_) if failed.contains(&sc.id) => {}
                Err(_) => gaps.push(path.display().to_string()),
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::InvalidInput(format!("missing trajectories:\n{}", gaps.join("\n"))));
    }
    Ok(out)
}

fn split_sections(split: &DatasetSplit) -> [(&'static str, &Vec<usize>); 4] {
    [
        ("train", &split.train),
        ("validation", &split.validation),
        ("t1", &split.t1),
        ("t2", &split.t2),
    ]
}

/// Writes gedf and raw samples for every configured window, and one
/// manifest per window listing the split of each variant.
pub fn cmd_extract(config: &ExperimentConfig) -> Result<DatasetSplit> {
    config.validate()?;
    let topologies = load_topologies(config)?;
    let matrices = topologies
        .iter()
        .map(|t| topology_matrices(&t.case))
        .collect::<Result<Vec<_>>>()?;
    let records = load_records(config, &topologies)?;
    let extracted: Vec<_> = crate::par::map(&records, |(ti, rec)| extract_all(rec, &matrices[*ti], &config.windows));
    let mut keys = Vec::new();
    let mut by_key: BTreeMap<(Variant, String), Vec<GedfSample>> = BTreeMap::new();
    for ((_, rec), items) in records.iter().zip(extracted) {
        if let Some(items) = items {
            keys.push((rec.scenario.topology_id.clone(), rec.scenario.id.clone()));
            for (k, s) in items {
                by_key.entry(k).or_default().push(s);
            }
        }
    }
    let split_seed = config.stage_seed("splits");
    let split = features::make_splits(&keys, &config.split, split_seed)?;
    for &w in &config.windows {
        let root = dataset_dir(config, w);
        let mut manifest = Manifest::default();
        for variant in [Variant::Gedf, Variant::Raw] {
            let samples = &by_key[&(variant, window_tag(w))];
            let paths: Vec<PathBuf> = samples
                .iter()
                .map(|s| features::sample_path(Path::new(""), variant, &s.topology_id, &s.scenario_id))
                .collect();
            for (s, p) in samples.iter().zip(&paths) {
                write(&root.join(p), features::write_sample(s))?;
            }
            for (name, idx) in split_sections(&split) {
                manifest
                    .splits
                    .insert(format!("{}/{name}", variant.as_str()), idx.iter().map(|&i| paths[i].clone()).collect());
            }
        }
        write(&root.join("manifest.txt"), features::write_manifest(&manifest))?;
        provenance(config, &root, "splits", split_seed)?;
    }
    Ok(split)
}

/// Samples of one split as recorded in a window's manifest.
pub fn load_split(config: &ExperimentConfig, window: f64, variant: Variant, split: &str) -> Result<Vec<GedfSample>> {
    let root = dataset_dir(config, window);
    let manifest = features::read_manifest(&fs::read_to_string(root.join("manifest.txt"))?)?;
    let key = format!("{}/{split}", variant.as_str());
    let paths = manifest
        .splits
        .get(&key)
        .ok_or_else(|| Error::InvalidInput(format!("manifest has no `{key}` section")))?;
    paths
        .iter()
        .map(|p| features::read_sample(&fs::read_to_string(root.join(p))?))
        .collect()
}

/// Trains one (method, variant, window) model and saves its checkpoint and
/// history table.
pub fn cmd_train(config: &ExperimentConfig, method: Method, variant: Variant, window: f64) -> Result<Model> {
    config.validate()?;
    check_window(window)?;
    let train_set = load_split(config, window, variant, "train")?;
    let val_set = load_split(config, window, variant, "validation")?;
    let tc = config.train_config();
    let (model, history) = train(method, &train_set, &val_set, &tc)?;
    let mut meta = BTreeMap::new();
    meta.insert("method".to_string(), method.as_str().to_string());
    meta.insert("variant".to_string(), variant.as_str().to_string());
    meta.insert("window".to_string(), window_tag(window));
    meta.insert("config_sha256".to_string(), config.hash()?);
    let ckpt = Checkpoint {
        model: model.clone(),
        config: tc,
        meta,
    };
    let path = model_path(config, method, variant, window);
    write(&path, ckpt.to_bytes()?)?;
    write(&path.with_extension("history.txt"), history.to_table())?;
    Ok(model)
}

/// Loads a checkpoint and checks it belongs to this configuration.
pub fn load_model(config: &ExperimentConfig, method: Method, variant: Variant, window: f64) -> Result<Checkpoint> {
    let path = model_path(config, method, variant, window);
    let ckpt = Checkpoint::from_bytes(&fs::read(&path)?)?;
    let expect = [
        ("method", method.as_str().to_string()),
        ("variant", variant.as_str().to_string()),
        ("window", window_tag(window)),
        ("config_sha256", config.hash()?),
    ];
    for (k, v) in expect {
        if ckpt.meta.get(k) != Some(&v) {
            return Err(Error::Configuration(format!(
                "checkpoint {} has {k} = {:?}, expected {v}",
                path.display(),
                ckpt.meta.get(k)
            )));
        }
    }
    if ckpt.config != config.train_config() {
        return Err(Error::Configuration(format!("checkpoint {} was trained with a different config", path.display())));
    }
    Ok(ckpt)
}

/// Evaluates a saved model on T1 and T2 and writes the report file.
pub fn cmd_eval(config: &ExperimentConfig, method: Method, variant: Variant, window: f64) -> Result<Vec<MetricsReport>> {
    config.validate()?;
    let ckpt = load_model(config, method, variant, window)?;
    let mut reports = Vec::new();
    for (name, split) in [("T1", "t1"), ("T2", "t2")] {
        let samples = load_split(config, window, variant, split)?;
        let r = evaluate_model(&ckpt.model, &samples)?.with_context(name, variant.as_str(), method.as_str(), ckpt.config.seed);
        reports.push(r);
    }
    let name = format!("{}-{}-{}", method.as_str(), variant.as_str(), window_tag(window));
    write(&report_path(config, &name), eval::to_json(&reports)?)?;
    Ok(reports)
}

/// Builds the remove-m datasets, fine-tunes on the configured fraction of
/// each with the saved encoder, and writes one report per dataset.
pub fn cmd_finetune(config: &ExperimentConfig, method: Method, variant: Variant) -> Result<Vec<TransferOutcome>> {
    config.validate()?;
    let window = config.transfer.window;
    let ckpt = load_model(config, method, variant, window)?;
    let base = config.base_case()?;
    let tc = config.train_config();
    let mut outcomes = Vec::new();
    for (k, &m) in config.transfer.removals.iter().enumerate() {
        let kind = TopologyKind::RemoveM(m);
        let label = kind.label();
        let topologies = generate_topologies(&base, kind, config.transfer.count, config.stage_seed(&format!("transfer-topologies-{label}")))?;
        let ds = build_dataset(&topologies, &config.campaign, &[window], config.stage_seed(&format!("transfer-campaign-{label}")))?;
        let samples = ds.get(variant, window)?;
        let split_name = format!("D{}", k + 1);
        let outcome = transfer(
            &ckpt.model.encoder,
            samples,
            config.transfer.fraction,
            &tc,
            config.stage_seed("finetune-select"),
            &split_name,
        )?;
        let name = format!("finetune-{}-{}-{}-{label}", method.as_str(), variant.as_str(), window_tag(window));
        write(&report_path(config, &name), serde_json::to_string_pretty(&outcome)?)?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Collects every saved report into `report.txt` and `report.json`.
pub fn cmd_report(config: &ExperimentConfig) -> Result<String> {
    let dir = config.output.join("reports");
    let mut names: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    names.sort();
    let mut reports = Vec::new();
    for p in names {
        let text = fs::read_to_string(&p)?;
        if let Ok(r) = serde_json::from_str::<Vec<MetricsReport>>(&text) {
            reports.extend(r);
        } else {
            let t: TransferOutcome = serde_json::from_str(&text)?;
            reports.push(t.transferred);
            reports.push(t.random_encoder);
        }
    }
    let table = eval::format_table(&reports);
    write(&config.output.join("report.txt"), &table)?;
    write(&config.output.join("report.json"), eval::to_json(&reports)?)?;
    Ok(table)
}

/// All configured window lengths must be legal; exposed for argument
/// parsing.
pub fn parse_window(s: &str) -> Result<f64> {
    let w: f64 = s.parse().map_err(|_| Error::Configuration(format!("bad window `{s}`")))?;
    check_window(w)?;
    Ok(WINDOW_LENGTHS.iter().copied().find(|x| (x - w).abs() < 1e-9).unwrap_or(w))
}
