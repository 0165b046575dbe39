//! Configuration and the stage functions that chain the modules together:
//! scenario → trajectories → contour → dataset → model → reports.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::contour::{extract_contour, ArrivalContour, ContourConfig, ContourError, ContourExtraction, DbscanConfig, KdeConfig};
use crate::eval::{ablation_report, compute_metrics, naive_baseline, AblationReport, EvalError, MetricsReport};
use crate::fusion::{build_dataset, DatasetConfig, EmbeddingConfig, EmbeddingMode, FeatureSet, FusedDataset, FusionError};
use crate::ingest::{
    assemble_trajectories, closest_point_to_pbg, parse_ais, parse_bookings, parse_weather, IngestError,
    PilotageBooking, Trajectory, WeatherRecord,
};
use crate::synth::{generate_scenario, Scenario, ScenarioConfig, SynthError, AIS_FILE, BOOKINGS_FILE, WEATHER_FILE};
use crate::tcn::{dataset_tensors, train_on_dataset, AdamConfig, EpochLoss, TcnError, TcnHyper, TcnModel, TrainSchedule};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input {0}")]
    MissingInput(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Contour(#[from] ContourError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Tcn(#[from] TcnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourSection {
    /// Density percentile a closest point must exceed.
    pub k: f64,
    /// KDE bandwidth, degrees.
    pub bandwidth_deg: f64,
    pub dbscan_eps_deg: f64,
    pub dbscan_min_pts: usize,
}

impl Default for ContourSection {
    fn default() -> Self {
        Self {
            k: 75.0,
            bandwidth_deg: 0.001,
            dbscan_eps_deg: 0.005,
            dbscan_min_pts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub m: usize,
    pub t_max_min: f64,
    pub train_fraction: f64,
    /// Rainfall threshold, mm.
    pub eps_rain: f64,
    /// Wind-speed threshold, knots.
    pub eps_wind: f64,
    pub embedding: EmbeddingMode,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            m: 10,
            t_max_min: 120.0,
            train_fraction: 0.8,
            eps_rain: 7.6,
            eps_wind: 22.0,
            embedding: EmbeddingMode::Discrete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kernel_size: usize,
    pub filters: usize,
    pub layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kernel_size: 15,
            filters: 5,
            layers: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            epochs: 30,
            batch_size: 256,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
        }
    }
}

/// Every tunable of a run. The scenario seed is always overwritten by the
/// top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub contour: ContourSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig::default();
        Self {
            seed: scenario.seed,
            scenario,
            contour: ContourSection::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolved()
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::MissingInput(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(msg) => PipelineError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Propagates the seed and validates every section.
    pub fn resolved(mut self) -> Result<Self, PipelineError> {
        self.scenario.seed = self.seed;
        self.scenario.validate()?;
        self.contour_config().kde.validate()?;
        self.contour_config().dbscan.validate()?;
        if !(self.contour.k > 0.0 && self.contour.k < 100.0) {
            return Err(PipelineError::Config(format!("contour.k = {} outside (0, 100)", self.contour.k)));
        }
        self.dataset_config(FeatureSet::default()).validate()?;
        if self.model.kernel_size == 0 || self.model.filters == 0 || self.model.layers == 0 {
            return Err(PipelineError::Config("model sizes must be positive".into()));
        }
        if self.train.batch_size < 2 {
            return Err(PipelineError::Config("train.batch_size must be at least 2".into()));
        }
        if !(self.train.lr > 0.0) {
            return Err(PipelineError::Config("train.lr must be positive".into()));
        }
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scenario.seed = seed;
        self
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.echo()).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn contour_config(&self) -> ContourConfig {
        ContourConfig {
            kde: KdeConfig::isotropic(self.contour.bandwidth_deg),
            percentile: self.contour.k,
            dbscan: DbscanConfig {
                eps: self.contour.dbscan_eps_deg,
                min_pts: self.contour.dbscan_min_pts,
            },
        }
    }

    pub fn dataset_config(&self, features: FeatureSet) -> DatasetConfig {
        DatasetConfig {
            m: self.dataset.m,
            t_max_min: self.dataset.t_max_min,
            train_fraction: self.dataset.train_fraction,
            embedding: EmbeddingConfig {
                eps_rain: self.dataset.eps_rain,
                eps_wind: self.dataset.eps_wind,
                mode: self.dataset.embedding,
            },
            features,
        }
    }

    pub fn hyper(&self, in_channels: usize) -> TcnHyper {
        TcnHyper {
            in_channels,
            filters: self.model.filters,
            kernel_size: self.model.kernel_size,
            layers: self.model.layers,
            seq_len: self.dataset.m,
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            adam: AdamConfig {
                lr: self.train.lr,
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                epsilon: self.train.epsilon,
            },
            seed: self.seed.wrapping_add(1),
        }
    }
}

/// Parsed and gridded input sources.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub trajectories: Vec<Trajectory>,
    pub bookings: HashMap<String, PilotageBooking>,
    pub weather: Vec<WeatherRecord>,
}

impl Inputs {
    pub fn from_scenario(cfg: &PipelineConfig, s: &Scenario) -> Result<Self, PipelineError> {
        let (trajectories, _) = assemble_trajectories(s.ais.clone(), &cfg.scenario.pbg_id)?;
        let bookings = s
            .bookings
            .iter()
            .map(|(id, cst)| (id.clone(), PilotageBooking { cst: *cst }))
            .collect();
        Ok(Self {
            trajectories,
            bookings,
            weather: s.weather.clone(),
        })
    }

    pub fn read_dir(cfg: &PipelineConfig, dir: &Path) -> Result<Self, PipelineError> {
        let open = |name: &str| {
            let p = dir.join(name);
            fs::File::open(&p).map_err(|e| PipelineError::MissingInput(format!("{}: {e}", p.display())))
        };
        let (trajectories, _) = assemble_trajectories(parse_ais(open(AIS_FILE)?)?, &cfg.scenario.pbg_id)?;
        Ok(Self {
            trajectories,
            bookings: parse_bookings(open(BOOKINGS_FILE)?)?,
            weather: parse_weather(open(WEATHER_FILE)?)?,
        })
    }
}

pub fn generate(cfg: &PipelineConfig) -> Result<Scenario, PipelineError> {
    Ok(generate_scenario(&cfg.scenario)?)
}

pub fn contour_stage(cfg: &PipelineConfig, inputs: &Inputs) -> Result<ContourExtraction, PipelineError> {
    let reference = cfg.scenario.pbg_reference();
    let points = inputs
        .trajectories
        .iter()
        .map(|t| closest_point_to_pbg(t, &reference))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(extract_contour(&points, &cfg.contour_config(), &cfg.scenario.pbg_id)?)
}

pub fn dataset_stage(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    contour: &ArrivalContour,
    features: FeatureSet,
    mode: EmbeddingMode,
) -> Result<FusedDataset, PipelineError> {
    let mut dc = cfg.dataset_config(features);
    dc.embedding.mode = mode;
    Ok(build_dataset(&inputs.trajectories, contour, &inputs.bookings, &inputs.weather, &dc)?)
}

pub struct Trained {
    pub model: TcnModel,
    pub trace: Vec<EpochLoss>,
}

pub fn train_stage(cfg: &PipelineConfig, ds: &FusedDataset) -> Result<Trained, PipelineError> {
    let mut model = TcnModel::new(cfg.hyper(ds.n_channels()), cfg.seed)?;
    let trace = train_on_dataset(ds, &mut model, &cfg.schedule())?;
    Ok(Trained { model, trace })
}

/// Test-split predictions and truths, all in minutes.
pub struct TestPredictions {
    pub truth: Vec<f64>,
    pub tcn: Vec<f64>,
    pub baseline: Vec<f64>,
}

pub fn predict_test(
    model: &TcnModel,
    ds: &FusedDataset,
    contour: &ArrivalContour,
) -> Result<TestPredictions, PipelineError> {
    if model.hyper.seq_len != ds.m || model.hyper.in_channels != ds.n_channels() {
        return Err(PipelineError::Config(format!(
            "model expects m = {} with {} channels, dataset has m = {} with {} channels",
            model.hyper.seq_len,
            model.hyper.in_channels,
            ds.m,
            ds.n_channels()
        )));
    }
    let range = ds.test_range();
    let (x, _) = dataset_tensors(ds, range.clone())?;
    if x.n == 0 {
        return Err(PipelineError::Eval(EvalError::EmptyInput));
    }
    let t_max = ds.scaler.t_max_min;
    let tcn = model.predict(&x)?.into_iter().map(|p| ds.scaler.denormalize_target(p)).collect();
    let truth = range.clone().map(|i| ds.target_minutes(i)).collect();
    let baseline = ds.windows[range]
        .iter()
        .map(|w| {
            let pos = crate::geo::GeoPoint::new(w.anchor.lat, w.anchor.lon);
            match naive_baseline(&pos, w.anchor.sog, contour) {
                Ok(v) => Ok(v.min(t_max)),
                Err(EvalError::StationaryVessel(_)) => Ok(t_max),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TestPredictions { truth, tcn, baseline })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub n_train: usize,
    pub n_test: usize,
    pub tcn: MetricsReport,
    pub baseline: MetricsReport,
    pub config_echo: serde_json::Value,
}

impl EvalReport {
    /// Aligned plain-text summary of both predictors.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "config {}\ntrain windows {}, test windows {}\n{:<9}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}\n",
            self.config_hash, self.n_train, self.n_test, "model", "MAE", "RMSE", "R2", "<=5min", "<=10min"
        );
        for (name, m) in [("tcn", &self.tcn), ("baseline", &self.baseline)] {
            let r2 = m.r2.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            s.push_str(&format!(
                "{:<9}  {:>8.3}  {:>8.3}  {:>8}  {:>7.2}%  {:>7.2}%\n",
                name,
                m.mae,
                m.rmse,
                r2,
                100.0 * m.within_5,
                100.0 * m.within_10
            ));
        }
        s
    }
}

pub fn evaluate(
    cfg: &PipelineConfig,
    model: &TcnModel,
    ds: &FusedDataset,
    contour: &ArrivalContour,
) -> Result<EvalReport, PipelineError> {
    let p = predict_test(model, ds, contour)?;
    Ok(EvalReport {
        config_hash: cfg.hash(),
        n_train: ds.split_index,
        n_test: ds.len() - ds.split_index,
        tcn: compute_metrics(&p.tcn, &p.truth)?,
        baseline: compute_metrics(&p.baseline, &p.truth)?,
        config_echo: cfg.echo(),
    })
}

pub const FULL_DISCRETE: &str = "full-discrete";
pub const FULL_CONTINUOUS: &str = "full-continuous";
pub const NO_WEATHER: &str = "no-weather";
pub const NO_CST: &str = "no-cst";

/// The four ablation variants: name, feature groups, embedding mode.
pub fn ablation_variants() -> [(&'static str, FeatureSet, EmbeddingMode); 4] {
    let all = FeatureSet { cst: true, weather: true };
    [
        (FULL_DISCRETE, all, EmbeddingMode::Discrete),
        (FULL_CONTINUOUS, all, EmbeddingMode::Continuous),
        (NO_WEATHER, FeatureSet { cst: true, weather: false }, EmbeddingMode::Discrete),
        (NO_CST, FeatureSet { cst: false, weather: true }, EmbeddingMode::Discrete),
    ]
}

/// Re-fuses the inputs for every variant, trains each from the same seed and
/// compares test metrics.
pub fn ablate(cfg: &PipelineConfig, inputs: &Inputs, contour: &ArrivalContour) -> Result<AblationReport, PipelineError> {
    let mut rows = Vec::new();
    for (name, features, mode) in ablation_variants() {
        let ds = dataset_stage(cfg, inputs, contour, features, mode)?;
        let trained = train_stage(cfg, &ds)?;
        let p = predict_test(&trained.model, &ds, contour)?;
        rows.push((name.to_string(), compute_metrics(&p.tcn, &p.truth)?));
    }
    let mut report = ablation_report(&rows, FULL_DISCRETE)?;
    report.config_echo = Some(cfg.echo());
    Ok(report)
}

/// Every stage in memory, default discrete features.
pub struct EndToEnd {
    pub scenario: Scenario,
    pub inputs: Inputs,
    pub contour: ContourExtraction,
    pub dataset: FusedDataset,
    pub trained: Trained,
    pub report: EvalReport,
}

pub fn run_end_to_end(cfg: &PipelineConfig) -> Result<EndToEnd, PipelineError> {
    let scenario = generate(cfg)?;
    let inputs = Inputs::from_scenario(cfg, &scenario)?;
    let contour = contour_stage(cfg, &inputs)?;
    let dataset = dataset_stage(cfg, &inputs, &contour.contour, FeatureSet::default(), cfg.dataset.embedding)?;
    let trained = train_stage(cfg, &dataset)?;
    let report = evaluate(cfg, &trained.model, &dataset, &contour.contour)?;
    Ok(EndToEnd {
        scenario,
        inputs,
        contour,
        dataset,
        trained,
        report,
    })
}
