//! End-to-end study: generate, split by runs, prepare the training partition
//! under several stage combinations, train identically seeded regressors and
//! score each on the same untouched test partition.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_by_runs, PreparedDataset, RawDataset, ScalingState};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport, REPORT_HEADER};
use crate::mlp::{train, MlpConfig, MlpModel};
use crate::pipeline::{run_pipeline, PipelineConfig, StageLog, StageToggles};
use crate::plant::{generate_program, PlantParams, TestRunSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfiguration {
    pub name: String,
    pub stages: StageToggles,
}

impl AblationConfiguration {
    fn new(name: &str, indexing: bool, augmentation: bool, oversampling: bool) -> Self {
        Self {
            name: name.to_string(),
            stages: StageToggles {
                indexing,
                augmentation,
                oversampling,
            },
        }
    }

    /// full, no-oversample, no-augment, raw.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self::new("full", true, true, true),
            Self::new("no-oversample", true, true, false),
            Self::new("no-augment", true, false, false),
            Self::new("raw", false, false, false),
        ]
    }
}

/// Held-out runs: one per velocity level of the default program.
pub fn default_held_out_runs() -> Vec<u32> {
    vec![3, 7, 11]
}

/// Single JSON document describing a whole study. Every field has a default,
/// so `{}` is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantParams,
    pub program: Vec<TestRunSpec>,
    pub data_seed: u64,
    pub held_out_runs: Vec<u32>,
    pub pipeline: PipelineConfig,
    pub mlp: MlpConfig,
    pub configurations: Vec<AblationConfiguration>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            program: TestRunSpec::default_program(),
            data_seed: 2024,
            held_out_runs: default_held_out_runs(),
            pipeline: PipelineConfig::default(),
            mlp: MlpConfig::default(),
            configurations: AblationConfiguration::defaults(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Config {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn generate(&self) -> Result<RawDataset> {
        generate_program(&self.program, &self.plant, self.data_seed)
    }

    pub fn held_out(&self) -> BTreeSet<u32> {
        self.held_out_runs.iter().copied().collect()
    }

    pub fn ablation_spec(&self) -> AblationSpec {
        AblationSpec {
            configurations: self.configurations.clone(),
            held_out_runs: self.held_out(),
            pipeline: self.pipeline,
            mlp: self.mlp.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub configurations: Vec<AblationConfiguration>,
    pub held_out_runs: BTreeSet<u32>,
    pub pipeline: PipelineConfig,
    pub mlp: MlpConfig,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for c in &self.configurations {
            if !names.insert(c.name.as_str()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate configuration name `{}`",
                    c.name
                )));
            }
        }
        if !names.contains("full") {
            return Err(Error::InvalidParameter(
                "configurations must include `full`".into(),
            ));
        }
        self.mlp.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ConfigurationResult {
    pub name: String,
    pub stages: StageToggles,
    pub metrics: MetricReport,
    pub stage_log: StageLog,
    pub loss_history: Vec<f64>,
    pub model: MlpModel,
    /// Predictions on the test partition, scaled units.
    pub predictions: Vec<f64>,
    /// Hash of the test partition this configuration was scored on.
    pub test_digest: u64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub scaling: ScalingState,
    pub train_rows: usize,
    pub test: PreparedDataset,
    pub results: Vec<ConfigurationResult>,
}

impl AblationReport {
    pub fn result(&self, name: &str) -> Option<&ConfigurationResult> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.results {
            s.push_str(&r.metrics.csv_row(&r.name));
            s.push('\n');
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Writes `predictions_<name>.csv` and `stages_<name>.csv` for every
    /// configuration into `dir`.
    pub fn save_artifacts(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let y_true = self.test.targets();
        for r in &self.results {
            write_predictions(&y_true, &r.predictions, dir.join(format!("predictions_{}.csv", r.name)))?;
            r.stage_log.save_csv(dir.join(format!("stages_{}.csv", r.name)))?;
        }
        Ok(())
    }
}

/// Stable digest of a prepared dataset's bytes.
pub fn dataset_digest(data: &PreparedDataset) -> u64 {
    let mut h = DefaultHasher::new();
    for e in &data.examples {
        for v in e.x {
            v.to_bits().hash(&mut h);
        }
        e.y.to_bits().hash(&mut h);
    }
    h.finish()
}

fn run_configuration(
    config: &AblationConfiguration,
    spec: &AblationSpec,
    train_raw: &RawDataset,
    scaling: &ScalingState,
    test: &PreparedDataset,
) -> Result<ConfigurationResult> {
    let prepared = run_pipeline(train_raw, config.stages, &spec.pipeline, scaling)?;
    let init = MlpModel::init(&spec.mlp)?;
    let outcome = train(&init, &prepared.data, &spec.mlp)?;
    let predictions = outcome.model.forward_batch(&test.inputs())?;
    let metrics = evaluate(&test.targets(), &predictions)?;
    Ok(ConfigurationResult {
        name: config.name.clone(),
        stages: config.stages,
        metrics,
        stage_log: prepared.log,
        loss_history: outcome.loss_history,
        model: outcome.model,
        predictions,
        test_digest: dataset_digest(test),
    })
}

/// Runs every configuration of `spec` on `data`. Configurations execute in
/// parallel; results keep the order of `spec.configurations`.
pub fn run_ablation(spec: &AblationSpec, data: &RawDataset) -> Result<AblationReport> {
    spec.validate()?;
    let (train_raw, test_raw) = split_by_runs(data, &spec.held_out_runs)?;
    let scaling = ScalingState::fit(&train_raw)?;
    let test = scaling.apply(&test_raw);

    let results = spec
        .configurations
        .par_iter()
        .map(|c| {
            run_configuration(c, spec, &train_raw, &scaling, &test).map_err(|e| Error::Configuration {
                name: c.name.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AblationReport {
        scaling,
        train_rows: train_raw.len(),
        test,
        results,
    })
}

fn write_predictions(y_true: &[f64], y_pred: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "index,y_true,y_pred").map_err(io)?;
    for (i, (t, p)) in y_true.iter().zip(y_pred).enumerate() {
        writeln!(w, "{i},{t},{p}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `index,y_true,y_pred` for every test example.
pub fn dump_predictions(model: &MlpModel, test: &PreparedDataset, path: impl AsRef<Path>) -> Result<()> {
    let predictions = model.forward_batch(&test.inputs())?;
    write_predictions(&test.targets(), &predictions, path)
}
