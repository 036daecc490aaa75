//! Training-data preparation: scale, index, augment, oversample.
//!
//! Each stage is a pure function of its input and an explicit seed. The
//! chain always runs in that order; disabled stages pass data through.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Example, PreparedDataset, Provenance, RawDataset, ScalingState};
use crate::error::{Error, Result};

/// Keeps samples whose native target magnitude reaches `threshold` mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexingConfig {
    pub threshold: f64,
}

impl Default for IndexingConfig {
    fn default() -> Self {
        Self { threshold: 0.1 }
    }
}

/// Additive Gaussian noise in scaled units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 0.05,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OversamplingConfig {
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for OversamplingConfig {
    fn default() -> Self {
        Self { n_bins: 20, seed: 23 }
    }
}

/// Which optional stages run. Scaling always runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub indexing: bool,
    pub augmentation: bool,
    pub oversampling: bool,
}

impl StageToggles {
    pub const ALL: StageToggles = StageToggles {
        indexing: true,
        augmentation: true,
        oversampling: true,
    };
    pub const NONE: StageToggles = StageToggles {
        indexing: false,
        augmentation: false,
        oversampling: false,
    };

    /// Parses a comma-separated stage list such as `index,augment`; `none`
    /// or an empty string disables all stages.
    pub fn parse(list: &str) -> Result<Self> {
        let mut toggles = Self::NONE;
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "none" => {}
                "all" => toggles = Self::ALL,
                "index" | "indexing" => toggles.indexing = true,
                "augment" | "augmentation" => toggles.augmentation = true,
                "oversample" | "oversampling" => toggles.oversampling = true,
                other => {
                    return Err(Error::InvalidParameter(format!("unknown stage `{other}`")))
                }
            }
        }
        Ok(toggles)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub indexing: IndexingConfig,
    pub augmentation: AugmentationConfig,
    pub oversampling: OversamplingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Scale,
    Index,
    Augment,
    Oversample,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Scale => "scale",
            Stage::Index => "index",
            Stage::Augment => "augment",
            Stage::Oversample => "oversample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLogEntry {
    pub stage: Stage,
    pub rows_in: usize,
    pub rows_out: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageLog(pub Vec<StageLogEntry>);

impl StageLog {
    pub fn entries(&self) -> &[StageLogEntry] {
        &self.0
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
        w.write_record(["stage", "rows_in", "rows_out"]).map_err(io)?;
        for e in &self.0 {
            w.write_record([
                e.stage.name().to_string(),
                e.rows_in.to_string(),
                e.rows_out.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Keeps the examples whose aligned native target satisfies
/// `|delta| >= threshold`, preserving order. Returns the kept dataset and
/// the original indices of the kept examples.
pub fn index_filter(
    data: &PreparedDataset,
    raw_targets: &[f64],
    cfg: &IndexingConfig,
) -> Result<(PreparedDataset, Vec<usize>)> {
    if raw_targets.len() != data.len() {
        return Err(Error::LengthMismatch(data.len(), raw_targets.len()));
    }
    if !(cfg.threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "indexing threshold must be > 0, got {}",
            cfg.threshold
        )));
    }
    let kept: Vec<usize> = raw_targets
        .iter()
        .enumerate()
        .filter(|(_, d)| d.abs() >= cfg.threshold)
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        let max_abs_delta = raw_targets.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        return Err(Error::EmptyIndexing {
            threshold: cfg.threshold,
            max_abs_delta,
        });
    }
    let examples = kept.iter().map(|&i| data.examples[i]).collect();
    Ok((PreparedDataset::new(examples), kept))
}

/// Appends one noisy replica per example. Noise is drawn independently for
/// every feature and the target.
pub fn augment_gaussian(data: &PreparedDataset, cfg: &AugmentationConfig) -> Result<PreparedDataset> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let noise = Normal::new(cfg.mu, cfg.sigma)
        .map_err(|e| Error::InvalidParameter(format!("augmentation sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut out = Vec::with_capacity(2 * data.len());
    out.extend_from_slice(&data.examples);
    for e in &data.examples {
        let x = e.x.map(|v| v + noise.sample(&mut rng));
        let y = e.y + noise.sample(&mut rng);
        out.push(Example {
            x,
            y,
            provenance: Provenance::Augmented,
        });
    }
    Ok(PreparedDataset::new(out))
}

/// Equal-width histogram of `values` over `[min, max]`; the maximum falls
/// into the last bin.
pub fn histogram_bins(values: &[f64], n_bins: usize) -> Vec<usize> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let width = (hi - lo) / n_bins as f64;
    values
        .iter()
        .map(|&v| {
            if width > 0.0 {
                (((v - lo) / width) as usize).min(n_bins - 1)
            } else {
                0
            }
        })
        .collect()
}

/// Replicates examples of under-populated target bins until every non-empty
/// bin holds as many examples as the fullest one. Replicas are drawn with
/// replacement, uniformly within a bin, and appended after the originals.
pub fn oversample_histogram(data: &PreparedDataset, cfg: &OversamplingConfig) -> Result<PreparedDataset> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.n_bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_bins must be >= 2, got {}",
            cfg.n_bins
        )));
    }
    let bins = histogram_bins(&data.targets(), cfg.n_bins);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_bins];
    for (i, &b) in bins.iter().enumerate() {
        members[b].push(i);
    }
    let target = members.iter().map(Vec::len).max().unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = data.examples.clone();
    for bin in members.iter().filter(|m| !m.is_empty()) {
        for _ in bin.len()..target {
            let pick = bin[rng.random_range(0..bin.len())];
            out.push(Example {
                provenance: Provenance::OversampleReplica,
                ..data.examples[pick]
            });
        }
    }
    Ok(PreparedDataset::new(out))
}

/// Output of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub data: PreparedDataset,
    pub log: StageLog,
}

/// Scales `raw` with `scaling`, then applies the enabled stages in the
/// order index, augment, oversample.
pub fn run_pipeline(
    raw: &RawDataset,
    stages: StageToggles,
    cfg: &PipelineConfig,
    scaling: &ScalingState,
) -> Result<PipelineOutput> {
    let mut log = Vec::with_capacity(4);
    let mut record = |stage, rows_in, rows_out| {
        log.push(StageLogEntry {
            stage,
            rows_in,
            rows_out,
        })
    };

    let mut data = scaling.apply(raw);
    record(Stage::Scale, raw.len(), data.len());

    let n = data.len();
    if stages.indexing {
        data = index_filter(&data, &raw.targets(), &cfg.indexing)?.0;
    }
    record(Stage::Index, n, data.len());

    let n = data.len();
    if stages.augmentation {
        data = augment_gaussian(&data, &cfg.augmentation)?;
    }
    record(Stage::Augment, n, data.len());

    let n = data.len();
    if stages.oversampling {
        data = oversample_histogram(&data, &cfg.oversampling)?;
    }
    record(Stage::Oversample, n, data.len());

    Ok(PipelineOutput {
        data,
        log: StageLog(log),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(x: f64, y: f64) -> Example {
        Example {
            x: [x, x, x],
            y,
            provenance: Provenance::Original,
        }
    }

    fn dataset(ys: &[f64]) -> PreparedDataset {
        PreparedDataset::new(ys.iter().enumerate().map(|(i, &y)| ex(i as f64, y)).collect())
    }

    #[test]
    fn index_filter_hand_case() {
        let data = dataset(&[0.1, 0.5, 0.9]);
        let (kept, idx) =
            index_filter(&data, &[0.001, 0.2, -0.3], &IndexingConfig { threshold: 0.05 }).unwrap();
        assert_eq!(idx, vec![1, 2]);
        assert_eq!(kept.examples, vec![data.examples[1], data.examples[2]]);
    }

    #[test]
    fn index_filter_smallest_threshold_keeps_nonzero() {
        let data = dataset(&[0.0, 0.1, 0.2, 0.3]);
        let raw = [0.0, 1e-9, -0.5, 0.0];
        let (_, idx) = index_filter(&data, &raw, &IndexingConfig { threshold: f64::MIN_POSITIVE }).unwrap();
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn index_filter_empty_reports_max_delta() {
        let data = dataset(&[0.0, 0.1]);
        match index_filter(&data, &[0.01, -0.02], &IndexingConfig { threshold: 1.0 }) {
            Err(Error::EmptyIndexing { max_abs_delta, .. }) => assert_eq!(max_abs_delta, 0.02),
            other => panic!("unexpected {other:?}"),
        }
        assert!(index_filter(&data, &[0.1], &IndexingConfig::default()).is_err());
    }

    #[test]
    fn zero_sigma_duplicates() {
        let data = dataset(&[0.1, 0.4, 0.7]);
        let out = augment_gaussian(
            &data,
            &AugmentationConfig {
                mu: 0.0,
                sigma: 0.0,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(out.len(), 6);
        for i in 0..3 {
            assert_eq!(out.examples[i], data.examples[i]);
            assert_eq!(out.examples[i + 3].x, data.examples[i].x);
            assert_eq!(out.examples[i + 3].y, data.examples[i].y);
            assert_eq!(out.examples[i + 3].provenance, Provenance::Augmented);
        }
    }

    #[test]
    fn oversampling_hand_case() {
        // bins over [0, 4] with 4 bins of width 1: counts {10, 2, 0, 5}
        let mut ys = vec![0.5; 9];
        ys.push(0.0);
        ys.extend([1.5, 1.5]);
        ys.extend([3.5, 3.5, 3.5, 3.5, 4.0]);
        let data = dataset(&ys);
        let out = oversample_histogram(&data, &OversamplingConfig { n_bins: 4, seed: 5 }).unwrap();
        assert_eq!(out.len() - data.len(), 13);
        let mut counts = [0usize; 4];
        for b in histogram_bins(&out.targets(), 4) {
            counts[b] += 1;
        }
        assert_eq!(counts, [10, 10, 0, 10]);
    }

    #[test]
    fn oversampling_uniform_is_fixed_point() {
        let data = dataset(&[0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95]);
        let out = oversample_histogram(&data, &OversamplingConfig { n_bins: 5, seed: 0 }).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn oversampling_rejects_single_bin() {
        let data = dataset(&[0.0, 1.0]);
        assert!(oversample_histogram(&data, &OversamplingConfig { n_bins: 1, seed: 0 }).is_err());
    }

    #[test]
    fn stage_list_parsing() {
        assert_eq!(StageToggles::parse("none").unwrap(), StageToggles::NONE);
        assert_eq!(StageToggles::parse("").unwrap(), StageToggles::NONE);
        assert_eq!(
            StageToggles::parse("index, augment").unwrap(),
            StageToggles {
                indexing: true,
                augmentation: true,
                oversampling: false
            }
        );
        assert_eq!(StageToggles::parse("all").unwrap(), StageToggles::ALL);
        assert!(StageToggles::parse("smote").is_err());
    }
}
