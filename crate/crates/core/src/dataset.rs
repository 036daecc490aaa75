//! Raw sensor records, the scaled example sequence fed to the regressor,
//! min/max scaling and CSV/JSON persistence.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor sampling period in seconds (1 kHz).
pub const SAMPLE_PERIOD: f64 = 1e-3;
/// Largest valve current in the test program, A.
pub const CURRENT_MAX: f64 = 1.6;
/// Largest vehicle velocity in the test program, km/h.
pub const VELOCITY_MAX: f64 = 25.0;

const RAW_HEADER: [&str; 6] = ["t", "run_id", "V", "I", "displacement", "delta_displacement"];
const PREPARED_HEADER: [&str; 5] = ["V", "I", "displacement", "delta_displacement", "provenance"];

// Tolerances for data that did not originate from this crate.
const TIME_STEP_TOL: f64 = 1e-6;
const DELTA_TOL: f64 = 1e-6;

/// One 1 ms sample of a test run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    /// Seconds since the start of the run.
    pub t: f64,
    pub run_id: u32,
    /// Vehicle velocity, km/h.
    #[serde(rename = "V")]
    pub velocity: f64,
    /// Valve current, A.
    #[serde(rename = "I")]
    pub current: f64,
    /// Rod position, mm.
    pub displacement: f64,
    /// Rod position change since the previous sample of the run, mm.
    pub delta_displacement: f64,
}

/// The columns that take part in scaling. The first three are the regressor
/// inputs, the last one is the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Column {
    Velocity,
    Current,
    Displacement,
    DeltaDisplacement,
}

impl Column {
    pub const ALL: [Column; 4] = [
        Column::Velocity,
        Column::Current,
        Column::Displacement,
        Column::DeltaDisplacement,
    ];
    pub const FEATURES: [Column; 3] = [Column::Velocity, Column::Current, Column::Displacement];
    pub const TARGET: Column = Column::DeltaDisplacement;

    pub fn name(self) -> &'static str {
        match self {
            Column::Velocity => "V",
            Column::Current => "I",
            Column::Displacement => "displacement",
            Column::DeltaDisplacement => "delta_displacement",
        }
    }

    fn value(self, record: &RawRecord) -> f64 {
        match self {
            Column::Velocity => record.velocity,
            Column::Current => record.current,
            Column::Displacement => record.displacement,
            Column::DeltaDisplacement => record.delta_displacement,
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Column::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownColumn(s.to_string()))
    }
}

/// Validated, non-empty sequence of raw records grouped contiguously by run.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    records: Vec<RawRecord>,
}

impl RawDataset {
    pub fn new(records: Vec<RawRecord>) -> Result<Self> {
        validate(&records)?;
        Ok(Self { records })
    }

    pub fn records(&self) -> &[RawRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<RawRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_names(&self) -> [&'static str; 3] {
        Column::FEATURES.map(Column::name)
    }

    pub fn target_name(&self) -> &'static str {
        Column::TARGET.name()
    }

    /// Run ids in order of first appearance.
    pub fn run_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = Vec::new();
        for r in &self.records {
            if ids.last() != Some(&r.run_id) {
                ids.push(r.run_id);
            }
        }
        ids
    }

    /// Native-unit targets in record order.
    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.delta_displacement).collect()
    }

    pub fn column(&self, column: Column) -> Vec<f64> {
        self.records.iter().map(|r| column.value(r)).collect()
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(BufReader::new(file));

        let headers = reader.headers().map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if headers.iter().map(str::trim).ne(RAW_HEADER.iter().copied()) {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                detail: format!(
                    "expected header `{}`, found `{}`",
                    RAW_HEADER.join(","),
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }

        let mut records = Vec::new();
        for row in reader.deserialize::<RawRecord>() {
            let record = row.map_err(|e| Error::MalformedRow {
                path: path.to_path_buf(),
                row: e.position().map_or(0, |p| p.line() as usize),
                detail: e.to_string(),
            })?;
            records.push(record);
        }
        Self::new(records)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        for r in &self.records {
            writer.serialize(r).map_err(|e| csv_io(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// Validates `records` and writes them as a raw CSV.
pub fn save_records_csv(records: &[RawRecord], path: impl AsRef<Path>) -> Result<()> {
    RawDataset::new(records.to_vec())?.save_csv(path)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn validate(records: &[RawRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let invalid = |row: usize, detail: String| Error::InvalidRecord { row, detail };
    let mut seen_runs = BTreeSet::new();

    for (i, r) in records.iter().enumerate() {
        let values = [r.t, r.velocity, r.current, r.displacement, r.delta_displacement];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid(i, "non-finite value".into()));
        }
        if !(0.0..=CURRENT_MAX).contains(&r.current) {
            return Err(invalid(
                i,
                format!("I = {} A outside bounds 0 A to {CURRENT_MAX} A", r.current),
            ));
        }
        if !(0.0..=VELOCITY_MAX).contains(&r.velocity) {
            return Err(invalid(
                i,
                format!("V = {} km/h outside bounds 0 km/h to {VELOCITY_MAX} km/h", r.velocity),
            ));
        }

        let continues_run = i > 0 && records[i - 1].run_id == r.run_id;
        if !continues_run {
            if !seen_runs.insert(r.run_id) {
                return Err(invalid(
                    i,
                    format!("run {} is not contiguous", r.run_id),
                ));
            }
            if r.delta_displacement.abs() > DELTA_TOL {
                return Err(invalid(i, "first sample of a run must have delta 0".into()));
            }
            continue;
        }

        let prev = &records[i - 1];
        let step = r.t - prev.t;
        if step <= 0.0 {
            return Err(invalid(
                i,
                format!("non-monotone time in run {} ({} -> {})", r.run_id, prev.t, r.t),
            ));
        }
        if (step - SAMPLE_PERIOD).abs() > TIME_STEP_TOL {
            return Err(invalid(
                i,
                format!("time step {step} s differs from {SAMPLE_PERIOD} s"),
            ));
        }
        let expected = r.displacement - prev.displacement;
        if (r.delta_displacement - expected).abs() > DELTA_TOL * expected.abs().max(1.0) {
            return Err(invalid(
                i,
                format!(
                    "delta_displacement {} does not match displacement difference {expected}",
                    r.delta_displacement
                ),
            ));
        }
    }
    Ok(())
}

/// Fills in `delta_displacement` from consecutive displacements of each run.
pub fn fill_deltas(records: &mut [RawRecord]) {
    for i in 0..records.len() {
        records[i].delta_displacement = if i > 0 && records[i - 1].run_id == records[i].run_id {
            records[i].displacement - records[i - 1].displacement
        } else {
            0.0
        };
    }
}

/// Partitions `data` into (train, test) by whole runs.
pub fn split_by_runs(data: &RawDataset, test_runs: &BTreeSet<u32>) -> Result<(RawDataset, RawDataset)> {
    if test_runs.is_empty() {
        return Err(Error::InvalidSplit("no test runs given".into()));
    }
    let present: BTreeSet<u32> = data.records.iter().map(|r| r.run_id).collect();
    if let Some(unknown) = test_runs.difference(&present).next() {
        return Err(Error::InvalidSplit(format!("unknown run_id {unknown}")));
    }
    if present.is_subset(test_runs) {
        return Err(Error::InvalidSplit("no training data".into()));
    }
    let (test, train): (Vec<RawRecord>, Vec<RawRecord>) = data
        .records
        .iter()
        .partition(|r| test_runs.contains(&r.run_id));
    Ok((RawDataset { records: train }, RawDataset { records: test }))
}

/// Observed range of one column in native units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    /// Exact min and max of `values`; `None` for an empty slice.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| match acc {
            None => Some(ColumnRange { min: v, max: v }),
            Some(r) => Some(ColumnRange {
                min: r.min.min(v),
                max: r.max.max(v),
            }),
        })
    }

    pub fn scale(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, scaled: f64) -> f64 {
        self.min + scaled * (self.max - self.min)
    }
}

/// Per-column min/max captured from a training partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingState {
    #[serde(rename = "V")]
    pub velocity: ColumnRange,
    #[serde(rename = "I")]
    pub current: ColumnRange,
    pub displacement: ColumnRange,
    pub delta_displacement: ColumnRange,
}

impl ScalingState {
    pub fn fit(train: &RawDataset) -> Result<Self> {
        let range = |c: Column| -> Result<ColumnRange> {
            let r = ColumnRange::of(train.records.iter().map(|rec| c.value(rec)))
                .ok_or(Error::EmptyDataset)?;
            if r.max > r.min {
                Ok(r)
            } else {
                Err(Error::ConstantColumn(c.name().to_string()))
            }
        };
        Ok(Self {
            velocity: range(Column::Velocity)?,
            current: range(Column::Current)?,
            displacement: range(Column::Displacement)?,
            delta_displacement: range(Column::DeltaDisplacement)?,
        })
    }

    pub fn range(&self, column: Column) -> &ColumnRange {
        match column {
            Column::Velocity => &self.velocity,
            Column::Current => &self.current,
            Column::Displacement => &self.displacement,
            Column::DeltaDisplacement => &self.delta_displacement,
        }
    }

    pub fn scale(&self, column: Column, v: f64) -> f64 {
        self.range(column).scale(v)
    }

    pub fn invert(&self, column: Column, scaled: f64) -> f64 {
        self.range(column).invert(scaled)
    }

    /// Scales every record; values outside the fitted range are not clamped.
    pub fn apply(&self, data: &RawDataset) -> PreparedDataset {
        let examples = data
            .records
            .iter()
            .map(|r| Example {
                x: Column::FEATURES.map(|c| self.scale(c, c.value(r))),
                y: self.scale(Column::TARGET, r.delta_displacement),
                provenance: Provenance::Original,
            })
            .collect();
        PreparedDataset { examples }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("scaling state serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let state: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        for c in Column::ALL {
            let r = state.range(c);
            if !(r.max > r.min) {
                return Err(Error::ConstantColumn(c.name().to_string()));
            }
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Original,
    Augmented,
    OversampleReplica,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Augmented => "augmented",
            Provenance::OversampleReplica => "oversample-replica",
        }
    }
}

/// One scaled (x, y) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub x: [f64; 3],
    pub y: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct PreparedRow {
    #[serde(rename = "V")]
    velocity: f64,
    #[serde(rename = "I")]
    current: f64,
    displacement: f64,
    delta_displacement: f64,
    provenance: Provenance,
}

/// Scaled example sequence, possibly filtered and enlarged by the pipeline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreparedDataset {
    pub examples: Vec<Example>,
}

impl PreparedDataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Self { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.y).collect()
    }

    pub fn inputs(&self) -> Vec<[f64; 3]> {
        self.examples.iter().map(|e| e.x).collect()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.examples
            .iter()
            .filter(|e| e.provenance == provenance)
            .count()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        if self.examples.is_empty() {
            writer
                .write_record(PREPARED_HEADER)
                .map_err(|e| csv_io(path, e))?;
        }
        for e in &self.examples {
            let row = PreparedRow {
                velocity: e.x[0],
                current: e.x[1],
                displacement: e.x[2],
                delta_displacement: e.y,
                provenance: e.provenance,
            };
            writer.serialize(row).map_err(|e| csv_io(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let headers = reader.headers().map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if headers.iter().map(str::trim).ne(PREPARED_HEADER.iter().copied()) {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                detail: format!("expected header `{}`", PREPARED_HEADER.join(",")),
            });
        }
        let mut examples = Vec::new();
        for row in reader.deserialize::<PreparedRow>() {
            let row = row.map_err(|e| Error::MalformedRow {
                path: path.to_path_buf(),
                row: e.position().map_or(0, |p| p.line() as usize),
                detail: e.to_string(),
            })?;
            examples.push(Example {
                x: [row.velocity, row.current, row.displacement],
                y: row.delta_displacement,
                provenance: row.provenance,
            });
        }
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { examples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(run_id: u32, v: f64, i: f64, displacements: &[f64]) -> Vec<RawRecord> {
        let mut recs: Vec<RawRecord> = displacements
            .iter()
            .enumerate()
            .map(|(k, &d)| RawRecord {
                t: k as f64 * SAMPLE_PERIOD,
                run_id,
                velocity: v,
                current: i,
                displacement: d,
                delta_displacement: 0.0,
            })
            .collect();
        fill_deltas(&mut recs);
        recs
    }

    fn three_runs() -> RawDataset {
        let mut recs = run(1, 10.0, 0.4, &[0.0, 1.0, 3.0]);
        recs.extend(run(2, 15.0, 1.0, &[2.0, 2.5, 1.0]));
        recs.extend(run(3, 20.0, 1.6, &[-1.0, 0.0, 0.5]));
        RawDataset::new(recs).unwrap()
    }

    #[test]
    fn rejects_empty() {
        assert!(matches!(RawDataset::new(vec![]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn rejects_current_above_bound() {
        let mut recs = run(1, 10.0, 0.4, &[0.0, 1.0]);
        recs[1].current = 2.5;
        let err = RawDataset::new(recs).unwrap_err().to_string();
        assert!(err.contains("1.6"), "{err}");
    }

    #[test]
    fn rejects_non_monotone_time() {
        let mut recs = run(1, 10.0, 0.4, &[0.0, 1.0, 2.0]);
        recs[2].t = recs[1].t;
        let err = RawDataset::new(recs).unwrap_err().to_string();
        assert!(err.contains("non-monotone"), "{err}");
    }

    #[test]
    fn rejects_split_run_and_bad_delta() {
        let mut recs = run(1, 10.0, 0.4, &[0.0, 1.0]);
        recs.extend(run(2, 10.0, 0.4, &[0.0]));
        recs.extend(run(1, 10.0, 0.4, &[0.0]));
        assert!(RawDataset::new(recs).is_err());

        let mut recs = run(1, 10.0, 0.4, &[0.0, 1.0]);
        recs[1].delta_displacement = 0.5;
        assert!(RawDataset::new(recs).is_err());
    }

    #[test]
    fn fit_scaling_takes_column_extremes() {
        let data = three_runs();
        let s = ScalingState::fit(&data).unwrap();
        assert_eq!(s.velocity, ColumnRange { min: 10.0, max: 20.0 });
        assert_eq!(s.current, ColumnRange { min: 0.4, max: 1.6 });
        assert_eq!(s.displacement, ColumnRange { min: -1.0, max: 3.0 });
    }

    #[test]
    fn fit_scaling_rejects_constant_column() {
        let data = RawDataset::new(run(1, 10.0, 0.4, &[0.0, 1.0, 0.0])).unwrap();
        match ScalingState::fit(&data) {
            Err(Error::ConstantColumn(c)) => assert_eq!(c, "V"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scaling_endpoints_midpoint_and_extrapolation() {
        let r = ColumnRange { min: 10.0, max: 20.0 };
        assert_eq!(r.scale(10.0), 0.0);
        assert_eq!(r.scale(20.0), 1.0);
        assert_eq!(r.scale(15.0), 0.5);
        assert_eq!(r.scale(25.0), 1.5);
        assert_eq!(r.invert(0.0), 10.0);
        assert_eq!(r.invert(1.0), 20.0);
        assert_eq!(r.invert(0.5), 15.0);
    }

    #[test]
    fn column_names_parse() {
        for c in Column::ALL {
            assert_eq!(c.name().parse::<Column>().unwrap(), c);
        }
        assert!(matches!("speed".parse::<Column>(), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn split_partitions_by_run() {
        let data = three_runs();
        let (train, test) = split_by_runs(&data, &BTreeSet::from([2])).unwrap();
        assert_eq!(train.run_ids(), vec![1, 3]);
        assert_eq!(test.run_ids(), vec![2]);
        assert_eq!(train.len() + test.len(), data.len());

        assert!(split_by_runs(&data, &BTreeSet::new()).is_err());
        assert!(split_by_runs(&data, &BTreeSet::from([9])).is_err());
        let err = split_by_runs(&data, &BTreeSet::from([1, 2, 3])).unwrap_err();
        assert!(err.to_string().contains("no training data"));
    }

    #[test]
    fn prepared_csv_round_trip() {
        let data = three_runs();
        let s = ScalingState::fit(&data).unwrap();
        let prepared = s.apply(&data);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        prepared.save_csv(&path).unwrap();
        assert_eq!(PreparedDataset::load_csv(&path).unwrap(), prepared);
    }

    #[test]
    fn scaling_json_round_trip() {
        let s = ScalingState::fit(&three_runs()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        s.save_json(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"delta_displacement\""));
        assert_eq!(ScalingState::load_json(&path).unwrap(), s);
    }
}
