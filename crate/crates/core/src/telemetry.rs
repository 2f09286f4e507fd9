//! Heater telemetry: synthetic generation, CSV ingestion, windowing into
//! behavioural patterns and train-fitted min-max normalization.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binio::{put_f64s, put_u32, Reader};
use crate::error::{Error, Result};

pub const READINGS_PER_CYCLE: usize = 170;
pub const WINDOW_ROWS: usize = 34;
pub const FEATURES: usize = 5;
pub const WINDOWS_PER_CYCLE: usize = READINGS_PER_CYCLE / WINDOW_ROWS;
pub const PATTERN_LEN: usize = WINDOW_ROWS * FEATURES;

/// Names of the retained features, in column order of a pattern row.
pub const FEATURE_NAMES: [&str; FEATURES] = [
    "voltage_measured",
    "current_measured",
    "temperature_measured",
    "current_charge",
    "capacity",
];

/// Required CSV header columns.
pub const CSV_COLUMNS: [&str; 9] = [
    "dt_id",
    "cycle_id",
    "timestamp",
    "voltage_measured",
    "current_measured",
    "temperature_measured",
    "current_charge",
    "voltage_charge",
    "capacity",
];

const SAMPLE_INTERVAL_S: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub timestamp: f64,
    pub voltage_measured: f64,
    pub current_measured: f64,
    pub temperature_measured: f64,
    pub current_charge: f64,
    pub capacity: f64,
}

impl SensorReading {
    pub fn features(&self) -> [f64; FEATURES] {
        [
            self.voltage_measured,
            self.current_measured,
            self.temperature_measured,
            self.current_charge,
            self.capacity,
        ]
    }

    fn is_finite(&self) -> bool {
        self.timestamp.is_finite() && self.features().iter().all(|v| v.is_finite())
    }
}

/// One experiment cycle of a single device: exactly 170 readings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub dt_id: u32,
    pub cycle_id: u32,
    readings: Vec<SensorReading>,
}

impl Cycle {
    pub fn new(dt_id: u32, cycle_id: u32, readings: Vec<SensorReading>) -> Result<Self> {
        if readings.len() != READINGS_PER_CYCLE {
            return Err(Error::Validation(format!(
                "cycle (dt_id={dt_id}, cycle_id={cycle_id}) has {} readings, expected {READINGS_PER_CYCLE}",
                readings.len()
            )));
        }
        if let Some(i) = readings.iter().position(|r| !r.is_finite()) {
            return Err(Error::Validation(format!(
                "cycle (dt_id={dt_id}, cycle_id={cycle_id}) has a non-finite value at row {i}"
            )));
        }
        if let Some(i) = readings
            .windows(2)
            .position(|w| w[1].timestamp <= w[0].timestamp)
        {
            return Err(Error::Validation(format!(
                "cycle (dt_id={dt_id}, cycle_id={cycle_id}) has non-monotone timestamps at row {}",
                i + 1
            )));
        }
        Ok(Cycle {
            dt_id,
            cycle_id,
            readings,
        })
    }

    pub fn readings(&self) -> &[SensorReading] {
        &self.readings
    }
}

/// Fixed per-device signature used by the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeviceProfile {
    /// Temperature rise time constant, seconds.
    pub rise_time_constant: f64,
    /// Voltage drop per 1000 s of cycle time.
    pub voltage_sag: f64,
    /// Mean discharge current magnitude, amperes.
    pub rated_current: f64,
    /// Standard deviation of the measured current.
    pub current_noise: f64,
    /// Capacity lost per cycle, ampere-hours.
    pub capacity_fade: f64,
}

impl DeviceProfile {
    /// Profile for device `dt_id` out of `dt_count`, spread evenly over the
    /// parameter ranges.
    pub fn for_device(dt_id: u32, dt_count: u32) -> Self {
        let f = if dt_count <= 1 {
            0.0
        } else {
            f64::from(dt_id) / f64::from(dt_count - 1)
        };
        DeviceProfile {
            rise_time_constant: 250.0 + 1500.0 * f,
            voltage_sag: 0.55 - 0.30 * f,
            rated_current: 1.6 + 0.8 * f,
            current_noise: 0.08 - 0.075 * f,
            capacity_fade: 0.0005 + 0.0025 * f,
        }
    }
}

/// Generates `dt_count × cycles_per_dt` synthetic heater cycles.
///
/// Each device follows a first-order temperature response with its own time
/// constant, a linear voltage sag, its own current draw with Gaussian noise
/// and per-cycle
/// capacity fade. Output is ordered by device, then cycle.
pub fn generate_synthetic(dt_count: u32, cycles_per_dt: u32, seed: u64) -> Result<Vec<Cycle>> {
    if dt_count < 2 {
        return Err(Error::Argument(format!("dt_count must be >= 2, got {dt_count}")));
    }
    if cycles_per_dt < 1 {
        return Err(Error::Argument("cycles_per_dt must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut cycles = Vec::with_capacity((dt_count * cycles_per_dt) as usize);

    for dt_id in 0..dt_count {
        let profile = DeviceProfile::for_device(dt_id, dt_count);
        for cycle_id in 0..cycles_per_dt {
            let ambient = 24.0 + 0.8 * unit.sample(&mut rng);
            let tau = profile.rise_time_constant * (1.0 + 0.03 * unit.sample(&mut rng));
            let v0 = 4.19 + 0.01 * unit.sample(&mut rng);
            let capacity = 1.85 - profile.capacity_fade * f64::from(cycle_id)
                + 0.002 * unit.sample(&mut rng);
            let readings = (0..READINGS_PER_CYCLE)
                .map(|j| {
                    let t = j as f64 * SAMPLE_INTERVAL_S;
                    let current = -profile.rated_current + profile.current_noise * unit.sample(&mut rng);
                    SensorReading {
                        timestamp: t,
                        voltage_measured: v0 - profile.voltage_sag * t / 1000.0
                            + 0.01 * unit.sample(&mut rng),
                        current_measured: current,
                        temperature_measured: ambient
                            + 40.0 * (1.0 - (-t / tau).exp())
                            + 0.3 * unit.sample(&mut rng),
                        current_charge: -current + 0.002 * unit.sample(&mut rng),
                        capacity,
                    }
                })
                .collect();
            cycles.push(Cycle::new(dt_id, cycle_id, readings)?);
        }
    }
    Ok(cycles)
}

/// Writes cycles in the ingestion CSV schema. `voltage_charge` is written as a
/// copy of `voltage_measured`.
pub fn write_csv<W: Write>(cycles: &[Cycle], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for c in cycles {
        for r in &c.readings {
            w.write_record([
                c.dt_id.to_string(),
                c.cycle_id.to_string(),
                r.timestamp.to_string(),
                r.voltage_measured.to_string(),
                r.current_measured.to_string(),
                r.temperature_measured.to_string(),
                r.current_charge.to_string(),
                r.voltage_measured.to_string(),
                r.capacity.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Result of a CSV ingestion: the cycles plus any non-fatal warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub cycles: Vec<Cycle>,
    pub warnings: Vec<String>,
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Ingested> {
    let file = fs::File::open(path)?;
    ingest_csv_reader(file)
}

/// Parses the CSV schema from any reader. Rows are grouped into cycles by
/// `(dt_id, cycle_id)` in first-appearance order and `voltage_charge` is
/// dropped.
pub fn ingest_csv_reader<R: Read>(input: R) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 9];
    for (slot, name) in col.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut order: Vec<(u32, u32)> = Vec::new();
    let mut groups: HashMap<(u32, u32), Vec<SensorReading>> = HashMap::new();
    let mut charge_mismatches = 0usize;

    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |i: usize| -> Result<&str> {
            rec.get(col[i]).map(str::trim).ok_or_else(|| {
                Error::Validation(format!("line {line}: missing `{}` field", CSV_COLUMNS[i]))
            })
        };
        let int = |i: usize| -> Result<u32> {
            field(i)?.parse::<u32>().map_err(|e| {
                Error::Validation(format!("line {line}: bad `{}`: {e}", CSV_COLUMNS[i]))
            })
        };
        let float = |i: usize| -> Result<f64> {
            let v = field(i)?.parse::<f64>().map_err(|e| {
                Error::Validation(format!("line {line}: bad `{}`: {e}", CSV_COLUMNS[i]))
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "line {line}: non-finite `{}`",
                    CSV_COLUMNS[i]
                )));
            }
            Ok(v)
        };

        let key = (int(0)?, int(1)?);
        let reading = SensorReading {
            timestamp: float(2)?,
            voltage_measured: float(3)?,
            current_measured: float(4)?,
            temperature_measured: float(5)?,
            current_charge: float(6)?,
            capacity: float(8)?,
        };
        let voltage_charge = float(7)?;
        if (voltage_charge - reading.voltage_measured).abs()
            > 1e-9 * reading.voltage_measured.abs().max(1.0)
        {
            charge_mismatches += 1;
        }

        let group = groups.entry(key).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        if let Some(prev) = group.last() {
            if reading.timestamp <= prev.timestamp {
                return Err(Error::Validation(format!(
                    "non-monotone timestamp at line {line} in cycle (dt_id={}, cycle_id={})",
                    key.0, key.1
                )));
            }
        }
        group.push(reading);
    }

    let bad: Vec<String> = order
        .iter()
        .filter_map(|k| {
            let n = groups[k].len();
            (n != READINGS_PER_CYCLE)
                .then(|| format!("(dt_id={}, cycle_id={}, rows={n})", k.0, k.1))
        })
        .collect();
    if !bad.is_empty() {
        return Err(Error::Validation(format!(
            "cycles without exactly {READINGS_PER_CYCLE} rows: {}",
            bad.join(", ")
        )));
    }

    let mut warnings = Vec::new();
    if charge_mismatches > 0 {
        let msg = format!(
            "voltage_charge differs from voltage_measured in {charge_mismatches} rows; column discarded"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let cycles = order
        .into_iter()
        .map(|k| {
            let readings = groups.remove(&k).unwrap_or_default();
            Cycle::new(k.0, k.1, readings)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ingested { cycles, warnings })
}

/// A 34-row slice of a cycle, still in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct RawWindow {
    pub dt_id: u32,
    pub cycle_id: u32,
    pub window_index: usize,
    pub readings: Vec<SensorReading>,
}

/// Splits every cycle into five consecutive, non-overlapping 34-row windows.
pub fn window_cycles(cycles: &[Cycle]) -> Vec<RawWindow> {
    cycles
        .iter()
        .flat_map(|c| {
            c.readings
                .chunks_exact(WINDOW_ROWS)
                .enumerate()
                .map(move |(i, rows)| RawWindow {
                    dt_id: c.dt_id,
                    cycle_id: c.cycle_id,
                    window_index: i,
                    readings: rows.to_vec(),
                })
        })
        .collect()
}

/// A normalized t×k behavioural pattern, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PatternDoc", into = "PatternDoc")]
pub struct BehaviouralPattern {
    dt_id: u32,
    values: Vec<f64>,
}

impl BehaviouralPattern {
    pub fn new(dt_id: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != PATTERN_LEN {
            return Err(Error::Dimension(format!(
                "pattern needs {WINDOW_ROWS}x{FEATURES}={PATTERN_LEN} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "pattern value {} at index {i} is outside [0, 1]",
                values[i]
            )));
        }
        Ok(BehaviouralPattern { dt_id, values })
    }

    pub fn dt_id(&self) -> u32 {
        self.dt_id
    }

    /// Row-major flattened values (length 170).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * FEATURES..(i + 1) * FEATURES]
    }

    pub fn get(&self, row: usize, feature: usize) -> f64 {
        self.values[row * FEATURES + feature]
    }
}

#[derive(Serialize, Deserialize)]
struct PatternDoc {
    dt_id: u32,
    values: Vec<Vec<f64>>,
}

impl TryFrom<PatternDoc> for BehaviouralPattern {
    type Error = Error;

    fn try_from(doc: PatternDoc) -> Result<Self> {
        if doc.values.len() != WINDOW_ROWS || doc.values.iter().any(|r| r.len() != FEATURES) {
            return Err(Error::Dimension(format!(
                "pattern must be {WINDOW_ROWS} rows of {FEATURES} values"
            )));
        }
        BehaviouralPattern::new(doc.dt_id, doc.values.concat())
    }
}

impl From<BehaviouralPattern> for PatternDoc {
    fn from(p: BehaviouralPattern) -> Self {
        PatternDoc {
            dt_id: p.dt_id,
            values: p.values.chunks(FEATURES).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// Per-feature min/max fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub min: [f64; FEATURES],
    pub max: [f64; FEATURES],
}

impl NormalizationStats {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a SensorReading>) -> Result<Self> {
        let mut min = [f64::INFINITY; FEATURES];
        let mut max = [f64::NEG_INFINITY; FEATURES];
        for r in rows {
            for (k, v) in r.features().into_iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        for k in 0..FEATURES {
            if !(max[k] > min[k]) {
                return Err(Error::Normalization {
                    feature: FEATURE_NAMES[k].to_string(),
                });
            }
        }
        Ok(NormalizationStats { min, max })
    }

    pub fn normalize(&self, feature: usize, x: f64) -> f64 {
        (x - self.min[feature]) / (self.max[feature] - self.min[feature])
    }

    pub fn denormalize(&self, feature: usize, y: f64) -> f64 {
        y * (self.max[feature] - self.min[feature]) + self.min[feature]
    }

    fn pattern(&self, w: &RawWindow) -> Result<BehaviouralPattern> {
        let values = w
            .readings
            .iter()
            .flat_map(|r| {
                r.features()
                    .into_iter()
                    .enumerate()
                    .map(|(k, v)| self.normalize(k, v).clamp(0.0, 1.0))
            })
            .collect();
        BehaviouralPattern::new(w.dt_id, values)
    }
}

/// Train/test patterns plus the normalization fitted on train.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<BehaviouralPattern>,
    pub test: Vec<BehaviouralPattern>,
    pub stats: NormalizationStats,
    pub split_seed: u64,
}

/// Stratified (per `dt_id`) shuffle-split followed by min-max normalization
/// fitted on the training windows only. Test values are clamped to [0, 1].
pub fn normalize_and_split(
    windows: &[RawWindow],
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if windows.is_empty() {
        return Err(Error::Argument("no windows to split".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.readings.len() != WINDOW_ROWS) {
        return Err(Error::Dimension(format!(
            "window of cycle (dt_id={}, cycle_id={}) has {} rows",
            w.dt_id,
            w.cycle_id,
            w.readings.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_class.entry(w.dt_id).or_default().push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64) * train_fraction).round() as usize;
        let n_train = n_train.min(idx.len());
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);

    let stats =
        NormalizationStats::fit(train_idx.iter().flat_map(|&i| windows[i].readings.iter()))?;
    let build = |idx: &[usize]| -> Result<Vec<BehaviouralPattern>> {
        idx.iter().map(|&i| stats.pattern(&windows[i])).collect()
    };
    Ok(DatasetSplit {
        train: build(&train_idx)?,
        test: build(&test_idx)?,
        stats,
        split_seed: seed,
    })
}

const PATTERN_MAGIC: &[u8; 4] = b"TWDT";
const PATTERN_VERSION: u32 = 1;

/// Encodes pattern matrices as a `TWDT` record file (labels are not part of
/// the record format).
pub fn encode_patterns(patterns: &[BehaviouralPattern]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + patterns.len() * PATTERN_LEN * 8);
    out.extend_from_slice(PATTERN_MAGIC);
    put_u32(&mut out, PATTERN_VERSION);
    put_u32(&mut out, patterns.len() as u32);
    put_u32(&mut out, 0);
    for p in patterns {
        put_f64s(&mut out, &p.values);
    }
    out
}

/// Decodes a `TWDT` record file into raw row-major 34×5 matrices.
pub fn decode_patterns(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    const WHAT: &str = "pattern file";
    let mut r = Reader::new(bytes, WHAT);
    if r.take(4)? != PATTERN_MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let version = r.u32()?;
    if version != PATTERN_VERSION {
        return Err(Error::format(WHAT, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let _reserved = r.u32()?;
    if r.remaining() != count.saturating_mul(PATTERN_LEN * 8) {
        return Err(Error::format(
            WHAT,
            format!("header declares {count} records but body has {} bytes", r.remaining()),
        ));
    }
    let out = (0..count)
        .map(|_| r.f64s(PATTERN_LEN))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct FeatureRange {
    name: String,
    min: f64,
    max: f64,
}

#[derive(Serialize, Deserialize)]
struct StatsDoc {
    features: Vec<FeatureRange>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct LabelsDoc {
    train: Vec<u32>,
    test: Vec<u32>,
}

fn attach_labels(matrices: Vec<Vec<f64>>, labels: &[u32]) -> Result<Vec<BehaviouralPattern>> {
    if matrices.len() != labels.len() {
        return Err(Error::format(
            "dataset",
            format!("{} records but {} labels", matrices.len(), labels.len()),
        ));
    }
    matrices
        .into_iter()
        .zip(labels)
        .map(|(m, &l)| BehaviouralPattern::new(l, m))
        .collect()
}

impl DatasetSplit {
    /// Writes `train.bin`, `test.bin`, `stats.json` and `labels.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("train.bin"), encode_patterns(&self.train))?;
        fs::write(dir.join("test.bin"), encode_patterns(&self.test))?;
        let stats = StatsDoc {
            features: (0..FEATURES)
                .map(|k| FeatureRange {
                    name: FEATURE_NAMES[k].to_string(),
                    min: self.stats.min[k],
                    max: self.stats.max[k],
                })
                .collect(),
            seed: self.split_seed,
        };
        fs::write(dir.join("stats.json"), serde_json::to_vec_pretty(&stats)?)?;
        let labels = LabelsDoc {
            train: self.train.iter().map(|p| p.dt_id).collect(),
            test: self.test.iter().map(|p| p.dt_id).collect(),
        };
        fs::write(dir.join("labels.json"), serde_json::to_vec(&labels)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let stats: StatsDoc = serde_json::from_slice(&fs::read(dir.join("stats.json"))?)?;
        if stats.features.len() != FEATURES
            || stats
                .features
                .iter()
                .zip(FEATURE_NAMES)
                .any(|(f, n)| f.name != n)
        {
            return Err(Error::format("stats.json", "unexpected feature list"));
        }
        let labels: LabelsDoc = serde_json::from_slice(&fs::read(dir.join("labels.json"))?)?;
        let train = attach_labels(decode_patterns(&fs::read(dir.join("train.bin"))?)?, &labels.train)?;
        let test = attach_labels(decode_patterns(&fs::read(dir.join("test.bin"))?)?, &labels.test)?;
        let mut min = [0.0; FEATURES];
        let mut max = [0.0; FEATURES];
        for (k, f) in stats.features.iter().enumerate() {
            min[k] = f.min;
            max[k] = f.max;
        }
        Ok(DatasetSplit {
            train,
            test,
            stats: NormalizationStats { min, max },
            split_seed: stats.seed,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.test)
            .map(|p| p.dt_id as usize + 1)
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_windows() -> Vec<RawWindow> {
        window_cycles(&generate_synthetic(3, 8, 11).unwrap())
    }

    #[test]
    fn reference_scale_counts() {
        let cycles = generate_synthetic(4, 132, 7).unwrap();
        assert_eq!(cycles.len(), 528);
        assert!(cycles.iter().all(|c| c.readings().len() == 170));
        let windows = window_cycles(&cycles);
        assert_eq!(windows.len(), 2640);
        let split = normalize_and_split(&windows, 0.8, 7).unwrap();
        assert_eq!(split.train.len(), 2112);
        assert_eq!(split.test.len(), 528);
        for class in 0..4 {
            assert_eq!(split.test.iter().filter(|p| p.dt_id() == class).count(), 132);
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_synthetic(2, 1, 0).unwrap();
        let b = generate_synthetic(2, 1, 0).unwrap();
        assert_eq!(a, b);
        let bits = |c: &[Cycle]| -> Vec<u64> {
            c.iter()
                .flat_map(|c| c.readings().iter().flat_map(|r| r.features()))
                .map(f64::to_bits)
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn generator_rejects_bad_counts() {
        assert!(matches!(generate_synthetic(1, 5, 0), Err(Error::Argument(_))));
        assert!(matches!(generate_synthetic(3, 0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn temperature_trajectories_are_separable() {
        // Brute force: per-device mean trajectory and pooled within-device
        // standard deviation, both computed directly from the readings.
        let cycles = generate_synthetic(4, 10, 1).unwrap();
        let mut mean = vec![vec![0.0; READINGS_PER_CYCLE]; 4];
        let mut count = [0usize; 4];
        for c in &cycles {
            count[c.dt_id as usize] += 1;
            for (j, r) in c.readings().iter().enumerate() {
                mean[c.dt_id as usize][j] += r.temperature_measured;
            }
        }
        for d in 0..4 {
            for v in &mut mean[d] {
                *v /= count[d] as f64;
            }
        }
        let mut sq = 0.0;
        let mut n = 0.0;
        for c in &cycles {
            for (j, r) in c.readings().iter().enumerate() {
                sq += (r.temperature_measured - mean[c.dt_id as usize][j]).powi(2);
                n += 1.0;
            }
        }
        let sigma = (sq / (n - 4.0 * READINGS_PER_CYCLE as f64)).sqrt();
        for a in 0..4 {
            for b in a + 1..4 {
                let gap = mean[a]
                    .iter()
                    .zip(&mean[b])
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>()
                    / READINGS_PER_CYCLE as f64;
                assert!(gap > 3.0 * sigma, "devices {a},{b}: gap {gap} vs sigma {sigma}");
            }
        }
    }

    #[test]
    fn windows_partition_cycles() {
        let cycles = generate_synthetic(2, 1, 3).unwrap();
        let windows = window_cycles(&cycles[..1]);
        assert_eq!(windows.len(), 5);
        let joined: Vec<SensorReading> =
            windows.iter().flat_map(|w| w.readings.iter().copied()).collect();
        assert_eq!(joined.as_slice(), cycles[0].readings());
        for w in &windows {
            assert!(w.readings[0].timestamp < w.readings[33].timestamp);
        }
    }

    #[test]
    fn normalization_hits_endpoints() {
        let windows = small_windows();
        let split = normalize_and_split(&windows, 0.75, 2).unwrap();
        for k in 0..FEATURES {
            let vals: Vec<f64> = split
                .train
                .iter()
                .flat_map(|p| (0..WINDOW_ROWS).map(move |r| p.get(r, k)))
                .collect();
            assert_eq!(vals.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
        for p in &split.test {
            assert!(p.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_range_feature_is_named() {
        let mut windows = small_windows();
        for w in &mut windows {
            for r in &mut w.readings {
                r.capacity = 1.5;
            }
        }
        match normalize_and_split(&windows, 0.8, 0) {
            Err(Error::Normalization { feature }) => assert_eq!(feature, "capacity"),
            other => panic!("expected normalization error, got {other:?}"),
        }
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let windows = small_windows();
        for f in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(
                normalize_and_split(&windows, f, 0),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn csv_round_trip_drops_voltage_charge() {
        let cycles = generate_synthetic(2, 2, 5).unwrap();
        let mut buf = Vec::new();
        write_csv(&cycles, &mut buf).unwrap();
        let ingested = ingest_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(ingested.cycles, cycles);
        assert!(ingested.warnings.is_empty());
    }

    fn one_cycle_csv(rows: usize, charge_offset: f64) -> String {
        let mut s = CSV_COLUMNS.join(",") + "\n";
        for j in 0..rows {
            let v = 4.0 - j as f64 * 1e-3;
            s += &format!(
                "0,3,{},{v},-2.0,{},1.9,{},1.8\n",
                j as f64 * 15.0,
                25.0 + j as f64 * 0.1,
                v + charge_offset
            );
        }
        s
    }

    #[test]
    fn ingest_single_cycle() {
        let out = ingest_csv_reader(one_cycle_csv(170, 0.0).as_bytes()).unwrap();
        assert_eq!(out.cycles.len(), 1);
        assert_eq!(out.cycles[0].readings().len(), 170);
        assert_eq!(out.cycles[0].readings()[0].features().len(), 5);
    }

    #[test]
    fn ingest_warns_on_voltage_charge_mismatch() {
        let out = ingest_csv_reader(one_cycle_csv(170, 0.25).as_bytes()).unwrap();
        assert_eq!(out.cycles.len(), 1);
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.cycles[0].readings()[0].voltage_measured, 4.0);
    }

    #[test]
    fn ingest_reports_short_cycle() {
        let err = ingest_csv_reader(one_cycle_csv(169, 0.0).as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("dt_id=0, cycle_id=3"), "{msg}");
    }

    #[test]
    fn ingest_names_missing_column() {
        let csv = "dt_id,cycle_id,timestamp,voltage_measured,current_measured,current_charge,voltage_charge,capacity\n";
        match ingest_csv_reader(csv.as_bytes()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "temperature_measured"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_non_monotone_timestamps() {
        let mut csv = one_cycle_csv(170, 0.0);
        csv = csv.replacen("0,3,30,", "0,3,0,", 1);
        let err = ingest_csv_reader(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("cycle_id=3"), "{err}");
    }

    #[test]
    fn dataset_files_round_trip() {
        let split = normalize_and_split(&small_windows(), 0.8, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        split.save(dir.path()).unwrap();
        let bytes = fs::read(dir.path().join("train.bin")).unwrap();
        assert_eq!(&bytes[..4], b"TWDT");
        assert_eq!(bytes.len(), 16 + split.train.len() * PATTERN_LEN * 8);
        let back = DatasetSplit::load(dir.path()).unwrap();
        assert_eq!(back, split);
    }

    #[test]
    fn pattern_decoder_rejects_bad_headers() {
        let split = normalize_and_split(&small_windows(), 0.8, 9).unwrap();
        let good = encode_patterns(&split.test[..2]);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_patterns(&bad).is_err());
        let mut bad = good.clone();
        bad[8] = 3;
        assert!(decode_patterns(&bad).is_err());
        assert!(decode_patterns(&good[..good.len() - 1]).is_err());
        assert_eq!(decode_patterns(&good).unwrap().len(), 2);
    }

    #[test]
    fn pattern_json_shape() {
        let split = normalize_and_split(&small_windows(), 0.8, 9).unwrap();
        let p = &split.test[0];
        let json = serde_json::to_value(p).unwrap();
        assert_eq!(json["values"].as_array().unwrap().len(), 34);
        let back: BehaviouralPattern = serde_json::from_value(json).unwrap();
        assert_eq!(&back, p);
        assert!(serde_json::from_str::<BehaviouralPattern>(r#"{"dt_id":0,"values":[[0.1]]}"#).is_err());
    }
}
