//! Datasets: test-function generators, CSV ingestion, normalization to
//! the unit box, and deterministic 60/20/20 splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at row {row}, column {col}: {message}")]
    ParseError { row: usize, col: usize, message: String },
    #[error("schema mismatch: expected {expected} columns, found {found}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("column {col} has zero range and cannot be normalized")]
    DegenerateColumn { col: usize },
    #[error("need at least {min} rows, found {found}")]
    TooFewRows { min: usize, found: usize },
    #[error("metadata format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Affine raw→unit map for one column: unit = (raw − lo)/(hi − lo).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub lo: f64,
    pub hi: f64,
}

impl AffineMap {
    pub fn new(lo: f64, hi: f64) -> Self {
        AffineMap { lo, hi }
    }

    pub fn from_observed(values: impl Iterator<Item = f64>, col: usize) -> Result<Self, DataError> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !(hi > lo) {
            return Err(DataError::DegenerateColumn { col });
        }
        Ok(AffineMap { lo, hi })
    }

    pub fn to_unit(&self, raw: f64) -> f64 {
        (raw - self.lo) / (self.hi - self.lo)
    }

    pub fn from_unit(&self, unit: f64) -> f64 {
        self.lo + unit * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Normalized sample matrix in [0,1]^{N×K} with targets, split labels,
/// and the affine maps that recover raw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub k: usize,
    /// N×K, row-major, all entries in [0,1].
    pub x: Vec<f64>,
    /// Normalized targets, length N.
    pub y: Vec<f64>,
    pub splits: Vec<Split>,
    pub input_maps: Vec<AffineMap>,
    pub output_map: AffineMap,
    /// Generator spec or source-file hash, for replayability.
    pub provenance: String,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Writes the normalized snapshot as `<prefix>.csv` plus a
    /// `<prefix>.meta.json` sidecar with the normalization maps and
    /// provenance, so experiments are replayable.
    pub fn save(&self, prefix: &Path) -> Result<(), DataError> {
        let csv_path = prefix.with_extension("csv");
        let mut out = String::new();
        for j in 0..self.k {
            out.push_str(&format!("x{},", j + 1));
        }
        out.push_str("y,split\n");
        for i in 0..self.n() {
            for v in self.row(i) {
                out.push_str(&format!("{v:.17},"));
            }
            let split = match self.splits[i] {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            };
            out.push_str(&format!("{:.17},{split}\n", self.y[i]));
        }
        std::fs::write(&csv_path, out)?;
        let meta = serde_json::json!({
            "schema_version": 1,
            "name": self.name,
            "k": self.k,
            "n": self.n(),
            "input_maps": self.input_maps,
            "output_map": self.output_map,
            "provenance": self.provenance,
        });
        std::fs::write(
            prefix.with_extension("meta.json"),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
        Ok(())
    }

    /// Reads a snapshot written by [`Dataset::save`].
    pub fn load(prefix: &Path) -> Result<Self, DataError> {
        let meta_text = std::fs::read_to_string(prefix.with_extension("meta.json"))?;
        let meta: serde_json::Value = serde_json::from_str(&meta_text)?;
        let k = meta["k"].as_u64().unwrap_or(0) as usize;
        let input_maps: Vec<AffineMap> = serde_json::from_value(meta["input_maps"].clone())?;
        let output_map: AffineMap = serde_json::from_value(meta["output_map"].clone())?;
        let name = meta["name"].as_str().unwrap_or("dataset").to_string();
        let provenance = meta["provenance"].as_str().unwrap_or("").to_string();

        let text = std::fs::read_to_string(prefix.with_extension("csv"))?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut splits = Vec::new();
        for (row_idx, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != k + 2 {
                return Err(DataError::SchemaMismatch { expected: k + 2, found: fields.len() });
            }
            for (col, f) in fields[..k].iter().enumerate() {
                x.push(parse_field(f, row_idx, col)?);
            }
            y.push(parse_field(fields[k], row_idx, k)?);
            splits.push(match fields[k + 1] {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => {
                    return Err(DataError::ParseError {
                        row: row_idx,
                        col: k + 1,
                        message: format!("unknown split label {other:?}"),
                    })
                }
            });
        }
        Ok(Dataset { name, k, x, y, splits, input_maps, output_map, provenance })
    }
}

fn parse_field(f: &str, row: usize, col: usize) -> Result<f64, DataError> {
    f.trim().parse().map_err(|_| DataError::ParseError {
        row,
        col,
        message: format!("not a number: {f:?}"),
    })
}

// ---------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    Ishigami,
    OtlCircuit,
    Piston,
}

impl TestFunctionKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "ishigami" | "ish" => Some(TestFunctionKind::Ishigami),
            "otl_circuit" | "circuit" | "cir" => Some(TestFunctionKind::OtlCircuit),
            "piston" | "pst" => Some(TestFunctionKind::Piston),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunctionKind::Ishigami => "ishigami",
            TestFunctionKind::OtlCircuit => "otl_circuit",
            TestFunctionKind::Piston => "piston",
        }
    }

    pub fn dim(&self) -> usize {
        self.raw_box().len()
    }

    /// Standard raw input boxes from the uncertainty-quantification
    /// test-function literature.
    pub fn raw_box(&self) -> &'static [(f64, f64)] {
        use std::f64::consts::PI;
        const ISH: [(f64, f64); 3] =
            [(-PI, PI), (-PI, PI), (-PI, PI)];
        const CIR: [(f64, f64); 6] = [
            (50.0, 150.0),  // Rb1 [kΩ]
            (25.0, 70.0),   // Rb2 [kΩ]
            (0.5, 3.0),     // Rf [kΩ]
            (1.2, 2.5),     // Rc1 [kΩ]
            (0.25, 1.2),    // Rc2 [kΩ]
            (50.0, 300.0),  // β
        ];
        const PST: [(f64, f64); 7] = [
            (30.0, 60.0),          // M  piston weight [kg]
            (0.005, 0.020),        // S  surface area [m²]
            (0.002, 0.010),        // V0 initial gas volume [m³]
            (1000.0, 5000.0),      // k  spring coefficient [N/m]
            (90000.0, 110000.0),   // P0 atmospheric pressure [N/m²]
            (290.0, 296.0),        // Ta ambient temperature [K]
            (340.0, 360.0),        // T0 filling gas temperature [K]
        ];
        match self {
            TestFunctionKind::Ishigami => &ISH,
            TestFunctionKind::OtlCircuit => &CIR,
            TestFunctionKind::Piston => &PST,
        }
    }
}

/// Generator parameters. Ishigami coefficients default to a=7, b=0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    pub kind: TestFunctionKind,
    pub samples: usize,
    pub ishigami_a: f64,
    pub ishigami_b: f64,
}

impl TestFunctionSpec {
    pub fn new(kind: TestFunctionKind, samples: usize) -> Self {
        TestFunctionSpec { kind, samples, ishigami_a: 7.0, ishigami_b: 0.1 }
    }

    /// Raw function value at a raw-space point.
    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        match self.kind {
            TestFunctionKind::Ishigami => {
                x[0].sin()
                    + self.ishigami_a * x[1].sin().powi(2)
                    + self.ishigami_b * x[2].powi(4) * x[0].sin()
            }
            TestFunctionKind::OtlCircuit => {
                let (rb1, rb2, rf, rc1, rc2, beta) = (x[0], x[1], x[2], x[3], x[4], x[5]);
                let vb1 = 12.0 * rb2 / (rb1 + rb2);
                let brc = beta * (rc2 + 9.0);
                (vb1 + 0.74) * brc / (brc + rf)
                    + 11.35 * rf / (brc + rf)
                    + 0.74 * rf * brc / ((brc + rf) * rc1)
            }
            TestFunctionKind::Piston => {
                let (m, s, v0, k, p0, ta, t0) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6]);
                let a = p0 * s + 19.62 * m - k * v0 / s;
                let pv = p0 * v0 / t0;
                let v = s / (2.0 * k) * ((a * a + 4.0 * k * pv * ta).sqrt() - a);
                2.0 * std::f64::consts::PI * (m / (k + s * s * pv * ta / (v * v))).sqrt()
            }
        }
    }

    /// Function value at a unit-box point (raw box applied first).
    pub fn eval_unit(&self, u: &[f64]) -> f64 {
        let raw: Vec<f64> = self
            .kind
            .raw_box()
            .iter()
            .zip(u)
            .map(|(&(lo, hi), &ui)| lo + ui * (hi - lo))
            .collect();
        self.eval_raw(&raw)
    }
}

/// Samples the test function uniformly over its raw box, min-max
/// normalizes inputs (by the box) and output (by the observed range),
/// and assigns 60/20/20 splits.
pub fn generate(spec: &TestFunctionSpec, seed: u64) -> Result<Dataset, DataError> {
    if spec.samples < 10 {
        return Err(DataError::TooFewRows { min: 10, found: spec.samples });
    }
    let k = spec.kind.dim();
    let bx = spec.kind.raw_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.samples;
    let mut x = Vec::with_capacity(n * k);
    let mut raw_y = Vec::with_capacity(n);
    let mut point = vec![0.0; k];
    for _ in 0..n {
        for (j, &(lo, hi)) in bx.iter().enumerate() {
            let u: f64 = rng.gen_range(0.0..1.0);
            point[j] = lo + u * (hi - lo);
            x.push(u);
        }
        raw_y.push(spec.eval_raw(&point));
    }
    let output_map = AffineMap::from_observed(raw_y.iter().copied(), k)?;
    let y = raw_y.iter().map(|&v| output_map.to_unit(v)).collect();
    let input_maps = bx.iter().map(|&(lo, hi)| AffineMap::new(lo, hi)).collect();
    let mut ds = Dataset {
        name: spec.kind.name().to_string(),
        k,
        x,
        y,
        splits: Vec::new(),
        input_maps,
        output_map,
        provenance: format!(
            "generator:{} samples:{} seed:{} a:{} b:{}",
            spec.kind.name(),
            n,
            seed,
            spec.ishigami_a,
            spec.ishigami_b
        ),
    };
    assign_splits(&mut ds, seed);
    Ok(ds)
}

/// Deterministic seeded permutation into 60/20/20 train/val/test
/// (floor train, floor val, remainder test).
pub fn assign_splits(ds: &mut Dataset, seed: u64) {
    let n = ds.y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5317_5eed);
    order.shuffle(&mut rng);
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    ds.splits = splits;
}

// ---------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvSchema {
    /// Airfoil self-noise: 5 features + target.
    Asn,
    /// Combined-cycle power plant: 4 features + target.
    Ccp,
    /// Concrete compressive strength: 8 features + target.
    Ccs,
    /// Last column is the target, any feature count.
    Generic,
}

impl CsvSchema {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "asn" => Some(CsvSchema::Asn),
            "ccp" => Some(CsvSchema::Ccp),
            "ccs" => Some(CsvSchema::Ccs),
            "generic" => Some(CsvSchema::Generic),
            _ => None,
        }
    }

    fn expected_features(&self) -> Option<usize> {
        match self {
            CsvSchema::Asn => Some(5),
            CsvSchema::Ccp => Some(4),
            CsvSchema::Ccs => Some(8),
            CsvSchema::Generic => None,
        }
    }
}

/// Parses a numeric CSV (comma or semicolon delimited, optional header),
/// min-max normalizes features and target from the observed data, and
/// assigns seeded 60/20/20 splits.
pub fn ingest_csv(path: &Path, schema: CsvSchema, seed: u64) -> Result<Dataset, DataError> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let delimiter = detect_delimiter(&text);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (row_idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter).collect();
        let parsed: Result<Vec<f64>, _> = fields
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect();
        match parsed {
            Err(_) if rows.is_empty() && row_idx == 0 => continue, // header row
            Err(_) => {
                let col = fields
                    .iter()
                    .position(|f| f.trim().parse::<f64>().is_err())
                    .unwrap_or(0);
                return Err(DataError::ParseError {
                    row: row_idx,
                    col,
                    message: format!("not a number: {:?}", fields[col]),
                });
            }
            Ok(vals) => {
                match width {
                    None => width = Some(vals.len()),
                    Some(w) if w != vals.len() => {
                        return Err(DataError::SchemaMismatch { expected: w, found: vals.len() })
                    }
                    _ => {}
                }
                rows.push(vals);
            }
        }
    }
    if rows.len() < 5 {
        return Err(DataError::TooFewRows { min: 5, found: rows.len() });
    }
    let width = width.unwrap();
    if width < 2 {
        return Err(DataError::SchemaMismatch { expected: 2, found: width });
    }
    if let Some(feat) = schema.expected_features() {
        if width != feat + 1 {
            return Err(DataError::SchemaMismatch { expected: feat + 1, found: width });
        }
    }
    let k = width - 1;

    let mut input_maps = Vec::with_capacity(k);
    for col in 0..k {
        input_maps.push(AffineMap::from_observed(rows.iter().map(|r| r[col]), col)?);
    }
    let output_map = AffineMap::from_observed(rows.iter().map(|r| r[k]), k)?;

    let mut x = Vec::with_capacity(rows.len() * k);
    let mut y = Vec::with_capacity(rows.len());
    for r in &rows {
        for col in 0..k {
            x.push(input_maps[col].to_unit(r[col]));
        }
        y.push(output_map.to_unit(r[k]));
    }

    let digest = Sha256::digest(&bytes);
    let mut ds = Dataset {
        name: format!("{:?}", schema).to_lowercase(),
        k,
        x,
        y,
        splits: Vec::new(),
        input_maps,
        output_map,
        provenance: format!("file:{} sha256:{:x} seed:{}", path.display(), digest, seed),
    };
    assign_splits(&mut ds, seed);
    Ok(ds)
}

fn detect_delimiter(text: &str) -> char {
    let first = text.lines().next().unwrap_or("");
    let commas = first.matches(',').count();
    let semis = first.matches(';').count();
    if semis > commas {
        ';'
    } else {
        ','
    }
}
