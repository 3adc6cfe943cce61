//! Tabular dataset: schema, label encoding, CSV loading, splits and
//! descriptive statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Ordered feature columns plus the name of the target column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    pub target: String,
}

impl FeatureSchema {
    pub fn new(columns: Vec<ColumnSpec>, target: impl Into<String>) -> Result<Self> {
        let schema = FeatureSchema {
            columns,
            target: target.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column {:?}", c.name)));
            }
        }
        if seen.contains(self.target.as_str()) {
            return Err(Error::Schema(format!(
                "target {:?} is listed among the feature columns",
                self.target
            )));
        }
        Ok(())
    }

    /// All columns numeric, named `x0, x1, ...`, target `label`.
    pub fn numeric(d: usize) -> Self {
        FeatureSchema {
            columns: (0..d)
                .map(|j| ColumnSpec {
                    name: format!("x{j}"),
                    kind: ColumnKind::Numeric,
                })
                .collect(),
            target: "label".into(),
        }
    }

    /// Column layout of the public Gorkha building-damage training table
    /// (values and labels joined on `building_id`).
    pub fn gorkha() -> Self {
        use ColumnKind::*;
        let mut cols: Vec<(String, ColumnKind)> = [
            ("geo_level_1_id", Categorical),
            ("geo_level_2_id", Categorical),
            ("geo_level_3_id", Categorical),
            ("count_floors_pre_eq", Numeric),
            ("age", Numeric),
            ("area_percentage", Numeric),
            ("height_percentage", Numeric),
            ("land_surface_condition", Categorical),
            ("foundation_type", Categorical),
            ("roof_type", Categorical),
            ("ground_floor_type", Categorical),
            ("other_floor_type", Categorical),
            ("position", Categorical),
            ("plan_configuration", Categorical),
        ]
        .into_iter()
        .map(|(n, k)| (n.to_string(), k))
        .collect();
        for m in [
            "adobe_mud",
            "mud_mortar_stone",
            "stone_flag",
            "cement_mortar_stone",
            "mud_mortar_brick",
            "cement_mortar_brick",
            "timber",
            "bamboo",
            "rc_non_engineered",
            "rc_engineered",
            "other",
        ] {
            cols.push((format!("has_superstructure_{m}"), Binary));
        }
        cols.push(("legal_ownership_status".into(), Categorical));
        cols.push(("count_families".into(), Numeric));
        cols.push(("has_secondary_use".into(), Binary));
        for u in [
            "agriculture",
            "hotel",
            "rental",
            "institution",
            "school",
            "industry",
            "health_post",
            "gov_office",
            "use_police",
            "other",
        ] {
            cols.push((format!("has_secondary_use_{u}"), Binary));
        }
        FeatureSchema {
            columns: cols
                .into_iter()
                .map(|(name, kind)| ColumnSpec { name, kind })
                .collect(),
            target: "damage_grade".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn project(&self, indices: &[usize]) -> FeatureSchema {
        FeatureSchema {
            columns: indices.iter().map(|&j| self.columns[j].clone()).collect(),
            target: self.target.clone(),
        }
    }
}

/// Raw category string <-> integer code, per categorical column and for the
/// target. Codes follow ascending lexicographic order of the raw values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEncoding {
    pub columns: BTreeMap<String, Vec<String>>,
    pub target: Vec<String>,
}

impl LabelEncoding {
    /// Build from observed raw values; duplicates are collapsed.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let set: BTreeSet<&str> = values.into_iter().collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn encode(&self, column: &str, raw: &str) -> Option<usize> {
        let cats = self.columns.get(column)?;
        cats.binary_search_by(|c| c.as_str().cmp(raw)).ok()
    }

    pub fn decode(&self, column: &str, code: usize) -> Option<&str> {
        self.columns.get(column)?.get(code).map(String::as_str)
    }

    pub fn encode_target(&self, raw: &str) -> Option<usize> {
        self.target.binary_search_by(|c| c.as_str().cmp(raw)).ok()
    }

    pub fn decode_target(&self, code: usize) -> Option<&str> {
        self.target.get(code).map(String::as_str)
    }

    /// Identity target encoding `"0".."n-1"` for synthetic data.
    pub fn synthetic(n_classes: usize) -> Self {
        let mut target: Vec<String> = (0..n_classes).map(|c| c.to_string()).collect();
        target.sort();
        LabelEncoding {
            columns: BTreeMap::new(),
            target,
        }
    }
}

/// Encoded feature matrix with integer class labels. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    schema: FeatureSchema,
    encoding: LabelEncoding,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        schema: FeatureSchema,
        encoding: LabelEncoding,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() != schema.len() {
            return Err(Error::DimensionMismatch {
                expected: schema.len(),
                got: features.ncols(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{n_classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
            schema,
            encoding,
        })
    }

    /// Dataset over an all-numeric synthetic schema.
    pub fn from_arrays(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let d = features.ncols();
        Dataset::new(
            features,
            labels,
            n_classes,
            FeatureSchema::numeric(d),
            LabelEncoding::synthetic(n_classes),
        )
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn encoding(&self) -> &LabelEncoding {
        &self.encoding
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Row indices of each class, ascending.
    pub fn class_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            rows[y].push(i);
        }
        rows
    }

    /// New dataset holding `rows` (in the given order, duplicates allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            schema: self.schema.clone(),
            encoding: self.encoding.clone(),
        }
    }

    /// New dataset holding the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(1), cols),
            labels: self.labels.clone(),
            n_classes: self.n_classes,
            schema: self.schema.project(cols),
            encoding: self.encoding.clone(),
        }
    }

    /// Same schema and encoding, different contents.
    pub fn with_data(&self, features: Array2<f64>, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(
            features,
            labels,
            self.n_classes,
            self.schema.clone(),
            self.encoding.clone(),
        )
    }

    /// Stratified row subsample of at most `max_rows` rows, original order kept.
    pub fn stratified_subsample(&self, max_rows: usize, seed: Seed) -> Result<Dataset> {
        if max_rows >= self.n() {
            return Ok(self.clone());
        }
        let fraction = max_rows as f64 / self.n() as f64;
        let mut keep = Vec::new();
        let mut rng = seed.derive("subsample").rng();
        for mut rows in self.class_rows() {
            let take = ((rows.len() as f64 * fraction).round() as usize).min(rows.len());
            rows.shuffle(&mut rng);
            keep.extend_from_slice(&rows[..take]);
        }
        keep.sort_unstable();
        Ok(self.select_rows(&keep))
    }
}

// ---------------------------------------------------------------------------
// CSV

struct RawTable {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    encoding: LabelEncoding,
}

fn read_table(
    path: &Path,
    schema: &FeatureSchema,
    fixed: Option<&LabelEncoding>,
    target_required: bool,
) -> Result<RawTable> {
    schema.validate()?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers()?.clone();
    let position = |name: &str| header.iter().position(|h| h.trim() == name);

    let mut col_idx = Vec::with_capacity(schema.len());
    for c in &schema.columns {
        col_idx.push(position(&c.name).ok_or_else(|| {
            Error::Schema(format!("missing column {:?}", c.name))
        })?);
    }
    let target_idx = match position(&schema.target) {
        Some(i) => Some(i),
        None if target_required => {
            return Err(Error::Schema(format!("missing column {:?}", schema.target)))
        }
        None => None,
    };

    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec?);
    }
    if records.is_empty() {
        return Err(Error::EmptyData);
    }

    let cell = |row: usize, rec: &csv::StringRecord, idx: usize, name: &str| -> Result<String> {
        let v = rec.get(idx).map(str::trim).unwrap_or("");
        if v.is_empty() {
            return Err(Error::Parse {
                row: row + 1,
                column: name.to_string(),
                message: "missing value".into(),
            });
        }
        Ok(v.to_string())
    };

    let encoding = match fixed {
        Some(enc) => enc.clone(),
        None => {
            let mut enc = LabelEncoding::default();
            for (c, &idx) in schema.columns.iter().zip(&col_idx) {
                if c.kind == ColumnKind::Categorical {
                    let mut vals = Vec::with_capacity(records.len());
                    for (r, rec) in records.iter().enumerate() {
                        vals.push(cell(r, rec, idx, &c.name)?);
                    }
                    enc.columns
                        .insert(c.name.clone(), LabelEncoding::fit(vals.iter().map(String::as_str)));
                }
            }
            if let Some(t) = target_idx {
                let mut vals = Vec::with_capacity(records.len());
                for (r, rec) in records.iter().enumerate() {
                    vals.push(cell(r, rec, t, &schema.target)?);
                }
                enc.target = LabelEncoding::fit(vals.iter().map(String::as_str));
            }
            enc
        }
    };

    let n = records.len();
    let d = schema.len();
    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels = target_idx.map(|_| Vec::with_capacity(n));
    for (r, rec) in records.iter().enumerate() {
        for (j, (c, &idx)) in schema.columns.iter().zip(&col_idx).enumerate() {
            let raw = cell(r, rec, idx, &c.name)?;
            features[[r, j]] = match c.kind {
                ColumnKind::Numeric => {
                    let v: f64 = raw.parse().map_err(|_| Error::Parse {
                        row: r + 1,
                        column: c.name.clone(),
                        message: format!("cannot parse {raw:?} as a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row: r + 1,
                            column: c.name.clone(),
                            message: format!("non-finite value {raw:?}"),
                        });
                    }
                    v
                }
                ColumnKind::Binary => match raw.as_str() {
                    "0" => 0.0,
                    "1" => 1.0,
                    _ => {
                        return Err(Error::Parse {
                            row: r + 1,
                            column: c.name.clone(),
                            message: format!("binary column admits only 0 or 1, got {raw:?}"),
                        })
                    }
                },
                ColumnKind::Categorical => match encoding.encode(&c.name, &raw) {
                    Some(code) => code as f64,
                    None => {
                        return Err(Error::UnseenCategory {
                            row: r + 1,
                            column: c.name.clone(),
                            value: raw,
                        })
                    }
                },
            };
        }
        if let (Some(t), Some(labels)) = (target_idx, labels.as_mut()) {
            let raw = cell(r, rec, t, &schema.target)?;
            let code = encoding.encode_target(&raw).ok_or_else(|| Error::UnseenCategory {
                row: r + 1,
                column: schema.target.clone(),
                value: raw.clone(),
            })?;
            labels.push(code);
        }
    }
    Ok(RawTable {
        features,
        labels,
        encoding,
    })
}

/// Load a CSV, fitting a fresh [`LabelEncoding`].
pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    let t = read_table(path.as_ref(), schema, None, true)?;
    let n_classes = t.encoding.target.len();
    Dataset::new(
        t.features,
        t.labels.expect("target required"),
        n_classes,
        schema.clone(),
        t.encoding,
    )
}

/// Load a CSV with an existing encoding. The target column is optional;
/// categorical values the encoding has never seen are an error.
pub fn read_features(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    encoding: &LabelEncoding,
) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    let t = read_table(path.as_ref(), schema, Some(encoding), false)?;
    Ok((t.features, t.labels))
}

// ---------------------------------------------------------------------------
// Splits

/// Per class, `round(count * test_fraction)` rows (at least one, at most
/// `count - 1`) go to the test set. Both halves keep the original row order.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: Seed) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut rng = seed.derive("stratified_split").rng();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut rows) in ds.class_rows().into_iter().enumerate() {
        let count = rows.len();
        if count == 0 {
            continue;
        }
        if count < 2 {
            return Err(Error::Stratification(format!(
                "class {class} has {count} instance(s); at least 2 required"
            )));
        }
        let n_test = ((count as f64 * test_fraction).round() as usize).clamp(1, count - 1);
        rows.shuffle(&mut rng);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

// ---------------------------------------------------------------------------
// Descriptive statistics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    /// Set when the sample std is undefined (a single row); `std` is then 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub std_undefined: bool,
}

/// Linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn summarize(values: &[f64]) -> NumericSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let (std, std_undefined) = if n > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        ((ss / (n - 1) as f64).sqrt(), false)
    } else {
        (0.0, true)
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    NumericSummary {
        count: n,
        mean,
        std,
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
        std_undefined,
    }
}

/// Count / mean / sample std / quartiles per numeric column, schema order.
pub fn describe_numeric(ds: &Dataset) -> Result<Vec<(String, NumericSummary)>> {
    let cols: Vec<usize> = (0..ds.d())
        .filter(|&j| ds.schema.columns[j].kind == ColumnKind::Numeric)
        .collect();
    if cols.is_empty() {
        return Err(Error::invalid("no numeric columns to describe"));
    }
    Ok(cols
        .into_iter()
        .map(|j| {
            let values: Vec<f64> = ds.features.column(j).to_vec();
            (ds.schema.columns[j].name.clone(), summarize(&values))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencySummary {
    pub n_unique: usize,
    pub mode_code: usize,
    pub mode_frequency: usize,
}

/// Distinct-value count and mode (ties toward the smallest code).
pub fn frequency_table(ds: &Dataset, column: &str) -> Result<FrequencySummary> {
    let j = ds
        .schema
        .index_of(column)
        .ok_or_else(|| Error::Schema(format!("unknown column {column:?}")))?;
    if ds.schema.columns[j].kind == ColumnKind::Numeric {
        return Err(Error::invalid(format!(
            "column {column:?} is numeric; frequency tables need categorical or binary columns"
        )));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in ds.features.column(j) {
        *counts.entry(v as usize).or_default() += 1;
    }
    let mut best = (0usize, 0usize);
    for (&code, &count) in &counts {
        if count > best.1 {
            best = (code, count);
        }
    }
    Ok(FrequencySummary {
        n_unique: counts.len(),
        mode_code: best.0,
        mode_frequency: best.1,
    })
}

/// Frequency tables for every categorical and binary column, schema order.
pub fn frequency_tables(ds: &Dataset) -> Result<Vec<(String, FrequencySummary)>> {
    ds.schema
        .columns
        .iter()
        .filter(|c| c.kind != ColumnKind::Numeric)
        .map(|c| Ok((c.name.clone(), frequency_table(ds, &c.name)?)))
        .collect()
}

/// Pearson correlations over the numeric columns plus the encoded target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub columns: Vec<String>,
    /// `None` where a zero-variance column makes the coefficient undefined.
    pub values: Vec<Vec<Option<f64>>>,
    pub undefined: Vec<String>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn correlation_matrix(ds: &Dataset) -> Result<CorrelationMatrix> {
    let mut columns = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    for (j, c) in ds.schema.columns.iter().enumerate() {
        if c.kind == ColumnKind::Numeric {
            columns.push(c.name.clone());
            data.push(ds.features.column(j).to_vec());
        }
    }
    if columns.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 numeric columns"));
    }
    columns.push(ds.schema.target.clone());
    data.push(ds.labels.iter().map(|&y| y as f64).collect());

    let m = columns.len();
    let constant: Vec<bool> = data
        .iter()
        .map(|col| col.iter().all(|&v| v == col[0]))
        .collect();
    let mut values = vec![vec![None; m]; m];
    for a in 0..m {
        if constant[a] {
            continue;
        }
        values[a][a] = Some(1.0);
        for b in (a + 1)..m {
            if constant[b] {
                continue;
            }
            let r = pearson(&data[a], &data[b]);
            values[a][b] = r;
            values[b][a] = r;
        }
    }
    let undefined = columns
        .iter()
        .zip(&constant)
        .filter(|(_, &c)| c)
        .map(|(n, _)| n.clone())
        .collect();
    Ok(CorrelationMatrix {
        columns,
        values,
        undefined,
    })
}
