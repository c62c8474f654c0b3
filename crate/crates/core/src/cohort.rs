//! Canonical data model for two-arm survival cohorts plus CSV ingestion.
//!
//! A [`Cohort`] holds a feature matrix with optional missing cells, one
//! treatment arm per patient, and a right-censored survival outcome per
//! patient. The CSV format is: UTF-8, comma-separated, header row, empty
//! string = missing, binary features as 0/1, treatment as literal
//! `SAVR`/`TAVR`. The schema comes from a JSON document (see
//! [`FeatureSchema`]).

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature measurement kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

/// One feature column: name plus kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

/// Column layout of a cohort file.
///
/// JSON form:
/// ```json
/// {
///   "features": [{"name": "age", "kind": "continuous"}, ...],
///   "treatment": "treatment",
///   "time": "time_days",
///   "event": "event",
///   "id": "id"
/// }
/// ```
/// The `id` key is optional; when absent, a column literally named `id` is
/// used if present, otherwise sequential ids are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    #[serde(rename = "treatment")]
    pub treatment_column: String,
    #[serde(rename = "time")]
    pub time_column: String,
    #[serde(rename = "event")]
    pub event_column: String,
    #[serde(rename = "id", default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
}

impl FeatureSchema {
    /// Checks the schema invariants: unique column names, and the
    /// treatment/time/event columns not doubling as features.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate feature column `{}`",
                    f.name
                )));
            }
        }
        for reserved in [&self.treatment_column, &self.time_column, &self.event_column] {
            if seen.contains(reserved.as_str()) {
                return Err(Error::SchemaMismatch(format!(
                    "column `{reserved}` cannot be both a feature and a reserved column"
                )));
            }
        }
        Ok(())
    }

    /// Number of features, `p`.
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Index of a feature by name.
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Names of all features in schema order.
    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Loads a schema from a JSON file and validates it.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let schema: FeatureSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }
}

/// Treatment arm. The integer encoding is fixed: SAVR = 0, TAVR = 1, so
/// column indices of per-arm matrices are unambiguous everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TreatmentArm {
    #[serde(rename = "SAVR")]
    Savr,
    #[serde(rename = "TAVR")]
    Tavr,
}

impl TreatmentArm {
    pub const ALL: [TreatmentArm; 2] = [TreatmentArm::Savr, TreatmentArm::Tavr];

    /// Stable column index: SAVR = 0, TAVR = 1.
    pub fn index(self) -> usize {
        match self {
            TreatmentArm::Savr => 0,
            TreatmentArm::Tavr => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<TreatmentArm> {
        match i {
            0 => Some(TreatmentArm::Savr),
            1 => Some(TreatmentArm::Tavr),
            _ => None,
        }
    }

    /// The other arm.
    pub fn other(self) -> TreatmentArm {
        match self {
            TreatmentArm::Savr => TreatmentArm::Tavr,
            TreatmentArm::Tavr => TreatmentArm::Savr,
        }
    }

    /// Case-insensitive parse of `SAVR`/`TAVR`.
    pub fn parse(s: &str) -> Option<TreatmentArm> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SAVR" => Some(TreatmentArm::Savr),
            "TAVR" => Some(TreatmentArm::Tavr),
            _ => None,
        }
    }
}

impl fmt::Display for TreatmentArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreatmentArm::Savr => write!(f, "SAVR"),
            TreatmentArm::Tavr => write!(f, "TAVR"),
        }
    }
}

/// Right-censored survival outcome. `event = false` means the patient was
/// censored at `time_days` (follow-up ended without an observed death).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub time_days: f64,
    pub event: bool,
}

/// Outcome label relative to a horizon.
///
/// `Bad` = death observed at or before the horizon. `Good` = follow-up
/// reached the horizon without a death inside it. `Indeterminate` =
/// censored before the horizon, outcome unknowable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Good,
    Bad,
    Indeterminate,
}

/// A cohort: schema, N×p feature matrix with optional missing cells, one
/// arm and one outcome per patient. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    schema: FeatureSchema,
    ids: Vec<String>,
    /// Row-major N×p cells; `None` = missing.
    features: Vec<Option<f64>>,
    arms: Vec<TreatmentArm>,
    outcomes: Vec<SurvivalOutcome>,
}

impl Cohort {
    /// Builds a cohort from parts, checking the row-count and cell-domain
    /// invariants.
    pub fn new(
        schema: FeatureSchema,
        ids: Vec<String>,
        features: Vec<Option<f64>>,
        arms: Vec<TreatmentArm>,
        outcomes: Vec<SurvivalOutcome>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = ids.len();
        let p = schema.n_features();
        if features.len() != n * p {
            return Err(Error::InconsistentDimensions(format!(
                "feature matrix has {} cells, expected {}×{}",
                features.len(),
                n,
                p
            )));
        }
        if arms.len() != n || outcomes.len() != n {
            return Err(Error::InconsistentDimensions(format!(
                "ids/arms/outcomes lengths disagree: {}/{}/{}",
                n,
                arms.len(),
                outcomes.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (row, o) in outcomes.iter().enumerate() {
            if !(o.time_days >= 0.0) {
                return Err(Error::UnparsableCell {
                    row,
                    col: schema.time_column.clone(),
                    value: o.time_days.to_string(),
                });
            }
        }
        for (j, spec) in schema.features.iter().enumerate() {
            if spec.kind == FeatureKind::Binary {
                for row in 0..n {
                    if let Some(v) = features[row * p + j] {
                        if v != 0.0 && v != 1.0 {
                            return Err(Error::UnparsableCell {
                                row,
                                col: spec.name.clone(),
                                value: v.to_string(),
                            });
                        }
                    }
                }
            }
        }
        Ok(Cohort { schema, ids, features, arms, outcomes })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn p(&self) -> usize {
        self.schema.n_features()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn arms(&self) -> &[TreatmentArm] {
        &self.arms
    }

    pub fn outcomes(&self) -> &[SurvivalOutcome] {
        &self.outcomes
    }

    /// Cell (row, feature); `None` if missing.
    pub fn feature(&self, row: usize, col: usize) -> Option<f64> {
        self.features[row * self.p() + col]
    }

    /// All cells of one row in schema order.
    pub fn row(&self, row: usize) -> &[Option<f64>] {
        let p = self.p();
        &self.features[row * p..(row + 1) * p]
    }

    /// Observed (non-missing) values of one feature column.
    pub fn observed_column(&self, col: usize) -> Vec<f64> {
        (0..self.n()).filter_map(|i| self.feature(i, col)).collect()
    }

    /// Count of missing cells over the whole matrix.
    pub fn n_missing(&self) -> usize {
        self.features.iter().filter(|c| c.is_none()).count()
    }

    /// Dense copy of the feature matrix; errors on the first missing cell.
    pub fn dense_features(&self) -> Result<Vec<f64>> {
        let p = self.p();
        self.features
            .iter()
            .enumerate()
            .map(|(k, c)| {
                c.ok_or_else(|| Error::MissingFeatureValue {
                    row: k / p,
                    feature: self.schema.features[k % p].name.clone(),
                })
            })
            .collect()
    }

    /// New cohort containing the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Cohort {
        let p = self.p();
        let mut features = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            features.extend_from_slice(&self.features[r * p..(r + 1) * p]);
        }
        Cohort {
            schema: self.schema.clone(),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            features,
            arms: rows.iter().map(|&r| self.arms[r]).collect(),
            outcomes: rows.iter().map(|&r| self.outcomes[r]).collect(),
        }
    }

    /// Copy with one feature cell replaced (used by imputation).
    pub(crate) fn with_cell(&self, row: usize, col: usize, value: f64) -> Cohort {
        let mut out = self.clone();
        let p = out.p();
        out.features[row * p + col] = Some(value);
        out
    }

    /// Copy with a wholesale replacement of the feature cells.
    pub(crate) fn with_features(&self, features: Vec<Option<f64>>) -> Cohort {
        assert_eq!(features.len(), self.features.len());
        Cohort { features, ..self.clone() }
    }

    pub(crate) fn feature_cells(&self) -> &[Option<f64>] {
        &self.features
    }
}

/// Labels every patient relative to `horizon_days`. Length equals N; each
/// patient maps to exactly one label.
pub fn derive_labels(cohort: &Cohort, horizon_days: f64) -> Vec<BinaryLabel> {
    assert!(horizon_days > 0.0, "horizon must be positive");
    cohort
        .outcomes()
        .iter()
        .map(|o| label_outcome(o, horizon_days))
        .collect()
}

fn label_outcome(o: &SurvivalOutcome, horizon_days: f64) -> BinaryLabel {
    if o.event && o.time_days <= horizon_days {
        BinaryLabel::Bad
    } else if o.time_days >= horizon_days {
        BinaryLabel::Good
    } else {
        BinaryLabel::Indeterminate
    }
}

/// Order-preserving partition into (SAVR rows, TAVR rows).
pub fn split_by_arm(cohort: &Cohort) -> (Cohort, Cohort) {
    let savr: Vec<usize> = (0..cohort.n())
        .filter(|&i| cohort.arms()[i] == TreatmentArm::Savr)
        .collect();
    let tavr: Vec<usize> = (0..cohort.n())
        .filter(|&i| cohort.arms()[i] == TreatmentArm::Tavr)
        .collect();
    (cohort.subset(&savr), cohort.subset(&tavr))
}

/// Loads a cohort CSV against a schema.
///
/// Header names are matched exactly; every schema column must be present.
/// Empty cells become missing. Treatment values parse case-insensitively.
pub fn load_cohort(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Cohort> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_cohort(file, schema)
}

/// Same as [`load_cohort`] but from any reader.
pub fn read_cohort(reader: impl std::io::Read, schema: &FeatureSchema) -> Result<Cohort> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let feature_cols: Vec<usize> = schema
        .features
        .iter()
        .map(|f| col_of(&f.name))
        .collect::<Result<_>>()?;
    let treatment_col = col_of(&schema.treatment_column)?;
    let time_col = col_of(&schema.time_column)?;
    let event_col = col_of(&schema.event_column)?;
    let id_col = match &schema.id_column {
        Some(name) => Some(col_of(name)?),
        None => headers.iter().position(|h| h == "id"),
    };

    let p = schema.n_features();
    let mut ids = Vec::new();
    let mut features = Vec::new();
    let mut arms = Vec::new();
    let mut outcomes = Vec::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |col: usize| record.get(col).unwrap_or("").trim();

        ids.push(match id_col {
            Some(c) => cell(c).to_string(),
            None => format!("r{row:06}"),
        });

        for (j, &c) in feature_cols.iter().enumerate() {
            let raw = cell(c);
            if raw.is_empty() {
                features.push(None);
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| Error::UnparsableCell {
                row,
                col: schema.features[j].name.clone(),
                value: raw.to_string(),
            })?;
            if schema.features[j].kind == FeatureKind::Binary && v != 0.0 && v != 1.0 {
                return Err(Error::UnparsableCell {
                    row,
                    col: schema.features[j].name.clone(),
                    value: raw.to_string(),
                });
            }
            features.push(Some(v));
        }

        let arm_raw = cell(treatment_col);
        arms.push(TreatmentArm::parse(arm_raw).ok_or_else(|| Error::UnknownTreatment {
            row,
            value: arm_raw.to_string(),
        })?);

        let time_raw = cell(time_col);
        let time_days: f64 = time_raw.parse().map_err(|_| Error::UnparsableCell {
            row,
            col: schema.time_column.clone(),
            value: time_raw.to_string(),
        })?;
        let event_raw = cell(event_col);
        let event = match event_raw {
            "0" => false,
            "1" => true,
            _ => {
                return Err(Error::UnparsableCell {
                    row,
                    col: schema.event_column.clone(),
                    value: event_raw.to_string(),
                })
            }
        };
        if !(time_days >= 0.0) {
            return Err(Error::UnparsableCell {
                row,
                col: schema.time_column.clone(),
                value: time_raw.to_string(),
            });
        }
        outcomes.push(SurvivalOutcome { time_days, event });
    }
    let _ = p;

    Cohort::new(schema.clone(), ids, features, arms, outcomes)
}

/// Writes a cohort back to CSV in the canonical layout: id first, features
/// in schema order, then treatment, time, event. Floats use the shortest
/// round-trip formatting, so read → write → read is cell-identical.
pub fn write_cohort(path: impl AsRef<Path>, cohort: &Cohort) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_cohort_to(file, cohort)
}

/// Same as [`write_cohort`] but to any writer.
pub fn write_cohort_to(writer: impl std::io::Write, cohort: &Cohort) -> Result<()> {
    let schema = cohort.schema();
    let mut wtr = csv::Writer::from_writer(writer);
    let id_name = schema.id_column.clone().unwrap_or_else(|| "id".to_string());
    let mut header = vec![id_name];
    header.extend(schema.features.iter().map(|f| f.name.clone()));
    header.push(schema.treatment_column.clone());
    header.push(schema.time_column.clone());
    header.push(schema.event_column.clone());
    wtr.write_record(&header)?;

    for i in 0..cohort.n() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(cohort.ids()[i].clone());
        for j in 0..cohort.p() {
            rec.push(match cohort.feature(i, j) {
                Some(v) => format_float(v),
                None => String::new(),
            });
        }
        rec.push(cohort.arms()[i].to_string());
        rec.push(format_float(cohort.outcomes()[i].time_days));
        rec.push(if cohort.outcomes()[i].event { "1" } else { "0" }.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Shortest representation that parses back to the same f64.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_schema() -> FeatureSchema {
        FeatureSchema {
            features: vec![
                FeatureSpec { name: "age".into(), kind: FeatureKind::Continuous },
                FeatureSpec { name: "diabetes".into(), kind: FeatureKind::Binary },
            ],
            treatment_column: "treatment".into(),
            time_column: "time_days".into(),
            event_column: "event".into(),
            id_column: None,
        }
    }

    #[test]
    fn loads_three_complete_rows() {
        let csv = "id,age,diabetes,treatment,time_days,event\n\
                   a,70,0,SAVR,2000,0\n\
                   b,80,1,TAVR,100,1\n\
                   c,75,0,SAVR,900,0\n";
        let cohort = read_cohort(csv.as_bytes(), &small_schema()).unwrap();
        assert_eq!(cohort.n(), 3);
        assert_eq!(cohort.n_missing(), 0);
        assert_eq!(cohort.ids(), &["a", "b", "c"]);
        assert_eq!(cohort.arms()[1], TreatmentArm::Tavr);
    }

    #[test]
    fn empty_cell_becomes_missing() {
        let csv = "id,age,diabetes,treatment,time_days,event\n\
                   a,,0,SAVR,2000,0\n";
        let cohort = read_cohort(csv.as_bytes(), &small_schema()).unwrap();
        assert_eq!(cohort.feature(0, 0), None);
        assert_eq!(cohort.feature(0, 1), Some(0.0));
    }

    #[test]
    fn treatment_parses_case_insensitively() {
        let csv = "id,age,diabetes,treatment,time_days,event\n\
                   a,70,0,tavr,2000,0\n";
        let cohort = read_cohort(csv.as_bytes(), &small_schema()).unwrap();
        assert_eq!(cohort.arms()[0], TreatmentArm::Tavr);
    }

    #[test]
    fn missing_column_is_reported() {
        let csv = "id,age,treatment,time_days,event\na,70,SAVR,2000,0\n";
        let err = read_cohort(csv.as_bytes(), &small_schema()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "diabetes"));
    }

    #[test]
    fn unparsable_cell_carries_row_and_column() {
        let csv = "id,age,diabetes,treatment,time_days,event\n\
                   a,70,0,SAVR,2000,0\n\
                   b,oops,0,SAVR,2000,0\n";
        let err = read_cohort(csv.as_bytes(), &small_schema()).unwrap_err();
        match err {
            Error::UnparsableCell { row, col, .. } => {
                assert_eq!(row, 1);
                assert_eq!(col, "age");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_treatment_is_rejected() {
        let csv = "id,age,diabetes,treatment,time_days,event\n\
                   a,70,0,TAVI,2000,0\n";
        let err = read_cohort(csv.as_bytes(), &small_schema()).unwrap_err();
        assert!(matches!(err, Error::UnknownTreatment { row: 0, .. }));
    }

    #[test]
    fn binary_feature_domain_is_enforced() {
        let csv = "id,age,diabetes,treatment,time_days,event\n\
                   a,70,2,SAVR,2000,0\n";
        assert!(read_cohort(csv.as_bytes(), &small_schema()).is_err());
    }

    #[test]
    fn labels_follow_the_horizon_convention() {
        let o = |time_days, event| SurvivalOutcome { time_days, event };
        assert_eq!(label_outcome(&o(100.0, true), 1825.0), BinaryLabel::Bad);
        assert_eq!(label_outcome(&o(2000.0, false), 1825.0), BinaryLabel::Good);
        assert_eq!(label_outcome(&o(900.0, false), 1825.0), BinaryLabel::Indeterminate);
        // death after the horizon means the patient survived the horizon
        assert_eq!(label_outcome(&o(2000.0, true), 1825.0), BinaryLabel::Good);
        // boundary cases
        assert_eq!(label_outcome(&o(1825.0, true), 1825.0), BinaryLabel::Bad);
        assert_eq!(label_outcome(&o(1825.0, false), 1825.0), BinaryLabel::Good);
    }

    #[test]
    fn split_by_arm_partitions_in_order() {
        let csv = "id,age,diabetes,treatment,time_days,event\n\
                   a,70,0,SAVR,2000,0\n\
                   b,80,1,TAVR,100,1\n\
                   c,75,0,SAVR,900,0\n";
        let cohort = read_cohort(csv.as_bytes(), &small_schema()).unwrap();
        let (savr, tavr) = split_by_arm(&cohort);
        assert_eq!(savr.n(), 2);
        assert_eq!(tavr.n(), 1);
        assert_eq!(savr.ids(), &["a", "c"]);
        assert_eq!(tavr.ids(), &["b"]);
    }

    #[test]
    fn split_all_tavr_gives_empty_savr() {
        let csv = "id,age,diabetes,treatment,time_days,event\n\
                   a,70,0,TAVR,2000,0\n\
                   b,80,1,TAVR,100,1\n";
        let cohort = read_cohort(csv.as_bytes(), &small_schema()).unwrap();
        let (savr, tavr) = split_by_arm(&cohort);
        assert_eq!(savr.n(), 0);
        assert_eq!(tavr.n(), 2);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let csv = "id,age,diabetes,treatment,time_days,event\n\
                   a,70,0,SAVR,2000,0\n\
                   a,80,1,TAVR,100,1\n";
        assert!(matches!(
            read_cohort(csv.as_bytes(), &small_schema()),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn write_then_read_round_trips() {
        let csv = "id,age,diabetes,treatment,time_days,event\n\
                   a,70.25,0,SAVR,2000,0\n\
                   b,,1,tavr,100.5,1\n";
        let schema = small_schema();
        let cohort = read_cohort(csv.as_bytes(), &schema).unwrap();
        let mut buf = Vec::new();
        write_cohort_to(&mut buf, &cohort).unwrap();
        let again = read_cohort(buf.as_slice(), &schema).unwrap();
        assert_eq!(cohort, again);
        // a second write is byte-identical
        let mut buf2 = Vec::new();
        write_cohort_to(&mut buf2, &again).unwrap();
        assert_eq!(buf, buf2);
    }
}
