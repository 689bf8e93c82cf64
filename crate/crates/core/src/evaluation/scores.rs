//! Score CSV: one row per comparison.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metadata::Gender;
use crate::pipeline::{ComparisonRecord, PairLabel};
use crate::statistics::AgeGroup;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoreCsvError {
    #[error("score CSV header mismatch: `{0}`")]
    Schema(String),
    #[error("score CSV row {row}: invalid {field} `{value}`")]
    Field { row: usize, field: String, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const SCORE_HEADER: [&str; 9] = [
    "probe_id",
    "gallery_id",
    "label",
    "score",
    "best_shift",
    "ftm",
    "pmi_max_hours",
    "gender",
    "age_group",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub probe_id: String,
    pub gallery_id: String,
    pub label: PairLabel,
    pub score: Option<f64>,
    pub best_shift: Option<i64>,
    pub ftm: bool,
    pub pmi_max_hours: f64,
    /// Shared gender of both samples, or `mixed`.
    pub gender: String,
    /// Shared age group of both samples (`excluded` outside all groups),
    /// or `mixed`.
    pub age_group: String,
}

fn gender_label(g: Gender) -> &'static str {
    match g {
        Gender::Male => "male",
        Gender::Female => "female",
        Gender::Unknown => "unknown",
    }
}

fn age_label(age: u32) -> &'static str {
    AgeGroup::of(age).map_or("excluded", AgeGroup::label)
}

fn shared(a: &'static str, b: &'static str) -> String {
    if a == b {
        a.to_string()
    } else {
        "mixed".to_string()
    }
}

impl From<&ComparisonRecord> for ScoreRow {
    fn from(r: &ComparisonRecord) -> Self {
        Self {
            probe_id: r.probe_id.clone(),
            gallery_id: r.gallery_id.clone(),
            label: r.label,
            score: r.score,
            best_shift: r.best_shift,
            ftm: r.ftm,
            pmi_max_hours: r.pmi_max_hours,
            gender: shared(gender_label(r.probe_gender), gender_label(r.gallery_gender)),
            age_group: shared(age_label(r.probe_age), age_label(r.gallery_age)),
        }
    }
}

pub fn write_scores_csv(rows: &[ScoreRow], out: impl Write) -> Result<(), ScoreCsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_HEADER)?;
    for r in rows {
        let score = r.score.map(|s| format!("{s}")).unwrap_or_default();
        let shift = r.best_shift.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([
            r.probe_id.as_str(),
            r.gallery_id.as_str(),
            &r.label.to_string(),
            &score,
            &shift,
            if r.ftm { "true" } else { "false" },
            &format!("{}", r.pmi_max_hours),
            &r.gender,
            &r.age_group,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_scores_csv(rows: &[ScoreRow], path: impl AsRef<Path>) -> Result<(), ScoreCsvError> {
    let f = std::fs::File::create(path)?;
    write_scores_csv(rows, std::io::BufWriter::new(f))
}

pub fn read_scores_csv(input: impl Read) -> Result<Vec<ScoreRow>, ScoreCsvError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != SCORE_HEADER {
        return Err(ScoreCsvError::Schema(header.join(",")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |field: &str, v: &str| ScoreCsvError::Field {
            row,
            field: field.to_string(),
            value: v.to_string(),
        };
        let opt_f = |v: &str| -> Result<Option<f64>, ScoreCsvError> {
            if v.is_empty() {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| bad("score", v))
            }
        };
        let label = match &rec[2] {
            "genuine" => PairLabel::Genuine,
            "impostor" => PairLabel::Impostor,
            v => return Err(bad("label", v)),
        };
        let best_shift = if rec[4].is_empty() {
            None
        } else {
            Some(rec[4].parse().map_err(|_| bad("best_shift", &rec[4]))?)
        };
        let ftm = match &rec[5] {
            "true" => true,
            "false" => false,
            v => return Err(bad("ftm", v)),
        };
        rows.push(ScoreRow {
            probe_id: rec[0].to_string(),
            gallery_id: rec[1].to_string(),
            label,
            score: opt_f(&rec[3])?,
            best_shift,
            ftm,
            pmi_max_hours: rec[6].parse().map_err(|_| bad("pmi_max_hours", &rec[6]))?,
            gender: rec[7].to_string(),
            age_group: rec[8].to_string(),
        });
    }
    Ok(rows)
}

pub fn load_scores_csv(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>, ScoreCsvError> {
    read_scores_csv(std::fs::File::open(path)?)
}
