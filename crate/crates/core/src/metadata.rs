//! Per-sample metadata and its CSV form.
//!
//! Header: `sample_id,subject_id,eye,session,pmi_hours,age_years,gender,image_path`.
//! Rows with a missing PMI, age or gender are rejected rather than imputed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const METADATA_HEADER: [&str; 8] = [
    "sample_id",
    "subject_id",
    "eye",
    "session",
    "pmi_hours",
    "age_years",
    "gender",
    "image_path",
];

pub const MAX_AGE: u32 = 130;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eye {
    Left,
    Right,
}

impl FromStr for Eye {
    type Err = ();

    /// Accepts `left/right`, `l/r` and the clinical `os/od`, case-insensitively.
    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" | "os" => Ok(Eye::Left),
            "right" | "r" | "od" => Ok(Eye::Right),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Eye::Left => "left",
            Eye::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl FromStr for Gender {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            "unknown" | "u" => Ok(Gender::Unknown),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub sample_id: String,
    pub subject_id: String,
    pub eye: Eye,
    pub session: u32,
    pub pmi_hours: f64,
    pub age_years: u32,
    pub gender: Gender,
    #[serde(default)]
    pub image_path: String,
}

impl SampleMetadata {
    /// Own subject, left eye, unknown demographics.
    pub fn placeholder(id: &str) -> Self {
        Self {
            sample_id: id.to_owned(),
            subject_id: id.to_owned(),
            eye: Eye::Left,
            session: 1,
            pmi_hours: 0.0,
            age_years: 0,
            gender: Gender::Unknown,
            image_path: String::new(),
        }
    }

    /// Identity class: left and right eyes of one subject are distinct.
    pub fn class(&self) -> (&str, Eye) {
        (&self.subject_id, self.eye)
    }

    pub fn same_class(&self, other: &SampleMetadata) -> bool {
        self.class() == other.class()
    }
}

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("metadata header mismatch: expected `{expected}`, found `{found}`")]
    SchemaMismatch { expected: String, found: String },
    #[error("row {row}: missing value for `{field}`")]
    MissingField { row: usize, field: &'static str },
    #[error("row {row}: invalid value `{value}` for `{field}`")]
    InvalidValue {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCount { row: usize, expected: usize, found: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MetadataError {
    pub fn row(&self) -> Option<usize> {
        match self {
            MetadataError::MissingField { row, .. }
            | MetadataError::InvalidValue { row, .. }
            | MetadataError::ColumnCount { row, .. } => Some(*row),
            _ => None,
        }
    }
}

pub fn load_metadata_csv(path: impl AsRef<Path>) -> Result<Vec<SampleMetadata>, MetadataError> {
    let file = std::fs::File::open(path)?;
    read_metadata_csv(file)
}

/// Row numbers in errors are file line numbers: the header is row 1.
pub fn read_metadata_csv(reader: impl std::io::Read) -> Result<Vec<SampleMetadata>, MetadataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(METADATA_HEADER.iter().copied()) {
        return Err(MetadataError::SchemaMismatch {
            expected: METADATA_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != METADATA_HEADER.len() {
            return Err(MetadataError::ColumnCount {
                row,
                expected: METADATA_HEADER.len(),
                found: rec.len(),
            });
        }
        out.push(parse_row(row, &rec)?);
    }
    Ok(out)
}

fn parse_row(row: usize, rec: &csv::StringRecord) -> Result<SampleMetadata, MetadataError> {
    let field = |idx: usize| -> Result<&str, MetadataError> {
        let v = &rec[idx];
        if v.is_empty() {
            Err(MetadataError::MissingField {
                row,
                field: METADATA_HEADER[idx],
            })
        } else {
            Ok(v)
        }
    };
    let invalid = |idx: usize, value: &str| MetadataError::InvalidValue {
        row,
        field: METADATA_HEADER[idx],
        value: value.to_owned(),
    };

    let sample_id = field(0)?.to_owned();
    let subject_id = field(1)?.to_owned();
    let eye_raw = field(2)?;
    let eye = eye_raw.parse().map_err(|_| invalid(2, eye_raw))?;
    let session_raw = field(3)?;
    let session: u32 = session_raw
        .parse()
        .ok()
        .filter(|&s| s >= 1)
        .ok_or_else(|| invalid(3, session_raw))?;
    let pmi_raw = field(4)?;
    let pmi_hours: f64 = pmi_raw
        .parse()
        .ok()
        .filter(|p: &f64| p.is_finite() && *p >= 0.0)
        .ok_or_else(|| invalid(4, pmi_raw))?;
    let age_raw = field(5)?;
    let age_years: u32 = age_raw
        .parse()
        .ok()
        .filter(|&a| a <= MAX_AGE)
        .ok_or_else(|| invalid(5, age_raw))?;
    let gender_raw = field(6)?;
    let gender = gender_raw.parse().map_err(|_| invalid(6, gender_raw))?;
    Ok(SampleMetadata {
        sample_id,
        subject_id,
        eye,
        session,
        pmi_hours,
        age_years,
        gender,
        image_path: rec[7].to_owned(),
    })
}

pub fn write_metadata_csv(writer: impl std::io::Write, records: &[SampleMetadata]) -> Result<(), MetadataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METADATA_HEADER)?;
    for m in records {
        w.write_record([
            m.sample_id.clone(),
            m.subject_id.clone(),
            m.eye.to_string(),
            m.session.to_string(),
            m.pmi_hours.to_string(),
            m.age_years.to_string(),
            m.gender.to_string(),
            m.image_path.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "sample_id,subject_id,eye,session,pmi_hours,age_years,gender,image_path\n";

    fn parse(body: &str) -> Result<Vec<SampleMetadata>, MetadataError> {
        read_metadata_csv(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn well_formed_rows() {
        let recs = parse(
            "s1,p1,left,1,5.5,40,male,a.pgm\n\
             s2,p1,right,1,5.5,40,male,b.pgm\n\
             s3,p2,left,2,100,71,female,c.pgm\n",
        )
        .unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].pmi_hours, 100.0);
        assert_eq!(recs[2].gender, Gender::Female);
    }

    #[test]
    fn empty_pmi_reports_row() {
        let err = parse("s1,p1,left,1,,40,male,a.pgm\n").unwrap_err();
        assert!(matches!(
            err,
            MetadataError::MissingField {
                row: 2,
                field: "pmi_hours"
            }
        ));
    }

    #[test]
    fn eye_aliases() {
        let recs = parse("s1,p1,L,1,1,40,m,a\ns2,p1,OD,1,1,40,F,b\n").unwrap();
        assert_eq!(recs[0].eye, Eye::Left);
        assert_eq!(recs[1].eye, Eye::Right);
        assert_eq!(recs[1].gender, Gender::Female);
    }

    #[test]
    fn schema_and_value_errors() {
        let err = read_metadata_csv("id,subject\n".as_bytes()).unwrap_err();
        assert!(matches!(err, MetadataError::SchemaMismatch { .. }));
        let err = parse("s1,p1,left,1,-3,40,male,a\n").unwrap_err();
        assert!(matches!(err, MetadataError::InvalidValue { field: "pmi_hours", .. }));
        let err = parse("s1,p1,left,0,3,40,male,a\n").unwrap_err();
        assert!(matches!(err, MetadataError::InvalidValue { field: "session", .. }));
        let err = parse("s1,p1,left,1,3,140,male,a\n").unwrap_err();
        assert_eq!(err.row(), Some(2));
    }

    #[test]
    fn roundtrip() {
        let recs = parse("s1,p1,left,1,0.1,40,male,a.pgm\ns2,p9,right,3,123.456789,0,unknown,\n").unwrap();
        let mut buf = Vec::new();
        write_metadata_csv(&mut buf, &recs).unwrap();
        assert_eq!(read_metadata_csv(buf.as_slice()).unwrap(), recs);
    }
}
