//! The canonical interaction table and adapters for other column layouts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use humancal_core::data::{Advice, Demographics, InteractionRecord, SignedResponse};
use humancal_core::protocol::Question;
use serde::{Deserialize, Serialize};

pub const CANONICAL_COLUMNS: [&str; 14] = [
    "participant_id",
    "task",
    "question",
    "r1",
    "r2",
    "advice_prob",
    "label",
    "age",
    "sex",
    "programming",
    "ses",
    "ai_presence",
    "education",
    "ai_perception",
];

/// How a response column is encoded in the source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseEncoding {
    /// `[-1, 1]`, positive toward the correct label.
    #[default]
    Signed,
    /// Probability assigned to the correct label.
    Probability,
}

/// How the advice column is encoded in the source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdviceEncoding {
    #[default]
    Probability,
    Signed,
    Logit,
}

/// Maps canonical field names to source headers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schema {
    /// Source header per canonical column; unlisted columns keep their
    /// canonical name.
    pub columns: BTreeMap<String, String>,
    pub responses: ResponseEncoding,
    pub advice: AdviceEncoding,
    pub delimiter: Option<char>,
}

impl Schema {
    pub fn canonical() -> Self {
        Self::default()
    }

    fn header_for<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.columns.get(canonical).map_or(canonical, String::as_str)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        for key in self.columns.keys() {
            if !CANONICAL_COLUMNS.contains(&key.as_str()) {
                return Err(DatasetError::UnknownField(key.clone()));
            }
        }
        if let Some(d) = self.delimiter {
            if !d.is_ascii() {
                return Err(DatasetError::Delimiter(d));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// Line number in the source, the header being line 1.
    pub line: u64,
    pub column: String,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("schema maps unknown field `{0}`")]
    UnknownField(String),
    #[error("delimiter {0:?} is not ASCII")]
    Delimiter(char),
    #[error("{} invalid row(s); first: {}", .0.len(), .0[0])]
    Rows(Vec<RowError>),
}

fn reader<R: Read>(source: R, delimiter: Option<char>) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter.map_or(b',', |d| d as u8))
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn column_indices(headers: &csv::StringRecord, wanted: &[(&str, &str)]) -> Result<Vec<usize>, DatasetError> {
    wanted
        .iter()
        .map(|(canonical, header)| {
            headers.iter().position(|h| h == *header).ok_or_else(|| {
                DatasetError::MissingColumn(if canonical == header {
                    (*canonical).to_string()
                } else {
                    format!("{header} (for {canonical})")
                })
            })
        })
        .collect()
}

struct Row<'a> {
    record: &'a csv::StringRecord,
    idx: &'a [usize],
    line: u64,
    errors: Vec<RowError>,
}

impl Row<'_> {
    fn err(&mut self, col: usize, message: impl Into<String>) {
        self.errors.push(RowError {
            line: self.line,
            column: CANONICAL_COLUMNS[col].into(),
            message: message.into(),
        });
    }

    fn text(&self, col: usize) -> &str {
        self.record.get(self.idx[col]).unwrap_or("")
    }

    fn float(&mut self, col: usize) -> Option<f64> {
        match self.text(col).parse::<f64>() {
            Ok(v) if v.is_finite() => Some(v),
            Ok(v) => {
                self.err(col, format!("non-finite value {v}"));
                None
            }
            Err(_) => {
                let t = self.text(col).to_string();
                self.err(col, format!("not a number: {t:?}"));
                None
            }
        }
    }

    fn binary(&mut self, col: usize) -> Option<u8> {
        let v = self.float(col)?;
        if v == 0.0 || v == 1.0 {
            Some(v as u8)
        } else {
            self.err(col, format!("expected 0 or 1, got {v}"));
            None
        }
    }

    fn checked<T>(&mut self, col: usize, r: humancal_core::Result<T>) -> Option<T> {
        r.map_err(|e| self.err(col, e.to_string())).ok()
    }
}

fn response(encoding: ResponseEncoding, v: f64) -> humancal_core::Result<SignedResponse> {
    match encoding {
        ResponseEncoding::Signed => SignedResponse::new(v),
        ResponseEncoding::Probability => {
            if (0.0..=1.0).contains(&v) {
                SignedResponse::from_prob(v)
            } else {
                Err(humancal_core::Error::OutOfRange { what: "response probability", value: v })
            }
        }
    }
}

fn advice(encoding: AdviceEncoding, v: f64) -> humancal_core::Result<Advice> {
    match encoding {
        AdviceEncoding::Probability => Advice::from_prob(v),
        AdviceEncoding::Signed => {
            if (-1.0..=1.0).contains(&v) {
                Advice::from_prob(0.5 * (1.0 + v))
            } else {
                Err(humancal_core::Error::OutOfRange { what: "signed advice", value: v })
            }
        }
        AdviceEncoding::Logit => Advice::from_logit(humancal_core::data::AdviceLogit(v)),
    }
}

/// Parses an interaction table. Every invalid row is reported, not just the
/// first.
pub fn read_records<R: Read>(source: R, schema: &Schema) -> Result<Vec<InteractionRecord>, DatasetError> {
    schema.validate()?;
    let mut rdr = reader(source, schema.delimiter);
    let headers = rdr.headers()?.clone();
    let wanted: Vec<(&str, &str)> = CANONICAL_COLUMNS.iter().map(|c| (*c, schema.header_for(c))).collect();
    let idx = column_indices(&headers, &wanted)?;

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for result in rdr.records() {
        let record = result?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Row { record: &record, idx: &idx, line, errors: Vec::new() };
        let participant_id = row.text(0).to_string();
        let task_id = row.text(1).to_string();
        let question_id = row.text(2).to_string();
        for (col, v) in [(0, &participant_id), (1, &task_id), (2, &question_id)] {
            if v.is_empty() {
                row.err(col, "empty identifier");
            }
        }
        let r1 = row.float(3).and_then(|v| {
            let r = response(schema.responses, v);
            row.checked(3, r)
        });
        let r2 = row.float(4).and_then(|v| {
            let r = response(schema.responses, v);
            row.checked(4, r)
        });
        let adv = row.float(5).and_then(|v| {
            let r = advice(schema.advice, v);
            row.checked(5, r)
        });
        let label = row.binary(6);
        let age = row.float(7);
        let sex = row.binary(8);
        let programming = row.binary(9);
        let ses = row.float(10);
        let ai_presence = row.float(11);
        let education = row.float(12);
        let ai_perception = row.float(13);

        if let (Some(r1), Some(r2), Some(advice), Some(label), Some(age), Some(sex), Some(p), Some(ses), Some(pr), Some(ed), Some(pe)) =
            (r1, r2, adv, label, age, sex, programming, ses, ai_presence, education, ai_perception)
        {
            let demographics = Demographics {
                age,
                sex,
                programming_experience: p,
                ses,
                ai_presence: pr,
                education: ed,
                ai_perception: pe,
            };
            if let Err(e) = demographics.validate() {
                row.errors.push(RowError { line, column: "demographics".into(), message: e.to_string() });
            } else if row.errors.is_empty() {
                records.push(InteractionRecord {
                    participant_id,
                    task_id,
                    question_id,
                    r1,
                    r2,
                    advice,
                    label,
                    demographics,
                });
            }
        }
        errors.append(&mut row.errors);
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(DatasetError::Rows(errors))
    }
}

pub fn read_records_path(path: &Path, schema: &Schema) -> Result<Vec<InteractionRecord>, DatasetError> {
    read_records(File::open(path)?, schema)
}

/// Writes the canonical table. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_records<W: Write>(sink: W, records: &[InteractionRecord]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CANONICAL_COLUMNS)?;
    for r in records {
        let d = &r.demographics;
        w.write_record([
            r.participant_id.clone(),
            r.task_id.clone(),
            r.question_id.clone(),
            r.r1.value().to_string(),
            r.r2.value().to_string(),
            r.advice.prob().to_string(),
            r.label.to_string(),
            d.age.to_string(),
            d.sex.to_string(),
            d.programming_experience.to_string(),
            d.ses.to_string(),
            d.ai_presence.to_string(),
            d.education.to_string(),
            d.ai_perception.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_path(path: &Path, records: &[InteractionRecord]) -> Result<(), DatasetError> {
    write_records(File::create(path)?, records)
}

/// A question for the experiment service together with the stimulus
/// descriptor handed to the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusQuestion {
    pub question: Question,
    pub content: String,
}

/// Reads a question table with columns `question`, `advice_prob`, `label`
/// and an optional `content`.
pub fn read_questions<R: Read>(source: R) -> Result<Vec<StimulusQuestion>, DatasetError> {
    let mut rdr = reader(source, None);
    let headers = rdr.headers()?.clone();
    let idx = column_indices(&headers, &[("question", "question"), ("advice_prob", "advice_prob"), ("label", "label")])?;
    let content = headers.iter().position(|h| h == "content");
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for result in rdr.records() {
        let rec = result?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut fail = |column: &str, message: String| errors.push(RowError { line, column: column.into(), message });
        let id = rec.get(idx[0]).unwrap_or("").to_string();
        if id.is_empty() {
            fail("question", "empty identifier".into());
            continue;
        }
        let advice = match rec.get(idx[1]).unwrap_or("").parse::<f64>() {
            Ok(p) => match Advice::from_prob(p) {
                Ok(a) => a,
                Err(e) => {
                    fail("advice_prob", e.to_string());
                    continue;
                }
            },
            Err(_) => {
                fail("advice_prob", "not a number".into());
                continue;
            }
        };
        let label = match rec.get(idx[2]).unwrap_or("") {
            "0" => 0,
            "1" => 1,
            other => {
                fail("label", format!("expected 0 or 1, got {other:?}"));
                continue;
            }
        };
        out.push(StimulusQuestion {
            question: Question { id, advice, label },
            content: content.and_then(|c| rec.get(c)).unwrap_or("").to_string(),
        });
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(DatasetError::Rows(errors))
    }
}
