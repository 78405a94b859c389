//! Timed action segments and their CSV form
//! (`start_s,stop_s,action,verb,noun`, with -1 for a missing verb or noun).

use std::path::Path;

use crate::error::{Error, Result};

pub const ANNOTATION_HEADER: [&str; 5] = ["start_s", "stop_s", "action", "verb", "noun"];

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentAnnotation {
    pub start_s: f64,
    pub stop_s: f64,
    pub action: usize,
    pub verb: Option<usize>,
    pub noun: Option<usize>,
}

impl SegmentAnnotation {
    pub fn new(start_s: f64, stop_s: f64, action: usize) -> Self {
        Self {
            start_s,
            stop_s,
            action,
            verb: None,
            noun: None,
        }
    }
}

fn opt_id(v: Option<usize>) -> String {
    v.map_or("-1".to_string(), |x| x.to_string())
}

pub fn write_annotations(path: &Path, segments: &[SegmentAnnotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(ANNOTATION_HEADER).map_err(|e| csv_error(path, e))?;
    for s in segments {
        w.write_record([
            s.start_s.to_string(),
            s.stop_s.to_string(),
            s.action.to_string(),
            opt_id(s.verb),
            opt_id(s.noun),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<SegmentAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

/// Parses annotation CSV text; errors carry 1-based line numbers.
pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<SegmentAnnotation>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::parse(source, 1, e.to_string()))?;
    if header.iter().ne(ANNOTATION_HEADER) {
        return Err(Error::parse(
            source,
            1,
            format!("expected header {:?}", ANNOTATION_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::parse(source, line, msg);
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("{}: not a number: {:?}", ANNOTATION_HEADER[i], &rec[i])))
        };
        let id = |i: usize| -> Result<Option<usize>> {
            match rec[i].parse::<i64>() {
                Ok(-1) => Ok(None),
                Ok(v) if v >= 0 => Ok(Some(v as usize)),
                _ => Err(bad(format!("{}: expected an id or -1, got {:?}", ANNOTATION_HEADER[i], &rec[i]))),
            }
        };
        let (start_s, stop_s) = (num(0)?, num(1)?);
        if !(start_s >= 0.0 && stop_s > start_s) {
            return Err(bad(format!("segment [{start_s}, {stop_s}) must satisfy 0 <= start < stop")));
        }
        let action = id(2)?.ok_or_else(|| bad("action id is required".into()))?;
        out.push(SegmentAnnotation {
            start_s,
            stop_s,
            action,
            verb: id(3)?,
            noun: id(4)?,
        });
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}
