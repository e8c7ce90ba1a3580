use std::fmt;
use std::path::Path;

use tce_core::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct Mapping {
    pub x: String,
    pub y: String,
    /// Treatment and selection columns; both or neither.
    pub ds: Option<(String, String)>,
}

#[derive(Debug)]
pub enum IngestError {
    Io(String),
    MissingColumn(String),
    /// `row` counts data rows from 1; the header is row 0.
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    Invalid(String),
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestError::Io(m) => write!(f, "cannot read input: {m}"),
            IngestError::MissingColumn(c) => write!(f, "missing column `{c}`"),
            IngestError::Parse { row, column, value } => {
                write!(f, "row {row}, column `{column}`: cannot parse `{value}`")
            }
            IngestError::Invalid(m) => write!(f, "invalid data: {m}"),
        }
    }
}

fn parse_num(v: &str, row: usize, column: &str) -> Result<f64, IngestError> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| IngestError::Parse {
            row,
            column: column.to_string(),
            value: v.to_string(),
        })
}

fn parse_flag(v: &str, row: usize, column: &str) -> Result<bool, IngestError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "1.0" | "true" => Ok(true),
        "0" | "0.0" | "false" => Ok(false),
        _ => Err(IngestError::Parse {
            row,
            column: column.to_string(),
            value: v.to_string(),
        }),
    }
}

/// Reads a headered CSV file. A blank outcome is accepted only on rows with
/// selection indicator 0, where it is stored as unavailable.
pub fn ingest_csv(path: &Path, mapping: &Mapping) -> Result<Sample, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| IngestError::Io(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let (ix, iy) = (col(&mapping.x)?, col(&mapping.y)?);
    let ids = match &mapping.ds {
        Some((d, s)) => Some((col(d)?, col(s)?)),
        None => None,
    };
    let (mut x, mut y, mut d, mut s) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| IngestError::Io(format!("row {row}: {e}")))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        x.push(parse_num(field(ix), row, &mapping.x)?);
        let selected = match (&ids, &mapping.ds) {
            (Some((id, is)), Some((dn, sn))) => {
                d.push(parse_flag(field(*id), row, dn)?);
                let sel = parse_flag(field(*is), row, sn)?;
                s.push(sel);
                sel
            }
            _ => true,
        };
        let yv = field(iy);
        if yv.is_empty() && !selected {
            y.push(f64::NAN);
        } else {
            y.push(parse_num(yv, row, &mapping.y)?);
        }
    }
    if x.is_empty() {
        return Err(IngestError::Invalid("no data rows".into()));
    }
    let (d, s) = if ids.is_some() {
        (Some(d), Some(s))
    } else {
        (None, None)
    };
    Sample::build(x, y, d, s).map_err(|e| IngestError::Invalid(e.to_string()))
}
