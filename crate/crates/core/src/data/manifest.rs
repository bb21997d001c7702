//! CheXpert-style manifest CSV.
//!
//! Header: `Path,Sex,Age,Frontal/Lateral,AP/PA,<pathology>...`. Label cells
//! are `1.0` (positive), `0.0` (negative), `-1.0` (uncertain) or empty
//! (unmentioned). `Sex` and `Age` are optional on input and carried through
//! verbatim.

use std::io::{Read, Write};

use super::{DataError, Result};

const PATH: &str = "Path";
const SEX: &str = "Sex";
const AGE: &str = "Age";
const VIEW: &str = "Frontal/Lateral";
const PROJECTION: &str = "AP/PA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum View {
    Frontal,
    Lateral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Projection {
    Ap,
    Pa,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    Uncertain,
    Unmentioned,
}

impl Label {
    fn parse(cell: &str) -> Option<Self> {
        let cell = cell.trim();
        if cell.is_empty() {
            return Some(Label::Unmentioned);
        }
        match cell.parse::<f64>().ok()? {
            1.0 => Some(Label::Positive),
            0.0 => Some(Label::Negative),
            -1.0 => Some(Label::Uncertain),
            _ => None,
        }
    }

    fn cell(self) -> &'static str {
        match self {
            Label::Positive => "1.0",
            Label::Negative => "0.0",
            Label::Uncertain => "-1.0",
            Label::Unmentioned => "",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub path: String,
    pub sex: String,
    pub age: String,
    pub view: View,
    pub projection: Projection,
    /// The `patientNNNNN` segment of the path, when present.
    pub patient_id: Option<String>,
    /// One label per entry of [`Manifest::pathologies`].
    pub labels: Vec<Label>,
}

/// A parsed manifest: pathology columns in file order plus one record per row.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Manifest {
    pub pathologies: Vec<String>,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn pathology_index(&self, name: &str) -> Option<usize> {
        self.pathologies.iter().position(|p| p == name)
    }
}

/// Extracts `patientNNNNN` from a path such as `train/patient00001/study1/view1_frontal.jpg`.
pub fn patient_id(path: &str) -> Option<String> {
    path.split(['/', '\\'])
        .find(|seg| seg.strip_prefix("patient").is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit())))
        .map(str::to_string)
}

pub fn parse_manifest(reader: impl Read) -> Result<Manifest> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| col(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
    let (path_c, view_c, proj_c) = (require(PATH)?, require(VIEW)?, require(PROJECTION)?);
    let (sex_c, age_c) = (col(SEX), col(AGE));
    let fixed = [Some(path_c), Some(view_c), Some(proj_c), sex_c, age_c];
    let pathology_cols: Vec<usize> = (0..headers.len()).filter(|i| !fixed.contains(&Some(*i))).collect();
    if pathology_cols.is_empty() {
        return Err(DataError::MissingColumn("<pathology>".into()));
    }
    let pathologies = pathology_cols.iter().map(|&i| headers[i].trim().to_string()).collect();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        let bad = |column: &str, value: &str| DataError::BadValue {
            row: row_no,
            column: column.to_string(),
            value: value.to_string(),
        };
        let view = match row[view_c].trim() {
            "Frontal" => View::Frontal,
            "Lateral" => View::Lateral,
            other => return Err(bad(VIEW, other)),
        };
        let projection = match row[proj_c].trim() {
            "AP" => Projection::Ap,
            "PA" => Projection::Pa,
            _ => Projection::Unknown,
        };
        let labels = pathology_cols
            .iter()
            .map(|&c| Label::parse(&row[c]).ok_or_else(|| bad(&headers[c], &row[c])))
            .collect::<Result<Vec<_>>>()?;
        let path = row[path_c].trim().to_string();
        records.push(ManifestRecord {
            patient_id: patient_id(&path),
            path,
            sex: sex_c.map(|c| row[c].to_string()).unwrap_or_default(),
            age: age_c.map(|c| row[c].to_string()).unwrap_or_default(),
            view,
            projection,
            labels,
        });
    }
    Ok(Manifest { pathologies, records })
}

pub fn write_manifest(manifest: &Manifest, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![PATH, SEX, AGE, VIEW, PROJECTION];
    header.extend(manifest.pathologies.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in &manifest.records {
        let view = match r.view {
            View::Frontal => "Frontal",
            View::Lateral => "Lateral",
        };
        let projection = match r.projection {
            Projection::Ap => "AP",
            Projection::Pa => "PA",
            Projection::Unknown => "",
        };
        let mut row = vec![r.path.as_str(), r.sex.as_str(), r.age.as_str(), view, projection];
        row.extend(r.labels.iter().map(|l| l.cell()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| DataError::Io { path: "<manifest>".into(), source: e })?;
    Ok(())
}
