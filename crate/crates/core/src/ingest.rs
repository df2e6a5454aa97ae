//! CSV readers for the GPU schema and for generic survival tables, with
//! record-level validation and a writer for round trips.
//!
//! All times in one file must share a unit; the unit itself is not
//! interpreted.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SurvivalDataset;
use crate::topology::GridSpec;

/// Levels and baseline of each GPU categorical covariate.
const GPU_FACTORS: [(&str, usize, usize); 3] = [("cage", 3, 3), ("slot", 8, 8), ("node", 4, 4)];

pub const INTERCEPT: &str = "intercept";

/// Column roles of a generic survival table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenericSchema {
    #[serde(default = "default_unit_id")]
    pub unit_id: String,
    #[serde(default = "default_time")]
    pub time: String,
    #[serde(default = "default_event")]
    pub event: String,
    #[serde(default = "default_row")]
    pub row: String,
    #[serde(default = "default_col")]
    pub col: String,
    /// Numeric columns copied verbatim into the design matrix, in order.
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Prepend an intercept column.
    #[serde(default = "default_true")]
    pub intercept: bool,
}

fn default_unit_id() -> String {
    "unit_id".into()
}
fn default_time() -> String {
    "time".into()
}
fn default_event() -> String {
    "event".into()
}
fn default_row() -> String {
    "row".into()
}
fn default_col() -> String {
    "col".into()
}
fn default_true() -> bool {
    true
}

impl GenericSchema {
    pub fn with_covariates(covariates: Vec<String>) -> Self {
        Self {
            unit_id: default_unit_id(),
            time: default_time(),
            event: default_event(),
            row: default_row(),
            col: default_col(),
            covariates,
            intercept: true,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Schema {
    /// `unit_id,time,event,row,col,cage,slot,node[,batch]`; cage, slot and
    /// node expand to indicators with baselines cage 3, slot 8 and node 4.
    Gpu,
    Generic(GenericSchema),
}

/// Names of the GPU design-matrix columns: intercept then 12 indicators.
pub fn gpu_covariate_names() -> Vec<String> {
    let mut names = vec![INTERCEPT.to_string()];
    for (factor, levels, baseline) in GPU_FACTORS {
        names.extend((1..=levels).filter(|&l| l != baseline).map(|l| format!("{factor}{l}")));
    }
    names
}

struct RecordReader<'a> {
    path: &'a Path,
    index: HashMap<String, usize>,
}

impl RecordReader<'_> {
    fn invalid(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Validation {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| self.invalid(1, format!("missing column '{name}'")))
    }

    fn field<'r>(&self, rec: &'r csv::StringRecord, col: usize, name: &str, line: usize) -> Result<&'r str> {
        let v = rec.get(col).map(str::trim).unwrap_or("");
        if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
            return Err(self.invalid(line, format!("missing value in '{name}'")));
        }
        Ok(v)
    }

    fn real(&self, rec: &csv::StringRecord, col: usize, name: &str, line: usize) -> Result<f64> {
        let v = self.field(rec, col, name, line)?;
        let x: f64 = v
            .parse()
            .map_err(|_| self.invalid(line, format!("'{name}' is not a number: '{v}'")))?;
        if !x.is_finite() {
            return Err(self.invalid(line, format!("'{name}' is not finite")));
        }
        Ok(x)
    }

    fn integer(&self, rec: &csv::StringRecord, col: usize, name: &str, line: usize, max: usize) -> Result<usize> {
        let v = self.field(rec, col, name, line)?;
        match v.parse::<usize>() {
            Ok(k) if (1..=max).contains(&k) => Ok(k),
            _ => Err(self.invalid(line, format!("'{name}' must be an integer in 1..={max}, got '{v}'"))),
        }
    }
}

/// Read a dataset from CSV text. `path` labels validation errors. When
/// `batch` is given, only records whose `batch` column equals it are kept.
pub fn read_dataset<R: Read>(
    input: R,
    path: &Path,
    schema: &Schema,
    grid: GridSpec,
    batch: Option<&str>,
) -> Result<SurvivalDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let rr = RecordReader {
        path,
        index: headers.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect(),
    };
    let roles = match schema {
        Schema::Gpu => ("unit_id", "time", "event", "row", "col"),
        Schema::Generic(g) => (g.unit_id.as_str(), g.time.as_str(), g.event.as_str(), g.row.as_str(), g.col.as_str()),
    };
    let (c_id, c_time, c_event, c_row, c_col) = (
        rr.column(roles.0)?,
        rr.column(roles.1)?,
        rr.column(roles.2)?,
        rr.column(roles.3)?,
        rr.column(roles.4)?,
    );
    let c_batch = match batch {
        Some(_) => Some(rr.column("batch")?),
        None => None,
    };
    let factor_cols: Vec<usize> = match schema {
        Schema::Gpu => GPU_FACTORS.iter().map(|(f, _, _)| rr.column(f)).collect::<Result<_>>()?,
        Schema::Generic(g) => g.covariates.iter().map(|c| rr.column(c)).collect::<Result<_>>()?,
    };
    let covariate_names = match schema {
        Schema::Gpu => gpu_covariate_names(),
        Schema::Generic(g) => {
            let mut names = Vec::with_capacity(g.covariates.len() + 1);
            if g.intercept {
                names.push(INTERCEPT.to_string());
            }
            names.extend(g.covariates.iter().cloned());
            names
        }
    };
    let p = covariate_names.len();

    let mut seen = HashSet::new();
    let (mut ids, mut times, mut events, mut x, mut locations) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(rr.invalid(line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        let id = rr.field(&rec, c_id, roles.0, line)?.to_string();
        if !seen.insert(id.clone()) {
            return Err(rr.invalid(line, format!("duplicate unit id '{id}'")));
        }
        let time = rr.real(&rec, c_time, roles.1, line)?;
        if time <= 0.0 {
            return Err(rr.invalid(line, format!("time must be positive, got {time}")));
        }
        let event = match rr.field(&rec, c_event, roles.2, line)? {
            "1" => true,
            "0" => false,
            v => return Err(rr.invalid(line, format!("event must be 0 or 1, got '{v}'"))),
        };
        let row = rr.integer(&rec, c_row, roles.3, line, grid.n_rows())?;
        let col = rr.integer(&rec, c_col, roles.4, line, grid.n_cols())?;
        let mut xi = Vec::with_capacity(p);
        match schema {
            Schema::Gpu => {
                xi.push(1.0);
                for (&c, (factor, levels, baseline)) in factor_cols.iter().zip(GPU_FACTORS) {
                    let level = rr.integer(&rec, c, factor, line, levels)?;
                    xi.extend((1..=levels).filter(|&l| l != baseline).map(|l| f64::from(u8::from(l == level))));
                }
            }
            Schema::Generic(g) => {
                if g.intercept {
                    xi.push(1.0);
                }
                for (&c, name) in factor_cols.iter().zip(&g.covariates) {
                    xi.push(rr.real(&rec, c, name, line)?);
                }
            }
        }
        if let (Some(want), Some(c)) = (batch, c_batch) {
            if rr.field(&rec, c, "batch", line)? != want {
                continue;
            }
        }
        ids.push(id);
        times.push(time);
        events.push(event);
        x.extend(xi);
        locations.push(grid.index_of(row, col)?);
    }
    if ids.is_empty() {
        return Err(rr.invalid(1, "no records"));
    }
    SurvivalDataset::new(ids, times, events, x, covariate_names, locations, grid.n_locations())
}

/// Read a dataset from a CSV file.
pub fn load_dataset(path: &Path, schema: &Schema, grid: GridSpec, batch: Option<&str>) -> Result<SurvivalDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file), path, schema, grid, batch)
}

/// Generic-schema table of `data`: `unit_id,time,event,row,col` followed by
/// every covariate except a leading intercept. Returns the schema that
/// reads it back.
pub fn write_dataset<W: Write>(data: &SurvivalDataset, grid: GridSpec, out: W) -> Result<GenericSchema> {
    let names = data.covariate_names();
    let intercept = names.first().is_some_and(|n| n == INTERCEPT);
    let skip = usize::from(intercept);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["unit_id".to_string(), "time".into(), "event".into(), "row".into(), "col".into()];
    header.extend(names[skip..].iter().cloned());
    w.write_record(&header)?;
    for i in 0..data.n_units() {
        let (r, c) = grid.coords_of(data.locations()[i]);
        let mut rec = vec![
            data.unit_ids()[i].clone(),
            data.times()[i].to_string(),
            u8::from(data.events()[i]).to_string(),
            r.to_string(),
            c.to_string(),
        ];
        rec.extend(data.x(i)[skip..].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<dataset>", e))?;
    Ok(GenericSchema {
        intercept,
        ..GenericSchema::with_covariates(names[skip..].to_vec())
    })
}

/// Write `data` to `path` and its reading schema next to it as JSON.
pub fn save_dataset(data: &SurvivalDataset, grid: GridSpec, path: &Path) -> Result<PathBuf> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let schema = write_dataset(data, grid, std::io::BufWriter::new(file))?;
    let schema_path = path.with_extension("schema.json");
    std::fs::write(&schema_path, serde_json::to_string_pretty(&schema)?).map_err(|e| Error::io(&schema_path, e))?;
    Ok(schema_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gpu(text: &str, grid: GridSpec) -> Result<SurvivalDataset> {
        read_dataset(text.as_bytes(), Path::new("t.csv"), &Schema::Gpu, grid, None)
    }

    const HEAD: &str = "unit_id,time,event,row,col,cage,slot,node\n";

    #[test]
    fn baseline_record_is_intercept_only() {
        let d = gpu(&format!("{HEAD}a,10,1,1,1,3,8,4\n"), GridSpec::new(2, 2).unwrap()).unwrap();
        assert_eq!(d.n_covariates(), 13);
        let mut want = vec![0.0; 13];
        want[0] = 1.0;
        assert_eq!(d.x(0), want.as_slice());
    }

    #[test]
    fn cage_one_indicator() {
        let d = gpu(&format!("{HEAD}a,10,0,2,1,1,8,4\n"), GridSpec::new(2, 2).unwrap()).unwrap();
        assert_eq!(d.covariate_names()[1], "cage1");
        assert_eq!(d.x(0)[1], 1.0);
        assert_eq!(d.x(0).iter().sum::<f64>(), 2.0);
        assert_eq!(d.locations()[0], 1);
    }

    #[test]
    fn out_of_range_level_reports_line() {
        let err = gpu(&format!("{HEAD}a,10,1,1,1,3,8,4\nb,5,0,1,2,4,1,1\n"), GridSpec::new(2, 2).unwrap()).unwrap_err();
        match err {
            Error::Validation { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("cage"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn duplicate_and_missing_rejected() {
        let g = GridSpec::new(2, 2).unwrap();
        assert!(matches!(
            gpu(&format!("{HEAD}a,10,1,1,1,3,8,4\na,5,0,1,2,3,1,1\n"), g),
            Err(Error::Validation { line: 3, .. })
        ));
        assert!(matches!(gpu(&format!("{HEAD}a,,1,1,1,3,8,4\n"), g), Err(Error::Validation { line: 2, .. })));
        assert!(matches!(gpu(&format!("{HEAD}a,-1,1,1,1,3,8,4\n"), g), Err(Error::Validation { .. })));
        assert!(matches!(gpu(&format!("{HEAD}a,1,2,1,1,3,8,4\n"), g), Err(Error::Validation { .. })));
        assert!(matches!(gpu(&format!("{HEAD}a,1,1,3,1,3,8,4\n"), g), Err(Error::Validation { .. })));
    }

    #[test]
    fn batch_filter() {
        let text = "unit_id,time,event,row,col,cage,slot,node,batch\na,1,1,1,1,1,1,1,old\nb,2,0,1,1,1,1,1,new\n";
        let d = read_dataset(text.as_bytes(), Path::new("t"), &Schema::Gpu, GridSpec::new(1, 1).unwrap(), Some("old")).unwrap();
        assert_eq!(d.unit_ids(), ["a"]);
    }

    #[test]
    fn generic_round_trip() {
        let g = GridSpec::new(2, 3).unwrap();
        let text = format!("{HEAD}a,10.5,1,1,3,1,2,3\nb,7.25,0,2,2,3,8,4\nc,1e-3,1,2,1,2,5,1\n");
        let d = gpu(&text, g).unwrap();
        let mut buf = Vec::new();
        let schema = write_dataset(&d, g, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), Path::new("rt"), &Schema::Generic(schema), g, None).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn descriptor_json_defaults() {
        let s: GenericSchema = serde_json::from_str(r#"{"covariates": ["age"]}"#).unwrap();
        assert_eq!(s, GenericSchema::with_covariates(vec!["age".into()]));
    }
}
