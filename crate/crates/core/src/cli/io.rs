//! Long-format CSV ingestion and numeric CSV emission.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::design::FunctionalDataset;
use crate::error::{Error, Result};

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// A dataset with the subject and predictor ids it was read with.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub data: FunctionalDataset,
    pub subjects: Vec<String>,
    pub predictors: Vec<String>,
}

impl LabeledDataset {
    /// Ids `1..=n` and `1..=p`.
    pub fn numbered(data: FunctionalDataset) -> Self {
        Self {
            subjects: (1..=data.n()).map(|i| i.to_string()).collect(),
            predictors: (1..=data.p()).map(|j| j.to_string()).collect(),
            data,
        }
    }

    pub fn predictor_index(&self, id: &str) -> Option<usize> {
        self.predictors.iter().position(|p| p == id)
    }
}

/// Numeric order when every id is an integer, lexicographic otherwise.
fn sort_ids(ids: &mut [String]) {
    if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<i64>().unwrap());
    } else {
        ids.sort();
    }
}

struct Table {
    name: String,
    columns: HashMap<String, usize>,
    reader: csv::Reader<Box<dyn Read>>,
}

impl Table {
    fn open(reader: Box<dyn Read>, name: &str, required: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = reader
            .headers()
            .map_err(|e| Error::Schema(format!("{name}: cannot read header row: {e}")))?
            .clone();
        let columns: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        for col in required {
            if !columns.contains_key(*col) {
                return Err(Error::Schema(format!(
                    "{name}: missing required column '{col}'"
                )));
            }
        }
        Ok(Self {
            name: name.to_string(),
            columns,
            reader,
        })
    }

    /// Rows as `(line, fields)` for the requested columns.
    fn rows(&mut self, cols: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
        let idx: Vec<usize> = cols.iter().map(|c| self.columns[*c]).collect();
        let mut out = Vec::new();
        for rec in self.reader.records() {
            let rec = rec.map_err(|e| Error::Schema(format!("{}: {e}", self.name)))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let mut fields = Vec::with_capacity(idx.len());
            for (k, &i) in idx.iter().enumerate() {
                let v = rec.get(i).unwrap_or("");
                if v.is_empty() {
                    return Err(Error::Schema(format!(
                        "{} line {line}: column '{}' is empty",
                        self.name, cols[k]
                    )));
                }
                fields.push(v.to_string());
            }
            out.push((line, fields));
        }
        Ok(out)
    }
}

fn parse_num(name: &str, line: u64, col: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| {
        Error::Schema(format!(
            "{name} line {line}: column '{col}': cannot parse '{v}' as a number"
        ))
    })?;
    if !x.is_finite() {
        return Err(Error::Schema(format!(
            "{name} line {line}: column '{col}': value is not finite"
        )));
    }
    Ok(x)
}

fn open_file(path: &Path) -> Result<Box<dyn Read>> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Schema(format!("cannot open {}: {e}", path.display())))?;
    Ok(Box::new(std::io::BufReader::new(f)))
}

pub fn read_dataset(data_path: &Path, response_path: &Path) -> Result<LabeledDataset> {
    read_dataset_from(
        open_file(data_path)?,
        &data_path.display().to_string(),
        open_file(response_path)?,
        &response_path.display().to_string(),
    )
}

/// Data columns `subject_id, predictor_id, grid_point, value`; response
/// columns `subject_id, y`. Every subject must observe every predictor on
/// the same grid.
pub fn read_dataset_from(
    data: Box<dyn Read>,
    data_name: &str,
    response: Box<dyn Read>,
    response_name: &str,
) -> Result<LabeledDataset> {
    const DATA_COLS: [&str; 4] = ["subject_id", "predictor_id", "grid_point", "value"];
    let mut table = Table::open(data, data_name, &DATA_COLS)?;
    let rows = table.rows(&DATA_COLS)?;
    if rows.is_empty() {
        return Err(Error::Schema(format!("{data_name}: no data rows")));
    }
    let mut curves: BTreeMap<(String, String), Vec<(f64, f64, u64)>> = BTreeMap::new();
    for (line, f) in rows {
        let s = parse_num(data_name, line, "grid_point", &f[2])?;
        let v = parse_num(data_name, line, "value", &f[3])?;
        curves
            .entry((f[0].clone(), f[1].clone()))
            .or_default()
            .push((s, v, line));
    }
    let mut subjects: Vec<String> = curves.keys().map(|k| k.0.clone()).collect();
    subjects.dedup();
    sort_ids(&mut subjects);
    let mut predictors: Vec<String> = curves.keys().map(|k| k.1.clone()).collect();
    predictors.sort();
    predictors.dedup();
    sort_ids(&mut predictors);

    let mut grid: Option<Vec<f64>> = None;
    for ((subj, pred), pts) in curves.iter_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Schema(format!(
                "{data_name} line {}: duplicate grid_point {} for subject '{subj}', predictor '{pred}'",
                w[1].2, w[1].0
            )));
        }
        let g: Vec<f64> = pts.iter().map(|p| p.0).collect();
        match &grid {
            None => grid = Some(g),
            Some(g0) if *g0 != g => {
                return Err(Error::Schema(format!(
                    "{data_name}: subject '{subj}', predictor '{pred}' is observed on a different grid \
                     ({} points) than the first curve ({} points)",
                    g.len(),
                    g0.len()
                )));
            }
            _ => {}
        }
    }
    let grid = grid.expect("at least one curve");
    let (n, p, m) = (subjects.len(), predictors.len(), grid.len());
    let mut values = Vec::with_capacity(n * p * m);
    for s in &subjects {
        for q in &predictors {
            let pts = curves.get(&(s.clone(), q.clone())).ok_or_else(|| {
                Error::Schema(format!(
                    "{data_name}: subject '{s}' has no values for predictor '{q}'"
                ))
            })?;
            values.extend(pts.iter().map(|p| p.1));
        }
    }

    const RESP_COLS: [&str; 2] = ["subject_id", "y"];
    let mut table = Table::open(response, response_name, &RESP_COLS)?;
    let mut y: HashMap<String, f64> = HashMap::new();
    for (line, f) in table.rows(&RESP_COLS)? {
        let v = parse_num(response_name, line, "y", &f[1])?;
        if y.insert(f[0].clone(), v).is_some() {
            return Err(Error::Schema(format!(
                "{response_name} line {line}: duplicate subject_id '{}'",
                f[0]
            )));
        }
    }
    let mut response = Vec::with_capacity(n);
    for s in &subjects {
        response.push(*y.get(s).ok_or_else(|| {
            Error::Schema(format!("{response_name}: no response for subject '{s}'"))
        })?);
    }
    if y.len() != n {
        let extra = y
            .keys()
            .find(|k| !subjects.contains(k))
            .expect("extra subject");
        return Err(Error::Schema(format!(
            "{response_name}: subject '{extra}' has a response but no functional data"
        )));
    }
    Ok(LabeledDataset {
        data: FunctionalDataset::new(grid, n, p, values, response)?,
        subjects,
        predictors,
    })
}

pub fn write_dataset(ds: &LabeledDataset, data_path: &Path, response_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(data_path)?;
    w.write_record(["subject_id", "predictor_id", "grid_point", "value"])?;
    let grid = ds.data.grid();
    for (i, s) in ds.subjects.iter().enumerate() {
        for (j, q) in ds.predictors.iter().enumerate() {
            for (g, v) in grid.iter().zip(ds.data.trajectory(i, j)) {
                w.write_record([s.as_str(), q.as_str(), &fmt_f64(*g), &fmt_f64(*v)])?;
            }
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(response_path)?;
    w.write_record(["subject_id", "y"])?;
    for (s, y) in ds.subjects.iter().zip(ds.data.response()) {
        w.write_record([s.as_str(), &fmt_f64(*y)])?;
    }
    w.flush()?;
    Ok(())
}

/// Functions `x_j` with columns `predictor_id, grid_point, value`, on the
/// data grid. Predictors that do not appear are taken as zero.
pub fn read_functions(path: &Path, predictors: &[String], grid: &[f64]) -> Result<DMatrix<f64>> {
    read_functions_from(
        open_file(path)?,
        &path.display().to_string(),
        predictors,
        grid,
    )
}

pub fn read_functions_from(
    reader: Box<dyn Read>,
    name: &str,
    predictors: &[String],
    grid: &[f64],
) -> Result<DMatrix<f64>> {
    const COLS: [&str; 3] = ["predictor_id", "grid_point", "value"];
    let mut table = Table::open(reader, name, &COLS)?;
    let mut x = DMatrix::zeros(predictors.len(), grid.len());
    let mut seen: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
    for (line, f) in table.rows(&COLS)? {
        let j = predictors.iter().position(|p| *p == f[0]).ok_or_else(|| {
            Error::Schema(format!(
                "{name} line {line}: unknown predictor_id '{}'",
                f[0]
            ))
        })?;
        let s = parse_num(name, line, "grid_point", &f[1])?;
        let v = parse_num(name, line, "value", &f[2])?;
        let l = grid.iter().position(|g| *g == s).ok_or_else(|| {
            Error::Validation(format!(
                "{name} line {line}: grid_point {s} is not a point of the data grid"
            ))
        })?;
        let mark = seen.entry(j).or_insert_with(|| vec![false; grid.len()]);
        if mark[l] {
            return Err(Error::Schema(format!(
                "{name} line {line}: duplicate grid_point {s} for predictor '{}'",
                f[0]
            )));
        }
        mark[l] = true;
        x[(j, l)] = v;
    }
    for (j, mark) in &seen {
        if let Some(l) = mark.iter().position(|m| !m) {
            return Err(Error::Validation(format!(
                "{name}: predictor '{}' has no value at grid_point {}",
                predictors[*j], grid[l]
            )));
        }
    }
    Ok(x)
}

/// Write rows of already formatted fields.
pub fn write_csv<W: Write>(w: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reader(s: &str) -> Box<dyn Read> {
        Box::new(std::io::Cursor::new(s.to_string()))
    }

    const DATA: &str = "subject_id,predictor_id,grid_point,value
2,temp,0,1.5
2,temp,1,2.5
1,temp,1,0.5
1,temp,0,-0.5
1,prec,0,3
1,prec,1,4
2,prec,0,5
2,prec,1,6
";
    const RESP: &str = "subject_id,y\n1,10\n2,20\n";

    #[test]
    fn reads_long_format() {
        let ds = read_dataset_from(reader(DATA), "d", reader(RESP), "r").unwrap();
        assert_eq!(ds.subjects, vec!["1", "2"]);
        assert_eq!(ds.predictors, vec!["prec", "temp"]);
        assert_eq!(ds.data.grid(), &[0.0, 1.0]);
        assert_eq!(ds.data.trajectory(0, 1), &[-0.5, 0.5]);
        assert_eq!(ds.data.trajectory(1, 0), &[5.0, 6.0]);
        assert_eq!(ds.data.response(), &[10.0, 20.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let bad = DATA.replace("grid_point", "s");
        let err = read_dataset_from(reader(&bad), "d.csv", reader(RESP), "r")
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("missing required column 'grid_point'"),
            "{err}"
        );
        let err = read_dataset_from(reader(DATA), "d", reader("subject_id,resp\n1,2\n"), "r.csv")
            .unwrap_err()
            .to_string();
        assert!(err.contains("'y'"), "{err}");
    }

    #[test]
    fn bad_cells_name_row_and_column() {
        let bad = DATA.replace("2,temp,1,2.5", "2,temp,1,abc");
        let err = read_dataset_from(reader(&bad), "d.csv", reader(RESP), "r")
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("d.csv line 3") && err.contains("'value'"),
            "{err}"
        );
    }

    #[test]
    fn structural_errors() {
        let missing = DATA.replace("2,prec,0,5\n2,prec,1,6\n", "");
        assert!(read_dataset_from(reader(&missing), "d", reader(RESP), "r").is_err());
        let ragged = DATA.replace("2,prec,1,6", "2,prec,0.5,6");
        assert!(read_dataset_from(reader(&ragged), "d", reader(RESP), "r").is_err());
        assert!(read_dataset_from(reader(DATA), "d", reader("subject_id,y\n1,1\n"), "r").is_err());
        assert!(read_dataset_from(
            reader(DATA),
            "d",
            reader("subject_id,y\n1,1\n2,2\n3,3\n"),
            "r"
        )
        .is_err());
    }

    #[test]
    fn functions_on_grid() {
        let preds = vec!["a".to_string(), "b".to_string()];
        let x = read_functions_from(
            reader("predictor_id,grid_point,value\nb,0,1\nb,1,2\n"),
            "x",
            &preds,
            &[0.0, 1.0],
        )
        .unwrap();
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(x.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0]);
        let err = read_functions_from(
            reader("predictor_id,grid_point,value\na,0.5,1\n"),
            "x",
            &preds,
            &[0.0, 1.0],
        );
        assert!(matches!(err, Err(Error::Validation(_))));
        let err = read_functions_from(
            reader("predictor_id,grid_point,value\na,0,1\n"),
            "x",
            &preds,
            &[0.0, 1.0],
        );
        assert!(err.is_err());
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }
}
