use crate::error::{Error, Result};
use crate::model::Batch;
use crate::tensor::{RngState, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Per-column affine map to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // Constant columns keep their scale rather than dividing by zero.
    let std = if var.sqrt() > 1e-12 * mean.abs().max(1.0) { var.sqrt() } else { 1.0 };
    (mean, std)
}

impl Standardization {
    pub fn fit(x: &Tensor, y: &Tensor) -> Self {
        let (x_mean, x_std) = (0..x.cols()).map(|c| mean_std((0..x.rows()).map(move |r| x.get(r, c)))).unzip();
        let (y_mean, y_std) = mean_std(y.as_slice().iter().copied());
        Standardization { x_mean, x_std, y_mean, y_std }
    }

    pub fn apply_x(&self, x: &Tensor) -> Tensor {
        Tensor::from_fn(x.rows(), x.cols(), |r, c| (x.get(r, c) - self.x_mean[c]) / self.x_std[c])
    }

    pub fn apply_y(&self, y: &Tensor) -> Tensor {
        y.map(|v| (v - self.y_mean) / self.y_std)
    }

    pub fn invert_x(&self, x: &Tensor) -> Tensor {
        Tensor::from_fn(x.rows(), x.cols(), |r, c| self.x_mean[c] + self.x_std[c] * x.get(r, c))
    }

    pub fn invert_y(&self, y: &Tensor) -> Tensor {
        y.map(|v| self.y_mean + self.y_std * v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `N x d` inputs.
    pub x: Tensor,
    /// `N x 1` targets.
    pub y: Tensor,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Set once the data has been standardized.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        if y.cols() != 1 || x.rows() != y.rows() {
            return Err(Error::DimensionMismatch(format!("inputs {:?} and targets {:?}", x.shape(), y.shape())));
        }
        if x.rows() == 0 {
            return Err(Error::InvalidConfig("dataset has no rows".into()));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidConfig("dataset contains non-finite values".into()));
        }
        let feature_names = if x.cols() == 1 { vec!["x".into()] } else { (0..x.cols()).map(|c| format!("x{c}")).collect() };
        Ok(Dataset { x, y, feature_names, target_name: "y".into(), standardization: None })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn batch(&self) -> Batch {
        Batch { x: self.x.clone(), y: self.y.clone() }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Standardize with statistics of this dataset.
    pub fn standardize(&self) -> Result<(Dataset, Standardization)> {
        if self.standardization.is_some() {
            return Err(Error::InvalidConfig("dataset is already standardized".into()));
        }
        let s = Standardization::fit(&self.x, &self.y);
        Ok((self.standardize_with(&s)?, s))
    }

    /// Standardize with externally fitted statistics, e.g. from a training split.
    pub fn standardize_with(&self, s: &Standardization) -> Result<Dataset> {
        if self.standardization.is_some() {
            return Err(Error::InvalidConfig("dataset is already standardized".into()));
        }
        if s.x_mean.len() != self.dim() {
            return Err(Error::DimensionMismatch("standardization record does not match the inputs".into()));
        }
        Ok(Dataset {
            x: s.apply_x(&self.x),
            y: s.apply_y(&self.y),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            standardization: Some(s.clone()),
        })
    }

    pub fn destandardize(&self) -> Result<Dataset> {
        let s = self
            .standardization
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("dataset is not standardized".into()))?;
        Ok(Dataset {
            x: s.invert_x(&self.x),
            y: s.invert_y(&self.y),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            standardization: None,
        })
    }

    /// Shuffled split with `floor(N / 10)` test points for a 90/10 protocol.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidConfig(format!("test fraction {test_fraction} is outside [0, 1)")));
        }
        let n = self.len();
        let n_test = (n as f64 * test_fraction + 1e-9).floor() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        RngState::for_stream(seed, 7).shuffle(&mut idx);
        let (test, train) = idx.split_at(n_test);
        Ok((self.subset(train), self.subset(test)))
    }

    /// Writes a header row and one row per point. An optional `config_hash`
    /// goes on a leading `#` comment line, which [`load_csv`] skips.
    pub fn write_csv(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        if let Some(h) = config_hash {
            use std::io::Write;
            writeln!(file, "# config_hash: {h}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = self.x.row_slice(r).iter().map(|v| format!("{v:e}")).collect();
            rec.push(format!("{:e}", self.y.get(r, 0)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Read a rectangular numeric CSV with a header row. The column named
/// `target` (the last column if `None`) becomes `y`; every other column is
/// an input. Lines starting with `#` are comments.
pub fn load_csv(path: &Path, target: Option<&str>, delimiter: u8) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header.len() < 2 {
        return Err(Error::InvalidConfig(format!("{} needs at least one input and one target column", path.display())));
    }
    let t = match target {
        None => header.len() - 1,
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidConfig(format!("target column `{name}` not found in {header:?}")))?,
    };
    let mut rows: Vec<Vec<std::result::Result<f64, String>>> = Vec::new();
    let mut lines = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        lines.push(rec.position().map_or(rows.len() + 2, |p| p.line() as usize));
        rows.push(
            rec.iter()
                .map(|v| {
                    if v.is_empty() {
                        Err("missing value".to_string())
                    } else {
                        v.parse::<f64>().map_err(|e| format!("`{v}`: {e}"))
                    }
                })
                .collect(),
        );
    }
    if rows.is_empty() {
        return Err(Error::InvalidConfig(format!("{} has no data rows", path.display())));
    }
    for c in 0..header.len() {
        if rows.iter().all(|r| matches!(r.get(c), Some(Err(m)) if m != "missing value")) {
            return Err(Error::NonNumericColumn(header[c].clone()));
        }
    }
    for (i, r) in rows.iter().enumerate() {
        if let Some((c, Err(m))) = r.iter().enumerate().find(|(_, v)| v.is_err()) {
            return Err(Error::Parse { row: lines[i], column: c + 1, message: m.clone() });
        }
    }
    let d = header.len() - 1;
    let mut x = Tensor::zeros(rows.len(), d);
    let mut y = Tensor::zeros(rows.len(), 1);
    for (i, r) in rows.iter().enumerate() {
        let mut k = 0;
        for (c, v) in r.iter().enumerate() {
            let v = *v.as_ref().expect("checked above");
            if c == t {
                y.set(i, 0, v);
            } else {
                x.set(i, k, v);
                k += 1;
            }
        }
    }
    let mut ds = Dataset::new(x, y)?;
    ds.feature_names = header.iter().enumerate().filter(|(c, _)| *c != t).map(|(_, h)| h.clone()).collect();
    ds.target_name = header[t].clone();
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_std_normal;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std() {
        let mut rng = RngState::new(0);
        let x = sample_std_normal(&mut rng, 200, 3).map(|v| 4.0 + 3.0 * v);
        let y = sample_std_normal(&mut rng, 200, 1).map(|v| -2.0 + 0.5 * v);
        let (s, _) = Dataset::new(x, y).unwrap().standardize().unwrap();
        for c in 0..3 {
            let col = s.x.column_values(c);
            let m = col.iter().sum::<f64>() / 200.0;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 200.0).sqrt();
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_column_keeps_unit_scale_and_round_trips() {
        let x = Tensor::from_rows(&[vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 4.0]]);
        let y = Tensor::column(vec![1.0, 2.0, 3.0]);
        let ds = Dataset::new(x.clone(), y.clone()).unwrap();
        let (s, rec) = ds.standardize().unwrap();
        assert_eq!(rec.x_std[0], 1.0);
        assert!(s.x.column_values(0).iter().all(|v| *v == 0.0));
        let back = s.destandardize().unwrap();
        assert!(back.x.max_abs_diff(&x) < 1e-12 && back.y.max_abs_diff(&y) < 1e-12);
        assert!(s.standardize().is_err());
    }

    #[test]
    fn split_sizes_follow_the_protocol() {
        let ds = Dataset::new(Tensor::zeros(1599, 1), Tensor::zeros(1599, 1)).unwrap();
        let (tr, te) = ds.split(0.1, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (1440, 159));
        let ds = Dataset::new(Tensor::column((0..50).map(f64::from).collect()), Tensor::zeros(50, 1)).unwrap();
        let (a, _) = ds.split(0.1, 9).unwrap();
        let (b, _) = ds.split(0.1, 9).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn csv_loading_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write(dir.path(), "ok.csv", "a,b,target\n1,2,3\n4,5,6\n");
        let ds = load_csv(&ok, Some("target"), b',').unwrap();
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(ds.y.as_slice(), &[3.0, 6.0]);
        assert_eq!(ds.x.row_slice(1), &[4.0, 5.0]);
        assert_eq!(load_csv(&ok, None, b',').unwrap().target_name, "target");

        let bad = write(dir.path(), "bad.csv", "a,y\n1,2\n1,oops\n");
        match load_csv(&bad, Some("y"), b',') {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        let text = write(dir.path(), "text.csv", "name,y\nfoo,1\nbar,2\n");
        assert!(matches!(load_csv(&text, Some("y"), b','), Err(Error::NonNumericColumn(c)) if c == "name"));
        assert!(load_csv(&ok, Some("missing"), b',').is_err());
        let semi = write(dir.path(), "semi.csv", "a;y\n1;2\n");
        assert_eq!(load_csv(&semi, Some("y"), b';').unwrap().len(), 1);
    }

    #[test]
    fn csv_write_read_round_trip() {
        let mut rng = RngState::new(1);
        let ds = Dataset::new(sample_std_normal(&mut rng, 7, 2), sample_std_normal(&mut rng, 7, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        ds.write_csv(&p, Some("feedbeef")).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("# config_hash: feedbeef\n"));
        let back = load_csv(&p, Some("y"), b',').unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.y, ds.y);
    }
}
