use super::PredictiveSampleSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub struct PlotFiles {
    pub y_samples: PathBuf,
    pub f_samples: Option<PathBuf>,
    pub curves: Option<PathBuf>,
    pub sidecar: PathBuf,
}

fn x_header(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["x".into()]
    } else {
        (0..d).map(|k| format!("x{k}")).collect()
    }
}

fn open(path: &Path, hash: &str) -> Result<csv::Writer<std::fs::File>> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# config_hash: {hash}")?;
    Ok(csv::Writer::from_writer(file))
}

fn write_pairs(path: &Path, hash: &str, x: &Tensor, samples: &Tensor, label: &str) -> Result<()> {
    let mut w = open(path, hash)?;
    let mut header = x_header(x.cols());
    header.push(label.into());
    w.write_record(&header)?;
    for i in 0..samples.rows() {
        let xs: Vec<String> = x.row_slice(i).iter().map(|v| format!("{v:e}")).collect();
        for s in samples.row_slice(i) {
            let mut rec = xs.clone();
            rec.push(format!("{s:e}"));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write `(x*, y-sample)` pairs, `(x*, f-sample)` pairs if present, and
/// per-point curves such as a learned noise band, into `dir` with file
/// names starting with `prefix`. A sidecar text file documents the columns.
pub fn emit_plotdata(
    set: &PredictiveSampleSet,
    x_star: &Tensor,
    curves: &[(&str, Vec<f64>)],
    dir: &Path,
    prefix: &str,
) -> Result<PlotFiles> {
    if x_star.rows() != set.num_points() {
        return Err(Error::DimensionMismatch("test inputs do not match sample rows".into()));
    }
    if curves.iter().any(|(_, v)| v.len() != x_star.rows()) {
        return Err(Error::DimensionMismatch("curve length differs from the number of test points".into()));
    }
    std::fs::create_dir_all(dir)?;
    let hash = set.config_hash.clone().unwrap_or_else(|| "none".into());
    let y_path = dir.join(format!("{prefix}_y_samples.csv"));
    write_pairs(&y_path, &hash, x_star, &set.samples, "y")?;

    let f_path = match &set.f_samples {
        Some(f) => {
            let p = dir.join(format!("{prefix}_f_samples.csv"));
            write_pairs(&p, &hash, x_star, f, "f")?;
            Some(p)
        }
        None => None,
    };

    let curve_path = if curves.is_empty() {
        None
    } else {
        let p = dir.join(format!("{prefix}_curves.csv"));
        let mut w = open(&p, &hash)?;
        let mut header = x_header(x_star.cols());
        header.extend(curves.iter().map(|(n, _)| n.to_string()));
        w.write_record(&header)?;
        for i in 0..x_star.rows() {
            let mut rec: Vec<String> = x_star.row_slice(i).iter().map(|v| format!("{v:e}")).collect();
            rec.extend(curves.iter().map(|(_, v)| format!("{:e}", v[i])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Some(p)
    };

    let sidecar = dir.join(format!("{prefix}.columns.txt"));
    let mut s = std::fs::File::create(&sidecar)?;
    writeln!(s, "config_hash: {hash}")?;
    writeln!(s, "model: {}", set.model)?;
    writeln!(s, "units: {:?}", set.units())?;
    writeln!(
        s,
        "{}: {} then `y`, one row per predictive sample ({} points x {} samples)",
        y_path.file_name().unwrap().to_string_lossy(),
        x_header(x_star.cols()).join(", "),
        set.num_points(),
        set.samples_per_point()
    )?;
    if let Some(p) = &f_path {
        writeln!(s, "{}: same layout with latent function samples `f`", p.file_name().unwrap().to_string_lossy())?;
    }
    if let Some(p) = &curve_path {
        let names: Vec<&str> = curves.iter().map(|(n, _)| *n).collect();
        writeln!(s, "{}: one row per test point with {}", p.file_name().unwrap().to_string_lossy(), names.join(", "))?;
    }
    Ok(PlotFiles { y_samples: y_path, f_samples: f_path, curves: curve_path, sidecar })
}

/// Read back a plot CSV as a header and numeric rows.
pub fn read_plot_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, v)| {
                v.parse::<f64>().map_err(|e| Error::Parse { row: i + 1, column: c, message: e.to_string() })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::tensor::{sample_std_normal, RngState};

    #[test]
    fn sizes_round_trip_and_sidecar() {
        let mut rng = RngState::new(0);
        let y = sample_std_normal(&mut rng, 7, 4);
        let f = sample_std_normal(&mut rng, 7, 4);
        let set = PredictiveSampleSet::new(y.clone(), Some(f), ModelKind::Shgp).unwrap().with_provenance(0, "h1");
        let x = Tensor::column((0..7).map(|i| i as f64 * 0.1).collect());
        let dir = tempfile::tempdir().unwrap();
        let band = vec![0.5; 7];
        let files = emit_plotdata(&set, &x, &[("noise_std", band)], dir.path(), "toy").unwrap();
        let (header, rows) = read_plot_csv(&files.y_samples).unwrap();
        assert_eq!(header, vec!["x", "y"]);
        assert_eq!(rows.len(), 28);
        for i in 0..7 {
            for s in 0..4 {
                assert_eq!(rows[i * 4 + s][1], y.get(i, s));
                assert_eq!(rows[i * 4 + s][0], x.get(i, 0));
            }
        }
        assert_eq!(read_plot_csv(files.f_samples.as_ref().unwrap()).unwrap().1.len(), 28);
        assert_eq!(read_plot_csv(files.curves.as_ref().unwrap()).unwrap().1.len(), 7);
        let side = std::fs::read_to_string(&files.sidecar).unwrap();
        assert!(side.contains("config_hash: h1") && side.contains("noise_std"));
        assert!(std::fs::read_to_string(&files.y_samples).unwrap().starts_with("# config_hash: h1"));
    }
}
