//! Reading, writing and simulating observation files.
//!
//! Files hold whitespace separated floats, a fixed number per line. Blank
//! lines and lines starting with `#` are skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use smc_core::sampler::format_real;
use smc_core::{Result, SmcError, Stream};

/// Parses `text` into rows of exactly `width` floats.
pub fn parse_rows(text: &str, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| SmcError::InvalidParameter(format!("line {}: {e}", k + 1)))?;
        if row.len() != width {
            return Err(SmcError::InvalidParameter(format!(
                "line {}: expected {width} values, found {}",
                k + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| SmcError::InvalidParameter(format!("{}: {e}", path.display())))?;
    parse_rows(&text, width).map_err(|e| match e {
        SmcError::InvalidParameter(msg) => {
            SmcError::InvalidParameter(format!("{}: {msg}", path.display()))
        }
        e => e,
    })
}

pub fn write_rows<'a>(path: &Path, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for row in rows {
        let line: Vec<String> = row.iter().map(|&v| format_real(v)).collect();
        writeln!(out, "{}", line.join("\t"))?;
    }
    out.flush()?;
    Ok(())
}

/// Student t variate with `nu` degrees of freedom.
pub fn student_t(rng: &mut Stream, nu: f64) -> Result<f64> {
    let z = rng.std_normal();
    let chi2 = smc_core::rng::sample_gamma(rng, 0.5 * nu, 2.0)?;
    Ok(z / (chi2 / nu).sqrt())
}

/// Normal observations for the conjugate model.
pub fn simulate_normal(seed: u64, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    let mut rng = Stream::new(seed, 0);
    (0..n).map(|_| mean + sd * rng.std_normal()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_errors() {
        let rows = parse_rows("# header\n1 2\n\n3.5\t-4e-3\n", 2).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.5, -4e-3]]);
        let err = parse_rows("1 2\n3\n", 2).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_rows("1 2\n3 x\n", 2).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn round_trip() {
        let dir = std::env::temp_dir().join(format!("smc-data-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rows.data");
        let rows = [vec![0.1, 1.0 / 3.0], vec![-2.5e-300, 1e300]];
        write_rows(&path, rows.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(read_rows(&path, 2).unwrap(), rows.to_vec());
        let err = read_rows(&path, 3).unwrap_err().to_string();
        assert!(err.contains("rows.data") && err.contains("line 1"), "{err}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn student_t_is_symmetric_and_heavier_than_normal() {
        let mut rng = Stream::new(5, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| student_t(&mut rng, 10.0).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // variance of t_10 is 10 / 8
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.25).abs() < 0.05, "{var}");
    }
}
