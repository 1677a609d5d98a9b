//! Short's and Newcomb's measurements, and a one-column CSV loader.
//!
//! Shipped datasets are checked against their known normal MLE on load, so a
//! transcription slip becomes a hard error instead of a silently wrong fit.

use std::path::Path;

use crate::error::{Result, SdiveError};
use crate::models::{NormalModel, ParametricModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub values: Vec<f64>,
    pub provenance: String,
}

/// Short's 1763 determinations of the solar parallax (Stigler 1977, Data Set 2).
pub const SHORT: [f64; 17] = [
    8.65, 8.35, 8.71, 8.31, 8.36, 8.58, 7.80, 7.71, 8.30, 9.71, 8.50, 8.28, 9.87, 8.86, 5.76, 8.44, 8.23,
];

/// Newcomb's 1882 passage times of light, coded (Stigler 1977, Table 5).
pub const NEWCOMB: [f64; 66] = [
    28.0, 26.0, 33.0, 24.0, 34.0, -44.0, 27.0, 16.0, 40.0, -2.0, 29.0, 22.0, 24.0, 21.0, 25.0, 30.0, 23.0, 29.0, 31.0,
    19.0, 24.0, 20.0, 36.0, 32.0, 36.0, 28.0, 25.0, 21.0, 28.0, 29.0, 37.0, 25.0, 28.0, 26.0, 30.0, 32.0, 36.0, 26.0,
    30.0, 22.0, 36.0, 23.0, 27.0, 27.0, 28.0, 27.0, 31.0, 27.0, 26.0, 33.0, 26.0, 32.0, 32.0, 24.0, 39.0, 28.0, 24.0,
    25.0, 32.0, 25.0, 29.0, 27.0, 28.0, 29.0, 16.0, 23.0,
];

struct Fingerprint {
    mu: f64,
    sigma: f64,
    tol: f64,
}

fn check_fingerprint(name: &str, values: &[f64], fp: Fingerprint) -> Result<()> {
    let theta = NormalModel.mle(values)?;
    if (theta[0] - fp.mu).abs() > fp.tol || (theta[1] - fp.sigma).abs() > fp.tol {
        return Err(SdiveError::DatasetIntegrity {
            name: name.into(),
            detail: format!(
                "normal MLE ({:.4}, {:.4}) differs from the reference ({}, {}) by more than {}",
                theta[0], theta[1], fp.mu, fp.sigma, fp.tol
            ),
        });
    }
    Ok(())
}

fn shipped(name: &str, values: &[f64], provenance: &str, fp: Fingerprint) -> Result<Dataset> {
    check_fingerprint(name, values, fp)?;
    Ok(Dataset { name: name.into(), values: values.to_vec(), provenance: provenance.into() })
}

pub fn short() -> Result<Dataset> {
    shipped(
        "short",
        &SHORT,
        "Short (1763) solar parallax, Stigler (1977) Data Set 2",
        Fingerprint { mu: 8.378, sigma: 0.846, tol: 0.001 },
    )
}

pub fn newcomb() -> Result<Dataset> {
    shipped(
        "newcomb",
        &NEWCOMB,
        "Newcomb (1882) speed of light, Stigler (1977) Table 5",
        Fingerprint { mu: 26.21, sigma: 10.66, tol: 0.01 },
    )
}

/// Parses one value per line; blank lines and `#` comments are skipped.
pub fn parse_csv(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let field = line.split(',').next().unwrap_or("").trim();
        let v: f64 = field.parse().map_err(|_| SdiveError::Parse {
            line: i + 1,
            message: format!("not a number: '{field}'"),
        })?;
        if !v.is_finite() {
            return Err(SdiveError::Parse { line: i + 1, message: format!("non-finite value '{field}'") });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(SdiveError::InvalidInput("data file contains no values".into()));
    }
    Ok(values)
}

/// `dataset:short`, `dataset:newcomb`, a bare shipped name, or a CSV path.
pub fn load_dataset(name_or_path: &str) -> Result<Dataset> {
    let name = name_or_path.strip_prefix("dataset:").unwrap_or(name_or_path);
    match name {
        "short" => return short(),
        "newcomb" => return newcomb(),
        _ if name_or_path.starts_with("dataset:") => {
            return Err(SdiveError::InvalidInput(format!("unknown dataset '{name}' (expected short or newcomb)")));
        }
        _ => {}
    }
    let path = Path::new(name_or_path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| SdiveError::InvalidInput(format!("cannot read data file '{}': {e}", path.display())))?;
    Ok(Dataset { name: name_or_path.into(), values: parse_csv(&text)?, provenance: format!("file {}", path.display()) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_fingerprints() {
        let s = short().unwrap();
        assert_eq!(s.values.len(), 17);
        let n = load_dataset("dataset:newcomb").unwrap();
        assert_eq!(n.values.len(), 66);
        assert!(load_dataset("newcomb").is_ok());
    }

    #[test]
    fn fingerprint_catches_a_slip() {
        let mut v = SHORT;
        v[3] = 3.81;
        let err = shipped("short", &v, "", Fingerprint { mu: 8.378, sigma: 0.846, tol: 0.001 }).unwrap_err();
        assert!(matches!(err, SdiveError::DatasetIntegrity { .. }));
    }

    #[test]
    fn csv_comments_and_errors() {
        assert_eq!(parse_csv("# header\n1.5\n\n2 # trailing\n-3e1\n").unwrap(), vec![1.5, 2.0, -30.0]);
        match parse_csv("1\n2\nabc\n").unwrap_err() {
            SdiveError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        assert!(parse_csv("# only\n").is_err());
        assert!(load_dataset("dataset:beran").is_err());
        assert!(load_dataset("/nonexistent/file.csv").is_err());
    }
}
