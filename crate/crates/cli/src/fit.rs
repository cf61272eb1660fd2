//! Log-log least-squares rate fits.

use serde::Serialize;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `log value` against `log δ`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, CliError> {
    if points.len() < 3 {
        return Err(CliError::Failed(format!("rate fit needs at least 3 points (got {})", points.len())));
    }
    if let Some(p) = points.iter().find(|(d, v)| !(*d > 0.0 && *v > 0.0 && d.is_finite() && v.is_finite())) {
        return Err(CliError::Failed(format!("rate fit needs positive finite points (got {p:?})")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CliError::Failed("rate fit needs at least two distinct deltas".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        points: points.to_vec(),
        slope,
        intercept,
        r2,
    })
}

/// Reads `delta,value` pairs; blank lines, `#` comments and a non-numeric
/// header are skipped.
pub fn parse_points(text: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 2 {
            return Err(CliError::Usage(format!("line {}: expected `delta,value`", i + 1)));
        }
        match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
            (Ok(d), Ok(v)) => out.push((d, v)),
            _ if out.is_empty() => continue,
            _ => return Err(CliError::Usage(format!("line {}: not numeric", i + 1))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let f = fit_rate(&[(1.0, 1.0), (0.5, 0.5), (0.25, 0.25)]).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-14 && (f.r2 - 1.0).abs() < 1e-14);
        let f = fit_rate(&[(1.0, 1.0), (0.5, 0.25), (0.25, 0.0625)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_factor_leaves_slope() {
        let pts = [(0.2, 0.3), (0.1, 0.17), (0.05, 0.08), (0.025, 0.05)];
        let scaled: Vec<_> = pts.iter().map(|(d, v)| (*d, 7.5 * v)).collect();
        let (a, b) = (fit_rate(&pts).unwrap(), fit_rate(&scaled).unwrap());
        assert!((a.slope - b.slope).abs() < 1e-12);
    }

    #[test]
    fn invalid_points_are_errors() {
        assert!(fit_rate(&[(1.0, 1.0), (0.5, 0.5)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (0.5, 0.0), (0.25, 0.1)]).is_err());
    }

    #[test]
    fn parses_csv_with_header() {
        let p = parse_points("# c\ndelta,value\n0.2,1\n0.1, 0.5\n\n").unwrap();
        assert_eq!(p, vec![(0.2, 1.0), (0.1, 0.5)]);
        assert!(parse_points("0.2,1\nx,y\n").is_err());
    }
}
