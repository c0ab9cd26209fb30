//! Skill scores in meters and their tabular rendering.
//!
//! NSE compares against the training mean and NRMSE/NBIAS divide by the
//! training range. Correlation and the KGE ratios use population moments of
//! the evaluated vectors. Scores that are undefined for the data (constant
//! series, zero mean) are `None`, never NaN.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::TargetStats;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub rmse: f64,
    pub nrmse: f64,
    pub bias: f64,
    pub nbias: f64,
    pub mape: f64,
    pub rho: Option<f64>,
    pub nse: f64,
    pub kge: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn population_std(v: &[f64], mu: f64) -> f64 {
    (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Pearson correlation; `None` when either vector is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn compute_metrics(y_hat: &[f64], y: &[f64], train: &TargetStats) -> Result<Metrics> {
    let n = y.len();
    if y_hat.len() != n {
        return Err(Error::Shape(format!("{} predictions for {n} observations", y_hat.len())));
    }
    if n < 2 {
        return Err(Error::Invalid(format!("metrics need at least 2 points, got {n}")));
    }
    if let Some(i) = y_hat.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("non-finite value at position {i}")));
    }
    if let Some(i) = y.iter().position(|&v| v == 0.0) {
        return Err(Error::Invalid(format!("observation {i} is zero, MAPE is undefined")));
    }
    let range = train.max - train.min;
    if !(range > 0.0) {
        return Err(Error::ZeroVariance("training target range is zero".into()));
    }
    let nf = n as f64;
    let sse: f64 = y_hat.iter().zip(y).map(|(p, o)| (p - o) * (p - o)).sum();
    let rmse = (sse / nf).sqrt();
    let bias = y_hat.iter().zip(y).map(|(p, o)| p - o).sum::<f64>() / nf;
    let mape = y_hat.iter().zip(y).map(|(p, o)| (p - o).abs() / o).sum::<f64>() / nf;
    let sst: f64 = y.iter().map(|o| (o - train.mean) * (o - train.mean)).sum();
    let nse = 1.0 - sse / sst;

    let (mu_hat, mu_obs) = (mean(y_hat), mean(y));
    let (sd_hat, sd_obs) = (population_std(y_hat, mu_hat), population_std(y, mu_obs));
    let rho = pearson(y_hat, y);
    let alpha = (sd_obs > 0.0).then(|| sd_hat / sd_obs);
    let beta = (mu_obs != 0.0).then(|| mu_hat / mu_obs);
    let kge = match (rho, alpha, beta) {
        (Some(r), Some(a), Some(b)) if sd_hat > 0.0 => {
            Some(1.0 - ((r - 1.0).powi(2) + (a - 1.0).powi(2) + (b - 1.0).powi(2)).sqrt())
        }
        _ => None,
    };
    Ok(Metrics {
        n,
        rmse,
        nrmse: rmse / range,
        bias,
        nbias: bias / range,
        mape,
        rho,
        nse,
        kge,
        alpha,
        beta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub sensor_id: String,
    pub model: String,
    pub split: String,
    pub metrics: Metrics,
}

pub const TABLE_COLUMNS: [&str; 8] = ["RMSE[m]", "NRMSE", "BIAS[m]", "NBIAS", "MAPE", "rho", "NSE", "KGE"];

impl EvaluationReport {
    /// Values in table column order.
    pub fn columns(&self) -> [Option<f64>; 8] {
        let m = &self.metrics;
        [Some(m.rmse), Some(m.nrmse), Some(m.bias), Some(m.nbias), Some(m.mape), m.rho, Some(m.nse), m.kge]
    }
}

/// Two decimals; non-zero magnitudes below 0.005 print as `<0.01`.
pub fn format_value(v: Option<f64>) -> String {
    match v {
        None => "n/a".to_string(),
        Some(x) if x != 0.0 && x.abs() < 0.005 => "<0.01".to_string(),
        Some(x) => format!("{x:.2}"),
    }
}

fn mean_std_defined(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return (None, None);
    }
    let mu = mean(&defined);
    (Some(mu), Some(population_std(&defined, mu)))
}

/// Text table with one row per report and, for every model with at least two
/// reports, a mean row followed by the standard deviations in parentheses.
pub fn render_report_table(reports: &[EvaluationReport]) -> String {
    let mut rows: Vec<[String; 10]> = Vec::new();
    let header = ["Sensor", "Model"].iter().chain(TABLE_COLUMNS.iter()).map(|s| s.to_string());
    rows.push(header.collect::<Vec<_>>().try_into().expect("10 columns"));
    for r in reports {
        let mut row = vec![r.sensor_id.clone(), r.model.clone()];
        row.extend(r.columns().iter().map(|v| format_value(*v)));
        rows.push(row.try_into().expect("10 columns"));
    }
    let mut models: Vec<&str> = Vec::new();
    for r in reports {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut summary = Vec::new();
    for model in models {
        let group: Vec<&EvaluationReport> = reports.iter().filter(|r| r.model == model).collect();
        if group.len() < 2 {
            continue;
        }
        let mut means = vec!["Mean".to_string(), model.to_string()];
        let mut sds = vec!["(sigma)".to_string(), String::new()];
        for c in 0..TABLE_COLUMNS.len() {
            let values: Vec<Option<f64>> = group.iter().map(|r| r.columns()[c]).collect();
            let (mu, sd) = mean_std_defined(&values);
            means.push(format_value(mu));
            sds.push(format!("({})", format_value(sd)));
        }
        summary.push(means.try_into().expect("10 columns"));
        summary.push(sds.try_into().expect("10 columns"));
    }
    let all: Vec<&[String; 10]> = rows.iter().chain(summary.iter()).collect();
    let widths: Vec<usize> = (0..10).map(|c| all.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let total: usize = widths.iter().sum::<usize>() + 3 * 9;
    let mut out = String::new();
    let line = |out: &mut String, row: &[String; 10]| {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| if c < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
    };
    line(&mut out, &rows[0]);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for row in &rows[1..] {
        line(&mut out, row);
    }
    if !summary.is_empty() {
        let _ = writeln!(out, "{}", "=".repeat(total));
        for row in &summary {
            line(&mut out, row);
        }
    }
    out
}

#[derive(Serialize)]
struct CsvRow<'a> {
    sensor: &'a str,
    model: &'a str,
    split: &'a str,
    n: usize,
    rmse: f64,
    nrmse: f64,
    bias: f64,
    nbias: f64,
    mape: f64,
    rho: Option<f64>,
    nse: f64,
    kge: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
}

/// Machine-readable report; undefined scores are empty fields.
pub fn write_reports_csv(reports: &[EvaluationReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    for r in reports {
        let m = &r.metrics;
        w.serialize(CsvRow {
            sensor: &r.sensor_id,
            model: &r.model,
            split: &r.split,
            n: m.n,
            rmse: m.rmse,
            nrmse: m.nrmse,
            bias: m.bias,
            nbias: m.nbias,
            mape: m.mape,
            rho: m.rho,
            nse: m.nse,
            kge: m.kge,
            alpha: m.alpha,
            beta: m.beta,
        })
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(mean: f64, min: f64, max: f64) -> TargetStats {
        TargetStats { mean, std: 1.0, min, max }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-10
    }

    #[test]
    fn perfect_prediction() {
        let y = [3.1, 4.2, 5.0, 4.4];
        let m = compute_metrics(&y, &y, &stats(4.0, 3.0, 5.5)).unwrap();
        assert_eq!((m.rmse, m.bias, m.mape, m.nse), (0.0, 0.0, 0.0, 1.0));
        assert!(close(m.rho.unwrap(), 1.0));
        assert!(close(m.kge.unwrap(), 1.0));
    }

    #[test]
    fn training_mean_predictor_scores_zero_nse() {
        let y = [3.1, 4.2, 5.0, 4.4, 3.9];
        let m = compute_metrics(&[4.0; 5], &y, &stats(4.0, 3.0, 5.5)).unwrap();
        assert!(close(m.nse, 0.0));
        assert_eq!(m.rho, None);
        assert_eq!(m.kge, None);
    }

    #[test]
    fn constant_prediction_hand_values() {
        let m = compute_metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0], &stats(2.0, 1.0, 3.0)).unwrap();
        assert!(close(m.rmse, (2.0f64 / 3.0).sqrt()));
        assert!(close(m.nrmse, (2.0f64 / 3.0).sqrt() / 2.0));
        assert!(close(m.bias, 0.0));
        assert!(close(m.mape, (1.0 + 0.0 + 1.0 / 3.0) / 3.0));
        assert!(close(m.nse, 0.0));
        assert_eq!(m.rho, None);
        assert_eq!(m.kge, None);
        // the evaluation mean happens to equal the training mean here; a
        // different training mean must change NSE
        let shifted = compute_metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0], &stats(2.5, 1.0, 3.0)).unwrap();
        assert!(close(shifted.nse, 1.0 - 2.0 / 2.75));
    }

    #[test]
    fn doubled_prediction_kge() {
        let m = compute_metrics(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0], &stats(2.0, 1.0, 3.0)).unwrap();
        assert!(close(m.rho.unwrap(), 1.0));
        assert!(close(m.alpha.unwrap(), 2.0));
        assert!(close(m.beta.unwrap(), 2.0));
        assert!(close(m.kge.unwrap(), 1.0 - 2f64.sqrt()));
    }

    #[test]
    fn input_validation() {
        let s = stats(2.0, 1.0, 3.0);
        assert!(compute_metrics(&[1.0], &[1.0], &s).is_err());
        assert!(compute_metrics(&[1.0, 2.0], &[1.0], &s).is_err());
        assert!(compute_metrics(&[1.0, 2.0], &[0.0, 2.0], &s).is_err());
        assert!(compute_metrics(&[1.0, 2.0], &[1.0, 2.0], &stats(2.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(Some(-0.004)), "<0.01");
        assert_eq!(format_value(Some(0.004)), "<0.01");
        assert_eq!(format_value(Some(0.0)), "0.00");
        assert_eq!(format_value(Some(-0.21)), "-0.21");
        assert_eq!(format_value(Some(0.937)), "0.94");
        assert_eq!(format_value(None), "n/a");
    }

    fn report(sensor: &str, model: &str, rmse: f64) -> EvaluationReport {
        EvaluationReport {
            sensor_id: sensor.into(),
            model: model.into(),
            split: "test".into(),
            metrics: Metrics {
                n: 10,
                rmse,
                nrmse: 0.08,
                bias: -0.004,
                nbias: -0.05,
                mape: 0.04,
                rho: Some(0.94),
                nse: 0.93,
                kge: None,
                alpha: None,
                beta: None,
            },
        }
    }

    #[test]
    fn single_report_has_no_summary() {
        let t = render_report_table(&[report("a", "tdc-lstm", 0.37)]);
        assert_eq!(t.lines().count(), 3);
        assert!(!t.contains("Mean"));
        let header: Vec<&str> = t.lines().next().unwrap().split('|').map(str::trim).collect();
        assert_eq!(header, vec!["Sensor", "Model", "RMSE[m]", "NRMSE", "BIAS[m]", "NBIAS", "MAPE", "rho", "NSE", "KGE"]);
        assert!(t.contains("<0.01"));
        assert!(t.contains("n/a"));
    }

    #[test]
    fn summary_row_uses_population_spread() {
        let reports = [
            report("a", "tdc-lstm", 0.37),
            report("b", "tdc-lstm", 0.11),
            report("c", "tdc-lstm", 0.34),
        ];
        let t = render_report_table(&reports);
        let mean_line = t.lines().find(|l| l.starts_with("Mean")).unwrap();
        let cells: Vec<&str> = mean_line.split('|').map(str::trim).collect();
        assert_eq!(cells[2], "0.27");
        let sd_line = t.lines().find(|l| l.starts_with("(sigma)")).unwrap();
        let cells: Vec<&str> = sd_line.split('|').map(str::trim).collect();
        assert_eq!(cells[2], "(0.12)");
    }

    #[test]
    fn csv_output_marks_undefined() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_reports_csv(&[report("a", "tdc-lstm", 0.37)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "sensor,model,split,n,rmse,nrmse,bias,nbias,mape,rho,nse,kge,alpha,beta");
        assert!(lines.next().unwrap().ends_with(",0.93,,,"));
    }

    fn brute_rho(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
        let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n).sqrt();
        cov / (sa * sb)
    }

    fn paired(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2..=max_len).prop_flat_map(|n| {
            (
                prop::collection::vec(1.0f64..10.0, n),
                prop::collection::vec(1.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn rho_matches_covariance_formula((a, b) in paired(6)) {
            if let Some(r) = pearson(&a, &b) {
                prop_assert!((r - brute_rho(&a, &b)).abs() < 1e-12);
            }
        }

        #[test]
        fn translation_invariance((p, o) in paired(30), c in -0.9f64..20.0) {
            let s = stats(5.0, 1.0, 10.0);
            let m = compute_metrics(&p, &o, &s).unwrap();
            let pt: Vec<f64> = p.iter().map(|v| v + c).collect();
            let ot: Vec<f64> = o.iter().map(|v| v + c).collect();
            let mt = compute_metrics(&pt, &ot, &s).unwrap();
            prop_assert!((m.rmse - mt.rmse).abs() < 1e-9);
            prop_assert!((m.bias - mt.bias).abs() < 1e-9);
            match (m.rho, mt.rho) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
            }
        }

        #[test]
        fn scale_invariance((p, o) in paired(30), k in 0.1f64..10.0) {
            let s = stats(5.0, 1.0, 10.0);
            let m = compute_metrics(&p, &o, &s).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| v * k).collect();
            let os: Vec<f64> = o.iter().map(|v| v * k).collect();
            let ms = compute_metrics(&ps, &os, &s).unwrap();
            prop_assert!((ms.rmse - k * m.rmse).abs() < 1e-9 * k.max(1.0));
            prop_assert!((ms.bias - k * m.bias).abs() < 1e-9 * k.max(1.0));
            if let (Some(a), Some(b)) = (m.kge, ms.kge) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            if let (Some(a), Some(b)) = (m.alpha, ms.alpha) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn bounds((p, o) in paired(30)) {
            let m = compute_metrics(&p, &o, &stats(5.0, 1.0, 10.0)).unwrap();
            if let Some(r) = m.rho { prop_assert!((-1.0..=1.0).contains(&r)); }
            if let Some(k) = m.kge { prop_assert!(k <= 1.0); }
            prop_assert!(m.nse <= 1.0);
        }
    }
}
