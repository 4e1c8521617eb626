//! Evaluation measures and the experiment report.
//!
//! Report file, sections separated by one blank line:
//!
//! ```text
//! [buckets]
//! start<TAB>n<TAB>ce<TAB>rce
//! ...
//!
//! [summary]
//! name<TAB>value          seed, final_rce, baseline_ctr, n_holdout, then config echo
//!
//! [coverage]
//! feature<TAB>coverage
//!
//! [correlation]
//! feature<TAB>pearson     `NA` when undefined
//! ```
//!
//! Reals are written in shortest round-trip form, so reading a report back
//! yields the same bits.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Predictions are clipped to `[CLIP, 1 - CLIP]` before taking logs.
pub const CLIP: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("baseline CTR {0} must lie strictly inside (0, 1)")]
    DegenerateBaseline(f64),
    #[error("need at least two present values, got {0}")]
    InsufficientData(usize),
    #[error("report line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// Mean binary cross entropy in nats.
pub fn cross_entropy(preds: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_lengths(preds.len(), labels.len())?;
    let sum: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(CLIP, 1.0 - CLIP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Entropy in nats of a Bernoulli(p) label.
pub fn baseline_entropy(p: f64) -> Result<f64, MetricsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MetricsError::DegenerateBaseline(p));
    }
    Ok(-p * p.ln() - (1.0 - p) * (1.0 - p).ln())
}

/// Relative cross entropy in percent: `100 * (1 - CE / H(p))`. Higher is better.
pub fn rce(preds: &[f64], labels: &[u8], baseline_ctr: f64) -> Result<f64, MetricsError> {
    let base = baseline_entropy(baseline_ctr)?;
    Ok(100.0 * (1.0 - cross_entropy(preds, labels)? / base))
}

/// Fraction of samples whose value is present and non-zero.
pub fn coverage(values: &[f64], present: &[bool]) -> Result<f64, MetricsError> {
    check_lengths(values.len(), present.len())?;
    let hit = values.iter().zip(present).filter(|(&v, &p)| p && v != 0.0).count();
    Ok(hit as f64 / values.len() as f64)
}

/// Pearson correlation over the present pairs. `None` when either side has
/// zero variance.
pub fn pearson(values: &[f64], present: &[bool], labels: &[u8]) -> Result<Option<f64>, MetricsError> {
    check_lengths(values.len(), present.len())?;
    check_lengths(values.len(), labels.len())?;
    let pairs: Vec<(f64, f64)> = values
        .iter()
        .zip(present)
        .zip(labels)
        .filter(|((_, &p), _)| p)
        .map(|((&v, _), &y)| (v, f64::from(y)))
        .collect();
    if pairs.len() < 2 {
        return Err(MetricsError::InsufficientData(pairs.len()));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// One recorded holdout prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub timestamp: i64,
    pub prediction: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub start: i64,
    pub n: usize,
    pub ce: f64,
    pub rce: f64,
}

/// Groups time-ordered predictions into fixed-width buckets aligned to
/// `origin`; empty buckets are skipped.
pub fn bucketize(scored: &[Scored], origin: i64, width: i64, baseline_ctr: f64) -> Result<Vec<Bucket>, MetricsError> {
    baseline_entropy(baseline_ctr)?;
    let mut out = Vec::new();
    let mut i = 0;
    while i < scored.len() {
        let start = origin + (scored[i].timestamp - origin).div_euclid(width) * width;
        let mut j = i;
        while j < scored.len() && scored[j].timestamp < start + width {
            j += 1;
        }
        let (p, y): (Vec<f64>, Vec<u8>) = scored[i..j].iter().map(|s| (s.prediction, s.label)).unzip();
        out.push(Bucket {
            start,
            n: j - i,
            ce: cross_entropy(&p, &y)?,
            rce: rce(&p, &y, baseline_ctr)?,
        });
        i = j;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub seed: u64,
    pub buckets: Vec<Bucket>,
    /// RCE over the final evaluation day (online) or the test set (batch).
    pub final_rce: f64,
    pub baseline_ctr: f64,
    pub n_holdout: usize,
    pub config: Vec<(String, String)>,
    pub coverage: Vec<(String, f64)>,
    pub correlation: Vec<(String, Option<f64>)>,
}

impl ExperimentReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("[buckets]\nstart\tn\tce\trce\n");
        for b in &self.buckets {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", b.start, b.n, b.ce, b.rce);
        }
        s.push_str("\n[summary]\nname\tvalue\n");
        let _ = writeln!(s, "seed\t{}", self.seed);
        let _ = writeln!(s, "final_rce\t{}", self.final_rce);
        let _ = writeln!(s, "baseline_ctr\t{}", self.baseline_ctr);
        let _ = writeln!(s, "n_holdout\t{}", self.n_holdout);
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k}\t{v}");
        }
        s.push_str("\n[coverage]\nfeature\tcoverage\n");
        for (f, c) in &self.coverage {
            let _ = writeln!(s, "{f}\t{c}");
        }
        s.push_str("\n[correlation]\nfeature\tpearson\n");
        for (f, c) in &self.correlation {
            match c {
                Some(c) => _ = writeln!(s, "{f}\t{c}"),
                None => _ = writeln!(s, "{f}\tNA"),
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        const SECTIONS: [(&str, &str); 4] = [
            ("[buckets]", "start\tn\tce\trce"),
            ("[summary]", "name\tvalue"),
            ("[coverage]", "feature\tcoverage"),
            ("[correlation]", "feature\tpearson"),
        ];
        let bad = |line: usize, reason: &str| MetricsError::Malformed {
            line,
            reason: reason.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        let mut report = ExperimentReport::default();
        let mut pos = 0;
        let mut summary_seen = [false; 4];
        for (si, (title, header)) in SECTIONS.iter().enumerate() {
            if si > 0 {
                if lines.get(pos) != Some(&"") {
                    return Err(bad(pos + 1, "expected blank line between sections"));
                }
                pos += 1;
            }
            if lines.get(pos) != Some(title) || lines.get(pos + 1) != Some(header) {
                return Err(bad(pos + 1, &format!("expected section {title} with header")));
            }
            pos += 2;
            while pos < lines.len() && !lines[pos].is_empty() {
                let ln = pos + 1;
                let f: Vec<&str> = lines[pos].split('\t').collect();
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad(ln, &format!("bad number `{s}`")));
                let int = |s: &str| s.parse::<u64>().map_err(|_| bad(ln, &format!("bad integer `{s}`")));
                match (si, f.as_slice()) {
                    (0, [a, b, c, d]) => report.buckets.push(Bucket {
                        start: a.parse().map_err(|_| bad(ln, "bad bucket start"))?,
                        n: int(b)? as usize,
                        ce: num(c)?,
                        rce: num(d)?,
                    }),
                    (1, [k, v]) => match *k {
                        "seed" => (report.seed, summary_seen[0]) = (int(v)?, true),
                        "final_rce" => (report.final_rce, summary_seen[1]) = (num(v)?, true),
                        "baseline_ctr" => (report.baseline_ctr, summary_seen[2]) = (num(v)?, true),
                        "n_holdout" => (report.n_holdout, summary_seen[3]) = (int(v)? as usize, true),
                        _ => report.config.push((k.to_string(), v.to_string())),
                    },
                    (2, [k, v]) => report.coverage.push((k.to_string(), num(v)?)),
                    (3, [k, v]) => {
                        let c = if *v == "NA" { None } else { Some(num(v)?) };
                        report.correlation.push((k.to_string(), c));
                    }
                    _ => return Err(bad(ln, "wrong number of columns")),
                }
                pos += 1;
            }
        }
        if pos != lines.len() {
            return Err(bad(pos + 1, "trailing content"));
        }
        if summary_seen.contains(&false) {
            return Err(bad(0, "summary section is missing required rows"));
        }
        Ok(report)
    }
}

pub fn emit_report(report: &ExperimentReport, path: &Path) -> Result<(), MetricsError> {
    std::fs::write(path, report.to_text())?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ExperimentReport, MetricsError> {
    ExperimentReport::parse(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_predictor_is_ln2() {
        assert_abs_diff_eq!(cross_entropy(&[0.5, 0.5], &[0, 1]).unwrap(), 2f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn perfect_predictions_hit_the_clip_floor() {
        let ce = cross_entropy(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(ce <= 1e-14, "{ce}");
    }

    #[test]
    fn four_point_mean_ce() {
        // -(ln .9 + ln .8 + ln .7 + ln .6) / 4
        let want = -(0.9f64.ln() + 0.8f64.ln() + 0.7f64.ln() + 0.6f64.ln()) / 4.0;
        let ce = cross_entropy(&[0.9, 0.2, 0.7, 0.4], &[1, 0, 1, 0]).unwrap();
        assert_abs_diff_eq!(ce, want, epsilon = 1e-12);
        assert_abs_diff_eq!(ce, 0.2990, epsilon = 1e-4);
    }

    #[test]
    fn ce_errors() {
        assert!(matches!(cross_entropy(&[], &[]), Err(MetricsError::EmptyInput)));
        assert!(matches!(
            cross_entropy(&[0.5], &[0, 1]),
            Err(MetricsError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn rce_sign_contract() {
        let labels = [1, 0, 0, 0];
        assert!(rce(&[1.0, 0.0, 0.0, 0.0], &labels, 0.25).unwrap() > 99.99);
        assert!(rce(&[0.0, 1.0, 1.0, 1.0], &labels, 0.25).unwrap() < 0.0);
        assert_abs_diff_eq!(rce(&[0.25; 4], &labels, 0.25).unwrap(), 0.0, epsilon = 1e-9);
        assert!(matches!(
            rce(&[0.5], &[1], 0.0),
            Err(MetricsError::DegenerateBaseline(_))
        ));
        assert!(matches!(
            rce(&[0.5], &[1], 1.0),
            Err(MetricsError::DegenerateBaseline(_))
        ));
    }

    #[test]
    fn coverage_definition() {
        assert_eq!(
            coverage(&[1.0, 0.0, 2.0, 0.0], &[true, true, true, false]).unwrap(),
            0.5
        );
        assert_eq!(coverage(&[0.0; 3], &[false; 3]).unwrap(), 0.0);
        assert!(coverage(&[], &[]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let t = [true; 4];
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0, 4.0], &t, &[0, 0, 1, 1]).unwrap().unwrap(),
            0.8944,
            epsilon = 1e-4
        );
        // closed form: 2 / sqrt(5)
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0, 4.0], &t, &[0, 0, 1, 1]).unwrap().unwrap(),
            2.0 / 5f64.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            pearson(&[0.0, 1.0, 1.0, 0.0], &t, &[0, 1, 1, 0]).unwrap().unwrap(),
            1.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            pearson(&[1.0, 0.0, 0.0, 1.0], &t, &[0, 1, 1, 0]).unwrap().unwrap(),
            -1.0,
            epsilon = 1e-9
        );
        assert_eq!(pearson(&[3.0; 4], &t, &[0, 1, 1, 0]).unwrap(), None);
        assert!(matches!(
            pearson(&[1.0, 2.0], &[true, false], &[0, 1]),
            Err(MetricsError::InsufficientData(1))
        ));
    }

    #[test]
    fn buckets_partition_predictions() {
        let s: Vec<Scored> = [0, 10, 7199, 7200, 30000]
            .iter()
            .map(|&t| Scored {
                timestamp: t,
                prediction: 0.3,
                label: u8::from(t % 2 == 0),
            })
            .collect();
        let b = bucketize(&s, 0, 7200, 0.3).unwrap();
        assert_eq!(
            b.iter().map(|b| (b.start, b.n)).collect::<Vec<_>>(),
            vec![(0, 3), (7200, 1), (28800, 1)]
        );
    }

    fn sample_report() -> ExperimentReport {
        ExperimentReport {
            seed: 7,
            buckets: vec![Bucket {
                start: 0,
                n: 3,
                ce: 0.1 + 0.2,
                rce: -1.0 / 3.0,
            }],
            final_rce: 2.5e-3,
            baseline_ctr: 0.04,
            n_holdout: 3,
            config: vec![("mode".into(), "online".into())],
            coverage: vec![("a:h_i".into(), 0.25), ("b:h_i".into(), 1.0)],
            correlation: vec![("a:h_i".into(), Some(0.125)), ("b:h_i".into(), None)],
        }
    }

    #[test]
    fn report_round_trip() {
        let r = sample_report();
        let text = r.to_text();
        assert!(text.contains("\n[coverage]\nfeature\tcoverage\na:h_i\t0.25\nb:h_i\t1\n"));
        assert_eq!(ExperimentReport::parse(&text).unwrap(), r);
    }

    #[test]
    fn empty_report_has_headers_only() {
        let text = ExperimentReport::default().to_text();
        assert!(text.starts_with("[buckets]\nstart\tn\tce\trce\n\n[summary]"));
        assert_eq!(ExperimentReport::parse(&text).unwrap(), ExperimentReport::default());
    }

    #[test]
    fn rejects_broken_report() {
        let text = sample_report().to_text();
        assert!(ExperimentReport::parse(&text.replace("[summary]", "[sumary]")).is_err());
        assert!(ExperimentReport::parse(&text.replace("0.25", "x")).is_err());
        assert!(ExperimentReport::parse(&text.replace("seed\t7\n", "")).is_err());
    }
}
