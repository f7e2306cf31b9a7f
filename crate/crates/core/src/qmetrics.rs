//! Correlation metrics between predicted scores and MOS.

use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 samples, got {0}")]
    TooFew(usize),
    #[error("correlation undefined: constant input")]
    Degenerate,
    #[error("no results to aggregate")]
    Empty,
}

fn check(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(MetricError::TooFew(x.len()));
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Degenerate);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of the raw values.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check(x, y)?;
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::Degenerate);
    }
    pearson(x, y)
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson on average ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check(x, y)?;
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(MetricError::Degenerate);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Correlations on one evaluation set; `None` marks an undefined value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
    pub n_samples: usize,
}

impl EvalResult {
    pub fn compute(pred: &[f64], mos: &[f64]) -> Self {
        Self {
            plcc: plcc(pred, mos).ok(),
            srcc: srcc(pred, mos).ok(),
            n_samples: pred.len().min(mos.len()),
        }
    }

    pub fn is_defined(&self) -> bool {
        self.plcc.is_some() && self.srcc.is_some()
    }
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "UNDEFINED".to_string(), |v| format!("{v:.6}"));
        write!(f, "PLCC={} SRCC={} N={}", show(self.plcc), show(self.srcc), self.n_samples)
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Componentwise median; undefined repeats are skipped, and a metric that is
/// undefined in every repeat stays undefined. `n_samples` is the median count.
pub fn median_over_repeats(results: &[EvalResult]) -> Result<EvalResult, MetricError> {
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut counts: Vec<usize> = results.iter().map(|r| r.n_samples).collect();
    counts.sort_unstable();
    Ok(EvalResult {
        plcc: median(results.iter().filter_map(|r| r.plcc).collect()),
        srcc: median(results.iter().filter_map(|r| r.srcc).collect()),
        n_samples: counts[(counts.len() - 1) / 2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plcc_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((plcc(&x, &x.map(|v| 2.0 * v + 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((plcc(&x, &x.map(|v| -v)).unwrap() + 1.0).abs() < 1e-12);
        // sxy = 4, sxx = syy = 5
        assert!((plcc(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn srcc_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((srcc(&x, &x.map(|v: f64| v.exp())).unwrap() - 1.0).abs() < 1e-12);
        assert!((srcc(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        let expect = pearson(&[1.5, 1.5, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(srcc(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), expect);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(plcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(MetricError::Degenerate));
        assert_eq!(srcc(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), Err(MetricError::Degenerate));
        assert_eq!(plcc(&[1.0, 2.0], &[1.0, 2.0]), Err(MetricError::TooFew(2)));
        assert_eq!(srcc(&[1.0, 2.0, 3.0], &[1.0]), Err(MetricError::LengthMismatch(3, 1)));
        let r = EvalResult::compute(&[1.0, 2.0], &[1.0, 2.0]);
        assert!(!r.is_defined());
        assert_eq!(r.to_string(), "PLCC=UNDEFINED SRCC=UNDEFINED N=2");
    }

    #[test]
    fn medians() {
        let r = |p: f64| EvalResult { plcc: Some(p), srcc: Some(p / 2.0), n_samples: 10 };
        assert_eq!(median_over_repeats(&[r(0.3)]).unwrap(), r(0.3));
        let m = median_over_repeats(&[r(0.9), r(0.7), r(0.8)]).unwrap();
        assert!((m.plcc.unwrap() - 0.8).abs() < 1e-15);
        let m = median_over_repeats(&[r(0.7), r(0.9)]).unwrap();
        assert!((m.plcc.unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(median_over_repeats(&[]), Err(MetricError::Empty));
    }
}
