//! Small statistics helpers used by reports and acceptance checks.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Linear-interpolated quantile of sorted data (`q` in [0,1]).
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub d: f64,
    pub d_crit: f64,
    pub reject: bool,
}

/// Two-sample Kolmogorov–Smirnov test at level `alpha` using the asymptotic
/// critical value.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let d_crit = c * ((n + m) / (n * m)).sqrt();
    KsResult {
        d,
        d_crit,
        reject: d > d_crit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub se_slope: f64,
    pub t: f64,
    /// Two-sided p-value for slope = 0.
    pub p_value: f64,
}

/// Ordinary least squares with a Student-t test on the slope. Needs at
/// least three points.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let df = nf - 2.0;
    let se = (sse / df / sxx).sqrt();
    let (t, p) = if se == 0.0 {
        let t = if slope == 0.0 { 0.0 } else { f64::INFINITY.copysign(slope) };
        (t, if slope == 0.0 { 1.0 } else { 0.0 })
    } else {
        let t = slope / se;
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    };
    Some(LinearFit {
        slope,
        intercept,
        se_slope: se,
        t,
        p_value: p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bimodality {
    /// Separated modes in the half-decade log histogram.
    pub modes: usize,
    /// Mode centres in log10(bucket + 1) units.
    pub peaks: Vec<f64>,
    /// Ashman's D of the best two-cluster split.
    pub ashman_d: f64,
}

impl Bimodality {
    pub fn is_bimodal(&self) -> bool {
        self.modes >= 2
    }
}

const BIN_DECADES: f64 = 0.5;
const MIN_PEAK_MASS: f64 = 0.01;
const VALLEY_RATIO: f64 = 0.5;

/// Mode count of a latency histogram (bucket → count) on a log scale.
///
/// Buckets are mapped to log10(bucket + 1) and grouped in half-decade bins.
/// Two neighbouring peaks count as separate modes when the lowest bin
/// between them holds at most half of the smaller peak; peaks under 1% of
/// the mass are ignored.
pub fn bimodality(hist: &BTreeMap<u64, u64>) -> Bimodality {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return Bimodality {
            modes: 0,
            peaks: vec![],
            ashman_d: 0.0,
        };
    }
    let mut bins: Vec<u64> = Vec::new();
    for (&b, &c) in hist {
        let i = (((b + 1) as f64).log10() / BIN_DECADES).floor() as usize;
        if bins.len() <= i {
            bins.resize(i + 1, 0);
        }
        bins[i] += c;
    }
    let min_mass = (MIN_PEAK_MASS * total as f64).ceil() as u64;
    let mut peaks: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < bins.len() {
        // Collapse plateaus to their first bin.
        let mut j = i;
        while j + 1 < bins.len() && bins[j + 1] == bins[i] {
            j += 1;
        }
        let left = i == 0 || bins[i - 1] < bins[i];
        let right = j + 1 == bins.len() || bins[j + 1] < bins[i];
        if left && right && bins[i] >= min_mass.max(1) {
            peaks.push(i);
        }
        i = j + 1;
    }
    let mut kept: Vec<usize> = Vec::new();
    for p in peaks {
        match kept.last().copied() {
            None => kept.push(p),
            Some(q) => {
                let valley = *bins[q..=p].iter().min().unwrap();
                let smaller = bins[q].min(bins[p]);
                if valley as f64 <= VALLEY_RATIO * smaller as f64 {
                    kept.push(p);
                } else if bins[p] > bins[q] {
                    *kept.last_mut().unwrap() = p;
                }
            }
        }
    }
    let pts: Vec<(f64, f64)> = hist.iter().map(|(&b, &c)| (((b + 1) as f64).log10(), c as f64)).collect();
    Bimodality {
        modes: kept.len(),
        peaks: kept.iter().map(|&k| (k as f64 + 0.5) * BIN_DECADES).collect(),
        ashman_d: ashman_d(&pts),
    }
}

/// Ashman's D for the minimum within-cluster-variance split of sorted,
/// weighted 1-D points.
fn ashman_d(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let stats = |s: &[(f64, f64)]| {
        let w: f64 = s.iter().map(|p| p.1).sum();
        let m = s.iter().map(|p| p.0 * p.1).sum::<f64>() / w;
        let v = s.iter().map(|p| p.1 * (p.0 - m).powi(2)).sum::<f64>() / w;
        (m, v)
    };
    let mut best: Option<(f64, f64)> = None;
    for k in 1..pts.len() {
        let (a, b) = pts.split_at(k);
        let ((m1, v1), (m2, v2)) = (stats(a), stats(b));
        let wa: f64 = a.iter().map(|p| p.1).sum();
        let wb: f64 = b.iter().map(|p| p.1).sum();
        let within = wa * v1 + wb * v2;
        let d = if v1 + v2 > 0.0 {
            std::f64::consts::SQRT_2 * (m1 - m2).abs() / (v1 + v2).sqrt()
        } else {
            f64::INFINITY
        };
        if best.is_none_or(|(bw, _)| within < bw) {
            best = Some((within, d));
        }
    }
    best.map_or(0.0, |b| b.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), Some(2.5));
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&[], 0.5), None);
    }

    #[test]
    fn ks_critical_value_matches_table() {
        // c(0.01) ≈ 1.628; n = m = 10^4 gives ≈ 0.0230.
        let a: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a, 0.01);
        assert!((r.d_crit - 0.02302).abs() < 1e-4, "{}", r.d_crit);
        assert_eq!(r.d, 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 500.0).collect();
        assert!(ks_two_sample(&a, &b, 0.01).reject);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.1, 2.0, 2.9, 4.1];
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 0.99).abs() < 0.02);
        assert!(f.p_value < 0.01);
        let flat = linear_fit(&x, &[1.0, 2.0, 1.0, 2.0]).unwrap();
        assert!(flat.p_value > 0.05);
    }

    #[test]
    fn two_separated_lumps_are_bimodal() {
        let mut h = BTreeMap::new();
        h.insert(0, 500);
        h.insert(1, 100);
        for b in [20_000u64, 30_000, 50_000, 80_000] {
            h.insert(b, 200);
        }
        let r = bimodality(&h);
        assert_eq!(r.modes, 2, "{r:?}");
        assert!(r.ashman_d > 2.0);
    }

    #[test]
    fn single_lump_is_unimodal() {
        // Dense log-normal lump centred near bucket 1000.
        let mut h = BTreeMap::new();
        for b in 30u64..40_000 {
            let z = ((b as f64).log10() - 3.0) / 0.4;
            let c = (200.0 * (-0.5 * z * z).exp() / b as f64 * 100.0).round() as u64;
            if c > 0 {
                h.insert(b, c);
            }
        }
        assert_eq!(bimodality(&h).modes, 1);
    }

    #[test]
    fn tiny_side_peak_ignored() {
        let mut h = BTreeMap::new();
        h.insert(0, 5);
        h.insert(10_000, 1000);
        assert_eq!(bimodality(&h).modes, 1);
    }
}
