//! Hypothesis tests used by the audits: pooled two-sample and one-sample
//! Student's t-tests, one-way ANOVA, and the regularized incomplete beta
//! function behind their p-values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Significance threshold used throughout the audits.
pub const DEFAULT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// t for t-tests, F for ANOVA. Infinite when the data have no spread but
    /// the means differ.
    pub statistic: f64,
    pub degrees_of_freedom: Vec<f64>,
    pub p_value: f64,
    pub threshold: f64,
    pub significant: bool,
    /// Zero within-sample variance with differing means.
    pub degenerate: bool,
}

impl TestResult {
    fn new(statistic: f64, degrees_of_freedom: Vec<f64>, p_value: f64, threshold: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self { statistic, degrees_of_freedom, p_value, threshold, significant: p_value < threshold, degenerate: false }
    }

    fn degenerate(statistic: f64, degrees_of_freedom: Vec<f64>, threshold: f64) -> Self {
        Self { degenerate: true, ..Self::new(statistic, degrees_of_freedom, 0.0, threshold) }
    }
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(z) for z > 0.
pub fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut x = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("incomplete beta needs a, b > 0, got a={a}, b={b}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("incomplete beta needs x in [0, 1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    if t.is_infinite() {
        return Ok(0.0);
    }
    reg_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Upper-tail p-value of the F distribution.
pub fn f_upper_p(f: f64, df1: f64, df2: f64) -> Result<f64> {
    if f.is_infinite() {
        return Ok(0.0);
    }
    reg_incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sum_sq_dev(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold must be in (0, 1), got {threshold}")));
    }
    Ok(())
}

/// Pooled-variance two-sample Student's t-test, two-sided.
pub fn t_test_two_sample(xs: &[f64], ys: &[f64], threshold: f64) -> Result<TestResult> {
    check_threshold(threshold)?;
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::Domain(format!(
            "t-test needs at least 2 observations per sample, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mx, my) = (mean(xs), mean(ys));
    let df = nx + ny - 2.0;
    let pooled = (sum_sq_dev(xs, mx) + sum_sq_dev(ys, my)) / df;
    let diff = mx - my;
    if pooled == 0.0 {
        if diff == 0.0 {
            return Ok(TestResult::new(0.0, vec![df], 1.0, threshold));
        }
        return Ok(TestResult::degenerate(diff.signum() * f64::INFINITY, vec![df], threshold));
    }
    let t = diff / (pooled * (1.0 / nx + 1.0 / ny)).sqrt();
    Ok(TestResult::new(t, vec![df], t_two_sided_p(t, df)?, threshold))
}

/// One-sample two-sided t-test of `xs` against the reference value `mu`.
pub fn t_test_one_sample(xs: &[f64], mu: f64, threshold: f64) -> Result<TestResult> {
    check_threshold(threshold)?;
    if xs.len() < 2 {
        return Err(Error::Domain(format!("one-sample t-test needs 2 observations, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let m = mean(xs);
    let df = n - 1.0;
    let var = sum_sq_dev(xs, m) / df;
    let diff = m - mu;
    if var == 0.0 {
        if diff == 0.0 {
            return Ok(TestResult::new(0.0, vec![df], 1.0, threshold));
        }
        return Ok(TestResult::degenerate(diff.signum() * f64::INFINITY, vec![df], threshold));
    }
    let t = diff / (var / n).sqrt();
    Ok(TestResult::new(t, vec![df], t_two_sided_p(t, df)?, threshold))
}

/// One-way ANOVA over `groups`.
pub fn anova_one_way<G: AsRef<[f64]>>(groups: &[G], threshold: f64) -> Result<TestResult> {
    check_threshold(threshold)?;
    if groups.len() < 2 {
        return Err(Error::Domain(format!("ANOVA needs at least 2 groups, got {}", groups.len())));
    }
    if let Some(g) = groups.iter().find(|g| g.as_ref().len() < 2) {
        return Err(Error::Domain(format!("ANOVA group with {} observations", g.as_ref().len())));
    }
    let k = groups.len() as f64;
    let n: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    let n = n as f64;
    let grand = groups.iter().flat_map(|g| g.as_ref().iter()).sum::<f64>() / n;
    let mut between = 0.0;
    let mut within = 0.0;
    for g in groups {
        let g = g.as_ref();
        let m = mean(g);
        between += g.len() as f64 * (m - grand) * (m - grand);
        within += sum_sq_dev(g, m);
    }
    let (df1, df2) = (k - 1.0, n - k);
    if within == 0.0 {
        if between == 0.0 {
            return Ok(TestResult::new(0.0, vec![df1, df2], 1.0, threshold));
        }
        return Ok(TestResult::degenerate(f64::INFINITY, vec![df1, df2], threshold));
    }
    let f = (between / df1) / (within / df2);
    Ok(TestResult::new(f, vec![df1, df2], f_upper_p(f, df1, df2)?, threshold))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(100.0) - 359.134_205_369_575_4).abs() < 1e-10);
    }

    #[test]
    fn incomplete_beta_boundaries() {
        assert_eq!(reg_incomplete_beta(2.0, 3.0, 0.0).unwrap(), 0.0);
        assert_eq!(reg_incomplete_beta(2.0, 3.0, 1.0).unwrap(), 1.0);
        assert!((reg_incomplete_beta(1.0, 1.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn incomplete_beta_matches_series_oracle() {
        // High-precision values (50-digit arithmetic).
        #[allow(clippy::excessive_precision)]
        let cases = [
            (3.0, 5.0, 0.3, 0.352_930_5),
            (0.5, 0.5, 0.2, 0.295_167_235_300_866_56),
            (2.5, 7.0, 0.45, 0.898_213_355_092_222_6),
            (10.0, 3.0, 0.9, 0.889_130_022_255_000_06),
            (1.5, 40.0, 0.01, 0.152_692_061_151_998_7),
            (50.0, 60.0, 0.47, 0.629_322_682_895_460_5),
        ];
        for (a, b, x, want) in cases {
            let got = reg_incomplete_beta(a, b, x).unwrap();
            assert!((got - want).abs() < 1e-10, "I({x}; {a}, {b}) = {got}, want {want}");
        }
        assert!((reg_incomplete_beta(3.0, 5.0, 0.3).unwrap() - 0.352_930_5).abs() < 1e-9);
    }

    #[test]
    fn incomplete_beta_domain_errors() {
        assert!(matches!(reg_incomplete_beta(0.0, 1.0, 0.5), Err(Error::Domain(_))));
        assert!(matches!(reg_incomplete_beta(1.0, 1.0, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn identical_samples() {
        let r = t_test_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn t_test_reference_values() {
        let r = t_test_two_sample(&[2.1, 2.5, 2.3, 2.7], &[1.1, 1.5, 1.3], 0.05).unwrap();
        assert!((r.statistic - 6.086_116_686_897_368).abs() < 1e-6);
        assert!((r.p_value - 0.001_731_915_809_508_390_5).abs() < 1e-6);
        assert_eq!(r.degrees_of_freedom, vec![5.0]);
        assert!(r.significant);
    }

    #[test]
    fn t_test_swap_negates() {
        let xs = [2.1, 2.5, 2.3, 2.7];
        let ys = [1.1, 1.5, 1.3];
        let a = t_test_two_sample(&xs, &ys, 0.05).unwrap();
        let b = t_test_two_sample(&ys, &xs, 0.05).unwrap();
        assert_eq!(a.statistic, -b.statistic);
        assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn degenerate_variance() {
        let r = t_test_two_sample(&[1.0, 1.0], &[2.0, 2.0], 0.05).unwrap();
        assert!(r.degenerate && r.significant);
        assert_eq!(r.p_value, 0.0);
        let r = t_test_two_sample(&[1.0, 1.0], &[1.0, 1.0], 0.05).unwrap();
        assert!(!r.degenerate && !r.significant);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn t_test_needs_two_observations() {
        assert!(t_test_two_sample(&[1.0], &[1.0, 2.0], 0.05).is_err());
        assert!(t_test_two_sample(&[1.0, 2.0], &[1.0, 2.0], 1.5).is_err());
    }

    #[test]
    fn anova_identical_groups() {
        let r = anova_one_way(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]], 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = anova_one_way(&[vec![0.0, 0.0], vec![0.0, 0.0]], 0.05).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn anova_three_groups_reference() {
        let groups = [vec![4.2, 5.1, 3.9, 4.8], vec![5.9, 6.3, 5.5, 6.1, 5.8], vec![4.9, 5.0, 5.6]];
        let r = anova_one_way(&groups, 0.05).unwrap();
        assert!((r.statistic - 13.067_270_583_190_414).abs() < 1e-6);
        assert!((r.p_value - 0.002_179_149_390_261_202).abs() < 1e-6);
        assert_eq!(r.degrees_of_freedom, vec![2.0, 9.0]);
    }

    #[test]
    fn one_sample_reference() {
        let s = [5.0, 5.5, 6.1, 4.8, 5.9, 6.3, 5.2, 5.7, 6.0, 5.4];
        let r = t_test_one_sample(&s, 1.0, 0.05).unwrap();
        assert!((r.statistic - 29.297_872_340_425_535).abs() < 1e-9);
        assert!((r.p_value - 3.067_703_381_776_568e-10).abs() < 1e-15);
        let r = t_test_one_sample(&[2.0; 10], 2.0, 0.05).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 2..20)
    }

    proptest! {
        #[test]
        fn f_equals_t_squared(xs in sample(), ys in sample()) {
            let t = t_test_two_sample(&xs, &ys, 0.05).unwrap();
            let f = anova_one_way(&[xs, ys], 0.05).unwrap();
            prop_assert!((f.statistic - t.statistic * t.statistic).abs() <= 1e-9 * f.statistic.max(1.0));
            prop_assert!((f.p_value - t.p_value).abs() < 1e-9);
        }

        #[test]
        fn incomplete_beta_reflection(a in 0.05f64..60.0, b in 0.05f64..60.0, x in 0.0f64..=1.0) {
            let lhs = reg_incomplete_beta(a, b, x).unwrap() + reg_incomplete_beta(b, a, 1.0 - x).unwrap();
            prop_assert!((lhs - 1.0).abs() < 1e-10, "sum = {}", lhs);
        }

        #[test]
        fn p_monotone_in_statistic(t1 in 0.0f64..20.0, dt in 0.0f64..5.0, df in 1.0f64..200.0) {
            let p1 = t_two_sided_p(t1, df).unwrap();
            let p2 = t_two_sided_p(t1 + dt, df).unwrap();
            prop_assert!((0.0..=1.0).contains(&p1));
            prop_assert!(p2 <= p1 + 1e-15);
        }
    }
}
