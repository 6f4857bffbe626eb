use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_two_sided: f64,
    pub df: usize,
    pub mean_diff: f64,
}

/// Paired two-sided Student's t-test on `a - b`.
///
/// Zero-variance differences give `p = 1` when the mean difference is zero
/// and `p = 0` otherwise (with `t` = 0 or +-inf respectively).
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let df = n - 1;
    // Differences that are constant up to rounding count as zero variance.
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if var.sqrt() <= 1e-12 * scale || scale == 0.0 {
        return Ok(if mean.abs() <= 1e-12 * scale || scale == 0.0 {
            TTest { t: 0.0, p_two_sided: 1.0, df, mean_diff: 0.0 }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p_two_sided: 0.0,
                df,
                mean_diff: mean,
            }
        });
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest {
        t,
        p_two_sided: p,
        df,
        mean_diff: mean,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Two-sided tail by Simpson quadrature of the t density, independent of statrs.
    fn quadrature_p(t: f64, df: f64) -> f64 {
        let ln_gamma = |x: f64| statrs_free_ln_gamma(x);
        let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
        let pdf = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        let n = 200_000;
        let h = t.abs() / n as f64;
        let mut s = pdf(0.0) + pdf(t.abs());
        for i in 1..n {
            s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let central = s * h / 3.0;
        1.0 - 2.0 * central
    }

    /// Lanczos approximation (g=7, n=9).
    fn statrs_free_ln_gamma(x: f64) -> f64 {
        const G: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = G[0];
        let t = x + 7.5;
        for (i, g) in G.iter().enumerate().skip(1) {
            a += g / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    #[test]
    fn worked_example_against_quadrature() {
        let r = paired_ttest(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]).unwrap();
        assert!((r.t - 3.872_983_346).abs() < 1e-6, "t = {}", r.t);
        assert_eq!(r.df, 3);
        let oracle = quadrature_p(r.t, 3.0);
        assert!((r.p_two_sided - oracle).abs() < 1e-8, "{} vs {oracle}", r.p_two_sided);
        assert!((r.p_two_sided - 0.0305).abs() < 1e-3);
    }

    #[test]
    fn zero_variance_rules() {
        let a = [0.3, 0.5, 0.7];
        let r = paired_ttest(&a, &a).unwrap();
        assert_eq!((r.t, r.p_two_sided), (0.0, 1.0));
        let b = [0.2, 0.4, 0.6];
        let r = paired_ttest(&a, &b).unwrap();
        assert_eq!(r.p_two_sided, 0.0);
        assert!(r.t.is_infinite() && r.t > 0.0);
    }

    #[test]
    fn too_few_observations() {
        assert!(matches!(paired_ttest(&[1.0], &[0.0]), Err(Error::TooFewObservations { .. })));
    }

    #[test]
    fn matches_quadrature_for_other_df() {
        for (t, df) in [(0.5, 1.0), (2.1, 9.0), (1.3, 30.0)] {
            let n = df as usize + 1;
            // Construct differences with the requested t: mean m, sd s.
            let mut d = vec![0.0; n];
            d[0] = 1.0;
            d[1] = -1.0;
            let sd = (2.0 / (n as f64 - 1.0)).sqrt();
            let shift = t * sd / (n as f64).sqrt();
            let a: Vec<f64> = d.iter().map(|x| x + shift).collect();
            let r = paired_ttest(&a, &vec![0.0; n]).unwrap();
            assert!((r.t - t).abs() < 1e-9);
            assert!((r.p_two_sided - quadrature_p(t, df)).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn antisymmetric(a in proptest::collection::vec(0.0f64..1.0, 3..20), seed in 0u64..1000) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| (x * 7.3 + (i as f64 + seed as f64) * 0.37).fract()).collect();
            let ab = paired_ttest(&a, &b).unwrap();
            let ba = paired_ttest(&b, &a).unwrap();
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p_two_sided, ba.p_two_sided);
        }
    }
}
