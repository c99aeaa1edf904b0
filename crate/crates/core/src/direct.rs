//! Design-based direct estimators and design-effect quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-area direct estimate with its standard error and a truncated normal
/// confidence interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaEstimate {
    pub area_id: usize,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub n: usize,
    pub n_eff: Option<f64>,
}

impl AreaEstimate {
    fn missing(area_id: usize) -> Self {
        AreaEstimate {
            area_id,
            estimate: None,
            se: None,
            ci_lower: None,
            ci_upper: None,
            n: 0,
            n_eff: None,
        }
    }

    /// Fill the 95% interval from estimate and se, truncated to [0, 1].
    pub fn with_interval(mut self) -> Self {
        if let (Some(e), Some(se)) = (self.estimate, self.se) {
            self.ci_lower = Some((e - 1.96 * se).max(0.0));
            self.ci_upper = Some((e + 1.96 * se).min(1.0));
        }
        self
    }
}

fn check_lengths(y: &[f64], w: Option<&[f64]>, area_ids: &[usize]) -> Result<usize> {
    if y.len() != area_ids.len() || w.map(|w| w.len() != y.len()).unwrap_or(false) {
        return Err(Error::Data(
            "y, weights, and area_ids must have equal length".to_string(),
        ));
    }
    if let Some(w) = w {
        if w.iter().any(|wi| !(wi > &0.0)) {
            return Err(Error::Data("weights must be positive".to_string()));
        }
    }
    Ok(area_ids.iter().max().map(|m| m + 1).unwrap_or(0))
}

/// Survey-weighted (Hajek) mean per area: sum(w y) / sum(w) over the area's
/// sampled units. Areas with no sampled units come back as None.
pub fn hajek_mean(y: &[f64], w: &[f64], area_ids: &[usize], m: usize) -> Result<Vec<Option<f64>>> {
    let seen = check_lengths(y, Some(w), area_ids)?;
    if seen > m {
        return Err(Error::Data(format!("area id >= m = {m}")));
    }
    let mut num = vec![0.0; m];
    let mut den = vec![0.0; m];
    for ((yi, wi), &a) in y.iter().zip(w).zip(area_ids) {
        num[a] += wi * yi;
        den[a] += wi;
    }
    Ok((0..m)
        .map(|a| (den[a] > 0.0).then(|| num[a] / den[a]))
        .collect())
}

/// Arithmetic mean per area; None where the area is unsampled.
pub fn unweighted_mean(y: &[f64], area_ids: &[usize], m: usize) -> Result<Vec<Option<f64>>> {
    let ones = vec![1.0; y.len()];
    hajek_mean(y, &ones, area_ids, m)
}

/// Variance of the Hajek mean per area: weighted linearization variance with
/// a finite population correction. Areas with fewer than two sampled units
/// are reported missing.
pub fn direct_variance(
    y: &[f64],
    w: &[f64],
    area_ids: &[usize],
    pop_sizes: &[usize],
) -> Result<Vec<Option<f64>>> {
    let m = pop_sizes.len();
    let means = hajek_mean(y, w, area_ids, m)?;
    let mut sum_w = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (&wi, &a) in w.iter().zip(area_ids) {
        sum_w[a] += wi;
        counts[a] += 1;
    }
    // residual-based variance of a ratio estimator:
    //   var = fpc * n/(n-1) * sum( (w_j (y_j - ybar) / sum_w)^2 )
    let mut acc = vec![0.0; m];
    for ((yi, wi), &a) in y.iter().zip(w).zip(area_ids) {
        if let Some(mu) = means[a] {
            let d = wi * (yi - mu) / sum_w[a];
            acc[a] += d * d;
        }
    }
    Ok((0..m)
        .map(|a| {
            if counts[a] < 2 {
                return None;
            }
            let n_a = counts[a] as f64;
            let fpc = 1.0 - n_a / pop_sizes[a] as f64;
            Some(fpc.max(0.0) * n_a / (n_a - 1.0) * acc[a])
        })
        .collect())
}

/// Kish quantities per area: effective sample size n' = (sum w)^2 / sum w^2,
/// design effect d = n / n', and effective cases y* = n' * p_hat.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KishQuantities {
    pub area_id: usize,
    pub n: usize,
    pub n_eff: f64,
    pub design_effect: f64,
    pub effective_cases: f64,
}

pub fn design_effect_and_kish(
    y: &[f64],
    w: &[f64],
    area_ids: &[usize],
    m: usize,
) -> Result<Vec<Option<KishQuantities>>> {
    let means = hajek_mean(y, w, area_ids, m)?;
    let mut sum_w = vec![0.0; m];
    let mut sum_w2 = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (&wi, &a) in w.iter().zip(area_ids) {
        sum_w[a] += wi;
        sum_w2[a] += wi * wi;
        counts[a] += 1;
    }
    Ok((0..m)
        .map(|a| {
            let p = means[a]?;
            let n_eff = sum_w[a] * sum_w[a] / sum_w2[a];
            Some(KishQuantities {
                area_id: a,
                n: counts[a],
                n_eff,
                design_effect: counts[a] as f64 / n_eff,
                effective_cases: n_eff * p,
            })
        })
        .collect())
}

/// Full direct-estimate table: Hajek mean, linearized se, truncated CI.
pub fn direct_estimates(
    y: &[f64],
    w: &[f64],
    area_ids: &[usize],
    pop_sizes: &[usize],
) -> Result<Vec<AreaEstimate>> {
    let m = pop_sizes.len();
    let means = hajek_mean(y, w, area_ids, m)?;
    let vars = direct_variance(y, w, area_ids, pop_sizes)?;
    let kish = design_effect_and_kish(y, w, area_ids, m)?;
    let mut counts = vec![0usize; m];
    for &a in area_ids {
        counts[a] += 1;
    }
    Ok((0..m)
        .map(|a| {
            let mut est = AreaEstimate::missing(a);
            est.n = counts[a];
            est.estimate = means[a];
            est.se = vars[a].map(|v| v.sqrt());
            est.n_eff = kish[a].as_ref().map(|k| k.n_eff);
            est.with_interval()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hajek_hand_example() {
        let est = hajek_mean(&[0.0, 1.0, 1.0], &[1.0, 2.0, 1.0], &[0, 0, 0], 1).unwrap();
        assert!((est[0].unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn hajek_scale_invariant_and_bounded() {
        let y = vec![0.0, 1.0, 0.0, 1.0, 1.0];
        let w = vec![3.0, 1.0, 2.0, 5.0, 0.5];
        let a = vec![0, 0, 0, 1, 1];
        let e1 = hajek_mean(&y, &w, &a, 2).unwrap();
        let w10: Vec<f64> = w.iter().map(|x| 10.0 * x).collect();
        let e2 = hajek_mean(&y, &w10, &a, 2).unwrap();
        for (x, z) in e1.iter().zip(&e2) {
            assert!((x.unwrap() - z.unwrap()).abs() < 1e-14);
            let v = x.unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
        // equal weights reduce to the sample mean
        let eq = hajek_mean(&y, &[2.0; 5], &a, 2).unwrap();
        assert!((eq[0].unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!((eq[1].unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn missing_area_is_none_not_zero() {
        let est = hajek_mean(&[1.0], &[2.0], &[0], 3).unwrap();
        assert!(est[0].is_some());
        assert!(est[1].is_none() && est[2].is_none());
        let um = unweighted_mean(&[1.0], &[0], 2).unwrap();
        assert_eq!(um[1], None);
    }

    #[test]
    fn variance_constant_y_is_zero_and_srs_reduces() {
        let v = direct_variance(&[1.0; 4], &[2.0; 4], &[0; 4], &[100]).unwrap();
        assert!(v[0].unwrap().abs() < 1e-18);

        // equal weights: (1 - n/N) s^2 / n
        let y = vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let n = y.len() as f64;
        let v = direct_variance(&y, &[7.0; 6], &[0; 6], &[60]).unwrap()[0].unwrap();
        let mean = y.iter().sum::<f64>() / n;
        let s2 = y.iter().map(|yi| (yi - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = (1.0 - n / 60.0) * s2 / n;
        assert!((v - expect).abs() < 1e-14, "{v} vs {expect}");
    }

    #[test]
    fn variance_single_unit_missing() {
        let v = direct_variance(&[1.0], &[1.0], &[0], &[10]).unwrap();
        assert!(v[0].is_none());
    }

    #[test]
    fn variance_matches_bootstrap_on_srs() {
        // one area, SRS of n = 500 from N = 5000
        let n_pop = 5000;
        let n = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pop: Vec<f64> = (0..n_pop)
            .map(|_| f64::from(rng.gen::<f64>() < 0.3))
            .collect();
        let mut ids: Vec<usize> = (0..n_pop).collect();
        ids.shuffle(&mut rng);
        let y: Vec<f64> = ids[..n].iter().map(|&i| pop[i]).collect();
        let w = vec![n_pop as f64 / n as f64; n];
        let a = vec![0usize; n];
        let v_est = direct_variance(&y, &w, &a, &[n_pop]).unwrap()[0].unwrap();

        // with-replacement bootstrap of the mean, then apply the same fpc
        let mut boot = Vec::with_capacity(2000);
        for _ in 0..2000 {
            let mean: f64 = (0..n).map(|_| y[rng.gen_range(0..n)]).sum::<f64>() / n as f64;
            boot.push(mean);
        }
        let bm = boot.iter().sum::<f64>() / boot.len() as f64;
        let bv = boot.iter().map(|b| (b - bm).powi(2)).sum::<f64>() / (boot.len() - 1) as f64;
        let bv = bv * (1.0 - n as f64 / n_pop as f64);
        assert!(
            (v_est - bv).abs() < 0.15 * bv,
            "estimate {v_est} vs bootstrap {bv}"
        );
    }

    #[test]
    fn kish_quantities() {
        let y = vec![1.0, 0.0, 1.0];
        let w = vec![1.0, 1.0, 2.0];
        let k = design_effect_and_kish(&y, &w, &[0, 0, 0], 1).unwrap();
        let k = k[0].as_ref().unwrap();
        assert!((k.n_eff - 16.0 / 6.0).abs() < 1e-12);
        assert!(k.effective_cases <= k.n_eff);
        // equal weights: n_eff = n, design effect 1
        let k = design_effect_and_kish(&y, &[3.0; 3], &[0, 0, 0], 1).unwrap();
        let k = k[0].as_ref().unwrap();
        assert!((k.n_eff - 3.0).abs() < 1e-12);
        assert!((k.design_effect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interval_truncated_to_unit_range() {
        let est = AreaEstimate {
            area_id: 0,
            estimate: Some(0.97),
            se: Some(0.05),
            ci_lower: None,
            ci_upper: None,
            n: 10,
            n_eff: Some(9.0),
        }
        .with_interval();
        assert_eq!(est.ci_upper, Some(1.0));
        assert!(est.ci_lower.unwrap() > 0.0);
    }
}
