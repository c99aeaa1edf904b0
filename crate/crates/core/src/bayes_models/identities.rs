//! Closed-form links between the population, sample, and non-sample
//! distributions of a binary response under informative selection.

use crate::error::{Error, Result};

/// Sampled-unit success probability implied by a population probability and
/// class-specific inclusion probabilities:
/// p_s = pi1 p / (pi1 p + pi0 (1 - p)).
pub fn sample_distribution_bernoulli(p: f64, pi1: f64, pi0: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Data(format!("probability {p} outside [0, 1]")));
    }
    if pi1 <= 0.0 || pi0 <= 0.0 || pi1 > 1.0 || pi0 > 1.0 {
        return Err(Error::Data(
            "inclusion probabilities must lie in (0, 1]".to_string(),
        ));
    }
    Ok(pi1 * p / (pi1 * p + pi0 * (1.0 - p)))
}

/// Invert the sample distribution of a binary response using the
/// class-conditional expected weights E_s(w | y):
///
/// population: p = E(w|1) p_s / (E(w|1) p_s + E(w|0) (1 - p_s));
/// non-sampled complement: replace E(w|y) with E(w|y) - 1.
///
/// Returns (population, complement). Errs for a census (both expected
/// weights equal to one), where no complement exists.
pub fn sample_to_population_bernoulli(p_s: f64, ew1: f64, ew0: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p_s) {
        return Err(Error::Data(format!("probability {p_s} outside [0, 1]")));
    }
    if ew1 < 1.0 || ew0 < 1.0 {
        return Err(Error::Data(
            "expected weights must be at least one".to_string(),
        ));
    }
    let p_pop = ew1 * p_s / (ew1 * p_s + ew0 * (1.0 - p_s));
    let num = (ew1 - 1.0) * p_s;
    let den = num + (ew0 - 1.0) * (1.0 - p_s);
    if den == 0.0 {
        return Err(Error::Data(
            "census: expected weights are one in both classes, no non-sampled units".to_string(),
        ));
    }
    Ok((p_pop, num / den))
}

/// Exponential model for the conditional expectation of the survey weight:
/// E_s(w | x, y) = exp(x'alpha + a y + sigma2_eps / 2) when log w is normal
/// given (x, y). Clamped below at one, since a weight is never smaller.
pub fn expected_weight_exponential(x_dot_alpha: f64, a: f64, y: f64, sigma2_eps: f64) -> f64 {
    (x_dot_alpha + a * y + 0.5 * sigma2_eps).exp().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn sample_distribution_hand_case() {
        // p = 0.3, pi1 = 0.1, pi0 = 0.05: 0.03 / 0.065
        let p_s = sample_distribution_bernoulli(0.3, 0.1, 0.05).unwrap();
        assert!((p_s - 0.03 / 0.065).abs() < 1e-15);
        // equal inclusion probabilities leave the distribution unchanged
        let same = sample_distribution_bernoulli(0.3, 0.2, 0.2).unwrap();
        assert!((same - 0.3).abs() < 1e-15);
        assert!(sample_distribution_bernoulli(1.2, 0.1, 0.1).is_err());
        assert!(sample_distribution_bernoulli(0.5, 0.0, 0.1).is_err());
    }

    #[test]
    fn round_trip_through_expected_weights() {
        // with w = 1/pi, E_s(w | y) = 1/pi_y, so the inversion recovers p
        let p = 0.3;
        let (pi1, pi0) = (0.1, 0.05);
        let p_s = sample_distribution_bernoulli(p, pi1, pi0).unwrap();
        let (p_pop, _) = sample_to_population_bernoulli(p_s, 1.0 / pi1, 1.0 / pi0).unwrap();
        assert!((p_pop - p).abs() < 1e-12);
    }

    #[test]
    fn census_has_no_complement() {
        assert!(sample_to_population_bernoulli(0.4, 1.0, 1.0).is_err());
        assert!(sample_to_population_bernoulli(0.4, 0.9, 2.0).is_err());
    }

    #[test]
    fn identities_match_monte_carlo_selection() {
        // Poisson-sampled population: check the sampled and non-sampled
        // proportions against the closed forms within Monte Carlo error.
        let n_pop = 200_000usize;
        let p = 0.3;
        let (pi1, pi0) = (0.1, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut s1, mut s) = (0usize, 0usize);
        let (mut c1, mut c) = (0usize, 0usize);
        for _ in 0..n_pop {
            let y = rng.gen::<f64>() < p;
            let pi = if y { pi1 } else { pi0 };
            if rng.gen::<f64>() < pi {
                s += 1;
                s1 += usize::from(y);
            } else {
                c += 1;
                c1 += usize::from(y);
            }
        }
        let p_s_hat = s1 as f64 / s as f64;
        let p_c_hat = c1 as f64 / c as f64;
        let p_s = sample_distribution_bernoulli(p, pi1, pi0).unwrap();
        let (_, p_c) = sample_to_population_bernoulli(p_s, 1.0 / pi1, 1.0 / pi0).unwrap();
        let se_s = (p_s * (1.0 - p_s) / s as f64).sqrt();
        let se_c = (p_c * (1.0 - p_c) / c as f64).sqrt();
        assert!((p_s_hat - p_s).abs() < 3.0 * se_s, "{p_s_hat} vs {p_s}");
        assert!((p_c_hat - p_c).abs() < 3.0 * se_c, "{p_c_hat} vs {p_c}");
    }

    #[test]
    fn lognormal_weight_mean_matches_simulation() {
        let (xa, a, s2) = (0.8, 0.5, 0.3);
        let expect = expected_weight_exponential(xa, a, 1.0, s2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, s2.sqrt()).unwrap();
        let n = 400_000;
        let mean: f64 = (0..n)
            .map(|_| (xa + a + noise.sample(&mut rng)).exp())
            .sum::<f64>()
            / n as f64;
        assert!((mean - expect).abs() / expect < 0.01, "{mean} vs {expect}");
        // clamp: tiny linear predictor cannot push the mean below one
        assert_eq!(expected_weight_exponential(-5.0, 0.0, 0.0, 0.1), 1.0);
    }
}
