//! Convergence diagnostics: split-R-hat and effective sample size on
//! rank-normalized draws.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::inference::hmc::PosteriorDraws;

#[derive(Debug, Clone)]
pub struct ParamDiagnostics {
    pub name: String,
    pub rhat: Option<f64>,
    pub ess: f64,
}

/// Per-parameter R-hat and ESS. R-hat is unavailable with a single chain.
pub fn diagnostics(draws: &PosteriorDraws) -> Vec<ParamDiagnostics> {
    (0..draws.dim)
        .map(|j| {
            let chains = draws.column_chains(j);
            ParamDiagnostics {
                name: draws.names[j].clone(),
                rhat: rhat(&chains),
                ess: ess(&chains),
            }
        })
        .collect()
}

/// Split, rank-normalized R-hat, clamped at 1. None with fewer than 2 chains.
pub fn rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return None;
    }
    let split = split_chains(chains);
    let z = rank_normalize(&split);
    Some(rhat_basic(&z).max(1.0))
}

/// Bulk effective sample size over all chains (rank-normalized, split,
/// Geyer initial monotone sequence).
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let split = split_chains(chains);
    let z = rank_normalize(&split);
    let n = z[0].len();
    if n < 4 {
        return total as f64;
    }
    let m = z.len() as f64;

    let chain_means: Vec<f64> = z.iter().map(|c| mean(c)).collect();
    let chain_vars: Vec<f64> = z.iter().map(|c| variance(c)).collect();
    let w = mean(&chain_vars);
    if w <= 0.0 {
        return total as f64;
    }
    let b = if z.len() > 1 {
        n as f64 * variance(&chain_means)
    } else {
        0.0
    };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;

    // combined autocorrelations
    let max_lag = n - 1;
    let mut rho = Vec::with_capacity(max_lag);
    for t in 1..max_lag {
        let s_t: f64 = z.iter().map(|c| autocovariance(c, t)).sum::<f64>() / m;
        rho.push(1.0 - (w - s_t) / var_plus);
    }

    // Geyer pairs
    let mut tau = 1.0;
    let mut k = 0;
    let mut prev_pair = f64::INFINITY;
    while 2 * k + 1 < rho.len() {
        let pair = rho[2 * k] + rho[2 * k + 1];
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
        k += 1;
    }
    (total as f64 / tau).min(total as f64 * (total as f64).log10().max(1.0))
}

fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let chain_vars: Vec<f64> = chains.iter().map(|c| variance(c)).collect();
    let w = mean(&chain_vars);
    let b = n * variance(&chain_means);
    if w <= 0.0 {
        return 1.0;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[half..half * 2].to_vec());
    }
    out
}

/// Pooled average ranks mapped through the normal quantile function.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    // (value, flat index) over the pooled draws
    let mut pooled: Vec<(f64, usize)> = Vec::with_capacity(total);
    for (flat, v) in chains.iter().flatten().enumerate() {
        pooled.push((*v, flat));
    }
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for item in &pooled[i..=j] {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let s = total as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut flat = 0;
    for (ci, c) in chains.iter().enumerate() {
        for k in 0..c.len() {
            out[ci][k] = normal.inverse_cdf((ranks[flat] - 0.375) / (s + 0.25));
            flat += 1;
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Biased (1/n) autocovariance at lag t.
fn autocovariance(v: &[f64], t: usize) -> f64 {
    let n = v.len();
    let m = mean(v);
    (0..n - t).map(|i| (v[i] - m) * (v[i + t] - m)).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_chains_give_rhat_one() {
        let c: Vec<f64> = (0..200).map(|i| (i as f64 * 0.7).sin()).collect();
        let r = rhat(&[c.clone(), c]).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn shifted_chains_give_large_rhat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..500)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + 5.0
            })
            .collect();
        let b: Vec<f64> = (0..500)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z - 5.0
            })
            .collect();
        let r = rhat(&[a, b]).unwrap();
        assert!(r > 1.5, "rhat = {r}");
    }

    #[test]
    fn iid_draws_have_ess_near_draw_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..1000).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let e = ess(&chains);
        let total = 2000.0;
        assert!(
            (e - total).abs() < 0.2 * total,
            "ess = {e}, expected near {total}"
        );
    }

    #[test]
    fn single_chain_has_no_rhat() {
        let c: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!(rhat(&[c]).is_none());
    }
}
