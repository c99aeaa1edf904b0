//! Classical small-area predictors: nested error regression BLUP/EBLUP,
//! survey-weighted pseudo-EBLUP, the Guadarrama conditional predictor, the
//! Pfeffermann-Sverchkov bias-corrected mean, the Malec adjusted likelihood,
//! and a Bayesian pseudo-empirical likelihood for the overall mean.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Data("empty design matrix".to_string()));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Data("ragged design matrix".to_string()));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        p,
        rows.iter().flatten().copied(),
    ))
}

/// Indices of columns that are (numerically) linear combinations of earlier
/// ones, by greedy Gram-Schmidt.
fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..x.ncols() {
        let mut col = x.column(j).into_owned();
        let scale = col.norm().max(1.0);
        for b in &basis {
            let proj = b.dot(&col);
            col -= b * proj;
        }
        if col.norm() < 1e-8 * scale {
            bad.push(j);
        } else {
            let norm = col.norm();
            basis.push(col / norm);
        }
    }
    bad
}

/// Nested error regression fit: variance components by fitting-of-constants
/// moments, regression coefficients by GLS given those components.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NerFit {
    pub beta: Vec<f64>,
    pub sigma2_v: f64,
    pub sigma2_e: f64,
    /// Shrinkage gamma_i = sigma2_v / (sigma2_v + sigma2_e / n_i) per area.
    pub gamma: Vec<f64>,
    /// Predicted area effects gamma_i * (ybar_i - xbar_i' beta).
    pub vtilde: Vec<f64>,
    pub area_counts: Vec<usize>,
    /// True when the moment estimate of sigma2_v was negative and clipped.
    pub variance_truncated: bool,
}

/// GLS coefficients and predicted area effects for known variance
/// components, using the block structure of V_i = sigma2_e I + sigma2_v J.
pub fn ner_gls(
    y: &[f64],
    x_rows: &[Vec<f64>],
    area_ids: &[usize],
    m: usize,
    sigma2_v: f64,
    sigma2_e: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let x = rows_to_matrix(x_rows)?;
    let n = y.len();
    let p = x.ncols();
    if n != area_ids.len() || x.nrows() != n {
        return Err(Error::Data("misaligned inputs".to_string()));
    }
    let mut counts = vec![0usize; m];
    let mut sum_y = vec![0.0; m];
    let mut sum_x = vec![DVector::<f64>::zeros(p); m];
    for k in 0..n {
        let a = area_ids[k];
        counts[a] += 1;
        sum_y[a] += y[k];
        sum_x[a] += x.row(k).transpose();
    }
    let gamma: Vec<f64> = counts
        .iter()
        .map(|&n_i| {
            if n_i == 0 {
                0.0
            } else {
                sigma2_v / (sigma2_v + sigma2_e / n_i as f64)
            }
        })
        .collect();

    // X' V^{-1} X and X' V^{-1} y with V_i^{-1} = (I - gamma_i J / n_i) / sigma2_e
    let mut a_mat = DMatrix::<f64>::zeros(p, p);
    let mut b_vec = DVector::<f64>::zeros(p);
    for k in 0..n {
        let xi = x.row(k).transpose();
        a_mat += &xi * x.row(k);
        b_vec += &xi * y[k];
    }
    for i in 0..m {
        if counts[i] == 0 {
            continue;
        }
        let n_i = counts[i] as f64;
        let xbar = &sum_x[i] / n_i;
        a_mat -= (&xbar * xbar.transpose()) * (gamma[i] * n_i);
        b_vec -= &xbar * (gamma[i] * sum_y[i]);
    }
    let beta = a_mat
        .lu()
        .solve(&b_vec)
        .ok_or_else(|| Error::Numerical("singular GLS system".to_string()))?;
    let vtilde: Vec<f64> = (0..m)
        .map(|i| {
            if counts[i] == 0 {
                return 0.0;
            }
            let n_i = counts[i] as f64;
            let ybar = sum_y[i] / n_i;
            let xbar = &sum_x[i] / n_i;
            gamma[i] * (ybar - xbar.dot(&beta))
        })
        .collect();
    Ok((beta.iter().copied().collect(), gamma, vtilde))
}

/// Fit the nested error regression model: sigma2_e from the within-area
/// (fixed-effects) regression, sigma2_v from the OLS residual moment
/// equation, then GLS for beta.
pub fn fit_ner(y: &[f64], x_rows: &[Vec<f64>], area_ids: &[usize], m: usize) -> Result<NerFit> {
    let x = rows_to_matrix(x_rows)?;
    let n = y.len();
    let p = x.ncols();
    if n != area_ids.len() || x.nrows() != n {
        return Err(Error::Data("misaligned inputs".to_string()));
    }
    let bad = collinear_columns(&x);
    if !bad.is_empty() {
        return Err(Error::Data(format!(
            "design matrix is rank deficient; collinear columns: {bad:?}"
        )));
    }
    let mut counts = vec![0usize; m];
    let mut sum_y = vec![0.0; m];
    let mut sum_x = vec![DVector::<f64>::zeros(p); m];
    for k in 0..n {
        let a = area_ids[k];
        counts[a] += 1;
        sum_y[a] += y[k];
        sum_x[a] += x.row(k).transpose();
    }

    // within-area demeaned regression for sigma2_e
    let mut xd = x.clone();
    let mut yd = DVector::from_column_slice(y);
    for k in 0..n {
        let a = area_ids[k];
        let n_a = counts[a] as f64;
        yd[k] -= sum_y[a] / n_a;
        for j in 0..p {
            xd[(k, j)] -= sum_x[a][j] / n_a;
        }
    }
    let svd = xd.clone().svd(true, true);
    let tol = 1e-10 * svd.singular_values.max();
    let rank_d = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let beta_within = svd
        .solve(&yd, tol)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let resid_within = &yd - &xd * &beta_within;
    let sse_within: f64 = resid_within.norm_squared();
    let df_within = n as isize - m as isize - rank_d as isize;
    if df_within <= 0 {
        return Err(Error::Data(
            "not enough within-area replication to estimate sigma2_e".to_string(),
        ));
    }
    let sigma2_e = sse_within / df_within as f64;

    // OLS residual moment for sigma2_v
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * DVector::from_column_slice(y);
    let xtx_inv = xtx
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular X'X".to_string()))?;
    let beta_ols = &xtx_inv * &xty;
    let resid_ols = DVector::from_column_slice(y) - &x * &beta_ols;
    let sse_ols = resid_ols.norm_squared();
    let mut middle = DMatrix::<f64>::zeros(p, p);
    for i in 0..m {
        if counts[i] == 0 {
            continue;
        }
        let n_i = counts[i] as f64;
        let xbar = &sum_x[i] / n_i;
        middle += (&xbar * xbar.transpose()) * (n_i * n_i);
    }
    let n_star = n as f64 - (&xtx_inv * middle).trace();
    let raw_sigma2_v = (sse_ols - (n as f64 - p as f64) * sigma2_e) / n_star;
    let variance_truncated = raw_sigma2_v < 0.0;
    let sigma2_v = raw_sigma2_v.max(0.0);

    let (beta, gamma, vtilde) = ner_gls(y, x_rows, area_ids, m, sigma2_v, sigma2_e)?;
    Ok(NerFit {
        beta,
        sigma2_v,
        sigma2_e,
        gamma,
        vtilde,
        area_counts: counts,
        variance_truncated,
    })
}

/// BLUP of the area means: observed units kept, nonsampled units predicted by
/// x' beta + vtilde_i. `xbar_pop` holds the population covariate means per
/// area.
pub fn blup_area_means(
    fit: &NerFit,
    y: &[f64],
    x_rows: &[Vec<f64>],
    area_ids: &[usize],
    xbar_pop: &[Vec<f64>],
    pop_sizes: &[usize],
) -> Result<Vec<f64>> {
    let m = pop_sizes.len();
    if xbar_pop.len() != m {
        return Err(Error::Data(
            "missing population covariate means".to_string(),
        ));
    }
    let p = fit.beta.len();
    if xbar_pop.iter().any(|r| r.len() != p) {
        return Err(Error::Data(
            "population mean dimension mismatch".to_string(),
        ));
    }
    let mut sum_y = vec![0.0; m];
    let mut sum_x = vec![vec![0.0; p]; m];
    let mut counts = vec![0usize; m];
    for ((yk, xk), &a) in y.iter().zip(x_rows).zip(area_ids) {
        sum_y[a] += yk;
        for j in 0..p {
            sum_x[a][j] += xk[j];
        }
        counts[a] += 1;
    }
    Ok((0..m)
        .map(|i| {
            let n_i = counts[i] as f64;
            let cap_n = pop_sizes[i] as f64;
            // sum over nonsampled of x' beta = (N Xbar - sum_sampled x)' beta
            let mut nonsampled_xb = 0.0;
            for j in 0..p {
                nonsampled_xb += (cap_n * xbar_pop[i][j] - sum_x[i][j]) * fit.beta[j];
            }
            (sum_y[i] + nonsampled_xb + (cap_n - n_i) * fit.vtilde[i]) / cap_n
        })
        .collect())
}

/// Survey-weighted pseudo-EBLUP fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoEblupFit {
    pub beta_w: Vec<f64>,
    pub sigma2_v: f64,
    pub sigma2_e: f64,
    /// gamma_iw = sigma2_v / (sigma2_v + sigma2_e * delta2_i).
    pub gamma_iw: Vec<f64>,
    /// delta2_i = sum of squared within-area-normalized weights.
    pub delta2: Vec<f64>,
    pub ybar_w: Vec<f64>,
    pub xbar_w: Vec<Vec<f64>>,
    pub sum_w: Vec<f64>,
}

/// Solve the survey-weighted estimating equations
/// sum_ij w x (y - x'b - gamma_iw (ybar_iw - xbar_iw' b)) = 0 for b.
/// gamma_iw depends only on the variance components and the weights, so the
/// system is linear.
pub fn fit_pseudo_eblup(
    y: &[f64],
    x_rows: &[Vec<f64>],
    w: &[f64],
    area_ids: &[usize],
    m: usize,
    sigma2_v: f64,
    sigma2_e: f64,
) -> Result<PseudoEblupFit> {
    let x = rows_to_matrix(x_rows)?;
    let n = y.len();
    let p = x.ncols();
    if n != area_ids.len() || n != w.len() || x.nrows() != n {
        return Err(Error::Data("misaligned inputs".to_string()));
    }
    if w.iter().any(|wi| !(wi > &0.0)) {
        return Err(Error::Data("weights must be positive".to_string()));
    }
    let mut sum_w = vec![0.0; m];
    let mut sum_wy = vec![0.0; m];
    let mut sum_wx = vec![DVector::<f64>::zeros(p); m];
    for k in 0..n {
        let a = area_ids[k];
        sum_w[a] += w[k];
        sum_wy[a] += w[k] * y[k];
        sum_wx[a] += x.row(k).transpose() * w[k];
    }
    let mut delta2 = vec![0.0; m];
    for k in 0..n {
        let a = area_ids[k];
        let wt = w[k] / sum_w[a];
        delta2[a] += wt * wt;
    }
    let gamma_iw: Vec<f64> = delta2
        .iter()
        .zip(&sum_w)
        .map(|(&d2, &sw)| {
            if sw == 0.0 {
                0.0
            } else {
                sigma2_v / (sigma2_v + sigma2_e * d2)
            }
        })
        .collect();

    let mut a_mat = DMatrix::<f64>::zeros(p, p);
    let mut b_vec = DVector::<f64>::zeros(p);
    for k in 0..n {
        let xi = x.row(k).transpose();
        a_mat += &xi * x.row(k) * w[k];
        b_vec += &xi * (w[k] * y[k]);
    }
    for i in 0..m {
        if sum_w[i] == 0.0 {
            continue;
        }
        let xbar_w = &sum_wx[i] / sum_w[i];
        let ybar_w = sum_wy[i] / sum_w[i];
        // sum_j w x = sum_w * xbar_w
        a_mat -= (&sum_wx[i] * xbar_w.transpose()) * gamma_iw[i];
        b_vec -= &sum_wx[i] * (gamma_iw[i] * ybar_w);
    }
    let beta = a_mat
        .lu()
        .solve(&b_vec)
        .ok_or_else(|| Error::Numerical("singular pseudo-EBLUP system".to_string()))?;
    let ybar_w: Vec<f64> = (0..m)
        .map(|i| {
            if sum_w[i] > 0.0 {
                sum_wy[i] / sum_w[i]
            } else {
                0.0
            }
        })
        .collect();
    let xbar_w: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            if sum_w[i] > 0.0 {
                (&sum_wx[i] / sum_w[i]).iter().copied().collect()
            } else {
                vec![0.0; p]
            }
        })
        .collect();
    Ok(PseudoEblupFit {
        beta_w: beta.iter().copied().collect(),
        sigma2_v,
        sigma2_e,
        gamma_iw,
        delta2,
        ybar_w,
        xbar_w,
        sum_w,
    })
}

/// Pseudo-EBLUP of the area means:
/// theta_iw = gamma_iw ybar_iw + (Xbar_i - gamma_iw xbar_iw)' beta_w.
pub fn pseudo_eblup_means(fit: &PseudoEblupFit, xbar_pop: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = fit.gamma_iw.len();
    if xbar_pop.len() != m || xbar_pop.iter().any(|r| r.len() != fit.beta_w.len()) {
        return Err(Error::Data(
            "population mean dimension mismatch".to_string(),
        ));
    }
    Ok((0..m)
        .map(|i| {
            let g = fit.gamma_iw[i];
            let mut dot = 0.0;
            for j in 0..fit.beta_w.len() {
                dot += (xbar_pop[i][j] - g * fit.xbar_w[i][j]) * fit.beta_w[j];
            }
            g * fit.ybar_w[i] + dot
        })
        .collect())
}

/// Conditional predictor of an out-of-sample unit given only the area's
/// weighted mean: x' beta + gamma_iw (ybar_iw - xbar_iw' beta).
pub fn guadarrama_predict(
    beta: &[f64],
    gamma_iw: f64,
    x: &[f64],
    ybar_iw: f64,
    xbar_iw: &[f64],
) -> f64 {
    let xb: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
    let xbarb: f64 = xbar_iw.iter().zip(beta).map(|(a, b)| a * b).sum();
    xb + gamma_iw * (ybar_iw - xbarb)
}

/// Fit the exponential weight model by regressing log w on covariates and y;
/// returns (alpha for covariates, coefficient on y, residual variance).
pub fn fit_exp_weight_model(
    log_w: &[f64],
    x_rows: &[Vec<f64>],
    y: &[f64],
) -> Result<(Vec<f64>, f64, f64)> {
    let n = log_w.len();
    if x_rows.len() != n || y.len() != n {
        return Err(Error::Data("misaligned inputs".to_string()));
    }
    let p = x_rows[0].len();
    let rows: Vec<Vec<f64>> = x_rows
        .iter()
        .zip(y)
        .map(|(r, &yi)| {
            let mut v = r.clone();
            v.push(yi);
            v
        })
        .collect();
    let x = rows_to_matrix(&rows)?;
    let bad = collinear_columns(&x);
    if !bad.is_empty() {
        return Err(Error::Data(format!(
            "weight regression design is rank deficient; collinear columns: {bad:?}"
        )));
    }
    let lw = DVector::from_column_slice(log_w);
    let xtx = x.transpose() * &x;
    let coef = xtx
        .lu()
        .solve(&(x.transpose() * &lw))
        .ok_or_else(|| Error::Numerical("singular weight regression".to_string()))?;
    let resid = &lw - &x * &coef;
    let df = n as f64 - (p + 1) as f64;
    if df <= 0.0 {
        return Err(Error::Data(
            "too few rows for weight regression".to_string(),
        ));
    }
    let sigma2 = resid.norm_squared() / df;
    let alpha: Vec<f64> = coef.iter().take(p).copied().collect();
    Ok((alpha, coef[p], sigma2))
}

/// Bias-corrected predictor of the area mean under informative sampling:
/// N^{-1}[(N-n) theta_i + n {ybar_i + (Xbar_i - xbar_i)' beta} + (N-n) b sigma2_e]
/// with theta_i = vtilde_i + Xbar_i' beta.
pub fn pfeffermann_corrected_mean(
    fit: &NerFit,
    b: f64,
    y: &[f64],
    x_rows: &[Vec<f64>],
    area_ids: &[usize],
    xbar_pop: &[Vec<f64>],
    pop_sizes: &[usize],
) -> Result<Vec<f64>> {
    let m = pop_sizes.len();
    let p = fit.beta.len();
    if xbar_pop.len() != m {
        return Err(Error::Data(
            "missing population covariate means".to_string(),
        ));
    }
    let mut sum_y = vec![0.0; m];
    let mut sum_x = vec![vec![0.0; p]; m];
    let mut counts = vec![0usize; m];
    for ((yk, xk), &a) in y.iter().zip(x_rows).zip(area_ids) {
        sum_y[a] += yk;
        for j in 0..p {
            sum_x[a][j] += xk[j];
        }
        counts[a] += 1;
    }
    Ok((0..m)
        .map(|i| {
            let n_i = counts[i] as f64;
            let cap_n = pop_sizes[i] as f64;
            let xbar_pop_b: f64 = xbar_pop[i].iter().zip(&fit.beta).map(|(a, b)| a * b).sum();
            let theta = fit.vtilde[i] + xbar_pop_b;
            if counts[i] == 0 {
                return theta + b * fit.sigma2_e;
            }
            let ybar = sum_y[i] / n_i;
            let xbar_b: f64 = sum_x[i]
                .iter()
                .zip(&fit.beta)
                .map(|(a, bb)| a / n_i * bb)
                .sum();
            ((cap_n - n_i) * theta
                + n_i * (ybar + xbar_pop_b - xbar_b)
                + (cap_n - n_i) * b * fit.sigma2_e)
                / cap_n
        })
        .collect())
}

/// Sample-adjusted binomial log-likelihood:
/// sum_d [ m log p + (n-m) log(1-p) - n log(p/wbar1 + (1-p)/wbar0) ].
pub fn malec_adjusted_loglik(
    m_counts: &[f64],
    n_counts: &[f64],
    p: &[f64],
    wbar1: &[f64],
    wbar0: &[f64],
) -> Result<f64> {
    let d = m_counts.len();
    if [n_counts.len(), p.len(), wbar1.len(), wbar0.len()] != [d; 4] {
        return Err(Error::Data("misaligned inputs".to_string()));
    }
    let mut total = 0.0;
    for k in 0..d {
        let pk = p[k];
        if !(pk > 0.0 && pk < 1.0) {
            return Err(Error::Numerical(format!("probability out of (0,1): {pk}")));
        }
        total += m_counts[k] * pk.ln() + (n_counts[k] - m_counts[k]) * (1.0 - pk).ln()
            - n_counts[k] * (pk / wbar1[k] + (1.0 - pk) / wbar0[k]).ln();
    }
    Ok(total)
}

/// Group-averaged weights among cases (y = 1) and non-cases (y = 0), the
/// inputs of the adjusted likelihood.
pub fn malec_weight_means(y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let n1: f64 = y.iter().sum();
    let n0 = y.len() as f64 - n1;
    if n1 == 0.0 || n0 == 0.0 {
        return Err(Error::Data(
            "need both cases and non-cases to average weights".to_string(),
        ));
    }
    let w1: f64 = y.iter().zip(w).map(|(yi, wi)| yi * wi).sum::<f64>() / n1;
    let w0: f64 = y.iter().zip(w).map(|(yi, wi)| (1.0 - yi) * wi).sum::<f64>() / n0;
    Ok((w1, w0))
}

/// Posterior draws of theta = sum p_i y_i with (p_1..p_n) ~ Dirichlet(w + alpha).
/// Expects weights already scaled to sum to the sample size.
pub fn bayes_pseudo_empirical<R: Rng>(
    y: &[f64],
    w_scaled: &[f64],
    alpha: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if y.len() != w_scaled.len() || y.is_empty() {
        return Err(Error::Data("misaligned or empty inputs".to_string()));
    }
    let conc: Vec<f64> = w_scaled.iter().map(|w| w + alpha).collect();
    if conc.iter().any(|c| !(c > &0.0)) {
        return Err(Error::Data(
            "Dirichlet concentration must be positive".to_string(),
        ));
    }
    let gammas: Vec<Gamma<f64>> = conc
        .iter()
        .map(|&c| Gamma::new(c, 1.0).map_err(|e| Error::Numerical(e.to_string())))
        .collect::<Result<_>>()?;
    let mut draws = Vec::with_capacity(n_draws);
    let mut g = vec![0.0; y.len()];
    for _ in 0..n_draws {
        let mut total = 0.0;
        for (gi, dist) in g.iter_mut().zip(&gammas) {
            *gi = dist.sample(rng);
            total += *gi;
        }
        let theta: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum::<f64>() / total;
        draws.push(theta);
    }
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn simulate_ner(
        m: usize,
        n_i: usize,
        beta: &[f64],
        sigma2_v: f64,
        sigma2_e: f64,
        seed: u64,
    ) -> (Vec<f64>, Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut x_rows = Vec::new();
        let mut areas = Vec::new();
        for i in 0..m {
            let vi: f64 = {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * sigma2_v.sqrt()
            };
            for _ in 0..n_i {
                let x1: f64 = rng.gen_range(-1.0..1.0);
                let x = vec![1.0, x1];
                let mean: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + vi;
                let e: f64 = StandardNormal.sample(&mut rng);
                y.push(mean + e * sigma2_e.sqrt());
                x_rows.push(x);
                areas.push(i);
            }
        }
        (y, x_rows, areas)
    }

    #[test]
    fn degenerate_sigma_v_detected() {
        let (y, x, a) = simulate_ner(25, 200, &[0.5, 1.0], 0.0, 1.0, 4);
        let fit = fit_ner(&y, &x, &a, 25).unwrap();
        assert!(fit.sigma2_v <= 0.05, "sigma2_v = {}", fit.sigma2_v);
        assert!((fit.sigma2_e - 1.0).abs() < 0.1);
    }

    #[test]
    fn moments_recover_components_on_average() {
        let mut acc_v = 0.0;
        let mut acc_e = 0.0;
        let reps = 100;
        for r in 0..reps {
            let (y, x, a) = simulate_ner(40, 20, &[1.0, -0.5], 1.0, 4.0, 100 + r);
            let fit = fit_ner(&y, &x, &a, 40).unwrap();
            acc_v += fit.sigma2_v;
            acc_e += fit.sigma2_e;
        }
        let mean_v = acc_v / reps as f64;
        let mean_e = acc_e / reps as f64;
        assert!((mean_v - 1.0).abs() < 0.2, "sigma2_v avg {mean_v}");
        assert!((mean_e - 4.0).abs() < 0.8, "sigma2_e avg {mean_e}");
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let x = vec![
            vec![1.0, 2.0, 4.0],
            vec![1.0, 1.0, 2.0],
            vec![1.0, 3.0, 6.0],
            vec![1.0, 0.5, 1.0],
        ];
        let err = fit_ner(&y, &x, &[0, 0, 1, 1], 2).unwrap_err();
        assert!(err.to_string().contains("[2]"), "{err}");
    }

    /// Dense GLS oracle: build the full covariance and solve directly.
    fn dense_gls(
        y: &[f64],
        x_rows: &[Vec<f64>],
        area_ids: &[usize],
        m: usize,
        s2v: f64,
        s2e: f64,
    ) -> (DVector<f64>, Vec<f64>) {
        let n = y.len();
        let p = x_rows[0].len();
        let x = DMatrix::from_row_iterator(n, p, x_rows.iter().flatten().copied());
        let mut v = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if area_ids[i] == area_ids[j] {
                    v[(i, j)] += s2v;
                }
                if i == j {
                    v[(i, j)] += s2e;
                }
            }
        }
        let vinv = v.try_inverse().unwrap();
        let yv = DVector::from_column_slice(y);
        let a = x.transpose() * &vinv * &x;
        let b = x.transpose() * &vinv * &yv;
        let beta = a.lu().solve(&b).unwrap();
        let resid = &yv - &x * &beta;
        // BLUP of v_i: s2v Z' V^{-1} (y - X beta)
        let mut z = DMatrix::<f64>::zeros(n, m);
        for (k, &a_id) in area_ids.iter().enumerate() {
            z[(k, a_id)] = 1.0;
        }
        let vhat = z.transpose() * &vinv * resid * s2v;
        (beta, vhat.iter().copied().collect())
    }

    #[test]
    fn gls_matches_dense_oracle() {
        let y = vec![1.2, 0.8, 2.0, 3.1, 2.4, 2.9];
        let x = vec![
            vec![1.0, 0.5],
            vec![1.0, -0.3],
            vec![1.0, 1.1],
            vec![1.0, 0.2],
            vec![1.0, -0.8],
            vec![1.0, 0.9],
        ];
        let a = vec![0, 0, 0, 1, 1, 1];
        let (s2v, s2e) = (0.7, 1.3);
        let (beta, gamma, vtilde) = ner_gls(&y, &x, &a, 2, s2v, s2e).unwrap();
        let (beta_o, v_o) = dense_gls(&y, &x, &a, 2, s2v, s2e);
        for (b1, b2) in beta.iter().zip(beta_o.iter()) {
            assert!((b1 - b2).abs() < 1e-10, "{b1} vs {b2}");
        }
        for (v1, v2) in vtilde.iter().zip(&v_o) {
            assert!((v1 - v2).abs() < 1e-10, "{v1} vs {v2}");
        }
        for &g in &gamma {
            assert!((0.0..1.0).contains(&g));
        }
    }

    #[test]
    fn blup_census_area_returns_sample_mean() {
        let y = vec![1.0, 3.0, 2.0];
        let x = vec![vec![1.0, 0.1], vec![1.0, 0.9], vec![1.0, 0.4]];
        let a = vec![0, 0, 0];
        let xbar = vec![vec![1.0, (0.1 + 0.9 + 0.4) / 3.0]];
        let fit = NerFit {
            beta: vec![0.3, 0.7],
            sigma2_v: 1.0,
            sigma2_e: 1.0,
            gamma: vec![0.75],
            vtilde: vec![0.2],
            area_counts: vec![3],
            variance_truncated: false,
        };
        let pred = blup_area_means(&fit, &y, &x, &a, &xbar, &[3]).unwrap();
        assert!((pred[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn blup_hand_toy() {
        // one area: 2 sampled of N = 4
        let y = vec![1.0, 2.0];
        let x = vec![vec![1.0], vec![1.0]];
        let a = vec![0, 0];
        let fit = NerFit {
            beta: vec![0.5],
            sigma2_v: 1.0,
            sigma2_e: 1.0,
            gamma: vec![2.0 / 3.0],
            vtilde: vec![0.4],
            area_counts: vec![2],
            variance_truncated: false,
        };
        // nonsampled: 2 units each predicted 0.5 + 0.4 = 0.9
        // mean = (1 + 2 + 0.9 + 0.9)/4 = 1.2
        let pred = blup_area_means(&fit, &y, &x, &a, &[vec![1.0]], &[4]).unwrap();
        assert!((pred[0] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn pseudo_eblup_equal_weights_match_unweighted_solution() {
        let (y, x, a) = simulate_ner(5, 8, &[0.4, 1.5], 0.5, 1.0, 8);
        let w_eq = vec![3.0; y.len()];
        let fit_w = fit_pseudo_eblup(&y, &x, &w_eq, &a, 5, 0.5, 1.0).unwrap();
        let w_unit = vec![1.0; y.len()];
        let fit_u = fit_pseudo_eblup(&y, &x, &w_unit, &a, 5, 0.5, 1.0).unwrap();
        for (b1, b2) in fit_w.beta_w.iter().zip(&fit_u.beta_w) {
            assert!((b1 - b2).abs() < 1e-10);
        }
    }

    #[test]
    fn benchmarking_identity_with_calibrated_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let m = 4;
            let n_i = 6;
            let (y, x, a) = simulate_ner(m, n_i, &[1.0, 0.8], 0.6, 1.2, rng.gen());
            let w: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(0.5..4.0)).collect();
            let fit = fit_pseudo_eblup(&y, &x, &w, &a, m, 0.6, 1.2).unwrap();
            // calibration: treat N_i as the area's weight sum
            let cap_n: Vec<f64> = fit.sum_w.clone();
            // use arbitrary population means; identity holds regardless
            let xbar_pop: Vec<Vec<f64>> = (0..m)
                .map(|_| vec![1.0, rng.gen_range(-1.0..1.0)])
                .collect();
            let theta = pseudo_eblup_means(&fit, &xbar_pop).unwrap();
            let lhs: f64 = theta.iter().zip(&cap_n).map(|(t, n)| t * n).sum();
            let y_hat_w: f64 = y.iter().zip(&w).map(|(yi, wi)| yi * wi).sum();
            let mut x_tot = vec![0.0; 2];
            let mut x_hat_w = vec![0.0; 2];
            for i in 0..m {
                for j in 0..2 {
                    x_tot[j] += cap_n[i] * xbar_pop[i][j];
                }
            }
            for (xr, wi) in x.iter().zip(&w) {
                for j in 0..2 {
                    x_hat_w[j] += xr[j] * wi;
                }
            }
            let rhs = y_hat_w
                + (0..2)
                    .map(|j| (x_tot[j] - x_hat_w[j]) * fit.beta_w[j])
                    .sum::<f64>();
            assert!(
                (lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn guadarrama_limits() {
        let beta = vec![0.5, 2.0];
        let x = vec![1.0, 0.3];
        let xbar = vec![1.0, 0.1];
        let xb = 0.5 + 0.6;
        let xbarb = 0.5 + 0.2;
        assert!((guadarrama_predict(&beta, 0.0, &x, 3.0, &xbar) - xb).abs() < 1e-14);
        let full = guadarrama_predict(&beta, 1.0, &x, 3.0, &xbar);
        assert!((full - (xb + 3.0 - xbarb)).abs() < 1e-14);
        let half = guadarrama_predict(&beta, 0.5, &x, 3.0, &xbar);
        assert!((half - (xb + 0.5 * (3.0 - xbarb))).abs() < 1e-14);
    }

    #[test]
    fn pfeffermann_reductions() {
        let y = vec![1.0, 2.0];
        let x = vec![vec![1.0], vec![1.0]];
        let a = vec![0, 0];
        let fit = NerFit {
            beta: vec![0.5],
            sigma2_v: 1.0,
            sigma2_e: 2.0,
            gamma: vec![0.5],
            vtilde: vec![0.3],
            area_counts: vec![2],
            variance_truncated: false,
        };
        // census area: reduces to the sample mean (correction term vanishes)
        let pred = pfeffermann_corrected_mean(&fit, 0.7, &y, &x, &a, &[vec![1.0]], &[2]).unwrap();
        assert!((pred[0] - 1.5).abs() < 1e-12);

        // b = 0: equals the standard composite predictor
        let pred0 = pfeffermann_corrected_mean(&fit, 0.0, &y, &x, &a, &[vec![1.0]], &[10]).unwrap();
        let theta = 0.3 + 0.5;
        let expect = (8.0 * theta + 2.0 * 1.5) / 10.0;
        assert!((pred0[0] - expect).abs() < 1e-12);

        // b > 0 shifts by (N-n) b sigma2_e / N
        let pred_b =
            pfeffermann_corrected_mean(&fit, 0.25, &y, &x, &a, &[vec![1.0]], &[10]).unwrap();
        assert!((pred_b[0] - (expect + 8.0 * 0.25 * 2.0 / 10.0)).abs() < 1e-12);
    }

    #[test]
    fn exp_weight_model_recovers_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 4000;
        let mut log_w = Vec::new();
        let mut x_rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let x1: f64 = rng.gen_range(-1.0..1.0);
            let yi = f64::from(rng.gen::<f64>() < 0.4);
            let e: f64 = StandardNormal.sample(&mut rng);
            log_w.push(1.0 + 0.5 * x1 - 0.8 * yi + 0.3 * e);
            x_rows.push(vec![1.0, x1]);
            y.push(yi);
        }
        let (alpha, b, s2) = fit_exp_weight_model(&log_w, &x_rows, &y).unwrap();
        assert!((alpha[0] - 1.0).abs() < 0.05);
        assert!((alpha[1] - 0.5).abs() < 0.05);
        assert!((b + 0.8).abs() < 0.05);
        assert!((s2 - 0.09).abs() < 0.02);
    }

    #[test]
    fn malec_hand_case_and_invariance() {
        // m=1, n=2, p=0.5, wbar1=2, wbar0=1
        let ll = malec_adjusted_loglik(&[1.0], &[2.0], &[0.5], &[2.0], &[1.0]).unwrap();
        let expect = -2.0 * (2.0f64).ln() - 2.0 * (0.25 + 0.5f64).ln();
        assert!((ll - expect).abs() < 1e-12);

        // equal weight means = 1: plain binomial log-likelihood
        let ll1 = malec_adjusted_loglik(&[3.0], &[7.0], &[0.4], &[1.0], &[1.0]).unwrap();
        let binom = 3.0 * 0.4f64.ln() + 4.0 * 0.6f64.ln();
        assert!((ll1 - binom).abs() < 1e-12);

        // common rescaling of the weight means shifts by a constant:
        // argmax over p unchanged
        let grid: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
        let argmax = |w1: f64, w0: f64| -> usize {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (k, &pk) in grid.iter().enumerate() {
                let v = malec_adjusted_loglik(&[5.0], &[12.0], &[pk], &[w1], &[w0]).unwrap();
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            best
        };
        assert_eq!(argmax(3.0, 1.5), argmax(6.0, 3.0));

        assert!(malec_adjusted_loglik(&[1.0], &[2.0], &[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pseudo_empirical_matches_hajek_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let y = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let w_raw = vec![2.0, 1.0, 4.0, 1.0, 3.0, 2.0, 1.0, 2.0];
        let total: f64 = w_raw.iter().sum();
        let n = y.len() as f64;
        let w: Vec<f64> = w_raw.iter().map(|wi| wi * n / total).collect();
        let draws = bayes_pseudo_empirical(&y, &w, 0.0, 100_000, &mut rng).unwrap();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let hajek: f64 = y.iter().zip(&w_raw).map(|(a, b)| a * b).sum::<f64>() / total;
        assert!((mean - hajek).abs() < 0.005, "{mean} vs {hajek}");

        // degenerate response
        let ones = vec![1.0; 4];
        let d = bayes_pseudo_empirical(&ones, &[1.0; 4], 0.0, 100, &mut rng).unwrap();
        assert!(d.iter().all(|&t| (t - 1.0).abs() < 1e-12));
    }
}
