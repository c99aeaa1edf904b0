//! Sampling-distribution models: the binary response is modeled jointly with
//! the unit's selection variable (survey weight or inclusion probability), so
//! the informative design enters the likelihood instead of the weights.

use serde::{Deserialize, Serialize};

use crate::bayes_models::normal_with_expr_scale;
use crate::error::{Error, Result};
use crate::inference::autodiff::Expr;
use crate::inference::density::{GraphDensity, ModelBuilder};
use crate::inference::transforms::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model3Mode {
    /// Bernoulli response plus a lognormal regression of the survey weight
    /// on covariates and the response.
    PfeffermannSverchkov,
    /// Exact joint sample distribution of (y, pi) with a lognormal inclusion
    /// probability and a closed-form normalizing expectation.
    LeonNovelo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model3Spec {
    pub y: Vec<f64>,
    /// Response-model design rows, intercept first.
    pub x_rows: Vec<Vec<f64>>,
    pub area_ids: Vec<usize>,
    pub m: usize,
    /// Selection-model design rows; may differ from `x_rows`.
    pub xw_rows: Vec<Vec<f64>>,
    /// Log survey weight (weight-regression mode) or log inclusion
    /// probability (joint mode).
    pub log_sel: Vec<f64>,
    pub mode: Model3Mode,
    pub sigma2_beta: f64,
    pub kappa_prior: f64,
}

impl Model3Spec {
    pub fn new(
        y: Vec<f64>,
        x_rows: Vec<Vec<f64>>,
        area_ids: Vec<usize>,
        m: usize,
        xw_rows: Vec<Vec<f64>>,
        log_sel: Vec<f64>,
        mode: Model3Mode,
    ) -> Self {
        Model3Spec {
            y,
            x_rows,
            area_ids,
            m,
            xw_rows,
            log_sel,
            mode,
            sigma2_beta: 10.0,
            kappa_prior: 5.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0
            || self.x_rows.len() != n
            || self.area_ids.len() != n
            || self.xw_rows.len() != n
            || self.log_sel.len() != n
        {
            return Err(Error::Config("misaligned model inputs".to_string()));
        }
        if self.area_ids.iter().any(|&a| a >= self.m) {
            return Err(Error::Config("area id out of range".to_string()));
        }
        if self.mode == Model3Mode::LeonNovelo && self.log_sel.iter().any(|&l| l > 0.0) {
            return Err(Error::Data(
                "inclusion probabilities must not exceed one".to_string(),
            ));
        }
        Ok(())
    }
}

/// Per-unit sample log-density of the joint (y, pi) model, as a plain
/// function of the constrained parameters:
///
/// log f_s(y, pi | x) = y eta - softplus(eta)
///   + Normal(log pi | y kappa + t, sigma_pi^2)
///   - t - sigma_pi^2 / 2 - log E{exp(y kappa)},
///
/// where the expectation over y at success probability logit^{-1}(eta) is
/// 1 - p + p e^kappa. The result is a density in pi jointly with y.
pub fn leon_novelo_unit_logdensity(
    y: f64,
    log_pi: f64,
    eta: f64,
    kappa: f64,
    t: f64,
    sigma_pi: f64,
) -> f64 {
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    let bern = y * eta - softplus(eta);
    let z = (log_pi - (y * kappa + t)) / sigma_pi;
    let lognorm = -0.5 * z * z - sigma_pi.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    // log(1 - p + p e^kappa) with p = sigmoid(eta), via logsumexp
    let a = -softplus(eta);
    let b = kappa - softplus(-eta);
    let mx = a.max(b);
    let mgf = mx + ((a - mx).exp() + (b - mx).exp()).ln();
    bern + lognorm - t - 0.5 * sigma_pi * sigma_pi - mgf
}

/// Log-density for the joint response/selection models. Both modes share the
/// Bernoulli mixed model for y; they differ in how the selection variable is
/// tied in.
pub fn model3_logdensity(spec: &Model3Spec) -> Result<GraphDensity> {
    spec.validate()?;
    let p = spec.x_rows[0].len();
    let pw = spec.xw_rows[0].len();
    // beta, u, sigma_u, selection coefficients, response coefficient, scale
    let dim = p + spec.m + 1 + pw + 1 + 1;
    let mut b = ModelBuilder::new(dim);
    let beta = b.block("beta", p, Transform::Identity);
    let u = b.block("u", spec.m, Transform::Identity);
    let sigma_u = b.block("sigma_u", 1, Transform::LogPositive)[0];

    let mut etas = Vec::with_capacity(spec.y.len());
    for k in 0..spec.y.len() {
        let mut pairs: Vec<(Expr, f64)> = beta
            .iter()
            .copied()
            .zip(spec.x_rows[k].iter().copied())
            .collect();
        pairs.push((u[spec.area_ids[k]], 1.0));
        etas.push(b.graph.lincomb(&pairs, 0.0));
    }

    match spec.mode {
        Model3Mode::PfeffermannSverchkov => {
            let alpha = b.block("alpha", pw, Transform::Identity);
            let a_coef = b.block("a", 1, Transform::Identity)[0];
            let sigma_eps = b.block("sigma_eps", 1, Transform::LogPositive)[0];
            let log_sigma = b.graph.ln(sigma_eps);
            for k in 0..spec.y.len() {
                let t = b.bernoulli_logit(spec.y[k], etas[k], 1.0);
                b.add_term(t);
                let mut pairs: Vec<(Expr, f64)> = alpha
                    .iter()
                    .copied()
                    .zip(spec.xw_rows[k].iter().copied())
                    .collect();
                pairs.push((a_coef, spec.y[k]));
                let mu = b.graph.lincomb(&pairs, 0.0);
                let lw = b
                    .graph
                    .normal_lpdf_obs(spec.log_sel[k], mu, log_sigma, sigma_eps);
                b.add_term(lw);
            }
            b.normal_prior(&alpha, 0.0, spec.sigma2_beta.sqrt());
            b.normal_prior(&[a_coef], 0.0, spec.sigma2_beta.sqrt());
            b.half_cauchy_prior(sigma_eps, spec.kappa_prior);
        }
        Model3Mode::LeonNovelo => {
            let lambda = b.block("lambda", pw, Transform::Identity);
            let kappa = b.block("kappa", 1, Transform::Identity)[0];
            let sigma_pi = b.block("sigma_pi", 1, Transform::LogPositive)[0];
            let log_sigma = b.graph.ln(sigma_pi);
            let half_s2 = {
                let g = &mut b.graph;
                let s2 = g.square(sigma_pi);
                g.mul_const(s2, 0.5)
            };
            for k in 0..spec.y.len() {
                let bern = b.bernoulli_logit(spec.y[k], etas[k], 1.0);
                let g = &mut b.graph;
                let t_pairs: Vec<(Expr, f64)> = lambda
                    .iter()
                    .copied()
                    .zip(spec.xw_rows[k].iter().copied())
                    .collect();
                let t_x = g.lincomb(&t_pairs, 0.0);
                let mu = g.lincomb(&[(t_x, 1.0), (kappa, spec.y[k])], 0.0);
                let lognorm = g.normal_lpdf_obs(spec.log_sel[k], mu, log_sigma, sigma_pi);
                // log(1 - p + p e^kappa), stabilized: logsumexp of
                // (-softplus(eta), kappa - softplus(-eta))
                let sp = g.softplus(etas[k]);
                let a1 = g.neg(sp);
                let neg_eta = g.neg(etas[k]);
                let spn = g.softplus(neg_eta);
                let a2 = g.sub(kappa, spn);
                let mx = g.max(a1, a2);
                let d1 = g.sub(a1, mx);
                let d2 = g.sub(a2, mx);
                let e1 = g.exp(d1);
                let e2 = g.exp(d2);
                let s = g.add(e1, e2);
                let ls = g.ln(s);
                let mgf = g.add(mx, ls);
                let term = g.lincomb(
                    &[
                        (bern, 1.0),
                        (lognorm, 1.0),
                        (t_x, -1.0),
                        (half_s2, -1.0),
                        (mgf, -1.0),
                    ],
                    0.0,
                );
                b.add_term(term);
            }
            b.normal_prior(&lambda, 0.0, spec.sigma2_beta.sqrt());
            b.normal_prior(&[kappa], 0.0, spec.sigma2_beta.sqrt());
            b.half_cauchy_prior(sigma_pi, spec.kappa_prior);
        }
    }
    b.normal_prior(&beta, 0.0, spec.sigma2_beta.sqrt());
    normal_with_expr_scale(&mut b, &u, sigma_u);
    b.half_cauchy_prior(sigma_u, spec.kappa_prior);
    Ok(b.finish("joint response/selection model"))
}
