//! Weighted Bernoulli pseudo-posterior: each unit's log-likelihood is
//! exponentiated by its scaled survey weight.

use serde::{Deserialize, Serialize};

use crate::bayes_models::normal_with_expr_scale;
use crate::error::{Error, Result};
use crate::inference::density::{GraphDensity, ModelBuilder};
use crate::inference::transforms::Transform;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model1Spec {
    pub y: Vec<f64>,
    /// Dummy-coded design rows, intercept first.
    pub x_rows: Vec<Vec<f64>>,
    pub area_ids: Vec<usize>,
    pub m: usize,
    /// Survey weights scaled to sum to the sample size.
    pub w_scaled: Vec<f64>,
    pub sigma2_beta: f64,
    pub kappa_u: f64,
}

impl Model1Spec {
    pub fn new(
        y: Vec<f64>,
        x_rows: Vec<Vec<f64>>,
        area_ids: Vec<usize>,
        m: usize,
        w_scaled: Vec<f64>,
    ) -> Self {
        Model1Spec {
            y,
            x_rows,
            area_ids,
            m,
            w_scaled,
            sigma2_beta: 10.0,
            kappa_u: 5.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.x_rows.len() != n || self.area_ids.len() != n || self.w_scaled.len() != n {
            return Err(Error::Config("misaligned model inputs".to_string()));
        }
        if n == 0 {
            return Err(Error::Config("empty sample".to_string()));
        }
        if self.area_ids.iter().any(|&a| a >= self.m) {
            return Err(Error::Config("area id out of range".to_string()));
        }
        let sum_w: f64 = self.w_scaled.iter().sum();
        if (sum_w - n as f64).abs() > 1e-9 * n as f64 {
            return Err(Error::Config(format!(
                "scaled weights must sum to the sample size {n}, got {sum_w}"
            )));
        }
        Ok(())
    }
}

/// Pseudo-posterior log-density:
/// sum_ij w_ij (y log p + (1-y) log(1-p)), logit p = x'beta + u_i,
/// beta ~ N(0, sigma2_beta I), u ~ N(0, sigma_u^2), sigma_u ~ Cauchy+(0, kappa).
pub fn model1_logdensity(spec: &Model1Spec) -> Result<GraphDensity> {
    spec.validate()?;
    let p = spec.x_rows[0].len();
    let dim = p + spec.m + 1;
    let mut b = ModelBuilder::new(dim);
    let beta = b.block("beta", p, Transform::Identity);
    let u = b.block("u", spec.m, Transform::Identity);
    let sigma_u = b.block("sigma_u", 1, Transform::LogPositive)[0];

    for k in 0..spec.y.len() {
        let mut pairs: Vec<_> = beta
            .iter()
            .copied()
            .zip(spec.x_rows[k].iter().copied())
            .collect();
        pairs.push((u[spec.area_ids[k]], 1.0));
        let eta = b.graph.lincomb(&pairs, 0.0);
        let t = b.bernoulli_logit(spec.y[k], eta, spec.w_scaled[k]);
        b.add_term(t);
    }
    b.normal_prior(&beta, 0.0, spec.sigma2_beta.sqrt());
    normal_with_expr_scale(&mut b, &u, sigma_u);
    b.half_cauchy_prior(sigma_u, spec.kappa_u);
    Ok(b.finish("weighted Bernoulli mixed model"))
}
