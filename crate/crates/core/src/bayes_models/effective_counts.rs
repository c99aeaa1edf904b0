//! Area-level pseudo-binomial likelihood on effective counts: the weighted
//! proportion and design-effect-adjusted sample size replace the raw counts,
//! giving a continuous binomial kernel.

use serde::{Deserialize, Serialize};

use crate::bayes_models::{normal_with_expr_scale, proper_car_term, Adjacency};
use crate::error::{Error, Result};
use crate::inference::autodiff::Expr;
use crate::inference::density::{GraphDensity, ModelBuilder};
use crate::inference::transforms::Transform;

/// Scale of the soft sum-to-zero constraint per connected component of the
/// intrinsic autoregression, multiplied by the component size.
pub(crate) const SOFT_SUM_SD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RandomEffects {
    Iid,
    Icar,
    Car,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveCountsSpec {
    /// Effective case count per area: n'_i times the weighted proportion.
    pub ystar: Vec<f64>,
    /// Effective sample size per area (raw size over the design effect).
    pub nprime: Vec<f64>,
    /// Area-level design rows, intercept first.
    pub x_rows: Vec<Vec<f64>>,
    pub effects: RandomEffects,
    /// Required for the spatial variants.
    pub adjacency: Option<Adjacency>,
    pub sigma2_beta: f64,
    pub kappa: f64,
}

impl EffectiveCountsSpec {
    pub fn new(
        ystar: Vec<f64>,
        nprime: Vec<f64>,
        x_rows: Vec<Vec<f64>>,
        effects: RandomEffects,
        adjacency: Option<Adjacency>,
    ) -> Self {
        EffectiveCountsSpec {
            ystar,
            nprime,
            x_rows,
            effects,
            adjacency,
            sigma2_beta: 10.0,
            kappa: 5.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.ystar.len();
        if m == 0 || self.nprime.len() != m || self.x_rows.len() != m {
            return Err(Error::Config("misaligned model inputs".to_string()));
        }
        for i in 0..m {
            if self.nprime[i] <= 0.0 {
                return Err(Error::Data(format!(
                    "non-positive effective sample size in area {i}"
                )));
            }
            if self.ystar[i] < 0.0 || self.ystar[i] > self.nprime[i] {
                return Err(Error::Data(format!(
                    "effective count outside [0, n'] in area {i}"
                )));
            }
        }
        match self.effects {
            RandomEffects::Iid => Ok(()),
            RandomEffects::Icar | RandomEffects::Car => match &self.adjacency {
                Some(a) if a.n == m => Ok(()),
                Some(_) => Err(Error::Config(
                    "adjacency size must equal area count".to_string(),
                )),
                None => Err(Error::Config(
                    "spatial random effects require an adjacency".to_string(),
                )),
            },
        }
    }
}

/// Log-density of y*_i ~ continuous-Binomial(n'_i, logit^{-1}(x_i'beta + u_i))
/// with iid, intrinsic, or proper conditional autoregressive area effects.
pub fn effective_counts_logdensity(spec: &EffectiveCountsSpec) -> Result<GraphDensity> {
    spec.validate()?;
    let m = spec.ystar.len();
    let p = spec.x_rows[0].len();
    let scale_dim = match spec.effects {
        RandomEffects::Iid | RandomEffects::Icar => 1,
        RandomEffects::Car => 2,
    };
    let mut b = ModelBuilder::new(p + m + scale_dim);
    let beta = b.block("beta", p, Transform::Identity);
    let u = b.block("u", m, Transform::Identity);

    let mut etas = Vec::with_capacity(m);
    for i in 0..m {
        let mut pairs: Vec<(Expr, f64)> = beta
            .iter()
            .copied()
            .zip(spec.x_rows[i].iter().copied())
            .collect();
        pairs.push((u[i], 1.0));
        etas.push(b.graph.lincomb(&pairs, 0.0));
    }
    for i in 0..m {
        // y* eta - n' softplus(eta)
        let t = b.bernoulli_logit(spec.ystar[i] / spec.nprime[i], etas[i], spec.nprime[i]);
        b.add_term(t);
    }
    b.normal_prior(&beta, 0.0, spec.sigma2_beta.sqrt());

    match spec.effects {
        RandomEffects::Iid => {
            let sigma_u = b.block("sigma_u", 1, Transform::LogPositive)[0];
            normal_with_expr_scale(&mut b, &u, sigma_u);
            b.half_cauchy_prior(sigma_u, spec.kappa);
        }
        RandomEffects::Icar => {
            let sigma_u = b.block("sigma_u", 1, Transform::LogPositive)[0];
            let adj = spec.adjacency.as_ref().unwrap();
            let comp = adj.components();
            let n_comp = comp.iter().max().map_or(0, |&c| c + 1);
            {
                let g = &mut b.graph;
                let sq: Vec<Expr> = adj
                    .edges
                    .iter()
                    .map(|&(i, j)| {
                        let d = g.sub(u[i], u[j]);
                        g.square(d)
                    })
                    .collect();
                let q = g.sum(&sq);
                let s2 = g.square(sigma_u);
                let qs = g.div(q, s2);
                let lsig = g.ln(sigma_u);
                // rank of the intrinsic precision is m - (number of components)
                let rank = (m - n_comp) as f64;
                let t = g.lincomb(&[(qs, -0.5), (lsig, -rank)], 0.0);
                b.add_term(t);
            }
            // soft sum-to-zero per component to pin the improper directions
            for c in 0..n_comp {
                let members: Vec<Expr> = (0..m).filter(|&i| comp[i] == c).map(|i| u[i]).collect();
                let size = members.len() as f64;
                let s = b.graph.sum(&members);
                b.normal_prior(&[s], 0.0, SOFT_SUM_SD * size);
            }
            b.half_cauchy_prior(sigma_u, spec.kappa);
        }
        RandomEffects::Car => {
            let tau = b.block("tau", 1, Transform::LogPositive)[0];
            let alpha = b.block("alpha", 1, Transform::LogitAffine { lo: -1.0, hi: 1.0 })[0];
            let adj = spec.adjacency.as_ref().unwrap().clone();
            proper_car_term(&mut b, &u, tau, alpha, &adj);
            b.half_cauchy_prior(tau, spec.kappa);
            let c = b.graph.constant(0.5f64.ln());
            b.add_term(c);
        }
    }
    Ok(b.finish("effective-count binomial model"))
}
