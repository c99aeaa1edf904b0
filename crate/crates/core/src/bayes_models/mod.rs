//! Log-density builders for the survey-weighted and sampling-distribution
//! Bayesian models, plus the sample/complement distribution identities.

pub mod effective_counts;
pub mod identities;
pub mod model1;
pub mod model2;
pub mod model3;
pub mod spatial;

pub use effective_counts::{effective_counts_logdensity, EffectiveCountsSpec, RandomEffects};
pub use identities::{
    expected_weight_exponential, sample_distribution_bernoulli, sample_to_population_bernoulli,
};
pub use model1::{model1_logdensity, Model1Spec};
pub use model2::{model2_logdensity, Model2Spec};
pub use model3::{model3_logdensity, Model3Mode, Model3Spec};
pub use spatial::Adjacency;

use crate::inference::autodiff::{cholesky_exprs, logdet_from_cholesky, Expr};
use crate::inference::density::ModelBuilder;

/// Centered hierarchical normal: params_i ~ N(0, sigma^2) with an
/// expression-valued scale; adds -k log sigma - sum(params^2)/(2 sigma^2)
/// (plus the normalizing constant) to the density.
pub(crate) fn normal_with_expr_scale(b: &mut ModelBuilder, params: &[Expr], sigma: Expr) {
    let g = &mut b.graph;
    let sq: Vec<Expr> = params.iter().map(|&p| g.square(p)).collect();
    let ssq = g.sum(&sq);
    let s2 = g.square(sigma);
    let ratio = g.div(ssq, s2);
    let quad = g.mul_const(ratio, -0.5);
    let lsig = g.ln(sigma);
    let k = params.len() as f64;
    let t = g.lincomb(
        &[(quad, 1.0), (lsig, -k)],
        -0.5 * k * (2.0 * std::f64::consts::PI).ln(),
    );
    b.add_term(t);
}

/// Proper conditional autoregression: u ~ N(0, tau (D - alpha W)^{-1}),
/// where D is the degree matrix (islands get D_ii = 1) and W the 0/1
/// adjacency. The log-determinant of D - alpha W goes through the graph
/// Cholesky; the quadratic form is accumulated over the edge list.
pub(crate) fn proper_car_term(
    b: &mut ModelBuilder,
    u: &[Expr],
    tau: Expr,
    alpha: Expr,
    adjacency: &Adjacency,
) {
    let m = u.len();
    assert_eq!(adjacency.n, m);
    let d_diag: Vec<f64> = adjacency
        .degrees()
        .iter()
        .map(|&d| d.max(1) as f64)
        .collect();
    let g = &mut b.graph;
    let neg_alpha = g.neg(alpha);
    let zero = g.constant(0.0);
    let mut prec = vec![vec![zero; m]; m];
    for (i, row) in prec.iter_mut().enumerate() {
        row[i] = g.constant(d_diag[i]);
    }
    for &(i, j) in &adjacency.edges {
        prec[i][j] = neg_alpha;
        prec[j][i] = neg_alpha;
    }
    let chol = cholesky_exprs(g, &prec);
    let logdet_prec = logdet_from_cholesky(g, &chol);
    let diag_sq: Vec<(Expr, f64)> = u
        .iter()
        .zip(&d_diag)
        .map(|(&ui, &di)| (g.square(ui), di))
        .collect();
    let quad_diag = g.lincomb(&diag_sq, 0.0);
    let cross: Vec<(Expr, f64)> = adjacency
        .edges
        .iter()
        .map(|&(i, j)| (g.mul(u[i], u[j]), 2.0))
        .collect();
    let quad_cross_raw = g.lincomb(&cross, 0.0);
    let quad_cross = g.mul(alpha, quad_cross_raw);
    let quad = g.sub(quad_diag, quad_cross);
    let quad_over_tau = g.div(quad, tau);
    let log_tau = g.ln(tau);
    let t = g.lincomb(
        &[
            (logdet_prec, 0.5),
            (log_tau, -0.5 * m as f64),
            (quad_over_tau, -0.5),
        ],
        -0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln(),
    );
    b.add_term(t);
}
