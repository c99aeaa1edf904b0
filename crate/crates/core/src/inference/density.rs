//! Differentiable log-densities over named parameter blocks.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::inference::autodiff::{Expr, Graph, Workspace};
use crate::inference::transforms::{Block, ParamSpace, Transform};

/// A log-density with gradient, evaluated on the unconstrained scale.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log-density and gradient at an unconstrained point.
    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn description(&self) -> &str {
        "model"
    }

    /// Parameter space, when the density carries named blocks.
    fn param_space(&self) -> Option<&ParamSpace> {
        None
    }
}

thread_local! {
    static SCRATCH: RefCell<Workspace> = RefCell::new(Workspace::new());
}

/// A log-density backed by an expression graph.
pub struct GraphDensity {
    graph: Graph,
    root: Expr,
    space: ParamSpace,
    description: String,
}

impl GraphDensity {
    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }
}

impl LogDensity for GraphDensity {
    fn dim(&self) -> usize {
        self.graph.n_inputs()
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        SCRATCH.with(|ws| self.graph.eval(self.root, x, &mut ws.borrow_mut(), grad))
    }

    fn description(&self) -> &str {
        &self.description
    }

    fn param_space(&self) -> Option<&ParamSpace> {
        Some(&self.space)
    }
}

/// Builds a [`GraphDensity`] from parameter blocks and log-density terms.
///
/// Declare blocks first; each declaration returns the constrained expressions
/// for that block and accumulates the transform's log-Jacobian. Then add
/// likelihood and prior terms. The final density is the sum of all terms.
pub struct ModelBuilder {
    pub graph: Graph,
    blocks: Vec<Block>,
    next_input: usize,
    terms: Vec<Expr>,
}

impl ModelBuilder {
    pub fn new(unconstrained_dim: usize) -> Self {
        ModelBuilder {
            graph: Graph::new(unconstrained_dim),
            blocks: Vec::new(),
            next_input: 0,
            terms: Vec::new(),
        }
    }

    /// Declare the next parameter block; returns constrained expressions.
    pub fn block(&mut self, name: &str, dim: usize, transform: Transform) -> Vec<Expr> {
        assert!(
            self.next_input + dim <= self.graph.n_inputs(),
            "block {name} exceeds declared input dimension"
        );
        let raw: Vec<Expr> = (0..dim)
            .map(|k| self.graph.input(self.next_input + k))
            .collect();
        self.next_input += dim;
        self.blocks.push(Block::new(name, dim, transform));
        let g = &mut self.graph;
        match transform {
            Transform::Identity => raw,
            Transform::LogPositive => {
                // log|d exp(x)/dx| = x
                let jac = g.sum(&raw);
                self.terms.push(jac);
                raw.iter().map(|&x| g.exp(x)).collect()
            }
            Transform::LogitAffine { lo, hi } => {
                let mut out = Vec::with_capacity(dim);
                for &x in &raw {
                    let s = g.sigmoid(x);
                    let scaled = g.mul_const(s, hi - lo);
                    out.push(g.add_const(scaled, lo));
                    // log|J| = log(hi-lo) - softplus(x) - softplus(-x)
                    let sp = g.softplus(x);
                    let nx = g.neg(x);
                    let spn = g.softplus(nx);
                    let a = g.add(sp, spn);
                    let na = g.neg(a);
                    let jac = g.add_const(na, (hi - lo).ln());
                    self.terms.push(jac);
                }
                out
            }
            Transform::Softmax => {
                // logits (z_1..z_k, 0); p = softmax; log|J| = sum log p_i
                let zero = g.constant(0.0);
                let mut logits = raw.clone();
                logits.push(zero);
                let mut mx = logits[0];
                for &z in &logits[1..] {
                    mx = g.max(mx, z);
                }
                let mut exps = Vec::with_capacity(logits.len());
                for &z in &logits {
                    let d = g.sub(z, mx);
                    exps.push(g.exp(d));
                }
                let s = g.sum(&exps);
                let lse_rel = g.ln(s);
                let lse = g.add(mx, lse_rel);
                let mut probs = Vec::with_capacity(logits.len());
                let mut log_probs = Vec::with_capacity(logits.len());
                for &z in &logits {
                    let lp = g.sub(z, lse);
                    log_probs.push(lp);
                    probs.push(g.exp(lp));
                }
                let jac = g.sum(&log_probs);
                self.terms.push(jac);
                probs
            }
        }
    }

    pub fn add_term(&mut self, term: Expr) {
        self.terms.push(term);
    }

    /// Independent normal prior contribution for each expression.
    pub fn normal_prior(&mut self, params: &[Expr], mean: f64, sd: f64) {
        let g = &mut self.graph;
        let mut sq = Vec::with_capacity(params.len());
        for &p in params {
            let c = g.add_const(p, -mean);
            sq.push(g.square(c));
        }
        let ssq = g.sum(&sq);
        let quad = g.mul_const(ssq, -0.5 / (sd * sd));
        let n = params.len() as f64;
        let t = g.add_const(
            quad,
            -n * (sd.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln()),
        );
        self.terms.push(t);
    }

    /// Half-Cauchy(0, kappa) prior on a positive-constrained scale.
    pub fn half_cauchy_prior(&mut self, sigma: Expr, kappa: f64) {
        let g = &mut self.graph;
        let r = g.mul_const(sigma, 1.0 / kappa);
        let r2 = g.square(r);
        let l = g.log1p(r2);
        let nl = g.neg(l);
        let t = g.add_const(nl, (2.0 / (std::f64::consts::PI * kappa)).ln());
        self.terms.push(t);
    }

    /// Bernoulli log-likelihood term with logit parameter and case weight:
    /// w * (y * eta - softplus(eta)).
    pub fn bernoulli_logit(&mut self, y: f64, eta: Expr, weight: f64) -> Expr {
        let g = &mut self.graph;
        let sp = g.softplus(eta);
        g.lincomb(&[(eta, y * weight), (sp, -weight)], 0.0)
    }

    pub fn finish(mut self, description: &str) -> GraphDensity {
        assert_eq!(
            self.next_input,
            self.graph.n_inputs(),
            "declared blocks do not cover the input dimension"
        );
        let root = self.graph.sum(&self.terms);
        GraphDensity {
            graph: self.graph,
            root,
            space: ParamSpace::new(self.blocks),
            description: description.to_string(),
        }
    }
}

/// Compare the autodiff gradient against central finite differences.
///
/// Returns the maximum relative error over components, with the difference
/// scaled by `max(1, |finite difference|)`.
pub fn grad_check(model: &dyn LogDensity, point: &[f64]) -> Result<f64> {
    let dim = model.dim();
    assert_eq!(point.len(), dim);
    let mut grad = vec![0.0; dim];
    let value = model.logp_grad(point, &mut grad);
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite density for {} at the supplied point",
            model.description()
        )));
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        let block = model
            .param_space()
            .and_then(|s| {
                let mut off = 0;
                for b in s.blocks() {
                    if k < off + b.dim {
                        return Some(b.name.clone());
                    }
                    off += b.dim;
                }
                None
            })
            .unwrap_or_else(|| format!("component {k}"));
        return Err(Error::Numerical(format!(
            "non-finite gradient for {} in parameter block {}",
            model.description(),
            block
        )));
    }

    let h = 1e-5;
    let mut x = point.to_vec();
    let mut scratch = vec![0.0; dim];
    let mut max_rel = 0.0_f64;
    for k in 0..dim {
        let orig = x[k];
        x[k] = orig + h;
        let fp = model.logp_grad(&x, &mut scratch);
        x[k] = orig - h;
        let fm = model.logp_grad(&x, &mut scratch);
        x[k] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let rel = (grad[k] - fd).abs() / fd.abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
