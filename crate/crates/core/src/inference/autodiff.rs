//! Reverse-mode automatic differentiation over a scalar expression graph.
//!
//! The graph is built once per model (fixed structure, no data-dependent
//! control flow) and then replayed: each evaluation runs a forward pass that
//! stores node values and local partials, followed by a backward sweep that
//! accumulates adjoints into the input gradient. This keeps per-evaluation
//! cost to a single pass over a flat node list, which matters because HMC
//! calls the gradient thousands of times per fit.

/// Handle to a node in an expression [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expr(pub(crate) u32);

#[derive(Debug, Clone)]
enum Op {
    Input(u32),
    Const(f64),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Log1p(u32),
    Sqrt(u32),
    Square(u32),
    /// log(1 + e^x), evaluated in a numerically stable form.
    Softplus(u32),
    Sigmoid(u32),
    Tanh(u32),
    Max(u32, u32),
    AddConst(u32, f64),
    MulConst(u32, f64),
    /// bias + sum of coeff * parent over a slice of `Graph::lin_terms`.
    LinComb {
        start: u32,
        len: u32,
        bias: f64,
    },
}

/// A scalar expression graph over `n_inputs` input variables.
#[derive(Debug, Clone)]
pub struct Graph {
    ops: Vec<Op>,
    lin_terms: Vec<(u32, f64)>,
    n_inputs: usize,
}

impl Graph {
    pub fn new(n_inputs: usize) -> Self {
        let mut g = Graph {
            ops: Vec::new(),
            lin_terms: Vec::new(),
            n_inputs,
        };
        for i in 0..n_inputs {
            g.push(Op::Input(i as u32));
        }
        g
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_nodes(&self) -> usize {
        self.ops.len()
    }

    /// The i-th input variable.
    pub fn input(&self, i: usize) -> Expr {
        assert!(i < self.n_inputs, "input index out of range");
        Expr(i as u32)
    }

    pub fn inputs(&self) -> Vec<Expr> {
        (0..self.n_inputs).map(|i| Expr(i as u32)).collect()
    }

    fn push(&mut self, op: Op) -> Expr {
        let id = self.ops.len() as u32;
        self.ops.push(op);
        Expr(id)
    }

    pub fn constant(&mut self, c: f64) -> Expr {
        self.push(Op::Const(c))
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Expr {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        self.push(Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        self.push(Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Expr, b: Expr) -> Expr {
        self.push(Op::Div(a.0, b.0))
    }

    pub fn neg(&mut self, a: Expr) -> Expr {
        self.push(Op::Neg(a.0))
    }

    pub fn exp(&mut self, a: Expr) -> Expr {
        self.push(Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Expr) -> Expr {
        self.push(Op::Ln(a.0))
    }

    pub fn log1p(&mut self, a: Expr) -> Expr {
        self.push(Op::Log1p(a.0))
    }

    pub fn sqrt(&mut self, a: Expr) -> Expr {
        self.push(Op::Sqrt(a.0))
    }

    pub fn square(&mut self, a: Expr) -> Expr {
        self.push(Op::Square(a.0))
    }

    pub fn softplus(&mut self, a: Expr) -> Expr {
        self.push(Op::Softplus(a.0))
    }

    pub fn sigmoid(&mut self, a: Expr) -> Expr {
        self.push(Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Expr) -> Expr {
        self.push(Op::Tanh(a.0))
    }

    pub fn max(&mut self, a: Expr, b: Expr) -> Expr {
        self.push(Op::Max(a.0, b.0))
    }

    pub fn add_const(&mut self, a: Expr, c: f64) -> Expr {
        self.push(Op::AddConst(a.0, c))
    }

    pub fn mul_const(&mut self, a: Expr, c: f64) -> Expr {
        self.push(Op::MulConst(a.0, c))
    }

    /// bias + sum of coeff * expr, as a single node.
    pub fn lincomb(&mut self, terms: &[(Expr, f64)], bias: f64) -> Expr {
        let start = self.lin_terms.len() as u32;
        self.lin_terms.extend(terms.iter().map(|&(e, c)| (e.0, c)));
        self.push(Op::LinComb {
            start,
            len: terms.len() as u32,
            bias,
        })
    }

    /// Unweighted sum of expressions.
    pub fn sum(&mut self, terms: &[Expr]) -> Expr {
        if terms.is_empty() {
            return self.constant(0.0);
        }
        let pairs: Vec<(Expr, f64)> = terms.iter().map(|&e| (e, 1.0)).collect();
        self.lincomb(&pairs, 0.0)
    }

    /// Dot product of expressions against constant coefficients, plus bias.
    pub fn dot(&mut self, exprs: &[Expr], coeffs: &[f64], bias: f64) -> Expr {
        assert_eq!(exprs.len(), coeffs.len());
        let pairs: Vec<(Expr, f64)> = exprs.iter().copied().zip(coeffs.iter().copied()).collect();
        self.lincomb(&pairs, bias)
    }

    /// Normal log-density of a fixed observation with expression mean and
    /// expression log-sd: -0.5*((obs-mu)/sigma)^2 - log_sigma - 0.5*log(2*pi).
    pub fn normal_lpdf_obs(&mut self, obs: f64, mu: Expr, log_sigma: Expr, sigma: Expr) -> Expr {
        let c = self.constant(obs);
        let r = self.sub(c, mu);
        let z = self.div(r, sigma);
        let z2 = self.square(z);
        let half = self.mul_const(z2, -0.5);
        let a = self.sub(half, log_sigma);
        self.add_const(a, -0.5 * (2.0 * std::f64::consts::PI).ln())
    }

    /// Evaluate value and gradient at `x`, reusing the given workspace.
    pub fn eval(&self, root: Expr, x: &[f64], ws: &mut Workspace, grad: &mut [f64]) -> f64 {
        assert_eq!(x.len(), self.n_inputs);
        assert_eq!(grad.len(), self.n_inputs);
        let n = self.ops.len();
        ws.resize(n);
        let vals = &mut ws.vals;
        let d1 = &mut ws.d1;
        let d2 = &mut ws.d2;

        // forward
        for (k, op) in self.ops.iter().enumerate() {
            let (v, da, db) = match *op {
                Op::Input(i) => (x[i as usize], 0.0, 0.0),
                Op::Const(c) => (c, 0.0, 0.0),
                Op::Add(a, b) => (vals[a as usize] + vals[b as usize], 1.0, 1.0),
                Op::Sub(a, b) => (vals[a as usize] - vals[b as usize], 1.0, -1.0),
                Op::Mul(a, b) => {
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    (va * vb, vb, va)
                }
                Op::Div(a, b) => {
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    let v = va / vb;
                    (v, 1.0 / vb, -v / vb)
                }
                Op::Neg(a) => (-vals[a as usize], -1.0, 0.0),
                Op::Exp(a) => {
                    let v = vals[a as usize].exp();
                    (v, v, 0.0)
                }
                Op::Ln(a) => {
                    let va = vals[a as usize];
                    (va.ln(), 1.0 / va, 0.0)
                }
                Op::Log1p(a) => {
                    let va = vals[a as usize];
                    (va.ln_1p(), 1.0 / (1.0 + va), 0.0)
                }
                Op::Sqrt(a) => {
                    let v = vals[a as usize].sqrt();
                    (v, 0.5 / v, 0.0)
                }
                Op::Square(a) => {
                    let va = vals[a as usize];
                    (va * va, 2.0 * va, 0.0)
                }
                Op::Softplus(a) => {
                    let va = vals[a as usize];
                    let v = va.max(0.0) + (-va.abs()).exp().ln_1p();
                    (v, sigmoid(va), 0.0)
                }
                Op::Sigmoid(a) => {
                    let s = sigmoid(vals[a as usize]);
                    (s, s * (1.0 - s), 0.0)
                }
                Op::Tanh(a) => {
                    let t = vals[a as usize].tanh();
                    (t, 1.0 - t * t, 0.0)
                }
                Op::Max(a, b) => {
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    if va >= vb {
                        (va, 1.0, 0.0)
                    } else {
                        (vb, 0.0, 1.0)
                    }
                }
                Op::AddConst(a, c) => (vals[a as usize] + c, 1.0, 0.0),
                Op::MulConst(a, c) => (vals[a as usize] * c, c, 0.0),
                Op::LinComb { start, len, bias } => {
                    let mut acc = bias;
                    for &(p, c) in &self.lin_terms[start as usize..(start + len) as usize] {
                        acc += c * vals[p as usize];
                    }
                    (acc, 0.0, 0.0)
                }
            };
            vals[k] = v;
            d1[k] = da;
            d2[k] = db;
        }

        // backward
        let adj = &mut ws.adj;
        adj[..n].fill(0.0);
        grad.fill(0.0);
        adj[root.0 as usize] = 1.0;
        for k in (0..n).rev() {
            let a = adj[k];
            if a == 0.0 {
                continue;
            }
            match self.ops[k] {
                Op::Input(i) => grad[i as usize] += a,
                Op::Const(_) => {}
                Op::Add(p, q) | Op::Sub(p, q) | Op::Mul(p, q) | Op::Div(p, q) | Op::Max(p, q) => {
                    adj[p as usize] += d1[k] * a;
                    adj[q as usize] += d2[k] * a;
                }
                Op::Neg(p)
                | Op::Exp(p)
                | Op::Ln(p)
                | Op::Log1p(p)
                | Op::Sqrt(p)
                | Op::Square(p)
                | Op::Softplus(p)
                | Op::Sigmoid(p)
                | Op::Tanh(p)
                | Op::AddConst(p, _)
                | Op::MulConst(p, _) => {
                    adj[p as usize] += d1[k] * a;
                }
                Op::LinComb { start, len, .. } => {
                    for &(p, c) in &self.lin_terms[start as usize..(start + len) as usize] {
                        adj[p as usize] += c * a;
                    }
                }
            }
        }
        vals[root.0 as usize]
    }

    /// Value only (forward pass, no gradient).
    pub fn eval_value(&self, root: Expr, x: &[f64], ws: &mut Workspace) -> f64 {
        let mut grad = vec![0.0; self.n_inputs];
        self.eval(root, x, ws, &mut grad)
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reusable buffers for graph evaluation.
#[derive(Debug, Default)]
pub struct Workspace {
    vals: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    adj: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn resize(&mut self, n: usize) {
        if self.vals.len() < n {
            self.vals.resize(n, 0.0);
            self.d1.resize(n, 0.0);
            self.d2.resize(n, 0.0);
            self.adj.resize(n, 0.0);
        }
    }
}

/// Cholesky factor of a symmetric positive-definite matrix of expressions.
///
/// Returns the lower-triangular factor as a row-major vector of rows. A
/// non-positive pivot at evaluation time produces a NaN, which the sampler
/// treats as a rejected proposal.
pub fn cholesky_exprs(g: &mut Graph, a: &[Vec<Expr>]) -> Vec<Vec<Expr>> {
    let n = a.len();
    let mut lower: Vec<Vec<Expr>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..=i {
            // s = a[i][j] - sum_k L[i][k] * L[j][k]
            let mut s = a[i][j];
            for k in 0..j {
                let prod = g.mul(lower[i][k], lower[j][k]);
                s = g.sub(s, prod);
            }
            let e = if i == j {
                g.sqrt(s)
            } else {
                g.div(s, lower[j][j])
            };
            lower[i].push(e);
        }
    }
    lower
}

/// Log-determinant from a Cholesky factor: 2 * sum log L_ii.
pub fn logdet_from_cholesky(g: &mut Graph, lower: &[Vec<Expr>]) -> Expr {
    let diags: Vec<Expr> = lower.iter().enumerate().map(|(i, row)| row[i]).collect();
    let logs: Vec<Expr> = diags.iter().map(|&d| g.ln(d)).collect();
    let s = g.sum(&logs);
    g.mul_const(s, 2.0)
}
