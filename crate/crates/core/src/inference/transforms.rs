//! Parameter blocks and constraining transforms.
//!
//! Models are sampled on an unconstrained scale. Each named block carries a
//! transform mapping unconstrained reals to the constrained support, with the
//! log-Jacobian folded into the model density by the graph builders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::autodiff::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// Positive scale via exp.
    LogPositive,
    /// Open interval (lo, hi) via an affine map of the logistic function.
    LogitAffine {
        lo: f64,
        hi: f64,
    },
    /// k unconstrained values map to a (k+1)-simplex with the last logit
    /// pinned at zero. The constrained block is one element longer than the
    /// unconstrained one.
    Softmax,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    /// Unconstrained dimension of the block.
    pub dim: usize,
    pub transform: Transform,
}

impl Block {
    pub fn new(name: &str, dim: usize, transform: Transform) -> Self {
        Block {
            name: name.to_string(),
            dim,
            transform,
        }
    }

    pub fn constrained_dim(&self) -> usize {
        match self.transform {
            Transform::Softmax => self.dim + 1,
            _ => self.dim,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSpace {
    blocks: Vec<Block>,
}

impl ParamSpace {
    pub fn new(blocks: Vec<Block>) -> Self {
        ParamSpace { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn unconstrained_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    pub fn constrained_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.constrained_dim()).sum()
    }

    /// Offset of a named block in the unconstrained vector.
    pub fn unconstrained_offset(&self, name: &str) -> Option<usize> {
        let mut off = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some(off);
            }
            off += b.dim;
        }
        None
    }

    /// Offset of a named block in the constrained vector.
    pub fn constrained_offset(&self, name: &str) -> Option<usize> {
        let mut off = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some(off);
            }
            off += b.constrained_dim();
        }
        None
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Column names on the constrained scale, e.g. `beta[0]`.
    pub fn constrained_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.constrained_dim());
        for b in &self.blocks {
            let cd = b.constrained_dim();
            if cd == 1 {
                names.push(b.name.clone());
            } else {
                for k in 0..cd {
                    names.push(format!("{}[{}]", b.name, k));
                }
            }
        }
        names
    }

    pub fn constrain(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.unconstrained_dim() {
            return Err(Error::Config(format!(
                "expected unconstrained vector of length {}, got {}",
                self.unconstrained_dim(),
                x.len()
            )));
        }
        let mut out = Vec::with_capacity(self.constrained_dim());
        let mut off = 0;
        for b in &self.blocks {
            let xs = &x[off..off + b.dim];
            match b.transform {
                Transform::Identity => out.extend_from_slice(xs),
                Transform::LogPositive => out.extend(xs.iter().map(|v| v.exp())),
                Transform::LogitAffine { lo, hi } => {
                    out.extend(xs.iter().map(|&v| lo + (hi - lo) * sigmoid(v)))
                }
                Transform::Softmax => {
                    // last logit pinned to zero
                    let mx = xs.iter().fold(0.0_f64, |m, &v| m.max(v));
                    let mut s = (-mx).exp();
                    let mut e: Vec<f64> = Vec::with_capacity(b.dim + 1);
                    for &v in xs {
                        let ev = (v - mx).exp();
                        s += ev;
                        e.push(ev);
                    }
                    e.push((-mx).exp());
                    out.extend(e.iter().map(|v| v / s));
                }
            }
            off += b.dim;
        }
        Ok(out)
    }

    pub fn unconstrain(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.constrained_dim() {
            return Err(Error::Config(format!(
                "expected constrained vector of length {}, got {}",
                self.constrained_dim(),
                c.len()
            )));
        }
        let mut out = Vec::with_capacity(self.unconstrained_dim());
        let mut off = 0;
        for b in &self.blocks {
            let cd = b.constrained_dim();
            let cs = &c[off..off + cd];
            match b.transform {
                Transform::Identity => out.extend_from_slice(cs),
                Transform::LogPositive => out.extend(cs.iter().map(|v| v.ln())),
                Transform::LogitAffine { lo, hi } => out.extend(cs.iter().map(|&v| {
                    let p = (v - lo) / (hi - lo);
                    (p / (1.0 - p)).ln()
                })),
                Transform::Softmax => {
                    let last = cs[cd - 1];
                    out.extend(cs[..cd - 1].iter().map(|&p| (p / last).ln()));
                }
            }
            off += cd;
        }
        Ok(out)
    }
}
