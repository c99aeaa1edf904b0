//! Poststratified prediction: posterior draws of the finite-population area
//! means, assembled cell by cell with observed units kept fixed, plus the
//! multinomial model for unknown cell sizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::inference::autodiff::Expr;
use crate::inference::density::ModelBuilder;
use crate::inference::transforms::Transform;
use crate::inference::{hmc_sample, HmcConfig, PosteriorDraws};
use crate::population::{design_row, index_cells, Population};
use crate::sampling::SampleDraw;

/// One poststratification cell with everything prediction needs: the design
/// row, the population and sample counts, and the observed positives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellData {
    pub area_id: usize,
    pub x_row: Vec<f64>,
    pub n_pop: usize,
    pub n_sample: usize,
    pub sampled_positives: usize,
}

/// Cell table for a drawn sample, including cells with no sampled units.
pub fn build_cell_data(pop: &Population, sample: &SampleDraw) -> Result<Vec<CellData>> {
    let cells = index_cells(pop, sample)?;
    let mut key_to_idx: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
    for (k, c) in cells.iter().enumerate() {
        key_to_idx.insert((c.area_id, c.covariate_key.clone()), k);
    }
    let mut positives = vec![0usize; cells.len()];
    for &id in &sample.indices {
        let u = &pop.units[id];
        let k = key_to_idx[&(u.area_id, u.covariates.clone())];
        positives[k] += usize::from(u.y_binary);
    }
    Ok(cells
        .iter()
        .zip(&positives)
        .map(|(c, &pos)| CellData {
            area_id: c.area_id,
            x_row: design_row(&c.covariate_key, &pop.covariate_levels),
            n_pop: c.population_count,
            n_sample: c.sample_count,
            sampled_positives: pos,
        })
        .collect())
}

/// Per-draw, per-area finite-population means. Observed units contribute
/// their sampled positives exactly; each cell's non-sampled count adds a
/// Binomial(N - n, p_cell) draw at that draw's cell probability. With
/// `regenerate_all`, every unit is re-simulated from the model instead
/// (for negligible sampling fractions).
///
/// Returns a draws-by-areas matrix.
pub fn predict_area_means(
    draws: &PosteriorDraws,
    cells: &[CellData],
    area_pop_sizes: &[usize],
    regenerate_all: bool,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let m = area_pop_sizes.len();
    let beta_cols = draws.block_indices("beta");
    let u_cols = draws.block_indices("u");
    if beta_cols.is_empty() {
        return Err(Error::Config("draws carry no 'beta' block".to_string()));
    }
    if u_cols.len() != m {
        return Err(Error::Config(format!(
            "draws carry {} area effects for {m} areas",
            u_cols.len()
        )));
    }
    for c in cells {
        if c.n_sample > c.n_pop {
            return Err(Error::Data(format!(
                "cell in area {} has more sampled than population units",
                c.area_id
            )));
        }
        if c.area_id >= m {
            return Err(Error::Data(format!("cell area {} out of range", c.area_id)));
        }
        if c.x_row.len() != beta_cols.len() {
            return Err(Error::Config(format!(
                "cell design row has {} columns, draws have {} coefficients",
                c.x_row.len(),
                beta_cols.len()
            )));
        }
    }

    let rows: Vec<Vec<f64>> = (0..draws.n_rows())
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            let row = draws.row(r);
            let mut positives = vec![0.0; m];
            for c in cells {
                let eta: f64 = beta_cols
                    .iter()
                    .zip(&c.x_row)
                    .map(|(&j, &x)| row[j] * x)
                    .sum::<f64>()
                    + row[u_cols[c.area_id]];
                let p = 1.0 / (1.0 + (-eta).exp());
                let (fixed, to_draw) = if regenerate_all {
                    (0usize, c.n_pop)
                } else {
                    (c.sampled_positives, c.n_pop - c.n_sample)
                };
                let simulated = if to_draw == 0 || p == 0.0 {
                    0
                } else {
                    Binomial::new(to_draw as u64, p).unwrap().sample(&mut rng)
                };
                positives[c.area_id] += fixed as f64 + simulated as f64;
            }
            (0..m)
                .map(|a| positives[a] / area_pop_sizes[a] as f64)
                .collect()
        })
        .collect();
    Ok(rows)
}

/// Posterior draws of the within-area cell sizes N_l given the sample cell
/// counts and cell weights: selection probability proportional to N_l / w_l,
/// symmetric Dirichlet(alpha) prior on the population shares (alpha = 1 is
/// flat), sampled by HMC on the softmax scale. Each draw is rounded by
/// largest remainder so the cells sum to the area total.
pub fn multinomial_cell_sizes(
    n_cells: &[usize],
    weights: &[f64],
    n_area: usize,
    alpha: f64,
    cfg: &HmcConfig,
) -> Result<Vec<Vec<usize>>> {
    let l = n_cells.len();
    if l == 0 || weights.len() != l {
        return Err(Error::Config("misaligned cell inputs".to_string()));
    }
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::Data("cell weights must be positive".to_string()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Config(
            "Dirichlet concentration must be positive".to_string(),
        ));
    }
    let n_draws = cfg.chains * cfg.iters;
    if l == 1 {
        return Ok(vec![vec![n_area]; n_draws]);
    }

    let mut b = ModelBuilder::new(l - 1);
    let phi = b.block("phi", l - 1, Transform::Softmax);
    {
        let g = &mut b.graph;
        // multinomial likelihood with tilted probabilities phi_l/w_l
        // Dirichlet(alpha) prior folds into the same ln(phi_l) terms
        let log_terms: Vec<(Expr, f64)> = phi
            .iter()
            .zip(n_cells)
            .map(|(&p, &n)| (g.ln(p), n as f64 + alpha - 1.0))
            .collect();
        let t1 = g.lincomb(&log_terms, 0.0);
        let tilt: Vec<(Expr, f64)> = phi
            .iter()
            .zip(weights)
            .map(|(&p, &w)| (p, 1.0 / w))
            .collect();
        let s = g.lincomb(&tilt, 0.0);
        let ls = g.ln(s);
        let n_total: usize = n_cells.iter().sum();
        let t = g.lincomb(&[(t1, 1.0), (ls, -(n_total as f64))], 0.0);
        b.add_term(t);
    }
    let d = b.finish("cell-size multinomial model");
    let draws = hmc_sample(&d, cfg)?;
    Ok((0..draws.n_rows())
        .map(|r| largest_remainder(n_area, draws.row(r)))
        .collect())
}

/// Round `total * props` to integers that sum exactly to `total`: floor each,
/// then hand the leftover units to the largest fractional parts.
pub fn largest_remainder(total: usize, props: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|&p| p * total as f64).collect();
    let mut out: Vec<usize> = raw.iter().map(|&v| v.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for k in 0..total.saturating_sub(assigned) {
        out[order[k % props.len()]] += 1;
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub sd: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Columnwise posterior mean, sd, and equal-tailed 95% interval.
pub fn aggregate(draw_rows: &[Vec<f64>]) -> Result<Vec<PosteriorSummary>> {
    let s = draw_rows.len();
    if s < 2 {
        return Err(Error::Data(
            "need at least two draws to summarize".to_string(),
        ));
    }
    let m = draw_rows[0].len();
    Ok((0..m)
        .map(|j| {
            let mut col: Vec<f64> = draw_rows.iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / s as f64;
            let sd =
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s as f64 - 1.0)).sqrt();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            PosteriorSummary {
                mean,
                sd,
                lo95: quantile_sorted(&col, 0.025),
                hi95: quantile_sorted(&col, 0.975),
            }
        })
        .collect())
}

/// Population-weighted state mean per draw: sum N_i ybar_i / sum N_i.
pub fn state_series(draw_rows: &[Vec<f64>], pop_sizes: &[usize]) -> Vec<f64> {
    let total: f64 = pop_sizes.iter().sum::<usize>() as f64;
    draw_rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(pop_sizes)
                .map(|(&v, &n)| v * n as f64)
                .sum::<f64>()
                / total
        })
        .collect()
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = q * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
