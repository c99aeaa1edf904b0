//! Hamiltonian Monte Carlo with leapfrog integration, dual-averaging step
//! size adaptation, and a warmup-estimated diagonal mass matrix.
//!
//! Trajectory lengths are jittered uniformly in [0.5L, 1.5L], with the base
//! L chosen so that step * L is roughly one. Chains run concurrently on
//! independent RNG streams and results are deterministic given the seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::density::LogDensity;

#[derive(Debug, Clone)]
pub struct HmcConfig {
    pub chains: usize,
    pub warmup: usize,
    /// Kept iterations per chain (after warmup).
    pub iters: usize,
    pub target_accept: f64,
    pub seed: u64,
    pub max_leapfrog: usize,
    /// Initial values drawn uniformly from (-init_range, init_range).
    pub init_range: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            chains: 2,
            warmup: 1000,
            iters: 1000,
            target_accept: 0.8,
            seed: 0,
            max_leapfrog: 64,
            init_range: 2.0,
        }
    }
}

impl HmcConfig {
    pub fn with_seed(seed: u64) -> Self {
        HmcConfig {
            seed,
            ..Default::default()
        }
    }
}

/// Retained draws on the constrained scale, with sampler statistics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub dim: usize,
    /// Row-major matrix, `chains * kept_per_chain` rows by `dim` columns.
    pub draws: Vec<f64>,
    pub chain_ids: Vec<usize>,
    pub chains: usize,
    pub kept_per_chain: usize,
    pub divergences: usize,
    pub step_sizes: Vec<f64>,
    pub accept_rates: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn n_rows(&self) -> usize {
        self.chains * self.kept_per_chain
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.draws[r * self.dim..(r + 1) * self.dim]
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.row(r)[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.col_index(name).map(|j| self.column(j))
    }

    /// Per-chain series for one column.
    pub fn column_chains(&self, j: usize) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(self.kept_per_chain); self.chains];
        for r in 0..self.n_rows() {
            out[self.chain_ids[r]].push(self.row(r)[j]);
        }
        out
    }

    /// Columns whose names start with `name` followed by `[` or equal it.
    pub fn block_indices(&self, name: &str) -> Vec<usize> {
        let prefix = format!("{name}[");
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| *n == name || n.starts_with(&prefix))
            .map(|(j, _)| j)
            .collect()
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        let col = self.column(j);
        col.iter().sum::<f64>() / col.len() as f64
    }

    pub fn column_sd(&self, j: usize) -> f64 {
        let col = self.column(j);
        let m = col.iter().sum::<f64>() / col.len() as f64;
        (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() as f64 - 1.0)).sqrt()
    }

    /// CSV export: chain column followed by one column per parameter.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![self.chain_ids[r].to_string()];
            rec.extend(self.row(r).iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<PosteriorDraws> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.is_empty() || &header[0] != "chain" {
            return Err(Error::Data(
                "draws csv must start with a 'chain' column".into(),
            ));
        }
        let names: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
        let dim = names.len();
        let mut draws = Vec::new();
        let mut chain_ids = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let chain: usize = rec[0].parse().map_err(|_| Error::Parse {
                row: i + 2,
                msg: format!("bad chain id '{}'", &rec[0]),
            })?;
            chain_ids.push(chain);
            for v in rec.iter().skip(1) {
                draws.push(v.parse().map_err(|_| Error::Parse {
                    row: i + 2,
                    msg: format!("bad value '{v}'"),
                })?);
            }
        }
        let chains = chain_ids.iter().copied().max().map_or(0, |c| c + 1);
        let rows = chain_ids.len();
        Ok(PosteriorDraws {
            names,
            dim,
            draws,
            chain_ids,
            chains,
            kept_per_chain: if chains > 0 { rows / chains } else { 0 },
            divergences: 0,
            step_sizes: Vec::new(),
            accept_rates: Vec::new(),
            warnings: Vec::new(),
        })
    }
}

struct ChainResult {
    draws: Vec<f64>, // kept x dim, unconstrained
    divergences: usize,
    step_size: f64,
    accept_rate: f64,
}

/// Run HMC on a model and return constrained posterior draws.
pub fn hmc_sample<M: LogDensity + ?Sized>(model: &M, cfg: &HmcConfig) -> Result<PosteriorDraws> {
    if model.dim() == 0 {
        return Err(Error::Config("model dimension must be >= 1".into()));
    }
    if cfg.chains == 0 || cfg.iters == 0 {
        return Err(Error::Config("chains and iters must be >= 1".into()));
    }
    let results: Vec<Result<ChainResult>> = (0..cfg.chains)
        .into_par_iter()
        .map(|chain| run_chain(model, cfg, chain))
        .collect();
    let mut chains = Vec::with_capacity(cfg.chains);
    for r in results {
        chains.push(r?);
    }

    let dim_u = model.dim();
    let space = model.param_space();
    let (names, dim_c) = match space {
        Some(s) => (s.constrained_names(), s.constrained_dim()),
        None => ((0..dim_u).map(|k| format!("p[{k}]")).collect(), dim_u),
    };

    let mut draws = Vec::with_capacity(cfg.chains * cfg.iters * dim_c);
    let mut chain_ids = Vec::with_capacity(cfg.chains * cfg.iters);
    let mut divergences = 0;
    let mut step_sizes = Vec::new();
    let mut accept_rates = Vec::new();
    for (c, res) in chains.iter().enumerate() {
        divergences += res.divergences;
        step_sizes.push(res.step_size);
        accept_rates.push(res.accept_rate);
        for k in 0..cfg.iters {
            let row = &res.draws[k * dim_u..(k + 1) * dim_u];
            match space {
                Some(s) => draws.extend(s.constrain(row)?),
                None => draws.extend_from_slice(row),
            }
            chain_ids.push(c);
        }
    }

    let mut warnings = Vec::new();
    let total_kept = cfg.chains * cfg.iters;
    if divergences as f64 > 0.2 * total_kept as f64 {
        warnings.push(format!(
            "divergence rate {:.1}% exceeds 20% after warmup",
            100.0 * divergences as f64 / total_kept as f64
        ));
    }

    Ok(PosteriorDraws {
        names,
        dim: dim_c,
        draws,
        chain_ids,
        chains: cfg.chains,
        kept_per_chain: cfg.iters,
        divergences,
        step_sizes,
        accept_rates,
        warnings,
    })
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    count: usize,
    target: f64,
}

impl DualAveraging {
    fn new(eps0: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            count: 0,
            target,
        }
    }

    fn update(&mut self, accept_prob: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.count += 1;
        let m = self.count as f64;
        let eta = 1.0 / (m + T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob);
        self.log_eps = self.mu - m.sqrt() / GAMMA * self.h_bar;
        let x = m.powf(-KAPPA);
        self.log_eps_bar = x * self.log_eps + (1.0 - x) * self.log_eps_bar;
    }

    fn eps(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted_eps(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

fn run_chain<M: LogDensity + ?Sized>(
    model: &M,
    cfg: &HmcConfig,
    chain: usize,
) -> Result<ChainResult> {
    let dim = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64 + 1);

    // initial point with finite density
    let mut x = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut logp = f64::NEG_INFINITY;
    let mut found = false;
    for _ in 0..100 {
        for v in x.iter_mut() {
            *v = rng.gen_range(-cfg.init_range..cfg.init_range);
        }
        logp = model.logp_grad(&x, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::Numerical(format!(
            "no finite initial density for {} after 100 re-draws",
            model.description()
        )));
    }

    let mut inv_mass = vec![1.0; dim];
    let mut eps = find_reasonable_eps(model, &x, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(eps, cfg.target_accept);

    // mass-matrix estimation window inside warmup
    let win_lo = cfg.warmup / 4;
    let win_hi = cfg.warmup * 3 / 4;
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let mut win_n = 0usize;

    let mut kept = Vec::with_capacity(cfg.iters * dim);
    let mut divergences = 0usize;
    let mut accept_sum = 0.0;

    let total = cfg.warmup + cfg.iters;
    for iter in 0..total {
        let warming = iter < cfg.warmup;
        let step = if warming { da.eps() } else { eps };
        let base_l = ((1.0 / step).round() as i64).clamp(1, cfg.max_leapfrog as i64) as usize;
        let lo = (base_l as f64 * 0.5).ceil().max(1.0) as usize;
        let hi = (base_l as f64 * 1.5).floor().max(lo as f64) as usize;
        let n_steps = rng.gen_range(lo..=hi);

        // momentum ~ N(0, M) with M = diag(1/inv_mass)
        let mut p: Vec<f64> = (0..dim)
            .map(|k| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z / inv_mass[k].sqrt()
            })
            .collect();
        let h0 = -logp + kinetic(&p, &inv_mass);

        let mut x_new = x.clone();
        let mut grad_new = grad.clone();
        let mut logp_new = logp;
        // leapfrog
        for k in 0..dim {
            p[k] += 0.5 * step * grad_new[k];
        }
        let mut diverged = false;
        for s in 0..n_steps {
            for k in 0..dim {
                x_new[k] += step * inv_mass[k] * p[k];
            }
            logp_new = model.logp_grad(&x_new, &mut grad_new);
            if !logp_new.is_finite() {
                diverged = true;
                break;
            }
            let scale = if s + 1 == n_steps { 0.5 } else { 1.0 };
            for k in 0..dim {
                p[k] += scale * step * grad_new[k];
            }
        }

        let accept_prob = if diverged {
            0.0
        } else {
            let h1 = -logp_new + kinetic(&p, &inv_mass);
            let dh = h1 - h0;
            if !dh.is_finite() || dh > 1000.0 {
                diverged = true;
                0.0
            } else {
                (-dh).exp().min(1.0)
            }
        };

        if !diverged && rng.gen::<f64>() < accept_prob {
            x = x_new;
            grad = grad_new;
            logp = logp_new;
        }

        if warming {
            da.update(accept_prob);
            if iter >= win_lo && iter < win_hi {
                win_n += 1;
                for k in 0..dim {
                    let d = x[k] - mean[k];
                    mean[k] += d / win_n as f64;
                    m2[k] += d * (x[k] - mean[k]);
                }
            }
            if iter + 1 == win_hi && win_n > 4 {
                let n = win_n as f64;
                for k in 0..dim {
                    let var = m2[k] / (n - 1.0);
                    inv_mass[k] = (n / (n + 5.0)) * var + (5.0 / (n + 5.0)) * 1e-3;
                }
                let eps0 = find_reasonable_eps(model, &x, &inv_mass, &mut rng);
                da = DualAveraging::new(eps0, cfg.target_accept);
            }
            if iter + 1 == cfg.warmup {
                eps = da.adapted_eps();
            }
        } else {
            if diverged {
                divergences += 1;
            }
            accept_sum += accept_prob;
            kept.extend_from_slice(&x);
        }
    }

    Ok(ChainResult {
        draws: kept,
        divergences,
        step_size: eps,
        accept_rate: accept_sum / cfg.iters as f64,
    })
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(inv_mass)
        .map(|(&pk, &im)| pk * pk * im)
        .sum::<f64>()
}

/// Doubling/halving heuristic for the initial step size.
fn find_reasonable_eps<M: LogDensity + ?Sized>(
    model: &M,
    x: &[f64],
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let dim = x.len();
    let mut grad = vec![0.0; dim];
    let logp = model.logp_grad(x, &mut grad);
    let p0: Vec<f64> = (0..dim)
        .map(|k| {
            let z: f64 = StandardNormal.sample(rng);
            z / inv_mass[k].sqrt()
        })
        .collect();
    let h0 = -logp + kinetic(&p0, inv_mass);

    let mut eps = 0.1;
    let trial = |eps: f64| -> f64 {
        let mut xt = x.to_vec();
        let mut pt = p0.clone();
        let mut gt = grad.clone();
        for k in 0..dim {
            pt[k] += 0.5 * eps * gt[k];
        }
        for k in 0..dim {
            xt[k] += eps * inv_mass[k] * pt[k];
        }
        let lp = model.logp_grad(&xt, &mut gt);
        for k in 0..dim {
            pt[k] += 0.5 * eps * gt[k];
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        h0 - (-lp + kinetic(&pt, inv_mass))
    };

    let dh = trial(eps);
    let dir: f64 = if dh > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..50 {
        let dh = trial(eps);
        if dir > 0.0 && dh <= (0.5f64).ln() {
            break;
        }
        if dir < 0.0 && dh > (0.5f64).ln() {
            break;
        }
        eps *= 2.0_f64.powf(dir);
        if !(1e-10..=1e3).contains(&eps) {
            break;
        }
    }
    eps
}
