//! Repeated-subsampling experiment: draw informative samples from a fixed
//! population, fit every requested estimator, and score them against the
//! finite-population area proportions.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes_models::{
    model1_logdensity, model2_logdensity, model3_logdensity, Adjacency, Model1Spec, Model2Spec,
    Model3Mode, Model3Spec,
};
use crate::classical::{blup_area_means, fit_ner, fit_pseudo_eblup, pseudo_eblup_means};
use crate::direct::direct_estimates;
use crate::error::{Error, Result};
use crate::inference::{hmc_sample, HmcConfig, PosteriorDraws};
use crate::population::{
    design_row, generate_population, read_population, GeneratorConfig, Population,
};
use crate::poststrat::{
    aggregate, build_cell_data, multinomial_cell_sizes, predict_area_means, CellData,
};
use crate::sampling::{draw_pps_systematic, scale_weights, SampleDraw, WeightScaling};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PopulationSource {
    Generator(GeneratorConfig),
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Ht,
    Uw,
    Model1,
    Model2,
    Model3,
    NerEblup,
    PseudoEblup,
    /// Returns the truth; only useful for validating the harness itself.
    Oracle,
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Ht => "ht",
            Estimator::Uw => "uw",
            Estimator::Model1 => "model1",
            Estimator::Model2 => "model2",
            Estimator::Model3 => "model3",
            Estimator::NerEblup => "ner-eblup",
            Estimator::PseudoEblup => "pseudo-eblup",
            Estimator::Oracle => "oracle",
        }
    }
}

/// Run-shape knobs shared by every MCMC-backed fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McmcBudget {
    pub chains: usize,
    pub warmup: usize,
    pub iters: usize,
    /// Emit structured progress lines (chain acceptance) on stderr.
    #[serde(default)]
    pub progress: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub population: PopulationSource,
    pub n_sample: usize,
    pub replicates: usize,
    pub estimators: Vec<Estimator>,
    pub chains: usize,
    pub warmup: usize,
    pub iters: usize,
    pub base_seed: u64,
    /// Weight values are grouped into at most this many bins for the
    /// weight-smoothing model.
    pub max_weight_bins: usize,
    /// Emit per-replicate progress lines on stderr.
    #[serde(default)]
    pub progress: bool,
}

impl SimConfig {
    fn budget(&self) -> McmcBudget {
        McmcBudget {
            chains: self.chains,
            warmup: self.warmup,
            iters: self.iters,
            progress: self.progress,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".to_string()));
        }
        if self.n_sample == 0 {
            return Err(Error::Config("n_sample must be >= 1".to_string()));
        }
        if self.max_weight_bins == 0 {
            return Err(Error::Config("max_weight_bins must be >= 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub mse: f64,
    pub abs_bias: f64,
    pub coverage: f64,
    pub mean_seconds: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerAreaRow {
    pub estimator: Estimator,
    pub area_id: usize,
    pub rmse: f64,
    pub rmse_direct: Option<f64>,
    pub reduction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRow {
    pub replicate: usize,
    pub estimator: Estimator,
    pub area_id: usize,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub summaries: Vec<EstimatorSummary>,
    pub per_area: Vec<PerAreaRow>,
    pub raw: Vec<RawRow>,
    pub truth: Vec<f64>,
    pub warnings: Vec<String>,
}

/// One area's point estimate, standard error (or posterior sd), and 95%
/// interval; fields are `None` where the estimator is undefined for the area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaFit {
    pub est: Option<f64>,
    pub se: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

/// Unit-level data for the sampled units.
pub struct SampleData {
    pub y: Vec<f64>,
    pub x_rows: Vec<Vec<f64>>,
    pub area_ids: Vec<usize>,
    pub weights: Vec<f64>,
}

pub fn extract_sample(pop: &Population, sample: &SampleDraw) -> SampleData {
    let mut y = Vec::with_capacity(sample.n());
    let mut x_rows = Vec::with_capacity(sample.n());
    let mut area_ids = Vec::with_capacity(sample.n());
    for &id in &sample.indices {
        let u = &pop.units[id];
        y.push(f64::from(u.y_binary));
        x_rows.push(design_row(&u.covariates, &pop.covariate_levels));
        area_ids.push(u.area_id);
    }
    SampleData {
        y,
        x_rows,
        area_ids,
        weights: sample.weights.clone(),
    }
}

/// Group sample weights into at most `max_bins` contiguous value bins.
/// Returns the bin representative values (increasing) and a per-observation
/// bin index.
pub fn bin_weights(w: &[f64], max_bins: usize) -> (Vec<f64>, Vec<usize>) {
    let n = w.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap());
    // runs of equal values stay together; a run's bin comes from the rank of
    // its first element, so at most max_bins bins are produced
    let mut index = vec![0usize; n];
    let bin_of_rank = |rank: usize| (rank * max_bins) / n;
    let mut run_start = 0;
    let mut raw_bins = vec![0usize; n];
    for k in 0..n {
        if k > 0 && w[order[k]] != w[order[k - 1]] {
            run_start = k;
        }
        raw_bins[order[k]] = bin_of_rank(run_start);
    }
    // compact bin labels and compute representatives
    let mut labels: Vec<usize> = raw_bins.clone();
    labels.sort_unstable();
    labels.dedup();
    let mut sums = vec![0.0; labels.len()];
    let mut counts = vec![0usize; labels.len()];
    for i in 0..n {
        let b = labels.binary_search(&raw_bins[i]).unwrap();
        index[i] = b;
        sums[b] += w[i];
        counts[b] += 1;
    }
    let values: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    (values, index)
}

fn posterior_area_fits(rows: &[Vec<f64>]) -> Result<Vec<AreaFit>> {
    Ok(aggregate(rows)?
        .into_iter()
        .map(|s| AreaFit {
            est: Some(s.mean),
            se: Some(s.sd),
            lo: Some(s.lo95),
            hi: Some(s.hi95),
        })
        .collect())
}

fn hmc_cfg(budget: &McmcBudget, seed: u64) -> HmcConfig {
    HmcConfig {
        chains: budget.chains,
        warmup: budget.warmup,
        iters: budget.iters,
        seed,
        ..Default::default()
    }
}

fn report_accepts(budget: &McmcBudget, label: &str, draws: &PosteriorDraws) {
    if budget.progress {
        let accepts: Vec<String> = draws
            .accept_rates
            .iter()
            .map(|a| format!("{a:.3}"))
            .collect();
        eprintln!("progress fit={label} accept={}", accepts.join(","));
    }
}

pub fn fit_direct(
    data: &SampleData,
    pop_sizes: &[usize],
    unweighted: bool,
) -> Result<Vec<AreaFit>> {
    let ones;
    let w = if unweighted {
        ones = vec![1.0; data.y.len()];
        &ones
    } else {
        &data.weights
    };
    Ok(direct_estimates(&data.y, w, &data.area_ids, pop_sizes)?
        .into_iter()
        .map(|e| AreaFit {
            est: e.estimate,
            se: e.se,
            lo: e.ci_lower,
            hi: e.ci_upper,
        })
        .collect())
}

pub fn fit_model1(
    budget: &McmcBudget,
    pop: &Population,
    data: &SampleData,
    cells: &[CellData],
    seed: u64,
) -> Result<Vec<AreaFit>> {
    let groups = vec![0usize; data.y.len()];
    let w_scaled = scale_weights(&data.weights, &groups, WeightScaling::SumToTotalSampleSize)?;
    let spec = Model1Spec::new(
        data.y.clone(),
        data.x_rows.clone(),
        data.area_ids.clone(),
        pop.n_areas(),
        w_scaled,
    );
    let d = model1_logdensity(&spec)?;
    let draws = hmc_sample(&d, &hmc_cfg(budget, seed))?;
    report_accepts(budget, "model1", &draws);
    let rows = predict_area_means(&draws, cells, &pop.area_sizes, false, seed ^ 0x5ca1e)?;
    posterior_area_fits(&rows)
}

pub fn fit_model3(
    budget: &McmcBudget,
    pop: &Population,
    data: &SampleData,
    cells: &[CellData],
    seed: u64,
) -> Result<Vec<AreaFit>> {
    let log_w: Vec<f64> = data.weights.iter().map(|w| w.ln()).collect();
    let spec = Model3Spec::new(
        data.y.clone(),
        data.x_rows.clone(),
        data.area_ids.clone(),
        pop.n_areas(),
        data.x_rows.clone(),
        log_w,
        Model3Mode::PfeffermannSverchkov,
    );
    let d = model3_logdensity(&spec)?;
    let draws = hmc_sample(&d, &hmc_cfg(budget, seed))?;
    report_accepts(budget, "model3", &draws);
    let rows = predict_model3_area_means(&draws, cells, &pop.area_sizes, seed ^ 0x3a7e)?;
    posterior_area_fits(&rows)
}

/// Poststratified prediction under the joint response/weight model: the
/// non-sampled units follow the complement distribution implied by the
/// fitted weight regression, not the sample distribution.
pub fn predict_model3_area_means(
    draws: &PosteriorDraws,
    cells: &[CellData],
    area_pop_sizes: &[usize],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    use rand_distr::{Binomial, Distribution};

    let m = area_pop_sizes.len();
    let beta_cols = draws.block_indices("beta");
    let u_cols = draws.block_indices("u");
    let alpha_cols = draws.block_indices("alpha");
    let a_col = draws
        .col_index("a")
        .ok_or_else(|| Error::Config("draws carry no 'a' column".to_string()))?;
    let sig_col = draws
        .col_index("sigma_eps")
        .ok_or_else(|| Error::Config("draws carry no 'sigma_eps' column".to_string()))?;
    if u_cols.len() != m || beta_cols.is_empty() || alpha_cols.is_empty() {
        return Err(Error::Config("unexpected draw layout".to_string()));
    }

    let rows: Vec<Vec<f64>> = (0..draws.n_rows())
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            let row = draws.row(r);
            let a_coef = row[a_col];
            let s2 = row[sig_col] * row[sig_col];
            let mut positives = vec![0.0; m];
            for c in cells {
                let eta: f64 = beta_cols
                    .iter()
                    .zip(&c.x_row)
                    .map(|(&j, &x)| row[j] * x)
                    .sum::<f64>()
                    + row[u_cols[c.area_id]];
                let p_s = 1.0 / (1.0 + (-eta).exp());
                let xa: f64 = alpha_cols
                    .iter()
                    .zip(&c.x_row)
                    .map(|(&j, &x)| row[j] * x)
                    .sum();
                let ew1 = (xa + a_coef + 0.5 * s2).exp().max(1.0);
                let ew0 = (xa + 0.5 * s2).exp().max(1.0);
                let num = (ew1 - 1.0) * p_s;
                let den = num + (ew0 - 1.0) * (1.0 - p_s);
                // census fallback: no weight variation left, complement
                // matches the population distribution
                let p_c = if den > 0.0 {
                    num / den
                } else {
                    ew1 * p_s / (ew1 * p_s + ew0 * (1.0 - p_s))
                };
                let to_draw = c.n_pop - c.n_sample;
                let sim = if to_draw == 0 || p_c <= 0.0 {
                    0
                } else {
                    Binomial::new(to_draw as u64, p_c.min(1.0))
                        .unwrap()
                        .sample(&mut rng)
                };
                positives[c.area_id] += c.sampled_positives as f64 + sim as f64;
            }
            (0..m)
                .map(|a| positives[a] / area_pop_sizes[a] as f64)
                .collect()
        })
        .collect();
    Ok(rows)
}

pub fn fit_model2(
    budget: &McmcBudget,
    max_weight_bins: usize,
    pop: &Population,
    data: &SampleData,
    seed: u64,
) -> Result<Vec<AreaFit>> {
    use rand_distr::{Binomial, Distribution};

    let m = pop.n_areas();
    let (w_values, w_index) = bin_weights(&data.weights, max_weight_bins);
    let spec = Model2Spec::new(
        data.y.clone(),
        data.area_ids.clone(),
        m,
        w_values.clone(),
        w_index.clone(),
        Adjacency::grid(m),
    );
    let d = model2_logdensity(&spec)?;
    let draws = hmc_sample(&d, &hmc_cfg(budget, seed))?;
    report_accepts(budget, "model2", &draws);
    let n_rows = draws.n_rows();
    let l = w_values.len();

    // per-area bin counts, sampled positives, and unknown bin sizes
    let mut n_li = vec![vec![0usize; l]; m];
    let mut pos_li = vec![vec![0usize; l]; m];
    for k in 0..data.y.len() {
        let (a, b) = (data.area_ids[k], w_index[k]);
        n_li[a][b] += 1;
        pos_li[a][b] += data.y[k] as usize;
    }
    let cell_cfg = HmcConfig {
        chains: 1,
        warmup: 200,
        iters: n_rows,
        seed: seed ^ 0xce11,
        ..Default::default()
    };
    // a near-vanishing Dirichlet concentration (total prior mass of one
    // pseudo-count across the bins) keeps the cell-size posterior from being
    // pulled toward uniform shares, which would bias the area predictions at
    // these small per-area sample sizes
    let alpha = 1.0 / l as f64;
    let size_draws: Vec<Vec<Vec<usize>>> = (0..m)
        .into_par_iter()
        .map(|a| multinomial_cell_sizes(&n_li[a], &w_values, pop.area_sizes[a], alpha, &cell_cfg))
        .collect::<Result<_>>()?;

    let beta0_col = draws
        .col_index("beta0")
        .ok_or_else(|| Error::Config("draws carry no 'beta0' column".to_string()))?;
    let z_cols = draws.block_indices("z");
    let gamma_col = draws.col_index("gamma").unwrap();
    let rho_col = draws.col_index("rho").unwrap();
    let u_cols = draws.block_indices("u");
    let v_cols = draws.block_indices("v");

    let rows: Vec<Vec<f64>> = (0..n_rows)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9d2f);
            rng.set_stream(r as u64 + 1);
            let row = draws.row(r);
            // rebuild f = chol(K) z at this draw's kernel parameters
            let gamma = row[gamma_col];
            let rho = row[rho_col];
            let mut kmat = nalgebra::DMatrix::<f64>::zeros(l, l);
            for i in 0..l {
                for j in 0..l {
                    let dw = w_values[i] - w_values[j];
                    kmat[(i, j)] = gamma * gamma * (-0.5 * dw * dw / (rho * rho)).exp();
                }
                kmat[(i, i)] += 1e-8 * gamma * gamma;
            }
            let chol = kmat
                .cholesky()
                .expect("kernel matrix not positive definite");
            let z = nalgebra::DVector::from_iterator(l, z_cols.iter().map(|&j| row[j]));
            let f = chol.l() * z;

            let mut means = vec![0.0; m];
            for a in 0..m {
                let sizes = &size_draws[a][r];
                let mut pos = 0.0;
                for b in 0..l {
                    let eta = row[beta0_col] + f[b] + row[u_cols[a]] + row[v_cols[a]];
                    let p = 1.0 / (1.0 + (-eta).exp());
                    let to_draw = sizes[b].saturating_sub(n_li[a][b]);
                    let sim = if to_draw == 0 || p <= 0.0 {
                        0
                    } else {
                        Binomial::new(to_draw as u64, p.min(1.0))
                            .unwrap()
                            .sample(&mut rng)
                    };
                    pos += pos_li[a][b] as f64 + sim as f64;
                }
                means[a] = pos / pop.area_sizes[a] as f64;
            }
            means
        })
        .collect();
    posterior_area_fits(&rows)
}

fn eblup_fits(means: &[f64], se: &[f64]) -> Vec<AreaFit> {
    means
        .iter()
        .zip(se)
        .map(|(&e, &s)| AreaFit {
            est: Some(e),
            se: Some(s),
            lo: Some((e - 1.96 * s).max(0.0)),
            hi: Some((e + 1.96 * s).min(1.0)),
        })
        .collect()
}

pub fn fit_ner_eblup(
    pop: &Population,
    data: &SampleData,
    xbar_pop: &[Vec<f64>],
) -> Result<Vec<AreaFit>> {
    let m = pop.n_areas();
    let fit = fit_ner(&data.y, &data.x_rows, &data.area_ids, m)?;
    let means = blup_area_means(
        &fit,
        &data.y,
        &data.x_rows,
        &data.area_ids,
        xbar_pop,
        &pop.area_sizes,
    )?;
    // leading-order prediction variance sigma2_v (1 - gamma_i)
    let se: Vec<f64> = fit
        .gamma
        .iter()
        .map(|&g| (fit.sigma2_v * (1.0 - g)).max(0.0).sqrt())
        .collect();
    Ok(eblup_fits(&means, &se))
}

pub fn fit_pseudo(
    pop: &Population,
    data: &SampleData,
    xbar_pop: &[Vec<f64>],
) -> Result<Vec<AreaFit>> {
    let m = pop.n_areas();
    let base = fit_ner(&data.y, &data.x_rows, &data.area_ids, m)?;
    let fit = fit_pseudo_eblup(
        &data.y,
        &data.x_rows,
        &data.weights,
        &data.area_ids,
        m,
        base.sigma2_v,
        base.sigma2_e,
    )?;
    let means = pseudo_eblup_means(&fit, xbar_pop)?;
    let se: Vec<f64> = fit
        .gamma_iw
        .iter()
        .map(|&g| (fit.sigma2_v * (1.0 - g)).max(0.0).sqrt())
        .collect();
    Ok(eblup_fits(&means, &se))
}

fn load_population(config: &SimConfig) -> Result<Population> {
    match &config.population {
        PopulationSource::Generator(g) => generate_population(g),
        PopulationSource::Csv(path) => {
            let f = std::fs::File::open(path)?;
            read_population(f)
        }
    }
}

struct ReplicateOutcome {
    fits: Vec<(Estimator, Result<Vec<AreaFit>>, f64)>,
}

fn run_replicate(
    config: &SimConfig,
    pop: &Population,
    sizes: &[f64],
    xbar_pop: &[Vec<f64>],
    truth: &[f64],
    r: usize,
) -> Result<ReplicateOutcome> {
    let seed = config.base_seed + r as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // strict PPS: without it, fixed-size selection at this n/N barely departs
    // from SRS and the size-response link cannot make the sample informative
    let sample = draw_pps_systematic(sizes, config.n_sample, &mut rng)?;
    let data = extract_sample(pop, &sample);
    let cells = build_cell_data(pop, &sample)?;
    let budget = config.budget();

    let mut fits = Vec::new();
    for (k, &est) in config.estimators.iter().enumerate() {
        let fit_seed = seed.wrapping_mul(1000).wrapping_add(k as u64);
        let t0 = Instant::now();
        let res = match est {
            Estimator::Ht => fit_direct(&data, &pop.area_sizes, false),
            Estimator::Uw => fit_direct(&data, &pop.area_sizes, true),
            Estimator::Model1 => fit_model1(&budget, pop, &data, &cells, fit_seed),
            Estimator::Model2 => fit_model2(&budget, config.max_weight_bins, pop, &data, fit_seed),
            Estimator::Model3 => fit_model3(&budget, pop, &data, &cells, fit_seed),
            Estimator::NerEblup => fit_ner_eblup(pop, &data, xbar_pop),
            Estimator::PseudoEblup => fit_pseudo(pop, &data, xbar_pop),
            Estimator::Oracle => Ok(truth
                .iter()
                .map(|&t| AreaFit {
                    est: Some(t),
                    se: Some(0.0),
                    lo: Some(t),
                    hi: Some(t),
                })
                .collect()),
        };
        fits.push((est, res, t0.elapsed().as_secs_f64()));
    }
    if config.progress {
        eprintln!("progress replicate={r} status=done");
    }
    Ok(ReplicateOutcome { fits })
}

/// Population mean design row per area.
pub fn population_xbar(pop: &Population) -> Vec<Vec<f64>> {
    let m = pop.n_areas();
    let p = design_row(&pop.units[0].covariates, &pop.covariate_levels).len();
    let mut xbar_pop = vec![vec![0.0; p]; m];
    for u in &pop.units {
        let row = design_row(&u.covariates, &pop.covariate_levels);
        for j in 0..p {
            xbar_pop[u.area_id][j] += row[j];
        }
    }
    for (a, row) in xbar_pop.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= pop.area_sizes[a] as f64;
        }
    }
    xbar_pop
}

pub fn run(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let pop = load_population(config)?;
    if config.n_sample > pop.total_size() {
        return Err(Error::Config(format!(
            "n_sample {} exceeds population size {}",
            config.n_sample,
            pop.total_size()
        )));
    }
    let m = pop.n_areas();
    let truth = pop.area_proportions();
    let sizes: Vec<f64> = pop.units.iter().map(|u| u.size_value).collect();
    let xbar_pop = population_xbar(&pop);

    let outcomes: Vec<Result<ReplicateOutcome>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &pop, &sizes, &xbar_pop, &truth, r))
        .collect();

    let mut raw = Vec::new();
    let mut warnings = Vec::new();
    // per estimator: errors[area] over replicates, interval hits, timings
    let mut errors: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); m]; config.estimators.len()];
    let mut hits: Vec<(usize, usize)> = vec![(0, 0); config.estimators.len()];
    let mut times: Vec<Vec<f64>> = vec![Vec::new(); config.estimators.len()];
    let mut failures = vec![0usize; config.estimators.len()];

    for (r, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome?;
        for (k, (est, res, secs)) in outcome.fits.into_iter().enumerate() {
            match res {
                Ok(fits) => {
                    times[k].push(secs);
                    for (a, f) in fits.iter().enumerate() {
                        raw.push(RawRow {
                            replicate: r,
                            estimator: est,
                            area_id: a,
                            estimate: f.est,
                            se: f.se,
                            lo: f.lo,
                            hi: f.hi,
                        });
                        if let Some(e) = f.est {
                            errors[k][a].push(e - truth[a]);
                        }
                        if let (Some(lo), Some(hi)) = (f.lo, f.hi) {
                            hits[k].1 += 1;
                            if lo <= truth[a] && truth[a] <= hi {
                                hits[k].0 += 1;
                            }
                        }
                    }
                }
                Err(e) => {
                    failures[k] += 1;
                    warnings.push(format!(
                        "replicate {r}: {} fit failed and was excluded: {e}",
                        est.as_str()
                    ));
                }
            }
        }
    }

    let mut summaries = Vec::new();
    let mut per_area = Vec::new();
    let mut rmse_by_est: Vec<Vec<f64>> = Vec::new();
    for (k, &est) in config.estimators.iter().enumerate() {
        let all: Vec<f64> = errors[k].iter().flatten().copied().collect();
        let mse = if all.is_empty() {
            f64::NAN
        } else {
            all.iter().map(|e| e * e).sum::<f64>() / all.len() as f64
        };
        let per_area_bias: Vec<f64> = errors[k]
            .iter()
            .filter(|v| !v.is_empty())
            .map(|v| (v.iter().sum::<f64>() / v.len() as f64).abs())
            .collect();
        let abs_bias = if per_area_bias.is_empty() {
            f64::NAN
        } else {
            per_area_bias.iter().sum::<f64>() / per_area_bias.len() as f64
        };
        let coverage = if hits[k].1 == 0 {
            f64::NAN
        } else {
            hits[k].0 as f64 / hits[k].1 as f64
        };
        let mean_seconds = if times[k].is_empty() {
            f64::NAN
        } else {
            times[k].iter().sum::<f64>() / times[k].len() as f64
        };
        summaries.push(EstimatorSummary {
            estimator: est,
            mse,
            abs_bias,
            coverage,
            mean_seconds,
            failures: failures[k],
        });
        rmse_by_est.push(
            errors[k]
                .iter()
                .map(|v| {
                    if v.is_empty() {
                        f64::NAN
                    } else {
                        (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
                    }
                })
                .collect(),
        );
    }
    let ht_idx = config.estimators.iter().position(|e| *e == Estimator::Ht);
    for (k, &est) in config.estimators.iter().enumerate() {
        for a in 0..m {
            let rmse_direct = ht_idx.map(|h| rmse_by_est[h][a]);
            per_area.push(PerAreaRow {
                estimator: est,
                area_id: a,
                rmse: rmse_by_est[k][a],
                rmse_direct,
                reduction: rmse_direct.map(|d| d - rmse_by_est[k][a]),
            });
        }
    }

    Ok(SimReport {
        summaries,
        per_area,
        raw,
        truth,
        warnings,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: SimConfig,
}

/// Write summary.csv, per_area.csv, raw_estimates.csv, and manifest.json.
pub fn report_write(report: &SimReport, config: &SimConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let fmt = |v: f64| {
        if v.is_nan() {
            String::new()
        } else {
            format!("{v:.10e}")
        }
    };
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();

    // wall-clock timings go to their own file so every other artifact is
    // byte-for-byte reproducible across reruns
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["estimator", "mse", "abs_bias", "coverage", "failures"])?;
    for s in &report.summaries {
        w.write_record(&[
            s.estimator.as_str().to_string(),
            fmt(s.mse),
            fmt(s.abs_bias),
            fmt(s.coverage),
            s.failures.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("timings.csv"))?;
    w.write_record(["estimator", "mean_seconds"])?;
    for s in &report.summaries {
        w.write_record(&[s.estimator.as_str().to_string(), fmt(s.mean_seconds)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("per_area.csv"))?;
    w.write_record([
        "estimator",
        "area_id",
        "rmse_direct",
        "rmse_model",
        "reduction",
    ])?;
    for row in &report.per_area {
        w.write_record(&[
            row.estimator.as_str().to_string(),
            row.area_id.to_string(),
            fmt_opt(row.rmse_direct),
            fmt(row.rmse),
            fmt_opt(row.reduction),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("raw_estimates.csv"))?;
    w.write_record([
        "replicate",
        "estimator",
        "area_id",
        "estimate",
        "se",
        "lo95",
        "hi95",
    ])?;
    for row in &report.raw {
        w.write_record(&[
            row.replicate.to_string(),
            row.estimator.as_str().to_string(),
            row.area_id.to_string(),
            fmt_opt(row.estimate),
            fmt_opt(row.se),
            fmt_opt(row.lo),
            fmt_opt(row.hi),
        ])?;
    }
    w.flush()?;

    let manifest = Manifest {
        version: 1,
        config: config.clone(),
    };
    let f = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(f, &manifest)?;
    Ok(())
}

/// Reload a config from a written manifest for an exact rerun.
pub fn read_manifest(path: &Path) -> Result<SimConfig> {
    let f = std::fs::File::open(path)?;
    let m: Manifest = serde_json::from_reader(f)?;
    if m.version != 1 {
        return Err(Error::Config(format!(
            "unsupported manifest version {}",
            m.version
        )));
    }
    Ok(m.config)
}
