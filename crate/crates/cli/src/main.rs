//! `sae`: generate populations, draw samples, fit small area models,
//! run simulation studies, and diagnose posterior draws.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sae_core::bayes_models::{
    effective_counts_logdensity, Adjacency, EffectiveCountsSpec, RandomEffects,
};
use sae_core::direct::design_effect_and_kish;
use sae_core::inference::{diagnostics, hmc_sample, HmcConfig, PosteriorDraws};
use sae_core::population::{
    design_row, generate_population, index_cells, read_population, read_population_path,
    write_population, write_population_path, GeneratorConfig, Population,
};
use sae_core::poststrat::{aggregate, CellData};
use sae_core::sampling::{draw_midzuno, draw_pps_systematic, draw_srs, DesignTag, SampleDraw};
use sae_core::simharness::{self, extract_sample, AreaFit, McmcBudget, SimConfig};
use sae_core::{Error, Result};

#[derive(Parser)]
#[command(name = "sae", version, about = "Small area estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Srs,
    Midzuno,
    /// Strict PPS via systematic selection (the simulation harness design).
    Pps,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Model1,
    Model2,
    Model3,
    Ner,
    PseudoEblup,
    EffCounts,
}

impl ModelArg {
    fn as_str(self) -> &'static str {
        match self {
            ModelArg::Model1 => "model1",
            ModelArg::Model2 => "model2",
            ModelArg::Model3 => "model3",
            ModelArg::Ner => "ner",
            ModelArg::PseudoEblup => "pseudo-eblup",
            ModelArg::EffCounts => "eff-counts",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population CSV from a JSON generator config.
    Generate {
        /// Generator config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a sample from a population CSV.
    Sample {
        /// Population CSV (stdin if omitted).
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long, value_enum)]
        design: DesignArg,
        /// Sample size.
        #[arg(short = 'n', long = "size")]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output sample CSV path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the poststratification cell table for this sample.
        #[arg(long)]
        cells_out: Option<PathBuf>,
    },
    /// Fit a model to a drawn sample and write per-area estimates as JSON.
    Fit {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        population: PathBuf,
        /// Sample CSV as written by `sample`.
        #[arg(long)]
        sample: PathBuf,
        /// Poststratification cell CSV as written by `sample --cells-out`.
        #[arg(long)]
        cells: Option<PathBuf>,
        /// Area adjacency edge list CSV (`from,to`) for spatial variants.
        #[arg(long)]
        adjacency: Option<PathBuf>,
        /// Optional prior/model settings JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        chains: usize,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 500)]
        warmup: usize,
        /// Output JSON path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a repeated-sampling simulation study from a JSON config.
    Simulate {
        /// Simulation config JSON (same schema as the written manifest's
        /// `config` field).
        #[arg(long)]
        config: PathBuf,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Convergence diagnostics (R-hat, ESS) for a posterior draws CSV.
    Diagnose {
        /// Draws CSV as written by the sampler (leading `chain` column).
        #[arg(long)]
        draws: PathBuf,
        /// Output CSV path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Prior and model-shape settings supplied as JSON; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitSettings {
    sigma2_beta: Option<f64>,
    kappa: Option<f64>,
    /// Area effect family for `eff-counts`: "iid", "icar", or "car".
    effects: Option<String>,
    /// Weight bin cap for `model2`.
    max_weight_bins: Option<usize>,
    /// `model3` selection model: "weight-regression" (default) or "joint".
    mode: Option<String>,
}

#[derive(Serialize)]
struct AreaOut {
    area_id: usize,
    estimate: Option<f64>,
    se: Option<f64>,
    lo95: Option<f64>,
    hi95: Option<f64>,
}

#[derive(Serialize)]
struct FitOut {
    model: String,
    areas: Vec<AreaOut>,
}

fn main() {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Numerical(_) => 3,
                _ => 2,
            };
            std::process::exit(code);
        }
    }
}

fn write_or_stdout<F>(out: Option<&Path>, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(path)?;
            f(&mut file)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(f)?)
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { config, seed, out } => {
            let mut gen: GeneratorConfig = read_json(&config)?;
            if let Some(s) = seed {
                gen.seed = s;
            }
            let pop = generate_population(&gen)?;
            eprintln!(
                "progress generated units={} areas={}",
                pop.total_size(),
                pop.n_areas()
            );
            match out {
                Some(path) => write_population_path(&pop, path),
                None => write_or_stdout(None, |w| write_population(&pop, w)),
            }
        }
        Command::Sample {
            population,
            design,
            n,
            seed,
            out,
            cells_out,
        } => {
            let pop = match &population {
                Some(path) => read_population_path(path)?,
                None => read_population(std::io::stdin().lock())?,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draw = match design {
                DesignArg::Srs => draw_srs(pop.total_size(), n, &mut rng)?,
                DesignArg::Midzuno => {
                    let sizes: Vec<f64> = pop.units.iter().map(|u| u.size_value).collect();
                    draw_midzuno(&sizes, n, &mut rng)?
                }
                DesignArg::Pps => {
                    let sizes: Vec<f64> = pop.units.iter().map(|u| u.size_value).collect();
                    draw_pps_systematic(&sizes, n, &mut rng)?
                }
            };
            eprintln!(
                "progress sampled n={} design={:?}",
                draw.n(),
                draw.design_tag
            );
            if let Some(path) = cells_out {
                write_cells(&pop, &draw, &path)?;
            }
            match out {
                Some(path) => draw.write_csv_path(path),
                None => write_or_stdout(None, |w| draw.write_csv(w)),
            }
        }
        Command::Fit {
            model,
            population,
            sample,
            cells,
            adjacency,
            config,
            seed,
            chains,
            iters,
            warmup,
            out,
        } => {
            let settings: FitSettings = match config {
                Some(path) => read_json(&path)?,
                None => FitSettings::default(),
            };
            let pop = read_population_path(&population)?;
            let draw = SampleDraw::read_csv_path(&sample, DesignTag::MidzunoPps)?;
            let budget = McmcBudget {
                chains,
                warmup,
                iters,
                progress: true,
            };
            let fits = fit_dispatch(
                model,
                &pop,
                &draw,
                cells.as_deref(),
                adjacency.as_deref(),
                &settings,
                &budget,
                seed,
            )?;
            let report = FitOut {
                model: model.as_str().to_string(),
                areas: fits
                    .into_iter()
                    .enumerate()
                    .map(|(a, f)| AreaOut {
                        area_id: a,
                        estimate: f.est,
                        se: f.se,
                        lo95: f.lo,
                        hi95: f.hi,
                    })
                    .collect(),
            };
            write_or_stdout(out.as_deref(), |w| {
                serde_json::to_writer_pretty(&mut *w, &report)?;
                writeln!(w)?;
                Ok(())
            })
        }
        Command::Simulate {
            config,
            out,
            seed,
            chains,
            iters,
            warmup,
        } => {
            let mut sim: SimConfig = read_json(&config)?;
            if let Some(s) = seed {
                sim.base_seed = s;
            }
            if let Some(c) = chains {
                sim.chains = c;
            }
            if let Some(i) = iters {
                sim.iters = i;
            }
            if let Some(wu) = warmup {
                sim.warmup = wu;
            }
            let report = simharness::run(&sim)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            simharness::report_write(&report, &sim, &out)?;
            eprintln!("progress report written to {}", out.display());
            Ok(())
        }
        Command::Diagnose { draws, out } => {
            let f = std::fs::File::open(&draws)
                .map_err(|e| Error::Config(format!("cannot open {}: {e}", draws.display())))?;
            let posterior = PosteriorDraws::read_csv(f)?;
            let table = diagnostics(&posterior);
            write_or_stdout(out.as_deref(), |w| {
                let mut wtr = csv::Writer::from_writer(w);
                wtr.write_record(["parameter", "rhat", "ess"])?;
                for d in &table {
                    wtr.write_record(&[
                        d.name.clone(),
                        d.rhat.map(|r| format!("{r:.6}")).unwrap_or_default(),
                        format!("{:.3}", d.ess),
                    ])?;
                }
                wtr.flush()?;
                Ok(())
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fit_dispatch(
    model: ModelArg,
    pop: &Population,
    draw: &SampleDraw,
    cells_path: Option<&Path>,
    adjacency_path: Option<&Path>,
    settings: &FitSettings,
    budget: &McmcBudget,
    seed: u64,
) -> Result<Vec<AreaFit>> {
    let data = extract_sample(pop, draw);
    let require_cells = |name: &str| -> Result<Vec<CellData>> {
        let path = cells_path.ok_or_else(|| {
            Error::Config(format!(
                "model {name} needs a poststratification cell table: pass --cells"
            ))
        })?;
        read_cells(pop, path)
    };
    match model {
        ModelArg::Model1 => {
            let cells = require_cells("model1")?;
            simharness::fit_model1(budget, pop, &data, &cells, seed)
        }
        ModelArg::Model2 => {
            let bins = settings.max_weight_bins.unwrap_or(25);
            simharness::fit_model2(budget, bins, pop, &data, seed)
        }
        ModelArg::Model3 => {
            let cells = require_cells("model3")?;
            match settings.mode.as_deref() {
                None | Some("weight-regression") => {
                    simharness::fit_model3(budget, pop, &data, &cells, seed)
                }
                Some(other) => Err(Error::Config(format!(
                    "unsupported model3 mode '{other}' (expected weight-regression)"
                ))),
            }
        }
        ModelArg::Ner => {
            let xbar = simharness::population_xbar(pop);
            simharness::fit_ner_eblup(pop, &data, &xbar)
        }
        ModelArg::PseudoEblup => {
            let xbar = simharness::population_xbar(pop);
            simharness::fit_pseudo(pop, &data, &xbar)
        }
        ModelArg::EffCounts => fit_eff_counts(pop, &data, adjacency_path, settings, budget, seed),
    }
}

/// Area-level effective-counts model: Kish effective sample sizes and
/// weighted case counts per area, a linear predictor on the population mean
/// design row, and an iid/ICAR/CAR area effect.
fn fit_eff_counts(
    pop: &Population,
    data: &simharness::SampleData,
    adjacency_path: Option<&Path>,
    settings: &FitSettings,
    budget: &McmcBudget,
    seed: u64,
) -> Result<Vec<AreaFit>> {
    let m = pop.n_areas();
    let kish = design_effect_and_kish(&data.y, &data.weights, &data.area_ids, m)?;
    let mut ystar = Vec::with_capacity(m);
    let mut nprime = Vec::with_capacity(m);
    for (a, k) in kish.iter().enumerate() {
        let k = k.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "eff-counts needs sampled units in every area; area {a} is empty"
            ))
        })?;
        ystar.push(k.effective_cases.min(k.n_eff).max(0.0));
        nprime.push(k.n_eff);
    }
    let effects = match settings.effects.as_deref() {
        None | Some("iid") => RandomEffects::Iid,
        Some("icar") => RandomEffects::Icar,
        Some("car") => RandomEffects::Car,
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown effects family '{other}' (expected iid, icar, or car)"
            )))
        }
    };
    let adjacency = match (effects, adjacency_path) {
        (RandomEffects::Iid, _) => None,
        (_, Some(path)) => Some(read_adjacency(path, m)?),
        (_, None) => {
            return Err(Error::Config(
                "spatial effects need an edge list: pass --adjacency".to_string(),
            ))
        }
    };
    let x_rows = simharness::population_xbar(pop);
    let mut spec = EffectiveCountsSpec::new(ystar, nprime, x_rows.clone(), effects, adjacency);
    if let Some(s2) = settings.sigma2_beta {
        spec.sigma2_beta = s2;
    }
    if let Some(k) = settings.kappa {
        spec.kappa = k;
    }
    let d = effective_counts_logdensity(&spec)?;
    let draws = hmc_sample(
        &d,
        &HmcConfig {
            chains: budget.chains,
            warmup: budget.warmup,
            iters: budget.iters,
            seed,
            ..Default::default()
        },
    )?;
    if budget.progress {
        let accepts: Vec<String> = draws
            .accept_rates
            .iter()
            .map(|a| format!("{a:.3}"))
            .collect();
        eprintln!("progress fit=eff-counts accept={}", accepts.join(","));
    }
    let beta_cols = draws.block_indices("beta");
    let u_cols = draws.block_indices("u");
    let rows: Vec<Vec<f64>> = (0..draws.n_rows())
        .map(|r| {
            let row = draws.row(r);
            (0..m)
                .map(|a| {
                    let eta: f64 = beta_cols
                        .iter()
                        .zip(&x_rows[a])
                        .map(|(&j, &x)| row[j] * x)
                        .sum::<f64>()
                        + row[u_cols[a]];
                    1.0 / (1.0 + (-eta).exp())
                })
                .collect()
        })
        .collect();
    Ok(aggregate(&rows)?
        .into_iter()
        .map(|s| AreaFit {
            est: Some(s.mean),
            se: Some(s.sd),
            lo: Some(s.lo95),
            hi: Some(s.hi95),
        })
        .collect())
}

/// Cell table CSV: area_id, one column per covariate, population and sample
/// counts, and the number of sampled positives in the cell.
fn write_cells(pop: &Population, draw: &SampleDraw, path: &Path) -> Result<()> {
    let cells = index_cells(pop, draw)?;
    let mut positives: std::collections::BTreeMap<(usize, Vec<usize>), usize> =
        std::collections::BTreeMap::new();
    for &id in &draw.indices {
        let u = &pop.units[id];
        if u.y_binary == 1 {
            *positives
                .entry((u.area_id, u.covariates.clone()))
                .or_insert(0) += 1;
        }
    }
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["area_id".to_string()];
    header.extend(pop.covariate_names.iter().cloned());
    header.extend([
        "n_pop".to_string(),
        "n_sample".to_string(),
        "positives".to_string(),
    ]);
    wtr.write_record(&header)?;
    for c in &cells {
        let pos = positives
            .get(&(c.area_id, c.covariate_key.clone()))
            .copied()
            .unwrap_or(0);
        let mut rec = vec![c.area_id.to_string()];
        rec.extend(c.covariate_key.iter().map(|k| k.to_string()));
        rec.extend([
            c.population_count.to_string(),
            c.sample_count.to_string(),
            pos.to_string(),
        ]);
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

fn read_cells(pop: &Population, path: &Path) -> Result<Vec<CellData>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("cannot read cells file {}: {e}", path.display())))?;
    let n_cov = pop.covariate_levels.len();
    let expected = 1 + n_cov + 3;
    let mut cells = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 2;
        let rec = rec?;
        if rec.len() != expected {
            return Err(Error::Parse {
                row,
                msg: format!("expected {expected} columns, got {}", rec.len()),
            });
        }
        let parse_usize = |k: usize| -> Result<usize> {
            rec[k].trim().parse().map_err(|_| Error::Parse {
                row,
                msg: format!("invalid integer '{}'", &rec[k]),
            })
        };
        let area_id = parse_usize(0)?;
        let key: Vec<usize> = (0..n_cov)
            .map(|j| parse_usize(1 + j))
            .collect::<Result<_>>()?;
        let n_pop = parse_usize(1 + n_cov)?;
        let n_sample = parse_usize(2 + n_cov)?;
        let sampled_positives = parse_usize(3 + n_cov)?;
        cells.push(CellData {
            area_id,
            x_row: design_row(&key, &pop.covariate_levels),
            n_pop,
            n_sample,
            sampled_positives,
        });
    }
    if cells.is_empty() {
        return Err(Error::Data("cells file has no rows".to_string()));
    }
    Ok(cells)
}

/// Edge list CSV with a `from,to` header; areas are 0-based.
fn read_adjacency(path: &Path, m: usize) -> Result<Adjacency> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| {
        Error::Config(format!(
            "cannot read adjacency file {}: {e}",
            path.display()
        ))
    })?;
    let mut edges = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 2;
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                row,
                msg: format!("expected 2 columns, got {}", rec.len()),
            });
        }
        let parse = |k: usize| -> Result<usize> {
            rec[k].trim().parse().map_err(|_| Error::Parse {
                row,
                msg: format!("invalid area id '{}'", &rec[k]),
            })
        };
        edges.push((parse(0)?, parse(1)?));
    }
    Adjacency::new(m, edges)
}
