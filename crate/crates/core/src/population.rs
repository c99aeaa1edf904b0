//! Synthetic finite populations: generation, poststratification cells, and
//! CSV round-tripping.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SampleDraw;

/// One population unit: area label, categorical covariate levels, binary and
/// continuous responses, and the size variable driving PPS selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub unit_id: usize,
    pub area_id: usize,
    pub covariates: Vec<usize>,
    pub y_binary: u8,
    pub y_continuous: f64,
    pub size_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub units: Vec<Unit>,
    pub area_sizes: Vec<usize>,
    /// Number of levels per categorical covariate, in column order.
    pub covariate_levels: Vec<usize>,
    pub covariate_names: Vec<String>,
}

impl Population {
    pub fn total_size(&self) -> usize {
        self.units.len()
    }

    pub fn n_areas(&self) -> usize {
        self.area_sizes.len()
    }

    /// Finite-population proportion of positive binary responses per area.
    pub fn area_proportions(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_areas()];
        for u in &self.units {
            counts[u.area_id] += f64::from(u.y_binary);
        }
        counts
            .iter()
            .zip(&self.area_sizes)
            .map(|(c, &n)| c / n as f64)
            .collect()
    }

    fn from_units(
        units: Vec<Unit>,
        covariate_levels: Vec<usize>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Data("no units".to_string()));
        }
        let m = units.iter().map(|u| u.area_id).max().unwrap() + 1;
        let mut area_sizes = vec![0usize; m];
        for u in &units {
            area_sizes[u.area_id] += 1;
        }
        if area_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Data("empty area in population".to_string()));
        }
        Ok(Population {
            units,
            area_sizes,
            covariate_levels,
            covariate_names,
        })
    }
}

/// Poststratification cell: one (area, covariate combination) with its
/// population and sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoststratCell {
    pub area_id: usize,
    pub covariate_key: Vec<usize>,
    pub population_count: usize,
    pub sample_count: usize,
}

/// How covariates and the size variable are simulated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub m: usize,
    pub area_sizes: Vec<usize>,
    /// Coefficients for the dummy-coded covariates, intercept first.
    pub beta_true: Vec<f64>,
    pub sigma_u_true: f64,
    /// Strength of the link between the size variable and the response.
    pub c1: f64,
    /// Intercept of the log size model.
    pub c0: f64,
    /// Noise sd of log size.
    pub sigma_z: f64,
    /// Residual sd of the continuous response.
    pub sigma_e: f64,
    /// Levels per categorical covariate.
    pub covariate_levels: Vec<usize>,
    pub covariate_names: Vec<String>,
    pub seed: u64,
}

impl GeneratorConfig {
    /// Desk-scale default: 20 areas of 1,000 units with age/race/sex
    /// covariates.
    pub fn default_desk(seed: u64) -> Self {
        let levels = vec![4, 3, 2];
        // intercept + (4-1) + (3-1) + (2-1) dummies
        let beta_true = vec![-0.7, 0.35, 0.6, 0.9, -0.4, 0.3, 0.25];
        GeneratorConfig {
            m: 20,
            area_sizes: vec![1000; 20],
            beta_true,
            sigma_u_true: 0.35,
            c1: 1.0,
            c0: 0.0,
            sigma_z: 0.5,
            sigma_e: 1.0,
            covariate_levels: levels,
            covariate_names: vec!["age".into(), "race".into(), "sex".into()],
            seed,
        }
    }

    pub fn n_dummies(&self) -> usize {
        1 + self
            .covariate_levels
            .iter()
            .map(|&l| l.saturating_sub(1))
            .sum::<usize>()
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.area_sizes.len() != self.m {
            return Err(Error::Config(format!(
                "area_sizes must have length m = {}, got {}",
                self.m,
                self.area_sizes.len()
            )));
        }
        if self.area_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config("all area sizes must be >= 1".to_string()));
        }
        if self.sigma_u_true < 0.0 {
            return Err(Error::Config("sigma_u_true must be >= 0".to_string()));
        }
        if self.covariate_levels.is_empty()
            || self.covariate_levels.iter().any(|&l| l == 0)
            || self.covariate_levels.len() != self.covariate_names.len()
        {
            return Err(Error::Config("invalid covariate schema".to_string()));
        }
        if self.beta_true.len() != self.n_dummies() {
            return Err(Error::Config(format!(
                "beta_true must have length {} (intercept + dummies), got {}",
                self.n_dummies(),
                self.beta_true.len()
            )));
        }
        Ok(())
    }
}

/// Dummy-coded design row (intercept first, reference level dropped) for one
/// unit's covariate levels.
pub fn design_row(covariates: &[usize], covariate_levels: &[usize]) -> Vec<f64> {
    let p = 1 + covariate_levels
        .iter()
        .map(|&l| l.saturating_sub(1))
        .sum::<usize>();
    let mut row = vec![0.0; p];
    row[0] = 1.0;
    let mut off = 1;
    for (c, &levels) in covariates.iter().zip(covariate_levels) {
        if *c > 0 {
            row[off + c - 1] = 1.0;
        }
        off += levels - 1;
    }
    row
}

/// Simulate a finite population: Bernoulli responses from a logistic mixed
/// model, a Gaussian continuous response sharing the linear predictor, and a
/// log-linear size variable tied to the binary response through `c1`.
pub fn generate_population(config: &GeneratorConfig) -> Result<Population> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let u_area: Vec<f64> = (0..config.m)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * config.sigma_u_true
        })
        .collect();

    let total: usize = config.area_sizes.iter().sum();
    let mut units = Vec::with_capacity(total);
    let mut unit_id = 0;
    for (area_id, &n_i) in config.area_sizes.iter().enumerate() {
        for _ in 0..n_i {
            let covariates: Vec<usize> = config
                .covariate_levels
                .iter()
                .map(|&l| rng.gen_range(0..l))
                .collect();
            let x = design_row(&covariates, &config.covariate_levels);
            let eta: f64 = x
                .iter()
                .zip(&config.beta_true)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + u_area[area_id];
            let p = 1.0 / (1.0 + (-eta).exp());
            let y_binary = u8::from(rng.gen::<f64>() < p);
            let e: f64 = StandardNormal.sample(&mut rng);
            let y_continuous = eta + config.sigma_e * e;
            let z: f64 = StandardNormal.sample(&mut rng);
            let size_value =
                (config.c0 + config.c1 * f64::from(y_binary) + config.sigma_z * z).exp();
            units.push(Unit {
                unit_id,
                area_id,
                covariates,
                y_binary,
                y_continuous,
                size_value,
            });
            unit_id += 1;
        }
    }
    Population::from_units(
        units,
        config.covariate_levels.clone(),
        config.covariate_names.clone(),
    )
}

/// Cross-classify the population into (area, covariate) cells and count how
/// many of each cell's units were sampled. Cells with no sampled units are
/// kept.
pub fn index_cells(pop: &Population, sample: &SampleDraw) -> Result<Vec<PoststratCell>> {
    let mut in_sample = vec![false; pop.total_size()];
    for &id in &sample.indices {
        if id >= pop.total_size() {
            return Err(Error::Data(format!(
                "sample unit_id {id} out of range for population of {}",
                pop.total_size()
            )));
        }
        in_sample[id] = true;
    }
    let mut cells: BTreeMap<(usize, Vec<usize>), (usize, usize)> = BTreeMap::new();
    for u in &pop.units {
        let entry = cells
            .entry((u.area_id, u.covariates.clone()))
            .or_insert((0, 0));
        entry.0 += 1;
        if in_sample[u.unit_id] {
            entry.1 += 1;
        }
    }
    Ok(cells
        .into_iter()
        .map(
            |((area_id, covariate_key), (population_count, sample_count))| PoststratCell {
                area_id,
                covariate_key,
                population_count,
                sample_count,
            },
        )
        .collect())
}

pub fn write_population<W: Write>(pop: &Population, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["unit_id".to_string(), "area_id".to_string()];
    header.extend(pop.covariate_names.iter().cloned());
    header.push("y".to_string());
    header.push("y_cont".to_string());
    header.push("size".to_string());
    wtr.write_record(&header)?;
    for u in &pop.units {
        let mut rec = vec![u.unit_id.to_string(), u.area_id.to_string()];
        rec.extend(u.covariates.iter().map(|c| c.to_string()));
        rec.push(u.y_binary.to_string());
        rec.push(format!("{:.17e}", u.y_continuous));
        rec.push(format!("{:.17e}", u.size_value));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_population_path<P: AsRef<Path>>(pop: &Population, path: P) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_population(pop, f)
}

pub fn read_population<R: Read>(input: R) -> Result<Population> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 5 || cols[0] != "unit_id" || cols[1] != "area_id" {
        return Err(Error::Data(
            "population header must start with unit_id,area_id and end with y,y_cont,size"
                .to_string(),
        ));
    }
    let tail = cols.len() - 3;
    if cols[tail] != "y" || cols[tail + 1] != "y_cont" || cols[tail + 2] != "size" {
        return Err(Error::Data(
            "population header must end with y,y_cont,size".to_string(),
        ));
    }
    let covariate_names: Vec<String> = cols[2..tail].iter().map(|s| s.to_string()).collect();

    let mut units = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 2; // 1-based, after header
        let rec = rec?;
        let parse_usize = |k: usize, what: &str| -> Result<usize> {
            rec.get(k)
                .ok_or_else(|| Error::Parse {
                    row,
                    msg: format!("missing {what}"),
                })?
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse {
                    row,
                    msg: format!("bad {what}: {e}"),
                })
        };
        let parse_f64 = |k: usize, what: &str| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::Parse {
                    row,
                    msg: format!("missing {what}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse {
                    row,
                    msg: format!("bad {what}: {e}"),
                })
        };
        let unit_id = parse_usize(0, "unit_id")?;
        let area_id = parse_usize(1, "area_id")?;
        let covariates: Vec<usize> = (2..tail)
            .map(|k| parse_usize(k, &format!("covariate {}", covariate_names[k - 2])))
            .collect::<Result<_>>()?;
        let y = parse_usize(tail, "y")?;
        if y > 1 {
            return Err(Error::Parse {
                row,
                msg: format!("y must be 0 or 1, got {y}"),
            });
        }
        let y_continuous = parse_f64(tail + 1, "y_cont")?;
        let size_value = parse_f64(tail + 2, "size")?;
        if !(size_value > 0.0) {
            return Err(Error::Parse {
                row,
                msg: format!("size must be positive, got {size_value}"),
            });
        }
        units.push(Unit {
            unit_id,
            area_id,
            covariates,
            y_binary: y as u8,
            y_continuous,
            size_value,
        });
    }
    if units.is_empty() {
        return Err(Error::Data("no units".to_string()));
    }
    let mut covariate_levels = vec![0usize; covariate_names.len()];
    for u in &units {
        for (k, &c) in u.covariates.iter().enumerate() {
            covariate_levels[k] = covariate_levels[k].max(c + 1);
        }
    }
    Population::from_units(units, covariate_levels, covariate_names)
}

pub fn read_population_path<P: AsRef<Path>>(path: P) -> Result<Population> {
    let f = std::fs::File::open(path)?;
    read_population(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;

    #[test]
    fn generator_is_deterministic() {
        let cfg = GeneratorConfig::default_desk(42);
        let a = generate_population(&cfg).unwrap();
        let b = generate_population(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn area_sizes_match_counts() {
        let cfg = GeneratorConfig::default_desk(7);
        let pop = generate_population(&cfg).unwrap();
        assert_eq!(pop.total_size(), 20_000);
        assert_eq!(pop.area_sizes, vec![1000; 20]);
        for (i, &n) in pop.area_sizes.iter().enumerate() {
            let count = pop.units.iter().filter(|u| u.area_id == i).count();
            assert_eq!(count, n);
        }
    }

    #[test]
    fn flat_model_gives_half_proportion() {
        let mut cfg = GeneratorConfig::default_desk(5);
        cfg.beta_true = vec![0.0; cfg.n_dummies()];
        cfg.sigma_u_true = 0.0;
        let pop = generate_population(&cfg).unwrap();
        let p =
            pop.units.iter().map(|u| f64::from(u.y_binary)).sum::<f64>() / pop.total_size() as f64;
        // binomial sd at N = 20000 is ~0.0035
        assert!((p - 0.5).abs() < 0.015, "p = {p}");
    }

    #[test]
    fn zero_c1_makes_size_independent_of_y() {
        let mut cfg = GeneratorConfig::default_desk(9);
        cfg.c1 = 0.0;
        let pop = generate_population(&cfg).unwrap();
        let mean_log_size = |want: u8| -> f64 {
            let sel: Vec<f64> = pop
                .units
                .iter()
                .filter(|u| u.y_binary == want)
                .map(|u| u.size_value.ln())
                .collect();
            sel.iter().sum::<f64>() / sel.len() as f64
        };
        let diff = mean_log_size(1) - mean_log_size(0);
        assert!(diff.abs() < 0.05, "diff = {diff}");
    }

    #[test]
    fn size_y_correlation_increases_with_c1() {
        let corr_at = |c1: f64| -> f64 {
            let mut acc = 0.0;
            for seed in 0..200u64 {
                let mut cfg = GeneratorConfig::default_desk(1000 + seed);
                cfg.m = 2;
                cfg.area_sizes = vec![50, 50];
                cfg.c1 = c1;
                let pop = generate_population(&cfg).unwrap();
                let ys: Vec<f64> = pop.units.iter().map(|u| f64::from(u.y_binary)).collect();
                let ss: Vec<f64> = pop.units.iter().map(|u| u.size_value).collect();
                acc += pearson(&ys, &ss);
            }
            acc / 200.0
        };
        let c_0 = corr_at(0.0);
        let c_half = corr_at(0.5);
        let c_1 = corr_at(1.0);
        assert!(c_0 < c_half && c_half < c_1, "{c_0} {c_half} {c_1}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut sa = 0.0;
        let mut sb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            sa += (x - ma).powi(2);
            sb += (y - mb).powi(2);
        }
        sab / (sa.sqrt() * sb.sqrt() + 1e-300)
    }

    #[test]
    fn cells_partition_population() {
        let mut cfg = GeneratorConfig::default_desk(3);
        cfg.m = 4;
        cfg.area_sizes = vec![200; 4];
        let pop = generate_population(&cfg).unwrap();
        let sizes: Vec<f64> = pop.units.iter().map(|u| u.size_value).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = sampling::draw_midzuno(&sizes, 80, &mut rng).unwrap();
        let cells = index_cells(&pop, &sample).unwrap();
        let total: usize = cells.iter().map(|c| c.population_count).sum();
        assert_eq!(total, pop.total_size());
        let sampled: usize = cells.iter().map(|c| c.sample_count).sum();
        assert_eq!(sampled, 80);
        assert!(cells.iter().all(|c| c.population_count >= c.sample_count));
    }

    #[test]
    fn hand_built_cells() {
        // 2 areas x 2 sex levels, 8 units
        let units: Vec<Unit> = [
            (0, 0, 0),
            (1, 0, 0),
            (2, 0, 1),
            (3, 0, 1),
            (4, 1, 0),
            (5, 1, 1),
            (6, 1, 1),
            (7, 1, 1),
        ]
        .iter()
        .map(|&(id, area, sex)| Unit {
            unit_id: id,
            area_id: area,
            covariates: vec![sex],
            y_binary: 0,
            y_continuous: 0.0,
            size_value: 1.0,
        })
        .collect();
        let pop = Population::from_units(units, vec![2], vec!["sex".into()]).unwrap();
        let sample = SampleDraw {
            indices: vec![0, 5],
            pi: vec![0.25, 0.25],
            weights: vec![4.0, 4.0],
            design_tag: sampling::DesignTag::Srs,
        };
        let cells = index_cells(&pop, &sample).unwrap();
        assert_eq!(cells.len(), 4);
        let find = |a: usize, s: usize| {
            cells
                .iter()
                .find(|c| c.area_id == a && c.covariate_key == vec![s])
                .unwrap()
        };
        assert_eq!(find(0, 0).population_count, 2);
        assert_eq!(find(0, 0).sample_count, 1);
        assert_eq!(find(0, 1).population_count, 2);
        assert_eq!(find(0, 1).sample_count, 0);
        assert_eq!(find(1, 0).population_count, 1);
        assert_eq!(find(1, 1).population_count, 3);
        assert_eq!(find(1, 1).sample_count, 1);
    }

    #[test]
    fn csv_round_trip() {
        let mut cfg = GeneratorConfig::default_desk(11);
        cfg.m = 2;
        cfg.area_sizes = vec![60, 40];
        let pop = generate_population(&cfg).unwrap();
        let mut buf = Vec::new();
        write_population(&pop, &mut buf).unwrap();
        let back = read_population(buf.as_slice()).unwrap();
        assert_eq!(pop, back);
    }

    #[test]
    fn negative_size_names_the_row() {
        let csv = "unit_id,area_id,sex,y,y_cont,size\n0,0,0,1,0.5,2.0\n1,0,1,0,0.1,-3.0\n";
        let err = read_population(csv.as_bytes()).unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_errors() {
        let csv = "unit_id,area_id,sex,y,y_cont,size\n";
        let err = read_population(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("no units"));
    }

    #[test]
    fn bad_config_rejected() {
        let mut cfg = GeneratorConfig::default_desk(1);
        cfg.beta_true.pop();
        assert!(generate_population(&cfg).is_err());
        let mut cfg = GeneratorConfig::default_desk(1);
        cfg.area_sizes = vec![0; 20];
        assert!(generate_population(&cfg).is_err());
    }
}
