//! Sampling designs with exact inclusion probabilities, weight scaling, and
//! an informativeness diagnostic.
//!
//! The main design is Midzuno PPS: the first unit is drawn proportional to
//! size and the remaining n-1 by simple random sampling without replacement,
//! which yields closed-form first-order inclusion probabilities.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIZE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignTag {
    Srs,
    MidzunoPps,
    StratifiedSrs,
    PpsSystematic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDraw {
    /// Selected unit ids (indices into the frame the sizes came from).
    pub indices: Vec<usize>,
    pub pi: Vec<f64>,
    pub weights: Vec<f64>,
    pub design_tag: DesignTag,
}

impl SampleDraw {
    pub fn n(&self) -> usize {
        self.indices.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["unit_id", "pi", "weight"])?;
        for k in 0..self.indices.len() {
            wtr.write_record(&[
                self.indices[k].to_string(),
                format!("{:.17e}", self.pi[k]),
                format!("{:.17e}", self.weights[k]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(f)
    }

    pub fn read_csv<R: Read>(input: R, design_tag: DesignTag) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut indices = Vec::new();
        let mut pi = Vec::new();
        let mut weights = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let row = idx + 2;
            let rec = rec?;
            let get = |k: usize| -> Result<&str> {
                rec.get(k).ok_or_else(|| Error::Parse {
                    row,
                    msg: format!("missing column {k}"),
                })
            };
            indices.push(get(0)?.trim().parse::<usize>().map_err(|e| Error::Parse {
                row,
                msg: format!("bad unit_id: {e}"),
            })?);
            let p = get(1)?.trim().parse::<f64>().map_err(|e| Error::Parse {
                row,
                msg: format!("bad pi: {e}"),
            })?;
            if !(p > 0.0 && p <= 1.0 + 1e-12) {
                return Err(Error::Parse {
                    row,
                    msg: format!("pi must be in (0,1], got {p}"),
                });
            }
            pi.push(p.min(1.0));
            weights.push(get(2)?.trim().parse::<f64>().map_err(|e| Error::Parse {
                row,
                msg: format!("bad weight: {e}"),
            })?);
        }
        if indices.is_empty() {
            return Err(Error::Data("empty sample file".to_string()));
        }
        Ok(SampleDraw {
            indices,
            pi,
            weights,
            design_tag,
        })
    }

    pub fn read_csv_path<P: AsRef<Path>>(path: P, design_tag: DesignTag) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(f, design_tag)
    }
}

/// First-order inclusion probabilities for Midzuno's scheme. With first-draw
/// probabilities q_i = s_i / sum(s),
///
///   pi_i = q_i (N - n)/(N - 1) + (n - 1)/(N - 1).
///
/// Since q_i <= 1 this always lies in ((n-1)/(N-1), 1], so no unit can
/// overshoot probability one; a clamp guards against rounding only.
pub fn midzuno_inclusion_probs(sizes: &[f64], n: usize) -> Result<Vec<f64>> {
    let n_pop = sizes.len();
    if n > n_pop {
        return Err(Error::Design(format!(
            "sample size {n} exceeds population size {n_pop}"
        )));
    }
    if n < 1 {
        return Err(Error::Design("sample size must be >= 1".to_string()));
    }
    if sizes.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Design(
            "sizes must be finite and nonnegative".to_string(),
        ));
    }
    let sizes: Vec<f64> = sizes.iter().map(|s| s.max(SIZE_FLOOR)).collect();
    if n == n_pop {
        return Ok(vec![1.0; n_pop]);
    }
    let total: f64 = sizes.iter().sum();
    let nn = n_pop as f64;
    let nf = n as f64;
    Ok(sizes
        .iter()
        .map(|s| {
            let q = s / total;
            (q * (nn - nf) / (nn - 1.0) + (nf - 1.0) / (nn - 1.0)).min(1.0)
        })
        .collect())
}

/// Draw a Midzuno sample: one unit proportional to size, the rest SRSWOR.
pub fn draw_midzuno<R: Rng>(sizes: &[f64], n: usize, rng: &mut R) -> Result<SampleDraw> {
    let pi_all = midzuno_inclusion_probs(sizes, n)?;
    let n_pop = sizes.len();
    let sizes: Vec<f64> = sizes.iter().map(|s| s.max(SIZE_FLOOR)).collect();

    let total: f64 = sizes.iter().sum();
    let mut t = rng.gen::<f64>() * total;
    let mut first = n_pop - 1;
    for (i, s) in sizes.iter().enumerate() {
        t -= s;
        if t <= 0.0 {
            first = i;
            break;
        }
    }
    let mut rest: Vec<usize> = (0..n_pop).filter(|&i| i != first).collect();
    rest.shuffle(rng);
    let mut selected = vec![first];
    selected.extend_from_slice(&rest[..n - 1]);
    selected.sort_unstable();
    let pi: Vec<f64> = selected.iter().map(|&i| pi_all[i]).collect();
    let weights: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
    Ok(SampleDraw {
        indices: selected,
        pi,
        weights,
        design_tag: DesignTag::MidzunoPps,
    })
}

/// Strict probability-proportional-to-size inclusion probabilities
/// pi_i = n s_i / sum(s), with certainty units iterated out: any unit whose
/// probability would exceed one is fixed at one and the remainder of the
/// sample is reallocated over the rest.
///
/// Unlike Midzuno's scheme (whose inclusion probabilities are dominated by
/// the SRS term once n is large), these are fully size-driven, which is what
/// makes size-correlated responses informative about selection.
pub fn pps_inclusion_probs(sizes: &[f64], n: usize) -> Result<Vec<f64>> {
    let n_pop = sizes.len();
    if n > n_pop || n == 0 {
        return Err(Error::Design(format!(
            "invalid PPS sample size {n} from population {n_pop}"
        )));
    }
    if sizes.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Design(
            "sizes must be finite and nonnegative".to_string(),
        ));
    }
    let sizes: Vec<f64> = sizes.iter().map(|s| s.max(SIZE_FLOOR)).collect();
    let mut pi = vec![0.0; n_pop];
    let mut certain = vec![false; n_pop];
    loop {
        let remaining_n = n - certain.iter().filter(|&&c| c).count();
        let total: f64 = sizes
            .iter()
            .zip(&certain)
            .filter(|(_, &c)| !c)
            .map(|(s, _)| s)
            .sum();
        let mut overshoot = false;
        for i in 0..n_pop {
            if certain[i] {
                continue;
            }
            let p = remaining_n as f64 * sizes[i] / total;
            if p >= 1.0 {
                certain[i] = true;
                pi[i] = 1.0;
                overshoot = true;
            } else {
                pi[i] = p;
            }
        }
        if !overshoot {
            break;
        }
    }
    Ok(pi)
}

/// Fixed-size PPS draw by systematic sampling on a randomly permuted frame,
/// realizing the probabilities of [`pps_inclusion_probs`] exactly.
pub fn draw_pps_systematic<R: Rng>(sizes: &[f64], n: usize, rng: &mut R) -> Result<SampleDraw> {
    let pi_all = pps_inclusion_probs(sizes, n)?;
    let n_pop = sizes.len();
    let mut order: Vec<usize> = (0..n_pop).collect();
    order.shuffle(rng);
    let start = rng.gen::<f64>();
    let mut selected = Vec::with_capacity(n);
    let mut cum = 0.0;
    // unit i covers (cum, cum + pi_i]; it is selected once per integer point
    // start + k inside its stretch (certainty units span a full integer)
    for &i in &order {
        let lo = cum;
        cum += pi_all[i];
        let k_lo = (lo - start).floor() as i64;
        let k_hi = (cum - start).floor() as i64;
        if k_hi > k_lo {
            selected.push(i);
        }
    }
    if selected.len() != n {
        return Err(Error::Numerical(format!(
            "systematic PPS selected {} units instead of {n}",
            selected.len()
        )));
    }
    selected.sort_unstable();
    let pi: Vec<f64> = selected.iter().map(|&i| pi_all[i]).collect();
    let weights: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
    Ok(SampleDraw {
        indices: selected,
        pi,
        weights,
        design_tag: DesignTag::PpsSystematic,
    })
}

/// Simple random sample without replacement.
pub fn draw_srs<R: Rng>(n_pop: usize, n: usize, rng: &mut R) -> Result<SampleDraw> {
    if n > n_pop || n == 0 {
        return Err(Error::Design(format!(
            "invalid SRS sample size {n} from population {n_pop}"
        )));
    }
    let mut ids: Vec<usize> = (0..n_pop).collect();
    ids.shuffle(rng);
    let mut indices: Vec<usize> = ids[..n].to_vec();
    indices.sort_unstable();
    let p = n as f64 / n_pop as f64;
    Ok(SampleDraw {
        pi: vec![p; n],
        weights: vec![1.0 / p; n],
        indices,
        design_tag: DesignTag::Srs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightScaling {
    /// Scale so weights sum to the group sample size.
    SumToAreaSampleSize,
    /// Constant factor across groups chosen to preserve every group's weight
    /// sum, which forces the factor to one.
    ClusterSumPreserving,
    /// Scale so weights sum to the Kish effective sample size of the group.
    EffectiveSampleSize,
    Unscaled,
    /// Scale so weights sum to the overall sample size.
    SumToTotalSampleSize,
}

/// Rescale weights within groups (or globally for `SumToTotalSampleSize`).
pub fn scale_weights(
    weights: &[f64],
    group_ids: &[usize],
    method: WeightScaling,
) -> Result<Vec<f64>> {
    if weights.len() != group_ids.len() {
        return Err(Error::Data(
            "weights and group_ids must have the same length".to_string(),
        ));
    }
    if weights.is_empty() {
        return Err(Error::Data("empty weight vector".to_string()));
    }
    if weights.iter().any(|w| !(w > &0.0)) {
        return Err(Error::Data("weights must be positive".to_string()));
    }
    match method {
        WeightScaling::Unscaled | WeightScaling::ClusterSumPreserving => Ok(weights.to_vec()),
        WeightScaling::SumToTotalSampleSize => {
            let total: f64 = weights.iter().sum();
            let n = weights.len() as f64;
            Ok(weights.iter().map(|w| w * n / total).collect())
        }
        _ => {
            let n_groups = group_ids.iter().max().unwrap() + 1;
            let mut sum_w = vec![0.0; n_groups];
            let mut sum_w2 = vec![0.0; n_groups];
            let mut counts = vec![0usize; n_groups];
            for (&w, &g) in weights.iter().zip(group_ids) {
                sum_w[g] += w;
                sum_w2[g] += w * w;
                counts[g] += 1;
            }
            let mut factor = vec![1.0; n_groups];
            for g in 0..n_groups {
                if counts[g] == 0 {
                    continue;
                }
                let target = match method {
                    WeightScaling::SumToAreaSampleSize => counts[g] as f64,
                    WeightScaling::EffectiveSampleSize => sum_w[g] * sum_w[g] / sum_w2[g],
                    _ => unreachable!(),
                };
                factor[g] = target / sum_w[g];
            }
            Ok(weights
                .iter()
                .zip(group_ids)
                .map(|(&w, &g)| w * factor[g])
                .collect())
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InformativenessReport {
    pub weighted_mean: f64,
    pub unweighted_mean: f64,
    pub difference: f64,
    pub z_stat: Option<f64>,
    pub informative: bool,
    pub note: Option<String>,
}

/// Compare the weighted and unweighted overall means of a binary outcome. A
/// large design-based z for the difference signals informative selection.
pub fn informativeness_check(y: &[f64], weights: &[f64]) -> InformativenessReport {
    let n = y.len();
    let unweighted = y.iter().sum::<f64>() / n as f64;
    let sw: f64 = weights.iter().sum();
    let weighted = y.iter().zip(weights).map(|(yi, wi)| yi * wi).sum::<f64>() / sw;
    let diff = weighted - unweighted;
    if n < 2 {
        return InformativenessReport {
            weighted_mean: weighted,
            unweighted_mean: unweighted,
            difference: diff,
            z_stat: None,
            informative: false,
            note: Some("insufficient sample".to_string()),
        };
    }
    // linearized variance of the difference of the two ratio estimators
    let mut var = 0.0;
    for (yi, wi) in y.iter().zip(weights) {
        let d = wi / sw * (yi - weighted) - (yi - unweighted) / n as f64;
        var += d * d;
    }
    var *= n as f64 / (n as f64 - 1.0);
    let z = if var > 0.0 {
        Some(diff / var.sqrt())
    } else {
        None
    };
    InformativenessReport {
        weighted_mean: weighted,
        unweighted_mean: unweighted,
        difference: diff,
        informative: z.map(|z| z.abs() > 2.0).unwrap_or(false),
        z_stat: z,
        note: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive enumeration of Midzuno's two-stage scheme: first unit with
    /// probability s_i / sum(s), then an SRSWOR subset of size n-1 from the
    /// rest.
    fn enumerate_pi(sizes: &[f64], n: usize) -> Vec<f64> {
        let n_pop = sizes.len();
        let total: f64 = sizes.iter().sum();
        let mut pi = vec![0.0; n_pop];
        // all subsets of size n-1 of the remaining units, each equally likely
        for first in 0..n_pop {
            let p_first = sizes[first] / total;
            let others: Vec<usize> = (0..n_pop).filter(|&j| j != first).collect();
            let subsets = k_subsets(&others, n - 1);
            let p_subset = 1.0 / subsets.len() as f64;
            for sub in subsets {
                pi[first] += p_first * p_subset;
                for j in sub {
                    pi[j] += p_first * p_subset;
                }
            }
        }
        pi
    }

    fn k_subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        if items.len() < k {
            return vec![];
        }
        let mut out = Vec::new();
        for (idx, &first) in items.iter().enumerate() {
            for mut rest in k_subsets(&items[idx + 1..], k - 1) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    #[test]
    fn worked_four_unit_example() {
        // first-draw probs 0.4, 0.3, 0.2, 0.1
        let sizes = vec![4.0, 3.0, 2.0, 1.0];
        let pi = midzuno_inclusion_probs(&sizes, 2).unwrap();
        let expect = [0.6, 0.53333333333333333, 0.46666666666666667, 0.4];
        for (a, b) in pi.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((pi.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equal_sizes_reduce_to_srs() {
        let pi = midzuno_inclusion_probs(&[2.0; 10], 3).unwrap();
        for p in pi {
            assert!((p - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_enumeration_on_small_cases() {
        let sizes = vec![5.0, 1.0, 1.0, 1.0, 1.0];
        let pi = midzuno_inclusion_probs(&sizes, 3).unwrap();
        let oracle = enumerate_pi(&sizes, 3);
        for (a, b) in pi.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn property_enumeration_random_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..40 {
            let n_pop = rng.gen_range(3..=8usize);
            let n = rng.gen_range(2..=n_pop.min(4));
            let sizes: Vec<f64> = (0..n_pop).map(|_| rng.gen_range(0.2..3.0)).collect();
            let pi = midzuno_inclusion_probs(&sizes, n).unwrap();
            let oracle = enumerate_pi(&sizes, n);
            for (a, b) in pi.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-12, "sizes {sizes:?} n {n}: {a} vs {b}");
            }
            assert!((pi.iter().sum::<f64>() - n as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn extreme_sizes_stay_below_one_and_match_enumeration() {
        let sizes = vec![100.0, 1.0, 1.0, 1.0, 1.0];
        let pi = midzuno_inclusion_probs(&sizes, 3).unwrap();
        assert!(pi.iter().all(|&p| p > 0.0 && p <= 1.0));
        assert!((pi.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        let oracle = enumerate_pi(&sizes, 3);
        for (a, b) in pi.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn monte_carlo_matches_analytic() {
        let sizes = vec![3.0, 2.5, 2.0, 1.5, 1.0];
        let n = 2;
        let pi = midzuno_inclusion_probs(&sizes, n).unwrap();
        let reps = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut hits = vec![0usize; sizes.len()];
        for _ in 0..reps {
            let draw = draw_midzuno(&sizes, n, &mut rng).unwrap();
            for i in draw.indices {
                hits[i] += 1;
            }
        }
        for (i, &h) in hits.iter().enumerate() {
            let p_hat = h as f64 / reps as f64;
            let se = (pi[i] * (1.0 - pi[i]) / reps as f64).sqrt();
            assert!(
                (p_hat - pi[i]).abs() < 3.0 * se.max(1e-4),
                "unit {i}: {p_hat} vs {}",
                pi[i]
            );
        }
    }

    #[test]
    fn census_sample_has_unit_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draw = draw_midzuno(&[1.0, 5.0, 2.0], 3, &mut rng).unwrap();
        assert_eq!(draw.indices, vec![0, 1, 2]);
        assert!(draw.pi.iter().all(|&p| p == 1.0));
        assert!(draw.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn draw_is_deterministic_and_fixed_size() {
        let sizes: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let a = draw_midzuno(&sizes, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = draw_midzuno(&sizes, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 10);
        let mut sorted = a.indices.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        for (p, w) in a.pi.iter().zip(&a.weights) {
            assert!((p * w - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn scaling_methods() {
        // equal weights, per-group: all scaled weights are 1
        let w = vec![3.0; 6];
        let g = vec![0, 0, 0, 1, 1, 1];
        let s = scale_weights(&w, &g, WeightScaling::SumToAreaSampleSize).unwrap();
        assert!(s.iter().all(|&x| (x - 1.0).abs() < 1e-14));

        // Kish target: weights (1,1,2) -> n_eff = 16/6
        let w = vec![1.0, 1.0, 2.0];
        let g = vec![0, 0, 0];
        let s = scale_weights(&w, &g, WeightScaling::EffectiveSampleSize).unwrap();
        let total: f64 = s.iter().sum();
        assert!((total - 16.0 / 6.0).abs() < 1e-12, "{total}");

        // Unscaled is the identity
        let w = vec![0.5, 2.0, 7.0];
        let s = scale_weights(&w, &g, WeightScaling::Unscaled).unwrap();
        assert_eq!(s, w);

        // overall scaling sums to n
        let w = vec![10.0, 20.0, 5.0, 5.0];
        let g = vec![0, 0, 1, 1];
        let s = scale_weights(&w, &g, WeightScaling::SumToTotalSampleSize).unwrap();
        assert!((s.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_method_one_is_idempotent() {
        let w = vec![1.0, 4.0, 2.5, 8.0, 3.0];
        let g = vec![0, 0, 1, 1, 1];
        let once = scale_weights(&w, &g, WeightScaling::SumToAreaSampleSize).unwrap();
        let twice = scale_weights(&once, &g, WeightScaling::SumToAreaSampleSize).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn informativeness_flags() {
        // equal weights: the two means coincide, z ~ 0
        let y = vec![0.0, 1.0, 1.0, 0.0, 1.0];
        let w = vec![2.0; 5];
        let rep = informativeness_check(&y, &w);
        assert!((rep.difference).abs() < 1e-14);
        assert!(!rep.informative);

        // single observation: degenerate
        let rep = informativeness_check(&[1.0], &[2.0]);
        assert_eq!(rep.note.as_deref(), Some("insufficient sample"));

        // strong negative weight-response association
        let n = 400;
        let y: Vec<f64> = (0..n).map(|i| f64::from(i % 2 == 0)).collect();
        let w: Vec<f64> = y
            .iter()
            .map(|&yi| if yi > 0.5 { 1.0 } else { 10.0 })
            .collect();
        let rep = informativeness_check(&y, &w);
        assert!(rep.informative, "z = {:?}", rep.z_stat);
    }

    #[test]
    fn sample_csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draw = draw_midzuno(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, &mut rng).unwrap();
        let mut buf = Vec::new();
        draw.write_csv(&mut buf).unwrap();
        let back = SampleDraw::read_csv(buf.as_slice(), DesignTag::MidzunoPps).unwrap();
        assert_eq!(draw, back);
    }

    #[test]
    fn oversized_sample_rejected() {
        assert!(matches!(
            midzuno_inclusion_probs(&[1.0, 1.0], 3),
            Err(Error::Design(_))
        ));
    }

    #[test]
    fn pps_probs_sum_to_n_and_scale_with_size() {
        let sizes = vec![1.0, 2.0, 3.0, 4.0, 10.0];
        let pi = pps_inclusion_probs(&sizes, 2).unwrap();
        assert!((pi.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        // no certainty unit here: 2*10/20 = 1.0 exactly triggers iteration
        assert_eq!(pi[4], 1.0);
        // remaining single slot allocated proportional to size
        for (i, s) in sizes.iter().take(4).enumerate() {
            assert!((pi[i] - s / 10.0).abs() < 1e-12, "unit {i}");
        }
    }

    #[test]
    fn pps_certainty_iteration_cascades() {
        // fixing the giant at one pushes the next-largest over one as well
        let sizes = vec![100.0, 9.0, 1.0, 1.0, 1.0];
        let pi = pps_inclusion_probs(&sizes, 3).unwrap();
        assert_eq!(pi[0], 1.0);
        assert_eq!(pi[1], 1.0);
        assert!((pi.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        assert!((pi[2] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pps_systematic_is_fixed_size_and_matches_probs() {
        let sizes = vec![5.0, 1.0, 2.0, 1.5, 0.5, 3.0, 2.0, 1.0];
        let pi = pps_inclusion_probs(&sizes, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 100_000;
        let mut hits = vec![0usize; sizes.len()];
        for _ in 0..reps {
            let draw = draw_pps_systematic(&sizes, 3, &mut rng).unwrap();
            assert_eq!(draw.n(), 3);
            for &i in &draw.indices {
                hits[i] += 1;
            }
        }
        for i in 0..sizes.len() {
            let freq = hits[i] as f64 / reps as f64;
            let se = (pi[i] * (1.0 - pi[i]) / reps as f64).sqrt();
            assert!(
                (freq - pi[i]).abs() < 3.5 * se.max(1e-4),
                "unit {i}: {freq} vs {}",
                pi[i]
            );
        }
    }

    #[test]
    fn pps_systematic_always_takes_certainty_units() {
        let sizes = vec![100.0, 1.0, 1.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let draw = draw_pps_systematic(&sizes, 2, &mut rng).unwrap();
            assert!(draw.indices.contains(&0));
            assert_eq!(
                draw.pi[draw.indices.iter().position(|&i| i == 0).unwrap()],
                1.0
            );
        }
    }
}
