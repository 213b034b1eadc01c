//! Analytic success-rate model: binomial outlier and inlier vote laws per
//! voting cell and the probability that the voting peak holds two inliers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// Saddle-point binomial after Loader (2000), as in R's dbinom.
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ln(n!) - ((n + 1/2) ln n - n + ln sqrt(2 pi))` for integers 0..=15.
const STIRLERR_SMALL: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_26,
    0.041_340_695_955_409_29,
    0.027_677_925_684_998_34,
    0.020_790_672_103_765_093,
    0.016_644_691_189_821_193,
    0.013_876_128_823_070_748,
    0.011_896_709_945_891_77,
    0.010_411_265_261_972_096,
    0.009_255_462_182_712_733,
    0.008_330_563_433_362_871,
    0.007_573_675_487_951_841,
    0.006_942_840_107_209_53,
    0.006_408_994_188_004_207,
    0.005_951_370_112_758_848,
    0.005_554_733_551_962_801,
];

fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        return STIRLERR_SMALL[n as usize];
    }
    let n = n as f64;
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, evaluated stably near `x = np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

fn ln_binomial_pmf(x: u64, n: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    if p == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if x == n { 0.0 } else { f64::NEG_INFINITY };
    }
    if x > n {
        return f64::NEG_INFINITY;
    }
    let nf = n as f64;
    if x == 0 {
        return if n == 0 { 0.0 } else { nf * (-p).ln_1p() };
    }
    if x == n {
        return nf * p.ln();
    }
    let xf = x as f64;
    let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(xf, nf * p) - bd0(nf - xf, nf * q);
    let lf = LN_2PI + xf.ln() + (-xf / nf).ln_1p();
    lc - 0.5 * lf
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("probability {p} outside [0, 1]")))
    }
}

/// `P(X = i)` for `X ~ Binomial(n, p)`.
pub fn binomial_pmf(i: i64, p: f64, n: i64) -> Result<f64> {
    check_p(p)?;
    if n < 0 {
        return Err(Error::Domain(format!("negative trial count {n}")));
    }
    if i < 0 || i > n {
        return Ok(0.0);
    }
    Ok(ln_binomial_pmf(i as u64, n as u64, p).exp())
}

/// Probability mass on `start..start + pmf.len()`; negligible tails are cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDistribution {
    pub start: usize,
    pub pmf: Vec<f64>,
}

const PMF_CUTOFF: f64 = 1e-20;

impl CountDistribution {
    pub fn point(k: usize) -> Self {
        Self { start: k, pmf: vec![1.0] }
    }

    /// Binomial law, expanded from the mode until terms drop below 1e-20.
    pub fn binomial(n: u64, p: f64) -> Result<Self> {
        check_p(p)?;
        if p == 0.0 || n == 0 {
            return Ok(Self::point(0));
        }
        if p == 1.0 {
            return Ok(Self::point(n as usize));
        }
        let mode = (((n + 1) as f64 * p).floor() as u64).min(n);
        let term = |k: u64| ln_binomial_pmf(k, n, p).exp();
        let mut lo = mode;
        while lo > 0 && term(lo - 1) >= PMF_CUTOFF {
            lo -= 1;
        }
        let mut hi = mode;
        while hi < n && term(hi + 1) >= PMF_CUTOFF {
            hi += 1;
        }
        Ok(Self {
            start: lo as usize,
            pmf: (lo..=hi).map(term).collect(),
        })
    }

    pub fn end(&self) -> usize {
        self.start + self.pmf.len()
    }

    pub fn prob(&self, k: usize) -> f64 {
        if k < self.start {
            0.0
        } else {
            self.pmf.get(k - self.start).copied().unwrap_or(0.0)
        }
    }

    /// `P(X < j)`.
    pub fn cdf_below(&self, j: usize) -> f64 {
        if j <= self.start {
            return 0.0;
        }
        let upto = (j - self.start).min(self.pmf.len());
        self.pmf[..upto].iter().sum::<f64>().min(1.0)
    }

    pub fn total(&self) -> f64 {
        self.pmf.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.pmf
            .iter()
            .enumerate()
            .map(|(i, p)| (self.start + i) as f64 * p)
            .sum()
    }

    /// Law of the sum of two independent counts.
    pub fn convolve(&self, other: &Self) -> Self {
        let mut pmf = vec![0.0; self.pmf.len() + other.pmf.len() - 1];
        for (i, a) in self.pmf.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.pmf.iter().enumerate() {
                pmf[i + j] += a * b;
            }
        }
        Self {
            start: self.start + other.start,
            pmf,
        }
    }

    /// Masses for `0..end()` as a dense vector.
    pub fn dense(&self) -> Vec<f64> {
        (0..self.end()).map(|k| self.prob(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InlierCell {
    /// Expected inlier votes `n̄_i`.
    pub expected_inliers: f64,
    /// Per-query-feature probability of an inlier vote for this cell.
    pub p_in: f64,
}

/// Expected observables feeding the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInputs {
    /// `E[|V|]`, occupied voting cells.
    pub expected_v: f64,
    /// `E[|F_q|]`.
    pub expected_fq: f64,
    /// `E[O]`, outlier matches.
    pub expected_o: f64,
    /// Ordered by expected inliers, descending.
    pub inlier_cells: Vec<InlierCell>,
    /// `E[M] = E[O] + sum n̄_i`.
    pub expected_m: f64,
}

impl PredictionInputs {
    /// Derives `p_in = n̄ / E[|F_q|]` (clamped to 1) and `E[M]`.
    pub fn new(expected_v: f64, expected_fq: f64, expected_o: f64, inlier_means: &[f64]) -> Result<Self> {
        let inlier_cells = inlier_means
            .iter()
            .map(|&n| InlierCell {
                expected_inliers: n,
                p_in: if expected_fq > 0.0 { (n / expected_fq).min(1.0) } else { 0.0 },
            })
            .collect();
        let inputs = Self {
            expected_v,
            expected_fq,
            expected_o,
            inlier_cells,
            expected_m: expected_o + inlier_means.iter().sum::<f64>(),
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.expected_v, self.expected_fq, self.expected_o, self.expected_m];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("expected counts must be finite and non-negative".into()));
        }
        if self.expected_v < 1.0 {
            return Err(Error::Domain(format!("expected |V| = {} < 1", self.expected_v)));
        }
        for c in &self.inlier_cells {
            check_p(c.p_in)?;
            if !(c.expected_inliers >= 0.0) {
                return Err(Error::Domain("negative expected inliers".into()));
            }
        }
        if self
            .inlier_cells
            .windows(2)
            .any(|w| w[1].expected_inliers > w[0].expected_inliers)
        {
            return Err(Error::Domain("inlier profile must be non-increasing".into()));
        }
        let m = self.expected_o + self.inlier_cells.iter().map(|c| c.expected_inliers).sum::<f64>();
        if (m - self.expected_m).abs() > 1e-6 * m.max(1.0) {
            return Err(Error::Domain("expected_m differs from E[O] + sum of inliers".into()));
        }
        Ok(())
    }

    fn fq_trials(&self) -> u64 {
        self.expected_fq.round() as u64
    }
}

/// `Binomial(round(E[O]), 1 / E[|V|])`.
pub fn outlier_cell_distribution(inputs: &PredictionInputs) -> CountDistribution {
    let p = (1.0 / inputs.expected_v.max(1.0)).min(1.0);
    CountDistribution::binomial(inputs.expected_o.round() as u64, p).expect("p in range")
}

/// `Binomial(round(E[|F_q|]), p_in)`.
pub fn inlier_cell_distribution(cell: &InlierCell, inputs: &PredictionInputs) -> Result<CountDistribution> {
    CountDistribution::binomial(inputs.fq_trials(), cell.p_in)
}

/// Per-cell breakdown of a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub inputs: PredictionInputs,
    /// Probability that each inlier cell is the peak with >= 2 inlier
    /// votes. The events are disjoint, so they sum to the success rate.
    pub cell_contributions: Vec<f64>,
    pub success_probability: f64,
}

impl PredictionReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "expected_V = {}\nexpected_Fq = {}\nexpected_O = {}\nexpected_M = {}\n",
            self.inputs.expected_v, self.inputs.expected_fq, self.inputs.expected_o, self.inputs.expected_m
        );
        for (i, (c, p)) in self.inputs.inlier_cells.iter().zip(&self.cell_contributions).enumerate() {
            s.push_str(&format!(
                "cell {}: n = {:.4}, p_in = {:.6}, contribution = {:.6}\n",
                i + 1,
                c.expected_inliers,
                c.p_in,
                p
            ));
        }
        s.push_str(&format!("success_probability = {:.6}\n", self.success_probability));
        s
    }
}

const TAIL_MASS: f64 = 1e-13;

pub fn predict_success_rate(inputs: &PredictionInputs) -> f64 {
    prediction_report(inputs).success_probability
}

/// Evaluates the peak-success model. Ties go to pure outlier cells first,
/// then to inlier cells in profile order, the same order the simulation
/// uses. Inlier cell `vi` with `j` votes is the peak when pure cells and
/// earlier inlier cells hold fewer than `j` and later ones at most `j`.
pub fn prediction_report(inputs: &PredictionInputs) -> PredictionReport {
    let outlier = outlier_cell_distribution(inputs);
    let inlier: Vec<CountDistribution> = inputs
        .inlier_cells
        .iter()
        .map(|c| inlier_cell_distribution(c, inputs).expect("validated p_in"))
        .collect();
    let totals: Vec<CountDistribution> = inlier.iter().map(|d| d.convolve(&outlier)).collect();
    let pure_cells = (inputs.expected_v - inputs.inlier_cells.len() as f64).max(0.0);

    let mut contributions = Vec::with_capacity(inlier.len());
    for (vi, inl) in inlier.iter().enumerate() {
        let total = &totals[vi];
        let mut contribution = 0.0;
        let mut remaining = 1.0 - total.cdf_below(2);
        for j in 2..total.end() {
            if remaining < TAIL_MASS {
                break;
            }
            remaining -= total.prob(j);
            // P(I >= 2 and I + O = j)
            let joint: f64 = (2..=j).map(|k| inl.prob(k) * outlier.prob(j - k)).sum();
            if joint == 0.0 {
                continue;
            }
            let mut others = outlier.cdf_below(j).powf(pure_cells);
            for (v, t) in totals.iter().enumerate() {
                if v < vi {
                    others *= t.cdf_below(j);
                } else if v > vi {
                    others *= t.cdf_below(j + 1);
                }
            }
            contribution += joint * others;
        }
        contributions.push(contribution.clamp(0.0, 1.0));
    }
    let success: f64 = contributions.iter().sum();
    PredictionReport {
        inputs: inputs.clone(),
        cell_contributions: contributions,
        success_probability: success.clamp(0.0, 1.0),
    }
}

/// Scales inlier and outlier expectations linearly from `nr_old` to
/// `nr_new`, keeping `E[|V|]` and `E[|F_q|]`.
pub fn scale_inputs_for_nr(inputs: &PredictionInputs, nr_old: usize, nr_new: usize) -> PredictionInputs {
    assert!(nr_old > 0, "nr_old must be positive");
    let f = nr_new as f64 / nr_old as f64;
    PredictionInputs {
        expected_v: inputs.expected_v,
        expected_fq: inputs.expected_fq,
        expected_o: inputs.expected_o * f,
        inlier_cells: inputs
            .inlier_cells
            .iter()
            .map(|c| InlierCell {
                expected_inliers: c.expected_inliers * f,
                p_in: (c.p_in * f).min(1.0),
            })
            .collect(),
        expected_m: inputs.expected_m * f,
    }
}

/// Per-image average of occupied cells times the number of reference images.
pub fn estimate_expected_v(per_image_avg_v: f64, num_reference_images: usize) -> f64 {
    per_image_avg_v * num_reference_images as f64
}

/// How the simulation spreads outlier votes over cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutlierSampling {
    /// Every outlier vote picks one of the cells uniformly (multinomial
    /// counts, negatively correlated across cells).
    Uniform,
    /// Every cell draws its own `Binomial(O, 1/|V|)` count, the independence
    /// the model assumes.
    IndependentCells,
}

/// Direct simulation of the voting process the model describes.
///
/// Each trial draws outlier counts for `round(E[|V|])` cells and adds
/// independent binomial inlier votes to the inlier cells. Inlier cells are
/// placed last in tie order, so they lose ties against pure outlier cells
/// like in the model. A trial succeeds when the peak is an inlier cell
/// holding at least two inlier votes.
pub fn monte_carlo_success_rate(inputs: &PredictionInputs, trials: usize, seed: u64) -> f64 {
    simulate_success_rate(inputs, trials, seed, OutlierSampling::Uniform)
}

pub fn simulate_success_rate(inputs: &PredictionInputs, trials: usize, seed: u64, sampling: OutlierSampling) -> f64 {
    let cells = (inputs.expected_v.round() as usize).max(inputs.inlier_cells.len()).max(1);
    let outliers = inputs.expected_o.round() as usize;
    let first_inlier = cells - inputs.inlier_cells.len();
    let laws: Vec<Binomial> = inputs
        .inlier_cells
        .iter()
        .map(|c| Binomial::new(inputs.fq_trials(), c.p_in).expect("validated p_in"))
        .collect();
    let per_cell = Binomial::new(outliers as u64, 1.0 / cells as f64).expect("valid p");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; cells];
    let mut inl = vec![0u64; laws.len()];
    let mut hits = 0;
    for _ in 0..trials {
        match sampling {
            OutlierSampling::Uniform => {
                counts.iter_mut().for_each(|c| *c = 0);
                for _ in 0..outliers {
                    counts[rng.random_range(0..cells)] += 1;
                }
            }
            OutlierSampling::IndependentCells => {
                counts.iter_mut().for_each(|c| *c = per_cell.sample(&mut rng));
            }
        }
        for (i, law) in laws.iter().enumerate() {
            inl[i] = law.sample(&mut rng);
            counts[first_inlier + i] += inl[i];
        }
        let mut peak = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[peak] {
                peak = c;
            }
        }
        if peak >= first_inlier && inl[peak - first_inlier] >= 2 {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact_pmf(i: u64, p: f64, n: u64) -> f64 {
        let mut c = 1.0f64;
        for k in 0..i {
            c = c * (n - k) as f64 / (k + 1) as f64;
        }
        c * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32)
    }

    #[test]
    fn pmf_examples() {
        assert_eq!(binomial_pmf(0, 0.3, 0).unwrap(), 1.0);
        assert!((binomial_pmf(2, 0.5, 4).unwrap() - 0.375).abs() < 1e-14);
        assert_eq!(binomial_pmf(3, 1.0, 3).unwrap(), 1.0);
        assert_eq!(binomial_pmf(5, 0.5, 4).unwrap(), 0.0);
        assert!(matches!(binomial_pmf(1, 1.5, 3), Err(Error::Domain(_))));
        assert!(matches!(binomial_pmf(1, 0.5, -3), Err(Error::Domain(_))));
        assert!(matches!(binomial_pmf(1, f64::NAN, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn pmf_matches_direct_product() {
        for &(n, p) in &[(10u64, 0.3), (40, 0.01), (60, 0.77), (25, 0.5)] {
            for i in 0..=n {
                let a = binomial_pmf(i as i64, p, n as i64).unwrap();
                let b = exact_pmf(i, p, n);
                assert!((a - b).abs() <= 1e-12 * b.max(1e-300) + 1e-300, "n={n} p={p} i={i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn large_n_mass_is_one() {
        for &(n, p) in &[(1_000_000u64, 3e-6), (1_000_000, 0.4), (200_000, 0.999)] {
            let d = CountDistribution::binomial(n, p).unwrap();
            assert!((d.total() - 1.0).abs() < 1e-9, "n={n} p={p} total={}", d.total());
            assert!((d.mean() - n as f64 * p).abs() < 1e-6 * (n as f64 * p).max(1.0));
        }
    }

    fn inputs(v: f64, fq: f64, o: f64, n: &[f64]) -> PredictionInputs {
        PredictionInputs::new(v, fq, o, n).unwrap()
    }

    #[test]
    fn distribution_examples() {
        assert_eq!(outlier_cell_distribution(&inputs(10.0, 10.0, 0.0, &[])), CountDistribution::point(0));
        assert_eq!(outlier_cell_distribution(&inputs(1.0, 10.0, 37.0, &[])), CountDistribution::point(37));
        let d = outlier_cell_distribution(&inputs(100.0, 10.0, 200.0, &[]));
        assert!((d.mean() - 2.0).abs() < 1e-9);

        let i = inputs(10.0, 5.0, 0.0, &[5.0, 0.0]);
        assert_eq!(inlier_cell_distribution(&i.inlier_cells[0], &i).unwrap(), CountDistribution::point(5));
        assert_eq!(inlier_cell_distribution(&i.inlier_cells[1], &i).unwrap(), CountDistribution::point(0));
        let i = inputs(10.0, 500.0, 0.0, &[2.0]);
        assert!((i.inlier_cells[0].p_in - 0.004).abs() < 1e-15);
        assert!((inlier_cell_distribution(&i.inlier_cells[0], &i).unwrap().mean() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn prediction_examples() {
        assert_eq!(predict_success_rate(&inputs(50.0, 400.0, 100.0, &[])), 0.0);
        assert!((predict_success_rate(&inputs(1.0, 2.0, 0.0, &[2.0])) - 1.0).abs() < 1e-12);
        let i = inputs(50.0, 400.0, 100.0, &[3.0]);
        let p = predict_success_rate(&i);
        let independent = simulate_success_rate(&i, 100_000, 7, OutlierSampling::IndependentCells);
        assert!((p - independent).abs() <= 0.01, "model {p} vs simulation {independent}");
        // Uniform vote placement correlates the cells negatively, which the
        // model ignores; it stays within the 0.02 scenario tolerance.
        let uniform = monte_carlo_success_rate(&i, 100_000, 7);
        assert!((p - uniform).abs() <= 0.02, "model {p} vs simulation {uniform}");
    }

    #[test]
    fn scaling_examples() {
        let i = inputs(300.0, 850.0, 400.0, &[4.0, 1.0]);
        assert_eq!(scale_inputs_for_nr(&i, 850, 850), i);
        let half = scale_inputs_for_nr(&i, 850, 425);
        assert!((half.inlier_cells[0].expected_inliers - 2.0).abs() < 1e-12);
        assert!((half.expected_o - 200.0).abs() < 1e-12);
        assert_eq!(half.expected_v, 300.0);
        half.validate().unwrap();
        let mut last = 0.0;
        for x in (1..=20).map(|k| k * 85) {
            let p = predict_success_rate(&scale_inputs_for_nr(&i, 850, x));
            assert!(p >= last - 1e-9, "non-monotone at n_r={x}: {p} < {last}");
            last = p;
        }
        assert_eq!(estimate_expected_v(3.0, 2000), 6000.0);
        assert_eq!(estimate_expected_v(2.5, 1), 2.5);
    }

    #[test]
    fn report_text_lists_cells() {
        let r = prediction_report(&inputs(20.0, 100.0, 30.0, &[6.0, 2.0]));
        let t = r.to_text();
        assert!(t.contains("cell 2:") && t.contains("success_probability"));
        assert!(r.cell_contributions[0] > r.cell_contributions[1]);
    }

    #[test]
    fn competing_inlier_cells() {
        // Two comparable cells tie often; the earlier one takes the tie and
        // still holds the inliers.
        let one = predict_success_rate(&inputs(68.3, 18.0, 28.5, &[9.16]));
        let two = predict_success_rate(&inputs(68.3, 18.0, 28.5, &[9.16, 9.11]));
        assert!(one > 0.99 && two >= one, "{one} {two}");
        // A cell with no expected inliers is a pure outlier cell that loses
        // ties to the real one.
        let zero = predict_success_rate(&inputs(68.3, 18.0, 28.5, &[9.16, 0.0]));
        assert!(zero >= one && zero - one < 1e-3, "{one} {zero}");
        let i = inputs(99.0, 856.0, 108.0, &[11.4, 9.5, 7.9]);
        let sim = simulate_success_rate(&i, 100_000, 3, OutlierSampling::IndependentCells);
        assert!((predict_success_rate(&i) - sim).abs() <= 0.01);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(PredictionInputs::new(0.5, 10.0, 1.0, &[]).is_err());
        assert!(PredictionInputs::new(5.0, 10.0, 1.0, &[1.0, 2.0]).is_err());
        assert!(PredictionInputs::new(5.0, 10.0, -1.0, &[]).is_err());
    }

    proptest! {
        #[test]
        fn outlier_mass_sums_to_one(v in 1.0f64..5000.0, o in 0.0f64..100_000.0) {
            let d = outlier_cell_distribution(&inputs(v, 10.0, o, &[]));
            prop_assert!((d.total() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn prediction_in_unit_interval_and_monotone(
            v in 1.0f64..300.0,
            fq in 10.0f64..1000.0,
            o in 0.0f64..600.0,
            mut n in prop::collection::vec(0.0f64..10.0, 0..4),
            bump in 0.0f64..3.0,
        ) {
            n.sort_by(|a, b| b.total_cmp(a));
            let v = v.max(n.len() as f64 + 1.0);
            let n: Vec<f64> = n.into_iter().map(|x| x.min(fq)).collect();
            let base = inputs(v, fq, o, &n);
            let p = predict_success_rate(&base);
            prop_assert!((0.0..=1.0).contains(&p));

            let more_o = inputs(v, fq, o + 50.0, &n);
            prop_assert!(predict_success_rate(&more_o) <= p + 1e-9);

            // an extra inlier cell never hurts
            if n.len() < 3 {
                let mut extra = n.clone();
                extra.push(bump.min(n.last().copied().unwrap_or(10.0)));
                prop_assert!(predict_success_rate(&inputs(v, fq, o, &extra)) >= p - 1e-9);
            }

            // raising the leading p_in never hurts
            if !n.is_empty() {
                let mut up = n.clone();
                up[0] = (up[0] + bump).min(fq);
                prop_assert!(predict_success_rate(&inputs(v, fq, o, &up)) >= p - 1e-9);
            }

        }
    }
}
