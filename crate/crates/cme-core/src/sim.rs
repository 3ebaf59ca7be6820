//! Simulation harness: true-covariance generators, dataset generation, and
//! the replication loop producing per-replication metric rows for the
//! benchmark scenarios.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{fit_cme, point_predictions, posterior_predict};
use crate::linalg::psd_factor;
use crate::metrics::{
    coverage_and_width, coverage_and_width_by_group, mspe, prediction_risk, relative_metric,
    tpr_fpr,
};
use crate::model::{
    CmeRng, DataSet, FitConfig, SeedPlan, SigmaStructure, SubjectBlock, TruthSpec,
};
use crate::oracle::{fit_oracle_hs, oracle_posterior_predict};
use crate::selection::{credible_intervals, s2m_select};

/// Fixed-effects design distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XDesign {
    /// Entries iid standard normal.
    Independent,
    /// Rows drawn from N(0, Sigma_X) with Toeplitz Sigma_X = 0.5^|j-j'|.
    Toeplitz,
}

impl XDesign {
    pub fn as_str(&self) -> &'static str {
        match self {
            XDesign::Independent => "independent",
            XDesign::Toeplitz => "toeplitz",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(XDesign::Independent),
            "toeplitz" => Ok(XDesign::Toeplitz),
            other => Err(Error::Config(format!(
                "unknown x design '{other}' (expected independent or toeplitz)"
            ))),
        }
    }
}

/// One benchmark scenario. The defaults reproduce the reference setup:
/// p = 300, q = 14, n = 36 train subjects, 12 test subjects, the first five
/// coefficients (1, 0.5, 0.2, 0.1, 0.05) and the rest zero.
#[derive(Debug, Clone)]
pub struct SimScenario {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    /// Observations per subject.
    pub m: usize,
    pub sigma: SigmaStructure,
    pub x_design: XDesign,
    pub replications: usize,
    pub test_subjects: usize,
    pub seed: u64,
    /// True error variance; the benchmark setup leaves it unspecified, so it
    /// is configurable and defaults to 1.
    pub tau0_sq: f64,
    /// Sampler settings; `fit.k1` and `fit.k2` are the scenario's
    /// compression dimensions.
    pub fit: FitConfig,
}

impl SimScenario {
    /// Benchmark-scale scenario with a desk-scale replication default of 10.
    pub fn benchmark_default(sigma: SigmaStructure, m: usize, k1: usize, k2: usize) -> Self {
        Self {
            p: 300,
            q: 14,
            n: 36,
            m,
            sigma,
            x_design: XDesign::Independent,
            replications: 10,
            test_subjects: 12,
            seed: 0,
            tau0_sq: 1.0,
            fit: FitConfig { k1, k2, ..FitConfig::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if self.p == 0 || self.q == 0 || self.n == 0 || self.m == 0 {
            return Err(Error::Config("all scenario dimensions must be positive".into()));
        }
        if self.fit.k1 > self.q || self.fit.k2 > self.q {
            return Err(Error::Config(format!(
                "compression dimensions ({}, {}) must not exceed q = {}",
                self.fit.k1, self.fit.k2, self.q
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("need at least one replication".into()));
        }
        if !(self.tau0_sq > 0.0 && self.tau0_sq.is_finite()) {
            return Err(Error::Config(format!("tau0_sq must be positive, got {}", self.tau0_sq)));
        }
        Ok(())
    }

    /// The nine (sigma, m) benchmark settings at fixed compression.
    pub fn sigma_by_m_grid(k1: usize, k2: usize) -> Vec<SimScenario> {
        let sigmas =
            [SigmaStructure::Diagonal, SigmaStructure::BlockDiagonal, SigmaStructure::Toeplitz];
        let ms = [4usize, 8, 12];
        let mut grid = Vec::new();
        for sigma in sigmas {
            for m in ms {
                grid.push(SimScenario::benchmark_default(sigma, m, k1, k2));
            }
        }
        grid
    }

    /// The nine (k1, k2) compression settings at a fixed (sigma, m).
    pub fn compression_grid(sigma: SigmaStructure, m: usize) -> Vec<SimScenario> {
        let ks = [3usize, 7, 14];
        let mut grid = Vec::new();
        for k1 in ks {
            for k2 in ks {
                grid.push(SimScenario::benchmark_default(sigma, m, k1, k2));
            }
        }
        grid
    }
}

/// The three true covariance structures.
///
/// Diagonal: `Sigma_ii = 0.5` for `1 <= i <= ceil(q/2)`, zero elsewhere.
/// Block-diagonal (q = 14 only): `Sigma = L Lᵀ` with rank `ceil(log q)` = 3,
/// column supports rows 1-5, 6-10, 11-14, entries Uniform[0, 3].
/// Toeplitz: `Sigma_ij = 0.5^|i-j|`.
pub fn gen_sigma<R: Rng>(label: SigmaStructure, q: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    match label {
        SigmaStructure::Diagonal => {
            let mut sigma = DMatrix::zeros(q, q);
            for i in 0..q.div_ceil(2) {
                sigma[(i, i)] = 0.5;
            }
            Ok(sigma)
        }
        SigmaStructure::BlockDiagonal => {
            if q != 14 {
                return Err(Error::Config(format!(
                    "block-diagonal structure defines row supports for q = 14 only, got q = {q}"
                )));
            }
            let uniform = Uniform::new(0.0f64, 3.0).expect("valid range");
            let mut l = DMatrix::zeros(q, 3);
            let supports = [(0usize, 5usize), (5, 10), (10, 14)];
            for (col, (lo, hi)) in supports.into_iter().enumerate() {
                for row in lo..hi {
                    l[(row, col)] = uniform.sample(rng);
                }
            }
            Ok(&l * l.transpose())
        }
        SigmaStructure::Toeplitz => {
            Ok(DMatrix::from_fn(q, q, |i, j| 0.5f64.powi((i as i32 - j as i32).abs())))
        }
    }
}

/// The benchmark true coefficient vector: (1, 0.5, 0.2, 0.1, 0.05, 0, ..., 0).
pub fn benchmark_beta0(p: usize) -> DVector<f64> {
    let mut beta = DVector::zeros(p);
    let head = [1.0, 0.5, 0.2, 0.1, 0.05];
    for (j, v) in head.iter().enumerate().take(p.min(head.len())) {
        beta[j] = *v;
    }
    beta
}

/// Design matrices (X_i, Z_i) for a set of subjects, before responses exist.
#[derive(Debug, Clone)]
pub struct DesignSet {
    pub blocks: Vec<(String, DMatrix<f64>, DMatrix<f64>)>,
}

/// Draws the per-subject designs: Z entries always iid N(0,1); X either iid
/// N(0,1) or rows from the Toeplitz-correlated Gaussian.
pub fn gen_design<R: Rng>(
    n: usize,
    m: usize,
    p: usize,
    q: usize,
    x_design: XDesign,
    id_prefix: &str,
    rng: &mut R,
) -> Result<DesignSet> {
    let x_root = match x_design {
        XDesign::Independent => None,
        XDesign::Toeplitz => {
            let sigma_x = DMatrix::from_fn(p, p, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
            Some(psd_factor(&sigma_x)?)
        }
    };
    let mut blocks = Vec::with_capacity(n);
    for i in 0..n {
        let x = match &x_root {
            None => DMatrix::from_fn(m, p, |_, _| StandardNormal.sample(rng)),
            Some(root) => {
                // Each row is root * z for iid standard normal z.
                let mut x = DMatrix::zeros(m, p);
                for r in 0..m {
                    let z = crate::linalg::standard_normal_vector(p, rng);
                    x.row_mut(r).copy_from(&(root * z).transpose());
                }
                x
            }
        };
        let z = DMatrix::from_fn(m, q, |_, _| StandardNormal.sample(rng));
        blocks.push((format!("{id_prefix}{}", i + 1), x, z));
    }
    Ok(DesignSet { blocks })
}

/// Generates responses on a fixed design under the truth:
/// `y_i = X_i beta0 + Z_i b_i + eps_i` with `b_i ~ N(0, tau0_sq Sigma0)` and
/// `eps_i ~ N(0, tau0_sq I)`.
pub fn gen_responses<R: Rng>(design: &DesignSet, truth: &TruthSpec, rng: &mut R) -> Result<DataSet> {
    let sigma_root = psd_factor(&truth.sigma0)?;
    let tau0 = truth.tau0_sq.sqrt();
    let q = truth.q();
    let mut blocks = Vec::with_capacity(design.blocks.len());
    for (id, x, z) in &design.blocks {
        let b = (&sigma_root * crate::linalg::standard_normal_vector(q, rng)) * tau0;
        let eps = crate::linalg::standard_normal_vector(x.nrows(), rng) * tau0;
        let y = x * &truth.beta0 + z * b + eps;
        blocks.push(SubjectBlock::new(id.clone(), y, x.clone(), z.clone()));
    }
    DataSet::new(blocks)
}

/// Generates one replication's train and test datasets plus the truth used.
/// Everything is deterministic given the RNG state; the block-diagonal
/// covariance is redrawn fresh per call.
pub fn gen_dataset<R: Rng>(s: &SimScenario, rng: &mut R) -> Result<(DataSet, DataSet, TruthSpec)> {
    s.validate()?;
    let sigma0 = gen_sigma(s.sigma, s.q, rng)?;
    let truth = TruthSpec::new(benchmark_beta0(s.p), sigma0, s.tau0_sq, s.sigma)?;
    let train_design = gen_design(s.n, s.m, s.p, s.q, s.x_design, "train_", rng)?;
    let test_design = gen_design(s.test_subjects, s.m, s.p, s.q, s.x_design, "test_", rng)?;
    let train = gen_responses(&train_design, &truth, rng)?;
    let test = gen_responses(&test_design, &truth, rng)?;
    Ok((train, test, truth))
}

/// All metrics recorded for one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub sigma: String,
    pub x_design: String,
    pub m: usize,
    pub k1: usize,
    pub k2: usize,
    pub seed: u64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub signal_coverage: f64,
    pub signal_width: f64,
    pub noise_coverage: f64,
    pub noise_width: f64,
    pub mspe: f64,
    pub pred_coverage: f64,
    pub pred_width: f64,
    pub risk: f64,
    pub selected_count: usize,
    pub oracle_tpr: Option<f64>,
    pub oracle_fpr: Option<f64>,
    pub oracle_signal_coverage: f64,
    pub oracle_signal_width: f64,
    pub oracle_noise_coverage: f64,
    pub oracle_noise_width: f64,
    pub oracle_mspe: f64,
    pub oracle_pred_coverage: f64,
    pub oracle_pred_width: f64,
    pub rel_mspe: f64,
    pub rel_pred_width: f64,
}

/// A completed scenario run: one row per successful replication plus the
/// failures that were skipped.
#[derive(Debug, Clone)]
pub struct ScenarioTable {
    pub rows: Vec<ReplicationRow>,
    pub failures: Vec<(usize, String)>,
}

impl ScenarioTable {
    pub fn mean_of(&self, f: impl Fn(&ReplicationRow) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter_map(&f).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Runs every replication of a scenario (in parallel), fitting both the
/// compressed model and the oracle baseline and computing the full metric
/// set. Per-replication failures are recorded and the run continues.
pub fn run_scenario(s: &SimScenario, mut sink: impl FnMut(&ReplicationRow)) -> Result<ScenarioTable> {
    s.validate()?;
    let plan = SeedPlan::new(s.seed);
    let results: Vec<(usize, std::result::Result<ReplicationRow, String>)> = (0..s.replications)
        .into_par_iter()
        .map(|rep| {
            let row = run_replication(s, rep, plan.replication_seed(rep));
            (rep, row.map_err(|e| e.to_string()))
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in results {
        match outcome {
            Ok(row) => {
                sink(&row);
                rows.push(row);
            }
            Err(msg) => failures.push((rep, msg)),
        }
    }
    Ok(ScenarioTable { rows, failures })
}

fn run_replication(s: &SimScenario, rep: usize, rep_seed: u64) -> Result<ReplicationRow> {
    let seeds = SeedPlan::new(rep_seed);
    let mut data_rng = CmeRng::seed_from_u64(seeds.data_seed());
    let (train, test, truth) = gen_dataset(s, &mut data_rng)?;

    let cfg = FitConfig { seed: rep_seed, ..s.fit };
    let fit = fit_cme(&train, &cfg)?;
    let oracle_draws = fit_oracle_hs(&train, &truth, &cfg)?;

    let level = 0.95;
    let signal_mask = truth.signal_mask();
    let beta0_slice: Vec<f64> = truth.beta0.iter().cloned().collect();

    // Credible intervals and selection for both samplers.
    let iv = credible_intervals(&fit.draws.beta, level)?;
    let (sig, noise) = coverage_and_width_by_group(&iv, &beta0_slice, &signal_mask)?;
    let selection = s2m_select(&fit.draws.beta, None)?;
    let (tpr, fpr) = tpr_fpr(&selection.selected, &beta0_slice)?;

    let oracle_iv = credible_intervals(&oracle_draws.beta, level)?;
    let (osig, onoise) = coverage_and_width_by_group(&oracle_iv, &beta0_slice, &signal_mask)?;
    let oracle_selection = s2m_select(&oracle_draws.beta, None)?;
    let (otpr, ofpr) = tpr_fpr(&oracle_selection.selected, &beta0_slice)?;

    // Posterior predictive on the held-out subjects.
    let mut pred_rng = CmeRng::seed_from_u64(seeds.chain_seed() ^ 0x5eed);
    let pred = posterior_predict(&fit.draws, &test, &fit.proj, &mut pred_rng)?;
    let opred = oracle_posterior_predict(&oracle_draws, &test, &truth, &mut pred_rng)?;

    let y_test: Vec<DVector<f64>> = test.blocks().iter().map(|b| b.y.clone()).collect();
    let y_test_flat: Vec<f64> = test.stacked_y().iter().cloned().collect();
    let split_by_subject = |v: &DVector<f64>| -> Vec<DVector<f64>> {
        let offsets = test.row_offsets();
        test.blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| DVector::from_iterator(b.m(), v.rows(offsets[i], b.m()).iter().cloned()))
            .collect()
    };

    let point = point_predictions(&pred);
    let opoint = point_predictions(&opred);
    let mspe_cme = mspe(&y_test, &split_by_subject(&point))?;
    let mspe_oracle = mspe(&y_test, &split_by_subject(&opoint))?;

    let pred_iv = credible_intervals(&pred, level)?;
    let pred_cw = coverage_and_width(&pred_iv, &y_test_flat)?;
    let opred_iv = credible_intervals(&opred, level)?;
    let opred_cw = coverage_and_width(&opred_iv, &y_test_flat)?;

    let beta_bar = DVector::from_iterator(
        fit.draws.p(),
        fit.draws.beta.column_iter().map(|c| c.sum() / fit.draws.kept() as f64),
    );
    let risk = prediction_risk(&train.stacked_x(), &truth.beta0, &beta_bar)?;

    Ok(ReplicationRow {
        rep,
        sigma: s.sigma.as_str().to_string(),
        x_design: s.x_design.as_str().to_string(),
        m: s.m,
        k1: s.fit.k1,
        k2: s.fit.k2,
        seed: rep_seed,
        tpr,
        fpr,
        signal_coverage: sig.map_or(f64::NAN, |c| c.coverage),
        signal_width: sig.map_or(f64::NAN, |c| c.mean_width),
        noise_coverage: noise.map_or(f64::NAN, |c| c.coverage),
        noise_width: noise.map_or(f64::NAN, |c| c.mean_width),
        mspe: mspe_cme,
        pred_coverage: pred_cw.coverage,
        pred_width: pred_cw.mean_width,
        risk,
        selected_count: selection.chosen_count,
        oracle_tpr: otpr,
        oracle_fpr: ofpr,
        oracle_signal_coverage: osig.map_or(f64::NAN, |c| c.coverage),
        oracle_signal_width: osig.map_or(f64::NAN, |c| c.mean_width),
        oracle_noise_coverage: onoise.map_or(f64::NAN, |c| c.coverage),
        oracle_noise_width: onoise.map_or(f64::NAN, |c| c.mean_width),
        oracle_mspe: mspe_oracle,
        oracle_pred_coverage: opred_cw.coverage,
        oracle_pred_width: opred_cw.mean_width,
        rel_mspe: relative_metric(mspe_cme, mspe_oracle)?,
        rel_pred_width: relative_metric(pred_cw.mean_width, opred_cw.mean_width)?,
    })
}
