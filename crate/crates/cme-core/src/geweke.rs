//! Joint-distribution test for sampler correctness: compares
//! marginal-conditional simulation (parameters from the prior, data from the
//! model) against successive-conditional simulation (alternating data
//! regeneration and Gibbs sweeps) on a small instance. A correct kernel
//! leaves the two arms with the same distribution for every test function.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gibbs::{gibbs_step, sample_inverse_gamma, FitContext};
use crate::linalg::standard_normal_vector;
use crate::model::{
    ChainState, CmeRng, DataSet, FitConfig, HorseshoeState, PriorConfig, ProjectionPair,
    SubjectBlock,
};

/// Instance dimensions for the test; small enough that both arms run in
/// seconds.
#[derive(Debug, Clone, Copy)]
pub struct GewekeDims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub k1: usize,
    pub k2: usize,
}

impl Default for GewekeDims {
    fn default() -> Self {
        Self { n: 4, m: 3, p: 5, q: 3, k1: 2, k2: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct GewekeConfig {
    pub dims: GewekeDims,
    /// Samples recorded per arm.
    pub n_samples: usize,
    /// Full data-regeneration/sweep cycles between recorded samples in the
    /// successive arm.
    pub thin: usize,
    pub seed: u64,
    /// Prior used by both arms. The default is proper with finite low-order
    /// moments (a0 = b0 = 3) so the z-statistics are well behaved; the
    /// heavy-tailed production default has no prior moments to compare.
    pub prior: PriorConfig,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self {
            dims: GewekeDims::default(),
            n_samples: 50_000,
            thin: 3,
            seed: 20_24,
            prior: PriorConfig { a0: 3.0, b0: 3.0, sigma2_gamma: 1.0 },
        }
    }
}

/// One test function's comparison across the two arms.
#[derive(Debug, Clone, Serialize)]
pub struct GewekeRow {
    pub name: String,
    pub mean_marginal: f64,
    pub mean_successive: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct GewekeReport {
    pub rows: Vec<GewekeRow>,
    pub n_samples: usize,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }
}

/// The fixed test-function set: beta_1, beta_1^2, tau2, log delta2, gamma_1.
fn test_functions(state: &ChainState) -> [f64; 5] {
    [
        state.hs.beta[0],
        state.hs.beta[0] * state.hs.beta[0],
        state.hs.tau2,
        state.hs.delta2.ln(),
        state.gamma[0],
    ]
}

const TEST_FUNCTION_NAMES: [&str; 5] = ["beta1", "beta1_sq", "tau2", "log_delta2", "gamma1"];

/// Runs the test with the production Gibbs kernel.
pub fn geweke_joint_test(cfg: &GewekeConfig) -> Result<GewekeReport> {
    geweke_joint_test_with_kernel(cfg, gibbs_step)
}

/// Runs the test with a caller-supplied kernel; fault-injection checks pass
/// a deliberately corrupted sweep to confirm the harness can detect it.
pub fn geweke_joint_test_with_kernel<K>(cfg: &GewekeConfig, mut kernel: K) -> Result<GewekeReport>
where
    K: FnMut(&mut ChainState, &FitContext, &PriorConfig, &mut CmeRng) -> Result<()>,
{
    cfg.prior.validate()?;
    let dims = cfg.dims;
    if cfg.n_samples < 100 {
        return Err(Error::Config("need at least 100 samples per arm".into()));
    }

    let mut rng = CmeRng::seed_from_u64(cfg.seed);
    let proj = ProjectionPair::draw(dims.q, dims.k1, dims.k2, rng.random())?;
    // Fixed covariates for the whole test; only responses are regenerated.
    let x_blocks: Vec<DMatrix<f64>> = (0..dims.n)
        .map(|_| DMatrix::from_fn(dims.m, dims.p, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        }))
        .collect();
    let z_blocks: Vec<DMatrix<f64>> = (0..dims.n)
        .map(|_| DMatrix::from_fn(dims.m, dims.q, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        }))
        .collect();

    // Marginal-conditional arm: iid prior draws, data simulated and
    // discarded (the test functions depend on parameters only).
    let mut marginal = vec![Vec::with_capacity(cfg.n_samples); TEST_FUNCTION_NAMES.len()];
    for _ in 0..cfg.n_samples {
        let state = draw_prior_state(&dims, &cfg.prior, &mut rng);
        let _ = simulate_responses(&state, &x_blocks, &z_blocks, &proj, &mut rng);
        for (k, v) in test_functions(&state).into_iter().enumerate() {
            marginal[k].push(v);
        }
    }

    // Successive-conditional arm: the chain starts at a prior draw (exact
    // stationarity for the joint) and alternates response regeneration with
    // kernel sweeps.
    let mut successive = vec![Vec::with_capacity(cfg.n_samples); TEST_FUNCTION_NAMES.len()];
    let mut state = draw_prior_state(&dims, &cfg.prior, &mut rng);
    for _ in 0..cfg.n_samples {
        for _ in 0..cfg.thin.max(1) {
            let data = simulate_responses(&state, &x_blocks, &z_blocks, &proj, &mut rng)?;
            let ctx = FitContext::new(&data, &proj)?;
            kernel(&mut state, &ctx, &cfg.prior, &mut rng)?;
        }
        for (k, v) in test_functions(&state).into_iter().enumerate() {
            successive[k].push(v);
        }
    }

    let rows = TEST_FUNCTION_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (mean_mc, se2_mc) = iid_mean_se2(&marginal[k]);
            let (mean_sc, se2_sc) = batch_mean_se2(&successive[k]);
            let z = (mean_mc - mean_sc) / (se2_mc + se2_sc).sqrt();
            GewekeRow { name: name.to_string(), mean_marginal: mean_mc, mean_successive: mean_sc, z }
        })
        .collect();
    Ok(GewekeReport { rows, n_samples: cfg.n_samples })
}

/// Full prior draw of the parameter state (d is transient and starts at 0).
fn draw_prior_state<R: Rng>(dims: &GewekeDims, prior: &PriorConfig, rng: &mut R) -> ChainState {
    let tau2 = sample_inverse_gamma(prior.a0, prior.b0, rng);
    let xi = sample_inverse_gamma(0.5, 1.0, rng);
    let delta2 = sample_inverse_gamma(0.5, 1.0 / xi, rng);
    let p = dims.p;
    let mut nu = DVector::zeros(p);
    let mut lambda2 = DVector::zeros(p);
    let mut beta = DVector::zeros(p);
    for j in 0..p {
        nu[j] = sample_inverse_gamma(0.5, 1.0, rng);
        lambda2[j] = sample_inverse_gamma(0.5, 1.0 / nu[j], rng);
        let sd = (lambda2[j] * delta2 * tau2).sqrt();
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        beta[j] = sd * z;
    }
    let gamma = standard_normal_vector(dims.k1 * dims.k2, rng) * prior.sigma2_gamma.sqrt();
    ChainState {
        hs: HorseshoeState { beta, tau2, lambda2, delta2, nu, xi },
        gamma,
        d: vec![DVector::zeros(dims.k2); dims.n],
    }
}

/// Simulates responses from the model at the current parameters:
/// `y_i = X_i beta + Z_i Sᵀ Γ d_i + eps_i` with `d_i ~ N(0, tau2 R Rᵀ)`.
fn simulate_responses<R: Rng>(
    state: &ChainState,
    x_blocks: &[DMatrix<f64>],
    z_blocks: &[DMatrix<f64>],
    proj: &ProjectionPair,
    rng: &mut R,
) -> Result<DataSet> {
    let tau = state.hs.tau2.sqrt();
    let gamma_mat = state.gamma_matrix(proj.k1(), proj.k2());
    let mut blocks = Vec::with_capacity(x_blocks.len());
    for (i, (x, z)) in x_blocks.iter().zip(z_blocks).enumerate() {
        let d_i = proj.rrt_chol() * standard_normal_vector(proj.k2(), rng) * tau;
        let eps = standard_normal_vector(x.nrows(), rng) * tau;
        let y = x * &state.hs.beta + z * proj.s().transpose() * &gamma_mat * d_i + eps;
        blocks.push(SubjectBlock::new(format!("g{i}"), y, x.clone(), z.clone()));
    }
    DataSet::new(blocks)
}

fn iid_mean_se2(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var / n)
}

/// Batch-means standard error for autocorrelated samples.
fn batch_mean_se2(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let n_batches = (n as f64).sqrt().floor() as usize;
    let batch_size = n / n_batches;
    let used = n_batches * batch_size;
    let mean = xs[..used].iter().sum::<f64>() / used as f64;
    let mut batch_means = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let slice = &xs[b * batch_size..(b + 1) * batch_size];
        batch_means.push(slice.iter().sum::<f64>() / batch_size as f64);
    }
    let var_bm = batch_means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>()
        / (n_batches as f64 - 1.0);
    (mean, var_bm / n_batches as f64)
}

/// Convenience: the fit configuration matching the Geweke dimensions, for
/// callers that want to run auxiliary chains on the same instance.
pub fn fit_config_for(dims: &GewekeDims, prior: PriorConfig) -> FitConfig {
    FitConfig { k1: dims.k1, k2: dims.k2, prior, ..FitConfig::default() }
}
