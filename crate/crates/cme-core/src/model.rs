//! Domain types shared by the samplers, the simulation harness, and the CLI:
//! grouped datasets, projection matrices, prior/fit configuration, and chain
//! state.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationReport};

/// Deterministic RNG used throughout; all draws are reproducible from a seed.
pub type CmeRng = rand_chacha::ChaCha8Rng;

/// Response and design matrices for one subject: `y_i = X_i beta + Z_i b_i + eps_i`.
#[derive(Debug, Clone)]
pub struct SubjectBlock {
    pub subject_id: String,
    /// Response vector, length `m_i`.
    pub y: DVector<f64>,
    /// Fixed-effects design, `m_i x p`.
    pub x: DMatrix<f64>,
    /// Random-effects design, `m_i x q`.
    pub z: DMatrix<f64>,
}

impl SubjectBlock {
    pub fn new(subject_id: impl Into<String>, y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Self {
        Self { subject_id: subject_id.into(), y, x, z }
    }

    /// Number of observations `m_i` for this subject.
    pub fn m(&self) -> usize {
        self.y.len()
    }
}

/// A validated grouped dataset. `n` subjects, `p` fixed-effect columns,
/// `q` random-effect columns, `N = sum m_i` total observations.
///
/// Construction runs full validation; a `DataSet` in hand always satisfies
/// the dimension and finiteness invariants.
#[derive(Debug, Clone)]
pub struct DataSet {
    blocks: Vec<SubjectBlock>,
    p: usize,
    q: usize,
    total_obs: usize,
}

impl DataSet {
    /// Validates and wraps subject blocks. Every violation is reported, not
    /// just the first: mismatched column counts name the offending subject,
    /// non-finite entries name the block and field.
    pub fn new(blocks: Vec<SubjectBlock>) -> Result<Self> {
        let mut report = ValidationReport::new();
        if blocks.is_empty() {
            report.push("dataset is empty (no subjects)");
            return report.into_result().map(|_| unreachable!());
        }
        let p = blocks[0].x.ncols();
        let q = blocks[0].z.ncols();
        let mut total_obs = 0usize;
        for (idx, b) in blocks.iter().enumerate() {
            let label = if b.subject_id.is_empty() {
                format!("block {}", idx + 1)
            } else {
                format!("block {} ({})", idx + 1, b.subject_id)
            };
            let m = b.m();
            if m == 0 {
                report.push(format!("{label}: no observations"));
            }
            if b.x.nrows() != m {
                report.push(format!("{label}: X has {} rows, expected {m}", b.x.nrows()));
            }
            if b.z.nrows() != m {
                report.push(format!("{label}: Z has {} rows, expected {m}", b.z.nrows()));
            }
            if b.x.ncols() != p {
                report.push(format!("{label}: X has {} columns, expected {p}", b.x.ncols()));
            }
            if b.z.ncols() != q {
                report.push(format!("{label}: Z has {} columns, expected {q}", b.z.ncols()));
            }
            if b.y.iter().any(|v| !v.is_finite()) {
                report.push(format!("{label}: y contains non-finite values"));
            }
            if b.x.iter().any(|v| !v.is_finite()) {
                report.push(format!("{label}: X contains non-finite values"));
            }
            if b.z.iter().any(|v| !v.is_finite()) {
                report.push(format!("{label}: Z contains non-finite values"));
            }
            total_obs += m;
        }
        report.into_result()?;
        Ok(Self { blocks, p, q, total_obs })
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Total observation count `N`.
    pub fn total_obs(&self) -> usize {
        self.total_obs
    }

    pub fn blocks(&self) -> &[SubjectBlock] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &SubjectBlock {
        &self.blocks[i]
    }

    pub fn into_blocks(self) -> Vec<SubjectBlock> {
        self.blocks
    }

    /// Row-stacked fixed-effects design, `N x p`.
    pub fn stacked_x(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.total_obs, self.p);
        let mut row = 0;
        for b in &self.blocks {
            x.rows_mut(row, b.m()).copy_from(&b.x);
            row += b.m();
        }
        x
    }

    /// Row-stacked response, length `N`.
    pub fn stacked_y(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.total_obs);
        let mut row = 0;
        for b in &self.blocks {
            y.rows_mut(row, b.m()).copy_from(&b.y);
            row += b.m();
        }
        y
    }

    /// Starting row offset of each subject's block in the stacked layout.
    pub fn row_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.n());
        let mut row = 0;
        for b in &self.blocks {
            offsets.push(row);
            row += b.m();
        }
        offsets
    }
}

/// Revalidates an already-constructed dataset, returning it unchanged on
/// success. Useful after deserialization paths that bypass `DataSet::new`.
pub fn validate_dataset(d: DataSet) -> Result<DataSet> {
    DataSet::new(d.into_blocks())
}

/// The fixed random projection matrices of a fit: `R` is `k2 x q` with
/// `N(0, 1/k2)` entries and `S` is `k1 x q` with `N(0, 1/k1)` entries.
/// Drawn once per fit and never redrawn between iterations.
#[derive(Debug, Clone)]
pub struct ProjectionPair {
    r: DMatrix<f64>,
    s: DMatrix<f64>,
    /// Lower Cholesky factor of `R Rᵀ` (`k2 x k2`), cached because every
    /// low-rank covariance factor multiplies by it.
    rrt_chol: DMatrix<f64>,
    seed: u64,
}

impl ProjectionPair {
    /// Draws the pair deterministically from `seed`. Fill order is fixed
    /// (S first, then R, column by column) so the result is bit-stable.
    pub fn draw(q: usize, k1: usize, k2: usize, seed: u64) -> Result<Self> {
        if k1 == 0 || k1 > q {
            return Err(Error::Dimension(format!("k1 = {k1} must satisfy 1 <= k1 <= q = {q}")));
        }
        if k2 == 0 || k2 > q {
            return Err(Error::Dimension(format!("k2 = {k2} must satisfy 1 <= k2 <= q = {q}")));
        }
        let mut rng = CmeRng::seed_from_u64(seed);
        let s = gaussian_matrix(k1, q, (1.0 / k1 as f64).sqrt(), &mut rng);
        let r = gaussian_matrix(k2, q, (1.0 / k2 as f64).sqrt(), &mut rng);
        let rrt = &r * r.transpose();
        let rrt_chol = crate::linalg::cholesky_with_jitter(&rrt)
            .map_err(|e| Error::Numeric(format!("R Rᵀ factorization: {e}")))?
            .l();
        Ok(Self { r, s, rrt_chol, seed })
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn k1(&self) -> usize {
        self.s.nrows()
    }

    pub fn k2(&self) -> usize {
        self.r.nrows()
    }

    pub fn q(&self) -> usize {
        self.r.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `R Rᵀ`, the prior covariance shape of the compressed random effects.
    pub fn rrt(&self) -> DMatrix<f64> {
        &self.r * self.r.transpose()
    }

    /// Lower Cholesky factor of `R Rᵀ`.
    pub fn rrt_chol(&self) -> &DMatrix<f64> {
        &self.rrt_chol
    }

    /// Order- and bit-sensitive checksum of (R, S); used to assert the pair
    /// is never redrawn during a fit.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64; // FNV-1a
        for v in self.s.iter().chain(self.r.iter()) {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

fn gaussian_matrix(rows: usize, cols: usize, sd: f64, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let z: f64 = StandardNormal.sample(rng);
            m[(i, j)] = sd * z;
        }
    }
    m
}

/// Draws a fresh projection pair for a fit.
pub fn draw_projection_pair(q: usize, k1: usize, k2: usize, seed: u64) -> Result<ProjectionPair> {
    ProjectionPair::draw(q, k1, k2, seed)
}

/// Hyperparameters: `tau2 ~ IG(a0, b0)` and `gamma ~ N(0, sigma2_gamma I)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub a0: f64,
    pub b0: f64,
    pub sigma2_gamma: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { a0: 0.01, b0: 0.01, sigma2_gamma: 1.0 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a0 > 0.0 && self.a0.is_finite()) {
            return Err(Error::Config(format!("a0 must be positive, got {}", self.a0)));
        }
        if !(self.b0 > 0.0 && self.b0.is_finite()) {
            return Err(Error::Config(format!("b0 must be positive, got {}", self.b0)));
        }
        if !(self.sigma2_gamma > 0.0 && self.sigma2_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma2_gamma must be positive, got {}",
                self.sigma2_gamma
            )));
        }
        Ok(())
    }
}

/// Sampler configuration. The defaults mirror the reference experimental
/// setup: 15,000 iterations, the first 5,000 discarded, no thinning.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub k1: usize,
    pub k2: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub prior: PriorConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k1: 3,
            k2: 3,
            iterations: 15_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
            prior: PriorConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::Config("k1 and k2 must be at least 1".into()));
        }
        if self.iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of draws kept after burn-in and thinning.
    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    pub fn seeds(&self) -> SeedPlan {
        SeedPlan::new(self.seed)
    }
}

/// Splits one master seed into independent sub-seeds so that data
/// generation, the projection draw, and the chain are separately replayable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
}

impl SeedPlan {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn projection_seed(&self) -> u64 {
        splitmix64(self.master.wrapping_add(0x9e3779b97f4a7c15))
    }

    pub fn chain_seed(&self) -> u64 {
        splitmix64(self.master.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(2)))
    }

    pub fn data_seed(&self) -> u64 {
        splitmix64(self.master.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(3)))
    }

    /// Seed for replication `rep` of a multi-replication run.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        splitmix64(self.master ^ splitmix64(rep as u64 + 1))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// State of the Horseshoe block: fixed effects, error variance, and the
/// global/local shrinkage scales with their auxiliary variables.
#[derive(Debug, Clone)]
pub struct HorseshoeState {
    pub beta: DVector<f64>,
    pub tau2: f64,
    /// Squared local shrinkage scales, length p.
    pub lambda2: DVector<f64>,
    /// Squared global shrinkage scale.
    pub delta2: f64,
    /// Auxiliaries for the half-Cauchy scale mixture, length p.
    pub nu: DVector<f64>,
    pub xi: f64,
}

impl HorseshoeState {
    pub fn initial(p: usize) -> Self {
        Self {
            beta: DVector::zeros(p),
            tau2: 1.0,
            lambda2: DVector::from_element(p, 1.0),
            delta2: 1.0,
            nu: DVector::from_element(p, 1.0),
            xi: 1.0,
        }
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let ok = self.tau2 > 0.0
            && self.tau2.is_finite()
            && self.delta2 > 0.0
            && self.delta2.is_finite()
            && self.xi > 0.0
            && self.xi.is_finite()
            && self.beta.iter().all(|v| v.is_finite())
            && self.lambda2.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.nu.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.lambda2.len() == self.beta.len()
            && self.nu.len() == self.beta.len();
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric("horseshoe state violates positivity/finiteness invariants".into()))
        }
    }
}

/// Everything sampled at one Gibbs iteration: the Horseshoe block plus the
/// compressed covariance parameter `gamma = vec(Gamma)` (column-major) and
/// the imputed compressed random effects `d_1..d_n`.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub hs: HorseshoeState,
    /// Column-major vectorization of `Gamma` (`k1 x k2`), length `k1*k2`.
    pub gamma: DVector<f64>,
    /// Compressed random effects, one length-`k2` vector per subject.
    pub d: Vec<DVector<f64>>,
}

impl ChainState {
    /// Reshapes `gamma` into the `k1 x k2` matrix `Gamma` (column-major).
    pub fn gamma_matrix(&self, k1: usize, k2: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(k1, k2, self.gamma.as_slice())
    }

    pub fn check_invariants(&self, p: usize, k1: usize, k2: usize, n: usize) -> Result<()> {
        self.hs.check_invariants()?;
        let ok = self.hs.p() == p
            && self.gamma.len() == k1 * k2
            && self.gamma.iter().all(|v| v.is_finite())
            && self.d.len() == n
            && self.d.iter().all(|di| di.len() == k2 && di.iter().all(|v| v.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric("chain state violates shape/finiteness invariants".into()))
        }
    }
}

/// Provenance of a run: dimensions, schedule, and every seed needed to
/// reproduce it byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k1: usize,
    pub k2: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub master_seed: u64,
    pub projection_seed: u64,
    pub chain_seed: u64,
}

/// Post-burn-in, thinned draws of `(beta, tau2, gamma)`, stored row-per-
/// iteration in chain order.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// `T_keep x p`.
    pub beta: DMatrix<f64>,
    /// Length `T_keep`.
    pub tau2: DVector<f64>,
    /// `T_keep x (k1*k2)`; zero columns for samplers without a gamma block.
    pub gamma: DMatrix<f64>,
    pub meta: RunMeta,
}

impl PosteriorDraws {
    pub fn kept(&self) -> usize {
        self.beta.nrows()
    }

    pub fn p(&self) -> usize {
        self.beta.ncols()
    }
}

/// True covariance structure label used in the simulation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaStructure {
    /// Singular diagonal: first half of the diagonal 0.5, rest zero.
    Diagonal,
    /// Singular `L Lᵀ` with disjointly supported uniform columns.
    BlockDiagonal,
    /// Positive definite with entries `0.5^|i-j|`.
    Toeplitz,
}

impl SigmaStructure {
    pub fn as_str(&self) -> &'static str {
        match self {
            SigmaStructure::Diagonal => "diagonal",
            SigmaStructure::BlockDiagonal => "block-diagonal",
            SigmaStructure::Toeplitz => "toeplitz",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(SigmaStructure::Diagonal),
            "block-diagonal" | "block" => Ok(SigmaStructure::BlockDiagonal),
            "toeplitz" => Ok(SigmaStructure::Toeplitz),
            other => Err(Error::Config(format!(
                "unknown sigma structure '{other}' (expected diagonal, block-diagonal, or toeplitz)"
            ))),
        }
    }
}

impl std::fmt::Display for SigmaStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Simulation ground truth used for metric computation.
#[derive(Debug, Clone)]
pub struct TruthSpec {
    pub beta0: DVector<f64>,
    /// `q x q` positive-semidefinite random-effects covariance shape.
    pub sigma0: DMatrix<f64>,
    pub tau0_sq: f64,
    pub label: SigmaStructure,
}

impl TruthSpec {
    pub fn new(beta0: DVector<f64>, sigma0: DMatrix<f64>, tau0_sq: f64, label: SigmaStructure) -> Result<Self> {
        if beta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation({
                let mut r = ValidationReport::new();
                r.push("beta0 contains non-finite values");
                r
            }));
        }
        if sigma0.nrows() != sigma0.ncols() {
            return Err(Error::Dimension(format!(
                "Sigma0 must be square, got {}x{}",
                sigma0.nrows(),
                sigma0.ncols()
            )));
        }
        let asym = (&sigma0 - sigma0.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::Validation({
                let mut r = ValidationReport::new();
                r.push(format!("Sigma0 is not symmetric (max asymmetry {asym:.3e})"));
                r
            }));
        }
        let min_eig = sigma0.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-10 {
            return Err(Error::Validation({
                let mut r = ValidationReport::new();
                r.push(format!("Sigma0 has eigenvalue {min_eig:.3e} below the psd tolerance"));
                r
            }));
        }
        if !(tau0_sq > 0.0 && tau0_sq.is_finite()) {
            return Err(Error::Config(format!("tau0_sq must be positive, got {tau0_sq}")));
        }
        Ok(Self { beta0, sigma0, tau0_sq, label })
    }

    pub fn q(&self) -> usize {
        self.sigma0.nrows()
    }

    /// Indicator of truly non-zero coefficients.
    pub fn signal_mask(&self) -> Vec<bool> {
        self.beta0.iter().map(|b| *b != 0.0).collect()
    }
}
