//! Collapsed Gibbs sampler for the compressed mixed-effects model.
//!
//! Each sweep imputes the compressed random effects `d_i`, samples the
//! compressed covariance parameter `gamma`, whitens the likelihood with the
//! fresh `gamma`, and runs the Horseshoe block: the shrinkage auxiliaries,
//! the error variance, and finally the fixed effects. The `(beta, tau2)`
//! updates act on the whitened regression and never read the `d_i`'s.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_with_jitter, kron_row_block_precomputed, low_rank_factor_precomputed, mvn_sample,
    mvn_sample_from_precision, standard_normal_vector, InverseSqrt, LowRankFactor,
};
use crate::model::{
    ChainState, CmeRng, DataSet, FitConfig, HorseshoeState, PosteriorDraws, PriorConfig,
    ProjectionPair, RunMeta,
};

/// The homoscedastic regression obtained by scaling each subject's block
/// with `C_i^{-1/2}`: `y* = X* beta + eps*`, `eps* ~ N(0, tau2 I_N)`.
#[derive(Debug, Clone)]
pub struct WhitenedData {
    pub y_star: DVector<f64>,
    pub x_star: DMatrix<f64>,
}

impl WhitenedData {
    pub fn total_obs(&self) -> usize {
        self.y_star.len()
    }

    pub fn p(&self) -> usize {
        self.x_star.ncols()
    }
}

/// Dataset and projections preprocessed for the sampling loop: per-subject
/// `Z_i Sᵀ`, the stacked design, and block offsets. Immutable during a fit.
pub struct FitContext<'a> {
    data: &'a DataSet,
    proj: &'a ProjectionPair,
    /// `Z_i Sᵀ` per subject, `m_i x k1`.
    zst: Vec<DMatrix<f64>>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    offsets: Vec<usize>,
}

impl<'a> FitContext<'a> {
    pub fn new(data: &'a DataSet, proj: &'a ProjectionPair) -> Result<Self> {
        if proj.q() != data.q() {
            return Err(Error::Dimension(format!(
                "projections drawn for q = {} but dataset has q = {}",
                proj.q(),
                data.q()
            )));
        }
        let st = proj.s().transpose();
        let zst = data.blocks().iter().map(|b| &b.z * &st).collect();
        Ok(Self {
            data,
            proj,
            zst,
            x: data.stacked_x(),
            y: data.stacked_y(),
            offsets: data.row_offsets(),
        })
    }

    pub fn data(&self) -> &DataSet {
        self.data
    }

    pub fn proj(&self) -> &ProjectionPair {
        self.proj
    }

    fn gamma_dim(&self) -> usize {
        self.proj.k1() * self.proj.k2()
    }

    /// Covariance factor `M_i` for subject `i` under the given `gamma`.
    pub fn factor(&self, i: usize, gamma: &DVector<f64>) -> LowRankFactor {
        low_rank_factor_precomputed(&self.zst[i], self.proj, gamma)
    }

    fn residual(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }
}

/// Draws from `IG(shape, scale)` via the reciprocal of a Gamma draw.
pub fn sample_inverse_gamma<R: Rng>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && scale > 0.0, "IG parameters must be positive");
    let g = Gamma::new(shape, 1.0 / scale).expect("valid gamma parameters");
    1.0 / g.sample(rng)
}

/// Initial state: `beta = 0`, `tau2 = 1`, all shrinkage scales 1, `gamma`
/// drawn from its prior, `d_i = 0`.
pub fn init_chain<R: Rng>(data: &DataSet, cfg: &FitConfig, rng: &mut R) -> ChainState {
    let sd = cfg.prior.sigma2_gamma.sqrt();
    let gamma = standard_normal_vector(cfg.k1 * cfg.k2, rng) * sd;
    ChainState {
        hs: HorseshoeState::initial(data.p()),
        gamma,
        d: vec![DVector::zeros(cfg.k2); data.n()],
    }
}

/// Mean and covariance of the full conditional of `d_i` given
/// `(y_i, beta, tau2, gamma)`, from conditioning the joint Gaussian of
/// `(y_i, d_i)`:
///
/// `mu = R Rᵀ Bᵀ C_i⁻¹ (y_i - X_i beta)`,
/// `V  = tau2 (R Rᵀ - R Rᵀ Bᵀ C_i⁻¹ B R Rᵀ)`, with `B = Z_i Sᵀ Γ`.
pub fn d_conditional_moments(
    state: &ChainState,
    ctx: &FitContext,
    i: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let proj = ctx.proj;
    let gamma_mat = state.gamma_matrix(proj.k1(), proj.k2());
    let b = &ctx.zst[i] * &gamma_mat;
    let factor = LowRankFactor::new(&b * proj.rrt_chol());
    let block = ctx.data.block(i);
    let resid = &block.y - &block.x * &state.hs.beta;

    let cinv_r = crate::linalg::woodbury_inverse_apply(&factor, &resid)?;
    let cinv_b = crate::linalg::woodbury_inverse_apply_mat(&factor, &b)?;
    let rrt = proj.rrt();
    let mean = &rrt * (b.transpose() * cinv_r);
    let gram = b.transpose() * cinv_b;
    let mut cov = (&rrt - &rrt * gram * &rrt) * state.hs.tau2;
    // Symmetrize before factorization; the subtraction loses exactness at
    // machine precision.
    cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

/// Step 1: independently redraws every `d_i` from its full conditional.
pub fn sample_d<R: Rng>(state: &mut ChainState, ctx: &FitContext, rng: &mut R) -> Result<()> {
    for i in 0..ctx.data.n() {
        let (mean, cov) = d_conditional_moments(state, ctx, i)?;
        state.d[i] = mvn_sample(&mean, &cov, rng)
            .map_err(|e| Error::Numeric(format!("d conditional for subject {i}: {e}")))?;
    }
    Ok(())
}

/// Precision and linear term of the `gamma` full conditional:
/// precision `= Žᵀ Ž / tau2 + I / sigma2_gamma`, linear `= Žᵀ (y - X beta) / tau2`,
/// where row block `i` of `Ž` is `d_iᵀ ⊗ (Z_i Sᵀ)`.
pub fn gamma_conditional_natural(
    state: &ChainState,
    ctx: &FitContext,
    prior: &PriorConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let dim = ctx.gamma_dim();
    let mut precision = DMatrix::identity(dim, dim) / prior.sigma2_gamma;
    let mut linear = DVector::zeros(dim);
    let resid = ctx.residual(&state.hs.beta);
    for i in 0..ctx.data.n() {
        let block = kron_row_block_precomputed(&ctx.zst[i], &state.d[i]);
        let r_i = resid.rows(ctx.offsets[i], ctx.data.block(i).m());
        precision += block.transpose() * &block / state.hs.tau2;
        linear += block.transpose() * r_i / state.hs.tau2;
    }
    (precision, linear)
}

/// Dense mean/covariance of the `gamma` conditional; diagnostics and tests.
pub fn gamma_conditional_moments(
    state: &ChainState,
    ctx: &FitContext,
    prior: &PriorConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (precision, linear) = gamma_conditional_natural(state, ctx, prior);
    let cov = precision
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("gamma conditional precision is singular".into()))?;
    let mean = &cov * linear;
    Ok((mean, cov))
}

/// Step 2: samples `gamma` given the imputed `d_i`'s and `(beta, tau2)`.
pub fn sample_gamma<R: Rng>(
    state: &mut ChainState,
    ctx: &FitContext,
    prior: &PriorConfig,
    rng: &mut R,
) -> Result<()> {
    let (precision, linear) = gamma_conditional_natural(state, ctx, prior);
    state.gamma = mvn_sample_from_precision(&precision, &linear, rng)
        .map_err(|e| Error::Numeric(format!("gamma conditional: {e}")))?;
    Ok(())
}

/// Scales each subject block by `C_i^{-1/2}` under the current `gamma` and
/// stacks the results row-wise.
pub fn whiten(state: &ChainState, ctx: &FitContext) -> Result<WhitenedData> {
    let n_total = ctx.data.total_obs();
    let mut y_star = DVector::zeros(n_total);
    let mut x_star = DMatrix::zeros(n_total, ctx.data.p());
    for i in 0..ctx.data.n() {
        let factor = ctx.factor(i, &state.gamma);
        let w = InverseSqrt::new(&factor)?;
        let block = ctx.data.block(i);
        let rows = block.m();
        y_star.rows_mut(ctx.offsets[i], rows).copy_from(&w.apply_vec(&block.y)?);
        x_star.rows_mut(ctx.offsets[i], rows).copy_from(&w.apply(&block.x)?);
    }
    Ok(WhitenedData { y_star, x_star })
}

/// Steps 3a-3d, in order: the squared global scale `delta2`, its auxiliary
/// `xi`, the squared local scales `lambda2_j` (using the fresh `delta2`),
/// and their auxiliaries `nu_j`.
pub fn sample_horseshoe_aux<R: Rng>(hs: &mut HorseshoeState, rng: &mut R) {
    let p = hs.p();
    let shrink_sum: f64 =
        (0..p).map(|j| hs.beta[j] * hs.beta[j] / hs.lambda2[j]).sum::<f64>() / (2.0 * hs.tau2);
    hs.delta2 = sample_inverse_gamma((p as f64 + 1.0) / 2.0, 1.0 / hs.xi + shrink_sum, rng);
    hs.xi = sample_inverse_gamma(1.0, 1.0 + 1.0 / hs.delta2, rng);
    for j in 0..p {
        let scale = 1.0 / hs.nu[j] + hs.beta[j] * hs.beta[j] / (2.0 * hs.delta2 * hs.tau2);
        hs.lambda2[j] = sample_inverse_gamma(1.0, scale, rng);
    }
    for j in 0..p {
        hs.nu[j] = sample_inverse_gamma(1.0, 1.0 + 1.0 / hs.lambda2[j], rng);
    }
}

/// Shape and scale of the `tau2` full conditional,
/// `IG(a0 + (N+p)/2, b0 + ||y* - X* beta||²/2 + betaᵀ (delta2 Λ)⁻¹ beta / 2)`,
/// evaluated at the pre-update `beta`.
pub fn tau2_conditional_params(hs: &HorseshoeState, w: &WhitenedData, prior: &PriorConfig) -> (f64, f64) {
    let resid = &w.y_star - &w.x_star * &hs.beta;
    let rss = resid.norm_squared();
    let prior_quad: f64 =
        (0..hs.p()).map(|j| hs.beta[j] * hs.beta[j] / (hs.delta2 * hs.lambda2[j])).sum();
    let shape = prior.a0 + (w.total_obs() + hs.p()) as f64 / 2.0;
    let scale = prior.b0 + rss / 2.0 + prior_quad / 2.0;
    (shape, scale)
}

/// Step 3e: samples the error variance.
pub fn sample_tau2<R: Rng>(hs: &mut HorseshoeState, w: &WhitenedData, prior: &PriorConfig, rng: &mut R) {
    let (shape, scale) = tau2_conditional_params(hs, w, prior);
    hs.tau2 = sample_inverse_gamma(shape, scale, rng);
}

/// Dense mean/covariance of the `beta` conditional
/// `N(A X*ᵀ y*, tau2 A)`, `A = (X*ᵀ X* + (delta2 Λ)⁻¹)⁻¹`; diagnostics and
/// tests only (cost `O(p³)` regardless of N).
pub fn beta_conditional_moments(hs: &HorseshoeState, w: &WhitenedData) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = hs.p();
    let mut precision = w.x_star.transpose() * &w.x_star;
    for j in 0..p {
        precision[(j, j)] += 1.0 / (hs.delta2 * hs.lambda2[j]);
    }
    let a = precision
        .try_inverse()
        .ok_or_else(|| Error::Numeric("beta conditional precision is singular".into()))?;
    let mean = &a * (w.x_star.transpose() * &w.y_star);
    Ok((mean, a * hs.tau2))
}

/// Step 3f: exact draw from `N(A X*ᵀ y*, tau2 A)`.
///
/// For `p <= N` this factors the `p x p` precision directly. For `p > N` it
/// uses the auxiliary-variable construction for structured Gaussians, which
/// produces a draw from the identical law at `O(N² p)` cost.
pub fn sample_beta<R: Rng>(hs: &mut HorseshoeState, w: &WhitenedData, rng: &mut R) -> Result<()> {
    let p = hs.p();
    let n = w.total_obs();
    if w.p() != p {
        return Err(Error::Dimension(format!("whitened design has {} columns, state has p = {p}", w.p())));
    }
    let tau = hs.tau2.sqrt();
    let delta = hs.delta2.sqrt();

    if p <= n {
        let xt = w.x_star.transpose();
        let mut precision = &xt * &w.x_star;
        for j in 0..p {
            precision[(j, j)] += 1.0 / (hs.delta2 * hs.lambda2[j]);
        }
        let chol = cholesky_with_jitter(&precision)
            .map_err(|e| Error::Numeric(format!("beta conditional (direct path): {e}")))?;
        let mean = chol.solve(&(&xt * &w.y_star));
        let z = standard_normal_vector(p, rng);
        let offset = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numeric("triangular solve failed in beta sampler".into()))?;
        hs.beta = mean + offset * tau;
    } else {
        // Auxiliary-variable sampler with Phi = X*/tau, D = tau2 delta2 Λ:
        //   u ~ N(0, D), v = Phi u + N(0, I_N),
        //   solve (Phi D Phiᵀ + I_N) w = y*/tau - v,
        //   beta = u + D Phiᵀ w.
        let sd_u: DVector<f64> = hs.lambda2.map(|l2| tau * delta * l2.sqrt());
        let u = standard_normal_vector(p, rng).component_mul(&sd_u);
        let v = (&w.x_star * &u) / tau + standard_normal_vector(n, rng);

        // Phi D Phiᵀ = B Bᵀ with B = X* diag(delta lambda_j).
        let mut b = w.x_star.clone();
        for j in 0..p {
            b.column_mut(j).scale_mut(delta * hs.lambda2[j].sqrt());
        }
        let mut cap = &b * b.transpose();
        for i in 0..n {
            cap[(i, i)] += 1.0;
        }
        let chol = cholesky_with_jitter(&cap)
            .map_err(|e| Error::Numeric(format!("beta conditional (wide path): {e}")))?;
        let rhs = &w.y_star / tau - v;
        let solved = chol.solve(&rhs);
        let correction = (w.x_star.transpose() * solved) * tau * hs.delta2;
        hs.beta = u + correction.component_mul(&hs.lambda2);
    }
    Ok(())
}

/// Steps 3a-3f on whitened data: the Horseshoe block shared verbatim by the
/// compressed sampler and the oracle baseline.
pub fn horseshoe_sweep<R: Rng>(
    hs: &mut HorseshoeState,
    w: &WhitenedData,
    prior: &PriorConfig,
    rng: &mut R,
) -> Result<()> {
    sample_horseshoe_aux(hs, rng);
    sample_tau2(hs, w, prior, rng);
    sample_beta(hs, w, rng)
}

/// One full sweep: `d`, `gamma`, whitening under the fresh `gamma`, then
/// the Horseshoe block. `beta` is updated last, and the `tau2` scale uses
/// the pre-update `beta` exactly as the update order prescribes.
pub fn gibbs_step<R: Rng>(
    state: &mut ChainState,
    ctx: &FitContext,
    prior: &PriorConfig,
    rng: &mut R,
) -> Result<()> {
    sample_d(state, ctx, rng)?;
    sample_gamma(state, ctx, prior, rng)?;
    let w = whiten(state, ctx)?;
    horseshoe_sweep(&mut state.hs, &w, prior, rng)
}

/// Runs the chain and stores post-burn-in, thinned draws of
/// `(beta, tau2, gamma)`. The RNG is seeded from `cfg`'s chain seed, so runs
/// are exactly replayable; `progress` is invoked every 100 iterations.
pub fn run_chain(
    data: &DataSet,
    cfg: &FitConfig,
    proj: &ProjectionPair,
    mut progress: Option<&mut dyn FnMut(usize, usize)>,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    if proj.k1() != cfg.k1 || proj.k2() != cfg.k2 {
        return Err(Error::Dimension(format!(
            "projection pair is {}x{} but config requests k1 = {}, k2 = {}",
            proj.k1(),
            proj.k2(),
            cfg.k1,
            cfg.k2
        )));
    }
    let ctx = FitContext::new(data, proj)?;
    let seeds = cfg.seeds();
    let mut rng = CmeRng::seed_from_u64(seeds.chain_seed());
    let mut state = init_chain(data, cfg, &mut rng);

    let kept = cfg.kept();
    let mut beta_draws = DMatrix::zeros(kept, data.p());
    let mut tau2_draws = DVector::zeros(kept);
    let mut gamma_draws = DMatrix::zeros(kept, cfg.k1 * cfg.k2);
    let mut stored = 0usize;

    for t in 1..=cfg.iterations {
        gibbs_step(&mut state, &ctx, &cfg.prior, &mut rng)
            .map_err(|e| Error::Numeric(format!("iteration {t}: {e}")))?;
        state
            .check_invariants(data.p(), cfg.k1, cfg.k2, data.n())
            .map_err(|e| Error::Numeric(format!("iteration {t}: {e}")))?;
        if t > cfg.burn_in && (t - cfg.burn_in - 1) % cfg.thin == 0 {
            beta_draws.row_mut(stored).copy_from(&state.hs.beta.transpose());
            tau2_draws[stored] = state.hs.tau2;
            gamma_draws.row_mut(stored).copy_from(&state.gamma.transpose());
            stored += 1;
        }
        if let Some(sink) = progress.as_deref_mut() {
            if t % 100 == 0 || t == cfg.iterations {
                sink(t, cfg.iterations);
            }
        }
    }
    debug_assert_eq!(stored, kept);

    Ok(PosteriorDraws {
        beta: beta_draws,
        tau2: tau2_draws,
        gamma: gamma_draws,
        meta: RunMeta {
            n: data.n(),
            p: data.p(),
            q: data.q(),
            k1: cfg.k1,
            k2: cfg.k2,
            iterations: cfg.iterations,
            burn_in: cfg.burn_in,
            thin: cfg.thin,
            master_seed: cfg.seed,
            projection_seed: proj.seed(),
            chain_seed: seeds.chain_seed(),
        },
    })
}

/// A completed compressed-model fit: the posterior draws plus the projection
/// pair they were produced under.
pub struct CmeFit {
    pub draws: PosteriorDraws,
    pub proj: ProjectionPair,
}

/// Convenience entry point: derives the projection and chain seeds from
/// `cfg.seed`, draws the projection pair once, and runs the chain.
pub fn fit_cme(data: &DataSet, cfg: &FitConfig) -> Result<CmeFit> {
    fit_cme_with_progress(data, cfg, None)
}

/// [`fit_cme`] with a progress callback (invoked every 100 iterations).
pub fn fit_cme_with_progress(
    data: &DataSet,
    cfg: &FitConfig,
    progress: Option<&mut dyn FnMut(usize, usize)>,
) -> Result<CmeFit> {
    let seeds = cfg.seeds();
    let proj = ProjectionPair::draw(data.q(), cfg.k1, cfg.k2, seeds.projection_seed())?;
    let before = proj.fingerprint();
    let draws = run_chain(data, cfg, &proj, progress)?;
    debug_assert_eq!(proj.fingerprint(), before, "projection pair must never be redrawn");
    Ok(CmeFit { draws, proj })
}

/// Posterior-predictive draws for a test dataset: one row per stored
/// iteration, one column per test observation. Each draw is
/// `X_i beta_t + tau_t (M_i u + w)` with `M_i` the covariance factor under
/// `gamma_t`, so its covariance is exactly `tau2_t (Z_i Sᵀ Γ R Rᵀ Γᵀ S Z_iᵀ + I)`.
pub fn posterior_predict<R: Rng>(
    draws: &PosteriorDraws,
    test: &DataSet,
    proj: &ProjectionPair,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if test.p() != draws.p() {
        return Err(Error::Dimension(format!(
            "test design has p = {} but draws have p = {}",
            test.p(),
            draws.p()
        )));
    }
    if test.q() != proj.q() {
        return Err(Error::Dimension(format!(
            "test design has q = {} but projections expect q = {}",
            test.q(),
            proj.q()
        )));
    }
    if draws.gamma.ncols() != proj.k1() * proj.k2() {
        return Err(Error::Dimension(format!(
            "gamma draws have {} columns but k1*k2 = {}",
            draws.gamma.ncols(),
            proj.k1() * proj.k2()
        )));
    }
    let st = proj.s().transpose();
    let zst: Vec<DMatrix<f64>> = test.blocks().iter().map(|b| &b.z * &st).collect();
    let offsets = test.row_offsets();

    let kept = draws.kept();
    let mut out = DMatrix::zeros(kept, test.total_obs());
    for t in 0..kept {
        let beta_t = draws.beta.row(t).transpose();
        let tau_t = draws.tau2[t].sqrt();
        let gamma_t = draws.gamma.row(t).transpose();
        for (i, block) in test.blocks().iter().enumerate() {
            let factor = low_rank_factor_precomputed(&zst[i], proj, &gamma_t);
            let u = standard_normal_vector(proj.k2(), rng);
            let noise = standard_normal_vector(block.m(), rng);
            let y_pred = &block.x * &beta_t + (factor.m() * u + noise) * tau_t;
            for (j, v) in y_pred.iter().enumerate() {
                out[(t, offsets[i] + j)] = *v;
            }
        }
    }
    Ok(out)
}

/// Monte Carlo point predictions: column means of the predictive draws.
pub fn point_predictions(pred_draws: &DMatrix<f64>) -> DVector<f64> {
    let rows = pred_draws.nrows().max(1) as f64;
    DVector::from_iterator(pred_draws.ncols(), pred_draws.column_iter().map(|c| c.sum() / rows))
}
