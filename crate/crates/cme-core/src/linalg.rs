//! Low-rank linear algebra used inside the sampling loops: proxy-covariance
//! factors, Woodbury inverses, inverse square roots, Kronecker row blocks,
//! multivariate normal draws, and B-spline basis evaluation.
//!
//! Every per-subject covariance handled here has the form `C = M Mᵀ + I`
//! with a thin factor `M`, so inverses and square roots cost
//! `O(m_i w² + w³)` for factor width `w` instead of `O(m_i³)`, and no dense
//! `q x q` or `m_i x m_i` inverse is ever formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ProjectionPair;

/// Thin factor `M` (size `m_i x w`) of a covariance `C = M Mᵀ + I`.
///
/// For the compressed model the factor has width `w = k2` and satisfies
/// `M Mᵀ = Z_i Sᵀ Γ R Rᵀ Γᵀ S Z_iᵀ`; the oracle sampler reuses the same
/// machinery with a width-`q` factor of `Z_i Σ₀ Z_iᵀ`. `C` is implicitly
/// positive definite with eigenvalues at least 1.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    m: DMatrix<f64>,
}

impl LowRankFactor {
    pub fn new(m: DMatrix<f64>) -> Self {
        Self { m }
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Row count `m_i`.
    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    /// Factor width (`k2` for compressed factors).
    pub fn width(&self) -> usize {
        self.m.ncols()
    }

    /// Dense `C = M Mᵀ + I`; test and diagnostic use only.
    pub fn dense_cov(&self) -> DMatrix<f64> {
        &self.m * self.m.transpose() + DMatrix::identity(self.rows(), self.rows())
    }
}

/// Builds the width-`k2` covariance factor for one subject from the current
/// `gamma`: `M = Z_i Sᵀ Γ L_R` where `L_R Lᵀ_R = R Rᵀ`, so that
/// `M Mᵀ = Z_i Sᵀ Γ R Rᵀ Γᵀ S Z_iᵀ` exactly.
pub fn low_rank_factor(z_i: &DMatrix<f64>, proj: &ProjectionPair, gamma: &DVector<f64>) -> Result<LowRankFactor> {
    if z_i.ncols() != proj.q() {
        return Err(Error::Dimension(format!(
            "Z_i has {} columns but projections expect q = {}",
            z_i.ncols(),
            proj.q()
        )));
    }
    if gamma.len() != proj.k1() * proj.k2() {
        return Err(Error::Dimension(format!(
            "gamma has length {} but k1*k2 = {}",
            gamma.len(),
            proj.k1() * proj.k2()
        )));
    }
    let zst = z_i * proj.s().transpose();
    Ok(low_rank_factor_precomputed(&zst, proj, gamma))
}

/// Same as [`low_rank_factor`] with `Z_i Sᵀ` already formed (hot path).
pub(crate) fn low_rank_factor_precomputed(
    zst: &DMatrix<f64>,
    proj: &ProjectionPair,
    gamma: &DVector<f64>,
) -> LowRankFactor {
    let gamma_mat = DMatrix::from_column_slice(proj.k1(), proj.k2(), gamma.as_slice());
    LowRankFactor::new(zst * gamma_mat * proj.rrt_chol())
}

/// Applies `C⁻¹ = I - M (I + Mᵀ M)⁻¹ Mᵀ` to a vector without forming the
/// `m_i x m_i` inverse. `I + MᵀM` has eigenvalues >= 1, so the inner
/// Cholesky cannot fail.
pub fn woodbury_inverse_apply(f: &LowRankFactor, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != f.rows() {
        return Err(Error::Dimension(format!(
            "vector length {} does not match factor rows {}",
            v.len(),
            f.rows()
        )));
    }
    let mt_v = f.m.transpose() * v;
    let solved = inner_gram_cholesky(f)?.solve(&mt_v);
    Ok(v - &f.m * solved)
}

/// Matrix version of [`woodbury_inverse_apply`]: returns `C⁻¹ A`.
pub fn woodbury_inverse_apply_mat(f: &LowRankFactor, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != f.rows() {
        return Err(Error::Dimension(format!(
            "matrix has {} rows but factor has {}",
            a.nrows(),
            f.rows()
        )));
    }
    let mt_a = f.m.transpose() * a;
    let solved = inner_gram_cholesky(f)?.solve(&mt_a);
    Ok(a - &f.m * solved)
}

fn inner_gram_cholesky(f: &LowRankFactor) -> Result<Cholesky<f64, Dyn>> {
    let w = f.width();
    let gram = f.m.transpose() * &f.m + DMatrix::identity(w, w);
    Cholesky::new(gram).ok_or_else(|| Error::Numeric("Cholesky of I + MᵀM failed".into()))
}

/// The symmetric inverse square root `W = C^{-1/2}` of `C = M Mᵀ + I`,
/// prepared once and applied to any number of right-hand sides.
///
/// With the thin SVD `M = U diag(s) Vᵀ`,
/// `W = I - U diag(1 - 1/sqrt(s² + 1)) Uᵀ`, which satisfies `W C Wᵀ = I`.
#[derive(Debug, Clone)]
pub struct InverseSqrt {
    u: DMatrix<f64>,
    /// `1 - 1/sqrt(s² + 1)` per retained singular value.
    coeff: DVector<f64>,
}

impl InverseSqrt {
    pub fn new(f: &LowRankFactor) -> Result<Self> {
        let svd = f.m.clone().svd(true, false);
        let u = svd.u.ok_or_else(|| Error::Numeric("SVD of covariance factor failed".into()))?;
        let coeff = svd.singular_values.map(|s| 1.0 - 1.0 / (s * s + 1.0).sqrt());
        Ok(Self { u, coeff })
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    /// `W A` via a rank-`w` update of `A`.
    pub fn apply(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.nrows() != self.rows() {
            return Err(Error::Dimension(format!(
                "matrix has {} rows but whitener expects {}",
                a.nrows(),
                self.rows()
            )));
        }
        let mut ut_a = self.u.transpose() * a;
        for (i, c) in self.coeff.iter().enumerate() {
            ut_a.row_mut(i).scale_mut(*c);
        }
        Ok(a - &self.u * ut_a)
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.rows() {
            return Err(Error::Dimension(format!(
                "vector length {} but whitener expects {}",
                v.len(),
                self.rows()
            )));
        }
        let mut ut_v = self.u.transpose() * v;
        for (i, c) in self.coeff.iter().enumerate() {
            ut_v[i] *= *c;
        }
        Ok(v - &self.u * ut_v)
    }
}

/// Applies the symmetric inverse square root of `C = M Mᵀ + I` to `A`.
pub fn inverse_sqrt_apply(f: &LowRankFactor, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    InverseSqrt::new(f)?.apply(a)
}

/// The `m_i x (k1 k2)` row block of the compressed-effects regression design
/// for one subject: `d_iᵀ ⊗ (Z_i Sᵀ)` under column-major `vec(Γ)`, so that
/// `block · vec(Γ) = Z_i Sᵀ Γ d_i`.
pub fn kron_row_block(z_i: &DMatrix<f64>, s: &DMatrix<f64>, d_i: &DVector<f64>) -> Result<DMatrix<f64>> {
    if z_i.ncols() != s.ncols() {
        return Err(Error::Dimension(format!(
            "Z_i has {} columns but S has {}",
            z_i.ncols(),
            s.ncols()
        )));
    }
    let zst = z_i * s.transpose();
    Ok(kron_row_block_precomputed(&zst, d_i))
}

/// Same with `Z_i Sᵀ` already formed: column block `j` equals `d_i[j] * Z_i Sᵀ`.
pub(crate) fn kron_row_block_precomputed(zst: &DMatrix<f64>, d_i: &DVector<f64>) -> DMatrix<f64> {
    let (m, k1) = zst.shape();
    let k2 = d_i.len();
    let mut block = DMatrix::zeros(m, k1 * k2);
    for j in 0..k2 {
        let dj = d_i[j];
        if dj != 0.0 {
            block.columns_mut(j * k1, k1).copy_from(&(zst * dj));
        }
    }
    block
}

/// Cholesky with the escalating-jitter policy: on failure add
/// `1e-10 * trace/k` to the diagonal, escalate tenfold up to three times,
/// then give up.
pub fn cholesky_with_jitter(mat: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(mat.clone()) {
        return Ok(chol);
    }
    let k = mat.nrows().max(1) as f64;
    let base = 1e-10 * mat.trace() / k;
    let mut jitter = base;
    for _ in 0..3 {
        let jittered = mat + DMatrix::from_diagonal_element(mat.nrows(), mat.ncols(), jitter);
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(chol);
        }
        jitter *= 10.0;
    }
    Err(Error::Numeric(format!(
        "Cholesky failed for {}x{} matrix after jitter escalation to {jitter:.3e}",
        mat.nrows(),
        mat.ncols()
    )))
}

/// One draw from `N(mean, cov)` via Cholesky of the covariance.
pub fn mvn_sample<R: Rng>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
        return Err(Error::Dimension(format!(
            "mean length {} does not match covariance {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = cholesky_with_jitter(cov).map_err(|e| Error::Numeric(format!("mvn covariance: {e}")))?;
    let z = standard_normal_vector(mean.len(), rng);
    Ok(mean + chol.l() * z)
}

/// One draw from `N(P⁻¹ b, P⁻¹)` given the precision matrix `P` and the
/// linear term `b`, without inverting `P` densely.
pub fn mvn_sample_from_precision<R: Rng>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if precision.nrows() != precision.ncols() || precision.nrows() != linear.len() {
        return Err(Error::Dimension(format!(
            "linear term length {} does not match precision {}x{}",
            linear.len(),
            precision.nrows(),
            precision.ncols()
        )));
    }
    let chol =
        cholesky_with_jitter(precision).map_err(|e| Error::Numeric(format!("mvn precision: {e}")))?;
    let mean = chol.solve(linear);
    let z = standard_normal_vector(linear.len(), rng);
    // x = mean + L⁻ᵀ z has covariance (L Lᵀ)⁻¹ = P⁻¹.
    let offset = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numeric("triangular solve failed in precision sampler".into()))?;
    Ok(mean + offset)
}

pub fn standard_normal_vector<R: Rng>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
}

/// Any factor `F` with `F Fᵀ = A` for symmetric positive-semidefinite `A`,
/// via symmetric eigendecomposition with negative eigenvalues clamped to
/// zero. Used for sampling from singular covariances and for the oracle
/// whitening factor.
pub fn psd_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!("matrix must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    let eig = a.clone().symmetric_eigen();
    let mut f = eig.eigenvectors;
    for (j, w) in eig.eigenvalues.iter().enumerate() {
        let scale = w.max(0.0).sqrt();
        f.column_mut(j).scale_mut(scale);
    }
    Ok(f)
}

/// Cubic B-spline basis without the intercept column, evaluated at `times`.
///
/// The basis is clamped to `[min(times), max(times)]`; `n_basis = 3` gives
/// the no-interior-knot basis (the three non-constant Bernstein functions),
/// larger values place interior knots at quantiles of the observed times.
/// Rows sum to at most one and entries lie in `[0, 1]`.
pub fn bspline_basis(times: &[f64], n_basis: usize) -> Result<DMatrix<f64>> {
    const DEGREE: usize = 3;
    if times.is_empty() {
        return Err(Error::Dimension("bspline_basis needs at least one time point".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Data("time points must be finite".into()));
    }
    if n_basis < DEGREE {
        return Err(Error::Config(format!(
            "n_basis = {n_basis} is below the cubic minimum of {DEGREE}"
        )));
    }
    let lo = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Err(Error::Data(format!("degenerate time range: all points equal {lo}")));
    }

    // Clamped knot vector: boundary knots repeated degree+1 times, interior
    // knots at quantiles of the sorted times.
    let n_interior = n_basis - DEGREE;
    let mut knots = vec![lo; DEGREE + 1];
    if n_interior > 0 {
        let mut sorted = times.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 1..=n_interior {
            let prob = i as f64 / (n_interior + 1) as f64;
            knots.push(crate::selection::quantile_type7(&sorted, prob));
        }
    }
    knots.extend(std::iter::repeat(hi).take(DEGREE + 1));

    let n_funcs = knots.len() - DEGREE - 1; // n_basis + 1 including the intercept
    let mut out = DMatrix::zeros(times.len(), n_basis);
    for (row, &t) in times.iter().enumerate() {
        let all = cox_de_boor(&knots, DEGREE, t);
        debug_assert_eq!(all.len(), n_funcs);
        // Drop the first basis function (the intercept-direction column).
        for j in 1..n_funcs {
            out[(row, j - 1)] = all[j];
        }
    }
    Ok(out)
}

/// Evaluates all B-spline basis functions of the given degree at `t` by the
/// Cox–de Boor recursion. The last interval is treated as closed so the
/// right boundary evaluates to the final basis function.
fn cox_de_boor(knots: &[f64], degree: usize, t: f64) -> Vec<f64> {
    let n_funcs = knots.len() - degree - 1;
    let mut b = vec![0.0; knots.len() - 1];
    let last = *knots.last().unwrap();
    for i in 0..b.len() {
        let in_half_open = knots[i] <= t && t < knots[i + 1];
        let in_closing = t == last && knots[i] < knots[i + 1] && t <= knots[i + 1];
        if in_half_open || in_closing {
            b[i] = 1.0;
        }
    }
    for k in 1..=degree {
        for i in 0..knots.len() - k - 1 {
            let left_den = knots[i + k] - knots[i];
            let right_den = knots[i + k + 1] - knots[i + 1];
            let left = if left_den > 0.0 { (t - knots[i]) / left_den * b[i] } else { 0.0 };
            let right = if right_den > 0.0 {
                (knots[i + k + 1] - t) / right_den * b[i + 1]
            } else {
                0.0
            };
            b[i] = left + right;
        }
    }
    b.truncate(n_funcs);
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CmeRng;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut CmeRng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn zero_gamma_gives_zero_factor() {
        let proj = ProjectionPair::draw(4, 2, 2, 1).unwrap();
        let z = DMatrix::from_element(3, 4, 1.0);
        let gamma = DVector::zeros(4);
        let f = low_rank_factor(&z, &proj, &gamma).unwrap();
        assert_eq!(f.m().amax(), 0.0);
        assert_eq!(f.rows(), 3);
        assert_eq!(f.width(), 2);
    }

    #[test]
    fn factor_gram_matches_dense_triple_product() {
        let mut rng = CmeRng::seed_from_u64(9);
        let proj = ProjectionPair::draw(4, 2, 2, 5).unwrap();
        let z = random_matrix(3, 4, &mut rng);
        let gamma = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
        let f = low_rank_factor(&z, &proj, &gamma).unwrap();

        // Dense oracle: (Z Sᵀ Γ R)(Z Sᵀ Γ R)ᵀ computed as plain products.
        let gamma_mat = DMatrix::from_column_slice(2, 2, gamma.as_slice());
        let wide = &z * proj.s().transpose() * &gamma_mat * proj.r();
        let dense = &wide * wide.transpose();
        let gram = f.m() * f.m().transpose();
        assert_relative_eq!(gram, dense, epsilon = 1e-12);
    }

    #[test]
    fn woodbury_identity_factor_is_pass_through() {
        let f = LowRankFactor::new(DMatrix::zeros(5, 2));
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 0.0]);
        let out = woodbury_inverse_apply(&f, &v).unwrap();
        assert_relative_eq!(out, v, epsilon = 1e-15);
    }

    #[test]
    fn woodbury_matches_dense_inverse() {
        let mut rng = CmeRng::seed_from_u64(21);
        let f = LowRankFactor::new(random_matrix(5, 2, &mut rng));
        let v = DVector::from_fn(5, |_, _| StandardNormal.sample(&mut rng));
        let dense = f.dense_cov().try_inverse().unwrap();
        let expected = &dense * &v;
        let got = woodbury_inverse_apply(&f, &v).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-10);

        let zero = woodbury_inverse_apply(&f, &DVector::zeros(5)).unwrap();
        assert_eq!(zero.amax(), 0.0);
    }

    #[test]
    fn inverse_sqrt_whitens_cov() {
        let mut rng = CmeRng::seed_from_u64(33);
        let f = LowRankFactor::new(random_matrix(6, 3, &mut rng));
        let w = InverseSqrt::new(&f).unwrap();
        let eye = DMatrix::identity(6, 6);
        let w_mat = w.apply(&eye).unwrap();
        let whitened = &w_mat * f.dense_cov() * w_mat.transpose();
        assert_relative_eq!(whitened, eye, epsilon = 1e-10);

        // Zero factor: W = I. Zero input: zero output.
        let id = InverseSqrt::new(&LowRankFactor::new(DMatrix::zeros(4, 2))).unwrap();
        let a = random_matrix(4, 3, &mut rng);
        assert_relative_eq!(id.apply(&a).unwrap(), a, epsilon = 1e-15);
        assert_eq!(w.apply(&DMatrix::zeros(6, 2)).unwrap().amax(), 0.0);
    }

    #[test]
    fn kron_row_block_basis_vector() {
        let mut rng = CmeRng::seed_from_u64(4);
        let z = random_matrix(3, 5, &mut rng);
        let s = random_matrix(2, 5, &mut rng);
        let mut e1 = DVector::zeros(2);
        e1[0] = 1.0;
        let block = kron_row_block(&z, &s, &e1).unwrap();
        let zst = &z * s.transpose();
        assert_relative_eq!(block.columns(0, 2).into_owned(), zst, epsilon = 1e-15);
        assert_eq!(block.columns(2, 2).amax(), 0.0);

        let zero_block = kron_row_block(&z, &s, &DVector::zeros(2)).unwrap();
        assert_eq!(zero_block.amax(), 0.0);
    }

    #[test]
    fn kron_row_block_times_gamma_is_direct_product() {
        let mut rng = CmeRng::seed_from_u64(11);
        let (k1, k2) = (2, 3);
        let z = random_matrix(4, 6, &mut rng);
        let s = random_matrix(k1, 6, &mut rng);
        let d = DVector::from_fn(k2, |_, _| StandardNormal.sample(&mut rng));
        let gamma = DVector::from_fn(k1 * k2, |_, _| StandardNormal.sample(&mut rng));
        let gamma_mat = DMatrix::from_column_slice(k1, k2, gamma.as_slice());

        let block = kron_row_block(&z, &s, &d).unwrap();
        let via_block = &block * &gamma;
        let direct = &z * s.transpose() * gamma_mat * d;
        assert_relative_eq!(via_block, direct, epsilon = 1e-12);
    }

    #[test]
    fn mvn_sample_moments() {
        let mut rng = CmeRng::seed_from_u64(100);
        let k = 3;
        let mean = DVector::zeros(k);
        let cov = DMatrix::identity(k, k);
        let n = 100_000;
        let mut sums = DVector::zeros(k);
        for _ in 0..n {
            sums += mvn_sample(&mean, &cov, &mut rng).unwrap();
        }
        let tol = 4.0 / (n as f64).sqrt();
        for j in 0..k {
            assert!((sums[j] / n as f64).abs() < tol, "coordinate {j} mean off");
        }

        // Scalar variance check against diag(4).
        let mean1 = DVector::from_element(1, 1.0);
        let cov4 = DMatrix::from_element(1, 1, 4.0);
        let draws: Vec<f64> = (0..n).map(|_| mvn_sample(&mean1, &cov4, &mut rng).unwrap()[0]).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 4.0).abs() < 0.15, "variance {var} should be near 4");
    }

    #[test]
    fn mvn_sample_deterministic_under_seed() {
        let mean = DVector::from_vec(vec![0.5, -0.5]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let a = mvn_sample(&mean, &cov, &mut CmeRng::seed_from_u64(8)).unwrap();
        let b = mvn_sample(&mean, &cov, &mut CmeRng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn precision_sampler_matches_covariance_sampler_law() {
        // N(P⁻¹b, P⁻¹) moments via Monte Carlo.
        let mut rng = CmeRng::seed_from_u64(17);
        let precision = DMatrix::from_vec(2, 2, vec![2.0, 0.5, 0.5, 1.0]);
        let linear = DVector::from_vec(vec![1.0, -1.0]);
        let cov = precision.clone().try_inverse().unwrap();
        let mean = &cov * &linear;
        let n = 200_000;
        let mut sum = DVector::zeros(2);
        for _ in 0..n {
            sum += mvn_sample_from_precision(&precision, &linear, &mut rng).unwrap();
        }
        let emp = sum / n as f64;
        assert_relative_eq!(emp, mean, epsilon = 0.01);
    }

    #[test]
    fn psd_factor_reconstructs_and_clamps() {
        let a = DMatrix::from_vec(2, 2, vec![2.0, 1.0, 1.0, 2.0]);
        let f = psd_factor(&a).unwrap();
        assert_relative_eq!(&f * f.transpose(), a, epsilon = 1e-12);

        // Singular input stays exactly reconstructible.
        let sing = DMatrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        let fs = psd_factor(&sing).unwrap();
        assert_relative_eq!(&fs * fs.transpose(), sing, epsilon = 1e-12);
    }

    #[test]
    fn bspline_rows_bounded_and_in_unit_interval() {
        let basis = bspline_basis(&[0.0, 0.5, 1.0], 3).unwrap();
        assert_eq!(basis.shape(), (3, 3));
        for row in 0..3 {
            let sum: f64 = basis.row(row).iter().sum();
            assert!(sum <= 1.0 + 1e-12, "row {row} sums to {sum}");
            for v in basis.row(row).iter() {
                assert!((0.0..=1.0).contains(v));
            }
        }
        // Interior rows have positive mass; boundary left row is all zeros
        // except nothing (first basis dropped), right row ends at 1.
        assert_relative_eq!(basis[(2, 2)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bspline_degenerate_range_errors() {
        assert!(bspline_basis(&[2.0, 2.0, 2.0], 3).is_err());
        assert!(bspline_basis(&[], 3).is_err());
        assert!(bspline_basis(&[0.0, f64::NAN], 3).is_err());
    }

    #[test]
    fn bspline_matches_bernstein_oracle() {
        // With no interior knots the cubic basis on [a,b] is the Bernstein
        // basis; dropping the intercept keeps B1, B2, B3.
        let times = [0.0, 0.2, 0.35, 0.61, 0.8, 1.0];
        let basis = bspline_basis(&times, 3).unwrap();
        for (row, &t) in times.iter().enumerate() {
            let b1 = 3.0 * t * (1.0 - t) * (1.0 - t);
            let b2 = 3.0 * t * t * (1.0 - t);
            let b3 = t * t * t;
            assert_relative_eq!(basis[(row, 0)], b1, epsilon = 1e-12);
            assert_relative_eq!(basis[(row, 1)], b2, epsilon = 1e-12);
            assert_relative_eq!(basis[(row, 2)], b3, epsilon = 1e-12);
        }
    }
}
