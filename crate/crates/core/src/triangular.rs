//! Closed-form solution of `dΦ/dx = TΦ` for upper-triangular `T`.
//!
//! Each component is written as
//!
//! ```text
//! φ_i(x) = C_i e^{T_ii x} + Σ_{j>i} r_ij(x) φ_j(x),    r_ij(x) = Σ_k p_ijk x^k
//! ```
//!
//! and the polynomial coefficients follow from matching powers of `x` in
//! `T_ij = r_ij' + Σ_{m=i+1}^{j} r_im T_mj − T_ii r_ij`:
//!
//! ```text
//! x^0:      T_ij = p_ij1 + (T_jj − T_ii) p_ij0 + Σ_m T_mj p_im0
//! x^k:      0    = (k+1) p_ij(k+1) + (T_jj − T_ii) p_ijk + Σ_m T_mj p_imk
//! x^{n-1}:  0    = (T_jj − T_ii) p_ij(n−1) + Σ_m T_mj p_im(n−1)
//! ```
//!
//! with `m` running over `i+1..j−1`. When `|T_jj − T_ii| ≤ eps_eig` the
//! pair is solved on the equal-eigenvalue branch (`p_ij0 = 0`), which is
//! what produces the secular `x^k e^{λx}` terms of defective matrices.

use crate::error::{Error, Result};
use crate::linalg::{self, matvec, Matrix, SchurForm, C64, DEFAULT_MAX_ITER};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Default eigenvalue-equality threshold for a triangular factor.
pub fn default_eps_eig(t: &Matrix) -> f64 {
    1e-8 * t.frobenius_norm().max(1.0)
}

/// Coefficients `p_ijk` of the polynomials `r_ij`.
///
/// Only the leading nonzero run of each polynomial is stored; the nominal
/// degree bound is `n − 1`.
#[derive(Debug, Clone)]
pub struct PCoefficients {
    n: usize,
    poly: Vec<Vec<C64>>,
    eps_eig: f64,
    min_separation: Option<f64>,
    equal_pairs: usize,
}

impl PCoefficients {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps_eig(&self) -> f64 {
        self.eps_eig
    }

    /// `p_ijk` (zero-based indices, zero outside the stored range).
    pub fn get(&self, i: usize, j: usize, k: usize) -> C64 {
        self.r(i, j).get(k).copied().unwrap_or(ZERO)
    }

    /// Coefficients of `r_ij` in increasing powers of `x`.
    pub fn r(&self, i: usize, j: usize) -> &[C64] {
        &self.poly[i * self.n + j]
    }

    /// `r_ij(x)` by Horner's rule.
    pub fn eval_r(&self, i: usize, j: usize, x: f64) -> C64 {
        horner(self.r(i, j), x)
    }

    /// Highest power of `x` with a nonzero coefficient over all `r_ij`.
    pub fn max_degree(&self) -> Option<usize> {
        self.poly
            .iter()
            .filter(|p| !p.is_empty())
            .map(|p| p.len() - 1)
            .max()
    }

    /// Smallest `|T_jj − T_ii|` among pairs solved on the distinct branch.
    /// Accuracy degrades as this approaches `eps_eig`.
    pub fn min_separation(&self) -> Option<f64> {
        self.min_separation
    }

    /// Number of coupled pairs solved on the equal-eigenvalue branch.
    pub fn equal_pairs(&self) -> usize {
        self.equal_pairs
    }
}

#[inline]
fn horner(coef: &[C64], x: f64) -> C64 {
    coef.iter().rev().fold(ZERO, |acc, &c| acc * x + c)
}

fn check_upper_triangular(t: &Matrix) -> Result<()> {
    if !t.is_square() {
        return Err(linalg::LinalgError::NotSquare {
            rows: t.rows(),
            cols: t.cols(),
        }
        .into());
    }
    for i in 0..t.rows() {
        for j in 0..i {
            if t[(i, j)] != ZERO {
                return Err(Error::NotTriangular { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Solves the coefficient recursion for every pair `i < j`, in decreasing
/// `i` and increasing `j` so that `r_im` (`i < m < j`) is already known.
pub fn p_coefficients(t: &Matrix, eps_eig: f64) -> Result<PCoefficients> {
    check_upper_triangular(t)?;
    if !(eps_eig >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps_eig must be nonnegative, got {eps_eig}"
        )));
    }
    let n = t.rows();
    let mut poly: Vec<Vec<C64>> = vec![Vec::new(); n * n];
    let mut min_separation: Option<f64> = None;
    let mut equal_pairs = 0usize;
    // S_k = Σ_m T_mj p_imk
    let mut sums: Vec<C64> = Vec::with_capacity(n);

    for i in (0..n).rev() {
        for j in i + 1..n {
            let tij = t[(i, j)];
            let mut width = 0usize;
            for m in i + 1..j {
                if t[(m, j)] != ZERO {
                    width = width.max(poly[i * n + m].len());
                }
            }
            sums.clear();
            sums.resize(width, ZERO);
            for m in i + 1..j {
                let tmj = t[(m, j)];
                if tmj == ZERO {
                    continue;
                }
                for (s, &p) in sums.iter_mut().zip(&poly[i * n + m]) {
                    *s += tmj * p;
                }
            }
            let s = |k: usize| sums.get(k).copied().unwrap_or(ZERO);

            let diff = t[(j, j)] - t[(i, i)];
            let mut coef: Vec<C64>;
            if diff.norm() <= eps_eig {
                if tij == ZERO && width == 0 {
                    continue;
                }
                equal_pairs += 1;
                let len = (width + 1).max(2).min(n);
                coef = vec![ZERO; len];
                coef[1] = tij - s(0);
                for k in 2..len {
                    coef[k] = -s(k - 1) / k as f64;
                }
            } else {
                let sep = diff.norm();
                min_separation = Some(min_separation.map_or(sep, |m: f64| m.min(sep)));
                if tij == ZERO && width == 0 {
                    continue;
                }
                let len = width.max(1);
                coef = vec![ZERO; len];
                for k in (1..len).rev() {
                    let next = coef.get(k + 1).copied().unwrap_or(ZERO);
                    coef[k] = -(next * (k + 1) as f64 + s(k)) / diff;
                }
                let p1 = coef.get(1).copied().unwrap_or(ZERO);
                coef[0] = (tij - p1 - s(0)) / diff;
            }
            while coef.last() == Some(&ZERO) {
                coef.pop();
            }
            poly[i * n + j] = coef;
        }
    }
    Ok(PCoefficients {
        n,
        poly,
        eps_eig,
        min_separation,
        equal_pairs,
    })
}

/// `C_i = e^{−T_ii x0} [φ_i(x0) − Σ_{j>i} r_ij(x0) φ_j(x0)]`.
pub fn constants_from_initial(
    t: &Matrix,
    pcoef: &PCoefficients,
    phi0: &[C64],
    x0: f64,
) -> Result<Vec<C64>> {
    let n = t.rows();
    if phi0.len() != n || pcoef.n() != n {
        return Err(Error::dim(format!(
            "initial state has length {}, system has {n}",
            phi0.len()
        )));
    }
    let mut c = vec![ZERO; n];
    for i in (0..n).rev() {
        let mut acc = phi0[i];
        for j in i + 1..n {
            acc -= pcoef.eval_r(i, j, x0) * phi0[j];
        }
        c[i] = acc * (-t[(i, i)] * x0).exp();
    }
    Ok(c)
}

/// Integration constants for `y' = Ay` given the Schur form of `A` and
/// the initial condition `y(x0) = y0`.
pub fn integration_constants(
    schur: &SchurForm,
    pcoef: &PCoefficients,
    y0: &[C64],
    x0: f64,
) -> Result<Vec<C64>> {
    let vinv = linalg::unitary_inverse(&schur.v)?;
    let phi0 = matvec(&vinv, y0)?;
    constants_from_initial(&schur.t, pcoef, &phi0, x0)
}

/// Solution of an upper-triangular linear system in closed form.
#[derive(Debug, Clone)]
pub struct TriangularFlow {
    t: Matrix,
    pcoef: PCoefficients,
    constants: Vec<C64>,
    x0: f64,
}

impl TriangularFlow {
    /// `eps_eig = None` selects [`default_eps_eig`].
    pub fn new(t: Matrix, phi0: &[C64], x0: f64, eps_eig: Option<f64>) -> Result<Self> {
        let eps = eps_eig.unwrap_or_else(|| default_eps_eig(&t));
        let pcoef = p_coefficients(&t, eps)?;
        let constants = constants_from_initial(&t, &pcoef, phi0, x0)?;
        Ok(TriangularFlow {
            t,
            pcoef,
            constants,
            x0,
        })
    }

    pub fn dim(&self) -> usize {
        self.t.rows()
    }

    pub fn t(&self) -> &Matrix {
        &self.t
    }

    pub fn pcoef(&self) -> &PCoefficients {
        &self.pcoef
    }

    pub fn constants(&self) -> &[C64] {
        &self.constants
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// Φ(x), evaluated bottom-up from `φ_n`.
    pub fn phi(&self, x: f64) -> Vec<C64> {
        let n = self.dim();
        let mut phi = vec![ZERO; n];
        for i in (0..n).rev() {
            let mut acc = self.constants[i] * (self.t[(i, i)] * x).exp();
            for j in i + 1..n {
                let r = self.pcoef.r(i, j);
                if !r.is_empty() {
                    acc += horner(r, x) * phi[j];
                }
            }
            phi[i] = acc;
        }
        phi
    }
}

/// Closed-form solution of `y' = Ay`, `y(x0) = y0`, as `y = V Φ`.
#[derive(Debug, Clone)]
pub struct ExpPolySolution {
    pub schur: SchurForm,
    flow: TriangularFlow,
}

impl ExpPolySolution {
    pub fn pcoef(&self) -> &PCoefficients {
        self.flow.pcoef()
    }

    pub fn constants(&self) -> &[C64] {
        self.flow.constants()
    }

    pub fn x0(&self) -> f64 {
        self.flow.x0()
    }

    pub fn flow(&self) -> &TriangularFlow {
        &self.flow
    }

    pub fn phi(&self, x: f64) -> Vec<C64> {
        self.flow.phi(x)
    }

    /// `y(x) = V Φ(x)`.
    pub fn y(&self, x: f64) -> Vec<C64> {
        matvec(&self.schur.v, &self.flow.phi(x)).expect("square factor")
    }

    /// Real part of `y(x)`, for real problems.
    pub fn y_real(&self, x: f64) -> Vec<f64> {
        self.y(x).into_iter().map(|z| z.re).collect()
    }
}

pub fn evaluate_phi(sol: &ExpPolySolution, x: f64) -> Vec<C64> {
    sol.phi(x)
}

/// Schur-decomposes `A` and assembles the closed-form solution.
pub fn solve_linear_ivp(
    a: &Matrix,
    y0: &[C64],
    x0: f64,
    eps_eig: Option<f64>,
) -> Result<ExpPolySolution> {
    solve_linear_ivp_with(a, y0, x0, eps_eig, DEFAULT_MAX_ITER)
}

/// [`solve_linear_ivp`] with an explicit QR iteration budget per eigenvalue.
pub fn solve_linear_ivp_with(
    a: &Matrix,
    y0: &[C64],
    x0: f64,
    eps_eig: Option<f64>,
    max_iter: usize,
) -> Result<ExpPolySolution> {
    if !a.is_square() {
        return Err(linalg::LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        }
        .into());
    }
    if y0.len() != a.rows() {
        return Err(Error::dim(format!(
            "initial condition has length {}, matrix is {}x{}",
            y0.len(),
            a.rows(),
            a.cols()
        )));
    }
    let schur = linalg::schur_decompose(a, max_iter)?;
    let phi0 = matvec(&linalg::unitary_inverse(&schur.v)?, y0)?;
    let flow = TriangularFlow::new(schur.t.clone(), &phi0, x0, eps_eig)?;
    Ok(ExpPolySolution { schur, flow })
}

/// Convenience for real initial conditions.
pub fn real_vector(y: &[f64]) -> Vec<C64> {
    y.iter().map(|&v| C64::new(v, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn real(rows: &[&[f64]]) -> Matrix {
        Matrix::from_real_rows(rows).unwrap()
    }

    /// Largest residual of the three coefficient identities.
    fn recursion_residual(t: &Matrix, p: &PCoefficients) -> f64 {
        let n = t.rows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let d = t[(j, j)] - t[(i, i)];
                for k in 0..n {
                    let s: C64 = (i + 1..j).map(|m| t[(m, j)] * p.get(i, m, k)).sum();
                    let lhs = if k == 0 { t[(i, j)] } else { ZERO };
                    let next = if k + 1 < n { p.get(i, j, k + 1) * (k + 1) as f64 } else { ZERO };
                    let res = lhs - next - d * p.get(i, j, k) - s;
                    worst = worst.max(res.norm());
                }
            }
        }
        worst
    }

    fn random_upper(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut t = Matrix::zeros(n, n);
        // eigenvalues spaced at least 0.1 apart
        let mut eig: Vec<f64> = Vec::new();
        while eig.len() < n {
            let cand = rng.gen_range(-1.5..1.5);
            if eig.iter().all(|&e: &f64| (e - cand).abs() >= 0.1) {
                eig.push(cand);
            }
        }
        for i in 0..n {
            t[(i, i)] = C64::new(eig[i], rng.gen_range(-1.0..1.0));
            for j in i + 1..n {
                t[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        t
    }

    #[test]
    fn diagonal_t_has_no_coupling_polynomials() {
        let t = Matrix::diagonal(&[c(1.0), c(-2.0), c(0.5), c(0.5)]);
        let p = p_coefficients(&t, 1e-8).unwrap();
        assert_eq!(p.max_degree(), None);
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    assert_eq!(p.get(i, j, k), ZERO);
                }
            }
        }
    }

    #[test]
    fn equal_eigenvalue_block_gives_linear_r() {
        let lambda = C64::new(0.3, -0.2);
        let tval = C64::new(1.7, 0.4);
        let t = Matrix::from_rows(&[vec![lambda, tval], vec![ZERO, lambda]]).unwrap();
        let p = p_coefficients(&t, 1e-8).unwrap();
        assert_eq!(p.get(0, 1, 0), ZERO);
        assert_eq!(p.get(0, 1, 1), tval);
        assert_eq!(p.equal_pairs(), 1);
    }

    #[test]
    fn distinct_pair_gives_constant_r() {
        let t = real(&[&[1.0, 1.0], &[0.0, 2.0]]);
        let p = p_coefficients(&t, 1e-8).unwrap();
        assert_eq!(p.get(0, 1, 0), c(1.0));
        assert_eq!(p.get(0, 1, 1), ZERO);
        assert_eq!(p.min_separation(), Some(1.0));
    }

    #[test]
    fn non_triangular_input_is_rejected() {
        let t = real(&[&[1.0, 0.0], &[1.0, 2.0]]);
        assert!(matches!(
            p_coefficients(&t, 1e-8),
            Err(Error::NotTriangular { row: 1, col: 0 })
        ));
        assert!(p_coefficients(&Matrix::zeros(2, 3), 1e-8).is_err());
    }

    #[test]
    fn recursion_identities_hold_on_random_triangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..=8);
            let t = random_upper(n, &mut rng);
            let p = p_coefficients(&t, default_eps_eig(&t)).unwrap();
            assert!(recursion_residual(&t, &p) <= 1e-12 * t.frobenius_norm());
        }
    }

    #[test]
    fn recursion_identities_hold_with_repeated_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(2..=7);
            let values = [C64::new(0.5, 1.0), C64::new(-0.25, 0.0)];
            let mut t = Matrix::zeros(n, n);
            for i in 0..n {
                t[(i, i)] = values[rng.gen_range(0..2)];
                for j in i + 1..n {
                    t[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
            let p = p_coefficients(&t, default_eps_eig(&t)).unwrap();
            assert!(recursion_residual(&t, &p) <= 1e-12 * t.frobenius_norm());
            assert!(p.max_degree().unwrap_or(0) < n);
        }
    }

    #[test]
    fn integration_constants_examples() {
        let s = SchurForm {
            t: Matrix::diagonal(&[c(-1.0), c(3.0)]),
            v: Matrix::identity(2),
            source_norm: 1.0,
        };
        let p = p_coefficients(&s.t, 1e-8).unwrap();
        let y0 = [c(0.25), c(-4.0)];
        assert_eq!(integration_constants(&s, &p, &y0, 0.0).unwrap(), y0.to_vec());

        let s = SchurForm {
            t: real(&[&[1.0, 1.0], &[0.0, 2.0]]),
            v: Matrix::identity(2),
            source_norm: 1.0,
        };
        let p = p_coefficients(&s.t, 1e-8).unwrap();
        let (a, b) = (0.7, -1.3);
        let cst = integration_constants(&s, &p, &[c(a), c(b)], 0.0).unwrap();
        assert!((cst[0] - c(a - b)).norm() < 1e-15);
        assert!((cst[1] - c(b)).norm() < 1e-15);

        let s = SchurForm {
            t: real(&[&[2.0]]),
            v: Matrix::identity(1),
            source_norm: 2.0,
        };
        let p = p_coefficients(&s.t, 1e-8).unwrap();
        let cst = integration_constants(&s, &p, &[c(3.0)], 1.0).unwrap();
        assert!((cst[0] - c(3.0 * (-2.0f64).exp())).norm() < 1e-15);
    }

    #[test]
    fn jordan_block_evaluation() {
        let t = real(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let flow = TriangularFlow::new(t, &[c(0.0), c(1.0)], 0.0, None).unwrap();
        assert_eq!(flow.constants(), &[c(0.0), c(1.0)]);
        let phi = flow.phi(1.0);
        assert!((phi[0] - c(1.0)).norm() < 1e-15);
        assert!((phi[1] - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn diagonal_solution_is_pure_exponential() {
        let a = Matrix::diagonal(&[c(-1.0), c(-2.0)]);
        let sol = solve_linear_ivp(&a, &[c(1.0), c(1.0)], 0.0, None).unwrap();
        for &x in &[0.0, 0.3, 1.0, 2.5] {
            let y = sol.y_real(x);
            assert!((y[0] - (-x).exp()).abs() < 1e-15);
            assert!((y[1] - (-2.0 * x).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn rotation_solution() {
        let a = real(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let sol = solve_linear_ivp(&a, &[c(1.0), c(0.0)], 0.0, None).unwrap();
        for k in 0..=20 {
            let x = 0.35 * k as f64;
            let y = sol.y(x);
            // y1' = y2, y2' = -y1 with y(0) = (1, 0)
            assert!((y[0] - c(x.cos())).norm() < 1e-13);
            assert!((y[1] - c(-x.sin())).norm() < 1e-13);
            let norm = (y[0].norm_sqr() + y[1].norm_sqr()).sqrt();
            assert!((norm - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn initial_condition_is_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.gen_range(1..=9);
            let data: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = Matrix::from_real(n, n, &data).unwrap();
            let y0: Vec<C64> = (0..n).map(|_| c(rng.gen_range(-1.0..1.0))).collect();
            let x0 = rng.gen_range(-1.0..1.0);
            let sol = solve_linear_ivp(&a, &y0, x0, None).unwrap();
            let scale = y0.iter().map(|z| z.norm()).fold(1.0, f64::max);
            let vinv_y0 = matvec(&sol.schur.v.adjoint(), &y0).unwrap();
            let phi = sol.phi(x0);
            for (p, q) in phi.iter().zip(&vinv_y0) {
                assert!((p - q).norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = Matrix::identity(2);
        assert!(matches!(
            solve_linear_ivp(&a, &[c(1.0)], 0.0, None),
            Err(Error::Dimension(_))
        ));
    }
}
