//! Reference computations used to check the closed-form solvers: matrix
//! exponential, fixed-step RK4 and tensor Gauss–Legendre quadrature.

use crate::error::{Error, Result};
use crate::galerkin::BasisIndex;
use crate::linalg::{matmul, matvec, Matrix, RealMatrix, C64};
use crate::par::{self, Execution};
use crate::poly::PolynomialODE;

/// `e^{A x}` by scaling and squaring a Taylor series.
pub fn matrix_exponential(a: &Matrix, x: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::dim("matrix exponential needs a square matrix"));
    }
    let n = a.rows();
    let b = a.scale(C64::new(x, 0.0));
    let norm = b.frobenius_norm();
    let mut squarings = 0;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as i32;
    }
    let b = b.scale(C64::new(2f64.powi(-squarings), 0.0));
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..64 {
        term = matmul(&term, &b)?.scale(C64::new(1.0 / k as f64, 0.0));
        result = result.add(&term)?;
        if term.max_abs() <= 1e-18 * result.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result)?;
    }
    Ok(result)
}

/// `e^{A x} y0`.
pub fn matrix_exponential_apply(a: &Matrix, x: f64, y0: &[C64]) -> Result<Vec<C64>> {
    if y0.len() != a.cols() {
        return Err(Error::dim(format!(
            "vector of length {} for a {}-column matrix",
            y0.len(),
            a.cols()
        )));
    }
    Ok(matvec(&matrix_exponential(a, x)?, y0)?)
}

/// Seeded random real matrix with entries uniform in `[-1, 1]` whose
/// eigenvalues are pairwise at least `min_sep` apart (rejection sampling).
pub fn random_separated_matrix(seed: u64, n: usize, min_sep: f64, max_attempts: usize) -> Result<RealMatrix> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_attempts {
        let data: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let a = RealMatrix::from_vec(n, n, data)?;
        let eig = crate::linalg::schur_decompose(&a.to_complex(), crate::linalg::DEFAULT_MAX_ITER)?.eigenvalues();
        let sep = eig
            .iter()
            .enumerate()
            .flat_map(|(i, a)| eig[i + 1..].iter().map(move |b| (a - b).norm()))
            .fold(f64::INFINITY, f64::min);
        if sep >= min_sep {
            return Ok(a);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no {n}x{n} matrix with eigenvalue separation {min_sep} in {max_attempts} attempts"
    )))
}

/// Classical RK4 with fixed step, sampled at the given abscissae.
///
/// `samples` must be nondecreasing and not below `x0`. The step is
/// shortened where needed so that every sample point is hit exactly.
pub fn rk_integrate(
    sys: &PolynomialODE,
    y0: &[f64],
    x0: f64,
    samples: &[f64],
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = sys.n();
    if y0.len() != n {
        return Err(Error::dim(format!("initial state has length {}, system has {n} variables", y0.len())));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if samples.windows(2).any(|w| w[1] < w[0]) || samples.first().is_some_and(|&s| s < x0) {
        return Err(Error::InvalidArgument("sample points must be sorted and ≥ x0".into()));
    }
    let mut y = y0.to_vec();
    let mut x = x0;
    let mut k4 = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = vec![0.0; n];
    let mut out = Vec::with_capacity(samples.len());
    for &target in samples {
        // abscissae as start + k·step so rounding does not accumulate in x
        let start = x;
        let mut k = 0u64;
        while x < target {
            let mut next = start + (k + 1) as f64 * step;
            if next >= target - step * 1e-12 {
                next = target;
            }
            let h = next - x;
            sys.evaluate_into(x, &y, &mut k4[0]);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k4[0][i];
            }
            sys.evaluate_into(x + 0.5 * h, &tmp, &mut k4[1]);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k4[1][i];
            }
            sys.evaluate_into(x + 0.5 * h, &tmp, &mut k4[2]);
            for i in 0..n {
                tmp[i] = y[i] + h * k4[2][i];
            }
            sys.evaluate_into(next, &tmp, &mut k4[3]);
            for i in 0..n {
                y[i] += h / 6.0 * (k4[0][i] + 2.0 * k4[1][i] + 2.0 * k4[2][i] + k4[3][i]);
            }
            x = next;
            k += 1;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { x });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// State at `x1` only.
pub fn rk_final(sys: &PolynomialODE, y0: &[f64], x0: f64, x1: f64, step: f64) -> Result<Vec<f64>> {
    if x1 < x0 {
        return Err(Error::InvalidArgument("x1 must not be below x0".into()));
    }
    Ok(rk_integrate(sys, y0, x0, &[x1], step)?.pop().expect("one sample"))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_legendre(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("quadrature order must be ≥ 1".into()));
        }
        let q = order;
        let mut points = vec![0.0; q];
        let mut weights = vec![0.0; q];
        for i in 0..q.div_ceil(2) {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_and_derivative(q, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() <= 1e-15 {
                    dp = legendre_and_derivative(q, z).1;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            points[i] = -z;
            points[q - 1 - i] = z;
            weights[i] = w;
            weights[q - 1 - i] = w;
        }
        if q % 2 == 1 {
            points[q / 2] = 0.0;
        }
        Ok(QuadratureRule { points, weights })
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    /// `∫_{-1}^{1} g(y) dy` by this rule.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * g(p)).sum()
    }
}

/// `(P_q(z), P_q'(z))` for the classical Legendre polynomial.
fn legendre_and_derivative(q: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 1..q {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * z * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = q as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A sparse polynomial in `n` variables as `(exponents, coefficient)`.
pub type MonomialList = [(Vec<u32>, f64)];

/// Tensor Gauss–Legendre approximation of `∫ f g` over `[-1, 1]ⁿ`, exact for
/// polynomials when every per-axis degree is at most `2·order − 1`.
pub fn quadrature_inner_product(
    f: &MonomialList,
    g: &MonomialList,
    n: usize,
    order: usize,
) -> Result<f64> {
    let axis_degree = |list: &MonomialList, k: usize| list.iter().map(|(e, _)| e[k]).max().unwrap_or(0);
    for k in 0..n {
        let deg = (axis_degree(f, k) + axis_degree(g, k)) as usize;
        if deg + 1 > 2 * order {
            return Err(Error::UnderResolved { order, degree: deg });
        }
    }
    let rule = QuadratureRule::gauss_legendre(order)?;
    let eval = |list: &MonomialList, y: &[f64]| -> f64 {
        list.iter()
            .map(|(e, c)| c * e.iter().zip(y).map(|(&g, v)| v.powi(g as i32)).product::<f64>())
            .sum()
    };
    let mut total = 0.0;
    let mut idx = vec![0usize; n];
    let mut y = vec![0.0; n];
    loop {
        let mut w = 1.0;
        for k in 0..n {
            y[k] = rule.points[idx[k]];
            w *= rule.weights[idx[k]];
        }
        total += w * eval(f, &y) * eval(g, &y);
        if !advance(&mut idx, order) {
            break;
        }
    }
    Ok(total)
}

fn advance(idx: &mut [usize], base: usize) -> bool {
    for d in idx.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Normalized Legendre values and derivatives `N_i(y), N_i'(y)` for
/// `i = 0..=sigma`, by the three-term recurrence at the point.
pub fn normalized_legendre_at(sigma: usize, y: f64) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; sigma + 1];
    let mut dp = vec![0.0; sigma + 1];
    p[0] = 1.0;
    if sigma >= 1 {
        p[1] = y;
        dp[1] = 1.0;
    }
    for i in 1..sigma {
        let fi = i as f64;
        p[i + 1] = ((2.0 * fi + 1.0) * y * p[i] - fi * p[i - 1]) / (fi + 1.0);
        dp[i + 1] = dp[i - 1] + (2.0 * fi + 1.0) * p[i];
    }
    for i in 0..=sigma {
        let c = ((2 * i + 1) as f64 / 2.0).sqrt();
        p[i] *= c;
        dp[i] *= c;
    }
    (p, dp)
}

/// Operator matrix `M_ij = ∫ (∇h_i · f) h_j` by tensor quadrature with
/// point evaluation of the basis; independent of the symbolic assembly.
pub fn quadrature_operator_matrix(
    sys: &PolynomialODE,
    basis: &BasisIndex,
    exec: Execution,
) -> Result<RealMatrix> {
    if sys.n() != basis.n() {
        return Err(Error::dim("field and basis dimensions differ"));
    }
    if !sys.is_autonomous() {
        return Err(Error::InvalidArgument("field depends on x".into()));
    }
    let n = basis.n();
    let m = basis.m();
    let sigma = basis.sigma();
    // per-axis degree ≤ (σ − 1 + deg f) + σ
    let degree = 2 * sigma + sys.max_exponent() as usize;
    let order = degree / 2 + 1;
    let rule = QuadratureRule::gauss_legendre(order)?;

    let mut nodes = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        nodes.push(idx.clone());
        if !advance(&mut idx, order) {
            break;
        }
    }
    // per node: weight, basis values, total derivatives ∇h_i · f
    let per_node = par::map_slice(exec, &nodes, |idx| {
        let y: Vec<f64> = idx.iter().map(|&i| rule.points[i]).collect();
        let w: f64 = idx.iter().map(|&i| rule.weights[i]).product();
        let axes: Vec<(Vec<f64>, Vec<f64>)> = y.iter().map(|&v| normalized_legendre_at(sigma, v)).collect();
        let f = sys.evaluate_rhs(&y);
        let mut h = vec![0.0; m];
        let mut dh = vec![0.0; m];
        for i in 0..m {
            let r = basis.row(i);
            h[i] = (0..n).map(|k| axes[k].0[r[k] as usize]).product();
            dh[i] = (0..n)
                .map(|k| {
                    let mut term = f[k] * axes[k].1[r[k] as usize];
                    for l in (0..n).filter(|&l| l != k) {
                        term *= axes[l].0[r[l] as usize];
                    }
                    term
                })
                .sum();
        }
        (w, h, dh)
    });
    let rows = par::map_indexed(exec, m, |i| {
        let mut row = vec![0.0; m];
        for (w, h, dh) in &per_node {
            let a = w * dh[i];
            for (rj, hj) in row.iter_mut().zip(h) {
                *rj += a * hj;
            }
        }
        row
    });
    Ok(RealMatrix::from_vec(m, m, rows.concat())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::{monomial_integral, ordering, GalerkinSystem};
    use crate::poly::parse_system;
    use rand::{Rng, SeedableRng};

    fn c(v: f64) -> C64 {
        C64::new(v, 0.0)
    }

    #[test]
    fn random_matrices_are_separated_and_seeded() {
        let a = random_separated_matrix(7, 10, 0.1, 1000).unwrap();
        let b = random_separated_matrix(7, 10, 0.1, 1000).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|v| v.abs() <= 1.0));
        assert!(random_separated_matrix(7, 10, 100.0, 3).is_err());
    }

    #[test]
    fn exponential_examples() {
        let y0 = [c(0.3), c(-2.0)];
        let zero = Matrix::zeros(2, 2);
        assert_eq!(matrix_exponential_apply(&zero, 5.0, &y0).unwrap(), y0.to_vec());

        let d = Matrix::from_real_rows(&[&[0.5, 0.0], &[0.0, -1.5]]).unwrap();
        let out = matrix_exponential_apply(&d, 2.0, &y0).unwrap();
        assert!((out[0].re - 0.3 * 1f64.exp()).abs() < 1e-14);
        assert!((out[1].re + 2.0 * (-3f64).exp()).abs() < 1e-14);

        let nil = Matrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        let out = matrix_exponential_apply(&nil, 7.0, &y0).unwrap();
        assert!((out[0].re - (0.3 - 14.0)).abs() < 1e-13);
        assert!((out[1].re + 2.0).abs() < 1e-15);

        // rotation over a long window exercises the squaring phase
        let rot = Matrix::from_real_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap();
        let out = matrix_exponential_apply(&rot, 20.0, &[c(1.0), c(0.0)]).unwrap();
        assert!((out[0].re - 20f64.cos()).abs() < 1e-12);
        assert!((out[1].re + 20f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn rk_examples() {
        let growth = parse_system("var y\ndy = 1 y\n").unwrap();
        let y1 = rk_final(&growth, &[1.0], 0.0, 1.0, 1e-3).unwrap();
        assert!((y1[0] - std::f64::consts::E).abs() < 1e-10);

        let osc = parse_system("var q p\ndq = 1 p\ndp = -1 q\n").unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let y = rk_final(&osc, &[1.0, 0.0], 0.0, tau, 1e-4).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9);

        let still = parse_system("var a b\n").unwrap();
        let ys = rk_integrate(&still, &[0.4, 0.5], 0.0, &[0.0, 1.0, 3.0], 0.1).unwrap();
        assert!(ys.iter().all(|y| y == &vec![0.4, 0.5]));
    }

    #[test]
    fn rk_is_fourth_order() {
        let growth = parse_system("var y\ndy = 1 y\n").unwrap();
        let err = |h: f64| (rk_final(&growth, &[1.0], 0.0, 1.0, h).unwrap()[0] - 1f64.exp()).abs();
        let ratio = err(0.02) / err(0.01);
        assert!((14.0..=18.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn rk_reports_divergence() {
        let blow = parse_system("var y\ndy = 1 y^2\n").unwrap();
        match rk_final(&blow, &[1.0], 0.0, 2.0, 1e-3) {
            Err(Error::Divergence { x }) => assert!(x > 0.9 && x <= 2.0),
            other => panic!("{other:?}"),
        }
        assert!(rk_final(&blow, &[1.0], 0.0, 1.0, 0.0).is_err());
        assert!(rk_integrate(&blow, &[1.0], 0.0, &[0.5, 0.2], 0.1).is_err());
    }

    #[test]
    fn rk_handles_non_autonomous_fields() {
        let sys = parse_system("var y\ndy = 2 x\n").unwrap();
        let y = rk_final(&sys, &[0.0], 0.0, 1.5, 1e-2).unwrap();
        assert!((y[0] - 2.25).abs() < 1e-13);
    }

    #[test]
    fn exponential_matches_rk_on_linear_systems() {
        let sys = parse_system("var a b c\nda = -0.2 a ; 1 b\ndb = -1 a ; 0.1 c\ndc = 0.3 a ; -0.4 c\n").unwrap();
        let a = sys.linear_matrix().unwrap().to_complex();
        let y0 = [1.0, -0.5, 0.25];
        let rk = rk_final(&sys, &y0, 0.0, 3.0, 1e-3).unwrap();
        let ex = matrix_exponential_apply(&a, 3.0, &y0.map(c)).unwrap();
        for (r, e) in rk.iter().zip(&ex) {
            assert!((r - e.re).abs() < 1e-9);
        }
    }

    #[test]
    fn gauss_legendre_rules() {
        for q in 1..=20 {
            let rule = QuadratureRule::gauss_legendre(q).unwrap();
            let wsum: f64 = rule.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-14);
            for k in 0..q {
                let got = rule.integrate(|y| y.powi(2 * k as i32));
                assert!((got - 2.0 / (2 * k + 1) as f64).abs() < 1e-13, "q={q} k={k}");
            }
        }
        assert!(QuadratureRule::gauss_legendre(0).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let one = vec![(vec![0, 0], 1.0)];
        assert!((quadrature_inner_product(&one, &one, 2, 1).unwrap() - 4.0).abs() < 1e-15);
        let y = vec![(vec![1], 1.0)];
        assert!((quadrature_inner_product(&y, &y, 1, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            quadrature_inner_product(&y, &y, 1, 1),
            Err(Error::UnderResolved { .. })
        ));
    }

    #[test]
    fn inner_product_matches_parity_integral() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..=3);
            let e: Vec<u32> = (0..n).map(|_| rng.gen_range(0..=8)).collect();
            let f = vec![(e.clone(), 1.0)];
            let g = vec![(vec![0; n], 1.0)];
            let q = quadrature_inner_product(&f, &g, n, 5).unwrap();
            assert!((q - monomial_integral(&e)).abs() < 1e-13);
        }
    }

    #[test]
    fn pointwise_legendre_matches_tables() {
        let tables = crate::galerkin::legendre_tables(9);
        for &y in &[-1.0, -0.37, 0.0, 0.5, 0.93] {
            let (p, dp) = normalized_legendre_at(9, y);
            for i in 0..=9 {
                assert!((p[i] - tables.eval(i, y)).abs() < 1e-12);
                assert!((dp[i] - tables.eval_derivative(i, y)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn quadrature_oracle_matches_assembly() {
        let sys = parse_system("var q p\ndq = 1 p\ndp = -1 q ; -0.1 q^3\n").unwrap();
        let g = GalerkinSystem::build(&sys, 3, &[1.0, 0.0]).unwrap();
        let quad = quadrature_operator_matrix(&sys, &ordering(2, 3).unwrap(), Execution::default()).unwrap();
        for i in 0..g.dim() {
            for j in 0..g.dim() {
                assert!((quad[(i, j)] - g.m[(i, j)]).abs() < 1e-10);
            }
        }
    }
}
