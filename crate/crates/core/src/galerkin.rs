//! Galerkin linearization on orthonormal Legendre product bases.
//!
//! A polynomial field `dy/dx = f(y)` on `[-1, 1]ⁿ` is replaced by the linear
//! system `dh/dx = M h` for the basis values `h_i = Π_k N_{I(i,k)}(y_k)`,
//! where `M_ij = ∫ (∇h_i · f) h_j dy`. The original variables are recovered
//! as `y = H h`.
//!
//! All indices here are 0-based: basis 0 is the constant function and basis
//! `k + 1` is the first-order function of variable `k`.

use std::collections::BTreeMap;

use crate::accum::Dot2;
use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::par::{self, Execution};
use crate::poly::PolynomialODE;

pub const DEFAULT_BASIS_CAP: usize = 20_000;

/// Limit on the number of distinct monomials in one row's total-derivative
/// polynomial.
pub const DEFAULT_MONOMIAL_CAP: usize = 2_000_000;

/// `binomial(n + sigma, n)` with the default cap.
pub fn basis_number(n: usize, sigma: usize) -> Result<usize> {
    basis_number_capped(n, sigma, DEFAULT_BASIS_CAP)
}

pub fn basis_number_capped(n: usize, sigma: usize, cap: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidArgument("basis needs at least one variable".into()));
    }
    // C(n+σ, n) = Π_{k=1..n} (σ+k)/k, exact at every step
    let mut m: u128 = 1;
    for k in 1..=n as u128 {
        m = m * (sigma as u128 + k) / k;
        if m > cap as u128 {
            // later factors are ≥ 1, so the final value exceeds the cap too
            let requested = usize::try_from(m).unwrap_or(usize::MAX);
            return Err(Error::Capacity {
                what: "basis functions",
                requested,
                cap,
            });
        }
    }
    Ok(m as usize)
}

/// Exponent table of a graded Legendre basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisIndex {
    n: usize,
    sigma: usize,
    rows: Vec<Vec<u32>>,
    lookup: BTreeMap<Vec<u32>, usize>,
}

impl BasisIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sigma(&self) -> usize {
        self.sigma
    }

    /// Number of basis functions.
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    /// Total order of basis `i`.
    pub fn order(&self, i: usize) -> u32 {
        self.rows[i].iter().sum()
    }

    pub fn position(&self, exponents: &[u32]) -> Option<usize> {
        self.lookup.get(exponents).copied()
    }
}

/// All exponent tuples of total order ≤ `sigma`, graded, and within a grade
/// in base-(σ+1) counter order with the first variable as the fastest digit.
pub fn ordering(n: usize, sigma: usize) -> Result<BasisIndex> {
    ordering_capped(n, sigma, DEFAULT_BASIS_CAP)
}

pub fn ordering_capped(n: usize, sigma: usize, cap: usize) -> Result<BasisIndex> {
    let m = basis_number_capped(n, sigma, cap)?;
    let mut rows: Vec<Vec<u32>> = Vec::with_capacity(m);
    for grade in 0..=sigma as u32 {
        let mut counter = vec![0u32; n];
        loop {
            if counter.iter().sum::<u32>() == grade {
                rows.push(counter.clone());
            }
            // advance the counter; stop once it wraps past (0,…,0,grade)
            let mut k = 0;
            loop {
                if k == n {
                    break;
                }
                if counter[k] < grade {
                    counter[k] += 1;
                    break;
                }
                counter[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
    }
    debug_assert_eq!(rows.len(), m);
    let lookup = rows.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
    Ok(BasisIndex {
        n,
        sigma,
        rows,
        lookup,
    })
}

/// 1-D Legendre coefficient tables; row `i` holds the degree-`i` polynomial
/// in increasing monomial order.
#[derive(Debug, Clone, PartialEq)]
pub struct Legendre1D {
    pub sigma: usize,
    /// Classical Legendre polynomials.
    pub l: RealMatrix,
    /// Orthonormal on `[-1, 1]`.
    pub n: RealMatrix,
    /// Derivatives of the rows of `n`.
    pub d: RealMatrix,
}

impl Legendre1D {
    /// `N_i(y)`.
    pub fn eval(&self, i: usize, y: f64) -> f64 {
        horner(self.n.row(i), y)
    }

    /// `N_i'(y)`.
    pub fn eval_derivative(&self, i: usize, y: f64) -> f64 {
        horner(self.d.row(i), y)
    }

    /// `[N_0(y), …, N_σ(y)]`.
    pub fn eval_all(&self, y: f64) -> Vec<f64> {
        (0..=self.sigma).map(|i| self.eval(i, y)).collect()
    }
}

fn horner(coeffs: &[f64], y: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * y + c)
}

pub fn legendre_tables(sigma: usize) -> Legendre1D {
    let s = sigma + 1;
    let mut l = RealMatrix::zeros(s, s);
    l[(0, 0)] = 1.0;
    if sigma >= 1 {
        l[(1, 1)] = 1.0;
    }
    for i in 1..sigma {
        let fi = i as f64;
        for j in 0..=i + 1 {
            let shifted = if j > 0 { l[(i, j - 1)] } else { 0.0 };
            l[(i + 1, j)] = ((2.0 * fi + 1.0) * shifted - fi * l[(i - 1, j)]) / (fi + 1.0);
        }
    }
    let mut n = RealMatrix::zeros(s, s);
    for i in 0..s {
        let c = ((2 * i + 1) as f64 / 2.0).sqrt();
        for j in 0..=i {
            n[(i, j)] = c * l[(i, j)];
        }
    }
    let mut d = RealMatrix::zeros(s, s);
    for i in 0..s {
        for j in 0..i {
            d[(i, j)] = (j + 1) as f64 * n[(i, j + 1)];
        }
    }
    Legendre1D { sigma, l, n, d }
}

/// Sparse coefficient table of the multidimensional basis polynomials:
/// entry `(i, j)` is the coefficient of monomial `I[j]` in basis `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLegendre {
    rows: Vec<Vec<(usize, f64)>>,
}

impl MultiLegendre {
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// Nonzero `(j, coefficient)` pairs of basis `i`, sorted by `j`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |p| self.rows[i][p].1)
    }

    pub fn to_dense(&self) -> RealMatrix {
        let m = self.m();
        let mut out = RealMatrix::zeros(m, m);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, c) in row {
                out[(i, j)] = c;
            }
        }
        out
    }
}

/// `𝓛(i, j) = Π_k N[I(i,k)][I(j,k)]`.
pub fn multidim_legendre(basis: &BasisIndex, oned: &Legendre1D) -> MultiLegendre {
    let rows = basis
        .rows()
        .iter()
        .map(|ri| {
            let poly = product_poly(ri, |_, g| oned.n.row(g as usize));
            let mut row: Vec<(usize, f64)> = poly
                .into_iter()
                .map(|(e, c)| (basis.position(&e).expect("sub-tuple of a basis row"), c))
                .collect();
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    MultiLegendre { rows }
}

/// Expands `Π_k p_k(y_k)` where `p_k = coeffs(k, orders[k])`.
fn product_poly<'a>(
    orders: &[u32],
    coeffs: impl Fn(usize, u32) -> &'a [f64],
) -> BTreeMap<Vec<u32>, f64> {
    let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    acc.insert(Vec::with_capacity(orders.len()), 1.0);
    for (k, &g) in orders.iter().enumerate() {
        let factor = coeffs(k, g);
        let mut next = BTreeMap::new();
        for (e, c) in &acc {
            for (p, &fc) in factor.iter().enumerate() {
                if fc == 0.0 {
                    continue;
                }
                let mut ne = e.clone();
                ne.push(p as u32);
                *next.entry(ne).or_insert(0.0) += c * fc;
            }
        }
        acc = next;
    }
    acc
}

/// `∫_{[-1,1]ⁿ} Π y_k^γ_k dy`: zero for any odd exponent, else `2ⁿ / Π(γ_k+1)`.
pub fn monomial_integral(gamma: &[u32]) -> f64 {
    if gamma.iter().any(|g| g % 2 == 1) {
        return 0.0;
    }
    gamma.iter().map(|&g| 2.0 / (g as f64 + 1.0)).product()
}

/// `(2ⁿ, Π(γ_k+1))` so that the integral is their exact ratio; `None` when
/// it vanishes by parity.
pub fn monomial_integral_parts(gamma: &[u32]) -> Option<(f64, f64)> {
    if gamma.iter().any(|g| g % 2 == 1) {
        return None;
    }
    let den = gamma.iter().map(|&g| g as f64 + 1.0).product();
    Some((2f64.powi(gamma.len() as i32), den))
}

/// Per-row options for [`operator_matrix`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub exec: Execution,
    pub monomial_cap: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            exec: Execution::default(),
            monomial_cap: DEFAULT_MONOMIAL_CAP,
        }
    }
}

/// Sparse basis polynomials in exponent form, shared by all rows.
struct BasisPolys {
    polys: Vec<Vec<(Vec<u32>, f64)>>,
}

impl BasisPolys {
    fn new(basis: &BasisIndex, lmulti: &MultiLegendre) -> Self {
        let polys = (0..basis.m())
            .map(|i| {
                lmulti
                    .row(i)
                    .iter()
                    .map(|&(j, c)| (basis.row(j).to_vec(), c))
                    .collect()
            })
            .collect();
        BasisPolys { polys }
    }
}

/// `Σ_k (∂h_i/∂y_k) f_k` as a sparse monomial map.
fn total_derivative(
    sys: &PolynomialODE,
    basis: &BasisIndex,
    oned: &Legendre1D,
    i: usize,
    cap: usize,
) -> Result<BTreeMap<Vec<u32>, f64>> {
    let ri = basis.row(i);
    let mut out: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (k, fk) in sys.equations().iter().enumerate() {
        if ri[k] == 0 || fk.is_empty() {
            continue;
        }
        let partial = product_poly(ri, |axis, g| {
            if axis == k {
                oned.d.row(g as usize)
            } else {
                oned.n.row(g as usize)
            }
        });
        for (e, c) in &partial {
            for mono in fk {
                let key: Vec<u32> = e.iter().zip(&mono.exponents).map(|(a, b)| a + b).collect();
                *out.entry(key).or_insert(0.0) += c * mono.coeff;
            }
            if out.len() > cap {
                return Err(Error::Capacity {
                    what: "intermediate monomials",
                    requested: out.len(),
                    cap,
                });
            }
        }
    }
    Ok(out)
}

fn assemble_row(
    sys: &PolynomialODE,
    basis: &BasisIndex,
    oned: &Legendre1D,
    polys: &BasisPolys,
    i: usize,
    cap: usize,
    skip_odd: bool,
) -> Result<Vec<f64>> {
    let deriv = total_derivative(sys, basis, oned, i, cap)?;
    let n = basis.n();
    let mut row = vec![0.0; basis.m()];
    let mut sum = vec![0u32; n];
    for (j, hj) in polys.polys.iter().enumerate() {
        let mut acc = Dot2::new();
        for (ea, ca) in &deriv {
            for (eb, cb) in hj {
                let mut odd = false;
                for k in 0..n {
                    sum[k] = ea[k] + eb[k];
                    odd |= sum[k] % 2 == 1;
                }
                if odd && skip_odd {
                    continue;
                }
                match monomial_integral_parts(&sum) {
                    Some((num, den)) => acc.add_ratio(ca * num, *cb, den),
                    None => acc.add_product(ca * cb, 0.0),
                }
            }
        }
        row[j] = acc.value();
    }
    Ok(row)
}

fn check_field(sys: &PolynomialODE, basis: &BasisIndex) -> Result<()> {
    if sys.n() != basis.n() {
        return Err(Error::dim(format!(
            "field has {} variables, basis has {}",
            sys.n(),
            basis.n()
        )));
    }
    if !sys.is_autonomous() {
        return Err(Error::InvalidArgument(
            "field depends on x; autonomize it first".into(),
        ));
    }
    Ok(())
}

/// `M_ij = ∫ (∇h_i · f) h_j` over `[-1, 1]ⁿ`, assembled row by row.
pub fn operator_matrix(
    sys: &PolynomialODE,
    basis: &BasisIndex,
    oned: &Legendre1D,
    lmulti: &MultiLegendre,
    opts: AssemblyOptions,
) -> Result<RealMatrix> {
    operator_matrix_impl(sys, basis, oned, lmulti, opts, true)
}

fn operator_matrix_impl(
    sys: &PolynomialODE,
    basis: &BasisIndex,
    oned: &Legendre1D,
    lmulti: &MultiLegendre,
    opts: AssemblyOptions,
    skip_odd: bool,
) -> Result<RealMatrix> {
    check_field(sys, basis)?;
    let polys = BasisPolys::new(basis, lmulti);
    let m = basis.m();
    let rows = par::map_indexed(opts.exec, m, |i| {
        assemble_row(sys, basis, oned, &polys, i, opts.monomial_cap, skip_odd)
    });
    let mut data = Vec::with_capacity(m * m);
    for row in rows {
        data.extend(row?);
    }
    Ok(RealMatrix::from_vec(m, m, data)?)
}

/// `H[k][k+1] = √(2ⁿ/3)`, zero elsewhere.
pub fn projection_matrix(n: usize, m: usize) -> Result<RealMatrix> {
    if m < n + 1 {
        return Err(Error::dim(format!(
            "projection needs at least {} basis functions, got {m}",
            n + 1
        )));
    }
    let psi = (2f64.powi(n as i32) / 3.0).sqrt();
    let mut h = RealMatrix::zeros(n, m);
    for k in 0..n {
        h[(k, k + 1)] = psi;
    }
    Ok(h)
}

/// Basis polynomials evaluated at `y0`.
pub fn boundary_conditions(
    lmulti: &MultiLegendre,
    basis: &BasisIndex,
    y0: &[f64],
) -> Result<Vec<f64>> {
    if y0.len() != basis.n() {
        return Err(Error::dim(format!(
            "initial state has length {}, basis has {} variables",
            y0.len(),
            basis.n()
        )));
    }
    let monomials: Vec<f64> = basis
        .rows()
        .iter()
        .map(|e| y0.iter().zip(e).map(|(y, &g)| y.powi(g as i32)).product())
        .collect();
    Ok((0..basis.m())
        .map(|i| lmulti.row(i).iter().map(|&(j, c)| c * monomials[j]).sum())
        .collect())
}

/// Basis, tables, operator, projection and initial basis vector for one
/// field and one initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinSystem {
    pub basis: BasisIndex,
    pub oned: Legendre1D,
    pub lmulti: MultiLegendre,
    pub m: RealMatrix,
    pub h: RealMatrix,
    pub h0: Vec<f64>,
}

impl GalerkinSystem {
    pub fn build(sys: &PolynomialODE, sigma: usize, y0: &[f64]) -> Result<Self> {
        GalerkinSystem::build_with(sys, sigma, y0, AssemblyOptions::default())
    }

    pub fn build_with(
        sys: &PolynomialODE,
        sigma: usize,
        y0: &[f64],
        opts: AssemblyOptions,
    ) -> Result<Self> {
        let space = BasisSpace::new(sys.n(), sigma)?;
        let m = space.operator(sys, opts)?;
        let h0 = space.initial(y0)?;
        let BasisSpace {
            basis,
            oned,
            lmulti,
            h,
        } = space;
        Ok(GalerkinSystem {
            basis,
            oned,
            lmulti,
            m,
            h,
            h0,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.m()
    }

    /// Exact basis values `h(y)`.
    pub fn basis_values(&self, y: &[f64]) -> Vec<f64> {
        basis_values(&self.basis, &self.oned, y)
    }

    /// `H h`.
    pub fn project(&self, h: &[f64]) -> Vec<f64> {
        let n = self.basis.n();
        (0..n).map(|k| self.h[(k, k + 1)] * h[k + 1]).collect()
    }
}

/// Field-independent part of a Galerkin system; reused when several fields
/// (unperturbed part, perturbations) share one basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpace {
    pub basis: BasisIndex,
    pub oned: Legendre1D,
    pub lmulti: MultiLegendre,
    pub h: RealMatrix,
}

impl BasisSpace {
    pub fn new(n: usize, sigma: usize) -> Result<Self> {
        let basis = ordering(n, sigma)?;
        let oned = legendre_tables(sigma);
        let lmulti = multidim_legendre(&basis, &oned);
        let h = projection_matrix(n, basis.m())?;
        Ok(BasisSpace {
            basis,
            oned,
            lmulti,
            h,
        })
    }

    pub fn m(&self) -> usize {
        self.basis.m()
    }

    pub fn operator(&self, sys: &PolynomialODE, opts: AssemblyOptions) -> Result<RealMatrix> {
        operator_matrix(sys, &self.basis, &self.oned, &self.lmulti, opts)
    }

    pub fn initial(&self, y0: &[f64]) -> Result<Vec<f64>> {
        boundary_conditions(&self.lmulti, &self.basis, y0)
    }
}

/// `h_i(y) = Π_k N_{I(i,k)}(y_k)` from 1-D values.
pub fn basis_values(basis: &BasisIndex, oned: &Legendre1D, y: &[f64]) -> Vec<f64> {
    let axes: Vec<Vec<f64>> = y.iter().map(|&v| oned.eval_all(v)).collect();
    basis
        .rows()
        .iter()
        .map(|r| r.iter().enumerate().map(|(k, &g)| axes[k][g as usize]).product())
        .collect()
}
