//! Perturbation schemes for `dh/dx = (B + εP) h`.
//!
//! Every scheme is reduced to one upper-triangular system over a stack of
//! Schur coordinates and solved by [`TriangularFlow`]. The stack is ordered
//! so that every coupling block sits above the diagonal:
//!
//! | scheme | stack | diagonal | coupling | `h` |
//! |---|---|---|---|---|
//! | direct | `Φ` | `U` (of `M`) | none | `WΦ` |
//! | exact decomposition | `[Φᵖ; Φᵐ]` | `U`, `T` | `W*PV` | `VΦᵐ + εWΦᵖ` |
//! | first order | `[Φᵖ; Φᵐ]` | `T`, `T` | `V*PV` | `V(Φᵐ + εΦᵖ)` |
//! | order τ | `[Φ⁽ᵗ⁾; …; Φ⁽⁰⁾]` | `T` | `V*PV` | `V Σ εⁱ Φ⁽ⁱ⁾` |
//! | multi-source | `[Φ⁽ᵗ⁾; …; Φ⁽⁰⁾]` | `T` | `V*Q_j V` | `V Σ δⁱ Φ⁽ⁱ⁾` |
//!
//! with `M = WUW*`, `B = VTV*` and `Q_j = Σ_s (ε_s/δ)^j P⁽ˢʲ⁾`. The
//! unperturbed block starts at `V*h0`; every other block starts at zero.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::galerkin::{AssemblyOptions, BasisSpace};
use crate::linalg::{self, matmul, Matrix, RealMatrix, SchurForm, C64, DEFAULT_MAX_ITER};
use crate::poly::SystemDefinition;
use crate::triangular::TriangularFlow;

/// Largest stacked system the block solvers will build.
pub const DEFAULT_STACK_CAP: usize = 4096;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Direct,
    ExactDecomposition,
    ApproxFirstOrder,
    HigherOrder { order: usize },
    MultiSource { order: usize },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Direct => "direct",
            Scheme::ExactDecomposition => "exact-decomp",
            Scheme::ApproxFirstOrder => "approx",
            Scheme::HigherOrder { .. } => "higher-order",
            Scheme::MultiSource { .. } => "multi-source",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Eigenvalue-equality threshold; `None` uses the triangular default.
    pub eps_eig: Option<f64>,
    /// QR iterations allowed per eigenvalue.
    pub max_iter: usize,
    pub stack_cap: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            eps_eig: None,
            max_iter: DEFAULT_MAX_ITER,
            stack_cap: DEFAULT_STACK_CAP,
        }
    }
}

/// `M = B + εP` with a single small parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOperator {
    pub b: RealMatrix,
    pub p: RealMatrix,
    pub epsilon: f64,
}

impl SplitOperator {
    pub fn new(b: RealMatrix, p: RealMatrix, epsilon: f64) -> Result<Self> {
        check_square_pair(&b, &p)?;
        if !epsilon.is_finite() {
            return Err(Error::InvalidArgument("epsilon must be finite".into()));
        }
        Ok(SplitOperator { b, p, epsilon })
    }

    /// Assembles `B` from the unperturbed field and `P` from the first-order
    /// perturbation of the single source of `def`.
    pub fn from_definition(
        space: &BasisSpace,
        def: &SystemDefinition,
        opts: AssemblyOptions,
    ) -> Result<Self> {
        let sources = def.sources();
        if sources.len() != 1 || def.max_order() != 1 {
            return Err(Error::InvalidArgument(format!(
                "a split operator needs exactly one first-order perturbation source, found {} source(s) up to order {}",
                sources.len(),
                def.max_order()
            )));
        }
        let eps = def.param(&sources[0]).expect("declared");
        let b = space.operator(def.base(), opts)?;
        let p = space.operator(&def.perturbation_field(&sources[0], 1), opts)?;
        SplitOperator::new(b, p, eps)
    }

    pub fn m(&self) -> usize {
        self.b.rows()
    }

    pub fn full(&self) -> RealMatrix {
        self.b.add_scaled(self.epsilon, &self.p).expect("checked dimensions")
    }

    pub fn with_epsilon(&self, epsilon: f64) -> SplitOperator {
        SplitOperator {
            epsilon,
            ..self.clone()
        }
    }
}

/// `M = B + Σ_s Σ_k ε_s^k P⁽ˢᵏ⁾` for several sources.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSourceOperator {
    pub b: RealMatrix,
    /// `p[s][k-1]` is `P⁽ˢᵏ⁾`; `None` for absent terms.
    pub p: Vec<Vec<Option<RealMatrix>>>,
    pub eps: Vec<f64>,
    pub delta: f64,
}

impl MultiSourceOperator {
    /// `delta = None` picks `max_s ε_s`.
    pub fn new(
        b: RealMatrix,
        p: Vec<Vec<Option<RealMatrix>>>,
        eps: Vec<f64>,
        delta: Option<f64>,
    ) -> Result<Self> {
        if p.len() != eps.len() {
            return Err(Error::dim(format!(
                "{} perturbation sources but {} parameters",
                p.len(),
                eps.len()
            )));
        }
        for pk in p.iter().flatten().flatten() {
            check_square_pair(&b, pk)?;
        }
        if let Some(bad) = eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "source parameters must be positive, got {bad}"
            )));
        }
        let delta = match delta {
            Some(d) => d,
            None => eps.iter().copied().fold(0.0, f64::max),
        };
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reference parameter must be positive, got {delta}"
            )));
        }
        Ok(MultiSourceOperator { b, p, eps, delta })
    }

    pub fn from_definition(
        space: &BasisSpace,
        def: &SystemDefinition,
        delta: Option<f64>,
        opts: AssemblyOptions,
    ) -> Result<Self> {
        let sources = def.sources();
        let nk = def.max_order() as usize;
        let b = space.operator(def.base(), opts)?;
        let mut p = Vec::with_capacity(sources.len());
        let mut eps = Vec::with_capacity(sources.len());
        for s in &sources {
            let mut row = Vec::with_capacity(nk);
            for k in 1..=nk as u32 {
                let field = def.perturbation_field(s, k);
                row.push(if field.is_zero() {
                    None
                } else {
                    Some(space.operator(&field, opts)?)
                });
            }
            p.push(row);
            eps.push(def.param(s).expect("declared"));
        }
        MultiSourceOperator::new(b, p, eps, delta)
    }

    pub fn m(&self) -> usize {
        self.b.rows()
    }

    pub fn n_sources(&self) -> usize {
        self.eps.len()
    }

    /// Highest perturbation order present.
    pub fn n_orders(&self) -> usize {
        self.p.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `Q_j = Σ_s (ε_s/δ)^j P⁽ˢʲ⁾`, or `None` when no source has order `j`.
    pub fn q(&self, j: usize) -> Option<RealMatrix> {
        let mut acc: Option<RealMatrix> = None;
        for (s, row) in self.p.iter().enumerate() {
            if let Some(Some(pk)) = row.get(j.wrapping_sub(1)) {
                let w = (self.eps[s] / self.delta).powi(j as i32);
                acc = Some(match acc {
                    None => pk.scale(w),
                    Some(a) => a.add_scaled(w, pk).expect("checked dimensions"),
                });
            }
        }
        acc
    }

    pub fn full(&self) -> RealMatrix {
        let mut acc = self.b.clone();
        for (s, row) in self.p.iter().enumerate() {
            for (k, pk) in row.iter().enumerate() {
                if let Some(pk) = pk {
                    let w = self.eps[s].powi(k as i32 + 1);
                    acc = acc.add_scaled(w, pk).expect("checked dimensions");
                }
            }
        }
        acc
    }
}

fn check_square_pair(b: &RealMatrix, p: &RealMatrix) -> Result<()> {
    if b.rows() != b.cols() {
        return Err(linalg::LinalgError::NotSquare {
            rows: b.rows(),
            cols: b.cols(),
        }
        .into());
    }
    if p.rows() != b.rows() || p.cols() != b.cols() {
        return Err(Error::dim(format!(
            "operator blocks {}x{} and {}x{} differ",
            b.rows(),
            b.cols(),
            p.rows(),
            p.cols()
        )));
    }
    Ok(())
}

/// What a stacked block contributes to `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Unperturbed,
    /// Correction of the given order in ε (or δ).
    Perturbation(usize),
}

/// A block upper-triangular system with its reconstruction data.
#[derive(Debug, Clone)]
pub struct BlockTriangularSystem {
    m: usize,
    /// `blocks[r][c]`, `None` for zero blocks; only `c ≥ r` may be set.
    pub blocks: Vec<Vec<Option<Matrix>>>,
    pub ic: Vec<C64>,
    /// Per block: unitary factor mapping it back to `h`, weight, role.
    pub factors: Vec<(Arc<Matrix>, f64, Part)>,
}

impl BlockTriangularSystem {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_size(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.m * self.n_blocks()
    }

    /// The full stacked matrix.
    pub fn assemble(&self) -> Matrix {
        let nb = self.n_blocks();
        let mut out = Matrix::zeros(nb * self.m, nb * self.m);
        for (r, row) in self.blocks.iter().enumerate() {
            for (c, blk) in row.iter().enumerate() {
                if let Some(blk) = blk {
                    out.set_block(r * self.m, c * self.m, blk);
                }
            }
        }
        out
    }

    fn solve(self, proj: &RealMatrix, x0: f64, scheme: Scheme, opts: &SolveOptions) -> Result<PerturbedSolution> {
        let t = self.assemble();
        if !t.is_upper_triangular() {
            let (row, col) = first_below_diagonal(&t);
            return Err(Error::NotTriangular { row, col });
        }
        let flow = TriangularFlow::new(t, &self.ic, x0, opts.eps_eig)?;
        let proj_c = proj.to_complex();
        let projected = self
            .factors
            .iter()
            .map(|(f, _, _)| matmul(&proj_c, f))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(PerturbedSolution {
            scheme,
            system: self,
            flow,
            projected,
        })
    }
}

fn first_below_diagonal(t: &Matrix) -> (usize, usize) {
    for i in 0..t.rows() {
        for j in 0..i.min(t.cols()) {
            if t[(i, j)] != ZERO {
                return (i, j);
            }
        }
    }
    (0, 0)
}

/// Closed-form solution of one scheme.
#[derive(Debug, Clone)]
pub struct PerturbedSolution {
    scheme: Scheme,
    system: BlockTriangularSystem,
    flow: TriangularFlow,
    /// `H · factor` per block.
    projected: Vec<Matrix>,
}

impl PerturbedSolution {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn system(&self) -> &BlockTriangularSystem {
        &self.system
    }

    pub fn flow(&self) -> &TriangularFlow {
        &self.flow
    }

    /// Stacked Schur coordinates.
    pub fn phi(&self, x: f64) -> Vec<C64> {
        self.flow.phi(x)
    }

    fn block<'a>(&self, phi: &'a [C64], b: usize) -> &'a [C64] {
        let m = self.system.m;
        &phi[b * m..(b + 1) * m]
    }

    /// `h(x)` in the basis, complex.
    pub fn h_complex(&self, x: f64) -> Vec<C64> {
        let phi = self.phi(x);
        let m = self.system.m;
        let mut h = vec![ZERO; m];
        for (b, (f, w, _)) in self.system.factors.iter().enumerate() {
            let v = linalg::matvec(f, self.block(&phi, b)).expect("block size");
            for (hi, vi) in h.iter_mut().zip(v) {
                *hi += vi * *w;
            }
        }
        h
    }

    pub fn h(&self, x: f64) -> Vec<f64> {
        self.h_complex(x).into_iter().map(|z| z.re).collect()
    }

    /// Original variables `y = H h`.
    pub fn y(&self, x: f64) -> Vec<f64> {
        let phi = self.phi(x);
        let n = self.projected.first().map_or(0, Matrix::rows);
        let mut y = vec![ZERO; n];
        for (b, (hf, (_, w, _))) in self.projected.iter().zip(&self.system.factors).enumerate() {
            let v = linalg::matvec(hf, self.block(&phi, b)).expect("block size");
            for (yi, vi) in y.iter_mut().zip(v) {
                *yi += vi * *w;
            }
        }
        y.into_iter().map(|z| z.re).collect()
    }

    /// Weighted contributions to `y` of each block, in stack order.
    pub fn y_parts(&self, x: f64) -> Vec<(Part, Vec<f64>)> {
        let phi = self.phi(x);
        self.projected
            .iter()
            .zip(&self.system.factors)
            .enumerate()
            .map(|(b, (hf, (_, w, part)))| {
                let v = linalg::matvec(hf, self.block(&phi, b)).expect("block size");
                (*part, v.into_iter().map(|z| (z * *w).re).collect())
            })
            .collect()
    }

    /// `y` of the unperturbed part alone, weighted, summed.
    pub fn y_unperturbed(&self, x: f64) -> Vec<f64> {
        self.sum_parts(x, |p| p == Part::Unperturbed)
    }

    /// Sum of all weighted perturbation contributions to `y`.
    pub fn y_perturbation(&self, x: f64) -> Vec<f64> {
        self.sum_parts(x, |p| p != Part::Unperturbed)
    }

    fn sum_parts(&self, x: f64, keep: impl Fn(Part) -> bool) -> Vec<f64> {
        let parts = self.y_parts(x);
        let n = parts.first().map_or(0, |p| p.1.len());
        let mut out = vec![0.0; n];
        for (part, v) in parts {
            if keep(part) {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o += vi;
                }
            }
        }
        out
    }
}

fn schur_of(a: &RealMatrix, opts: &SolveOptions) -> Result<SchurForm> {
    Ok(linalg::schur_decompose(&a.to_complex(), opts.max_iter)?)
}

/// `Q* A V` for complex unitary factors and a real middle matrix.
fn transform(q: &Matrix, a: &RealMatrix, v: &Matrix) -> Result<Matrix> {
    Ok(matmul(&q.adjoint(), &matmul(&a.to_complex(), v)?)?)
}

fn check_inputs(m: usize, proj: &RealMatrix, h0: &[f64]) -> Result<()> {
    if proj.cols() != m {
        return Err(Error::dim(format!(
            "projection has {} columns, operator is {m}x{m}",
            proj.cols()
        )));
    }
    if h0.len() != m {
        return Err(Error::dim(format!(
            "initial basis vector has length {}, operator is {m}x{m}",
            h0.len()
        )));
    }
    Ok(())
}

fn check_stack(m: usize, blocks: usize, opts: &SolveOptions) -> Result<()> {
    let requested = m.saturating_mul(blocks);
    if requested > opts.stack_cap {
        return Err(Error::Capacity {
            what: "stacked system dimension",
            requested,
            cap: opts.stack_cap,
        });
    }
    Ok(())
}

/// `Φ(x0) = Q* h0`, remaining blocks zero.
fn stacked_ic(m: usize, blocks: usize, last: &Matrix, h0: &[f64]) -> Result<Vec<C64>> {
    let h0c: Vec<C64> = h0.iter().map(|&v| C64::new(v, 0.0)).collect();
    let mut ic = vec![ZERO; m * (blocks - 1)];
    ic.extend(linalg::matvec(&last.adjoint(), &h0c)?);
    Ok(ic)
}

/// Direct solve of `dh/dx = M h` through `M = WUW*`.
pub fn solve_direct(
    m_op: &RealMatrix,
    proj: &RealMatrix,
    h0: &[f64],
    x0: f64,
    opts: &SolveOptions,
) -> Result<PerturbedSolution> {
    let m = m_op.rows();
    check_inputs(m, proj, h0)?;
    check_stack(m, 1, opts)?;
    let schur = schur_of(m_op, opts)?;
    let w = Arc::new(schur.v);
    let ic = stacked_ic(m, 1, &w, h0)?;
    BlockTriangularSystem {
        m,
        blocks: vec![vec![Some(schur.t)]],
        ic,
        factors: vec![(w, 1.0, Part::Unperturbed)],
    }
    .solve(proj, x0, Scheme::Direct, opts)
}

/// Exact split into unperturbed and perturbation parts.
pub fn solve_exact_decomposition(
    split: &SplitOperator,
    proj: &RealMatrix,
    h0: &[f64],
    x0: f64,
    opts: &SolveOptions,
) -> Result<PerturbedSolution> {
    let m = split.m();
    check_inputs(m, proj, h0)?;
    check_stack(m, 2, opts)?;
    let full = schur_of(&split.full(), opts)?;
    let base = schur_of(&split.b, opts)?;
    let coupling = transform(&full.v, &split.p, &base.v)?;
    let (w, v) = (Arc::new(full.v), Arc::new(base.v));
    let ic = stacked_ic(m, 2, &v, h0)?;
    BlockTriangularSystem {
        m,
        blocks: vec![
            vec![Some(full.t), Some(coupling)],
            vec![None, Some(base.t)],
        ],
        ic,
        factors: vec![
            (w, split.epsilon, Part::Perturbation(1)),
            (v, 1.0, Part::Unperturbed),
        ],
    }
    .solve(proj, x0, Scheme::ExactDecomposition, opts)
}

/// First-order approximation using only the Schur form of `B`.
pub fn solve_approx_first_order(
    split: &SplitOperator,
    proj: &RealMatrix,
    h0: &[f64],
    x0: f64,
    opts: &SolveOptions,
) -> Result<PerturbedSolution> {
    let mut sol = solve_higher_order(split, proj, h0, x0, 1, opts)?;
    sol.scheme = Scheme::ApproxFirstOrder;
    Ok(sol)
}

/// Expansion `h = Σ_{i≤τ} εⁱ h⁽ⁱ⁾` with `h⁽ⁱ⁾' = B h⁽ⁱ⁾ + P h⁽ⁱ⁻¹⁾`.
pub fn solve_higher_order(
    split: &SplitOperator,
    proj: &RealMatrix,
    h0: &[f64],
    x0: f64,
    tau_order: usize,
    opts: &SolveOptions,
) -> Result<PerturbedSolution> {
    let m = split.m();
    check_inputs(m, proj, h0)?;
    let q = vec![Some(split.p.clone())];
    expansion(&split.b, &q, split.epsilon, proj, h0, x0, tau_order, opts, Scheme::HigherOrder { order: tau_order })
}

/// Multi-source expansion in the reference parameter `δ`.
pub fn solve_multi_source(
    msrc: &MultiSourceOperator,
    proj: &RealMatrix,
    h0: &[f64],
    x0: f64,
    tau_order: usize,
    opts: &SolveOptions,
) -> Result<PerturbedSolution> {
    let m = msrc.m();
    check_inputs(m, proj, h0)?;
    let q: Vec<Option<RealMatrix>> = (1..=tau_order).map(|j| msrc.q(j)).collect();
    expansion(&msrc.b, &q, msrc.delta, proj, h0, x0, tau_order, opts, Scheme::MultiSource { order: tau_order })
}

/// Builds `[Φ⁽ᵗ⁾; …; Φ⁽⁰⁾]` with `T` on the diagonal and `V*Q_j V` coupling
/// `Φ⁽ⁱ⁾` to `Φ⁽ⁱ⁻ʲ⁾`; `q[j-1]` is `Q_j`.
#[allow(clippy::too_many_arguments)]
fn expansion(
    b: &RealMatrix,
    q: &[Option<RealMatrix>],
    weight: f64,
    proj: &RealMatrix,
    h0: &[f64],
    x0: f64,
    tau_order: usize,
    opts: &SolveOptions,
    scheme: Scheme,
) -> Result<PerturbedSolution> {
    if tau_order == 0 {
        return Err(Error::InvalidArgument("perturbation order must be ≥ 1".into()));
    }
    let m = b.rows();
    let nb = tau_order + 1;
    check_stack(m, nb, opts)?;
    let base = schur_of(b, opts)?;
    let v = Arc::new(base.v.clone());
    let r: Vec<Option<Matrix>> = q
        .iter()
        .take(tau_order)
        .map(|qj| qj.as_ref().map(|qj| transform(&v, qj, &v)).transpose())
        .collect::<Result<_>>()?;
    // stack position of Φ⁽ⁱ⁾ is τ − i
    let mut blocks: Vec<Vec<Option<Matrix>>> = vec![vec![None; nb]; nb];
    for row in 0..nb {
        blocks[row][row] = Some(base.t.clone());
        let i = tau_order - row;
        for (j, rj) in r.iter().enumerate().map(|(j, rj)| (j + 1, rj)) {
            if j <= i {
                blocks[row][row + j] = rj.clone();
            }
        }
    }
    let factors = (0..nb)
        .map(|row| {
            let i = tau_order - row;
            let part = if i == 0 { Part::Unperturbed } else { Part::Perturbation(i) };
            (Arc::clone(&v), weight.powi(i as i32), part)
        })
        .collect();
    let ic = stacked_ic(m, nb, &v, h0)?;
    BlockTriangularSystem {
        m,
        blocks,
        ic,
        factors,
    }
    .solve(proj, x0, scheme, opts)
}

/// Runs any scheme on a definition with one first-order source (or several
/// sources for the multi-source scheme).
pub fn solve_scheme(
    scheme: Scheme,
    space: &BasisSpace,
    def: &SystemDefinition,
    y0: &[f64],
    x0: f64,
    assembly: AssemblyOptions,
    opts: &SolveOptions,
) -> Result<PerturbedSolution> {
    let h0 = space.initial(y0)?;
    match scheme {
        Scheme::Direct => {
            let m_op = space.operator(&def.full_field(), assembly)?;
            solve_direct(&m_op, &space.h, &h0, x0, opts)
        }
        Scheme::ExactDecomposition => {
            let split = SplitOperator::from_definition(space, def, assembly)?;
            solve_exact_decomposition(&split, &space.h, &h0, x0, opts)
        }
        Scheme::ApproxFirstOrder => {
            let split = SplitOperator::from_definition(space, def, assembly)?;
            solve_approx_first_order(&split, &space.h, &h0, x0, opts)
        }
        Scheme::HigherOrder { order } => {
            let split = SplitOperator::from_definition(space, def, assembly)?;
            solve_higher_order(&split, &space.h, &h0, x0, order, opts)
        }
        Scheme::MultiSource { order } => {
            let msrc = MultiSourceOperator::from_definition(space, def, None, assembly)?;
            solve_multi_source(&msrc, &space.h, &h0, x0, order, opts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::GalerkinSystem;
    use crate::poly::{parse_definition, parse_system};
    use crate::triangular::{real_vector, solve_linear_ivp};

    const DUFFING: &str = "var q p\nparam eps 0.1\ndq = 1 p\ndp = -1 q\nperturb eps\ndp = -1 q^3\n";

    fn duffing(eps: f64, sigma: usize) -> (BasisSpace, SystemDefinition, SplitOperator, Vec<f64>) {
        let mut def = parse_definition(DUFFING).unwrap();
        def.set_param("eps", eps).unwrap();
        let space = BasisSpace::new(2, sigma).unwrap();
        let split = SplitOperator::from_definition(&space, &def, AssemblyOptions::default()).unwrap();
        let h0 = space.initial(&[1.0, 0.0]).unwrap();
        (space, def, split, h0)
    }

    fn max_dev(a: &PerturbedSolution, b: &PerturbedSolution, x1: f64) -> f64 {
        (0..=50)
            .map(|k| x1 * k as f64 / 50.0)
            .flat_map(|x| a.y(x).into_iter().zip(b.y(x)).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max)
    }

    const PERIOD: f64 = 2.0 * std::f64::consts::PI;

    #[test]
    fn split_matches_full_assembly() {
        let (space, def, split, _) = duffing(0.1, 5);
        let full = space.operator(&def.full_field(), AssemblyOptions::default()).unwrap();
        let diff = split.full().add_scaled(-1.0, &full).unwrap();
        assert!(diff.max_abs() < 1e-12);
    }

    #[test]
    fn direct_reduces_to_linear_solve() {
        let sys = parse_system("var a b\nda = -0.3 a ; 1 b\ndb = -1 a\n").unwrap();
        let g = GalerkinSystem::build(&sys, 1, &[0.4, -0.2]).unwrap();
        let sol = solve_direct(&g.m, &g.h, &g.h0, 0.0, &SolveOptions::default()).unwrap();
        let a = sys.linear_matrix().unwrap().to_complex();
        let lin = solve_linear_ivp(&a, &real_vector(&[0.4, -0.2]), 0.0, None).unwrap();
        for x in [0.0, 0.5, 2.0, 5.0] {
            for (u, v) in sol.y(x).iter().zip(lin.y_real(x)) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn initial_condition_is_reproduced_by_every_scheme() {
        let (space, def, split, h0) = duffing(0.05, 5);
        let opts = SolveOptions::default();
        let sols = vec![
            solve_direct(&split.full(), &space.h, &h0, 0.0, &opts).unwrap(),
            solve_exact_decomposition(&split, &space.h, &h0, 0.0, &opts).unwrap(),
            solve_approx_first_order(&split, &space.h, &h0, 0.0, &opts).unwrap(),
            solve_higher_order(&split, &space.h, &h0, 0.0, 3, &opts).unwrap(),
            solve_scheme(Scheme::MultiSource { order: 2 }, &space, &def, &[1.0, 0.0], 0.0, AssemblyOptions::default(), &opts).unwrap(),
        ];
        for sol in &sols {
            for (a, b) in sol.h(0.0).iter().zip(&h0) {
                assert!((a - b).abs() < 1e-10, "{:?}", sol.scheme());
            }
        }
    }

    #[test]
    fn exact_decomposition_with_zero_epsilon_is_unperturbed() {
        let (space, _, split, h0) = duffing(0.0, 5);
        let opts = SolveOptions::default();
        let direct = solve_direct(&split.b, &space.h, &h0, 0.0, &opts).unwrap();
        let exact = solve_exact_decomposition(&split, &space.h, &h0, 0.0, &opts).unwrap();
        for x in [0.3, 1.0, PERIOD] {
            assert_eq!(exact.y_perturbation(x), vec![0.0, 0.0]);
            assert_eq!(exact.y(x), direct.y(x));
        }
    }

    #[test]
    fn zero_perturbation_gives_zero_correction() {
        let (space, _, split, h0) = duffing(0.1, 4);
        let zero = SplitOperator::new(split.b.clone(), RealMatrix::zeros(split.m(), split.m()), 0.1).unwrap();
        let opts = SolveOptions::default();
        for sol in [
            solve_exact_decomposition(&zero, &space.h, &h0, 0.0, &opts).unwrap(),
            solve_higher_order(&zero, &space.h, &h0, 0.0, 2, &opts).unwrap(),
        ] {
            for x in [0.5, 3.0] {
                assert!(sol.y_perturbation(x).iter().all(|v| v.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn exact_decomposition_matches_direct() {
        let (space, _, split, h0) = duffing(0.1, 7);
        let opts = SolveOptions::default();
        let direct = solve_direct(&split.full(), &space.h, &h0, 0.0, &opts).unwrap();
        let exact = solve_exact_decomposition(&split, &space.h, &h0, 0.0, &opts).unwrap();
        assert!(max_dev(&direct, &exact, PERIOD) < 1e-9);
    }

    #[test]
    fn first_order_is_order_one_expansion() {
        let (space, _, split, h0) = duffing(0.01, 5);
        let opts = SolveOptions::default();
        let a = solve_approx_first_order(&split, &space.h, &h0, 0.0, &opts).unwrap();
        let b = solve_higher_order(&split, &space.h, &h0, 0.0, 1, &opts).unwrap();
        assert_eq!(max_dev(&a, &b, PERIOD), 0.0);
    }

    #[test]
    fn first_order_deviation_is_quadratic() {
        let opts = SolveOptions::default();
        let dev = |eps: f64| {
            let (space, _, split, h0) = duffing(eps, 7);
            let direct = solve_direct(&split.full(), &space.h, &h0, 0.0, &opts).unwrap();
            let approx = solve_approx_first_order(&split, &space.h, &h0, 0.0, &opts).unwrap();
            max_dev(&direct, &approx, PERIOD)
        };
        let ratio = dev(0.1) / dev(0.05);
        assert!((3.0..=5.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn zero_epsilon_kills_higher_blocks() {
        let (space, _, split, h0) = duffing(0.0, 4);
        let sol = solve_higher_order(&split, &space.h, &h0, 0.0, 3, &SolveOptions::default()).unwrap();
        let m = split.m();
        let phi = sol.phi(2.0);
        // Φ⁽³⁾..Φ⁽¹⁾ are driven by P h⁽⁰⁾, nonzero; their weights vanish
        assert!(phi[..3 * m].iter().any(|z| z.norm() > 0.0));
        for (part, v) in sol.y_parts(2.0) {
            if part != Part::Unperturbed {
                assert!(v.iter().all(|c| *c == 0.0));
            }
        }
    }

    #[test]
    fn block_ode_holds_under_finite_differences() {
        let (space, def, split, h0) = duffing(0.1, 4);
        let opts = SolveOptions::default();
        let sols = vec![
            solve_exact_decomposition(&split, &space.h, &h0, 0.0, &opts).unwrap(),
            solve_higher_order(&split, &space.h, &h0, 0.0, 2, &opts).unwrap(),
            solve_scheme(Scheme::MultiSource { order: 2 }, &space, &def, &[1.0, 0.0], 0.0, AssemblyOptions::default(), &opts).unwrap(),
        ];
        for sol in &sols {
            let s = sol.system().assemble();
            for x in [0.4, 2.5] {
                let hstep = 1e-5;
                let (a, b) = (sol.phi(x + hstep), sol.phi(x - hstep));
                let rhs = linalg::matvec(&s, &sol.phi(x)).unwrap();
                for i in 0..rhs.len() {
                    let fd = (a[i] - b[i]) / (2.0 * hstep);
                    assert!((fd - rhs[i]).norm() < 1e-6, "{:?}", sol.scheme());
                }
            }
        }
    }

    #[test]
    fn multi_source_reduces_to_single_source() {
        let (space, def, split, h0) = duffing(0.02, 5);
        let opts = SolveOptions::default();
        let higher = solve_higher_order(&split, &space.h, &h0, 0.0, 2, &opts).unwrap();
        let msrc = MultiSourceOperator::from_definition(&space, &def, Some(0.02), AssemblyOptions::default()).unwrap();
        let multi = solve_multi_source(&msrc, &space.h, &h0, 0.0, 2, &opts).unwrap();
        assert!(max_dev(&higher, &multi, PERIOD) < 1e-12);
    }

    #[test]
    fn multi_source_worked_example() {
        let text = format!(
            "var y\nparam e1 0.1\nparam e2 {:?}\ndy = 1 y\nperturb e1\ndy = 1 y^2\nperturb e2 2\ndy = 1 y^3\n",
            0.02f64.sqrt()
        );
        let def = parse_definition(&text).unwrap();
        assert_eq!(def.sources(), vec!["e1".to_string(), "e2".to_string()]);
        assert_eq!(def.max_order(), 2);
        let f = def.full_field();
        let coeffs: Vec<(u32, f64)> = f.equation(0).iter().map(|m| (m.exponents[0], m.coeff)).collect();
        assert_eq!(coeffs[0], (1, 1.0));
        assert_eq!(coeffs[1], (2, 0.1));
        assert_eq!(coeffs[2].0, 3);
        assert!((coeffs[2].1 - 0.02).abs() < 1e-17);

        let space = BasisSpace::new(1, 4).unwrap();
        let msrc = MultiSourceOperator::from_definition(&space, &def, None, AssemblyOptions::default()).unwrap();
        assert_eq!(msrc.delta, 0.02f64.sqrt());
        assert!(msrc.p[0][1].is_none() && msrc.p[1][0].is_none());
        let full = space.operator(&f, AssemblyOptions::default()).unwrap();
        assert!(msrc.full().add_scaled(-1.0, &full).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn multi_source_without_perturbations_is_unperturbed() {
        let (space, _, split, h0) = duffing(0.1, 4);
        let zero = RealMatrix::zeros(split.m(), split.m());
        let msrc = MultiSourceOperator::new(split.b.clone(), vec![vec![Some(zero)]], vec![0.1], None).unwrap();
        let opts = SolveOptions::default();
        let multi = solve_multi_source(&msrc, &space.h, &h0, 0.0, 2, &opts).unwrap();
        let base = solve_direct(&split.b, &space.h, &h0, 0.0, &opts).unwrap();
        assert!(max_dev(&multi, &base, PERIOD) < 1e-12);
    }

    #[test]
    fn argument_errors() {
        let (space, _, split, h0) = duffing(0.1, 3);
        let opts = SolveOptions::default();
        assert!(matches!(
            solve_higher_order(&split, &space.h, &h0, 0.0, 0, &opts),
            Err(Error::InvalidArgument(_))
        ));
        let tight = SolveOptions { stack_cap: 29, ..opts };
        assert!(matches!(
            solve_higher_order(&split, &space.h, &h0, 0.0, 2, &tight),
            Err(Error::Capacity { .. })
        ));
        assert!(solve_direct(&split.b, &space.h, &h0[..3], 0.0, &opts).is_err());
        assert!(SplitOperator::new(split.b.clone(), RealMatrix::zeros(2, 2), 0.1).is_err());
        assert!(MultiSourceOperator::new(split.b.clone(), vec![vec![None]], vec![-0.1], None).is_err());
        let def = parse_definition("var q p\ndq = 1 p\ndp = -1 q\n").unwrap();
        assert!(SplitOperator::from_definition(&space, &def, AssemblyOptions::default()).is_err());
    }
}
