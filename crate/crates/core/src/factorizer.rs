//! Step-by-step asymptotic factorization `G_ε ≈ G⁻ Λ G⁺`.
//!
//! Each step solves `Ñ⁻Λ⁻ + Λ⁺Ñ⁺ = M` with
//! `Λ⁺Ñ⁺ = P⁺M - C` and `Ñ⁻Λ⁻ = P⁻M + C`, where `P±` is the additive split
//! of `M` into parts analytic in the upper/lower half-plane. For decaying `M`
//! the split is the one with both parts vanishing at infinity,
//! `P⁺ = Ω⁺ + Γ`, `P⁻ = Ω⁻ - Γ` with `Γ = (1/2πi) ∫ M/(τ-i)`; otherwise
//! `Γ = 0`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::cauchy::{Pole, Projection, QuadratureSpec, Side};
use crate::error::{Error, Result};
use crate::funcspace::{
    invert_matrix, limit_at_infinity, limit_at_infinity_of, sup_norm, CMatrix, GridSpec, MatrixFunction, MatrixOp,
    Oscillation, Shape, TailGrid, C64, DEFAULT_DET_FLOOR,
};
use crate::indices::{build_lambda, LambdaVariant, PartialIndices};

const I: C64 = C64::new(0.0, 1.0);
/// Radius around ±i inside which the removable singularity is evaluated
/// from the Taylor series.
const SERIES_RADIUS: f64 = 0.1;
const SERIES_TERMS: u32 = 16;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn is_identity(f: &MatrixFunction) -> bool {
    let n = f.dim();
    (0..n).all(|i| {
        (0..n).all(|j| {
            let want = if i == j {
                Shape::Constant(C64::new(1.0, 0.0))
            } else {
                Shape::Zero
            };
            f.entry(i, j).shape() == want
        })
    })
}

/// Decay orders of the entries of a product `A·B`.
fn product_decay(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out[i * n + j] = out[i * n + j].min(a[i * n + k] + b[k * n + j]);
            }
        }
    }
    out
}

fn decays(f: &MatrixFunction) -> Vec<f64> {
    f.entries().iter().map(|e| e.decay_order()).collect()
}

/// Pointwise inverse as a matrix function (NaN where singular).
fn inverse_of(f: &MatrixFunction) -> MatrixFunction {
    if is_identity(f) {
        return MatrixFunction::identity(f.dim());
    }
    let g = f.clone();
    let n = f.dim();
    let floor = f.det_floor().unwrap_or(DEFAULT_DET_FLOOR);
    MatrixFunction::from_matrix_fn(n, "inv", &vec![0.0; n * n], f.oscillation(), move |x| {
        invert_matrix(&g.eval(x), x, floor)
            .unwrap_or_else(|_| CMatrix::from_element(n, n, C64::new(f64::NAN, f64::NAN)))
    })
}

/// Known factorization `G₀ = G₀⁻ Λ G₀⁺` of the unperturbed matrix.
#[derive(Clone, Debug)]
pub struct BaseFactorization {
    pub g_minus: MatrixFunction,
    pub g_plus: MatrixFunction,
    pub indices: PartialIndices,
    pub g_minus_inv: MatrixFunction,
    pub g_plus_inv: MatrixFunction,
}

impl BaseFactorization {
    pub fn new(g_minus: MatrixFunction, g_plus: MatrixFunction, indices: PartialIndices) -> Result<Self> {
        let n = indices.n();
        for f in [&g_minus, &g_plus] {
            if f.dim() != n {
                return Err(Error::DimensionMismatch {
                    left: n,
                    right: f.dim(),
                });
            }
        }
        let g_minus_inv = inverse_of(&g_minus);
        let g_plus_inv = inverse_of(&g_plus);
        Ok(BaseFactorization {
            g_minus,
            g_plus,
            indices,
            g_minus_inv,
            g_plus_inv,
        })
    }

    /// `G₀⁻ = G₀⁺ = I`.
    pub fn diagonal(indices: PartialIndices) -> Self {
        let n = indices.n();
        BaseFactorization {
            g_minus: MatrixFunction::identity(n),
            g_plus: MatrixFunction::identity(n),
            g_minus_inv: MatrixFunction::identity(n),
            g_plus_inv: MatrixFunction::identity(n),
            indices,
        }
    }

    pub fn dim(&self) -> usize {
        self.indices.n()
    }

    pub fn has_identity_factors(&self) -> bool {
        is_identity(&self.g_minus) && is_identity(&self.g_plus)
    }

    pub fn lambda(&self) -> MatrixFunction {
        build_lambda(&self.indices, LambdaVariant::Full)
    }

    /// `G₀ = G₀⁻ Λ G₀⁺`.
    pub fn product(&self) -> MatrixFunction {
        self.g_minus
            .combine(&self.lambda(), MatrixOp::Mul)
            .and_then(|m| m.combine(&self.g_plus, MatrixOp::Mul))
            .expect("dimensions checked at construction")
    }

    /// Checks the stored inverses and the invertibility of both factors on
    /// a grid; returns the largest deviation of `F·F⁻¹` from the identity.
    pub fn verify(&self, grid: &GridSpec) -> Result<f64> {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for x in grid.points() {
            for (f, inv) in [(&self.g_minus, &self.g_minus_inv), (&self.g_plus, &self.g_plus_inv)] {
                let fx = f.eval(x);
                invert_matrix(&fx, x, f.det_floor().unwrap_or(DEFAULT_DET_FLOOR))?;
                worst = worst.max((fx * inv.eval(x) - CMatrix::identity(n, n)).norm());
            }
        }
        Ok(worst)
    }
}

/// How the constants left open by the block structure are chosen.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ConstantPolicy {
    #[default]
    Zero,
    /// For n = 2: choose the (2,1) constant so that the diagonal of `C²`
    /// vanishes as far as possible, which makes the first remainder vanish
    /// at infinity when `c₁₁ = -c₂₂`.
    MatchInfinity,
    /// Values for open entries (0-based `(row, col)`), used at the first
    /// step; later steps fall back to zero.
    Explicit(BTreeMap<(usize, usize), C64>),
}

/// Whether `(row, col)` is left open by the block structure.
pub fn is_open_entry(indices: &PartialIndices, row: usize, col: usize) -> bool {
    row >= indices.p() && col < indices.q()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConditionKind {
    /// `∫ m / (τ+i)^{r+1} = 0` for columns with `κ_j < -1`.
    Cond2Moment,
    /// `∫ m / (τ-i)^{r+1} = 0` for rows with `κ_l > 1`.
    Cond4Moment,
    /// `(1/π) ∫ m/(τ²+1) = 0` on rows with `κ_l > 0` and columns with `κ_j < 0`.
    Cond5Cross,
}

impl ConditionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConditionKind::Cond2Moment => "cond2_moment",
            ConditionKind::Cond4Moment => "cond4_moment",
            ConditionKind::Cond5Cross => "cond5_cross",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub kind: ConditionKind,
    pub row: usize,
    pub col: usize,
    pub order: u32,
    pub value: C64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvabilityReport {
    pub residuals: Vec<Residual>,
    /// Constants fixed by the vanishing of the brackets at ±i (0-based keys).
    pub pinned_constants: BTreeMap<(usize, usize), C64>,
    pub passed: bool,
    pub tolerance: f64,
    /// `max(1, sup ‖M‖)`.
    pub scale: f64,
    /// Entries treated with the decaying split (`Γ ≠ 0` gauge).
    pub decaying: Vec<bool>,
}

impl SolvabilityReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.value.norm()))
    }
}

/// Entrywise projections of a right-hand side with their scalar integrals.
struct Analysis {
    m: MatrixFunction,
    proj: Vec<Arc<Projection>>,
    gamma: Vec<C64>,
    weighted: Vec<C64>,
    report: SolvabilityReport,
}

fn analyze(m: &MatrixFunction, indices: &PartialIndices, quad: &QuadratureSpec, tol: f64) -> Result<Analysis> {
    let n = indices.n();
    if m.dim() != n {
        return Err(Error::DimensionMismatch {
            left: n,
            right: m.dim(),
        });
    }
    let kappa = indices.kappa();
    let proj: Vec<Arc<Projection>> = m
        .entries()
        .iter()
        .map(|e| Arc::new(Projection::new(e.clone(), *quad)))
        .collect();
    let decaying: Vec<bool> = m.entries().iter().map(|e| e.decay_order() >= 1.0).collect();
    let scalars: Vec<(C64, C64)> = proj
        .par_iter()
        .zip(&decaying)
        .map(|(p, &d)| {
            let g = if d { p.cauchy_at_i().value } else { zero() };
            (g, p.weighted().value)
        })
        .collect();
    let gamma: Vec<C64> = scalars.iter().map(|s| s.0).collect();
    let weighted: Vec<C64> = scalars.iter().map(|s| s.1).collect();

    let mut pinned = BTreeMap::new();
    let mut residuals = Vec::new();
    for l in 0..n {
        for j in 0..n {
            let e = l * n + j;
            let row_pinned = kappa[l] > 0;
            let col_pinned = kappa[j] < 0;
            if row_pinned {
                pinned.insert((l, j), gamma[e]);
                for r in 1..kappa[l] as u32 {
                    residuals.push(Residual {
                        kind: ConditionKind::Cond4Moment,
                        row: l,
                        col: j,
                        order: r,
                        value: proj[e].moment(Pole::PlusI, r).value,
                    });
                }
            } else if col_pinned {
                pinned.insert((l, j), gamma[e] - weighted[e]);
            }
            if col_pinned {
                for r in 1..(-kappa[j]) as u32 {
                    residuals.push(Residual {
                        kind: ConditionKind::Cond2Moment,
                        row: l,
                        col: j,
                        order: r,
                        value: proj[e].moment(Pole::MinusI, r).value,
                    });
                }
            }
            if row_pinned && col_pinned {
                residuals.push(Residual {
                    kind: ConditionKind::Cond5Cross,
                    row: l,
                    col: j,
                    order: 0,
                    value: weighted[e],
                });
            }
        }
    }
    residuals.sort_by_key(|r| (r.kind, r.row, r.col, r.order));
    let scale = sup_norm(m, &GridSpec::default()).max(1.0);
    let passed = residuals.iter().all(|r| r.value.norm() <= tol * scale);
    Ok(Analysis {
        m: m.clone(),
        proj,
        gamma,
        weighted,
        report: SolvabilityReport {
            residuals,
            pinned_constants: pinned,
            passed,
            tolerance: tol,
            scale,
            decaying,
        },
    })
}

/// `M₀ = (G₀⁻)⁻¹ N (G₀⁺)⁻¹`.
pub fn reduce_rhs(base: &BaseFactorization, n_eps: &MatrixFunction) -> Result<MatrixFunction> {
    let n = base.dim();
    if n_eps.dim() != n {
        return Err(Error::DimensionMismatch {
            left: n,
            right: n_eps.dim(),
        });
    }
    if base.has_identity_factors() {
        return Ok(n_eps.clone());
    }
    for x in GridSpec::new(201).points() {
        invert_matrix(&base.g_minus.eval(x), x, DEFAULT_DET_FLOOR)?;
        invert_matrix(&base.g_plus.eval(x), x, DEFAULT_DET_FLOOR)?;
    }
    let (a, b, c) = (base.g_minus_inv.clone(), n_eps.clone(), base.g_plus_inv.clone());
    let d = product_decay(&product_decay(&decays(&a), &decays(&b), n), &decays(&c), n);
    let osc = a.oscillation().product(b.oscillation()).product(c.oscillation());
    Ok(MatrixFunction::from_matrix_fn(n, "M0", &d, osc, move |x| {
        a.eval(x) * b.eval(x) * c.eval(x)
    }))
}

/// Runs the solvability battery on a right-hand side.
pub fn check_solvability(
    m: &MatrixFunction,
    indices: &PartialIndices,
    quad: &QuadratureSpec,
    tol: f64,
) -> Result<SolvabilityReport> {
    Ok(analyze(m, indices, quad, tol)?.report)
}

fn choose_constants(
    report: &SolvabilityReport,
    indices: &PartialIndices,
    policy: &ConstantPolicy,
    first_step: bool,
) -> Result<CMatrix> {
    let n = indices.n();
    let mut c = CMatrix::zeros(n, n);
    for (&(l, j), &v) in &report.pinned_constants {
        c[(l, j)] = v;
    }
    match policy {
        ConstantPolicy::Zero => {}
        ConstantPolicy::Explicit(values) => {
            for &(l, j) in values.keys() {
                if l >= n || j >= n || !is_open_entry(indices, l, j) {
                    return Err(Error::PolicyConflict { row: l, col: j });
                }
            }
            if first_step {
                for (&(l, j), &v) in values {
                    c[(l, j)] = v;
                }
            }
        }
        ConstantPolicy::MatchInfinity => {
            if n == 2 && is_open_entry(indices, 1, 0) && c[(0, 1)].norm() > 0.0 {
                let (c11, c12, c22) = (c[(0, 0)], c[(0, 1)], c[(1, 1)]);
                c[(1, 0)] = -(c11 * c11 + c22 * c22) / (2.0 * c12);
            }
        }
    }
    Ok(c)
}

/// Data behind one solved step, used for evaluation on and off the axis.
struct StepData {
    indices: PartialIndices,
    base: BaseFactorization,
    proj: Vec<Arc<Projection>>,
    gamma: Vec<C64>,
    weighted: Vec<C64>,
    constants: CMatrix,
}

impl StepData {
    fn n(&self) -> usize {
        self.indices.n()
    }

    fn tilde_plus(&self, x: f64) -> CMatrix {
        let n = self.n();
        let kappa = self.indices.kappa();
        let xc = C64::new(x, 0.0);
        CMatrix::from_fn(n, n, |l, j| {
            let e = l * n + j;
            let bracket = self.proj[e].boundary_value(Side::Plus, x) + self.gamma[e] - self.constants[(l, j)];
            bracket * ((xc + I) / (xc - I)).powi(kappa[l].max(0))
        })
    }

    fn tilde_minus(&self, x: f64) -> CMatrix {
        let n = self.n();
        let kappa = self.indices.kappa();
        let xc = C64::new(x, 0.0);
        CMatrix::from_fn(n, n, |l, j| {
            let e = l * n + j;
            let bracket = self.proj[e].boundary_value(Side::Minus, x) - self.gamma[e] + self.constants[(l, j)];
            bracket * ((xc - I) / (xc + I)).powi(-kappa[j].min(0))
        })
    }

    fn tilde_plus_at(&self, z: C64, radius: f64) -> Result<CMatrix> {
        let n = self.n();
        let kappa = self.indices.kappa();
        let mut out = CMatrix::zeros(n, n);
        for l in 0..n {
            let k = kappa[l].max(0);
            for j in 0..n {
                let e = l * n + j;
                let b0 = self.gamma[e] - self.constants[(l, j)];
                out[(l, j)] = if k > 0 && (z - I).norm() < radius {
                    // P⁺m(z) - c = Σ b_r (z-i)^r, b_r = (1/2πi) ∫ m/(τ-i)^{r+1}
                    let mut s = zero();
                    for r in k as u32..k as u32 + SERIES_TERMS {
                        let b = if r == 0 {
                            b0
                        } else {
                            self.proj[e].moment(Pole::PlusI, r).value / (2.0 * PI * I)
                        };
                        s += b * (z - I).powi(r as i32 - k);
                    }
                    s * (z + I).powi(k)
                } else {
                    (self.proj[e].omega(Side::Plus, z)? + b0) * ((z + I) / (z - I)).powi(k)
                };
            }
        }
        Ok(out)
    }

    fn tilde_minus_at(&self, z: C64, radius: f64) -> Result<CMatrix> {
        let n = self.n();
        let kappa = self.indices.kappa();
        let mut out = CMatrix::zeros(n, n);
        for j in 0..n {
            let k = -kappa[j].min(0);
            for l in 0..n {
                let e = l * n + j;
                let shift = self.constants[(l, j)] - self.gamma[e];
                out[(l, j)] = if k > 0 && (z + I).norm() < radius {
                    // P⁻m(z) + c = Σ a_r (z+i)^r, a_0 = W - Γ + c,
                    // a_r = -(1/2πi) ∫ m/(τ+i)^{r+1}
                    let mut s = zero();
                    for r in k as u32..k as u32 + SERIES_TERMS {
                        let a = if r == 0 {
                            self.weighted[e] + shift
                        } else {
                            -self.proj[e].moment(Pole::MinusI, r).value / (2.0 * PI * I)
                        };
                        s += a * (z + I).powi(r as i32 - k);
                    }
                    s * (z - I).powi(k)
                } else {
                    (self.proj[e].omega(Side::Minus, z)? + shift) * ((z - I) / (z + I)).powi(k)
                };
            }
        }
        Ok(out)
    }
}

/// One solved correction step.
#[derive(Clone)]
pub struct FactorizationStep {
    pub order: usize,
    /// `N⁻ = G₀⁻ Ñ⁻` on ℝ.
    pub n_minus: MatrixFunction,
    /// `N⁺ = Ñ⁺ G₀⁺` on ℝ.
    pub n_plus: MatrixFunction,
    pub tilde_minus: MatrixFunction,
    pub tilde_plus: MatrixFunction,
    /// Right-hand side `M` solved by this step.
    pub rhs: MatrixFunction,
    pub constants: CMatrix,
    pub report: SolvabilityReport,
    data: Arc<StepData>,
}

impl std::fmt::Debug for FactorizationStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FactorizationStep")
            .field("order", &self.order)
            .field("constants", &self.constants)
            .field("report", &self.report)
            .finish()
    }
}

impl FactorizationStep {
    /// `N⁺(z)` for `Im z > 0`.
    pub fn n_plus_at(&self, z: C64) -> Result<CMatrix> {
        let t = self.data.tilde_plus_at(z, SERIES_RADIUS)?;
        if self.data.base.has_identity_factors() {
            return Ok(t);
        }
        Ok(t * self.data.base.g_plus.eval_complex(z)?)
    }

    /// `N⁻(z)` for `Im z < 0`.
    pub fn n_minus_at(&self, z: C64) -> Result<CMatrix> {
        let t = self.data.tilde_minus_at(z, SERIES_RADIUS)?;
        if self.data.base.has_identity_factors() {
            return Ok(t);
        }
        Ok(self.data.base.g_minus.eval_complex(z)? * t)
    }

    /// `Ñ⁻Λ⁻ + Λ⁺Ñ⁺ - M` at `x`.
    pub fn boundary_defect(&self, x: f64) -> CMatrix {
        let k = &self.data.indices;
        let lp = build_lambda(k, LambdaVariant::Plus).eval(x);
        let lm = build_lambda(k, LambdaVariant::Minus).eval(x);
        self.tilde_minus.eval(x) * lm + lp * self.tilde_plus.eval(x) - self.rhs.eval(x)
    }
}

fn build_step(
    an: &Analysis,
    base: &BaseFactorization,
    policy: &ConstantPolicy,
    order: usize,
) -> Result<FactorizationStep> {
    if !an.report.passed {
        return Err(Error::NotSolvable);
    }
    let indices = base.indices.clone();
    let n = indices.n();
    let constants = choose_constants(&an.report, &indices, policy, order == 1)?;
    let data = Arc::new(StepData {
        indices: indices.clone(),
        base: base.clone(),
        proj: an.proj.clone(),
        gamma: an.gamma.clone(),
        weighted: an.weighted.clone(),
        constants: constants.clone(),
    });
    // Ñ⁺_lj → -c_lj and Ñ⁻_lj → c_lj at infinity when m_lj decays
    let tilde_decay: Vec<f64> = (0..n * n)
        .map(|e| {
            let (l, j) = (e / n, e % n);
            if an.report.decaying[e] && constants[(l, j)].norm() == 0.0 {
                an.m.entries()[e].decay_order().min(1.0)
            } else {
                0.0
            }
        })
        .collect();
    let osc = an.m.oscillation();
    let d = data.clone();
    let tilde_plus = MatrixFunction::from_matrix_fn(n, "Ñ⁺", &tilde_decay, osc, move |x| d.tilde_plus(x));
    let d = data.clone();
    let tilde_minus = MatrixFunction::from_matrix_fn(n, "Ñ⁻", &tilde_decay, osc, move |x| d.tilde_minus(x));
    let (n_minus, n_plus) = if base.has_identity_factors() {
        (tilde_minus.clone(), tilde_plus.clone())
    } else {
        let (gm, tm) = (base.g_minus.clone(), tilde_minus.clone());
        let dm = product_decay(&decays(&gm), &tilde_decay, n);
        let nm = MatrixFunction::from_matrix_fn(n, "N⁻", &dm, osc.product(gm.oscillation()), move |x| {
            gm.eval(x) * tm.eval(x)
        });
        let (gp, tp) = (base.g_plus.clone(), tilde_plus.clone());
        let dp = product_decay(&tilde_decay, &decays(&gp), n);
        let np = MatrixFunction::from_matrix_fn(n, "N⁺", &dp, osc.product(gp.oscillation()), move |x| {
            tp.eval(x) * gp.eval(x)
        });
        (nm, np)
    };
    Ok(FactorizationStep {
        order,
        n_minus,
        n_plus,
        tilde_minus,
        tilde_plus,
        rhs: an.m.clone(),
        constants,
        report: an.report.clone(),
        data,
    })
}

/// Solves `Ñ⁻Λ⁻ + Λ⁺Ñ⁺ = M` with identity outer factors.
pub fn solve_step(
    m: &MatrixFunction,
    indices: &PartialIndices,
    policy: &ConstantPolicy,
    quad: &QuadratureSpec,
) -> Result<FactorizationStep> {
    let an = analyze(m, indices, quad, DEFAULT_TOL)?;
    build_step(&an, &BaseFactorization::diagonal(indices.clone()), policy, 1)
}

pub const DEFAULT_TOL: f64 = 1e-6;

/// `M_{r-1} = -(G₀⁻)⁻¹ [Σ_{k=1}^{r-1} N_k⁻ N_{r-k}⁺] (G₀⁺)⁻¹` for `r = len + 1`.
pub fn next_rhs(base: &BaseFactorization, steps: &[FactorizationStep]) -> Result<MatrixFunction> {
    let n = base.dim();
    let r = steps.len() + 1;
    if steps.is_empty() {
        return Err(Error::InvalidParameter("next_rhs needs at least one step".into()));
    }
    let mut d = vec![f64::INFINITY; n * n];
    let mut osc = Oscillation::NONE;
    for k in 1..r {
        let (a, b) = (&steps[k - 1].n_minus, &steps[r - k - 1].n_plus);
        for (v, w) in d.iter_mut().zip(product_decay(&decays(a), &decays(b), n)) {
            *v = v.min(w);
        }
        osc = osc.union(a.oscillation().product(b.oscillation()));
    }
    let pairs: Vec<(MatrixFunction, MatrixFunction)> = (1..r)
        .map(|k| (steps[k - 1].n_minus.clone(), steps[r - k - 1].n_plus.clone()))
        .collect();
    let identity = base.has_identity_factors();
    if !identity {
        d = product_decay(
            &product_decay(&decays(&base.g_minus_inv), &d, n),
            &decays(&base.g_plus_inv),
            n,
        );
        osc = osc
            .product(base.g_minus_inv.oscillation())
            .product(base.g_plus_inv.oscillation());
    }
    let (gmi, gpi) = (base.g_minus_inv.clone(), base.g_plus_inv.clone());
    Ok(MatrixFunction::from_matrix_fn(
        n,
        &format!("M{}", r - 1),
        &d,
        osc,
        move |x| {
            let mut s = CMatrix::zeros(n, n);
            for (a, b) in &pairs {
                s += a.eval(x) * b.eval(x);
            }
            if identity {
                -s
            } else {
                -(gmi.eval(x) * s * gpi.eval(x))
            }
        },
    ))
}

/// Result of the iterative procedure.
#[derive(Clone, Debug)]
pub struct AsymptoticFactorization {
    pub base: BaseFactorization,
    pub steps: Vec<FactorizationStep>,
    pub achieved_order: usize,
    pub requested_order: usize,
    /// Report of the first step whose conditions failed.
    pub failure: Option<SolvabilityReport>,
}

/// Builds corrections up to `order`, stopping at the first step whose
/// solvability conditions fail. `n_eps = G_ε - G₀`.
pub fn factorize(
    base: &BaseFactorization,
    n_eps: &MatrixFunction,
    order: usize,
    policy: &ConstantPolicy,
    quad: &QuadratureSpec,
    tol: f64,
) -> Result<AsymptoticFactorization> {
    if order == 0 {
        return Err(Error::InvalidParameter("order must be at least 1".into()));
    }
    let mut steps: Vec<FactorizationStep> = Vec::new();
    let mut failure = None;
    let mut m = reduce_rhs(base, n_eps)?;
    for r in 1..=order {
        let an = analyze(&m, &base.indices, quad, tol)?;
        if !an.report.passed {
            failure = Some(an.report);
            break;
        }
        steps.push(build_step(&an, base, policy, r)?);
        if r < order {
            m = next_rhs(base, &steps)?;
        }
    }
    Ok(AsymptoticFactorization {
        base: base.clone(),
        achieved_order: steps.len(),
        requested_order: order,
        steps,
        failure,
    })
}

/// Factors of the order-`m` approximation at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub minus_factor: CMatrix,
    pub lambda: CMatrix,
    pub plus_factor: CMatrix,
    pub product: CMatrix,
}

/// `G⁻ = G₀⁻ + Σ N_r⁻ (Λ⁺)⁻¹`, `G⁺ = G₀⁺ + Σ (Λ⁻)⁻¹ N_r⁺` and their product
/// with `Λ` at `x`.
pub fn assemble(fact: &AsymptoticFactorization, m: usize, x: f64) -> Result<Assembled> {
    if m > fact.achieved_order {
        return Err(Error::OrderExceeded {
            requested: m,
            achieved: fact.achieved_order,
        });
    }
    let k = &fact.base.indices;
    let n = k.n();
    let xc = C64::new(x, 0.0);
    let mob = (xc - I) / (xc + I);
    let lp_inv = CMatrix::from_fn(
        n,
        n,
        |a, b| if a == b { mob.powi(-k.kappa()[a].max(0)) } else { zero() },
    );
    let lm_inv = CMatrix::from_fn(
        n,
        n,
        |a, b| if a == b { mob.powi(-k.kappa()[a].min(0)) } else { zero() },
    );
    let lambda = CMatrix::from_fn(n, n, |a, b| if a == b { mob.powi(k.kappa()[a]) } else { zero() });
    let mut minus = fact.base.g_minus.eval(x);
    let mut plus = fact.base.g_plus.eval(x);
    for s in &fact.steps[..m] {
        minus += s.n_minus.eval(x) * &lp_inv;
        plus += &lm_inv * s.n_plus.eval(x);
    }
    let product = &minus * &lambda * &plus;
    Ok(Assembled {
        minus_factor: minus,
        lambda,
        plus_factor: plus,
        product,
    })
}

/// Samples of `ΔK_m = G_ε - G*_m` on a grid.
#[derive(Debug, Clone)]
pub struct Remainder {
    pub xs: Vec<f64>,
    pub samples: Vec<CMatrix>,
    pub sup: f64,
}

pub fn remainder(
    g_eps: &MatrixFunction,
    fact: &AsymptoticFactorization,
    m: usize,
    grid: &GridSpec,
) -> Result<Remainder> {
    if m > fact.achieved_order {
        return Err(Error::OrderExceeded {
            requested: m,
            achieved: fact.achieved_order,
        });
    }
    let xs = grid.points();
    let samples: Vec<CMatrix> = xs
        .par_iter()
        .map(|&x| assemble(fact, m, x).map(|a| g_eps.eval(x) - a.product))
        .collect::<Result<_>>()?;
    let sup = samples
        .iter()
        .fold(0.0_f64, |s, d| d.iter().fold(s, |s, v| s.max(v.norm())));
    Ok(Remainder { xs, samples, sup })
}

/// `ΔK₁(∞)`. When the first right-hand side decays, this is
/// `G₀⁻(∞) C² G₀⁺(∞)` with `C` the first-step constants; otherwise the limit
/// of `-N₁⁻N₁⁺` is estimated on the dyadic tail.
pub fn remainder_at_infinity(fact: &AsymptoticFactorization) -> Result<CMatrix> {
    let step = fact.steps.first().ok_or(Error::OrderExceeded {
        requested: 1,
        achieved: 0,
    })?;
    let n = fact.base.dim();
    let tail = TailGrid::default();
    if step.report.decaying.iter().all(|&d| d) {
        let c2 = &step.constants * &step.constants;
        if fact.base.has_identity_factors() {
            return Ok(c2);
        }
        let gm = limit_at_infinity(&fact.base.g_minus, &tail)?.value;
        let gp = limit_at_infinity(&fact.base.g_plus, &tail)?.value;
        return Ok(gm * c2 * gp);
    }
    let (a, b) = (step.n_minus.clone(), step.n_plus.clone());
    Ok(limit_at_infinity_of(move |x| -(a.eval(x) * b.eval(x)), n, &tail)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::BoundaryFunction;
    use crate::indices::mobius_power;
    use proptest::prelude::*;

    fn idx(k: &[i32]) -> PartialIndices {
        PartialIndices::new(k.to_vec()).unwrap()
    }

    fn rational(a: C64, b: f64) -> BoundaryFunction {
        // pole at -ib: analytic above for b > 0, below for b < 0
        BoundaryFunction::analytic("r", 1.0, move |z| a / (z + I * b))
    }

    /// Lower triangular rational perturbation of `diag((x-i)/(x+i), (x+i)/(x-i))`;
    /// the cross condition holds at every step because the (1,2) entry stays 0.
    fn lower(eps: f64) -> MatrixFunction {
        let e = C64::new(eps, 0.0);
        MatrixFunction::from_entries(
            2,
            vec![
                BoundaryFunction::analytic("r11", 1.0, move |z| e * z / (z * z + 4.0)),
                BoundaryFunction::zero(),
                BoundaryFunction::analytic("r21", 1.0, move |z| e * 2.0 / (z - 2.0 * I) + e * 1.0 / (z + 3.0 * I)),
                BoundaryFunction::analytic("r22", 2.0, move |z| e * 3.0 / (z * z + 9.0)),
            ],
        )
        .unwrap()
    }

    fn quad() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn reduce_rhs_with_identity_base_is_identity_map() {
        let k = idx(&[1, -1]);
        let base = BaseFactorization::diagonal(k);
        let n = lower(0.1);
        let m = reduce_rhs(&base, &n).unwrap();
        assert_eq!(m.eval(0.7), n.eval(0.7));
        let z = reduce_rhs(&base, &MatrixFunction::zeros(2)).unwrap();
        assert_eq!(z.eval(1.0), CMatrix::zeros(2, 2));
    }

    #[test]
    fn zero_rhs_passes_with_zero_everything() {
        let k = idx(&[1, -1]);
        let rep = check_solvability(&MatrixFunction::zeros(2), &k, &quad(), DEFAULT_TOL).unwrap();
        assert!(rep.passed);
        assert!(rep.residuals.iter().all(|r| r.value.norm() == 0.0));
        assert!(rep.pinned_constants.values().all(|c| c.norm() == 0.0));
        let st = solve_step(&MatrixFunction::zeros(2), &k, &ConstantPolicy::Zero, &quad()).unwrap();
        assert_eq!(st.n_plus.eval(0.3), CMatrix::zeros(2, 2));
        assert_eq!(st.n_minus.eval(-4.0), CMatrix::zeros(2, 2));
    }

    #[test]
    fn residual_layout_for_two_minus_two() {
        let k = idx(&[2, -2]);
        let rep = check_solvability(&lower(0.1), &k, &quad(), DEFAULT_TOL).unwrap();
        assert_eq!(rep.residuals.len(), 5);
        assert_eq!(
            rep.residuals
                .iter()
                .filter(|r| r.kind == ConditionKind::Cond5Cross)
                .count(),
            1
        );
    }

    #[test]
    fn explicit_constant_on_pinned_entry_conflicts() {
        let k = idx(&[1, -1]);
        let mut v = BTreeMap::new();
        v.insert((0, 1), C64::new(1.0, 0.0));
        let r = solve_step(&lower(0.1), &k, &ConstantPolicy::Explicit(v), &quad());
        assert!(matches!(r, Err(Error::PolicyConflict { row: 0, col: 1 })));
    }

    #[test]
    fn first_step_boundary_identity_and_exact_remainder() {
        let k = idx(&[1, -1]);
        let base = BaseFactorization::diagonal(k.clone());
        let n_eps = lower(0.2);
        let g = base.product().combine(&n_eps, MatrixOp::Add).unwrap();
        let f = factorize(&base, &n_eps, 1, &ConstantPolicy::Zero, &quad(), DEFAULT_TOL).unwrap();
        assert_eq!(f.achieved_order, 1);
        let st = &f.steps[0];
        for x in GridSpec::new(61).points() {
            assert!(st.boundary_defect(x).norm() < 5e-9, "defect at {x}");
            let dk = g.eval(x) - assemble(&f, 1, x).unwrap().product;
            let nn = st.n_minus.eval(x) * st.n_plus.eval(x);
            assert!((dk + nn).norm() < 5e-9);
        }
        assert!(matches!(assemble(&f, 2, 0.0), Err(Error::OrderExceeded { .. })));
    }

    #[test]
    fn half_plane_values_match_boundary_and_series() {
        let k = idx(&[1, -1]);
        let st = solve_step(&lower(0.3), &k, &ConstantPolicy::Zero, &quad()).unwrap();
        // approach the axis from inside each half-plane
        for x in [-2.0, 0.0, 0.5, 7.0] {
            let up = st.n_plus_at(C64::new(x, 1e-5)).unwrap();
            let down = st.n_minus_at(C64::new(x, -1e-5)).unwrap();
            assert!((up - st.n_plus.eval(x)).norm() < 1e-4);
            assert!((down - st.n_minus.eval(x)).norm() < 1e-4);
        }
        // series and direct formula agree inside the series disc
        for z in [I + C64::new(0.05, 0.02), I + C64::new(-0.03, -0.06)] {
            let a = st.data.tilde_plus_at(z, SERIES_RADIUS).unwrap();
            let b = st.data.tilde_plus_at(z, 0.0).unwrap();
            let d = (a - b).norm();
            assert!(d < 1e-6, "{d}");
        }
        for z in [-I + C64::new(0.05, 0.02), -I + C64::new(-0.03, -0.06)] {
            let a = st.data.tilde_minus_at(z, SERIES_RADIUS).unwrap();
            let b = st.data.tilde_minus_at(z, 0.0).unwrap();
            let d = (a - b).norm();
            assert!(d < 1e-6, "{d}");
        }
        let at_i = st.n_plus_at(I).unwrap();
        assert!(at_i.iter().all(|v| v.is_finite()));
        let at_mi = st.n_minus_at(-I).unwrap();
        assert!(at_mi.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn next_rhs_single_and_double_cross_terms() {
        let k = idx(&[1, -1]);
        let base = BaseFactorization::diagonal(k.clone());
        let f = factorize(&base, &lower(0.2), 2, &ConstantPolicy::Zero, &quad(), DEFAULT_TOL).unwrap();
        assert_eq!(f.achieved_order, 2);
        let m1 = next_rhs(&base, &f.steps[..1]).unwrap();
        let m2 = next_rhs(&base, &f.steps[..2]).unwrap();
        for x in [-3.0, 0.0, 1.5] {
            let (a, b) = (&f.steps[0], &f.steps[1]);
            let want1 = -(a.n_minus.eval(x) * a.n_plus.eval(x));
            let want2 = -(a.n_minus.eval(x) * b.n_plus.eval(x) + b.n_minus.eval(x) * a.n_plus.eval(x));
            assert!((m1.eval(x) - want1).norm() < 1e-14);
            assert!((m2.eval(x) - want2).norm() < 1e-14);
        }
    }

    #[test]
    fn remainder_order_ladder() {
        // sup ‖ΔK_m‖ / ε^{m+1} stays bounded along an ε ladder
        let k = idx(&[1, -1]);
        let base = BaseFactorization::diagonal(k.clone());
        let grid = GridSpec::new(201);
        for m in [1usize, 2] {
            let mut ratios = Vec::new();
            for eps in [0.2, 0.1, 0.05] {
                let n_eps = lower(eps);
                let g = base.product().combine(&n_eps, MatrixOp::Add).unwrap();
                let f = factorize(&base, &n_eps, m, &ConstantPolicy::Zero, &quad(), DEFAULT_TOL).unwrap();
                let r = remainder(&g, &f, m, &grid).unwrap();
                ratios.push(r.sup / eps.powi(m as i32 + 1));
            }
            let (lo, hi) = ratios
                .iter()
                .fold((f64::MAX, 0.0_f64), |(a, b), &v| (a.min(v), b.max(v)));
            assert!(hi / lo < 2.0, "order {m}: {ratios:?}");
        }
    }

    #[test]
    fn remainder_at_infinity_matches_square_of_constants() {
        let k = idx(&[1, -1]);
        let base = BaseFactorization::diagonal(k);
        let f = factorize(&base, &lower(0.3), 1, &ConstantPolicy::Zero, &quad(), DEFAULT_TOL).unwrap();
        let c = &f.steps[0].constants;
        let closed = remainder_at_infinity(&f).unwrap();
        assert!((closed.clone() - c * c).norm() < 1e-14);
        let st = &f.steps[0];
        let (a, b) = (st.n_minus.clone(), st.n_plus.clone());
        let numeric = limit_at_infinity_of(move |x| -(a.eval(x) * b.eval(x)), 2, &TailGrid::default()).unwrap();
        assert!((numeric.value - closed).norm() < 1e-6);
    }

    #[test]
    fn nontrivial_outer_factors() {
        // G₀⁻ lower unipotent, analytic below; G₀⁺ upper unipotent, analytic above
        let k = idx(&[1, -1]);
        let gm = MatrixFunction::from_entries(
            2,
            vec![
                BoundaryFunction::one(),
                BoundaryFunction::zero(),
                BoundaryFunction::analytic("1/(x-2i)", 1.0, |z| 1.0 / (z - 2.0 * I)),
                BoundaryFunction::one(),
            ],
        )
        .unwrap();
        let gp = MatrixFunction::from_entries(
            2,
            vec![
                BoundaryFunction::one(),
                BoundaryFunction::analytic("1/(x+i)", 1.0, |z| 1.0 / (z + I)),
                BoundaryFunction::zero(),
                BoundaryFunction::one(),
            ],
        )
        .unwrap();
        let base = BaseFactorization::new(gm, gp, k).unwrap();
        assert!(base.verify(&GridSpec::new(101)).unwrap() < 1e-13);
        // reduce_rhs undoes the sandwich G₀⁻ E G₀⁺; with E's first row zero
        // the (1,2) entry of the sandwich vanishes as well
        let l = lower(0.5);
        let e = MatrixFunction::from_entries(
            2,
            vec![
                BoundaryFunction::zero(),
                BoundaryFunction::zero(),
                l.entry(1, 0).clone(),
                l.entry(1, 1).clone(),
            ],
        )
        .unwrap();
        let sandwiched = base
            .g_minus
            .combine(&e, MatrixOp::Mul)
            .unwrap()
            .combine(&base.g_plus, MatrixOp::Mul)
            .unwrap();
        let m = reduce_rhs(&base, &sandwiched).unwrap();
        for x in GridSpec::new(31).points() {
            assert!((m.eval(x) - e.eval(x)).norm() < 1e-13);
        }
        // the first-step remainder is -N₁⁻N₁⁺ for general outer factors too
        let g = base.product().combine(&sandwiched, MatrixOp::Add).unwrap();
        let f = factorize(&base, &sandwiched, 1, &ConstantPolicy::Zero, &quad(), DEFAULT_TOL).unwrap();
        assert_eq!(f.achieved_order, 1);
        let st = &f.steps[0];
        for x in GridSpec::new(31).points() {
            let dk = g.eval(x) - assemble(&f, 1, x).unwrap().product;
            assert!((dk + st.n_minus.eval(x) * st.n_plus.eval(x)).norm() < 5e-9);
        }
        let z = C64::new(0.3, 1e-5);
        assert!((st.n_plus_at(z).unwrap() - st.n_plus.eval(0.3)).norm() < 1e-4);
    }

    #[test]
    fn mobius_entries_are_unimodular() {
        for x in [-10.0, 0.0, 3.0] {
            assert!((mobius_power(3).eval(x).norm() - 1.0).abs() < 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn verdicts_and_pins_do_not_depend_on_policy(a in -2.0..2.0f64, b in 0.5..3.0f64, c21 in -3.0..3.0f64) {
            let k = idx(&[1, -1]);
            let base = BaseFactorization::diagonal(k.clone());
            let m = MatrixFunction::from_entries(2, vec![
                rational(C64::new(a, 0.0), b),
                rational(C64::new(1.0, a), b + 1.0).sub(&rational(C64::new(1.0, a), -b - 1.0)),
                rational(C64::new(0.0, 1.0), -b),
                rational(C64::new(a, -1.0), b),
            ]).unwrap();
            let mut explicit = BTreeMap::new();
            explicit.insert((1, 0), C64::new(c21, 0.0));
            let mut reports = Vec::new();
            for p in [ConstantPolicy::Zero, ConstantPolicy::MatchInfinity, ConstantPolicy::Explicit(explicit)] {
                let f = factorize(&base, &m, 1, &p, &quad(), DEFAULT_TOL).unwrap();
                reports.push(f.steps.first().map(|s| s.report.clone()).or(f.failure.clone()).unwrap());
            }
            for r in &reports[1..] {
                prop_assert_eq!(r.passed, reports[0].passed);
                prop_assert_eq!(&r.pinned_constants, &reports[0].pinned_constants);
            }
        }

        #[test]
        fn boundary_identity_for_random_rational_rhs(a in -2.0..2.0f64, b in 0.5..3.0f64) {
            let k = idx(&[1, 0, -1]);
            let m = MatrixFunction::from_fn(3, |i, j| {
                let s = if (i + j) % 2 == 0 { b } else { -b - 0.5 };
                rational(C64::new(a + i as f64, j as f64), s)
            });
            let rep = check_solvability(&m, &k, &quad(), DEFAULT_TOL).unwrap();
            if rep.passed {
                let st = solve_step(&m, &k, &ConstantPolicy::Zero, &quad()).unwrap();
                for x in [-5.0, 0.0, 2.0] {
                    prop_assert!(st.boundary_defect(x).norm() < 5e-9);
                }
            }
        }
    }
}
