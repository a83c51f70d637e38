//! Scalar and matrix functions on the extended real line.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const DEFAULT_DET_FLOOR: f64 = 1e-10;

type RealEval = Arc<dyn Fn(f64) -> C64 + Send + Sync>;
type ComplexEval = Arc<dyn Fn(C64) -> C64 + Send + Sync>;

/// Frequency content of a function of the form `sum_k e^{i w_k x} r_k(x)`.
///
/// `fundamental` is the largest `w0` with every `w_k` an integer multiple of it
/// (zero when there is no oscillation), `bandwidth` bounds `max |w_k|`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Oscillation {
    pub fundamental: f64,
    pub bandwidth: f64,
}

impl Oscillation {
    pub const NONE: Oscillation = Oscillation {
        fundamental: 0.0,
        bandwidth: 0.0,
    };

    pub fn from_frequencies(freqs: &[f64]) -> Self {
        freqs.iter().fold(Self::NONE, |acc, &w| {
            let w = w.abs();
            if w == 0.0 {
                acc
            } else {
                Oscillation {
                    fundamental: commensurate_gcd(acc.fundamental, w),
                    bandwidth: acc.bandwidth.max(w),
                }
            }
        })
    }

    pub fn is_oscillatory(&self) -> bool {
        self.bandwidth > 0.0
    }

    /// Frequencies of a sum.
    pub fn union(self, other: Self) -> Self {
        Oscillation {
            fundamental: commensurate_gcd(self.fundamental, other.fundamental),
            bandwidth: self.bandwidth.max(other.bandwidth),
        }
    }

    /// Frequencies of a product.
    pub fn product(self, other: Self) -> Self {
        Oscillation {
            fundamental: commensurate_gcd(self.fundamental, other.fundamental),
            bandwidth: self.bandwidth + other.bandwidth,
        }
    }
}

/// Greatest common divisor of two nonnegative reals with a rational ratio
/// of denominator at most 64. Zero acts as the identity. Incommensurate
/// inputs fall back to the smaller value.
pub fn commensurate_gcd(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        return b;
    }
    if b == 0.0 {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let ratio = hi / lo;
    // continued fraction convergents p/q of hi/lo
    let (mut p0, mut q0, mut p1, mut q1) = (1.0_f64, 0.0_f64, ratio.floor(), 1.0_f64);
    let mut rest = ratio - ratio.floor();
    loop {
        if (p1 / q1 - ratio).abs() <= 1e-9 * ratio {
            return lo / q1;
        }
        if rest < 1e-12 {
            break;
        }
        let inv = 1.0 / rest;
        let a_k = inv.floor();
        rest = inv - a_k;
        let (p2, q2) = (a_k * p1 + p0, a_k * q1 + q0);
        if q2 > 64.0 {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
    }
    lo
}

/// Coarse structural knowledge used for shortcuts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Zero,
    Constant(C64),
    General,
}

/// A complex-valued function on the real line with decay metadata.
#[derive(Clone)]
pub struct BoundaryFunction {
    eval: RealEval,
    ext: Option<ComplexEval>,
    decay_order: f64,
    oscillation: Oscillation,
    shape: Shape,
    label: String,
}

impl fmt::Debug for BoundaryFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryFunction")
            .field("label", &self.label)
            .field("decay_order", &self.decay_order)
            .field("oscillation", &self.oscillation)
            .field("shape", &self.shape)
            .finish()
    }
}

impl BoundaryFunction {
    /// Function known only on the real line.
    pub fn new<F>(label: impl Into<String>, decay_order: f64, f: F) -> Self
    where
        F: Fn(f64) -> C64 + Send + Sync + 'static,
    {
        BoundaryFunction {
            eval: Arc::new(f),
            ext: None,
            decay_order,
            oscillation: Oscillation::NONE,
            shape: Shape::General,
            label: label.into(),
        }
    }

    /// Function given by an expression that also makes sense off the axis.
    pub fn analytic<F>(label: impl Into<String>, decay_order: f64, f: F) -> Self
    where
        F: Fn(C64) -> C64 + Send + Sync + 'static,
    {
        let f = Arc::new(f);
        let g = f.clone();
        BoundaryFunction {
            eval: Arc::new(move |x| g(C64::new(x, 0.0))),
            ext: Some(f),
            decay_order,
            oscillation: Oscillation::NONE,
            shape: Shape::General,
            label: label.into(),
        }
    }

    pub fn constant(c: C64) -> Self {
        if c == C64::new(0.0, 0.0) {
            return Self::zero();
        }
        BoundaryFunction {
            eval: Arc::new(move |_| c),
            ext: Some(Arc::new(move |_| c)),
            decay_order: 0.0,
            oscillation: Oscillation::NONE,
            shape: Shape::Constant(c),
            label: format!("{c}"),
        }
    }

    pub fn zero() -> Self {
        let z = C64::new(0.0, 0.0);
        BoundaryFunction {
            eval: Arc::new(move |_| z),
            ext: Some(Arc::new(move |_| z)),
            decay_order: f64::INFINITY,
            oscillation: Oscillation::NONE,
            shape: Shape::Zero,
            label: "0".into(),
        }
    }

    pub fn one() -> Self {
        Self::constant(C64::new(1.0, 0.0))
    }

    pub fn with_frequencies(mut self, freqs: &[f64]) -> Self {
        self.oscillation = Oscillation::from_frequencies(freqs);
        self
    }

    pub fn with_oscillation(mut self, osc: Oscillation) -> Self {
        self.oscillation = osc;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_decay(mut self, decay_order: f64) -> Self {
        self.decay_order = decay_order;
        self
    }

    pub fn eval(&self, x: f64) -> C64 {
        (self.eval)(x)
    }

    /// Value off the real axis, when an extension is known.
    pub fn eval_complex(&self, z: C64) -> Option<C64> {
        self.ext.as_ref().map(|f| f(z))
    }

    pub fn has_extension(&self) -> bool {
        self.ext.is_some()
    }

    pub fn decay_order(&self) -> f64 {
        self.decay_order
    }

    pub fn oscillation(&self) -> Oscillation {
        self.oscillation
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_zero(&self) -> bool {
        self.shape == Shape::Zero
    }

    fn binary<F>(&self, other: &Self, label: String, decay: f64, osc: Oscillation, op: F) -> Self
    where
        F: Fn(C64, C64) -> C64 + Send + Sync + Copy + 'static,
    {
        let (a, b) = (self.eval.clone(), other.eval.clone());
        let ext: Option<ComplexEval> = match (&self.ext, &other.ext) {
            (Some(fa), Some(fb)) => {
                let (fa, fb) = (fa.clone(), fb.clone());
                Some(Arc::new(move |z| op(fa(z), fb(z))))
            }
            _ => None,
        };
        BoundaryFunction {
            eval: Arc::new(move |x| op(a(x), b(x))),
            ext,
            decay_order: decay,
            oscillation: osc,
            shape: Shape::General,
            label,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        match (self.shape, other.shape) {
            (Shape::Zero, _) => other.clone(),
            (_, Shape::Zero) => self.clone(),
            (Shape::Constant(a), Shape::Constant(b)) => Self::constant(a + b),
            _ => self.binary(
                other,
                format!("({} + {})", self.label, other.label),
                self.decay_order.min(other.decay_order),
                self.oscillation.union(other.oscillation),
                |u, v| u + v,
            ),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        match (self.shape, other.shape) {
            (_, Shape::Zero) => self.clone(),
            (Shape::Constant(a), Shape::Constant(b)) => Self::constant(a - b),
            _ => self.binary(
                other,
                format!("({} - {})", self.label, other.label),
                self.decay_order.min(other.decay_order),
                self.oscillation.union(other.oscillation),
                |u, v| u - v,
            ),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        match (self.shape, other.shape) {
            (Shape::Zero, _) | (_, Shape::Zero) => Self::zero(),
            (Shape::Constant(a), _) => other.scale(a),
            (_, Shape::Constant(b)) => self.scale(b),
            _ => self.binary(
                other,
                format!("{} * {}", self.label, other.label),
                self.decay_order + other.decay_order,
                self.oscillation.product(other.oscillation),
                |u, v| u * v,
            ),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        if c == C64::new(0.0, 0.0) || self.is_zero() {
            return Self::zero();
        }
        if c == C64::new(1.0, 0.0) {
            return self.clone();
        }
        if let Shape::Constant(a) = self.shape {
            return Self::constant(a * c);
        }
        let f = self.eval.clone();
        let ext: Option<ComplexEval> = self.ext.as_ref().map(|g| {
            let g = g.clone();
            Arc::new(move |z| c * g(z)) as ComplexEval
        });
        BoundaryFunction {
            eval: Arc::new(move |x| c * f(x)),
            ext,
            decay_order: self.decay_order,
            oscillation: self.oscillation,
            shape: Shape::General,
            label: format!("{c}*{}", self.label),
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(C64::new(-1.0, 0.0))
    }

    /// Checks the claimed decay order on the dyadic tail `x = ±2^k`, k = 8..16:
    /// `|f(x)| |x|^d` must stay below ten times its median.
    pub fn check_decay(&self) -> bool {
        let d = if self.decay_order.is_finite() {
            self.decay_order
        } else {
            return TailGrid::default()
                .points()
                .iter()
                .all(|&x| self.eval(x).norm() < 1e-300);
        };
        let mut r: Vec<f64> = TailGrid::default()
            .points()
            .iter()
            .map(|&x| self.eval(x).norm() * x.abs().powf(d))
            .collect();
        let bound = {
            let mut s = r.clone();
            s.sort_by(|a, b| a.total_cmp(b));
            10.0 * s[s.len() / 2]
        };
        if bound == 0.0 {
            return r.iter().all(|&v| v == 0.0);
        }
        r.retain(|&v| v > bound);
        r.is_empty()
    }
}

/// Pointwise matrix algebra operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixOp {
    Add,
    Sub,
    Mul,
}

/// An n×n array of boundary functions.
#[derive(Clone, Debug)]
pub struct MatrixFunction {
    dim: usize,
    entries: Vec<BoundaryFunction>,
    det_floor: Option<f64>,
}

struct Memo {
    f: Box<dyn Fn(f64) -> CMatrix + Send + Sync>,
    cache: Mutex<HashMap<u64, CMatrix>>,
}

impl Memo {
    fn get(&self, x: f64) -> CMatrix {
        let key = x.to_bits();
        if let Some(m) = self.cache.lock().unwrap().get(&key) {
            return m.clone();
        }
        let m = (self.f)(x);
        self.cache.lock().unwrap().insert(key, m.clone());
        m
    }
}

impl MatrixFunction {
    /// Builds from row-major entries.
    pub fn from_entries(dim: usize, entries: Vec<BoundaryFunction>) -> Result<Self> {
        if entries.len() != dim * dim || dim == 0 {
            return Err(Error::DimensionMismatch {
                left: dim * dim,
                right: entries.len(),
            });
        }
        Ok(MatrixFunction {
            dim,
            entries,
            det_floor: None,
        })
    }

    pub fn from_fn<F>(dim: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize) -> BoundaryFunction,
    {
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(f(i, j));
            }
        }
        MatrixFunction {
            dim,
            entries,
            det_floor: None,
        }
    }

    /// Matrix whose entries share one evaluator. Values are memoized per
    /// abscissa, so an expensive evaluator runs once for all n² entries.
    pub fn from_matrix_fn<F>(dim: usize, label: &str, decay: &[f64], osc: Oscillation, f: F) -> Self
    where
        F: Fn(f64) -> CMatrix + Send + Sync + 'static,
    {
        let memo = Arc::new(Memo {
            f: Box::new(f),
            cache: Mutex::new(HashMap::new()),
        });
        Self::from_fn(dim, |i, j| {
            let m = memo.clone();
            BoundaryFunction::new(format!("{label}[{i},{j}]"), decay[i * dim + j], move |x| {
                m.get(x)[(i, j)]
            })
            .with_oscillation(osc)
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| {
            if i == j {
                BoundaryFunction::one()
            } else {
                BoundaryFunction::zero()
            }
        })
        .flag_invertible(DEFAULT_DET_FLOOR)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_fn(dim, |_, _| BoundaryFunction::zero())
    }

    pub fn constant(c: &CMatrix) -> Self {
        Self::from_fn(c.nrows(), |i, j| BoundaryFunction::constant(c[(i, j)]))
    }

    pub fn diagonal(entries: Vec<BoundaryFunction>) -> Self {
        let dim = entries.len();
        Self::from_fn(dim, |i, j| {
            if i == j {
                entries[i].clone()
            } else {
                BoundaryFunction::zero()
            }
        })
    }

    pub fn flag_invertible(mut self, det_floor: f64) -> Self {
        self.det_floor = Some(det_floor);
        self
    }

    pub fn det_floor(&self) -> Option<f64> {
        self.det_floor
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> &BoundaryFunction {
        &self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[BoundaryFunction] {
        &self.entries
    }

    pub fn has_extension(&self) -> bool {
        self.entries.iter().all(|e| e.has_extension())
    }

    pub fn eval(&self, x: f64) -> CMatrix {
        CMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(i, j).eval(x))
    }

    pub fn eval_complex(&self, z: C64) -> Result<CMatrix> {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[(i, j)] = self.entry(i, j).eval_complex(z).ok_or(Error::NoExtension)?;
            }
        }
        Ok(m)
    }

    pub fn oscillation(&self) -> Oscillation {
        self.entries
            .iter()
            .fold(Oscillation::NONE, |acc, e| acc.union(e.oscillation()))
    }

    /// Pointwise sum, difference or product. Decay metadata is propagated as
    /// the minimum for sums and the sum of orders for products.
    pub fn combine(&self, other: &MatrixFunction, op: MatrixOp) -> Result<MatrixFunction> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        let n = self.dim;
        let out = match op {
            MatrixOp::Add => Self::from_fn(n, |i, j| self.entry(i, j).add(other.entry(i, j))),
            MatrixOp::Sub => Self::from_fn(n, |i, j| self.entry(i, j).sub(other.entry(i, j))),
            MatrixOp::Mul => Self::from_fn(n, |i, j| {
                (0..n).fold(BoundaryFunction::zero(), |acc, k| {
                    acc.add(&self.entry(i, k).mul(other.entry(k, j)))
                })
            }),
        };
        Ok(out)
    }

    pub fn scale(&self, c: C64) -> MatrixFunction {
        Self::from_fn(self.dim, |i, j| self.entry(i, j).scale(c))
    }

    pub fn check_invertible(&self, grid: &GridSpec) -> Result<()> {
        let floor = self.det_floor.unwrap_or(DEFAULT_DET_FLOOR);
        for x in grid.points() {
            invert_at(self, x, floor)?;
        }
        Ok(())
    }
}

pub fn eval(f: &BoundaryFunction, x: f64) -> C64 {
    f.eval(x)
}

pub fn eval_matrix(f: &MatrixFunction, x: f64) -> CMatrix {
    f.eval(x)
}

pub fn combine(f: &MatrixFunction, g: &MatrixFunction, op: MatrixOp) -> Result<MatrixFunction> {
    f.combine(g, op)
}

/// Pointwise inverse, refusing when `|det F(x)| < det_floor`.
pub fn invert_at(f: &MatrixFunction, x: f64, det_floor: f64) -> Result<CMatrix> {
    invert_matrix(&f.eval(x), x, det_floor)
}

pub(crate) fn invert_matrix(m: &CMatrix, x: f64, det_floor: f64) -> Result<CMatrix> {
    let det = m.determinant();
    if !(det.norm() >= det_floor) {
        return Err(Error::NearSingular { x, det_abs: det.norm() });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::NearSingular { x, det_abs: det.norm() })
}

/// Tan-mapped grid `x = tan(θ)`, θ uniform on `[-π/2 + δ, π/2 - δ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub num_points: usize,
    pub delta: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            num_points: 2001,
            delta: 1e-4,
        }
    }
}

impl GridSpec {
    pub fn new(num_points: usize) -> Self {
        GridSpec {
            num_points,
            ..Default::default()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let n = self.num_points.max(2);
        let half = FRAC_PI_2 - self.delta;
        let step = 2.0 * half / (n - 1) as f64;
        let mut xs = vec![0.0; n];
        for k in 0..n / 2 {
            let x = (-half + k as f64 * step).tan();
            xs[k] = x;
            xs[n - 1 - k] = -x;
        }
        xs
    }
}

/// Dyadic tail `x = ±2^k`, `k_min..=k_max`, used for limits and decay checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailGrid {
    pub k_min: i32,
    pub k_max: i32,
    /// Accepted spread of the limit estimate, relative to `max(1, |L|)`.
    pub tol: f64,
}

impl Default for TailGrid {
    fn default() -> Self {
        TailGrid {
            k_min: 8,
            k_max: 16,
            tol: 1e-3,
        }
    }
}

impl TailGrid {
    pub fn points(&self) -> Vec<f64> {
        (self.k_min..=self.k_max)
            .flat_map(|k| {
                let x = 2f64.powi(k);
                [x, -x]
            })
            .collect()
    }
}

pub fn sup_norm(f: &MatrixFunction, grid: &GridSpec) -> f64 {
    sup_norm_of(|x| f.eval(x), grid)
}

/// Sup norm of a matrix-valued map over a grid.
pub fn sup_norm_of<F>(f: F, grid: &GridSpec) -> f64
where
    F: Fn(f64) -> CMatrix + Sync,
{
    grid.points()
        .par_iter()
        .map(|&x| f(x).iter().fold(0.0_f64, |m, v| m.max(v.norm())))
        .reduce(|| 0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitEstimate {
    pub value: CMatrix,
    pub error: f64,
}

/// Neville extrapolation of samples `(h_k, v_k)` to `h = 0`.
pub(crate) fn neville_at_zero(h: &[f64], v: &[C64]) -> C64 {
    let mut p = v.to_vec();
    let n = p.len();
    for m in 1..n {
        for k in 0..n - m {
            p[k] = (h[k + m] * p[k] - h[k] * p[k + 1]) / (h[k + m] - h[k]);
        }
    }
    p[0]
}

fn side_limit(f: &dyn Fn(f64) -> C64, sign: f64, tail: &TailGrid) -> (C64, f64) {
    let ks: Vec<i32> = (tail.k_min.max(tail.k_max - 4)..=tail.k_max).collect();
    let xs: Vec<f64> = ks.iter().map(|&k| sign * 2f64.powi(k)).collect();
    let vs: Vec<C64> = xs.iter().map(|&x| f(x)).collect();
    let hs: Vec<f64> = xs.iter().map(|x| 1.0 / x.abs()).collect();
    let n = vs.len();
    let rich = neville_at_zero(&hs, &vs);
    let rich_lo = neville_at_zero(&hs[1..], &vs[1..]);
    let rich_err = (rich - rich_lo).norm();
    let cauchy_err = (vs[n - 1] - vs[n - 2]).norm();
    if rich_err <= cauchy_err {
        (rich, rich_err)
    } else {
        (vs[n - 1], cauchy_err)
    }
}

/// Limit of F(x) as |x| → ∞, from both ends of the dyadic tail.
///
/// Tries Richardson extrapolation in 1/x and falls back to the last sample
/// (Cauchy criterion) when the extrapolation is less stable than the raw tail.
pub fn limit_at_infinity(f: &MatrixFunction, tail: &TailGrid) -> Result<LimitEstimate> {
    limit_at_infinity_of(|x| f.eval(x), f.dim(), tail)
}

pub fn limit_at_infinity_of<F>(f: F, dim: usize, tail: &TailGrid) -> Result<LimitEstimate>
where
    F: Fn(f64) -> CMatrix + Sync,
{
    let mut samples: HashMap<u64, CMatrix> = HashMap::new();
    let ks: Vec<i32> = (tail.k_min.max(tail.k_max - 4)..=tail.k_max).collect();
    let xs: Vec<f64> = ks.iter().flat_map(|&k| [2f64.powi(k), -(2f64.powi(k))]).collect();
    let vals: Vec<CMatrix> = xs.par_iter().map(|&x| f(x)).collect();
    for (x, v) in xs.iter().zip(vals) {
        samples.insert(x.to_bits(), v);
    }
    let mut value = CMatrix::zeros(dim, dim);
    let mut error = 0.0_f64;
    let mut scale = 1.0_f64;
    for i in 0..dim {
        for j in 0..dim {
            let g = |x: f64| samples[&x.to_bits()][(i, j)];
            let (lp, ep) = side_limit(&g, 1.0, tail);
            let (lm, em) = side_limit(&g, -1.0, tail);
            let l = (lp + lm) * 0.5;
            value[(i, j)] = l;
            error = error.max(ep.max(em) + 0.5 * (lp - lm).norm());
            scale = scale.max(l.norm());
        }
    }
    if error > tail.tol * scale {
        return Err(Error::NoLimit {
            spread: error,
            tol: tail.tol * scale,
        });
    }
    Ok(LimitEstimate { value, error })
}
