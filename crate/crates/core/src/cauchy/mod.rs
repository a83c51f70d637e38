//! Cauchy-type integrals on the real line.
//!
//! `Ω⁺f(z) = (z-i)/(2πi) ∫ f(τ) dτ / ((τ-i)(τ-z))` for `Im z > 0` and
//! `Ω⁻f(z) = -(z-i)/(2πi) ∫ f(τ) dτ / ((τ-i)(τ-z))` for `Im z < 0`.
//! With this orientation `Ω⁺f(i) = 0`, `Ω⁻f(-i) = (1/π) ∫ f/(τ²+1)` and the
//! boundary values satisfy `Ω⁺f + Ω⁻f = f` on ℝ.

pub mod quadrature;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::funcspace::{BoundaryFunction, Shape, C64};
use quadrature::Sampler;
pub use quadrature::{Estimate, QuadratureSpec};

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pole {
    PlusI,
    MinusI,
}

impl Pole {
    fn value(self) -> C64 {
        match self {
            Pole::PlusI => I,
            Pole::MinusI => -I,
        }
    }
}

/// Off-axis points with `|Im z|` below this use the subtracted integrand.
const SUBTRACT_BELOW: f64 = 0.5;

/// `∫_{-X}^{X} (z-i)/((τ-i)(τ-z)) dτ`, principal value when `z` is real;
/// `x_max = None` means the whole line.
fn kernel_total(z: C64, x_max: Option<f64>) -> C64 {
    let on_axis = z.im == 0.0;
    match x_max {
        None => {
            if on_axis {
                -I * PI
            } else if z.im > 0.0 {
                C64::new(0.0, 0.0)
            } else {
                -2.0 * PI * I
            }
        }
        Some(x) => {
            let tail_i = I * (PI - 2.0 * (1.0 / x).atan());
            if on_axis {
                C64::new(((x - z.re) / (x + z.re)).ln(), 0.0) - tail_i
            } else {
                (C64::new(x, 0.0) - z).ln() - (C64::new(-x, 0.0) - z).ln() - tail_i
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Scalar {
    Gamma,
    Weighted,
    Moment(Pole, u32),
}

/// Cauchy-projection machinery bound to one function; quadrature samples
/// and scalar integrals are cached and shared by all targets.
pub struct Projection {
    sampler: Sampler,
    hilbert_cache: Mutex<HashMap<u64, Estimate>>,
    scalars: Mutex<HashMap<Scalar, Estimate>>,
}

impl Projection {
    pub fn new(f: BoundaryFunction, spec: QuadratureSpec) -> Self {
        Projection {
            sampler: Sampler::new(f, spec),
            hilbert_cache: Mutex::new(HashMap::new()),
            scalars: Mutex::new(HashMap::new()),
        }
    }

    pub fn function(&self) -> &BoundaryFunction {
        self.sampler.function()
    }

    pub fn spec(&self) -> &QuadratureSpec {
        self.sampler.spec()
    }

    pub fn cached_nodes(&self) -> usize {
        self.sampler.cached_nodes()
    }

    fn shape(&self) -> Shape {
        self.function().shape()
    }

    /// Regularized Hilbert transform
    /// `H̃f(x) = (x-i)/(πi) PV ∫ f(τ) dτ / ((τ-i)(τ-x))`.
    pub fn hilbert(&self, x: f64) -> Estimate {
        match self.shape() {
            Shape::Zero => {
                return Estimate {
                    value: C64::new(0.0, 0.0),
                    error: 0.0,
                }
            }
            // Ω⁺c = 0 and Ω⁻c = c, so H̃c = -c
            Shape::Constant(c) => return Estimate { value: -c, error: 0.0 },
            Shape::General => {}
        }
        let key = x.to_bits();
        if let Some(e) = self.hilbert_cache.lock().unwrap().get(&key) {
            return *e;
        }
        let f = self.function();
        let fx = f.eval(x);
        let zx = C64::new(x, 0.0);
        let near = 1e-13 * (1.0 + x.abs());
        let kern = |t: f64, ft: C64| {
            if (t - x).abs() < near {
                let h = 1e-5 * (1.0 + x.abs());
                (f.eval(x + h) - f.eval(x - h)) / (2.0 * h)
            } else {
                (ft - fx) * (zx - I) / ((t - I) * (t - x))
            }
        };
        let est = self
            .sampler
            .integrate(x.abs(), kern, |xm| fx * kernel_total(zx, xm), None);
        let est = Estimate {
            value: est.value / (PI * I),
            error: est.error / PI,
        };
        self.hilbert_cache.lock().unwrap().insert(key, est);
        est
    }

    /// Non-tangential limit of `Ω^side f` at the real point `x`.
    pub fn boundary_value(&self, side: Side, x: f64) -> C64 {
        let fx = self.function().eval(x);
        let h = self.hilbert(x).value;
        match side {
            Side::Plus => 0.5 * (fx + h),
            Side::Minus => 0.5 * (fx - h),
        }
    }

    /// Value of `Ω^side f` at an off-axis point of the matching half-plane.
    pub fn omega(&self, side: Side, z: C64) -> Result<C64> {
        Ok(self.omega_estimate(side, z)?.value)
    }

    pub fn omega_estimate(&self, side: Side, z: C64) -> Result<Estimate> {
        let delta = self.spec().min_imag_distance;
        if z.im.abs() < delta {
            return Err(Error::TooCloseToAxis { z_im: z.im, delta });
        }
        let sign = match side {
            Side::Plus if z.im > 0.0 => 1.0,
            Side::Minus if z.im < 0.0 => -1.0,
            _ => return Err(Error::WrongHalfPlane { z_im: z.im }),
        };
        match self.shape() {
            Shape::Zero => {
                return Ok(Estimate {
                    value: C64::new(0.0, 0.0),
                    error: 0.0,
                })
            }
            Shape::Constant(c) => {
                let v = if side == Side::Plus { C64::new(0.0, 0.0) } else { c };
                return Ok(Estimate { value: v, error: 0.0 });
            }
            Shape::General => {}
        }
        if z == I {
            return Ok(Estimate {
                value: C64::new(0.0, 0.0),
                error: 0.0,
            });
        }
        let f = self.function();
        let est = if z.im.abs() < SUBTRACT_BELOW {
            let f0 = f.eval(z.re);
            let kern = |t: f64, ft: C64| (ft - f0) * (z - I) / ((t - I) * (t - z));
            let region = self.sampler.region(z.re, z.im.abs(), &kern);
            self.sampler
                .integrate(z.norm(), kern, |xm| f0 * kernel_total(z, xm), region.as_ref())
        } else {
            let kern = |t: f64, ft: C64| ft * (z - I) / ((t - I) * (t - z));
            self.sampler.integrate(z.norm(), kern, |_| C64::new(0.0, 0.0), None)
        };
        Ok(Estimate {
            value: sign * est.value / (2.0 * PI * I),
            error: est.error / (2.0 * PI),
        })
    }

    fn scalar<K>(&self, key: Scalar, kern: K) -> Estimate
    where
        K: Fn(f64, C64) -> C64,
    {
        if let Some(e) = self.scalars.lock().unwrap().get(&key) {
            return *e;
        }
        let est = self.sampler.integrate(0.0, kern, |_| C64::new(0.0, 0.0), None);
        self.scalars.lock().unwrap().insert(key, est);
        est
    }

    /// `(1/π) ∫ f(τ) dτ / (τ²+1)`, which equals `Ω⁻f(-i)`.
    pub fn weighted(&self) -> Estimate {
        match self.shape() {
            Shape::Zero => Estimate {
                value: C64::new(0.0, 0.0),
                error: 0.0,
            },
            Shape::Constant(c) => Estimate { value: c, error: 0.0 },
            Shape::General => self.scalar(Scalar::Weighted, |t, ft| ft / (PI * (t * t + 1.0))),
        }
    }

    /// `∫ f(τ) dτ / (τ - pole)^{r+1}`.
    pub fn moment(&self, pole: Pole, r: u32) -> Estimate {
        match self.shape() {
            Shape::Zero | Shape::Constant(_) if r >= 1 => Estimate {
                value: C64::new(0.0, 0.0),
                error: 0.0,
            },
            _ => {
                let p = pole.value();
                let e = r as i32 + 1;
                self.scalar(Scalar::Moment(pole, r), move |t, ft| ft / (t - p).powi(e))
            }
        }
    }

    /// `(1/2πi) ∫ f(τ) dτ / (τ - i)`, the value at `i` of the Cauchy integral.
    /// Only meaningful when `f` decays at infinity.
    pub fn cauchy_at_i(&self) -> Estimate {
        match self.shape() {
            Shape::Zero => Estimate {
                value: C64::new(0.0, 0.0),
                error: 0.0,
            },
            _ => {
                let e = self.scalar(Scalar::Gamma, |t, ft| ft / (t - I));
                Estimate {
                    value: e.value / (2.0 * PI * I),
                    error: e.error / (2.0 * PI),
                }
            }
        }
    }
}

/// One half of the Plemelj split of a boundary function.
#[derive(Clone)]
pub struct HalfPlaneFunction {
    side: Side,
    projection: Arc<Projection>,
}

impl HalfPlaneFunction {
    pub fn new(side: Side, projection: Arc<Projection>) -> Self {
        HalfPlaneFunction { side, projection }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn source(&self) -> &BoundaryFunction {
        self.projection.function()
    }

    pub fn projection(&self) -> &Arc<Projection> {
        &self.projection
    }

    /// Value inside the half-plane of this side.
    pub fn eval(&self, z: C64) -> Result<C64> {
        self.projection.omega(self.side, z)
    }

    /// Boundary value on ℝ.
    pub fn boundary(&self, x: f64) -> C64 {
        self.projection.boundary_value(self.side, x)
    }
}

/// Runs `op` on the given rule and on one with twice the panels, and
/// reports non-convergence when they disagree by more than `10 abs_tol`.
fn checked<F>(f: &BoundaryFunction, spec: &QuadratureSpec, op: F) -> Result<C64>
where
    F: Fn(&Projection) -> Result<Estimate>,
{
    let coarse = op(&Projection::new(f.clone(), *spec))?;
    let fine = op(&Projection::new(f.clone(), spec.refined()))?;
    let tol = 10.0 * spec.abs_tol * fine.value.norm().max(1.0);
    let discrepancy = (coarse.value - fine.value).norm().max(fine.error);
    if discrepancy > tol {
        return Err(Error::QuadratureNotConverged {
            estimate: fine.value.norm(),
            discrepancy,
        });
    }
    Ok(fine.value)
}

/// `Ω^side f(z)` for `z` strictly inside the half-plane of `side`.
pub fn omega(f: &BoundaryFunction, side: Side, z: C64, spec: &QuadratureSpec) -> Result<C64> {
    checked(f, spec, |p| p.omega_estimate(side, z))
}

/// Boundary value of `Ω^side f` at the real point `x`, `(f ± H̃f)/2`.
pub fn boundary_values(f: &BoundaryFunction, side: Side, x: f64, spec: &QuadratureSpec) -> Result<C64> {
    checked(f, spec, |p| {
        let h = p.hilbert(x);
        let v = p.boundary_value(side, x);
        Ok(Estimate {
            value: v,
            error: 0.5 * h.error,
        })
    })
}

/// Splits `f` into parts analytic in the lower and upper half-planes,
/// normalized so that the plus part vanishes at `i`. Returns `(minus, plus)`.
pub fn plemelj_split(f: &BoundaryFunction, spec: &QuadratureSpec) -> (HalfPlaneFunction, HalfPlaneFunction) {
    let p = Arc::new(Projection::new(f.clone(), *spec));
    (
        HalfPlaneFunction::new(Side::Minus, p.clone()),
        HalfPlaneFunction::new(Side::Plus, p),
    )
}

/// `(1/π) ∫ f(τ) dτ / (τ²+1)`.
pub fn weighted_integral(f: &BoundaryFunction, spec: &QuadratureSpec) -> Result<C64> {
    checked(f, spec, |p| Ok(p.weighted()))
}

/// `∫ f(τ) dτ / (τ - pole)^{r+1}` for `r >= 1`.
pub fn moment(f: &BoundaryFunction, pole: Pole, r: u32, spec: &QuadratureSpec) -> Result<C64> {
    if r == 0 {
        return Err(Error::InvalidParameter("moment order must be at least 1".into()));
    }
    checked(f, spec, |p| Ok(p.moment(pole, r)))
}
