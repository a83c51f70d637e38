//! Named example matrices with known base factorizations.
//!
//! Names used by the command line: `gk0`, `gk-singular`, `solvable`,
//! `unsolvable`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::factorizer::BaseFactorization;
use crate::funcspace::{BoundaryFunction, MatrixFunction, MatrixOp, C64};
use crate::indices::{build_lambda, mobius_power, LambdaVariant, PartialIndices};

const I: C64 = C64::new(0.0, 1.0);

pub type Builder = Arc<dyn Fn(f64) -> MatrixFunction + Send + Sync>;

/// Closed-form first-step factors `(N₁⁻, N₁⁺)` for a given `ε` and `c₂₁`.
pub type Oracle = fn(f64, C64) -> (MatrixFunction, MatrixFunction);

#[derive(Clone)]
pub struct GalleryEntry {
    pub name: String,
    /// `ε ↦ G_ε`.
    pub builder: Builder,
    /// `ε ↦ G_ε - G₀`, with decay metadata.
    pub perturbation: Builder,
    pub base: BaseFactorization,
    pub oracle: Option<Oracle>,
}

impl std::fmt::Debug for GalleryEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GalleryEntry")
            .field("name", &self.name)
            .field("indices", &self.base.indices)
            .field("oracle", &self.oracle.is_some())
            .finish()
    }
}

impl GalleryEntry {
    pub fn build(&self, eps: f64) -> MatrixFunction {
        (self.builder)(eps)
    }

    pub fn perturbation(&self, eps: f64) -> MatrixFunction {
        (self.perturbation)(eps)
    }
}

pub const NAMES: [&str; 4] = ["gk0", "gk-singular", "solvable", "unsolvable"];

/// Looks up an entry by its command-line name.
pub fn by_name(name: &str) -> Result<GalleryEntry> {
    match name {
        "gk0" => Ok(gk_diagonal()),
        "gk-singular" => Ok(gk_singular_entry()),
        "solvable" => Ok(example_solvable()),
        "unsolvable" => Ok(example_unsolvable()),
        _ => Err(Error::InvalidParameter(format!(
            "unknown example '{name}', expected one of {}",
            NAMES.join(", ")
        ))),
    }
}

fn gk0_indices() -> PartialIndices {
    PartialIndices::new(vec![1, -1]).expect("valid indices")
}

fn gk0_matrix() -> MatrixFunction {
    build_lambda(&gk0_indices(), LambdaVariant::Full)
}

/// `diag((x-i)/(x+i), (x+i)/(x-i))` with identity outer factors.
pub fn gk_diagonal() -> GalleryEntry {
    GalleryEntry {
        name: "gk0".into(),
        builder: Arc::new(|_| gk0_matrix()),
        perturbation: Arc::new(|_| MatrixFunction::zeros(2)),
        base: BaseFactorization::diagonal(gk0_indices()),
        oracle: None,
    }
}

/// `[[(x-i)/(x+i), ε], [0, (x+i)/(x-i)]]`.
pub fn gk1_matrix(eps: f64) -> MatrixFunction {
    let lam = gk0_matrix();
    MatrixFunction::from_entries(
        2,
        vec![
            lam.entry(0, 0).clone(),
            BoundaryFunction::constant(C64::new(eps, 0.0)),
            BoundaryFunction::zero(),
            lam.entry(1, 1).clone(),
        ],
    )
    .expect("2x2")
}

fn gk_singular_entry() -> GalleryEntry {
    GalleryEntry {
        name: "gk-singular".into(),
        builder: Arc::new(gk1_matrix),
        perturbation: Arc::new(|eps| {
            MatrixFunction::from_entries(
                2,
                vec![
                    BoundaryFunction::zero(),
                    BoundaryFunction::constant(C64::new(eps, 0.0)),
                    BoundaryFunction::zero(),
                    BoundaryFunction::zero(),
                ],
            )
            .expect("2x2")
        }),
        base: BaseFactorization::diagonal(gk0_indices()),
        oracle: None,
    }
}

/// Factorization of the perturbed matrix with zero partial indices.
#[derive(Debug, Clone)]
pub struct CanonicalFactors {
    pub minus: MatrixFunction,
    pub plus: MatrixFunction,
    pub indices: PartialIndices,
}

/// The perturbed matrix `G_ε` together with its canonical factorization
/// `[[1, 0], [(x+i)/(ε(x-i)), 1]] · I · [[(x-i)/(x+i), ε], [-1/ε, 0]]`.
pub fn gk_singular(eps: f64) -> Result<(GalleryEntry, CanonicalFactors)> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("gk-singular needs eps > 0, got {eps}")));
    }
    let e = C64::new(eps, 0.0);
    let minus = MatrixFunction::from_entries(
        2,
        vec![
            BoundaryFunction::one(),
            BoundaryFunction::zero(),
            mobius_power(-1).scale(1.0 / e),
            BoundaryFunction::one(),
        ],
    )?;
    let plus = MatrixFunction::from_entries(
        2,
        vec![
            mobius_power(1),
            BoundaryFunction::constant(e),
            BoundaryFunction::constant(-1.0 / e),
            BoundaryFunction::zero(),
        ],
    )?;
    Ok((
        gk_singular_entry(),
        CanonicalFactors {
            minus,
            plus,
            indices: PartialIndices::new(vec![0, 0])?,
        },
    ))
}

/// `x i (a + b e^{iεx} + c e^{-iεx}) / (x²+1)`.
fn trig(eps: f64, a: f64, b: f64, c: f64) -> BoundaryFunction {
    BoundaryFunction::analytic(format!("xi({a}{b:+}e^(iεx){c:+}e^(-iεx))/(x²+1)"), 1.0, move |z| {
        z * I * (a + b * (I * eps * z).exp() + c * (-I * eps * z).exp()) / (z * z + 1.0)
    })
    .with_frequencies(&[eps, -eps])
}

fn perturbation_matrix(eps: f64, n12: (f64, f64, f64)) -> MatrixFunction {
    MatrixFunction::from_entries(
        2,
        vec![
            trig(eps, -16.0, 8.0, 8.0),
            trig(eps, n12.0, n12.1, n12.2),
            trig(eps, -12.0, 4.0, 8.0),
            trig(eps, 16.0, -8.0, -8.0),
        ],
    )
    .expect("2x2")
}

fn trig_entry(n12: (f64, f64, f64), name: &str) -> GalleryEntry {
    let pert: Builder = Arc::new(move |e| perturbation_matrix(e, n12));
    let p = pert.clone();
    GalleryEntry {
        name: name.into(),
        builder: Arc::new(move |e| gk0_matrix().combine(&p(e), MatrixOp::Add).expect("2x2")),
        perturbation: pert,
        base: BaseFactorization::diagonal(gk0_indices()),
        oracle: None,
    }
}

/// The 2×2 trigonometric-rational matrix whose first correction step is
/// solvable for every `ε`:
///
/// ```text
/// g11 = (x² + xi(-18 + 8e^{iεx} + 8e^{-iεx}) - 1)/(x²+1)
/// g12 = xi(24 - 12e^{iεx} - 12e^{-iεx})/(x²+1)
/// g21 = xi(-12 + 4e^{iεx} + 8e^{-iεx})/(x²+1)
/// g22 = (x² + xi(18 - 8e^{iεx} - 8e^{-iεx}) - 1)/(x²+1)
/// ```
pub fn example_solvable() -> GalleryEntry {
    GalleryEntry {
        oracle: Some(oracle_first_step),
        ..trig_entry((24.0, -12.0, -12.0), "solvable")
    }
}

/// Same as [`example_solvable`] except `g12 = xi(24 - 16e^{iεx} - 8e^{-iεx})/(x²+1)`;
/// the cross condition fails for every `ε > 0`.
pub fn example_unsolvable() -> GalleryEntry {
    trig_entry((24.0, -16.0, -8.0), "unsolvable")
}

fn decay_factor(eps: f64) -> f64 {
    1.0 - (-eps).exp() + eps * (-eps).exp()
}

/// Pinned constants `(c₁₁, c₁₂, c₂₂)` of the first step of the solvable
/// example.
pub fn solvable_constants(eps: f64) -> (f64, f64, f64) {
    let d = decay_factor(eps);
    (-4.0 * d, 6.0 * d, 4.0 * d)
}

/// The `c₂₁` that makes the first remainder vanish at infinity.
pub fn c21_match_infinity(eps: f64) -> f64 {
    -8.0 / 3.0 * decay_factor(eps)
}

/// Closed-form `(N₁⁻, N₁⁺)` for the solvable example.
pub fn oracle_first_step(eps: f64, c21: C64) -> (MatrixFunction, MatrixFunction) {
    let (c11, c12, c22) = solvable_constants(eps);
    let a = 1.0 - (-eps).exp();
    let em = (-eps).exp();
    let consts = [[C64::new(c11, 0.0), C64::new(c12, 0.0)], [c21, C64::new(c22, 0.0)]];
    // coefficients (p, q) of p i a/(x±i) + q xi(e^{±iεx} - e^{-ε})/(x²+1)
    let plus_coef = [[(-8.0, 8.0), (12.0, -12.0)], [(-6.0, 4.0), (8.0, -8.0)]];
    let minus_coef = [[(-8.0, 8.0), (12.0, -12.0)], [(-6.0, 8.0), (8.0, -8.0)]];
    let plus = MatrixFunction::from_fn(2, |l, j| {
        let (p, q) = plus_coef[l][j];
        let c = consts[l][j];
        BoundaryFunction::new(format!("N1+[{l},{j}]"), 0.0, move |x| {
            let xc = C64::new(x, 0.0);
            let m = p * I * a / (xc + I) + q * xc * I * ((I * eps * x).exp() - em) / (x * x + 1.0);
            let factor = if l == 0 {
                (xc + I) / (xc - I)
            } else {
                C64::new(1.0, 0.0)
            };
            factor * (m - c)
        })
        .with_frequencies(&[eps])
    });
    let minus = MatrixFunction::from_fn(2, |l, j| {
        let (p, q) = minus_coef[l][j];
        let c = consts[l][j];
        BoundaryFunction::new(format!("N1-[{l},{j}]"), 0.0, move |x| {
            let xc = C64::new(x, 0.0);
            let m = p * I * a / (xc - I) + q * xc * I * ((-I * eps * x).exp() - em) / (x * x + 1.0);
            let factor = if j == 1 {
                (xc - I) / (xc + I)
            } else {
                C64::new(1.0, 0.0)
            };
            factor * (m + c)
        })
        .with_frequencies(&[-eps])
    });
    (minus, plus)
}

/// Sandwiches `Λ + ε^k E_{1n}` between the base factors. The corner entry
/// couples the largest and the smallest index, which must differ by at
/// least 2.
pub fn singular_perturbation(base: &BaseFactorization, eps: f64, k: u32) -> Result<MatrixFunction> {
    let kappa = base.indices.kappa();
    let n = kappa.len();
    if kappa[0] - kappa[n - 1] < 2 {
        return Err(Error::NoUnstablePair);
    }
    let lam = base.lambda();
    let corner = BoundaryFunction::constant(C64::new(eps.powi(k as i32), 0.0));
    let lam_eps = MatrixFunction::from_fn(n, |i, j| {
        if (i, j) == (0, n - 1) {
            corner.clone()
        } else {
            lam.entry(i, j).clone()
        }
    });
    base.g_minus
        .combine(&lam_eps, MatrixOp::Mul)?
        .combine(&base.g_plus, MatrixOp::Mul)
}
