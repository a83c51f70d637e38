//! Partial indices, the diagonal factor Λ and index bookkeeping.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::funcspace::{BoundaryFunction, GridSpec, MatrixFunction, C64, DEFAULT_DET_FLOOR};

/// Descending integer vector `κ₁ ≥ … ≥ κₙ` with block bounds `p` (number of
/// positive entries) and `q` (`n` minus the number of negative entries).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartialIndices {
    kappa: Vec<i32>,
    p: usize,
    q: usize,
}

impl PartialIndices {
    pub fn new(kappa: Vec<i32>) -> Result<Self> {
        if kappa.is_empty() {
            return Err(Error::InvalidIndices("empty index vector".into()));
        }
        if kappa.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidIndices(format!(
                "{kappa:?} is not sorted in descending order"
            )));
        }
        let p = kappa.iter().filter(|&&k| k > 0).count();
        let q = kappa.len() - kappa.iter().filter(|&&k| k < 0).count();
        Ok(PartialIndices { kappa, p, q })
    }

    pub fn kappa(&self) -> &[i32] {
        &self.kappa
    }

    pub fn n(&self) -> usize {
        self.kappa.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn sum(&self) -> i64 {
        self.kappa.iter().map(|&k| k as i64).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaVariant {
    Full,
    Plus,
    Minus,
}

/// `((z-i)/(z+i))^k` on ℝ and off the axis.
pub fn mobius_power(k: i32) -> BoundaryFunction {
    if k == 0 {
        return BoundaryFunction::one();
    }
    let i = C64::i();
    BoundaryFunction::analytic(format!("((x-i)/(x+i))^{k}"), 0.0, move |z| ((z - i) / (z + i)).powi(k))
}

/// Diagonal factor with exponents `κ`, `max(κ,0)` or `min(κ,0)`.
pub fn build_lambda(indices: &PartialIndices, variant: LambdaVariant) -> MatrixFunction {
    let entries = indices
        .kappa()
        .iter()
        .map(|&k| {
            mobius_power(match variant {
                LambdaVariant::Full => k,
                LambdaVariant::Plus => k.max(0),
                LambdaVariant::Minus => k.min(0),
            })
        })
        .collect();
    MatrixFunction::diagonal(entries).flag_invertible(DEFAULT_DET_FLOOR)
}

/// Winding number with the rounding residual of the unwrapped phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Winding {
    pub number: i64,
    pub residual: f64,
}

const MAX_BISECT: u32 = 40;
const MAX_SEGMENT: f64 = PI / 64.0;

fn phase_step(f: &BoundaryFunction, ta: f64, tb: f64, va: C64, vb: C64, depth: u32) -> Result<f64> {
    let d = (vb / va).arg();
    if d.abs() < FRAC_PI_2 && tb - ta <= MAX_SEGMENT {
        return Ok(d);
    }
    let tm = 0.5 * (ta + tb);
    let x = tm.tan();
    if depth >= MAX_BISECT {
        return Err(Error::ArgumentJump { x, jump: d.abs() });
    }
    let vm = f.eval(x);
    if vm.norm() < DEFAULT_DET_FLOOR {
        return Err(Error::NearZero { x, modulus: vm.norm() });
    }
    Ok(phase_step(f, ta, tm, va, vm, depth + 1)? + phase_step(f, tm, tb, vm, vb, depth + 1)?)
}

/// Net number of turns of `f` around 0 along ℝ, computed by unwrapping the
/// phase on the grid and closing the loop through the point at infinity.
/// Steps of `π/2` or more, and segments wider than `π/64` in `θ = atan x`,
/// are bisected until they resolve.
pub fn winding_number(f: &BoundaryFunction, grid: &GridSpec) -> Result<Winding> {
    let n = grid.num_points.max(2);
    let half = FRAC_PI_2 - grid.delta;
    let mut thetas: Vec<f64> = (0..n).map(|k| -half + 2.0 * half * k as f64 / (n - 1) as f64).collect();
    // closing segment through x = ∞
    thetas.push(thetas[0] + PI);
    let values: Vec<C64> = thetas.iter().map(|t| f.eval(t.tan())).collect();
    for (t, v) in thetas.iter().zip(&values) {
        if v.norm() < DEFAULT_DET_FLOOR {
            return Err(Error::NearZero {
                x: t.tan(),
                modulus: v.norm(),
            });
        }
    }
    let mut total = 0.0;
    for k in 0..thetas.len() - 1 {
        total += phase_step(f, thetas[k], thetas[k + 1], values[k], values[k + 1], 0)?;
    }
    let turns = total / (2.0 * PI);
    let number = turns.round();
    let residual = (turns - number).abs();
    if residual >= 0.1 {
        return Err(Error::WindingNotInteger { residual });
    }
    Ok(Winding {
        number: number as i64,
        residual,
    })
}

/// Determinant of a matrix function as a scalar boundary function.
pub fn determinant(f: &MatrixFunction) -> BoundaryFunction {
    let g = f.clone();
    BoundaryFunction::new("det", 0.0, move |x| g.eval(x).determinant())
}

pub fn is_stable(indices: &PartialIndices) -> bool {
    let k = indices.kappa();
    k[0] - k[k.len() - 1] <= 1
}

/// Sizes of the first-step boundary value problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionCount {
    /// Scalar solvability conditions (moment and cross-block conditions).
    pub solvability: usize,
    /// Constants fixed by the requirement that the brackets vanish at ±i,
    /// the overlap block counted once.
    pub pinned: usize,
    /// `n(n - p + q)`, the count of arbitrary constants in the classical
    /// statement.
    pub free: usize,
    /// Entries of the constant matrix left open by the block structure:
    /// rows `p+1..n` crossed with columns `1..q`.
    pub open_entries: usize,
}

pub fn count_conditions(indices: &PartialIndices) -> ConditionCount {
    let (n, p, q) = (indices.n(), indices.p(), indices.q());
    let k = indices.kappa();
    let neg: usize = k[q..].iter().map(|&kj| (-kj - 1) as usize * n).sum();
    let pos: usize = k[..p].iter().map(|&ki| (ki - 1) as usize * n).sum();
    ConditionCount {
        solvability: neg + pos + (n - q) * p,
        pinned: (n - q) * n + n * p - (n - q) * p,
        free: n * (n - p + q),
        open_entries: (n - p) * q,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::CMatrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn idx(k: &[i32]) -> PartialIndices {
        PartialIndices::new(k.to_vec()).unwrap()
    }

    #[test]
    fn block_bounds() {
        let k = idx(&[3, 1, 0, 0, -1]);
        assert_eq!((k.p(), k.q()), (2, 4));
        assert!(PartialIndices::new(vec![-1, 1]).is_err());
        assert!(PartialIndices::new(vec![]).is_err());
    }

    #[test]
    fn lambda_examples() {
        let k = idx(&[1, -1]);
        let full = build_lambda(&k, LambdaVariant::Full).eval(0.0);
        let plus = build_lambda(&k, LambdaVariant::Plus).eval(0.0);
        let minus = build_lambda(&k, LambdaVariant::Minus).eval(0.0);
        let c = |a: f64, b: f64| {
            CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(a, 0.0), C64::new(b, 0.0)]))
        };
        assert_abs_diff_eq!((full.clone() - c(-1.0, -1.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((plus.clone() - c(-1.0, 1.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((minus.clone() - c(1.0, -1.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((plus * minus - full).norm(), 0.0, epsilon = 1e-15);
        let zero = build_lambda(&idx(&[0, 0, 0]), LambdaVariant::Minus).eval(2.5);
        assert_eq!(zero, CMatrix::identity(3, 3));
    }

    #[test]
    fn winding_examples() {
        let g = GridSpec::default();
        assert_eq!(winding_number(&BoundaryFunction::one(), &g).unwrap().number, 0);
        assert_eq!(winding_number(&mobius_power(1), &g).unwrap().number, 1);
        let z = BoundaryFunction::new("x", 0.0, |x| C64::new(x, 0.0));
        assert!(matches!(
            winding_number(&z, &GridSpec::new(2000)),
            Err(Error::NearZero { .. }) | Err(Error::ArgumentJump { .. }) | Err(Error::WindingNotInteger { .. })
        ));
    }

    #[test]
    fn winding_survives_coarse_grid() {
        let w = winding_number(&mobius_power(5), &GridSpec::new(5)).unwrap();
        assert_eq!(w.number, 5);
    }

    #[test]
    fn stability_rule() {
        assert!(!is_stable(&idx(&[1, -1])));
        assert!(is_stable(&idx(&[0, 0])));
        assert!(is_stable(&idx(&[2, 1])));
    }

    #[test]
    fn condition_counts() {
        let c = count_conditions(&idx(&[1, -1]));
        assert_eq!((c.solvability, c.free, c.open_entries, c.pinned), (1, 4, 1, 3));
        assert_eq!(count_conditions(&idx(&[2, -2])).solvability, 5);
        assert_eq!(count_conditions(&idx(&[0, 0])).solvability, 0);
        assert_eq!(count_conditions(&idx(&[0, 0])).open_entries, 4);
    }

    fn sorted(v: Vec<i32>) -> Vec<i32> {
        let mut v = v;
        v.sort_by(|a, b| b.cmp(a));
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn winding_of_det_lambda_is_index_sum(k in prop::collection::vec(-3i32..=3, 1..4)) {
            let k = idx(&sorted(k));
            let det = determinant(&build_lambda(&k, LambdaVariant::Full));
            prop_assert_eq!(winding_number(&det, &GridSpec::default()).unwrap().number, k.sum());
        }

        #[test]
        fn plus_times_minus_is_full(k in prop::collection::vec(-4i32..=4, 1..5), x in -1e3..1e3f64) {
            let k = idx(&sorted(k));
            let p = build_lambda(&k, LambdaVariant::Plus).eval(x);
            let m = build_lambda(&k, LambdaVariant::Minus).eval(x);
            let f = build_lambda(&k, LambdaVariant::Full).eval(x);
            prop_assert!((p * m - f.clone()).norm() < 1e-12);
            for j in 0..k.n() {
                prop_assert!((f[(j, j)].norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn stability_depends_on_spread_only(k in prop::collection::vec(-4i32..=4, 1..5), s in -5i32..=5) {
            let a = idx(&sorted(k.clone()));
            let b = idx(&sorted(k.iter().map(|v| v + s).collect()));
            prop_assert_eq!(is_stable(&a), is_stable(&b));
            prop_assert_eq!(is_stable(&a), a.kappa()[0] - a.kappa()[a.n() - 1] <= 1);
        }
    }
}
