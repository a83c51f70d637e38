//! Acceptance run: one line per criterion, nonzero exit on an unexpected
//! verdict.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use whfactor::cauchy::{self, Pole, Projection, QuadratureSpec, Side};
use whfactor::factorizer::{
    factorize, remainder, remainder_at_infinity, solve_step, ConditionKind, ConstantPolicy, DEFAULT_TOL,
};
use whfactor::funcspace::{sup_norm, BoundaryFunction, GridSpec, MatrixOp, C64};
use whfactor::gallery::{
    c21_match_infinity, example_solvable, example_unsolvable, gk1_matrix, gk_diagonal, gk_singular, oracle_first_step,
    solvable_constants,
};
use whfactor::indices::{
    build_lambda, count_conditions, determinant, is_stable, winding_number, LambdaVariant, PartialIndices,
};

const I: C64 = C64::new(0.0, 1.0);

struct Verdict {
    pass: bool,
    detail: String,
    /// Distance of the computed cross residual from `+4εe^{-ε}`.
    sign_gap: Option<f64>,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
        sign_gap: None,
    }
}

fn quad() -> QuadratureSpec {
    QuadratureSpec::default()
}

fn explicit(c21: f64) -> ConstantPolicy {
    ConstantPolicy::Explicit([((1, 0), C64::new(c21, 0.0))].into_iter().collect())
}

fn criterion_1() -> Verdict {
    let q = quad();
    let inv_plus = BoundaryFunction::analytic("1/(x+i)", 1.0, |z| 1.0 / (z + I));
    let inv_minus = BoundaryFunction::analytic("1/(x-i)", 1.0, |z| 1.0 / (z - I));
    let lorentz = BoundaryFunction::analytic("1/(x²+1)", 2.0, |z| 1.0 / (z * z + 1.0));
    let odd = BoundaryFunction::analytic("x/(x²+1)²", 3.0, |z| z / ((z * z + 1.0) * (z * z + 1.0)));
    let zero = C64::new(0.0, 0.0);
    let checks: Vec<(&str, C64, C64)> = vec![
        (
            "omega+ 1/(x+i) at 2i",
            cauchy::omega(&inv_plus, Side::Plus, 2.0 * I, &q).unwrap(),
            I / 6.0,
        ),
        (
            "omega- 1/(x+i) at -2i",
            cauchy::omega(&inv_plus, Side::Minus, -2.0 * I, &q).unwrap(),
            -I / 2.0,
        ),
        (
            "bv+ 1/(x+i) at 0",
            cauchy::boundary_values(&inv_plus, Side::Plus, 0.0, &q).unwrap(),
            -I / 2.0,
        ),
        (
            "bv- 1/(x+i) at 0",
            cauchy::boundary_values(&inv_plus, Side::Minus, 0.0, &q).unwrap(),
            -I / 2.0,
        ),
        (
            "W 1/(x²+1)",
            cauchy::weighted_integral(&lorentz, &q).unwrap(),
            C64::new(0.5, 0.0),
        ),
        ("W 1/(x+i)", cauchy::weighted_integral(&inv_plus, &q).unwrap(), -I / 2.0),
        ("W x/(x²+1)²", cauchy::weighted_integral(&odd, &q).unwrap(), zero),
        (
            "moment 1/(x+i), -i, 1",
            cauchy::moment(&inv_plus, Pole::MinusI, 1, &q).unwrap(),
            zero,
        ),
        (
            "moment 1/(x-i), -i, 1",
            cauchy::moment(&inv_minus, Pole::MinusI, 1, &q).unwrap(),
            -I * PI / 2.0,
        ),
        (
            "split- 1/(x²+1) at -i",
            cauchy::plemelj_split(&lorentz, &q).0.eval(-I).unwrap(),
            C64::new(0.5, 0.0),
        ),
        (
            "split+ 1/(x²+1) at i",
            cauchy::plemelj_split(&lorentz, &q).1.eval(I).unwrap(),
            zero,
        ),
    ];
    let mut worst = 0.0_f64;
    let mut bad = Vec::new();
    for (name, got, want) in &checks {
        let e = (got - want).norm();
        worst = worst.max(e);
        if e > 1e-7 {
            bad.push(*name);
        }
    }
    let family = vec![
        lorentz,
        inv_plus,
        odd,
        BoundaryFunction::analytic("1/(x-2i)²", 2.0, |z| 1.0 / ((z - 2.0 * I) * (z - 2.0 * I))),
        BoundaryFunction::new("x cos x/(x²+1)", 1.0, |x| C64::new(x * x.cos() / (x * x + 1.0), 0.0))
            .with_frequencies(&[1.0, -1.0]),
        BoundaryFunction::new("e^{2ix}/(x+i)", 1.0, |x| C64::from_polar(1.0, 2.0 * x) / (x + I))
            .with_frequencies(&[2.0]),
    ];
    let mut plemelj = 0.0_f64;
    let mut norm_at_i = 0.0_f64;
    for f in &family {
        let p = Projection::new(f.clone(), q);
        for x in GridSpec::new(101).points() {
            let s = p.boundary_value(Side::Plus, x) + p.boundary_value(Side::Minus, x);
            plemelj = plemelj.max((s - f.eval(x)).norm());
        }
        norm_at_i = norm_at_i.max(p.omega(Side::Plus, I).unwrap().norm());
    }
    let pass = bad.is_empty() && plemelj < 5.0 * q.abs_tol && norm_at_i < q.abs_tol;
    verdict(
        pass,
        format!("{} oracle values, max error {worst:.1e}; Plemelj defect {plemelj:.1e}; |omega+(i)| {norm_at_i:.1e} {bad:?}", checks.len()),
    )
}

fn criterion_2() -> Verdict {
    let e = example_solvable();
    let rep =
        whfactor::factorizer::check_solvability(&e.perturbation(0.1), &e.base.indices, &quad(), DEFAULT_TOL).unwrap();
    let c = |l, j| rep.pinned_constants[&(l, j)];
    let (c11, c12, c22) = (c(0, 0), c(0, 1), c(1, 1));
    let pass = (c11 - (-0.742585)).norm() < 1e-5 && (c22 - 0.742585).norm() < 1e-5 && (c12 - 1.113878).norm() < 1e-5;
    let (f11, f12, f22) = solvable_constants(0.1);
    let closed = (c11 - f11).norm().max((c12 - f12).norm()).max((c22 - f22).norm());
    verdict(
        pass,
        format!(
            "c11 = {:.7}, c12 = {:.7}, c22 = {:.7}; distance to closed forms {closed:.1e}",
            c11.re, c12.re, c22.re
        ),
    )
}

fn criterion_3() -> Verdict {
    let cross = |e: &whfactor::gallery::GalleryEntry, eps: f64| {
        let rep = whfactor::factorizer::check_solvability(&e.perturbation(eps), &e.base.indices, &quad(), DEFAULT_TOL)
            .unwrap();
        let rho = rep
            .residuals
            .iter()
            .find(|r| r.kind == ConditionKind::Cond5Cross)
            .unwrap()
            .value;
        (rep.passed, rho)
    };
    let (ok_solvable, rho_solvable) = cross(&example_solvable(), 0.1);
    let mut stated = true;
    let mut flipped = 0.0_f64;
    let mut parts = Vec::new();
    let mut fails_all = true;
    for eps in [1.0, 0.1, 0.01] {
        let (passed, rho) = cross(&example_unsolvable(), eps);
        let target = -4.0 * eps * (-eps).exp();
        fails_all &= !passed;
        stated &= (rho - target).norm() < 1e-5;
        flipped = flipped.max((rho + target).norm());
        parts.push(format!("eps {eps}: rho {:+.7}", rho.re));
    }
    let (ok_zero, _) = cross(&example_unsolvable(), 0.0);
    let pass = ok_solvable && rho_solvable.norm() < 1e-7 && fails_all && ok_zero && stated;
    let detail = format!(
        "solvable |rho| {:.1e}; unsolvable fails {fails_all}, passes at 0 {ok_zero}; {}; target -4 eps e^-eps matched {stated}, +4 eps e^-eps within {flipped:.1e}",
        rho_solvable.norm(),
        parts.join(", ")
    );
    Verdict {
        sign_gap: Some(flipped),
        ..verdict(pass, detail)
    }
}

fn criterion_4() -> Verdict {
    let e = example_solvable();
    let grid = GridSpec::default();
    let xs = grid.points();
    let mut worst = 0.0_f64;
    for eps in [0.1, 0.01] {
        let n = e.perturbation(eps);
        for c21 in [0.0, c21_match_infinity(eps)] {
            let st = solve_step(&n, &e.base.indices, &explicit(c21), &quad()).unwrap();
            let (om, op) = oracle_first_step(eps, C64::new(c21, 0.0));
            for &x in &xs {
                let d = (st.n_minus.eval(x) - om.eval(x))
                    .iter()
                    .chain((st.n_plus.eval(x) - op.eval(x)).iter())
                    .fold(0.0_f64, |m, v| m.max(v.norm()));
                worst = worst.max(d);
            }
        }
    }
    verdict(
        worst <= 1e-6,
        format!(
            "sup entrywise error {worst:.2e} over {} points, eps 0.1 and 0.01, c21 zero and matched",
            xs.len()
        ),
    )
}

fn criterion_5() -> Verdict {
    let e = example_solvable();
    let grid = GridSpec::default();
    let mut ratios = Vec::new();
    let mut identity = 0.0_f64;
    for eps in [0.1, 0.05, 0.025] {
        let g = e.build(eps);
        let f = factorize(
            &e.base,
            &e.perturbation(eps),
            1,
            &ConstantPolicy::Zero,
            &quad(),
            DEFAULT_TOL,
        )
        .unwrap();
        let r = remainder(&g, &f, 1, &grid).unwrap();
        ratios.push(r.sup / (eps * eps));
        if eps == 0.1 {
            let st = &f.steps[0];
            for (x, dk) in r.xs.iter().zip(&r.samples) {
                identity = identity.max((dk + st.n_minus.eval(*x) * st.n_plus.eval(*x)).norm());
            }
        }
    }
    let (lo, hi) = ratios
        .iter()
        .fold((f64::MAX, 0.0_f64), |(a, b), &v| (a.min(v), b.max(v)));
    let tol = 5.0 * quad().abs_tol;
    verdict(
        hi / lo < 2.0 && identity <= tol,
        format!(
            "sup|dK1|/eps^2 = {ratios:.3?} (spread {:.3}); |dK1 + N1-N1+| {identity:.1e}",
            hi / lo
        ),
    )
}

fn criterion_6() -> Verdict {
    let e = example_solvable();
    let at_inf = |eps: f64, p: ConstantPolicy| {
        let f = factorize(&e.base, &e.perturbation(eps), 1, &p, &quad(), DEFAULT_TOL).unwrap();
        remainder_at_infinity(&f).unwrap()
    };
    let d = at_inf(0.1, ConstantPolicy::Zero);
    let want = 0.551433;
    let diag_ok = (d[(0, 0)] - want).norm() < 1e-3 && (d[(1, 1)] - want).norm() < 1e-3;
    let off = d[(0, 1)].norm().max(d[(1, 0)].norm());
    let series: Vec<f64> = [0.1, 0.05]
        .iter()
        .map(|&eps| {
            let v = at_inf(eps, ConstantPolicy::Zero)[(0, 0)].re;
            (v - (64.0 * eps * eps - 96.0 * eps.powi(3))).abs() / eps.powi(4)
        })
        .collect();
    let series_ok = series.iter().all(|v| v.is_finite()) && series[0].max(series[1]) / series[0].min(series[1]) < 2.0;
    let tuned = at_inf(0.1, explicit(c21_match_infinity(0.1)))
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.norm()));
    verdict(
        diag_ok && off < 1e-3 && series_ok && tuned < 1e-6,
        format!(
            "diag at 0.1 = {:.7}, {:.7}; |dK - (64e^2 - 96e^3)|/e^4 = {series:.2?}; tuned c21 gives {tuned:.1e}",
            d[(0, 0)].re,
            d[(1, 1)].re
        ),
    )
}

fn criterion_7() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [vec![1, -1], vec![2, -2], vec![0, 0], vec![3, 1, -1]] {
        let idx = PartialIndices::new(k.clone()).unwrap();
        let w = winding_number(
            &determinant(&build_lambda(&idx, LambdaVariant::Full)),
            &GridSpec::default(),
        )
        .unwrap()
        .number;
        let rule = k[0] - k[k.len() - 1] <= 1;
        ok &= w == idx.sum() && is_stable(&idx) == rule;
        parts.push(format!("{k:?}: winding {w}, stable {}", is_stable(&idx)));
    }
    let c1 = count_conditions(&PartialIndices::new(vec![1, -1]).unwrap()).solvability;
    let c2 = count_conditions(&PartialIndices::new(vec![2, -2]).unwrap()).solvability;
    ok &= c1 == 1 && c2 == 5;
    verdict(
        ok,
        format!("{}; conditions (1,-1): {c1}, (2,-2): {c2}", parts.join("; ")),
    )
}

fn criterion_8() -> Verdict {
    let grid = GridSpec::default();
    let mut product_err = 0.0_f64;
    let mut dist = Vec::new();
    let mut size = Vec::new();
    for eps in [0.1, 0.01] {
        let (entry, f) = gk_singular(eps).unwrap();
        for x in grid.points() {
            let p = f.minus.eval(x) * f.plus.eval(x);
            product_err = product_err.max((p - gk1_matrix(eps).eval(x)).norm());
        }
        let d = entry
            .build(eps)
            .combine(&gk_diagonal().build(0.0), MatrixOp::Sub)
            .unwrap();
        dist.push((sup_norm(&d, &grid) - eps).abs());
        size.push(sup_norm(&f.minus, &grid).max(sup_norm(&f.plus, &grid)));
    }
    let growth = size[1] / size[0];
    let dist_err = dist.iter().cloned().fold(0.0, f64::max);
    verdict(
        product_err <= 1e-12 && dist_err <= 1e-15 && growth >= 5.0,
        format!("factor product error {product_err:.1e}; | |GK1 - GK0| - eps | {dist_err:.1e}; factor size growth {growth:.2}x"),
    )
}

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_whfactor"))
            .args([
                "sweep",
                "--example",
                "solvable",
                "--eps-list",
                "0.1,0.05",
                "--grid-points",
                "401",
                "--format",
                "csv",
                "--out",
            ])
            .arg(&out)
            .status()
            .unwrap();
        (status.success(), std::fs::read(&out).unwrap_or_default())
    };
    let (ok_a, a) = run("a.csv");
    let (ok_b, b) = run("b.csv");
    verdict(
        ok_a && ok_b && !a.is_empty() && a == b,
        format!("two sweep runs, {} bytes each, identical {}", a.len(), a == b),
    )
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    let mut flipped = f64::NAN;
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("cauchy oracle suite", criterion_1),
        ("constants reproduction", criterion_2),
        ("solvability dichotomy", criterion_3),
        ("oracle vs numeric first step", criterion_4),
        ("remainder order", criterion_5),
        ("remainder at infinity", criterion_6),
        ("index bookkeeping", criterion_7),
        ("singular perturbation witness", criterion_8),
        ("determinism", criterion_9),
    ];
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = run();
        if let Some(f) = v.sign_gap {
            flipped = f;
        }
        println!(
            "criterion {} {:<30} {} ({:.1}s) {}",
            k + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            v.detail
        );
        verdicts.push(v.pass);
    }
    // Criterion 3 states rho = -4 eps e^{-eps}. The integral
    // (1/π)∫ m₁₂/(τ²+1) of m₁₂ = -4xi(e^{iεx} - e^{-iεx})/(x²+1) equals
    // +4 eps e^{-eps}, so that sub-check is expected to fail while every
    // other part of the criterion holds.
    let expected: Vec<bool> = (0..9).map(|k| k != 2).collect();
    let sign_explained = flipped < 1e-5;
    println!(
        "criterion 3 note: computed residual equals +4 eps e^-eps within {flipped:.1e}; the stated sign is not reproducible"
    );
    if verdicts == expected && sign_explained {
        println!("acceptance: 8 of 9 criteria pass; criterion 3 fails only on the sign of rho");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected verdicts {verdicts:?}");
        ExitCode::FAILURE
    }
}
