//! JSON spec files describing `G_ε = Λ + N_ε` with identity outer factors.
//!
//! ```json
//! {
//!   "name": "shifted",
//!   "indices": [1, -1],
//!   "perturbation": [["eps*x/(x^2+4)", "0"],
//!                    ["eps/(x-2*i)", "eps*exp(i*eps*x)/(x+i)^2"]],
//!   "decay": [[1, 0], [1, 2]]
//! }
//! ```
//!
//! `decay` is optional; when absent each entry gets the largest order in
//! {2, 1, 0} that passes the tail check at the requested `ε`.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use whfactor::factorizer::BaseFactorization;
use whfactor::funcspace::{BoundaryFunction, MatrixFunction, MatrixOp};
use whfactor::gallery::GalleryEntry;
use whfactor::indices::{build_lambda, LambdaVariant, PartialIndices};

use crate::expr::{self, Expr};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    name: Option<String>,
    indices: Vec<i32>,
    perturbation: Vec<Vec<String>>,
    decay: Option<Vec<Vec<f64>>>,
}

fn entry_function(e: &Expr, eps: f64, decay: Option<f64>, label: &str) -> BoundaryFunction {
    if *e == Expr::Num(num_complex::Complex64::new(0.0, 0.0)) {
        return BoundaryFunction::zero();
    }
    let ex = e.clone();
    let f = BoundaryFunction::analytic(label.to_string(), 0.0, move |z| ex.eval(z, eps))
        .with_frequencies(&e.frequencies(eps));
    match decay {
        Some(d) => f.with_decay(d),
        None => [2.0, 1.0]
            .into_iter()
            .map(|d| f.clone().with_decay(d))
            .find(|g| g.check_decay())
            .unwrap_or(f),
    }
}

pub fn load(path: &Path) -> Result<GalleryEntry> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let spec: SpecFile =
        serde_json::from_str(&text).with_context(|| format!("invalid spec file {}", path.display()))?;
    let indices = PartialIndices::new(spec.indices.clone())?;
    let n = indices.n();
    if spec.perturbation.len() != n || spec.perturbation.iter().any(|r| r.len() != n) {
        bail!("perturbation must be a {n}x{n} array of expressions");
    }
    if let Some(d) = &spec.decay {
        if d.len() != n || d.iter().any(|r| r.len() != n) {
            bail!("decay must be a {n}x{n} array");
        }
    }
    let mut exprs = Vec::with_capacity(n * n);
    for (l, row) in spec.perturbation.iter().enumerate() {
        for (j, s) in row.iter().enumerate() {
            exprs.push(expr::parse(s).with_context(|| format!("entry ({}, {})", l + 1, j + 1))?);
        }
    }
    let exprs = Arc::new(exprs);
    let decay = spec.decay.clone();
    let texts = spec.perturbation.clone();
    let perturbation: Arc<dyn Fn(f64) -> MatrixFunction + Send + Sync> = Arc::new(move |eps| {
        MatrixFunction::from_fn(n, |l, j| {
            let d = decay.as_ref().map(|d| d[l][j]);
            entry_function(&exprs[l * n + j], eps, d, &texts[l][j])
        })
    });
    let lam = build_lambda(&indices, LambdaVariant::Full);
    let p = perturbation.clone();
    Ok(GalleryEntry {
        name: spec.name.unwrap_or_else(|| path.display().to_string()),
        builder: Arc::new(move |eps| lam.combine(&p(eps), MatrixOp::Add).expect("square")),
        perturbation,
        base: BaseFactorization::diagonal(indices),
        oracle: None,
    })
}
