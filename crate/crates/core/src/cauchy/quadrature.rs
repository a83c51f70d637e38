//! Composite Gauss-Legendre rules on the real line with cached samples.
//!
//! Non-oscillatory integrands use `τ = tan θ` panels covering all of ℝ.
//! Oscillatory integrands with slowly decaying tails are integrated over
//! symmetric truncations `[-X, X]` whose endpoints are whole periods of the
//! fundamental frequency, then extrapolated to `X = ∞` by Neville's scheme
//! in `1/X`.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;

use crate::funcspace::{neville_at_zero, BoundaryFunction, C64};

/// Discretization parameters shared by all Cauchy-type integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub nodes_per_panel: usize,
    pub num_panels: usize,
    pub abs_tol: f64,
    /// Off-axis points closer than this to ℝ are refused.
    pub min_imag_distance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            nodes_per_panel: 32,
            num_panels: 64,
            abs_tol: 1e-9,
            min_imag_distance: 1e-6,
        }
    }
}

impl QuadratureSpec {
    pub fn total_nodes(&self) -> usize {
        self.nodes_per_panel * self.num_panels
    }

    /// Same rule with twice the panels.
    pub fn refined(&self) -> Self {
        QuadratureSpec {
            num_panels: self.num_panels * 2,
            ..*self
        }
    }
}

pub(crate) fn gauss_legendre(n: usize) -> Arc<Vec<(f64, f64)>> {
    static TABLE: OnceLock<Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();
    let table = TABLE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut t = table.lock().unwrap();
    t.entry(n)
        .or_insert_with(|| {
            let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
            Arc::new(rule.as_node_weight_pairs().to_vec())
        })
        .clone()
}

/// Richardson depth: number of doublings beyond the starting truncation.
const RICHARDSON_STEPS: usize = 4;
/// Truncations start at `X >= reach(|target|) * |target|`.
fn reach(x: f64) -> f64 {
    if x <= 1024.0 {
        8.0
    } else {
        4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Layout {
    Tan,
    Linear { x0: f64, hmax: f64 },
}

impl Layout {
    pub(crate) fn for_function(f: &BoundaryFunction, spec: &QuadratureSpec) -> Layout {
        let osc = f.oscillation();
        if !osc.is_oscillatory() {
            return Layout::Tan;
        }
        let w0 = if osc.fundamental > 0.0 {
            osc.fundamental
        } else {
            osc.bandwidth
        };
        let period = 2.0 * PI / w0;
        let x0 = period * (256.0_f64.max(32.0 / w0) / period).ceil();
        let hmax = 8.0 * PI / osc.bandwidth * (64.0 / spec.num_panels as f64);
        Layout::Linear { x0, hmax }
    }

    fn to_tau(&self, u: f64) -> (f64, f64) {
        match self {
            Layout::Tan => {
                let t = u.tan();
                (t, 1.0 + t * t)
            }
            Layout::Linear { .. } => (u, 1.0),
        }
    }

    fn to_u(&self, tau: f64) -> f64 {
        match self {
            Layout::Tan => tau.atan(),
            Layout::Linear { .. } => tau,
        }
    }
}

#[derive(Default)]
struct Rule {
    u: Vec<f64>,
    tau: Vec<f64>,
    w: Vec<f64>,
    fs: Vec<C64>,
    panels: Vec<(f64, f64)>,
    level_end: Vec<usize>,
    level_x: Vec<f64>,
}

/// Nodes and samples for one new level.
struct LevelData {
    u: Vec<f64>,
    tau: Vec<f64>,
    w: Vec<f64>,
    fs: Vec<C64>,
    panels: Vec<(f64, f64)>,
    x: f64,
}

/// Integral value with an error indicator (zero when no indicator exists).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: C64,
    pub error: f64,
}

/// A graded, freshly evaluated replacement for the panels around a
/// near-singular point.
pub(crate) struct Region {
    ua: f64,
    ub: f64,
    value: C64,
}

/// Samples of one function on a reusable rule.
pub(crate) struct Sampler {
    f: BoundaryFunction,
    spec: QuadratureSpec,
    layout: Layout,
    gl: Arc<Vec<(f64, f64)>>,
    rule: RwLock<Rule>,
}

fn march(a: f64, b: f64, hmax: f64, scale: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut t = a;
    while t < b {
        let h = hmax.min((0.25_f64).max(t.abs() / 4.0) * scale);
        if t + 1.25 * h >= b {
            out.push((t, b));
            break;
        }
        out.push((t, t + h));
        t += h;
    }
    out
}

impl Sampler {
    pub(crate) fn new(f: BoundaryFunction, spec: QuadratureSpec) -> Self {
        let layout = Layout::for_function(&f, &spec);
        Sampler {
            gl: gauss_legendre(spec.nodes_per_panel),
            f,
            spec,
            layout,
            rule: RwLock::new(Rule::default()),
        }
    }

    pub(crate) fn function(&self) -> &BoundaryFunction {
        &self.f
    }

    pub(crate) fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    fn level_panels(&self, k: usize) -> (Vec<(f64, f64)>, f64) {
        match self.layout {
            Layout::Tan => {
                let n = self.spec.num_panels;
                let h = PI / n as f64;
                let p = (0..n)
                    .map(|j| (-FRAC_PI_2 + j as f64 * h, -FRAC_PI_2 + (j + 1) as f64 * h))
                    .collect();
                (p, f64::INFINITY)
            }
            Layout::Linear { x0, hmax } => {
                let scale = 64.0 / self.spec.num_panels as f64;
                let (a, b) = if k == 0 {
                    (0.0, x0)
                } else {
                    (x0 * 2f64.powi(k as i32 - 1), x0 * 2f64.powi(k as i32))
                };
                let pos = march(a, b, hmax, scale);
                let mut p: Vec<(f64, f64)> = pos.iter().rev().map(|&(s, t)| (-t, -s)).collect();
                p.extend(pos);
                (p, b)
            }
        }
    }

    fn build_level(&self, k: usize) -> LevelData {
        let (panels, x) = self.level_panels(k);
        let n = self.gl.len();
        let mut u = Vec::with_capacity(panels.len() * n);
        let mut tau = Vec::with_capacity(panels.len() * n);
        let mut w = Vec::with_capacity(panels.len() * n);
        for &(a, b) in &panels {
            let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
            for &(xi, wi) in self.gl.iter() {
                let uu = m + r * xi;
                let (t, jac) = self.layout.to_tau(uu);
                u.push(uu);
                tau.push(t);
                w.push(r * wi * jac);
            }
        }
        let f = &self.f;
        let fs = tau.par_iter().map(|&t| f.eval(t)).collect();
        LevelData {
            u,
            tau,
            w,
            fs,
            panels,
            x,
        }
    }

    /// Makes sure levels `0..=k` exist.
    fn ensure_levels(&self, k: usize) {
        loop {
            let have = self.rule.read().unwrap().level_end.len();
            if have > k {
                return;
            }
            // sample outside the lock; the evaluator may itself need other samplers
            let data = self.build_level(have);
            let mut r = self.rule.write().unwrap();
            if r.level_end.len() == have {
                r.u.extend(data.u);
                r.tau.extend(data.tau);
                r.w.extend(data.w);
                r.fs.extend(data.fs);
                r.panels.extend(data.panels);
                let end = r.tau.len();
                r.level_end.push(end);
                r.level_x.push(data.x);
            }
        }
    }

    fn start_level(&self, min_x: f64) -> usize {
        match self.layout {
            Layout::Tan => 0,
            Layout::Linear { x0, .. } => {
                let need = reach(min_x) * min_x;
                let mut k = 0;
                while x0 * 2f64.powi(k as i32) < need {
                    k += 1;
                }
                k
            }
        }
    }

    /// Graded panels around `tau0` at distance scale `eta`, replacing the
    /// panel that contains it together with its neighbours.
    pub(crate) fn region<K>(&self, tau0: f64, eta: f64, kern: &K) -> Option<Region>
    where
        K: Fn(f64, C64) -> C64,
    {
        let k = self.start_level(tau0.abs());
        self.ensure_levels(k);
        let r = self.rule.read().unwrap();
        let u0 = self.layout.to_u(tau0);
        let idx = r.panels.iter().position(|&(a, b)| a <= u0 && u0 <= b)?;
        let (mut ua, mut ub) = r.panels[idx];
        let width = ub - ua;
        let eta_u = match self.layout {
            Layout::Tan => eta / (1.0 + tau0 * tau0),
            Layout::Linear { .. } => eta,
        };
        if eta_u >= width {
            return None;
        }
        if let Some(&(a, _)) = r.panels.iter().find(|p| p.1 == ua) {
            ua = a;
        }
        if let Some(&(_, b)) = r.panels.iter().find(|p| p.0 == ub) {
            ub = b;
        }
        drop(r);
        let mut cuts = vec![u0];
        let mut d = eta_u;
        while u0 - d > ua {
            cuts.push(u0 - d);
            d *= 2.0;
        }
        cuts.push(ua);
        d = eta_u;
        while u0 + d < ub {
            cuts.push(u0 + d);
            d *= 2.0;
        }
        cuts.push(ub);
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup();
        let mut value = C64::new(0.0, 0.0);
        for c in cuts.windows(2) {
            let (m, h) = (0.5 * (c[0] + c[1]), 0.5 * (c[1] - c[0]));
            for &(xi, wi) in self.gl.iter() {
                let (t, jac) = self.layout.to_tau(m + h * xi);
                value += kern(t, self.f.eval(t)) * (h * wi * jac);
            }
        }
        Some(Region { ua, ub, value })
    }

    /// `∫ kern(τ, f(τ)) dτ + total(X)` over ℝ.
    ///
    /// `total(Some(X))` must return the analytic part of the integral over
    /// `[-X, X]` and `total(None)` the one over ℝ; `min_x` is the distance
    /// scale of any target singularity.
    pub(crate) fn integrate<K, T>(&self, min_x: f64, kern: K, total: T, region: Option<&Region>) -> Estimate
    where
        K: Fn(f64, C64) -> C64,
        T: Fn(Option<f64>) -> C64,
    {
        let s = self.start_level(min_x);
        let top = match self.layout {
            Layout::Tan => 0,
            Layout::Linear { .. } => s + RICHARDSON_STEPS,
        };
        self.ensure_levels(top);
        let r = self.rule.read().unwrap();
        let mut acc = C64::new(0.0, 0.0);
        let mut partial = Vec::with_capacity(top + 1);
        let mut start = 0;
        for lvl in 0..=top {
            let end = r.level_end[lvl];
            for j in start..end {
                if let Some(reg) = region {
                    if r.u[j] > reg.ua && r.u[j] < reg.ub {
                        continue;
                    }
                }
                acc += kern(r.tau[j], r.fs[j]) * r.w[j];
            }
            partial.push(acc);
            start = end;
        }
        let extra = region.map_or(C64::new(0.0, 0.0), |g| g.value);
        match self.layout {
            Layout::Tan => Estimate {
                value: partial[0] + total(None) + extra,
                error: 0.0,
            },
            Layout::Linear { .. } => {
                let hs: Vec<f64> = (s..=top).map(|k| 1.0 / r.level_x[k]).collect();
                let ts: Vec<C64> = (s..=top)
                    .map(|k| partial[k] + total(Some(r.level_x[k])) + extra)
                    .collect();
                let full = neville_at_zero(&hs, &ts);
                let fewer = neville_at_zero(&hs[1..], &ts[1..]);
                Estimate {
                    value: full,
                    error: (full - fewer).norm(),
                }
            }
        }
    }

    /// Number of cached nodes, for diagnostics.
    pub(crate) fn cached_nodes(&self) -> usize {
        self.rule.read().unwrap().tau.len()
    }
}
