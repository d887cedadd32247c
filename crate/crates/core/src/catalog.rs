//! Built-in benchmark problems, selectable by name.

use crate::error::{Error, Result};
use crate::problem::{DelayTerm, RfdeProblem};
use nalgebra::DVector;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

pub type Profile = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Poincaré section used by the oracle: upward crossings of `y_k = level`.
#[derive(Clone, Copy, Debug)]
pub struct Section {
    pub component: usize,
    pub level: f64,
}

/// Closed-form reference orbit in physical time, when one exists.
#[derive(Clone)]
pub struct ExactOrbit {
    pub omega: f64,
    pub value: Profile,
    pub derivative: Profile,
}

/// Initial guess in rescaled time (a 1-periodic profile on `[-1, 1]`).
#[derive(Clone)]
pub struct InitialGuess {
    pub omega: f64,
    pub value: Profile,
    pub derivative: Profile,
}

/// A catalog problem bundled with everything the solver and the oracle need.
#[derive(Clone)]
pub struct CatalogProblem {
    pub name: String,
    pub problem: RfdeProblem,
    pub guess: InitialGuess,
    /// component pinned by the default trivial phase condition (0-based)
    pub phase_component: usize,
    pub phase_level: f64,
    pub section: Section,
    /// history on `[-τ, 0]` in physical time, for the oracle integrator
    pub history: Profile,
    pub exact: Option<ExactOrbit>,
}

pub fn names() -> &'static [&'static str] {
    &["logistic", "mms", "dist-logistic"]
}

/// Build a catalog problem by name with `key=value` parameter overrides.
pub fn build(name: &str, overrides: &BTreeMap<String, f64>) -> Result<CatalogProblem> {
    let mut cp = match name {
        "logistic" => {
            let r = *overrides.get("r").unwrap_or(&2.0);
            logistic_entry(r)
        }
        "mms" => {
            let kappa = *overrides.get("kappa").unwrap_or(&1.0);
            let mu = *overrides.get("mu").unwrap_or(&0.1);
            mms_entry(kappa, mu)
        }
        "dist-logistic" => {
            let r = *overrides.get("r").unwrap_or(&3.0);
            dist_logistic_entry(r)
        }
        other => {
            return Err(Error::InvalidMesh(format!(
                "unknown problem '{other}', available: {}",
                names().join(", ")
            )))
        }
    };
    for key in overrides.keys() {
        if !cp.problem.params.contains_key(key) {
            return Err(Error::InvalidMesh(format!("problem '{name}' has no parameter '{key}'")));
        }
    }
    cp.name = name.to_string();
    Ok(cp)
}

/// Delayed logistic (Hutchinson): `y'(𝚝) = r y(𝚝)(1 - y(𝚝-1))`.
pub fn logistic(r: f64) -> RfdeProblem {
    let terms = vec![DelayTerm::Discrete { lag: 0.0 }, DelayTerm::Discrete { lag: -1.0 }];
    let rhs = Arc::new(move |f: &[DVector<f64>]| {
        DVector::from_vec(vec![r * f[0][0] * (1.0 - f[1][0])])
    });
    let drhs = Arc::new(move |f: &[DVector<f64>], d: &[DVector<f64>]| {
        DVector::from_vec(vec![r * (d[0][0] * (1.0 - f[1][0]) - f[0][0] * d[1][0])])
    });
    let mut params = BTreeMap::new();
    params.insert("r".into(), r);
    RfdeProblem::new(1, 1.0, terms, rhs, Some(drhs)).unwrap().with_params(params)
}

fn logistic_entry(r: f64) -> CatalogProblem {
    CatalogProblem {
        name: "logistic".into(),
        problem: logistic(r),
        // the equilibrium ψ ≡ 1 is a spurious fixed point of the collocation
        // system; a guess with too small an amplitude lands in its Newton
        // basin, so the default guess swings most of the way to the cycle
        guess: InitialGuess {
            omega: 4.4,
            value: Arc::new(|t| DVector::from_vec(vec![1.0 + 0.9 * (2.0 * PI * t).sin()])),
            derivative: Arc::new(|t| DVector::from_vec(vec![0.9 * 2.0 * PI * (2.0 * PI * t).cos()])),
        },
        phase_component: 0,
        phase_level: 1.0,
        section: Section { component: 0, level: 1.0 },
        history: Arc::new(|s| DVector::from_vec(vec![1.0 + 0.5 * (PI * s / 2.0).sin()])),
        exact: None,
    }
}

/// Manufactured problem with the closed-form orbit `y(𝚝) = (sin π𝚝, cos π𝚝)`
/// of period 2: `G(ψ) = πRψ(0) + κ(1-|ψ(0)|²)ψ(0) + μ(ψ(-1) + ψ(0))` with
/// `R = [[0, 1], [-1, 0]]`. The correction terms vanish on the orbit since
/// `|y| = 1` and `y(𝚝-1) = -y(𝚝)`.
pub fn mms(kappa: f64, mu: f64) -> RfdeProblem {
    let terms = vec![DelayTerm::Discrete { lag: 0.0 }, DelayTerm::Discrete { lag: -1.0 }];
    let rhs = Arc::new(move |f: &[DVector<f64>]| {
        let y0 = &f[0];
        let y1 = &f[1];
        let rot = DVector::from_vec(vec![y0[1], -y0[0]]);
        rot * PI + y0 * (kappa * (1.0 - y0.norm_squared())) + (y1 + y0) * mu
    });
    let drhs = Arc::new(move |f: &[DVector<f64>], d: &[DVector<f64>]| {
        let y0 = &f[0];
        let d0 = &d[0];
        let d1 = &d[1];
        let rot = DVector::from_vec(vec![d0[1], -d0[0]]);
        rot * PI + d0 * (kappa * (1.0 - y0.norm_squared())) - y0 * (2.0 * kappa * y0.dot(d0))
            + (d1 + d0) * mu
    });
    let mut params = BTreeMap::new();
    params.insert("kappa".into(), kappa);
    params.insert("mu".into(), mu);
    RfdeProblem::new(2, 1.0, terms, rhs, Some(drhs)).unwrap().with_params(params)
}

fn mms_entry(kappa: f64, mu: f64) -> CatalogProblem {
    let exact_value: Profile =
        Arc::new(|t| DVector::from_vec(vec![(PI * t).sin(), (PI * t).cos()]));
    let exact_derivative: Profile =
        Arc::new(|t| DVector::from_vec(vec![PI * (PI * t).cos(), -PI * (PI * t).sin()]));
    CatalogProblem {
        name: "mms".into(),
        problem: mms(kappa, mu),
        guess: InitialGuess {
            // rescaled profile of the exact orbit; the period guess is offset
            // so Newton has genuine work to do
            omega: 2.2,
            value: Arc::new(|t| DVector::from_vec(vec![(2.0 * PI * t).sin(), (2.0 * PI * t).cos()])),
            derivative: Arc::new(|t| {
                DVector::from_vec(vec![
                    2.0 * PI * (2.0 * PI * t).cos(),
                    -2.0 * PI * (2.0 * PI * t).sin(),
                ])
            }),
        },
        phase_component: 0,
        phase_level: 0.0,
        section: Section { component: 1, level: 0.0 },
        history: exact_value.clone(),
        exact: Some(ExactOrbit { omega: 2.0, value: exact_value, derivative: exact_derivative }),
    }
}

/// Logistic growth with a distributed delay weighting the far past:
/// `y'(𝚝) = r y(𝚝)(1 - ∫_{-1}^0 (-2θ) y(𝚝+θ) dθ)`.
///
/// The kernel is normalized (`∫ -2θ dθ = 1`, equilibrium at 1) and its Hopf
/// bifurcation sits at `r ≈ 2.72` with period `≈ 2.7`, so the default
/// `r = 3.0` carries a genuine limit cycle well clear of the delay bound.
pub fn dist_logistic(r: f64) -> RfdeProblem {
    let terms = vec![
        DelayTerm::Discrete { lag: 0.0 },
        DelayTerm::Distributed { kernel: Arc::new(|theta: f64| -2.0 * theta) },
    ];
    let rhs = Arc::new(move |f: &[DVector<f64>]| {
        DVector::from_vec(vec![r * f[0][0] * (1.0 - f[1][0])])
    });
    let drhs = Arc::new(move |f: &[DVector<f64>], d: &[DVector<f64>]| {
        DVector::from_vec(vec![r * (d[0][0] * (1.0 - f[1][0]) - f[0][0] * d[1][0])])
    });
    let mut params = BTreeMap::new();
    params.insert("r".into(), r);
    RfdeProblem::new(1, 1.0, terms, rhs, Some(drhs)).unwrap().with_params(params)
}

fn dist_logistic_entry(r: f64) -> CatalogProblem {
    CatalogProblem {
        name: "dist-logistic".into(),
        problem: dist_logistic(r),
        guess: InitialGuess {
            omega: 2.75,
            value: Arc::new(|t| DVector::from_vec(vec![1.0 + 0.8 * (2.0 * PI * t).sin()])),
            derivative: Arc::new(|t| DVector::from_vec(vec![0.8 * 2.0 * PI * (2.0 * PI * t).cos()])),
        },
        phase_component: 0,
        phase_level: 1.0,
        section: Section { component: 0, level: 1.0 },
        history: Arc::new(|s| DVector::from_vec(vec![1.0 + 0.5 * (PI * s / 2.0).sin()])),
        exact: None,
    }
}
