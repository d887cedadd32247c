//! RFDE problem definition.
//!
//! The right-hand side `G` acts on states over `[-τ, 0]` in physical time; the
//! rescaling `θ = σ/ω` is applied by the caller when building state views, so
//! problem definitions never see the period. `G` is expressed through delay
//! features: each delay term contributes either a point evaluation `ψ(σ_k)`
//! (discrete delay) or a kernel integral `∫ w(θ) ψ(θ) dθ` (distributed delay),
//! and the problem's `rhs` maps the feature list to `R^d`. Features are linear
//! in the state, so directional derivatives reduce to the derivative of `rhs`
//! with respect to its features.

use crate::error::{Error, Result};
use crate::mesh::gauss_legendre;
use nalgebra::DVector;
use std::collections::BTreeMap;
use std::sync::Arc;

/// A read-only view of a state `σ ∈ [-τ, 0] → R^d` in physical time.
///
/// A view may carry breakpoints: interior `σ` values where the state has
/// reduced smoothness (mesh nodes of a piecewise polynomial, for instance).
/// Quadratures over the state split at these points, which keeps them
/// spectrally accurate (and exact for polynomial integrands).
pub struct StateView<'a> {
    tau: f64,
    eval_fn: &'a dyn Fn(f64) -> Result<DVector<f64>>,
    breakpoints: Vec<f64>,
}

impl<'a> StateView<'a> {
    pub fn new(tau: f64, eval_fn: &'a dyn Fn(f64) -> Result<DVector<f64>>) -> Self {
        StateView { tau, eval_fn, breakpoints: Vec::new() }
    }

    /// A view over a piecewise-smooth state with the given interior
    /// breakpoints (values outside `(-τ, 0)` are discarded).
    pub fn with_breakpoints(
        tau: f64,
        eval_fn: &'a dyn Fn(f64) -> Result<DVector<f64>>,
        mut breakpoints: Vec<f64>,
    ) -> Self {
        breakpoints.retain(|&b| b > -tau + 1e-12 && b < -1e-12);
        breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breakpoints.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        StateView { tau, eval_fn, breakpoints }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Smoothness intervals partitioning `[-τ, 0]`.
    pub fn segments(&self) -> Vec<(f64, f64)> {
        let mut edges = Vec::with_capacity(self.breakpoints.len() + 2);
        edges.push(-self.tau);
        edges.extend_from_slice(&self.breakpoints);
        edges.push(0.0);
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn eval(&self, sigma: f64) -> Result<DVector<f64>> {
        if sigma < -self.tau - 1e-12 || sigma > 1e-12 {
            return Err(Error::Domain { what: "state view", value: sigma, lo: -self.tau, hi: 0.0 });
        }
        (self.eval_fn)(sigma.clamp(-self.tau, 0.0))
    }
}

pub type FeatureMap = Arc<dyn Fn(&[DVector<f64>]) -> DVector<f64> + Send + Sync>;
pub type FeatureDirectionalMap =
    Arc<dyn Fn(&[DVector<f64>], &[DVector<f64>]) -> DVector<f64> + Send + Sync>;

/// One delay term of the right-hand side.
#[derive(Clone)]
pub enum DelayTerm {
    /// Feature `ψ(lag)` for a lag in `[-τ, 0]`.
    Discrete { lag: f64 },
    /// Feature `∫_{-τ}^0 kernel(θ) ψ(θ) dθ`.
    Distributed { kernel: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

/// Quadrature order used when evaluating the exact `G` of a problem with
/// distributed delays; spectrally accurate for smooth kernels, so the result
/// is exact to roundoff in practice.
pub const EXACT_QUADRATURE_NODES: usize = 60;

/// An RFDE `y'(t) = G(y_t)` with maximum delay `τ`.
#[derive(Clone)]
pub struct RfdeProblem {
    pub dim: usize,
    pub tau: f64,
    pub terms: Vec<DelayTerm>,
    rhs: FeatureMap,
    drhs: Option<FeatureDirectionalMap>,
    pub params: BTreeMap<String, f64>,
}

impl RfdeProblem {
    pub fn new(
        dim: usize,
        tau: f64,
        terms: Vec<DelayTerm>,
        rhs: FeatureMap,
        drhs: Option<FeatureDirectionalMap>,
    ) -> Result<Self> {
        if tau <= 0.0 {
            return Err(Error::InvalidMesh(format!("delay bound must be positive, got {tau}")));
        }
        for term in &terms {
            if let DelayTerm::Discrete { lag } = term {
                if *lag < -tau - 1e-12 || *lag > 1e-12 {
                    return Err(Error::InvalidMesh(format!(
                        "discrete lag {lag} outside [-{tau}, 0]"
                    )));
                }
            }
        }
        Ok(RfdeProblem { dim, tau, terms, rhs, drhs, params: BTreeMap::new() })
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    /// Apply the right-hand side to already-computed features, one per delay
    /// term. Callers that evaluate the features themselves (such as the
    /// reference integrator) use this instead of [`eval_rhs`].
    pub fn apply_rhs(&self, features: &[DVector<f64>]) -> DVector<f64> {
        (self.rhs)(features)
    }

    pub fn has_distributed_terms(&self) -> bool {
        self.terms.iter().any(|t| matches!(t, DelayTerm::Distributed { .. }))
    }

    pub fn has_exact_directional(&self) -> bool {
        self.drhs.is_some()
    }
}

/// Quadrature rule for the distributed terms: `M` Gauss-Legendre nodes per
/// smoothness segment of the state. On a smooth state (no breakpoints) this
/// is the plain `M`-node rule on `[-τ, 0]`; on a piecewise-polynomial state
/// splitting at the breakpoints keeps the composite rule spectrally accurate,
/// and exact once the per-segment integrand degree drops below `2M`.
#[derive(Clone, Debug)]
pub struct DelayQuadrature {
    /// reference nodes on `(0, 1)`
    pub nodes: Vec<f64>,
    /// reference weights summing to 1
    pub weights: Vec<f64>,
}

impl DelayQuadrature {
    fn gauss(m: usize) -> Self {
        let (nodes, weights) = gauss_legendre(m);
        DelayQuadrature { nodes, weights }
    }
}

/// A problem together with the secondary discretization level `M` used for its
/// distributed-delay integrals. Discrete-delay terms pass through untouched,
/// so `G_M = G` bitwise whenever no distributed term is present.
#[derive(Clone)]
pub struct DiscretizedRhs {
    pub problem: RfdeProblem,
    pub m_quadrature: usize,
    pub quadrature: DelayQuadrature,
}

/// `discretize_rhs(problem, M)`: replace every distributed term by an `M`-node
/// Gauss–Legendre quadrature over `[-τ, 0]`.
pub fn discretize_rhs(problem: &RfdeProblem, m_quadrature: usize) -> Result<DiscretizedRhs> {
    if m_quadrature < 1 {
        return Err(Error::InvalidMesh("secondary discretization needs M >= 1".into()));
    }
    Ok(DiscretizedRhs {
        problem: problem.clone(),
        m_quadrature,
        quadrature: DelayQuadrature::gauss(m_quadrature),
    })
}

fn features(
    problem: &RfdeProblem,
    quadrature: &DelayQuadrature,
    state: &StateView<'_>,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(problem.terms.len());
    let mut segments: Option<Vec<(f64, f64)>> = None;
    for term in &problem.terms {
        match term {
            DelayTerm::Discrete { lag } => out.push(state.eval(*lag)?),
            DelayTerm::Distributed { kernel } => {
                let segs = segments.get_or_insert_with(|| state.segments());
                let mut acc = DVector::zeros(problem.dim);
                for &(a, b) in segs.iter() {
                    let len = b - a;
                    for (&x, &w) in quadrature.nodes.iter().zip(&quadrature.weights) {
                        let theta = a + len * x;
                        acc += state.eval(theta)? * (len * w * kernel(theta));
                    }
                }
                out.push(acc);
            }
        }
    }
    Ok(out)
}

/// `G` evaluated on a state, with distributed integrals resolved by a dense
/// quadrature (exact to roundoff for smooth kernels).
pub fn eval_rhs(problem: &RfdeProblem, state: &StateView<'_>) -> Result<DVector<f64>> {
    let quadrature = DelayQuadrature::gauss(EXACT_QUADRATURE_NODES);
    let f = features(problem, &quadrature, state)?;
    Ok((problem.rhs)(&f))
}

impl DiscretizedRhs {
    /// `G_M` evaluated on a state.
    pub fn eval(&self, state: &StateView<'_>) -> Result<DVector<f64>> {
        let f = features(&self.problem, &self.quadrature, state)?;
        Ok((self.problem.rhs)(&f))
    }

    /// `DG_M(state)[direction]`, exact when the problem supplies a directional
    /// derivative, central finite differences on the feature map otherwise.
    pub fn eval_directional(
        &self,
        state: &StateView<'_>,
        direction: &StateView<'_>,
    ) -> Result<DVector<f64>> {
        let fs = features(&self.problem, &self.quadrature, state)?;
        let fd = features(&self.problem, &self.quadrature, direction)?;
        if let Some(drhs) = &self.problem.drhs {
            return Ok(drhs(&fs, &fd));
        }
        // finite-difference fallback, step scaled by the state's magnitude
        let sup = sup_norm_estimate(state)?;
        let eps = 1e-6 * sup.max(1.0);
        let plus: Vec<DVector<f64>> = fs.iter().zip(&fd).map(|(a, b)| a + b * eps).collect();
        let minus: Vec<DVector<f64>> = fs.iter().zip(&fd).map(|(a, b)| a - b * eps).collect();
        Ok(((self.problem.rhs)(&plus) - (self.problem.rhs)(&minus)) / (2.0 * eps))
    }
}

fn sup_norm_estimate(state: &StateView<'_>) -> Result<f64> {
    let mut sup = 0.0f64;
    for s in 0..=20 {
        let sigma = -state.tau() * s as f64 / 20.0;
        sup = sup.max(state.eval(sigma)?.amax());
    }
    Ok(sup)
}

/// `DG(state)[direction]` for the undiscretized right-hand side.
pub fn eval_rhs_directional(
    problem: &RfdeProblem,
    state: &StateView<'_>,
    direction: &StateView<'_>,
) -> Result<DVector<f64>> {
    let dense = DiscretizedRhs {
        problem: problem.clone(),
        m_quadrature: EXACT_QUADRATURE_NODES,
        quadrature: DelayQuadrature::gauss(EXACT_QUADRATURE_NODES),
    };
    dense.eval_directional(state, direction)
}

/// Relative margin enforced between the period and the maximum delay.
pub const PERIOD_MARGIN: f64 = 0.05;

/// Adjust an initial period guess so that `τ ≤ ω` holds with margin: returns
/// the smallest `k ≥ 1` with `k·ω ≥ τ·(1 + margin)` and the adjusted period.
pub fn period_guard(tau: f64, omega_guess: f64) -> (f64, usize) {
    assert!(tau > 0.0 && omega_guess > 0.0);
    let needed = tau * (1.0 + PERIOD_MARGIN);
    let mut k = (needed / omega_guess).ceil() as usize;
    if k < 1 {
        k = 1;
    }
    // ceiling can land one short on exact multiples
    while (k as f64) * omega_guess < needed {
        k += 1;
    }
    (k as f64 * omega_guess, k)
}
