//! Discrete fixed-point residual, Jacobian, phase conditions, damped Newton
//! and natural parameter continuation.
//!
//! The unknowns are the node values of the rescaled derivative `u` on `[0, 1]`,
//! the node values of the initial state `ψ` on `[-1, 0]`, and the period `ω`,
//! flattened as `x = [u; ψ; ω]` of length `2(1 + Lm)d + 1`. With
//! `v = 𝒢(u, ψ)` the residual blocks are
//!
//! - U: `u_a - ω·G_M(σ ↦ v(t_a + σ/ω))` at every Plus node,
//! - A: `ψ_a - v(1 + θ_a)` at every Minus node (periodicity of the full state),
//! - scalar: the phase condition `p(v) = 0`.
//!
//! The third component of the underlying fixed-point map reads `ω - p(...)`;
//! it is solved here in residual form `p(v) = 0`, which has the identical zero
//! set and better conditioning.

use crate::catalog::{self, InitialGuess};
use crate::error::{Error, Result};
use crate::greens::{final_state, green_apply, CandidateSolution};
use crate::mesh::{
    gauss_legendre, inner_abscissae, node_times, outer_mesh, restrict, AbscissaeFamily,
    InnerAbscissae, NodeVector, OuterMesh, Side,
};
use crate::problem::{discretize_rhs, period_guard, DiscretizedRhs, RfdeProblem, StateView};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

/// The collocation grid shared by both halves of `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub plus: OuterMesh,
    pub minus: OuterMesh,
    pub abscissae: InnerAbscissae,
    pub times_plus: Vec<f64>,
    pub times_minus: Vec<f64>,
}

impl Discretization {
    pub fn new(l: usize, m: usize, family: AbscissaeFamily) -> Result<Self> {
        let abscissae = inner_abscissae(m, family)?;
        Self::with_abscissae(l, abscissae)
    }

    pub fn with_abscissae(l: usize, abscissae: InnerAbscissae) -> Result<Self> {
        let plus = outer_mesh(l, Side::Plus)?;
        let minus = outer_mesh(l, Side::Minus)?;
        let times_plus = node_times(&plus, &abscissae);
        let times_minus = node_times(&minus, &abscissae);
        Ok(Discretization { plus, minus, abscissae, times_plus, times_minus })
    }

    /// Number of defining nodes per half, `1 + Lm`.
    pub fn n_nodes(&self) -> usize {
        1 + self.plus.l * self.abscissae.m
    }
}

/// The solver unknowns `(u, ψ, ω)`.
#[derive(Clone, Debug)]
pub struct DiscreteUnknowns {
    pub u: NodeVector,
    pub psi: NodeVector,
    pub omega: f64,
}

impl DiscreteUnknowns {
    pub fn dim(&self) -> usize {
        self.u.dim
    }

    /// Total number of scalar unknowns, `2(1 + Lm)d + 1`.
    pub fn n_total(&self) -> usize {
        2 * self.u.data.len() + 1
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let nd = self.u.data.len();
        let mut v = DVector::zeros(2 * nd + 1);
        v.as_mut_slice()[..nd].copy_from_slice(&self.u.data);
        v.as_mut_slice()[nd..2 * nd].copy_from_slice(&self.psi.data);
        v[2 * nd] = self.omega;
        v
    }

    pub fn from_vector(template: &DiscreteUnknowns, x: &DVector<f64>) -> Self {
        let nd = template.u.data.len();
        let mut out = template.clone();
        out.u.data.copy_from_slice(&x.as_slice()[..nd]);
        out.psi.data.copy_from_slice(&x.as_slice()[nd..2 * nd]);
        out.omega = x[2 * nd];
        out
    }
}

/// Phase condition pinning the time translation of the orbit.
#[derive(Clone)]
pub enum PhaseCondition {
    /// `v_k(0) = level`
    Trivial { component: usize, level: f64 },
    /// `∫_0^1 v(t)ᵀ ỹ'(t) dt = 0` against a reference orbit `ỹ`
    Integral { reference: CandidateSolution },
}

/// How the Jacobian is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianMode {
    FiniteDifference,
    Analytic,
}

/// Newton iteration parameters.
#[derive(Clone, Copy, Debug)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings { tol: 1e-10, max_iter: 50, max_halvings: 20 }
    }
}

/// Outcome of a Newton solve.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: DiscreteUnknowns,
    pub residual_norm: f64,
    pub newton_iterations: usize,
    pub converged: bool,
    pub jacobian_condition_estimate: Option<f64>,
}

/// Relative margin by which accepted iterates must keep `ω` above `τ`; the
/// problem's Lipschitz constants blow up as the period approaches the delay.
pub const OMEGA_GUARD: f64 = 1.01;

/// `p(v)` for the given phase condition, exact for piecewise-polynomial
/// arguments (per-interval Gauss quadrature with `m + 2` points).
pub fn phase_eval(
    phase: &PhaseCondition,
    v: &CandidateSolution,
    disc: &Discretization,
) -> Result<f64> {
    match phase {
        PhaseCondition::Trivial { component, level } => Ok(v.value(0.0)?[*component] - level),
        PhaseCondition::Integral { reference } => {
            let (gx, gw) = gauss_legendre(disc.abscissae.m + 2);
            let mut acc = 0.0;
            for i in 0..disc.plus.l {
                let t0 = disc.plus.nodes[i];
                for (&x, &w) in gx.iter().zip(&gw) {
                    let t = t0 + x * disc.plus.h;
                    acc += w * disc.plus.h * v.value(t)?.dot(&reference.derivative(t)?);
                }
            }
            Ok(acc)
        }
    }
}

/// The collocation residual `[u - ω G_M(...); ψ - v(1 + ·); p(v)]`.
pub fn assemble_residual(
    x: &DiscreteUnknowns,
    rhs: &DiscretizedRhs,
    phase: &PhaseCondition,
    disc: &Discretization,
) -> Result<DVector<f64>> {
    let tau = rhs.problem.tau;
    if x.omega <= tau {
        return Err(Error::PeriodBelowDelay { omega: x.omega, tau });
    }
    let v = green_apply(&x.u, &x.psi, &disc.abscissae)?;
    residual_with(&v, x, rhs, phase, disc)
}

fn residual_with(
    v: &CandidateSolution,
    x: &DiscreteUnknowns,
    rhs: &DiscretizedRhs,
    phase: &PhaseCondition,
    disc: &Discretization,
) -> Result<DVector<f64>> {
    let tau = rhs.problem.tau;
    let d = x.u.dim;
    let nd = x.u.data.len();
    let mut r = DVector::zeros(2 * nd + 1);
    for (a, &t) in disc.times_plus.iter().enumerate() {
        let f = v.state_fn(t, x.omega, tau)?;
        let sv = StateView::with_breakpoints(tau, &f, v.state_breakpoints(t, x.omega, tau));
        let g = rhs.eval(&sv)?;
        let block = x.u.node(a) - g * x.omega;
        r.rows_mut(a * d, d).copy_from(&block);
    }
    let fs = final_state(v, &disc.minus, &disc.abscissae)?;
    for i in 0..nd {
        r[nd + i] = x.psi.data[i] - fs.data[i];
    }
    r[2 * nd] = phase_eval(phase, v, disc)?;
    Ok(r)
}

/// The Jacobian of [`assemble_residual`] with respect to `[u; ψ; ω]`.
///
/// `Analytic` assembles each `u`/`ψ` column from the candidate direction
/// `δv = 𝒢(δu, δψ)` and the directional derivative of `G_M`; the `ω` column
/// is `-𝔐(t_a)` with `𝔐(t) = G_M(state) - DG_M(state)[σ ↦ (σ/ω) v'(t + σ/ω)]`
/// on the U block and zero elsewhere (the derivative in `ω` is one-sided).
/// `FiniteDifference` uses central differences per coordinate and a forward
/// difference in `ω`.
pub fn assemble_jacobian(
    x: &DiscreteUnknowns,
    rhs: &DiscretizedRhs,
    phase: &PhaseCondition,
    disc: &Discretization,
    mode: JacobianMode,
) -> Result<DMatrix<f64>> {
    match mode {
        JacobianMode::FiniteDifference => fd_jacobian(x, rhs, phase, disc),
        JacobianMode::Analytic => analytic_jacobian(x, rhs, phase, disc),
    }
}

fn fd_jacobian(
    x: &DiscreteUnknowns,
    rhs: &DiscretizedRhs,
    phase: &PhaseCondition,
    disc: &Discretization,
) -> Result<DMatrix<f64>> {
    let n = x.n_total();
    let base = x.to_vector();
    let mut jac = DMatrix::zeros(n, n);
    let eval = |v: &DVector<f64>| -> Result<DVector<f64>> {
        assemble_residual(&DiscreteUnknowns::from_vector(x, v), rhs, phase, disc)
    };
    for j in 0..n - 1 {
        let h = 1e-7 * base[j].abs().max(1.0);
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[j] += h;
        minus[j] -= h;
        let col = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        jac.column_mut(j).copy_from(&col);
    }
    // one-sided forward step in ω
    let j = n - 1;
    let h = 1e-7 * base[j].abs().max(1.0);
    let mut plus = base.clone();
    plus[j] += h;
    let col = (eval(&plus)? - eval(&base)?) / h;
    jac.column_mut(j).copy_from(&col);
    Ok(jac)
}

fn analytic_jacobian(
    x: &DiscreteUnknowns,
    rhs: &DiscretizedRhs,
    phase: &PhaseCondition,
    disc: &Discretization,
) -> Result<DMatrix<f64>> {
    let tau = rhs.problem.tau;
    if x.omega <= tau {
        return Err(Error::PeriodBelowDelay { omega: x.omega, tau });
    }
    let d = x.u.dim;
    let nd = x.u.data.len();
    let n = 2 * nd + 1;
    let omega = x.omega;
    let v = green_apply(&x.u, &x.psi, &disc.abscissae)?;
    let mut jac = DMatrix::zeros(n, n);

    // u and ψ columns via basis candidate directions δv = 𝒢(δu, δψ)
    let mut du = NodeVector::zeros(d, x.u.l, x.u.m);
    let mut dpsi = NodeVector::zeros(d, x.u.l, x.u.m);
    for j in 0..2 * nd {
        if j < nd {
            du.data[j] = 1.0;
        } else {
            dpsi.data[j - nd] = 1.0;
        }
        let dv = green_apply(&du, &dpsi, &disc.abscissae)?;
        for (a, &t) in disc.times_plus.iter().enumerate() {
            let breaks = v.state_breakpoints(t, omega, tau);
            let f = v.state_fn(t, omega, tau)?;
            let sv = StateView::with_breakpoints(tau, &f, breaks.clone());
            let g = dv.state_fn(t, omega, tau)?;
            let dir = StateView::with_breakpoints(tau, &g, breaks);
            let dg = rhs.eval_directional(&sv, &dir)?;
            for c in 0..d {
                let row = a * d + c;
                let mut entry = -omega * dg[c];
                if j == row {
                    entry += 1.0;
                }
                jac[(row, j)] = entry;
            }
        }
        let dfs = final_state(&dv, &disc.minus, &disc.abscissae)?;
        for i in 0..nd {
            let mut entry = -dfs.data[i];
            if j == nd + i {
                entry += 1.0;
            }
            jac[(nd + i, j)] = entry;
        }
        jac[(2 * nd, j)] = match phase {
            PhaseCondition::Trivial { component, .. } => dv.value(0.0)?[*component],
            PhaseCondition::Integral { .. } => phase_eval(phase, &dv, disc)?,
        };
        if j < nd {
            du.data[j] = 0.0;
        } else {
            dpsi.data[j - nd] = 0.0;
        }
    }

    // ω column: -𝔐(t_a) on the U block, zero on the rest
    for (a, &t) in disc.times_plus.iter().enumerate() {
        let breaks = v.state_breakpoints(t, omega, tau);
        let f = v.state_fn(t, omega, tau)?;
        let sv = StateView::with_breakpoints(tau, &f, breaks.clone());
        let g = rhs.eval(&sv)?;
        let dir_fn =
            |sigma: f64| Ok(v.derivative(t + sigma / omega)? * (sigma / omega));
        let dir = StateView::with_breakpoints(tau, &dir_fn, breaks);
        let dg = rhs.eval_directional(&sv, &dir)?;
        let m_t = g - dg;
        for c in 0..d {
            jac[(a * d + c, n - 1)] = -m_t[c];
        }
    }
    Ok(jac)
}

/// Damped Newton iteration with dense LU.
///
/// Steps are halved (up to `max_halvings`) until the residual norm decreases;
/// an iterate is also rejected while it would drive `ω ≤ 1.01 τ`. Returns
/// `NoConvergence` when the iteration or damping budget is exhausted.
pub fn newton_solve(
    x0: &DiscreteUnknowns,
    rhs: &DiscretizedRhs,
    phase: &PhaseCondition,
    disc: &Discretization,
    mode: JacobianMode,
    settings: &NewtonSettings,
) -> Result<SolveReport> {
    let tau = rhs.problem.tau;
    let mut x = x0.to_vector();
    let mut current = DiscreteUnknowns::from_vector(x0, &x);
    let mut r = assemble_residual(&current, rhs, phase, disc)?;
    let mut rn = r.amax();
    let mut cond = None;
    let mut iterations = 0;
    while rn > settings.tol {
        if iterations >= settings.max_iter {
            return Err(Error::NoConvergence { iterations, residual: rn });
        }
        let jac = assemble_jacobian(&current, rhs, phase, disc, mode)?;
        if cond.is_none() {
            cond = Some(condition_estimate(&jac));
        }
        let lu = jac.lu();
        let delta = lu.solve(&r).ok_or(Error::SingularJacobian)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=settings.max_halvings {
            let cand = &x - &delta * lambda;
            let cand_x = DiscreteUnknowns::from_vector(&current, &cand);
            if cand_x.omega <= OMEGA_GUARD * tau {
                lambda /= 2.0;
                continue;
            }
            match assemble_residual(&cand_x, rhs, phase, disc) {
                Ok(cand_r) => {
                    let cand_rn = cand_r.amax();
                    if cand_rn < rn || cand_rn <= settings.tol {
                        x = cand;
                        current = cand_x;
                        r = cand_r;
                        rn = cand_rn;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            lambda /= 2.0;
        }
        if !accepted {
            return Err(Error::NoConvergence { iterations, residual: rn });
        }
        iterations += 1;
    }
    Ok(SolveReport {
        solution: current,
        residual_norm: rn,
        newton_iterations: iterations,
        converged: true,
        jacobian_condition_estimate: cond,
    })
}

/// Cheap ∞-norm condition estimate: `‖J‖_∞ · ‖J⁻¹ e‖_∞` for an alternating
/// sign vector `e`; a lower bound on the true condition number.
fn condition_estimate(jac: &DMatrix<f64>) -> f64 {
    let n = jac.nrows();
    let norm = (0..n)
        .map(|i| (0..n).map(|j| jac[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let e = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    match jac.clone().lu().solve(&e) {
        Some(z) => norm * z.amax(),
        None => f64::INFINITY,
    }
}

/// Solver configuration for the end-to-end pipeline.
#[derive(Clone, Debug)]
pub struct SolveConfig {
    pub l: usize,
    pub m: usize,
    pub m_quadrature: usize,
    pub family: AbscissaeFamily,
    pub mode: JacobianMode,
    pub settings: NewtonSettings,
}

impl SolveConfig {
    pub fn new(l: usize, m: usize) -> Self {
        SolveConfig {
            l,
            m,
            m_quadrature: 20,
            family: AbscissaeFamily::GaussLegendre,
            mode: JacobianMode::Analytic,
            settings: NewtonSettings::default(),
        }
    }
}

/// Restrict an initial guess (a 1-periodic rescaled profile and a period) to
/// the collocation grid, applying the period guard.
pub fn initial_unknowns(
    guess: &InitialGuess,
    tau: f64,
    disc: &Discretization,
) -> Result<DiscreteUnknowns> {
    let (omega, _) = period_guard(tau, guess.omega);
    let value = guess.value.clone();
    let derivative = guess.derivative.clone();
    let u = restrict(|t| Ok(derivative(t)), &disc.plus, &disc.abscissae)?;
    let psi = restrict(|t| Ok(value(t)), &disc.minus, &disc.abscissae)?;
    Ok(DiscreteUnknowns { u, psi, omega })
}

/// End-to-end solve: period guard, secondary discretization, guess
/// restriction, Newton, Green reconstruction.
pub fn solve_periodic(
    problem: &RfdeProblem,
    guess: &InitialGuess,
    phase: &PhaseCondition,
    cfg: &SolveConfig,
) -> Result<(CandidateSolution, f64, SolveReport)> {
    let disc = Discretization::new(cfg.l, cfg.m, cfg.family)?;
    let rhs = discretize_rhs(problem, cfg.m_quadrature)?;
    let x0 = initial_unknowns(guess, problem.tau, &disc)?;
    let report = newton_solve(&x0, &rhs, phase, &disc, cfg.mode, &cfg.settings)?;
    let v = green_apply(&report.solution.u, &report.solution.psi, &disc.abscissae)?;
    let omega = report.solution.omega;
    Ok((v, omega, report))
}

/// Amplitude of a solution over one period; below `10⁻⁶` the orbit is an
/// equilibrium, not a limit cycle.
pub fn amplitude(v: &CandidateSolution) -> Result<f64> {
    let d = v.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for s in 0..=400 {
        let t = s as f64 / 400.0;
        let val = v.value(t)?;
        for c in 0..d {
            lo[c] = lo[c].min(val[c]);
            hi[c] = hi[c].max(val[c]);
        }
    }
    Ok((0..d).map(|c| hi[c] - lo[c]).fold(0.0, f64::max))
}

pub const ZERO_AMPLITUDE: f64 = 1e-6;

/// One step of a natural-parameter continuation sweep.
pub struct ContinuationStep {
    pub param_value: f64,
    pub outcome: Result<(CandidateSolution, f64, SolveReport)>,
    /// converged to an equilibrium rather than a limit cycle
    pub zero_amplitude: bool,
}

/// Sweep a catalog problem's parameter over the given values. The first step
/// starts from the catalog guess with its trivial phase condition; every
/// later step is seeded by the previous solution, which also serves as the
/// reference of an integral phase condition. Failed steps are recorded and
/// the sweep continues from the last success.
pub fn continue_natural(
    problem_name: &str,
    param: &str,
    values: &[f64],
    cfg: &SolveConfig,
) -> Result<Vec<ContinuationStep>> {
    let disc = Discretization::new(cfg.l, cfg.m, cfg.family)?;
    let mut steps = Vec::with_capacity(values.len());
    let mut seed: Option<(DiscreteUnknowns, CandidateSolution)> = None;
    for &value in values {
        let mut overrides = BTreeMap::new();
        overrides.insert(param.to_string(), value);
        let cp = catalog::build(problem_name, &overrides)?;
        let rhs = discretize_rhs(&cp.problem, cfg.m_quadrature)?;
        let outcome = match &seed {
            None => {
                let phase = PhaseCondition::Trivial {
                    component: cp.phase_component,
                    level: cp.phase_level,
                };
                solve_periodic(&cp.problem, &cp.guess, &phase, cfg)
            }
            Some((x_prev, v_prev)) => {
                let phase = PhaseCondition::Integral { reference: v_prev.clone() };
                newton_solve(x_prev, &rhs, &phase, &disc, cfg.mode, &cfg.settings).and_then(
                    |report| {
                        let v = green_apply(
                            &report.solution.u,
                            &report.solution.psi,
                            &disc.abscissae,
                        )?;
                        let omega = report.solution.omega;
                        Ok((v, omega, report))
                    },
                )
            }
        };
        let zero_amplitude = match &outcome {
            Ok((v, _, _)) => amplitude(v)? < ZERO_AMPLITUDE,
            Err(_) => false,
        };
        if let Ok((v, _, report)) = &outcome {
            if !zero_amplitude {
                seed = Some((report.solution.clone(), v.clone()));
            }
        }
        steps.push(ContinuationStep { param_value: value, outcome, zero_amplitude });
    }
    Ok(steps)
}
