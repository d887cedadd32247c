//! Independent reference machinery: a method-of-steps time integrator with
//! dense output, limit-cycle extraction by transient integration and
//! Poincare-section period detection, and the convergence-study driver.
//!
//! The integrator shares nothing with the collocation solver beyond the
//! problem definition itself: delayed features are read from the trajectory's
//! dense output and distributed integrals use composite Simpson quadrature,
//! so agreement between the two is meaningful evidence.

use crate::catalog::{CatalogProblem, Profile, Section};
use crate::error::{Error, Result};
use crate::greens::CandidateSolution;
use crate::problem::{DelayTerm, RfdeProblem};
use crate::solver::{solve_periodic, PhaseCondition, SolveConfig};
use nalgebra::DVector;

/// Subintervals of the composite Simpson rule for distributed delays (even).
const SIMPSON_INTERVALS: usize = 200;
/// Bisection tolerance for section-crossing times.
const CROSSING_TOL: f64 = 1e-10;
/// Maximum admissible relative disagreement between consecutive period gaps.
const GAP_CONSISTENCY: f64 = 1e-6;

/// One completed integration step with cubic Hermite dense output.
#[derive(Clone, Debug)]
struct Segment {
    t0: f64,
    t1: f64,
    y0: DVector<f64>,
    y1: DVector<f64>,
    f0: DVector<f64>,
    f1: DVector<f64>,
}

impl Segment {
    fn value(&self, t: f64) -> DVector<f64> {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        &self.y0 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + &self.f0 * (h * (s3 - 2.0 * s2 + s))
            + &self.y1 * (-2.0 * s3 + 3.0 * s2)
            + &self.f1 * (h * (s3 - s2))
    }

    fn derivative(&self, t: f64) -> DVector<f64> {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        (&self.y0 * ((6.0 * s2 - 6.0 * s) / h)
            + &self.f0 * (3.0 * s2 - 4.0 * s + 1.0)
            + &self.y1 * ((-6.0 * s2 + 6.0 * s) / h))
            + &self.f1 * (3.0 * s2 - 2.0 * s)
    }
}

/// A solution trajectory in physical time: supplied history on `[-τ, 0]` plus
/// per-step cubic Hermite dense output on `[0, t_end]`.
pub struct Trajectory {
    tau: f64,
    history: Profile,
    segments: Vec<Segment>,
}

impl Trajectory {
    pub fn t_end(&self) -> f64 {
        self.segments.last().map(|s| s.t1).unwrap_or(0.0)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `y(t)` for `t ∈ [-τ, t_end]`.
    pub fn value(&self, t: f64) -> Result<DVector<f64>> {
        if t <= 0.0 {
            if t < -self.tau - 1e-9 {
                return Err(Error::Domain { what: "trajectory", value: t, lo: -self.tau, hi: self.t_end() });
            }
            return Ok((self.history)(t.max(-self.tau)));
        }
        let seg = self.locate(t)?;
        Ok(seg.value(t))
    }

    /// `y'(t)` for `t ∈ (0, t_end]` (the dense-output derivative).
    pub fn derivative(&self, t: f64) -> Result<DVector<f64>> {
        let seg = self.locate(t)?;
        Ok(seg.derivative(t))
    }

    fn locate(&self, t: f64) -> Result<&Segment> {
        let end = self.t_end();
        if self.segments.is_empty() || t > end + 1e-9 {
            return Err(Error::Domain { what: "trajectory", value: t, lo: -self.tau, hi: end });
        }
        let i = self.segments.partition_point(|s| s.t1 < t).min(self.segments.len() - 1);
        Ok(&self.segments[i])
    }
}

/// Delayed features of the current trajectory at time `t`, where the value at
/// the evaluation time itself is `y_now` (the Runge-Kutta stage value). For
/// lookups in the sliver `(covered end, t]` not yet covered by a completed
/// step, the linear predictor based at `(t_base, y_base, f_base)` is used;
/// the sliver has width `O(dt)`, so the predictor's `O(dt²)` error stays
/// below the integrator's own order.
#[allow(clippy::too_many_arguments)]
fn features_at(
    problem: &RfdeProblem,
    traj: &Trajectory,
    t: f64,
    y_now: &DVector<f64>,
    t_base: f64,
    y_base: &DVector<f64>,
    f_base: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let tau = problem.tau;
    let lookup = |s: f64| -> Result<DVector<f64>> {
        if (s - t).abs() <= 1e-14 {
            return Ok(y_now.clone());
        }
        if s <= traj.t_end() + 1e-14 || s <= 0.0 {
            traj.value(s)
        } else {
            Ok(y_base + f_base * (s - t_base))
        }
    };
    let mut out = Vec::with_capacity(problem.terms.len());
    for term in &problem.terms {
        match term {
            DelayTerm::Discrete { lag } => out.push(lookup(t + lag)?),
            DelayTerm::Distributed { kernel } => {
                // composite Simpson on [-τ, 0]
                let n = SIMPSON_INTERVALS;
                let h = tau / n as f64;
                let mut acc = DVector::zeros(problem.dim);
                for i in 0..=n {
                    let theta = -tau + i as f64 * h;
                    let w = if i == 0 || i == n {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    acc += lookup(t + theta)? * (w * kernel(theta));
                }
                out.push(acc * (h / 3.0));
            }
        }
    }
    Ok(out)
}

/// Classical method of steps: RK4 with constant step `dt` (locally shortened
/// so that steps land exactly on multiples of `τ` and on `t_end`) and cubic
/// Hermite dense output per step.
pub fn integrate_method_of_steps(
    problem: &RfdeProblem,
    history: &Profile,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let tau = problem.tau;
    if !(dt > 0.0 && dt <= tau / 4.0 + 1e-12) {
        return Err(Error::Domain { what: "oracle step size", value: dt, lo: 0.0, hi: tau / 4.0 });
    }
    if t_end <= 0.0 {
        return Err(Error::Domain { what: "oracle end time", value: t_end, lo: 0.0, hi: f64::INFINITY });
    }
    for i in 0..=4 {
        let s = -tau * i as f64 / 4.0;
        if history(s).len() != problem.dim {
            return Err(Error::Domain { what: "history dimension", value: s, lo: -tau, hi: 0.0 });
        }
    }

    let mut traj = Trajectory { tau, history: history.clone(), segments: Vec::new() };
    let mut t = 0.0;
    let mut y = history(0.0);
    let rhs = |traj: &Trajectory,
               ts: f64,
               ys: &DVector<f64>,
               tb: f64,
               yb: &DVector<f64>,
               fb: &DVector<f64>|
     -> Result<DVector<f64>> {
        let f = features_at(problem, traj, ts, ys, tb, yb, fb)?;
        Ok(problem.apply_rhs(&f))
    };

    while t < t_end - 1e-12 {
        // land exactly on the next multiple of τ (discontinuity propagation)
        let next_break = ((t / tau + 1e-9).floor() + 1.0) * tau;
        let target = next_break.min(t_end);
        let n = ((target - t) / dt).ceil().max(1.0) as usize;
        let h = (target - t) / n as f64;
        for _ in 0..n {
            let k1 = rhs(&traj, t, &y, t, &y, &DVector::zeros(problem.dim))?;
            let k2 = rhs(&traj, t + 0.5 * h, &(&y + &k1 * (0.5 * h)), t, &y, &k1)?;
            let k3 = rhs(&traj, t + 0.5 * h, &(&y + &k2 * (0.5 * h)), t, &y, &k1)?;
            let k4 = rhs(&traj, t + h, &(&y + &k3 * h), t, &y, &k1)?;
            let y1 = &y + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
            let f1 = rhs(&traj, t + h, &y1, t, &y, &k1)?;
            traj.segments.push(Segment {
                t0: t,
                t1: t + h,
                y0: y.clone(),
                y1: y1.clone(),
                f0: k1,
                f1,
            });
            t += h;
            y = y1;
        }
        t = target;
    }
    Ok(traj)
}

/// A limit cycle extracted from a long integration: the period and a profile
/// over one period starting at an upward section crossing.
pub struct ReferenceOrbit {
    pub period: f64,
    pub section: Section,
    t0: f64,
    trajectory: Trajectory,
}

impl ReferenceOrbit {
    /// Profile value at phase `s ∈ [0, period]` past the section crossing.
    pub fn value(&self, s: f64) -> Result<DVector<f64>> {
        self.trajectory.value(self.t0 + s.rem_euclid(self.period))
    }

    pub fn derivative(&self, s: f64) -> Result<DVector<f64>> {
        self.trajectory.derivative(self.t0 + s.rem_euclid(self.period))
    }

    /// `max_t |y(t + period) - y(t)|` over a 200-point grid, a self-check of
    /// how periodic the extracted orbit really is.
    pub fn periodicity_defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in 0..200 {
            let t = self.t0 + self.period * i as f64 / 200.0;
            let d = (self.trajectory.value(t + self.period)? - self.trajectory.value(t)?).amax();
            worst = worst.max(d);
        }
        Ok(worst)
    }
}

/// Refine an upward crossing of `y_k = level` inside `[a, b]` by bisection on
/// the dense output.
fn bisect_crossing<F>(mut a: f64, mut b: f64, level: f64, eval: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    while b - a > CROSSING_TOL {
        let mid = 0.5 * (a + b);
        if eval(mid)? < level {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Integrate past the transient and detect the attracting cycle through
/// upward crossings of the Poincare section. The period is the mean of the
/// last three crossing gaps; inconsistent gaps or fewer than four crossings
/// yield `NoCycleDetected`.
pub fn extract_reference_orbit(
    problem: &RfdeProblem,
    history: &Profile,
    t_transient: f64,
    section: Section,
    dt: f64,
) -> Result<ReferenceOrbit> {
    let tau = problem.tau;
    let t_end = t_transient + 80.0 * tau;
    let traj = integrate_method_of_steps(problem, history, t_end, dt)?;

    let k = section.component;
    let mut crossings = Vec::new();
    for seg in &traj.segments {
        if seg.t0 < t_transient {
            continue;
        }
        let (a, b) = (seg.y0[k] - section.level, seg.y1[k] - section.level);
        if a < 0.0 && b >= 0.0 {
            let t = bisect_crossing(seg.t0, seg.t1, section.level, |t| {
                Ok(traj.value(t)?[k])
            })?;
            crossings.push(t);
        }
    }
    if crossings.len() < 4 {
        return Err(Error::NoCycleDetected(format!(
            "only {} upward section crossings after the transient",
            crossings.len()
        )));
    }
    let last = &crossings[crossings.len() - 4..];
    let gaps = [last[1] - last[0], last[2] - last[1], last[3] - last[2]];
    let period = gaps.iter().sum::<f64>() / 3.0;
    for g in gaps {
        if (g - period).abs() / period > GAP_CONSISTENCY {
            return Err(Error::NoCycleDetected(format!(
                "inconsistent crossing gaps {gaps:?} (period estimate {period})"
            )));
        }
    }
    Ok(ReferenceOrbit { period, section, t0: last[0], trajectory: traj })
}

/// Reference against which a convergence study measures errors.
pub enum ReferenceSource {
    /// the catalog problem's closed-form orbit
    Exact,
    /// a reference orbit extracted by the method-of-steps integrator
    Oracle { dt: f64, t_transient: f64 },
}

/// Errors and estimated order at one refinement level.
#[derive(Clone, Debug)]
pub struct ConvergenceRow {
    pub l: usize,
    pub h: f64,
    pub err_v: f64,
    pub err_vprime: f64,
    pub err_omega: f64,
    /// `log2(ε(L)/ε(2L))` relative to the previous row, `None` for the first
    pub order_est: Option<f64>,
    pub seconds: f64,
    /// rescaled-time shift used to phase-align solver and reference
    pub shift: f64,
}

pub struct ConvergenceReport {
    pub problem: String,
    pub m: usize,
    pub omega_ref: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order_est).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("L,h,err_v,err_vprime,err_omega,order_est,seconds\n");
        for r in &self.rows {
            let order = r.order_est.map(|o| format!("{o:.4}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:.6e},{:.6e},{:.6e},{:.6e},{},{:.3}\n",
                r.l, r.h, r.err_v, r.err_vprime, r.err_omega, order, r.seconds
            ));
        }
        out
    }
}

/// Samples per rescaled period of the sup-grid error measurement.
pub const ERROR_GRID: usize = 2000;

/// Find the upward crossing of the section on the solved profile `v` in
/// rescaled time `[0, 1)`.
fn solution_crossing(v: &CandidateSolution, section: Section) -> Result<f64> {
    let k = section.component;
    let n = 2000;
    for i in 0..n {
        let (a, b) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
        let (ya, yb) = (v.value(a)?[k] - section.level, v.value(b)?[k] - section.level);
        if ya < 0.0 && yb >= 0.0 {
            return bisect_crossing(a, b, section.level, |t| Ok(v.value(t)?[k]));
        }
    }
    Err(Error::NoCycleDetected("no upward section crossing on the solved profile".into()))
}

/// Reference orbit reparametrized by physical phase past its own upward
/// section crossing.
enum RefKind {
    Exact { value: Profile, derivative: Profile, origin: f64 },
    Orbit(ReferenceOrbit),
}

struct ReferenceProfile {
    omega: f64,
    kind: RefKind,
}

impl ReferenceProfile {
    fn value(&self, s: f64) -> Result<DVector<f64>> {
        match &self.kind {
            RefKind::Exact { value, origin, .. } => Ok(value(origin + s)),
            RefKind::Orbit(orbit) => orbit.value(s),
        }
    }

    fn derivative(&self, s: f64) -> Result<DVector<f64>> {
        match &self.kind {
            RefKind::Exact { derivative, origin, .. } => Ok(derivative(origin + s)),
            RefKind::Orbit(orbit) => orbit.derivative(s),
        }
    }
}

fn build_reference(cp: &CatalogProblem, reference: &ReferenceSource) -> Result<ReferenceProfile> {
    match reference {
        ReferenceSource::Oracle { dt, t_transient } => {
            let orbit =
                extract_reference_orbit(&cp.problem, &cp.history, *t_transient, cp.section, *dt)?;
            Ok(ReferenceProfile { omega: orbit.period, kind: RefKind::Orbit(orbit) })
        }
        ReferenceSource::Exact => {
            let exact = cp.exact.as_ref().ok_or_else(|| {
                Error::InvalidMesh(format!("problem '{}' has no closed-form orbit", cp.name))
            })?;
            let omega = exact.omega;
            let k = cp.section.component;
            let level = cp.section.level;
            let n = 4096;
            let mut origin = None;
            for i in 0..n {
                let (a, b) = (omega * i as f64 / n as f64, omega * (i + 1) as f64 / n as f64);
                if (exact.value)(a)[k] - level < 0.0 && (exact.value)(b)[k] - level >= 0.0 {
                    let value = exact.value.clone();
                    origin = Some(bisect_crossing(a, b, level, move |t| Ok(value(t)[k]))?);
                    break;
                }
            }
            let origin = origin.ok_or_else(|| {
                Error::NoCycleDetected("exact orbit never crosses its section".into())
            })?;
            Ok(ReferenceProfile {
                omega,
                kind: RefKind::Exact {
                    value: exact.value.clone(),
                    derivative: exact.derivative.clone(),
                    origin,
                },
            })
        }
    }
}

/// Solve one level and measure sup-grid errors against the reference,
/// phase-aligned at the section crossing. `order_est` is left empty.
fn measure_level(
    cp: &CatalogProblem,
    m: usize,
    m_quadrature: usize,
    l: usize,
    reference: &ReferenceProfile,
) -> Result<ConvergenceRow> {
    let start = std::time::Instant::now();
    let phase = PhaseCondition::Trivial { component: cp.phase_component, level: cp.phase_level };
    let mut cfg = SolveConfig::new(l, m);
    cfg.m_quadrature = m_quadrature;
    let (v, omega, _) = solve_periodic(&cp.problem, &cp.guess, &phase, &cfg)?;
    let shift = solution_crossing(&v, cp.section)?;
    let mut err_v = 0.0f64;
    let mut err_vprime = 0.0f64;
    for i in 0..=ERROR_GRID {
        let t = i as f64 / ERROR_GRID as f64;
        let s = (t - shift).rem_euclid(1.0) * reference.omega;
        err_v = err_v.max((v.value(t)? - reference.value(s)?).amax());
        err_vprime = err_vprime.max((v.derivative(t)? / omega - reference.derivative(s)?).amax());
    }
    Ok(ConvergenceRow {
        l,
        h: 1.0 / l as f64,
        err_v,
        err_vprime,
        err_omega: (omega - reference.omega).abs(),
        order_est: None,
        seconds: start.elapsed().as_secs_f64(),
        shift,
    })
}

/// Run `solve_periodic` across the levels of `l_list` and measure sup-grid
/// profile and period errors against the reference, phase-aligned at the
/// section crossing. Levels are solved on up to `threads` worker threads
/// (each level is independent; rows are always reported in `l_list` order,
/// so the output is deterministic apart from the timing column).
pub fn run_convergence_study(
    cp: &CatalogProblem,
    m: usize,
    l_list: &[usize],
    m_quadrature: usize,
    reference: &ReferenceSource,
    threads: usize,
) -> Result<ConvergenceReport> {
    if l_list.is_empty() {
        return Err(Error::InvalidMesh("convergence study needs at least one level".into()));
    }
    for w in l_list.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidMesh(format!(
                "levels must be strictly increasing, got {} after {}",
                w[1], w[0]
            )));
        }
    }
    let reference = build_reference(cp, reference)?;

    let workers = threads.max(1).min(l_list.len());
    let mut results: Vec<Option<Result<ConvergenceRow>>> = Vec::new();
    if workers <= 1 {
        for &l in l_list {
            results.push(Some(measure_level(cp, m, m_quadrature, l, &reference)));
        }
    } else {
        let slots =
            std::sync::Mutex::new((0..l_list.len()).map(|_| None).collect::<Vec<_>>());
        std::thread::scope(|scope| {
            for w in 0..workers {
                let slots = &slots;
                let reference = &reference;
                scope.spawn(move || {
                    for (i, &l) in l_list.iter().enumerate().skip(w).step_by(workers) {
                        let row = measure_level(cp, m, m_quadrature, l, reference);
                        slots.lock().unwrap()[i] = Some(row);
                    }
                });
            }
        });
        results = slots.into_inner().unwrap();
    }

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(l_list.len());
    for slot in results {
        let mut row = slot.expect("every level is measured")?;
        row.order_est = rows.last().map(|prev| {
            let eps_prev = prev.err_v.max(prev.err_omega);
            let eps = row.err_v.max(row.err_omega);
            (eps_prev / eps).log2() / (row.l as f64 / prev.l as f64).log2()
        });
        rows.push(row);
    }
    Ok(ConvergenceReport { problem: cp.name.clone(), m, omega_ref: reference.omega, rows })
}
