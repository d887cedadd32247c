//! The Green operator of `v' = u` on `[0, 1]` with initial state `ψ` on
//! `[-1, 0]`: `𝒢(u, ψ)(t) = ψ(0) + ∫_0^t u` for `t ≥ 0` and `ψ(t)` for
//! `t < 0`. Applied to prolonged node vectors it is evaluated exactly, since
//! the antiderivative of a piecewise polynomial is itself a piecewise
//! polynomial (one degree higher).

use crate::error::{Error, Result};
use crate::mesh::{
    antiderivative, outer_mesh, prolong, restrict, Antiderivative, InnerAbscissae, NodeVector,
    OuterMesh, PiecewisePolynomial, Side,
};
use nalgebra::DVector;

/// The image `v = 𝒢(u, ψ)` of a pair of node vectors, evaluable with value
/// and right derivative anywhere on `[-1, 1]`.
#[derive(Clone)]
pub struct CandidateSolution {
    pub psi: PiecewisePolynomial,
    pub u: PiecewisePolynomial,
    /// `∫_0^t u`, exact degree-(m+1) piecewise polynomial
    integral: Antiderivative,
    /// `ψ(0)`, the junction value
    psi_zero: DVector<f64>,
}

/// `𝒢(u, ψ)` for node vectors of matching shape.
pub fn green_apply(
    u: &NodeVector,
    psi: &NodeVector,
    abscissae: &InnerAbscissae,
) -> Result<CandidateSolution> {
    if u.l != psi.l || u.m != psi.m || u.dim != psi.dim {
        return Err(Error::InvalidMesh(format!(
            "mismatched node vectors: u (L={}, m={}, d={}) vs psi (L={}, m={}, d={})",
            u.l, u.m, u.dim, psi.l, psi.m, psi.dim
        )));
    }
    if u.m != abscissae.m {
        return Err(Error::InvalidMesh(format!(
            "node vectors have m={} but abscissae have m={}",
            u.m, abscissae.m
        )));
    }
    let plus = outer_mesh(u.l, Side::Plus)?;
    let minus = outer_mesh(u.l, Side::Minus)?;
    let u_poly = prolong(u, &plus, abscissae)?;
    let psi_poly = prolong(psi, &minus, abscissae)?;
    let integral = antiderivative(&u_poly);
    let psi_zero = psi_poly.value(0.0)?;
    Ok(CandidateSolution { psi: psi_poly, u: u_poly, integral, psi_zero })
}

impl CandidateSolution {
    pub fn dim(&self) -> usize {
        self.psi.dim
    }

    pub fn psi_zero(&self) -> &DVector<f64> {
        &self.psi_zero
    }

    /// `v(t)` for `t ∈ [-1, 1]`.
    pub fn value(&self, t: f64) -> Result<DVector<f64>> {
        if t < -1.0 - 1e-12 || t > 1.0 + 1e-12 {
            return Err(Error::Domain { what: "candidate solution", value: t, lo: -1.0, hi: 1.0 });
        }
        if t < 0.0 {
            self.psi.value(t)
        } else {
            Ok(&self.psi_zero + self.integral.value(t.min(1.0))?)
        }
    }

    /// Right derivative of `v`; equals `u(t)` on `[0, 1]` and `ψ'(t)` on
    /// `[-1, 0)`.
    pub fn derivative(&self, t: f64) -> Result<DVector<f64>> {
        if t < -1.0 - 1e-12 || t > 1.0 + 1e-12 {
            return Err(Error::Domain { what: "candidate solution", value: t, lo: -1.0, hi: 1.0 });
        }
        if t < 0.0 {
            self.psi.derivative(t)
        } else {
            self.u.value(t.min(1.0))
        }
    }

    /// The rescaled state at time `t`: `σ ↦ v(t + σ/ω)` for `σ ∈ [-τ, 0]`.
    /// The argument stays in `[-1, 1]` whenever `τ ≤ ω` and `t ∈ [0, 1]`.
    pub fn state_fn(
        &self,
        t: f64,
        omega: f64,
        tau: f64,
    ) -> Result<impl Fn(f64) -> Result<DVector<f64>> + '_> {
        if omega < tau {
            return Err(Error::PeriodBelowDelay { omega, tau });
        }
        if !(-1e-12..=1.0 + 1e-12).contains(&t) {
            return Err(Error::Domain { what: "state time", value: t, lo: 0.0, hi: 1.0 });
        }
        Ok(move |sigma: f64| self.value(t + sigma / omega))
    }

    /// Breakpoints of the state `σ ↦ v(t + σ/ω)` on `(-τ, 0)`: the images of
    /// the mesh nodes of `v` that fall inside the lookback window. Quadratures
    /// over the state should split at these points.
    pub fn state_breakpoints(&self, t: f64, omega: f64, tau: f64) -> Vec<f64> {
        let mut breaks = Vec::new();
        let l = self.psi.mesh.l + self.u.mesh.l;
        for i in 0..=l {
            let node = -1.0 + 2.0 * i as f64 / l as f64;
            let sigma = omega * (node - t);
            if sigma > -tau + 1e-12 && sigma < -1e-12 {
                breaks.push(sigma);
            }
        }
        breaks
    }
}

/// `ρ_L^-` applied to `θ ↦ v(1 + θ)`: the state at the end of the period,
/// sampled on the Minus mesh. Its first entry is `v(0)`.
pub fn final_state(
    v: &CandidateSolution,
    minus: &OuterMesh,
    abscissae: &InnerAbscissae,
) -> Result<NodeVector> {
    restrict(|theta| v.value(1.0 + theta), minus, abscissae)
}
