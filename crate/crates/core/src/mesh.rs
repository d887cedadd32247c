//! Primary discretization: uniform outer meshes, inner collocation abscissae,
//! piecewise Lagrange interpolation, restriction/prolongation and exact
//! piecewise integration.
//!
//! The derivative unknowns live on `[0, 1]` (the `Plus` side), the initial
//! state on `[-1, 0]` (the `Minus` side). Each outer interval carries the same
//! inner abscissae `0 < c_1 < ... < c_m < 1` plus the interval's left endpoint
//! as the extra interpolation node, so a piecewise polynomial of degree `m` is
//! determined by `1 + L*m` node values and continuity.

use crate::error::{Error, Result};
use nalgebra::DVector;

/// Which half of `[-1, 1]` a mesh covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `[0, 1]`
    Plus,
    /// `[-1, 0]`
    Minus,
}

impl Side {
    pub fn domain(self) -> (f64, f64) {
        match self {
            Side::Plus => (0.0, 1.0),
            Side::Minus => (-1.0, 0.0),
        }
    }
}

/// Uniform outer mesh with `L` intervals.
#[derive(Clone, Debug)]
pub struct OuterMesh {
    pub side: Side,
    pub l: usize,
    pub h: f64,
    pub nodes: Vec<f64>,
}

/// `outer_mesh(L, side)`: the uniform mesh with `h = 1/L`.
pub fn outer_mesh(l: usize, side: Side) -> Result<OuterMesh> {
    if l < 1 {
        return Err(Error::InvalidMesh("outer mesh needs L >= 1".into()));
    }
    let h = 1.0 / l as f64;
    let (a, b) = side.domain();
    let mut nodes: Vec<f64> = (0..=l).map(|i| a + i as f64 * h).collect();
    nodes[l] = b; // exact endpoint
    Ok(OuterMesh { side, l, h, nodes })
}

/// Family of inner collocation abscissae.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbscissaeFamily {
    GaussLegendre,
    Chebyshev,
    Custom,
}

impl AbscissaeFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            AbscissaeFamily::GaussLegendre => "gauss-legendre",
            AbscissaeFamily::Chebyshev => "chebyshev",
            AbscissaeFamily::Custom => "custom",
        }
    }
}

/// Inner abscissae, strictly interior to `(0, 1)` and strictly increasing.
#[derive(Clone, Debug)]
pub struct InnerAbscissae {
    pub m: usize,
    pub c: Vec<f64>,
    pub family: AbscissaeFamily,
}

fn check_interior(c: &[f64]) -> Result<()> {
    let mut prev = 0.0;
    for &ci in c {
        if ci <= prev || ci >= 1.0 {
            return Err(Error::InvalidMesh(format!(
                "abscissae must satisfy 0 < c_1 < ... < c_m < 1, got {c:?}"
            )));
        }
        prev = ci;
    }
    Ok(())
}

/// `inner_abscissae(m, family)`: Gauss–Legendre or Chebyshev abscissae shifted
/// to `(0, 1)`.
pub fn inner_abscissae(m: usize, family: AbscissaeFamily) -> Result<InnerAbscissae> {
    if m < 1 {
        return Err(Error::InvalidMesh("inner abscissae need m >= 1".into()));
    }
    let c = match family {
        AbscissaeFamily::GaussLegendre => gauss_legendre(m).0,
        AbscissaeFamily::Chebyshev => (1..=m)
            .map(|j| (1.0 - ((2 * j - 1) as f64 * std::f64::consts::PI / (2 * m) as f64).cos()) / 2.0)
            .collect(),
        AbscissaeFamily::Custom => {
            return Err(Error::InvalidMesh(
                "custom abscissae must be supplied through InnerAbscissae::custom".into(),
            ))
        }
    };
    check_interior(&c)?;
    Ok(InnerAbscissae { m, c, family })
}

impl InnerAbscissae {
    /// User-supplied abscissae; rejected unless strictly interior and increasing.
    pub fn custom(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::InvalidMesh("inner abscissae need m >= 1".into()));
        }
        check_interior(&c)?;
        Ok(InnerAbscissae { m: c.len(), c, family: AbscissaeFamily::Custom })
    }

    /// Interpolation nodes on the reference interval: `{0} ∪ {c_1, ..., c_m}`.
    pub fn reference_nodes(&self) -> Vec<f64> {
        let mut nodes = Vec::with_capacity(self.m + 1);
        nodes.push(0.0);
        nodes.extend_from_slice(&self.c);
        nodes
    }
}

/// Gauss–Legendre nodes and weights on `(0, 1)`; weights sum to 1.
///
/// Nodes are found by Newton iteration on the Legendre polynomial of degree
/// `n`, converged to machine precision.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // initial guess on [-1, 1]
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = (1.0 + x) / 2.0;
        weights[n - 1 - i] = w / 2.0;
    }
    (nodes, weights)
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn check_distinct(nodes: &[f64]) -> Result<()> {
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if (nodes[i] - nodes[j]).abs() < 1e-14 {
                return Err(Error::InvalidMesh(format!(
                    "duplicate interpolation abscissae at {}",
                    nodes[i]
                )));
            }
        }
    }
    Ok(())
}

/// Lagrange basis values `ℓ_j(t)` for the given nodes.
pub fn lagrange_weights(nodes: &[f64], t: f64) -> Result<Vec<f64>> {
    check_distinct(nodes)?;
    let n = nodes.len();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut prod = 1.0;
        for k in 0..n {
            if k != j {
                prod *= (t - nodes[k]) / (nodes[j] - nodes[k]);
            }
        }
        out[j] = prod;
    }
    Ok(out)
}

/// Derivatives `ℓ'_j(t)` of the Lagrange basis for the given nodes.
pub fn lagrange_deriv_weights(nodes: &[f64], t: f64) -> Result<Vec<f64>> {
    check_distinct(nodes)?;
    let n = nodes.len();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut sum = 0.0;
        for i in 0..n {
            if i == j {
                continue;
            }
            let mut prod = 1.0 / (nodes[j] - nodes[i]);
            for k in 0..n {
                if k != j && k != i {
                    prod *= (t - nodes[k]) / (nodes[j] - nodes[k]);
                }
            }
            sum += prod;
        }
        out[j] = sum;
    }
    Ok(out)
}

/// Number of sample points used for the Lebesgue-constant estimates.
///
/// The constants are estimated by dense sampling on a uniform grid, so they
/// are lower bounds accurate to within the grid resolution.
pub const LEBESGUE_SAMPLES: usize = 10_001;

/// `(Λ_m, Λ'_m)` for the given interpolation nodes, by dense sampling of
/// `max Σ|ℓ_j|` and `max Σ|ℓ'_j|` over `[0, 1]`.
pub fn lebesgue_constants(nodes: &[f64]) -> Result<(f64, f64)> {
    check_distinct(nodes)?;
    let mut lam = 0.0f64;
    let mut lam_d = 0.0f64;
    for s in 0..LEBESGUE_SAMPLES {
        let t = s as f64 / (LEBESGUE_SAMPLES - 1) as f64;
        let w = lagrange_weights(nodes, t)?;
        let dw = lagrange_deriv_weights(nodes, t)?;
        lam = lam.max(w.iter().map(|x| x.abs()).sum());
        lam_d = lam_d.max(dw.iter().map(|x| x.abs()).sum());
    }
    Ok((lam, lam_d))
}

/// Node values `(x(left endpoint), x(t_{1,1}), ..., x(t_{L,m}))` in `R^d`,
/// stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeVector {
    pub dim: usize,
    pub l: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl NodeVector {
    pub fn zeros(dim: usize, l: usize, m: usize) -> Self {
        NodeVector { dim, l, m, data: vec![0.0; (1 + l * m) * dim] }
    }

    pub fn n_nodes(&self) -> usize {
        1 + self.l * self.m
    }

    pub fn node(&self, a: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.data[a * self.dim..(a + 1) * self.dim])
    }

    pub fn set_node(&mut self, a: usize, v: &DVector<f64>) {
        self.data[a * self.dim..(a + 1) * self.dim].copy_from_slice(v.as_slice());
    }
}

/// Times of all defining nodes, in storage order.
pub fn node_times(mesh: &OuterMesh, abscissae: &InnerAbscissae) -> Vec<f64> {
    let mut times = Vec::with_capacity(1 + mesh.l * abscissae.m);
    times.push(mesh.nodes[0]);
    for i in 0..mesh.l {
        for &c in &abscissae.c {
            times.push(mesh.nodes[i] + c * mesh.h);
        }
    }
    times
}

/// `ρ_L^±`: sample a function at the left endpoint and all inner nodes.
pub fn restrict<F>(f: F, mesh: &OuterMesh, abscissae: &InnerAbscissae) -> Result<NodeVector>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let times = node_times(mesh, abscissae);
    let first = f(times[0])?;
    let dim = first.len();
    let mut nv = NodeVector::zeros(dim, mesh.l, abscissae.m);
    nv.set_node(0, &first);
    for (a, &t) in times.iter().enumerate().skip(1) {
        nv.set_node(a, &f(t)?);
    }
    Ok(nv)
}

/// Continuous piecewise polynomial of degree `m` over a uniform outer mesh.
///
/// Stored as the full set of `m+1` node values per interval on the reference
/// nodes `{0, c_1, ..., c_m}`; the left-endpoint value of interval `i > 1` is
/// the previous interval evaluated at its right endpoint, which is what makes
/// the interpolant the unique continuous element matching the `1 + L*m`
/// defining values.
#[derive(Clone, Debug)]
pub struct PiecewisePolynomial {
    pub mesh: OuterMesh,
    pub dim: usize,
    /// reference nodes `{0, c_1, ..., c_m}`
    pub ref_nodes: Vec<f64>,
    /// `vals[(i*(m+1) + j)*dim + c]` = component `c` at node `j` of interval `i`
    vals: Vec<f64>,
}

impl PiecewisePolynomial {
    pub fn degree(&self) -> usize {
        self.ref_nodes.len() - 1
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (a, b) = self.mesh.side.domain();
        if t < a - 1e-12 || t > b + 1e-12 {
            return Err(Error::Domain { what: "piecewise polynomial", value: t, lo: a, hi: b });
        }
        let tt = t.clamp(a, b);
        let i = (((tt - a) / self.mesh.h) as usize).min(self.mesh.l - 1);
        let s = (tt - self.mesh.nodes[i]) / self.mesh.h;
        Ok((i, s))
    }

    fn interval_vals(&self, i: usize) -> &[f64] {
        let np = self.ref_nodes.len();
        &self.vals[i * np * self.dim..(i + 1) * np * self.dim]
    }

    pub fn value(&self, t: f64) -> Result<DVector<f64>> {
        let (i, s) = self.locate(t)?;
        let w = lagrange_weights(&self.ref_nodes, s)?;
        Ok(self.combine(i, &w))
    }

    /// First derivative; taken from the right at interval boundaries (the
    /// boundary belongs to the interval on its right, except at the domain's
    /// right endpoint).
    pub fn derivative(&self, t: f64) -> Result<DVector<f64>> {
        let (i, s) = self.locate(t)?;
        let dw = lagrange_deriv_weights(&self.ref_nodes, s)?;
        Ok(self.combine(i, &dw) / self.mesh.h)
    }

    fn combine(&self, i: usize, w: &[f64]) -> DVector<f64> {
        let vals = self.interval_vals(i);
        let mut out = DVector::zeros(self.dim);
        for (j, &wj) in w.iter().enumerate() {
            for c in 0..self.dim {
                out[c] += wj * vals[j * self.dim + c];
            }
        }
        out
    }
}

/// `π_L^±`: the unique continuous piecewise polynomial of degree `m` matching
/// the node values.
pub fn prolong(
    values: &NodeVector,
    mesh: &OuterMesh,
    abscissae: &InnerAbscissae,
) -> Result<PiecewisePolynomial> {
    if values.l != mesh.l || values.m != abscissae.m {
        return Err(Error::InvalidMesh(format!(
            "node vector shape (L={}, m={}) does not match mesh (L={}, m={})",
            values.l, values.m, mesh.l, abscissae.m
        )));
    }
    let d = values.dim;
    let m = abscissae.m;
    let np = m + 1;
    let ref_nodes = abscissae.reference_nodes();
    // basis values at the right endpoint, for chaining continuity
    let w_right = lagrange_weights(&ref_nodes, 1.0)?;
    let mut vals = vec![0.0; mesh.l * np * d];
    let mut left = values.node(0);
    for i in 0..mesh.l {
        let base = i * np * d;
        vals[base..base + d].copy_from_slice(left.as_slice());
        for j in 1..=m {
            let a = 1 + i * m + (j - 1);
            let src = &values.data[a * d..(a + 1) * d];
            vals[base + j * d..base + (j + 1) * d].copy_from_slice(src);
        }
        let mut next = DVector::zeros(d);
        for j in 0..np {
            for c in 0..d {
                next[c] += w_right[j] * vals[base + j * d + c];
            }
        }
        left = next;
    }
    Ok(PiecewisePolynomial { mesh: mesh.clone(), dim: d, ref_nodes, vals })
}

/// Number of sample points per outer interval used by [`interpolation_error`];
/// enough to resolve the oscillatory error envelope at any `L`.
pub const ERROR_SAMPLES_PER_INTERVAL: usize = 50;

/// Sup-norm error of the per-interval degree-`m` interpolant of `f` at the
/// reference nodes `{0, c_1, ..., c_m}` of each interval, the quantity
/// governed by the Cauchy remainder: `O(h^{m+1})` for smooth `f`.
///
/// Each interval uses the true value `f(t_{i-1})` at its left endpoint. The
/// continuous prolongation of a restricted node vector is a different object:
/// there the left-endpoint value of interval `i > 1` is inherited from the
/// previous interval, and for even `m` the inherited errors accumulate across
/// intervals, costing one order in `h` (for Gauss abscissae `ℓ_0(1) = (-1)^m`,
/// so odd `m` alternates and cancels while even `m` adds up).
pub fn interpolation_error<F>(f: F, mesh: &OuterMesh, abscissae: &InnerAbscissae) -> Result<f64>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let ref_nodes = abscissae.reference_nodes();
    let np = ref_nodes.len();
    let mut err = 0.0f64;
    for i in 0..mesh.l {
        let left = mesh.nodes[i];
        let nodal: Vec<DVector<f64>> =
            ref_nodes.iter().map(|&s| f(left + s * mesh.h)).collect::<Result<_>>()?;
        for s in 0..=ERROR_SAMPLES_PER_INTERVAL {
            let loc = s as f64 / ERROR_SAMPLES_PER_INTERVAL as f64;
            let w = lagrange_weights(&ref_nodes, loc)?;
            let mut p = DVector::zeros(nodal[0].len());
            for j in 0..np {
                p += &nodal[j] * w[j];
            }
            err = err.max((p - f(left + loc * mesh.h)?).amax());
        }
    }
    Ok(err)
}

/// Antiderivative `q(t) = ∫_a^t p(s) ds` of a piecewise polynomial, exact.
///
/// Stored as accumulated interval integrals plus the integrated Lagrange basis
/// of `p`; `q` has degree `m+1` and `q(a) = 0` at the domain's left endpoint.
#[derive(Clone, Debug)]
pub struct Antiderivative {
    base: PiecewisePolynomial,
    /// monomial coefficients of `B_j(s) = ∫_0^s ℓ_j`, one polynomial per basis
    int_basis: Vec<Vec<f64>>,
    /// accumulated integral at each outer node, `(L+1) * dim`
    cumulative: Vec<f64>,
}

fn monomial_coefficients(nodes: &[f64], j: usize) -> Vec<f64> {
    // expand Π_{k≠j} (t - c_k)/(c_j - c_k)
    let mut coeffs = vec![1.0];
    for (k, &ck) in nodes.iter().enumerate() {
        if k == j {
            continue;
        }
        let denom = nodes[j] - ck;
        let mut next = vec![0.0; coeffs.len() + 1];
        for (p, &cp) in coeffs.iter().enumerate() {
            next[p] += cp * (-ck) / denom;
            next[p + 1] += cp / denom;
        }
        coeffs = next;
    }
    coeffs
}

fn integrate_coefficients(coeffs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; coeffs.len() + 1];
    for (p, &cp) in coeffs.iter().enumerate() {
        out[p + 1] = cp / (p + 1) as f64;
    }
    out
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Exact antiderivative of `p`, vanishing at the left endpoint of its domain.
pub fn antiderivative(p: &PiecewisePolynomial) -> Antiderivative {
    let np = p.ref_nodes.len();
    let d = p.dim;
    let int_basis: Vec<Vec<f64>> = (0..np)
        .map(|j| integrate_coefficients(&monomial_coefficients(&p.ref_nodes, j)))
        .collect();
    // B_j(1): integral of each basis over the reference interval
    let b_one: Vec<f64> = int_basis.iter().map(|b| horner(b, 1.0)).collect();
    let mut cumulative = vec![0.0; (p.mesh.l + 1) * d];
    for i in 0..p.mesh.l {
        let vals = p.interval_vals(i);
        for c in 0..d {
            let mut integral = 0.0;
            for j in 0..np {
                integral += b_one[j] * vals[j * d + c];
            }
            cumulative[(i + 1) * d + c] = cumulative[i * d + c] + p.mesh.h * integral;
        }
    }
    Antiderivative { base: p.clone(), int_basis, cumulative }
}

impl Antiderivative {
    pub fn value(&self, t: f64) -> Result<DVector<f64>> {
        let (i, s) = self.base.locate(t)?;
        let vals = self.base.interval_vals(i);
        let d = self.base.dim;
        let mut out = DVector::zeros(d);
        for (j, b) in self.int_basis.iter().enumerate() {
            let bj = horner(b, s);
            for c in 0..d {
                out[c] += bj * vals[j * d + c];
            }
        }
        for c in 0..d {
            out[c] = self.cumulative[i * d + c] + self.base.mesh.h * out[c];
        }
        Ok(out)
    }

    /// `q'(t) = p(t)`.
    pub fn derivative(&self, t: f64) -> Result<DVector<f64>> {
        self.base.value(t)
    }
}
