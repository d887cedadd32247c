//! Command-line front end: problem selection, the solve / converge / floquet
//! / continue / integrate subcommands, JSON solution persistence and CSV
//! report emission. File formats are documented in `docs/formats.md`.

use crate::catalog;
use crate::error::{Error, Result};
use crate::floquet::{build_linearized_operator, monodromy_matrix, multipliers_and_check};
use crate::greens::{green_apply, CandidateSolution};
use crate::mesh::{inner_abscissae, AbscissaeFamily, InnerAbscissae, NodeVector};
use crate::oracle::{integrate_method_of_steps, run_convergence_study, ReferenceSource};
use crate::solver::{
    initial_unknowns, solve_periodic, Discretization, PhaseCondition, SolveConfig, SolveReport,
    amplitude, continue_natural,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Version of the JSON solution schema written by `solve`.
pub const SCHEMA_VERSION: u32 = 1;

/// A solved periodic orbit in portable form. Serialization uses shortest
/// round-trip decimal representation, so save and load reproduce every
/// numeric field bit-exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub schema_version: u32,
    pub problem: String,
    pub params: BTreeMap<String, f64>,
    pub dim: usize,
    pub tau: f64,
    pub l: usize,
    pub m: usize,
    pub m_quadrature: usize,
    pub abscissae_family: String,
    pub abscissae: Vec<f64>,
    pub omega: f64,
    /// derivative node values, node-major, length `(1 + Lm) d`
    pub u: Vec<f64>,
    /// history node values, node-major, length `(1 + Lm) d`
    pub psi: Vec<f64>,
    pub residual_norm: f64,
    pub newton_iterations: usize,
    pub converged: bool,
}

/// Write a solution as UTF-8 JSON with stable key order.
pub fn save_solution(path: &Path, file: &SolutionFile) -> Result<()> {
    let mut text = serde_json::to_string_pretty(file)
        .map_err(|e| Error::Malformed(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Read a solution back, validating the schema version and the shape
/// consistency of every array.
pub fn load_solution(path: &Path) -> Result<SolutionFile> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Malformed(format!("{e}")))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Malformed("missing schema_version".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::Schema { found: found as u32, supported: SCHEMA_VERSION });
    }
    let file: SolutionFile =
        serde_json::from_value(value).map_err(|e| Error::Malformed(format!("{e}")))?;
    let n = (1 + file.l * file.m) * file.dim;
    if file.u.len() != n || file.psi.len() != n {
        return Err(Error::Malformed(format!(
            "node arrays must have length (1 + Lm) d = {n}, got u: {}, psi: {}",
            file.u.len(),
            file.psi.len()
        )));
    }
    if file.abscissae.len() != file.m {
        return Err(Error::Malformed(format!(
            "expected {} abscissae, got {}",
            file.m,
            file.abscissae.len()
        )));
    }
    if !(file.tau > 0.0) || !(file.omega > 0.0) || file.dim == 0 || file.l == 0 {
        return Err(Error::Malformed("non-positive dimensions in solution file".into()));
    }
    Ok(file)
}

/// Rebuild the collocation abscissae stored in a solution file.
fn abscissae_of(file: &SolutionFile) -> Result<InnerAbscissae> {
    match file.abscissae_family.as_str() {
        "gauss-legendre" => inner_abscissae(file.m, AbscissaeFamily::GaussLegendre),
        "chebyshev" => inner_abscissae(file.m, AbscissaeFamily::Chebyshev),
        "custom" => InnerAbscissae::custom(file.abscissae.clone()),
        other => Err(Error::Malformed(format!("unknown abscissae family '{other}'"))),
    }
}

/// Rebuild the continuous orbit representation from a solution file.
pub fn reconstruct_solution(file: &SolutionFile) -> Result<CandidateSolution> {
    let abscissae = abscissae_of(file)?;
    let mut u = NodeVector::zeros(file.dim, file.l, file.m);
    let mut psi = NodeVector::zeros(file.dim, file.l, file.m);
    u.data.copy_from_slice(&file.u);
    psi.data.copy_from_slice(&file.psi);
    green_apply(&u, &psi, &abscissae)
}

/// Parsed command line.
#[derive(Parser, Debug)]
#[command(
    name = "rfde",
    about = "Periodic solutions of retarded functional differential equations \
             by piecewise orthogonal collocation",
    version
)]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
}

fn parse_kv(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    let v: f64 = v.parse().map_err(|_| format!("'{v}' is not a number"))?;
    Ok((k.to_string(), v))
}

#[derive(Args, Debug)]
pub struct ProblemArgs {
    /// catalog problem name (logistic, mms, dist-logistic)
    #[arg(long)]
    problem: String,
    /// parameter override, repeatable (e.g. --param r=2.1)
    #[arg(long = "param", value_parser = parse_kv)]
    params: Vec<(String, f64)>,
}

impl ProblemArgs {
    fn overrides(&self) -> BTreeMap<String, f64> {
        self.params.iter().cloned().collect()
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve for a periodic orbit and write it as JSON
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        /// number of mesh intervals
        #[arg(long = "L")]
        l: usize,
        /// collocation degree
        #[arg(long)]
        m: usize,
        /// Gauss points per smooth segment of distributed-delay integrals
        #[arg(long = "M", default_value_t = 20)]
        m_quadrature: usize,
        /// phase condition: 'trivial:k=K,level=Y' or 'integral'
        /// (default: the catalog problem's trivial condition)
        #[arg(long)]
        phase: Option<String>,
        /// Newton residual tolerance
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence study over a list of mesh levels, written as CSV
    Converge {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        m: usize,
        /// comma-separated strictly increasing mesh levels, e.g. 10,20,40
        #[arg(long = "L", value_delimiter = ',', required = true)]
        l_list: Vec<usize>,
        #[arg(long = "M", default_value_t = 20)]
        m_quadrature: usize,
        /// error reference: 'exact' (closed-form orbit) or 'oracle'
        /// (method-of-steps integration)
        #[arg(long, default_value = "exact")]
        reference: String,
        /// oracle integrator step size
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// oracle transient time before cycle extraction
        #[arg(long = "t-transient", default_value_t = 200.0)]
        t_transient: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Floquet multipliers of a saved solution, written as CSV
    Floquet {
        /// JSON solution produced by `solve`
        #[arg(long)]
        solution: PathBuf,
        /// modulus distance to the unit circle below which a multiplier is
        /// flagged as critical
        #[arg(long, default_value_t = crate::floquet::UNIT_CIRCLE_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Natural-parameter continuation sweep, written as CSV
    Continue {
        #[command(flatten)]
        problem: ProblemArgs,
        /// name of the swept parameter
        #[arg(long)]
        sweep: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        /// number of sweep points (>= 2, endpoints included)
        #[arg(long)]
        steps: usize,
        #[arg(long = "L", default_value_t = 20)]
        l: usize,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long = "M", default_value_t = 20)]
        m_quadrature: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Method-of-steps time integration, trajectory written as CSV
    Integrate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long = "t-end")]
        t_end: f64,
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Thread cap for internally parallel commands: `RFDE_THREADS` if set,
/// otherwise the number of logical processors.
pub fn thread_cap() -> usize {
    match std::env::var("RFDE_THREADS") {
        Ok(s) => s.parse().unwrap_or(1).max(1),
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

fn parse_phase(
    spec: &str,
    cp: &catalog::CatalogProblem,
    cfg: &SolveConfig,
) -> Result<PhaseCondition> {
    if spec == "integral" {
        // integral phase against the initial guess as the reference orbit
        let disc = Discretization::new(cfg.l, cfg.m, cfg.family)?;
        let x0 = initial_unknowns(&cp.guess, cp.problem.tau, &disc)?;
        let reference = green_apply(&x0.u, &x0.psi, &disc.abscissae)?;
        return Ok(PhaseCondition::Integral { reference });
    }
    if let Some(rest) = spec.strip_prefix("trivial:") {
        let mut component = cp.phase_component;
        let mut level = cp.phase_level;
        for part in rest.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("bad phase clause '{part}'")))?;
            match key.trim() {
                "k" => {
                    component = value.trim().parse().map_err(|_| {
                        Error::Malformed(format!("bad phase component '{value}'"))
                    })?
                }
                "level" => {
                    level = value
                        .trim()
                        .parse()
                        .map_err(|_| Error::Malformed(format!("bad phase level '{value}'")))?
                }
                other => {
                    return Err(Error::Malformed(format!("unknown phase key '{other}'")));
                }
            }
        }
        if component >= cp.problem.dim {
            return Err(Error::Malformed(format!(
                "phase component {component} out of range for dimension {}",
                cp.problem.dim
            )));
        }
        return Ok(PhaseCondition::Trivial { component, level });
    }
    if spec == "trivial" {
        return Ok(PhaseCondition::Trivial {
            component: cp.phase_component,
            level: cp.phase_level,
        });
    }
    Err(Error::Malformed(format!(
        "unknown phase condition '{spec}' (expected 'trivial[:k=K,level=Y]' or 'integral')"
    )))
}

fn solution_file(
    cp: &catalog::CatalogProblem,
    params: BTreeMap<String, f64>,
    cfg: &SolveConfig,
    omega: f64,
    report: &SolveReport,
) -> Result<SolutionFile> {
    let abscissae = inner_abscissae(cfg.m, cfg.family)?;
    Ok(SolutionFile {
        schema_version: SCHEMA_VERSION,
        problem: cp.name.clone(),
        params,
        dim: cp.problem.dim,
        tau: cp.problem.tau,
        l: cfg.l,
        m: cfg.m,
        m_quadrature: cfg.m_quadrature,
        abscissae_family: abscissae.family.as_str().to_string(),
        abscissae: abscissae.c.clone(),
        omega,
        u: report.solution.u.data.clone(),
        psi: report.solution.psi.data.clone(),
        residual_norm: report.residual_norm,
        newton_iterations: report.newton_iterations,
        converged: report.converged,
    })
}

fn cmd_solve(
    problem: &ProblemArgs,
    l: usize,
    m: usize,
    m_quadrature: usize,
    phase_spec: Option<&str>,
    tol: f64,
    out: &Path,
) -> Result<()> {
    let overrides = problem.overrides();
    let cp = catalog::build(&problem.problem, &overrides)?;
    let mut cfg = SolveConfig::new(l, m);
    cfg.m_quadrature = m_quadrature;
    cfg.settings.tol = tol;
    let phase = match phase_spec {
        Some(spec) => parse_phase(spec, &cp, &cfg)?,
        None => PhaseCondition::Trivial { component: cp.phase_component, level: cp.phase_level },
    };
    let (_, omega, report) = solve_periodic(&cp.problem, &cp.guess, &phase, &cfg)?;
    let file = solution_file(&cp, overrides, &cfg, omega, &report)?;
    save_solution(out, &file)?;
    println!(
        "{}: omega = {:.12} ({} Newton iterations, residual {:.3e}) -> {}",
        cp.name,
        omega,
        report.newton_iterations,
        report.residual_norm,
        out.display()
    );
    Ok(())
}

fn cmd_converge(
    problem: &ProblemArgs,
    m: usize,
    l_list: &[usize],
    m_quadrature: usize,
    reference: &str,
    dt: f64,
    t_transient: f64,
    out: &Path,
) -> Result<()> {
    let cp = catalog::build(&problem.problem, &problem.overrides())?;
    let source = match reference {
        "exact" => ReferenceSource::Exact,
        "oracle" => ReferenceSource::Oracle { dt, t_transient },
        other => {
            return Err(Error::Malformed(format!(
                "unknown reference '{other}' (expected 'exact' or 'oracle')"
            )))
        }
    };
    let report = run_convergence_study(&cp, m, l_list, m_quadrature, &source, thread_cap())?;
    std::fs::write(out, report.to_csv())?;
    let orders: Vec<String> = report.orders().iter().map(|o| format!("{o:.2}")).collect();
    println!(
        "{}: m = {}, reference omega = {:.12}, estimated orders [{}] -> {}",
        report.problem,
        report.m,
        report.omega_ref,
        orders.join(", "),
        out.display()
    );
    Ok(())
}

fn cmd_floquet(solution: &Path, threshold: f64, out: &Path) -> Result<()> {
    let file = load_solution(solution)?;
    let cp = catalog::build(&file.problem, &file.params)?;
    let v = reconstruct_solution(&file)?;
    let op = build_linearized_operator(&v, file.omega, &cp.problem)?;
    let t = monodromy_matrix(&op, file.l, file.m)?;
    let report = multipliers_and_check(&t, threshold)?;
    let mut csv = String::from("re,im,modulus\n");
    for mu in &report.multipliers {
        csv.push_str(&format!("{:e},{:e},{:e}\n", mu.re, mu.im, mu.norm()));
    }
    std::fs::write(out, csv)?;
    println!(
        "{}: {} multipliers, trivial error {:.3e}, hyperbolic: {} -> {}",
        file.problem,
        report.multipliers.len(),
        report.trivial_error,
        report.hyperbolic,
        out.display()
    );
    Ok(())
}

fn cmd_continue(
    problem: &ProblemArgs,
    sweep: &str,
    from: f64,
    to: f64,
    steps: usize,
    l: usize,
    m: usize,
    m_quadrature: usize,
    out: &Path,
) -> Result<()> {
    if steps < 2 {
        return Err(Error::Malformed("a sweep needs at least 2 steps".into()));
    }
    if !problem.params.is_empty() {
        return Err(Error::Malformed(
            "fixed --param overrides are not supported in a sweep; only the swept \
             parameter varies"
                .into(),
        ));
    }
    let values: Vec<f64> = (0..steps)
        .map(|i| from + (to - from) * i as f64 / (steps - 1) as f64)
        .collect();
    let mut cfg = SolveConfig::new(l, m);
    cfg.m_quadrature = m_quadrature;
    let result = continue_natural(&problem.problem, sweep, &values, &cfg)?;
    let mut csv = String::from(
        "param,status,omega,amplitude,newton_iterations,residual_norm,zero_amplitude\n",
    );
    let mut succeeded = 0usize;
    for step in &result {
        match &step.outcome {
            Ok((v, omega, report)) => {
                succeeded += 1;
                csv.push_str(&format!(
                    "{:e},ok,{:e},{:e},{},{:e},{}\n",
                    step.param_value,
                    omega,
                    amplitude(v)?,
                    report.newton_iterations,
                    report.residual_norm,
                    step.zero_amplitude
                ));
            }
            Err(e) => {
                let status = match e {
                    Error::NoConvergence { .. } => "no-convergence",
                    Error::SingularJacobian => "singular-jacobian",
                    _ => "error",
                };
                csv.push_str(&format!("{:e},{status},,,,,false\n", step.param_value));
            }
        }
    }
    std::fs::write(out, csv)?;
    println!(
        "{}: swept {} over [{}, {}], {}/{} steps converged -> {}",
        problem.problem,
        sweep,
        from,
        to,
        succeeded,
        result.len(),
        out.display()
    );
    Ok(())
}

fn cmd_integrate(problem: &ProblemArgs, t_end: f64, dt: f64, out: &Path) -> Result<()> {
    let cp = catalog::build(&problem.problem, &problem.overrides())?;
    let traj = integrate_method_of_steps(&cp.problem, &cp.history, t_end, dt)?;
    let d = cp.problem.dim;
    let mut csv = String::from("t");
    for c in 1..=d {
        csv.push_str(&format!(",y{c}"));
    }
    csv.push('\n');
    let mut write_row = |t: f64, y: &nalgebra::DVector<f64>| {
        csv.push_str(&format!("{t:e}"));
        for c in 0..d {
            csv.push_str(&format!(",{:e}", y[c]));
        }
        csv.push('\n');
    };
    write_row(0.0, &traj.value(0.0)?);
    let end = traj.t_end();
    let samples = ((end / dt).round() as usize).min(100_000).max(1);
    for i in 1..=samples {
        let t = end * i as f64 / samples as f64;
        write_row(t, &traj.value(t)?);
    }
    std::fs::write(out, csv)?;
    println!("{}: integrated to t = {} -> {}", cp.name, end, out.display());
    Ok(())
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        // misuse: bad names, flags, meshes, or files
        Error::InvalidMesh(_) | Error::Domain { .. } | Error::Schema { .. }
        | Error::Malformed(_) => 2,
        // computational failure
        _ => 1,
    }
}

/// Parse and execute one command; returns the process exit code
/// (0 success, 1 solver failure, 2 usage error).
pub fn cmd_dispatch<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match CliConfig::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Solve { problem, l, m, m_quadrature, phase, tol, out } => {
            cmd_solve(problem, *l, *m, *m_quadrature, phase.as_deref(), *tol, out)
        }
        Command::Converge {
            problem,
            m,
            l_list,
            m_quadrature,
            reference,
            dt,
            t_transient,
            out,
        } => cmd_converge(problem, *m, l_list, *m_quadrature, reference, *dt, *t_transient, out),
        Command::Floquet { solution, threshold, out } => cmd_floquet(solution, *threshold, out),
        Command::Continue { problem, sweep, from, to, steps, l, m, m_quadrature, out } => {
            cmd_continue(problem, sweep, *from, *to, *steps, *l, *m, *m_quadrature, out)
        }
        Command::Integrate { problem, t_end, dt, out } => cmd_integrate(problem, *t_end, *dt, out),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Entry point of the `rfde` binary.
pub fn run() -> ExitCode {
    ExitCode::from(cmd_dispatch(std::env::args_os()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_file() -> SolutionFile {
        SolutionFile {
            schema_version: SCHEMA_VERSION,
            problem: "logistic".into(),
            params: BTreeMap::from([("r".to_string(), 2.0)]),
            dim: 1,
            tau: 1.0,
            l: 2,
            m: 2,
            m_quadrature: 20,
            abscissae_family: "gauss-legendre".into(),
            abscissae: inner_abscissae(2, AbscissaeFamily::GaussLegendre).unwrap().c,
            omega: 4.402739435148,
            u: vec![0.1, 0.25 + 1e-17, -0.3, 1.0 / 3.0, 0.7],
            psi: vec![1.0, 0.9, 1.1, 0.95, 1.0],
            residual_norm: 3.2e-12,
            newton_iterations: 5,
            converged: true,
        }
    }

    #[test]
    fn solution_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let file = sample_file();
        save_solution(&path, &file).unwrap();
        let loaded = load_solution(&path).unwrap();
        assert_eq!(loaded.problem, file.problem);
        assert_eq!(loaded.params, file.params);
        assert_eq!(loaded.omega.to_bits(), file.omega.to_bits());
        for (a, b) in loaded.u.iter().zip(&file.u) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in loaded.abscissae.iter().zip(&file.abscissae) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // a second save of the loaded file is byte-identical
        let path2 = dir.path().join("s2.json");
        save_solution(&path2, &loaded).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&path2).unwrap()
        );
    }

    #[test]
    fn schema_version_mismatch_names_both_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let mut file = sample_file();
        file.schema_version = 0;
        let text = serde_json::to_string(&file).unwrap();
        std::fs::write(&path, text).unwrap();
        match load_solution(&path) {
            Err(Error::Schema { found, supported }) => {
                assert_eq!(found, 0);
                assert_eq!(supported, SCHEMA_VERSION);
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_node_array_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let mut file = sample_file();
        file.u.pop();
        save_solution(&path, &file).unwrap();
        assert!(matches!(load_solution(&path), Err(Error::Malformed(_))));
    }

    #[test]
    fn malformed_json_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_solution(&path), Err(Error::Malformed(_))));
    }

    #[test]
    fn phase_specs_parse() {
        let cp = catalog::build("logistic", &BTreeMap::new()).unwrap();
        let cfg = SolveConfig::new(10, 2);
        match parse_phase("trivial:k=0,level=0.5", &cp, &cfg).unwrap() {
            PhaseCondition::Trivial { component, level } => {
                assert_eq!(component, 0);
                assert_eq!(level, 0.5);
            }
            _ => panic!("expected trivial phase"),
        }
        assert!(matches!(
            parse_phase("integral", &cp, &cfg).unwrap(),
            PhaseCondition::Integral { .. }
        ));
        assert!(parse_phase("poincare", &cp, &cfg).is_err());
        assert!(parse_phase("trivial:k=3,level=0.5", &cp, &cfg).is_err());
    }

    #[test]
    fn unknown_problem_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.json");
        let code = cmd_dispatch([
            "rfde",
            "solve",
            "--problem",
            "nosuch",
            "--L",
            "10",
            "--m",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let code = cmd_dispatch(["rfde", "solve", "--nonsense"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn reconstruction_requires_consistent_shapes() {
        let mut file = sample_file();
        file.abscissae_family = "martian".into();
        assert!(matches!(reconstruct_solution(&file), Err(Error::Malformed(_))));
    }
}
