//! Subcommand implementations. Each writes its files into the output
//! directory and returns the text printed on stdout; nothing written depends
//! on wall-clock time, so identical inputs give byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use phasefield_recovery::experiments::{
    connected_components, l1_mismatch, rasterize_objective, synthesize_clean, synthesize_observation,
};
use phasefield_recovery::fem::{
    h1_seminorm_error, l2_error, CoefficientValues, Discretization, PhaseField, ScalarField,
};
use phasefield_recovery::gamma::{gamma_sweep, write_sweep_csv};
use phasefield_recovery::linalg::KrylovOptions;
use phasefield_recovery::mesh::{build_structured_mesh, Mesh, Side};
use phasefield_recovery::optimizer::{initial_condition, run_recovery, InitialCondition, StopReason, TauRule};
use phasefield_recovery::state::{solve_state, ObservationSpace};
use phasefield_recovery::vtk::write_vtk;

use crate::config::{Flux, Observation, RunFile};

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok((path, BufWriter::new(file)))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().with_context(|| format!("writing {}", path.display()))
}

fn phase_fields(u: &PhaseField<f64>, prefix: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let names = (1..=u.phases()).map(|i| format!("{prefix}{i}")).collect();
    let comps = (0..u.phases()).map(|i| u.component(i)).collect();
    (names, comps)
}

/// Clean state for the objective partition: `state.vtk` with `y` and the
/// target phases, and `boundary_trace.csv` over the boundary vertices.
pub fn forward(run: &RunFile, out: &Path) -> Result<String> {
    let mesh = run.mesh()?;
    let disc = Discretization::new(mesh.clone());
    let cfg = run.recovery_config()?;
    let target = rasterize_objective(&run.objective.shape_spec(), &mesh, cfg.phases()).context("objective")?;
    let obs = ObservationSpace::new(&disc, cfg.observation);
    let g = run.flux().field(&mesh);
    let y = synthesize_clean(&disc, &target, &cfg.a, &g, &obs, &cfg.krylov)?;
    let mean = obs.mean_value(y.values());

    let (path, mut w) = create(out, "state.vtk")?;
    let (names, comps) = phase_fields(&target, "target");
    let mut fields: Vec<(&str, &[f64])> = vec![("y", y.values())];
    fields.extend(names.iter().map(String::as_str).zip(comps.iter().map(Vec::as_slice)));
    write_vtk(&mut w, &mesh, "forward state", &fields)?;
    finish(&path, w)?;

    let (path, mut w) = create(out, "boundary_trace.csv")?;
    writeln!(w, "vertex,x,y,value")?;
    let v = mesh.vertices();
    for k in mesh.boundary_trace_indices() {
        writeln!(w, "{k},{:e},{:e},{:e}", v[k][0], v[k][1], y.values()[k])?;
    }
    finish(&path, w)?;

    let (lo, hi) = y.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Ok(format!(
        "forward: {} vertices, h = {:.4e}\nobservation mean = {mean:e} (target 0)\ny range = [{lo:e}, {hi:e}]\nwrote state.vtk, boundary_trace.csv\n",
        mesh.num_vertices(),
        mesh.h()
    ))
}

#[derive(Serialize)]
struct ConfigEcho {
    epsilon: f64,
    sigma: f64,
    a: Vec<f64>,
    noise: f64,
    observation: Observation,
    flux: Flux,
    tau_rule: String,
    tau_factor: f64,
    tau0: f64,
    stop_residual: f64,
    max_iterations: usize,
    max_backtracks: usize,
    mesh_n: usize,
    h: f64,
    enforce_resolution: bool,
    seed: u64,
    initial: String,
    solver_tol: f64,
}

#[derive(Serialize)]
struct Energies {
    j_fid: f64,
    j_reg: f64,
    j_total: f64,
    l1_mismatch: f64,
}

#[derive(Serialize)]
struct ResultEcho {
    iterations: usize,
    stop: String,
    monotone: bool,
    final_residual: Option<f64>,
    backtracking_steps: usize,
    /// Connected components of `{u_i > 0.5}`, phase by phase.
    components: Vec<usize>,
}

#[derive(Serialize)]
struct Summary {
    config: ConfigEcho,
    result: ResultEcho,
    initial: Energies,
    last: Energies,
}

/// Recovery from a synthetic observation of the objective partition:
/// `u.vtk`, `trace.csv` and `summary.toml`.
pub fn recover(run: &RunFile, out: &Path) -> Result<String> {
    let mesh = run.mesh()?;
    let disc = Discretization::new(mesh.clone());
    let cfg = run.recovery_config()?;
    let r = cfg.phases();
    let target = rasterize_objective(&run.objective.shape_spec(), &mesh, r).context("objective")?;
    let obs = ObservationSpace::new(&disc, cfg.observation);
    let g = run.flux().field(&mesh);
    let y_obs = synthesize_observation(&disc, &target, &cfg.a, &g, cfg.noise, cfg.seed, &obs, &cfg.krylov)?;
    let u0 = initial_condition(&cfg.initial, &mesh, r)?;
    let outcome = run_recovery(&disc, &cfg, &g, &y_obs, u0.clone())?;

    let (path, mut w) = create(out, "trace.csv")?;
    outcome.trace.write_csv(&mut w)?;
    finish(&path, w)?;

    let (path, mut w) = create(out, "u.vtk")?;
    let (names, comps) = phase_fields(&outcome.u, "u");
    let (tnames, tcomps) = phase_fields(&target, "target");
    let mut fields: Vec<(&str, &[f64])> = vec![("y", outcome.y.values()), ("y_obs", y_obs.values())];
    fields.extend(names.iter().map(String::as_str).zip(comps.iter().map(Vec::as_slice)));
    fields.extend(tnames.iter().map(String::as_str).zip(tcomps.iter().map(Vec::as_slice)));
    write_vtk(&mut w, &mesh, "recovered phase field", &fields)?;
    finish(&path, w)?;

    let components = (1..=r)
        .map(|i| connected_components(&mesh, &outcome.u, i, 0.5).map(|c| c.count))
        .collect::<phasefield_recovery::Result<Vec<_>>>()?;
    let summary = Summary {
        config: ConfigEcho {
            epsilon: cfg.epsilon,
            sigma: cfg.sigma,
            a: cfg.a.values().to_vec(),
            noise: cfg.noise,
            observation: run.model.observation,
            flux: run.model.flux,
            tau_rule: match cfg.tau_rule {
                TauRule::Fixed => "fixed".into(),
                TauRule::Bounded => "bounded".into(),
            },
            tau_factor: cfg.tau_factor,
            tau0: cfg.tau0(),
            stop_residual: cfg.stop_residual,
            max_iterations: cfg.max_iterations,
            max_backtracks: cfg.max_backtracks,
            mesh_n: cfg.mesh_n,
            h: mesh.h(),
            enforce_resolution: cfg.enforce_resolution,
            seed: cfg.seed,
            initial: match cfg.initial {
                InitialCondition::Circle { center, radius } => {
                    format!("circle center = ({}, {}) radius = {radius}", center[0], center[1])
                }
                InitialCondition::Barycenter => "barycenter".into(),
                InitialCondition::Random { seed } => format!("random seed = {seed}"),
            },
            solver_tol: cfg.krylov.tol,
        },
        result: ResultEcho {
            iterations: outcome.trace.len(),
            stop: match outcome.stop {
                StopReason::Residual => "residual".into(),
                StopReason::MaxIterations => "max-iterations".into(),
            },
            monotone: outcome.trace.is_monotone(1e-12),
            final_residual: outcome.trace.last().map(|rec| rec.residual),
            backtracking_steps: outcome.trace.records.iter().filter(|rec| rec.backtracks > 0).count(),
            components,
        },
        initial: Energies {
            j_fid: outcome.initial.j_fid,
            j_reg: outcome.initial.j_reg,
            j_total: outcome.initial.j_total,
            l1_mismatch: l1_mismatch(&disc, &u0, &target)?,
        },
        last: Energies {
            j_fid: outcome.last.j_fid,
            j_reg: outcome.last.j_reg,
            j_total: outcome.last.j_total,
            l1_mismatch: l1_mismatch(&disc, &outcome.u, &target)?,
        },
    };
    let text = toml::to_string(&summary)?;
    let (path, mut w) = create(out, "summary.toml")?;
    w.write_all(text.as_bytes())?;
    finish(&path, w)?;
    Ok(text)
}

/// Relaxed perimeter of recovery sequences against the sharp limit:
/// `gamma_sweep.csv`.
pub fn gamma_check(run: &RunFile, out: &Path) -> Result<String> {
    let spec = run.gamma.partition()?;
    let [x0, x1, y0, y1] = run.mesh.bounds;
    // bounds only; the sweep builds its own meshes
    let bounds = build_structured_mesh(x0, x1, y0, y1, 1)?.bounds();
    let rows = gamma_sweep(&spec, &run.gamma.epsilons, &bounds, run.gamma.ratio).context("gamma.ratio")?;
    let (path, mut w) = create(out, "gamma_sweep.csv")?;
    write_sweep_csv(&rows, &mut w)?;
    finish(&path, w)?;
    let mut text = String::from("eps        n     F_eps      F_sharp    gap\n");
    for row in &rows {
        text += &format!("{:.4e} {:<5} {:.6} {:.6} {:.3e}\n", row.epsilon, row.mesh_n, row.f_eps, row.f_sharp, row.gap);
    }
    Ok(text)
}

/// Neumann data `a grad(x^2 - y^2) . n`, averaged over both sides at corners.
fn harmonic_flux(mesh: &Mesh<f64>, a: f64) -> ScalarField<f64> {
    let mut g = vec![0.0; mesh.num_vertices()];
    let mut count = vec![0usize; mesh.num_vertices()];
    let v = mesh.vertices();
    for e in mesh.boundary_edges() {
        for &k in &e.vertices {
            let [x, y] = v[k];
            g[k] += a * match e.side {
                Side::Left => -2.0 * x,
                Side::Right => 2.0 * x,
                Side::Bottom => 2.0 * y,
                Side::Top => -2.0 * y,
            };
            count[k] += 1;
        }
    }
    ScalarField(g.into_iter().zip(count).map(|(s, c)| if c > 0 { s / c as f64 } else { 0.0 }).collect())
}

/// Errors of the manufactured solution `x^2 - y^2` with a constant
/// coefficient on each level: `convergence.csv`.
pub fn convergence_study(run: &RunFile, out: &Path) -> Result<String> {
    let c = run.convergence.coefficient;
    let a = CoefficientValues::new(vec![c, c])?;
    let [x0, x1, y0, y1] = run.mesh.bounds;
    let opts = KrylovOptions { tol: 1e-12, ..run.krylov() };
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for &n in &run.convergence.levels {
        let mesh = build_structured_mesh(x0, x1, y0, y1, n)?;
        let disc = Discretization::new(mesh.clone());
        let obs = ObservationSpace::new(&disc, run.observation());
        let u = PhaseField::pure(disc.num_nodes(), 2, 1)?;
        // the exact solution has observation mean M(x^2 - y^2)
        let exact = ScalarField::interpolate(&mesh, |x, y| x * x - y * y);
        let mean = obs.mean_value(exact.values());
        let y = solve_state(&disc, &u, &a, &harmonic_flux(&mesh, c), mean, &obs, &opts, None)?;
        let l2 = l2_error(&mesh, y.values(), |x, y| x * x - y * y);
        let h1 = h1_seminorm_error(&mesh, y.values(), |x, y| [2.0 * x, -2.0 * y]);
        rows.push((mesh.h(), l2, h1));
    }
    let eoc = |k: usize, pick: fn(&(f64, f64, f64)) -> f64| -> String {
        if k == 0 {
            return String::new();
        }
        let (a, b) = (&rows[k - 1], &rows[k]);
        format!("{:.6}", (pick(a) / pick(b)).ln() / (a.0 / b.0).ln())
    };
    let (path, mut w) = create(out, "convergence.csv")?;
    writeln!(w, "h,l2_error,eoc_l2,h1_error,eoc_h1")?;
    let mut text = String::from("h          L2 error   EOC     H1 error   EOC\n");
    for (k, row) in rows.iter().enumerate() {
        let (el2, eh1) = (eoc(k, |r| r.1), eoc(k, |r| r.2));
        writeln!(w, "{:e},{:e},{el2},{:e},{eh1}", row.0, row.1, row.2)?;
        text += &format!("{:.4e} {:.4e} {:<7} {:.4e} {}\n", row.0, row.1, el2, row.2, eh1);
    }
    finish(&path, w)?;
    Ok(text)
}
