//! Outer semi-implicit iteration with energy safeguard and stopping rule.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::fem::{diffusion_coefficient, CoefficientValues, Discretization, PhaseField, ScalarField};
use crate::linalg::{CsrMatrix, KrylovOptions, Preconditioner};
use crate::mesh::Mesh;
use crate::objective::{evaluate_objective, ObjectiveBreakdown};
use crate::scalar::Real;
use crate::state::{adjoint_rhs, estimate_poincare_constant, solve_neumann, ObservationKind, ObservationSpace};
use crate::vi_step::{solve_step_subproblem, StepProblem};

/// ChaCha stream used for random initial fields.
pub const INITIAL_STREAM: u64 = 2;

/// Step size selection for the outer iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TauRule {
    /// `tau = tau_factor / eps` at every step.
    #[default]
    Fixed,
    /// `tau = min(tau_factor / eps, bound(y^n, p^n))`.
    Bounded,
}

/// Starting field of the iteration.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition<T> {
    /// Phase 1 inside the disc, phase 2 outside.
    Circle { center: [T; 2], radius: T },
    /// Every node at `(1/r, ..., 1/r)`.
    Barycenter,
    /// Nodes i.i.d. uniform on the simplex (ChaCha8, [`INITIAL_STREAM`]).
    Random { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct RecoveryConfig<T> {
    pub epsilon: T,
    pub sigma: T,
    pub a: CoefficientValues<T>,
    /// Noise amplitude of synthetic observations.
    pub noise: T,
    pub observation: ObservationKind,
    pub tau_rule: TauRule,
    /// `tau_0 = tau_factor / eps`
    pub tau_factor: T,
    pub stop_residual: T,
    pub max_iterations: usize,
    pub max_backtracks: usize,
    /// Mesh cells per unit length.
    pub mesh_n: usize,
    pub seed: u64,
    pub initial: InitialCondition<T>,
    /// Reject meshes with `h > eps / 8` when set.
    pub enforce_resolution: bool,
    /// State and adjoint solver settings; multigrid-preconditioned CG by default.
    pub krylov: KrylovOptions<T>,
    /// Subproblem natural-residual target, `None` for the default.
    pub subproblem_tol: Option<T>,
}

impl<T: Real> RecoveryConfig<T> {
    /// Two-phase defaults: `eps = 1/(16 pi)`, `sigma = 1e-4`, `a = (3, 0.5)`,
    /// `Lambda = 0.05`, `tau = 0.01/eps`, stop at `1e-3`.
    pub fn two_phase_defaults() -> Self {
        RecoveryConfig {
            epsilon: T::one() / (T::lit(16.0) * T::PI()),
            sigma: T::lit(1e-4),
            a: CoefficientValues::new(vec![T::lit(3.0), T::lit(0.5)]).expect("positive defaults"),
            noise: T::lit(0.05),
            observation: ObservationKind::Bulk,
            tau_rule: TauRule::Fixed,
            tau_factor: T::lit(0.01),
            stop_residual: T::lit(1e-3),
            max_iterations: 10_000,
            max_backtracks: 30,
            mesh_n: 64,
            seed: 0,
            initial: InitialCondition::Circle { center: [T::zero(); 2], radius: T::lit(0.6) },
            enforce_resolution: true,
            krylov: KrylovOptions { preconditioner: Preconditioner::Multigrid, ..KrylovOptions::default() },
            subproblem_tol: None,
        }
    }

    pub fn phases(&self) -> usize {
        self.a.phases()
    }

    pub fn tau0(&self) -> T {
        self.tau_factor / self.epsilon
    }

    /// Largest mesh diameter allowed by the interface resolution rule.
    pub fn resolution_limit(&self) -> T {
        self.epsilon / T::lit(8.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("sigma", self.sigma)?;
        positive("stop_residual", self.stop_residual)?;
        positive("tau_factor", self.tau_factor)?;
        if !(self.noise >= T::zero() && self.noise.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.mesh_n == 0 {
            return Err(Error::InvalidParameter("mesh subdivisions must be at least 1".into()));
        }
        if let InitialCondition::Circle { radius, .. } = self.initial {
            positive("initial radius", radius)?;
        }
        Ok(())
    }

    /// Interface resolution check against a concrete mesh.
    pub fn check_resolution(&self, mesh: &Mesh<T>) -> Result<()> {
        let limit = self.resolution_limit();
        if self.enforce_resolution && mesh.h() > limit {
            return Err(Error::UnderResolved { h: mesh.h().as_f64(), limit: limit.as_f64() });
        }
        Ok(())
    }
}

/// One accepted outer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord<T> {
    /// Index of the new iterate, starting at 1.
    pub n: usize,
    pub tau: T,
    pub j_fid: T,
    pub j_reg: T,
    pub j_total: T,
    /// `J` of the previous iterate.
    pub j_prev: T,
    /// `||u^{n+1} - u^n||_{M_L} / tau`
    pub residual: T,
    /// `||u^{n+1} - u^n||_{M_L}^2`
    pub step_sq: T,
    /// Step size bound at the previous iterate (infinite under the fixed rule).
    pub tau_bound: T,
    pub backtracks: usize,
    pub inner_iterations: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationTrace<T> {
    pub records: Vec<IterationRecord<T>>,
}

impl<T: Real> IterationTrace<T> {
    pub const CSV_HEADER: &'static str = "n,tau,j_fid,j_reg,j_total,residual,backtracks";

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord<T>> {
        self.records.last()
    }

    /// Accepted objective values never increase beyond `tol`.
    pub fn is_monotone(&self, tol: T) -> bool {
        self.records.iter().all(|r| r.j_total <= r.j_prev + tol)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{}",
                r.n,
                r.tau.as_f64(),
                r.j_fid.as_f64(),
                r.j_reg.as_f64(),
                r.j_total.as_f64(),
                r.residual.as_f64(),
                r.backtracks
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Residual,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct RecoveryOutcome<T> {
    pub u: PhaseField<T>,
    pub y: ScalarField<T>,
    pub p: ScalarField<T>,
    pub trace: IterationTrace<T>,
    pub initial: ObjectiveBreakdown<T>,
    pub last: ObjectiveBreakdown<T>,
    pub stop: StopReason,
}

/// `(1 + (a^2/a_min) gy gp + (a^2/a_min^2) gy^2 / (2 c))^{-1}` for given
/// gradient sup-norms.
pub fn timestep_bound_from_norms<T: Real>(grad_y: T, grad_p: T, a: &CoefficientValues<T>, c_hat: T) -> T {
    let ah2 = a.a_hat() * a.a_hat();
    let am = a.a_min();
    T::one() / (T::one() + ah2 / am * grad_y * grad_p + ah2 / (am * am) / (T::lit(2.0) * c_hat) * grad_y * grad_y)
}

/// Step size bound guaranteeing energy decrease, with `||grad .||_inf` the
/// largest elementwise P1 gradient magnitude.
pub fn compute_timestep_bound<T: Real>(
    disc: &Discretization<T>,
    y: &ScalarField<T>,
    p: &ScalarField<T>,
    a: &CoefficientValues<T>,
    c_hat: T,
) -> Result<T> {
    if !(c_hat > T::zero()) {
        return Err(Error::InvalidParameter(format!("Poincare constant must be positive, got {c_hat}")));
    }
    y.check_mesh(disc.mesh())?;
    p.check_mesh(disc.mesh())?;
    Ok(timestep_bound_from_norms(disc.max_gradient_norm(y.values()), disc.max_gradient_norm(p.values()), a, c_hat))
}

/// Nodal starting field with `r` phases.
pub fn initial_condition<T: Real>(kind: &InitialCondition<T>, mesh: &Mesh<T>, r: usize) -> Result<PhaseField<T>> {
    if r < 2 {
        return Err(Error::InvalidParameter(format!("phase count must be at least 2, got {r}")));
    }
    let nv = mesh.num_vertices();
    match *kind {
        InitialCondition::Circle { center, radius } => {
            if !(radius > T::zero()) {
                return Err(Error::InvalidParameter(format!("circle radius must be positive, got {radius}")));
            }
            let mut values = vec![T::zero(); nv * r];
            for (k, p) in mesh.vertices().iter().enumerate() {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                let inside = dx * dx + dy * dy <= radius * radius;
                values[k * r + if inside { 0 } else { 1 }] = T::one();
            }
            PhaseField::new(r, values)
        }
        InitialCondition::Barycenter => PhaseField::constant(nv, &vec![T::one() / T::from_usize_lossy(r); r]),
        InitialCondition::Random { seed } => {
            // normalised unit exponentials are uniform on the simplex
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(INITIAL_STREAM);
            let mut values = Vec::with_capacity(nv * r);
            let mut node = vec![0.0f64; r];
            for _ in 0..nv {
                for x in node.iter_mut() {
                    *x = Exp1.sample(&mut rng);
                }
                let s: f64 = node.iter().sum();
                values.extend(node.iter().map(|&x| T::lit(x / s)));
            }
            PhaseField::new(r, values)
        }
    }
}

fn lumped_step_sq<T: Real>(disc: &Discretization<T>, a: &PhaseField<T>, b: &PhaseField<T>) -> T {
    let r = a.phases();
    disc.lumped_mass()
        .iter()
        .enumerate()
        .map(|(k, &m)| m * (0..r).map(|i| (a.node(k)[i] - b.node(k)[i]).powi(2)).sum::<T>())
        .sum()
}

/// Runs the recovery iteration from `u0`; see [`run_recovery_with`].
pub fn run_recovery<T: Real>(
    disc: &Discretization<T>,
    config: &RecoveryConfig<T>,
    g: &ScalarField<T>,
    y_obs: &ScalarField<T>,
    u0: PhaseField<T>,
) -> Result<RecoveryOutcome<T>> {
    run_recovery_with(disc, config, g, y_obs, u0, |_, _| {})
}

/// Semi-implicit iteration. Each step solves the state and adjoint at `u^n`,
/// minimises the convex step energy, and halves `tau` while the objective
/// increases by more than `1e-12`. Stops once `||u^{n+1} - u^n||_{M_L} / tau`
/// reaches `stop_residual` or after `max_iterations` steps. `observe` sees
/// every accepted record together with the new iterate.
pub fn run_recovery_with<T: Real>(
    disc: &Discretization<T>,
    config: &RecoveryConfig<T>,
    g: &ScalarField<T>,
    y_obs: &ScalarField<T>,
    u0: PhaseField<T>,
    mut observe: impl FnMut(&IterationRecord<T>, &PhaseField<T>),
) -> Result<RecoveryOutcome<T>> {
    config.validate()?;
    config.check_resolution(disc.mesh())?;
    u0.check_mesh(disc.mesh())?;
    u0.validate()?;
    y_obs.check_mesh(disc.mesh())?;
    let a = &config.a;
    if u0.phases() != a.phases() {
        return Err(Error::DimensionMismatch(format!(
            "u0 has r = {}, config has {} coefficients",
            u0.phases(),
            a.phases()
        )));
    }
    let obs = ObservationSpace::new(disc, config.observation);
    let load = crate::fem::assemble_boundary_load(disc.mesh(), g)?;
    let target = obs.mean_value(y_obs.values());
    let opts = &config.krylov;
    let abs_tol = T::lit(1e-12);

    // the stiffness of an accepted trial is reused for its adjoint
    let state = |u: &PhaseField<T>, x0: Option<&[T]>| -> Result<(ScalarField<T>, CsrMatrix<T>)> {
        let k = disc.stiffness(&diffusion_coefficient(u, a)?)?;
        Ok((solve_neumann(disc, &k, &load, &obs, target, opts, x0)?, k))
    };
    let adjoint = |k: &CsrMatrix<T>, y: &ScalarField<T>, x0: Option<&[T]>| -> Result<ScalarField<T>> {
        let rhs = adjoint_rhs(y.values(), y_obs.values(), &obs)?;
        solve_neumann(disc, k, &rhs, &obs, T::zero(), opts, x0)
    };
    let c_hat = match config.tau_rule {
        TauRule::Fixed => None,
        TauRule::Bounded => Some(estimate_poincare_constant(disc, &obs)?),
    };

    let mut u = u0;
    let (mut y, mut k) = state(&u, None)?;
    let mut current = evaluate_objective(disc, &obs, &u, &y, y_obs, config.sigma, config.epsilon)?;
    let initial = current;
    let mut trace = IterationTrace::default();
    if config.max_iterations == 0 {
        let p = ScalarField::zeros(disc.num_nodes());
        return Ok(RecoveryOutcome { u, y, p, trace, initial, last: current, stop: StopReason::MaxIterations });
    }
    let mut p = adjoint(&k, &y, None)?;
    let mut stop = StopReason::MaxIterations;

    for n in 1..=config.max_iterations {
        let tau_bound = match c_hat {
            Some(c) => compute_timestep_bound(disc, &y, &p, a, c)?,
            None => T::infinity(),
        };
        let mut tau = config.tau0().min(tau_bound);
        let mut backtracks = 0;
        let (u_next, y_next, k_next, next, inner) = loop {
            let mut prob = StepProblem::new(&u, &y, &p, tau, config.sigma, config.epsilon, a);
            prob.tol = config.subproblem_tol;
            let step = solve_step_subproblem(disc, &prob)?;
            let (y_trial, k_trial) = state(&step.u, Some(y.values()))?;
            let trial = evaluate_objective(disc, &obs, &step.u, &y_trial, y_obs, config.sigma, config.epsilon)?;
            if trial.j_total <= current.j_total + abs_tol {
                break (step.u, y_trial, k_trial, trial, step.iterations);
            }
            if backtracks >= config.max_backtracks {
                return Err(Error::BacktrackingExhausted {
                    iteration: n,
                    tau: tau.as_f64(),
                    j_prev: current.j_total.as_f64(),
                    j_trial: trial.j_total.as_f64(),
                    state: u.values().iter().map(|v| v.as_f64()).collect(),
                });
            }
            backtracks += 1;
            tau /= T::lit(2.0);
        };
        let step_sq = lumped_step_sq(disc, &u_next, &u);
        let record = IterationRecord {
            n,
            tau,
            j_fid: next.j_fid,
            j_reg: next.j_reg,
            j_total: next.j_total,
            j_prev: current.j_total,
            residual: step_sq.sqrt() / tau,
            step_sq,
            tau_bound,
            backtracks,
            inner_iterations: inner,
        };
        u = u_next;
        y = y_next;
        k = k_next;
        current = next;
        p = adjoint(&k, &y, Some(p.values()))?;
        observe(&record, &u);
        trace.records.push(record);
        if record.residual <= config.stop_residual {
            stop = StopReason::Residual;
            break;
        }
    }
    Ok(RecoveryOutcome { u, y, p, trace, initial, last: current, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    #[test]
    fn bound_examples() {
        let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
        assert!((timestep_bound_from_norms(1.0f64, 1.0, &a, 2.0) - 1.0 / 28.75).abs() < 1e-15);
        assert!(timestep_bound_from_norms(2.0, 1.0, &a, 2.0) < timestep_bound_from_norms(1.0, 1.0, &a, 2.0));
        let d = Discretization::new(build_structured_mesh(-1.0, 1.0, -1.0, 1.0, 4).unwrap());
        let c = ScalarField::constant(d.num_nodes(), 0.7);
        assert_eq!(compute_timestep_bound(&d, &c, &c, &a, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn initial_conditions() {
        let m = build_structured_mesh(-1.0, 1.0, -1.0, 1.0, 10).unwrap();
        let circle = InitialCondition::Circle { center: [0.0, 0.0], radius: 0.6 };
        let u = initial_condition(&circle, &m, 2).unwrap();
        let idx = |x: f64, y: f64| {
            m.vertices().iter().position(|p: &[f64; 2]| (p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12).unwrap()
        };
        assert_eq!(u.node(idx(0.0, 0.0)), &[1.0, 0.0]);
        assert_eq!(u.node(idx(0.9, 0.9)), &[0.0, 1.0]);
        let r1 = initial_condition(&InitialCondition::Random { seed: 5 }, &m, 3).unwrap();
        let r2 = initial_condition(&InitialCondition::Random { seed: 5 }, &m, 3).unwrap();
        assert_eq!(r1, r2);
        r1.validate().unwrap();
        let b = initial_condition(&InitialCondition::Barycenter, &m, 4).unwrap();
        assert!(b.values().iter().all(|&v| v == 0.25));
        let bad = InitialCondition::Circle { center: [0.0, 0.0], radius: 0.0 };
        assert!(initial_condition(&bad, &m, 2).is_err());
    }

    fn small_config() -> RecoveryConfig<f64> {
        RecoveryConfig {
            enforce_resolution: false,
            mesh_n: 8,
            max_iterations: 30,
            ..RecoveryConfig::two_phase_defaults()
        }
    }

    fn corner_flux(m: &Mesh<f64>) -> ScalarField<f64> {
        ScalarField::interpolate(m, |x, y| {
            let lo = x == -1.0 || y == -1.0;
            let hi = x == 1.0 || y == 1.0;
            match (lo, hi) {
                (true, false) => -0.5,
                (false, true) => 0.5,
                _ => 0.0,
            }
        })
    }

    #[test]
    fn zero_iterations_returns_start() {
        let m = build_structured_mesh(-1.0, 1.0, -1.0, 1.0, 8).unwrap();
        let d = Discretization::new(m.clone());
        let cfg = RecoveryConfig { max_iterations: 0, ..small_config() };
        let u0 = initial_condition(&cfg.initial, &m, 2).unwrap();
        let yobs = ScalarField::zeros(m.num_vertices());
        let out = run_recovery(&d, &cfg, &corner_flux(&m), &yobs, u0.clone()).unwrap();
        assert_eq!(out.u, u0);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn self_generated_data_barely_moves() {
        let m = build_structured_mesh(-1.0, 1.0, -1.0, 1.0, 8).unwrap();
        let d = Discretization::new(m.clone());
        let cfg = small_config();
        let u0 = initial_condition(&cfg.initial, &m, 2).unwrap();
        let obs = ObservationSpace::new(&d, cfg.observation);
        let g = corner_flux(&m);
        let load = crate::fem::assemble_boundary_load(&m, &g).unwrap();
        let k = d.stiffness(&diffusion_coefficient(&u0, &cfg.a).unwrap()).unwrap();
        let yobs = solve_neumann(&d, &k, &load, &obs, 0.0, &cfg.krylov, None).unwrap();
        let out = run_recovery(&d, &cfg, &g, &yobs, u0.clone()).unwrap();
        assert!(out.trace.is_monotone(1e-12));
        assert!(out.initial.j_fid < 1e-18);
        let moved = lumped_step_sq(&d, &out.u, &u0).sqrt();
        assert!(moved < 0.05, "moved {moved}");
    }

    #[test]
    fn resolution_rule_enforced() {
        let m = build_structured_mesh(-1.0, 1.0, -1.0, 1.0, 8).unwrap();
        let d = Discretization::new(m.clone());
        let cfg = RecoveryConfig { enforce_resolution: true, ..small_config() };
        let u0 = initial_condition(&cfg.initial, &m, 2).unwrap();
        let yobs = ScalarField::zeros(m.num_vertices());
        let r = run_recovery(&d, &cfg, &corner_flux(&m), &yobs, u0);
        assert!(matches!(r, Err(Error::UnderResolved { .. })));
    }

    #[test]
    fn trace_csv_layout() {
        let mut t = IterationTrace::<f64>::default();
        t.records.push(IterationRecord {
            n: 1,
            tau: 0.5,
            j_fid: 1e-3,
            j_reg: 2e-4,
            j_total: 1.2e-3,
            j_prev: 2e-3,
            residual: 0.1,
            step_sq: 0.0025,
            tau_bound: f64::INFINITY,
            backtracks: 0,
            inner_iterations: 3,
        });
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("n,tau,j_fid,j_reg,j_total,residual,backtracks"));
        assert_eq!(lines.next(), Some("1,5e-1,1e-3,2e-4,1.2e-3,1e-1,0"));
    }
}
