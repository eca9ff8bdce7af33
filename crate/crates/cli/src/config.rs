//! TOML run files.
//!
//! Every key except `model.epsilon` has a default matching the standard
//! two-phase setup, so the smallest valid file is
//!
//! ```toml
//! [model]
//! epsilon = 0.0198943678864869
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use phasefield_recovery::experiments::{BoundaryFlux, Primitive, ShapeSpec};
use phasefield_recovery::fem::CoefficientValues;
use phasefield_recovery::gamma::PartitionSpec;
use phasefield_recovery::linalg::{KrylovOptions, Preconditioner};
use phasefield_recovery::mesh::{build_structured_mesh, Mesh};
use phasefield_recovery::optimizer::{InitialCondition, RecoveryConfig, TauRule};
use phasefield_recovery::state::ObservationKind;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub iteration: IterationSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub gamma: GammaSection,
    #[serde(default)]
    pub convergence: ConvergenceSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSection {
    /// Cells per unit length.
    pub n: usize,
    /// `[xmin, xmax, ymin, ymax]`
    pub bounds: [f64; 4],
    /// Reject meshes with `h > epsilon / 8`.
    pub enforce_resolution: bool,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { n: 64, bounds: [-1.0, 1.0, -1.0, 1.0], enforce_resolution: true }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observation {
    #[default]
    Bulk,
    Boundary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flux {
    #[default]
    Corner,
    TopBottom,
    Zero,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Required; kept optional here so the error can name the key.
    pub epsilon: Option<f64>,
    pub sigma: f64,
    pub a: Vec<f64>,
    /// Noise amplitude of the synthetic observation.
    pub noise: f64,
    pub observation: Observation,
    pub flux: Flux,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            epsilon: None,
            sigma: 1e-4,
            a: vec![3.0, 0.5],
            noise: 0.05,
            observation: Observation::Bulk,
            flux: Flux::Corner,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauChoice {
    #[default]
    Fixed,
    Bounded,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IterationSection {
    pub tau_rule: TauChoice,
    /// `tau_0 = tau_factor / epsilon`
    pub tau_factor: f64,
    pub stop_residual: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub seed: u64,
}

impl Default for IterationSection {
    fn default() -> Self {
        IterationSection {
            tau_rule: TauChoice::Fixed,
            tau_factor: 0.01,
            stop_residual: 1e-3,
            max_iter: 10_000,
            max_backtracks: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum InitialSection {
    Circle {
        #[serde(default)]
        center: [f64; 2],
        radius: f64,
    },
    Barycenter,
    /// Uses `iteration.seed`.
    Random,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection::Circle { center: [0.0; 2], radius: 0.6 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Ellipse,
    SkinnyEllipse,
    TwoObjects,
    ThreePhase,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum ShapeEntry {
    Ellipse { center: [f64; 2], semi_axes: [f64; 2], label: usize },
    Circle { center: [f64; 2], radius: f64, label: usize },
    Polygon { vertices: Vec<[f64; 2]>, label: usize },
}

/// Target partition. Explicit `shapes` replace the preset.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub preset: Preset,
    pub shapes: Vec<ShapeEntry>,
    pub background: Option<usize>,
}

impl ObjectiveSection {
    pub fn shape_spec(&self) -> ShapeSpec<f64> {
        if self.shapes.is_empty() {
            let mut spec = match self.preset {
                Preset::Ellipse => ShapeSpec::ellipse(),
                Preset::SkinnyEllipse => ShapeSpec::skinny_ellipse(),
                Preset::TwoObjects => ShapeSpec::two_objects(),
                Preset::ThreePhase => ShapeSpec::three_phase(),
            };
            if let Some(b) = self.background {
                spec.background = b;
            }
            return spec;
        }
        let shapes = self
            .shapes
            .iter()
            .map(|s| match s {
                ShapeEntry::Ellipse { center, semi_axes, label } => {
                    (Primitive::Ellipse { center: *center, semi_axes: *semi_axes }, *label)
                }
                ShapeEntry::Circle { center, radius, label } => {
                    (Primitive::Circle { center: *center, radius: *radius }, *label)
                }
                ShapeEntry::Polygon { vertices, label } => (Primitive::Polygon { vertices: vertices.clone() }, *label),
            })
            .collect();
        ShapeSpec { shapes, background: self.background.unwrap_or(2) }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaCase {
    #[default]
    Flat,
    Circle,
    TripleJunction,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaSection {
    pub case: GammaCase,
    /// Position of the vertical interface.
    pub x0: f64,
    pub center: [f64; 2],
    pub radius: f64,
    pub apex: [f64; 2],
    pub epsilons: Vec<f64>,
    /// Mesh diameter over epsilon; at most `1/8`.
    pub ratio: f64,
}

impl Default for GammaSection {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        GammaSection {
            case: GammaCase::Flat,
            x0: 0.0,
            center: [0.0; 2],
            radius: 0.5,
            apex: [0.0; 2],
            epsilons: vec![1.0 / (4.0 * pi), 1.0 / (8.0 * pi), 1.0 / (16.0 * pi)],
            ratio: 0.125,
        }
    }
}

impl GammaSection {
    pub fn partition(&self) -> Result<PartitionSpec<f64>> {
        Ok(match self.case {
            GammaCase::Flat => PartitionSpec::flat_interface(self.x0),
            GammaCase::Circle => PartitionSpec::circle(self.center, self.radius)?,
            GammaCase::TripleJunction => PartitionSpec::triple_junction(self.apex),
        })
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    /// Cells per unit length of each level, coarse to fine.
    pub levels: Vec<usize>,
    /// Constant coefficient of the manufactured problem.
    pub coefficient: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        ConvergenceSection { levels: vec![8, 16, 32], coefficient: 3.0 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

impl RunFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let run: RunFile = toml::from_str(text)?;
        run.validate()?;
        Ok(run)
    }

    pub fn epsilon(&self) -> Result<f64> {
        self.model.epsilon.context("missing required key model.epsilon")
    }

    /// Key-level checks; the mesh resolution rule is applied by [`Self::mesh`].
    pub fn validate(&self) -> Result<()> {
        let eps = self.epsilon()?;
        positive("model.epsilon", eps)?;
        positive("model.sigma", self.model.sigma)?;
        if !(self.model.noise >= 0.0 && self.model.noise.is_finite()) {
            bail!("model.noise must be non-negative, got {}", self.model.noise);
        }
        CoefficientValues::new(self.model.a.clone()).context("model.a")?;
        positive("iteration.stop_residual", self.iteration.stop_residual)?;
        positive("iteration.tau_factor", self.iteration.tau_factor)?;
        if self.mesh.n == 0 {
            bail!("mesh.n must be at least 1");
        }
        let [x0, x1, y0, y1] = self.mesh.bounds;
        if !(x1 > x0 && y1 > y0) {
            bail!("mesh.bounds must be [xmin, xmax, ymin, ymax] with positive extent");
        }
        if let InitialSection::Circle { radius, .. } = self.initial {
            positive("initial.radius", radius)?;
        }
        if self.gamma.epsilons.is_empty() {
            bail!("gamma.epsilons must not be empty");
        }
        for &e in &self.gamma.epsilons {
            positive("gamma.epsilons", e)?;
        }
        positive("gamma.ratio", self.gamma.ratio)?;
        if self.convergence.levels.is_empty() || self.convergence.levels.contains(&0) {
            bail!("convergence.levels must be a non-empty list of positive cell counts");
        }
        positive("convergence.coefficient", self.convergence.coefficient)?;
        Ok(())
    }

    /// Structured mesh on `mesh.bounds`, checked against `h <= epsilon / 8`
    /// unless `mesh.enforce_resolution` is off.
    pub fn mesh(&self) -> Result<Mesh<f64>> {
        let [x0, x1, y0, y1] = self.mesh.bounds;
        let mesh = build_structured_mesh(x0, x1, y0, y1, self.mesh.n)?;
        let limit = self.epsilon()? / 8.0;
        if self.mesh.enforce_resolution && mesh.h() > limit {
            bail!(
                "mesh.n = {} gives h = {:.4e} > model.epsilon / 8 = {limit:.4e}; refine or set mesh.enforce_resolution = false",
                self.mesh.n,
                mesh.h()
            );
        }
        Ok(mesh)
    }

    pub fn flux(&self) -> BoundaryFlux {
        match self.model.flux {
            Flux::Corner => BoundaryFlux::CornerFlux,
            Flux::TopBottom => BoundaryFlux::TopBottom,
            Flux::Zero => BoundaryFlux::Zero,
        }
    }

    pub fn observation(&self) -> ObservationKind {
        match self.model.observation {
            Observation::Bulk => ObservationKind::Bulk,
            Observation::Boundary => ObservationKind::Boundary,
        }
    }

    pub fn krylov(&self) -> KrylovOptions<f64> {
        KrylovOptions { preconditioner: Preconditioner::Multigrid, ..KrylovOptions::default() }
    }

    pub fn recovery_config(&self) -> Result<RecoveryConfig<f64>> {
        let initial = match self.initial {
            InitialSection::Circle { center, radius } => InitialCondition::Circle { center, radius },
            InitialSection::Barycenter => InitialCondition::Barycenter,
            InitialSection::Random => InitialCondition::Random { seed: self.iteration.seed },
        };
        Ok(RecoveryConfig {
            epsilon: self.epsilon()?,
            sigma: self.model.sigma,
            a: CoefficientValues::new(self.model.a.clone())?,
            noise: self.model.noise,
            observation: self.observation(),
            tau_rule: match self.iteration.tau_rule {
                TauChoice::Fixed => TauRule::Fixed,
                TauChoice::Bounded => TauRule::Bounded,
            },
            tau_factor: self.iteration.tau_factor,
            stop_residual: self.iteration.stop_residual,
            max_iterations: self.iteration.max_iter,
            max_backtracks: self.iteration.max_backtracks,
            mesh_n: self.mesh.n,
            seed: self.iteration.seed,
            initial,
            enforce_resolution: self.mesh.enforce_resolution,
            krylov: self.krylov(),
            subproblem_tol: None,
        })
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        bail!("{key} must be positive and finite, got {v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let run = RunFile::parse("[model]\nepsilon = 0.02\n").unwrap();
        assert_eq!(run.mesh.n, 64);
        assert_eq!(run.model.a, vec![3.0, 0.5]);
        assert_eq!(run.iteration.stop_residual, 1e-3);
        let cfg = run.recovery_config().unwrap();
        assert_eq!(cfg.tau0(), 0.01 / 0.02);
        assert!(matches!(cfg.initial, InitialCondition::Circle { radius, .. } if radius == 0.6));
    }

    #[test]
    fn missing_epsilon_names_the_key() {
        let err = RunFile::parse("[model]\nsigma = 1e-4\n").unwrap_err();
        assert!(format!("{err:#}").contains("model.epsilon"));
        let err = RunFile::parse("").unwrap_err();
        assert!(format!("{err:#}").contains("model.epsilon"));
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        assert!(RunFile::parse("[model]\nepsilon = 0.02\n[iteration]\nstop_residual = 0.0\n").is_err());
        assert!(RunFile::parse("[model]\nepsilon = 0.02\na = [1.0, -1.0]\n").is_err());
        assert!(RunFile::parse("[model]\nepsilon = 0.02\nepsilom = 1.0\n").is_err());
    }

    #[test]
    fn resolution_rule() {
        let coarse = RunFile::parse("[model]\nepsilon = 0.02\n[mesh]\nn = 16\n").unwrap();
        let err = coarse.mesh().unwrap_err();
        assert!(err.to_string().contains("mesh.enforce_resolution"));
        let waived = RunFile::parse("[model]\nepsilon = 0.02\n[mesh]\nn = 16\nenforce_resolution = false\n").unwrap();
        assert_eq!(waived.mesh().unwrap().num_vertices(), 33 * 33);
    }

    #[test]
    fn explicit_shapes_replace_the_preset() {
        let text = r#"
            [model]
            epsilon = 0.02
            a = [1.0, 2.0, 3.0]
            [objective]
            background = 3
            [[objective.shapes]]
            kind = "circle"
            center = [0.0, 0.0]
            radius = 0.3
            label = 2
        "#;
        let spec = RunFile::parse(text).unwrap().objective.shape_spec();
        assert_eq!(spec.background, 3);
        assert_eq!(spec.label_at(0.0, 0.0), 2);
        assert_eq!(spec.label_at(0.9, 0.9), 3);
    }

    #[test]
    fn random_start_takes_the_iteration_seed() {
        let run =
            RunFile::parse("[model]\nepsilon = 0.02\n[iteration]\nseed = 9\n[initial]\nkind = \"random\"\n").unwrap();
        assert!(matches!(run.recovery_config().unwrap().initial, InitialCondition::Random { seed: 9 }));
    }
}
