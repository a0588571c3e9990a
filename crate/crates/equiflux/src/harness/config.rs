//! Experiment configuration: the JSON schema read by the command-line
//! driver, with serde defaults for every field, validation, and the
//! command-line overrides that take precedence over the file.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::problems::{MarkerRule, ProblemId, WeightRule};
use crate::polyspace::MAX_DEGREE;

/// The experiment kinds the driver can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Primal solve only: degrees of freedom, energy, error when exact.
    Solve,
    /// Equilibrate and bound the error on a ladder of uniform refinements.
    Estimate,
    /// Plain lifting of the problem data with a stability certificate.
    Lift,
    /// Weighted lifting under one of the built-in weight fields.
    LiftWeighted,
    /// Like `estimate`, reporting convergence rates between levels.
    Convergence,
    /// Plain liftings across a range of degrees, run concurrently.
    PSweep,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Estimate => "estimate",
            ExperimentKind::Lift => "lift",
            ExperimentKind::LiftWeighted => "lift-weighted",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::PSweep => "p-sweep",
        };
        f.write_str(name)
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "solve" => Ok(ExperimentKind::Solve),
            "estimate" => Ok(ExperimentKind::Estimate),
            "lift" => Ok(ExperimentKind::Lift),
            "lift-weighted" => Ok(ExperimentKind::LiftWeighted),
            "convergence" => Ok(ExperimentKind::Convergence),
            "p-sweep" => Ok(ExperimentKind::PSweep),
            other => Err(format!(
                "unknown experiment kind {other:?}; expected solve, estimate, lift, \
                 lift-weighted, convergence, or p-sweep"
            )),
        }
    }
}

/// Where the mesh comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshSource {
    /// Structured unit square with `2n²` triangles.
    Square { n: usize },
    /// Unit square with seeded diagonal flips and interior jitter.
    PerturbedSquare { n: usize, seed: u64 },
    /// Plain-text mesh files (node, element, boundary).
    Files { nodes: PathBuf, elements: PathBuf, boundary: PathBuf },
}

impl Default for MeshSource {
    fn default() -> Self {
        MeshSource::Square { n: 8 }
    }
}

/// Numerical knobs shared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative tolerance for the equilibration residual checks.
    pub residual: f64,
    /// Margin at which reference values count as converged.
    pub oracle_margin: f64,
    /// Refinement budget of the reference solves.
    pub oracle_refinements: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { residual: 1e-10, oracle_margin: 0.005, oracle_refinements: 4 }
    }
}

/// One experiment, as described by a JSON config file. Every field has a
/// default, so `{}` is a valid config (a degree-1 solve of the sin-sin
/// problem on a structured 8×8 square).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub mesh: MeshSource,
    /// Boundary marking; defaults to what the problem requires, or
    /// bottom-Dirichlet for problems without a requirement.
    pub markers: Option<MarkerRule>,
    pub problem: ProblemId,
    /// Flux degree `p`.
    pub degree: usize,
    /// Primal degree `p′`; defaults to `p` for solve/estimate/convergence
    /// runs and to `1` for the liftings.
    pub primal_degree: Option<usize>,
    pub seed: u64,
    /// Number of mesh levels (base mesh plus refinements) for the leveled
    /// kinds.
    pub refinements: usize,
    /// Degrees visited by `p-sweep`.
    pub sweep_degrees: Vec<usize>,
    /// Weight field for `lift-weighted`.
    pub weight: WeightRule,
    /// Output directory for `report.json`, `table.csv`, `timings.txt`.
    pub out: PathBuf,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Solve,
            mesh: MeshSource::default(),
            markers: None,
            problem: ProblemId::SinSin,
            degree: 1,
            primal_degree: None,
            seed: 0,
            refinements: 3,
            sweep_degrees: (1..=5).collect(),
            weight: WeightRule::Unit,
            out: PathBuf::from("out"),
            tolerances: Tolerances::default(),
        }
    }
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Debug, Default)]
pub struct CliOverrides {
    pub kind: Option<ExperimentKind>,
    pub degree: Option<usize>,
    pub primal_degree: Option<usize>,
    pub mesh: Option<MeshSource>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    /// Applies command-line overrides, which win over the file.
    pub fn with_overrides(mut self, overrides: CliOverrides) -> Self {
        if let Some(kind) = overrides.kind {
            self.kind = kind;
        }
        if let Some(degree) = overrides.degree {
            self.degree = degree;
        }
        if let Some(primal) = overrides.primal_degree {
            self.primal_degree = Some(primal);
        }
        if let Some(mesh) = overrides.mesh {
            self.mesh = mesh;
        }
        if let Some(out) = overrides.out {
            self.out = out;
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        self
    }

    /// Checks the config for internal consistency. File existence and mesh
    /// validity are checked later, when the mesh is read.
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=MAX_DEGREE).contains(&self.degree) {
            return Err(format!(
                "degree must lie in 1..={MAX_DEGREE}, got {}",
                self.degree
            ));
        }
        if let Some(primal) = self.primal_degree {
            if !(1..=self.degree).contains(&primal) {
                return Err(format!(
                    "primal degree must lie in 1..={} (the flux degree), got {primal}",
                    self.degree
                ));
            }
        }
        match &self.mesh {
            MeshSource::Square { n } | MeshSource::PerturbedSquare { n, .. } => {
                if *n < 1 {
                    return Err("mesh resolution n must be at least 1".into());
                }
            }
            MeshSource::Files { .. } => {}
        }
        if self.markers == Some(MarkerRule::FromMesh)
            && !matches!(self.mesh, MeshSource::Files { .. })
        {
            return Err("from-mesh markers require a mesh read from files".into());
        }
        if let (Some(required), Some(markers)) =
            (self.problem.required_markers(), self.markers)
        {
            if markers != required {
                return Err(format!(
                    "problem {} is manufactured for {:?} boundaries and cannot run \
                     with {markers:?}",
                    self.problem, required
                ));
            }
        }
        if self.refinements < 1 {
            return Err("refinements must be at least 1 (the base level)".into());
        }
        if self.kind == ExperimentKind::PSweep {
            if self.sweep_degrees.is_empty() {
                return Err("p-sweep needs a nonempty sweep_degrees list".into());
            }
            if let Some(&bad) =
                self.sweep_degrees.iter().find(|d| !(1..=MAX_DEGREE).contains(*d))
            {
                return Err(format!(
                    "sweep degree {bad} outside the supported range 1..={MAX_DEGREE}"
                ));
            }
        }
        let t = &self.tolerances;
        if !(t.residual > 0.0) || !(t.oracle_margin > 0.0) {
            return Err("tolerances must be positive".into());
        }
        if t.oracle_refinements < 1 {
            return Err("oracle_refinements must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_parses_to_the_defaults_and_validates() {
        let config: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(config.kind, ExperimentKind::Solve);
        assert_eq!(config.degree, 1);
        assert!(matches!(config.mesh, MeshSource::Square { n: 8 }));
        assert_eq!(config.sweep_degrees, vec![1, 2, 3, 4, 5]);
        config.validate().unwrap();
    }

    #[test]
    fn kebab_case_names_round_trip() {
        let json = r#"{
            "kind": "lift-weighted",
            "problem": "constant-flux-neumann",
            "weight": "interior-hat",
            "mesh": { "perturbed-square": { "n": 6, "seed": 9 } }
        }"#;
        let config: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(config.kind, ExperimentKind::LiftWeighted);
        assert_eq!(config.problem, ProblemId::ConstantFluxNeumann);
        assert_eq!(config.weight, WeightRule::InteriorHat);
        assert_eq!(config.mesh, MeshSource::PerturbedSquare { n: 6, seed: 9 });
        let echoed = serde_json::to_string(&config).unwrap();
        assert!(echoed.contains("lift-weighted"));
        assert!(echoed.contains("perturbed-square"));
        let reparsed: ExperimentConfig = serde_json::from_str(&echoed).unwrap();
        assert_eq!(reparsed.kind, config.kind);
        assert_eq!(reparsed.mesh, config.mesh);
    }

    #[test]
    fn kind_strings_parse_and_display_consistently() {
        for kind in [
            ExperimentKind::Solve,
            ExperimentKind::Estimate,
            ExperimentKind::Lift,
            ExperimentKind::LiftWeighted,
            ExperimentKind::Convergence,
            ExperimentKind::PSweep,
        ] {
            assert_eq!(kind.to_string().parse::<ExperimentKind>().unwrap(), kind);
        }
        assert!("guess".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn validation_rejects_inconsistent_configs() {
        let base = ExperimentConfig::default();

        let mut c = base.clone();
        c.degree = 9;
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.degree = 2;
        c.primal_degree = Some(3);
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.markers = Some(MarkerRule::FromMesh);
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.problem = ProblemId::SinSin;
        c.markers = Some(MarkerRule::AllNeumann);
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.kind = ExperimentKind::PSweep;
        c.sweep_degrees = vec![];
        assert!(c.validate().is_err());

        let mut c = base;
        c.refinements = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn overrides_win_over_the_file() {
        let config = ExperimentConfig::default().with_overrides(CliOverrides {
            kind: Some(ExperimentKind::Lift),
            degree: Some(4),
            primal_degree: Some(2),
            mesh: Some(MeshSource::Square { n: 3 }),
            out: Some(PathBuf::from("elsewhere")),
            seed: Some(11),
        });
        assert_eq!(config.kind, ExperimentKind::Lift);
        assert_eq!(config.degree, 4);
        assert_eq!(config.primal_degree, Some(2));
        assert_eq!(config.mesh, MeshSource::Square { n: 3 });
        assert_eq!(config.out, PathBuf::from("elsewhere"));
        assert_eq!(config.seed, 11);
        config.validate().unwrap();
    }
}
