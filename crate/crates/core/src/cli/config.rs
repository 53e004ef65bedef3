//! Project configuration file.
//!
//! One TOML file describes a run. Sections:
//!
//! - `[mesh]` computational mesh, by `kind` (`box`, `plate-with-hole`,
//!   `notched-plate` or `file`)
//! - `[data_mesh]` optional mesh the synthetic measurements are generated on
//! - `[material]` model, parameter values, `trainable` list and `bounds`
//! - `[truth]` optional reference material for synthetic data and error
//!   reporting
//! - `[training]` every training hyperparameter; `steps`, `axis` and
//!   `final_displacement` also define the load schedule of oracle solves.
//!   Without a `[training.weights]` table the loss weights default to the
//!   forward or inverse set of the command being run
//! - `[solver]` Newton settings and the boundary condition layout
//! - `[dic]` measurement synthesis settings
//! - `[inputs]` files produced by earlier commands
//!
//! Relative input paths are resolved against the directory holding the
//! configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::constitutive::{MaterialSpec, Model, Param};
use crate::error::{Error, Result};
use crate::fem::SolverOptions;
use crate::mesh::{generate_box, generate_notched_plate, generate_plate_with_hole, load_mesh, HexMesh, NotchSpec};
use crate::trainer::RunConfig;

fn config_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeshConfig {
    Box {
        lengths: [f64; 3],
        divisions: [usize; 3],
    },
    PlateWithHole {
        width: f64,
        height: f64,
        thickness: f64,
        hole_radius: f64,
        refinement: usize,
    },
    NotchedPlate {
        width: f64,
        height: f64,
        thickness: f64,
        hole_radius: f64,
        refinement: usize,
        notches: Vec<NotchConfig>,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotchConfig {
    /// `true` for the `y = height` edge.
    pub top: bool,
    pub center: f64,
    pub radius: f64,
}

impl MeshConfig {
    /// Builds the mesh, returning the path of any file it was read from.
    pub fn build(&self, base: &Path) -> Result<(HexMesh, Option<PathBuf>)> {
        Ok(match self {
            MeshConfig::Box { lengths, divisions } => (generate_box(*lengths, *divisions)?, None),
            MeshConfig::PlateWithHole {
                width,
                height,
                thickness,
                hole_radius,
                refinement,
            } => (generate_plate_with_hole(*width, *height, *thickness, *hole_radius, *refinement)?, None),
            MeshConfig::NotchedPlate {
                width,
                height,
                thickness,
                hole_radius,
                refinement,
                notches,
            } => {
                let notches: Vec<NotchSpec> = notches
                    .iter()
                    .map(|n| NotchSpec {
                        top: n.top,
                        center: n.center,
                        radius: n.radius,
                    })
                    .collect();
                (generate_notched_plate(*width, *height, *thickness, *hole_radius, &notches, *refinement)?, None)
            }
            MeshConfig::File { path } => (load_mesh(base.join(path))?, Some(path.clone())),
        })
    }
}

/// A material block: `model`, one key per parameter value (`K`, `mu`,
/// `Jm`), an optional `trainable` list and optional `bounds` per parameter.
/// Values of trainable parameters may be omitted and then start at the
/// middle of their bounds.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MaterialConfig {
    pub model: Model,
    #[serde(default)]
    pub trainable: Vec<String>,
    #[serde(default)]
    pub bounds: BTreeMap<String, [f64; 2]>,
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
}

impl MaterialConfig {
    pub fn build(&self, section: &str) -> Result<MaterialSpec> {
        let params = self.model.params();
        let lookup = |key: &str, field: String| -> Result<Param> {
            let p: Param = key.parse().map_err(|e: Error| config_err(&field, e.to_string()))?;
            if !params.contains(&p) {
                return Err(config_err(field, format!("{} has no parameter `{key}`", self.model)));
            }
            Ok(p)
        };
        let mut values: BTreeMap<Param, f64> = BTreeMap::new();
        for (k, v) in &self.values {
            values.insert(lookup(k, format!("{section}.{k}"))?, *v);
        }
        let mut trainable = Vec::new();
        for k in &self.trainable {
            trainable.push(lookup(k, format!("{section}.trainable"))?);
        }
        let mut bounds = BTreeMap::new();
        for (k, b) in &self.bounds {
            bounds.insert(lookup(k, format!("{section}.bounds.{k}"))?, *b);
        }
        let ordered = params
            .iter()
            .map(|p| match values.get(p) {
                Some(v) => Ok(*v),
                None if trainable.contains(p) => {
                    let (lo, hi) = bounds.get(p).map_or(p.default_bounds(), |b| (b[0], b[1]));
                    Ok(0.5 * (lo + hi))
                }
                None => Err(config_err(format!("{section}.{}", p.name()), "missing parameter value")),
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut spec = MaterialSpec::new(self.model, &ordered).map_err(|e| config_err(section, e.to_string()))?;
        for (p, b) in bounds {
            spec.set_bounds(p, b[0], b[1])
                .map_err(|e| config_err(format!("{section}.bounds.{}", p.name()), e.to_string()))?;
        }
        for p in trainable {
            spec.set_trainable(p, true)?;
        }
        Ok(spec)
    }
}

/// How the oracle constrains the body: `uniaxial` clamps the fixed face
/// and drives the moving face along the axis with zero transverse motion;
/// `uniaxial-strain` additionally fixes every transverse displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loading {
    #[default]
    Uniaxial,
    UniaxialStrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub max_iterations: usize,
    pub max_bisections: usize,
    pub loading: Loading,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            newton_tol: o.newton_tol,
            max_iterations: o.max_iterations,
            max_bisections: o.max_bisections,
            loading: Loading::default(),
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            newton_tol: self.newton_tol,
            max_iterations: self.max_iterations,
            max_bisections: self.max_bisections,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DicConfig {
    /// Node set the measurements are taken on.
    pub surface: String,
    pub remove_edges: bool,
    pub fraction: f64,
    /// Standard deviation of the added displacement noise (mm).
    pub sigma: f64,
    pub seed: u64,
}

impl Default for DicConfig {
    fn default() -> Self {
        Self {
            surface: "zmax".into(),
            remove_edges: true,
            fraction: 1.0,
            sigma: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsConfig {
    /// Oracle solution on the data mesh, used by `dic-gen` instead of a
    /// fresh solve.
    pub solution: Option<PathBuf>,
    /// Measurement dataset for `train-inverse`.
    pub dataset: Option<PathBuf>,
    /// Field for `compare` and `export-vtk`.
    pub field: Option<PathBuf>,
    /// Reference field for `compare`.
    pub reference: Option<PathBuf>,
    /// Checkpoint a training run resumes from.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub mesh: MeshConfig,
    #[serde(default)]
    pub data_mesh: Option<MeshConfig>,
    #[serde(default)]
    pub material: Option<MaterialConfig>,
    #[serde(default)]
    pub truth: Option<MaterialConfig>,
    #[serde(default)]
    pub training: RunConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub dic: DicConfig,
    #[serde(default)]
    pub inputs: InputsConfig,
    /// Whether the file gave `[training.weights]` explicitly.
    #[serde(skip)]
    pub explicit_weights: bool,
}

impl ProjectConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| config_err("", e.message().trim().to_string()))?;
        let explicit_weights = value.get("training").and_then(|t| t.get("weights")).is_some();
        let mut config: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path == "." { String::new() } else { path }, e.inner().to_string())
        })?;
        config.explicit_weights = explicit_weights;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate().map_err(|e| match e {
            Error::Config { field, message } => config_err(format!("training.{field}"), message),
            other => other,
        })?;
        if let Some(m) = &self.material {
            m.build("material")?;
        }
        if let Some(t) = &self.truth {
            if !t.trainable.is_empty() {
                return Err(config_err("truth.trainable", "the truth material cannot have trainable parameters"));
            }
            t.build("truth")?;
        }
        let d = &self.dic;
        if !(d.fraction > 0.0 && d.fraction <= 1.0) {
            return Err(config_err("dic.fraction", "must lie in (0, 1]"));
        }
        if !(d.sigma >= 0.0 && d.sigma.is_finite()) {
            return Err(config_err("dic.sigma", "must be finite and >= 0"));
        }
        let s = &self.solver;
        if !(s.newton_tol > 0.0) || s.max_iterations == 0 {
            return Err(config_err("solver", "newton_tol and max_iterations must be positive"));
        }
        Ok(())
    }

    pub fn material(&self) -> Result<MaterialSpec> {
        self.material
            .as_ref()
            .ok_or_else(|| config_err("material", "this command needs a [material] section"))?
            .build("material")
    }

    pub fn truth(&self) -> Result<Option<MaterialSpec>> {
        self.truth.as_ref().map(|t| t.build("truth")).transpose()
    }

    /// Material used for oracle solves: the truth when given, otherwise the
    /// configured material.
    pub fn oracle_material(&self) -> Result<MaterialSpec> {
        match self.truth()? {
            Some(t) => Ok(t),
            None => {
                let m = self.material()?;
                if m.trainable_count() > 0 {
                    return Err(config_err("truth", "an oracle solve needs a [truth] section when [material] has trainable parameters"));
                }
                Ok(m)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[mesh]\nkind = \"box\"\nlengths = [1.0, 1.0, 1.0]\ndivisions = [2, 2, 2]\n";

    fn field_of(text: &str) -> String {
        match ProjectConfig::parse(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ProjectConfig::parse(BASE).unwrap();
        assert_eq!(c.training, RunConfig::default());
        assert_eq!(c.dic, DicConfig::default());
        assert!(c.material().is_err());
        let (mesh, file) = c.mesh.build(Path::new(".")).unwrap();
        assert_eq!((mesh.element_count(), file), (8, None));
    }

    #[test]
    fn schema_violations_report_the_field_path() {
        assert_eq!(field_of(&format!("{BASE}[training]\nepoch = 3\n")), "training.epoch");
        assert_eq!(field_of(&format!("{BASE}[training]\nepochs = \"many\"\n")), "training.epochs");
        assert_eq!(field_of(&format!("{BASE}[training]\nepochs = 0\n")), "training.epochs");
        assert_eq!(field_of(&format!("{BASE}[training.weights]\nalpha = 1.0\n")), "training.weights");
        assert_eq!(field_of(&format!("{BASE}[dic]\nfraction = 0.0\n")), "dic.fraction");
        assert_eq!(field_of(&format!("{BASE}[material]\nmodel = \"gent\"\nK = 1.0\nmu = 1.0\n")), "material.Jm");
        assert_eq!(field_of(&format!("{BASE}[material]\nmodel = \"blatz-ko\"\nK = 1.0\nmu = 1.0\n")), "material.K");
        assert_eq!(field_of(&format!("{BASE}[material]\nmodel = \"plastic\"\n")), "material.model");
        assert_eq!(field_of("[mesh]\nkind = \"box\"\nlengths = [1.0, 1.0, 1.0]\n"), "mesh");
        assert_eq!(field_of("[mesh\n"), "");
    }

    #[test]
    fn material_block_builds_a_spec() {
        let text = format!(
            "{BASE}[material]\nmodel = \"neo-hookean\"\nK = 2.0\ntrainable = [\"mu\", \"K\"]\n\
             bounds = {{ mu = [0.0, 10.0] }}\n[truth]\nmodel = \"neo-hookean\"\nK = 2.167\nmu = 1.0\n"
        );
        let c = ProjectConfig::parse(&text).unwrap();
        let m = c.material().unwrap();
        assert_eq!(m.values(), &[2.0, 5.0]);
        assert_eq!(m.trainable(), &[true, true]);
        assert_eq!(m.bounds()[1], (0.0, 10.0));
        assert_eq!(c.oracle_material().unwrap().values(), &[2.167, 1.0]);
    }
}
