//! Command-line entry point.
//!
//! Every command reads one project configuration (see [`config`]), writes
//! its outputs into `--out`, and finishes with `manifest.json` plus a
//! `timing.json` sidecar. Failures print one JSON object on stderr and exit
//! with 2 for configuration errors, 3 for numeric divergence, 4 for IO
//! errors and 1 otherwise.

pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::constitutive::MaterialSpec;
use crate::dic::{extract, DicDataset};
use crate::error::{Error, Result};
use crate::fem::{solve, BcSchedule, FemSolution};
use crate::field::{compare, to_vtk, FieldSeries};
use crate::loss::WeightsConfig;
use crate::mesh::{write_mesh, HexMesh};
use crate::network::Checkpoint;
use crate::quadrature::evaluations_per_epoch;
use crate::trainer::{train_forward, train_inverse, Mode, StopReason, TrainOptions, TrainReport};

use config::{Loading, MeshConfig, ProjectConfig};
use manifest::{sha256_hex, to_json, FileDigest, Outputs, Overrides, RunManifest, Timing, MANIFEST_FORMAT, TIMING_FORMAT};

#[derive(Debug, Parser)]
#[command(name = "caliper", version, about = "Weak-form PINN forward solves and hyperelastic material calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Project configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `training.seed` and `dic.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `dic.fraction`; for `train-inverse`, applies dropout to the
    /// loaded dataset.
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the computational (and data) mesh.
    MeshGen(CommonArgs),
    /// Solve the load schedule with the finite element oracle.
    OracleSolve(CommonArgs),
    /// Generate a synthetic surface measurement dataset.
    DicGen(CommonArgs),
    /// Train a network for a fully specified material.
    TrainForward(CommonArgs),
    /// Identify trainable material parameters from a dataset.
    TrainInverse(CommonArgs),
    /// Per-step displacement and force errors of a field against a reference.
    Compare(CommonArgs),
    /// Export a field as legacy VTK files, one per step.
    ExportVtk(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MeshGen(_) => "mesh-gen",
            Command::OracleSolve(_) => "oracle-solve",
            Command::DicGen(_) => "dic-gen",
            Command::TrainForward(_) => "train-forward",
            Command::TrainInverse(_) => "train-inverse",
            Command::Compare(_) => "compare",
            Command::ExportVtk(_) => "export-vtk",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::MeshGen(a)
            | Command::OracleSolve(a)
            | Command::DicGen(a)
            | Command::TrainForward(a)
            | Command::TrainInverse(a)
            | Command::Compare(a)
            | Command::ExportVtk(a) => a,
        }
    }
}

/// Error category and process exit code.
pub fn classify(error: &Error) -> (&'static str, i32) {
    match error {
        Error::Config { .. } => ("config", 2),
        Error::Divergence { .. } => ("divergence", 3),
        Error::Io(_) => ("io", 4),
        Error::InvalidArgument(_) => ("invalid-argument", 1),
        Error::Parse { .. } => ("parse", 1),
        Error::Validation(_) => ("mesh-validation", 1),
        Error::GenerationFailure { .. } => ("mesh-generation", 1),
        Error::NonPositiveJacobian { .. } => ("jacobian", 1),
        Error::Inverted { .. } => ("inverted", 1),
        Error::GentLockup { .. } => ("gent-lockup", 1),
        Error::Domain(_) => ("domain", 1),
        Error::Solver { .. } => ("solver", 1),
    }
}

/// One-line JSON description of a failure.
pub fn error_line(error: &Error) -> String {
    let (category, code) = classify(error);
    let mut value = json!({ "error": category, "exit_code": code, "message": error.to_string() });
    match error {
        Error::Config { field, .. } => value["field"] = json!(field),
        Error::Divergence { checkpoint, .. } => value["checkpoint"] = json!(checkpoint.as_ref().map(|p| p.display().to_string())),
        _ => {}
    }
    value.to_string()
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(manifest) => {
            println!("{}: wrote {} files", manifest.command, manifest.outputs.len());
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            classify(&e).1
        }
    }
}

struct Context {
    config: ProjectConfig,
    base: PathBuf,
    config_sha256: String,
    overrides: Overrides,
    out: Outputs,
    inputs: Vec<FileDigest>,
}

impl Context {
    fn load(args: &CommonArgs) -> Result<Self> {
        let text = std::fs::read_to_string(&args.config)?;
        let mut config = ProjectConfig::parse(&text)?;
        if let Some(seed) = args.seed {
            config.training.seed = seed;
            config.dic.seed = seed;
        }
        if let Some(f) = args.fraction {
            config.dic.fraction = f;
        }
        config.validate()?;
        Ok(Self {
            config,
            base: args.config.parent().map(Path::to_path_buf).unwrap_or_default(),
            config_sha256: sha256_hex(text.as_bytes()),
            overrides: Overrides {
                seed: args.seed,
                fraction: args.fraction,
            },
            out: Outputs::new(&args.out)?,
            inputs: Vec::new(),
        })
    }

    /// Resolves an input path and records its digest under the path as
    /// written in the configuration.
    fn input(&mut self, path: &Path) -> Result<PathBuf> {
        let resolved = self.base.join(path);
        let bytes = std::fs::read(&resolved)?;
        let name = path.display().to_string();
        if !self.inputs.iter().any(|f| f.path == name) {
            self.inputs.push(FileDigest {
                path: name,
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(resolved)
    }

    fn required(&self, value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        value.clone().ok_or_else(|| Error::Config {
            field: format!("inputs.{key}"),
            message: "this command needs this input".into(),
        })
    }

    fn build_mesh(&mut self, mesh: &MeshConfig) -> Result<HexMesh> {
        if let MeshConfig::File { path } = mesh {
            self.input(path)?;
        }
        Ok(mesh.build(&self.base)?.0)
    }

    fn mesh(&mut self) -> Result<HexMesh> {
        let m = self.config.mesh.clone();
        self.build_mesh(&m)
    }

    fn data_mesh(&mut self) -> Result<Option<HexMesh>> {
        match self.config.data_mesh.clone() {
            Some(m) => self.build_mesh(&m).map(Some),
            None => Ok(None),
        }
    }

    fn oracle(&self, mesh: &HexMesh, spec: &MaterialSpec) -> Result<FemSolution> {
        let ansatz = self.config.training.ansatz(mesh)?;
        let bcs = match self.config.solver.loading {
            Loading::Uniaxial => BcSchedule::uniaxial(mesh, &ansatz)?,
            Loading::UniaxialStrain => BcSchedule::uniaxial_strain(mesh, &ansatz)?,
        };
        solve(mesh, spec, &bcs, &self.config.solver.options())
    }

    fn finish(mut self, command: &str, seed: u64, start: Instant) -> Result<RunManifest> {
        let manifest = RunManifest {
            format: MANIFEST_FORMAT,
            command: command.into(),
            artifact_version: env!("CARGO_PKG_VERSION"),
            config_sha256: self.config_sha256,
            seed,
            overrides: self.overrides,
            inputs: self.inputs,
            outputs: self.out.files().to_vec(),
        };
        self.out.write("manifest.json", to_json(&manifest))?;
        let timing = Timing {
            format: TIMING_FORMAT,
            command: command.into(),
            wall_seconds: start.elapsed().as_secs_f64(),
            host: manifest::HostInfo::current(),
        };
        std::fs::write(self.out.path("timing.json"), to_json(&timing))?;
        Ok(manifest)
    }
}

/// Runs one command and returns the manifest it wrote.
pub fn run(command: &Command) -> Result<RunManifest> {
    let start = Instant::now();
    let mut ctx = Context::load(command.args())?;
    let seed = match command {
        Command::DicGen(_) => ctx.config.dic.seed,
        _ => ctx.config.training.seed,
    };
    match command {
        Command::MeshGen(_) => mesh_gen(&mut ctx)?,
        Command::OracleSolve(_) => oracle_solve(&mut ctx)?,
        Command::DicGen(_) => dic_gen(&mut ctx)?,
        Command::TrainForward(_) => train(&mut ctx, false)?,
        Command::TrainInverse(args) => {
            ctx.overrides.fraction = args.fraction;
            train(&mut ctx, true)?
        }
        Command::Compare(_) => compare_fields(&mut ctx)?,
        Command::ExportVtk(_) => export_vtk(&mut ctx)?,
    }
    ctx.finish(command.name(), seed, start)
}

fn mesh_summary(mesh: &HexMesh) -> serde_json::Value {
    let (lo, hi) = mesh.bounding_box();
    json!({
        "nodes": mesh.node_count(),
        "elements": mesh.element_count(),
        "volume": mesh.volume(),
        "bounding_box": [[lo[0], lo[1], lo[2]], [hi[0], hi[1], hi[2]]],
        "node_sets": mesh.node_sets().iter().map(|(k, v)| (k.clone(), v.len())).collect::<std::collections::BTreeMap<_, _>>(),
    })
}

fn mesh_gen(ctx: &mut Context) -> Result<()> {
    let mesh = ctx.mesh()?;
    ctx.out.write("mesh.txt", write_mesh(&mesh))?;
    let mut report = json!({ "mesh": mesh_summary(&mesh) });
    if let Some(data) = ctx.data_mesh()? {
        ctx.out.write("data_mesh.txt", write_mesh(&data))?;
        report["data_mesh"] = mesh_summary(&data);
    }
    ctx.out.write("report.json", to_json(&report))
}

fn oracle_csv(solution: &FemSolution, ctx: &Context, mesh: &HexMesh) -> Result<String> {
    let ansatz = ctx.config.training.ansatz(mesh)?;
    let mut out = String::from("step,t,applied_displacement,net_force,iterations,bisections,substeps,final_residual\n");
    for (k, h) in solution.history.iter().enumerate() {
        let n = k + 1;
        writeln!(
            out,
            "{n},{},{},{},{},{},{},{}",
            solution.time(n),
            ansatz.ramp(n),
            solution.net_force[k],
            h.iterations,
            h.bisections,
            h.substeps,
            h.residuals.last().copied().unwrap_or(0.0)
        )
        .unwrap();
    }
    Ok(out)
}

fn oracle_solve(ctx: &mut Context) -> Result<()> {
    let mesh = ctx.mesh()?;
    let spec = ctx.config.oracle_material()?;
    let solution = ctx.oracle(&mesh, &spec)?;
    ctx.out.write("solution.txt", FieldSeries::from_solution(&solution).to_text())?;
    ctx.out.write("oracle.csv", oracle_csv(&solution, ctx, &mesh)?)?;
    let report = json!({
        "model": spec.model().name(),
        "material": material_map(&spec, spec.values()),
        "steps": solution.steps(),
        "net_force": solution.net_force,
        "newton_iterations": solution.history.iter().map(|h| h.iterations).collect::<Vec<_>>(),
        "mesh": mesh_summary(&mesh),
    });
    ctx.out.write("report.json", to_json(&report))
}

fn dic_gen(ctx: &mut Context) -> Result<()> {
    let mesh = match ctx.data_mesh()? {
        Some(m) => m,
        None => ctx.mesh()?,
    };
    let solution = match ctx.config.inputs.solution.clone() {
        Some(p) => {
            let series = FieldSeries::load(ctx.input(&p)?)?;
            FemSolution {
                displacements: series.displacements,
                net_force: series.net_force,
                history: Vec::new(),
            }
        }
        None => {
            let spec = ctx.config.oracle_material()?;
            let solution = ctx.oracle(&mesh, &spec)?;
            ctx.out.write("solution.txt", FieldSeries::from_solution(&solution).to_text())?;
            solution
        }
    };
    let source = sha256_hex(FieldSeries::from_solution(&solution).to_text().as_bytes());
    let dic = ctx.config.dic.clone();
    let mut dataset = extract(&solution, &mesh, &dic.surface, dic.remove_edges)?;
    dataset.provenance.source = format!("fem:{}", &source[..16]);
    let full = dataset.samples.len();
    dataset = dataset.dropout(dic.fraction, dic.seed)?.add_noise(dic.sigma, dic.seed)?;
    ctx.out.write("dataset.txt", dataset.to_text())?;

    let computational = ctx.mesh()?;
    let on_grid = dataset
        .samples
        .iter()
        .filter(|s| computational.nodes().iter().any(|x| (x - s.x).norm() < 1e-12))
        .count();
    let report = json!({
        "surface": dic.surface,
        "remove_edges": dic.remove_edges,
        "fraction": dic.fraction,
        "sigma": dic.sigma,
        "seed": dic.seed,
        "samples": dataset.samples.len(),
        "samples_before_dropout": full,
        "steps": dataset.steps(),
        "off_grid_samples": dataset.samples.len() - on_grid,
    });
    ctx.out.write("report.json", to_json(&report))
}

fn material_map(spec: &MaterialSpec, values: &[f64]) -> serde_json::Value {
    spec.params().iter().zip(values).map(|(p, v)| (p.name().to_string(), json!(v))).collect()
}

fn forces_csv(report: &TrainReport) -> String {
    let mut out = String::from("step,t,applied_displacement,net_force\n");
    for (k, f) in report.final_breakdown.net_force.iter().enumerate() {
        let n = k + 1;
        writeln!(out, "{n},{},{},{f}", report.ansatz.time(n), report.ansatz.ramp(n)).unwrap();
    }
    out
}

fn train(ctx: &mut Context, inverse: bool) -> Result<()> {
    let mesh = ctx.mesh()?;
    let spec = ctx.config.material()?;
    let truth = ctx.config.truth()?;
    let mut cfg = ctx.config.training.clone();
    cfg.mode = if inverse { Mode::Inverse } else { Mode::Forward };
    if inverse && !ctx.config.explicit_weights {
        cfg.weights = WeightsConfig::inverse();
    }
    let resume = match ctx.config.inputs.checkpoint.clone() {
        Some(p) => Some(Checkpoint::load(ctx.input(&p)?)?),
        None => None,
    };
    let options = TrainOptions {
        resume,
        checkpoint_path: (cfg.checkpoint_every > 0).then(|| ctx.out.path("checkpoint.txt")),
        truth: truth.clone(),
    };
    let mut samples = None;
    let report = if inverse {
        let path = ctx.required(&ctx.config.inputs.dataset, "dataset")?;
        let mut dataset = DicDataset::load(ctx.input(&path)?)?;
        if let Some(f) = ctx.overrides.fraction {
            dataset = dataset.dropout(f, ctx.config.dic.seed)?;
        }
        samples = Some(dataset.samples.len());
        train_inverse(&mesh, &spec, &dataset, &cfg, &options)
    } else {
        train_forward(&mesh, &spec, &cfg, &options)
    }
    .map_err(|e| match e {
        Error::Config { field, message } => Error::Config {
            field: format!("training.{field}"),
            message,
        },
        other => other,
    })?;

    ctx.out.write("telemetry.csv", report.to_csv())?;
    let field = FieldSeries::from_network(&report.field(), &mesh, report.final_breakdown.net_force.clone());
    ctx.out.write("field.txt", field.to_text())?;
    ctx.out.write("forces.csv", forces_csv(&report))?;
    if options.checkpoint_path.as_ref().is_some_and(|p| p.exists()) {
        ctx.out.record("checkpoint.txt")?;
    }
    let b = &report.final_breakdown;
    let summary = json!({
        "mode": report.mode,
        "model": spec.model().name(),
        "seed": report.seed,
        "epochs": report.epochs,
        "stop": match report.stop { StopReason::Budget => "budget", StopReason::Tolerance => "tolerance" },
        "evaluations_per_epoch": evaluations_per_epoch(mesh.element_count(), cfg.steps),
        "samples": samples,
        "final": {
            "total": b.total,
            "energy": b.energy,
            "residual": b.residual,
            "data": b.data,
            "force": b.force,
            "inverted": b.inverted,
            "lockup": b.lockup,
        },
        "net_force": b.net_force,
        "material": material_map(&report.material, report.material.values()),
        "truth": report.truth.as_ref().map(|t| material_map(&report.material, t)),
        "relative_error": report.final_relative_errors().map(|e| material_map(&report.material, &e)),
    });
    ctx.out.write("report.json", to_json(&summary))
}

fn compare_fields(ctx: &mut Context) -> Result<()> {
    let field_path = ctx.required(&ctx.config.inputs.field, "field")?;
    let reference_path = ctx.required(&ctx.config.inputs.reference, "reference")?;
    let field = FieldSeries::load(ctx.input(&field_path)?)?;
    let reference = FieldSeries::load(ctx.input(&reference_path)?)?;
    let c = compare(&field, &reference)?;
    let mut csv = String::from("step,t,displacement_rel_l2,net_force,net_force_reference,force_rel\n");
    for k in 0..field.steps() {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            k + 1,
            reference.times[k],
            c.step_displacement[k],
            field.net_force[k],
            reference.net_force[k],
            c.step_force[k]
        )
        .unwrap();
    }
    ctx.out.write("comparison.csv", csv)?;
    let report = json!({
        "displacement_rel_l2": c.displacement,
        "max_force_rel": c.max_force(),
        "step_displacement_rel_l2": c.step_displacement,
        "step_force_rel": c.step_force,
    });
    ctx.out.write("report.json", to_json(&report))
}

fn export_vtk(ctx: &mut Context) -> Result<()> {
    let mesh = ctx.mesh()?;
    match ctx.config.inputs.field.clone() {
        Some(p) => {
            let field = FieldSeries::load(ctx.input(&p)?)?;
            for (k, u) in field.displacements.iter().enumerate() {
                let title = format!("caliper step {} t={}", k + 1, field.times[k]);
                ctx.out.write(&format!("vtk/step_{:03}.vtk", k + 1), to_vtk(&mesh, u, &title)?)?;
            }
        }
        None => {
            let zero = vec![nalgebra::Vector3::zeros(); mesh.node_count()];
            ctx.out.write("vtk/mesh.vtk", to_vtk(&mesh, &zero, "caliper mesh")?)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_categories() {
        let config = Error::Config {
            field: "training.epochs".into(),
            message: "must be >= 1".into(),
        };
        assert_eq!(classify(&config), ("config", 2));
        let line: serde_json::Value = serde_json::from_str(&error_line(&config)).unwrap();
        assert_eq!(line["field"], "training.epochs");
        let div = Error::Divergence {
            epoch: 7,
            streak: 100,
            checkpoint: Some("out/checkpoint.txt".into()),
        };
        assert_eq!(classify(&div).1, 3);
        let line: serde_json::Value = serde_json::from_str(&error_line(&div)).unwrap();
        assert_eq!(line["checkpoint"], "out/checkpoint.txt");
        assert_eq!(classify(&Error::Io(std::io::Error::other("x"))).1, 4);
        assert_eq!(classify(&Error::Domain("x".into())).1, 1);
    }

    #[test]
    fn bad_arguments_exit_with_usage_code() {
        assert_eq!(main_with_args(["caliper", "no-such-command"]), 2);
        assert_eq!(main_with_args(["caliper", "--help"]), 0);
    }
}
