//! Forward and inverse training loops.
//!
//! Every epoch evaluates the full-batch loss over all elements, quadrature
//! points and load steps, then applies one Adam update. Inverse runs
//! additionally update the trainable material parameters, which are
//! optimized as logarithms so that moduli of very different magnitudes
//! share one learning rate and stay positive.
//!
//! An epoch whose loss or gradient is not finite is skipped without an
//! update. After [`DIVERGENCE_STREAK`] such epochs in a row the run stops
//! with a divergence error pointing at the last checkpoint.

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constitutive::MaterialSpec;
use crate::dic::DicDataset;
use crate::error::{invalid, Error, Result};
use crate::loss::{LossBreakdown, LossEngine, LossProblem, WeightsConfig};
use crate::mesh::HexMesh;
use crate::network::{Activation, AdamState, AnsatzConfig, Checkpoint, DisplacementField, InputScaling, MlpState};
use crate::quadrature::build_cache;

/// Consecutive non-finite epochs that abort a run.
pub const DIVERGENCE_STREAK: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Forward,
    Inverse,
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub epochs: usize,
    /// The run stops once the squared free-dof residual falls below this.
    pub tolerance: f64,
    pub weights: WeightsConfig,
    pub learning_rate: f64,
    /// Material learning rate relative to `learning_rate`.
    pub material_lr_multiplier: f64,
    pub seed: u64,
    pub steps: usize,
    /// Displacement of the moving face at the final step (mm).
    pub final_displacement: f64,
    /// Stretch axis of the boundary ansatz.
    pub axis: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    /// Factor applied to the initial output-layer weights. Small values
    /// start the field close to the boundary ansatz.
    pub output_init_scale: f64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Let the energy term drive the material parameters as well.
    pub energy_material_gradient: bool,
    /// Draw the trainable material parameters uniformly from their bounds
    /// before an inverse run.
    pub randomize_material: bool,
    /// Consecutive epochs with locked-up Gent samples that abort an inverse
    /// run.
    pub lockup_patience: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Forward,
            epochs: 1000,
            tolerance: 1e-8,
            weights: WeightsConfig::forward(),
            learning_rate: 1e-3,
            material_lr_multiplier: 1.0,
            seed: 0,
            steps: 10,
            final_displacement: 0.1,
            axis: 0,
            hidden_layers: 2,
            width: 20,
            activation: Activation::Relu,
            output_init_scale: 0.01,
            checkpoint_every: 0,
            energy_material_gradient: false,
            randomize_material: true,
            lockup_patience: 1000,
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn inverse() -> Self {
        Self {
            mode: Mode::Inverse,
            weights: WeightsConfig::inverse(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err("epochs", "must be >= 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(config_err("tolerance", "must be > 0"));
        }
        self.weights
            .validate()
            .map_err(|e| config_err("weights", e.to_string()))?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("learning_rate", "must be finite and > 0"));
        }
        if !(self.material_lr_multiplier > 0.0 && self.material_lr_multiplier.is_finite()) {
            return Err(config_err("material_lr_multiplier", "must be finite and > 0"));
        }
        if self.steps == 0 {
            return Err(config_err("steps", "must be >= 1"));
        }
        if !self.final_displacement.is_finite() {
            return Err(config_err("final_displacement", "must be finite"));
        }
        if self.axis > 2 {
            return Err(config_err("axis", "must be 0, 1 or 2"));
        }
        if !(self.output_init_scale >= 0.0 && self.output_init_scale.is_finite()) {
            return Err(config_err("output_init_scale", "must be finite and >= 0"));
        }
        if self.width == 0 {
            return Err(config_err("width", "must be >= 1"));
        }
        if self.mode == Mode::Inverse && self.weights.gamma == 0.0 && self.weights.delta == 0.0 {
            return Err(config_err("weights", "an inverse run needs gamma > 0 or delta > 0"));
        }
        Ok(())
    }

    /// Freshly initialized network for this configuration.
    pub fn network(&self) -> Result<MlpState> {
        let mut mlp = MlpState::with_hidden(4, self.hidden_layers, self.width, 3, self.activation)?;
        mlp.init(self.seed);
        let last = mlp.layer_count() - 1;
        for w in mlp.layer_mut(last).0 {
            *w *= self.output_init_scale;
        }
        Ok(mlp)
    }

    pub fn ansatz(&self, mesh: &HexMesh) -> Result<AnsatzConfig> {
        AnsatzConfig::for_mesh(mesh, self.axis, self.final_displacement, self.steps)
    }
}

/// Telemetry of one completed epoch, measured before its update.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    pub breakdown: LossBreakdown,
    /// All material parameter values in model order.
    pub material: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    Tolerance,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub mode: Mode,
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    pub mlp: MlpState,
    pub material: MaterialSpec,
    /// Material values of the truth, when known.
    pub truth: Option<Vec<f64>>,
    pub stop: StopReason,
    /// Total completed epochs including any before a resume.
    pub epochs: usize,
    pub seconds: f64,
    /// Ansatz and scaling of the trained field.
    pub ansatz: AnsatzConfig,
    pub scaling: InputScaling,
    /// Loss of the returned network and material.
    pub final_breakdown: LossBreakdown,
}

impl TrainReport {
    pub fn field(&self) -> DisplacementField {
        DisplacementField {
            mlp: self.mlp.clone(),
            ansatz: self.ansatz,
            scaling: self.scaling,
        }
    }

    /// `|p - p_true| / p_true` per material parameter for one record.
    pub fn relative_errors(&self, record: &EpochRecord) -> Option<Vec<f64>> {
        let truth = self.truth.as_ref()?;
        Some(record.material.iter().zip(truth).map(|(p, t)| ((p - t) / t).abs()).collect())
    }

    /// Relative errors of the final material parameters.
    pub fn final_relative_errors(&self) -> Option<Vec<f64>> {
        let truth = self.truth.as_ref()?;
        Some(self.material.values().iter().zip(truth).map(|(p, t)| ((p - t) / t).abs()).collect())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Record of a given 1-based epoch, if it was run in this report.
    pub fn record(&self, epoch: usize) -> Option<&EpochRecord> {
        let first = self.records.first()?.epoch;
        self.records.get(epoch.checked_sub(first)?)
    }

    /// Per-epoch telemetry as CSV. Wall-clock time is left out so that
    /// reruns produce identical bytes.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let names: Vec<&str> = self.material.params().iter().map(|p| p.name()).collect();
        let mut out = String::from("epoch,total,energy,residual,data,force,inverted,lockup,net_force_final");
        for n in &names {
            write!(out, ",{n}").unwrap();
        }
        if self.truth.is_some() {
            for n in &names {
                write!(out, ",rel_err_{n}").unwrap();
            }
        }
        out.push('\n');
        for r in &self.records {
            let b = &r.breakdown;
            write!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                b.total,
                b.energy,
                b.residual,
                b.data,
                b.force,
                b.inverted,
                b.lockup,
                b.net_force.last().copied().unwrap_or(f64::NAN)
            )
            .unwrap();
            for v in &r.material {
                write!(out, ",{v}").unwrap();
            }
            if let Some(errs) = self.relative_errors(r) {
                for e in errs {
                    write!(out, ",{e}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Where and whether a run reads and writes checkpoints.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub resume: Option<Checkpoint>,
    pub checkpoint_path: Option<PathBuf>,
    /// Material truth used only for reporting relative errors.
    pub truth: Option<MaterialSpec>,
}

struct State {
    mlp: MlpState,
    adam: AdamState,
    theta: Vec<f64>,
    material_adam: AdamState,
    epoch: usize,
    streak: usize,
}

impl State {
    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch: self.epoch,
            nonfinite_streak: self.streak,
            mlp: self.mlp.clone(),
            adam: self.adam.clone(),
            material: self.theta.clone(),
            material_adam: self.material_adam.clone(),
        }
    }
}

fn trainable_indices(spec: &MaterialSpec) -> Vec<usize> {
    spec.trainable().iter().enumerate().filter(|(_, t)| **t).map(|(i, _)| i).collect()
}

fn apply_theta(spec: &mut MaterialSpec, idx: &[usize], theta: &[f64]) -> Result<()> {
    let mut values = spec.values().to_vec();
    for (&i, th) in idx.iter().zip(theta) {
        values[i] = th.exp();
    }
    spec.set_values(&values)
}

/// Forward training: the material is fixed and only the network learns.
pub fn train_forward(mesh: &HexMesh, spec: &MaterialSpec, config: &RunConfig, options: &TrainOptions) -> Result<TrainReport> {
    if spec.trainable_count() > 0 {
        return Err(invalid("forward training needs a fully specified material with nothing trainable"));
    }
    if config.mode != Mode::Forward {
        return Err(config_err("mode", "train_forward needs mode = \"forward\""));
    }
    run(mesh, spec, None, config, options)
}

/// Inverse training against a displacement and force dataset.
pub fn train_inverse(
    mesh: &HexMesh,
    spec: &MaterialSpec,
    dataset: &DicDataset,
    config: &RunConfig,
    options: &TrainOptions,
) -> Result<TrainReport> {
    if spec.trainable_count() == 0 {
        return Err(invalid("inverse training needs at least one trainable material parameter"));
    }
    if dataset.samples.is_empty() {
        return Err(invalid("inverse training needs a non-empty dataset"));
    }
    if config.mode != Mode::Inverse {
        return Err(config_err("mode", "train_inverse needs mode = \"inverse\""));
    }
    run(mesh, spec, Some(dataset), config, options)
}

/// One inverse run per dropout fraction of the same dataset.
pub fn dropout_study(
    mesh: &HexMesh,
    spec: &MaterialSpec,
    dataset: &DicDataset,
    fractions: &[f64],
    config: &RunConfig,
    truth: Option<&MaterialSpec>,
) -> Result<Vec<(f64, TrainReport)>> {
    let subsets = fractions
        .iter()
        .map(|&f| dataset.dropout(f, config.seed).map(|d| (f, d)))
        .collect::<Result<Vec<_>>>()?;
    let options = TrainOptions {
        truth: truth.cloned(),
        ..Default::default()
    };
    subsets
        .into_iter()
        .map(|(f, d)| train_inverse(mesh, spec, &d, config, &options).map(|r| (f, r)))
        .collect()
}

fn run(mesh: &HexMesh, spec: &MaterialSpec, dataset: Option<&DicDataset>, config: &RunConfig, options: &TrainOptions) -> Result<TrainReport> {
    config.validate()?;
    let start = Instant::now();
    let ansatz = config.ansatz(mesh)?;
    let scaling = InputScaling::for_mesh(mesh);
    let (samples, measured_forces) = match dataset {
        Some(d) => {
            if d.steps() != config.steps {
                return Err(invalid(format!(
                    "dataset has {} force steps but the run uses {}",
                    d.steps(),
                    config.steps
                )));
            }
            (d.samples.clone(), Some(d.force_values()))
        }
        None => (Vec::new(), None),
    };
    let problem = LossProblem {
        nodes: mesh.nodes().to_vec(),
        cache: build_cache(mesh)?,
        ansatz,
        scaling,
        weights: config.weights,
        energy_material_gradient: config.energy_material_gradient,
        samples,
        measured_forces,
    };
    let mut engine = LossEngine::new(problem, spec.model())?;
    let mut material = spec.clone();
    let idx = trainable_indices(spec);
    if config.mode == Mode::Inverse && config.randomize_material {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d61_7465_7269_616c);
        material.randomize_trainable(&mut rng);
    }

    let mut state = match &options.resume {
        Some(ck) => {
            if ck.material.len() != idx.len() || ck.mlp.param_count() != config.network()?.param_count() {
                return Err(invalid("checkpoint does not match the configured network and material"));
            }
            apply_theta(&mut material, &idx, &ck.material)?;
            State {
                mlp: ck.mlp.clone(),
                adam: ck.adam.clone(),
                theta: ck.material.clone(),
                material_adam: ck.material_adam.clone(),
                epoch: ck.epoch,
                streak: ck.nonfinite_streak,
            }
        }
        None => {
            let mlp = config.network()?;
            let theta: Vec<f64> = idx.iter().map(|&i| material.values()[i].ln()).collect();
            State {
                adam: AdamState::new(mlp.param_count(), config.learning_rate),
                material_adam: AdamState::new(theta.len(), config.learning_rate * config.material_lr_multiplier),
                mlp,
                theta,
                epoch: 0,
                streak: 0,
            }
        }
    };
    let bounds: Vec<(f64, f64)> = idx.iter().map(|&i| material.bounds()[i]).collect();
    let mut records = Vec::with_capacity(config.epochs.saturating_sub(state.epoch));
    let mut stop = StopReason::Budget;
    let mut lockup_streak = 0;
    let mut last_saved: Option<PathBuf> = None;
    let mut d_theta = vec![0.0; idx.len()];

    while state.epoch < config.epochs {
        let eval = engine.evaluate(&state.mlp, &material, true)?;
        state.epoch += 1;
        let b = eval.breakdown;
        let finite = b.is_finite() && eval.grads.d_weights.iter().all(|g| g.is_finite()) && eval.grads.d_material.iter().all(|g| g.is_finite());
        let converged = finite && b.residual < config.tolerance;
        if config.mode == Mode::Inverse && b.lockup > 0 {
            lockup_streak += 1;
            if lockup_streak >= config.lockup_patience {
                return Err(Error::Domain(format!(
                    "Gent lock-up at {} quadrature samples for {lockup_streak} consecutive epochs \
                     (Jm = {}); initialize Jm larger",
                    b.lockup,
                    material.values()[2]
                )));
            }
        } else {
            lockup_streak = 0;
        }
        records.push(EpochRecord {
            epoch: state.epoch,
            breakdown: b,
            material: material.values().to_vec(),
        });
        if !finite {
            state.streak += 1;
            if state.streak >= DIVERGENCE_STREAK {
                return Err(Error::Divergence {
                    epoch: state.epoch,
                    streak: state.streak,
                    checkpoint: last_saved,
                });
            }
        } else {
            state.streak = 0;
            if converged {
                stop = StopReason::Tolerance;
                break;
            }
            state.adam.update(state.mlp.params_mut(), &eval.grads.d_weights)?;
            if config.mode == Mode::Inverse && !idx.is_empty() {
                for (k, &i) in idx.iter().enumerate() {
                    d_theta[k] = eval.grads.d_material[i] * material.values()[i];
                }
                state.material_adam.update(&mut state.theta, &d_theta)?;
                for (th, (lo, hi)) in state.theta.iter_mut().zip(&bounds) {
                    *th = th.clamp(lo.ln(), hi.ln());
                }
                apply_theta(&mut material, &idx, &state.theta)?;
            }
        }
        if config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0 {
            if let Some(path) = &options.checkpoint_path {
                state.checkpoint().save(path)?;
                last_saved = Some(path.clone());
            }
        }
    }

    let final_breakdown = match (stop, records.last()) {
        (StopReason::Tolerance, Some(r)) => r.breakdown.clone(),
        _ => engine.evaluate(&state.mlp, &material, false)?.breakdown,
    };
    Ok(TrainReport {
        final_breakdown,
        mode: config.mode,
        seed: config.seed,
        records,
        mlp: state.mlp,
        material,
        truth: options.truth.as_ref().map(|t| t.values().to_vec()),
        stop,
        epochs: state.epoch,
        seconds: start.elapsed().as_secs_f64(),
        ansatz,
        scaling,
    })
}
