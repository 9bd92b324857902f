use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::config::{Baseline, ExperimentConfig, Task};
use super::loss::{evaluate_loss, loss_on_graph, LossKind};
use super::metrics::{uv_distortion, vertex_error_cdf, vertex_errors, Cdf, UvDistortion};
use crate::autodiff::{adam_step, AdamState, Checkpoint, Graph, LrSchedule};
use crate::error::{Error, Result};
use crate::mesh::{
    load_mesh, normalize_mesh, partition_by_x, subdivide_threshold, vertex_normals, MeshFormat, TriangleMesh,
    VertexPartition,
};
use crate::model::{Architecture, FieldModel, MeshOperators, ModelConfig, ModelMetadata};
use crate::spectral::{assemble_laplacian, cache::cached_basis, EigenOptions, SpectralBasis};

/// Widest component stack tried when matching baseline capacity.
const MAX_MATCH_WIDTH: usize = 4096;

/// Allowed relative gap between baseline and reference parameter counts.
pub const CAPACITY_TOLERANCE: f64 = 0.1;

/// One supervised mesh: its operators and the per-vertex target.
#[derive(Debug, Clone)]
pub struct Sample {
    pub mesh: TriangleMesh,
    pub ops: MeshOperators,
    pub target: Array2<f64>,
}

/// Full-batch Adam on `samples`, visiting them round-robin. Returns the loss
/// recorded at every iteration, before that iteration's update.
pub fn fit(
    model: &mut FieldModel,
    samples: &[Sample],
    loss: LossKind,
    schedule: &LrSchedule,
    iterations: usize,
    adam: &mut AdamState,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    schedule.validate()?;
    let mut history = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let sample = &samples[it % samples.len()];
        let mut step = || -> Result<f64> {
            let mut g = Graph::new();
            let trace = model.forward(&mut g, &sample.ops, None)?;
            let l = loss_on_graph(&mut g, loss, trace.output, &sample.target)?;
            g.backward(l, &mut model.params)?;
            let value = g.scalar(l);
            adam_step(&mut model.params, adam, schedule.lr_at(it))?;
            Ok(value)
        };
        let value = step().map_err(|e| Error::Training { iteration: it, source: Box::new(e) })?;
        log::debug!("iteration {it}: loss {value:.6e}");
        history.push(value);
    }
    Ok(history)
}

/// Parameter counts behind a baseline comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub reference: usize,
    pub baseline: usize,
    /// Component width the baseline ended up with.
    pub width: usize,
}

fn baseline_config(kind: Baseline, config: &ModelConfig, width: usize) -> ModelConfig {
    let mut c = config.clone();
    match kind {
        Baseline::NLevel => {}
        Baseline::OneLevel => {
            c.levels = 1;
            c.alpha = vec![config.alpha(1)];
            c.component.width = width;
        }
        Baseline::PlainDiffusionnet => {
            c.architecture = Architecture::PlainDiffusionNet;
            c.component.width = width;
        }
    }
    c
}

/// Builds the model for `kind`. Baselines get the component width whose
/// trainable parameter count is closest to the N-level model built from
/// `config`; the match must land within [`CAPACITY_TOLERANCE`].
pub fn build_baseline(kind: Baseline, config: &ModelConfig, t_base: f64) -> Result<(FieldModel, CapacityReport)> {
    let reference = FieldModel::new(config, t_base)?;
    let target = reference.trainable_count();
    if target == 0 {
        return Err(Error::Config("model has no trainable parameters".into()));
    }
    if kind == Baseline::NLevel {
        let width = config.component.width;
        return Ok((reference, CapacityReport { reference: target, baseline: target, width }));
    }
    let count = |w: usize| -> Result<usize> { Ok(FieldModel::new(&baseline_config(kind, config, w), t_base)?.trainable_count()) };
    let (mut lo, mut hi) = (1, MAX_MATCH_WIDTH);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if count(mid)? >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut best = lo;
    if lo > 1 && count(lo - 1)?.abs_diff(target) <= count(lo)?.abs_diff(target) {
        best = lo - 1;
    }
    let model = FieldModel::new(&baseline_config(kind, config, best), t_base)?;
    let got = model.trainable_count();
    if got.abs_diff(target) as f64 > CAPACITY_TOLERANCE * target as f64 {
        return Err(Error::Config(format!(
            "cannot match {kind:?} capacity: best width {best} gives {got} parameters against {target}"
        )));
    }
    Ok((model, CapacityReport { reference: target, baseline: got, width: best }))
}

/// The first `k` eigenpairs of `basis`.
pub fn truncate_basis(basis: &SpectralBasis, k: usize) -> SpectralBasis {
    let k = k.min(basis.k());
    SpectralBasis {
        phi: basis.phi.slice(s![.., ..k]).to_owned(),
        lambda: basis.lambda[..k].to_vec(),
        mass: basis.mass.clone(),
    }
}

/// Loads a mesh in any supported format, optionally normalizing it.
pub fn load_experiment_mesh(path: &Path, normalize: bool) -> Result<TriangleMesh> {
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| Error::Config(format!("unknown mesh format for {}", path.display())))?;
    let mesh = load_mesh(path, format)?;
    if normalize {
        normalize_mesh(&mesh)
    } else {
        Ok(mesh)
    }
}

/// Checkpoint metadata: the model description plus the experiment that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    #[serde(flatten)]
    pub model: ModelMetadata,
    pub experiment: Option<ExperimentConfig>,
}

/// Everything measured at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub baseline: Baseline,
    pub seed: u64,
    pub iterations: usize,
    pub capacity: CapacityReport,
    /// Loss of the trained model on the evaluation mesh.
    pub final_loss: f64,
    /// Trained-model loss on each training mesh, in training order.
    pub train_losses: Vec<f64>,
    /// Mean per-vertex error within each x-group of the synthetic target.
    pub group_mse: Vec<f64>,
    pub flipped_percent: Option<f64>,
    pub excluded_faces: Option<usize>,
    pub diffusion_times: Vec<(String, Vec<f64>)>,
    pub runtime_seconds: f64,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub loss_history: Vec<f64>,
    #[serde(skip)]
    pub vertex_errors: Vec<f64>,
    #[serde(skip)]
    pub cdf: Vec<Cdf>,
    #[serde(skip)]
    pub uv: Option<UvDistortion>,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FieldModel,
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
    /// Evaluation mesh (the training mesh, or the held-out level).
    pub mesh: TriangleMesh,
    pub prediction: Array2<f64>,
    pub target: Array2<f64>,
}

fn loss_for(task: Task) -> LossKind {
    match task {
        Task::NormalsGeneralization => LossKind::Cosine,
        _ => LossKind::Mse,
    }
}

/// Per-vertex errors for reports: channel-mean squared error, or the cosine
/// distance for normal fields.
pub fn per_vertex_errors(task: Task, y: &Array2<f64>, target: &Array2<f64>) -> Result<Vec<f64>> {
    match loss_for(task) {
        LossKind::Mse => vertex_errors(y.view(), target.view()),
        LossKind::Cosine => (0..y.nrows())
            .map(|v| evaluate_loss(LossKind::Cosine, y.slice(s![v..v + 1, ..]), target.slice(s![v..v + 1, ..])))
            .collect(),
    }
}

/// Operators and target for one mesh of a single-mesh task, sharing one
/// eigensolve between the model and the synthetic target.
pub fn prepare_sample(config: &ExperimentConfig, mesh: &TriangleMesh, levels: usize) -> Result<(Sample, Option<VertexPartition>)> {
    let needed = config.synth.as_ref().map_or(0, |s| s.eigenpairs_needed());
    let n = mesh.n_vertices();
    let k = config.model.k_eig.max(needed).min(n);
    if config.model.k_eig > n {
        log::warn!("mesh has {n} vertices; using {n} eigenpairs instead of {}", config.model.k_eig);
    }
    let pair = assemble_laplacian(mesh)?;
    let basis = cached_basis(mesh, &pair, k, config.cache_dir.as_deref(), &EigenOptions::default())?;
    let (target, partition) = match config.task {
        Task::RgbSynthetic => {
            let spec = config.synth.as_ref().ok_or_else(|| Error::Config("missing synth section".into()))?;
            let field = spec.build(mesh, Some(&basis))?;
            (field.values, Some(partition_by_x(mesh, &spec.thresholds)?))
        }
        Task::UvSupervised => {
            let uv = mesh
                .uv_array()
                .ok_or_else(|| Error::Config(format!("mesh {} has no UV coordinates", config.mesh.display())))?;
            (uv, None)
        }
        Task::NormalsGeneralization => (vertex_normals(mesh)?.values, None),
    };
    let model_basis = Arc::new(truncate_basis(&basis, config.model.k_eig.min(n)));
    let ops = MeshOperators::from_basis(mesh, model_basis, levels, config.model.component.use_gradient_features)?;
    Ok((Sample { mesh: mesh.clone(), ops, target }, partition))
}

fn checkpoint_for(model: &FieldModel, config: &ExperimentConfig, iterations: usize, adam: AdamState) -> Result<Checkpoint> {
    let meta = RunMetadata { model: model.metadata(), experiment: Some(config.clone()) };
    Ok(Checkpoint {
        metadata: serde_json::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?,
        iteration: iterations as u64,
        params: model.params.clone(),
        adam: Some(adam),
    })
}

/// Runs the experiment described by `config` and measures the trained model.
pub fn train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.task == Task::NormalsGeneralization {
        return run_generalization(config);
    }
    let start = Instant::now();
    let mut model_cfg = config.model.clone();
    model_cfg.seed = config.seed;
    let mesh = load_experiment_mesh(&config.mesh, config.normalize)?;
    let levels = baseline_config(config.baseline, &model_cfg, 1).effective_levels();
    let (sample, partition) = prepare_sample(config, &mesh, levels)?;
    let t_base = sample.ops.mean_edge_length.powi(2);
    let (mut model, capacity) = build_baseline(config.baseline, &model_cfg, t_base)?;
    let mut adam = AdamState::new(&model.params);
    let loss = loss_for(config.task);
    let history = fit(&mut model, std::slice::from_ref(&sample), loss, &config.schedule, config.iterations, &mut adam)?;
    let prediction = model.predict(&sample.ops, None)?;
    let final_loss = evaluate_loss(loss, prediction.view(), sample.target.view())?;
    let errors = per_vertex_errors(config.task, &prediction, &sample.target)?;
    let groups: Vec<Vec<usize>> = match &partition {
        Some(p) => (0..p.group_count).map(|g| p.members(g)).filter(|m| !m.is_empty()).collect(),
        None => vec![(0..errors.len()).collect()],
    };
    let group_mse = groups
        .iter()
        .map(|g| g.iter().map(|&v| errors[v]).sum::<f64>() / g.len() as f64)
        .collect();
    let max_err = errors.iter().cloned().fold(0.0, f64::max);
    let cdf = if max_err > 0.0 { vertex_error_cdf(&errors, &groups, max_err)? } else { vec![] };
    let uv = match config.task {
        Task::UvSupervised => Some(uv_distortion(&mesh, prediction.view(), sample.target.view())?),
        _ => None,
    };
    let checkpoint = checkpoint_for(&model, config, config.iterations, adam)?;
    let report = MetricsReport {
        task: config.task,
        baseline: config.baseline,
        seed: config.seed,
        iterations: config.iterations,
        capacity,
        final_loss,
        train_losses: vec![final_loss],
        group_mse,
        flipped_percent: uv.as_ref().map(|u| u.flipped_percent),
        excluded_faces: uv.as_ref().map(|u| u.excluded),
        diffusion_times: model.diffusion_times(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        config: config.clone(),
        loss_history: history,
        vertex_errors: errors,
        cdf,
        uv,
    };
    Ok(TrainOutcome { model, checkpoint, report, mesh, prediction, target: sample.target })
}

/// Base mesh followed by successive thresholded subdivisions, each one
/// normalized.
pub fn subdivision_levels(base: &TriangleMesh, threshold: f64, count: usize) -> Result<Vec<TriangleMesh>> {
    let mut out = vec![normalize_mesh(base)?];
    for _ in 0..count {
        let prev = out.last().expect("non-empty");
        let next = subdivide_threshold(prev, threshold)?;
        let next = if next.n_faces() == prev.n_faces() { prev.clone() } else { normalize_mesh(&next)? };
        out.push(next);
    }
    Ok(out)
}

fn check_normalized(mesh: &TriangleMesh) -> Result<()> {
    let c = mesh.centroid().norm();
    let r = mesh.bounding_radius();
    if c > 1e-9 || (r - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("mesh not normalized: |centroid| = {c:e}, radius = {r}")));
    }
    Ok(())
}

/// Trains on the configured subdivision levels of the base mesh, one mesh per
/// iteration in round-robin order, and evaluates on the held-out level.
pub fn run_generalization(config: &ExperimentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let spec = config
        .generalization
        .as_ref()
        .ok_or_else(|| Error::Config("missing generalization section".into()))?;
    let start = Instant::now();
    let mut model_cfg = config.model.clone();
    model_cfg.seed = config.seed;
    let base = load_experiment_mesh(&config.mesh, false)?;
    let deepest = spec.train_levels.iter().copied().chain([spec.test_level]).max().unwrap_or(0);
    let meshes = subdivision_levels(&base, spec.edge_threshold, deepest)?;
    let levels = baseline_config(config.baseline, &model_cfg, 1).effective_levels();
    let gradients = model_cfg.component.use_gradient_features;
    let sample_for = |m: &TriangleMesh| -> Result<Sample> {
        check_normalized(m)?;
        let ops = MeshOperators::build(m, model_cfg.k_eig, levels, gradients, config.cache_dir.as_deref())?;
        Ok(Sample { mesh: m.clone(), ops, target: vertex_normals(m)?.values })
    };
    let train_set: Vec<Sample> = spec.train_levels.iter().map(|&l| sample_for(&meshes[l])).collect::<Result<_>>()?;
    let test = sample_for(&meshes[spec.test_level])?;
    for s in &train_set {
        log::info!("training mesh: {} vertices, {} faces", s.mesh.n_vertices(), s.mesh.n_faces());
    }
    log::info!("test mesh: {} vertices, {} faces", test.mesh.n_vertices(), test.mesh.n_faces());
    let t_base = train_set[0].ops.mean_edge_length.powi(2);
    let (mut model, capacity) = build_baseline(config.baseline, &model_cfg, t_base)?;
    let mut adam = AdamState::new(&model.params);
    let history = fit(&mut model, &train_set, LossKind::Cosine, &config.schedule, config.iterations, &mut adam)?;
    let train_losses = train_set
        .iter()
        .map(|s| evaluate_loss(LossKind::Cosine, model.predict(&s.ops, None)?.view(), s.target.view()))
        .collect::<Result<Vec<_>>>()?;
    let prediction = model.predict(&test.ops, None)?;
    let final_loss = evaluate_loss(LossKind::Cosine, prediction.view(), test.target.view())?;
    let errors = per_vertex_errors(config.task, &prediction, &test.target)?;
    let all: Vec<usize> = (0..errors.len()).collect();
    let max_err = errors.iter().cloned().fold(0.0, f64::max);
    let cdf = if max_err > 0.0 { vertex_error_cdf(&errors, &[all], max_err)? } else { vec![] };
    let checkpoint = checkpoint_for(&model, config, config.iterations, adam)?;
    let report = MetricsReport {
        task: config.task,
        baseline: config.baseline,
        seed: config.seed,
        iterations: config.iterations,
        capacity,
        final_loss,
        train_losses,
        group_mse: vec![errors.iter().sum::<f64>() / errors.len().max(1) as f64],
        flipped_percent: None,
        excluded_faces: None,
        diffusion_times: model.diffusion_times(),
        runtime_seconds: start.elapsed().as_secs_f64(),
        config: config.clone(),
        loss_history: history,
        vertex_errors: errors,
        cdf,
        uv: None,
    };
    Ok(TrainOutcome { model, checkpoint, report, mesh: test.mesh, prediction, target: test.target })
}
