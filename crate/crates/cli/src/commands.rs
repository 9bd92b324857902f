use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::Deserialize;
use serde_json::json;

use meshfield::autodiff::Checkpoint;
use meshfield::harness::{
    error_colors, evaluate_loss, field_colors, field_csv, load_experiment_mesh, per_vertex_errors, prepare_sample,
    subdivision_levels, train, uv_distortion, vertex_error_csv, write_colored_ply, write_report, Baseline,
    ExperimentConfig, GroupSource, LossKind, RunMetadata, SynthSpec, Task,
};
use meshfield::mesh::{save_obj, vertex_normals, TriangleMesh};
use meshfield::model::{FieldModel, MeshOperators};
use meshfield::spectral::{assemble_laplacian, cache::cached_basis, EigenOptions};

use crate::exit::Failure;
use crate::manifest::{input, RunManifest};

pub const MANIFEST: &str = "manifest.json";
const DEFAULT_CLIP: f64 = 5e-4;

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf, Failure> {
    fs::write(&path, text).map_err(|e| Failure::io(&path, e))?;
    Ok(path)
}

pub fn cmd_train(config: &Path, out: &Path, seed: Option<u64>, baseline: Option<&str>) -> Result<(), Failure> {
    let start = Instant::now();
    if !config.is_file() {
        return Err(Failure::config(format!("config file {} not found", config.display())));
    }
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(b) = baseline {
        cfg.baseline = Baseline::parse(b)?;
    }
    cfg.validate()?;
    create_dir(out)?;
    let inputs = vec![input(config)?, input(&cfg.mesh)?];
    let outcome = train(&cfg)?;
    let mut outputs = write_report(&outcome.report, out)?;
    let ck = out.join("checkpoint.mfck");
    outcome.checkpoint.save(&ck)?;
    outputs.push(ck);
    outputs.push(write_text(out.join("prediction.csv"), &field_csv(&outcome.prediction))?);
    outputs.push(write_colored_ply(&outcome.mesh, &field_colors(&outcome.prediction), &out.join("prediction.ply"))?);
    let colors = error_colors(&outcome.report.vertex_errors, cfg.error_clip);
    outputs.push(write_colored_ply(&outcome.mesh, &colors, &out.join("errors.ply"))?);
    log::info!("final loss {:.6e}", outcome.report.final_loss);
    RunManifest {
        command: "train".into(),
        config: serde_json::to_value(&cfg).expect("config serializes"),
        seed: Some(cfg.seed),
        inputs,
        outputs: vec![],
        details: json!({ "final_loss": outcome.report.final_loss, "parameters": outcome.report.capacity.baseline }),
        seconds: start.elapsed().as_secs_f64(),
    }
    .write(&out.join(MANIFEST), &outputs)
}

/// Ground truth for `mesh` under the task a checkpoint was trained on, if any.
struct Evaluation {
    ops: MeshOperators,
    target: Option<Array2<f64>>,
    task: Option<Task>,
}

fn prepare_eval(meta: &RunMetadata, model: &FieldModel, mesh: &TriangleMesh) -> Result<Evaluation, Failure> {
    let k_eig = model.config.k_eig;
    if mesh.n_vertices() < k_eig {
        return Err(Failure::incompatible(format!(
            "model uses {k_eig} eigenpairs but the mesh has {} vertices",
            mesh.n_vertices()
        )));
    }
    let levels = model.config.effective_levels();
    let gradients = model.config.component.use_gradient_features;
    match &meta.experiment {
        Some(exp) if exp.task == Task::RgbSynthetic => {
            let (sample, _) = prepare_sample(exp, mesh, levels)?;
            Ok(Evaluation { ops: sample.ops, target: Some(sample.target), task: Some(exp.task) })
        }
        Some(exp) => {
            let ops = MeshOperators::build(mesh, k_eig, levels, gradients, exp.cache_dir.as_deref())?;
            let target = match exp.task {
                Task::UvSupervised => mesh.uv_array(),
                _ => Some(vertex_normals(mesh)?.values),
            };
            Ok(Evaluation { ops, target, task: Some(exp.task) })
        }
        None => {
            let ops = MeshOperators::build(mesh, k_eig, levels, gradients, None)?;
            Ok(Evaluation { ops, target: None, task: None })
        }
    }
}

pub fn cmd_eval(checkpoint: &Path, mesh_path: &Path, disable: Option<usize>, out: &Path) -> Result<(), Failure> {
    let start = Instant::now();
    if disable == Some(0) {
        return Err(Failure::config("levels are numbered from 1"));
    }
    for p in [checkpoint, mesh_path] {
        if !p.is_file() {
            return Err(Failure::config(format!("{} not found", p.display())));
        }
    }
    let ck = Checkpoint::load(checkpoint).map_err(|e| Failure::incompatible(e.to_string()))?;
    let model = FieldModel::from_checkpoint(&ck).map_err(|e| Failure::incompatible(e.to_string()))?;
    let meta: RunMetadata =
        serde_json::from_str(&ck.metadata).map_err(|e| Failure::incompatible(format!("checkpoint metadata: {e}")))?;
    if let Some(i) = disable.filter(|&i| i > model.levels()) {
        return Err(Failure::config(format!("level {i} out of range 1..={}", model.levels())));
    }
    let normalize = meta.experiment.as_ref().is_none_or(|e| e.normalize);
    let mesh = load_experiment_mesh(mesh_path, normalize)?;
    let eval = prepare_eval(&meta, &model, &mesh)?;
    create_dir(out)?;
    let prediction = model.predict(&eval.ops, disable)?;
    let mut outputs = vec![
        write_text(out.join("prediction.csv"), &field_csv(&prediction))?,
        write_colored_ply(&mesh, &field_colors(&prediction), &out.join("prediction.ply"))?,
    ];
    let mut details = json!({ "disabled_level": disable, "vertices": mesh.n_vertices() });
    if let (Some(target), Some(task)) = (&eval.target, eval.task) {
        let kind = if task == Task::NormalsGeneralization { LossKind::Cosine } else { LossKind::Mse };
        let loss = evaluate_loss(kind, prediction.view(), target.view())?;
        let errors = per_vertex_errors(task, &prediction, target)?;
        let clip = meta.experiment.as_ref().map_or(DEFAULT_CLIP, |e| e.error_clip);
        outputs.push(write_text(out.join("vertex_errors.csv"), &vertex_error_csv(&errors))?);
        outputs.push(write_colored_ply(&mesh, &error_colors(&errors, clip), &out.join("errors.ply"))?);
        details["loss"] = json!(loss);
        if task == Task::UvSupervised {
            details["flipped_percent"] = json!(uv_distortion(&mesh, prediction.view(), target.view())?.flipped_percent);
        }
        log::info!("loss {loss:.6e}");
    }
    outputs.push(write_text(out.join("eval.json"), &serde_json::to_string_pretty(&details).expect("json"))?);
    RunManifest {
        command: "eval".into(),
        config: serde_json::to_value(&meta.experiment).expect("config serializes"),
        seed: meta.experiment.as_ref().map(|e| e.seed),
        inputs: vec![input(checkpoint)?, input(mesh_path)?],
        outputs: vec![],
        details,
        seconds: start.elapsed().as_secs_f64(),
    }
    .write(&out.join(MANIFEST), &outputs)
}

/// Synthesis spec file: the patchwork description plus its eigenbasis size.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthFile {
    thresholds: Vec<f64>,
    groups: Vec<GroupSource>,
    /// Eigenpairs to compute; defaults to the largest index the groups use.
    k_eig: Option<usize>,
    #[serde(default = "default_true")]
    normalize: bool,
}

fn default_true() -> bool {
    true
}

pub fn cmd_synth(mesh_path: &Path, spec_path: &Path, out: &Path) -> Result<(), Failure> {
    let start = Instant::now();
    let text = fs::read_to_string(spec_path).map_err(|e| Failure::io(spec_path, e))?;
    let file: SynthFile = serde_json::from_str(&text).map_err(|e| Failure::config(format!("synth spec: {e}")))?;
    let spec = SynthSpec { thresholds: file.thresholds, groups: file.groups };
    spec.validate()?;
    if !mesh_path.is_file() {
        return Err(Failure::config(format!("{} not found", mesh_path.display())));
    }
    let mesh = load_experiment_mesh(mesh_path, file.normalize)?;
    let k = file.k_eig.unwrap_or(spec.eigenpairs_needed());
    if k > mesh.n_vertices() {
        return Err(Failure::config(format!("k_eig = {k} exceeds the {} mesh vertices", mesh.n_vertices())));
    }
    let basis = if k > 0 {
        let pair = assemble_laplacian(&mesh)?;
        Some(cached_basis(&mesh, &pair, k, None, &EigenOptions::default())?)
    } else {
        None
    };
    let field = spec.build(&mesh, basis.as_ref())?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let outputs = vec![
        write_text(out.to_path_buf(), &field_csv(&field.values))?,
        write_colored_ply(&mesh, &field_colors(&field.values), &out.with_extension("ply"))?,
    ];
    RunManifest {
        command: "synth".into(),
        config: serde_json::from_str(&text).expect("parsed above"),
        seed: None,
        inputs: vec![input(mesh_path)?, input(spec_path)?],
        outputs: vec![],
        details: json!({ "vertices": mesh.n_vertices(), "eigenpairs": k }),
        seconds: start.elapsed().as_secs_f64(),
    }
    .write(&out.with_extension("manifest.json"), &outputs)
}

pub fn cmd_subdivide(mesh_path: &Path, threshold: f64, iterations: usize, out: &Path) -> Result<(), Failure> {
    let start = Instant::now();
    if !(threshold > 0.0) || iterations < 1 {
        return Err(Failure::config("need --threshold > 0 and --iterations >= 1"));
    }
    if !mesh_path.is_file() {
        return Err(Failure::config(format!("{} not found", mesh_path.display())));
    }
    let base = load_experiment_mesh(mesh_path, false)?;
    let levels = subdivision_levels(&base, threshold, iterations)?;
    create_dir(out)?;
    let mut outputs = Vec::new();
    let mut counts = Vec::new();
    for (i, m) in levels.iter().enumerate().skip(1) {
        let path = out.join(format!("level_{i}.obj"));
        save_obj(m, &path)?;
        outputs.push(path);
        counts.push(json!({ "level": i, "vertices": m.n_vertices(), "faces": m.n_faces() }));
    }
    RunManifest {
        command: "subdivide".into(),
        config: json!({ "threshold": threshold, "iterations": iterations }),
        seed: None,
        inputs: vec![input(mesh_path)?],
        outputs: vec![],
        details: json!({ "levels": counts }),
        seconds: start.elapsed().as_secs_f64(),
    }
    .write(&out.join(MANIFEST), &outputs)
}
