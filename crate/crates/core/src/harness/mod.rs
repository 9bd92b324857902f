//! Losses, metrics, training loops, baselines and the experiment drivers.

mod config;
mod loss;
mod metrics;
mod report;
mod train;

pub use config::{Baseline, ExperimentConfig, GeneralizationSpec, GroupSource, SynthSpec, Task};
pub use loss::{evaluate_loss, loss_cosine, loss_mse, loss_on_graph, LossKind, ZERO_ROW};
pub use metrics::{
    colormap, rgb_to_u8, uv_distortion, vertex_error_cdf, vertex_errors, Cdf, FaceDistortion, UvDistortion,
    DEGENERATE_UV_AREA,
};
pub use report::{error_colors, field_colors, field_csv, summary_json, vertex_error_csv, write_colored_ply, write_report};
pub use train::{
    build_baseline, fit, load_experiment_mesh, per_vertex_errors, prepare_sample, run_generalization,
    subdivision_levels, train, truncate_basis, CapacityReport, MetricsReport, RunMetadata, Sample, TrainOutcome,
    CAPACITY_TOLERANCE,
};

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::autodiff::{AdamState, Checkpoint, LrSchedule};
    use crate::mesh::{save_obj, shapes};
    use crate::model::{ComponentConfig, FieldModel, HeadKind, ModelConfig};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            levels: 2,
            k_eig: 20,
            fourier_width: 8,
            alpha: vec![5.0],
            component: ComponentConfig { width: 6, ..Default::default() },
            ..Default::default()
        }
    }

    fn rgb_config(dir: &std::path::Path) -> ExperimentConfig {
        let mesh = dir.join("sphere.obj");
        save_obj(&shapes::icosphere(2), &mesh).unwrap();
        ExperimentConfig {
            task: Task::RgbSynthetic,
            mesh,
            model: tiny_model(),
            iterations: 30,
            seed: 3,
            baseline: Baseline::NLevel,
            schedule: LrSchedule { base_lr: 1e-3, ..Default::default() },
            synth: Some(SynthSpec {
                thresholds: vec![-0.2, 0.3],
                groups: vec![
                    GroupSource::Eigenfunction(2),
                    GroupSource::Eigenfunction(12),
                    GroupSource::Perlin { frequency: 3.0, seed: 1 },
                ],
            }),
            generalization: None,
            normalize: true,
            error_clip: 5e-4,
            cache_dir: None,
        }
    }

    #[test]
    fn training_reduces_the_loss_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = rgb_config(dir.path());
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        let h = &a.report.loss_history;
        assert_eq!(h.len(), 30);
        assert!(h[29] < h[0]);
        assert_eq!(a.report.final_loss.to_bits(), b.report.final_loss.to_bits());
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.report.group_mse.len(), 3);
        let mut c = cfg.clone();
        c.seed = 4;
        assert_ne!(train(&c).unwrap().report.final_loss, a.report.final_loss);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = rgb_config(dir.path());
        cfg.schedule.base_lr = 0.0;
        cfg.iterations = 5;
        let out = train(&cfg).unwrap();
        let mut fresh = cfg.model.clone();
        fresh.seed = cfg.seed;
        let t_base = out.model.t_base;
        let init = FieldModel::new(&fresh, t_base).unwrap();
        for (p, q) in out.model.params.iter().zip(init.params.iter()) {
            assert_eq!(p.value, q.value, "{}", p.name);
        }
        assert!(out.report.loss_history.iter().all(|&l| l == out.report.loss_history[0]));
    }

    #[test]
    fn checkpoint_reproduces_the_final_loss() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = rgb_config(dir.path());
        let out = train(&cfg).unwrap();
        let ck = Checkpoint::from_bytes(&out.checkpoint.to_bytes()).unwrap();
        let model = FieldModel::from_checkpoint(&ck).unwrap();
        let meta: RunMetadata = serde_json::from_str(&ck.metadata).unwrap();
        let exp = meta.experiment.unwrap();
        let mesh = load_experiment_mesh(&exp.mesh, exp.normalize).unwrap();
        let (sample, _) = prepare_sample(&exp, &mesh, model.levels()).unwrap();
        let y = model.predict(&sample.ops, None).unwrap();
        let l = evaluate_loss(LossKind::Mse, y.view(), sample.target.view()).unwrap();
        assert!((l - out.report.final_loss).abs() < 1e-10);
    }

    #[test]
    fn baselines_are_capacity_matched() {
        let cfg = ModelConfig { fourier_width: 16, ..tiny_model() };
        for kind in [Baseline::OneLevel, Baseline::PlainDiffusionnet] {
            let (m, rep) = build_baseline(kind, &cfg, 0.01).unwrap();
            let shape_sum: usize = m.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum();
            assert_eq!(shape_sum, rep.baseline);
            assert!((rep.baseline as f64 - rep.reference as f64).abs() <= 0.1 * rep.reference as f64);
            assert!(rep.width > cfg.component.width);
        }
        let (one, rep) = build_baseline(Baseline::OneLevel, &cfg, 0.01).unwrap();
        let direct = FieldModel::new(
            &ModelConfig {
                levels: 1,
                component: ComponentConfig { width: rep.width, ..cfg.component.clone() },
                ..cfg.clone()
            },
            0.01,
        )
        .unwrap();
        assert_eq!(one.params.names(), direct.params.names());
        let (n, rep) = build_baseline(Baseline::NLevel, &cfg, 0.01).unwrap();
        assert_eq!((rep.reference, rep.baseline), (n.trainable_count(), n.trainable_count()));
    }

    #[test]
    fn per_level_head_baseline_matches_too() {
        let cfg = ModelConfig { head: HeadKind::PerLevelLinearSum, levels: 3, k_eig: 30, ..tiny_model() };
        assert!(build_baseline(Baseline::PlainDiffusionnet, &cfg, 0.01).is_ok());
    }

    #[test]
    fn fit_visits_samples_round_robin() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = rgb_config(dir.path());
        let mesh = load_experiment_mesh(&cfg.mesh, true).unwrap();
        let (a, _) = prepare_sample(&cfg, &mesh, 2).unwrap();
        let mut b = a.clone();
        b.target.mapv_inplace(|x| 1.0 - x);
        let model = FieldModel::for_mesh(&cfg.model, &a.ops).unwrap();
        let sched = LrSchedule { base_lr: 0.0, ..Default::default() };
        let mut m = model.clone();
        let mut adam = AdamState::new(&m.params);
        let h = fit(&mut m, &[a.clone(), b.clone()], LossKind::Mse, &sched, 6, &mut adam).unwrap();
        assert_eq!(h[0], h[2]);
        assert_eq!(h[1], h[5]);
        assert_ne!(h[0], h[1]);
    }

    #[test]
    fn generalization_with_a_single_mesh_split() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = dir.path().join("base.obj");
        save_obj(&shapes::bumpy_sphere(2, 0.1, [2.0, 3.0, 1.0]), &mesh).unwrap();
        let cfg = ExperimentConfig {
            task: Task::NormalsGeneralization,
            mesh,
            model: tiny_model(),
            iterations: 20,
            seed: 1,
            baseline: Baseline::NLevel,
            schedule: LrSchedule { base_lr: 1e-3, ..Default::default() },
            synth: None,
            generalization: Some(GeneralizationSpec { edge_threshold: 0.3, train_levels: vec![0], test_level: 0 }),
            normalize: true,
            error_clip: 5e-4,
            cache_dir: None,
        };
        let out = train(&cfg).unwrap();
        assert_eq!(out.report.train_losses.len(), 1);
        assert_eq!(out.report.train_losses[0], out.report.final_loss);
        assert!(out.report.final_loss.is_finite() && out.report.final_loss < 2.0);
    }

    #[test]
    fn subdivision_levels_are_normalized_and_grow() {
        let levels = subdivision_levels(&shapes::bumpy_sphere(1, 0.1, [1.0, 2.0, 3.0]), 0.4, 3).unwrap();
        for w in levels.windows(2) {
            assert!(w[1].n_faces() >= w[0].n_faces());
        }
        for m in &levels {
            assert!(m.centroid().norm() < 1e-9);
            assert!((m.bounding_radius() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = rgb_config(dir.path());
        let out = train(&cfg).unwrap();
        let files = write_report(&out.report, dir.path()).unwrap();
        let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into()).collect();
        assert_eq!(names, ["metrics.json", "vertex_errors.csv", "losses.csv", "cdf.csv"]);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(json["seed"], 3);
        assert!(json["final_loss"].as_f64().unwrap() >= 0.0);
        let csv = std::fs::read_to_string(dir.path().join("vertex_errors.csv")).unwrap();
        assert_eq!(csv.lines().count(), out.mesh.n_vertices() + 1);
        let _: PathBuf = write_colored_ply(&out.mesh, &error_colors(&out.report.vertex_errors, 5e-4), &dir.path().join("e.ply")).unwrap();
    }
}
