//! The multi-resolution field architecture and its plain diffusion baseline.

mod config;
mod field;
mod operators;

pub use config::{initial_time, Architecture, ComponentConfig, HeadKind, ModelConfig};
pub use field::{FieldModel, ModelMetadata, Trace};
pub use operators::{BandOperators, MeshOperators};

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use ndarray::{s, Array2, Axis};

    use super::*;
    use crate::autodiff::{diffusion_time, gradcheck::check_gradients, Graph, ParamStore};
    use crate::mesh::{normalize_mesh, shapes, TriangleMesh};
    use crate::spectral::{assemble_laplacian, solve_eigs, SpectralBasis};

    fn mesh50() -> TriangleMesh {
        normalize_mesh(&shapes::uv_sphere(7, 8)).unwrap()
    }

    fn basis_for(mesh: &TriangleMesh, k: usize) -> Arc<SpectralBasis> {
        Arc::new(solve_eigs(&assemble_laplacian(mesh).unwrap(), k).unwrap())
    }

    fn small_config(levels: usize) -> ModelConfig {
        ModelConfig {
            levels,
            k_eig: 24,
            fourier_width: 6,
            out_dim: 3,
            alpha: vec![3.0],
            component: ComponentConfig {
                width: 4,
                ..Default::default()
            },
            seed: 7,
            ..Default::default()
        }
    }

    fn setup(config: &ModelConfig, gradients: bool) -> (MeshOperators, FieldModel) {
        let m = mesh50();
        let ops = MeshOperators::from_basis(&m, basis_for(&m, config.k_eig), config.effective_levels(), gradients)
            .unwrap();
        let model = FieldModel::for_mesh(config, &ops).unwrap();
        (ops, model)
    }

    fn set(store: &mut ParamStore, name: &str, f: impl Fn(&mut Array2<f64>)) {
        let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
        f(&mut store.get_mut(id).value);
    }

    #[test]
    fn initialization_schedules() {
        let mut cfg = small_config(3);
        cfg.fourier_width = 400;
        cfg.component.t_base = Some(0.01);
        let model = FieldModel::new(&cfg, 1.0).unwrap();
        for (i, expect_t) in [(1, 0.04), (2, 0.16), (3, 0.64)] {
            let t = model.params.by_name(&format!("component{i}.block0.time")).unwrap();
            assert!(t.value.iter().all(|&x| (diffusion_time(x) - expect_t).abs() < 1e-12));
            let b = &model.params.by_name(&format!("fourier{i}.b")).unwrap().value;
            let std = (b.mapv(|x| x * x).sum() / b.len() as f64).sqrt();
            let sigma = 2f64.powi(i as i32);
            assert!((std / sigma - 1.0).abs() < 0.1, "level {i}: {std}");
        }
        let w1 = &model.params.by_name("backbone1.w").unwrap().value;
        assert_eq!(w1.dim(), (400, 3));
        assert!(w1.iter().all(|x| x.abs() <= 1.0 / 3.0));
        let w2 = &model.params.by_name("backbone2.w").unwrap().value;
        let bound = (6.0f64 / 400.0).sqrt() / 3.0;
        assert!(w2.iter().all(|x| x.abs() <= bound));
        assert!(w2.iter().any(|x| x.abs() > 0.9 * bound));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            ModelConfig { levels: 0, ..small_config(1) },
            ModelConfig { sigma_exp: 0.9, ..small_config(2) },
            ModelConfig { fourier_width: 0, ..small_config(2) },
        ] {
            assert!(FieldModel::new(&cfg, 0.01).is_err());
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_features() {
        let cfg = small_config(2);
        let (ops, mut model) = setup(&cfg, false);
        set(&mut model.params, "component2.out.w", |v| v.fill(0.0));
        set(&mut model.params, "component2.out.b", |v| v.fill(0.0));
        let mut g = Graph::new();
        let t = model.forward(&mut g, &ops, None).unwrap();
        assert!(g.value(t.d[1]).iter().all(|&x| x == 0.0));
        assert!(g.value(t.eta[1]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn frozen_zero_time_projects_onto_the_basis() {
        let mut cfg = small_config(1);
        cfg.k_eig = 50;
        cfg.component.blocks = 1;
        let (ops, mut model) = setup(&cfg, false);
        set(&mut model.params, "component1.block0.time", |v| v.fill(-800.0));
        let mut g2 = Graph::new();
        let x = g2.constant(ops.positions.clone()).unwrap();
        let w = g2.param(&model.params, model.params.id("component1.lift.w").unwrap());
        let b = g2.param(&model.params, model.params.id("component1.lift.b").unwrap());
        let z = g2.matmul_nt(x, w).unwrap();
        let lifted = g2.add_row(z, b).unwrap();
        let u = g2.value(lifted).clone();
        // Oracle: Phi (Phi^T M u) computed directly.
        let basis = &ops.basis;
        let mut mu = u.clone();
        for (mut row, &m) in mu.axis_iter_mut(Axis(0)).zip(&basis.mass) {
            row *= m;
        }
        let oracle = basis.phi.dot(&basis.phi.t().dot(&mu));
        let band = &ops.levels[0];
        let t_hat = g2.param(&model.params, model.params.id("component1.block0.time").unwrap());
        let c = g2.const_matmul(band.project.clone(), lifted).unwrap();
        let c = g2.exp_scale(c, band.lambda.clone(), t_hat).unwrap();
        let out = g2.const_matmul(band.expand.clone(), c).unwrap();
        for (a, o) in g2.value(out).iter().zip(oracle.iter()) {
            assert!((a - o).abs() < 1e-10);
        }
        // With the full basis the projection is the identity.
        for (a, o) in oracle.iter().zip(u.iter()) {
            assert!((a - o).abs() < 1e-9);
        }
    }

    #[test]
    fn fourier_layer_values() {
        let mut g = Graph::new();
        let d = g.constant(Array2::zeros((4, 2))).unwrap();
        let b = g.constant(Array2::from_elem((5, 2), 1.7)).unwrap();
        let p = g.matmul_nt(d, b).unwrap();
        let eta = g.sin(p, 2.0 * PI).unwrap();
        assert!(g.value(eta).iter().all(|&x| x == 0.0));
        let d = g.constant(Array2::ones((1, 1))).unwrap();
        let b = g.constant(Array2::from_elem((1, 1), 0.25)).unwrap();
        let p = g.matmul_nt(d, b).unwrap();
        let eta = g.sin(p, 2.0 * PI).unwrap();
        assert!((g.scalar(eta) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_equation_level_oracle() {
        let cfg = small_config(3);
        let (ops, model) = setup(&cfg, false);
        let mut g = Graph::new();
        let t = model.forward(&mut g, &ops, None).unwrap();
        let p = |n: &str| model.params.by_name(n).unwrap().value.clone();
        let mut h = ops.positions.clone();
        let mut hs = Vec::new();
        for i in 1..=3 {
            let d = g.value(t.d[i - 1]);
            let b = p(&format!("fourier{i}.b"));
            // eta_i = sin(2 pi d B^T), f_i = sin(alpha W h + b), h_i = f_i + eta_i.
            let eta = d.dot(&b.t()).mapv(|x| (2.0 * PI * x).sin());
            let pre = h.dot(&p(&format!("backbone{i}.w")).t()) * cfg.alpha(i) + p(&format!("backbone{i}.b"));
            let f = pre.mapv(f64::sin);
            h = &f + &eta;
            for (a, o) in g.value(t.eta[i - 1]).iter().zip(eta.iter()) {
                assert!((a - o).abs() < 1e-12);
            }
            assert!(f.iter().chain(eta.iter()).all(|x| x.abs() <= 1.0));
            hs.push(h.clone());
        }
        let cat = ndarray::concatenate(Axis(1), &[hs[0].view(), hs[1].view(), hs[2].view()]).unwrap();
        let hidden = (cat.dot(&p("head.hidden.w").t()) + p("head.hidden.b")).mapv(|x| x.max(0.0));
        let out = hidden.dot(&p("head.out.w").t()) + p("head.out.b");
        for (a, o) in g.value(t.output).iter().zip(out.iter()) {
            assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn single_level_without_injection_is_a_sine_layer() {
        let mut cfg = small_config(1);
        cfg.head = HeadKind::PerLevelLinearSum;
        let (ops, mut model) = setup(&cfg, false);
        set(&mut model.params, "fourier1.b", |v| v.fill(0.0));
        let p = |n: &str| model.params.by_name(n).unwrap().value.clone();
        let pre = ops.positions.dot(&p("backbone1.w").t()) * 3.0 + p("backbone1.b");
        let expected = pre.mapv(f64::sin).dot(&p("head.level1.w").t()) + p("head.level1.b");
        let out = model.predict(&ops, None).unwrap();
        for (a, o) in out.iter().zip(expected.iter()) {
            assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn disabling_a_silent_level_changes_nothing() {
        let cfg = small_config(2);
        let (ops, mut model) = setup(&cfg, false);
        set(&mut model.params, "fourier2.b", |v| v.fill(0.0));
        // Zero the head columns that read h_2.
        let m = cfg.fourier_width;
        set(&mut model.params, "head.hidden.w", |v| v.slice_mut(s![.., m..]).fill(0.0));
        let full = model.predict(&ops, None).unwrap();
        let off = model.predict(&ops, Some(2)).unwrap();
        assert_eq!(full, off);
        assert!(matches!(model.predict(&ops, Some(0)), Err(crate::Error::LevelOutOfRange { .. })));
        assert!(model.predict(&ops, Some(3)).is_err());
    }

    #[test]
    fn disabling_the_only_level_leaves_the_bias_path() {
        let cfg = small_config(1);
        let (ops, model) = setup(&cfg, false);
        let p = |n: &str| model.params.by_name(n).unwrap().value.clone();
        let hidden = p("head.hidden.b").mapv(|x| x.max(0.0));
        let expected = hidden.dot(&p("head.out.w").t()) + p("head.out.b");
        let out = model.predict(&ops, Some(1)).unwrap();
        for row in out.rows() {
            for (a, o) in row.iter().zip(expected.iter()) {
                assert!((a - o).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = small_config(2);
        let (ops, model) = setup(&cfg, true);
        let again = FieldModel::for_mesh(&cfg, &ops).unwrap();
        assert_eq!(model.predict(&ops, None).unwrap(), again.predict(&ops, None).unwrap());
    }

    #[test]
    fn permutation_equivariance() {
        let mut cfg = small_config(2);
        cfg.component.use_gradient_features = true;
        let m = mesh50();
        let basis = basis_for(&m, cfg.k_eig);
        let ops = MeshOperators::from_basis(&m, basis.clone(), 2, true).unwrap();
        let n = m.n_vertices();
        let perm: Vec<usize> = (0..n).map(|i| (i * 17 + 5) % n).collect();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let pm = TriangleMesh::new(
            perm.iter().map(|&i| m.vertices[i]).collect(),
            m.faces.iter().map(|f| [inv[f[0]], inv[f[1]], inv[f[2]]]).collect(),
            None,
        )
        .unwrap();
        let pb = SpectralBasis {
            phi: Array2::from_shape_fn(basis.phi.dim(), |(r, c)| basis.phi[[perm[r], c]]),
            lambda: basis.lambda.clone(),
            mass: perm.iter().map(|&i| basis.mass[i]).collect(),
        };
        let pops = MeshOperators::from_basis(&pm, Arc::new(pb), 2, true).unwrap();
        let model = FieldModel::for_mesh(&cfg, &ops).unwrap();
        let a = model.predict(&ops, None).unwrap();
        let b = model.predict(&pops, None).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..3 {
                assert!((b[[new, c]] - a[[old, c]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn plain_model_averages_under_long_diffusion() {
        let cfg = ModelConfig {
            architecture: Architecture::PlainDiffusionNet,
            ..small_config(1)
        };
        let (ops, mut model) = setup(&cfg, false);
        for b in 0..2 {
            set(&mut model.params, &format!("diffusionnet.block{b}.time"), |v| v.fill(1e9));
        }
        // Constant input lifted to constant channels stays constant.
        let mut flat = ops.clone();
        flat.positions.fill(0.3);
        let out = model.predict(&flat, None).unwrap();
        for c in 0..3 {
            let col = out.column(c);
            assert!(col.iter().all(|v| (v - col[0]).abs() < 1e-9));
        }
        assert!(model.params.names().iter().all(|n| n.starts_with("diffusionnet.")));
    }

    #[test]
    fn longer_diffusion_smooths_more() {
        let m = mesh50();
        let basis = basis_for(&m, 50);
        let band = BandOperators::new(&basis, 0..50);
        let u = Array2::from_shape_fn((50, 1), |(i, _)| ((i * 13) as f64 * 0.7).sin());
        let mut prev = f64::INFINITY;
        for t in [0.0, 0.01, 0.05, 0.2, 1.0, 5.0] {
            let mut g = Graph::new();
            let x = g.constant(u.clone()).unwrap();
            let th = g
                .constant(Array2::from_elem((1, 1), if t == 0.0 { -800.0 } else { crate::autodiff::diffusion_time_inverse(t) }))
                .unwrap();
            let c = g.const_matmul(band.project.clone(), x).unwrap();
            let c = g.exp_scale(c, band.lambda.clone(), th).unwrap();
            // M-norm of the non-constant part is the norm of coefficients 1.. .
            let norm = g.value(c).slice(s![1.., ..]).mapv(|v| v * v).sum().sqrt();
            assert!(norm <= prev + 1e-15);
            prev = norm;
        }
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        for alpha in [3.0, 30.0] {
            let mut cfg = small_config(2);
            cfg.alpha = vec![alpha];
            cfg.component.use_gradient_features = true;
            let (ops, model) = setup(&cfg, true);
            let target = Array2::from_shape_fn((50, 3), |(i, c)| ((i + 3 * c) as f64 * 0.3).cos());
            let mut store = model.params.clone();
            let reports = check_gradients(&mut store, 1e-5, 40, |s| {
                let mut m = model.clone();
                m.params = s.clone();
                let mut g = Graph::new();
                let t = m.forward(&mut g, &ops, None)?;
                let y = g.constant(target.clone())?;
                let diff = g.sub(t.output, y)?;
                let sq = g.mul(diff, diff)?;
                let loss = g.mean(sq)?;
                Ok((g, loss))
            })
            .unwrap();
            assert_eq!(reports.len(), model.params.len());
            for r in &reports {
                assert!(r.max_rel_error < 1e-4, "alpha {alpha}, {}: {}", r.parameter, r.max_rel_error);
            }
        }
    }
}
