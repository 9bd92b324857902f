//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use meshfield::autodiff::{gradcheck::check_gradients, Graph, LrSchedule};
use meshfield::harness::{
    loss_cosine, loss_mse, loss_on_graph, train, uv_distortion, Baseline, ExperimentConfig, GeneralizationSpec,
    GroupSource, LossKind, MetricsReport, SynthSpec, Task,
};
use meshfield::mesh::{normalize_mesh, save_obj, shapes, TriangleMesh};
use meshfield::model::{Architecture, ComponentConfig, FieldModel, HeadKind, MeshOperators, ModelConfig};
use meshfield::spectral::{assemble_laplacian, diffuse, solve_eigs, split_spectrum};

/// Shared settings of the synthetic RGB experiment (criteria 6 and 7).
const SYNTH_ITERATIONS: usize = 2000;
const SYNTH_K_EIG: usize = 200;
const SYNTH_WIDTH: usize = 32;
const SYNTH_COMPONENT_WIDTH: usize = 16;
const SYNTH_ALPHA: f64 = 30.0;
const PERLIN_FREQUENCY: f64 = 4.0;
const PERLIN_GROUP: usize = 2;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn max_abs(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn laplacian_suite() -> Outcome {
    let mut meshes: Vec<TriangleMesh> = vec![
        shapes::icosphere(2),
        shapes::icosphere(3),
        shapes::icosphere(4),
        shapes::uv_sphere(12, 16),
        shapes::uv_sphere(30, 40),
        shapes::uv_sphere(45, 60),
        shapes::torus(20, 10, 1.0, 0.3),
        shapes::torus(40, 25, 1.0, 0.4),
        shapes::torus(60, 40, 2.0, 0.5),
        shapes::torus(24, 6, 1.0, 0.6),
        shapes::bumpy_sphere(3, 0.1, [2.0, 3.0, 5.0]),
        shapes::bumpy_sphere(4, 0.05, [4.0, 1.0, 2.0]),
        shapes::grid(12, 12, 1.0),
        shapes::grid(40, 30, 2.0),
        shapes::disjoint_union(&[shapes::icosphere(2), shapes::torus(12, 8, 1.0, 0.3)]),
        shapes::disjoint_union(&[shapes::icosphere(3), shapes::icosphere(3), shapes::icosphere(2)]),
        shapes::disjoint_union(&[shapes::grid(10, 10, 1.0), shapes::uv_sphere(10, 12)]),
        shapes::disjoint_union(&[shapes::torus(30, 12, 1.0, 0.2), shapes::bumpy_sphere(2, 0.2, [1.0, 1.0, 3.0])]),
    ];
    let mut skewed = shapes::torus(30, 20, 1.0, 0.35);
    for v in &mut skewed.vertices {
        v[0] *= 1.7;
        v[2] += 0.3 * v[0] * v[0];
    }
    meshes.push(skewed);
    meshes.push(shapes::uv_sphere(20, 7));
    let mut worst = (0.0f64, 0.0f64);
    let mut positive = true;
    for m in &meshes {
        let n = m.n_vertices();
        assert!((100..=3000).contains(&n), "mesh size {n}");
        let pair = assemble_laplacian(m).expect("assembly");
        let l = &pair.stiffness;
        let asym = max_abs(l.iter().map(|(v, (i, j))| v - l.get(j, i).copied().unwrap_or(0.0)));
        let mut rows = vec![0.0; n];
        for (v, (i, _)) in l.iter() {
            rows[i] += v;
        }
        worst = (worst.0.max(asym), worst.1.max(max_abs(rows)));
        positive &= pair.mass.iter().all(|&x| x > 0.0);
    }
    let tri = assemble_laplacian(&shapes::equilateral_triangle(1.0)).expect("assembly");
    let w = 1.0 / (2.0 * 3f64.sqrt());
    let mut tri_err = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { 2.0 * w } else { -w };
            tri_err = tri_err.max((tri.stiffness.get(i, j).copied().unwrap_or(0.0) - expect).abs());
        }
        tri_err = tri_err.max((tri.mass[i] - 3f64.sqrt() / 12.0).abs());
    }
    outcome(
        meshes.len() == 20 && worst.0 <= 1e-12 && worst.1 <= 1e-10 && positive && tri_err <= 1e-12,
        format!(
            "{} meshes, asymmetry {:.1e}, row sum {:.1e}, M > 0: {positive}, equilateral {:.1e}",
            meshes.len(),
            worst.0,
            worst.1,
            tri_err
        ),
    )
}

fn eigensolver_suite() -> Outcome {
    let sphere = shapes::uv_sphere(41, 50);
    let pair = assemble_laplacian(&sphere).expect("assembly");
    let basis = solve_eigs(&pair, 100).expect("eigensolve");
    let res = max_abs(basis.residuals(&pair));
    let orth = basis.orthonormality_error();
    let l1 = basis.lambda[0];
    let union = shapes::disjoint_union(&[shapes::icosphere(3), shapes::torus(24, 12, 1.0, 0.3), shapes::icosphere(2)]);
    let upair = assemble_laplacian(&union).expect("assembly");
    let ub = solve_eigs(&upair, 8).expect("eigensolve");
    let zeros = ub.lambda.iter().filter(|&&l| l <= 1e-8).count();
    outcome(
        res <= 1e-8 && orth <= 1e-8 && l1 <= 1e-8 && zeros == 3,
        format!(
            "n = {}, k = 100, residual {res:.1e}, orthonormality {orth:.1e}, lambda_1 {l1:.1e}; {} vertices in 3 components give {zeros} zero eigenvalues (next {:.3e})",
            sphere.n_vertices(),
            union.n_vertices(),
            ub.lambda[3]
        ),
    )
}

fn diffusion_oracle() -> Outcome {
    let mesh = normalize_mesh(&shapes::uv_sphere(7, 8)).expect("mesh");
    let n = mesh.n_vertices();
    let pair = assemble_laplacian(&mesh).expect("assembly");
    let basis = solve_eigs(&pair, n).expect("eigensolve");
    let dense_l = DMatrix::from_fn(n, n, |i, j| pair.stiffness.get(i, j).copied().unwrap_or(0.0));
    let m_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, pair.mass.iter().map(|m| 1.0 / m)));
    let u = Array2::from_shape_fn((n, 2), |(i, c)| ((i * (c + 3)) as f64 * 0.37).sin() + mesh.vertices[i][c]);
    let mut worst = 0.0f64;
    for t in [0.001, 0.1, 10.0] {
        let got = diffuse(&basis, 0..n, u.view(), &[t, t]).expect("diffuse");
        let e = (&m_inv * &dense_l * -t).exp();
        for c in 0..2 {
            let col = DVector::from_iterator(n, u.column(c).iter().copied());
            let want = &e * col;
            let diff: f64 = (0..n).map(|i| (got[[i, c]] - want[i]).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(diff / want.norm());
        }
    }
    outcome(worst <= 1e-6, format!("n = k = {n}, worst relative error {worst:.1e}"))
}

fn small_model(levels: usize) -> ModelConfig {
    ModelConfig {
        levels,
        k_eig: 40,
        fourier_width: 6,
        alpha: vec![30.0],
        out_dim: 3,
        component: ComponentConfig { width: 4, use_gradient_features: true, ..Default::default() },
        seed: 11,
        ..Default::default()
    }
}

fn gradient_checks() -> Outcome {
    let mesh = normalize_mesh(&shapes::uv_sphere(7, 8)).expect("mesh");
    let target = Array2::from_shape_fn((mesh.n_vertices(), 3), |(i, c)| ((i + 7 * c) as f64 * 0.21).cos());
    let variants: Vec<(&str, ModelConfig, LossKind)> = vec![
        ("N=2 concat head, MSE", small_model(2), LossKind::Mse),
        ("N=2 per-level head, cosine", ModelConfig { head: HeadKind::PerLevelLinearSum, ..small_model(2) }, LossKind::Cosine),
        (
            "plain diffusion stack",
            ModelConfig { architecture: Architecture::PlainDiffusionNet, levels: 1, ..small_model(1) },
            LossKind::Mse,
        ),
    ];
    let mut worst = 0.0f64;
    let mut classes = std::collections::BTreeSet::new();
    let mut tensors = 0;
    for (name, cfg, loss) in variants {
        let ops = MeshOperators::build(&mesh, cfg.k_eig, cfg.effective_levels(), true, None).expect("operators");
        let model = FieldModel::for_mesh(&cfg, &ops).expect("model");
        let mut store = model.params.clone();
        let reports = check_gradients(&mut store, 1e-5, 40, |s| {
            let mut m = model.clone();
            m.params = s.clone();
            let mut g = Graph::new();
            let trace = m.forward(&mut g, &ops, None)?;
            let l = loss_on_graph(&mut g, loss, trace.output, &target)?;
            Ok((g, l))
        })
        .expect("gradient check");
        for r in &reports {
            if r.max_rel_error >= worst {
                worst = r.max_rel_error;
                if worst >= 1e-4 {
                    eprintln!("  {name}: {} has relative error {:.2e}", r.parameter, r.max_rel_error);
                }
            }
            let pname = r.parameter.as_str();
            let class = [
                (".time", "diffusion time"),
                (".gradient", "gradient features"),
                (".mlp", "block mlp"),
                (".lift", "lift"),
                (".out.", "component output"),
                ("fourier", "fourier B"),
                ("backbone", "backbone"),
                ("head", "head"),
            ]
            .into_iter()
            .find(|(key, _)| pname.contains(key) && !(*key == ".out." && pname.starts_with("head")))
            .map_or("other", |(_, c)| c);
            classes.insert(class);
        }
        tensors += reports.len();
    }
    outcome(
        worst < 1e-4 && classes.len() == 8,
        format!("{tensors} tensors in {} classes ({}), worst relative error {worst:.1e}", classes.len(), classes.into_iter().collect::<Vec<_>>().join(", ")),
    )
}

fn spectrum_split() -> Outcome {
    let mut ok = true;
    for k in 1..=64 {
        for n in 1..=k {
            let b = split_spectrum(k, n).expect("split");
            let r = &b.ranges;
            ok &= r.len() == n && r[0].start == 0 && r[n - 1].end == k;
            ok &= r.windows(2).all(|w| w[0].end == w[1].start);
            let sizes: Vec<usize> = r.iter().map(|x| x.len()).collect();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            ok &= *lo >= 1 && hi - lo <= 1;
        }
    }
    let big = split_spectrum(500, 3).expect("split").ranges;
    ok &= big == vec![0..167, 167..333, 333..500];
    ok &= split_spectrum(3, 4).is_err() && split_spectrum(5, 0).is_err();
    outcome(ok, format!("all 1 <= N <= k <= 64 partitions checked; (500, 3) -> {big:?}"))
}

fn uv_identities() -> Outcome {
    let m = shapes::grid(6, 5, 1.0);
    let uv = Array2::from_shape_fn((m.n_vertices(), 2), |(v, k)| m.vertices[v][k]);
    let id = uv_distortion(&m, uv.view(), uv.view()).expect("metric");
    let mut mirror = uv.clone();
    mirror.column_mut(0).mapv_inplace(|u| -u);
    let mi = uv_distortion(&m, mirror.view(), uv.view()).expect("metric");
    let scaled = &uv * 2.0;
    let sc = uv_distortion(&m, scaled.view(), uv.view()).expect("metric");
    let id_ok = id.faces.iter().all(|f| f.area_d == 0.0 && f.angle_d == 0.0) && id.flipped_percent == 0.0;
    let mi_ok = mi.flipped_percent == 100.0 && mi.faces.iter().all(|f| f.angle_d == 0.0);
    let sc_ok = sc.faces.iter().all(|f| f.area_d == 0.75 && !f.flipped);
    outcome(
        id_ok && mi_ok && sc_ok,
        format!("identity {id_ok}, mirror flipped {}%, 2x scale area_d = 0.75 on every face: {sc_ok}", mi.flipped_percent),
    )
}

fn loss_identities() -> Outcome {
    let y = ndarray::array![[1.0, 2.0, -0.5], [0.0, -3.0, 1.0]];
    let orth = ndarray::array![[2.0, -1.0, 0.0], [1.0, 0.0, 0.0]];
    let aligned = loss_cosine(y.view(), (&y * 3.0).view()).expect("loss");
    let opposed = loss_cosine(y.view(), (&y * -0.5).view()).expect("loss");
    let ortho = loss_cosine(y.view(), orth.view()).expect("loss");
    let a = ndarray::array![[1.0, 1.0], [0.0, 0.0]];
    let t = ndarray::array![[0.0, 0.0], [0.0, 0.0]];
    let mse = loss_mse(a.view(), t.view()).expect("loss");
    let ok = aligned.abs() < 1e-15 && (opposed - 2.0).abs() < 1e-15 && (ortho - 1.0).abs() < 1e-15 && mse == 1.0;
    outcome(ok, format!("cosine {aligned:.1e} / {ortho} / {opposed}, MSE example {mse}"))
}

fn synth_config(dir: &Path, seed: u64, baseline: Baseline) -> ExperimentConfig {
    ExperimentConfig {
        task: Task::RgbSynthetic,
        mesh: dir.join("sphere.obj"),
        model: ModelConfig {
            levels: 3,
            k_eig: SYNTH_K_EIG,
            fourier_width: SYNTH_WIDTH,
            alpha: vec![SYNTH_ALPHA],
            component: ComponentConfig { width: SYNTH_COMPONENT_WIDTH, ..Default::default() },
            ..Default::default()
        },
        iterations: SYNTH_ITERATIONS,
        seed,
        baseline,
        schedule: LrSchedule::default(),
        synth: Some(SynthSpec {
            thresholds: vec![-1.0 / 3.0, 1.0 / 3.0],
            groups: vec![
                GroupSource::Eigenfunction(1),
                GroupSource::Eigenfunction(50),
                GroupSource::Perlin { frequency: PERLIN_FREQUENCY, seed: 0 },
            ],
        }),
        generalization: None,
        normalize: true,
        error_clip: 5e-4,
        cache_dir: Some(dir.join("cache")),
    }
}

/// Mean of the 50 losses ending at 1-based iteration `t`.
fn smoothed(history: &[f64], t: usize) -> f64 {
    let w = &history[t.saturating_sub(50)..t];
    w.iter().sum::<f64>() / w.len() as f64
}

fn synthetic_end_to_end(report: &MetricsReport, elapsed: Duration) -> Outcome {
    let h = &report.loss_history;
    let (s100, s2000) = (smoothed(h, 100), smoothed(h, SYNTH_ITERATIONS));
    let ok = report.final_loss < 1e-2 && s2000 < 0.2 * s100 && elapsed < Duration::from_secs(15 * 60);
    outcome(
        ok,
        format!(
            "final MSE {:.2e}, smoothed loss {s100:.2e} at 100 -> {s2000:.2e} at {SYNTH_ITERATIONS}, {:.0} s",
            report.final_loss,
            elapsed.as_secs_f64()
        ),
    )
}

fn sci(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.1e}")).collect::<Vec<_>>().join(", "))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ablation_trend(dir: &Path, first: &MetricsReport, first_elapsed: Duration) -> Outcome {
    let start = Instant::now();
    let perlin = |b: Baseline| -> Vec<f64> {
        (0..3u64)
            .map(|seed| {
                if b == Baseline::NLevel && seed == 0 {
                    return first.group_mse[PERLIN_GROUP];
                }
                let r = train(&synth_config(dir, seed, b)).expect("training").report;
                r.group_mse[PERLIN_GROUP]
            })
            .collect()
    };
    let n = perlin(Baseline::NLevel);
    let one = perlin(Baseline::OneLevel);
    let plain = perlin(Baseline::PlainDiffusionnet);
    let elapsed = start.elapsed() + first_elapsed;
    let (mn, mo, mp) = (median(n.clone()), median(one.clone()), median(plain.clone()));
    outcome(
        mn < mo && mn < mp && elapsed < Duration::from_secs(3600),
        format!(
            "median Perlin-group MSE: N-level {mn:.2e} {}, one-level {mo:.2e} {}, plain {mp:.2e} {}; {:.0} s",
            sci(&n),
            sci(&one),
            sci(&plain),
            elapsed.as_secs_f64()
        ),
    )
}

fn generalization(dir: &Path) -> Outcome {
    let start = Instant::now();
    let base = shapes::torus(40, 25, 1.0, 0.4);
    let path = dir.join("torus.obj");
    save_obj(&base, &path).expect("write mesh");
    let cfg = ExperimentConfig {
        task: Task::NormalsGeneralization,
        mesh: path,
        model: ModelConfig {
            levels: 3,
            k_eig: 96,
            fourier_width: 32,
            alpha: vec![SYNTH_ALPHA],
            component: ComponentConfig { width: 16, ..Default::default() },
            ..Default::default()
        },
        iterations: 2000,
        seed: 0,
        baseline: Baseline::NLevel,
        schedule: LrSchedule::default(),
        synth: None,
        generalization: Some(GeneralizationSpec { edge_threshold: 0.043, train_levels: vec![0, 1, 2], test_level: 3 }),
        normalize: true,
        error_clip: 5e-4,
        cache_dir: Some(dir.join("cache")),
    };
    let out = train(&cfg).expect("training");
    let r = &out.report;
    let train_loss = r.train_losses.iter().sum::<f64>() / r.train_losses.len() as f64;
    let elapsed = start.elapsed();
    outcome(
        r.final_loss < 0.5 && r.final_loss < 3.0 * train_loss && elapsed < Duration::from_secs(20 * 60),
        format!(
            "base {} vertices, test level {} vertices: test cosine {:.3e}, train {:.3e} {}, {:.0} s",
            base.n_vertices(),
            out.mesh.n_vertices(),
            r.final_loss,
            train_loss,
            sci(&r.train_losses),
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let sub = dir.join("determinism");
    std::fs::create_dir_all(&sub).expect("dir");
    save_obj(&shapes::icosphere(3), sub.join("sphere.obj")).expect("write mesh");
    let mut uv_mesh = normalize_mesh(&shapes::grid(14, 12, 1.0)).expect("mesh");
    uv_mesh.uv = Some(uv_mesh.vertices.iter().map(|p| [0.5 + 0.4 * p[0], 0.5 + 0.4 * p[1] + 0.1 * p[0] * p[0]]).collect());
    save_obj(&uv_mesh, sub.join("patch.obj")).expect("write mesh");
    let mut rgb = synth_config(&sub, 7, Baseline::NLevel);
    rgb.model.k_eig = 64;
    rgb.iterations = 40;
    rgb.cache_dir = None;
    let mut uv = rgb.clone();
    uv.task = Task::UvSupervised;
    uv.mesh = sub.join("patch.obj");
    uv.model.out_dim = 2;
    uv.synth = None;
    let mut normals = rgb.clone();
    normals.task = Task::NormalsGeneralization;
    normals.synth = None;
    normals.generalization = Some(GeneralizationSpec { edge_threshold: 0.15, train_levels: vec![0, 1], test_level: 2 });
    let mut plain = rgb.clone();
    plain.baseline = Baseline::PlainDiffusionnet;
    let mut same = true;
    let mut checked = Vec::new();
    for (name, cfg) in [("rgb", rgb), ("uv", uv), ("normals", normals), ("plain", plain)] {
        let bytes = |c: &ExperimentConfig| {
            let o = train(c).expect("training");
            let mut json: serde_json::Value = serde_json::to_value(&o.report).expect("json");
            json.as_object_mut().expect("object").remove("runtime_seconds");
            let csv = meshfield::harness::vertex_error_csv(&o.report.vertex_errors);
            (o.checkpoint.to_bytes(), serde_json::to_string(&json).expect("json"), csv)
        };
        let (a, b) = (bytes(&cfg), bytes(&cfg));
        same &= a == b;
        checked.push(format!("{name} {}", if a == b { "identical" } else { "DIFFERS" }));
    }
    outcome(same, checked.join(", "))
}

/// Criterion ids given on the command line select a subset; none runs all.
fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| selected.is_empty() || selected.contains(&id);
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir: PathBuf = tmp.path().to_path_buf();
    let mut lines: Vec<(usize, String, Outcome, Duration)> = Vec::new();
    let mut record = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(id) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let d = start.elapsed();
        println!("{} criterion {id:>2} ({name}): {} [{:.1} s]", if o.passed { "PASS" } else { "FAIL" }, o.detail, d.as_secs_f64());
        lines.push((id, name.to_string(), o, d));
    };
    record(1, "Laplacian suite", &mut laplacian_suite);
    record(2, "eigensolver suite", &mut eigensolver_suite);
    record(3, "diffusion oracle", &mut diffusion_oracle);
    record(4, "gradient checks", &mut gradient_checks);
    record(5, "spectrum split", &mut spectrum_split);
    record(8, "UV metric identities", &mut uv_identities);
    record(9, "loss identities", &mut loss_identities);
    record(11, "determinism", &mut || determinism(&dir));
    save_obj(&shapes::icosphere(4), dir.join("sphere.obj")).expect("write mesh");
    let mut first: Option<(MetricsReport, Duration)> = None;
    let mut seed_zero = || {
        let start = Instant::now();
        let report = train(&synth_config(&dir, 0, Baseline::NLevel)).expect("training").report;
        (report, start.elapsed())
    };
    record(6, "synthetic end-to-end", &mut || {
        let (report, elapsed) = first.get_or_insert_with(&mut seed_zero);
        synthetic_end_to_end(report, *elapsed)
    });
    record(7, "ablation trend", &mut || {
        let (report, elapsed) = first.get_or_insert_with(&mut seed_zero);
        ablation_trend(&dir, report, *elapsed)
    });
    record(10, "generalization smoke", &mut || generalization(&dir));

    let limits = [(1, 30), (2, 60), (3, 10), (4, 120), (5, 5), (8, 1), (9, 1)];
    let mut failed = 0;
    lines.sort_by_key(|l| l.0);
    println!("\nsummary");
    for (id, name, o, d) in &lines {
        let within = limits.iter().find(|l| l.0 == *id).is_none_or(|l| d.as_secs_f64() < l.1 as f64);
        let pass = o.passed && within;
        failed += usize::from(!pass);
        let note = if within { String::new() } else { format!(" (over the time limit: {:.1} s)", d.as_secs_f64()) };
        println!("{} criterion {id:>2} ({name}){note}", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
