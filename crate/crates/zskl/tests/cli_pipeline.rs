//! End-to-end CLI tests: the pipeline writes the documented artifacts,
//! the artifacts validate against the shipped JSON schemas, and the CLI
//! result is bit-identical to calling the library directly.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use zskl::cli;
use zskl::data::{
    apply_split, apply_stats, load_dataset, load_split, save_dataset, Dataset, GenMeta,
    PreprocessStats, SplitSpec,
};
use zskl::eval::{evaluate_standard, incoherence, EvalReport};
use zskl::kernels::KernelSpec;
use zskl::objective::{TransformStyle, Variant};
use zskl::optimizer::{
    InitStrategy, ObjectiveSummary, Projection, TrainConfig, TrainMeta, TrainSummary,
};

fn run_ok(args: &[&str]) {
    let mut argv = vec!["zskl"];
    argv.extend_from_slice(args);
    let code = cli::run(argv);
    assert_eq!(code, 0, "command {args:?} exited with {code}");
}

fn gen_bench(dir: &Path, seed: &str) {
    run_ok(&[
        "gen-synth",
        "--out",
        dir.to_str().unwrap(),
        "--classes",
        "10",
        "--per-class",
        "12",
        "--dim",
        "16",
        "--attr-dim",
        "4",
        "--noise",
        "0.05",
        "--seed",
        seed,
    ]);
}

fn schema_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name)
}

fn validate_against(schema_file: &str, instance_path: &Path) {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(schema_path(schema_file)).unwrap()).unwrap();
    let instance: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(instance_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(&instance)
        .map(|e| format!("{e}"))
        .collect();
    assert!(
        errors.is_empty(),
        "{} does not validate against {schema_file}: {errors:?}",
        instance_path.display()
    );
}

#[test]
fn full_pipeline_matches_library_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bench");
    gen_bench(&data, "7");
    let model_path = tmp.path().join("model.json");
    run_ok(&[
        "--threads",
        "1",
        "train",
        "--data",
        data.to_str().unwrap(),
        "--kernel",
        "gaussian",
        "--variant",
        "ort",
        "--sigma",
        "0.6",
        "--lambda",
        "1.0",
        "--epochs",
        "4",
        "--seed",
        "7",
        "--out",
        model_path.to_str().unwrap(),
    ]);
    let report_path = tmp.path().join("report.json");
    run_ok(&[
        "--threads",
        "1",
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--protocol",
        "standard",
        "--out",
        report_path.to_str().unwrap(),
    ]);

    // same computation through the library
    let model = Projection::load(&model_path).unwrap();
    let ds = load_dataset(&data).unwrap();
    let split = load_split(&data).unwrap();
    let pre = apply_stats(&ds, &model.preprocess).unwrap();
    let partition = apply_split(&pre, &split).unwrap();
    let (x_test, truths) = pre.gather_features(&partition.unseen_test);
    let mut classes = split.unseen_classes.clone();
    classes.sort_unstable();
    let candidates = pre.class_attribute_columns(&classes);
    let lib_report =
        evaluate_standard(&model, x_test.view(), &truths, candidates.view(), &classes).unwrap();

    let cli_report = EvalReport::load_json(&report_path).unwrap();
    assert_eq!(cli_report.top1_mean.to_bits(), lib_report.top1_mean.to_bits());
    assert_eq!(cli_report.incoherence.to_bits(), lib_report.incoherence.to_bits());
    let cli_value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let lib_value = serde_json::to_value(&lib_report).unwrap();
    assert_eq!(cli_value, lib_value);
}

#[test]
fn json_outputs_validate_against_shipped_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bench");
    gen_bench(&data, "3");
    validate_against("gen_meta.schema.json", &data.join("gen_meta.json"));
    validate_against("splits.schema.json", &data.join("splits.json"));

    let meta: GenMeta =
        serde_json::from_str(&std::fs::read_to_string(data.join("gen_meta.json")).unwrap())
            .unwrap();
    assert_eq!(
        (meta.n_classes, meta.per_class, meta.dim, meta.attr_dim, meta.seed),
        (10, 12, 16, 4, 3)
    );

    let model_path = tmp.path().join("model.json");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--kernel",
        "cauchy",
        "--variant",
        "plain",
        "--sigma",
        "1.0",
        "--lambda",
        "0.5",
        "--epochs",
        "2",
        "--seed",
        "3",
        "--out",
        model_path.to_str().unwrap(),
    ]);
    validate_against("model.schema.json", &model_path);

    for protocol in ["standard", "generalized"] {
        let report_path = tmp.path().join(format!("report_{protocol}.json"));
        run_ok(&[
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--model",
            model_path.to_str().unwrap(),
            "--protocol",
            protocol,
            "--out",
            report_path.to_str().unwrap(),
            "--csv",
            tmp.path().join(format!("report_{protocol}.csv")).to_str().unwrap(),
        ]);
        validate_against("report.schema.json", &report_path);
        let csv =
            std::fs::read_to_string(tmp.path().join(format!("report_{protocol}.csv"))).unwrap();
        assert!(csv.starts_with("id,value\n"));
        assert!(csv.contains("TOP1_MEAN,"));
        assert!(csv.contains("INCOHERENCE,"));
        if protocol == "generalized" {
            assert!(csv.contains("ACC_SEEN,") && csv.contains("ACC_UNSEEN,") && csv.contains("H,"));
        }
    }

    // cv with a grid file, plus refit
    let grid_path = tmp.path().join("grid.json");
    std::fs::write(
        &grid_path,
        r#"{"sigma_values": [0.6, 1.2], "lambda_values": [0.5]}"#,
    )
    .unwrap();
    validate_against("grid.schema.json", &grid_path);
    let cv_path = tmp.path().join("cv_result.json");
    let refit_path = tmp.path().join("refit.json");
    run_ok(&[
        "cv",
        "--data",
        data.to_str().unwrap(),
        "--grid",
        grid_path.to_str().unwrap(),
        "--kernel",
        "gaussian",
        "--variant",
        "ort",
        "--epochs",
        "2",
        "--seed",
        "3",
        "--out",
        cv_path.to_str().unwrap(),
        "--refit",
        refit_path.to_str().unwrap(),
    ]);
    validate_against("cv_result.schema.json", &cv_path);
    validate_against("model.schema.json", &refit_path);
    let cv_csv = std::fs::read_to_string(tmp.path().join("cv_result.csv")).unwrap();
    assert!(cv_csv.starts_with("sigma,lambda,degree,bias,alpha,val_top1,final_objective\n"));
    assert_eq!(cv_csv.lines().count(), 1 + 2); // header + one row per grid point

    let diag_dir = tmp.path().join("diag");
    run_ok(&[
        "diagnose",
        "--model",
        model_path.to_str().unwrap(),
        "--out-dir",
        diag_dir.to_str().unwrap(),
    ]);
    validate_against("diag.schema.json", &diag_dir.join("diag.json"));
}

#[test]
fn commands_never_mutate_input_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bench");
    gen_bench(&data, "11");
    let snapshot = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| (p.display().to_string(), std::fs::read(&p).unwrap()))
            .collect()
    };
    let before = snapshot(&data);
    let model_path = tmp.path().join("model.json");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--kernel",
        "gaussian",
        "--variant",
        "ort",
        "--sigma",
        "0.8",
        "--lambda",
        "1.0",
        "--epochs",
        "2",
        "--seed",
        "11",
        "--out",
        model_path.to_str().unwrap(),
    ]);
    run_ok(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--protocol",
        "standard",
        "--out",
        tmp.path().join("r.json").to_str().unwrap(),
    ]);
    run_ok(&[
        "diagnose",
        "--model",
        model_path.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(before, snapshot(&data), "input dataset files changed");
}

#[test]
fn trace_csv_has_documented_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bench");
    gen_bench(&data, "5");
    let model_path = tmp.path().join("model.json");
    let trace_path = tmp.path().join("trace.csv");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--kernel",
        "gaussian",
        "--variant",
        "ort",
        "--sigma",
        "0.6",
        "--lambda",
        "1.0",
        "--epochs",
        "3",
        "--seed",
        "5",
        "--out",
        model_path.to_str().unwrap(),
        "--trace",
        trace_path.to_str().unwrap(),
    ]);
    let trace = std::fs::read_to_string(&trace_path).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,epoch,batch_objective,probe_objective,val_acc"
    );
    let mut prev_iter = 0usize;
    let mut probe_rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5, "bad row {line:?}");
        let iter: usize = fields[0].parse().unwrap();
        assert!(iter > prev_iter, "iterations not strictly increasing");
        prev_iter = iter;
        let _: f64 = fields[2].parse().unwrap();
        if !fields[3].is_empty() {
            probe_rows += 1;
            let _: f64 = fields[3].parse().unwrap();
            let acc: f64 = fields[4].parse().unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
    }
    assert_eq!(probe_rows, 3, "one probe row per epoch");
}

fn toy_projection(w: Array2<f64>) -> Projection {
    let d = w.nrows();
    let c = w.ncols();
    Projection {
        w,
        kernel: KernelSpec::gaussian(1.0).unwrap(),
        objective: ObjectiveSummary {
            variant: Variant::RbfOrt,
            lambda: 1.0,
            alpha: None,
            transform: TransformStyle::Squared,
        },
        preprocess: PreprocessStats {
            feature_mean: vec![0.0; d],
            attribute_norms: vec![1.0; c],
        },
        train_meta: TrainMeta {
            config: TrainConfig {
                init: InitStrategy::GaussianScaled,
                ..TrainConfig::default()
            },
            summary: TrainSummary {
                iterations: 0,
                first_epoch_mean_objective: None,
                final_epoch_mean_objective: None,
                final_val_acc: None,
            },
        },
    }
}

fn read_matrix(path: &Path) -> Array2<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let (r, c) = (rows.len(), rows[0].len());
    Array2::from_shape_fn((r, c), |(i, j)| rows[i][j])
}

#[test]
fn diagnose_orthonormal_model_reports_identity() {
    let tmp = tempfile::tempdir().unwrap();
    // orthogonal columns with distinct norms; normalization must absorb them
    let mut w = Array2::zeros((4, 3));
    w[[0, 0]] = 2.0;
    w[[1, 1]] = -0.5;
    w[[3, 2]] = 7.0;
    let proj = toy_projection(w.clone());
    let model_path = tmp.path().join("model.json");
    proj.save(&model_path).unwrap();
    let out_dir = tmp.path().join("diag");
    run_ok(&[
        "diagnose",
        "--model",
        model_path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    let wtw = read_matrix(&out_dir.join("wtw.csv"));
    assert_eq!(wtw.dim(), (3, 3));
    for i in 0..3 {
        for j in 0..3 {
            let expect = f64::from(i == j);
            assert!((wtw[[i, j]] - expect).abs() < 1e-10, "wtw[{i},{j}] = {}", wtw[[i, j]]);
        }
    }
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("diag.json")).unwrap()).unwrap();
    let reported = diag["incoherence"].as_f64().unwrap();
    // same code path as the library incoherence
    assert_eq!(reported.to_bits(), incoherence(&w).unwrap().to_bits());
    assert_eq!(reported, 0.0);
    assert_eq!(diag["column_norms"]["max"].as_f64().unwrap(), 7.0);
}

/// Dataset whose attribute columns come in antipodal pairs, so the class
/// attribute mean is exactly zero and mean-centering cannot disturb the
/// two-direction geometry the diagnose contrast measures.
fn antipodal_dataset(seed: u64) -> Dataset {
    let (d, d_attr, per_class, n_classes) = (20usize, 5usize, 30usize, 10usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attrs = Array2::zeros((d_attr, n_classes));
    for k in 0..n_classes / 2 {
        let mut u = Array1::from_shape_fn(d_attr, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = u.dot(&u).sqrt();
        u.mapv_inplace(|v| v / norm);
        attrs.column_mut(2 * k).assign(&u);
        attrs.column_mut(2 * k + 1).assign(&(-&u));
    }
    let mut lift = Array2::from_shape_fn((d, d_attr), |_| rng.sample::<f64, _>(StandardNormal));
    for j in 0..d_attr {
        for k in 0..j {
            let proj = lift.column(k).dot(&lift.column(j));
            let qk = lift.column(k).to_owned();
            lift.column_mut(j)
                .iter_mut()
                .zip(qk.iter())
                .for_each(|(v, q)| *v -= proj * q);
        }
        let norm = lift.column(j).dot(&lift.column(j)).sqrt();
        lift.column_mut(j).mapv_inplace(|v| v / norm);
    }
    let n = n_classes * per_class;
    let mut features = Array2::zeros((d, n));
    let mut labels = Vec::with_capacity(n);
    let mut col = 0;
    for c in 0..n_classes {
        let clean = lift.dot(&attrs.column(c));
        for _ in 0..per_class {
            for i in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                features[[i, col]] = clean[i] + 0.05 * eps;
            }
            labels.push(c + 1);
            col += 1;
        }
    }
    Dataset::new(features, labels, attrs, None).unwrap()
}

#[cfg(feature = "parallel")]
#[test]
fn thread_count_does_not_change_results() {
    // ZSKL_THREADS overrides --threads; any thread count must reproduce the
    // single-threaded bytes because batch reductions fold in sample order
    let bin = env!("CARGO_BIN_EXE_zskl");
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bench");
    gen_bench(&data, "13");
    let train_with = |name: &str, threads_flag: &str, env_threads: Option<&str>| {
        let model = tmp.path().join(name);
        let mut cmd = std::process::Command::new(bin);
        cmd.args([
            "--threads",
            threads_flag,
            "train",
            "--data",
            data.to_str().unwrap(),
            "--kernel",
            "gaussian",
            "--variant",
            "ort",
            "--sigma",
            "0.7",
            "--lambda",
            "1.0",
            "--epochs",
            "3",
            "--seed",
            "13",
            "--out",
            model.to_str().unwrap(),
        ]);
        match env_threads {
            Some(v) => cmd.env("ZSKL_THREADS", v),
            None => cmd.env_remove("ZSKL_THREADS"),
        };
        let out = cmd.output().expect("spawn zskl");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(model).unwrap()
    };
    let single = train_with("m1.json", "1", None);
    let multi = train_with("m2.json", "1", Some("2")); // env overrides the flag
    assert_eq!(single, multi, "thread count changed training bytes");
}

#[test]
fn diagnose_contrast_between_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("paired");
    let ds = antipodal_dataset(2);
    let split = SplitSpec {
        train_classes: vec![1, 2, 3, 4, 5, 6],
        val_classes: vec![7, 8],
        unseen_classes: vec![9, 10],
        seen_test_fraction: 0.2,
        seed: 2,
    };
    save_dataset(&ds, &split, &data).unwrap();

    let mean_abs_offdiag = |path: &Path| {
        let wtw = read_matrix(path);
        let k = wtw.ncols();
        let mut sum = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    sum += wtw[[i, j]].abs();
                }
            }
        }
        sum / (k * k - k) as f64
    };

    let mut offdiag = Vec::new();
    for variant in ["ort", "plain"] {
        let model_path = tmp.path().join(format!("model_{variant}.json"));
        run_ok(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--kernel",
            "gaussian",
            "--variant",
            variant,
            "--sigma",
            "0.5",
            "--lambda",
            "2.0",
            "--epochs",
            "150",
            "--beta0",
            "0.05",
            "--seed",
            "2",
            "--out",
            model_path.to_str().unwrap(),
        ]);
        let out_dir = tmp.path().join(format!("diag_{variant}"));
        run_ok(&[
            "diagnose",
            "--model",
            model_path.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        offdiag.push(mean_abs_offdiag(&out_dir.join("wtw.csv")));
    }
    assert!(
        offdiag[0] < offdiag[1],
        "two-direction variant should have the smaller mean |off-diagonal| ({} vs {})",
        offdiag[0],
        offdiag[1]
    );
}
