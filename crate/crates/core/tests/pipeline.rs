mod common;

use std::collections::HashSet;
use std::process::Command;

use explain_al::dataset::{
    holdout_validation, make_synthetic, parse_dataset, sample_explanation_set, split_initial,
    write_dataset, MissingClassPolicy, SplitSizes, SyntheticSpec,
};
use explain_al::explainer::ExplainerKind;
use explain_al::harness::{
    emit_results, read_curves_csv, report, run_experiment, run_experiment_on, run_single_with_pool,
    DatasetSource, ExperimentConfig, StrategySpec, Summary,
};
use explain_al::model::TrainConfig;
use explain_al::strategy::Criterion;
use explain_al::tuner::{IntRange, Theta, ThetaSpace};

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            num_classes: 3,
            dims: 6,
            rows: 600,
            confusion_fraction: 0.2,
            seed: 11,
            ..SyntheticSpec::default()
        }),
        n_orig: 30,
        n_inc: 300,
        n_test: 200,
        b_l: 20,
        b_e: 20,
        iterations: 3,
        train: TrainConfig {
            epochs: 60,
            ..TrainConfig::default()
        },
        theta: Theta {
            eval_budget: 35,
            top_k: 6,
            batch_eval_limit: 16,
        },
        theta_space: ThetaSpace {
            eval_budget: IntRange::new(7, 70),
            top_k: IntRange::new(1, 6),
            batch_eval_limit: IntRange::new(1, 32),
        },
        seeds: vec![0, 1],
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn all_strategies() -> Vec<StrategySpec> {
    vec![
        StrategySpec::Explanation(Criterion::PredDisagreeExplainSimilar),
        StrategySpec::Explanation(Criterion::MisclassifiedSelfSimilar),
        StrategySpec::Explanation(Criterion::TrueLabelPairSimilar),
        StrategySpec::Entropy,
        StrategySpec::Margin,
        StrategySpec::Random,
    ]
}

#[test]
fn dataset_csv_round_trip() {
    let data = make_synthetic(&SyntheticSpec {
        rows: 50,
        dims: 3,
        num_classes: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf).unwrap();
    let back = parse_dataset(buf.as_slice()).unwrap();
    assert_eq!(back, data);
}

#[test]
fn split_is_a_partition_and_commits_keep_it_one() {
    let data = make_synthetic(&SyntheticSpec {
        rows: 400,
        dims: 4,
        num_classes: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let sizes = SplitSizes {
        orig: 40,
        inc: 200,
        test: 100,
    };
    let mut pool = split_initial(&data, sizes, 3, MissingClassPolicy::Error).unwrap();
    let mut committed = 0;
    for round in 0..5u64 {
        let sample = sample_explanation_set(&pool, 30, round).unwrap();
        let ids: HashSet<usize> = sample.indices.iter().map(|&i| pool.pool_ids()[i]).collect();
        assert!(ids.is_disjoint(&pool.consumed().iter().copied().collect()));
        let pick: Vec<usize> = sample.indices[..7].to_vec();
        pool.commit_batch(&pick).unwrap();
        committed += 7;
        assert_eq!(pool.labeled().len(), 40 + committed);
        assert_eq!(pool.labeled().len() - pool.n_orig() + pool.pool_len(), pool.n_inc());
        assert_eq!(pool.oracle_reads(), committed);
    }
    // labeled + pool + test rows are distinct source rows and the labels
    // revealed match the source labels
    let mut all: Vec<usize> = pool.labeled_source_rows().to_vec();
    all.extend(pool.pool_source_rows());
    let distinct: HashSet<usize> = all.iter().copied().collect();
    assert_eq!(distinct.len(), 240);
    for (i, &src) in pool.labeled_source_rows().iter().enumerate() {
        assert_eq!(pool.labeled().labels()[i], data.labels()[src]);
        assert_eq!(pool.labeled().features().row(i), data.features().row(src));
    }
    assert!(pool.commit_batch(&[0, 0]).is_err());
    assert!(pool.commit_batch(&[pool.pool_len()]).is_err());
    assert_eq!(pool.oracle_reads(), committed);
}

#[test]
fn holdout_sizes() {
    let data = common::labeled_set(1, 50, 3, 2);
    let (tr, va) = holdout_validation(&data, 0.2, 0).unwrap();
    assert_eq!((tr.len(), va.len()), (40, 10));
    assert!(holdout_validation(&data, 0.0, 0).is_err());
}

#[test]
fn bookkeeping_holds_for_every_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = cfg.load_data().unwrap();
    for strategy in all_strategies() {
        let (curve, pool) = run_single_with_pool(&cfg, &data, strategy, 4).unwrap();
        assert_eq!(curve.points.len(), cfg.iterations + 1);
        for (t, p) in curve.points.iter().enumerate() {
            assert_eq!(p.iteration, t);
            assert_eq!(p.labeled_size, cfg.n_orig + t * cfg.b_l);
            assert!((0.0..=1.0).contains(&p.f1_macro));
        }
        let picked: Vec<usize> = curve.selections.iter().flatten().copied().collect();
        let distinct: HashSet<usize> = picked.iter().copied().collect();
        assert_eq!(distinct.len(), picked.len(), "{strategy}");
        assert_eq!(curve.oracle_reads, picked.len());
        assert_eq!(pool.labeled().len() - cfg.n_orig + pool.pool_len(), cfg.n_inc);
        assert!(curve.stop_reason.is_none());
    }
}

#[test]
fn zero_iterations_give_only_the_initial_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        iterations: 0,
        ..small_config(dir.path())
    };
    let curves = run_experiment(&cfg).unwrap();
    for c in &curves {
        for run in &c.runs {
            assert_eq!(run.points.len(), 1);
            assert_eq!(run.oracle_reads, 0);
        }
    }
}

#[test]
fn exhausting_the_pool_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        b_l: 300,
        iterations: 2,
        ..small_config(dir.path())
    };
    let data = cfg.load_data().unwrap();
    let (curve, pool) = run_single_with_pool(&cfg, &data, StrategySpec::Random, 0).unwrap();
    assert_eq!(pool.pool_len(), 0);
    assert_eq!(curve.points.len(), 2);
    assert_eq!(curve.points[1].labeled_size, 330);
    assert!(curve.stop_reason.unwrap().contains("exhausted"));
}

#[test]
fn runs_are_deterministic_and_splits_are_paired() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        strategies: all_strategies(),
        ..small_config(dir.path())
    };
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
    for seed_idx in 0..cfg.seeds.len() {
        let first = &a[0].runs[seed_idx].points[0];
        for c in &a[1..] {
            assert_eq!(&c.runs[seed_idx].points[0], first);
        }
    }
}

#[test]
fn emitted_files_match_the_grid_and_reports_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        seeds: vec![0, 1, 2, 3],
        iterations: 1,
        ..small_config(dir.path())
    };
    let curves = run_experiment(&cfg).unwrap();
    assert_eq!(curves.iter().map(|c| c.runs.len()).sum::<usize>(), 16);
    let summary = emit_results(&curves, &cfg, dir.path()).unwrap();
    let rows = read_curves_csv(dir.path().join("curves.csv")).unwrap();
    assert_eq!(rows.len(), 16 * 2);

    for s in &summary.strategies {
        for p in &s.points {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.strategy == s.strategy && r.iteration == p.iteration)
                .map(|r| r.f1_macro)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - p.mean).abs() < 1e-12);
            assert!(p.ci_low <= p.mean && p.mean <= p.ci_high);
        }
    }
    let before = std::fs::read(dir.path().join("summary.json")).unwrap();
    let again = report(dir.path()).unwrap();
    assert_eq!(again, summary);
    assert_eq!(std::fs::read(dir.path().join("summary.json")).unwrap(), before);

    // overwriting an existing result directory leaves no temporaries behind
    emit_results(&curves, &cfg, dir.path()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["config.txt", "curves.csv", "summary.json"]);
    let text = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
}

#[test]
fn one_seed_has_a_zero_width_interval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        seeds: vec![9],
        strategies: vec![StrategySpec::Random],
        ..small_config(dir.path())
    };
    let curves = run_experiment(&cfg).unwrap();
    let summary = emit_results(&curves, &cfg, dir.path()).unwrap();
    for p in &summary.strategies[0].points {
        assert_eq!((p.ci_low, p.ci_high, p.n_seeds), (p.mean, p.mean, 1));
    }
}

#[test]
fn tuning_records_trials_without_touching_other_cells() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_config(dir.path());
    let tuned = ExperimentConfig {
        tune: explain_al::harness::TuneMode::First,
        tune_trials: 4,
        strategies: vec![StrategySpec::Explanation(Criterion::default()), StrategySpec::Random],
        seeds: vec![0],
        ..base.clone()
    };
    let curves = run_experiment(&tuned).unwrap();
    let run = &curves[0].runs[0];
    assert_eq!(run.trials.len(), 4);
    assert!(run.trials.iter().all(|t| tuned.theta_space.contains(&t.theta)));
    assert!(curves[1].runs[0].trials.is_empty());
    let untuned = run_experiment(&ExperimentConfig {
        tune: explain_al::harness::TuneMode::Off,
        ..tuned.clone()
    })
    .unwrap();
    assert_eq!(untuned[1], curves[1]);
}

#[test]
fn linear_explainer_and_normalization_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        explainer: ExplainerKind::Linear,
        normalize: true,
        diagnostics: true,
        strategies: vec![StrategySpec::Explanation(Criterion::default())],
        seeds: vec![0],
        iterations: 1,
        ..small_config(dir.path())
    };
    let curves = run_experiment(&cfg).unwrap();
    assert_eq!(curves[0].runs[0].points.len(), 2);
    let diag = dir.path().join("diagnostics");
    for m in ["A", "B", "C", "W"] {
        assert!(diag.join(format!("explanation_seed0_iter1_{m}.csv")).exists(), "{m}");
    }
}

#[test]
fn failing_cells_name_strategy_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = common::labeled_set(0, 100, 6, 3);
    let err = run_experiment_on(&cfg, &data).unwrap_err().to_string();
    assert!(err.contains("explanation") && err.contains("seed 0"), "{err}");
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_explain-al"))
}

#[test]
fn cli_run_sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_synthetic(&SyntheticSpec {
        rows: 300,
        dims: 4,
        num_classes: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut csv = Vec::new();
    write_dataset(&data, &mut csv).unwrap();
    std::fs::write(dir.path().join("data.csv"), csv).unwrap();
    let conf = "dataset = data.csv\nn_orig = 30\nn_inc = 150\nn_test = 100\nb_l = 10\nb_e = 10\n\
                iterations = 2\nepochs = 40\nseeds = 0, 1\neval_budget = 25\ntop_k = 4\n\
                space_eval_budget = 5..50\nspace_top_k = 1..4\nspace_batch_eval_limit = 1..16\n\
                output_dir = out\n";
    let conf_path = dir.path().join("exp.conf");
    std::fs::write(&conf_path, conf).unwrap();

    let run = cli().args(["run", "--config"]).arg(&conf_path).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let out = dir.path().join("out");
    let rows = read_curves_csv(out.join("curves.csv")).unwrap();
    assert_eq!(rows.len(), 4 * 2 * 3);

    let rep = cli().args(["report", "--dir"]).arg(&out).output().unwrap();
    assert!(rep.status.success());
    let summary: Summary = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.strategies.len(), 4);

    let sweep = cli()
        .args(["sweep", "--trials", "3", "--config"])
        .arg(&conf_path)
        .output()
        .unwrap();
    assert!(sweep.status.success(), "{}", String::from_utf8_lossy(&sweep.stderr));
    let lines = std::fs::read_to_string(out.join("trials.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn cli_failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    for args in [
        vec!["run".to_string(), "--config".into(), bad.display().to_string()],
        vec!["run".to_string(), "--config".into(), "/nonexistent/x.conf".into()],
        vec!["report".to_string(), "--dir".into(), dir.path().display().to_string()],
        vec!["sweep".to_string(), "--config".into(), bad.display().to_string(), "--trials".into(), "0".into()],
    ] {
        let out = cli().args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}
