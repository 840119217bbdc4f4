mod common;

use std::process::Command;

use leosat_core::dataset::ChannelDataset;
use leosat_core::harness::{run_pipeline, sweep, Axis, ExperimentSpec, Profile, Scheme};

use common::tiny_config;

const ALL: [Scheme; 7] = [
    Scheme::Dlpdn,
    Scheme::Lr,
    Scheme::Dlpcn,
    Scheme::DlpcnGaussian,
    Scheme::DlpcnNonrobust,
    Scheme::Mlp,
    Scheme::Zfbf,
];

#[test]
fn end_to_end_emits_every_declared_row_and_replays_from_cache() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let first = run_pipeline(&cfg, &ALL, 5, dir.path()).unwrap();
    assert!(first.stages.iter().all(|s| !s.cached));

    let k = cfg.system.devices;
    for s in ["dlpdn", "lr"] {
        for m in ["NMSE", "NMSE_dB", "NMSE_true_dB"] {
            assert!(first.rows.iter().any(|r| r.scheme == s && r.metric == m), "{s} {m}");
        }
    }
    for s in ["dlpcn", "dlpcn_gaussian", "dlpcn_nonrobust", "mlp", "zfbf"] {
        let mut want = vec!["WSR".to_string(), "outage_max".to_string()];
        want.extend((0..k).map(|i| format!("outage_{i}")));
        want.extend((0..k).map(|i| format!("outage_true_{i}")));
        for m in want {
            let row = first.rows.iter().find(|r| r.scheme == s && r.metric == m);
            assert!(row.is_some_and(|r| r.value.is_finite()), "{s} {m}");
        }
    }

    let again = run_pipeline(&cfg, &ALL, 5, dir.path()).unwrap();
    assert!(again.stages.iter().all(|s| s.cached), "{:?}", again.stages);
    assert_eq!(again.rows, first.rows);
}

#[test]
fn deleting_a_precoder_reruns_only_that_stage() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let schemes = [Scheme::Dlpcn, Scheme::Zfbf];
    let first = run_pipeline(&cfg, &schemes, 6, dir.path()).unwrap();
    let removed: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("precoder_dlpcn-"))
        .collect();
    assert_eq!(removed.len(), 1);
    std::fs::remove_file(&removed[0]).unwrap();

    let second = run_pipeline(&cfg, &schemes, 6, dir.path()).unwrap();
    for ev in &second.stages {
        assert_eq!(ev.cached, ev.stage != "precoder_dlpcn", "{}", ev.stage);
    }
    assert!(removed[0].exists());
    // Retraining is deterministic, so the rebuilt checkpoint reproduces the metrics.
    assert_eq!(second.rows, first.rows);
}

#[test]
fn downlink_settings_reuse_upstream_stages() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, &[Scheme::Dlpcn], 2, dir.path()).unwrap();
    let mut other = cfg.clone();
    other.system.tx_power_dbw = 0.0;
    let out = run_pipeline(&other, &[Scheme::Dlpcn], 2, dir.path()).unwrap();
    let rebuilt: Vec<&str> = out.stages.iter().filter(|s| !s.cached).map(|s| s.stage.as_str()).collect();
    assert_eq!(rebuilt, ["precoder_dlpcn", "evaluate"]);
}

#[test]
fn sweep_rows_are_ordered_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let spec = ExperimentSpec {
        name: "p2".into(),
        profile: Profile::Desk,
        overrides: serde_json::to_value(tiny_config()).unwrap(),
        axis: Some(Axis::P2),
        values: vec![0.0, 10.0],
        schemes: vec![Scheme::Zfbf],
        replications: 2,
        seed: 11,
        output: out.clone(),
        cache_dir: None,
    };
    let rows = sweep(&spec).unwrap();
    let keys: Vec<(f64, usize)> = rows.iter().map(|r| (r.axis_value.unwrap(), r.replication)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
    assert!(rows.iter().all(|r| r.axis == Axis::P2.name()));
    assert!(out.exists() && out.with_extension("json").exists());

    let again = sweep(&spec).unwrap();
    assert_eq!(again, rows);
    assert_eq!(leosat_core::harness::read_rows(&out).unwrap(), rows);

    let zf = |p: f64| -> f64 {
        let v: Vec<f64> = rows.iter().filter(|r| r.axis_value == Some(p) && r.metric == "WSR").map(|r| r.value).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(zf(10.0) >= zf(0.0));
}

#[test]
fn replications_use_distinct_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        name: "reps".into(),
        profile: Profile::Desk,
        overrides: serde_json::to_value(tiny_config()).unwrap(),
        axis: None,
        values: vec![],
        schemes: vec![Scheme::Lr],
        replications: 2,
        seed: 3,
        output: dir.path().join("r.csv"),
        cache_dir: Some(dir.path().join("c")),
    };
    let rows = sweep(&spec).unwrap();
    let seeds: std::collections::BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 2);
    assert!(rows.iter().any(|r| r.seed == 3));
}

fn leosat(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_leosat")).args(args).env("LEOSAT_THREADS", "1").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn cli_stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    std::fs::write(p("cfg.json"), serde_json::to_string(&tiny_config()).unwrap()).unwrap();
    let cfg = p("cfg.json");

    leosat(&["gen-data", "--config", &cfg, "--seed", "4", "--out", &p("d.bin"), "--csv", &p("d.csv")]);
    let ds = ChannelDataset::load(std::path::Path::new(&p("d.bin"))).unwrap();
    assert_eq!(ds.seed, 4);
    assert!(std::fs::read_to_string(p("d.csv")).unwrap().starts_with("episode,slot,device,antenna"));

    leosat(&["train-predictor", "--config", &cfg, "--seed", "1", "--data", &p("d.bin"), "--out", &p("dl.json")]);
    leosat(&["train-predictor", "--config", &cfg, "--seed", "1", "--data", &p("d.bin"), "--out", &p("lr.json"), "--scheme", "lr"]);
    for c in ["dl.json", "lr.json"] {
        leosat(&["evaluate-predictor", "--config", &cfg, "--seed", "1", "--ckpt", &p(c), "--data", &p("d.bin"), "--metrics", &p("nmse.csv")]);
        let csv = std::fs::read_to_string(p("nmse.csv")).unwrap();
        assert!(csv.starts_with("w_step,scheme,NMSE_dB"), "{csv}");
    }

    leosat(&["gen-errors", "--config", &cfg, "--seed", "2", "--kind", "estimation", "--out", &p("e1.bin")]);
    leosat(&["gen-errors", "--config", &cfg, "--seed", "2", "--kind", "prediction", "--ckpt", &p("dl.json"), "--data", &p("d.bin"), "--out", &p("e2.bin")]);
    leosat(&["train-vae", "--config", &cfg, "--seed", "2", "--errors", &p("e2.bin"), "--out", &p("vae.json")]);
    leosat(&["gen-errors", "--config", &cfg, "--seed", "3", "--kind", "vae", "--ckpt", &p("vae.json"), "--out", &p("e2v.bin"), "--csv", &p("e2v.csv")]);
    leosat(&[
        "gen-errors", "--config", &cfg, "--seed", "3", "--kind", "compose", "--e1", &p("e1.bin"), "--e2", &p("e2v.bin"), "--data", &p("d.bin"),
        "--out", &p("e.bin"),
    ]);
    leosat(&[
        "train-precoder", "--config", &cfg, "--seed", "5", "--csi", &p("d.bin"), "--predictor", &p("dl.json"), "--errors", &p("e.bin"), "--out",
        &p("pc.json"),
    ]);
    leosat(&[
        "evaluate-precoder", "--config", &cfg, "--seed", "5", "--ckpt", &p("pc.json"), "--data", &p("d.bin"), "--predictor", &p("dl.json"),
        "--heldout", &p("e.bin"), "--metrics", &p("pc.csv"),
    ]);
    let csv = std::fs::read_to_string(p("pc.csv")).unwrap();
    assert!(csv.starts_with("scheme,P2_dBW,WSR,outage_0,outage_1,outage_2,outage_3,wall_time_ms"), "{csv}");
    assert!(std::path::Path::new(&p("pc.json")).exists());

    leosat(&["time", "--config", &cfg, "--seed", "1", "--schemes", "zfbf,lr", "--sizes", "8,16", "--metrics", &p("t.csv")]);
    let rows = leosat_core::harness::read_rows(std::path::Path::new(&p("t.csv"))).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.metric == "wall_time_ms" && r.value > 0.0));
}

#[test]
fn cli_rejects_bad_thread_count() {
    let out = Command::new(env!("CARGO_BIN_EXE_leosat"))
        .args(["time", "--metrics", "/dev/null"])
        .env("LEOSAT_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("LEOSAT_THREADS"));
}

#[test]
fn shipped_experiment_specs_are_valid() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            let spec = ExperimentSpec::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            spec.validate().unwrap();
            let cfg = spec.resolve_config().unwrap();
            if let Some(axis) = spec.axis {
                for v in &spec.values {
                    axis.apply(&mut cfg.clone(), *v).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
                }
            }
            n += 1;
        }
    }
    assert!(n >= 7);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    std::fs::write(p("cfg.json"), serde_json::to_string(&tiny_config()).unwrap()).unwrap();
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let csv = p(&format!("m{threads}.csv"));
        let out = Command::new(env!("CARGO_BIN_EXE_leosat"))
            .args(["evaluate", "--config", &p("cfg.json"), "--seed", "9", "--schemes", "dlpdn,dlpcn", "--metrics", &csv])
            .args(["--cache", &p(&format!("c{threads}"))])
            .env("LEOSAT_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outs.push(std::fs::read_to_string(&csv).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}
