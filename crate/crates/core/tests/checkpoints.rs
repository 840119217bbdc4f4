mod common;

use leosat_core::augment::{estimation_error_set, train_vae, ErrorSet, Vae};
use leosat_core::dataset::ChannelDataset;
use leosat_core::harness::pipeline::prediction_split;
use leosat_core::nn::checkpoint::Checkpoint;
use leosat_core::precoder::{train_dlpcn, Dlpcn};
use leosat_core::predictor::{train_dlpdn, Dlpdn};

use common::tiny_config;

fn reload(ck: Checkpoint, dir: &std::path::Path, name: &str) -> Checkpoint {
    let p = dir.join(name);
    ck.save(&p).unwrap();
    Checkpoint::load(&p).unwrap()
}

#[test]
fn trained_models_survive_a_file_round_trip() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let ds = ChannelDataset::generate(&cfg.system, cfg.data.episodes, cfg.data.slots_per_episode(), 8).unwrap();
    let (train, test) = prediction_split(&cfg, &ds, cfg.predictor.w_step).unwrap();

    let dl = train_dlpdn(&train, &cfg.predictor).unwrap();
    let dl2 = Dlpdn::from_checkpoint(&reload(dl.checkpoint().unwrap(), dir.path(), "dl.json")).unwrap();
    let pred = dl.predict_samples(&test.samples).unwrap();
    assert_eq!(pred, dl2.predict_samples(&test.samples).unwrap());

    let e1 = estimation_error_set(&cfg.system, 200, 3).unwrap();
    let vae = train_vae(&e1, &cfg.vae).unwrap();
    let vae2 = Vae::from_checkpoint(&reload(vae.checkpoint().unwrap(), dir.path(), "vae.json")).unwrap();
    assert_eq!(vae.generate(&cfg.system, 20, 4).unwrap(), vae2.generate(&cfg.system, 20, 4).unwrap());

    let pc = train_dlpcn(&cfg.system, &pred, &ds.xi, &e1, &cfg.precoder).unwrap();
    let pc2 = Dlpcn::from_checkpoint(&reload(pc.checkpoint().unwrap(), dir.path(), "pc.json")).unwrap();
    assert_eq!(pc.precode_batch(&pred).unwrap(), pc2.precode_batch(&pred).unwrap());
    assert_eq!(pc.robustness, pc2.robustness);
}

#[test]
fn dataset_and_errors_export_every_entry() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let ds = ChannelDataset::generate(&cfg.system, 3, 5, 1).unwrap();
    let bin = dir.path().join("d.bin");
    ds.save(&bin).unwrap();
    assert_eq!(ChannelDataset::load(&bin).unwrap(), ds);

    let csv = dir.path().join("d.csv");
    ds.export_csv(&csv).unwrap();
    let mut r = csv::Reader::from_path(&csv).unwrap();
    let recs: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    let (m, k) = (cfg.system.antennas, cfg.system.devices);
    assert_eq!(recs.len(), 3 * 5 * m * k);
    let last = &recs[recs.len() - 1];
    let h = ds.episodes[2].h[4][(m - 1, k - 1)];
    assert_eq!(last[4].parse::<f64>().unwrap(), h.re);
    assert_eq!(last[5].parse::<f64>().unwrap(), h.im);

    let e = estimation_error_set(&cfg.system, 7, 2).unwrap();
    let p = dir.path().join("e.csv");
    e.export_csv(&p).unwrap();
    assert_eq!(csv::Reader::from_path(&p).unwrap().records().count(), 7 * m);
    let b = dir.path().join("e.bin");
    e.save(&b).unwrap();
    assert_eq!(ErrorSet::load(&b).unwrap(), e);
}

#[test]
fn truncated_files_are_rejected() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let ds = ChannelDataset::generate(&cfg.system, 2, 5, 1).unwrap();
    let bin = dir.path().join("d.bin");
    ds.save(&bin).unwrap();
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() / 2]).unwrap();
    assert!(ChannelDataset::load(&bin).is_err());
    std::fs::write(&bin, b"not a dataset").unwrap();
    assert!(ChannelDataset::load(&bin).is_err());
    assert!(ErrorSet::load(&bin).is_err());
}
