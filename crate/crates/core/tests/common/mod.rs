#![allow(dead_code)]

use leosat_core::RunConfig;

/// Desk system at a size that trains every stage in seconds.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::desk();
    c.data.episodes = 30;
    c.data.train_samples = 200;
    c.data.test_samples = 60;
    c.data.estimation_errors = 100;
    c.data.prediction_errors = 100;
    c.data.error_set_size = 500;
    c.data.eval_errors = 50;
    c.predictor.train.epochs = 2;
    c.vae.train.epochs = 3;
    c.precoder.train.epochs = 2;
    c.precoder.augmentations = 16;
    c
}
