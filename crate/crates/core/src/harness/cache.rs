//! Content-addressed stage cache. Every artifact name embeds the hash of
//! the stage inputs, so a stage is skipped exactly when its artifacts exist.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::config::hash_json;
use crate::error::{Error, Result};

/// Distinguishes temporaries of concurrent builds of the same stage.
static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Bumped whenever an artifact's content for fixed inputs would change.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+1");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageEvent {
    pub stage: String,
    pub hash: String,
    pub cached: bool,
}

#[derive(Debug)]
pub struct StageCache {
    pub dir: PathBuf,
    pub events: Vec<StageEvent>,
}

impl StageCache {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), events: Vec::new() })
    }

    pub fn key(stage: &str, inputs: &serde_json::Value) -> String {
        hash_json(&serde_json::json!({ "stage": stage, "version": CODE_VERSION, "inputs": inputs }))
    }

    pub fn path(&self, stage: &str, hash: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{stage}-{}.{ext}", &hash[..16]))
    }

    /// Run `produce` unless every output already exists. Outputs are
    /// written to temporary names and renamed into place on success.
    pub fn stage<F>(&mut self, stage: &str, inputs: &serde_json::Value, exts: &[&str], produce: F) -> Result<(String, Vec<PathBuf>)>
    where
        F: FnOnce(&[PathBuf]) -> Result<()>,
    {
        let hash = Self::key(stage, inputs);
        let finals: Vec<PathBuf> = exts.iter().map(|e| self.path(stage, &hash, e)).collect();
        let cached = finals.iter().all(|p| p.exists());
        if !cached {
            log::info!("stage {stage}: running ({})", &hash[..16]);
            let tag = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
            let temps: Vec<PathBuf> = finals
                .iter()
                .map(|p| p.with_extension(format!("tmp{}-{tag}", std::process::id())))
                .collect();
            produce(&temps).map_err(|e| Error::Stage { stage: stage.to_string(), source: Box::new(e) })?;
            for (t, f) in temps.iter().zip(&finals) {
                std::fs::rename(t, f)?;
            }
        } else {
            log::info!("stage {stage}: cached ({})", &hash[..16]);
        }
        self.events.push(StageEvent { stage: stage.to_string(), hash: hash.clone(), cached });
        Ok((hash, finals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_run_is_a_hit() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = StageCache::new(dir.path()).unwrap();
        let inputs = serde_json::json!({"a": 1});
        let mut runs = 0;
        for _ in 0..2 {
            c.stage("s", &inputs, &["txt"], |p| {
                runs += 1;
                Ok(std::fs::write(&p[0], "x")?)
            })
            .unwrap();
        }
        assert_eq!(runs, 1);
        assert_eq!(c.events.iter().map(|e| e.cached).collect::<Vec<_>>(), vec![false, true]);
        let err = c.stage("bad", &inputs, &["txt"], |_| Err(Error::Empty("x"))).unwrap_err();
        assert!(matches!(err, Error::Stage { ref stage, .. } if stage == "bad"));
    }
}
