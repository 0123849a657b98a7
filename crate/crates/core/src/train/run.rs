//! On-disk run layout: `config.json`, `checkpoints/epoch_<k>.bin`,
//! `report.json` and `history.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::TrainConfig;
use super::engine::{EpochRecord, RunReport};
use super::model::Model;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join(CHECKPOINT_DIR)).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn open(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.root
            .join(CHECKPOINT_DIR)
            .join(format!("epoch_{epoch}.bin"))
    }

    pub fn write_config(&self, cfg: &TrainConfig) -> Result<()> {
        write_json(&self.root.join(CONFIG_FILE), cfg)
    }

    pub fn read_config(&self) -> Result<TrainConfig> {
        read_json(&self.root.join(CONFIG_FILE))
    }

    pub fn write_checkpoint(&self, epoch: usize, cfg: &TrainConfig, model: &Model) -> Result<()> {
        Checkpoint::capture(serde_json::to_value(cfg)?, model).save(&self.checkpoint_path(epoch))
    }

    pub fn write_report(&self, report: &RunReport) -> Result<()> {
        write_json(&self.root.join(REPORT_FILE), report)
    }

    pub fn read_report(&self) -> Result<RunReport> {
        read_json(&self.root.join(REPORT_FILE))
    }

    pub fn write_history(&self, history: &[EpochRecord]) -> Result<()> {
        let path = self.root.join(HISTORY_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        for r in history {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn read_history(&self) -> Result<Vec<EpochRecord>> {
        let path = self.root.join(HISTORY_FILE);
        let mut r = csv::Reader::from_path(&path)?;
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }
}

/// Restores a model saved by [`RunDir::write_checkpoint`] together with the
/// configuration it was trained under.
pub fn load_model(path: &Path) -> Result<(TrainConfig, Model)> {
    let ck = Checkpoint::load(path)?;
    let cfg: TrainConfig = serde_json::from_value(ck.config.clone())?;
    let mut model = Model::init(&cfg)?;
    ck.restore_into(&mut model)?;
    Ok((cfg, model))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedRecord {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
