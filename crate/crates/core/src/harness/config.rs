//! Flat JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::buffer::StoragePolicy;
use crate::combiner::CombinerConfig;
use crate::error::{Error, Result};
use crate::strategy::{Retrieval, StrategyConfig, Training};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    MnistSplit,
    MnistPerm,
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::MnistSplit => "mnist_split",
            DatasetKind::MnistPerm => "mnist_perm",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

/// Which scored replacement variant the `*-c` strategies use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrsVariant {
    S1,
    S2,
}

impl CrsVariant {
    pub fn policy(&self) -> StoragePolicy {
        match self {
            CrsVariant::S1 => StoragePolicy::CrsS1,
            CrsVariant::S2 => StoragePolicy::CrsS2,
        }
    }
}

/// One experiment grid: a dataset, a set of strategy names, and seeds.
/// Unknown fields are rejected so typos surface as config errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Dataset root; falls back to `REHEARSAL_DATA_DIR`, then `data/mnist`.
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Strategy cells: `er`, `er-p`, `er-c`, `er-pc`, optionally `-mir`
    /// suffixed (e.g. `er-mir`, `er-pc-mir`).
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    /// Tasks per stream; default 5 for the class split, 10 for the
    /// permutation benchmark, 2 for synthetic.
    pub n_tasks: Option<usize>,
    pub per_task: usize,
    /// Per-task evaluation-set size cap.
    pub eval_cap: usize,
    pub hidden: Vec<usize>,
    /// Total memory slots; overrides `mem_per_class` when set.
    pub mem_sz: Option<usize>,
    pub mem_per_class: usize,
    /// Incoming examples consumed per step (1 = strict online).
    pub incoming_batch: usize,
    pub replay_k: usize,
    pub mir_candidates: usize,
    pub lr: f64,
    /// One-step combiner size; `null` tunes it on a validation split over
    /// {0.01, 0.1, 0.5, 1.0} before the grid runs.
    pub lambda: Option<f64>,
    pub epsilon: f64,
    pub pgd_steps: usize,
    /// Replay-gradient grouping; `null` keeps one gradient per example.
    pub groups: Option<usize>,
    pub crs_policy: CrsVariant,
    pub crs_weight: f64,
    /// Write one JSON-lines step log per run.
    pub step_log: bool,
    // synthetic-only knobs
    pub dims: usize,
    pub n_classes: Option<usize>,
    pub noise: f64,
    pub test_per_task: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            data_dir: None,
            output_dir: PathBuf::from("runs"),
            strategies: vec!["er".into()],
            seeds: vec![0],
            n_tasks: None,
            per_task: 1000,
            eval_cap: 1000,
            hidden: vec![100, 100],
            mem_sz: None,
            mem_per_class: 50,
            incoming_batch: 1,
            replay_k: 10,
            mir_candidates: 25,
            lr: 0.05,
            lambda: Some(0.1),
            epsilon: 1e-8,
            pgd_steps: 1,
            groups: None,
            crs_policy: CrsVariant::S2,
            crs_weight: 1.0,
            step_log: false,
            dims: 16,
            n_classes: None,
            noise: 0.15,
            test_per_task: 200,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::invalid_config(format!("cannot read {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::invalid_config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid_config("seeds must be non-empty"));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid_config("strategies must be non-empty"));
        }
        for name in &self.strategies {
            parse_strategy_name(name)?;
        }
        if self.per_task == 0 {
            return Err(Error::invalid_config("per_task must be >= 1"));
        }
        if self.incoming_batch == 0 {
            return Err(Error::invalid_config("incoming_batch must be >= 1"));
        }
        if self.replay_k == 0 {
            return Err(Error::invalid_config("replay_k must be >= 1"));
        }
        if self.mir_candidates < self.replay_k {
            return Err(Error::invalid_config("mir_candidates must be >= replay_k"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid_config("lr must be > 0"));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return Err(Error::invalid_config("lambda must be > 0"));
            }
        }
        if self.n_tasks == Some(0) {
            return Err(Error::invalid_config("n_tasks must be >= 1"));
        }
        Ok(())
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks.unwrap_or(match self.dataset {
            DatasetKind::MnistSplit => 5,
            DatasetKind::MnistPerm => 10,
            DatasetKind::Synthetic => 2,
        })
    }

    pub fn num_classes(&self) -> usize {
        match self.dataset {
            DatasetKind::MnistSplit | DatasetKind::MnistPerm => 10,
            DatasetKind::Synthetic => self.n_classes.unwrap_or(4),
        }
    }

    pub fn mem_sz(&self) -> usize {
        self.mem_sz
            .unwrap_or(self.mem_per_class * self.num_classes())
    }

    /// Concrete strategy for one named cell, with `lambda` already
    /// resolved.
    pub fn strategy(&self, name: &str, lambda: f64) -> Result<StrategyConfig> {
        let (training, storage, retrieval) = parse_strategy_name(name)?;
        let storage = match storage {
            CellStorage::Reservoir => StoragePolicy::Reservoir,
            CellStorage::Crs => self.crs_policy.policy(),
        };
        let cfg = StrategyConfig {
            training,
            storage,
            retrieval,
            incoming_batch: self.incoming_batch,
            replay_k: self.replay_k,
            mir_candidates: self.mir_candidates,
            lr: self.lr,
            combiner: CombinerConfig {
                lambda,
                epsilon: self.epsilon,
                steps: self.pgd_steps,
                groups: self.groups,
                alpha_beta: None,
            },
            crs_weight: self.crs_weight,
            capture_directions: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

enum CellStorage {
    Reservoir,
    Crs,
}

fn parse_strategy_name(name: &str) -> Result<(Training, CellStorage, Retrieval)> {
    let (base, retrieval) = match name.strip_suffix("-mir") {
        Some(base) => (base, Retrieval::Mir),
        None => (name, Retrieval::Uniform),
    };
    let (training, storage) = match base {
        "er" => (Training::Er, CellStorage::Reservoir),
        "er-p" => (Training::Pgd, CellStorage::Reservoir),
        "er-c" => (Training::Er, CellStorage::Crs),
        "er-pc" => (Training::Pgd, CellStorage::Crs),
        _ => {
            return Err(Error::invalid_config(format!(
                "unknown strategy '{name}' (expected er, er-p, er-c, er-pc, optionally -mir)"
            )))
        }
    };
    Ok((training, storage, retrieval))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        assert_eq!(RunConfig::default().mem_sz(), 50 * 4);
    }

    #[test]
    fn strategy_names_map_to_cells() {
        let cfg = RunConfig::default();
        let er = cfg.strategy("er", 0.1).unwrap();
        assert_eq!(er.training, Training::Er);
        assert_eq!(er.storage, StoragePolicy::Reservoir);
        assert_eq!(er.retrieval, Retrieval::Uniform);

        let er_pc_mir = cfg.strategy("er-pc-mir", 0.1).unwrap();
        assert_eq!(er_pc_mir.training, Training::Pgd);
        assert_eq!(er_pc_mir.storage, StoragePolicy::CrsS2);
        assert_eq!(er_pc_mir.retrieval, Retrieval::Mir);

        let mut cfg_s1 = RunConfig::default();
        cfg_s1.crs_policy = CrsVariant::S1;
        assert_eq!(
            cfg_s1.strategy("er-c", 0.1).unwrap().storage,
            StoragePolicy::CrsS1
        );

        assert!(cfg.strategy("gdumb", 0.1).is_err());
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"dataset": "synthetic", "bogus": 3}"#).unwrap();
        assert!(matches!(
            RunConfig::from_file(&path),
            Err(Error::InvalidConfig(_))
        ));

        std::fs::write(&path, r#"{"dataset": "synthetic", "seeds": []}"#).unwrap();
        assert!(matches!(
            RunConfig::from_file(&path),
            Err(Error::InvalidConfig(_))
        ));

        std::fs::write(&path, r#"{"dataset": "mnist_perm", "seeds": [1, 2]}"#).unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.n_tasks(), 10);
        assert_eq!(cfg.mem_sz(), 500);
    }
}
