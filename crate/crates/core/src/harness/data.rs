//! Dataset resolution and benchmark assembly.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::Example;
use crate::stream::{
    gunzip_to, load_idx, make_permuted_tasks, make_split_tasks, permuted_eval_sets,
    split_eval_sets, synthetic_stream, SyntheticSpec, TaskStream,
};

use super::config::{DatasetKind, RunConfig};

/// Environment variable naming the dataset root directory.
pub const DATA_ENV: &str = "REHEARSAL_DATA_DIR";

const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Dataset root: explicit config, else `REHEARSAL_DATA_DIR`, else
/// `data/mnist` relative to the working directory.
pub fn resolve_data_dir(configured: Option<&Path>) -> PathBuf {
    if let Some(dir) = configured {
        return dir.to_path_buf();
    }
    if let Ok(dir) = std::env::var(DATA_ENV) {
        return PathBuf::from(dir);
    }
    PathBuf::from("data/mnist")
}

/// Make sure the four raw IDX files exist under `dir`, inflating any
/// `.gz` siblings on first use.
pub fn ensure_mnist(dir: &Path) -> Result<()> {
    for name in MNIST_FILES {
        let raw = dir.join(name);
        if raw.exists() {
            continue;
        }
        let gz = dir.join(format!("{name}.gz"));
        if gz.exists() {
            gunzip_to(&gz, &raw)?;
            continue;
        }
        return Err(Error::data_format(format!(
            "missing dataset file {} (and no {}.gz); set {DATA_ENV} or data_dir",
            raw.display(),
            raw.display(),
        )));
    }
    Ok(())
}

/// The train and test splits as examples with 10-class labels.
pub fn load_mnist(dir: &Path) -> Result<(Vec<Example>, Vec<Example>)> {
    ensure_mnist(dir)?;
    let train = load_idx(
        &dir.join(MNIST_FILES[0]),
        &dir.join(MNIST_FILES[1]),
        10,
    )?;
    let test = load_idx(&dir.join(MNIST_FILES[2]), &dir.join(MNIST_FILES[3]), 10)?;
    Ok((train, test))
}

/// Immutable source data shared by every cell of a grid.
pub enum BaseData {
    Mnist {
        train: Vec<Example>,
        test: Vec<Example>,
    },
    Synthetic,
}

impl BaseData {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        match cfg.dataset {
            DatasetKind::Synthetic => Ok(BaseData::Synthetic),
            DatasetKind::MnistSplit | DatasetKind::MnistPerm => {
                let dir = resolve_data_dir(cfg.data_dir.as_deref());
                let (train, test) = load_mnist(&dir)?;
                Ok(BaseData::Mnist { train, test })
            }
        }
    }
}

/// One seed's stream plus per-task test sets.
pub struct Benchmark {
    pub stream: TaskStream,
    pub eval_sets: Vec<Vec<Example>>,
}

pub fn build_benchmark(cfg: &RunConfig, base: &BaseData, seed: u64) -> Result<Benchmark> {
    let n_tasks = cfg.n_tasks();
    match (cfg.dataset, base) {
        (DatasetKind::MnistSplit, BaseData::Mnist { train, test }) => Ok(Benchmark {
            stream: make_split_tasks(train, n_tasks, cfg.per_task, 10, seed)?,
            eval_sets: split_eval_sets(test, n_tasks, 10, cfg.eval_cap)?,
        }),
        (DatasetKind::MnistPerm, BaseData::Mnist { train, test }) => Ok(Benchmark {
            stream: make_permuted_tasks(train, n_tasks, cfg.per_task, seed)?,
            eval_sets: permuted_eval_sets(test, n_tasks, cfg.eval_cap, seed)?,
        }),
        (DatasetKind::Synthetic, _) => {
            let (stream, eval_sets) = synthetic_stream(&SyntheticSpec {
                dims: cfg.dims,
                n_classes: cfg.num_classes(),
                n_tasks,
                per_task: cfg.per_task,
                test_per_task: cfg.test_per_task,
                noise: cfg.noise,
                seed,
            })?;
            Ok(Benchmark { stream, eval_sets })
        }
        _ => Err(Error::invalid_config(
            "dataset kind does not match loaded base data",
        )),
    }
}

/// A benchmark carved out of training data only, for hyperparameter
/// selection: the stream uses one seed, the evaluation sets come from the
/// tail of the training split so the real test data stays untouched.
pub fn build_validation_benchmark(cfg: &RunConfig, base: &BaseData) -> Result<Benchmark> {
    const VALIDATION_SEED: u64 = 0x5EED_CAFE;
    match base {
        BaseData::Synthetic => build_benchmark(cfg, base, VALIDATION_SEED),
        BaseData::Mnist { train, .. } => {
            let holdout = 10_000.min(train.len() / 6);
            let (stream_pool, eval_pool) = train.split_at(train.len() - holdout);
            let n_tasks = cfg.n_tasks();
            let eval_cap = cfg.eval_cap.min(500);
            match cfg.dataset {
                DatasetKind::MnistSplit => Ok(Benchmark {
                    stream: make_split_tasks(
                        stream_pool,
                        n_tasks,
                        cfg.per_task,
                        10,
                        VALIDATION_SEED,
                    )?,
                    eval_sets: split_eval_sets(eval_pool, n_tasks, 10, eval_cap)?,
                }),
                DatasetKind::MnistPerm => Ok(Benchmark {
                    stream: make_permuted_tasks(
                        stream_pool,
                        n_tasks,
                        cfg.per_task,
                        VALIDATION_SEED,
                    )?,
                    eval_sets: permuted_eval_sets(
                        eval_pool,
                        n_tasks,
                        eval_cap,
                        VALIDATION_SEED,
                    )?,
                }),
                DatasetKind::Synthetic => unreachable!("handled above"),
            }
        }
    }
}
