//! Python bindings: the classifier, the gradient combiners, the episodic
//! memory and a synthetic end-to-end run, exposed as `rehearsal_rs`.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rehearsal_core::harness::{run_gradcheck, DatasetKind, RunConfig};
use rehearsal_core::strategy::{run_stream, RunSpec};
use rehearsal_core::stream::{synthetic_stream, SyntheticSpec};
use rehearsal_core::{
    average_accuracy, forgetting, Buffer, CombinerConfig, Error, Example, MlpModel, ParamVector,
    StoragePolicy,
};

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_policy(name: &str) -> PyResult<StoragePolicy> {
    match name {
        "reservoir" => Ok(StoragePolicy::Reservoir),
        "crs_s1" => Ok(StoragePolicy::CrsS1),
        "crs_s2" => Ok(StoragePolicy::CrsS2),
        _ => Err(PyValueError::new_err(format!(
            "unknown policy '{name}' (expected reservoir, crs_s1, crs_s2)"
        ))),
    }
}

/// Dense ReLU classifier with softmax outputs.
#[pyclass]
struct Mlp {
    inner: MlpModel,
}

#[pymethods]
impl Mlp {
    /// `layer_sizes` is `[input_dim, hidden..., num_classes]`; weights are
    /// Xavier-uniform from the seed, biases zero.
    #[new]
    #[pyo3(signature = (layer_sizes, seed = 0))]
    fn new(layer_sizes: Vec<usize>, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: MlpModel::new(&layer_sizes, &mut rng).map_err(to_py_err)?,
        })
    }

    /// All-zero parameters (uniform predictions).
    #[staticmethod]
    fn zeroed(layer_sizes: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: MlpModel::zeroed(&layer_sizes).map_err(to_py_err)?,
        })
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Class probabilities for one feature vector.
    fn forward(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&features).map_err(to_py_err)
    }

    /// True-class probability minus the best wrong-class probability.
    fn margin(&self, features: Vec<f64>, label: usize) -> PyResult<f64> {
        self.inner
            .margin(&Example::new(0, features, label))
            .map_err(to_py_err)
    }

    /// Mean cross-entropy loss and its flattened gradient over a batch of
    /// `(features, label)` pairs.
    fn loss_and_grad(&self, batch: Vec<(Vec<f64>, usize)>) -> PyResult<(f64, Vec<f64>)> {
        let examples: Vec<Example> = batch
            .into_iter()
            .enumerate()
            .map(|(i, (features, label))| Example::new(i as u64, features, label))
            .collect();
        let (loss, grad) = self.inner.loss_and_grad(&examples).map_err(to_py_err)?;
        Ok((loss, grad.into_vec()))
    }

    /// New model with `params - lr * direction`; `self` is unchanged.
    fn apply_step(&self, direction: Vec<f64>, lr: f64) -> PyResult<Mlp> {
        Ok(Mlp {
            inner: self
                .inner
                .apply_step(&ParamVector::new(direction), lr)
                .map_err(to_py_err)?,
        })
    }

    fn flatten(&self) -> Vec<f64> {
        self.inner.flatten().into_vec()
    }
}

/// Fixed-capacity episodic memory with reservoir admission.
#[pyclass]
struct Memory {
    inner: Buffer,
    rng: ChaCha8Rng,
}

#[pymethods]
impl Memory {
    #[new]
    #[pyo3(signature = (mem_sz, policy = "reservoir", c = 1.0, seed = 0))]
    fn new(mem_sz: usize, policy: &str, c: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: Buffer::new(mem_sz, parse_policy(policy)?, c).map_err(to_py_err)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Offer an example; returns the replaced slot index, or None when the
    /// example was appended or discarded.
    #[pyo3(signature = (features, label, mi = 0.0))]
    fn offer(&mut self, features: Vec<f64>, label: usize, mi: f64) -> Option<usize> {
        let id = self.inner.seen() as u64;
        self.inner
            .offer(Example::new(id, features, label), mi, &mut self.rng)
            .replaced_index()
    }

    /// Uniform replay batch of `(features, label)` pairs (bookkeeping
    /// counts the selection).
    fn sample(&mut self, k: usize) -> Vec<(Vec<f64>, usize)> {
        let indices = self.inner.sample_batch(k, &mut self.rng);
        indices
            .into_iter()
            .map(|i| {
                let ex = &self.inner.slots()[i].example;
                (ex.features.clone(), ex.label)
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn seen(&self) -> usize {
        self.inner.seen()
    }

    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    /// JSON array of `{id, insert_step, n, mi}` per slot.
    fn snapshot_json(&self) -> PyResult<String> {
        self.inner.snapshot_json().map_err(to_py_err)
    }
}

/// Experience-replay direction: elementwise `g + g_ref`.
#[pyfunction]
fn er_combine(g: Vec<f64>, g_ref: Vec<f64>) -> PyResult<Vec<f64>> {
    rehearsal_core::er_combine(&ParamVector::new(g), &ParamVector::new(g_ref))
        .map(ParamVector::into_vec)
        .map_err(to_py_err)
}

/// Gradient of the sigmoid-weighted cosine-alignment objective at `w`.
#[pyfunction]
#[pyo3(signature = (w, grads, epsilon = 1e-8))]
fn pgd_grad(w: Vec<f64>, grads: Vec<Vec<f64>>, epsilon: f64) -> PyResult<Vec<f64>> {
    let w = ParamVector::new(w);
    let grads: Vec<ParamVector> = grads.into_iter().map(ParamVector::new).collect();
    let refs: Vec<&ParamVector> = grads.iter().collect();
    rehearsal_core::pgd_grad(&w, &refs, epsilon)
        .map(ParamVector::into_vec)
        .map_err(to_py_err)
}

/// One-step (or iterated) proximal-gradient combination of the incoming
/// gradient with the replayed gradients.
#[pyfunction]
#[pyo3(signature = (g, grads, lam = 0.1, epsilon = 1e-8, steps = 1, groups = None))]
fn pgd_combine(
    g: Vec<f64>,
    grads: Vec<Vec<f64>>,
    lam: f64,
    epsilon: f64,
    steps: usize,
    groups: Option<usize>,
) -> PyResult<Vec<f64>> {
    let cfg = CombinerConfig {
        lambda: lam,
        epsilon,
        steps,
        groups,
        alpha_beta: None,
    };
    let g = ParamVector::new(g);
    let grads: Vec<ParamVector> = grads.into_iter().map(ParamVector::new).collect();
    rehearsal_core::pgd_combine(&g, &grads, &cfg)
        .map(ParamVector::into_vec)
        .map_err(to_py_err)
}

/// Finite-difference check of both gradient paths; returns
/// `(passed, backprop_max_rel_err, alignment_max_rel_err)`.
#[pyfunction]
#[pyo3(signature = (tol = 1e-5, seed = 42))]
fn gradcheck(tol: f64, seed: u64) -> PyResult<(bool, f64, f64)> {
    let report = run_gradcheck(tol, tol / 10.0, seed).map_err(to_py_err)?;
    Ok((
        report.passed,
        report.backprop_max_rel_err,
        report.alignment_max_rel_err,
    ))
}

/// Train one strategy over a synthetic task stream and return
/// `(accuracy_matrix_rows, average_accuracy, forgetting)`.
#[pyfunction]
#[pyo3(signature = (strategy = "er", seed = 0, n_tasks = 2, per_task = 150, dims = 12,
                    n_classes = 4, noise = 0.25, mem_sz = 50, replay_k = 5,
                    lr = 0.1, lam = 0.3, epsilon = 0.05, hidden = vec![16]))]
#[allow(clippy::too_many_arguments)]
fn run_synthetic(
    strategy: &str,
    seed: u64,
    n_tasks: usize,
    per_task: usize,
    dims: usize,
    n_classes: usize,
    noise: f64,
    mem_sz: usize,
    replay_k: usize,
    lr: f64,
    lam: f64,
    epsilon: f64,
    hidden: Vec<usize>,
) -> PyResult<(Vec<Vec<f64>>, f64, f64)> {
    let (stream, eval_sets) = synthetic_stream(&SyntheticSpec {
        dims,
        n_classes,
        n_tasks,
        per_task,
        test_per_task: per_task.min(200),
        noise,
        seed,
    })
    .map_err(to_py_err)?;

    let run_cfg = RunConfig {
        dataset: DatasetKind::Synthetic,
        replay_k,
        mir_candidates: replay_k.max(25),
        lr,
        epsilon,
        ..RunConfig::default()
    };
    let strategy_cfg = run_cfg.strategy(strategy, lam).map_err(to_py_err)?;
    let spec = RunSpec {
        hidden,
        num_classes: n_classes,
        mem_sz,
        seed,
    };
    let result = run_stream(&stream, &eval_sets, &spec, &strategy_cfg).map_err(to_py_err)?;
    Ok((
        result.accuracy.rows().to_vec(),
        average_accuracy(&result.accuracy),
        forgetting(&result.accuracy),
    ))
}

#[pymodule]
fn rehearsal_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mlp>()?;
    m.add_class::<Memory>()?;
    m.add_function(wrap_pyfunction!(er_combine, m)?)?;
    m.add_function(wrap_pyfunction!(pgd_grad, m)?)?;
    m.add_function(wrap_pyfunction!(pgd_combine, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run_synthetic, m)?)?;
    Ok(())
}
