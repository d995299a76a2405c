//! Online training strategies over a single-pass stream.
//!
//! One [`train_step`] per incoming batch: compute the incoming gradient,
//! retrieve a replay batch, merge the two into an update direction (plain
//! replay sum or the alignment-based one-step solver), apply it, refresh
//! margin bookkeeping, then offer the incoming examples to the memory
//! buffer. Strategy code never sees task identities; the evaluator alone
//! knows the block boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{Buffer, StoragePolicy};
use crate::combiner::{er_combine, pgd_combine, CombinerConfig};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, AccuracyMatrix};
use crate::nn::{Example, MlpModel, ParamVector};
use crate::stream::TaskStream;

/// How the incoming and replayed gradients merge into a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Training {
    /// `w = g + g_ref` with `g_ref` the mean replay-batch gradient.
    Er,
    /// One-step proximal-gradient solution on the alignment objective.
    Pgd,
}

/// How the replay batch is chosen from the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retrieval {
    Uniform,
    /// Maximally-interfered retrieval: pick the candidates whose loss grows
    /// most under a virtual step on the incoming gradient.
    Mir,
}

/// Everything one training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub training: Training,
    pub storage: StoragePolicy,
    pub retrieval: Retrieval,
    /// Incoming examples consumed per step (1 = strict online).
    pub incoming_batch: usize,
    /// Replay batch size K.
    pub replay_k: usize,
    /// Uniformly pre-sampled candidate pool size for MIR (>= K).
    pub mir_candidates: usize,
    pub lr: f64,
    pub combiner: CombinerConfig,
    /// Weight of the margin increment in the buffer score.
    pub crs_weight: f64,
    /// Keep per-step direction vectors in the records (test instrumentation;
    /// costs memory proportional to steps × parameters).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub capture_directions: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            training: Training::Er,
            storage: StoragePolicy::Reservoir,
            retrieval: Retrieval::Uniform,
            incoming_batch: 1,
            replay_k: 10,
            mir_candidates: 25,
            lr: 0.05,
            combiner: CombinerConfig::default(),
            crs_weight: 1.0,
            capture_directions: false,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.incoming_batch == 0 {
            return Err(Error::invalid_config("incoming_batch must be >= 1"));
        }
        if self.replay_k == 0 {
            return Err(Error::invalid_config("replay_k must be >= 1"));
        }
        if self.mir_candidates < self.replay_k {
            return Err(Error::invalid_config(
                "mir_candidates must be >= replay_k",
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid_config("lr must be > 0"));
        }
        self.combiner.validate()
    }

    /// Margin bookkeeping feeds the scored policies only.
    fn tracks_margins(&self) -> bool {
        self.storage != StoragePolicy::Reservoir
    }
}

/// Direction vectors captured for equivalence checks.
#[derive(Debug, Clone)]
pub struct DirectionCapture {
    pub g: ParamVector,
    /// Mean replay gradient; present only on the `Er` path with replay.
    pub g_ref: Option<ParamVector>,
    pub w: ParamVector,
}

/// Diagnostics for one training step (one incoming batch).
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    /// Stream position of the first incoming example.
    pub step: usize,
    pub example_ids: Vec<u64>,
    /// Cross-entropy loss of the incoming batch before the update.
    pub loss: f64,
    pub g_norm: f64,
    pub w_norm: f64,
    /// Per offered example: the buffer slot it overwrote, if any.
    pub replaced: Vec<Option<usize>>,
    #[serde(skip)]
    pub capture: Option<DirectionCapture>,
}

/// One online step: train on the incoming `batch` with replay from `buf`,
/// then offer each incoming example to the buffer. Returns the updated
/// model (the input model is untouched).
pub fn train_step<R: Rng + ?Sized>(
    model: &MlpModel,
    buf: &mut Buffer,
    batch: &[Example],
    cfg: &StrategyConfig,
    rng: &mut R,
) -> Result<(MlpModel, StepRecord)> {
    if batch.is_empty() {
        return Err(Error::invalid_input("train_step: empty incoming batch"));
    }
    let step = buf.seen();
    let (loss, g) = model.loss_and_grad(batch)?;

    // Retrieval. MIR candidacy alone does not count as exploitation; only
    // the actually replayed slots get their selection count bumped.
    let replay_idx: Vec<usize> = if buf.is_empty() {
        Vec::new()
    } else {
        match cfg.retrieval {
            Retrieval::Uniform => buf.sample_batch(cfg.replay_k, rng),
            Retrieval::Mir => {
                let candidates = buf.sample_indices(cfg.mir_candidates, rng);
                let chosen: Vec<usize> = if candidates.len() <= cfg.replay_k {
                    candidates
                } else {
                    let examples: Vec<&Example> = candidates
                        .iter()
                        .map(|&i| &buf.slots()[i].example)
                        .collect();
                    mir_select(model, &g, &examples, cfg.replay_k, cfg.lr)?
                        .into_iter()
                        .map(|pos| candidates[pos])
                        .collect()
                };
                buf.mark_replayed(&chosen);
                chosen
            }
        }
    };

    let replayed: Vec<Example> = replay_idx
        .iter()
        .map(|&i| buf.slots()[i].example.clone())
        .collect();

    let (w, g_ref) = if replayed.is_empty() {
        (g.clone(), None)
    } else {
        match cfg.training {
            Training::Er => {
                let (_, g_ref) = model.loss_and_grad(&replayed)?;
                (er_combine(&g, &g_ref)?, Some(g_ref))
            }
            Training::Pgd => {
                let grads = model.per_example_grads(&replayed)?;
                (pgd_combine(&g, &grads, &cfg.combiner)?, None)
            }
        }
    };

    // Margins straddling the update drive the margin-increment scores of
    // the confidence policies; the plain reservoir never reads them.
    let track = cfg.tracks_margins();
    let mut m_before_batch = Vec::new();
    let mut m_before_replay = Vec::new();
    if track {
        for ex in batch {
            m_before_batch.push(model.margin(ex)?);
        }
        for r in &replayed {
            m_before_replay.push(model.margin(r)?);
        }
    }

    let updated = model.apply_step(&w, cfg.lr)?;

    if track {
        for (pos, &slot_idx) in replay_idx.iter().enumerate() {
            let m_after = updated.margin(&buf.slots()[slot_idx].example)?;
            buf.slot_mut(slot_idx)
                .update_mi(m_before_replay[pos], m_after)?;
        }
    }

    let mut replaced = Vec::with_capacity(batch.len());
    for (pos, ex) in batch.iter().enumerate() {
        let mi = if track {
            updated.margin(ex)? - m_before_batch[pos]
        } else {
            0.0
        };
        replaced.push(buf.offer(ex.clone(), mi, rng).replaced_index());
    }

    let capture = cfg.capture_directions.then(|| DirectionCapture {
        g: g.clone(),
        g_ref,
        w: w.clone(),
    });
    let record = StepRecord {
        step,
        example_ids: batch.iter().map(|ex| ex.id).collect(),
        loss,
        g_norm: g.l2_norm(),
        w_norm: w.l2_norm(),
        replaced,
        capture,
    };
    Ok((updated, record))
}

/// Rank `candidates` by interference — loss increase under a virtual step
/// along `g` — and return the positions of the `k` most interfered. The
/// model is not mutated. Fewer candidates than `k` come back unranked.
pub fn mir_select(
    model: &MlpModel,
    g: &ParamVector,
    candidates: &[&Example],
    k: usize,
    lr: f64,
) -> Result<Vec<usize>> {
    if candidates.len() <= k {
        return Ok((0..candidates.len()).collect());
    }
    let virtual_model = model.apply_step(g, lr)?;
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(candidates.len());
    for (pos, ex) in candidates.iter().enumerate() {
        let before = model.loss(std::slice::from_ref(*ex))?;
        let after = virtual_model.loss(std::slice::from_ref(*ex))?;
        scored.push((pos, after - before));
    }
    // stable: equal interference keeps candidate order
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(scored.into_iter().take(k).map(|(pos, _)| pos).collect())
}

/// Architecture and run parameters that sit outside the strategy itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    /// Hidden layer widths; input and output dims come from the data.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub mem_sz: usize,
    pub seed: u64,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub accuracy: AccuracyMatrix,
    pub steps: Vec<StepRecord>,
    pub model: MlpModel,
}

/// Train once over the stream (strictly single-pass), evaluating every
/// task's test set on the untrained model and after each task block.
/// Incoming batches never straddle a task boundary.
pub fn run_stream(
    stream: &TaskStream,
    eval_sets: &[Vec<Example>],
    spec: &RunSpec,
    cfg: &StrategyConfig,
) -> Result<RunResult> {
    cfg.validate()?;
    if eval_sets.len() != stream.n_tasks() {
        return Err(Error::invalid_input(format!(
            "{} eval sets for {} tasks",
            eval_sets.len(),
            stream.n_tasks()
        )));
    }
    let input_dim = stream
        .examples()
        .first()
        .map(|ex| ex.features.len())
        .or_else(|| eval_sets.iter().flatten().next().map(|ex| ex.features.len()))
        .ok_or_else(|| Error::invalid_input("no examples to size the model"))?;

    let mut arch = Vec::with_capacity(spec.hidden.len() + 2);
    arch.push(input_dim);
    arch.extend_from_slice(&spec.hidden);
    arch.push(spec.num_classes);

    let mut init_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    init_rng.set_stream(10);
    let mut model = MlpModel::new(&arch, &mut init_rng)?;

    let mut loop_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    loop_rng.set_stream(11);

    let mut buf = Buffer::new(spec.mem_sz, cfg.storage, cfg.crs_weight)?;

    let eval_row = |model: &MlpModel| -> Result<Vec<f64>> {
        eval_sets.iter().map(|set| accuracy(model, set)).collect()
    };

    let mut matrix = AccuracyMatrix::new(stream.n_tasks());
    matrix.push_row(eval_row(&model)?);

    let boundaries = stream.boundaries();
    let mut next_boundary = 0usize;
    while next_boundary < boundaries.len() && boundaries[next_boundary] == 0 {
        next_boundary += 1; // an empty stream keeps only the initial row
    }

    let mut steps = Vec::new();
    let mut t = 0usize;
    while t < stream.len() {
        let block_end = boundaries[next_boundary];
        let end = (t + cfg.incoming_batch).min(block_end);
        let (next_model, record) =
            train_step(&model, &mut buf, &stream.examples()[t..end], cfg, &mut loop_rng)?;
        model = next_model;
        steps.push(record);
        t = end;
        while next_boundary < boundaries.len() && boundaries[next_boundary] == t {
            matrix.push_row(eval_row(&model)?);
            next_boundary += 1;
        }
    }

    Ok(RunResult {
        accuracy: matrix,
        steps,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::average_accuracy;
    use crate::stream::{synthetic_stream, SyntheticSpec};

    fn small_cfg() -> StrategyConfig {
        StrategyConfig {
            replay_k: 5,
            mir_candidates: 8,
            lr: 0.1,
            ..StrategyConfig::default()
        }
    }

    fn tiny_example(id: u64, label: usize) -> Example {
        Example::new(id, vec![0.2 * id as f64, 1.0 - 0.1 * id as f64], label)
    }

    #[test]
    fn empty_buffer_step_is_plain_sgd() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = MlpModel::new(&[2, 4, 3], &mut rng).unwrap();
        let mut buf = Buffer::new(10, StoragePolicy::Reservoir, 1.0).unwrap();
        let ex = tiny_example(0, 1);
        let cfg = small_cfg();

        let (_, g) = model.loss_and_grad(std::slice::from_ref(&ex)).unwrap();
        let expected = model.apply_step(&g, cfg.lr).unwrap();

        let (updated, record) =
            train_step(&model, &mut buf, std::slice::from_ref(&ex), &cfg, &mut rng).unwrap();
        assert_eq!(updated.flatten(), expected.flatten());
        assert_eq!(buf.len(), 1);
        assert_eq!(record.step, 0);
        assert_eq!(record.replaced, vec![None]);
        assert_eq!(record.example_ids, vec![0]);
    }

    #[test]
    fn er_direction_is_exactly_g_plus_gref() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = MlpModel::new(&[2, 4, 3], &mut rng).unwrap();
        let mut buf = Buffer::new(10, StoragePolicy::Reservoir, 1.0).unwrap();
        let cfg = StrategyConfig {
            capture_directions: true,
            ..small_cfg()
        };
        let mut current = model;
        for i in 0..20 {
            let ex = tiny_example(i, (i % 3) as usize);
            let (next, record) =
                train_step(&current, &mut buf, std::slice::from_ref(&ex), &cfg, &mut rng)
                    .unwrap();
            let cap = record.capture.unwrap();
            match cap.g_ref {
                Some(g_ref) => {
                    assert_eq!(cap.w, er_combine(&cap.g, &g_ref).unwrap());
                }
                None => assert_eq!(cap.w, cap.g), // warm-up step with empty buffer
            }
            current = next;
        }
    }

    #[test]
    fn mir_select_identity_and_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = MlpModel::new(&[2, 4, 2], &mut rng).unwrap();
        let g = model
            .loss_and_grad(&[tiny_example(0, 0)])
            .unwrap()
            .1;

        // K >= candidates: identity
        let a = tiny_example(1, 0);
        let b = tiny_example(2, 1);
        let sel = mir_select(&model, &g, &[&a, &b], 2, 0.1).unwrap();
        assert_eq!(sel, vec![0, 1]);

        // all candidates identical: scores tie, stable order, any K valid
        let sel = mir_select(&model, &g, &[&a, &a, &a], 2, 0.1).unwrap();
        assert_eq!(sel, vec![0, 1]);
    }

    #[test]
    fn mir_ranks_aligned_candidate_last() {
        // Incoming example and an identical candidate: the virtual step
        // lowers that candidate's loss, so it must rank below a candidate
        // with the same features and the opposite label.
        let model = MlpModel::zeroed(&[2, 2]).unwrap();
        let incoming = Example::new(0, vec![1.0, 0.5], 0);
        let (_, g) = model.loss_and_grad(std::slice::from_ref(&incoming)).unwrap();

        let aligned = Example::new(1, vec![1.0, 0.5], 0);
        let opposed = Example::new(2, vec![1.0, 0.5], 1);
        let sel = mir_select(&model, &g, &[&aligned, &opposed], 1, 0.5).unwrap();
        assert_eq!(sel, vec![1], "most interfered candidate wins");

        // model untouched by the virtual step
        assert_eq!(model.flatten(), MlpModel::zeroed(&[2, 2]).unwrap().flatten());
    }

    #[test]
    fn run_stream_is_deterministic_and_single_pass() {
        let (stream, evals) = synthetic_stream(&SyntheticSpec {
            per_task: 40,
            test_per_task: 30,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let spec = RunSpec {
            hidden: vec![8],
            num_classes: 4,
            mem_sz: 20,
            seed: 3,
        };
        let cfg = small_cfg();
        let r1 = run_stream(&stream, &evals, &spec, &cfg).unwrap();
        let r2 = run_stream(&stream, &evals, &spec, &cfg).unwrap();
        assert_eq!(r1.accuracy, r2.accuracy);
        assert_eq!(r1.model.flatten(), r2.model.flatten());

        // single pass: every stream id trained exactly once, in order
        let ids: Vec<u64> = r1
            .steps
            .iter()
            .flat_map(|s| s.example_ids.clone())
            .collect();
        let expect: Vec<u64> = stream.examples().iter().map(|e| e.id).collect();
        assert_eq!(ids, expect);

        // 2 tasks -> initial row + one row per block
        assert_eq!(r1.accuracy.rows().len(), 3);
    }

    #[test]
    fn incoming_batches_respect_task_boundaries() {
        let (stream, evals) = synthetic_stream(&SyntheticSpec {
            per_task: 25, // not a multiple of the batch size
            test_per_task: 30,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let spec = RunSpec {
            hidden: vec![8],
            num_classes: 4,
            mem_sz: 20,
            seed: 3,
        };
        let cfg = StrategyConfig {
            incoming_batch: 10,
            ..small_cfg()
        };
        let r = run_stream(&stream, &evals, &spec, &cfg).unwrap();
        // 25 = 10 + 10 + 5 per task
        assert_eq!(r.steps.len(), 6);
        assert_eq!(r.steps[2].example_ids.len(), 5);
        let ids: Vec<u64> = r.steps.iter().flat_map(|s| s.example_ids.clone()).collect();
        assert_eq!(ids, (0..50).collect::<Vec<u64>>());
        assert_eq!(r.accuracy.rows().len(), 3);
    }

    #[test]
    fn run_stream_empty_has_only_initial_row() {
        let stream = TaskStream::new(vec![], vec![0]).unwrap();
        let evals = vec![vec![tiny_example(0, 0), tiny_example(1, 1)]];
        let spec = RunSpec {
            hidden: vec![4],
            num_classes: 3,
            mem_sz: 5,
            seed: 0,
        };
        let r = run_stream(&stream, &evals, &spec, &small_cfg()).unwrap();
        assert_eq!(r.accuracy.rows().len(), 1);
        assert!(r.steps.is_empty());
    }

    #[test]
    fn paired_seeds_favor_alignment_over_plain_replay() {
        // Two-task synthetic drift: the alignment-based update should win
        // on average accuracy in most paired seeds.
        let mut wins = 0;
        let seeds = 10;
        for seed in 0..seeds {
            let (stream, evals) = synthetic_stream(&SyntheticSpec {
                dims: 12,
                n_classes: 4,
                n_tasks: 2,
                per_task: 150,
                test_per_task: 150,
                noise: 0.25,
                seed,
            })
            .unwrap();
            let spec = RunSpec {
                hidden: vec![16],
                num_classes: 4,
                mem_sz: 50,
                seed,
            };
            let er = StrategyConfig {
                replay_k: 5,
                mir_candidates: 5,
                lr: 0.1,
                ..StrategyConfig::default()
            };
            let pgd = StrategyConfig {
                training: Training::Pgd,
                storage: StoragePolicy::CrsS2,
                combiner: CombinerConfig {
                    lambda: 0.3,
                    epsilon: 0.05,
                    ..CombinerConfig::default()
                },
                ..er.clone()
            };
            let acc_er = average_accuracy(&run_stream(&stream, &evals, &spec, &er).unwrap().accuracy);
            let acc_pgd =
                average_accuracy(&run_stream(&stream, &evals, &spec, &pgd).unwrap().accuracy);
            if acc_pgd >= acc_er {
                wins += 1;
            }
        }
        assert!(wins >= 7, "alignment update won only {wins}/{seeds} paired seeds");
    }
}
