//! Dataset ingestion and task-stream construction.
//!
//! A [`TaskStream`] is an ordered, single-pass sequence of examples whose
//! task structure is contiguous blocks. The stream deliberately stores no
//! per-item task id: strategy code iterates plain examples, and only the
//! evaluator sees the block boundaries.

use std::io::{Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Example;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Ordered sequence of examples in contiguous task blocks.
#[derive(Debug, Clone)]
pub struct TaskStream {
    items: Vec<Example>,
    /// Exclusive end index of each task block; the last entry equals
    /// `items.len()`.
    boundaries: Vec<usize>,
}

impl TaskStream {
    pub fn new(items: Vec<Example>, boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::invalid_input("a stream needs at least one task"));
        }
        if boundaries.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid_input("task boundaries must be sorted"));
        }
        if *boundaries.last().unwrap() != items.len() {
            return Err(Error::invalid_input(
                "last boundary must equal the stream length",
            ));
        }
        Ok(Self { items, boundaries })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_tasks(&self) -> usize {
        self.boundaries.len()
    }

    /// Examples in stream order; this is all the learner ever sees.
    pub fn examples(&self) -> &[Example] {
        &self.items
    }

    /// Exclusive end index of each task block (evaluator-side knowledge).
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }
}

/// Parse an IDX image/label file pair into examples with features scaled
/// to `[0, 1]`. Labels must lie below `num_classes`.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    num_classes: usize,
) -> Result<Vec<Example>> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;

    let (img_count, rows, cols, pixels) = parse_idx_images(&images, images_path)?;
    let label_bytes = parse_idx_labels(&labels, labels_path)?;

    if img_count != label_bytes.len() {
        return Err(Error::data_format(format!(
            "image count {} != label count {}",
            img_count,
            label_bytes.len()
        )));
    }

    let dim = rows * cols;
    let mut out = Vec::with_capacity(img_count);
    for (i, &label) in label_bytes.iter().enumerate() {
        if (label as usize) >= num_classes {
            return Err(Error::data_format(format!(
                "label {label} at index {i} out of range for {num_classes} classes"
            )));
        }
        let features = pixels[i * dim..(i + 1) * dim]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        out.push(Example::new(i as u64, features, label as usize));
    }
    Ok(out)
}

fn truncated(path: &Path, what: &str) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::UnexpectedEof,
        format!("{}: truncated {what}", path.display()),
    ))
}

fn parse_idx_images<'a>(
    bytes: &'a [u8],
    path: &Path,
) -> Result<(usize, usize, usize, &'a [u8])> {
    if bytes.len() < 16 {
        return Err(truncated(path, "image header"));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::data_format(format!(
            "{}: bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            path.display()
        )));
    }
    let count = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let rows = u32::from_be_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_be_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(truncated(path, "image data"));
    }
    Ok((count, rows, cols, &bytes[16..expected]))
}

fn parse_idx_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < 8 {
        return Err(truncated(path, "label header"));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::data_format(format!(
            "{}: bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            path.display()
        )));
    }
    let count = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + count {
        return Err(truncated(path, "label data"));
    }
    Ok(&bytes[8..8 + count])
}

/// Write examples back out as an IDX image/label pair (features are
/// rescaled to bytes). Mostly useful for fixtures and round-trip checks.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    examples: &[Example],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let dim = rows * cols;
    let mut images = Vec::with_capacity(16 + examples.len() * dim);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(examples.len() as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut labels = Vec::with_capacity(8 + examples.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(examples.len() as u32).to_be_bytes());
    for ex in examples {
        if ex.features.len() != dim {
            return Err(Error::invalid_input(format!(
                "example {} has {} features, expected {rows}x{cols}",
                ex.id,
                ex.features.len()
            )));
        }
        for &v in &ex.features {
            images.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
        labels.push(ex.label as u8);
    }
    std::fs::File::create(images_path)?.write_all(&images)?;
    std::fs::File::create(labels_path)?.write_all(&labels)?;
    Ok(())
}

/// Decompress a gzipped file next to `dst` if `dst` is missing.
pub fn gunzip_to(src: &Path, dst: &Path) -> Result<()> {
    let mut decoder = flate2::read::GzDecoder::new(std::fs::File::open(src)?);
    let mut bytes = Vec::new();
    decoder.read_to_end(&mut bytes)?;
    std::fs::write(dst, bytes)?;
    Ok(())
}

/// Class-split stream: task `k` holds only the classes
/// `[k·C/T, (k+1)·C/T)`, `per_task` examples each, in seeded random order.
/// The label space stays global (single head).
pub fn make_split_tasks(
    data: &[Example],
    n_tasks: usize,
    per_task: usize,
    num_classes: usize,
    seed: u64,
) -> Result<TaskStream> {
    if n_tasks == 0 || num_classes == 0 || num_classes % n_tasks != 0 {
        return Err(Error::invalid_config(format!(
            "{num_classes} classes do not split into {n_tasks} tasks"
        )));
    }
    let classes_per_task = num_classes / n_tasks;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(n_tasks * per_task);
    let mut boundaries = Vec::with_capacity(n_tasks);
    for task in 0..n_tasks {
        let lo = task * classes_per_task;
        let hi = lo + classes_per_task;
        let eligible: Vec<usize> = data
            .iter()
            .enumerate()
            .filter(|(_, ex)| (lo..hi).contains(&ex.label))
            .map(|(i, _)| i)
            .collect();
        if eligible.len() < per_task {
            return Err(Error::invalid_input(format!(
                "task {task} has {} examples for classes {lo}..{hi}, needs {per_task}",
                eligible.len()
            )));
        }
        let mut picked = rand::seq::index::sample(&mut rng, eligible.len(), per_task).into_vec();
        picked.shuffle(&mut rng);
        for p in picked {
            let src = &data[eligible[p]];
            items.push(Example::new(items.len() as u64, src.features.clone(), src.label));
        }
        boundaries.push(items.len());
    }
    TaskStream::new(items, boundaries)
}

/// Per-task test sets for a class-split benchmark: the test data filtered
/// to each task's classes, capped at `cap` examples in file order.
pub fn split_eval_sets(
    test_data: &[Example],
    n_tasks: usize,
    num_classes: usize,
    cap: usize,
) -> Result<Vec<Vec<Example>>> {
    if n_tasks == 0 || num_classes % n_tasks != 0 {
        return Err(Error::invalid_config(format!(
            "{num_classes} classes do not split into {n_tasks} tasks"
        )));
    }
    let classes_per_task = num_classes / n_tasks;
    let mut sets = Vec::with_capacity(n_tasks);
    for task in 0..n_tasks {
        let lo = task * classes_per_task;
        let hi = lo + classes_per_task;
        let set: Vec<Example> = test_data
            .iter()
            .filter(|ex| (lo..hi).contains(&ex.label))
            .take(cap)
            .cloned()
            .collect();
        if set.is_empty() {
            return Err(Error::invalid_input(format!(
                "no test examples for task {task} (classes {lo}..{hi})"
            )));
        }
        sets.push(set);
    }
    Ok(sets)
}

/// The per-task pixel permutations of a permuted benchmark: the identity
/// for task 0, then one seeded random permutation per further task.
pub fn task_permutations(dim: usize, n_tasks: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perms = Vec::with_capacity(n_tasks);
    perms.push((0..dim).collect());
    for _ in 1..n_tasks {
        let mut p: Vec<usize> = (0..dim).collect();
        p.shuffle(&mut rng);
        perms.push(p);
    }
    perms
}

fn permute_features(features: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&j| features[j]).collect()
}

/// Permutation stream: task `k` draws `per_task` fresh examples and applies
/// its fixed pixel permutation. All tasks share the label space.
pub fn make_permuted_tasks(
    data: &[Example],
    n_tasks: usize,
    per_task: usize,
    seed: u64,
) -> Result<TaskStream> {
    if data.is_empty() {
        return Err(Error::invalid_input("empty source data"));
    }
    if per_task > data.len() {
        return Err(Error::invalid_input(format!(
            "per_task {per_task} exceeds available {}",
            data.len()
        )));
    }
    let dim = data[0].features.len();
    let perms = task_permutations(dim, n_tasks, seed);
    // Separate RNG stream so the permutations stay shared with the
    // evaluation-set builder below.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut items = Vec::with_capacity(n_tasks * per_task);
    let mut boundaries = Vec::with_capacity(n_tasks);
    for perm in &perms {
        let mut picked = rand::seq::index::sample(&mut rng, data.len(), per_task).into_vec();
        picked.shuffle(&mut rng);
        for p in picked {
            let src = &data[p];
            items.push(Example::new(
                items.len() as u64,
                permute_features(&src.features, perm),
                src.label,
            ));
        }
        boundaries.push(items.len());
    }
    TaskStream::new(items, boundaries)
}

/// Per-task test sets for a permuted benchmark: the first `cap` test
/// examples under each task's permutation (seed must match the stream's).
pub fn permuted_eval_sets(
    test_data: &[Example],
    n_tasks: usize,
    cap: usize,
    seed: u64,
) -> Result<Vec<Vec<Example>>> {
    if test_data.is_empty() {
        return Err(Error::invalid_input("empty test data"));
    }
    let dim = test_data[0].features.len();
    let perms = task_permutations(dim, n_tasks, seed);
    let base: Vec<&Example> = test_data.iter().take(cap).collect();
    Ok(perms
        .iter()
        .map(|perm| {
            base.iter()
                .map(|ex| Example::new(ex.id, permute_features(&ex.features, perm), ex.label))
                .collect()
        })
        .collect())
}

/// Shape of a synthetic Gaussian-cluster benchmark.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub dims: usize,
    pub n_classes: usize,
    pub n_tasks: usize,
    pub per_task: usize,
    pub test_per_task: usize,
    /// Cluster standard deviation; 0 collapses each class to a point.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dims: 16,
            n_classes: 4,
            n_tasks: 2,
            per_task: 250,
            test_per_task: 200,
            noise: 0.15,
            seed: 0,
        }
    }
}

/// Gaussian class clusters whose means are re-drawn for every task, so
/// later tasks overwrite what the label space meant earlier. Returns the
/// stream and one held-out test set per task.
pub fn synthetic_stream(spec: &SyntheticSpec) -> Result<(TaskStream, Vec<Vec<Example>>)> {
    if spec.dims == 0 || spec.n_classes < 2 || spec.n_tasks == 0 {
        return Err(Error::invalid_config(
            "synthetic stream needs dims >= 1, classes >= 2, tasks >= 1",
        ));
    }

    let mut center_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<Vec<f64>>> = (0..spec.n_tasks)
        .map(|_| {
            (0..spec.n_classes)
                .map(|_| {
                    let v: Vec<f64> = (0..spec.dims)
                        .map(|_| center_rng.random_range(-1.0..1.0))
                        .collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        })
        .collect();

    let mut sample_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_rng.set_stream(1);
    let make_example = |task: usize, idx: u64, rng: &mut ChaCha8Rng| {
        let label = rng.random_range(0..spec.n_classes);
        let features = centers[task][label]
            .iter()
            .map(|&c| c + spec.noise * gaussian(rng))
            .collect();
        Example::new(idx, features, label)
    };

    let mut items = Vec::with_capacity(spec.n_tasks * spec.per_task);
    let mut boundaries = Vec::with_capacity(spec.n_tasks);
    for task in 0..spec.n_tasks {
        for _ in 0..spec.per_task {
            let idx = items.len() as u64;
            items.push(make_example(task, idx, &mut sample_rng));
        }
        boundaries.push(items.len());
    }

    let mut test_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    test_rng.set_stream(2);
    let eval_sets: Vec<Vec<Example>> = (0..spec.n_tasks)
        .map(|task| {
            (0..spec.test_per_task)
                .map(|i| make_example(task, i as u64, &mut test_rng))
                .collect()
        })
        .collect();

    Ok((TaskStream::new(items, boundaries)?, eval_sets))
}

/// Standard normal via Box-Muller.
fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(labels: &[usize], dim: usize) -> Vec<Example> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                Example::new(i as u64, (0..dim).map(|d| (i + d) as f64 / 100.0).collect(), l)
            })
            .collect()
    }

    #[test]
    fn idx_fixture_parses_byte_by_byte() {
        // Two 2x2 images built by hand.
        let mut images = vec![];
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&[0, 51, 102, 255, 255, 204, 153, 0]);
        let mut labels = vec![];
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&2u32.to_be_bytes());
        labels.extend_from_slice(&[1, 0]);

        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        std::fs::write(&ip, &images).unwrap();
        std::fs::write(&lp, &labels).unwrap();

        let examples = load_idx(&ip, &lp, 10).unwrap();
        assert_eq!(examples.len(), 2);
        assert_eq!(examples[0].label, 1);
        assert_eq!(examples[0].features, vec![0.0, 0.2, 0.4, 1.0]);
        assert_eq!(examples[1].features[0], 1.0);
        assert_eq!(examples[1].label, 0);
    }

    #[test]
    fn idx_error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");

        // wrong image magic
        let mut bad = vec![];
        bad.extend_from_slice(&0x0000_0802u32.to_be_bytes());
        bad.extend_from_slice(&[0u8; 12]);
        std::fs::write(&ip, &bad).unwrap();
        let mut labels = vec![];
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&0u32.to_be_bytes());
        std::fs::write(&lp, &labels).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp, 10),
            Err(Error::DataFormat(_))
        ));

        // count mismatch
        let mut images = vec![];
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&1u32.to_be_bytes());
        images.extend_from_slice(&1u32.to_be_bytes());
        images.extend_from_slice(&1u32.to_be_bytes());
        images.push(7);
        std::fs::write(&ip, &images).unwrap();
        assert!(matches!(load_idx(&ip, &lp, 10), Err(Error::DataFormat(_))));

        // truncated image payload -> I/O error
        std::fs::write(&ip, &images[..images.len() - 1]).unwrap();
        assert!(matches!(load_idx(&ip, &lp, 10), Err(Error::Io(_))));

        // out-of-range label byte
        std::fs::write(&ip, &images).unwrap();
        let mut labels = vec![];
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&1u32.to_be_bytes());
        labels.push(255);
        std::fs::write(&lp, &labels).unwrap();
        assert!(matches!(load_idx(&ip, &lp, 10), Err(Error::DataFormat(_))));
    }

    #[test]
    fn idx_roundtrip() {
        let examples = vec![
            Example::new(0, vec![0.0, 1.0, 128.0 / 255.0, 37.0 / 255.0], 3),
            Example::new(1, vec![1.0, 1.0, 0.0, 5.0 / 255.0], 9),
        ];
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        write_idx(&ip, &lp, &examples, 2, 2).unwrap();
        let back = load_idx(&ip, &lp, 10).unwrap();
        assert_eq!(back, examples);
    }

    #[test]
    fn split_tasks_partition_classes() {
        let labels: Vec<usize> = (0..400).map(|i| i % 10).collect();
        let data = labelled(&labels, 4);
        let stream = make_split_tasks(&data, 5, 20, 10, 7).unwrap();
        assert_eq!(stream.len(), 100);
        assert_eq!(stream.n_tasks(), 5);
        assert_eq!(stream.boundaries(), &[20, 40, 60, 80, 100]);
        // task 0 holds only labels {0, 1}
        for ex in &stream.examples()[..20] {
            assert!(ex.label < 2);
        }
        for (k, window) in stream.boundaries().windows(2).enumerate() {
            for ex in &stream.examples()[window[0]..window[1]] {
                let task = k + 1;
                assert!(ex.label / 2 == task, "label {} in task {task}", ex.label);
            }
        }
        // ids unique and sequential
        for (i, ex) in stream.examples().iter().enumerate() {
            assert_eq!(ex.id, i as u64);
        }

        // deterministic under the same seed
        let again = make_split_tasks(&data, 5, 20, 10, 7).unwrap();
        assert_eq!(stream.examples(), again.examples());

        // too large per_task
        assert!(make_split_tasks(&data, 5, 1000, 10, 7).is_err());
    }

    #[test]
    fn split_eval_sets_filter_and_cap() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let data = labelled(&labels, 3);
        let sets = split_eval_sets(&data, 5, 10, 4).unwrap();
        assert_eq!(sets.len(), 5);
        for (task, set) in sets.iter().enumerate() {
            assert_eq!(set.len(), 4);
            assert!(set.iter().all(|e| e.label / 2 == task));
        }
    }

    #[test]
    fn permutations_are_bijections_with_identity_first() {
        let perms = task_permutations(50, 4, 3);
        assert_eq!(perms[0], (0..50).collect::<Vec<_>>());
        for p in &perms {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        }
        assert_eq!(perms, task_permutations(50, 4, 3));
        assert_ne!(perms[1], perms[2]);
    }

    #[test]
    fn permuted_stream_and_eval_share_permutations() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let data = labelled(&labels, 8);
        let stream = make_permuted_tasks(&data, 3, 10, 11).unwrap();
        assert_eq!(stream.n_tasks(), 3);
        assert_eq!(stream.len(), 30);
        let again = make_permuted_tasks(&data, 3, 10, 11).unwrap();
        assert_eq!(stream.examples(), again.examples());

        let evals = permuted_eval_sets(&data, 3, 5, 11).unwrap();
        assert_eq!(evals.len(), 3);
        // task 0 is the identity permutation
        assert_eq!(evals[0][0].features, data[0].features);
        // other tasks permute the same underlying example
        let perms = task_permutations(8, 3, 11);
        let expect: Vec<f64> = perms[1].iter().map(|&j| data[0].features[j]).collect();
        assert_eq!(evals[1][0].features, expect);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::default();
        let (s1, e1) = synthetic_stream(&spec).unwrap();
        let (s2, e2) = synthetic_stream(&spec).unwrap();
        assert_eq!(s1.examples(), s2.examples());
        assert_eq!(e1, e2);
        assert_eq!(s1.len(), spec.n_tasks * spec.per_task);
        assert_eq!(e1.len(), spec.n_tasks);

        // zero noise collapses clusters to their centers
        let spec0 = SyntheticSpec {
            noise: 0.0,
            ..SyntheticSpec::default()
        };
        let (s0, _) = synthetic_stream(&spec0).unwrap();
        let first_label = s0.examples()[0].label;
        let same: Vec<&Example> = s0.examples()[..spec0.per_task]
            .iter()
            .filter(|e| e.label == first_label)
            .collect();
        assert!(same.windows(2).all(|w| w[0].features == w[1].features));
    }
}
