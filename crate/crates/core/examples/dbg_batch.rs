use std::time::Instant;

use rehearsal_core::combiner::CombinerConfig;
use rehearsal_core::harness::data::{load_mnist, resolve_data_dir};
use rehearsal_core::harness::run::mean_std;
use rehearsal_core::metrics::{average_accuracy, forgetting};
use rehearsal_core::strategy::{run_stream, RunSpec, StrategyConfig, Training};
use rehearsal_core::stream::{make_split_tasks, split_eval_sets};
use rehearsal_core::StoragePolicy;

fn main() {
    let dir = resolve_data_dir(None);
    let (train, test) = load_mnist(&dir).unwrap();
    let eval_sets = split_eval_sets(&test, 5, 10, 1000).unwrap();
    let seeds: Vec<u64> = vec![0, 1, 2];

    let base = StrategyConfig {
        incoming_batch: 10,
        ..StrategyConfig::default()
    };
    let mut variants: Vec<(String, StrategyConfig)> = vec![
        ("er".into(), base.clone()),
        (
            "er-c s2 c1".into(),
            StrategyConfig {
                storage: StoragePolicy::CrsS2,
                ..base.clone()
            },
        ),
        (
            "er-c s1 c1".into(),
            StrategyConfig {
                storage: StoragePolicy::CrsS1,
                ..base.clone()
            },
        ),
    ];
    for eps in [0.03, 0.1, 0.3] {
        for lambda in [0.05, 0.1, 0.2, 0.3] {
            variants.push((
                format!("er-p l{lambda} e{eps}"),
                StrategyConfig {
                    training: Training::Pgd,
                    combiner: CombinerConfig {
                        lambda,
                        epsilon: eps,
                        ..CombinerConfig::default()
                    },
                    ..base.clone()
                },
            ));
        }
    }

    for (name, cfg) in &variants {
        let t0 = Instant::now();
        let mut accs = vec![];
        let mut fgts = vec![];
        for &seed in &seeds {
            let stream = make_split_tasks(&train, 5, 1000, 10, seed).unwrap();
            let spec = RunSpec {
                hidden: vec![100, 100],
                num_classes: 10,
                mem_sz: 500,
                seed,
            };
            let r = run_stream(&stream, &eval_sets, &spec, cfg).unwrap();
            accs.push(100.0 * average_accuracy(&r.accuracy));
            fgts.push(100.0 * forgetting(&r.accuracy));
        }
        let (am, asd) = mean_std(&accs);
        let (fm, _) = mean_std(&fgts);
        println!(
            "{name:18} acc {am:5.1} ± {asd:4.1}  fgt {fm:5.1}  ({:?}/run)",
            t0.elapsed() / 3
        );
    }
}
