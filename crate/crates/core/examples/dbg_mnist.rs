use std::time::Instant;

use rehearsal_core::combiner::CombinerConfig;
use rehearsal_core::harness::data::{load_mnist, resolve_data_dir};
use rehearsal_core::harness::run::mean_std;
use rehearsal_core::metrics::{average_accuracy, forgetting};
use rehearsal_core::strategy::{run_stream, RunSpec, StrategyConfig, Training};
use rehearsal_core::stream::{make_split_tasks, split_eval_sets};
use rehearsal_core::Example;

fn main() {
    let t0 = Instant::now();
    let dir = resolve_data_dir(None);
    let (train, test) = load_mnist(&dir).unwrap();
    println!("loaded {} train / {} test in {:?}", train.len(), test.len(), t0.elapsed());

    let seeds: Vec<u64> = vec![0, 1, 2];
    let eval_sets = split_eval_sets(&test, 5, 10, 1000).unwrap();

    let run = |cfg: &StrategyConfig, seed: u64, train: &[Example]| -> (f64, f64) {
        let stream = make_split_tasks(train, 5, 1000, 10, seed).unwrap();
        let spec = RunSpec { hidden: vec![100, 100], num_classes: 10, mem_sz: 500, seed };
        let r = run_stream(&stream, &eval_sets, &spec, cfg).unwrap();
        (100.0 * average_accuracy(&r.accuracy), 100.0 * forgetting(&r.accuracy))
    };

    let er = StrategyConfig::default(); // k=10, lr=0.05, reservoir, uniform
    let t = Instant::now();
    let mut er_acc = vec![];
    let mut er_fgt = vec![];
    for &s in &seeds {
        let (a, f) = run(&er, s, &train);
        er_acc.push(a);
        er_fgt.push(f);
    }
    let (am, asd) = mean_std(&er_acc);
    let (fm, _) = mean_std(&er_fgt);
    println!("er             : acc {am:5.1} ± {asd:4.1}  fgt {fm:5.1}   ({:?}/run)", t.elapsed() / 3);

    for eps in [1e-8, 0.05, 0.1, 0.3] {
        for lambda in [0.1, 0.3, 0.5, 1.0] {
            let cfg = StrategyConfig {
                training: Training::Pgd,
                combiner: CombinerConfig { lambda, epsilon: eps, ..CombinerConfig::default() },
                ..er.clone()
            };
            let t = Instant::now();
            let mut acc = vec![];
            let mut fgt = vec![];
            for &s in &seeds {
                let (a, f) = run(&cfg, s, &train);
                acc.push(a);
                fgt.push(f);
            }
            let (m, s) = mean_std(&acc);
            let (fmean, _) = mean_std(&fgt);
            println!(
                "er-p e{eps:<5} l{lambda:<4}: acc {m:5.1} ± {s:4.1}  fgt {fmean:5.1}   ({:?}/run)",
                t.elapsed() / 3
            );
        }
    }
}
