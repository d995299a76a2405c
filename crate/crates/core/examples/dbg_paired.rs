use rehearsal_core::combiner::CombinerConfig;
use rehearsal_core::harness::run::mean_std;
use rehearsal_core::metrics::average_accuracy;
use rehearsal_core::strategy::{run_stream, RunSpec, StrategyConfig, Training};
use rehearsal_core::stream::{synthetic_stream, SyntheticSpec};

fn main() {
    let seeds: Vec<u64> = (0..10).collect();
    let base = StrategyConfig {
        replay_k: 5,
        mir_candidates: 5,
        lr: 0.1,
        ..StrategyConfig::default()
    };
    let mut er_accs = vec![];
    for &seed in &seeds {
        let (stream, evals) = synthetic_stream(&SyntheticSpec {
            dims: 12, n_classes: 4, n_tasks: 2, per_task: 150, test_per_task: 150,
            noise: 0.25, seed,
        }).unwrap();
        let spec = RunSpec { hidden: vec![16], num_classes: 4, mem_sz: 50, seed };
        let r = run_stream(&stream, &evals, &spec, &base).unwrap();
        er_accs.push(100.0 * average_accuracy(&r.accuracy));
    }
    let (em, es) = mean_std(&er_accs);
    println!("er: {em:5.1} ± {es:4.1}");

    for eps in [0.05, 0.1, 0.3, 0.5, 1.0] {
        for lambda in [0.05, 0.1, 0.3, 0.5, 1.0] {
            let cfg = StrategyConfig {
                training: Training::Pgd,
                combiner: CombinerConfig { lambda, epsilon: eps, ..CombinerConfig::default() },
                ..base.clone()
            };
            let mut accs = vec![];
            let mut wins = 0;
            for (i, &seed) in seeds.iter().enumerate() {
                let (stream, evals) = synthetic_stream(&SyntheticSpec {
                    dims: 12, n_classes: 4, n_tasks: 2, per_task: 150, test_per_task: 150,
                    noise: 0.25, seed,
                }).unwrap();
                let spec = RunSpec { hidden: vec![16], num_classes: 4, mem_sz: 50, seed };
                let r = run_stream(&stream, &evals, &spec, &cfg).unwrap();
                let a = 100.0 * average_accuracy(&r.accuracy);
                if a >= er_accs[i] { wins += 1; }
                accs.push(a);
            }
            let (m, s) = mean_std(&accs);
            println!("eps {eps:4} lambda {lambda:4}: {m:5.1} ± {s:4.1}  wins {wins}/10");
        }
    }
}
