use elt::data::{DataSourceSpec, ExactConditionalOracle, MarkovGridSource, SyntheticSource};
use elt::evalbench::{elasticity_curve, tv_distance};
use elt::expcfg::{run_training, ExperimentConfig, TrainSection, CONFIG_VERSION};
use elt::masked::{generate, GenerateOptions};
use elt::model::{LoopConfig, LoopedModel};
use elt::rng::rng_from_seed;
use elt::train::{DistillSpace, OptimizerConfig};
use std::time::Instant;

fn config(seed: u64, ilsd: bool, steps: usize, lr: f64, batch: usize, peak: f64, seq: usize, mlp: usize) -> ExperimentConfig {
    ExperimentConfig {
        version: CONFIG_VERSION.to_string(),
        model: LoopConfig::masked(2, 32, 4, mlp, 1, 4, seq, 4, 2),
        optimizer: OptimizerConfig {
            lr,
            warmup_steps: 200,
            ..OptimizerConfig::masked_default()
        },
        train: TrainSection {
            total_steps: steps,
            batch_size: batch,
            label_drop: 0.1,
            distill_space: DistillSpace::HeadOutput,
            ckpt_every: None,
        },
        data: DataSourceSpec::MarkovGrid { shape: vec![seq], vocab: 4, n_classes: 2, peak },
        seed,
        ilsd_enabled: ilsd,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let batch: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(32);
    let peak: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.97);
    let n_seeds: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1);
    let seq: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(4);
    let mlp: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(128);
    let seed0: u64 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0);
    println!("steps={steps} lr={lr} batch={batch} peak={peak} seq={seq} mlp={mlp}");

    let src = MarkovGridSource::cyclic_peaked(vec![seq], 4, 2, peak).unwrap();

    // Oracle TV first (enumeration stays cheap only for short grids).
    if seq <= 6 {
        let oracle = ExactConditionalOracle { source: &src };
        let opts = GenerateOptions { shape: vec![seq], steps: 4, loops: 1, cfg_scale: 1.0, temp_bias: 1.0, temp_scale: 0.0 };
        let mut rng = rng_from_seed(77);
        let t0 = Instant::now();
        let grids: Vec<_> = (0..20000).map(|_| generate(&oracle, 4, Some(0), &opts, &mut rng).unwrap().0).collect();
        let tv = tv_distance(&grids, &src, Some(0)).unwrap();
        println!("oracle decode TV (class 0, 20k): {tv:.4}  [{:.1}s]", t0.elapsed().as_secs_f64());
    }

    let spec = DataSourceSpec::MarkovGrid { shape: vec![seq], vocab: 4, n_classes: 2, peak };
    let eval = spec.assemble_batch(512, 0.0, 999).unwrap();

    // Bayes floor: cross-entropy of the exact conditionals on the eval set.
    if seq <= 6 { if let elt::train::Batch::Masked(examples) = &eval {
        let mut total = 0.0;
        for ex in examples {
            let grid = elt::masked::TokenGrid::new(vec![2, 2], ex.tokens.clone(), 4).unwrap();
            let cond = src.conditionals(&grid, ex.class_id).unwrap();
            let mut ce = 0.0;
            let mut n = 0;
            for (i, m) in ex.mask.iter().enumerate() {
                if *m {
                    ce += -(cond.row(i)[ex.targets[i]].max(1e-300)).ln();
                    n += 1;
                }
            }
            total += ce / n as f64;
        }
        println!("Bayes-floor CE on eval: {:.4}", total / examples.len() as f64);
    } }

    for seed in seed0..seed0 + n_seeds as u64 {
        for ilsd in [true, false] {
            let cfg = config(seed, ilsd, steps, lr, batch, peak, seq, mlp);
            let dir = std::env::temp_dir().join(format!("elt-tune-{}-{}-{}", std::process::id(), seed, ilsd));
            let t0 = Instant::now();
            let out = run_training(&cfg, &dir).unwrap();
            let train_secs = t0.elapsed().as_secs_f64();
            let (mcfg, params) = elt::ckpt::load(&out.final_ckpt).unwrap();
            let model = LoopedModel::new(mcfg, params).unwrap();
            let curve = elasticity_curve(&model, &eval, &[1, 2, 3, 4]).unwrap();
            let metrics: Vec<f64> = curve.iter().map(|p| p.metric).collect();
            let maxm = metrics.iter().cloned().fold(f64::MIN, f64::max);
            let minm = metrics.iter().cloned().fold(f64::MAX, f64::min);
            println!(
                "seed {seed} {}: CE@L1..4 = {:?} ratio {:.2} [{:.0}s train]",
                if ilsd { "ilsd   " } else { "vanilla" },
                metrics.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                maxm / minm,
                train_secs
            );
            if ilsd && seq <= 6 {
                // Trained-model decode TV at L = l_max.
                let opts = GenerateOptions { shape: vec![seq], steps: 4, loops: 4, cfg_scale: 1.0, temp_bias: 1.0, temp_scale: 0.0 };
                let mut rng = rng_from_seed(123);
                let grids: Vec<_> = (0..20000).map(|_| generate(&model, 4, Some(0), &opts, &mut rng).unwrap().0).collect();
                let tv = tv_distance(&grids, &src, Some(0)).unwrap();
                println!("         trained ILSD decode TV: {tv:.4}");
            }
            std::fs::remove_dir_all(&dir).ok();
            let _ = SyntheticSource::MarkovGrid(src.clone());
        }
    }
}
