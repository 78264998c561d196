use elt::data::{DataSourceSpec, MarkovGridSource};
use elt::evalbench::tv_distance;
use elt::expcfg::{run_training, ExperimentConfig, TrainSection, CONFIG_VERSION};
use elt::masked::{generate, GenerateOptions};
use elt::model::{LoopConfig, LoopedModel};
use elt::rng::rng_from_seed;
use elt::train::{DistillSpace, OptimizerConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let batch: usize = args[0].parse().unwrap();
    let lr: f64 = args[1].parse().unwrap();
    let seeds: Vec<u64> = args[2..].iter().map(|s| s.parse().unwrap()).collect();
    let src = MarkovGridSource::cyclic_peaked(vec![2, 2], 4, 2, 0.97).unwrap();
    for seed in seeds {
        let cfg = ExperimentConfig {
            version: CONFIG_VERSION.to_string(),
            model: LoopConfig::masked(2, 32, 4, 128, 1, 4, 4, 4, 2),
            optimizer: OptimizerConfig { lr, warmup_steps: 200, ..OptimizerConfig::masked_default() },
            train: TrainSection { total_steps: 10_000, batch_size: batch, label_drop: 0.1, distill_space: DistillSpace::HeadOutput, ckpt_every: None },
            data: DataSourceSpec::MarkovGrid { shape: vec![2, 2], vocab: 4, n_classes: 2, peak: 0.97 },
            seed,
            ilsd_enabled: true,
        };
        let dir = std::env::temp_dir().join(format!("elt-tv7-{}-{}", std::process::id(), seed));
        let t0 = std::time::Instant::now();
        let out = run_training(&cfg, &dir).unwrap();
        let (mcfg, params) = elt::ckpt::load(&out.final_ckpt).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        let model = LoopedModel::new(mcfg, params).unwrap();
        for loops in [4usize, 2] {
            let opts = GenerateOptions { shape: vec![2, 2], steps: 4, loops, cfg_scale: 1.0, temp_bias: 1.0, temp_scale: 0.0 };
            let mut rng = rng_from_seed(770_002);
            let grids: Vec<_> = (0..20_000).map(|_| generate(&model, 4, Some(0), &opts, &mut rng).unwrap().0).collect();
            let tv = tv_distance(&grids, &src, Some(0)).unwrap();
            println!("seed {seed} L={loops}: trained TV {tv:.4}  [{:.0}s total]", t0.elapsed().as_secs_f64());
        }
    }
}
