//! Command-line entry points. Exit codes: 0 ok, 2 config error, 3 numerical
//! failure, 4 i/o error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use elt::ckpt;
use elt::diffusion::{sample as diffusion_sample, NoiseSchedule, SampleOptions};
use elt::error::EltError;
use elt::evalbench::{elasticity_curve, pareto_sweep, write_sweep_csv, SweepSpec};
use elt::expcfg::{run_training, ExperimentConfig};
use elt::masked::{generate, GenerateOptions, DEFAULT_TEMP_BIAS, DEFAULT_TEMP_SCALE};
use elt::model::{count_flops, count_params, generation_flops, LoopConfig, LoopedModel, Mode};
use elt::rng::rng_from_seed;
use elt::verify;

#[derive(Parser)]
#[command(name = "elt", version, about = "Weight-tied looped transformers with any-time inference")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train per an experiment config; writes checkpoints and a step CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked parallel decoding from a checkpoint; writes a token-grid JSON.
    SampleMasked {
        #[arg(long)]
        ckpt: PathBuf,
        /// Class id; omit for unconditional.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 24)]
        steps: usize,
        /// Loop budget; defaults to the checkpoint's trained l_max.
        #[arg(long)]
        loops: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        cfg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TEMP_BIAS)]
        temp_bias: f64,
        #[arg(long, default_value_t = DEFAULT_TEMP_SCALE)]
        temp_scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// DDPM sampling from a checkpoint; writes a latents JSON.
    SampleDiffusion {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        class: Option<usize>,
        /// Denoising steps T.
        #[arg(long, default_value_t = 256)]
        steps: usize,
        #[arg(long)]
        loops: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        cfg: f64,
        #[arg(long, default_value_t = 1.0)]
        shift: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Held-out loss across loop counts; writes a curve CSV.
    Elasticity {
        #[arg(long)]
        ckpt: PathBuf,
        /// Experiment config supplying the held-out data source.
        #[arg(long)]
        config: PathBuf,
        /// Loop counts: "1..6" (inclusive) or "1,2,4".
        #[arg(long)]
        loops: String,
        #[arg(long, default_value_t = 256)]
        eval_examples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a (checkpoint x loop-count) grid; writes a sweep CSV.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analytic FLOPs for a config or checkpoint.
    Flops {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        loops: usize,
        /// Also report a full generation at this many sampling steps.
        #[arg(long)]
        gen_steps: Option<usize>,
        /// Count the extra guidance forward per step.
        #[arg(long, default_value_t = false)]
        guidance: bool,
    },
    /// Exact parameter counts for a config or checkpoint.
    Params {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full invariant suite on internally built tiny models.
    Verify,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    });
}

fn exit_code(e: &EltError) -> i32 {
    match e {
        EltError::Config(_) => 2,
        EltError::Shape { .. } | EltError::Numeric(_) => 3,
        EltError::Io(_) | EltError::Json(_) | EltError::Checkpoint(_) => 4,
    }
}

fn run(cmd: Cmd) -> Result<i32, EltError> {
    match cmd {
        Cmd::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = run_training(&cfg, &out)?;
            println!(
                "trained {} steps; checkpoint {}; log {}",
                outcome.steps_run,
                outcome.final_ckpt.display(),
                outcome.csv.display()
            );
            if let Some(last) = outcome.last {
                println!(
                    "final step: total {:.6} (gt_max {:.6}, gt_int {:.6}, distill {:.6}, lambda {:.3})",
                    last.total, last.gt_max, last.gt_int, last.distill, last.lambda
                );
            }
            Ok(0)
        }
        Cmd::SampleMasked {
            ckpt,
            class,
            steps,
            loops,
            cfg,
            seed,
            temp_bias,
            temp_scale,
            out,
        } => {
            let (model_cfg, params) = ckpt::load(&ckpt)?;
            if model_cfg.mode != Mode::Masked {
                return Err(EltError::Config(
                    "sample-masked needs a masked-mode checkpoint".to_string(),
                ));
            }
            let loops = loops.unwrap_or(model_cfg.l_max);
            let vocab = model_cfg.vocab_size()?;
            let model = LoopedModel::new(model_cfg, params)?;
            let opts = GenerateOptions {
                shape: vec![model.cfg().seq_len],
                steps,
                loops,
                cfg_scale: cfg,
                temp_bias,
                temp_scale,
            };
            let mut rng = rng_from_seed(seed);
            model.reset_block_applications();
            let (grid, stats) = generate(&model, vocab, class, &opts, &mut rng)?;
            #[derive(Serialize)]
            struct GridOutput<'a> {
                shape: &'a [usize],
                tokens: &'a [usize],
                vocab_size: usize,
                class: Option<usize>,
                steps: usize,
                loops: usize,
                cfg_scale: f64,
                seed: u64,
                model_calls: u64,
                block_applications: u64,
            }
            write_json(
                &out,
                &GridOutput {
                    shape: grid.shape(),
                    tokens: grid.tokens(),
                    vocab_size: vocab,
                    class,
                    steps,
                    loops,
                    cfg_scale: cfg,
                    seed,
                    model_calls: stats.model_calls,
                    block_applications: model.block_applications(),
                },
            )?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Cmd::SampleDiffusion {
            ckpt,
            class,
            steps,
            loops,
            cfg,
            shift,
            seed,
            out,
        } => {
            let (model_cfg, params) = ckpt::load(&ckpt)?;
            if model_cfg.mode != Mode::Diffusion {
                return Err(EltError::Config(
                    "sample-diffusion needs a diffusion-mode checkpoint".to_string(),
                ));
            }
            let loops = loops.unwrap_or(model_cfg.l_max);
            let model = LoopedModel::new(model_cfg, params)?;
            let schedule = NoiseSchedule::shifted_cosine(steps, shift)?;
            let opts = SampleOptions {
                loops,
                cfg_scale: cfg,
                spatial_shape: vec![model.cfg().seq_len],
            };
            let mut rng = rng_from_seed(seed);
            model.reset_block_applications();
            let (latent, stats) = diffusion_sample(&model, &schedule, class, &opts, &mut rng)?;
            #[derive(Serialize)]
            struct LatentOutput<'a> {
                spatial_shape: &'a [usize],
                seq_len: usize,
                latent_dim: usize,
                values: &'a [f64],
                class: Option<usize>,
                steps: usize,
                loops: usize,
                cfg_scale: f64,
                seed: u64,
                model_calls: u64,
                block_applications: u64,
            }
            write_json(
                &out,
                &LatentOutput {
                    spatial_shape: &latent.spatial_shape,
                    seq_len: latent.seq_len(),
                    latent_dim: latent.latent_dim(),
                    values: latent.values.data(),
                    class,
                    steps,
                    loops,
                    cfg_scale: cfg,
                    seed,
                    model_calls: stats.model_calls,
                    block_applications: model.block_applications(),
                },
            )?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Cmd::Elasticity {
            ckpt,
            config,
            loops,
            eval_examples,
            seed,
            out,
        } => {
            let exp = ExperimentConfig::load(&config)?;
            let (model_cfg, params) = ckpt::load(&ckpt)?;
            let model = LoopedModel::new(model_cfg, params)?;
            let l_values = parse_loops(&loops)?;
            let batch = exp.data.assemble_batch(eval_examples, 0.0, seed)?;
            let curve = elasticity_curve(&model, &batch, &l_values)?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
            use std::io::Write;
            writeln!(w, "loops,metric,extrapolation")?;
            for p in &curve {
                writeln!(w, "{},{},{}", p.loops, p.metric, p.extrapolation)?;
            }
            w.flush()?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Cmd::Sweep { grid, out } => {
            let text = std::fs::read_to_string(&grid)
                .map_err(|e| EltError::Config(format!("grid {}: {e}", grid.display())))?;
            let spec: SweepSpec = serde_json::from_str(&text)
                .map_err(|e| EltError::Config(format!("grid parse: {e}")))?;
            let result = pareto_sweep(&spec)?;
            write_sweep_csv(&result, &out)?;
            println!(
                "wrote {} ({} rows, metric {})",
                out.display(),
                result.rows.len(),
                result.metric_name
            );
            Ok(0)
        }
        Cmd::Flops {
            ckpt,
            config,
            loops,
            gen_steps,
            guidance,
        } => {
            let cfg = load_model_config(ckpt.as_deref(), config.as_deref())?;
            let f = count_flops(&cfg, loops, cfg.seq_len)?;
            #[derive(Serialize)]
            struct FlopsOutput {
                loops: usize,
                seq_len: usize,
                block: u64,
                embed_head: u64,
                total: u64,
                generation: Option<u64>,
            }
            let gen = gen_steps.map(|s| generation_flops(&f, s, guidance));
            let payload = FlopsOutput {
                loops,
                seq_len: cfg.seq_len,
                block: f.block,
                embed_head: f.embed_head,
                total: f.total,
                generation: gen,
            };
            println!("{}", serde_json::to_string_pretty(&payload)?);
            Ok(0)
        }
        Cmd::Params { ckpt, config } => {
            let cfg = load_model_config(ckpt.as_deref(), config.as_deref())?;
            let c = count_params(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
            Ok(0)
        }
        Cmd::Verify => {
            let outcomes = verify::run_all();
            let mut failures = 0;
            for o in &outcomes {
                match &o.result {
                    Ok(()) => println!("[PASS] {}::{} ({})", o.module, o.name, o.tolerance),
                    Err(e) => {
                        failures += 1;
                        println!("[FAIL] {}::{} ({}): {e}", o.module, o.name, o.tolerance);
                    }
                }
            }
            println!(
                "{} checks, {} passed, {failures} failed",
                outcomes.len(),
                outcomes.len() - failures
            );
            Ok(if failures == 0 { 0 } else { 3 })
        }
    }
}

fn load_model_config(ckpt: Option<&Path>, config: Option<&Path>) -> Result<LoopConfig, EltError> {
    match (ckpt, config) {
        (Some(path), _) => Ok(ckpt::load(path)?.0),
        (None, Some(path)) => Ok(ExperimentConfig::load(path)?.model),
        (None, None) => Err(EltError::Config("pass --ckpt or --config".to_string())),
    }
}

/// "1..6" (inclusive) or a comma list "1,2,4".
fn parse_loops(spec: &str) -> Result<Vec<usize>, EltError> {
    let bad = |s: &str| EltError::Config(format!("bad loop spec {s:?}"));
    if let Some((a, b)) = spec.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| bad(spec))?;
        let hi: usize = b.trim().parse().map_err(|_| bad(spec))?;
        if lo < 1 || hi < lo {
            return Err(bad(spec));
        }
        return Ok((lo..=hi).collect());
    }
    let vals: Result<Vec<usize>, _> = spec.split(',').map(|s| s.trim().parse()).collect();
    let vals = vals.map_err(|_| bad(spec))?;
    if vals.is_empty() || vals.iter().any(|&v| v < 1) {
        return Err(bad(spec));
    }
    Ok(vals)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EltError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}
