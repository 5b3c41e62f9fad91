//! Command-line harness: dataset generation, the two training phases,
//! retrieval evaluation, attention visualization, the gradient suite,
//! and a lambda sweep. Every subcommand reads a JSON config (defaults
//! apply when omitted) overridable with repeated `--set key=value`.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use textbrush::config::RunConfig;
use textbrush::dataset::{generate_dataset, load_split};
use textbrush::error::Error;
use textbrush::eval::{generate_for_captions, r_precision};
use textbrush::generator::generate_all;
use textbrush::gradsuite::run_grad_suite;
use textbrush::rng::{randn, stream_rng};
use textbrush::tensor::Tensor;
use textbrush::text_encoder::encode_text;
use textbrush::train::{load_encoders, load_gan, pretrain_damsm, train_gan};
use textbrush::viz::export_attention_maps;

#[derive(Parser)]
#[command(name = "textbrush", version, about = "word-attentive text-to-image pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single config keys, e.g. --set lambda=5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        for pair in &self.sets {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {pair:?}"))?;
            cfg = cfg.with_override(key, value)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic captioned-shapes dataset.
    GenData(ConfigArgs),
    /// Phase 1: pretrain the encoder pair with the matching loss.
    PretrainDamsm {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from a pretraining checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Phase 2: adversarial training against frozen encoders.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Encoder checkpoint from pretrain-damsm
        /// (default <out_dir>/damsm_final.ckpt).
        #[arg(long)]
        encoders: Option<PathBuf>,
        /// Continue from a GAN checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Retrieval evaluation; prints the report as one JSON line.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        encoders: Option<PathBuf>,
        /// Generator checkpoint (default <out_dir>/gan_final.ckpt).
        #[arg(long)]
        gan: Option<PathBuf>,
    },
    /// Attention maps and staged images for one caption.
    Visualize {
        #[command(flatten)]
        config: ConfigArgs,
        /// Caption text, template tokens separated by spaces.
        #[arg(long)]
        caption: String,
        #[arg(long)]
        encoders: Option<PathBuf>,
        #[arg(long)]
        gan: Option<PathBuf>,
        /// Output directory (default <out_dir>/viz).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Noise seed for this sample.
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
    },
    /// Finite-difference verification of all differentiable losses.
    GradCheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train + evaluate once per lambda; prints one JSON line per run.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated lambda values.
        #[arg(long, default_value = "0,0.1,1,5")]
        lambdas: String,
        #[arg(long)]
        encoders: Option<PathBuf>,
    },
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => {
            let cfg = args.load()?;
            let summary = generate_dataset(
                cfg.seed,
                cfg.n_train,
                cfg.n_test,
                cfg.image_side,
                Path::new(&cfg.data_dir),
            )?;
            eprintln!(
                "wrote {} train / {} test items under {} (scene pools {}/{})",
                summary.n_train,
                summary.n_test,
                summary.root.display(),
                summary.train_pool,
                summary.test_pool
            );
            Ok(())
        }
        Command::PretrainDamsm { config, resume } => {
            let cfg = config.load()?;
            let data = load_split(Path::new(&cfg.data_dir), "train")?;
            let out = pretrain_damsm(&cfg, &data, resume.as_deref())?;
            eprintln!("encoder checkpoint: {}", out.checkpoint.display());
            Ok(())
        }
        Command::Train { config, encoders, resume } => {
            let cfg = config.load()?;
            let enc_path = encoder_path(&cfg, encoders);
            if !enc_path.exists() {
                return Err(Error::Config(format!(
                    "encoder checkpoint {} not found; run pretrain-damsm first",
                    enc_path.display()
                ))
                .into());
            }
            let data = load_split(Path::new(&cfg.data_dir), "train")?;
            let (text, image) = load_encoders(&enc_path, &cfg, data.vocab.len())?;
            let out = train_gan(&cfg, &data, &text, &image, resume.as_deref())?;
            eprintln!("generator checkpoint: {}", out.checkpoint.display());
            Ok(())
        }
        Command::Eval { config, encoders, gan } => {
            let cfg = config.load()?;
            let report = evaluate(&cfg, encoders, gan)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Visualize { config, caption, encoders, gan, out, sample_seed } => {
            let cfg = config.load()?;
            let data = load_split(Path::new(&cfg.data_dir), "test")?;
            let (text, _) = load_encoders(&encoder_path(&cfg, encoders), &cfg, data.vocab.len())?;
            let (gen, _) = load_gan(&gan_path(&cfg, gan), &cfg)?;
            let tokens: Vec<String> =
                caption.split_whitespace().map(str::to_string).collect();
            let ids = data.vocab.encode(&tokens)?;
            let feats = encode_text(&ids, &text)?;
            let mut rng = stream_rng(cfg.seed, textbrush::rng::stream::EVAL, sample_seed);
            let z: Vec<f64> = (0..cfg.z_dim).map(|_| randn(&mut rng)).collect();
            let eps: Vec<f64> = (0..cfg.c_dim).map(|_| randn(&mut rng)).collect();
            let (images, attention) = generate_all(
                &Tensor::new(&[cfg.z_dim], z),
                &Tensor::new(&[cfg.c_dim], eps),
                &feats,
                &gen,
            )?;
            let dir = out.unwrap_or_else(|| Path::new(&cfg.out_dir).join("viz"));
            std::fs::create_dir_all(&dir)?;
            for (i, img) in images.iter().enumerate() {
                img.write_ppm(&dir.join(format!("stage{i}.ppm")))?;
            }
            let final_side = images.last().map(|i| i.side).unwrap_or(cfg.image_side);
            let sidecar = export_attention_maps(
                &dir,
                &tokens,
                &attention,
                final_side,
                cfg.viz_sigma,
                cfg.viz_top_k,
            )?;
            eprintln!(
                "wrote {} stage images and {} attention map sets under {} ({})",
                images.len(),
                attention.len(),
                dir.display(),
                sidecar.display()
            );
            Ok(())
        }
        Command::GradCheck { seed } => {
            let results = run_grad_suite(seed)?;
            let mut failed = false;
            for r in &results {
                let ok = r.max_rel_err <= 1e-4;
                failed |= !ok;
                println!(
                    "{} {: <40} max_rel_err {:.3e}",
                    if ok { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_rel_err
                );
            }
            if failed {
                bail!("gradient suite failed");
            }
            Ok(())
        }
        Command::Sweep { config, lambdas, encoders } => {
            let base = config.load()?;
            let values: Vec<f64> = lambdas
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad lambda {s:?}: {e}")))
                .collect::<Result<_>>()?;
            let enc_path = encoder_path(&base, encoders);
            if !enc_path.exists() {
                return Err(Error::Config(format!(
                    "encoder checkpoint {} not found; run pretrain-damsm first",
                    enc_path.display()
                ))
                .into());
            }
            let data = load_split(Path::new(&base.data_dir), "train")?;
            for lambda in values {
                let mut cfg = base.with_override("lambda", &lambda.to_string())?;
                cfg = cfg.with_override(
                    "out_dir",
                    &format!("{}/lambda_{lambda}", base.out_dir),
                )?;
                let (text, image) = load_encoders(&enc_path, &cfg, data.vocab.len())?;
                train_gan(&cfg, &data, &text, &image, None)?;
                let report = evaluate(&cfg, Some(enc_path.clone()), None)?;
                println!(
                    "{}",
                    serde_json::json!({
                        "lambda": lambda,
                        "out_dir": cfg.out_dir,
                        "r_precision": report.mean,
                        "half_width": report.half_width,
                    })
                );
            }
            Ok(())
        }
    }
}

fn encoder_path(cfg: &RunConfig, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| Path::new(&cfg.out_dir).join("damsm_final.ckpt"))
}

fn gan_path(cfg: &RunConfig, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| Path::new(&cfg.out_dir).join("gan_final.ckpt"))
}

fn evaluate(
    cfg: &RunConfig,
    encoders: Option<PathBuf>,
    gan: Option<PathBuf>,
) -> Result<textbrush::eval::RPrecisionReport> {
    let test = load_split(Path::new(&cfg.data_dir), "test")?;
    let (text, image) = load_encoders(&encoder_path(cfg, encoders), cfg, test.vocab.len())?;
    let (gen, _) = load_gan(&gan_path(cfg, gan), cfg)?;
    let queries = if cfg.eval_queries == 0 {
        test.captions.len()
    } else {
        cfg.eval_queries.min(test.captions.len())
    };
    let captions: Vec<Vec<usize>> = test.captions[..queries].to_vec();
    let images = generate_for_captions(&captions, &gen, &text, cfg.image_side, cfg.seed)?;
    let report = r_precision(
        &images,
        &captions,
        &test.captions,
        cfg.eval_candidates,
        cfg.eval_r,
        &text,
        &image,
        cfg.seed,
    )?;
    Ok(report)
}
