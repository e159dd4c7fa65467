//! `detour` command line: experiment driver plus independently invocable
//! pieces (data generation, training, CKA/ratio analysis, transplants,
//! probing, needle benchmark). Exit code 0 iff all runs and assertions pass.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use detour::analysis::{
    divergence_profile, linear_probe, seed_noise_ratio, transplant, ProbeConfig,
    TransplantComponents, TransplantSpec,
};
use detour::experiment::{
    run_experiment, train_single, write_data_files, write_needle_files, ExperimentSpec,
    PipelineKind,
};
use detour::io::{load_checkpoint, parse_corpus, parse_needle_examples, save_checkpoint};
use detour::model::{AttentionMaskMode, TransformerModel};
use detour::needle::{evaluate_needle, train_needle_probe, NeedleProbeConfig};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "detour", about = "Desk-scale CLM-detour pretraining lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecOut {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment suite from a spec file.
    Experiment {
        #[command(flatten)]
        io: SpecOut,
        /// Override the spec's run seeds (comma-separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Reuse completed runs found in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Write the corpora, evaluation texts and vocab table of a spec.
    GenData {
        #[command(flatten)]
        io: SpecOut,
    },
    /// Train a single pipeline (base encoder is pretrained on demand).
    Train {
        #[command(flatten)]
        io: SpecOut,
        /// One of: detour, baseline, reverse-detour, clm-baseline.
        #[arg(long)]
        pipeline: String,
        #[arg(long, default_value_t = 1)]
        run_seed: u64,
        #[arg(long)]
        resume: bool,
    },
    /// Layer-wise CKA divergence between two checkpoints.
    AnalyzeCka {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        /// Evaluation corpus (one document of token ids per line).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "42,43,44")]
        seeds: Vec<u64>,
        /// Texts sampled per seed.
        #[arg(long, default_value_t = 128)]
        sample: usize,
        #[arg(long, default_value = "bidirectional")]
        mode: String,
    },
    /// Seed-noise-normalized divergence ratio r per layer.
    AnalyzeRatio {
        #[arg(long)]
        clm: PathBuf,
        #[arg(long)]
        mlm_s1: PathBuf,
        #[arg(long)]
        mlm_s2: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "bidirectional")]
        mode: String,
    },
    /// Copy parameter blocks of selected layers from source into target.
    Transplant {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        lo: usize,
        #[arg(long)]
        hi: usize,
        /// Comma-separated subset of: attention, mlp, layer_norms.
        #[arg(long, default_value = "attention,mlp,layer_norms")]
        components: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear probe separating two corpora on frozen representations.
    Probe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus_a: PathBuf,
        #[arg(long)]
        corpus_b: PathBuf,
        #[arg(long, default_value_t = -1)]
        layer: i32,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "bidirectional")]
        mode: String,
    },
    /// Generate the needle-in-haystack dataset splits of a spec.
    NeedleGen {
        #[command(flatten)]
        io: SpecOut,
    },
    /// Train the needle probe on a frozen encoder and report the grid.
    NeedleEval {
        #[arg(long)]
        model: PathBuf,
        /// Directory holding train.csv / val.csv / test.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 0.1)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        probe_seed: u64,
        #[arg(long, default_value = "bidirectional")]
        mode: String,
    },
}

fn read_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading spec {}", path.display()))?;
    Ok(ExperimentSpec::from_toml(&text)?)
}

fn read_model(path: &Path) -> Result<TransformerModel<f32>> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    Ok(load_checkpoint(&bytes)?.0)
}

fn read_corpus_file(path: &Path) -> Result<Vec<Vec<u32>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading corpus {}", path.display()))?;
    let docs = parse_corpus(&text)?;
    if docs.is_empty() {
        bail!("corpus {} is empty", path.display());
    }
    Ok(docs)
}

fn parse_mode(s: &str) -> Result<AttentionMaskMode> {
    match s {
        "bidirectional" => Ok(AttentionMaskMode::Bidirectional),
        "causal" => Ok(AttentionMaskMode::Causal),
        _ => Err(anyhow!("mode must be `bidirectional` or `causal`, got `{}`", s)),
    }
}

fn write_out(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

/// Fit analysis texts to the model context.
fn clamp_texts(mut docs: Vec<Vec<u32>>, max_len: usize) -> Vec<Vec<u32>> {
    for d in docs.iter_mut() {
        d.truncate(max_len);
    }
    docs
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Experiment { io, seeds, resume } => {
            let mut spec = read_spec(&io.spec)?;
            if let Some(seeds) = seeds {
                spec.seeds = seeds;
            }
            let outcome = run_experiment(&spec, &io.out, resume)?;
            println!(
                "experiment {} complete: {} runs, {} checkpoints, reports under {}",
                outcome.manifest.kind,
                outcome.manifest.runs.len(),
                outcome.manifest.checkpoints.len(),
                io.out.join("reports").display()
            );
            if let Some(summary) = outcome.reports.get("summary.txt") {
                print!("{}", summary);
            }
        }
        Command::GenData { io } => {
            let spec = read_spec(&io.spec)?;
            write_data_files(&spec, &io.out)?;
            println!("wrote general.txt, domain.txt, eval.txt, vocab.tsv to {}", io.out.display());
        }
        Command::Train {
            io,
            pipeline,
            run_seed,
            resume,
        } => {
            let spec = read_spec(&io.spec)?;
            let kind = PipelineKind::parse(&pipeline)
                .ok_or_else(|| anyhow!("unknown pipeline `{}`", pipeline))?;
            let final_ckpt = train_single(&spec, &io.out, kind, run_seed, resume)?;
            println!("final checkpoint: {}", final_ckpt.display());
        }
        Command::AnalyzeCka {
            model_a,
            model_b,
            corpus,
            out,
            seeds,
            sample,
            mode,
        } => {
            let a = read_model(&model_a)?;
            let b = read_model(&model_b)?;
            let mode = parse_mode(&mode)?;
            let texts = clamp_texts(
                read_corpus_file(&corpus)?,
                a.config.max_seq_len.min(b.config.max_seq_len),
            );
            let profile = divergence_profile(&a, &b, &texts, &seeds, sample, mode, 0)?;
            let mut csv = String::from("layer,d_mean,d_ci95\n");
            for l in 0..profile.n_layers() {
                csv.push_str(&format!("{},{},{}\n", l, profile.d_mean[l], profile.d_ci95[l]));
            }
            write_out(&out, &csv)?;
            println!("overall divergence {:.4} -> {}", profile.overall(), out.display());
        }
        Command::AnalyzeRatio {
            clm,
            mlm_s1,
            mlm_s2,
            corpus,
            out,
            mode,
        } => {
            let clm = read_model(&clm)?;
            let s1 = read_model(&mlm_s1)?;
            let s2 = read_model(&mlm_s2)?;
            let mode = parse_mode(&mode)?;
            let texts = clamp_texts(read_corpus_file(&corpus)?, clm.config.max_seq_len);
            let ratio = seed_noise_ratio(&clm, &s1, &s2, &texts, mode, 0)?;
            let mut csv = String::from("layer,r,numerator,denominator\n");
            for l in 0..ratio.r.len() {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    l, ratio.r[l], ratio.numerator[l], ratio.denominator[l]
                ));
            }
            write_out(&out, &csv)?;
            println!("ratio table -> {}", out.display());
        }
        Command::Transplant {
            target,
            source,
            lo,
            hi,
            components,
            out,
        } => {
            let target_model = read_model(&target)?;
            let source_model = read_model(&source)?;
            let mut comp = TransplantComponents {
                attention: false,
                mlp: false,
                layer_norms: false,
            };
            for part in components.split(',') {
                match part.trim() {
                    "attention" => comp.attention = true,
                    "mlp" => comp.mlp = true,
                    "layer_norms" => comp.layer_norms = true,
                    other => bail!("unknown component `{}`", other),
                }
            }
            let spec = TransplantSpec { lo, hi, components: comp };
            let hybrid = transplant(&target_model, &source_model, &spec)?;
            let meta = detour::io::CheckpointMeta {
                phase: format!("transplant[{},{}]", lo, hi),
                run_seed: 0,
                data_seed: 0,
                tokens: 0,
            };
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&out, save_checkpoint(&hybrid, &meta))?;
            println!("hybrid checkpoint -> {}", out.display());
        }
        Command::Probe {
            model,
            corpus_a,
            corpus_b,
            layer,
            seeds,
            out,
            mode,
        } => {
            let m = read_model(&model)?;
            let mode = parse_mode(&mode)?;
            let layer = if layer < 0 { m.config.n_layers as i32 - 1 } else { layer };
            let a = clamp_texts(read_corpus_file(&corpus_a)?, m.config.max_seq_len);
            let b = clamp_texts(read_corpus_file(&corpus_b)?, m.config.max_seq_len);
            let mut labels = vec![0usize; a.len()];
            labels.extend(vec![1usize; b.len()]);
            let mut texts = a;
            texts.extend(b);
            let reps = m.extract_representations(&texts, layer, mode, 0)?;
            let result = linear_probe(&reps, &labels, &seeds, &ProbeConfig::default(), "probe")?;
            let mut csv = String::from("task,seed,f1\n");
            for (s, f1) in seeds.iter().zip(&result.per_seed_f1) {
                csv.push_str(&format!("probe,{},{}\n", s, f1));
            }
            csv.push_str(&format!("probe,mean,{}\n", result.mean_f1));
            write_out(&out, &csv)?;
            println!("mean macro-F1 {:.4} -> {}", result.mean_f1, out.display());
        }
        Command::NeedleGen { io } => {
            let spec = read_spec(&io.spec)?;
            write_needle_files(&spec, &io.out)?;
            println!("wrote train.csv, val.csv, test.csv to {}", io.out.display());
        }
        Command::NeedleEval {
            model,
            data,
            out,
            hidden,
            epochs,
            lr,
            batch,
            dropout,
            probe_seed,
            mode,
        } => {
            let m = read_model(&model)?;
            let mode = parse_mode(&mode)?;
            let read_split = |name: &str| -> Result<Vec<detour::needle::NeedleExample>> {
                let path = data.join(format!("{}.csv", name));
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Ok(parse_needle_examples(&text)?)
            };
            let train = read_split("train")?;
            let val = read_split("val")?;
            let test = read_split("test")?;
            let cfg = NeedleProbeConfig {
                hidden,
                dropout,
                epochs,
                lr,
                batch_size: batch,
                layer: None,
                seed: probe_seed,
            };
            let probe = train_needle_probe(&m, &train, &val, &cfg, mode, 1, 0)?;
            let report = evaluate_needle(&probe, &m, &test, mode, 1, 0)?;
            let mut lengths: Vec<usize> = test.iter().map(|e| e.length_bucket).collect();
            lengths.sort_unstable();
            lengths.dedup();
            let csv = detour::experiment::report::needle_csv(&report, &lengths);
            write_out(&out, &csv)?;
            println!(
                "needle overall accuracy {:.4} (val {:.4}) -> {}",
                report.overall_accuracy(),
                probe.val_accuracy,
                out.display()
            );
        }
    }
    Ok(())
}
