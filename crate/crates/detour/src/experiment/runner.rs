//! Experiment execution: training runs, analyses and report emission.
//!
//! Every run starts from one shared base encoder and consumes the same
//! domain stream (fixed by the data seed), so pipelines differ only in
//! objective, schedule and per-run stochasticity.

use super::manifest::{sha256_hex, RunManifest};
use super::report::{
    divergence_ratio_csv, freeze_csv, needle_csv, probe_csv, sweep_csv, transplant_csv, Reports,
};
use super::spec::{ExperimentKind, ExperimentSpec};
use crate::analysis::{
    divergence_profile, extract_set, linear_probe, paired_bootstrap, seed_noise_ratio_from_reps,
    transplant, ProbeConfig, ProbeResult, TransplantComponents, TransplantSpec,
};
use crate::data::{
    generate_corpus, generate_corpus_tokens, pack_stream, DomainSpec, VocabLayout,
};
use crate::error::{DetourError, Result};
use crate::io::{load_checkpoint, save_checkpoint, write_metrics, CheckpointMeta};
use crate::model::{init_model, AttentionMaskMode, TransformerModel};
use crate::needle::{
    desk_templates, evaluate_needle, generate_needle_dataset, train_needle_probe, NeedleDataset,
    NeedleDatasetConfig, NeedleProbeConfig, NeedleReport,
};
use crate::trainer::{
    mix_seed, run_pipeline, FreezeSpec, Objective, OptimizerState, PipelineConfig, RunSettings,
    TokenStream,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

struct ProbeTask {
    name: String,
    texts: Vec<Vec<u32>>,
    labels: Vec<usize>,
}

struct Env {
    spec: ExperimentSpec,
    vocab: VocabLayout,
    domain_corpus: Vec<Vec<u32>>,
    general_corpus: Vec<Vec<u32>>,
    eval_texts: Vec<Vec<u32>>,
    needle_corpus: Vec<Vec<u32>>,
    probe_tasks: Vec<ProbeTask>,
    mode: AttentionMaskMode,
}

impl Env {
    fn build(spec: &ExperimentSpec) -> Result<Env> {
        let vocab = if spec.model.mask_token_id.is_some() {
            VocabLayout::encoder(spec.model.vocab_size)?
        } else {
            VocabLayout::decoder(spec.model.vocab_size)?
        };
        let general = DomainSpec::desk(&vocab, spec.data.general_shift)?;
        let domain = DomainSpec::desk(&vocab, spec.data.domain_shift)?;
        let ds = spec.data_seed;

        let max_ratio = if spec.kind == ExperimentKind::DecaySweep {
            spec.sweep_ratios.iter().cloned().fold(0.0, f64::max)
        } else {
            spec.budgets.decay_ratio
        };
        let domain_tokens =
            spec.budgets.phase1_tokens + (spec.budgets.phase1_tokens as f64 * max_ratio) as u64;
        let slack = (4 * spec.data.window) as u64;
        let domain_corpus =
            generate_corpus_tokens(&domain, domain_tokens + slack, mix_seed(&[ds, 2]))?;
        let general_corpus =
            generate_corpus_tokens(&general, spec.budgets.base_tokens + slack, mix_seed(&[ds, 1]))?;
        // analysis texts must fit the model context
        let max_len = spec.model.max_seq_len;
        let clamp = |mut docs: Vec<Vec<u32>>| -> Vec<Vec<u32>> {
            for d in docs.iter_mut() {
                d.truncate(max_len);
            }
            docs
        };
        let eval_texts = clamp(generate_corpus(&domain, spec.data.eval_texts, mix_seed(&[ds, 3]))?);
        let needle_corpus = generate_corpus(&domain, 256, mix_seed(&[ds, 20]))?;

        // probe task 1: domain vs general distribution
        let n = spec.probe.texts_per_class;
        let mut domain_task_texts = generate_corpus(&general, n, mix_seed(&[ds, 30]))?;
        let mut labels = vec![0usize; n];
        domain_task_texts.extend(generate_corpus(&domain, n, mix_seed(&[ds, 31]))?);
        labels.extend(vec![1usize; n]);
        let task_domain = ProbeTask {
            name: "domain".into(),
            texts: clamp(domain_task_texts),
            labels,
        };
        // probe task 2: which record template produced the document
        let mut tpl_texts = Vec::new();
        let mut tpl_labels = Vec::new();
        for t in 0..domain.templates.len() {
            let single = domain.single_template(t)?;
            tpl_texts.extend(generate_corpus(&single, n, mix_seed(&[ds, 32, t as u64]))?);
            tpl_labels.extend(vec![t; n]);
        }
        let tpl_texts = clamp(tpl_texts);
        let task_template = ProbeTask {
            name: "template".into(),
            texts: tpl_texts,
            labels: tpl_labels,
        };

        let mode = if spec.kind == ExperimentKind::ReverseDirection {
            AttentionMaskMode::Causal
        } else {
            AttentionMaskMode::Bidirectional
        };
        Ok(Env {
            spec: spec.clone(),
            vocab,
            domain_corpus,
            general_corpus,
            eval_texts,
            needle_corpus,
            probe_tasks: vec![task_domain, task_template],
            mode,
        })
    }

    fn domain_stream(&self) -> Result<TokenStream> {
        TokenStream::new(pack_stream(
            &self.domain_corpus,
            self.spec.data.window,
            self.vocab.eos_id,
        )?)
    }

    fn run_settings<'a>(&'a self, run_seed: u64) -> RunSettings<'a> {
        RunSettings {
            vocab: &self.vocab,
            batch_sequences: self.spec.budgets.batch_sequences,
            metrics_every: self.spec.budgets.metrics_every,
            masking_scheme: self.spec.masking_scheme(),
            run_seed,
        }
    }

    fn detour_pipeline(&self) -> PipelineConfig {
        PipelineConfig::detour(
            self.spec.budgets.phase1_tokens,
            self.spec.budgets.decay_ratio,
            &self.spec.train,
            self.spec.data.window,
        )
    }

    fn baseline_pipeline(&self) -> PipelineConfig {
        PipelineConfig::mlm_baseline(
            self.spec.budgets.phase1_tokens,
            self.spec.budgets.decay_ratio,
            &self.spec.train,
            self.spec.data.window,
        )
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<TransformerModel<f32>> {
    let bytes = std::fs::read(path).map_err(|e| {
        DetourError::InvalidInput(format!("missing artifact {}: {}", path.display(), e))
    })?;
    Ok(load_checkpoint(&bytes)?.0)
}

struct RunArtifacts {
    final_model: TransformerModel<f32>,
    phase_models: Vec<TransformerModel<f32>>,
    total_tokens: u64,
    total_steps: u64,
}

fn run_dir(out: &Path, name: &str) -> PathBuf {
    out.join("runs").join(name)
}

/// Train (or, under resume, reload) one pipeline run.
fn ensure_run(
    env: &Env,
    out: &Path,
    resume: bool,
    name: &str,
    pipeline: &PipelineConfig,
    base: &TransformerModel<f32>,
    run_seed: u64,
) -> Result<RunArtifacts> {
    let dir = run_dir(out, name);
    let done = dir.join("done");
    if done.exists() {
        if !resume {
            return Err(DetourError::InvalidInput(format!(
                "run {} already exists; pass --resume to reuse it",
                name
            )));
        }
        let mut phase_models = Vec::new();
        for pi in 0..pipeline.phases.len() {
            phase_models.push(load_model(&dir.join(format!("phase{}.ckpt", pi)))?);
        }
        let metrics = crate::io::parse_metrics(&std::fs::read_to_string(
            dir.join("metrics.jsonl"),
        )?)?;
        let (total_tokens, total_steps) = totals(&metrics);
        return Ok(RunArtifacts {
            final_model: phase_models.last().unwrap().clone(),
            phase_models,
            total_tokens,
            total_steps,
        });
    }
    if dir.exists() {
        // partial prior outputs
        if !resume {
            return Err(DetourError::InvalidInput(format!(
                "partial prior outputs for run {}; pass --resume",
                name
            )));
        }
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;

    let mut stream = env.domain_stream()?;
    let opt = OptimizerState::new(&base.config, env.spec.adam);
    let outcome = run_pipeline(
        base.clone(),
        opt,
        pipeline,
        &mut stream,
        &env.run_settings(run_seed),
    )
    .map_err(|e| DetourError::InvalidInput(format!("run {}: {}", name, e)))?;
    let mut cum = 0u64;
    for (pi, (snapshot, phase)) in outcome
        .phase_snapshots
        .iter()
        .zip(&pipeline.phases)
        .enumerate()
    {
        cum += phase.token_budget;
        let meta = CheckpointMeta {
            phase: format!("{}/phase{}", name, pi),
            run_seed,
            data_seed: env.spec.data_seed,
            tokens: cum,
        };
        write_file(
            &dir.join(format!("phase{}.ckpt", pi)),
            &save_checkpoint(snapshot, &meta),
        )?;
    }
    write_file(
        &dir.join("metrics.jsonl"),
        write_metrics(&outcome.metrics).as_bytes(),
    )?;
    let (total_tokens, total_steps) = totals(&outcome.metrics);
    write_file(&done, b"ok\n")?;
    Ok(RunArtifacts {
        final_model: outcome.model,
        phase_models: outcome.phase_snapshots,
        total_tokens,
        total_steps,
    })
}

fn totals(metrics: &[crate::trainer::MetricsRecord]) -> (u64, u64) {
    let mut by_phase: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for m in metrics {
        let e = by_phase.entry(m.phase).or_insert((0, 0));
        e.0 = e.0.max(m.tokens);
        e.1 = e.1.max(m.step);
    }
    by_phase.values().fold((0, 0), |(t, s), (pt, ps)| (t + pt, s + ps))
}

fn ensure_base(env: &Env, out: &Path, resume: bool) -> Result<TransformerModel<f32>> {
    let path = out.join("base").join("base.ckpt");
    if path.exists() && resume {
        return load_model(&path);
    }
    let spec = &env.spec;
    let init = init_model::<f32>(&spec.model, mix_seed(&[spec.data_seed, 100]))?;
    let objective = if spec.model.mask_token_id.is_some() {
        Objective::Mlm
    } else {
        Objective::Clm
    };
    // base pretraining on the general distribution at the original masking
    // rate, single warmup-then-constant phase
    let mut settings = spec.train;
    settings.mask_rate_phase1 = spec.train.mask_rate_decay;
    let mut pipeline = PipelineConfig::two_phase(
        objective,
        objective,
        spec.budgets.base_tokens,
        0.0,
        &settings,
        spec.data.window,
    );
    pipeline.phases.truncate(1);
    pipeline.decay_ratio = 0.0;
    let mut stream = TokenStream::new(pack_stream(
        &env.general_corpus,
        spec.data.window,
        env.vocab.eos_id,
    )?)?;
    let outcome = run_pipeline(
        init,
        OptimizerState::new(&spec.model, spec.adam),
        &pipeline,
        &mut stream,
        &env.run_settings(mix_seed(&[spec.data_seed, 101])),
    )?;
    let meta = CheckpointMeta {
        phase: "base".into(),
        run_seed: mix_seed(&[spec.data_seed, 101]),
        data_seed: spec.data_seed,
        tokens: spec.budgets.base_tokens,
    };
    write_file(&path, &save_checkpoint(&outcome.model, &meta))?;
    write_file(
        &out.join("base").join("metrics.jsonl"),
        write_metrics(&outcome.metrics).as_bytes(),
    )?;
    Ok(outcome.model)
}

fn probe_model(
    env: &Env,
    model: &TransformerModel<f32>,
    model_name: &str,
) -> Result<Vec<(String, ProbeResult)>> {
    let mut out = Vec::new();
    for task in &env.probe_tasks {
        let reps = model.extract_representations(
            &task.texts,
            env.spec.probe.layer,
            env.mode,
            env.vocab.pad_id,
        )?;
        let r = linear_probe(
            &reps,
            &task.labels,
            &env.spec.probe.seeds,
            &ProbeConfig::default(),
            &task.name,
        )?;
        out.push((model_name.to_string(), r));
    }
    Ok(out)
}

/// task x (run-seed x probe-seed) score grid for the paired bootstrap.
fn probe_grid(results: &[Vec<(String, ProbeResult)>]) -> Vec<Vec<f64>> {
    let n_tasks = results[0].len();
    (0..n_tasks)
        .map(|t| {
            results
                .iter()
                .flat_map(|per_run| per_run[t].1.per_seed_f1.iter().copied())
                .collect()
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn needle_probe_config(env: &Env, seed: u64) -> NeedleProbeConfig {
    let n = &env.spec.needle;
    NeedleProbeConfig {
        hidden: n.probe_hidden,
        dropout: n.probe_dropout,
        epochs: n.probe_epochs,
        lr: n.probe_lr,
        batch_size: n.probe_batch,
        layer: None,
        seed,
    }
}

fn needle_dataset(env: &Env) -> Result<NeedleDataset> {
    let cfg = NeedleDatasetConfig {
        lengths: env.spec.needle.lengths.clone(),
        positions: NeedleDatasetConfig::desk(2).positions,
        pairs_per_cell: env.spec.needle.pairs_per_cell,
        split: (0.70, 0.15, 0.15),
    };
    let templates = desk_templates(&env.vocab)?;
    generate_needle_dataset(
        &cfg,
        &templates,
        &env.needle_corpus,
        mix_seed(&[env.spec.data_seed, 21]),
    )
}

fn needle_eval_model(
    env: &Env,
    model: &TransformerModel<f32>,
    ds: &NeedleDataset,
) -> Result<NeedleReport> {
    let probe = train_needle_probe(
        model,
        &ds.train,
        &ds.val,
        &needle_probe_config(env, mix_seed(&[env.spec.data_seed, 40])),
        env.mode,
        env.vocab.eos_id,
        env.vocab.pad_id,
    )?;
    evaluate_needle(
        &probe,
        model,
        &ds.test,
        env.mode,
        env.vocab.eos_id,
        env.vocab.pad_id,
    )
}

pub struct ExperimentOutcome {
    pub manifest: RunManifest,
    pub reports: BTreeMap<String, String>,
}

/// Which standard pipeline a standalone `train` invocation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineKind {
    Detour,
    Baseline,
    ReverseDetour,
    ClmBaseline,
}

impl PipelineKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "detour" => Some(PipelineKind::Detour),
            "baseline" => Some(PipelineKind::Baseline),
            "reverse-detour" => Some(PipelineKind::ReverseDetour),
            "clm-baseline" => Some(PipelineKind::ClmBaseline),
            _ => None,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            PipelineKind::Detour => "detour",
            PipelineKind::Baseline => "baseline",
            PipelineKind::ReverseDetour => "reverse_detour",
            PipelineKind::ClmBaseline => "clm_baseline",
        }
    }
}

/// Train one pipeline from the spec (pretraining the shared base first if
/// needed); returns the final checkpoint path.
pub fn train_single(
    spec: &ExperimentSpec,
    out: &Path,
    kind: PipelineKind,
    run_seed: u64,
    resume: bool,
) -> Result<PathBuf> {
    spec.validate()?;
    std::fs::create_dir_all(out)?;
    let env = Env::build(spec)?;
    let base = ensure_base(&env, out, resume)?;
    let pipeline = match kind {
        PipelineKind::Detour => env.detour_pipeline(),
        PipelineKind::Baseline => env.baseline_pipeline(),
        PipelineKind::ReverseDetour => PipelineConfig::reverse_detour(
            spec.budgets.phase1_tokens,
            spec.budgets.decay_ratio,
            &spec.train,
            spec.data.window,
        ),
        PipelineKind::ClmBaseline => PipelineConfig::clm_baseline(
            spec.budgets.phase1_tokens,
            spec.budgets.decay_ratio,
            &spec.train,
            spec.data.window,
        ),
    };
    let name = format!("{}_s{}", kind.name(), run_seed);
    let arts = ensure_run(&env, out, resume, &name, &pipeline, &base, run_seed)?;
    let _ = arts;
    Ok(run_dir(out, &name).join(format!("phase{}.ckpt", pipeline.phases.len() - 1)))
}

/// Emit the corpus, evaluation and vocab files described by the spec.
pub fn write_data_files(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    spec.validate()?;
    let env = Env::build(spec)?;
    std::fs::create_dir_all(out)?;
    write_file(
        &out.join("general.txt"),
        crate::io::write_corpus(&env.general_corpus).as_bytes(),
    )?;
    write_file(
        &out.join("domain.txt"),
        crate::io::write_corpus(&env.domain_corpus).as_bytes(),
    )?;
    write_file(
        &out.join("eval.txt"),
        crate::io::write_corpus(&env.eval_texts).as_bytes(),
    )?;
    write_file(
        &out.join("vocab.tsv"),
        crate::io::write_vocab(&env.vocab).as_bytes(),
    )?;
    Ok(())
}

/// Generate the needle dataset splits described by the spec.
pub fn write_needle_files(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    spec.validate()?;
    let env = Env::build(spec)?;
    let ds = needle_dataset(&env)?;
    for (split, examples) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        write_file(
            &out.join(format!("{}.csv", split)),
            crate::io::write_needle_examples(examples).as_bytes(),
        )?;
    }
    Ok(())
}

/// Execute one experiment spec end to end.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path, resume: bool) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let started = std::time::Instant::now();
    let runs_dir = out.join("runs");
    if !resume && runs_dir.exists() && runs_dir.read_dir()?.next().is_some() {
        return Err(DetourError::InvalidInput(format!(
            "prior outputs exist under {}; pass --resume or clean the directory",
            runs_dir.display()
        )));
    }
    std::fs::create_dir_all(out)?;
    let resolved = spec.to_toml();
    write_file(&out.join("resolved_spec.toml"), resolved.as_bytes())?;

    let env = Env::build(spec)?;
    let base = ensure_base(&env, out, resume)?;

    let mut run_names: Vec<String> = Vec::new();
    let reports = match spec.kind {
        ExperimentKind::DetourVsBaseline => {
            analyze_detour_vs_baseline(&env, out, resume, &base, &mut run_names)?
        }
        ExperimentKind::FreezeSuite => analyze_freeze(&env, out, resume, &base, &mut run_names)?,
        ExperimentKind::DecaySweep => analyze_sweep(&env, out, resume, &base, &mut run_names)?,
        ExperimentKind::TransplantSuite => {
            analyze_transplant(&env, out, resume, &base, &mut run_names)?
        }
        ExperimentKind::NeedleSuite => analyze_needle(&env, out, resume, &base, &mut run_names)?,
        ExperimentKind::ReverseDirection => {
            analyze_reverse(&env, out, resume, &base, &mut run_names)?
        }
    };
    let files = reports.finish();
    for (name, contents) in &files {
        write_file(&out.join("reports").join(name), contents.as_bytes())?;
    }

    let mut manifest = RunManifest {
        kind: spec.kind.name().to_string(),
        spec_hash: sha256_hex(resolved.as_bytes()),
        seeds: spec.seeds.clone(),
        runs: run_names,
        checkpoints: BTreeMap::new(),
        wall_secs: started.elapsed().as_secs_f64(),
    };
    manifest.collect_checkpoints(out)?;
    write_file(&out.join("manifest.json"), manifest.to_json().as_bytes())?;
    Ok(ExperimentOutcome {
        manifest,
        reports: files,
    })
}

fn analyze_detour_vs_baseline(
    env: &Env,
    out: &Path,
    resume: bool,
    base: &TransformerModel<f32>,
    run_names: &mut Vec<String>,
) -> Result<Reports> {
    let spec = &env.spec;
    let mut reports = Reports::new();
    reports.note(format!("experiment: {}", spec.kind.name()));

    let detour_pipe = env.detour_pipeline();
    let baseline_pipe = env.baseline_pipeline();
    let mut detours = Vec::new();
    let mut baselines = Vec::new();
    for &s in &spec.seeds {
        let dn = format!("detour_s{}", s);
        let bn = format!("baseline_s{}", s);
        detours.push(ensure_run(env, out, resume, &dn, &detour_pipe, base, s)?);
        baselines.push(ensure_run(env, out, resume, &bn, &baseline_pipe, base, s)?);
        run_names.push(dn);
        run_names.push(bn);
    }
    let noise = ensure_run(
        env,
        out,
        resume,
        "noise",
        &baseline_pipe,
        base,
        spec.seed_noise_seed,
    )?;
    run_names.push("noise".into());

    // matched-compute contract
    for (d, b) in detours.iter().zip(&baselines) {
        if d.total_tokens != b.total_tokens || d.total_steps != b.total_steps {
            return Err(DetourError::InvalidInput(format!(
                "matched-compute violation: detour {} tokens / {} steps vs baseline {} / {}",
                d.total_tokens, d.total_steps, b.total_tokens, b.total_steps
            )));
        }
    }
    reports.section("matched compute");
    reports.note(format!(
        "all pipelines consumed {} tokens in {} steps",
        detours[0].total_tokens, detours[0].total_steps
    ));

    // divergence averaged over run seeds and CKA data-sampling seeds
    let n_layers = spec.model.n_layers;
    let mut per_sample: Vec<Vec<f64>> = Vec::new();
    for (d, b) in detours.iter().zip(&baselines) {
        let p = divergence_profile(
            &d.final_model,
            &b.final_model,
            &env.eval_texts,
            &spec.cka_seeds,
            spec.data.cka_sample,
            env.mode,
            env.vocab.pad_id,
        )?;
        per_sample.extend(p.per_seed);
    }
    let k = per_sample.len() as f64;
    let mut d_mean = vec![0.0; n_layers];
    let mut d_ci = vec![0.0; n_layers];
    for l in 0..n_layers {
        let m = per_sample.iter().map(|s| s[l]).sum::<f64>() / k;
        d_mean[l] = m;
        if per_sample.len() > 1 {
            let var =
                per_sample.iter().map(|s| (s[l] - m).powi(2)).sum::<f64>() / (k - 1.0);
            d_ci[l] = 1.96 * (var / k).sqrt();
        }
    }

    // seed-noise ratios on the full evaluation text set
    let mut nums = vec![0.0; n_layers];
    let mut dens = vec![0.0; n_layers];
    for (d, b) in detours.iter().zip(&baselines) {
        let clm = extract_set(&d.final_model, &env.eval_texts, env.mode, env.vocab.pad_id, "clm")?;
        let s1 = extract_set(&b.final_model, &env.eval_texts, env.mode, env.vocab.pad_id, "s1")?;
        let s2 = extract_set(&noise.final_model, &env.eval_texts, env.mode, env.vocab.pad_id, "s2")?;
        let r = seed_noise_ratio_from_reps(&clm, &s1, &s2)?;
        for l in 0..n_layers {
            nums[l] += r.numerator[l] / spec.seeds.len() as f64;
            dens[l] += r.denominator[l] / spec.seeds.len() as f64;
        }
    }
    let ratios: Vec<f64> = nums.iter().zip(&dens).map(|(n, d)| n / d).collect();
    reports.add_file(
        "divergence_ratio.csv",
        divergence_ratio_csv(&d_mean, &d_ci, &ratios, &nums, &dens),
    );
    reports.section("cka divergence (detour vs baseline, seed-noise normalized)");
    reports.note(format!("overall divergence: {:.4}", mean(&d_mean)));
    for l in 0..n_layers {
        reports.note(format!(
            "layer {}: d={:.4} +-{:.4}  r={:.2}",
            l, d_mean[l], d_ci[l], ratios[l]
        ));
    }
    let low_quarter = (n_layers / 4).max(1);
    let r_low = mean(&ratios[..low_quarter]);
    reports.soft_check(
        &format!("mean r over lowest quarter of layers ({:.2}) > 1", r_low),
        r_low > 1.0,
    );

    // probes + paired bootstrap
    let mut detour_probe_rows = Vec::new();
    let mut baseline_probe_rows = Vec::new();
    let mut detour_per_run = Vec::new();
    let mut baseline_per_run = Vec::new();
    for ((d, b), &s) in detours.iter().zip(&baselines).zip(&spec.seeds) {
        let dp = probe_model(env, &d.final_model, &format!("detour_s{}", s))?;
        let bp = probe_model(env, &b.final_model, &format!("baseline_s{}", s))?;
        detour_probe_rows.extend(dp.clone());
        baseline_probe_rows.extend(bp.clone());
        detour_per_run.push(dp);
        baseline_per_run.push(bp);
    }
    let grid_a = probe_grid(&detour_per_run);
    let grid_b = probe_grid(&baseline_per_run);
    let p = paired_bootstrap(
        &grid_a,
        &grid_b,
        env.spec.bootstrap_resamples,
        mix_seed(&[spec.data_seed, 50]),
    )?;
    let mut all_rows = detour_probe_rows.clone();
    all_rows.extend(baseline_probe_rows.clone());
    reports.add_file("probes.csv", probe_csv(&all_rows));
    reports.section("linear probes (frozen representations)");
    let domain_idx = 0usize;
    let mut wins = 0usize;
    for (i, &s) in spec.seeds.iter().enumerate() {
        let df = detour_per_run[i][domain_idx].1.mean_f1;
        let bf = baseline_per_run[i][domain_idx].1.mean_f1;
        reports.note(format!(
            "seed {}: domain probe detour {:.4} vs baseline {:.4}",
            s, df, bf
        ));
        if df >= bf {
            wins += 1;
        }
    }
    reports.note(format!(
        "paired bootstrap (detour vs baseline, {} cells): p = {}",
        grid_a.iter().map(|t| t.len()).sum::<usize>() * 2,
        p
    ));
    reports.soft_check(
        &format!(
            "detour domain-probe >= baseline in a majority of seeds ({}/{})",
            wins,
            spec.seeds.len()
        ),
        wins * 2 > spec.seeds.len(),
    );

    // needle grids on the first seed pair
    let ds = needle_dataset(env)?;
    let detour_needle = needle_eval_model(env, &detours[0].final_model, &ds)?;
    let baseline_needle = needle_eval_model(env, &baselines[0].final_model, &ds)?;
    reports.add_file(
        "needle_detour.csv",
        needle_csv(&detour_needle, &spec.needle.lengths),
    );
    reports.add_file(
        "needle_baseline.csv",
        needle_csv(&baseline_needle, &spec.needle.lengths),
    );
    reports.section("needle in haystack");
    reports.note(format!(
        "overall accuracy: detour {:.4} vs baseline {:.4}",
        detour_needle.overall_accuracy(),
        baseline_needle.overall_accuracy()
    ));
    reports.soft_check(
        "needle overall accuracy detour >= baseline",
        detour_needle.overall_accuracy() >= baseline_needle.overall_accuracy(),
    );
    Ok(reports)
}

fn analyze_freeze(
    env: &Env,
    out: &Path,
    resume: bool,
    base: &TransformerModel<f32>,
    run_names: &mut Vec<String>,
) -> Result<Reports> {
    let spec = &env.spec;
    let mut reports = Reports::new();
    reports.note(format!("experiment: {}", spec.kind.name()));
    let s0 = spec.seeds[0];
    let (low, mid) = (spec.freeze.low, spec.freeze.mid);
    let detour = env.detour_pipeline();
    let conditions: Vec<(String, PipelineConfig)> = vec![
        ("detour".into(), detour.clone()),
        ("baseline".into(), env.baseline_pipeline()),
        (
            "freeze_low_clm".into(),
            detour.clone().with_freeze(0, FreezeSpec::new(low.0, low.1)),
        ),
        (
            "freeze_low_decay".into(),
            detour.clone().with_freeze(1, FreezeSpec::new(low.0, low.1)),
        ),
        (
            "freeze_mid_clm".into(),
            detour.clone().with_freeze(0, FreezeSpec::new(mid.0, mid.1)),
        ),
    ];
    let mut arts = Vec::new();
    for (name, pipe) in &conditions {
        arts.push(ensure_run(env, out, resume, name, pipe, base, s0)?);
        run_names.push(name.clone());
    }

    // frozen-phase bit-identity checks against the phase-boundary snapshots
    reports.section("freeze interventions");
    for ((name, pipe), art) in conditions.iter().zip(&arts) {
        for (pi, phase) in pipe.phases.iter().enumerate() {
            let Some(freeze) = &phase.freeze else { continue };
            let before = if pi == 0 {
                base
            } else {
                &art.phase_models[pi - 1]
            };
            let after = &art.phase_models[pi];
            let mut ok = true;
            for ((id, a), (_, b)) in before
                .params
                .fields()
                .into_iter()
                .zip(after.params.fields())
            {
                let frozen = freeze.covers(id);
                if frozen && a != b {
                    ok = false;
                }
            }
            if !ok {
                return Err(DetourError::InvalidInput(format!(
                    "freeze violation in {} phase {}",
                    name, pi
                )));
            }
            reports.note(format!(
                "{}: layers {}..={} bit-identical across phase {} (verified)",
                name, freeze.lo, freeze.hi, pi
            ));
        }
    }

    // probes
    let mut rows = Vec::new();
    let mut per_cond = Vec::new();
    for ((name, _), art) in conditions.iter().zip(&arts) {
        let p = probe_model(env, &art.final_model, name)?;
        rows.extend(p.clone());
        per_cond.push(p);
    }
    reports.add_file("probes.csv", probe_csv(&rows));
    let domain_f1 = |i: usize| per_cond[i][0].1.mean_f1;
    let detour_f1 = domain_f1(0);
    let table: Vec<(String, f64, f64)> = conditions
        .iter()
        .enumerate()
        .map(|(i, (name, _))| (name.clone(), domain_f1(i), domain_f1(i) - detour_f1))
        .collect();
    reports.add_file("freeze.csv", freeze_csv(&table));
    for (name, f1, delta) in &table {
        reports.note(format!("{}: domain probe {:.4} ({:+.4} vs detour)", name, f1, delta));
    }
    // does freezing low layers drop the model back to baseline?
    let grid_low = probe_grid(&[per_cond[2].clone()]);
    let grid_base = probe_grid(&[per_cond[1].clone()]);
    let p = paired_bootstrap(
        &grid_low,
        &grid_base,
        spec.bootstrap_resamples,
        mix_seed(&[spec.data_seed, 51]),
    )?;
    reports.note(format!("freeze_low_clm vs baseline paired bootstrap: p = {}", p));
    Ok(reports)
}

fn analyze_sweep(
    env: &Env,
    out: &Path,
    resume: bool,
    base: &TransformerModel<f32>,
    run_names: &mut Vec<String>,
) -> Result<Reports> {
    let spec = &env.spec;
    let mut reports = Reports::new();
    reports.note(format!("experiment: {}", spec.kind.name()));
    let s0 = spec.seeds[0];
    let window = spec.data.window;
    let mut table = Vec::new();
    let mut per_ratio: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for objective in [Objective::Clm, Objective::Mlm] {
        let tag = match objective {
            Objective::Clm => "detour",
            Objective::Mlm => "baseline",
        };
        // the phase-1 trunk is shared; decay branches fork from its
        // (model, optimizer, stream) state
        let group = format!("sweep_{}", tag);
        let dir = run_dir(out, &group);
        let done = dir.join("done");
        if done.exists() && !resume {
            return Err(DetourError::InvalidInput(format!(
                "run {} already exists; pass --resume to reuse it",
                group
            )));
        }
        let reuse = done.exists() && resume;
        if dir.exists() && !reuse {
            std::fs::remove_dir_all(&dir)?;
        }
        let mut branch_models: Vec<(f64, u64, TransformerModel<f32>)> = Vec::new();
        if reuse {
            for &ratio in &spec.sweep_ratios {
                let t2 = decay_tokens(spec.budgets.phase1_tokens, ratio, window);
                let model = load_model(&dir.join(format!("r{}", ratio)).join("final.ckpt"))?;
                branch_models.push((ratio, t2, model));
            }
        } else {
            std::fs::create_dir_all(&dir)?;
            let mut trunk = PipelineConfig::two_phase(
                objective,
                objective,
                spec.budgets.phase1_tokens,
                0.0,
                &spec.train,
                window,
            );
            trunk.phases.truncate(1);
            trunk.decay_ratio = 0.0;
            let mut stream = env.domain_stream()?;
            let outcome = run_pipeline(
                base.clone(),
                OptimizerState::new(&base.config, spec.adam),
                &trunk,
                &mut stream,
                &env.run_settings(s0),
            )?;
            for &ratio in &spec.sweep_ratios {
                let t2 = decay_tokens(spec.budgets.phase1_tokens, ratio, window);
                let decay_obj = match objective {
                    Objective::Clm => Objective::Mlm,
                    Objective::Mlm => Objective::Mlm,
                };
                let mut decay = PipelineConfig::two_phase(
                    decay_obj,
                    decay_obj,
                    t2,
                    0.0,
                    &spec.train,
                    window,
                );
                decay.phases.truncate(1);
                decay.decay_ratio = 0.0;
                decay.phases[0].schedule = crate::trainer::Schedule::SqrtDecay {
                    floor_fraction: spec.train.floor_fraction,
                };
                decay.phases[0].mask_rate = spec.train.mask_rate_decay;
                let mut branch_stream = stream.clone();
                let branch = run_pipeline(
                    outcome.model.clone(),
                    outcome.opt.clone(),
                    &decay,
                    &mut branch_stream,
                    &env.run_settings(s0),
                )?;
                let meta = CheckpointMeta {
                    phase: format!("{}/r{}", group, ratio),
                    run_seed: s0,
                    data_seed: spec.data_seed,
                    tokens: spec.budgets.phase1_tokens + t2,
                };
                write_file(
                    &dir.join(format!("r{}", ratio)).join("final.ckpt"),
                    &save_checkpoint(&branch.model, &meta),
                )?;
                branch_models.push((ratio, t2, branch.model));
            }
            write_file(&done, b"ok\n")?;
        }
        run_names.push(group.clone());
        for (ratio, t2, model) in &branch_models {
            let probe = probe_model(env, model, &format!("{}_r{}", tag, ratio))?;
            per_ratio
                .entry(format!("{}|{}", ratio, tag))
                .or_insert((probe[0].1.mean_f1, *t2));
        }
    }
    for &ratio in &spec.sweep_ratios {
        let (detour_f1, t2) = per_ratio[&format!("{}|detour", ratio)];
        let (baseline_f1, _) = per_ratio[&format!("{}|baseline", ratio)];
        table.push((ratio, t2, detour_f1, baseline_f1));
    }
    reports.add_file("sweep.csv", sweep_csv(&table));
    reports.section("decay-ratio sweep (domain probe F1)");
    for (ratio, t2, d, b) in &table {
        reports.note(format!(
            "ratio {}: decay {} tokens, detour {:.4}, baseline {:.4}",
            ratio, t2, d, b
        ));
    }
    Ok(reports)
}

fn decay_tokens(phase1: u64, ratio: f64, window: usize) -> u64 {
    let w = window as u64;
    (((phase1 as f64 * ratio) as u64 / w).max(1)) * w
}

fn analyze_transplant(
    env: &Env,
    out: &Path,
    resume: bool,
    base: &TransformerModel<f32>,
    run_names: &mut Vec<String>,
) -> Result<Reports> {
    let spec = &env.spec;
    let mut reports = Reports::new();
    reports.note(format!("experiment: {}", spec.kind.name()));
    let s0 = spec.seeds[0];
    let detour = ensure_run(env, out, resume, "detour", &env.detour_pipeline(), base, s0)?;
    let baseline = ensure_run(
        env,
        out,
        resume,
        "baseline",
        &env.baseline_pipeline(),
        base,
        s0,
    )?;
    run_names.push("detour".into());
    run_names.push("baseline".into());

    let n = spec.model.n_layers;
    let (low, mid) = (spec.freeze.low, spec.freeze.mid);
    let late = (mid.1 + 1, n - 1);
    let specs: Vec<(String, TransplantSpec)> = vec![
        (
            "low".into(),
            TransplantSpec { lo: low.0, hi: low.1, components: TransplantComponents::all() },
        ),
        (
            "mid".into(),
            TransplantSpec { lo: mid.0, hi: mid.1, components: TransplantComponents::all() },
        ),
        (
            "late".into(),
            TransplantSpec { lo: late.0, hi: late.1, components: TransplantComponents::all() },
        ),
        (
            "all_attention".into(),
            TransplantSpec { lo: 0, hi: n - 1, components: TransplantComponents::attention_only() },
        ),
        (
            "all_mlp".into(),
            TransplantSpec { lo: 0, hi: n - 1, components: TransplantComponents::mlp_only() },
        ),
    ];

    // references first
    let clm_f1 = probe_model(env, &detour.final_model, "detour")?[0].1.mean_f1;
    let mlm_f1 = probe_model(env, &baseline.final_model, "baseline")?[0].1.mean_f1;
    let gap = clm_f1 - mlm_f1;
    let mut table = vec![
        ("baseline".to_string(), mlm_f1, 0.0, 0.0),
        ("detour".to_string(), clm_f1, gap, 100.0),
    ];
    for (name, tspec) in &specs {
        // blocks come from the CLM model, everything else stays MLM
        let hybrid = transplant(&baseline.final_model, &detour.final_model, tspec)?;
        let meta = CheckpointMeta {
            phase: format!("transplant/{}", name),
            run_seed: s0,
            data_seed: spec.data_seed,
            tokens: detour.total_tokens,
        };
        write_file(
            &run_dir(out, &format!("transplant_{}", name)).join("final.ckpt"),
            &save_checkpoint(&hybrid, &meta),
        )?;
        run_names.push(format!("transplant_{}", name));
        let f1 = probe_model(env, &hybrid, name)?[0].1.mean_f1;
        let delta = f1 - mlm_f1;
        let recovery = if gap.abs() > 1e-12 { 100.0 * delta / gap } else { 0.0 };
        table.push((name.clone(), f1, delta, recovery));
    }
    reports.add_file("transplant.csv", transplant_csv(&table));
    reports.section("layer/component transplants (domain probe F1)");
    for (name, f1, delta, rec) in &table {
        reports.note(format!(
            "{}: F1 {:.4} ({:+.4}, recovery {:.0}%)",
            name, f1, delta, rec
        ));
    }
    Ok(reports)
}

fn analyze_needle(
    env: &Env,
    out: &Path,
    resume: bool,
    base: &TransformerModel<f32>,
    run_names: &mut Vec<String>,
) -> Result<Reports> {
    let spec = &env.spec;
    let mut reports = Reports::new();
    reports.note(format!("experiment: {}", spec.kind.name()));
    let s0 = spec.seeds[0];
    let detour = ensure_run(env, out, resume, "detour", &env.detour_pipeline(), base, s0)?;
    let baseline = ensure_run(
        env,
        out,
        resume,
        "baseline",
        &env.baseline_pipeline(),
        base,
        s0,
    )?;
    run_names.push("detour".into());
    run_names.push("baseline".into());

    let ds = needle_dataset(env)?;
    // persist the dataset alongside the reports
    for (split, examples) in [
        ("train", &ds.train),
        ("val", &ds.val),
        ("test", &ds.test),
    ] {
        write_file(
            &out.join("needle").join(format!("{}.csv", split)),
            crate::io::write_needle_examples(examples).as_bytes(),
        )?;
    }
    let dn = needle_eval_model(env, &detour.final_model, &ds)?;
    let bn = needle_eval_model(env, &baseline.final_model, &ds)?;
    reports.add_file("needle_detour.csv", needle_csv(&dn, &spec.needle.lengths));
    reports.add_file("needle_baseline.csv", needle_csv(&bn, &spec.needle.lengths));
    reports.section("needle in haystack");
    reports.note(format!(
        "overall: detour {:.4} vs baseline {:.4}",
        dn.overall_accuracy(),
        bn.overall_accuracy()
    ));
    reports.soft_check(
        "needle overall accuracy detour >= baseline",
        dn.overall_accuracy() >= bn.overall_accuracy(),
    );
    Ok(reports)
}

fn analyze_reverse(
    env: &Env,
    out: &Path,
    resume: bool,
    base: &TransformerModel<f32>,
    run_names: &mut Vec<String>,
) -> Result<Reports> {
    let spec = &env.spec;
    let mut reports = Reports::new();
    reports.note(format!("experiment: {} (decoder-start)", spec.kind.name()));
    let s0 = spec.seeds[0];
    let window = spec.data.window;
    let reverse = PipelineConfig::reverse_detour(
        spec.budgets.phase1_tokens,
        spec.budgets.decay_ratio,
        &spec.train,
        window,
    );
    let clm_base = PipelineConfig::clm_baseline(
        spec.budgets.phase1_tokens,
        spec.budgets.decay_ratio,
        &spec.train,
        window,
    );
    let detour = ensure_run(env, out, resume, "reverse_detour", &reverse, base, s0)?;
    let baseline = ensure_run(env, out, resume, "reverse_baseline", &clm_base, base, s0)?;
    let noise = ensure_run(
        env,
        out,
        resume,
        "reverse_noise",
        &clm_base,
        base,
        spec.seed_noise_seed,
    )?;
    run_names.extend(["reverse_detour".into(), "reverse_baseline".into(), "reverse_noise".into()]);
    if spec.model.mask_token_id.is_none() && detour.final_model.config.mask_token_id.is_some() {
        reports.note(format!(
            "mask token {} added at the MLM boundary; embedding rows grew {} -> {}",
            detour.final_model.config.mask_token_id.unwrap(),
            spec.model.vocab_size,
            detour.final_model.config.vocab_size
        ));
    }

    let n_layers = spec.model.n_layers;
    let profile = divergence_profile(
        &detour.final_model,
        &baseline.final_model,
        &env.eval_texts,
        &spec.cka_seeds,
        spec.data.cka_sample,
        env.mode,
        env.vocab.pad_id,
    )?;
    let clm = extract_set(&detour.final_model, &env.eval_texts, env.mode, env.vocab.pad_id, "rev")?;
    let s1 = extract_set(&baseline.final_model, &env.eval_texts, env.mode, env.vocab.pad_id, "s1")?;
    let s2 = extract_set(&noise.final_model, &env.eval_texts, env.mode, env.vocab.pad_id, "s2")?;
    let ratio = seed_noise_ratio_from_reps(&clm, &s1, &s2)?;
    reports.add_file(
        "divergence_ratio.csv",
        divergence_ratio_csv(
            &profile.d_mean,
            &profile.d_ci95,
            &ratio.r,
            &ratio.numerator,
            &ratio.denominator,
        ),
    );
    reports.section("decoder-start divergence (MLM detour vs CLM baseline)");
    reports.note(format!("overall divergence: {:.4}", profile.overall()));
    for l in 0..n_layers {
        reports.note(format!(
            "layer {}: d={:.4} +-{:.4}  r={:.2}",
            l, profile.d_mean[l], profile.d_ci95[l], ratio.r[l]
        ));
    }
    Ok(reports)
}

