//! `sweettok` command-line interface.

mod artifacts;
mod manifest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sweettok::dqae::{read_tokens, write_tokens, TokenRecord};
use sweettok::grid::{encode_ppm, reconstruction_grid};
use sweettok::mlc::{build_graph, build_vocabulary, indices_to_words, pseudo_embeddings, Codebook, TextEmbeddings};
use sweettok::training::{format_ablation, run_ablation, LossBreakdown};
use sweettok::videodata::{
    compute_metrics, corpus_captions, save_clip, synthesize_corpus, CaptionCorpus, MetricsReport, MotionSpec,
};
use sweettok::{DType, Error, Mode, Preset, Result, RunConfig, Strategy, SubBook, SweetTok, Trainer, VideoClip};

use artifacts::{load_checkpoint, load_clips, load_dataset, resolve_codebook, save_checkpoint, CHECKPOINT_FILE};
use manifest::{content_hash, unix_now, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "sweettok", version, about = "Video tokenizer with a language codebook")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// TOML config layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training and initialization seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint file to load (or resume from).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true, default_value = "desk")]
    preset: Preset,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic moving-shapes corpus and its captions.
    Synth {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Builds vocabulary, co-occurrence graph and embedding files.
    BuildCodebook {
        #[arg(long)]
        captions: PathBuf,
        /// Embedding file, or `pseudo` for hashed unit vectors.
        #[arg(long, default_value = "pseudo")]
        embeddings: String,
    },
    /// Trains the tokenizer, resuming from `--checkpoint` when given.
    Train {
        /// Stop after this global step instead of `train.total_steps`.
        #[arg(long)]
        stop_at: Option<usize>,
    },
    /// Trains only the spatial branch on first frames.
    FinetuneImage {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Writes the token file for a clip or a directory of clips.
    Encode {
        #[arg(long)]
        clips: PathBuf,
    },
    /// Regenerates clips from a token file.
    Decode {
        #[arg(long)]
        tokens: PathBuf,
    },
    /// Round trip with metrics and a comparison grid per clip.
    Reconstruct {
        #[arg(long)]
        clips: PathBuf,
    },
    /// Trains every compression strategy and tabulates final errors.
    Ablate {
        #[arg(long)]
        steps: Option<usize>,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Prints the words behind a clip's spatial and temporal tokens.
    Words {
        #[arg(long)]
        clip: PathBuf,
    },
    /// Mean reconstruction metrics over clips.
    Eval {
        #[arg(long)]
        clips: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Synth { .. } => "synth",
            Self::BuildCodebook { .. } => "build-codebook",
            Self::Train { .. } => "train",
            Self::FinetuneImage { .. } => "finetune-image",
            Self::Encode { .. } => "encode",
            Self::Decode { .. } => "decode",
            Self::Reconstruct { .. } => "reconstruct",
            Self::Ablate { .. } => "ablate",
            Self::Words { .. } => "words",
            Self::Eval { .. } => "eval",
        }
    }
}

/// Shared state for one command invocation.
struct Run {
    global: Global,
    cfg: RunConfig,
    started: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(global: Global) -> Result<Self> {
        let mut cfg = match &global.config {
            Some(path) => RunConfig::load(path, global.preset)?,
            None => RunConfig::preset(global.preset),
        };
        if let Some(seed) = global.seed {
            cfg.train.seed = seed;
            cfg.model.init_seed = seed;
        }
        let inputs = global.config.iter().cloned().collect();
        Ok(Self {
            global,
            cfg,
            started: unix_now(),
            inputs,
            outputs: Vec::new(),
        })
    }

    fn seed(&self) -> u64 {
        self.cfg.train.seed
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self
            .global
            .out
            .clone()
            .ok_or_else(|| Error::validation("--out", "this command writes files and needs an output directory"))?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn checkpoint_path(&self) -> Result<&Path> {
        self.global
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::validation("--checkpoint", "required by this command"))
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(path);
        Ok(())
    }

    fn finish(self, command: &str) -> Result<()> {
        let Some(dir) = self.global.out.as_deref() else {
            return Ok(());
        };
        let outputs = self
            .outputs
            .iter()
            .map(|p| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| p.clone()))
            .collect();
        RunManifest {
            command: command.into(),
            config_path: self.global.config.clone(),
            preset: match self.global.preset {
                Preset::Paper => "paper".into(),
                Preset::Desk => "desk".into(),
            },
            config_hash: content_hash(&self.cfg.to_toml()),
            seed: self.seed(),
            inputs: self.inputs,
            outputs,
            started_unix: self.started,
            finished_unix: unix_now(),
        }
        .write(dir)
    }
}

fn synth(run: &mut Run, count: Option<usize>) -> Result<()> {
    let dir = run.out_dir()?;
    let m = &run.cfg.model;
    let spec = MotionSpec::new(m.frames, m.height, m.width);
    let n = count.unwrap_or(run.cfg.data.synthetic_clips);
    let corpus = synthesize_corpus(run.global.seed.unwrap_or(run.cfg.data.synthetic_seed), n, &spec)?;
    let clips_dir = dir.join("clips");
    std::fs::create_dir_all(&clips_dir).map_err(|e| Error::io(&clips_dir, e))?;
    for c in &corpus {
        let path = clips_dir.join(format!("{}.swtv", c.clip.clip_id));
        save_clip(&path, &c.clip)?;
        run.outputs.push(path);
    }
    run.write(dir.join("captions.tsv"), corpus_captions(&corpus).to_text().as_bytes())?;
    println!("clips={n}");
    Ok(())
}

fn build_codebook(run: &mut Run, captions: &Path, embeddings: &str) -> Result<()> {
    let dir = run.out_dir()?;
    run.inputs.push(captions.to_path_buf());
    let corpus = CaptionCorpus::load(captions)?;
    let m = &run.cfg.model;
    let vocab = build_vocabulary(&corpus, m.min_freq)?;
    let graph = build_graph(&corpus, &vocab, m.window);
    let emb = match embeddings {
        "pseudo" => pseudo_embeddings(&vocab, m.d_text, 0),
        path => {
            run.inputs.push(path.into());
            TextEmbeddings::load(Path::new(path))?
        }
    };
    let codebook = Codebook::new(vocab, emb, graph, DType::F32)?;
    for (name, bytes) in codebook.files() {
        run.write(dir.join(name), &bytes)?;
    }
    println!(
        "spatial={} temporal={}",
        codebook.span(SubBook::Spatial).len(),
        codebook.span(SubBook::Temporal).len()
    );
    Ok(())
}

fn log_writer(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn write_log(log: &[LossBreakdown], path: &Path, mut w: BufWriter<File>) -> Result<()> {
    for r in log {
        writeln!(w, "{}", r.log_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn clip_tensors(clips: &[VideoClip]) -> Result<Vec<sweettok::Tensor>> {
    clips.iter().map(|c| c.to_tensor(DType::F32)).collect()
}

fn train(run: &mut Run, stop_at: Option<usize>) -> Result<()> {
    let dir = run.out_dir()?;
    let resume = match run.global.checkpoint.clone() {
        Some(path) => {
            run.inputs.push(path.clone());
            let loaded = load_checkpoint(&path)?;
            if run.global.config.is_none() {
                run.cfg = loaded.cfg.clone();
            }
            Some(loaded)
        }
        None => None,
    };
    let data = load_dataset(&run.cfg)?;
    let (model, mut trainer) = match resume {
        Some(loaded) => {
            let mut trainer = Trainer::new(&run.cfg.train, &loaded.model.params)?;
            trainer.restore(&loaded.checkpoint, &loaded.model.params)?;
            (loaded.model, trainer)
        }
        None => {
            let model = SweetTok::new(&run.cfg.model, resolve_codebook(&run.cfg, &data)?, DType::F32)?;
            let trainer = Trainer::new(&run.cfg.train, &model.params)?;
            (model, trainer)
        }
    };
    let clips = clip_tensors(&data.clips)?;
    let end = stop_at.unwrap_or(run.cfg.train.total_steps).min(run.cfg.train.total_steps);
    let steps = end.saturating_sub(trainer.step);
    let log = trainer.fit(&model, &clips, steps, Mode::Video, |_| {})?;
    let (log_path, w) = log_writer(&dir, "train.log")?;
    write_log(&log, &log_path, w)?;
    run.outputs.push(log_path);
    let ck = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ck, &run.cfg, &model, &trainer)?;
    run.outputs.push(ck);
    if let Some(last) = log.last() {
        println!("step={} l2={:e} vq={:e}", trainer.step, last.l2, last.vq);
    }
    Ok(())
}

fn finetune_image(run: &mut Run, steps: Option<usize>) -> Result<()> {
    let dir = run.out_dir()?;
    let path = run.checkpoint_path()?.to_path_buf();
    run.inputs.push(path.clone());
    let loaded = load_checkpoint(&path)?;
    if run.global.config.is_none() {
        run.cfg.model = loaded.cfg.model.clone();
        run.cfg.data = loaded.cfg.data.clone();
    }
    let data = load_dataset(&run.cfg)?;
    let frames: Vec<VideoClip> = data.clips.iter().map(VideoClip::first_frame).collect();
    let images = clip_tensors(&frames)?;
    let mut trainer = Trainer::new(&run.cfg.train, &loaded.model.params)?;
    let steps = steps.unwrap_or(run.cfg.train.total_steps);
    let log = trainer.fit(&loaded.model, &images, steps, Mode::Image, |_| {})?;
    let (log_path, w) = log_writer(&dir, "finetune.log")?;
    write_log(&log, &log_path, w)?;
    run.outputs.push(log_path);
    let ck = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ck, &run.cfg, &loaded.model, &trainer)?;
    run.outputs.push(ck);
    Ok(())
}

fn load_model(run: &mut Run) -> Result<SweetTok> {
    let path = run.checkpoint_path()?.to_path_buf();
    run.inputs.push(path.clone());
    let loaded = load_checkpoint(&path)?;
    run.cfg = loaded.cfg;
    Ok(loaded.model)
}

fn encode(run: &mut Run, clips_path: &Path) -> Result<()> {
    let dir = run.out_dir()?;
    let model = load_model(run)?;
    run.inputs.push(clips_path.to_path_buf());
    let mut records = Vec::new();
    for clip in load_clips(clips_path, &run.cfg)? {
        records.push(TokenRecord {
            tokens: model.tokenize(&clip.to_tensor(DType::F32)?)?,
            clip_id: clip.clip_id,
        });
    }
    let path = dir.join("tokens.tsv");
    write_tokens(&path, &records)?;
    run.outputs.push(path);
    Ok(())
}

fn decode(run: &mut Run, tokens: &Path) -> Result<()> {
    let dir = run.out_dir()?;
    let model = load_model(run)?;
    run.inputs.push(tokens.to_path_buf());
    for record in read_tokens(tokens)? {
        let clip = VideoClip::from_tensor(&record.clip_id, &model.decode_indices(&record.tokens)?)?;
        let path = dir.join(format!("{}.swtv", record.clip_id));
        save_clip(&path, &clip)?;
        run.outputs.push(path);
    }
    Ok(())
}

fn round_trip(model: &SweetTok, clip: &VideoClip) -> Result<VideoClip> {
    VideoClip::from_tensor(&clip.clip_id, &model.reconstruct(&clip.to_tensor(DType::F32)?)?)
}

fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    let n = reports.len().max(1) as f64;
    let l2 = reports.iter().map(|r| r.l2).sum::<f64>() / n;
    MetricsReport {
        l2,
        psnr: if l2 == 0.0 { f64::INFINITY } else { -10.0 * l2.log10() },
        ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
    }
}

fn reconstruct(run: &mut Run, clips_path: &Path) -> Result<()> {
    let dir = run.out_dir()?;
    let model = load_model(run)?;
    run.inputs.push(clips_path.to_path_buf());
    let mut reports = Vec::new();
    for clip in load_clips(clips_path, &run.cfg)? {
        let recon = round_trip(&model, &clip)?;
        let id = &clip.clip_id;
        let path = dir.join(format!("{id}.swtv"));
        save_clip(&path, &recon)?;
        run.outputs.push(path);
        let (w, h, pixels) = reconstruction_grid(&clip, &recon)?;
        run.write(dir.join(format!("{id}.ppm")), &encode_ppm(w, h, &pixels))?;
        let report = compute_metrics(&clip, &recon)?;
        run.write(dir.join(format!("{id}.metrics.json")), (report.to_json() + "\n").as_bytes())?;
        reports.push(report);
    }
    let mean = mean_report(&reports);
    println!("{}", mean.to_json());
    Ok(())
}

fn eval(run: &mut Run, clips_path: &Path) -> Result<()> {
    let model = load_model(run)?;
    run.inputs.push(clips_path.to_path_buf());
    let reports = load_clips(clips_path, &run.cfg)?
        .iter()
        .map(|clip| compute_metrics(clip, &round_trip(&model, clip)?))
        .collect::<Result<Vec<_>>>()?;
    let json = mean_report(&reports).to_json();
    println!("{json}");
    if let Some(dir) = run.global.out.clone() {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        run.write(dir.join("metrics.json"), (json + "\n").as_bytes())?;
    }
    Ok(())
}

fn ablate(run: &mut Run, steps: Option<usize>, seeds: u64) -> Result<()> {
    let dir = run.out_dir()?;
    let data = load_dataset(&run.cfg)?;
    let codebook = resolve_codebook(&run.cfg, &data)?;
    let clips = clip_tensors(&data.clips)?;
    let steps = steps.unwrap_or(run.cfg.train.total_steps);
    let mut rows = Vec::new();
    for seed in run.seed()..run.seed() + seeds {
        rows.extend(run_ablation(
            &Strategy::ALL,
            &clips,
            &codebook,
            &run.cfg.model,
            &run.cfg.train,
            steps,
            seed,
        )?);
    }
    let table = format_ablation(&rows);
    print!("{table}");
    run.write(dir.join("ablation.tsv"), table.as_bytes())
}

fn words(run: &mut Run, clip_path: &Path) -> Result<()> {
    let model = load_model(run)?;
    run.inputs.push(clip_path.to_path_buf());
    let clip = load_clips(clip_path, &run.cfg)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::validation("--clip", "no clip found"))?;
    let tokens = model.tokenize(&clip.to_tensor(DType::F32)?)?;
    for (label, book, indices) in [
        ("spatial", SubBook::Spatial, &tokens.spatial),
        ("temporal", SubBook::Temporal, &tokens.temporal),
    ] {
        println!("[{label}]");
        let entries = indices_to_words(indices, book, &model.codebook)?;
        let line: Vec<String> = entries.iter().map(|e| format!("{}/{}", e.word, e.pos)).collect();
        println!("{}", line.join(" "));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let mut run = Run::new(cli.global)?;
    match &cli.command {
        Command::Synth { count } => synth(&mut run, *count)?,
        Command::BuildCodebook { captions, embeddings } => build_codebook(&mut run, captions, embeddings)?,
        Command::Train { stop_at } => train(&mut run, *stop_at)?,
        Command::FinetuneImage { steps } => finetune_image(&mut run, *steps)?,
        Command::Encode { clips } => encode(&mut run, clips)?,
        Command::Decode { tokens } => decode(&mut run, tokens)?,
        Command::Reconstruct { clips } => reconstruct(&mut run, clips)?,
        Command::Ablate { steps, seeds } => ablate(&mut run, *steps, *seeds)?,
        Command::Words { clip } => words(&mut run, clip)?,
        Command::Eval { clips } => eval(&mut run, clips)?,
    }
    run.finish(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
