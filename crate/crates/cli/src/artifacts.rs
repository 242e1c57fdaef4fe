//! Loading clips and codebooks, and the self-contained model checkpoint.

use std::path::{Path, PathBuf};

use sweettok::mlc::{Codebook, EMBEDDINGS_FILE, GRAPH_FILE, VOCAB_FILE};
use sweettok::training::Checkpoint;
use sweettok::videodata::{corpus_captions, load_clip, synthesize_corpus, CaptionCorpus, MotionSpec};
use sweettok::{DType, Error, Preset, Result, RunConfig, SweetTok, Trainer, VideoClip};

pub const CHECKPOINT_FILE: &str = "checkpoint.swtc";
const CONFIG_BLOB: &str = "config.toml";

fn codebook_blob(name: &str) -> String {
    format!("codebook/{name}")
}

/// Clips and captions a run trains on.
pub struct Dataset {
    pub clips: Vec<VideoClip>,
    pub captions: Option<CaptionCorpus>,
}

/// `.swtv` files in `dir`, sorted by name.
pub fn clip_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "swtv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::validation("data.clips", format!("no .swtv files in {}", dir.display())));
    }
    Ok(paths)
}

/// One clip file or every clip in a directory.
pub fn load_clips(path: &Path, cfg: &RunConfig) -> Result<Vec<VideoClip>> {
    let paths = if path.is_dir() { clip_paths(path)? } else { vec![path.to_path_buf()] };
    paths.iter().map(|p| load_clip(p, &cfg.model)).collect()
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.clips {
        Some(dir) => {
            let captions = cfg.data.captions.as_deref().map(CaptionCorpus::load).transpose()?;
            Ok(Dataset {
                clips: load_clips(dir, cfg)?,
                captions,
            })
        }
        None => {
            let m = &cfg.model;
            let spec = MotionSpec::new(m.frames, m.height, m.width);
            let corpus = synthesize_corpus(cfg.data.synthetic_seed, cfg.data.synthetic_clips, &spec)?;
            Ok(Dataset {
                captions: Some(corpus_captions(&corpus)),
                clips: corpus.into_iter().map(|c| c.clip).collect(),
            })
        }
    }
}

/// The configured codebook directory, or one built from the dataset captions.
pub fn resolve_codebook(cfg: &RunConfig, data: &Dataset) -> Result<Codebook> {
    if let Some(dir) = &cfg.codebook.dir {
        return Codebook::load(dir, DType::F32);
    }
    let captions = data.captions.as_ref().ok_or_else(|| {
        Error::validation("codebook.dir", "required when the data has no captions")
    })?;
    let m = &cfg.model;
    Codebook::from_captions(captions, m.min_freq, m.window, m.d_text, DType::F32)
}

/// Trainer state, model weights, resolved config and codebook in one file.
pub fn save_checkpoint(path: &Path, cfg: &RunConfig, model: &SweetTok, trainer: &Trainer) -> Result<()> {
    let mut ck = trainer.checkpoint(&model.params)?;
    ck.blobs.insert(CONFIG_BLOB.into(), cfg.to_toml().into_bytes());
    for (name, bytes) in model.codebook.files() {
        ck.blobs.insert(codebook_blob(name), bytes);
    }
    ck.save(path)
}

/// A model rebuilt from a checkpoint plus the raw checkpoint for trainer state.
pub struct Loaded {
    pub cfg: RunConfig,
    pub model: SweetTok,
    pub checkpoint: Checkpoint,
}

pub fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let ck = Checkpoint::load(path)?;
    let text = std::str::from_utf8(ck.blob(CONFIG_BLOB)?)
        .map_err(|_| Error::format("checkpoint", "config blob is not UTF-8"))?;
    let cfg = RunConfig::parse(text, Preset::Desk)?;
    let codebook = Codebook::from_files(
        ck.blob(&codebook_blob(VOCAB_FILE))?,
        ck.blob(&codebook_blob(GRAPH_FILE))?,
        ck.blob(&codebook_blob(EMBEDDINGS_FILE))?,
        DType::F32,
    )?;
    let model = SweetTok::new(&cfg.model, codebook, DType::F32)?;
    let params = ck
        .tensors_with_prefix("param/")
        .into_iter()
        .map(|(k, v)| Ok((k, v.to_dtype(DType::F32)?)))
        .collect::<Result<_>>()?;
    model.params.restore(&params)?;
    Ok(Loaded {
        cfg,
        model,
        checkpoint: ck,
    })
}
