//! Deterministic moving-shapes clips with templated, POS-tagged captions.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{CaptionCorpus, CaptionRecord, PosTag, TaggedWord, VideoClip};
use crate::error::Result;

const SHAPES: [&str; 3] = ["square", "circle", "diamond"];
const COLORS: [(&str, [u8; 3]); 6] = [
    ("red", [225, 45, 40]),
    ("green", [50, 205, 70]),
    ("blue", [50, 90, 235]),
    ("yellow", [240, 220, 50]),
    ("purple", [170, 60, 210]),
    ("white", [245, 245, 245]),
];
const BACKGROUNDS: [[u8; 3]; 3] = [[20, 20, 28], [12, 30, 45], [40, 22, 18]];
const MOVING_VERBS: [&str; 3] = ["moves", "slides", "glides"];
const DIRECTIONS: [(&str, [i32; 2]); 4] = [
    ("left", [-1, 0]),
    ("right", [1, 0]),
    ("up", [0, -1]),
    ("down", [0, 1]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Speed {
    pub adverb: String,
    pub pixels_per_frame: f32,
}

impl Speed {
    pub fn new(adverb: &str, pixels_per_frame: f32) -> Self {
        Self {
            adverb: adverb.into(),
            pixels_per_frame,
        }
    }
}

/// Clip geometry and the motion vocabulary the generator draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Shape side length in pixels.
    pub shape_size: usize,
    pub speeds: Vec<Speed>,
}

impl MotionSpec {
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            shape_size: (height.min(width) / 3).max(2),
            speeds: vec![
                Speed::new("slowly", 1.0),
                Speed::new("steadily", 2.0),
                Speed::new("quickly", 3.0),
            ],
        }
    }

    /// Every shape stays put.
    pub fn stationary(frames: usize, height: usize, width: usize) -> Self {
        Self {
            speeds: vec![Speed::new("still", 0.0)],
            ..Self::new(frames, height, width)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub clip: VideoClip,
    pub caption: Vec<TaggedWord>,
}

fn inside(shape: &str, dx: f32, dy: f32, half: f32) -> bool {
    match shape {
        "circle" => dx * dx + dy * dy <= half * half,
        "diamond" => dx.abs() + dy.abs() <= half,
        _ => dx.abs() <= half && dy.abs() <= half,
    }
}

/// Generates `n_clips` clips; identical `(seed, spec)` give identical output.
pub fn synthesize_corpus(seed: u64, n_clips: usize, spec: &MotionSpec) -> Result<Vec<SyntheticClip>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (frames, h, w) = (spec.frames, spec.height, spec.width);
    let size = spec.shape_size.min(h).min(w) as f32;
    let half = (size - 1.0) / 2.0;
    let mut out = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let shape = *SHAPES.choose(&mut rng).expect("non-empty");
        let (color_name, color) = *COLORS.choose(&mut rng).expect("non-empty");
        let background = *BACKGROUNDS.choose(&mut rng).expect("non-empty");
        let speed = spec.speeds.choose(&mut rng).expect("spec has speeds");
        let (direction, dir) = *DIRECTIONS.choose(&mut rng).expect("non-empty");
        let verb = *MOVING_VERBS.choose(&mut rng).expect("non-empty");

        let travel = speed.pixels_per_frame * (frames - 1) as f32;
        let (vx, vy) = (dir[0] as f32 * speed.pixels_per_frame, dir[1] as f32 * speed.pixels_per_frame);
        // pick a start so the whole trajectory stays in frame where possible
        let mut start = |extent: usize, v: f32| -> f32 {
            let lo = half + if v < 0.0 { travel } else { 0.0 };
            let hi = extent as f32 - 1.0 - half - if v > 0.0 { travel } else { 0.0 };
            if hi > lo {
                rng.random_range(lo..=hi).round()
            } else {
                (extent as f32 - 1.0) / 2.0
            }
        };
        let cx0 = start(w, vx);
        let cy0 = start(h, vy);

        let mut bytes = Vec::with_capacity(frames * h * w * 3);
        for t in 0..frames {
            let cx = cx0 + vx * t as f32;
            let cy = cy0 + vy * t as f32;
            for y in 0..h {
                for x in 0..w {
                    let px = if inside(shape, x as f32 - cx, y as f32 - cy, half) {
                        color
                    } else {
                        background
                    };
                    bytes.extend_from_slice(&px);
                }
            }
        }
        let clip = VideoClip::from_u8(format!("synth_{seed}_{i:04}"), frames, h, w, &bytes)?;

        let mut caption = vec![
            TaggedWord::new("a", PosTag::Other),
            TaggedWord::new(color_name, PosTag::Adjective),
            TaggedWord::new(shape, PosTag::Noun),
        ];
        if speed.pixels_per_frame == 0.0 {
            caption.push(TaggedWord::new("rests", PosTag::Verb));
            caption.push(TaggedWord::new(&speed.adverb, PosTag::Adverb));
        } else {
            caption.push(TaggedWord::new(verb, PosTag::Verb));
            caption.push(TaggedWord::new(&speed.adverb, PosTag::Adverb));
            caption.push(TaggedWord::new(direction, PosTag::Other));
        }
        out.push(SyntheticClip { clip, caption });
    }
    Ok(out)
}

/// The captions of a synthetic corpus as a caption file would hold them.
pub fn corpus_captions(corpus: &[SyntheticClip]) -> CaptionCorpus {
    CaptionCorpus {
        records: corpus
            .iter()
            .map(|c| CaptionRecord {
                clip_id: c.clip.clip_id.clone(),
                words: c.caption.clone(),
            })
            .collect(),
    }
}

/// SHA-256 over every clip container and caption, in order.
pub fn corpus_checksum(corpus: &[SyntheticClip]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for item in corpus {
        hasher.update(super::encode_container(&item.clip));
        for w in &item.caption {
            hasher.update(w.word.as_bytes());
            hasher.update(w.pos.as_str().as_bytes());
        }
    }
    hasher.finalize().into()
}
