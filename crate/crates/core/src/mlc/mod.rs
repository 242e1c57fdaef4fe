//! Language codebook: a part-of-speech partitioned vocabulary whose frozen
//! text embeddings are projected into the latent space by a graph
//! convolution over caption co-occurrences, and searched by nearest
//! neighbour separately for spatial and temporal tokens.

mod embeddings;
mod graph;
mod projector;
mod quantize;
mod vocab;

use std::ops::Range;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

pub use embeddings::{pseudo_embedding, pseudo_embeddings, TextEmbeddings, EMBEDDING_MAGIC};
pub use graph::{build_graph, CooccurrenceGraph, NormalizedAdjacency};
pub use projector::GcnProjector;
pub use quantize::{
    embed_indices, nearest_exact, nearest_indices, quantize, token_sq_dist, vq_loss, FrozenStream,
    DecoderInput, Quantized, VqTerms,
};
pub use vocab::{build_vocabulary, VocabEntry, Vocabulary};

use crate::error::{Error, Result};
use crate::videodata::{CaptionCorpus, PosTag};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const GRAPH_FILE: &str = "graph.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.swte";

/// Which half of the codebook a token is searched in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubBook {
    /// Nouns and adjectives.
    Spatial,
    /// Verbs and adverbs.
    Temporal,
    /// The whole vocabulary (baseline tokenizers only).
    Full,
}

/// Vocabulary, frozen raw embeddings and the co-occurrence graph.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub vocab: Vocabulary,
    pub graph: CooccurrenceGraph,
    embeddings: TextEmbeddings,
    raw: Tensor,
    adjacency: NormalizedAdjacency,
}

impl Codebook {
    pub fn new(vocab: Vocabulary, embeddings: TextEmbeddings, graph: CooccurrenceGraph, dtype: DType) -> Result<Self> {
        if embeddings.count != vocab.len() {
            return Err(Error::validation(
                "embeddings",
                format!("{} rows for a vocabulary of {}", embeddings.count, vocab.len()),
            ));
        }
        if graph.nodes() != vocab.len() {
            return Err(Error::validation(
                "graph",
                format!("{} nodes for a vocabulary of {}", graph.nodes(), vocab.len()),
            ));
        }
        if vocab.spatial_range().is_empty() || vocab.temporal_range().is_empty() {
            return Err(Error::validation(
                "vocabulary",
                "needs at least one spatial and one temporal entry",
            ));
        }
        let raw = Tensor::from_slice(&embeddings.data, (embeddings.count, embeddings.dim), &Device::Cpu)?
            .to_dtype(dtype)?;
        let adjacency = graph.normalized(dtype)?;
        Ok(Self {
            vocab,
            graph,
            embeddings,
            raw,
            adjacency,
        })
    }

    /// Vocabulary, graph and pseudo-embeddings straight from captions.
    pub fn from_captions(corpus: &CaptionCorpus, min_freq: usize, window: usize, d_text: usize, dtype: DType) -> Result<Self> {
        let vocab = build_vocabulary(corpus, min_freq)?;
        let graph = build_graph(corpus, &vocab, window);
        let embeddings = pseudo_embeddings(&vocab, d_text, 0);
        Self::new(vocab, embeddings, graph, dtype)
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn d_text(&self) -> usize {
        self.embeddings.dim
    }

    /// Frozen embeddings as a non-trainable tensor.
    pub fn raw(&self) -> &Tensor {
        &self.raw
    }

    pub fn embeddings(&self) -> &TextEmbeddings {
        &self.embeddings
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.adjacency
    }

    pub fn span(&self, book: SubBook) -> Range<usize> {
        match book {
            SubBook::Spatial => self.vocab.spatial_range(),
            SubBook::Temporal => self.vocab.temporal_range(),
            SubBook::Full => 0..self.vocab.len(),
        }
    }

    /// Global index to the sub-book's own 0-based ordering.
    pub fn to_local(&self, book: SubBook, global: u32) -> Result<u32> {
        let span = self.span(book);
        let g = global as usize;
        if !span.contains(&g) {
            return Err(Error::IndexOutOfRange {
                what: "sub-book",
                index: g,
                len: span.len(),
            });
        }
        Ok((g - span.start) as u32)
    }

    pub fn to_global(&self, book: SubBook, local: u32) -> Result<u32> {
        let span = self.span(book);
        if local as usize >= span.len() {
            return Err(Error::IndexOutOfRange {
                what: "sub-book",
                index: local as usize,
                len: span.len(),
            });
        }
        Ok((span.start + local as usize) as u32)
    }

    pub fn with_dtype(&self, dtype: DType) -> Result<Self> {
        Self::new(self.vocab.clone(), self.embeddings.clone(), self.graph.clone(), dtype)
    }

    /// The three codebook files as `(file name, contents)`.
    pub fn files(&self) -> [(&'static str, Vec<u8>); 3] {
        [
            (VOCAB_FILE, self.vocab.to_text().into_bytes()),
            (GRAPH_FILE, self.graph.to_text().into_bytes()),
            (EMBEDDINGS_FILE, self.embeddings.to_bytes()),
        ]
    }

    /// Rebuilds a codebook from the contents written by [`Codebook::files`].
    pub fn from_files(vocab: &[u8], graph: &[u8], embeddings: &[u8], dtype: DType) -> Result<Self> {
        let text = |what: &'static str, b: &[u8]| {
            std::str::from_utf8(b)
                .map(str::to_owned)
                .map_err(|_| Error::format(what, "not UTF-8"))
        };
        Self::new(
            Vocabulary::parse(&text("vocabulary file", vocab)?)?,
            TextEmbeddings::from_bytes(embeddings)?,
            CooccurrenceGraph::parse(&text("graph file", graph)?)?,
            dtype,
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bytes) in self.files() {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, dtype: DType) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| Error::io(path, e))
        };
        Self::from_files(&read(VOCAB_FILE)?, &read(GRAPH_FILE)?, &read(EMBEDDINGS_FILE)?, dtype)
    }
}

/// Sub-book-local indices to their vocabulary entries.
pub fn indices_to_words<'a>(indices: &[u32], book: SubBook, codebook: &'a Codebook) -> Result<Vec<&'a VocabEntry>> {
    indices
        .iter()
        .map(|&i| {
            let g = codebook.to_global(book, i)? as usize;
            Ok(codebook.vocab.get(g).expect("global index in range"))
        })
        .collect()
}

/// True when `pos` belongs in `book`.
pub fn pos_matches(book: SubBook, pos: PosTag) -> bool {
    match book {
        SubBook::Spatial => pos.is_spatial(),
        SubBook::Temporal => pos.is_temporal(),
        SubBook::Full => pos != PosTag::Other,
    }
}
