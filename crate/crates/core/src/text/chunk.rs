use std::collections::VecDeque;
use std::iter::Peekable;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_segmentation::{UnicodeSegmentation, UWordBoundIndices};

use super::document::Document;
use super::lang::Language;
use crate::error::{Error, Result};

/// A window of consecutive tokens from one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    /// Half-open token range `[start, end)` within the document.
    pub token_span: (u32, u32),
    pub text: String,
    pub language: Language,
}

impl Chunk {
    pub fn token_count(&self) -> u32 {
        self.token_span.1 - self.token_span.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig {
            chunk_size: 512,
            overlap: 64,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= overlap < chunk_size, got overlap={} chunk_size={}",
                self.overlap, self.chunk_size
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }
}

/// Content-derived chunk id: first 128 bits of SHA-256 over
/// `(doc_id, start, end, text)`, hex encoded.
pub fn chunk_id(doc_id: &str, span: (u32, u32), text: &str) -> String {
    let mut h = Sha256::new();
    h.update((doc_id.len() as u64).to_le_bytes());
    h.update(doc_id.as_bytes());
    h.update(span.0.to_le_bytes());
    h.update(span.1.to_le_bytes());
    h.update(text.as_bytes());
    let digest = h.finalize();
    let mut out = String::with_capacity(32);
    for b in &digest[..16] {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Lazily yields the token windows of a document. Only the current window's
/// token offsets are held in memory, so arbitrarily long documents chunk in
/// bounded space beyond the text itself.
pub struct ChunkWindows<'a> {
    doc: &'a Document,
    cfg: ChunkConfig,
    words: Peekable<UWordWords<'a>>,
    window: VecDeque<(usize, usize)>,
    window_start: usize,
    done: bool,
}

/// Word-like segments only, as `(start_byte, end_byte)`.
struct UWordWords<'a>(UWordBoundIndices<'a>);

impl Iterator for UWordWords<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<Self::Item> {
        for (off, seg) in self.0.by_ref() {
            if seg.chars().any(char::is_alphanumeric) {
                return Some((off, off + seg.len()));
            }
        }
        None
    }
}

impl<'a> ChunkWindows<'a> {
    pub fn new(doc: &'a Document, cfg: ChunkConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ChunkWindows {
            doc,
            cfg,
            words: UWordWords(doc.raw_text.split_word_bound_indices()).peekable(),
            window: VecDeque::with_capacity(cfg.chunk_size),
            window_start: 0,
            done: false,
        })
    }
}

impl Iterator for ChunkWindows<'_> {
    type Item = Chunk;

    fn next(&mut self) -> Option<Chunk> {
        if self.done {
            return None;
        }
        while self.window.len() < self.cfg.chunk_size {
            match self.words.next() {
                Some(span) => self.window.push_back(span),
                None => break,
            }
        }
        let (first, last) = match (self.window.front(), self.window.back()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => {
                self.done = true;
                return None;
            }
        };
        let span = (
            self.window_start as u32,
            (self.window_start + self.window.len()) as u32,
        );
        let text = self.doc.raw_text[first.0..last.1].to_string();
        let chunk = Chunk {
            chunk_id: chunk_id(&self.doc.doc_id, span, &text),
            doc_id: self.doc.doc_id.clone(),
            token_span: span,
            text,
            language: self.doc.detected_language,
        };
        if self.words.peek().is_none() {
            self.done = true;
        } else {
            let stride = self.cfg.stride();
            self.window.drain(..stride.min(self.window.len()));
            self.window_start += stride;
        }
        Some(chunk)
    }
}

/// Split a document into overlapping token windows with stride
/// `chunk_size - overlap`.
pub fn chunk_document(doc: &Document, chunk_size: usize, overlap: usize) -> Result<Vec<Chunk>> {
    let chunks: Vec<Chunk> = ChunkWindows::new(doc, ChunkConfig { chunk_size, overlap })?.collect();
    if chunks.is_empty() {
        return Err(Error::EmptyDocument(doc.doc_id.clone()));
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::DocFormat;
    use proptest::prelude::*;

    fn doc_with_tokens(n: usize) -> Document {
        let raw_text = (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        Document {
            doc_id: "d".into(),
            source_path: "d.txt".into(),
            format: DocFormat::PlainText,
            raw_text,
            detected_language: Language::En,
        }
    }

    /// Stride arithmetic over token indices, independent of the iterator.
    fn expected_starts(n: usize, size: usize, overlap: usize) -> Vec<usize> {
        let stride = size - overlap;
        let mut starts = vec![0];
        while starts.last().unwrap() + size < n {
            starts.push(starts.last().unwrap() + stride);
        }
        starts
    }

    #[test]
    fn exact_window_gives_one_chunk() {
        let chunks = chunk_document(&doc_with_tokens(512), 512, 64).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_span, (0, 512));
    }

    #[test]
    fn stride_positions_for_1024_tokens() {
        let chunks = chunk_document(&doc_with_tokens(1024), 512, 64).unwrap();
        let starts: Vec<u32> = chunks.iter().map(|c| c.token_span.0).collect();
        assert_eq!(starts, vec![0, 448, 896]);
        assert_eq!(expected_starts(1024, 512, 64), vec![0, 448, 896]);
        assert_eq!(chunks[2].token_span, (896, 1024));
        assert!(chunks[0].text.starts_with("w0 ") && chunks[0].text.ends_with("w511"));
    }

    #[test]
    fn empty_doc_and_bad_config_error() {
        let mut d = doc_with_tokens(1);
        d.raw_text = "  ,, ".into();
        assert!(chunk_document(&d, 512, 64).is_err());
        assert!(matches!(
            chunk_document(&doc_with_tokens(5), 64, 64),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn chunk_id_is_pure() {
        assert_eq!(chunk_id("a", (0, 3), "x y z"), chunk_id("a", (0, 3), "x y z"));
        assert_ne!(chunk_id("a", (0, 3), "x y z"), chunk_id("b", (0, 3), "x y z"));
        assert_ne!(chunk_id("a", (0, 3), "x y z"), chunk_id("a", (1, 3), "x y z"));
        assert_eq!(chunk_id("a", (0, 1), "x").len(), 32);
    }

    proptest! {
        #[test]
        fn windows_cover_every_token(n in 1usize..700, size in 2usize..80, ov_frac in 0.0f64..1.0) {
            let overlap = ((size as f64) * ov_frac) as usize % size;
            let chunks = chunk_document(&doc_with_tokens(n), size, overlap).unwrap();
            let starts: Vec<usize> = chunks.iter().map(|c| c.token_span.0 as usize).collect();
            prop_assert_eq!(starts, expected_starts(n, size, overlap));
            let mut covered = vec![false; n];
            for c in &chunks {
                prop_assert!(c.token_count() as usize <= size);
                for t in c.token_span.0..c.token_span.1 {
                    covered[t as usize] = true;
                }
                prop_assert_eq!(c.text.split(' ').count(), c.token_count() as usize);
            }
            prop_assert!(covered.iter().all(|&c| c));
            for w in chunks.windows(2) {
                prop_assert_eq!(w[0].token_span.1 - w[1].token_span.0, overlap as u32);
            }
        }
    }
}
