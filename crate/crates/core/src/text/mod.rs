//! Document parsing, token windows, language-aware analysis and
//! near-duplicate filtering.

mod chunk;
mod document;
mod lang;
mod minhash;
mod tokenize;

pub use chunk::{chunk_document, chunk_id, Chunk, ChunkConfig, ChunkWindows};
pub use document::{parse_document, DocFormat, Document, DocumentReader, ParseOptions};
pub use lang::{detect_language, Language};
pub use minhash::{
    dedup_filter, minhash_signature, shingle_hashes, DedupConfig, DedupFilter, MinHashSignature,
    MinHasher,
};
pub use tokenize::{
    analyze, detect_and_tokenize, normalized_words, stem, tokenize_with_language, word_spans,
    TokenStream,
};
