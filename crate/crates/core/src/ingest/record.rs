//! Binary encoding of one chunk record, shared by shards and the store.
//!
//! Layout (little-endian): `chunk_id: str | doc_id: str | start: u32 |
//! end: u32 | language: u8 | text: str`, where `str` is a u32 byte length
//! followed by UTF-8.

use crate::error::Result;
use crate::text::{Chunk, Language};
use crate::util::{put_str, put_u32, ByteReader};

pub(crate) fn encode(chunk: &Chunk, out: &mut Vec<u8>) {
    put_str(out, &chunk.chunk_id);
    put_str(out, &chunk.doc_id);
    put_u32(out, chunk.token_span.0);
    put_u32(out, chunk.token_span.1);
    out.push(chunk.language.code());
    put_str(out, &chunk.text);
}

/// Borrowed view of an encoded record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkRef<'a> {
    pub chunk_id: &'a str,
    pub doc_id: &'a str,
    pub token_span: (u32, u32),
    pub language: Language,
    pub text: &'a str,
}

impl ChunkRef<'_> {
    pub fn to_chunk(&self) -> Chunk {
        Chunk {
            chunk_id: self.chunk_id.to_string(),
            doc_id: self.doc_id.to_string(),
            token_span: self.token_span,
            text: self.text.to_string(),
            language: self.language,
        }
    }
}

pub(crate) fn decode(buf: &[u8]) -> Result<ChunkRef<'_>> {
    let mut r = ByteReader::new(buf);
    let chunk_id = r.str()?;
    let doc_id = r.str()?;
    let start = r.u32()?;
    let end = r.u32()?;
    let language = Language::from_code(r.u8()?);
    let text = r.str()?;
    Ok(ChunkRef {
        chunk_id,
        doc_id,
        token_span: (start, end),
        language,
        text,
    })
}
