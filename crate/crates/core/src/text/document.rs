use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use pulldown_cmark::{Event, Parser, TagEnd};
use serde::{Deserialize, Serialize};

use super::lang::{detect_language, Language};
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocFormat {
    PlainText,
    Markdown,
    JsonlRecord,
}

impl DocFormat {
    /// Format implied by a file extension; `None` for unsupported files.
    pub fn from_path(path: &Path) -> Option<DocFormat> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "txt" | "text" => Some(DocFormat::PlainText),
            "md" | "markdown" => Some(DocFormat::Markdown),
            "jsonl" | "ndjson" => Some(DocFormat::JsonlRecord),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source_path: String,
    pub format: DocFormat,
    pub raw_text: String,
    pub detected_language: Language,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParseOptions {
    /// JSONL field holding the document body.
    pub text_key: String,
    /// JSONL field holding the document id; falls back to `path:line`.
    pub id_key: String,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            text_key: "text".into(),
            id_key: "id".into(),
        }
    }
}

fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn strip_markdown(md: &str) -> String {
    let mut out = String::with_capacity(md.len());
    for event in Parser::new(md) {
        match event {
            Event::Text(t) | Event::Code(t) => out.push_str(&t),
            Event::SoftBreak | Event::HardBreak | Event::Rule => out.push(' '),
            Event::End(TagEnd::Paragraph | TagEnd::Heading(_) | TagEnd::Item | TagEnd::CodeBlock) => {
                out.push(' ')
            }
            _ => {}
        }
    }
    out
}

fn make_document(
    doc_id: String,
    source_path: &Path,
    format: DocFormat,
    text: &str,
) -> Result<Document> {
    let body = match format {
        DocFormat::Markdown => normalize_whitespace(&strip_markdown(text)),
        _ => normalize_whitespace(text),
    };
    if body.is_empty() {
        return Err(Error::EmptyDocument(doc_id));
    }
    let detected_language = detect_language(&body);
    Ok(Document {
        doc_id,
        source_path: source_path.display().to_string(),
        format,
        raw_text: body,
        detected_language,
    })
}

/// Streams the documents of one file. Plain text and markdown files yield
/// a single document; JSONL files yield one per non-blank line, read
/// incrementally.
pub struct DocumentReader {
    path: PathBuf,
    format: DocFormat,
    opts: ParseOptions,
    state: ReaderState,
}

enum ReaderState {
    Whole(Option<String>),
    Lines { reader: BufReader<File>, line_no: usize },
    Done,
}

impl DocumentReader {
    pub fn open(path: &Path, format: DocFormat, opts: ParseOptions) -> Result<Self> {
        let file = File::open(path).at(path)?;
        let state = match format {
            DocFormat::JsonlRecord => ReaderState::Lines {
                reader: BufReader::with_capacity(1 << 16, file),
                line_no: 0,
            },
            _ => {
                let mut bytes = Vec::new();
                BufReader::new(file).read_to_end(&mut bytes).at(path)?;
                let text = match String::from_utf8(bytes) {
                    Ok(s) => s,
                    Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
                };
                ReaderState::Whole(Some(text))
            }
        };
        Ok(DocumentReader {
            path: path.to_path_buf(),
            format,
            opts,
            state,
        })
    }

    fn next_record(&mut self) -> Option<Result<Document>> {
        let ReaderState::Lines { reader, line_no } = &mut self.state else {
            return None;
        };
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            }
            *line_no += 1;
            let line = String::from_utf8_lossy(&buf);
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let value: serde_json::Value = match serde_json::from_str(line) {
                Ok(v) => v,
                Err(e) => {
                    return Some(Err(Error::Format(format!(
                        "{}:{}: {e}",
                        self.path.display(),
                        line_no
                    ))))
                }
            };
            let doc_id = match value.get(&self.opts.id_key) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(serde_json::Value::Number(n)) => n.to_string(),
                _ => format!("{}:{}", self.path.display(), line_no),
            };
            let text = match value.get(&self.opts.text_key) {
                Some(serde_json::Value::String(s)) => s.as_str(),
                _ => "",
            };
            return Some(make_document(doc_id, &self.path, DocFormat::JsonlRecord, text));
        }
    }
}

impl Iterator for DocumentReader {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.state {
            ReaderState::Whole(text) => {
                let text = text.take()?;
                self.state = ReaderState::Done;
                let doc_id = self.path.display().to_string();
                Some(make_document(doc_id, &self.path, self.format, &text))
            }
            ReaderState::Lines { .. } => {
                let r = self.next_record();
                if r.is_none() {
                    self.state = ReaderState::Done;
                }
                r
            }
            ReaderState::Done => None,
        }
    }
}

/// Parse a file into documents. Plain text and markdown produce exactly one
/// document; each JSONL record becomes its own document.
pub fn parse_document(path: &Path, format: DocFormat) -> Result<Vec<Document>> {
    DocumentReader::open(path, format, ParseOptions::default())?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &[u8]) -> PathBuf {
        let p = dir.path().join(name);
        File::create(&p).unwrap().write_all(body).unwrap();
        p
    }

    #[test]
    fn plain_text_passes_through() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.txt", b"hello world");
        let docs = parse_document(&p, DocFormat::PlainText).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].raw_text, "hello world");
    }

    #[test]
    fn whitespace_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.txt", b"  hello \n\n\t world  ");
        assert_eq!(parse_document(&p, DocFormat::PlainText).unwrap()[0].raw_text, "hello world");
    }

    #[test]
    fn markdown_is_stripped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.md", b"# T\nbody with **bold** and [link](http://x)");
        let doc = &parse_document(&p, DocFormat::Markdown).unwrap()[0];
        assert!(doc.raw_text.contains('T'));
        assert!(doc.raw_text.contains("body"));
        assert!(doc.raw_text.contains("bold"));
        assert!(!doc.raw_text.contains('#'));
        assert!(!doc.raw_text.contains("http"));
    }

    #[test]
    fn jsonl_records_become_documents() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.jsonl",
            b"{\"id\":\"d1\",\"text\":\"first\"}\n\n{\"id\":2,\"text\":\"second doc\"}\n{\"text\":\"third\"}\n",
        );
        let docs = parse_document(&p, DocFormat::JsonlRecord).unwrap();
        assert_eq!(docs.len(), 3);
        assert_eq!(docs[0].doc_id, "d1");
        assert_eq!(docs[1].doc_id, "2");
        assert!(docs[2].doc_id.ends_with(":4"));
        assert_eq!(docs[1].raw_text, "second doc");
    }

    #[test]
    fn custom_text_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.jsonl", b"{\"body\":\"abc\"}\n");
        let opts = ParseOptions {
            text_key: "body".into(),
            ..Default::default()
        };
        let docs: Vec<_> = DocumentReader::open(&p, DocFormat::JsonlRecord, opts)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(docs[0].raw_text, "abc");
    }

    #[test]
    fn empty_and_missing_files_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.txt", b"  \n ");
        assert!(matches!(
            parse_document(&p, DocFormat::PlainText),
            Err(Error::EmptyDocument(_))
        ));
        assert!(matches!(
            parse_document(&dir.path().join("missing.txt"), DocFormat::PlainText),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn invalid_utf8_is_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "b.txt", b"ok \xff\xfe bytes");
        let doc = &parse_document(&p, DocFormat::PlainText).unwrap()[0];
        assert!(doc.raw_text.starts_with("ok"));
        assert!(doc.raw_text.contains('\u{FFFD}'));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(DocFormat::from_path(Path::new("a.TXT")), Some(DocFormat::PlainText));
        assert_eq!(DocFormat::from_path(Path::new("a.md")), Some(DocFormat::Markdown));
        assert_eq!(DocFormat::from_path(Path::new("a.jsonl")), Some(DocFormat::JsonlRecord));
        assert_eq!(DocFormat::from_path(Path::new("a.pdf")), None);
    }
}
