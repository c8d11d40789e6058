//! Plain-text corpora, token streams and training windows.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenizer::{Vocab, BOS_ID};

const STREAM_MAGIC: &[u8; 8] = b"EXLABTS1";

fn markers() -> &'static (Regex, Regex) {
    static RE: OnceLock<(Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        (
            Regex::new(r"\*\*\*[ \t]*START\b[^\n]*?\*\*\*").expect("start marker"),
            Regex::new(r"\*\*\*[ \t]*END\b[^\n]*?\*\*\*").expect("end marker"),
        )
    })
}

/// Normalise line endings to `\n`, cut the text down to the body between
/// `*** START ... ***` and `*** END ... ***` markers when present, and
/// squeeze runs of more than two blank lines down to two.
pub fn clean_text(raw: &[u8]) -> Result<String> {
    let text = std::str::from_utf8(raw)?;
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    let (start, end) = markers();
    let body = match start.find(&text) {
        Some(m) => {
            let rest = &text[m.end()..];
            let stop = end.find(rest).map_or(rest.len(), |e| e.start());
            rest[..stop].trim().to_string()
        }
        None => match end.find(&text) {
            Some(e) => text[..e.start()].trim().to_string(),
            None => text,
        },
    };
    Ok(squeeze_blank_lines(&body))
}

fn squeeze_blank_lines(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut run = 0;
    for c in s.chars() {
        if c == '\n' {
            run += 1;
            if run > 3 {
                continue;
            }
        } else {
            run = 0;
        }
        out.push(c);
    }
    out
}

/// Cleaned documents, in file-name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub names: Vec<String>,
    pub documents: Vec<String>,
}

impl Corpus {
    /// Every `*.txt` file of `dir`, cleaned.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
                paths.push(path);
            }
        }
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Data(format!("no .txt files in {}", dir.display())));
        }
        let mut corpus = Corpus::default();
        for path in paths {
            let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            corpus.documents.push(clean_text(&raw)?);
            corpus.names.push(name);
        }
        Ok(corpus)
    }

    /// Write each document to `dir` under its original name.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, doc) in self.names.iter().zip(&self.documents) {
            crate::io::write_atomic(&dir.join(name), doc.as_bytes())?;
        }
        Ok(())
    }

    /// Hex SHA-256 over names and contents.
    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        for (name, doc) in self.names.iter().zip(&self.documents) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((doc.len() as u64).to_le_bytes());
            h.update(doc.as_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Token counts of an encoded corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamStats {
    pub documents: usize,
    pub tokens: usize,
    pub tokens_without_specials: usize,
}

/// Encode every document, each preceded by the begin-of-text token.
pub fn encode_corpus(corpus: &Corpus, vocab: &Vocab) -> (Vec<usize>, StreamStats) {
    let mut ids = Vec::new();
    for doc in &corpus.documents {
        ids.push(BOS_ID);
        ids.extend(vocab.encode(doc));
    }
    let specials = ids.iter().filter(|&&i| vocab.is_special(i)).count();
    let stats = StreamStats {
        documents: corpus.documents.len(),
        tokens: ids.len(),
        tokens_without_specials: ids.len() - specials,
    };
    (ids, stats)
}

pub fn write_stream(path: &Path, ids: &[usize]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 4 * ids.len());
    bytes.extend_from_slice(STREAM_MAGIC);
    for &id in ids {
        let id = u32::try_from(id).map_err(|_| Error::Data(format!("token id {id} does not fit in 32 bits")))?;
        bytes.extend_from_slice(&id.to_le_bytes());
    }
    crate::io::write_atomic(path, &bytes)
}

pub fn read_stream(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != STREAM_MAGIC || (bytes.len() - 8) % 4 != 0 {
        return Err(Error::Data(format!("{} is not a token stream file", path.display())));
    }
    Ok(bytes[8..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect())
}

/// Every stride-1 window of `len + 1` tokens over a stream.
#[derive(Debug, Clone, Copy)]
pub struct Windows<'a> {
    stream: &'a [usize],
    len: usize,
}

impl<'a> Windows<'a> {
    /// Windows of `l` inputs plus one trailing target.
    pub fn new(stream: &'a [usize], l: usize) -> Result<Self> {
        if l == 0 || stream.len() < l + 1 {
            return Err(Error::Data(format!(
                "a stream of {} tokens is too short for windows of {} tokens",
                stream.len(),
                l + 1
            )));
        }
        Ok(Self { stream, len: l })
    }

    pub fn count(&self) -> usize {
        self.stream.len() - self.len
    }

    pub fn context_len(&self) -> usize {
        self.len
    }

    /// The `len + 1` tokens starting at offset `i`.
    pub fn get(&self, i: usize) -> &'a [usize] {
        &self.stream[i..i + self.len + 1]
    }
}

/// Number of full batches one pass over `windows` provides.
pub fn batches_per_epoch(windows: usize, batch_size: usize) -> usize {
    windows / batch_size
}
