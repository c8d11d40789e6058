//! Byte-level byte-pair encoding.
//!
//! Text is split into pre-tokens (a run of whitespace followed by a run of
//! non-whitespace); merges never cross pre-token boundaries. The base
//! vocabulary is the 256 byte values followed by the special tokens.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub const BOS: &str = "<|bos|>";
pub const BOS_ID: usize = 256;
const SPECIALS: [&str; 1] = [BOS];
const FORMAT: &str = "exlab-bpe";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    id_to_token: Vec<Vec<u8>>,
    token_to_id: HashMap<Vec<u8>, usize>,
    merges: Vec<(usize, usize)>,
    /// pair -> (rank, merged id)
    ranks: HashMap<(usize, usize), (usize, usize)>,
}

/// Split into `whitespace* non-whitespace+` chunks; trailing whitespace forms its own chunk.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        out.push(&text[start..i]);
        start = i;
    }
    out
}

impl Vocab {
    /// Bytes plus specials, no merges.
    pub fn base() -> Self {
        let mut id_to_token: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let token_to_id = id_to_token.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        id_to_token.extend(SPECIALS.iter().map(|s| s.as_bytes().to_vec()));
        Self {
            id_to_token,
            token_to_id,
            merges: Vec::new(),
            ranks: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn merges(&self) -> &[(usize, usize)] {
        &self.merges
    }

    pub fn token(&self, id: usize) -> Option<&[u8]> {
        self.id_to_token.get(id).map(Vec::as_slice)
    }

    /// Id of a non-special token.
    pub fn id(&self, token: &[u8]) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn is_special(&self, id: usize) -> bool {
        (BOS_ID..BOS_ID + SPECIALS.len()).contains(&id)
    }

    /// Record a merge, reusing the id of an identical existing token.
    fn push_merge(&mut self, a: usize, b: usize) -> usize {
        let mut bytes = self.id_to_token[a].clone();
        bytes.extend_from_slice(&self.id_to_token[b]);
        let id = match self.token_to_id.get(&bytes) {
            Some(&id) => id,
            None => {
                self.id_to_token.push(bytes.clone());
                self.token_to_id.insert(bytes, self.id_to_token.len() - 1);
                self.id_to_token.len() - 1
            }
        };
        self.ranks.insert((a, b), (self.merges.len(), id));
        self.merges.push((a, b));
        id
    }

    /// Learn merges from `texts` until the vocabulary holds `size` tokens or
    /// no adjacent pair occurs at least twice.
    ///
    /// The most frequent pair wins; ties go to the pair seen first in the
    /// corpus, then to the lexicographically smaller byte strings.
    pub fn train<S: AsRef<str>>(texts: &[S], size: usize) -> Result<Self> {
        let mut vocab = Self::base();
        if size < vocab.len() {
            return Err(Error::Config(format!(
                "vocabulary size {size} is smaller than the {} base tokens",
                vocab.len()
            )));
        }
        if texts.is_empty() {
            return Err(Error::Data("cannot train a tokenizer on an empty corpus".into()));
        }
        let mut counts: IndexMap<&[u8], u64> = IndexMap::new();
        for text in texts {
            for w in pretokenize(text.as_ref()) {
                *counts.entry(w.as_bytes()).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<usize>, u64)> = counts
            .into_iter()
            .map(|(w, c)| (w.iter().map(|&b| b as usize).collect(), c))
            .collect();

        while vocab.len() < size {
            // pair -> (count, first occurrence)
            let mut pairs: HashMap<(usize, usize), (u64, (usize, usize))> = HashMap::new();
            for (wi, (syms, c)) in words.iter().enumerate() {
                for (pos, w) in syms.windows(2).enumerate() {
                    let e = pairs.entry((w[0], w[1])).or_insert((0, (wi, pos)));
                    e.0 += c;
                }
            }
            let best = pairs.into_iter().max_by(|(pa, (ca, fa)), (pb, (cb, fb))| {
                ca.cmp(cb).then(fb.cmp(fa)).then_with(|| {
                    let ka = (&vocab.id_to_token[pa.0], &vocab.id_to_token[pa.1]);
                    let kb = (&vocab.id_to_token[pb.0], &vocab.id_to_token[pb.1]);
                    kb.cmp(&ka)
                })
            });
            let Some(((a, b), (count, _))) = best.filter(|(_, (c, _))| *c >= 2) else {
                log::warn!(
                    "no pair occurs twice; stopping at {} tokens instead of {size}",
                    vocab.len()
                );
                break;
            };
            log::trace!("merge {a} {b} (count {count})");
            let id = vocab.push_merge(a, b);
            for (syms, _) in &mut words {
                merge_in_place(syms, a, b, id);
            }
        }
        Ok(vocab)
    }

    fn encode_word(&self, word: &[u8], out: &mut Vec<usize>) {
        let mut syms: Vec<usize> = word.iter().map(|&b| b as usize).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(r, id)| (r, w[0], w[1], id)))
                .min();
            match best {
                Some((_, a, b, id)) => merge_in_place(&mut syms, a, b, id),
                None => break,
            }
        }
        out.extend(syms);
    }

    /// Token ids of `text`, merges applied in training order within each pre-token.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::with_capacity(text.len() / 3);
        let mut cache: HashMap<&str, Vec<usize>> = HashMap::new();
        for w in pretokenize(text) {
            let ids = cache.entry(w).or_insert_with(|| {
                let mut v = Vec::new();
                self.encode_word(w.as_bytes(), &mut v);
                v
            });
            out.extend_from_slice(ids);
        }
        out
    }

    /// Concatenated bytes of `ids`, skipping special tokens.
    pub fn decode_bytes(&self, ids: &[usize]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::Vocabulary { id, size: self.len() })?;
            if !self.is_special(id) {
                out.extend_from_slice(tok);
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        String::from_utf8(bytes).map_err(|e| Error::Encoding(e.utf8_error()))
    }

    /// Like [`decode`](Self::decode) but replaces invalid UTF-8 sequences.
    pub fn decode_lossy(&self, ids: &[usize]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    pub fn to_text(&self) -> String {
        let specials: Vec<String> = SPECIALS.iter().map(|s| escape(s.as_bytes())).collect();
        let mut out = format!(
            "{FORMAT} {FORMAT_VERSION} {} {}\n",
            self.len(),
            specials.join(",")
        );
        for &(a, b) in &self.merges {
            let _ = writeln!(out, "{} {}", escape(&self.id_to_token[a]), escape(&self.id_to_token[b]));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse(format!("vocabulary line {line}: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 4 || fields[0] != FORMAT {
            return Err(bad(1, "not a vocabulary file"));
        }
        if fields[1] != FORMAT_VERSION.to_string() {
            return Err(bad(1, &format!("unsupported version {}", fields[1])));
        }
        let size: usize = fields[2].parse().map_err(|_| bad(1, "bad size"))?;
        let specials: Vec<String> = SPECIALS.iter().map(|s| escape(s.as_bytes())).collect();
        if fields[3] != specials.join(",") {
            return Err(bad(1, "unexpected special tokens"));
        }
        let mut vocab = Self::base();
        for (n, line) in lines.enumerate() {
            let lineno = n + 2;
            let (l, r) = line.split_once(' ').ok_or_else(|| bad(lineno, "expected two tokens"))?;
            let lookup = |tok: &str| -> Result<usize> {
                let bytes = unescape(tok).ok_or_else(|| bad(lineno, "bad escape"))?;
                vocab.id(&bytes).ok_or_else(|| bad(lineno, "unknown token"))
            };
            let (a, b) = (lookup(l)?, lookup(r)?);
            vocab.push_merge(a, b);
        }
        if vocab.len() != size {
            return Err(bad(1, &format!("header says {size} tokens, merges give {}", vocab.len())));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn merge_in_place(syms: &mut Vec<usize>, a: usize, b: usize, id: usize) {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
            out.push(id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    *syms = out;
}

/// Printable ASCII other than space and backslash stays literal; every other byte becomes `\xHH`.
pub fn escape(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len());
    for &b in bytes {
        if b.is_ascii_graphic() && b != b'\\' {
            s.push(b as char);
        } else {
            let _ = write!(s, "\\x{b:02x}");
        }
    }
    s
}

pub fn unescape(s: &str) -> Option<Vec<u8>> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            if bytes.get(i + 1) != Some(&b'x') || i + 4 > bytes.len() {
                return None;
            }
            let hex = std::str::from_utf8(&bytes[i + 2..i + 4]).ok()?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 4;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    (!out.is_empty()).then_some(out)
}
