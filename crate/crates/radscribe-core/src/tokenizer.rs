//! Word-level tokenizer with byte fallback.
//!
//! The model's output language is closed (the report grammar plus prompt
//! text), so a small word tokenizer built from that corpus suffices. Text is
//! lexed into pieces — grid tokens like `<25>`, alphanumeric runs, and
//! single other characters (spaces and punctuation included) — so that the
//! concatenation of pieces reproduces the input exactly. Pieces absent from
//! the vocabulary fall back to byte tokens, which keeps `decode(encode(s))
//! == s` for arbitrary text. Special tokens can never be produced by
//! encoding plain text: their display forms contain `|`, which always lexes
//! as a lone character.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub type TokenId = u32;

/// Structural tokens inserted by sequence assembly, never by `encode`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Special {
    ImageStart,
    ImageEnd,
    AnswerStart,
    EndOfText,
}

pub const SPECIALS: [(Special, &str); 4] = [
    (Special::ImageStart, "<|image|>"),
    (Special::ImageEnd, "<|/image|>"),
    (Special::AnswerStart, "<|answer|>"),
    (Special::EndOfText, "<|eot|>"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    pieces: Vec<String>,
    lookup: BTreeMap<String, TokenId>,
    byte_base: TokenId,
    special_base: TokenId,
}

/// Splits text into pieces whose concatenation equals the input.
pub fn lex(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        // grid cell token `<digits>`
        if bytes[i] == b'<' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'>' {
                out.push(&text[i..=j]);
                i = j + 1;
                continue;
            }
        }
        if bytes[i].is_ascii_alphanumeric() {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_alphanumeric() {
                j += 1;
            }
            out.push(&text[i..j]);
            i = j;
            continue;
        }
        // any other character stands alone (multi-byte chars included)
        let ch_len = text[i..].chars().next().map(char::len_utf8).unwrap_or(1);
        out.push(&text[i..i + ch_len]);
        i += ch_len;
    }
    out
}

impl Tokenizer {
    /// Builds the vocabulary from a corpus. Piece order is sorted, so the
    /// same corpus always yields the same tokenizer.
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Tokenizer {
        let mut set = BTreeSet::new();
        for doc in corpus {
            for piece in lex(doc.as_ref()) {
                set.insert(piece.to_string());
            }
        }
        Self::from_pieces(set.into_iter().collect())
    }

    /// Reconstructs a tokenizer from its saved piece list.
    pub fn from_pieces(pieces: Vec<String>) -> Tokenizer {
        let lookup = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as TokenId))
            .collect();
        let byte_base = pieces.len() as TokenId;
        Tokenizer {
            pieces,
            lookup,
            byte_base,
            special_base: byte_base + 256,
        }
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Total id space: pieces + 256 byte tokens + specials.
    pub fn vocab_size(&self) -> usize {
        self.special_base as usize + SPECIALS.len()
    }

    pub fn special(&self, s: Special) -> TokenId {
        let idx = SPECIALS.iter().position(|(k, _)| *k == s).unwrap();
        self.special_base + idx as TokenId
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id >= self.special_base
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for piece in lex(text) {
            match self.lookup.get(piece) {
                Some(&id) => out.push(id),
                None => out.extend(piece.bytes().map(|b| self.byte_base + b as TokenId)),
            }
        }
        out
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut pending_bytes: Vec<u8> = Vec::new();
        let flush = |pending: &mut Vec<u8>, out: &mut String| {
            if !pending.is_empty() {
                out.push_str(&String::from_utf8_lossy(pending));
                pending.clear();
            }
        };
        for &id in ids {
            if id < self.byte_base {
                flush(&mut pending_bytes, &mut out);
                out.push_str(&self.pieces[id as usize]);
            } else if id < self.special_base {
                pending_bytes.push((id - self.byte_base) as u8);
            } else {
                flush(&mut pending_bytes, &mut out);
                let idx = (id - self.special_base) as usize;
                if let Some((_, name)) = SPECIALS.get(idx) {
                    out.push_str(name);
                }
            }
        }
        flush(&mut pending_bytes, &mut out);
        out
    }
}

/// The fixed text corpus a run's tokenizer is built from: grammar keywords,
/// the prompt templates, every label name, and all grid cell tokens. The
/// extra documents let callers fold in auxiliary task text.
pub fn grammar_corpus<S: AsRef<str>>(
    vocab: &crate::labelspace::LabelVocabulary,
    grid: u16,
    extra: &[S],
) -> Vec<String> {
    use crate::report::{build_prompt, PromptStyle};
    let mut corpus = Vec::new();
    corpus.push("Global diseases: none. Local findings: none. No findings.".to_string());
    corpus.push(build_prompt(PromptStyle::Default, None, vocab).unwrap());
    // Styled templates carry study-specific context; their fixed wording is
    // what matters here, so instantiate them with a throwaway report.
    let sample = crate::report::StructuredReport {
        globals: [crate::labelspace::GlobalLabel(0)].into_iter().collect(),
        findings: alloc::vec![crate::report::ReportFinding {
            label: crate::labelspace::LocalLabel(0),
            bbox: Some(crate::report::GridBox::new(0, 0, 1, 1, grid).unwrap()),
        }],
    };
    corpus.push(build_prompt(PromptStyle::Global, Some(&sample), vocab).unwrap());
    corpus.push(build_prompt(PromptStyle::Local, Some(&sample), vocab).unwrap());
    for name in vocab.global_labels().iter().chain(vocab.local_labels()) {
        corpus.push(name.clone());
    }
    let cells: Vec<String> = (0..grid).map(|g| alloc::format!("<{g}>")).collect();
    corpus.push(cells.join(""));
    for doc in extra {
        corpus.push(doc.as_ref().to_string());
    }
    corpus
}
