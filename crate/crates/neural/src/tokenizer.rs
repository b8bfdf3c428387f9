//! Text to token ids.
//!
//! [`WordPiece`] reproduces the uncased BERT tokenizer: whitespace and
//! punctuation splitting, one token per CJK character, lowercasing with
//! accent stripping, then greedy longest-match subwords. [`CharVocab`] is
//! the character vocabulary used by the baselines.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::NeuralError;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const MAX_WORD_CHARS: usize = 100;

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F
        | 0x2B820..=0x2CEAF
        | 0xF900..=0xFAFF
        | 0x2F800..=0x2FA1F)
}

// ASCII symbols count as punctuation too, as in the reference tokenizer.
// Outside ASCII this covers the general, CJK and full-width punctuation blocks.
fn is_punctuation(c: char) -> bool {
    let cp = c as u32;
    matches!(cp, 33..=47 | 58..=64 | 91..=96 | 123..=126)
        || matches!(cp,
            0x2010..=0x2027
            | 0x2030..=0x205E
            | 0x3000..=0x303F
            | 0xFF01..=0xFF0F
            | 0xFF1A..=0xFF20
            | 0xFF3B..=0xFF40
            | 0xFF5B..=0xFF65)
        || matches!(c, '¡' | '§' | '«' | '¶' | '·' | '»' | '¿')
}

fn is_control(c: char) -> bool {
    if matches!(c, '\t' | '\n' | '\r') {
        return false;
    }
    c.is_control()
}

/// Splits text into words the way the BERT basic tokenizer does.
pub fn basic_tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() * 2);
    for c in text.chars() {
        if c == '\0' || c == '\u{FFFD}' || is_control(c) {
            continue;
        }
        if c.is_whitespace() {
            spaced.push(' ');
        } else if is_cjk(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    let mut out = Vec::new();
    for word in spaced.split_whitespace() {
        let word: String = if lowercase {
            word.to_lowercase().nfd().filter(|c| !is_combining_mark(*c)).collect()
        } else {
            word.to_string()
        };
        let mut current = String::new();
        for c in word.chars() {
            if is_punctuation(c) {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Token ids with the special-token layout and segment ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub type_ids: Vec<u32>,
    /// Whether tokens were cut to fit the length limit.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct WordPiece {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    pub lowercase: bool,
}

impl WordPiece {
    pub fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Result<WordPiece, NeuralError> {
        let index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for special in [PAD, UNK, CLS, SEP, MASK] {
            if !index.contains_key(special) {
                return Err(NeuralError::Checkpoint(format!("vocabulary lacks {special}")));
            }
        }
        Ok(WordPiece {
            vocab: tokens,
            index,
            lowercase,
        })
    }

    /// Reads a `vocab.txt` with one token per line.
    pub fn load(path: &Path, lowercase: bool) -> Result<WordPiece, NeuralError> {
        let text = fs::read_to_string(path).map_err(|e| NeuralError::io(path, e))?;
        WordPiece::from_tokens(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect(), lowercase)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let mut text = self.vocab.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| NeuralError::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn special(&self, token: &str) -> u32 {
        self.index[token]
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        let unk = self.special(UNK);
        if chars.len() > MAX_WORD_CHARS {
            out.push(unk);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(&id) = self.index.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(unk);
                    return;
                }
            }
        }
        out.extend(pieces);
    }

    /// Subword ids without special tokens.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in basic_tokenize(text, self.lowercase) {
            self.word_pieces(&word, &mut out);
        }
        out
    }

    /// `[CLS] text [SEP]`, cut to at most `max_len` ids.
    pub fn encode(&self, text: &str, max_len: usize) -> Encoding {
        let mut tokens = self.tokenize(text);
        let room = max_len.saturating_sub(2);
        let truncated = tokens.len() > room;
        tokens.truncate(room);
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(self.special(CLS));
        ids.extend(tokens);
        ids.push(self.special(SEP));
        Encoding {
            type_ids: vec![0; ids.len()],
            ids,
            truncated,
        }
    }

    /// `[CLS] a [SEP] b [SEP]`, trimming the longer side first.
    pub fn encode_pair(&self, a: &str, b: &str, max_len: usize) -> Encoding {
        let (mut ta, mut tb) = (self.tokenize(a), self.tokenize(b));
        let room = max_len.saturating_sub(3);
        let truncated = ta.len() + tb.len() > room;
        while ta.len() + tb.len() > room {
            if ta.len() >= tb.len() {
                ta.pop();
            } else {
                tb.pop();
            }
        }
        let mut ids = vec![self.special(CLS)];
        ids.extend(&ta);
        ids.push(self.special(SEP));
        let first = ids.len();
        ids.extend(&tb);
        ids.push(self.special(SEP));
        let mut type_ids = vec![0; first];
        type_ids.resize(ids.len(), 1);
        Encoding {
            ids,
            type_ids,
            truncated,
        }
    }
}

/// Character vocabulary. Id 0 is padding and id 1 is unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, u32>,
}

pub const CHAR_PAD: u32 = 0;
pub const CHAR_UNK: u32 = 1;

impl CharVocab {
    /// Characters seen at least `min_count` times, most frequent first,
    /// ties by code point.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> CharVocab {
        let mut counts: BTreeMap<char, usize> = BTreeMap::new();
        for t in texts {
            for c in t.chars() {
                *counts.entry(c).or_default() += 1;
            }
        }
        let mut ranked: Vec<(char, usize)> =
            counts.into_iter().filter(|(_, n)| *n >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        CharVocab::from_chars(ranked.into_iter().map(|(c, _)| c).collect())
    }

    pub fn from_chars(chars: Vec<char>) -> CharVocab {
        CharVocab {
            chars,
            index: HashMap::new(),
        }
        .indexed()
    }

    pub(crate) fn indexed(mut self) -> CharVocab {
        self.index = self
            .chars
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, i as u32 + 2))
            .collect();
        self
    }

    /// Number of ids including padding and unknown.
    pub fn size(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(CHAR_UNK)
    }

    /// Ids of the first `max_len` non-whitespace characters.
    pub fn encode(&self, text: &str, max_len: usize) -> Encoding {
        let all: Vec<u32> = text.chars().filter(|c| !c.is_whitespace()).map(|c| self.id(c)).collect();
        let truncated = all.len() > max_len;
        let ids: Vec<u32> = all.into_iter().take(max_len).collect();
        Encoding {
            type_ids: vec![0; ids.len()],
            ids,
            truncated,
        }
    }
}
