//! Character-level vocabulary and encoding.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const BOS: u32 = 5;
pub const EOS: u32 = 6;

pub const RESERVED: [&str; 7] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[BOS]", "[EOS]"];
pub const NUM_RESERVED: usize = RESERVED.len();

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_RESERVED
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    to_id: HashMap<char, u32>,
    chars: Vec<char>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// `[CLS] text [SEP]`, padded to `max_len`.
    Encoder,
    /// `[BOS] text [EOS]`, never padded.
    Decoder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
    /// Character count of the (normalized) source text.
    pub original_length: usize,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<u32>) -> Self {
        let attention_mask = ids.iter().map(|&i| i != PAD).collect();
        TokenSequence {
            original_length: ids.len(),
            ids,
            attention_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m).count()
    }
}

pub fn normalize(text: &str) -> String {
    text.nfc().collect()
}

impl Vocab {
    /// Characters with frequency ≥ `min_freq`, ordered by descending
    /// frequency then code point.
    pub fn build<S: AsRef<str>>(texts: &[S], min_freq: usize) -> Result<Vocab> {
        if texts.is_empty() {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut freq: BTreeMap<char, usize> = BTreeMap::new();
        for t in texts {
            for c in normalize(t.as_ref()).chars() {
                *freq.entry(c).or_default() += 1;
            }
        }
        let mut entries: Vec<(char, usize)> = freq.into_iter().filter(|&(_, n)| n >= min_freq.max(1)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(Vocab::from_chars(entries.into_iter().map(|(c, _)| c)))
    }

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Vocab {
        let mut v = Vocab {
            to_id: HashMap::new(),
            chars: Vec::new(),
        };
        for c in chars {
            v.push(c);
        }
        v
    }

    /// Adds a character if it is not yet present; returns its id.
    pub fn push(&mut self, c: char) -> u32 {
        if let Some(&id) = self.to_id.get(&c) {
            return id;
        }
        let id = (NUM_RESERVED + self.chars.len()) as u32;
        self.chars.push(c);
        self.to_id.insert(c, id);
        id
    }

    pub fn extend_from_text(&mut self, text: &str) {
        for c in normalize(text).chars() {
            self.push(c);
        }
    }

    pub fn len(&self) -> usize {
        NUM_RESERVED + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> u32 {
        self.to_id.get(&c).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Result<String> {
        let i = id as usize;
        if i < NUM_RESERVED {
            Ok(RESERVED[i].to_string())
        } else {
            self.chars
                .get(i - NUM_RESERVED)
                .map(|c| c.to_string())
                .ok_or_else(|| Error::invalid(format!("token id {id} out of range for vocab of {}", self.len())))
        }
    }

    /// Ids of the characters of `text`, without specials.
    pub fn ids(&self, text: &str) -> Vec<u32> {
        normalize(text).chars().map(|c| self.id(c)).collect()
    }

    pub fn encode(&self, text: &str, max_len: usize, mode: Mode) -> Result<TokenSequence> {
        if max_len < 3 {
            return Err(Error::invalid(format!("max_len must be at least 3, got {max_len}")));
        }
        let body = self.ids(text);
        let original_length = body.len();
        let keep = body.len().min(max_len - 2);
        let (open, close) = match mode {
            Mode::Encoder => (CLS, SEP),
            Mode::Decoder => (BOS, EOS),
        };
        let mut ids = Vec::with_capacity(max_len);
        ids.push(open);
        ids.extend_from_slice(&body[..keep]);
        ids.push(close);
        let mut attention_mask = vec![true; ids.len()];
        if mode == Mode::Encoder {
            attention_mask.resize(max_len, false);
            ids.resize(max_len, PAD);
        }
        Ok(TokenSequence {
            ids,
            attention_mask,
            original_length,
        })
    }

    /// Concatenates non-special tokens, stopping at the first `[EOS]`.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            if id as usize >= self.len() {
                return Err(Error::invalid(format!("token id {id} out of range for vocab of {}", self.len())));
            }
            if id == EOS {
                break;
            }
            if !is_special(id) {
                out.push(self.chars[id as usize - NUM_RESERVED]);
            }
        }
        Ok(out)
    }

    /// One token per line: the reserved block first, then ids 7, 8, ….
    /// Newline, carriage return and backslash are escaped.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for r in RESERVED {
            s.push_str(r);
            s.push('\n');
        }
        for &c in &self.chars {
            match c {
                '\n' => s.push_str("\\n"),
                '\r' => s.push_str("\\r"),
                '\\' => s.push_str("\\\\"),
                _ => s.push(c),
            }
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(s: &str) -> Result<Vocab> {
        let lines: Vec<&str> = s.split('\n').collect();
        let lines = match lines.last() {
            Some(&"") => &lines[..lines.len() - 1],
            _ => &lines[..],
        };
        if lines.len() < NUM_RESERVED || lines[..NUM_RESERVED] != RESERVED {
            return Err(Error::invalid("vocab file does not start with the reserved token block"));
        }
        let mut v = Vocab::from_chars([]);
        for (n, line) in lines[NUM_RESERVED..].iter().enumerate() {
            let c = match *line {
                "\\n" => '\n',
                "\\r" => '\r',
                "\\\\" => '\\',
                other => {
                    let mut it = other.chars();
                    match (it.next(), it.next()) {
                        (Some(c), None) => c,
                        _ => {
                            return Err(Error::invalid(format!(
                                "vocab line {} holds {other:?}, expected one character",
                                n + NUM_RESERVED + 1
                            )))
                        }
                    }
                }
            };
            if v.to_id.contains_key(&c) {
                return Err(Error::invalid(format!("duplicate vocab entry {c:?}")));
            }
            v.push(c);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_file_string(&s)
    }

    /// Human-readable dump of an id sequence, specials included.
    pub fn render(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            let _ = write!(s, "{}", self.token(id).unwrap_or_else(|_| "[?]".into()));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_examples() {
        let v = Vocab::build(&["aab"], 1).unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v.id('a'), 7);
        assert_eq!(v.id('b'), 8);
        let v = Vocab::build(&["aab"], 3).unwrap();
        assert_eq!(v.len(), NUM_RESERVED);
        assert_eq!(v.id('a'), UNK);
        assert_eq!(Vocab::build(&["cab", "bca"], 1).unwrap(), Vocab::build(&["cab", "bca"], 1).unwrap());
        assert!(Vocab::build::<&str>(&[], 1).is_err());
    }

    #[test]
    fn encode_examples() {
        let v = Vocab::build(&["ab"], 1).unwrap();
        let e = v.encode("", 5, Mode::Encoder).unwrap();
        assert_eq!(e.ids, vec![CLS, SEP, PAD, PAD, PAD]);
        assert_eq!(e.attention_mask, vec![true, true, false, false, false]);

        let e = v.encode("ab", 3, Mode::Encoder).unwrap();
        assert_eq!(e.ids, vec![CLS, v.id('a'), SEP]);

        let d = v.encode("ab", 10, Mode::Decoder).unwrap();
        assert_eq!(d.ids, vec![BOS, 7, 8, EOS]);
        assert_eq!(v.encode("azb", 10, Mode::Decoder).unwrap().ids[2], UNK);
        assert!(v.encode("a", 2, Mode::Encoder).is_err());
    }

    #[test]
    fn decode_examples() {
        let v = Vocab::build(&["ab"], 1).unwrap();
        assert_eq!(v.decode(&[CLS, 7, 8, SEP, PAD]).unwrap(), "ab");
        assert_eq!(v.decode(&[BOS, 7, EOS, 8]).unwrap(), "a");
        assert_eq!(v.decode(&[]).unwrap(), "");
        assert!(v.decode(&[99]).is_err());
    }

    #[test]
    fn vocab_file_round_trip_with_escapes() {
        let v = Vocab::from_chars(['头', '\n', '\\', 'n', ' ']);
        let s = v.to_file_string();
        assert!(s.starts_with("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n[BOS]\n[EOS]\n头\n"));
        assert_eq!(Vocab::from_file_string(&s).unwrap(), v);
        assert!(Vocab::from_file_string("[PAD]\n").is_err());
    }

    #[test]
    fn nfc_normalization() {
        let v = Vocab::build(&["e\u{301}"], 1).unwrap();
        assert_eq!(v.len(), NUM_RESERVED + 1);
        assert_eq!(v.ids("\u{e9}"), vec![7]);
    }

    proptest! {
        #[test]
        fn round_trip_and_length(text in "[a-f头痛发热]{0,20}", max_len in 3usize..30) {
            let v = Vocab::build(&["abcdef头痛发热"], 1).unwrap();
            let e = v.encode(&text, max_len, Mode::Encoder).unwrap();
            prop_assert_eq!(e.ids.len(), max_len);
            prop_assert_eq!(e.attention_mask.len(), max_len);
            let d = v.encode(&text, max_len, Mode::Decoder).unwrap();
            prop_assert!(d.ids.len() <= max_len);
            if text.chars().count() <= max_len - 2 {
                prop_assert_eq!(v.decode(&e.ids).unwrap(), text.clone());
                prop_assert_eq!(v.decode(&d.ids).unwrap(), text);
            }
        }
    }
}
