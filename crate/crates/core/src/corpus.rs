//! Tokenization, vocabulary, fixed-length encoding and the two-cut
//! segmentation plan.
//!
//! Lines are split on whitespace with no normalization. Every encoded
//! sequence has the corpus length `T`; positions at or after the true length
//! hold the pad id.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const START_TOKEN: &str = "<s>";

/// Bijective token ↔ id mapping. Ids 0 and 1 are the pad and start tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pad_id: usize,
    start_id: usize,
}

impl Vocab {
    fn with_specials() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
            pad_id: 0,
            start_id: 1,
        };
        v.insert(PAD_TOKEN);
        v.insert(START_TOKEN);
        v
    }

    fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Vocabulary for the synthetic benchmark: the specials followed by the
    /// words `"0"`, `"1"`, …, `"{n_words - 1}"`.
    pub fn synthetic(n_words: usize) -> Self {
        let mut v = Self::with_specials();
        for w in 0..n_words {
            v.insert(&w.to_string());
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of ordinary (non-special) tokens.
    pub fn num_words(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn pad_id(&self) -> usize {
        self.pad_id
    }

    pub fn start_id(&self) -> usize {
        self.start_id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids of ordinary tokens, in id order.
    pub fn word_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.tokens.len()).filter(move |&i| i != self.pad_id && i != self.start_id)
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(PAD_TOKEN) || lines.next() != Some(START_TOKEN) {
            return Err(Error::Schema(format!(
                "vocabulary must start with {PAD_TOKEN} and {START_TOKEN}"
            )));
        }
        let mut v = Self::with_specials();
        for (i, line) in lines.enumerate() {
            if line.is_empty() || v.index.contains_key(line) {
                return Err(Error::Schema(format!(
                    "vocabulary line {} is empty or duplicated",
                    i + 2
                )));
            }
            v.insert(line);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Builds a vocabulary in first-occurrence order, specials first.
pub fn build_vocab<S: AsRef<str>>(raw_lines: &[S]) -> Result<Vocab> {
    let mut v = Vocab::with_specials();
    for line in raw_lines {
        for tok in line.as_ref().split_whitespace() {
            v.insert(tok);
        }
    }
    if v.len() == 2 {
        return Err(Error::EmptyInput("no tokens in any line"));
    }
    Ok(v)
}

/// A fixed-length id sequence, pad-filled after `true_len`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sequence {
    ids: Vec<usize>,
    true_len: usize,
}

impl Sequence {
    /// Pads `tokens` (which must not contain `pad_id`) to `max_len`.
    pub fn padded(tokens: &[usize], max_len: usize, pad_id: usize) -> Self {
        assert!(tokens.len() <= max_len);
        debug_assert!(tokens.iter().all(|&t| t != pad_id));
        let mut ids = tokens.to_vec();
        ids.resize(max_len, pad_id);
        Sequence {
            ids,
            true_len: tokens.len(),
        }
    }

    /// Interprets a raw length-`T` id row: everything from the first pad on
    /// is pad.
    pub fn from_raw(mut ids: Vec<usize>, pad_id: usize) -> Self {
        let true_len = ids.iter().position(|&t| t == pad_id).unwrap_or(ids.len());
        for id in &mut ids[true_len..] {
            *id = pad_id;
        }
        Sequence { ids, true_len }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn true_len(&self) -> usize {
        self.true_len
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// The real tokens, without padding.
    pub fn tokens(&self) -> &[usize] {
        &self.ids[..self.true_len]
    }

    /// Copy with every position at or after `t` replaced by `pad_id`.
    pub fn masked_after(&self, t: usize, pad_id: usize) -> Vec<usize> {
        let mut ids = self.ids.clone();
        for id in ids.iter_mut().skip(t) {
            *id = pad_id;
        }
        ids
    }
}

/// Space-joined tokens of a sequence.
pub fn decode(seq: &Sequence, vocab: &Vocab) -> Vec<String> {
    seq.tokens()
        .iter()
        .map(|&id| vocab.token(id).unwrap_or("<unk>").to_string())
        .collect()
}

/// A set of equal-length sequences with its average-length cut point.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    sequences: Vec<Sequence>,
    max_len: usize,
    avg_len: usize,
}

/// Round-half-up mean of the true lengths, clamped to `[1, max_len]`, with
/// the fixed-length fallback `floor(max_len / 2)` when the mean reaches
/// `max_len` and `max_len ≥ 2`.
fn average_cut(sequences: &[Sequence], max_len: usize) -> usize {
    if sequences.is_empty() {
        return (max_len / 2).max(1);
    }
    let total: usize = sequences.iter().map(Sequence::true_len).sum();
    let mean = total as f64 / sequences.len() as f64;
    let rounded = ((mean + 0.5).floor() as usize).clamp(1, max_len.max(1));
    if rounded == max_len && max_len >= 2 {
        max_len / 2
    } else {
        rounded
    }
}

impl Corpus {
    pub fn from_sequences(sequences: Vec<Sequence>, max_len: usize) -> Self {
        assert!(sequences.iter().all(|s| s.max_len() == max_len));
        let avg_len = average_cut(&sequences, max_len);
        Corpus {
            sequences,
            max_len,
            avg_len,
        }
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// `T`.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// `T_ave` after the fixed-length fallback.
    pub fn avg_len(&self) -> usize {
        self.avg_len
    }

    /// Arithmetic mean of the true lengths.
    pub fn mean_len(&self) -> f64 {
        let total: usize = self.sequences.iter().map(Sequence::true_len).sum();
        total as f64 / self.sequences.len().max(1) as f64
    }

    /// Token lists for BLEU references.
    pub fn token_lists(&self) -> Vec<Vec<usize>> {
        self.sequences.iter().map(|s| s.tokens().to_vec()).collect()
    }

    pub fn to_lines(&self, vocab: &Vocab) -> Vec<String> {
        self.sequences
            .iter()
            .map(|s| decode(s, vocab).join(" "))
            .collect()
    }
}

/// Encodes whitespace-tokenized lines into length-`max_len` sequences.
pub fn encode_corpus<S: AsRef<str>>(lines: &[S], vocab: &Vocab, max_len: usize) -> Result<Corpus> {
    if max_len == 0 {
        return Err(Error::InvalidDimension("maximum length must be ≥ 1".into()));
    }
    let mut sequences = Vec::with_capacity(lines.len());
    for (index, line) in lines.iter().enumerate() {
        let toks: Vec<&str> = line.as_ref().split_whitespace().collect();
        if toks.is_empty() {
            return Err(Error::EmptyLine(index));
        }
        if toks.len() > max_len {
            return Err(Error::LineTooLong {
                index,
                len: toks.len(),
                max_len,
            });
        }
        let ids = toks
            .iter()
            .map(|t| {
                vocab.id(t).ok_or_else(|| Error::UnknownToken {
                    index,
                    token: t.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        sequences.push(Sequence::padded(&ids, max_len, vocab.pad_id()));
    }
    Ok(Corpus::from_sequences(sequences, max_len))
}

/// The two cut points used by the simplified two-segment method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentPlan {
    pub t_mid: usize,
    pub t_full: usize,
}

impl SegmentPlan {
    /// Validated explicit plan: `1 ≤ t_mid < t_full`.
    pub fn new(t_mid: usize, t_full: usize) -> Result<Self> {
        if t_mid == 0 || t_mid >= t_full {
            return Err(Error::config(
                "cut_mid",
                format!("need 1 ≤ t_mid < t_full, got t_mid={t_mid}, t_full={t_full}"),
            ));
        }
        Ok(SegmentPlan { t_mid, t_full })
    }

    pub fn cuts(&self) -> [usize; 2] {
        [self.t_mid, self.t_full]
    }
}

pub fn segment_plan(corpus: &Corpus) -> Result<SegmentPlan> {
    let t_full = corpus.max_len();
    if t_full < 2 {
        return Err(Error::NoSegmentation(t_full));
    }
    let t_mid = if corpus.avg_len() >= t_full {
        t_full / 2
    } else {
        corpus.avg_len()
    };
    Ok(SegmentPlan { t_mid, t_full })
}

/// Reads a corpus file: one sentence per line, blank lines skipped.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for l in lines {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
