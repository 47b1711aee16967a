//! Parallel-corpus noise injection, score filtering and subset sampling.
//!
//! All randomness for pair `i` comes from a SplitMix64 stream seeded by
//! `(seed, operation, i)`, so results do not depend on processing order,
//! chunking or thread count.

use std::collections::BinaryHeap;
use std::io::{BufRead, Write};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Replacement characters for character noise: `[a-zA-Z0-9]` followed by the
/// 32 printable ASCII punctuation characters.
pub const NOISE_ALPHABET: &str = concat!(
    "abcdefghijklmnopqrstuvwxyz",
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ",
    "0123456789",
    "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~",
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
    pub score: Option<f64>,
    pub index: usize,
}

impl SentencePair {
    pub fn new(index: usize, source: impl Into<String>, target: impl Into<String>) -> Self {
        Self { source: source.into(), target: target.into(), score: None, index }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    fn side_mut(&mut self, side: Side) -> &mut String {
        match side {
            Side::Source => &mut self.source,
            Side::Target => &mut self.target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    CharNoise,
    WordDelete,
    PairShuffle,
}

impl CorruptionKind {
    /// Noise rate used when none is given.
    pub fn default_prob(self) -> f64 {
        match self {
            CorruptionKind::CharNoise => 0.1,
            CorruptionKind::WordDelete => 0.15,
            CorruptionKind::PairShuffle => 0.1,
        }
    }

    fn salt(self) -> u64 {
        match self {
            CorruptionKind::CharNoise => 0x6368_6172,
            CorruptionKind::WordDelete => 0x776f_7264,
            CorruptionKind::PairShuffle => 0x7368_7566,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Source,
    #[default]
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub side: Side,
    pub prob: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, side: Side, seed: u64) -> Self {
        Self { kind, side, prob: kind.default_prob(), seed }
    }

    pub fn with_prob(self, prob: f64) -> Self {
        Self { prob, ..self }
    }

    fn check(&self, kind: CorruptionKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Schema(format!("expected a {kind:?} spec, got {:?}", self.kind)));
        }
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(Error::Domain(format!("probability must lie in [0, 1], got {}", self.prob)));
        }
        Ok(())
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// The SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        Self(state)
    }

    /// Stream for item `index` under `(seed, salt)`.
    pub fn for_item(seed: u64, salt: u64, index: u64) -> Self {
        let mut mixer = Self(seed ^ salt.rotate_left(32));
        let base = mixer.next_u64();
        Self(base ^ index.wrapping_mul(GOLDEN))
    }
}

impl RngCore for SplitMix64 {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(GOLDEN);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

fn noise_chars(text: &str, prob: f64, rng: &mut impl Rng) -> String {
    let alphabet = NOISE_ALPHABET.as_bytes();
    text.chars()
        .map(|c| {
            if rng.random::<f64>() < prob {
                alphabet[rng.random_range(0..alphabet.len())] as char
            } else {
                c
            }
        })
        .collect()
}

fn drop_words(text: &str, prob: f64, rng: &mut impl Rng) -> String {
    text.split_whitespace()
        .filter(|_| rng.random::<f64>() >= prob)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Replaces each character of the chosen side, independently with
/// probability `spec.prob`, by a uniform draw from [`NOISE_ALPHABET`].
pub fn corrupt_chars<I>(pairs: I, spec: &CorruptionSpec) -> Result<impl Iterator<Item = SentencePair>>
where
    I: IntoIterator<Item = SentencePair>,
{
    spec.check(CorruptionKind::CharNoise)?;
    let spec = *spec;
    Ok(pairs.into_iter().map(move |mut pair| {
        let mut rng = SplitMix64::for_item(spec.seed, spec.kind.salt(), pair.index as u64);
        let side = pair.side_mut(spec.side);
        *side = noise_chars(side, spec.prob, &mut rng);
        pair
    }))
}

/// Drops each whitespace-separated word of the chosen side with probability
/// `spec.prob`; survivors are joined by single spaces.
pub fn delete_words<I>(pairs: I, spec: &CorruptionSpec) -> Result<impl Iterator<Item = SentencePair>>
where
    I: IntoIterator<Item = SentencePair>,
{
    spec.check(CorruptionKind::WordDelete)?;
    let spec = *spec;
    Ok(pairs.into_iter().map(move |mut pair| {
        let mut rng = SplitMix64::for_item(spec.seed, spec.kind.salt(), pair.index as u64);
        let side = pair.side_mut(spec.side);
        *side = drop_words(side, spec.prob, &mut rng);
        pair
    }))
}

/// Selects pairs by independent coin flips and rotates the targets of the
/// selection by one position, so every selected pair gets another pair's
/// target when at least two are selected. Sources never move.
pub fn shuffle_pairs(mut pairs: Vec<SentencePair>, spec: &CorruptionSpec) -> Result<Vec<SentencePair>> {
    spec.check(CorruptionKind::PairShuffle)?;
    let selected: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, pair)| {
            let mut rng = SplitMix64::for_item(spec.seed, spec.kind.salt(), pair.index as u64);
            rng.random::<f64>() < spec.prob
        })
        .map(|(pos, _)| pos)
        .collect();
    if selected.len() < 2 {
        return Ok(pairs);
    }
    let first = std::mem::take(&mut pairs[selected[0]].target);
    for w in selected.windows(2) {
        pairs[w[0]].target = std::mem::take(&mut pairs[w[1]].target);
    }
    pairs[*selected.last().unwrap()].target = first;
    Ok(pairs)
}

/// Applies any corruption kind to a materialized corpus.
pub fn corrupt(pairs: Vec<SentencePair>, spec: &CorruptionSpec) -> Result<Vec<SentencePair>> {
    match spec.kind {
        CorruptionKind::CharNoise => Ok(corrupt_chars(pairs, spec)?.collect()),
        CorruptionKind::WordDelete => Ok(delete_words(pairs, spec)?.collect()),
        CorruptionKind::PairShuffle => shuffle_pairs(pairs, spec),
    }
}

fn scores(pairs: &[SentencePair]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| match p.score {
            Some(s) if !s.is_nan() => Ok(s),
            _ => Err(Error::Schema(format!("pair {} has no score", p.index))),
        })
        .collect()
}

/// Keeps the `ceil(fraction * n)` highest-scoring pairs in corpus order.
/// Ties at the cutoff go to the lower index.
pub fn filter_top_fraction(pairs: Vec<SentencePair>, fraction: f64) -> Result<Vec<SentencePair>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let scores = scores(&pairs)?;
    let exact = fraction * pairs.len() as f64;
    let keep = if (exact - exact.round()).abs() < 1e-9 { exact.round() } else { exact.ceil() } as usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then(pairs[a].index.cmp(&pairs[b].index))
    });
    let mut kept = vec![false; pairs.len()];
    for &pos in &order[..keep] {
        kept[pos] = true;
    }
    let mut out: Vec<SentencePair> =
        pairs.into_iter().zip(kept).filter(|(_, k)| *k).map(|(p, _)| p).collect();
    out.sort_by_key(|p| p.index);
    Ok(out)
}

/// Keeps pairs whose score is at least `threshold`.
pub fn filter_threshold(pairs: Vec<SentencePair>, threshold: f64) -> Result<Vec<SentencePair>> {
    let scores = scores(&pairs)?;
    Ok(pairs.into_iter().zip(scores).filter(|(_, s)| *s >= threshold).map(|(p, _)| p).collect())
}

const SAMPLE_SALT: u64 = 0x7361_6d70;

struct Keyed {
    key: u64,
    pair: SentencePair,
}

impl PartialEq for Keyed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Keyed {}

impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Keyed {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key).then(self.pair.index.cmp(&other.pair.index))
    }
}

/// Single-pass uniform sampler without replacement. Each pair draws a key from
/// its own seeded stream and the `size` smallest keys are kept, so the sample
/// is the same however the input is split into chunks.
pub struct Reservoir {
    size: usize,
    seed: u64,
    seen: usize,
    heap: BinaryHeap<Keyed>,
}

impl Reservoir {
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Domain("sample size must be positive".into()));
        }
        Ok(Self { size, seed, seen: 0, heap: BinaryHeap::with_capacity(size + 1) })
    }

    pub fn push(&mut self, pair: SentencePair) {
        self.seen += 1;
        let key = SplitMix64::for_item(self.seed, SAMPLE_SALT, pair.index as u64).next_u64();
        let item = Keyed { key, pair };
        if self.heap.len() < self.size {
            self.heap.push(item);
        } else if let Some(top) = self.heap.peek() {
            if item < *top {
                self.heap.pop();
                self.heap.push(item);
            }
        }
    }

    pub fn extend<I: IntoIterator<Item = SentencePair>>(&mut self, pairs: I) {
        for pair in pairs {
            self.push(pair);
        }
    }

    /// The sample in corpus order.
    pub fn finish(self) -> Result<Vec<SentencePair>> {
        if self.seen < self.size {
            return Err(Error::Domain(format!(
                "sample size {} exceeds corpus size {}",
                self.size, self.seen
            )));
        }
        let mut out: Vec<SentencePair> = self.heap.into_iter().map(|k| k.pair).collect();
        out.sort_by_key(|p| p.index);
        Ok(out)
    }
}

pub fn sample_subset<I>(pairs: I, size: usize, seed: u64) -> Result<Vec<SentencePair>>
where
    I: IntoIterator<Item = SentencePair>,
{
    let mut reservoir = Reservoir::new(size, seed)?;
    reservoir.extend(pairs);
    reservoir.finish()
}

/// Reads the TAB-separated corpus format: `source\ttarget[\tscore]` per line.
/// `origin` names the input in error messages.
pub fn read_corpus<R: BufRead>(reader: R, origin: &str) -> Result<Vec<SentencePair>> {
    let mut pairs = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let parse_err = |msg: String| Error::Parse { path: origin.to_string(), line: index + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        let pair = match fields.as_slice() {
            [src, tgt] => SentencePair::new(index, *src, *tgt),
            [src, tgt, score] => {
                let score: f64 = score
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("invalid score '{score}'")))?;
                SentencePair::new(index, *src, *tgt).with_score(score)
            }
            _ => return Err(parse_err(format!("expected 2 or 3 TAB-separated fields, got {}", fields.len()))),
        };
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_corpus<W: Write>(mut writer: W, pairs: &[SentencePair]) -> Result<()> {
    for pair in pairs {
        match pair.score {
            Some(score) => writeln!(writer, "{}\t{}\t{}", pair.source, pair.target, score)?,
            None => writeln!(writer, "{}\t{}", pair.source, pair.target)?,
        }
    }
    writer.flush()?;
    Ok(())
}
