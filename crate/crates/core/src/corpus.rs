//! Synthetic summarization corpora and their JSONL form.
//!
//! A generated source is stopword/punctuation filler with a few planted runs
//! of content words (the salient spans); the reference is those spans
//! concatenated in source order. Optional decoys are isolated content words
//! dropped into the filler: they look like content but never belong to the
//! reference, so picking salient content requires context rather than word
//! identity alone.
//!
//! JSONL schema, one object per line:
//! `{"id": str, "source": [str], "reference": [str], "labels": [0|1]?, "split": str?}`.
//! Missing labels are filled by oracle alignment on ingestion; a missing
//! split defaults to the one requested by the caller.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::oracle_labels;
use crate::text;
use crate::vocab::{TokenId, Vocab, N_SPECIAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Analysis,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Validation, Split::Analysis, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Analysis => "analysis",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub split: Split,
    pub source: Vec<TokenId>,
    pub reference: Vec<TokenId>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<Example> {
        self.examples.iter().filter(|e| e.split == split).cloned().collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.examples.iter().filter(|e| e.split == split).count()
    }

    pub fn words(&self, ids: &[TokenId]) -> Vec<String> {
        self.vocab.decode(ids)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            let rec = Record {
                id: e.id.clone(),
                source: self.vocab.decode(&e.source),
                reference: self.vocab.decode(&e.reference),
                labels: Some(e.labels.iter().map(|&b| b as u8).collect()),
                split: Some(e.split),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    source: Vec<String>,
    reference: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Outcome of ingesting a JSONL file: every line is either validated or
/// reported.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub lines_read: usize,
    pub validated: usize,
    pub rejected: Vec<(usize, String)>,
    /// Examples whose labels came from oracle alignment.
    pub oracle_labeled: usize,
}

fn validate_record(rec: Record, default_split: Split) -> std::result::Result<(Record, Split, Vec<bool>, bool), String> {
    if rec.id.is_empty() {
        return Err("empty id".into());
    }
    if rec.source.is_empty() {
        return Err("empty source".into());
    }
    if rec.reference.is_empty() {
        return Err("empty reference".into());
    }
    if let Some(w) = rec
        .source
        .iter()
        .chain(&rec.reference)
        .find(|w| w.is_empty() || w.chars().any(char::is_whitespace))
    {
        return Err(format!("invalid token {w:?}"));
    }
    let split = rec.split.unwrap_or(default_split);
    let (labels, from_oracle) = match &rec.labels {
        Some(l) => {
            if l.len() != rec.source.len() {
                return Err(format!("{} labels for {} source tokens", l.len(), rec.source.len()));
            }
            if l.iter().any(|&v| v > 1) {
                return Err("labels must be 0 or 1".into());
            }
            (l.iter().map(|&v| v == 1).collect(), false)
        }
        None => (Vec::new(), true),
    };
    Ok((rec, split, labels, from_oracle))
}

/// Parses JSONL text. Fails listing every offending line when any line is
/// malformed or an id repeats.
pub fn parse_jsonl(text: &str, default_split: Split, origin: &Path) -> Result<(Corpus, IngestReport)> {
    let mut rejected = Vec::new();
    let mut accepted = Vec::new();
    let mut lines_read = 0;
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        lines_read += 1;
        let rec: Record = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                rejected.push((lineno, e.to_string()));
                continue;
            }
        };
        match validate_record(rec, default_split) {
            Ok(v) if !seen.insert(v.0.id.clone()) => rejected.push((lineno, format!("duplicate id {:?}", v.0.id))),
            Ok(v) => accepted.push(v),
            Err(msg) => rejected.push((lineno, msg)),
        }
    }
    if lines_read == 0 {
        return Err(Error::Ingest {
            path: origin.to_path_buf(),
            lines: vec![(0, "no examples".into())],
        });
    }
    if !rejected.is_empty() {
        return Err(Error::Ingest {
            path: origin.to_path_buf(),
            lines: rejected,
        });
    }
    let vocab = Vocab::from_words(
        accepted
            .iter()
            .flat_map(|(r, ..)| r.source.iter().chain(&r.reference).map(String::as_str)),
    );
    let mut oracle_labeled = 0;
    let examples = accepted
        .into_iter()
        .map(|(rec, split, labels, from_oracle)| {
            let source = vocab.encode(&rec.source);
            let reference = vocab.encode(&rec.reference);
            let labels = if from_oracle {
                oracle_labeled += 1;
                oracle_labels(&source, &reference)
            } else {
                labels
            };
            Example {
                id: rec.id,
                split,
                source,
                reference,
                labels,
            }
        })
        .collect::<Vec<_>>();
    let report = IngestReport {
        lines_read,
        validated: examples.len(),
        rejected: Vec::new(),
        oracle_labeled,
    };
    Ok((Corpus { vocab, examples }, report))
}

pub fn ingest(path: &Path, default_split: Split) -> Result<(Corpus, IngestReport)> {
    let file = std::fs::File::open(path)?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_jsonl(&text, default_split, path)
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: usize,
    pub max: usize,
}

impl Span {
    pub const fn new(min: usize, max: usize) -> Self {
        Span { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    /// Not part of the serialized spec; the pipeline supplies it from the
    /// run seed.
    #[serde(skip)]
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_analysis: usize,
    pub n_test: usize,
    /// Length budget for each source; the realized length is the span
    /// tokens plus `distractor_rate` of the remaining budget as filler.
    pub source_len: Span,
    pub n_salient_spans: Span,
    pub span_len: Span,
    /// 0 means no filler (source == reference); 1 fills the whole budget.
    pub distractor_rate: f64,
    /// Probability that a filler slot not adjacent to a span becomes an
    /// isolated content-word decoy.
    pub decoy_rate: f64,
    /// Size of the word pool, special tokens included.
    pub vocab_size: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            seed: 17,
            n_train: 2000,
            n_validation: 200,
            n_analysis: 200,
            n_test: 200,
            source_len: Span::new(30, 60),
            n_salient_spans: Span::new(1, 3),
            span_len: Span::new(3, 6),
            distractor_rate: 0.7,
            decoy_rate: 0.1,
            vocab_size: 200,
        }
    }
}

const FILLER_PUNCT: [&str; 2] = [",", "."];

impl GeneratorSpec {
    pub fn n_examples(&self) -> usize {
        self.n_train + self.n_validation + self.n_analysis + self.n_test
    }

    fn n_filler_words(&self) -> usize {
        text::stopwords().len() + FILLER_PUNCT.len()
    }

    pub fn n_content_words(&self) -> usize {
        self.vocab_size.saturating_sub(N_SPECIAL + self.n_filler_words())
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("source_len", self.source_len),
            ("n_salient_spans", self.n_salient_spans),
            ("span_len", self.span_len),
        ];
        for (name, r) in ranges {
            if r.min > r.max {
                return Err(Error::Config(format!("{name}: min {} exceeds max {}", r.min, r.max)));
            }
        }
        if self.n_salient_spans.min == 0 || self.span_len.min == 0 {
            return Err(Error::Config("every example needs at least one nonempty span".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) || !(0.0..=1.0).contains(&self.decoy_rate) {
            return Err(Error::Config("rates must lie in [0, 1]".into()));
        }
        let max_span_tokens = self.n_salient_spans.max * self.span_len.max;
        if max_span_tokens > self.source_len.min {
            return Err(Error::Config(format!(
                "up to {max_span_tokens} span tokens do not fit a source of length {}",
                self.source_len.min
            )));
        }
        // Span words are distinct within an example; decoys need spares.
        let needed = max_span_tokens + if self.decoy_rate > 0.0 { self.source_len.max } else { 0 };
        if self.n_content_words() < needed {
            return Err(Error::Config(format!(
                "vocab_size {} leaves {} content words, {} needed",
                self.vocab_size,
                self.n_content_words(),
                needed
            )));
        }
        if self.n_examples() == 0 {
            return Err(Error::Config("no examples requested".into()));
        }
        Ok(())
    }

    fn word_pools(&self) -> (Vec<String>, Vec<String>) {
        let filler = text::stopwords()
            .iter()
            .map(|s| s.to_string())
            .chain(FILLER_PUNCT.iter().map(|s| s.to_string()))
            .collect();
        let content = (0..self.n_content_words()).map(|i| format!("w{i:03}")).collect();
        (filler, content)
    }
}

struct Planted {
    source: Vec<String>,
    reference: Vec<String>,
    labels: Vec<bool>,
}

fn plant_example(spec: &GeneratorSpec, filler: &[String], content: &[String], rng: &mut ChaCha8Rng) -> Planted {
    let budget = spec.source_len.sample(rng);
    let n_spans = spec.n_salient_spans.sample(rng);
    let span_lens: Vec<usize> = (0..n_spans).map(|_| spec.span_len.sample(rng)).collect();
    let span_tokens: usize = span_lens.iter().sum();
    let n_filler = (spec.distractor_rate * (budget - span_tokens) as f64).round() as usize;

    let mut words: Vec<&String> = content.iter().collect();
    words.shuffle(rng);
    let mut words = words.into_iter();
    let spans: Vec<Vec<&String>> = span_lens
        .iter()
        .map(|&len| words.by_ref().take(len).collect())
        .collect();

    // Each span goes into one of the n_filler + 1 gaps; sorted gap order is
    // source order.
    let mut gaps: Vec<usize> = (0..n_spans).map(|_| rng.random_range(0..=n_filler)).collect();
    gaps.sort_unstable();

    let mut source: Vec<String> = Vec::with_capacity(n_filler + span_tokens);
    let mut labels = Vec::with_capacity(n_filler + span_tokens);
    let mut reference = Vec::with_capacity(span_tokens);
    let mut next_span = 0;
    for slot in 0..=n_filler {
        while next_span < n_spans && gaps[next_span] == slot {
            for w in &spans[next_span] {
                source.push((*w).clone());
                labels.push(true);
                reference.push((*w).clone());
            }
            next_span += 1;
        }
        if slot < n_filler {
            source.push(filler.choose(rng).expect("filler pool").clone());
            labels.push(false);
        }
    }

    // Decoys stay isolated: both neighbours must be filler.
    for i in 0..source.len() {
        if labels[i] || !rng.random_bool(spec.decoy_rate) {
            continue;
        }
        let isolated = (i == 0 || !text::is_content_word(&source[i - 1]))
            && (i + 1 == source.len() || !text::is_content_word(&source[i + 1]));
        if let (true, Some(w)) = (isolated, words.next()) {
            source[i] = w.clone();
        }
    }
    Planted {
        source,
        reference,
        labels,
    }
}

/// Generates the four splits; fully determined by `spec`.
pub fn generate_corpus(spec: &GeneratorSpec) -> Result<Corpus> {
    spec.validate()?;
    let (filler, content) = spec.word_pools();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let splits = [
        (Split::Train, spec.n_train),
        (Split::Validation, spec.n_validation),
        (Split::Analysis, spec.n_analysis),
        (Split::Test, spec.n_test),
    ];
    let mut planted = Vec::with_capacity(spec.n_examples());
    for (split, n) in splits {
        for _ in 0..n {
            planted.push((split, plant_example(spec, &filler, &content, &mut rng)));
        }
    }
    // First-seen order over the written corpus, so ingestion rebuilds the
    // same ids.
    let vocab = Vocab::from_words(
        planted
            .iter()
            .flat_map(|(_, p)| p.source.iter().chain(&p.reference).map(String::as_str)),
    );
    let examples = planted
        .into_iter()
        .enumerate()
        .map(|(i, (split, p))| Example {
            id: format!("ex-{i:06}"),
            split,
            source: vocab.encode(&p.source),
            reference: vocab.encode(&p.reference),
            labels: p.labels,
        })
        .collect();
    Ok(Corpus { vocab, examples })
}
