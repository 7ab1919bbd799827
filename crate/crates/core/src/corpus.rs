//! Story samples, their JSONL storage format, validation and corpus
//! statistics.
//!
//! One sample per line:
//!
//! ```text
//! {"sequence_id": str, "images": [{"id": str, "uri": str}], "sentences": [str],
//!  "decontextualized_sentences": [str]?, "blueprint": [[{"answer": str, "question": str,
//!  "answer_span": [int,int,int]?, "source_kind": str}]]?, "split": str}
//! ```
//!
//! `answer_span` is `[sentence_index, char_start, char_end]` with character
//! (not byte) offsets into the decontextualized sentence, or into the original
//! sentence when no decontextualized text is stored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, uri: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            uri: uri.into(),
            width: None,
            height: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSequence {
    pub sequence_id: String,
    pub images: Vec<ImageRef>,
}

impl ImageSequence {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Story {
    pub sentences: Vec<String>,
    pub decontextualized_sentences: Option<Vec<String>>,
}

impl Story {
    pub fn new<S: Into<String>>(sentences: impl IntoIterator<Item = S>) -> Self {
        Self {
            sentences: sentences.into_iter().map(Into::into).collect(),
            decontextualized_sentences: None,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Decontextualized sentences when present, the originals otherwise.
    pub fn working_sentences(&self) -> &[String] {
        self.decontextualized_sentences.as_deref().unwrap_or(&self.sentences)
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    pub fn working_text(&self) -> String {
        self.working_sentences().join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    NounPhrase,
    NamedEntity,
    VerbPhrase,
    Generated,
}

/// Location of an answer: sentence index and character offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AnswerSpan {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

impl Serialize for AnswerSpan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.sentence, self.start, self.end].serialize(s)
    }
}

impl<'de> Deserialize<'de> for AnswerSpan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [sentence, start, end] = <[usize; 3]>::deserialize(d)?;
        Ok(AnswerSpan { sentence, start, end })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub answer: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_span: Option<AnswerSpan>,
    pub source_kind: SourceKind,
}

impl QAPair {
    pub fn generated(answer: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            answer: answer.into(),
            question: question.into(),
            answer_span: None,
            source_kind: SourceKind::Generated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SentenceBlueprint {
    pub pairs: Vec<QAPair>,
}

impl SentenceBlueprint {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Per-sentence QA plan. Flattening the segments yields the global order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Blueprint {
    pub segments: Vec<SentenceBlueprint>,
}

impl Blueprint {
    pub fn empty(sentences: usize) -> Self {
        Self {
            segments: vec![SentenceBlueprint::default(); sentences],
        }
    }

    pub fn from_segments(segments: Vec<Vec<QAPair>>) -> Self {
        Self {
            segments: segments.into_iter().map(|pairs| SentenceBlueprint { pairs }).collect(),
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = &QAPair> {
        self.segments.iter().flat_map(|s| s.pairs.iter())
    }

    pub fn num_pairs(&self) -> usize {
        self.segments.iter().map(SentenceBlueprint::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_pairs() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorySample {
    pub image_sequence: ImageSequence,
    pub story: Story,
    pub blueprint: Option<Blueprint>,
    pub split: Split,
}

impl StorySample {
    pub fn id(&self) -> &str {
        &self.image_sequence.sequence_id
    }
}

/// Wire representation of one JSONL line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    sequence_id: String,
    images: Vec<ImageRef>,
    sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decontextualized_sentences: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blueprint: Option<Vec<Vec<QAPair>>>,
    split: Split,
}

impl From<&StorySample> for SampleRecord {
    fn from(s: &StorySample) -> Self {
        SampleRecord {
            sequence_id: s.image_sequence.sequence_id.clone(),
            images: s.image_sequence.images.clone(),
            sentences: s.story.sentences.clone(),
            decontextualized_sentences: s.story.decontextualized_sentences.clone(),
            blueprint: s
                .blueprint
                .as_ref()
                .map(|b| b.segments.iter().map(|seg| seg.pairs.clone()).collect()),
            split: s.split,
        }
    }
}

impl From<SampleRecord> for StorySample {
    fn from(r: SampleRecord) -> Self {
        StorySample {
            image_sequence: ImageSequence {
                sequence_id: r.sequence_id,
                images: r.images,
            },
            story: Story {
                sentences: r.sentences,
                decontextualized_sentences: r.decontextualized_sentences,
            },
            blueprint: r.blueprint.map(Blueprint::from_segments),
            split: r.split,
        }
    }
}

/// A broken invariant, reported as data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// Substring by character offsets; `None` when out of range.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let b_start = indices.nth(start)?;
    let b_end = if end == start {
        b_start
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&s[b_start..b_end])
}

/// Character offset of a byte offset.
pub fn char_offset(s: &str, byte: usize) -> usize {
    s[..byte].chars().count()
}

pub fn validate_qa_pair(pair: &QAPair, sentences: &[String], field: &str) -> Vec<Violation> {
    let mut v = Vec::new();
    if pair.answer.trim().is_empty() {
        v.push(Violation::new(field, "empty answer"));
    }
    if pair.question.trim().is_empty() {
        v.push(Violation::new(field, "empty question"));
    }
    if let Some(span) = pair.answer_span {
        match sentences.get(span.sentence) {
            None => v.push(Violation::new(
                field,
                format!("answer_span sentence {} out of range", span.sentence),
            )),
            Some(sentence) => match char_slice(sentence, span.start, span.end) {
                Some(sub) if sub == pair.answer => {}
                Some(sub) => v.push(Violation::new(
                    field,
                    format!("answer_span text `{sub}` does not match answer `{}`", pair.answer),
                )),
                None => v.push(Violation::new(field, "answer_span out of range")),
            },
        }
    }
    v
}

/// Empty iff every type invariant of the sample holds.
pub fn validate_sample(sample: &StorySample) -> Vec<Violation> {
    let mut v = Vec::new();
    let seq = &sample.image_sequence;
    if seq.sequence_id.trim().is_empty() {
        v.push(Violation::new("sequence_id", "empty"));
    }
    if seq.images.is_empty() {
        v.push(Violation::new("images", "at least one image is required"));
    }
    for (i, img) in seq.images.iter().enumerate() {
        if img.id.trim().is_empty() {
            v.push(Violation::new("images", format!("image {i} has an empty id")));
        }
        if img.uri.trim().is_empty() {
            v.push(Violation::new("images", format!("image {i} has an empty uri")));
        }
    }
    let story = &sample.story;
    if story.sentences.iter().any(|s| s.trim().is_empty()) {
        v.push(Violation::new("sentences", "empty sentence"));
    }
    if story.sentences.len() != seq.images.len() {
        v.push(Violation::new(
            "sentences",
            format!("{} sentences for {} images", story.sentences.len(), seq.images.len()),
        ));
    }
    if let Some(dec) = &story.decontextualized_sentences {
        if dec.len() != story.sentences.len() {
            v.push(Violation::new(
                "decontextualized_sentences",
                format!("{} entries for {} sentences", dec.len(), story.sentences.len()),
            ));
        }
        if dec.iter().any(|s| s.trim().is_empty()) {
            v.push(Violation::new("decontextualized_sentences", "empty sentence"));
        }
    }
    if let Some(bp) = &sample.blueprint {
        if bp.segments.len() != story.sentences.len() {
            v.push(Violation::new(
                "blueprint",
                format!("{} segments for {} sentences", bp.segments.len(), story.sentences.len()),
            ));
        }
        let sentences = story.working_sentences();
        for pair in bp.pairs() {
            v.extend(validate_qa_pair(pair, sentences, "blueprint"));
        }
    }
    v
}

/// Result of a lenient load: valid samples plus rejected lines.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub samples: Vec<StorySample>,
    pub rejected: Vec<Error>,
}

fn parse_line(line: &str, lineno: usize) -> Result<StorySample> {
    let record: SampleRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    let sample = StorySample::from(record);
    if let Some(first) = validate_sample(&sample).into_iter().next() {
        return Err(Error::Validation {
            line: lineno,
            field: first.field,
            message: first.message,
        });
    }
    Ok(sample)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Strict load: the first malformed or invalid line is an error. `split`
/// filters samples; `None` keeps all.
pub fn load_corpus(path: impl AsRef<Path>, split: Option<Split>) -> Result<Vec<StorySample>> {
    let mut samples = Vec::new();
    for (lineno, line) in read_lines(path.as_ref())? {
        let sample = parse_line(&line, lineno)?;
        if split.is_none_or(|s| s == sample.split) {
            samples.push(sample);
        }
    }
    Ok(samples)
}

/// Report-and-skip load: broken lines are collected with their line numbers.
pub fn load_corpus_lenient(path: impl AsRef<Path>, split: Option<Split>) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for (lineno, line) in read_lines(path.as_ref())? {
        match parse_line(&line, lineno) {
            Ok(sample) if split.is_none_or(|s| s == sample.split) => report.samples.push(sample),
            Ok(_) => {}
            Err(e) => {
                log::warn!("skipping corpus line {lineno}: {e}");
                report.rejected.push(e);
            }
        }
    }
    Ok(report)
}

pub fn sample_to_json(sample: &StorySample) -> String {
    serde_json::to_string(&SampleRecord::from(sample)).expect("sample serializes")
}

pub fn save_corpus(samples: &[StorySample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        writeln!(w, "{}", sample_to_json(s)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_samples: usize,
    pub avg_images_per_sequence: f64,
    pub avg_sentences_per_story: f64,
    pub avg_tokens_per_story: f64,
    /// `None` when no sample carries a blueprint.
    pub avg_qa_pairs_per_story: Option<f64>,
    pub avg_tokens_per_qa_pair: Option<f64>,
    pub avg_tokens_story_plus_qa: Option<f64>,
}

/// Statistics with the default word-and-punctuation token count. Special
/// serialization markers are not counted.
pub fn compute_stats(samples: &[StorySample]) -> Result<CorpusStats> {
    compute_stats_with(samples, |s| text::tokenize(s).len())
}

pub fn compute_stats_with(samples: &[StorySample], count_tokens: impl Fn(&str) -> usize) -> Result<CorpusStats> {
    if samples.is_empty() {
        return Err(Error::Domain("cannot compute statistics of an empty corpus".into()));
    }
    let n = samples.len() as f64;
    let mut images = 0usize;
    let mut sentences = 0usize;
    let mut story_tokens = 0usize;
    let mut with_bp = 0usize;
    let mut pairs = 0usize;
    let mut qa_tokens = 0usize;
    let mut story_tokens_bp = 0usize;
    for s in samples {
        images += s.image_sequence.len();
        sentences += s.story.len();
        let st: usize = s.story.sentences.iter().map(|x| count_tokens(x)).sum();
        story_tokens += st;
        if let Some(bp) = &s.blueprint {
            with_bp += 1;
            pairs += bp.num_pairs();
            qa_tokens += bp
                .pairs()
                .map(|p| count_tokens(&p.answer) + count_tokens(&p.question))
                .sum::<usize>();
            story_tokens_bp += st;
        }
    }
    let (avg_pairs, avg_pair_tokens, avg_total) = if with_bp > 0 {
        let m = with_bp as f64;
        (
            Some(pairs as f64 / m),
            Some(if pairs > 0 {
                qa_tokens as f64 / pairs as f64
            } else {
                0.0
            }),
            Some((story_tokens_bp + qa_tokens) as f64 / m),
        )
    } else {
        (None, None, None)
    };
    Ok(CorpusStats {
        num_samples: samples.len(),
        avg_images_per_sequence: images as f64 / n,
        avg_sentences_per_story: sentences as f64 / n,
        avg_tokens_per_story: story_tokens as f64 / n,
        avg_qa_pairs_per_story: avg_pairs,
        avg_tokens_per_qa_pair: avg_pair_tokens,
        avg_tokens_story_plus_qa: avg_total,
    })
}
