//! Story evaluation: trigram repetition, concept grounding, blueprint
//! faithfulness, and a pass-through adapter for external metrics.

pub mod external;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::annotation::adapters::QuestionAnswerer;
use crate::corpus::{Blueprint, Story};
use crate::error::{Error, Result};
use crate::text::{content_lemmas, lemmatize, words_lower};
use crate::vision::ConceptSet;

pub use external::{CommandMetric, ExternalMetric};

/// Lowercased word tokens of the story (punctuation excluded), one stream
/// per sentence.
pub fn sentence_streams(story: &Story) -> Vec<Vec<String>> {
    story.sentences.iter().map(|s| words_lower(s)).collect()
}

pub fn story_stream(story: &Story) -> Vec<String> {
    sentence_streams(story).concat()
}

fn trigrams<S: Eq + Hash>(tokens: &[S]) -> impl Iterator<Item = (&S, &S, &S)> {
    tokens.windows(3).map(|w| (&w[0], &w[1], &w[2]))
}

/// `(T - D) / T` over trigram occurrences, 0 when there are none.
pub fn intra_repetition_tokens<S: Eq + Hash>(tokens: &[S]) -> f64 {
    intra_from_streams(std::slice::from_ref(&tokens))
}

fn intra_from_streams<S: Eq + Hash, V: AsRef<[S]>>(streams: &[V]) -> f64 {
    let mut total = 0usize;
    let mut distinct = HashSet::new();
    for s in streams {
        for t in trigrams(s.as_ref()) {
            total += 1;
            distinct.insert(t);
        }
    }
    if total == 0 {
        0.0
    } else {
        (total - distinct.len()) as f64 / total as f64
    }
}

/// Intra-story repetition over the whole-story stream, or with
/// `per_sentence` over sentence streams (no cross-sentence trigrams).
pub fn intra_repetition(story: &Story, per_sentence: bool) -> f64 {
    if per_sentence {
        intra_from_streams(&sentence_streams(story))
    } else {
        intra_repetition_tokens(&story_stream(story))
    }
}

/// Per stream, the fraction of its distinct trigrams found in any other
/// stream (0 for a stream without trigrams).
pub fn inter_repetition_per_story<S: Eq + Hash>(streams: &[Vec<S>]) -> Result<Vec<f64>> {
    if streams.len() < 2 {
        return Err(Error::Domain("inter-story repetition needs at least 2 stories".into()));
    }
    let sets: Vec<HashSet<(&S, &S, &S)>> = streams.iter().map(|s| trigrams(s).collect()).collect();
    let mut owners: HashMap<(&S, &S, &S), usize> = HashMap::new();
    for set in &sets {
        for &t in set {
            *owners.entry(t).or_default() += 1;
        }
    }
    Ok(sets
        .iter()
        .map(|set| {
            if set.is_empty() {
                0.0
            } else {
                set.iter().filter(|t| owners[*t] > 1).count() as f64 / set.len() as f64
            }
        })
        .collect())
}

pub fn inter_repetition_tokens<S: Eq + Hash>(streams: &[Vec<S>]) -> Result<f64> {
    let per = inter_repetition_per_story(streams)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Mean over stories of [`inter_repetition_per_story`].
pub fn inter_repetition(stories: &[Story]) -> Result<f64> {
    let streams: Vec<Vec<String>> = stories.iter().map(story_stream).collect();
    inter_repetition_tokens(&streams)
}

/// One concept as the set of lemmas that must co-occur in a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptLexicon {
    entries: Vec<(String, Vec<String>)>,
}

impl ConceptLexicon {
    /// Distinct concepts in first-seen order. A concept made only of
    /// stopwords is matched on its lowercased words.
    pub fn new<'a>(concepts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for c in concepts {
            let key = c.trim().to_lowercase();
            if key.is_empty() || !seen.insert(key.clone()) {
                continue;
            }
            let mut lemmas = content_lemmas(&key);
            if lemmas.is_empty() {
                lemmas = words_lower(&key).iter().map(|w| lemmatize(w)).collect();
            }
            if !lemmas.is_empty() {
                entries.push((key, lemmas));
            }
        }
        Self { entries }
    }

    pub fn from_set(set: &ConceptSet) -> Self {
        Self::new(set.flattened())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every lemma of every concept.
    pub fn lemmas(&self) -> HashSet<&str> {
        self.entries
            .iter()
            .flat_map(|(_, l)| l.iter().map(String::as_str))
            .collect()
    }

    /// Concepts whose lemmas all occur in `sentence_lemmas`.
    fn present_in(&self, sentence_lemmas: &HashSet<String>) -> Vec<&(String, Vec<String>)> {
        self.entries
            .iter()
            .filter(|(_, l)| l.iter().all(|x| sentence_lemmas.contains(x)))
            .collect()
    }
}

/// Grounding score with a marker for stories that have no content words.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub value: f64,
    pub no_content_words: bool,
}

fn sentence_lemma_sets(story: &Story) -> Vec<(Vec<String>, HashSet<String>)> {
    story
        .sentences
        .iter()
        .map(|s| {
            let l = content_lemmas(s);
            let set = l.iter().cloned().collect();
            (l, set)
        })
        .collect()
}

/// Share of the story's content words whose lemma belongs to a concept
/// present in the same sentence.
pub fn grounding_precision(story: &Story, concepts: &ConceptLexicon) -> Result<Grounding> {
    if concepts.is_empty() {
        return Err(Error::Domain("empty concept set".into()));
    }
    let mut total = 0usize;
    let mut matched = 0usize;
    for (lemmas, set) in sentence_lemma_sets(story) {
        let active: HashSet<&str> = concepts
            .present_in(&set)
            .into_iter()
            .flat_map(|(_, l)| l.iter().map(String::as_str))
            .collect();
        total += lemmas.len();
        matched += lemmas.iter().filter(|l| active.contains(l.as_str())).count();
    }
    if total == 0 {
        log::warn!("story without content words; grounding precision is 0");
        return Ok(Grounding {
            value: 0.0,
            no_content_words: true,
        });
    }
    Ok(Grounding {
        value: matched as f64 / total as f64,
        no_content_words: false,
    })
}

/// Share of distinct concepts mentioned in the story.
pub fn grounding_recall(story: &Story, concepts: &ConceptLexicon) -> Result<f64> {
    if concepts.is_empty() {
        return Err(Error::Domain("empty concept set".into()));
    }
    let mut found: HashSet<&str> = HashSet::new();
    for (_, set) in sentence_lemma_sets(story) {
        found.extend(concepts.present_in(&set).into_iter().map(|(k, _)| k.as_str()));
    }
    Ok(found.len() as f64 / concepts.len() as f64)
}

pub const DEFAULT_ANSWERED_F1: f64 = 0.5;

/// Percentage of blueprint questions whose predicted answer, read from the
/// story, reaches token F1 `threshold` against the blueprint answer.
pub fn faithfulness(blueprint: &Blueprint, story: &Story, qa: &dyn QuestionAnswerer, threshold: f64) -> Result<f64> {
    if blueprint.is_empty() {
        return Err(Error::Domain("empty blueprint".into()));
    }
    let context = story.text();
    let mut answered = 0usize;
    for p in blueprint.pairs() {
        let pred = qa.answer(&p.question, &context)?;
        if crate::text::token_f1(&pred.answer, &p.answer) >= threshold {
            answered += 1;
        }
    }
    Ok(100.0 * answered as f64 / blueprint.num_pairs() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    #[serde(default)]
    pub per_sentence_trigrams: bool,
    #[serde(default = "d_thr")]
    pub faithfulness_threshold: f64,
}

fn d_thr() -> f64 {
    DEFAULT_ANSWERED_F1
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            per_sentence_trigrams: false,
            faithfulness_threshold: d_thr(),
        }
    }
}

/// One story to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub sequence_id: String,
    pub story: Story,
    pub blueprint: Option<Blueprint>,
    pub concepts: Option<ConceptSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub corpus_metrics: BTreeMap<String, f64>,
    pub per_sample: Vec<BTreeMap<String, f64>>,
    pub config_snapshot: serde_json::Value,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `metric,value` rows of the corpus metrics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.corpus_metrics {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}

/// Internal metrics over a set of stories. Grounding needs concepts on every
/// item; faithfulness needs `qa`. Corpus values are means of the per-sample
/// values. A story with an empty blueprint scores 0 faithfulness; the count
/// of such stories is in the config snapshot.
pub fn evaluate(items: &[EvalItem], cfg: &MetricConfig, qa: Option<&dyn QuestionAnswerer>) -> Result<EvaluationReport> {
    if items.is_empty() {
        return Err(Error::Domain("nothing to evaluate".into()));
    }
    let n = items.len();
    let mut per: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); n];
    for (m, it) in per.iter_mut().zip(items) {
        m.insert(
            "intra_repetition".into(),
            intra_repetition(&it.story, cfg.per_sentence_trigrams),
        );
    }
    if n >= 2 {
        let streams: Vec<Vec<String>> = items.iter().map(|i| story_stream(&i.story)).collect();
        for (m, v) in per.iter_mut().zip(inter_repetition_per_story(&streams)?) {
            m.insert("inter_repetition".into(), v);
        }
    }
    let mut no_content = 0;
    if items.iter().all(|i| i.concepts.as_ref().is_some_and(|c| !c.is_empty())) {
        for (m, it) in per.iter_mut().zip(items) {
            let lex = ConceptLexicon::from_set(it.concepts.as_ref().expect("checked"));
            let p = grounding_precision(&it.story, &lex)?;
            no_content += usize::from(p.no_content_words);
            m.insert("grounding_precision".into(), p.value);
            m.insert("grounding_recall".into(), grounding_recall(&it.story, &lex)?);
        }
    }
    let mut empty_blueprints = 0;
    if let Some(qa) = qa {
        for (m, it) in per.iter_mut().zip(items) {
            let v = match &it.blueprint {
                Some(bp) if !bp.is_empty() => faithfulness(bp, &it.story, qa, cfg.faithfulness_threshold)?,
                _ => {
                    empty_blueprints += 1;
                    0.0
                }
            };
            m.insert("faithfulness".into(), v);
        }
    }
    let mut corpus = BTreeMap::new();
    for key in per[0].keys() {
        let mean = per.iter().map(|m| m[key]).sum::<f64>() / n as f64;
        corpus.insert(key.clone(), mean);
    }
    Ok(EvaluationReport {
        corpus_metrics: corpus,
        per_sample: per,
        config_snapshot: serde_json::json!({
            "metrics": cfg,
            "stories": n,
            "faithfulness_empty_blueprints": empty_blueprints,
            "grounding_no_content_words": no_content,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::adapters::QaPrediction;
    use crate::corpus::QAPair;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn intra_cases() {
        assert_eq!(intra_repetition_tokens(&toks("a b c d e")), 0.0);
        let v = intra_repetition_tokens(&toks("a b c a b c a b c"));
        assert!((v - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(intra_repetition_tokens(&toks("a b")), 0.0);
        let story = Story::new(["We ran home.", "We ran home."]);
        assert!((intra_repetition(&story, false) - 1.0 / 4.0).abs() < 1e-12);
        assert!((intra_repetition(&story, true) - 1.0 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn inter_cases() {
        let a = Story::new(["the dog ran fast."]);
        assert_eq!(inter_repetition(&[a.clone(), a.clone()]).unwrap(), 1.0);
        let b = Story::new(["cats sleep all day."]);
        assert_eq!(inter_repetition(&[a.clone(), b]).unwrap(), 0.0);
        assert!(inter_repetition(&[a]).is_err());
    }

    fn lex(c: &[&str]) -> ConceptLexicon {
        ConceptLexicon::new(c.iter().copied())
    }

    #[test]
    fn grounding_goldens() {
        let s = Story::new(["the family bought apples"]);
        let p = grounding_precision(&s, &lex(&["family", "market"])).unwrap();
        assert!((p.value - 1.0 / 3.0).abs() < 1e-12);
        let r = grounding_recall(
            &Story::new(["The family went to the market."]),
            &lex(&["family", "market", "dog"]),
        )
        .unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        let empty = grounding_precision(&Story::new(["it was the."]), &lex(&["dog"])).unwrap();
        assert!(empty.no_content_words && empty.value == 0.0);
        assert!(grounding_recall(&s, &lex(&[])).is_err());
    }

    #[test]
    fn multiword_concepts_need_one_sentence() {
        let l = lex(&["hot dog"]);
        let together = Story::new(["We ate a hot dog."]);
        let apart = Story::new(["It was hot.", "A dog barked."]);
        assert_eq!(grounding_recall(&together, &l).unwrap(), 1.0);
        assert_eq!(grounding_recall(&apart, &l).unwrap(), 0.0);
    }

    struct Fixed(&'static str);
    impl QuestionAnswerer for Fixed {
        fn answer(&self, _: &str, _: &str) -> Result<QaPrediction> {
            Ok(QaPrediction {
                answer: self.0.into(),
                confidence: 1.0,
            })
        }
    }

    #[test]
    fn faithfulness_bounds() {
        let bp = Blueprint::from_segments(vec![vec![QAPair::generated("the dog", "What ran?")]]);
        let s = Story::new(["The dog ran."]);
        assert_eq!(faithfulness(&bp, &s, &Fixed("dog"), 0.5).unwrap(), 100.0);
        assert_eq!(faithfulness(&bp, &s, &Fixed(""), 0.5).unwrap(), 0.0);
        assert!(faithfulness(&Blueprint::empty(1), &s, &Fixed(""), 0.5).is_err());
    }

    #[test]
    fn report_keys_and_aggregation() {
        let item = |id: &str, s: &str| EvalItem {
            sequence_id: id.into(),
            story: Story::new([s]),
            blueprint: Some(Blueprint::from_segments(vec![vec![QAPair::generated(
                "dog",
                "What ran?",
            )]])),
            concepts: None,
        };
        let items = vec![item("a", "the dog ran home fast."), item("b", "the dog ran away.")];
        let r = evaluate(&items, &MetricConfig::default(), Some(&Fixed("dog"))).unwrap();
        let keys: Vec<_> = r.per_sample[0].keys().cloned().collect();
        assert_eq!(keys, vec!["faithfulness", "inter_repetition", "intra_repetition"]);
        assert!(r
            .per_sample
            .iter()
            .all(|m| m.keys().cloned().collect::<Vec<_>>() == keys));
        let mean = (r.per_sample[0]["inter_repetition"] + r.per_sample[1]["inter_repetition"]) / 2.0;
        assert_eq!(r.corpus_metrics["inter_repetition"], mean);
        assert!(r.to_csv().starts_with("metric,value\nfaithfulness,100"));
    }
}
