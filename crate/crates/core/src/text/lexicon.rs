//! Closed-class word lists, a small irregular-form table and a heuristic
//! part-of-speech tagger. Open-class words fall back to suffix rules.

use std::collections::{HashMap, HashSet};

use once_cell::sync::Lazy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Det,
    /// Possessive determiner: "her", "his", "Mary's".
    Poss,
    Adj,
    Noun,
    Propn,
    Pron,
    Verb,
    Aux,
    Prep,
    Conj,
    Adv,
    Num,
    Punct,
}

fn set(words: &[&'static str]) -> HashSet<&'static str> {
    words.iter().copied().collect()
}

static DETERMINERS: Lazy<HashSet<&str>> = Lazy::new(|| {
    set(&[
        "the", "a", "an", "this", "that", "these", "those", "some", "many", "every", "each", "another", "several",
        "no", "any", "all", "both",
    ])
});

static POSSESSIVES: Lazy<HashSet<&str>> = Lazy::new(|| set(&["my", "your", "his", "her", "its", "our", "their"]));

static PRONOUNS: Lazy<HashSet<&str>> = Lazy::new(|| {
    set(&[
        "i",
        "me",
        "you",
        "he",
        "him",
        "she",
        "her",
        "it",
        "we",
        "us",
        "they",
        "them",
        "myself",
        "himself",
        "herself",
        "themselves",
        "ourselves",
        "itself",
        "everyone",
        "everybody",
        "someone",
        "somebody",
        "nobody",
        "something",
        "everything",
        "nothing",
    ])
});

static PREPOSITIONS: Lazy<HashSet<&str>> = Lazy::new(|| {
    set(&[
        "at", "in", "on", "to", "of", "for", "with", "near", "by", "from", "into", "onto", "after", "before", "around",
        "over", "under", "during", "through", "about", "across", "behind", "beside", "along", "inside", "outside",
        "towards", "toward", "past", "above", "below", "between", "without", "like", "up", "down",
    ])
});

/// Prepositions that introduce a location; a noun phrase after one of
/// these answers a "where" question.
pub static LOCATIVE_PREPOSITIONS: Lazy<HashSet<&str>> = Lazy::new(|| {
    set(&[
        "at", "in", "on", "to", "near", "into", "onto", "across", "around", "inside", "outside", "behind", "beside",
        "along", "towards", "toward", "over", "under", "through", "above", "below", "from", "up", "down",
    ])
});

static CONJUNCTIONS: Lazy<HashSet<&str>> =
    Lazy::new(|| set(&["and", "but", "or", "so", "because", "while", "when", "then", "as", "if"]));

static AUXILIARIES: Lazy<HashSet<&str>> = Lazy::new(|| {
    set(&[
        "was", "were", "is", "are", "am", "be", "been", "being", "had", "has", "have", "did", "do", "does", "will",
        "would", "could", "can", "should", "might", "must", "may",
    ])
});

pub static COPULAS: Lazy<HashSet<&str>> = Lazy::new(|| set(&["was", "were", "is", "are", "am", "be", "been"]));

static ADVERBS: Lazy<HashSet<&str>> = Lazy::new(|| {
    set(&[
        "very",
        "really",
        "finally",
        "later",
        "soon",
        "together",
        "also",
        "too",
        "just",
        "not",
        "never",
        "always",
        "there",
        "here",
        "again",
        "still",
        "even",
        "quickly",
        "slowly",
        "happily",
        "afterwards",
        "first",
        "then",
        "now",
        "today",
        "tonight",
        "home",
        "away",
        "out",
        "back",
        "so",
        "all",
    ])
});

static ADJECTIVES: Lazy<HashSet<&str>> = Lazy::new(|| {
    set(&[
        "fresh",
        "red",
        "blue",
        "green",
        "yellow",
        "white",
        "black",
        "big",
        "small",
        "little",
        "old",
        "new",
        "huge",
        "tiny",
        "happy",
        "sad",
        "beautiful",
        "great",
        "good",
        "nice",
        "delicious",
        "rocky",
        "full",
        "long",
        "tall",
        "warm",
        "cold",
        "sunny",
        "bright",
        "dark",
        "young",
        "wonderful",
        "amazing",
        "busy",
        "quiet",
        "loud",
        "favorite",
        "wild",
        "calm",
        "sweet",
        "golden",
        "tired",
        "excited",
        "first",
        "last",
        "best",
        "fun",
        "pretty",
        "lovely",
        "colorful",
        "chocolate",
        "local",
        "famous",
        "crowded",
        "high",
        "deep",
        "clear",
        "heavy",
        "light",
        "late",
        "early",
        "whole",
    ])
});

static NUMBERS: Lazy<HashSet<&str>> = Lazy::new(|| {
    set(&[
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ])
});

/// Past-tense and participle forms mapped to their base form.
static IRREGULAR_VERBS: Lazy<HashMap<&str, &str>> = Lazy::new(|| {
    [
        ("went", "go"),
        ("gone", "go"),
        ("goes", "go"),
        ("bought", "buy"),
        ("brought", "bring"),
        ("caught", "catch"),
        ("taught", "teach"),
        ("thought", "think"),
        ("saw", "see"),
        ("seen", "see"),
        ("threw", "throw"),
        ("thrown", "throw"),
        ("took", "take"),
        ("taken", "take"),
        ("ate", "eat"),
        ("eaten", "eat"),
        ("made", "make"),
        ("had", "have"),
        ("has", "have"),
        ("did", "do"),
        ("does", "do"),
        ("was", "be"),
        ("were", "be"),
        ("is", "be"),
        ("are", "be"),
        ("am", "be"),
        ("been", "be"),
        ("came", "come"),
        ("got", "get"),
        ("gave", "give"),
        ("given", "give"),
        ("found", "find"),
        ("left", "leave"),
        ("met", "meet"),
        ("ran", "run"),
        ("sat", "sit"),
        ("stood", "stand"),
        ("swam", "swim"),
        ("sang", "sing"),
        ("drank", "drink"),
        ("drove", "drive"),
        ("rode", "ride"),
        ("flew", "fly"),
        ("wrote", "write"),
        ("told", "tell"),
        ("said", "say"),
        ("spent", "spend"),
        ("built", "build"),
        ("felt", "feel"),
        ("kept", "keep"),
        ("slept", "sleep"),
        ("heard", "hear"),
        ("held", "hold"),
        ("won", "win"),
        ("began", "begin"),
        ("knew", "know"),
        ("grew", "grow"),
        ("fell", "fall"),
        ("wore", "wear"),
        ("paid", "pay"),
        ("sold", "sell"),
        ("lost", "lose"),
        ("sent", "send"),
        ("climbed", "climb"),
        ("smelled", "smell"),
        ("baked", "bake"),
        ("smiled", "smile"),
        ("arrived", "arrive"),
        ("danced", "dance"),
        ("loved", "love"),
        ("liked", "like"),
        ("hiked", "hike"),
        ("rained", "rain"),
        ("covered", "cover"),
        ("crossed", "cross"),
        ("rented", "rent"),
        ("landed", "land"),
        ("ordered", "order"),
        ("watched", "watch"),
        ("walked", "walk"),
        ("played", "play"),
        ("visited", "visit"),
        ("enjoyed", "enjoy"),
        ("shared", "share"),
        ("admired", "admire"),
        ("posed", "pose"),
        ("waved", "wave"),
        ("picked", "pick"),
        ("tasted", "taste"),
        ("cheered", "cheer"),
        ("relaxed", "relax"),
        ("decided", "decide"),
        ("celebrated", "celebrate"),
        ("explored", "explore"),
        ("stopped", "stop"),
        ("shopped", "shop"),
        ("planned", "plan"),
        ("carried", "carry"),
        ("tried", "try"),
    ]
    .into_iter()
    .collect()
});

/// Base-form verbs recognized without a suffix cue.
static BASE_VERBS: Lazy<HashSet<&str>> = Lazy::new(|| {
    let mut s: HashSet<&str> = IRREGULAR_VERBS.values().copied().collect();
    s.extend([
        "go", "see", "eat", "play", "walk", "visit", "enjoy", "buy", "bring", "swim", "run", "sing", "dance", "watch",
        "love", "like", "smile", "laugh", "wait", "look", "want", "need", "help", "throw", "catch",
    ]);
    s
});

static IRREGULAR_NOUNS: Lazy<HashMap<&str, &str>> = Lazy::new(|| {
    [
        ("children", "child"),
        ("people", "person"),
        ("men", "man"),
        ("women", "woman"),
        ("feet", "foot"),
        ("teeth", "tooth"),
        ("mice", "mouse"),
        ("geese", "goose"),
        ("leaves", "leaf"),
        ("knives", "knife"),
        ("wives", "wife"),
        ("lives", "life"),
        ("fish", "fish"),
        ("sheep", "sheep"),
        ("waves", "wave"),
    ]
    .into_iter()
    .collect()
});

/// Nouns that denote people; a noun phrase headed by one answers "who".
static PERSON_NOUNS: Lazy<HashSet<&str>> = Lazy::new(|| {
    set(&[
        "family",
        "friend",
        "mom",
        "dad",
        "mother",
        "father",
        "brother",
        "sister",
        "kid",
        "child",
        "person",
        "man",
        "woman",
        "boy",
        "girl",
        "waiter",
        "waitress",
        "band",
        "everyone",
        "everybody",
        "grandma",
        "grandpa",
        "grandmother",
        "grandfather",
        "baby",
        "teacher",
        "couple",
        "team",
        "crowd",
        "guest",
        "parent",
        "son",
        "daughter",
        "wife",
        "husband",
        "uncle",
        "aunt",
        "cousin",
        "group",
        "student",
        "player",
        "singer",
    ])
});

/// Common nouns that may open a sentence capitalized without being names.
static COMMON_NOUNS: Lazy<HashSet<&str>> = Lazy::new(|| {
    let mut s: HashSet<&str> = PERSON_NOUNS.iter().copied().collect();
    s.extend([
        "snow",
        "rain",
        "music",
        "food",
        "wine",
        "water",
        "fruit",
        "apples",
        "flowers",
        "waves",
        "sand",
        "grass",
        "trees",
        "dinner",
        "lunch",
        "breakfast",
        "night",
        "morning",
        "day",
        "weather",
        "sunshine",
        "people",
        "kids",
        "children",
        "friends",
        "family",
    ]);
    s
});

static STOPWORDS: Lazy<HashSet<&str>> = Lazy::new(|| {
    let mut s = set(&[
        "the", "a", "an", "and", "or", "but", "of", "to", "in", "on", "at", "for", "with", "by", "from", "as", "is",
        "was", "were", "are", "be", "been", "am", "it", "its", "this", "that", "these", "those", "he", "she", "they",
        "we", "i", "you", "him", "her", "them", "us", "me", "my", "your", "his", "our", "their", "there", "here",
        "then", "so", "too", "very", "had", "has", "have", "did", "do", "does", "not", "no", "all", "some", "any",
        "into", "onto", "up", "down", "out", "over", "about", "after", "before", "who", "what", "where", "when", "why",
        "how", "which", "whom", "will", "would", "could", "can", "should", "just", "also", "than", "if", "because",
        "while", "near", "again", "s",
    ]);
    s.extend(["'s", "’s"]);
    s
});

pub fn is_stopword(word_lower: &str) -> bool {
    STOPWORDS.contains(word_lower)
}

pub fn is_person_noun(lemma: &str) -> bool {
    PERSON_NOUNS.contains(lemma)
}

pub fn is_preposition(word_lower: &str) -> bool {
    PREPOSITIONS.contains(word_lower)
}

pub fn is_locative(word_lower: &str) -> bool {
    LOCATIVE_PREPOSITIONS.contains(word_lower)
}

/// Personal pronouns that the coreference step may rewrite.
pub fn pronoun_kind(word_lower: &str) -> Option<PronounKind> {
    Some(match word_lower {
        "he" | "she" => PronounKind::PersonSubject,
        "him" => PronounKind::PersonObject,
        "her" => PronounKind::PersonAmbiguous,
        "his" => PronounKind::PersonPossessive,
        "they" => PronounKind::GroupSubject,
        "them" => PronounKind::GroupObject,
        "their" => PronounKind::GroupPossessive,
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PronounKind {
    PersonSubject,
    PersonObject,
    /// "her" is either object or possessive depending on what follows.
    PersonAmbiguous,
    PersonPossessive,
    GroupSubject,
    GroupObject,
    GroupPossessive,
}

pub fn is_pronoun(word_lower: &str) -> bool {
    PRONOUNS.contains(word_lower) || POSSESSIVES.contains(word_lower)
}

/// Lowercase lemma: irregular tables first, then plural and verb suffix rules.
pub fn lemmatize(word: &str) -> String {
    let w = word.to_lowercase();
    let w = w
        .strip_suffix("'s")
        .or_else(|| w.strip_suffix("’s"))
        .unwrap_or(&w)
        .to_string();
    if let Some(base) = IRREGULAR_VERBS.get(w.as_str()) {
        return (*base).to_string();
    }
    if let Some(base) = IRREGULAR_NOUNS.get(w.as_str()) {
        return (*base).to_string();
    }
    let n = w.len();
    if n > 4 && w.ends_with("ies") {
        return format!("{}y", &w[..n - 3]);
    }
    if n > 4 && ["ches", "shes", "sses", "xes", "zes"].iter().any(|s| w.ends_with(s)) {
        return w[..n - 2].to_string();
    }
    if n > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is") {
        return w[..n - 1].to_string();
    }
    if n > 5 && w.ends_with("ing") {
        return undouble(&w[..n - 3]);
    }
    if n > 4 && w.ends_with("ied") {
        return format!("{}y", &w[..n - 3]);
    }
    if n > 4 && w.ends_with("ed") {
        return restore_e(undouble(&w[..n - 2]));
    }
    w
}

fn undouble(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 3 && b[n - 1] == b[n - 2] && !matches!(b[n - 1], b'l' | b's' | b'z' | b'e') {
        stem[..n - 1].to_string()
    } else {
        stem.to_string()
    }
}

/// Base form of a verb token, used for do-support in question templates.
pub fn base_verb(word: &str) -> String {
    let w = word.to_lowercase();
    if let Some(base) = IRREGULAR_VERBS.get(w.as_str()) {
        return (*base).to_string();
    }
    let n = w.len();
    if n > 4 && w.ends_with("ied") {
        return format!("{}y", &w[..n - 3]);
    }
    if n > 3 && w.ends_with("ed") {
        return restore_e(undouble(&w[..n - 2]));
    }
    w
}

/// "plac" -> "place", "lov" -> "love", "continu" -> "continue".
fn restore_e(stem: String) -> String {
    if stem.len() > 2 && (stem.ends_with('c') || stem.ends_with('v') || stem.ends_with('u')) {
        stem + "e"
    } else {
        stem
    }
}

fn looks_like_verb(lower: &str) -> bool {
    IRREGULAR_VERBS.contains_key(lower) || (lower.len() > 4 && lower.ends_with("ed") && !ADJECTIVES.contains(lower))
}

/// Heuristic tagger over the tokens of a single sentence.
pub fn tag_sentence(tokens: &[&str]) -> Vec<Tag> {
    let mut tags = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        let lower = tok.to_lowercase();
        let prev = tags.last().copied();
        let capitalized = tok.chars().next().is_some_and(char::is_uppercase);
        let sentence_initial = i == 0 || prev == Some(Tag::Punct) && is_clause_break(tokens[i - 1]);
        let tag = if super::is_punct(tok) {
            Tag::Punct
        } else if tok.chars().all(|c| c.is_ascii_digit()) || NUMBERS.contains(lower.as_str()) {
            Tag::Num
        } else if lower.ends_with("'s") || lower.ends_with("’s") {
            Tag::Poss
        } else if lower == "her" {
            // possessive when a nominal follows
            match tokens.get(i + 1).map(|t| t.to_lowercase()) {
                Some(next)
                    if !super::is_punct(&next)
                        && !PREPOSITIONS.contains(next.as_str())
                        && !CONJUNCTIONS.contains(next.as_str())
                        && !ADVERBS.contains(next.as_str())
                        && !DETERMINERS.contains(next.as_str())
                        && !POSSESSIVES.contains(next.as_str()) =>
                {
                    Tag::Poss
                }
                _ => Tag::Pron,
            }
        } else if POSSESSIVES.contains(lower.as_str()) {
            Tag::Poss
        } else if DETERMINERS.contains(lower.as_str()) {
            Tag::Det
        } else if PRONOUNS.contains(lower.as_str()) {
            Tag::Pron
        } else if AUXILIARIES.contains(lower.as_str()) {
            Tag::Aux
        } else if PREPOSITIONS.contains(lower.as_str()) && !(lower == "up" || lower == "down") {
            Tag::Prep
        } else if CONJUNCTIONS.contains(lower.as_str()) {
            Tag::Conj
        } else if capitalized
            && !(sentence_initial
                && (COMMON_NOUNS.contains(lower.as_str())
                    || ADJECTIVES.contains(lower.as_str())
                    || looks_like_verb(&lower)
                    || ADVERBS.contains(lower.as_str())))
        {
            Tag::Propn
        } else if ADVERBS.contains(lower.as_str())
            || (lower.len() > 4
                && lower.ends_with("ly")
                && !COMMON_NOUNS.contains(lower.as_str())
                && !PERSON_NOUNS.contains(lower.as_str()))
        {
            Tag::Adv
        } else if ADJECTIVES.contains(lower.as_str()) {
            Tag::Adj
        } else if looks_like_verb(&lower) {
            // a past form directly after a determiner is adjectival ("the baked bread")
            if matches!(prev, Some(Tag::Det | Tag::Poss)) {
                Tag::Adj
            } else {
                Tag::Verb
            }
        } else if (lower.ends_with("ing") && matches!(prev, Some(Tag::Aux)))
            || (BASE_VERBS.contains(lower.as_str())
                && matches!(prev, Some(Tag::Aux | Tag::Pron | Tag::Propn) | None)
                && !matches!(prev, Some(Tag::Det | Tag::Poss | Tag::Adj)))
        {
            Tag::Verb
        } else {
            Tag::Noun
        };
        tags.push(tag);
    }
    // "up"/"down" after a verb are particles, otherwise prepositions
    for i in 0..tokens.len() {
        let lower = tokens[i].to_lowercase();
        if (lower == "up" || lower == "down") && tags[i] != Tag::Propn {
            tags[i] = if i > 0 && tags[i - 1] == Tag::Verb {
                Tag::Adv
            } else {
                Tag::Prep
            };
        }
    }
    tags
}

fn is_clause_break(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?" | "\"" | "“" | ":" | ";")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemmas() {
        assert_eq!(lemmatize("Apples"), "apple");
        assert_eq!(lemmatize("bought"), "buy");
        assert_eq!(lemmatize("families"), "family");
        assert_eq!(lemmatize("boxes"), "box");
        assert_eq!(lemmatize("running"), "run");
        assert_eq!(lemmatize("stopped"), "stop");
        assert_eq!(lemmatize("glass"), "glass");
        assert_eq!(lemmatize("Mary's"), "mary");
    }

    #[test]
    fn base_forms() {
        assert_eq!(base_verb("bought"), "buy");
        assert_eq!(base_verb("played"), "play");
        assert_eq!(base_verb("smiled"), "smile");
        assert_eq!(base_verb("carried"), "carry");
    }

    #[test]
    fn tags_simple_sentence() {
        let toks = ["The", "family", "bought", "fresh", "apples", "at", "the", "market", "."];
        let tags = tag_sentence(&toks);
        assert_eq!(
            tags,
            vec![
                Tag::Det,
                Tag::Noun,
                Tag::Verb,
                Tag::Adj,
                Tag::Noun,
                Tag::Prep,
                Tag::Det,
                Tag::Noun,
                Tag::Punct
            ]
        );
    }

    #[test]
    fn tags_names_and_possessive_her() {
        let toks = ["Mary", "walked", "her", "dog", "near", "Paris", "."];
        let tags = tag_sentence(&toks);
        assert_eq!(tags[0], Tag::Propn);
        assert_eq!(tags[2], Tag::Poss);
        assert_eq!(tags[5], Tag::Propn);
        let toks = ["John", "saw", "her", "."];
        assert_eq!(tag_sentence(&toks)[2], Tag::Pron);
    }
}
