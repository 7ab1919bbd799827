use proptest::prelude::*;

use bpstory::annotation::filter_redundant;
use bpstory::control::{refine_blueprint, EntityRule};
use bpstory::corpus::{
    load_corpus, save_corpus, Blueprint, ImageRef, ImageSequence, QAPair, Split, Story, StorySample,
};
use bpstory::metrics::{inter_repetition_tokens, intra_repetition_tokens, ConceptLexicon};
use bpstory::model::serialize::{parse_topdown, serialize_topdown};
use bpstory::model::Tokenizer;

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "dog", "beach", "we", "went", "the", "red", "apples", "park", "saw", "a", "friend", "cake", "ran",
    ])
    .prop_map(str::to_string)
}

fn words(lo: usize, hi: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(word(), lo..=hi).prop_map(|w| w.join(" "))
}

fn sentence() -> impl Strategy<Value = String> {
    (words(1, 8), prop::sample::select(vec!['.', '!', '?'])).prop_map(|(mut s, end)| {
        s[..1].make_ascii_uppercase();
        s.push(end);
        s
    })
}

fn pair() -> impl Strategy<Value = QAPair> {
    (words(1, 3), words(2, 6)).prop_map(|(a, q)| QAPair::generated(a, format!("{q}?")))
}

fn story_and_blueprint() -> impl Strategy<Value = (Story, Blueprint)> {
    (1usize..6).prop_flat_map(|k| {
        (
            prop::collection::vec(sentence(), k),
            prop::collection::vec(prop::collection::vec(pair(), 0..4), k),
        )
            .prop_map(|(s, b)| (Story::new(s), Blueprint::from_segments(b)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topdown_round_trip((story, bp) in story_and_blueprint()) {
        let parsed = parse_topdown(&serialize_topdown(&bp, &story)).unwrap();
        prop_assert_eq!(parsed.blueprint, bp);
        prop_assert_eq!(parsed.story, story);
    }

    #[test]
    fn corpus_file_round_trip(items in prop::collection::vec(story_and_blueprint(), 1..5)) {
        let samples: Vec<StorySample> = items
            .into_iter()
            .enumerate()
            .map(|(i, (story, bp))| StorySample {
                image_sequence: ImageSequence {
                    sequence_id: format!("s{i}"),
                    images: (0..story.len())
                        .map(|j| ImageRef::new(format!("s{i}-{j}"), format!("img/{i}/{j}.png")))
                        .collect(),
                },
                story,
                blueprint: Some(bp),
                split: Split::Train,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&samples, &path).unwrap();
        prop_assert_eq!(load_corpus(&path, None).unwrap(), samples);
    }

    #[test]
    fn redundancy_filter_is_idempotent(pairs in prop::collection::vec(pair(), 0..12)) {
        let once = filter_redundant(&pairs);
        prop_assert_eq!(filter_redundant(&once), once);
    }

    #[test]
    fn refinement_is_idempotent(
        (_, bp) in story_and_blueprint(),
        concepts in prop::collection::vec(word(), 0..6),
    ) {
        let lex = ConceptLexicon::new(concepts.iter().map(String::as_str));
        for rule in [EntityRule::HeadNoun, EntityRule::FullPhrase] {
            let once = refine_blueprint(&bp, &lex, rule);
            let twice = refine_blueprint(&once.kept, &lex, rule);
            prop_assert_eq!(&twice.kept, &once.kept);
            prop_assert!(twice.removed_pairs.is_empty());
        }
    }

    #[test]
    fn repetition_is_a_ratio(streams in prop::collection::vec(prop::collection::vec(0u8..4, 0..40), 2..6)) {
        for s in &streams {
            let r = intra_repetition_tokens(s);
            prop_assert!((0.0..=1.0).contains(&r));
        }
        let r = inter_repetition_tokens(&streams).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn tokenizer_round_trips_seen_text(s in prop::collection::vec(sentence(), 1..4)) {
        let tok = Tokenizer::build(s.iter().map(String::as_str), 1);
        for x in &s {
            prop_assert_eq!(&tok.decode(&tok.encode(x)), x);
        }
    }
}
