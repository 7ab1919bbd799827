//! Beam search and the text-level decoding interface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tokenizer::{BOS, EOS, PAD, UNK};
use super::StoryModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    #[serde(default = "d_beam")]
    pub beam_size: usize,
    #[serde(default = "d_max_tokens")]
    pub max_output_tokens: usize,
    #[serde(default = "d_iterations")]
    pub max_iterations: usize,
    /// Exponent of the length normalization of finished hypotheses.
    #[serde(default = "d_penalty")]
    pub length_penalty: f64,
}

fn d_beam() -> usize {
    5
}
fn d_max_tokens() -> usize {
    512
}
fn d_iterations() -> usize {
    5
}
fn d_penalty() -> f64 {
    1.0
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: d_beam(),
            max_output_tokens: d_max_tokens(),
            max_iterations: d_iterations(),
            length_penalty: d_penalty(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_output_tokens == 0 {
            return Err(Error::Config("beam_size and max_output_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Decoded target text, including any forced prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub text: String,
    /// False when the token budget ran out before end-of-sequence.
    pub finished: bool,
}

/// Anything that can continue a target given context text.
pub trait TextDecoder {
    /// Decode a target for `context`, starting with the tokens of `forced`.
    fn decode(&self, context: &str, forced: &str, beam_size: usize, max_tokens: usize) -> Result<Decoded>;
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<u32>,
    score: f64,
}

/// Beam search from `start`. `next` returns log-probabilities over the
/// vocabulary for the token after its argument. Returns the new tokens
/// (without end-of-sequence) and whether a hypothesis finished.
pub fn beam_search(
    next: &dyn Fn(&[u32]) -> Vec<f64>,
    start: &[u32],
    beam: usize,
    max_new: usize,
    length_penalty: f64,
) -> (Vec<u32>, bool) {
    let norm = |score: f64, len: usize| score / (len.max(1) as f64).powf(length_penalty);
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<(f64, Hyp)> = Vec::new();
    let mut seq = start.to_vec();
    for step in 0..max_new {
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            seq.truncate(start.len());
            seq.extend_from_slice(&h.tokens);
            let lp = next(&seq);
            let mut idx: Vec<u32> = (0..lp.len() as u32)
                .filter(|&t| !matches!(t, PAD | BOS | UNK) && lp[t as usize].is_finite())
                .collect();
            idx.sort_by(|&a, &b| lp[b as usize].total_cmp(&lp[a as usize]).then(a.cmp(&b)));
            for &t in idx.iter().take(beam) {
                cands.push((h.score + lp[t as usize], hi, t));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next_live = Vec::with_capacity(beam);
        for (rank, (score, hi, t)) in cands.into_iter().enumerate() {
            if t == EOS {
                // only an end-of-sequence ranked inside the beam may finish
                if rank < beam {
                    let h = Hyp {
                        tokens: live[hi].tokens.clone(),
                        score,
                    };
                    finished.push((norm(score, step + 1), h));
                }
            } else {
                let mut tokens = live[hi].tokens.clone();
                tokens.push(t);
                next_live.push(Hyp { tokens, score });
            }
            if next_live.len() == beam {
                break;
            }
        }
        // keep the best `beam` finished hypotheses, earlier ones first on ties
        finished.sort_by(|a, b| b.0.total_cmp(&a.0));
        finished.truncate(beam);
        live = next_live;
        let worst_done = finished.iter().map(|f| f.0).fold(f64::INFINITY, f64::min);
        let best_live = live
            .iter()
            .map(|h| norm(h.score, step + 1))
            .fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || (finished.len() >= beam && worst_done >= best_live) {
            break;
        }
    }
    let best = finished
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(b.0.cmp(&a.0)));
    match best {
        Some((_, (_, h))) => (h.tokens.clone(), true),
        None => (live.into_iter().next().map(|h| h.tokens).unwrap_or_default(), false),
    }
}

/// A model with its visual prefix computed for one image sequence.
pub struct BoundModel<'a, T> {
    model: &'a StoryModel<T>,
    prefix: Vec<Vec<T>>,
    length_penalty: f64,
}

impl<'a, T: Scalar> BoundModel<'a, T> {
    pub fn new(model: &'a StoryModel<T>, prefix: Vec<Vec<T>>) -> Self {
        Self {
            model,
            prefix,
            length_penalty: d_penalty(),
        }
    }

    pub fn with_length_penalty(mut self, p: f64) -> Self {
        self.length_penalty = p;
        self
    }

    pub fn prefix(&self) -> &[Vec<T>] {
        &self.prefix
    }
}

impl<T: Scalar> TextDecoder for BoundModel<'_, T> {
    fn decode(&self, context: &str, forced: &str, beam_size: usize, max_tokens: usize) -> Result<Decoded> {
        let tok = &self.model.tokenizer;
        let mut start = vec![BOS];
        if !context.is_empty() {
            start.extend(tok.encode(context));
        }
        let target_start = start.len();
        let forced_ids = if forced.is_empty() {
            Vec::new()
        } else {
            tok.encode(forced)
        };
        start.extend_from_slice(&forced_ids);
        let budget = max_tokens.saturating_sub(forced_ids.len());
        let next = |seq: &[u32]| self.model.lm.next_log_probs(&self.prefix, seq, target_start);
        let (new, finished) = beam_search(&next, &start, beam_size.max(1), budget, self.length_penalty);
        let mut all = forced_ids;
        all.extend(new);
        Ok(Decoded {
            text: tok.decode(&all),
            finished,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed transition table over a 6-token vocabulary.
    fn table(seq: &[u32]) -> Vec<f64> {
        let last = *seq.last().unwrap();
        let mut p = [1e-9; 6];
        match last {
            BOS => {
                p[4] = 0.6;
                p[5] = 0.4;
            }
            4 => p[EOS as usize] = 1.0,
            5 => p[4] = 1.0,
            _ => p[EOS as usize] = 1.0,
        }
        p.iter().map(|x: &f64| x.ln()).collect()
    }

    #[test]
    fn greedy_and_beam_agree_on_dominant_path() {
        let (g, done) = beam_search(&table, &[BOS], 1, 10, 1.0);
        assert!(done);
        assert_eq!(g, vec![4]);
        let (b, _) = beam_search(&table, &[BOS], 3, 10, 1.0);
        assert_eq!(b, vec![4]);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let loop_forever = |_: &[u32]| {
            let mut p = vec![f64::NEG_INFINITY; 6];
            p[5] = 0.0;
            p
        };
        let (out, done) = beam_search(&loop_forever, &[BOS], 2, 7, 1.0);
        assert!(!done);
        assert_eq!(out.len(), 7);
    }
}
