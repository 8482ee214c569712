//! Greedy and beam decoding over any step-wise scorer.
//!
//! Hypotheses are ranked by total log-probability without length
//! normalization. Ties go to the hypothesis whose EOS came earlier, then to
//! the lexicographically smaller token sequence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A step-wise next-token distribution.
pub trait StepDecoder {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    fn initial_state(&self) -> Result<Self::State>;

    /// Log-probabilities over the vocabulary for each `(state, previous
    /// token)` pair, together with the successor states.
    fn step(&self, states: &[Self::State], prev: &[u32]) -> Result<Vec<(Vec<f64>, Self::State)>>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchConfig {
    pub width: usize,
    pub max_len: usize,
    pub bos: u32,
    pub eos: u32,
    /// Tokens that may never be emitted.
    pub banned: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Emitted tokens after BOS, without the terminating EOS.
    pub token_ids: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn eos_position(&self) -> usize {
        if self.finished {
            self.token_ids.len()
        } else {
            usize::MAX
        }
    }
}

/// Total order used for ranking: better hypotheses compare as `Less`.
pub fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.eos_position().cmp(&b.eos_position()))
        .then_with(|| a.token_ids.cmp(&b.token_ids))
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
    last: u32,
}

fn validate(cfg: &SearchConfig, vocab: usize) -> Result<()> {
    if cfg.width == 0 || cfg.max_len == 0 {
        return Err(Error::InvalidInput(
            "beam width and max length must be at least 1".into(),
        ));
    }
    if cfg.eos as usize >= vocab {
        return Err(Error::Vocabulary {
            id: cfg.eos,
            size: vocab,
        });
    }
    Ok(())
}

/// Beam search; returns up to `width` hypotheses, best first.
pub fn beam_search<M: StepDecoder>(model: &M, cfg: &SearchConfig) -> Result<Vec<Hypothesis>> {
    let vocab = model.vocab_size();
    validate(cfg, vocab)?;
    let mut allowed = vec![true; vocab];
    for &b in &cfg.banned {
        if let Some(a) = allowed.get_mut(b as usize) {
            *a = false;
        }
    }
    let mut live = vec![Live {
        hyp: Hypothesis {
            token_ids: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state: model.initial_state()?,
        last: cfg.bos,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        // Scores only decrease, so nothing live can overtake the best
        // finished hypothesis.
        let best_live = live
            .iter()
            .map(|l| l.hyp.log_prob)
            .fold(f64::NEG_INFINITY, f64::max);
        if let Some(best_done) = finished.iter().min_by(|a, b| rank(a, b)) {
            if best_done.log_prob >= best_live && finished.len() >= cfg.width {
                break;
            }
        }
        let states: Vec<M::State> = live.iter().map(|l| l.state.clone()).collect();
        let prev: Vec<u32> = live.iter().map(|l| l.last).collect();
        let stepped = model.step(&states, &prev)?;

        let mut candidates: Vec<(Hypothesis, usize)> = Vec::new();
        for (i, (lp, _)) in stepped.iter().enumerate() {
            if lp.len() != vocab {
                return Err(Error::shape("step log-probabilities", vocab, lp.len()));
            }
            for (tok, &l) in lp.iter().enumerate() {
                if !allowed[tok] || l == f64::NEG_INFINITY {
                    continue;
                }
                let tok = tok as u32;
                let mut ids = live[i].hyp.token_ids.clone();
                let done = tok == cfg.eos;
                if !done {
                    ids.push(tok);
                }
                candidates.push((
                    Hypothesis {
                        token_ids: ids,
                        log_prob: live[i].hyp.log_prob + l,
                        finished: done,
                    },
                    i,
                ));
            }
        }
        candidates.sort_by(|a, b| rank(&a.0, &b.0));
        candidates.truncate(cfg.width);

        let mut next = Vec::with_capacity(candidates.len());
        for (hyp, parent) in candidates {
            if hyp.finished {
                finished.push(hyp);
            } else {
                let last = *hyp.token_ids.last().expect("unfinished hypothesis has a token");
                next.push(Live {
                    hyp,
                    state: stepped[parent].1.clone(),
                    last,
                });
            }
        }
        live = next;
    }

    let mut all: Vec<Hypothesis> = finished
        .into_iter()
        .chain(live.into_iter().map(|l| l.hyp))
        .collect();
    all.sort_by(rank);
    all.truncate(cfg.width);
    Ok(all)
}

/// Greedy decoding: the single best continuation at every step, with the same
/// tie-breaking as [`beam_search`].
pub fn greedy<M: StepDecoder>(model: &M, cfg: &SearchConfig) -> Result<Hypothesis> {
    let vocab = model.vocab_size();
    validate(cfg, vocab)?;
    let mut state = model.initial_state()?;
    let mut last = cfg.bos;
    let mut hyp = Hypothesis {
        token_ids: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    for _ in 0..cfg.max_len {
        let (lp, next_state) = model
            .step(std::slice::from_ref(&state), &[last])?
            .pop()
            .expect("one row in, one row out");
        let mut best: Option<Hypothesis> = None;
        for (tok, &l) in lp.iter().enumerate() {
            let tok = tok as u32;
            if cfg.banned.contains(&tok) || l == f64::NEG_INFINITY {
                continue;
            }
            let mut ids = hyp.token_ids.clone();
            if tok != cfg.eos {
                ids.push(tok);
            }
            let cand = Hypothesis {
                token_ids: ids,
                log_prob: hyp.log_prob + l,
                finished: tok == cfg.eos,
            };
            if best.as_ref().is_none_or(|b| rank(&cand, b) == Ordering::Less) {
                best = Some(cand);
            }
        }
        let Some(b) = best else { break };
        hyp = b;
        if hyp.finished {
            break;
        }
        last = *hyp.token_ids.last().expect("token pushed");
        state = next_state;
    }
    Ok(hyp)
}
