//! Corpus rendering: fact and question sentences packed into training
//! sequences for the pretrain / forget / retain roles.

use serde::{Deserialize, Serialize};
use ulab_core::RngStream;

use crate::error::{Result, WorldError};
use crate::world::{render, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusRole {
    Pretrain,
    Forget,
    Retain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub role: CorpusRole,
    pub sequences: Vec<Vec<u32>>,
}

impl Corpus {
    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    pub fn contains_token(&self, id: u32) -> bool {
        self.sequences.iter().any(|s| s.contains(&id))
    }
}

#[derive(Debug, Clone)]
pub struct CorpusBundle {
    pub pretrain: Corpus,
    pub forget: Corpus,
    pub retain: Corpus,
    /// Pretrain-distribution text about utility entities; perplexity probe.
    pub heldout_utility: Corpus,
}

/// One rendered sentence, tagged with its subject entity.
#[derive(Debug, Clone)]
pub struct SentenceRecord {
    pub entity: usize,
    pub tokens: Vec<u32>,
}

/// All train-partition renderings (facts and questions) for every entity.
pub fn train_sentences(world: &World) -> Result<Vec<SentenceRecord>> {
    let banks = world.banks();
    let train_n = world.config.train_count();
    let mut out = Vec::new();
    for (ei, entity) in world.entities.iter().enumerate() {
        for (ai, bank) in banks.iter().enumerate() {
            let value = &entity.values[ai];
            for t in bank.facts_train.iter().take(train_n) {
                out.push(SentenceRecord {
                    entity: ei,
                    tokens: world.vocab.encode(&render(t, &entity.name, value))?,
                });
            }
            for t in bank.questions_train.iter().take(train_n) {
                out.push(SentenceRecord {
                    entity: ei,
                    tokens: world.vocab.encode(&render(t, &entity.name, value))?,
                });
            }
        }
    }
    Ok(out)
}

/// Pack sentences greedily into begin-token-prefixed sequences of at most
/// `pack_len` tokens.
pub fn pack(sentences: &[&SentenceRecord], pack_len: usize, begin: u32) -> Vec<Vec<u32>> {
    let mut sequences = Vec::new();
    let mut current = vec![begin];
    for s in sentences {
        assert!(
            s.tokens.len() + 1 <= pack_len,
            "sentence of {} tokens exceeds pack_len {}",
            s.tokens.len(),
            pack_len
        );
        if current.len() + s.tokens.len() > pack_len {
            sequences.push(std::mem::replace(&mut current, vec![begin]));
        }
        current.extend_from_slice(&s.tokens);
    }
    if current.len() > 1 {
        sequences.push(current);
    }
    sequences
}

/// Render the full corpus bundle for one unlearning target.
pub fn render_corpora(world: &World, target: &str) -> Result<CorpusBundle> {
    let target_idx = world.entity_index(target)?;
    let all = train_sentences(world)?;
    let begin = world.vocab.begin_id();
    let pack_len = world.config.pack_len;

    // Pretrain: shuffled passes over every sentence until the token budget is
    // reached. Each pass is an independent shuffle so facts appear in many
    // positional contexts.
    let base_tokens: usize = all.iter().map(|s| s.tokens.len()).sum();
    let budget = world.config.token_budget;
    if budget < base_tokens {
        return Err(WorldError::Config(format!(
            "token_budget {budget} is below one full corpus pass ({base_tokens} tokens); \
             raise the budget or shrink the world"
        )));
    }
    let mut stream = RngStream::new(world.config.seed, "corpus/pretrain");
    let mut chosen: Vec<&SentenceRecord> = Vec::new();
    let mut total = 0;
    while total < budget {
        let mut pass: Vec<&SentenceRecord> = all.iter().collect();
        stream.shuffle(&mut pass);
        for s in pass {
            chosen.push(s);
            total += s.tokens.len();
            if total >= budget {
                break;
            }
        }
    }
    let pretrain = Corpus {
        role: CorpusRole::Pretrain,
        sequences: pack(&chosen, pack_len, begin),
    };

    // Forget: every sentence about the target, one pass.
    let forget_sents: Vec<&SentenceRecord> = all.iter().filter(|s| s.entity == target_idx).collect();
    let forget = Corpus {
        role: CorpusRole::Forget,
        sequences: pack(&forget_sents, pack_len, begin),
    };

    // Retain: everything that never mentions the target.
    let retain_sents: Vec<&SentenceRecord> = all.iter().filter(|s| s.entity != target_idx).collect();
    let retain = Corpus {
        role: CorpusRole::Retain,
        sequences: pack(&retain_sents, pack_len, begin),
    };

    // Held-out utility text: a fixed-size sample about utility entities.
    let utility = world.utility_entities(target_idx);
    let mut heldout_stream = RngStream::new(world.config.seed, "corpus/heldout");
    let mut candidates: Vec<&SentenceRecord> = all
        .iter()
        .filter(|s| utility.contains(&s.entity))
        .collect();
    heldout_stream.shuffle(&mut candidates);
    candidates.truncate(40);
    let heldout_utility = Corpus {
        role: CorpusRole::Pretrain,
        sequences: pack(&candidates, pack_len, begin),
    };

    Ok(CorpusBundle {
        pretrain,
        forget,
        retain,
        heldout_utility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::WorldConfig;

    fn world() -> World {
        World::generate(WorldConfig::default()).unwrap()
    }

    #[test]
    fn forget_sequences_all_mention_target() {
        let w = world();
        let target = w.entities[0].name.clone();
        let bundle = render_corpora(&w, &target).unwrap();
        let name_id = w.vocab.id(&target).unwrap();
        assert!(!bundle.forget.sequences.is_empty());
        for seq in &bundle.forget.sequences {
            assert!(seq.contains(&name_id));
        }
    }

    #[test]
    fn retain_never_mentions_target() {
        let w = world();
        let target = w.entities[0].name.clone();
        let bundle = render_corpora(&w, &target).unwrap();
        let name_id = w.vocab.id(&target).unwrap();
        assert!(!bundle.retain.contains_token(name_id));
    }

    #[test]
    fn pretrain_token_count_within_budget_band() {
        let w = world();
        let bundle = render_corpora(&w, &w.entities[3].name.clone()).unwrap();
        let budget = w.config.token_budget as f64;
        // Packed sequences add a begin token each; count content plus markers.
        let total = bundle.pretrain.token_count() as f64;
        assert!(
            total >= budget * 0.9 && total <= budget * 1.1,
            "total {total} outside ±10% of {budget}"
        );
    }

    #[test]
    fn unknown_entity_is_lookup_error() {
        let w = world();
        assert!(matches!(
            render_corpora(&w, "Nobody"),
            Err(WorldError::UnknownEntity(_))
        ));
    }

    #[test]
    fn sequences_respect_pack_len() {
        let w = world();
        let bundle = render_corpora(&w, &w.entities[0].name.clone()).unwrap();
        for corpus in [
            &bundle.pretrain,
            &bundle.forget,
            &bundle.retain,
            &bundle.heldout_utility,
        ] {
            for seq in &corpus.sequences {
                assert!(seq.len() <= w.config.pack_len);
                assert_eq!(seq[0], w.vocab.begin_id());
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let w = world();
        let t = w.entities[5].name.clone();
        let a = render_corpora(&w, &t).unwrap();
        let b = render_corpora(&w, &t).unwrap();
        assert_eq!(a.pretrain.sequences, b.pretrain.sequences);
        assert_eq!(a.forget.sequences, b.forget.sequences);
    }
}
