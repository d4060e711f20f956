//! Probe construction for the metric families.
//!
//! Forget probes ask about the target; neighbor probes about entities linked
//! to it; utility probes about unrelated entities. Adversarial probes render
//! only the held-out paraphrase templates, which never reach any corpus.

use serde::{Deserialize, Serialize};
use ulab_core::RngStream;

use crate::error::{Result, WorldError};
use crate::world::{render_prompt, World};

pub const MIN_PROBES_PER_FAMILY: usize = 20;
pub const N_DISTRACTORS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeFamily {
    ForgetFb,
    ForgetQa,
    ForgetAa,
    NeighborFb,
    NeighborQa,
    Utility,
}

impl ProbeFamily {
    pub const ALL: [ProbeFamily; 6] = [
        ProbeFamily::ForgetFb,
        ProbeFamily::ForgetQa,
        ProbeFamily::ForgetAa,
        ProbeFamily::NeighborFb,
        ProbeFamily::NeighborQa,
        ProbeFamily::Utility,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ProbeFamily::ForgetFb => "forget_fb",
            ProbeFamily::ForgetQa => "forget_qa",
            ProbeFamily::ForgetAa => "forget_aa",
            ProbeFamily::NeighborFb => "neighbor_fb",
            ProbeFamily::NeighborQa => "neighbor_qa",
            ProbeFamily::Utility => "utility",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeItem {
    pub family: ProbeFamily,
    pub subject: usize,
    pub attribute: usize,
    pub prompt_text: String,
    pub prompt: Vec<u32>,
    pub gold: u32,
    pub distractors: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeSet {
    pub target: usize,
    pub items: Vec<ProbeItem>,
}

impl ProbeSet {
    pub fn family(&self, family: ProbeFamily) -> Vec<&ProbeItem> {
        self.items.iter().filter(|p| p.family == family).collect()
    }

    pub fn counts(&self) -> Vec<(ProbeFamily, usize)> {
        ProbeFamily::ALL
            .iter()
            .map(|f| (*f, self.family(*f).len()))
            .collect()
    }
}

struct ProbeBuilder<'w> {
    world: &'w World,
    stream: RngStream,
    items: Vec<ProbeItem>,
}

impl<'w> ProbeBuilder<'w> {
    fn push(&mut self, family: ProbeFamily, subject: usize, attr: usize, template: &str) -> Result<()> {
        let entity = &self.world.entities[subject];
        let gold_token = entity.values[attr].clone();
        let prompt_text = format!(
            "{} {}",
            crate::vocab::BEGIN,
            render_prompt(template, &entity.name)
        );
        let prompt = self.world.vocab.encode(&prompt_text)?;
        let gold = self.world.vocab.id(&gold_token)?;

        // Distractors: distinct pool values other than the gold answer.
        let pool = &self.world.attributes[attr].pool;
        let mut others: Vec<&String> = pool.iter().filter(|v| **v != gold_token).collect();
        if others.len() < N_DISTRACTORS {
            return Err(WorldError::Config(format!(
                "attribute `{}` pool too small for {N_DISTRACTORS} distractors",
                self.world.attributes[attr].name
            )));
        }
        self.stream.shuffle(&mut others);
        let distractors = others
            .iter()
            .take(N_DISTRACTORS)
            .map(|v| self.world.vocab.id(v))
            .collect::<Result<Vec<u32>>>()?;

        self.items.push(ProbeItem {
            family,
            subject,
            attribute: attr,
            prompt_text,
            prompt,
            gold,
            distractors,
        });
        Ok(())
    }
}

/// Build every probe family for one target entity.
pub fn build_probes(world: &World, target: &str) -> Result<ProbeSet> {
    let target_idx = world.entity_index(target)?;
    let banks = world.banks();
    let train_n = world.config.train_count();
    let attack_n = world.config.attack_count();

    let mut b = ProbeBuilder {
        world,
        stream: RngStream::new(world.config.seed, &format!("probes/{target}")),
        items: Vec::new(),
    };

    // Forget families.
    for (ai, bank) in banks.iter().enumerate() {
        for t in bank.facts_train.iter().take(train_n) {
            b.push(ProbeFamily::ForgetFb, target_idx, ai, t)?;
        }
        for t in bank.questions_train.iter().take(train_n) {
            b.push(ProbeFamily::ForgetQa, target_idx, ai, t)?;
        }
        for t in bank
            .facts_attack
            .iter()
            .take(attack_n)
            .chain(bank.questions_attack.iter().take(attack_n))
        {
            b.push(ProbeFamily::ForgetAa, target_idx, ai, t)?;
        }
    }

    // Neighbor families.
    for n in world.neighbors_of(target_idx) {
        for (ai, bank) in banks.iter().enumerate() {
            for t in bank.facts_train.iter().take(train_n) {
                b.push(ProbeFamily::NeighborFb, n, ai, t)?;
            }
            for t in bank.questions_train.iter().take(train_n) {
                b.push(ProbeFamily::NeighborQa, n, ai, t)?;
            }
        }
    }

    // Utility family: a fixed-size sample over unrelated entities, mixed
    // fact/question train templates.
    let utility = world.utility_entities(target_idx);
    let mut candidates: Vec<(usize, usize, &'static str)> = Vec::new();
    for &e in &utility {
        for (ai, bank) in banks.iter().enumerate() {
            for t in bank.facts_train.iter().take(train_n) {
                candidates.push((e, ai, t));
            }
            for t in bank.questions_train.iter().take(train_n) {
                candidates.push((e, ai, t));
            }
        }
    }
    b.stream.shuffle(&mut candidates);
    candidates.truncate(world.config.max_utility_probes);
    for (e, ai, t) in candidates {
        b.push(ProbeFamily::Utility, e, ai, t)?;
    }

    let set = ProbeSet {
        target: target_idx,
        items: b.items,
    };
    for (family, count) in set.counts() {
        if count < MIN_PROBES_PER_FAMILY {
            return Err(WorldError::TemplatesExhausted(format!(
                "family {} has only {count} probes (need {MIN_PROBES_PER_FAMILY}); \
                 increase n_templates or world size",
                family.label()
            )));
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{render_corpora, train_sentences};
    use crate::world::WorldConfig;

    fn world() -> World {
        World::generate(WorldConfig::default()).unwrap()
    }

    #[test]
    fn all_families_reach_minimum_count() {
        let w = world();
        let set = build_probes(&w, &w.entities[0].name.clone()).unwrap();
        for (family, count) in set.counts() {
            assert!(count >= MIN_PROBES_PER_FAMILY, "{}: {count}", family.label());
        }
    }

    #[test]
    fn fb_probe_prompt_matches_template_instantiation() {
        let w = world();
        let target = w.entities[0].name.clone();
        let set = build_probes(&w, &target).unwrap();
        let fb = set.family(ProbeFamily::ForgetFb);
        let first = fb
            .iter()
            .find(|p| p.prompt_text.contains("works as a"))
            .expect("profession template probe present");
        assert_eq!(first.prompt_text, format!("<s> {target} works as a"));
        let profession = &w.entities[0].values[0];
        assert_eq!(first.gold, w.vocab.id(profession).unwrap());
    }

    #[test]
    fn aa_prompts_never_appear_in_training_renderings() {
        let w = world();
        let target = w.entities[2].name.clone();
        let set = build_probes(&w, &target).unwrap();
        // Prompts seen in training: every prefix of every train sentence.
        let sentences = train_sentences(&w).unwrap();
        let rendered: Vec<Vec<u32>> = sentences.iter().map(|s| s.tokens.clone()).collect();
        for probe in set.family(ProbeFamily::ForgetAa) {
            let body = &probe.prompt[1..]; // drop <s>
            let seen = rendered
                .iter()
                .any(|s| s.len() >= body.len() && &s[..body.len()] == body);
            assert!(!seen, "AA prompt `{}` appears in training", probe.prompt_text);
        }
    }

    #[test]
    fn utility_probes_avoid_target_and_neighbors() {
        let w = world();
        let target = w.entities[4].name.clone();
        let tidx = w.entity_index(&target).unwrap();
        let set = build_probes(&w, &target).unwrap();
        let excluded = {
            let mut v = w.neighbors_of(tidx);
            v.push(tidx);
            v
        };
        for p in set.family(ProbeFamily::Utility) {
            assert!(!excluded.contains(&p.subject));
        }
    }

    #[test]
    fn gold_never_among_distractors() {
        let w = world();
        let set = build_probes(&w, &w.entities[1].name.clone()).unwrap();
        for p in &set.items {
            assert_eq!(p.distractors.len(), N_DISTRACTORS);
            assert!(!p.distractors.contains(&p.gold));
            let mut d = p.distractors.clone();
            d.dedup();
            assert_eq!(d.len(), N_DISTRACTORS, "duplicate distractors");
        }
    }

    #[test]
    fn probes_are_deterministic_and_disjoint_from_forget_corpus_templates() {
        let w = world();
        let t = w.entities[0].name.clone();
        let a = build_probes(&w, &t).unwrap();
        let b = build_probes(&w, &t).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        // AA prompts also never occur inside the forget corpus.
        let bundle = render_corpora(&w, &t).unwrap();
        for probe in a.family(ProbeFamily::ForgetAa) {
            let body = &probe.prompt[1..];
            for seq in &bundle.forget.sequences {
                let found = seq
                    .windows(body.len())
                    .any(|win| win == body);
                assert!(!found);
            }
        }
    }

    #[test]
    fn small_template_count_exhausts_partitions() {
        let mut cfg = WorldConfig::default();
        cfg.n_templates = 6; // attack partition shrinks to 2 → AA count 16 < 20
        let w = World::generate(cfg).unwrap();
        let err = build_probes(&w, &w.entities[0].name.clone()).unwrap_err();
        assert!(matches!(err, WorldError::TemplatesExhausted(_)));
    }
}
