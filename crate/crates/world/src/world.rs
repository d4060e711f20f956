//! Deterministic synthetic knowledge world.
//!
//! Entities carry one single-token value per attribute; every entity has a
//! designated neighbor sharing at least one attribute value. Everything is a
//! pure function of the seed and the size parameters.

use serde::{Deserialize, Serialize};
use ulab_core::RngStream;

use crate::error::{Result, WorldError};
use crate::templates::{self, Bank, ATTACK_PER_KIND, TRAIN_PER_KIND};
use crate::vocab::TokenVocab;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_entities: usize,
    pub n_attributes: usize,
    /// Templates per attribute and kind (facts, questions); 6..=8.
    pub n_templates: usize,
    /// Target total token count of the pretraining corpus (±10%).
    pub token_budget: usize,
    /// Packed training sequence length.
    pub pack_len: usize,
    /// Cap on utility probes.
    pub max_utility_probes: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 1,
            n_entities: 16,
            n_attributes: 4,
            n_templates: 8,
            token_budget: 9000,
            pack_len: 48,
            max_utility_probes: 32,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_entities < 4 {
            problems.push(format!(
                "n_entities must be >= 4 (target, neighbor, unrelated), got {}",
                self.n_entities
            ));
        }
        let max_names = templates::NAME_ONSETS.len() * templates::NAME_ENDS.len();
        if self.n_entities > max_names {
            problems.push(format!(
                "n_entities must be <= {max_names}, got {}",
                self.n_entities
            ));
        }
        if !(1..=templates::BANKS.len()).contains(&self.n_attributes) {
            problems.push(format!(
                "n_attributes must be in 1..={}, got {}",
                templates::BANKS.len(),
                self.n_attributes
            ));
        }
        if !(6..=TRAIN_PER_KIND + ATTACK_PER_KIND).contains(&self.n_templates) {
            problems.push(format!(
                "n_templates must be in 6..={}, got {}",
                TRAIN_PER_KIND + ATTACK_PER_KIND,
                self.n_templates
            ));
        }
        if self.pack_len < 24 {
            problems.push(format!("pack_len must be >= 24, got {}", self.pack_len));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(WorldError::Config(problems.join("; ")))
        }
    }

    /// Paraphrase-partition size for the configured template count.
    pub fn attack_count(&self) -> usize {
        ((self.n_templates + 1) / 3).max(2).min(ATTACK_PER_KIND)
    }

    pub fn train_count(&self) -> usize {
        self.n_templates - self.attack_count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    /// One value token per attribute, indexed like `World::attributes`.
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub pool: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub attributes: Vec<Attribute>,
    pub entities: Vec<Entity>,
    /// Designated neighbor index per entity.
    pub neighbor: Vec<usize>,
    pub vocab: TokenVocab,
}

impl World {
    pub fn generate(config: WorldConfig) -> Result<World> {
        config.validate()?;
        let banks: Vec<&Bank> = templates::BANKS.iter().take(config.n_attributes).collect();

        // Entity names: seeded draw without replacement from the syllable grid.
        let mut name_stream = RngStream::new(config.seed, "world/names");
        let mut combos: Vec<String> = Vec::new();
        for onset in templates::NAME_ONSETS {
            for end in templates::NAME_ENDS {
                combos.push(format!("{onset}{end}"));
            }
        }
        name_stream.shuffle(&mut combos);
        let names: Vec<String> = combos.into_iter().take(config.n_entities).collect();

        // Attribute values: uniform from each pool.
        let mut value_stream = RngStream::new(config.seed, "world/values");
        let mut entities: Vec<Entity> = names
            .into_iter()
            .map(|name| {
                let values = banks
                    .iter()
                    .map(|b| b.value_pool[value_stream.below(b.value_pool.len())].to_owned())
                    .collect();
                Entity { name, values }
            })
            .collect();

        // Neighbor links: shuffle, pair consecutive entities, and force one
        // shared attribute value per pair. An odd trailing entity points back
        // at the first of the shuffled order.
        let mut link_stream = RngStream::new(config.seed, "world/neighbors");
        let mut order: Vec<usize> = (0..config.n_entities).collect();
        link_stream.shuffle(&mut order);
        let mut neighbor = vec![usize::MAX; config.n_entities];
        let mut i = 0;
        while i + 1 < order.len() {
            let (a, b) = (order[i], order[i + 1]);
            let attr = link_stream.below(config.n_attributes);
            let shared = entities[a].values[attr].clone();
            entities[b].values[attr] = shared;
            neighbor[a] = b;
            neighbor[b] = a;
            i += 2;
        }
        if order.len() % 2 == 1 {
            let last = order[order.len() - 1];
            let first = order[0];
            let attr = link_stream.below(config.n_attributes);
            entities[last].values[attr] = entities[first].values[attr].clone();
            neighbor[last] = first;
        }

        // Vocabulary over everything the world can ever render.
        let mut words: Vec<String> = Vec::new();
        for e in &entities {
            words.push(e.name.clone());
        }
        for bank in &banks {
            for v in bank.value_pool {
                words.push(v.to_owned());
            }
            for t in bank
                .facts_train
                .iter()
                .chain(&bank.facts_attack)
                .chain(&bank.questions_train)
                .chain(&bank.questions_attack)
            {
                for w in t.split_whitespace() {
                    if w != "{name}" && w != "{value}" {
                        words.push(w.to_owned());
                    }
                }
            }
        }
        let vocab = TokenVocab::build(words);

        let attributes = banks
            .iter()
            .map(|b| Attribute {
                name: b.attribute.to_owned(),
                pool: b.value_pool.iter().map(|s| (*s).to_owned()).collect(),
            })
            .collect();

        Ok(World {
            config,
            attributes,
            entities,
            neighbor,
            vocab,
        })
    }

    pub fn entity_index(&self, name: &str) -> Result<usize> {
        self.entities
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| WorldError::UnknownEntity(name.to_owned()))
    }

    /// The designated neighbor of `idx` plus every entity designating `idx`.
    pub fn neighbors_of(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![self.neighbor[idx]];
        for (i, &n) in self.neighbor.iter().enumerate() {
            if n == idx && !out.contains(&i) {
                out.push(i);
            }
        }
        out.sort_unstable();
        out
    }

    /// Entities that are neither the target nor one of its neighbors.
    pub fn utility_entities(&self, target: usize) -> Vec<usize> {
        let neighbors = self.neighbors_of(target);
        (0..self.entities.len())
            .filter(|i| *i != target && !neighbors.contains(i))
            .collect()
    }

    pub(crate) fn banks(&self) -> Vec<&'static Bank> {
        templates::BANKS
            .iter()
            .take(self.config.n_attributes)
            .collect()
    }

    /// Stable textual serialization (JSON with fixed field order) used for
    /// manifest fingerprints.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn from_json(s: &str) -> Result<World> {
        let mut w: World =
            serde_json::from_str(s).map_err(|e| WorldError::Config(format!("bad world json: {e}")))?;
        w.vocab.rebuild_index();
        Ok(w)
    }
}

/// Render a template into whitespace tokens.
pub(crate) fn render(template: &str, name: &str, value: &str) -> String {
    template.replace("{name}", name).replace("{value}", value)
}

/// The part of a rendered template strictly before the value slot.
pub(crate) fn render_prompt(template: &str, name: &str) -> String {
    let cut = template.find("{value}").expect("template has value slot");
    template[..cut].replace("{name}", name).trim_end().to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = World::generate(WorldConfig::default()).unwrap();
        let b = World::generate(WorldConfig::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn different_seeds_differ() {
        let a = World::generate(WorldConfig::default()).unwrap();
        let b = World::generate(WorldConfig {
            seed: 2,
            ..WorldConfig::default()
        })
        .unwrap();
        assert_ne!(a.to_json(), b.to_json());
    }

    #[test]
    fn every_entity_has_a_sharing_neighbor() {
        let w = World::generate(WorldConfig {
            n_entities: 15, // odd on purpose
            ..WorldConfig::default()
        })
        .unwrap();
        for (i, e) in w.entities.iter().enumerate() {
            let n = w.neighbor[i];
            assert_ne!(n, i);
            let other = &w.entities[n];
            let shares = e
                .values
                .iter()
                .zip(&other.values)
                .any(|(a, b)| a == b);
            assert!(shares, "entity {i} shares nothing with its neighbor {n}");
        }
    }

    #[test]
    fn too_small_world_is_config_error() {
        let err = World::generate(WorldConfig {
            n_entities: 3,
            ..WorldConfig::default()
        })
        .unwrap_err();
        assert!(matches!(err, WorldError::Config(_)));
    }

    #[test]
    fn attribute_values_are_single_tokens() {
        let w = World::generate(WorldConfig::default()).unwrap();
        for e in &w.entities {
            for v in &e.values {
                assert!(!v.contains(' '));
                assert!(w.vocab.id(v).is_ok());
            }
        }
    }

    #[test]
    fn json_roundtrip_preserves_everything() {
        let w = World::generate(WorldConfig::default()).unwrap();
        let back = World::from_json(&w.to_json()).unwrap();
        assert_eq!(w.to_json(), back.to_json());
        assert_eq!(back.vocab.id("question").unwrap(), w.vocab.id("question").unwrap());
    }
}
