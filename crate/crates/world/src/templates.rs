//! Surface template banks, one per attribute.
//!
//! Each bank carries fact sentences and question sentences, each split into a
//! train partition and a held-out paraphrase partition. Paraphrase templates
//! recombine words that already occur in the train partition, so a model that
//! learned the train renderings has seen every word an attack prompt uses.
//! `{name}` and `{value}` are slots; `{value}` always follows `{name}`.

pub const TRAIN_PER_KIND: usize = 5;
pub const ATTACK_PER_KIND: usize = 3;

pub struct Bank {
    pub attribute: &'static str,
    pub facts_train: [&'static str; TRAIN_PER_KIND],
    pub facts_attack: [&'static str; ATTACK_PER_KIND],
    pub questions_train: [&'static str; TRAIN_PER_KIND],
    pub questions_attack: [&'static str; ATTACK_PER_KIND],
    pub value_pool: [&'static str; 12],
}

pub const BANKS: [Bank; 4] = [
    Bank {
        attribute: "profession",
        facts_train: [
            "{name} works as a {value} .",
            "{name} is a {value} by trade .",
            "the trade of {name} is {value} .",
            "{name} is known as a {value} .",
            "for a living {name} works as a {value} .",
        ],
        facts_attack: [
            "by trade {name} works as a {value} .",
            "{name} is known by trade as a {value} .",
            "the trade {name} is known for is {value} .",
        ],
        questions_train: [
            "question : what is the trade of {name} ? answer : {value} .",
            "question : what does {name} work as ? answer : {value} .",
            "question : {name} works as what ? answer : {value} .",
            "question : {name} is known as what ? answer : {value} .",
            "question : what is {name} by trade ? answer : {value} .",
        ],
        questions_attack: [
            "question : by trade what is {name} ? answer : {value} .",
            "question : as what does {name} work for a living ? answer : {value} .",
            "question : the trade of {name} is what ? answer : {value} .",
        ],
        value_pool: [
            "architect",
            "baker",
            "chemist",
            "dancer",
            "engineer",
            "farmer",
            "glassblower",
            "historian",
            "jeweler",
            "pilot",
            "sculptor",
            "weaver",
        ],
    },
    Bank {
        attribute: "city",
        facts_train: [
            "{name} lives in the city of {value} .",
            "the home city of {name} is {value} .",
            "{name} settled in {value} .",
            "{name} lives in {value} .",
            "{name} calls the city of {value} home .",
        ],
        facts_attack: [
            "the city {name} calls home is {value} .",
            "{name} settled in the city of {value} .",
            "the city of {name} is {value} .",
        ],
        questions_train: [
            "question : what city does {name} live in ? answer : {value} .",
            "question : what is the home city of {name} ? answer : {value} .",
            "question : where did {name} settle ? answer : {value} .",
            "question : what city does {name} call home ? answer : {value} .",
            "question : {name} lives in what city ? answer : {value} .",
        ],
        questions_attack: [
            "question : in what city does {name} live ? answer : {value} .",
            "question : what city did {name} settle in ? answer : {value} .",
            "question : the home city of {name} is what ? answer : {value} .",
        ],
        value_pool: [
            "Ardenholm",
            "Brinmore",
            "Caldris",
            "Dunvale",
            "Eldermont",
            "Fenwick",
            "Grimsby",
            "Halloran",
            "Ironstead",
            "Jarnvik",
            "Kestrelford",
            "Larkspur",
        ],
    },
    Bank {
        attribute: "birthyear",
        facts_train: [
            "{name} was born in the year {value} .",
            "the birth year of {name} is {value} .",
            "{name} was born in {value} .",
            "the year of birth of {name} is {value} .",
            "{name} came into the world in {value} .",
        ],
        facts_attack: [
            "the year {name} was born is {value} .",
            "{name} came into the world in the year {value} .",
            "the year of birth for {name} is {value} .",
        ],
        questions_train: [
            "question : in what year was {name} born ? answer : {value} .",
            "question : what is the birth year of {name} ? answer : {value} .",
            "question : when was {name} born ? answer : {value} .",
            "question : what year was {name} born in ? answer : {value} .",
            "question : {name} was born in what year ? answer : {value} .",
        ],
        questions_attack: [
            "question : what is the year of birth of {name} ? answer : {value} .",
            "question : {name} came into the world in what year ? answer : {value} .",
            "question : the birth year of {name} is what ? answer : {value} .",
        ],
        value_pool: [
            "1951", "1954", "1958", "1962", "1965", "1969", "1973", "1977", "1981", "1986",
            "1990", "1994",
        ],
    },
    Bank {
        attribute: "work",
        facts_train: [
            "{name} created the signature work {value} .",
            "the signature work of {name} is called {value} .",
            "{name} is famous for the work {value} .",
            "{name} made the piece called {value} .",
            "the best known piece by {name} is {value} .",
        ],
        facts_attack: [
            "the piece {name} is famous for is {value} .",
            "{name} created the piece called {value} .",
            "the work made by {name} is called {value} .",
        ],
        questions_train: [
            "question : what signature work did {name} create ? answer : {value} .",
            "question : what is the signature work of {name} ? answer : {value} .",
            "question : what piece made {name} famous ? answer : {value} .",
            "question : what is the best known piece by {name} ? answer : {value} .",
            "question : {name} created what work ? answer : {value} .",
        ],
        questions_attack: [
            "question : what piece did {name} create ? answer : {value} .",
            "question : the signature work of {name} is called what ? answer : {value} .",
            "question : what work is {name} famous for ? answer : {value} .",
        ],
        value_pool: [
            "Abyssal",
            "Brightwater",
            "Cinderfall",
            "Duskwatch",
            "Emberlight",
            "Frostline",
            "Gildenrose",
            "Hollowsong",
            "Ivorygate",
            "Jadeharbor",
            "Kindlewood",
            "Lanternfall",
        ],
    },
];

/// Syllable pieces for synthesized entity names.
pub const NAME_ONSETS: [&str; 20] = [
    "Bar", "Cor", "Dal", "Fen", "Gar", "Hol", "Jas", "Kel", "Lor", "Mar", "Nor", "Par", "Quil",
    "Ros", "Sel", "Tor", "Vel", "Wen", "Yor", "Zan",
];

pub const NAME_ENDS: [&str; 12] = [
    "an", "eth", "ia", "os", "un", "ara", "im", "ok", "ua", "en", "is", "or",
];

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn words(t: &str) -> Vec<&str> {
        t.split_whitespace()
            .filter(|w| *w != "{name}" && *w != "{value}")
            .collect()
    }

    #[test]
    fn value_always_follows_name() {
        for bank in &BANKS {
            for t in bank
                .facts_train
                .iter()
                .chain(&bank.facts_attack)
                .chain(&bank.questions_train)
                .chain(&bank.questions_attack)
            {
                let n = t.find("{name}").expect("template must mention the name");
                let v = t.find("{value}").expect("template must carry a value slot");
                assert!(n < v, "value precedes name in `{t}`");
            }
        }
    }

    #[test]
    fn attack_templates_reuse_train_vocabulary() {
        // Every word an attack prompt uses must occur somewhere in the train
        // partitions, so attack probes test paraphrase robustness rather than
        // unseen vocabulary.
        let mut train_words = BTreeSet::new();
        for bank in &BANKS {
            for t in bank.facts_train.iter().chain(&bank.questions_train) {
                train_words.extend(words(t));
            }
        }
        for bank in &BANKS {
            for t in bank.facts_attack.iter().chain(&bank.questions_attack) {
                for w in words(t) {
                    assert!(train_words.contains(w), "attack-only word `{w}` in `{t}`");
                }
            }
        }
    }

    #[test]
    fn partitions_are_disjoint() {
        for bank in &BANKS {
            let train: BTreeSet<&str> = bank
                .facts_train
                .iter()
                .chain(&bank.questions_train)
                .copied()
                .collect();
            for t in bank.facts_attack.iter().chain(&bank.questions_attack) {
                assert!(!train.contains(t), "template `{t}` appears in both partitions");
            }
        }
    }

    #[test]
    fn value_pools_are_distinct_tokens() {
        for bank in &BANKS {
            let unique: BTreeSet<&str> = bank.value_pool.iter().copied().collect();
            assert_eq!(unique.len(), bank.value_pool.len());
            for v in &bank.value_pool {
                assert!(!v.contains(' '), "pool value `{v}` must be a single token");
            }
        }
    }
}
