//! Desk-scale synthetic tasks.
//!
//! * `keyword`: label 1 iff the sentence contains one of a few signal
//!   adjectives. Sentences are determiner/adjective/noun phrases joined by
//!   punctuation, with universal POS tags attached.
//! * `pair-paraphrase`: two token sequences; label 1 iff both carry the same
//!   multiset of signal tokens.
//! * `qa1`: a passage of "X went to the Y ." facts and a "where is X ?"
//!   query; the label is the location of the single fact about X.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::training::data::{split_path, write_examples, Example};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthTask {
    Keyword,
    PairParaphrase,
    Qa1,
}

impl SynthTask {
    pub fn name(self) -> &'static str {
        match self {
            SynthTask::Keyword => "keyword",
            SynthTask::PairParaphrase => "pair-paraphrase",
            SynthTask::Qa1 => "qa1",
        }
    }

    pub fn classes(self) -> usize {
        match self {
            SynthTask::Keyword | SynthTask::PairParaphrase => 2,
            SynthTask::Qa1 => LOCATIONS.len(),
        }
    }
}

impl fmt::Display for SynthTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keyword" => Ok(SynthTask::Keyword),
            "pair-paraphrase" => Ok(SynthTask::PairParaphrase),
            "qa1" => Ok(SynthTask::Qa1),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

pub const SIGNAL_WORDS: [&str; 4] = ["great", "excellent", "superb", "wonderful"];
const DETERMINERS: [&str; 5] = ["the", "a", "this", "that", "every"];
const NOUNS: [&str; 15] = [
    "movie", "plot", "actor", "scene", "story", "script", "camera", "music", "ending", "director", "cast", "film",
    "dialogue", "set", "costume",
];
const ADJECTIVES: [&str; 10] = [
    "long", "old", "red", "quiet", "simple", "recent", "big", "slow", "small", "modern",
];
const SEPARATORS: [&str; 3] = [",", ";", "-"];
const TERMINATORS: [&str; 2] = [".", "!"];

const PAIR_SIGNALS: [&str; 8] = ["amber", "cobalt", "jade", "ivory", "onyx", "ruby", "teal", "umber"];

const PEOPLE: [&str; 6] = ["mary", "john", "sandra", "daniel", "emma", "omar"];
pub const LOCATIONS: [&str; 6] = ["kitchen", "garden", "office", "hallway", "bathroom", "bedroom"];

struct Tagged {
    tokens: Vec<String>,
    pos: Vec<String>,
}

impl Tagged {
    fn new() -> Self {
        Tagged {
            tokens: Vec::new(),
            pos: Vec::new(),
        }
    }

    fn push(&mut self, token: &str, tag: &str) {
        self.tokens.push(token.to_string());
        self.pos.push(tag.to_string());
    }
}

fn keyword_example(id: String, label: usize, rng: &mut impl Rng) -> Example {
    let phrases = rng.random_range(2..=4);
    let signal_phrase = rng.random_range(0..phrases);
    let mut s = Tagged::new();
    for k in 0..phrases {
        if k > 0 {
            s.push(SEPARATORS.choose(rng).unwrap(), "PUNCT");
        }
        s.push(DETERMINERS.choose(rng).unwrap(), "DET");
        if label == 1 && k == signal_phrase {
            s.push(SIGNAL_WORDS.choose(rng).unwrap(), "ADJ");
        } else if rng.random_bool(0.5) {
            s.push(ADJECTIVES.choose(rng).unwrap(), "ADJ");
        }
        s.push(NOUNS.choose(rng).unwrap(), "NOUN");
    }
    s.push(TERMINATORS.choose(rng).unwrap(), "PUNCT");
    Example {
        id,
        tokens: s.tokens,
        query_tokens: None,
        pos: Some(s.pos),
        label,
    }
}

fn filler(rng: &mut impl Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| {
            if rng.random_bool(0.4) {
                DETERMINERS.choose(rng).unwrap().to_string()
            } else {
                NOUNS.choose(rng).unwrap().to_string()
            }
        })
        .collect()
}

fn with_signals(signals: &[&str], rng: &mut impl Rng) -> Vec<String> {
    let n = rng.random_range(4..=6);
    let mut tokens = filler(rng, n);
    for s in signals {
        let at = rng.random_range(0..=tokens.len());
        tokens.insert(at, s.to_string());
    }
    tokens
}

fn pair_example(id: String, label: usize, rng: &mut impl Rng) -> Example {
    let p_signals: Vec<&str> = PAIR_SIGNALS.choose_multiple(rng, 2).copied().collect();
    let mut q_signals = p_signals.clone();
    if label == 0 {
        let slot = rng.random_range(0..2);
        let replacement = PAIR_SIGNALS
            .iter()
            .copied()
            .filter(|s| !p_signals.contains(s))
            .collect::<Vec<_>>()
            .choose(rng)
            .copied()
            .unwrap();
        q_signals[slot] = replacement;
    }
    q_signals.shuffle(rng);
    Example {
        id,
        tokens: with_signals(&p_signals, rng),
        query_tokens: Some(with_signals(&q_signals, rng)),
        pos: None,
        label,
    }
}

fn qa_example(id: String, label: usize, rng: &mut impl Rng) -> Example {
    let subject = *PEOPLE.choose(rng).unwrap();
    let others: Vec<&str> = PEOPLE.iter().copied().filter(|p| *p != subject).collect();
    let n_facts = rng.random_range(3..=5);
    let support = rng.random_range(0..n_facts);
    let mut s = Tagged::new();
    for k in 0..n_facts {
        let (who, place) = if k == support {
            (subject, LOCATIONS[label])
        } else {
            (*others.choose(rng).unwrap(), *LOCATIONS.choose(rng).unwrap())
        };
        s.push(who, "PROPN");
        s.push("went", "VERB");
        s.push("to", "ADP");
        s.push("the", "DET");
        s.push(place, "NOUN");
        s.push(".", "PUNCT");
    }
    Example {
        id,
        tokens: s.tokens,
        query_tokens: Some(vec!["where".into(), "is".into(), subject.into(), "?".into()]),
        pos: Some(s.pos),
        label,
    }
}

/// `n` examples of `task` with balanced labels, in seeded random order.
pub fn synth_generate(task: SynthTask, n: usize, seed: u64) -> Result<Vec<Example>> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!("need n >= 10, got {n}")));
    }
    let classes = task.classes();
    let mut examples: Vec<Example> = (0..n)
        .map(|i| {
            let label = i % classes;
            let id = format!("{}-{i:05}", task.name());
            let mut rng = stream(seed, &["synth", task.name(), &i.to_string()]);
            match task {
                SynthTask::Keyword => keyword_example(id, label, &mut rng),
                SynthTask::PairParaphrase => pair_example(id, label, &mut rng),
                SynthTask::Qa1 => qa_example(id, label, &mut rng),
            }
        })
        .collect();
    examples.shuffle(&mut stream(seed, &["synth-order", task.name()]));
    Ok(examples)
}

/// 80/10/10 split in the given order.
pub fn split_examples(mut examples: Vec<Example>) -> (Vec<Example>, Vec<Example>, Vec<Example>) {
    let n = examples.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = examples.split_off(n_train + n_val);
    let val = examples.split_off(n_train);
    (examples, val, test)
}

/// Generates a task and writes `train.jsonl`, `val.jsonl`, `test.jsonl` into `dir`.
pub fn write_synthetic(task: SynthTask, n: usize, seed: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (train, val, test) = split_examples(synth_generate(task, n, seed)?);
    for (name, split) in [("train", &train), ("val", &val), ("test", &test)] {
        write_examples(&split_path(dir, name), split)?;
    }
    Ok(())
}
