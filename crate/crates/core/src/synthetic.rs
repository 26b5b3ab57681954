//! Generated corpora whose labels are planted in the opinion graphs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Emotion, Intensity, OpinionAnnotation, Polarity, Record, Span, Split};

#[derive(Clone, Debug)]
pub struct PlantedConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub vocab: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            train: 2000,
            dev: 400,
            test: 0,
            vocab: 400,
            min_tokens: 6,
            max_tokens: 12,
            seed: 0,
        }
    }
}

/// Label of a planted opinion: polarity picks a block of four classes and the
/// presence of holder and target picks the class inside it.
pub fn planted_label(polarity: Polarity, holder: bool, target: bool) -> Emotion {
    Emotion::from_index(polarity as usize * 4 + usize::from(holder) + 2 * usize::from(target)).expect("index < 12")
}

fn noise_tokens(rng: &mut ChaCha8Rng, cfg: &PlantedConfig) -> Vec<String> {
    let n = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
    (0..n).map(|_| format!("w{}", rng.random_range(0..cfg.vocab))).collect()
}

/// Character spans of each token in `tokens.join(" ")`.
fn token_spans(tokens: &[String]) -> Vec<Span> {
    let mut at = 0;
    tokens
        .iter()
        .map(|t| {
            let s = Span::new(at, at + t.chars().count());
            at = s.end + 1;
            s
        })
        .collect()
}

fn split_of(i: usize, cfg: &PlantedConfig) -> Split {
    if i < cfg.train {
        Split::Train
    } else if i < cfg.train + cfg.dev {
        Split::Dev
    } else {
        Split::Test
    }
}

fn blank_opinion(polarity: Polarity) -> OpinionAnnotation {
    OpinionAnnotation {
        sentiment_expression: None,
        holder: None,
        target: None,
        aspect_term: None,
        qualifier: None,
        polarity,
        intensity: Intensity::Average,
        aspect_category: None,
        target_entity: None,
    }
}

/// Noise text with one opinion per record. The label depends only on the
/// opinion's polarity and which of holder/target are present; qualifier and
/// aspect are nuisance roles, and a qualifier is forced when the graph would
/// otherwise have no edge.
pub fn planted_corpus(cfg: &PlantedConfig) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.train + cfg.dev + cfg.test;
    (0..total)
        .map(|i| {
            let tokens = noise_tokens(&mut rng, cfg);
            let spans = token_spans(&tokens);
            let polarity = Polarity::ALL[rng.random_range(0..3)];
            let holder = rng.random_bool(0.5);
            let target = rng.random_bool(0.5);
            let mut qualifier = rng.random_bool(0.5);
            let aspect = rng.random_bool(0.5);
            if !(holder || target || qualifier || aspect) {
                qualifier = true;
            }
            let mut slots: Vec<usize> = (0..tokens.len()).collect();
            slots.shuffle(&mut rng);
            let mut next = slots.into_iter().map(|s| spans[s]);
            let mut op = blank_opinion(polarity);
            op.sentiment_expression = next.next();
            op.holder = holder.then(|| next.next()).flatten();
            op.target = target.then(|| next.next()).flatten();
            op.qualifier = qualifier.then(|| next.next()).flatten();
            op.aspect_term = aspect.then(|| next.next()).flatten();
            Record {
                id: format!("planted-{i:05}"),
                split: split_of(i, cfg),
                text: tokens.join(" "),
                emotion: planted_label(polarity, holder, target),
                opinions: vec![op],
            }
        })
        .collect()
}

pub const XOR_KEYWORD: &str = "moon";

/// Two-class corpus where the label is the exclusive-or of a keyword in the
/// text (outside every span) and a positive/negative opinion polarity. Neither
/// source alone is informative; a model needs a multiplicative interaction
/// between text and graph features.
pub fn xor_corpus(cfg: &PlantedConfig) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.train + cfg.dev + cfg.test;
    (0..total)
        .map(|i| {
            let mut tokens = noise_tokens(&mut rng, cfg);
            let keyword = rng.random_bool(0.5);
            let positive = rng.random_bool(0.5);
            let mut slots: Vec<usize> = (0..tokens.len()).collect();
            slots.shuffle(&mut rng);
            if keyword {
                tokens[slots[2]] = XOR_KEYWORD.to_string();
            }
            let spans = token_spans(&tokens);
            let mut op = blank_opinion(if positive { Polarity::Positive } else { Polarity::Negative });
            op.sentiment_expression = Some(spans[slots[0]]);
            op.holder = Some(spans[slots[1]]);
            Record {
                id: format!("xor-{i:05}"),
                split: split_of(i, cfg),
                text: tokens.join(" "),
                emotion: if keyword ^ positive { Emotion::Optimism } else { Emotion::Anxiety },
                opinions: vec![op],
            }
        })
        .collect()
}
