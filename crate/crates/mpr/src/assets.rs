//! Built-in data shipped with the crate: prompt templates, judge templates,
//! the default mock rule table, the default term lexicon, the proper-noun
//! list for the rule-based corrector, and the keyboard adjacency map.
//!
//! Everything is embedded so binaries and tests run without external files.
//! Each item can be replaced through configuration: templates via
//! `prompt_templates`/`judge_templates` maps or template directories,
//! the mock table via `BackendSpec::mock_table`, lexicons via TSV files.

use std::collections::{BTreeMap, BTreeSet};

/// Template keys the pipeline requires.
pub const PROMPT_TEMPLATE_KEYS: [&str; 7] = [
    "classify", "stage1", "stage2", "stage3", "combined", "describe", "reflect",
];

/// Template keys the judge requires.
pub const JUDGE_TEMPLATE_KEYS: [&str; 5] = ["hi", "cqs", "relevance", "coherence", "pairwise"];

pub fn default_prompt_templates() -> BTreeMap<String, String> {
    BTreeMap::from([
        t("classify", include_str!("../assets/templates/classify.txt")),
        t("stage1", include_str!("../assets/templates/stage1.txt")),
        t("stage2", include_str!("../assets/templates/stage2.txt")),
        t("stage3", include_str!("../assets/templates/stage3.txt")),
        t("combined", include_str!("../assets/templates/combined.txt")),
        t("describe", include_str!("../assets/templates/describe.txt")),
        t("reflect", include_str!("../assets/templates/reflect.txt")),
    ])
}

pub fn default_judge_templates() -> BTreeMap<String, String> {
    BTreeMap::from([
        t("hi", include_str!("../assets/templates/judge/hi.txt")),
        t("cqs", include_str!("../assets/templates/judge/cqs.txt")),
        t("relevance", include_str!("../assets/templates/judge/relevance.txt")),
        t("coherence", include_str!("../assets/templates/judge/coherence.txt")),
        t("pairwise", include_str!("../assets/templates/judge/pairwise.txt")),
    ])
}

fn t(key: &str, body: &str) -> (String, String) {
    (key.to_string(), body.trim_end().to_string())
}

/// The default mock rule table (JSON).
pub fn default_mock_table_json() -> &'static str {
    include_str!("../assets/mock_table.json")
}

/// Raw TSV for the default canonical -> corrupted term lexicon.
pub fn default_term_lexicon_tsv() -> &'static str {
    include_str!("../assets/ml_lexicon.tsv")
}

/// Default term lexicon used by the stage-3 injector when the config map is
/// empty.
pub fn default_term_lexicon() -> BTreeMap<String, String> {
    crate::sabotage::parse_lexicon(default_term_lexicon_tsv())
        .expect("embedded lexicon is valid")
}

/// Canonical proper-noun forms for the rule-based stage-1 corrector.
pub fn default_proper_nouns() -> BTreeSet<String> {
    include_str!("../assets/proper_nouns.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// QWERTY adjacency: lowercase letter -> neighboring lowercase letters.
pub fn qwerty_neighbors() -> BTreeMap<char, Vec<char>> {
    let mut map = BTreeMap::new();
    for line in include_str!("../assets/qwerty_neighbors.tsv").lines() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let (key, neighbors) = line
            .split_once('\t')
            .expect("embedded adjacency table is two-column TSV");
        let key = key.chars().next().expect("nonempty key");
        map.insert(key, neighbors.chars().collect());
    }
    map
}
