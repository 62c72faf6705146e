//! Independent oracle implementations shared by the integration tests.
//! These deliberately avoid the library's code paths: different data layouts,
//! different traversals, same definitions.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(|w| w.to_string()).collect()
}

/// n-grams as joined strings, counted into a plain map.
fn grams(tokens: &[String], n: usize) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.join("\u{1f}")).or_insert(0.0) += 1.0;
        }
    }
    out
}

pub struct OracleEntry {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// Brute-force corpus BLEU-4 by direct n-gram counting.
pub fn bleu4_oracle(entries: &BTreeMap<String, OracleEntry>) -> f64 {
    let mut matched = [0.0f64; 4];
    let mut total = [0.0f64; 4];
    let mut cand_len = 0.0;
    let mut ref_len = 0.0;
    for e in entries.values() {
        cand_len += e.candidate.len() as f64;
        // closest reference length, ties to the shorter
        let mut best = (usize::MAX, usize::MAX);
        for r in &e.references {
            let key = (r.len().abs_diff(e.candidate.len()), r.len());
            if key < best {
                best = key;
            }
        }
        ref_len += best.1 as f64;
        for n in 1..=4usize {
            let cand = grams(&e.candidate, n);
            for (g, c) in &cand {
                let max_ref = e
                    .references
                    .iter()
                    .map(|r| grams(r, n).get(g).copied().unwrap_or(0.0))
                    .fold(0.0f64, f64::max);
                matched[n - 1] += c.min(max_ref);
            }
            if e.candidate.len() + 1 > n {
                total[n - 1] += (e.candidate.len() + 1 - n) as f64;
            }
        }
    }
    if cand_len == 0.0 {
        return 0.0;
    }
    let mut geo = 0.0;
    for n in 0..4 {
        if matched[n] == 0.0 || total[n] == 0.0 {
            return 0.0;
        }
        geo += (matched[n] / total[n]).ln() / 4.0;
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len / cand_len).exp()
    };
    bp * geo.exp()
}

/// Full-table LCS, distinct from the two-row version in the library.
fn lcs_table(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

pub fn rouge_l_oracle(entries: &BTreeMap<String, OracleEntry>) -> f64 {
    let beta_sq = 1.2 * 1.2;
    let mut acc = 0.0;
    for e in entries.values() {
        let mut best = 0.0f64;
        for r in &e.references {
            if e.candidate.is_empty() || r.is_empty() {
                continue;
            }
            let l = lcs_table(&e.candidate, r) as f64;
            let rec = l / r.len() as f64;
            let prec = l / e.candidate.len() as f64;
            if rec + beta_sq * prec > 0.0 {
                best = best.max((1.0 + beta_sq) * rec * prec / (rec + beta_sq * prec));
            }
        }
        acc += best;
    }
    acc / entries.len() as f64
}

/// Straight-line CIDEr-D: explicit TF-IDF vectors, clipped-count numerator,
/// Gaussian length penalty, averaged per n then over n, scaled by 10.
pub fn cider_oracle(entries: &BTreeMap<String, OracleEntry>) -> (f64, BTreeMap<String, f64>) {
    let videos = entries.len() as f64;
    let sigma = 6.0;
    // document frequency over each video's reference set
    let mut df: Vec<HashMap<String, f64>> = vec![HashMap::new(); 4];
    for e in entries.values() {
        for n in 1..=4usize {
            let mut seen: HashMap<String, ()> = HashMap::new();
            for r in &e.references {
                for g in grams(r, n).into_keys() {
                    seen.insert(g, ());
                }
            }
            for g in seen.into_keys() {
                *df[n - 1].entry(g).or_insert(0.0) += 1.0;
            }
        }
    }
    let mut per_video = BTreeMap::new();
    let mut total = 0.0;
    for (id, e) in entries {
        let mut over_n = 0.0;
        for n in 1..=4usize {
            let idf = |g: &String| -> f64 {
                (videos / (1.0 + df[n - 1].get(g).copied().unwrap_or(0.0))).ln()
            };
            let cand = grams(&e.candidate, n);
            let cand_norm: f64 = cand
                .iter()
                .map(|(g, c)| (c * idf(g)).powi(2))
                .sum::<f64>()
                .sqrt();
            let mut over_refs = 0.0;
            for r in &e.references {
                let rc = grams(r, n);
                let ref_norm: f64 = rc
                    .iter()
                    .map(|(g, c)| (c * idf(g)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let mut dot = 0.0;
                for (g, c) in &cand {
                    let rcount = rc.get(g).copied().unwrap_or(0.0);
                    dot += c.min(rcount) * rcount * idf(g) * idf(g);
                }
                let mut sim = if cand_norm > 0.0 && ref_norm > 0.0 {
                    dot / (cand_norm * ref_norm)
                } else {
                    0.0
                };
                let delta = e.candidate.len() as f64 - r.len() as f64;
                sim *= (-delta * delta / (2.0 * sigma * sigma)).exp();
                over_refs += sim;
            }
            over_n += over_refs / e.references.len() as f64 / 4.0;
        }
        let score = 10.0 * over_n;
        per_video.insert(id.clone(), score);
        total += score;
    }
    (total / videos, per_video)
}

/// Fixture schema for tests/fixtures/metric_corpus.json.
#[derive(serde::Deserialize)]
pub struct MetricFixture {
    pub entries: Vec<FixtureEntry>,
    pub expected: FixtureExpected,
}

#[derive(serde::Deserialize)]
pub struct FixtureEntry {
    pub video_id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

#[derive(serde::Deserialize)]
pub struct FixtureExpected {
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub cider: f64,
    pub per_video_cider: BTreeMap<String, f64>,
}

pub fn load_fixture() -> MetricFixture {
    let raw = include_str!("../fixtures/metric_corpus.json");
    serde_json::from_str(raw).expect("fixture parses")
}

pub fn fixture_oracle_entries(fixture: &MetricFixture) -> BTreeMap<String, OracleEntry> {
    fixture
        .entries
        .iter()
        .map(|e| {
            (
                e.video_id.clone(),
                OracleEntry {
                    candidate: toks(&e.candidate),
                    references: e.references.iter().map(|r| toks(r)).collect(),
                },
            )
        })
        .collect()
}
