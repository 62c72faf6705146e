//! Corpus-level caption metrics: BLEU-4, ROUGE-L, and CIDEr-D against
//! multi-reference ground truth.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

/// CIDEr-D Gaussian length penalty width.
pub const CIDER_SIGMA: f64 = 6.0;
/// ROUGE-L F-measure recall weight.
pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// Candidate and references per video id, tokenized like the training data.
#[derive(Debug, Clone, Default)]
pub struct EvaluationCorpus {
    entries: BTreeMap<String, CorpusEntry>,
}

impl EvaluationCorpus {
    pub fn insert(
        &mut self,
        video_id: impl Into<String>,
        candidate: Vec<String>,
        references: Vec<Vec<String>>,
    ) -> Result<()> {
        let video_id = video_id.into();
        if references.is_empty() {
            return Err(Error::Data(format!("video {video_id} has no references")));
        }
        self.entries.insert(
            video_id,
            CorpusEntry {
                candidate,
                references,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &CorpusEntry)> {
        self.entries.iter()
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Data("empty evaluation corpus".into()));
        }
        Ok(())
    }
}

// BTreeMap keeps every float accumulation in a fixed order, so scores are
// reproducible bit for bit across runs
fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut out: BTreeMap<&[String], usize> = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU with N=4, uniform weights, per-reference count clipping, and
/// the closest-reference-length brevity penalty (ties to the shorter).
pub fn bleu4(corpus: &EvaluationCorpus) -> Result<f64> {
    corpus.require_nonempty()?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (_, entry) in corpus.iter() {
        let c = &entry.candidate;
        cand_len += c.len();
        ref_len += entry
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(c.len()), l))
            .unwrap();
        for n in 1..=4 {
            let cand = ngram_counts(c, n);
            let mut best: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in &entry.references {
                for (g, count) in ngram_counts(r, n) {
                    let e = best.entry(g).or_insert(0);
                    *e = (*e).max(count);
                }
            }
            for (g, count) in &cand {
                matched[n - 1] += (*count).min(best.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_precision = 0.0;
    for n in 0..4 {
        if matched[n] == 0 || total[n] == 0 {
            return Ok(0.0);
        }
        log_precision += 0.25 * ((matched[n] as f64) / (total[n] as f64)).ln();
    }
    let brevity = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(brevity * log_precision.exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean over videos of the best LCS F-measure (beta = 1.2) over references.
pub fn rouge_l(corpus: &EvaluationCorpus) -> Result<f64> {
    corpus.require_nonempty()?;
    let beta_sq = ROUGE_BETA * ROUGE_BETA;
    let mut acc = 0.0;
    for (_, entry) in corpus.iter() {
        let c = &entry.candidate;
        let mut best: f64 = 0.0;
        for r in &entry.references {
            if c.is_empty() || r.is_empty() {
                continue;
            }
            let lcs = lcs_len(c, r) as f64;
            let recall = lcs / r.len() as f64;
            let precision = lcs / c.len() as f64;
            if recall + beta_sq * precision > 0.0 {
                let f = (1.0 + beta_sq) * recall * precision / (recall + beta_sq * precision);
                best = best.max(f);
            }
        }
        acc += best;
    }
    Ok(acc / corpus.len() as f64)
}

/// CIDEr-D corpus score with the per-video breakdown.
///
/// For n = 1..4: TF-IDF vectors use raw n-gram counts times
/// idf(g) = ln(#videos / (1 + document frequency over reference sets));
/// the numerator clips candidate counts per reference; each per-reference
/// cosine carries a Gaussian length penalty (sigma 6); per-n scores average
/// over references, the mean over n is scaled by 10.
pub fn cider_scores(corpus: &EvaluationCorpus) -> Result<(f64, BTreeMap<String, f64>)> {
    corpus.require_nonempty()?;
    if corpus.len() < 2 {
        return Err(Error::Data(
            "IDF undefined: CIDEr needs at least 2 videos".into(),
        ));
    }
    let videos = corpus.len() as f64;
    // document frequency over reference sets: one count per video containing
    // the n-gram anywhere in its references
    let mut doc_freq: Vec<HashMap<Vec<String>, f64>> = vec![HashMap::new(); 4];
    for (_, entry) in corpus.iter() {
        for n in 1..=4usize {
            let mut seen: BTreeMap<&[String], ()> = BTreeMap::new();
            for r in &entry.references {
                for g in ngram_counts(r, n).keys() {
                    seen.entry(g).or_insert(());
                }
            }
            for g in seen.keys() {
                *doc_freq[n - 1].entry(g.to_vec()).or_insert(0.0) += 1.0;
            }
        }
    }
    let idf = |n: usize, g: &[String]| -> f64 {
        let df = doc_freq[n - 1].get(g).copied().unwrap_or(0.0);
        (videos / (1.0 + df)).ln()
    };

    let mut per_video = BTreeMap::new();
    let mut acc = 0.0;
    for (id, entry) in corpus.iter() {
        let c = &entry.candidate;
        let mut mean_over_n = 0.0;
        for n in 1..=4usize {
            let cand = ngram_counts(c, n);
            let cand_norm: f64 = cand
                .iter()
                .map(|(g, &count)| {
                    let v = count as f64 * idf(n, g);
                    v * v
                })
                .sum::<f64>()
                .sqrt();
            let mut over_refs = 0.0;
            for r in &entry.references {
                let refc = ngram_counts(r, n);
                let ref_norm: f64 = refc
                    .iter()
                    .map(|(g, &count)| {
                        let v = count as f64 * idf(n, g);
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt();
                let mut numer = 0.0;
                for (g, &count) in &cand {
                    let clipped = count.min(refc.get(g).copied().unwrap_or(0)) as f64;
                    let w = idf(n, g);
                    numer += clipped * (refc.get(g).copied().unwrap_or(0) as f64) * w * w;
                }
                let mut sim = if cand_norm > 0.0 && ref_norm > 0.0 {
                    numer / (cand_norm * ref_norm)
                } else {
                    0.0
                };
                let delta = c.len() as f64 - r.len() as f64;
                sim *= (-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
                over_refs += sim;
            }
            mean_over_n += over_refs / entry.references.len() as f64 / 4.0;
        }
        let score = 10.0 * mean_over_n;
        per_video.insert(id.clone(), score);
        acc += score;
    }
    Ok((acc / videos, per_video))
}

pub fn cider(corpus: &EvaluationCorpus) -> Result<f64> {
    Ok(cider_scores(corpus)?.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub cider: f64,
    pub per_video_cider: BTreeMap<String, f64>,
}

pub fn score_corpus(corpus: &EvaluationCorpus) -> Result<MetricReport> {
    let (cider, per_video_cider) = cider_scores(corpus)?;
    Ok(MetricReport {
        bleu4: bleu4(corpus)?,
        rouge_l: rouge_l(corpus)?,
        cider,
        per_video_cider,
    })
}

/// Score a candidates file (JSON-lines {"video_id", "caption"}) against a
/// references file (JSON-lines {"video_id", "captions": [...]}) after
/// tokenizing both with the training tokenizer.
pub fn evaluate(candidates_path: &Path, references_path: &Path) -> Result<MetricReport> {
    let candidates = crate::dataset::read_candidate_file(candidates_path)?;
    let references = crate::dataset::read_caption_file(references_path)?;
    let mut ref_map: BTreeMap<&str, &Vec<String>> = BTreeMap::new();
    for r in &references {
        ref_map.insert(&r.video_id, &r.captions);
    }
    let mut missing_refs = Vec::new();
    let mut corpus = EvaluationCorpus::default();
    for c in &candidates {
        let Some(refs) = ref_map.remove(c.video_id.as_str()) else {
            missing_refs.push(c.video_id.clone());
            continue;
        };
        let cand_tokens = crate::text::tokenize(&c.caption)?;
        let ref_tokens = refs
            .iter()
            .map(|r| crate::text::tokenize(r))
            .collect::<Result<Vec<_>>>()?;
        corpus.insert(&c.video_id, cand_tokens, ref_tokens)?;
    }
    let missing_cands: Vec<String> = ref_map.keys().map(|s| s.to_string()).collect();
    if !missing_refs.is_empty() || !missing_cands.is_empty() {
        let mut msg = String::from("candidate/reference ids do not align");
        if !missing_refs.is_empty() {
            msg.push_str(&format!("; no references for: {}", missing_refs.join(", ")));
        }
        if !missing_cands.is_empty() {
            msg.push_str(&format!(
                "; no candidates for: {}",
                missing_cands.join(", ")
            ));
        }
        return Err(Error::Data(msg));
    }
    score_corpus(&corpus)
}
