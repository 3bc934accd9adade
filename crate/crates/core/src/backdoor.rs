//! Back-door deconfounding of the text pathway: confounder dictionary,
//! prior-weighted expected embedding, de-confounded scores, the exact
//! back-door mixture and the normalized-weighted-geometric-mean (NWGM) gap.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CeresError, Result};
use crate::numeric::{check_dims, softmax, stable_sum, Vector};
use crate::rng;
use crate::scm::Distribution;

/// Splits a query into its `(verb, noun)` confounder key.
pub trait QueryParser {
    fn parse(&self, query: &str) -> Option<(String, String)>;
}

/// Default rule: the first two whitespace-delimited tokens, lowercased, are
/// the verb and the noun. Queries with fewer than two tokens do not parse.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeadRule;

impl QueryParser for HeadRule {
    fn parse(&self, query: &str) -> Option<(String, String)> {
        let mut toks = query.split_whitespace().map(str::to_lowercase);
        let verb = toks.next()?;
        let noun = toks.next()?;
        Some((verb, noun))
    }
}

/// Vocabulary rule table: a query parses when exactly one token is a known
/// verb and exactly one token is a known noun, in any position.
#[derive(Debug, Clone, Default)]
pub struct RuleTable {
    pub verbs: BTreeSet<String>,
    pub nouns: BTreeSet<String>,
}

impl RuleTable {
    pub fn new<I, J, S, T>(verbs: I, nouns: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        RuleTable {
            verbs: verbs.into_iter().map(|s| s.into().to_lowercase()).collect(),
            nouns: nouns.into_iter().map(|s| s.into().to_lowercase()).collect(),
        }
    }
}

impl QueryParser for RuleTable {
    fn parse(&self, query: &str) -> Option<(String, String)> {
        let toks: Vec<String> = query.split_whitespace().map(str::to_lowercase).collect();
        let verbs: Vec<&String> = toks.iter().filter(|t| self.verbs.contains(*t)).collect();
        let nouns: Vec<&String> = toks.iter().filter(|t| self.nouns.contains(*t)).collect();
        match (verbs.as_slice(), nouns.as_slice()) {
            ([v], [n]) => Some(((*v).clone(), (*n).clone())),
            _ => None,
        }
    }
}

/// Maps a confounder key to its embedding.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, verb: &str, noun: &str) -> Vector;
}

/// Unit-normalized standard-normal draw keyed by a hash of `(verb, noun)`
/// and a global seed.
#[derive(Debug, Clone, Copy)]
pub struct SeededEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Embedder for SeededEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, verb: &str, noun: &str) -> Vector {
        let mut h = Sha256::new();
        h.update(verb.as_bytes());
        h.update([0x1f]);
        h.update(noun.as_bytes());
        let digest = h.finalize();
        let key = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut s = rng::stream(self.seed, key);
        let raw: Vec<f64> = (0..self.dim).map(|_| rng::standard_normal(&mut s)).collect();
        Vector::new(raw).expect("finite draws").normalized()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub verb: String,
    pub noun: String,
    pub prior: f64,
    pub embedding: Vector,
}

/// Confounder dictionary `{(z_i, f_Z(z_i), P(z_i))}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DictionaryDoc", into = "DictionaryDoc")]
pub struct ConfounderDictionary {
    entries: Vec<DictionaryEntry>,
    /// Occurrence counts, present when built from a corpus.
    counts: Option<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct DictionaryDoc {
    entries: Vec<DictionaryEntry>,
}

impl TryFrom<DictionaryDoc> for ConfounderDictionary {
    type Error = CeresError;
    fn try_from(doc: DictionaryDoc) -> Result<Self> {
        ConfounderDictionary::new(doc.entries)
    }
}

impl From<ConfounderDictionary> for DictionaryDoc {
    fn from(d: ConfounderDictionary) -> Self {
        DictionaryDoc { entries: d.entries }
    }
}

impl ConfounderDictionary {
    pub fn new(entries: Vec<DictionaryEntry>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| CeresError::InvalidInput("dictionary has no entries".into()))?;
        let dim = first.embedding.dim();
        let mut keys = BTreeSet::new();
        for e in &entries {
            check_dims(dim, e.embedding.dim())?;
            if !keys.insert((e.verb.as_str(), e.noun.as_str())) {
                return Err(CeresError::InvalidInput(format!(
                    "duplicate key ({}, {})",
                    e.verb, e.noun
                )));
            }
            if !(e.prior >= 0.0) || !e.prior.is_finite() {
                return Err(CeresError::InvalidInput(format!("invalid prior {}", e.prior)));
            }
        }
        let total = stable_sum(entries.iter().map(|e| e.prior));
        if (total - 1.0).abs() > 1e-12 {
            return Err(CeresError::InvalidInput(format!("priors sum to {total}")));
        }
        Ok(ConfounderDictionary {
            entries,
            counts: None,
        })
    }

    pub fn entries(&self) -> &[DictionaryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].embedding.dim()
    }

    pub fn priors(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.prior).collect()
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dictionary serializes");
        s.push('\n');
        s
    }
}

/// Build the dictionary from a query corpus. Entries are ordered by key and
/// each prior is `count / |corpus|`.
pub fn build_dictionary<S: AsRef<str>>(
    corpus: &[S],
    embedder: &dyn Embedder,
    parser: &dyn QueryParser,
) -> Result<ConfounderDictionary> {
    if corpus.is_empty() {
        return Err(CeresError::InvalidInput("empty corpus".into()));
    }
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for q in corpus {
        let key = parser
            .parse(q.as_ref())
            .ok_or_else(|| CeresError::ParseError(q.as_ref().to_string()))?;
        *counts.entry(key).or_insert(0) += 1;
    }
    let total = corpus.len() as u64;
    debug_assert_eq!(counts.values().sum::<u64>(), total);
    let entries = counts
        .iter()
        .map(|((verb, noun), &c)| DictionaryEntry {
            embedding: embedder.embed(verb, noun),
            verb: verb.clone(),
            noun: noun.clone(),
            prior: c as f64 / total as f64,
        })
        .collect();
    let mut dict = ConfounderDictionary::new(entries)?;
    dict.counts = Some(counts.into_values().collect());
    Ok(dict)
}

/// Read a corpus file: one query per line, blank lines skipped.
pub fn read_corpus(path: &std::path::Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// `Σ_i P(z_i) f_Z(z_i)`.
pub fn expected_confounder_embedding(dict: &ConfounderDictionary) -> Vector {
    let dim = dict.dim();
    let out: Vec<f64> = (0..dim)
        .map(|k| stable_sum(dict.entries.iter().map(|e| e.prior * e.embedding[k])))
        .collect();
    Vector::new(out).expect("finite")
}

/// `f_T + f̄_Z`.
pub fn debias_text(f_t: &Vector, dict: &ConfounderDictionary) -> Result<Vector> {
    debias_text_scaled(f_t, dict, 1.0)
}

/// `f_T + scale · f̄_Z`; `scale = 1` is the unweighted additive form.
pub fn debias_text_scaled(f_t: &Vector, dict: &ConfounderDictionary, scale: f64) -> Result<Vector> {
    check_dims(dict.dim(), f_t.dim())?;
    f_t.add(&expected_confounder_embedding(dict).scale(scale))
}

fn check_priors(priors: &[f64]) -> Result<()> {
    Distribution::new(priors.to_vec()).map(|_| ())
}

/// `s_T(t) + Σ_z P(z) s_Z(z)` with one scalar `s_Z` per confounder.
pub fn deconfounded_score(s_t: &[f64], s_z: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    check_dims(priors.len(), s_z.len())?;
    let shift = stable_sum(s_z.iter().zip(priors).map(|(s, p)| s * p));
    Ok(s_t.iter().map(|s| s + shift).collect())
}

/// Class-resolved variant: `s_z[z][k]` is the confounder score for class `k`.
pub fn deconfounded_score_per_class(s_t: &[f64], s_z: &[Vec<f64>], priors: &[f64]) -> Result<Vec<f64>> {
    check_dims(priors.len(), s_z.len())?;
    for row in s_z {
        check_dims(s_t.len(), row.len())?;
    }
    Ok((0..s_t.len())
        .map(|k| s_t[k] + stable_sum(s_z.iter().zip(priors).map(|(row, p)| row[k] * p)))
        .collect())
}

/// `P(Y | do(t)) = Σ_z P(Y | t, z) P(z)`; `cond[z]` is the row for confounder `z`.
pub fn backdoor_adjust(cond: &[Vec<f64>], priors: &[f64]) -> Result<Distribution> {
    check_priors(priors)?;
    check_dims(priors.len(), cond.len())?;
    let k = cond[0].len();
    for (z, row) in cond.iter().enumerate() {
        check_dims(k, row.len())?;
        Distribution::new(row.clone())
            .map_err(|e| CeresError::InvalidInput(format!("row for z={z}: {e}")))?;
    }
    let mixed: Vec<f64> = (0..k)
        .map(|y| stable_sum(cond.iter().zip(priors).map(|(row, p)| row[y] * p)))
        .collect();
    Distribution::new(mixed)
}

/// Logit table `s_Y(t, z)`: `scores[t][z]`, where `t` indexes the softmax
/// (class) axis and `z` the confounder.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    scores: Vec<Vec<f64>>,
    additive: Option<(Vec<f64>, Vec<f64>)>,
}

impl ScoreTable {
    pub fn new(scores: Vec<Vec<f64>>) -> Result<Self> {
        let n_z = scores.first().map_or(0, Vec::len);
        if scores.is_empty() || n_z == 0 {
            return Err(CeresError::InvalidInput("score table must be nonempty".into()));
        }
        for row in &scores {
            check_dims(n_z, row.len())?;
            if row.iter().any(|s| !s.is_finite()) {
                return Err(CeresError::InvalidInput("non-finite score".into()));
            }
        }
        Ok(ScoreTable {
            scores,
            additive: None,
        })
    }

    /// `scores[t][z] = s_t[t] + s_z[z]`.
    pub fn additive(s_t: Vec<f64>, s_z: Vec<f64>) -> Result<Self> {
        let scores = s_t
            .iter()
            .map(|a| s_z.iter().map(|b| a + b).collect())
            .collect();
        let mut table = ScoreTable::new(scores)?;
        table.additive = Some((s_t, s_z));
        Ok(table)
    }

    pub fn n_classes(&self) -> usize {
        self.scores.len()
    }

    pub fn n_confounders(&self) -> usize {
        self.scores[0].len()
    }

    pub fn column(&self, z: usize) -> Vec<f64> {
        self.scores.iter().map(|row| row[z]).collect()
    }

    pub fn additive_parts(&self) -> Option<(&[f64], &[f64])> {
        self.additive.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    /// `Σ_z P(z) s(·, z)`.
    pub fn expected_scores(&self, priors: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.n_confounders(), priors.len())?;
        Ok(self
            .scores
            .iter()
            .map(|row| stable_sum(row.iter().zip(priors).map(|(s, p)| s * p)))
            .collect())
    }
}

/// Both sides of the NWGM approximation and their gap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NwgmReport {
    /// `Σ_z P(z) softmax(s(·, z)/τ)`.
    pub exact: Vec<f64>,
    /// `softmax(Σ_z P(z) s(·, z) / τ)`.
    pub approx: Vec<f64>,
    /// L∞ gap over classes.
    pub max_gap: f64,
    /// Mean absolute gap over classes.
    pub mean_gap: f64,
    /// Largest total-variation distance between per-confounder softmax
    /// outputs over confounders with positive prior.
    pub tv_spread: f64,
}

pub fn nwgm_gap(table: &ScoreTable, priors: &[f64], temperature: f64) -> Result<NwgmReport> {
    check_priors(priors)?;
    check_dims(table.n_confounders(), priors.len())?;
    let per_z: Vec<Vec<f64>> = (0..table.n_confounders())
        .map(|z| softmax(&table.column(z), temperature).map(|w| w.into_inner()))
        .collect::<Result<_>>()?;
    let k = table.n_classes();
    let exact: Vec<f64> = (0..k)
        .map(|c| stable_sum(per_z.iter().zip(priors).map(|(p, w)| w * p[c])))
        .collect();
    let approx = softmax(&table.expected_scores(priors)?, temperature)?.into_inner();
    let gaps: Vec<f64> = exact.iter().zip(&approx).map(|(a, b)| (a - b).abs()).collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let mean_gap = gaps.iter().sum::<f64>() / k as f64;

    let live: Vec<&Vec<f64>> = per_z.iter().zip(priors).filter(|(_, &p)| p > 0.0).map(|(r, _)| r).collect();
    let mut tv_spread = 0.0_f64;
    for a in &live {
        for b in &live {
            let tv = 0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>();
            tv_spread = tv_spread.max(tv);
        }
    }
    Ok(NwgmReport {
        exact,
        approx,
        max_gap,
        mean_gap,
        tv_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embedder() -> SeededEmbedder {
        SeededEmbedder { dim: 4, seed: 3 }
    }

    #[test]
    fn single_query_dictionary() {
        let d = build_dictionary(&["cut knife"], &embedder(), &HeadRule).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.entries()[0].prior, 1.0);
    }

    #[test]
    fn priors_from_counts() {
        let d = build_dictionary(&["cut knife", "cut knife", "open jar"], &embedder(), &HeadRule).unwrap();
        let priors = d.priors();
        assert_eq!(d.entries()[0].verb, "cut");
        assert_eq!(priors, vec![2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(d.counts().unwrap(), &[2, 1]);
    }

    #[test]
    fn unparseable_and_empty_corpus() {
        let e = build_dictionary(&["cut knife", "stir"], &embedder(), &HeadRule).unwrap_err();
        assert_eq!(e, CeresError::ParseError("stir".into()));
        let empty: [&str; 0] = [];
        assert!(matches!(
            build_dictionary(&empty, &embedder(), &HeadRule),
            Err(CeresError::InvalidInput(_))
        ));
    }

    #[test]
    fn rule_table_parses_free_order() {
        let rules = RuleTable::new(["cut", "open"], ["carrot", "jar"]);
        assert_eq!(
            rules.parse("knife used to cut carrot"),
            Some(("cut".into(), "carrot".into()))
        );
        assert_eq!(rules.parse("cut the carrot and the jar"), None);
        let d = build_dictionary(&["knife used to cut carrot", "open the jar"], &embedder(), &rules).unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn embeddings_are_stable_per_key() {
        let e = embedder();
        assert_eq!(e.embed("cut", "knife"), e.embed("cut", "knife"));
        assert_ne!(e.embed("cut", "knife"), e.embed("knife", "cut"));
        assert!((e.embed("open", "jar").norm2() - 1.0).abs() < 1e-12);
    }

    fn entry(verb: &str, prior: f64, emb: Vec<f64>) -> DictionaryEntry {
        DictionaryEntry {
            verb: verb.into(),
            noun: "n".into(),
            prior,
            embedding: Vector::new(emb).unwrap(),
        }
    }

    #[test]
    fn expected_embedding_cases() {
        let single = ConfounderDictionary::new(vec![entry("a", 1.0, vec![0.3, -0.2])]).unwrap();
        assert_eq!(expected_confounder_embedding(&single).as_slice(), &[0.3, -0.2]);

        let sym = ConfounderDictionary::new(vec![
            entry("a", 0.5, vec![1.0, 2.0]),
            entry("b", 0.5, vec![-1.0, -2.0]),
        ])
        .unwrap();
        assert_eq!(expected_confounder_embedding(&sym).as_slice(), &[0.0, 0.0]);

        let three = ConfounderDictionary::new(vec![
            entry("a", 0.2, vec![1.0, 0.0]),
            entry("b", 0.3, vec![0.0, 1.0]),
            entry("c", 0.5, vec![2.0, 2.0]),
        ])
        .unwrap();
        let e = expected_confounder_embedding(&three);
        assert!((e[0] - 1.2).abs() < 1e-15 && (e[1] - 1.3).abs() < 1e-15);
    }

    #[test]
    fn debias_cases() {
        let sym = ConfounderDictionary::new(vec![
            entry("a", 0.5, vec![1.0, 2.0]),
            entry("b", 0.5, vec![-1.0, -2.0]),
        ])
        .unwrap();
        let f = Vector::new(vec![0.7, -0.1]).unwrap();
        assert_eq!(debias_text(&f, &sym).unwrap(), f);

        let d = ConfounderDictionary::new(vec![entry("a", 1.0, vec![0.25, 0.5])]).unwrap();
        let zero = Vector::zeros(2);
        assert_eq!(debias_text(&zero, &d).unwrap().as_slice(), &[0.25, 0.5]);
        assert!(matches!(
            debias_text(&Vector::zeros(3), &d),
            Err(CeresError::DimensionMismatch { .. })
        ));
        let half = debias_text_scaled(&zero, &d, 0.5).unwrap();
        assert_eq!(half.as_slice(), &[0.125, 0.25]);
    }

    #[test]
    fn dictionary_rejects_duplicates_and_bad_priors() {
        assert!(ConfounderDictionary::new(vec![entry("a", 0.5, vec![1.0]), entry("a", 0.5, vec![1.0])]).is_err());
        assert!(ConfounderDictionary::new(vec![entry("a", 0.9, vec![1.0])]).is_err());
        assert!(ConfounderDictionary::new(vec![entry("a", 0.5, vec![1.0]), entry("b", 0.5, vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn dictionary_json_round_trip() {
        let d = build_dictionary(&["cut knife", "open jar", "open jar"], &embedder(), &HeadRule).unwrap();
        let back: ConfounderDictionary = serde_json::from_str(&d.to_json_string()).unwrap();
        assert_eq!(back.entries(), d.entries());
        let v: serde_json::Value = serde_json::from_str(&d.to_json_string()).unwrap();
        assert!(v["entries"][0]["embedding"].is_array());
    }

    #[test]
    fn deconfounded_score_cases() {
        let st = [1.0, 2.0];
        assert_eq!(deconfounded_score(&st, &[0.0, 0.0], &[0.3, 0.7]).unwrap(), st.to_vec());
        assert_eq!(deconfounded_score(&st, &[1.5, 1.5], &[0.3, 0.7]).unwrap(), vec![2.5, 3.5]);
        let s = deconfounded_score(&st, &[0.4, -0.4], &[0.75, 0.25]).unwrap();
        assert!((s[0] - 1.2).abs() < 1e-15 && (s[1] - 2.2).abs() < 1e-15);
        assert!(deconfounded_score(&st, &[0.4], &[0.75, 0.25]).is_err());
        let pc = deconfounded_score_per_class(&st, &[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.25, 0.75]).unwrap();
        assert_eq!(pc, vec![1.25, 2.75]);
    }

    #[test]
    fn backdoor_cases() {
        let single = backdoor_adjust(&[vec![0.3, 0.7]], &[1.0]).unwrap();
        assert_eq!(single.probs, vec![0.3, 0.7]);
        let mixed = backdoor_adjust(&[vec![0.8, 0.2], vec![0.2, 0.8]], &[0.5, 0.5]).unwrap();
        assert!((mixed.probs[1] - 0.5).abs() < 1e-15);
        assert!(backdoor_adjust(&[vec![0.8, 0.3]], &[1.0]).is_err());
        assert!(backdoor_adjust(&[vec![1.0], vec![1.0]], &[1.0]).is_err());
    }

    #[test]
    fn nwgm_degenerate_cases() {
        let t = ScoreTable::new(vec![vec![0.3], vec![-1.2], vec![2.0]]).unwrap();
        assert!(nwgm_gap(&t, &[1.0], 1.0).unwrap().max_gap <= 1e-15);

        let t = ScoreTable::new(vec![vec![0.3, 0.3], vec![-1.2, -1.2]]).unwrap();
        assert!(nwgm_gap(&t, &[0.4, 0.6], 0.7).unwrap().max_gap <= 1e-15);
    }

    #[test]
    fn nwgm_symmetric_table() {
        let t = ScoreTable::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let r = nwgm_gap(&t, &[0.5, 0.5], 1.0).unwrap();
        for c in 0..2 {
            assert!((r.exact[c] - 0.5).abs() < 1e-15);
            assert!((r.approx[c] - 0.5).abs() < 1e-15);
        }
        assert!(r.max_gap < 1e-15);
    }

    #[test]
    fn nwgm_contrast_table_two_term_enumeration() {
        // rows are classes, columns confounders: z1 -> (0, 0), z2 -> (3, -3)
        let t = ScoreTable::new(vec![vec![0.0, 3.0], vec![0.0, -3.0]]).unwrap();
        let r = nwgm_gap(&t, &[0.5, 0.5], 1.0).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        // class 0 under each z: z1 gives 1/2, z2 gives σ(6); approximation sees mean logits (1.5, -1.5)
        let exact0 = 0.5 * 0.5 + 0.5 * sig(6.0);
        let approx0 = sig(3.0);
        assert!((r.exact[0] - exact0).abs() < 1e-15);
        assert!((r.approx[0] - approx0).abs() < 1e-15);
        assert!((r.max_gap - (approx0 - exact0).abs()).abs() < 1e-15);
        assert!(r.max_gap > 0.2);
    }

    #[test]
    fn additive_table_identity() {
        let t = ScoreTable::additive(vec![0.5, -0.25, 1.0], vec![2.0, -1.0]).unwrap();
        let priors = [0.3, 0.7];
        let lhs = softmax(&t.expected_scores(&priors).unwrap(), 1.0).unwrap();
        let (st, sz) = t.additive_parts().unwrap();
        let rhs = softmax(&deconfounded_score(st, sz, &priors).unwrap(), 1.0).unwrap();
        assert!(lhs.linf_distance(&rhs) <= 1e-14);
    }
}
