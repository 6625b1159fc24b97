//! Place matching and evaluation: cosine retrieval, precision-recall
//! curves, extended precision, AUC, true-positive rate, and dataset
//! combination.
//!
//! Matching is single-best-match loop closure: each query is assigned
//! the reference with the highest cosine similarity (ties go to the
//! lowest reference index for determinism). The PR curve sweeps the
//! distinct best-match scores in descending order; at threshold `t` a
//! query counts as retrieved when its best score is `>= t`, precision is
//! correct-retrieved over retrieved, recall is correct-retrieved over
//! all queries.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Unit-norm descriptor tagged with its source image id.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor<R> {
    pub id: String,
    pub values: Vec<R>,
}

impl<R: Real> Descriptor<R> {
    /// Validates the unit-norm invariant (`1 ± 1e-6`).
    pub fn new(id: impl Into<String>, values: Vec<R>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("descriptor cannot be empty".into()));
        }
        let norm = values
            .iter()
            .map(|v| {
                let f = v.to_f64().expect("finite");
                f * f
            })
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "descriptor norm {norm} is not 1 within 1e-6"
            )));
        }
        Ok(Self { id: id.into(), values })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Cosine similarity; for unit-norm descriptors the quotient reduces to
/// the dot product. Accumulates in `f64`.
pub fn cosine<R: Real>(a: &Descriptor<R>, b: &Descriptor<R>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!(
            "descriptor dims differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x.to_f64().expect("finite") * y.to_f64().expect("finite"))
        .sum())
}

/// Per-query set of correct reference indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GroundTruth {
    correct: Vec<BTreeSet<usize>>,
}

impl GroundTruth {
    /// Frame-aligned tolerance: query `i` accepts references in
    /// `[i - tol, i + tol]` (clipped to the reference range).
    pub fn from_frame_tolerance(n_queries: usize, n_references: usize, tolerance: usize) -> Self {
        let correct = (0..n_queries)
            .map(|i| {
                (i.saturating_sub(tolerance)..=(i + tolerance).min(n_references.saturating_sub(1)))
                    .filter(|&r| r < n_references)
                    .collect()
            })
            .collect();
        Self { correct }
    }

    /// Explicit `(query, reference)` pair list.
    pub fn from_pairs(
        n_queries: usize,
        n_references: usize,
        pairs: &[(usize, usize)],
    ) -> Result<Self> {
        let mut correct = vec![BTreeSet::new(); n_queries];
        for &(q, r) in pairs {
            if q >= n_queries || r >= n_references {
                return Err(Error::InvalidParameter(format!(
                    "ground-truth pair ({q},{r}) out of range ({n_queries} queries, {n_references} references)"
                )));
            }
            correct[q].insert(r);
        }
        Ok(Self { correct })
    }

    pub fn from_sets(correct: Vec<BTreeSet<usize>>) -> Self {
        Self { correct }
    }

    #[inline]
    pub fn n_queries(&self) -> usize {
        self.correct.len()
    }

    #[inline]
    pub fn is_correct(&self, query: usize, reference: usize) -> bool {
        self.correct.get(query).is_some_and(|s| s.contains(&reference))
    }

    pub fn correct_refs(&self, query: usize) -> &BTreeSet<usize> {
        &self.correct[query]
    }
}

/// Best reference for one query.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestMatch {
    pub query: usize,
    pub reference: usize,
    pub score: f64,
}

/// Best match judged against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    pub query: usize,
    pub reference: usize,
    pub score: f64,
    pub correct: bool,
}

/// Argmax-cosine retrieval of every query against the reference set.
pub fn match_all<R: Real>(
    queries: &[Descriptor<R>],
    references: &[Descriptor<R>],
) -> Result<Vec<BestMatch>> {
    if references.is_empty() {
        return Err(Error::EmptyReferences);
    }
    queries
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (ri, r) in references.iter().enumerate() {
                let s = cosine(q, r)?;
                if s > best_score {
                    best_score = s;
                    best = ri;
                }
            }
            Ok(BestMatch { query: qi, reference: best, score: best_score })
        })
        .collect()
}

/// Attach correctness flags from ground truth.
pub fn score_matches(matches: &[BestMatch], gt: &GroundTruth) -> Vec<MatchResult> {
    matches
        .iter()
        .map(|m| MatchResult {
            query: m.query,
            reference: m.reference,
            score: m.score,
            correct: gt.is_correct(m.query, m.reference),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision-recall triples in descending threshold order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PRCurve {
    pub points: Vec<PRPoint>,
}

/// Sweep the distinct best-match scores in descending order.
pub fn pr_curve(results: &[MatchResult]) -> PRCurve {
    if results.is_empty() {
        return PRCurve::default();
    }
    let n = results.len() as f64;
    let mut sorted: Vec<&MatchResult> = results.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = Vec::new();
    let mut retrieved = 0usize;
    let mut correct = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        // consume every result sharing this score
        while i < sorted.len() && sorted[i].score == t {
            retrieved += 1;
            correct += usize::from(sorted[i].correct);
            i += 1;
        }
        points.push(PRPoint {
            threshold: t,
            precision: correct as f64 / retrieved as f64,
            recall: correct as f64 / n,
        });
    }
    PRCurve { points }
}

/// `(P_R0, R_P100)`: precision at the minimum-recall (highest threshold)
/// point, and the best recall among 100%-precision points (0 when the
/// curve never reaches full precision).
pub fn ep_components(curve: &PRCurve) -> (f64, f64) {
    let p_r0 = curve.points.first().map_or(0.0, |p| p.precision);
    let r_p100 = curve
        .points
        .iter()
        .filter(|p| p.precision == 1.0)
        .map(|p| p.recall)
        .fold(0.0, f64::max);
    (p_r0, r_p100)
}

/// Extended precision: `(P_R0 + R_P100) / 2`.
pub fn extended_precision(curve: &PRCurve) -> f64 {
    let (p_r0, r_p100) = ep_components(curve);
    (p_r0 + r_p100) / 2.0
}

/// Trapezoidal area under the PR curve over recall, extended on the left
/// to recall zero at the first point's precision.
pub fn auc(curve: &PRCurve) -> f64 {
    let Some(first) = curve.points.first() else {
        return 0.0;
    };
    let mut area = 0.0;
    let mut prev_r = 0.0;
    let mut prev_p = first.precision;
    for p in &curve.points {
        area += (p.recall - prev_r) * (p.precision + prev_p) / 2.0;
        prev_r = p.recall;
        prev_p = p.precision;
    }
    area
}

/// Percentage of queries whose best match is correct.
pub fn tp_percent(results: &[MatchResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    100.0 * results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64
}

/// The metric bundle reported per dataset.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub ep: f64,
    pub auc: f64,
    pub tp_percent: f64,
    pub p_r0: f64,
    pub r_p100: f64,
    pub curve: PRCurve,
}

pub fn metrics_report(results: &[MatchResult]) -> MetricsReport {
    let curve = pr_curve(results);
    let (p_r0, r_p100) = ep_components(&curve);
    MetricsReport {
        ep: (p_r0 + r_p100) / 2.0,
        auc: auc(&curve),
        tp_percent: tp_percent(results),
        p_r0,
        r_p100,
        curve,
    }
}

/// A dataset at the descriptor level: references, queries, ground truth.
#[derive(Clone, Debug)]
pub struct VprDataset<R> {
    pub name: String,
    pub references: Vec<Descriptor<R>>,
    pub queries: Vec<Descriptor<R>>,
    pub ground_truth: GroundTruth,
}

impl<R: Real> VprDataset<R> {
    /// Match and score the whole dataset.
    pub fn evaluate(&self) -> Result<(Vec<MatchResult>, MetricsReport)> {
        let matches = match_all(&self.queries, &self.references)?;
        let results = score_matches(&matches, &self.ground_truth);
        let report = metrics_report(&results);
        Ok((results, report))
    }
}

/// Union the reference sets and draw a seeded sample of queries from
/// every dataset; ids are namespaced `dataset/id` and ground truth is
/// remapped onto the unioned reference indices.
pub fn combine<R: Real>(
    datasets: &[VprDataset<R>],
    samples_per_dataset: usize,
    seed: u64,
) -> Result<VprDataset<R>> {
    if datasets.len() < 2 {
        return Err(Error::InvalidParameter("combining needs at least two datasets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut references = Vec::new();
    let mut queries = Vec::new();
    let mut correct = Vec::new();

    let mut ref_offset = 0usize;
    for ds in datasets {
        for r in &ds.references {
            references.push(Descriptor {
                id: format!("{}/{}", ds.name, r.id),
                values: r.values.clone(),
            });
        }
        if samples_per_dataset > ds.queries.len() {
            return Err(Error::InvalidParameter(format!(
                "requested {samples_per_dataset} queries from '{}' which has only {}",
                ds.name,
                ds.queries.len()
            )));
        }
        let mut picked =
            rand::seq::index::sample(&mut rng, ds.queries.len(), samples_per_dataset).into_vec();
        picked.sort_unstable();
        for qi in picked {
            let q = &ds.queries[qi];
            queries.push(Descriptor {
                id: format!("{}/{}", ds.name, q.id),
                values: q.values.clone(),
            });
            correct.push(
                ds.ground_truth.correct_refs(qi).iter().map(|&r| r + ref_offset).collect(),
            );
        }
        ref_offset += ds.references.len();
    }

    Ok(VprDataset {
        name: "combined".into(),
        references,
        queries,
        ground_truth: GroundTruth::from_sets(correct),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit<R: Real>(values: Vec<f64>) -> Vec<R> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter().map(|v| crate::scalar::real(v / norm)).collect()
    }

    fn desc(id: &str, values: Vec<f64>) -> Descriptor<f64> {
        Descriptor::new(id, unit(values)).unwrap()
    }

    fn random_desc(rng: &mut impl Rng, dim: usize, id: usize) -> Descriptor<f64> {
        desc(&format!("d{id}"), (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
    }

    #[test]
    fn descriptor_norm_validated() {
        assert!(Descriptor::new("x", vec![0.6f64, 0.8]).is_ok());
        assert!(Descriptor::new("x", vec![1.0f64, 1.0]).is_err());
        assert!(Descriptor::<f64>::new("x", vec![]).is_err());
    }

    #[test]
    fn cosine_basics() {
        let a = desc("a", vec![1.0, 0.0]);
        let b = desc("b", vec![0.0, 1.0]);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        let c = desc("c", vec![1.0, 0.0, 0.0]);
        assert!(cosine(&a, &c).is_err());
    }

    #[test]
    fn cosine_matches_quotient_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random_desc(&mut rng, 64, 0);
            let b = random_desc(&mut rng, 64, 1);
            let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
            let na: f64 = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = b.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let want = dot / (na * nb);
            let got = cosine(&a, &b).unwrap();
            assert!((got - want).abs() < 1e-6);
            assert!(got.abs() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn match_all_finds_identical_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let refs: Vec<_> = (0..10).map(|i| random_desc(&mut rng, 32, i)).collect();
        let queries = vec![refs[4].clone()];
        let best = match_all(&queries, &refs).unwrap();
        assert_eq!(best[0].reference, 4);
        assert!((best[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn match_all_single_reference_and_empty_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let refs = vec![random_desc(&mut rng, 16, 0)];
        let queries: Vec<_> = (0..5).map(|i| random_desc(&mut rng, 16, i + 1)).collect();
        let best = match_all(&queries, &refs).unwrap();
        assert!(best.iter().all(|m| m.reference == 0));
        assert!(matches!(match_all(&queries, &[]), Err(Error::EmptyReferences)));
    }

    #[test]
    fn match_all_agrees_with_exhaustive_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let refs: Vec<_> = (0..20).map(|i| random_desc(&mut rng, 24, i)).collect();
        let queries: Vec<_> = (0..10).map(|i| random_desc(&mut rng, 24, 100 + i)).collect();
        let best = match_all(&queries, &refs).unwrap();
        for (qi, q) in queries.iter().enumerate() {
            let (want_ref, want_score) = refs
                .iter()
                .enumerate()
                .map(|(ri, r)| (ri, cosine(q, r).unwrap()))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .unwrap();
            assert_eq!(best[qi].reference, want_ref);
            assert_eq!(best[qi].score, want_score);
        }
    }

    #[test]
    fn ties_break_to_lowest_reference_index() {
        let a = desc("a", vec![1.0, 0.0]);
        let refs = vec![a.clone(), a.clone(), a.clone()];
        let best = match_all(&[a], &refs).unwrap();
        assert_eq!(best[0].reference, 0);
    }

    fn results_from(scores: &[(f64, bool)]) -> Vec<MatchResult> {
        scores
            .iter()
            .enumerate()
            .map(|(q, &(score, correct))| MatchResult { query: q, reference: q, score, correct })
            .collect()
    }

    #[test]
    fn hand_swept_curve() {
        // (0.9,T) (0.8,F) (0.7,T) (0.6,T)
        let results =
            results_from(&[(0.9, true), (0.8, false), (0.7, true), (0.6, true)]);
        let curve = pr_curve(&results);
        let expect = [
            (0.9, 1.0, 0.25),
            (0.8, 0.5, 0.25),
            (0.7, 2.0 / 3.0, 0.5),
            (0.6, 0.75, 0.75),
        ];
        assert_eq!(curve.points.len(), expect.len());
        for (p, (t, pr, rc)) in curve.points.iter().zip(expect) {
            assert_eq!(p.threshold, t);
            assert!((p.precision - pr).abs() < 1e-12);
            assert!((p.recall - rc).abs() < 1e-12);
        }
        let (p_r0, r_p100) = ep_components(&curve);
        assert_eq!(p_r0, 1.0);
        assert_eq!(r_p100, 0.25);
        assert_eq!(extended_precision(&curve), 0.625);
        assert_eq!(tp_percent(&results), 75.0);
    }

    #[test]
    fn perfect_and_hopeless_matchers() {
        let perfect = results_from(&[(0.9, true), (0.8, true), (0.7, true)]);
        let c = pr_curve(&perfect);
        assert_eq!(extended_precision(&c), 1.0);
        assert_eq!(auc(&c), 1.0);
        assert_eq!(tp_percent(&perfect), 100.0);

        let wrong = results_from(&[(0.9, false), (0.8, false)]);
        let cw = pr_curve(&wrong);
        assert_eq!(extended_precision(&cw), 0.0);
        assert_eq!(auc(&cw), 0.0);
        assert_eq!(tp_percent(&wrong), 0.0);
    }

    #[test]
    fn ep_without_full_precision_point_uses_zero_recall_term() {
        // P_R0 = 0.8 (highest threshold bucket holds 4 correct of 5 tied),
        // never reaches precision 1 -> EP = 0.4
        let tied: Vec<MatchResult> = (0..5)
            .map(|q| MatchResult { query: q, reference: q, score: 0.5, correct: q != 0 })
            .collect();
        let curve = pr_curve(&tied);
        let (p_r0, r_p100) = ep_components(&curve);
        assert_eq!(p_r0, 0.8);
        assert_eq!(r_p100, 0.0);
        assert_eq!(extended_precision(&curve), 0.4);
    }

    #[test]
    fn lowest_threshold_precision_equals_tp_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let results: Vec<MatchResult> = (0..30)
                .map(|q| MatchResult {
                    query: q,
                    reference: q,
                    score: rng.random::<f64>(),
                    correct: rng.random::<f64>() < 0.6,
                })
                .collect();
            let curve = pr_curve(&results);
            let last = curve.points.last().unwrap();
            assert!((last.precision - tp_percent(&results) / 100.0).abs() < 1e-12);
            let report = metrics_report(&results);
            assert!(report.ep >= 0.0 && report.ep <= 1.0);
            assert!(report.auc >= 0.0 && report.auc <= 1.0);
            // recall is non-decreasing along the sweep
            for w in curve.points.windows(2) {
                assert!(w[1].recall >= w[0].recall);
            }
        }
    }

    fn toy_dataset(name: &str, n: usize, dim: usize, seed: u64) -> VprDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let references: Vec<_> = (0..n).map(|i| random_desc(&mut rng, dim, i)).collect();
        // queries are noisy copies of their reference
        let queries: Vec<_> = references
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let noisy: Vec<f64> = r
                    .values
                    .iter()
                    .map(|v| v + 0.01 * (rng.random::<f64>() - 0.5))
                    .collect();
                desc(&format!("q{i}"), noisy)
            })
            .collect();
        VprDataset {
            name: name.into(),
            references,
            queries,
            ground_truth: GroundTruth::from_frame_tolerance(n, n, 0),
        }
    }

    #[test]
    fn combine_unions_references_and_remaps_ground_truth() {
        let a = toy_dataset("a", 30, 16, 10);
        let b = toy_dataset("b", 40, 16, 11);
        let combined = combine(&[a.clone(), b.clone()], 20, 99).unwrap();
        assert_eq!(combined.references.len(), 70);
        assert_eq!(combined.queries.len(), 40);
        assert!(combined.queries[0].id.starts_with("a/"));

        // determinism
        let again = combine(&[a.clone(), b.clone()], 20, 99).unwrap();
        let ids: Vec<_> = combined.queries.iter().map(|q| &q.id).collect();
        let ids2: Vec<_> = again.queries.iter().map(|q| &q.id).collect();
        assert_eq!(ids, ids2);

        // per-dataset oracle: correctness flags survive the remap
        let (combined_results, _) = combined.evaluate().unwrap();
        let (a_results, _) = a.evaluate().unwrap();
        let (b_results, _) = b.evaluate().unwrap();
        for r in &combined_results {
            let id = &combined.queries[r.query].id;
            let (ds_name, orig_id) = id.split_once('/').unwrap();
            let (per_ds, ds) =
                if ds_name == "a" { (&a_results, &a) } else { (&b_results, &b) };
            let orig_q = ds.queries.iter().position(|q| q.id == *orig_id).unwrap();
            assert_eq!(r.correct, per_ds[orig_q].correct, "query {id}");
        }

        // sample size too large
        assert!(combine(&[a.clone(), b], 41, 0).is_err());
        // fewer than two datasets
        assert!(combine(&[a], 1, 0).is_err());
    }

    #[test]
    fn frame_tolerance_semantics() {
        let gt = GroundTruth::from_frame_tolerance(10, 10, 2);
        assert!(gt.is_correct(5, 6));
        assert!(gt.is_correct(5, 3));
        assert!(!gt.is_correct(5, 8));
        // clipped at the edges
        assert!(gt.is_correct(0, 2));
        assert!(!gt.is_correct(0, 3));

        let pairs = GroundTruth::from_pairs(3, 5, &[(0, 4), (2, 1)]).unwrap();
        assert!(pairs.is_correct(0, 4));
        assert!(!pairs.is_correct(1, 1));
        assert!(GroundTruth::from_pairs(3, 5, &[(0, 5)]).is_err());
        assert!(GroundTruth::from_pairs(3, 5, &[(3, 0)]).is_err());
    }
}
