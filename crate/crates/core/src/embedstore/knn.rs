use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::matrix::{dot, l2_norm};
use super::EmbeddingMatrix;
use crate::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Descending score, then ascending id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// Exact top-k cosine search. Zero rows and a zero query score 0.
pub fn knn(query: &[f32], m: &EmbeddingMatrix, k: usize, exclude: &HashSet<String>) -> Vec<Hit> {
    knn_filtered_with(query, m, k, |i| !exclude.contains(&m.ids()[i]), Execution::default())
}

pub fn knn_with(
    query: &[f32],
    m: &EmbeddingMatrix,
    k: usize,
    exclude: &HashSet<String>,
    exec: Execution,
) -> Vec<Hit> {
    knn_filtered_with(query, m, k, |i| !exclude.contains(&m.ids()[i]), exec)
}

/// Top-k restricted to rows for which `keep(row_index)` holds. The filter
/// runs before ranking, so `k` is honoured after filtering.
pub fn knn_filtered_with<F>(
    query: &[f32],
    m: &EmbeddingMatrix,
    k: usize,
    keep: F,
    exec: Execution,
) -> Vec<Hit>
where
    F: Fn(usize) -> bool + Sync + Send,
{
    assert_eq!(query.len(), m.dim(), "query dimension mismatch");
    if k == 0 || m.is_empty() {
        return Vec::new();
    }
    let qn = l2_norm(query);
    let normalized = m.is_normalized();
    let scores: Vec<Option<f64>> = exec.map_range(m.len(), |i| {
        if !keep(i) {
            return None;
        }
        let row = m.row(i);
        let rn = if normalized { 1.0 } else { l2_norm(row) };
        if qn == 0.0 || rn == 0.0 {
            return Some(0.0);
        }
        Some((dot(query, row) / (qn * rn)).clamp(-1.0, 1.0))
    });
    let ids = m.ids();
    let mut hits: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| rank_order(a.1, &ids[a.0], b.1, &ids[b.0]);
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, cmp);
        hits.truncate(k);
    }
    hits.sort_by(cmp);
    hits.into_iter()
        .map(|(i, score)| Hit {
            id: ids[i].clone(),
            score,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::cosine;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(n: usize) -> EmbeddingMatrix {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        EmbeddingMatrix::new(n, (0..n).map(|i| format!("r{i}")).collect(), data, true).unwrap()
    }

    #[test]
    fn one_hot_query_finds_its_row() {
        let m = one_hot(5);
        let hits = knn(&[0.0, 0.0, 1.0, 0.0, 0.0], &m, 2, &HashSet::new());
        assert_eq!(hits[0].id, "r2");
        assert_eq!(hits[0].score, 1.0);
        // remaining rows all score 0, ties go to the smallest id
        assert_eq!(hits[1].id, "r0");
    }

    #[test]
    fn k_larger_than_n_returns_everything_sorted() {
        let m = one_hot(4);
        let hits = knn(&[0.1, 0.2, 0.3, 0.4], &m, 10, &HashSet::new());
        let ids: Vec<_> = hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["r3", "r2", "r1", "r0"]);
    }

    #[test]
    fn excluded_ids_never_returned() {
        let m = one_hot(4);
        let ex: HashSet<String> = ["r3".to_string()].into();
        let hits = knn(&[0.0, 0.0, 0.0, 1.0], &m, 4, &ex);
        assert_eq!(hits.len(), 3);
        assert!(hits.iter().all(|h| h.id != "r3"));
        assert!(knn(&[1.0, 0.0, 0.0, 0.0], &m, 0, &ex).is_empty());
    }

    #[test]
    fn matches_naive_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, dim) = (50, 16);
        let data: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ids: Vec<String> = (0..n).map(|i| format!("id{i:02}")).collect();
        let m = EmbeddingMatrix::new(dim, ids.clone(), data, false).unwrap();
        for _ in 0..10 {
            let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut oracle: Vec<(String, f64)> = (0..n)
                .map(|i| (ids[i].clone(), cosine(&q, m.row(i)).unwrap()))
                .collect();
            oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for exec in [Execution::Sequential, Execution::Parallel] {
                let hits = knn_with(&q, &m, 7, &HashSet::new(), exec);
                let got: Vec<_> = hits.iter().map(|h| h.id.clone()).collect();
                let want: Vec<_> = oracle[..7].iter().map(|o| o.0.clone()).collect();
                assert_eq!(got, want);
                for (h, o) in hits.iter().zip(&oracle) {
                    assert!((h.score - o.1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_k_is_permutation_sorted_by_score_then_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, dim) = (30, 3);
        // duplicated rows force ties
        let base: Vec<Vec<f32>> = (0..10)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let data: Vec<f32> = (0..n).flat_map(|i| base[i % 10].clone()).collect();
        let ids: Vec<String> = (0..n).map(|i| format!("{:02}", (i * 7) % n)).collect();
        let m = EmbeddingMatrix::new(dim, ids.clone(), data, false).unwrap();
        let hits = knn(&[0.3, -0.2, 0.9], &m, n, &HashSet::new());
        assert_eq!(hits.len(), n);
        let mut seen: Vec<_> = hits.iter().map(|h| h.id.clone()).collect();
        seen.sort();
        let mut all = ids;
        all.sort();
        assert_eq!(seen, all);
        for w in hits.windows(2) {
            assert!(rank_order(w[0].score, &w[0].id, w[1].score, &w[1].id) == Ordering::Less);
        }
    }
}
