/// Edit distance over Unicode scalar values (unit-cost insert, delete,
/// substitute).
pub fn levenshtein_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    distance_chars(&a, &b)
}

pub(crate) fn distance_chars(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Letters and digits only, optionally lower-cased.
pub fn alnum_chars(s: &str, casefold: bool) -> Vec<char> {
    let kept = s.chars().filter(|c| c.is_alphanumeric());
    if casefold {
        kept.flat_map(char::to_lowercase).collect()
    } else {
        kept.collect()
    }
}

/// `1 - dist / max_len` on the alphanumeric-stripped strings; 1.0 when both
/// strip to nothing.
pub fn lev_similarity(a: &str, b: &str) -> f64 {
    lev_similarity_with(a, b, false)
}

pub fn lev_similarity_with(a: &str, b: &str, casefold: bool) -> f64 {
    similarity_chars(&alnum_chars(a, casefold), &alnum_chars(b, casefold))
}

pub(crate) fn similarity_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - distance_chars(a, b) as f64 / longest as f64
}

/// Edit distance when it is at most `max_d`, else `None`. Only the diagonal
/// band of half-width `max_d` is filled, and a row whose minimum already
/// exceeds `max_d` ends the scan.
pub(crate) fn distance_within(a: &[char], b: &[char], max_d: usize) -> Option<usize> {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if a.len() - b.len() > max_d {
        return None;
    }
    const INF: usize = usize::MAX / 2;
    let m = b.len();
    let mut prev: Vec<usize> = (0..=m).map(|j| if j <= max_d { j } else { INF }).collect();
    let mut cur = vec![INF; m + 1];
    for i in 1..=a.len() {
        let lo = i.saturating_sub(max_d).max(1);
        let hi = (i + max_d).min(m);
        cur[0] = if i <= max_d { i } else { INF };
        if lo > 1 {
            cur[lo - 1] = INF;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if hi < m {
            cur[hi + 1] = INF;
        }
        if row_min > max_d {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[m];
    (d <= max_d).then_some(d)
}

/// Whether similarity exceeds `threshold`. Distances above
/// `floor((1 - threshold) * len) + 1` cannot qualify, so the DP is banded.
pub(crate) fn similarity_exceeds(a: &[char], b: &[char], threshold: f64) -> bool {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0 > threshold;
    }
    let max_d = ((1.0 - threshold) * longest as f64).floor().max(0.0) as usize + 1;
    distance_within(a, b, max_d).is_some_and(|d| 1.0 - d as f64 / longest as f64 > threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Top-down memoised recursion straight from the definition.
    fn oracle(a: &[char], b: &[char]) -> usize {
        fn go(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
            if a.is_empty() {
                return b.len();
            }
            if b.is_empty() {
                return a.len();
            }
            if let Some(&d) = memo.get(&(a.len(), b.len())) {
                return d;
            }
            let cost = usize::from(a[0] != b[0]);
            let d = (go(&a[1..], &b[1..], memo) + cost)
                .min(go(&a[1..], b, memo) + 1)
                .min(go(a, &b[1..], memo) + 1);
            memo.insert((a.len(), b.len()), d);
            d
        }
        go(a, b, &mut HashMap::new())
    }

    #[test]
    fn landmarks() {
        assert_eq!(levenshtein_distance("kitten", "sitting"), 3);
        assert_eq!(oracle(&['k', 'i', 't', 't', 'e', 'n'], &"sitting".chars().collect::<Vec<_>>()), 3);
        assert_eq!(levenshtein_distance("Lëtzebuerg", "Lëtzebuerg"), 0);
        assert_eq!(levenshtein_distance("", "abc"), 3);
        assert_eq!(levenshtein_distance("abc", ""), 3);
        // scalar values, not bytes
        assert_eq!(levenshtein_distance("ä", "a"), 1);
    }

    #[test]
    fn similarity_landmarks() {
        assert_eq!(lev_similarity("Hello, world!", "Hello world"), 1.0);
        assert_eq!(lev_similarity("abc", "xyz"), 0.0);
        assert_eq!(lev_similarity("D'Zeitung", "D'Zeitung"), 1.0);
        assert_eq!(lev_similarity("...", "!!"), 1.0);
        assert_eq!(lev_similarity("abc", ""), 0.0);
        assert_eq!(lev_similarity("ABC", "abc"), 0.0);
        assert_eq!(lev_similarity_with("ABC", "abc", true), 1.0);
    }

    #[test]
    fn pruning_agrees_with_full_similarity() {
        let cases = [("abcdefghij", "abcdefg"), ("abc", "abcd"), ("", ""), ("a", "")];
        for (a, b) in cases {
            let (a, b) = (alnum_chars(a, false), alnum_chars(b, false));
            for t in [0.0, 0.5, 0.7, 0.85, 1.0] {
                assert_eq!(similarity_exceeds(&a, &b, t), similarity_chars(&a, &b) > t);
            }
        }
    }

    fn small_string() -> impl Strategy<Value = String> {
        prop::collection::vec(prop_oneof![Just('a'), Just('b'), Just('ë'), Just('Z'), Just(' '), Just('.')], 0..=12)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn matches_oracle_and_is_a_metric(a in small_string(), b in small_string(), c in small_string()) {
            let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
            let d_ab = levenshtein_distance(&a, &b);
            prop_assert_eq!(d_ab, oracle(&ca, &cb));
            prop_assert_eq!(d_ab, levenshtein_distance(&b, &a));
            prop_assert_eq!(d_ab == 0, a == b);
            prop_assert!(levenshtein_distance(&a, &c) <= d_ab + levenshtein_distance(&b, &c));
        }

        #[test]
        fn similarity_bounded_and_punctuation_blind(a in "\\PC{0,12}", b in "\\PC{0,12}", at in 0usize..12) {
            let s = lev_similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            let mut noisy: String = a.clone();
            let pos = noisy.char_indices().nth(at).map(|(i, _)| i).unwrap_or(noisy.len());
            noisy.insert_str(pos, ", -");
            prop_assert_eq!(lev_similarity(&noisy, &b), s);
        }

        #[test]
        fn banded_distance_agrees_with_full(a in small_string(), b in small_string(), k in 0usize..14, t in 0.0f64..1.0) {
            let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
            let d = distance_chars(&ca, &cb);
            prop_assert_eq!(distance_within(&ca, &cb, k), (d <= k).then_some(d));
            prop_assert_eq!(similarity_exceeds(&ca, &cb, t), similarity_chars(&ca, &cb) > t);
        }
    }
}
