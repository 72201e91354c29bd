use std::collections::{BTreeSet, VecDeque};

use ppi_affinity::splitter::{
    assign_splits, complex_distance, connected_components, levenshtein, make_split, make_split_with_matrix,
    DistanceMatrix, SimilarityGraph, SplitConfig,
};
use ppi_affinity::synthetic::planted_families;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full (m+1)x(n+1) table, no row reuse.
fn levenshtein_table(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        t[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
        }
    }
    t[a.len()][b.len()]
}

fn bfs_components(n: usize, edges: &[(usize, usize)]) -> BTreeSet<BTreeSet<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(v) = queue.pop_front() {
            comp.insert(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        out.insert(comp);
    }
    out
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let m = rng.random_range(0..=n + n / 2);
    (0..m)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
        .collect()
}

fn as_sets(components: Vec<Vec<usize>>) -> BTreeSet<BTreeSet<usize>> {
    components.into_iter().map(|c| c.into_iter().collect()).collect()
}

fn short_string() -> impl Strategy<Value = String> {
    "[ACDEGK]{0,30}"
}

proptest! {
    #[test]
    fn levenshtein_matches_table(a in short_string(), b in short_string()) {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein_table(&a, &b));
    }

    #[test]
    fn levenshtein_is_a_metric(a in short_string(), b in short_string(), c in short_string()) {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        prop_assert_eq!(levenshtein(&a, &a), 0);
    }

    #[test]
    fn assignment_respects_cap(
        sizes in prop::collection::vec(1usize..15, 1..40),
        r in 0.05f64..0.95,
        cap in 1.0f64..2.0,
    ) {
        let mut next = 0;
        let components: Vec<Vec<String>> = sizes
            .iter()
            .map(|&s| (0..s).map(|_| { next += 1; format!("v{next:04}") }).collect())
            .collect();
        let n: usize = sizes.iter().sum();
        let split = assign_splits(&components, n, r, cap).unwrap();
        prop_assert!(split.test.len() as f64 <= cap * r * n as f64);
        let all: Vec<String> = components.concat();
        split.check_partition(&all).unwrap();
    }
}

#[test]
fn components_match_bfs_on_thirty_vertices() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..200 {
        let edges = random_graph(&mut rng, 30);
        let ids = (0..30).map(|i| format!("n{i}")).collect();
        let graph = SimilarityGraph::from_edges(ids, &edges);
        assert_eq!(as_sets(connected_components(&graph)), bfs_components(30, &edges));
    }
}

#[test]
fn components_match_bfs_on_larger_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..50 {
        let n = rng.random_range(1..=200);
        let edges = random_graph(&mut rng, n);
        let ids = (0..n).map(|i| format!("n{i}")).collect();
        let graph = SimilarityGraph::from_edges(ids, &edges);
        assert_eq!(as_sets(connected_components(&graph)), bfs_components(n, &edges));
    }
}

#[test]
fn no_cross_split_pair_within_threshold() {
    let dataset = planted_families(100, 5, 7);
    let config = SplitConfig::default();
    let matrix = DistanceMatrix::compute(&dataset).unwrap();
    let split = make_split_with_matrix(&dataset, &matrix, &config).unwrap();
    split.check_partition(&dataset.ids()).unwrap();
    assert!(!split.validation.is_empty());
    assert!(split.test.len() as f64 <= config.cap_factor * config.test_ratio * 100.0);

    let side = split.side_of();
    let by_id = dataset.index();
    for a in &dataset.ids() {
        for b in &dataset.ids() {
            if side[a.as_str()] != side[b.as_str()] {
                let d = complex_distance(by_id[a.as_str()], by_id[b.as_str()]).unwrap();
                assert!(d > config.tau, "{a} and {b} at {d}");
            }
        }
    }
    assert!(split.min_cross_split_distance.unwrap() > config.tau);
}

#[test]
fn split_serialization_is_byte_identical() {
    let dataset = planted_families(60, 4, 11);
    let a = make_split(&dataset, &SplitConfig::default()).unwrap().to_json();
    let b = make_split(&dataset, &SplitConfig::default()).unwrap().to_json();
    assert_eq!(a, b);
}

#[test]
fn self_distance_is_zero() {
    for c in &planted_families(40, 3, 5).complexes {
        assert_eq!(complex_distance(c, c).unwrap(), 0.0);
    }
}

#[test]
fn cached_matrix_gives_same_split() {
    let dataset = planted_families(40, 4, 3);
    let dir = tempfile::tempdir().unwrap();
    let fresh = DistanceMatrix::load_or_compute(&dataset, Some(dir.path())).unwrap();
    let cached = DistanceMatrix::load_or_compute(&dataset, Some(dir.path())).unwrap();
    assert_eq!(fresh, cached);
    let config = SplitConfig::default();
    assert_eq!(
        make_split_with_matrix(&dataset, &fresh, &config).unwrap().to_json(),
        make_split(&dataset, &config).unwrap().to_json()
    );
}
