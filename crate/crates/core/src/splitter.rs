//! Leakage-safe dataset splitting over a sequence-similarity graph.
//!
//! Complexes are linked whenever their chain-level edit distance falls at or
//! below a threshold in either direction. Connected components of that graph
//! are then assigned whole to the test side by a capped greedy pass, so no
//! pair of near-duplicates can straddle two splits.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{Complex, Dataset};

pub const DEFAULT_TAU: f64 = 20.0;
pub const DEFAULT_TEST_RATIO: f64 = 0.40;
pub const DEFAULT_CAP_FACTOR: f64 = 1.2;
pub const DEFAULT_VAL_FRACTION: f64 = 0.15;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("complex '{0}' has no chains")]
    EmptyChains(String),
    #[error("cannot assign splits: no components")]
    NoComponents,
    #[error("invalid split parameter: {0}")]
    InvalidParam(String),
    #[error("inconsistent split: {0}")]
    Inconsistent(String),
    #[error("distance cache {path}: {message}")]
    Cache { path: String, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed split file {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SplitError + '_ {
    move |source| SplitError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Unit-cost edit distance over arbitrary comparable symbols.
pub fn levenshtein_by<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(ca != cb);
            row[j + 1] = (diag + cost).min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[b.len()]
}

/// Levenshtein distance between two strings, counted in Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    if a.is_ascii() && b.is_ascii() {
        return levenshtein_by(a.as_bytes(), b.as_bytes());
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_by(&a, &b)
}

/// Mean over the chains of `a` of the smallest edit distance to any chain of `b`.
///
/// Not symmetric: swapping the arguments averages over the other complex's chains.
pub fn chain_set_distance<S: AsRef<str>>(a: &[S], b: &[S]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let total: usize = a
        .iter()
        .map(|ca| {
            b.iter()
                .map(|cb| levenshtein(ca.as_ref(), cb.as_ref()))
                .min()
                .unwrap_or(0)
        })
        .sum();
    Some(total as f64 / a.len() as f64)
}

pub fn complex_distance(a: &Complex, b: &Complex) -> Result<f64, SplitError> {
    if a.chains.is_empty() {
        return Err(SplitError::EmptyChains(a.id.clone()));
    }
    if b.chains.is_empty() {
        return Err(SplitError::EmptyChains(b.id.clone()));
    }
    Ok(chain_set_distance(&a.chains, &b.chains).unwrap_or(0.0))
}

/// Dense, row-major matrix of directed complex distances.
///
/// Values are held at single precision, matching the on-disk cache, so a
/// matrix read back from cache compares against thresholds exactly like a
/// freshly computed one.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    values: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    ids: Vec<String>,
    content_hash: String,
}

impl DistanceMatrix {
    pub fn from_values(ids: Vec<String>, values: Vec<f32>) -> Result<Self, SplitError> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(SplitError::Inconsistent(format!(
                "{} values for {n} ids",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SplitError::Inconsistent(
                "distances must be finite and non-negative".into(),
            ));
        }
        if (0..n).any(|i| values[i * n + i] != 0.0) {
            return Err(SplitError::Inconsistent("non-zero diagonal".into()));
        }
        Ok(DistanceMatrix { ids, values })
    }

    /// Fill every ordered pair in parallel.
    pub fn compute(dataset: &Dataset) -> Result<Self, SplitError> {
        if let Some(c) = dataset.complexes.iter().find(|c| c.chains.is_empty()) {
            return Err(SplitError::EmptyChains(c.id.clone()));
        }
        let n = dataset.len();
        let complexes = &dataset.complexes;
        let mut values = vec![0f32; n * n];
        if n > 0 {
            values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                for (j, cell) in row.iter_mut().enumerate() {
                    if i != j {
                        let d = chain_set_distance(&complexes[i].chains, &complexes[j].chains)
                            .unwrap_or(0.0);
                        *cell = d as f32;
                    }
                }
            });
        }
        Ok(DistanceMatrix {
            ids: dataset.ids(),
            values,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.ids.len() + j]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn write_cache(&self, path: &Path, content_hash: &str) -> Result<(), SplitError> {
        let header = CacheHeader {
            ids: self.ids.clone(),
            content_hash: content_hash.to_string(),
        };
        let mut buf = serde_json::to_vec(&header).expect("header serializes");
        buf.push(b'\n');
        buf.reserve(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(io_err(path))
    }

    /// Read a cache file, returning the matrix and the content hash it was stored under.
    pub fn read_cache(path: &Path) -> Result<(Self, String), SplitError> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        reader.read_line(&mut line).map_err(io_err(path))?;
        let header: CacheHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| SplitError::Cache {
                path: path.display().to_string(),
                message: format!("bad header: {e}"),
            })?;
        let mut body = Vec::new();
        reader.read_to_end(&mut body).map_err(io_err(path))?;
        let n = header.ids.len();
        if body.len() != n * n * 4 {
            return Err(SplitError::Cache {
                path: path.display().to_string(),
                message: format!("expected {} bytes of distances, found {}", n * n * 4, body.len()),
            });
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let matrix = DistanceMatrix::from_values(header.ids, values)?;
        Ok((matrix, header.content_hash))
    }

    /// Compute the matrix, reusing a cache file keyed by dataset content when possible.
    pub fn load_or_compute(dataset: &Dataset, cache_dir: Option<&Path>) -> Result<Self, SplitError> {
        let Some(dir) = cache_dir else {
            return DistanceMatrix::compute(dataset);
        };
        let hash = content_hash(dataset);
        let path = cache_path(dir, &hash);
        if path.exists() {
            match DistanceMatrix::read_cache(&path) {
                Ok((m, h)) if h == hash && m.ids == dataset.ids() => {
                    log::info!("reusing distance cache {}", path.display());
                    return Ok(m);
                }
                Ok(_) => log::warn!("distance cache {} does not match dataset", path.display()),
                Err(e) => log::warn!("ignoring unreadable distance cache: {e}"),
            }
        }
        let m = DistanceMatrix::compute(dataset)?;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        m.write_cache(&path, &hash)?;
        Ok(m)
    }
}

/// SHA-256 over ids and chains, in dataset order.
pub fn content_hash(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for c in &dataset.complexes {
        h.update(c.id.as_bytes());
        h.update([0u8]);
        for chain in &c.chains {
            h.update(chain.as_bytes());
            h.update([1u8]);
        }
        h.update([2u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cache_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("distances-{}.bin", &hash[..16]))
}

/// Undirected graph over dataset positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityGraph {
    ids: Vec<String>,
    adjacency: Vec<Vec<usize>>,
}

impl SimilarityGraph {
    pub fn from_edges(ids: Vec<String>, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = vec![Vec::new(); ids.len()];
        for &(a, b) in edges {
            if a == b {
                continue;
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        SimilarityGraph { ids, adjacency }
    }

    /// Link i and j when D(i, j) <= tau or D(j, i) <= tau.
    pub fn from_matrix(matrix: &DistanceMatrix, tau: f64) -> Self {
        let n = matrix.len();
        let tau = tau as f32;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if matrix.get(i, j) <= tau || matrix.get(j, i) <= tau {
                    edges.push((i, j));
                }
            }
        }
        SimilarityGraph::from_edges(matrix.ids().to_vec(), &edges)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }
}

pub fn build_similarity_graph(dataset: &Dataset, tau: f64) -> Result<SimilarityGraph, SplitError> {
    if !(tau >= 0.0) {
        return Err(SplitError::InvalidParam(format!("tau must be >= 0, got {tau}")));
    }
    Ok(SimilarityGraph::from_matrix(&DistanceMatrix::compute(dataset)?, tau))
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

/// Maximal connected vertex sets. Members are ascending and components are
/// ordered by their smallest member.
pub fn connected_components(graph: &SimilarityGraph) -> Vec<Vec<usize>> {
    let n = graph.len();
    let mut dsu = DisjointSet::new(n);
    for v in 0..n {
        for &w in graph.neighbors(v) {
            if w > v {
                dsu.union(v, w);
            }
        }
    }
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut components: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        let root = dsu.find(v);
        let k = *slot.entry(root).or_insert_with(|| {
            components.push(Vec::new());
            components.len() - 1
        });
        components[k].push(v);
    }
    components
}

/// Parameters recorded alongside a split. Fields are absent for splits
/// imported from elsewhere.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub test_ratio: Option<f64>,
    #[serde(default)]
    pub cap_factor: Option<f64>,
    #[serde(default)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    #[serde(default)]
    pub params: SplitParams,
    pub train: Vec<String>,
    #[serde(default)]
    pub validation: Vec<String>,
    pub test: Vec<String>,
    /// Components in the order the greedy pass visited them.
    #[serde(default)]
    pub components: Vec<Vec<String>>,
    #[serde(default)]
    pub min_cross_split_distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Validation,
    Test,
}

impl SplitAssignment {
    pub fn side_of(&self) -> HashMap<&str, Side> {
        let mut map = HashMap::new();
        for id in &self.train {
            map.insert(id.as_str(), Side::Train);
        }
        for id in &self.validation {
            map.insert(id.as_str(), Side::Validation);
        }
        for id in &self.test {
            map.insert(id.as_str(), Side::Test);
        }
        map
    }

    /// Check that the three splits are disjoint and cover exactly `ids`.
    pub fn check_partition(&self, ids: &[String]) -> Result<(), SplitError> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(SplitError::Inconsistent(format!("id '{id}' appears in more than one split")));
            }
        }
        let expected: HashSet<&str> = ids.iter().map(String::as_str).collect();
        if let Some(extra) = seen.iter().find(|id| !expected.contains(**id)) {
            return Err(SplitError::Inconsistent(format!("split names unknown id '{extra}'")));
        }
        if let Some(missing) = expected.iter().find(|id| !seen.contains(**id)) {
            return Err(SplitError::Inconsistent(format!("id '{missing}' is not assigned to any split")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), SplitError> {
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, SplitError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| SplitError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

fn check_ratio_params(r: f64, cap_factor: f64) -> Result<(), SplitError> {
    if !(r > 0.0 && r < 1.0) {
        return Err(SplitError::InvalidParam(format!("test ratio must lie in (0, 1), got {r}")));
    }
    if !(cap_factor >= 1.0) || !cap_factor.is_finite() {
        return Err(SplitError::InvalidParam(format!("cap factor must be >= 1, got {cap_factor}")));
    }
    Ok(())
}

/// Visiting order for the greedy pass: larger components first, ties broken by
/// the lexicographically smallest member id.
fn greedy_order(components: &[Vec<String>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..components.len()).collect();
    let smallest = |k: usize| components[k].iter().min().cloned().unwrap_or_default();
    order.sort_by(|&a, &b| {
        components[b]
            .len()
            .cmp(&components[a].len())
            .then_with(|| smallest(a).cmp(&smallest(b)))
    });
    order
}

/// Greedy capped selection: returns a flag per visited component, true when it was taken.
fn greedy_select<'a>(
    sizes: impl Iterator<Item = usize> + 'a,
    n_total: usize,
    r: f64,
    cap_factor: f64,
) -> impl Iterator<Item = bool> + 'a {
    let target = r * n_total as f64;
    let cap = cap_factor * r * n_total as f64;
    let mut taken = 0usize;
    sizes.map(move |size| {
        let take = (taken as f64) < target && (taken + size) as f64 <= cap;
        if take {
            taken += size;
        }
        take
    })
}

/// Assign whole components to test or train with the capped greedy rule.
pub fn assign_splits(
    components: &[Vec<String>],
    n_total: usize,
    r: f64,
    cap_factor: f64,
) -> Result<SplitAssignment, SplitError> {
    if components.is_empty() {
        return Err(SplitError::NoComponents);
    }
    check_ratio_params(r, cap_factor)?;
    let order = greedy_order(components);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let picks = greedy_select(order.iter().map(|&k| components[k].len()), n_total, r, cap_factor);
    for (&k, take) in order.iter().zip(picks) {
        let dest = if take { &mut test } else { &mut train };
        dest.extend(components[k].iter().cloned());
    }
    Ok(SplitAssignment {
        params: SplitParams {
            tau: None,
            test_ratio: Some(r),
            cap_factor: Some(cap_factor),
            val_fraction: None,
        },
        train,
        validation: Vec::new(),
        test,
        components: order.iter().map(|&k| components[k].clone()).collect(),
        min_cross_split_distance: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub tau: f64,
    pub test_ratio: f64,
    pub cap_factor: f64,
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            tau: DEFAULT_TAU,
            test_ratio: DEFAULT_TEST_RATIO,
            cap_factor: DEFAULT_CAP_FACTOR,
            val_fraction: DEFAULT_VAL_FRACTION,
        }
    }
}

/// Smallest directed distance between members of different splits, if any two splits are non-empty.
pub fn min_cross_split_distance(matrix: &DistanceMatrix, split: &SplitAssignment) -> Option<f64> {
    let side = split.side_of();
    let sides: Vec<Option<Side>> = matrix.ids().iter().map(|id| side.get(id.as_str()).copied()).collect();
    let n = matrix.len();
    let mut best: Option<f32> = None;
    for i in 0..n {
        for j in 0..n {
            match (sides[i], sides[j]) {
                (Some(a), Some(b)) if a != b => {
                    let d = matrix.get(i, j);
                    best = Some(best.map_or(d, |m| m.min(d)));
                }
                _ => {}
            }
        }
    }
    best.map(f64::from)
}

pub fn make_split(dataset: &Dataset, config: &SplitConfig) -> Result<SplitAssignment, SplitError> {
    let matrix = DistanceMatrix::compute(dataset)?;
    make_split_with_matrix(dataset, &matrix, config)
}

/// Full pipeline on a precomputed matrix: graph, components, test pass, then
/// an optional validation pass over the train-side components.
pub fn make_split_with_matrix(
    dataset: &Dataset,
    matrix: &DistanceMatrix,
    config: &SplitConfig,
) -> Result<SplitAssignment, SplitError> {
    if !(config.tau >= 0.0) {
        return Err(SplitError::InvalidParam(format!("tau must be >= 0, got {}", config.tau)));
    }
    if !(0.0..1.0).contains(&config.val_fraction) {
        return Err(SplitError::InvalidParam(format!(
            "validation fraction must lie in [0, 1), got {}",
            config.val_fraction
        )));
    }
    if matrix.ids() != dataset.ids().as_slice() {
        return Err(SplitError::Inconsistent("distance matrix ids do not match dataset".into()));
    }
    let graph = SimilarityGraph::from_matrix(matrix, config.tau);
    let components: Vec<Vec<String>> = connected_components(&graph)
        .into_iter()
        .map(|c| c.into_iter().map(|v| graph.ids()[v].clone()).collect())
        .collect();
    let mut split = assign_splits(&components, dataset.len(), config.test_ratio, config.cap_factor)?;

    if config.val_fraction > 0.0 {
        let test: HashSet<&String> = split.test.iter().collect();
        let train_side: Vec<&Vec<String>> = split
            .components
            .iter()
            .filter(|c| !c.iter().any(|id| test.contains(id)))
            .collect();
        let n_train: usize = train_side.iter().map(|c| c.len()).sum();
        let mut train = Vec::new();
        let mut validation = Vec::new();
        let picks = greedy_select(
            train_side.iter().map(|c| c.len()),
            n_train,
            config.val_fraction,
            config.cap_factor,
        );
        for (component, take) in train_side.iter().zip(picks) {
            let dest = if take { &mut validation } else { &mut train };
            dest.extend(component.iter().cloned());
        }
        split.train = train;
        split.validation = validation;
    }

    split.params = SplitParams {
        tau: Some(config.tau),
        test_ratio: Some(config.test_ratio),
        cap_factor: Some(config.cap_factor),
        val_fraction: Some(config.val_fraction),
    };
    split.min_cross_split_distance = min_cross_split_distance(matrix, &split);
    split.check_partition(matrix.ids())?;
    Ok(split)
}
