//! Seeded synthetic fixtures: sequence families with planted near-duplicates,
//! and embedding tables with a known linear relation to the labels.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::ingest::{Complex, Dataset};
use crate::regressor::EmbeddingTable;

const RESIDUES: &[u8] = b"ACDEFGHIKLMNPQRSTVWY";

fn random_chain(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| RESIDUES[rng.random_range(0..RESIDUES.len())] as char)
        .collect()
}

fn mutate(rng: &mut ChaCha8Rng, chain: &str, substitutions: usize) -> String {
    let mut bytes = chain.as_bytes().to_vec();
    for _ in 0..substitutions {
        let k = rng.random_range(0..bytes.len());
        bytes[k] = RESIDUES[rng.random_range(0..RESIDUES.len())];
    }
    String::from_utf8(bytes).expect("ascii residues")
}

/// `n` complexes grouped into families of 1 to `max_family` members. Members of
/// a family share two chains up to a few point substitutions; chains of
/// different families are independent random sequences of 60 to 90 residues.
pub fn planted_families(n: usize, max_family: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut complexes = Vec::with_capacity(n);
    let mut family = 0;
    while complexes.len() < n {
        let size = rng.random_range(1..=max_family.max(1)).min(n - complexes.len());
        let base: Vec<String> = (0..2)
            .map(|_| {
                let len = rng.random_range(60..=90);
                random_chain(&mut rng, len)
            })
            .collect();
        let pkd_center = rng.random_range(4.0..10.0);
        for member in 0..size {
            let chains = base
                .iter()
                .map(|c| {
                    let subs = rng.random_range(0..=4);
                    mutate(&mut rng, c, subs)
                })
                .collect();
            complexes.push(Complex {
                id: format!("f{family:03}m{member}"),
                chains,
                pkd: pkd_center + rng.random_range(-0.5..0.5),
                pmid: format!("PMID{}", family % 13),
                tags: BTreeMap::new(),
            });
        }
        family += 1;
    }
    Dataset::new("planted", complexes).expect("synthetic rows are valid")
}

/// Labels generated as `w . x + noise` over one embedding source.
pub struct LinearFixture {
    pub dataset: Dataset,
    pub table: EmbeddingTable,
    pub weights: Vec<f64>,
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i:04}")).collect()
}

fn placeholder_chains(rng: &mut ChaCha8Rng) -> Vec<String> {
    vec![random_chain(rng, 12)]
}

/// `n` complexes with standard-normal features of width `dim`, labels
/// `5 + w . x + N(0, noise^2)` with `w` drawn at scale 0.5, spread over
/// `n_pmids` studies.
pub fn linear(n: usize, dim: usize, noise: f64, n_pmids: usize, seed: u64) -> LinearFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..dim)
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            0.5 * w
        })
        .collect();
    let noise_dist = Normal::new(0.0, noise).expect("noise std");
    let mut complexes = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for (i, id) in ids(n).into_iter().enumerate() {
        let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let signal: f64 = x.iter().zip(&weights).map(|(a, b)| a * b).sum();
        complexes.push(Complex {
            id: id.clone(),
            chains: placeholder_chains(&mut rng),
            pkd: 5.0 + signal + noise_dist.sample(&mut rng),
            pmid: format!("PMID{}", i % n_pmids.max(1)),
            tags: BTreeMap::new(),
        });
        rows.push((id, x));
    }
    LinearFixture {
        dataset: Dataset::new("linear", complexes).expect("synthetic rows are valid"),
        table: EmbeddingTable::new("embedding", dim, rows).expect("finite features"),
        weights,
    }
}

pub struct TwoSourceFixture {
    pub dataset: Dataset,
    pub first: EmbeddingTable,
    pub second: EmbeddingTable,
}

/// Labels depend on an 8-wide latent vector; the first source sees latent
/// dims 0..4 and the second sees dims 4..8, so neither explains the label alone.
pub fn two_source(n: usize, noise: f64, n_pmids: usize, seed: u64) -> TwoSourceFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..8).map(|_| 0.5 * rng.random_range(0.6..1.4)).collect();
    let noise_dist = Normal::new(0.0, noise).expect("noise std");
    let mut complexes = Vec::with_capacity(n);
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for (i, id) in ids(n).into_iter().enumerate() {
        let z: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
        let signal: f64 = z.iter().zip(&weights).map(|(a, b)| a * b).sum();
        complexes.push(Complex {
            id: id.clone(),
            chains: placeholder_chains(&mut rng),
            pkd: 6.0 + signal + noise_dist.sample(&mut rng),
            pmid: format!("PMID{}", i % n_pmids.max(1)),
            tags: BTreeMap::new(),
        });
        first.push((id.clone(), z[..4].to_vec()));
        second.push((id, z[4..].to_vec()));
    }
    TwoSourceFixture {
        dataset: Dataset::new("two-source", complexes).expect("synthetic rows are valid"),
        first: EmbeddingTable::new("structure", 4, first).expect("finite features"),
        second: EmbeddingTable::new("sequence", 4, second).expect("finite features"),
    }
}
