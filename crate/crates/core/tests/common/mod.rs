//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use bankforge::program::{AccessTemplate, Level, Program, Schedule};
use bankforge::{AccessKind, Controller, HyperplaneGeometry, IteratorDomain, ProblemFile, UnrollStrategy};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn problem(name: &str) -> ProblemFile {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name);
    ProblemFile::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Calls `f` on every point of `[0, extents)` in row-major order.
pub fn each_point(extents: &[u64], mut f: impl FnMut(&[i64])) {
    if extents.contains(&0) {
        return;
    }
    let mut pt = vec![0i64; extents.len()];
    'outer: loop {
        f(&pt);
        for d in (0..pt.len()).rev() {
            pt[d] += 1;
            if (pt[d] as u64) < extents[d] {
                continue 'outer;
            }
            pt[d] = 0;
        }
        return;
    }
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Bank vector straight from the definition `floor(alpha . x / B) mod N`.
pub fn oracle_bank(g: &HyperplaneGeometry, x: &[i64]) -> Vec<u64> {
    let unit = |coef: &[(usize, i64)], n: u64, b: u64| {
        let s: i64 = coef.iter().map(|&(d, a)| a * x[d]).sum();
        s.div_euclid(b as i64).rem_euclid(n as i64) as u64
    };
    if g.n.len() == 1 && g.style == bankforge::BankingStyle::Flat {
        let coef: Vec<(usize, i64)> = g.alpha.iter().copied().enumerate().collect();
        vec![unit(&coef, g.n[0], g.b[0])]
    } else {
        (0..g.alpha.len()).map(|d| unit(&[(d, g.alpha[d])], g.n[d], g.b[d])).collect()
    }
}

/// Smallest positive shift along one axis that leaves every bank unchanged.
pub fn oracle_period(alpha: i64, n: u64, b: u64) -> u64 {
    if alpha == 0 {
        return 1;
    }
    (1..=n * b).find(|&t| (alpha as u64 * t) % (n * b) == 0).unwrap()
}

/// Whether every bank is reachable: `gcd(alpha, N*B) <= B` per unit.
pub fn reaches_all_banks(g: &HyperplaneGeometry) -> bool {
    if g.style == bankforge::BankingStyle::Flat {
        let s = g.alpha.iter().fold(g.n[0] * g.b[0], |acc, &a| gcd(acc, a as u64));
        s <= g.b[0]
    } else {
        (0..g.alpha.len()).all(|d| gcd(g.n[d] * g.b[d], g.alpha[d] as u64) <= g.b[d])
    }
}

/// Random valid geometry: alpha <= 8, N <= 16, B <= 4, up to three dims of
/// extent <= 32, every bank reachable.
pub fn random_geometry(rng: &mut ChaCha8Rng) -> HyperplaneGeometry {
    loop {
        let g = any_geometry(rng);
        if reaches_all_banks(&g) {
            return g;
        }
    }
}

fn any_geometry(rng: &mut ChaCha8Rng) -> HyperplaneGeometry {
    let rank = rng.random_range(1..=3usize);
    let dims: Vec<u64> = (0..rank).map(|_| rng.random_range(1..=32u64)).collect();
    if rank > 1 && rng.random_bool(0.3) {
        let n = (0..rank).map(|_| rng.random_range(1..=16u64)).collect();
        let b = (0..rank).map(|_| rng.random_range(1..=4u64)).collect();
        let alpha = (0..rank).map(|_| rng.random_range(1..=8i64)).collect();
        HyperplaneGeometry::multidim(n, b, alpha, dims)
    } else {
        let mut alpha: Vec<i64> = (0..rank).map(|_| rng.random_range(0..=8i64)).collect();
        if alpha.iter().all(|&a| a == 0) {
            alpha[0] = rng.random_range(1..=8);
        }
        HyperplaneGeometry::flat(rng.random_range(1..=16u64), rng.random_range(1..=4u64), alpha, dims)
    }
}

fn counter(rng: &mut ChaCha8Rng, name: &str) -> IteratorDomain {
    let step = rng.random_range(1..=3i64);
    let trips = rng.random_range(1..=6i64);
    IteratorDomain { parallelization: rng.random_range(1..=3u32), ..IteratorDomain::new(name, 0, step, step * trips) }
}

/// Small random program: a sequential or pipelined outer loop over one or
/// two pipelined inner loops, each with a few affine reads and writes.
/// The array is sized so every address is in bounds.
pub fn random_program(rng: &mut ChaCha8Rng) -> Program {
    let rank = rng.random_range(1..=2usize);
    let outer_sched = if rng.random_bool(0.5) { Schedule::Sequential } else { Schedule::Pipelined };
    let mut root = Controller::new("top", Level::Outer, outer_sched);
    let outer = IteratorDomain {
        parallelization: rng.random_range(1..=2u32),
        ..IteratorDomain::new("o", 0, 1, rng.random_range(1..=3i64))
    };
    root.counters.push(outer.clone());
    let mut accesses = Vec::new();
    let mut hi = vec![0i64; rank];
    let children = rng.random_range(1..=2usize);
    for c in 0..children {
        let id = format!("in{c}");
        let mut inner = Controller::new(&id, Level::Inner, Schedule::Pipelined);
        inner.initiation_interval = Some(rng.random_range(1..=2u32));
        let mut domains = vec![outer.clone()];
        for k in 0..rng.random_range(1..=2usize) {
            let it = counter(rng, &format!("i{c}{k}"));
            domains.push(it.clone());
            inner.counters.push(it);
        }
        for a in 0..rng.random_range(1..=3usize) {
            let matrix: Vec<Vec<i64>> =
                (0..rank).map(|_| domains.iter().map(|_| rng.random_range(0..=2i64)).collect()).collect();
            let offset: Vec<i64> = (0..rank).map(|_| rng.random_range(0..=3i64)).collect();
            for d in 0..rank {
                let top: i64 =
                    domains.iter().zip(&matrix[d]).map(|(it, &m)| m * it.values().max().unwrap_or(0)).sum::<i64>()
                        + offset[d];
                hi[d] = hi[d].max(top);
            }
            accesses.push(AccessTemplate {
                id: format!("a{c}{a}"),
                controller: id.clone(),
                kind: if rng.random_bool(0.3) { AccessKind::Write } else { AccessKind::Read },
                matrix,
                offset,
                iterators: domains.iter().map(|d| d.name.clone()).collect(),
                symbols: vec![],
                cycle: Some(rng.random_range(0..=2u32)),
            });
        }
        root.children.push(inner);
    }
    let strategy =
        if rng.random_bool(0.5) { UnrollStrategy::ForkJoinOfPipelines } else { UnrollStrategy::PipelineOfForkJoins };
    Program { memory: "m".into(), dims: hi.iter().map(|&h| h as u64 + 1).collect(), root, accesses, strategy }
}

/// Random flat or multidimensional geometry over `dims` with small constants.
pub fn random_small_geometry(rng: &mut ChaCha8Rng, dims: &[u64]) -> HyperplaneGeometry {
    let rank = dims.len();
    if rank > 1 && rng.random_bool(0.3) {
        let n = (0..rank).map(|_| rng.random_range(1..=4u64)).collect();
        let b = (0..rank).map(|_| rng.random_range(1..=2u64)).collect();
        HyperplaneGeometry::multidim(n, b, vec![1; rank], dims.to_vec())
    } else {
        let mut alpha: Vec<i64> = (0..rank).map(|_| rng.random_range(0..=3i64)).collect();
        if alpha.iter().all(|&a| a == 0) {
            alpha[0] = 1;
        }
        HyperplaneGeometry::flat(rng.random_range(1..=8u64), rng.random_range(1..=2u64), alpha, dims.to_vec())
    }
}
