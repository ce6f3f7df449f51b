//! Seeded synthetic resource dataset.
//!
//! Rows are random but well-formed schemes: the geometry, partition region,
//! padding, capacity and resolution-logic census come from the real
//! geometry and rewrite code; accessor statistics are drawn at random. The
//! targets follow simple analytic area formulas with multiplicative
//! Gaussian noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, FeatureVector, SchemeContext, FEATURE_NAMES};
use crate::geometry::{padding, HyperplaneGeometry, SchemeMetrics};
use crate::rewrite::build_resolution;

/// Relative standard deviation of the target noise.
pub const NOISE: f64 = 0.04;
/// Bits per block RAM primitive.
pub const BRAM_BITS: f64 = 18432.0;

fn random_geometry(rng: &mut ChaCha8Rng) -> HyperplaneGeometry {
    let rank = rng.random_range(1..=3usize);
    let dims: Vec<u64> = (0..rank).map(|_| rng.random_range(4..=64u64)).collect();
    if rank > 1 && rng.random_bool(0.3) {
        let n = (0..rank).map(|_| rng.random_range(1..=4u64)).collect();
        let b = (0..rank).map(|_| rng.random_range(1..=2u64)).collect();
        HyperplaneGeometry::multidim(n, b, vec![1; rank], dims)
    } else {
        let mut alpha: Vec<i64> = (0..rank).map(|_| rng.random_range(0..=8i64)).collect();
        if alpha.iter().all(|&a| a == 0) {
            alpha[0] = 1;
        }
        HyperplaneGeometry::flat(rng.random_range(1..=16u64), rng.random_range(1..=4u64), alpha, dims).normalize()
    }
}

/// `rows` samples drawn from a ChaCha stream seeded with `seed`.
pub fn generate(rows: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(1.0, NOISE).expect("valid deviation");
    let mut ds = Dataset { columns: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), ..Default::default() };
    while ds.rows.len() < rows {
        let g = random_geometry(&mut rng);
        let Ok(p) = g.select_parallelotope() else { continue };
        let census = build_resolution(&g, &p).census();
        let banks = g.total_banks();
        let readers = rng.random_range(1..=16usize);
        let writers = rng.random_range(0..=4usize);
        let accessors = (readers + writers) as f64;
        let max_fo = rng.random_range(1..=banks);
        let max_fi = rng.random_range(1..=readers + writers) as u64;
        let metrics = SchemeMetrics {
            fo: vec![max_fo],
            fi: vec![max_fi],
            delta: padding(&g.dims, &p),
            capacity: g.enumerated_capacity(&p),
        };
        let ctx = SchemeContext {
            geometry: &g,
            p: &p,
            metrics: &metrics,
            census,
            ports: rng.random_range(1..=2u32),
            element_bits: [8u32, 16, 32, 64][rng.random_range(0..4usize)],
            duplication: [1u32, 2, 4][rng.random_range(0..3usize)],
            readers,
            writers,
            groups: rng.random_range(1..=3usize),
            depth: rng.random_range(2..=6usize),
        };
        let f = FeatureVector::from_scheme(&ctx);
        let bits = ctx.element_bits as f64;
        let physical = (banks * ctx.duplication as u64) as f64;
        let logic = 60.0 * census.mul as f64
            + 120.0 * (census.div + census.modulo) as f64
            + 4.0 * (census.add + census.sub) as f64
            + 2.0 * census.mux as f64
            + census.and as f64
            + 0.5 * census.shift as f64;
        let lut = 30.0
            + 8.0 * physical
            + 0.15 * bits * accessors * max_fo as f64
            + 0.1 * bits * physical * max_fi as f64 / ctx.ports as f64
            + accessors * logic;
        let nodes = (census.add + census.sub + census.shift + census.and + census.mux) as f64;
        let ff = 20.0
            + 0.8 * bits * accessors
            + 5.0 * ctx.depth as f64 * accessors
            + 3.0 * physical
            + 0.5 * nodes * accessors;
        let bram = physical * (metrics.capacity as f64 * bits / BRAM_BITS).ceil();
        let mut jitter = |v: f64| (v * noise.sample(&mut rng)).max(0.0);
        ds.lut.push(jitter(lut));
        ds.ff.push(jitter(ff));
        ds.bram.push(jitter(bram));
        ds.rows.push(f.0);
    }
    ds
}
