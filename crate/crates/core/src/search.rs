//! Candidate geometry enumeration, validation, costing and ranking.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{FeatureVector, GbtParams, Objective, ResourceModel, Resources, SchemeContext};
use crate::error::{Error, Result};
use crate::geometry::{find_violation, HyperplaneGeometry, SchemeMetrics};
use crate::io::ProblemFile;
use crate::math::{gcd, gcd_u, is_power_of_two, lcm_u, mersenne_exponent, mersenne_multiple};
use crate::polytope::{build_joint_normalized, AccessKind, AffineAccess, AnalysisConfig, NormalizedAccess};
use crate::program::{AccessGroup, Program};
use crate::rewrite::{build_resolution, shift_add_plan, ResolutionDag, COMPOSITE_RADIUS, SHIFT_ADD_RADIUS};

/// Caps on the otherwise open-ended candidate space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateBudget {
    /// Largest bank count; defaults to `multiples * LCM(group sizes)`
    /// capped at the array volume.
    pub max_n: Option<u64>,
    pub alpha_max: u64,
    pub b_max: u64,
    /// Multiples of the group-size LCM that form the first tier.
    pub multiples: u64,
    /// Alpha vectors tried per `(N, B)`, smallest entries first.
    pub max_alpha_vectors: usize,
    /// Valid flat geometries kept per bank count.
    pub per_n: usize,
    pub max_solutions: usize,
    /// Flat candidates validated before giving up.
    pub max_candidates: usize,
    pub multidim: bool,
    /// Per-dimension candidates in the multidimensional search.
    pub multidim_per_dim: usize,
    pub multidim_solutions: usize,
    pub multidim_nodes: u64,
    /// Reader-split factors tried besides 1.
    pub duplication: Vec<u32>,
}

impl Default for CandidateBudget {
    fn default() -> Self {
        CandidateBudget {
            max_n: None,
            alpha_max: 8,
            b_max: 8,
            multiples: 4,
            max_alpha_vectors: 64,
            per_n: 3,
            max_solutions: 48,
            max_candidates: 4000,
            multidim: true,
            multidim_per_dim: 48,
            multidim_solutions: 8,
            multidim_nodes: 200_000,
            duplication: vec![2, 4],
        }
    }
}

impl CandidateBudget {
    pub fn check(&self) -> Result<()> {
        let caps = [
            self.max_n.unwrap_or(1),
            self.alpha_max,
            self.b_max,
            self.multiples,
            self.max_alpha_vectors as u64,
            self.per_n as u64,
            self.max_solutions as u64,
            self.max_candidates as u64,
            self.multidim_per_dim as u64,
            self.multidim_solutions as u64,
            self.multidim_nodes,
        ];
        if caps.contains(&0) {
            return Err(Error::invalid("budget caps must be at least 1"));
        }
        if self.duplication.iter().any(|&d| d < 2) {
            return Err(Error::invalid("duplication factors must be at least 2"));
        }
        Ok(())
    }

    /// Effective bank-count cap for groups of the given sizes.
    pub fn bank_cap(&self, sizes: &[usize], dims: &[u64]) -> u64 {
        let volume = dims.iter().fold(1u64, |v, &d| v.saturating_mul(d));
        let lattice = self.multiples.saturating_mul(group_lcm(sizes));
        self.max_n.unwrap_or(lattice).min(volume).max(1)
    }
}

/// Constants whose division/modulo/multiplication rewrites into shifts,
/// masks, adds and small muxes.
pub fn rewrite_friendly(c: u64) -> bool {
    c <= 1
        || is_power_of_two(c)
        || mersenne_exponent(c).is_some()
        || mersenne_multiple(c, COMPOSITE_RADIUS).is_some()
        || shift_add_plan(c, SHIFT_ADD_RADIUS).is_ok()
}

pub fn group_lcm(sizes: &[usize]) -> u64 {
    sizes.iter().fold(1u64, |l, &s| lcm_u(l, s.max(1) as u64))
}

/// Alpha vectors with entries in `0..=hi`, ordered by largest entry, then
/// sum, then lexicographically.
fn alpha_vectors(rank: usize, hi: u64, limit: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    for max in 1..=hi as i64 {
        let mut level = Vec::new();
        let mut v = vec![0i64; rank];
        loop {
            if v.contains(&max) {
                level.push(v.clone());
            }
            let mut d = rank;
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                v[d] += 1;
                if v[d] <= max {
                    break;
                }
                v[d] = 0;
            }
            if v.iter().all(|&a| a == 0) {
                break;
            }
        }
        level.sort_by(|a, b| a.iter().sum::<i64>().cmp(&b.iter().sum::<i64>()).then_with(|| a.cmp(b)));
        out.extend(level);
        if out.len() >= limit {
            out.truncate(limit);
            break;
        }
    }
    out
}

/// Priority tier of a flat candidate: 1 on the LCM lattice with friendly
/// constants, 2 friendly off the lattice, 3 otherwise.
pub fn tier(n: u64, b: u64, alpha: &[i64], lcm: u64, multiples: u64) -> u8 {
    let friendly = rewrite_friendly(n) && rewrite_friendly(b) && alpha.iter().all(|&a| rewrite_friendly(a as u64));
    let lattice = n % lcm == 0 && n / lcm <= multiples;
    match (friendly, lattice) {
        (true, true) => 1,
        (true, false) => 2,
        _ => 3,
    }
}

/// Flat geometries in priority order for groups of the given sizes.
pub fn candidates(sizes: &[usize], dims: &[u64], budget: &CandidateBudget) -> Vec<HyperplaneGeometry> {
    let rank = dims.len();
    let lcm = group_lcm(sizes);
    let max_n = budget.bank_cap(sizes, dims);
    let mut keyed = Vec::new();
    let mut unit = vec![0i64; rank];
    unit[0] = 1;
    keyed.push(((0u8, 1u64, 1u64, 0usize), unit, 1u64, 1u64));
    for n in 2..=max_n {
        for b in 1..=budget.b_max {
            let hi = budget.alpha_max.min(n * b - 1);
            for (idx, alpha) in alpha_vectors(rank, hi, budget.max_alpha_vectors).into_iter().enumerate() {
                let c = alpha.iter().fold(b as i64, |acc, &a| gcd(acc, a));
                let stride = alpha.iter().fold(n * b, |acc, &a| gcd_u(acc, a as u64));
                if c > 1 || stride > b {
                    continue;
                }
                keyed.push(((tier(n, b, &alpha, lcm, budget.multiples), n, b, idx), alpha, n, b));
            }
        }
    }
    keyed.sort_by_key(|x| x.0);
    let mut seen = HashSet::new();
    keyed
        .into_iter()
        .map(|(_, alpha, n, b)| HyperplaneGeometry::flat(n, b, alpha, dims.to_vec()))
        .filter(|g| seen.insert(g.normalize()))
        .collect()
}

/// Splits each group's readers round-robin (by UID) over `d` duplicates and
/// copies every writer into each of them.
pub fn split_for_duplication(groups: &[AccessGroup], d: u32) -> Vec<AccessGroup> {
    if d <= 1 {
        return groups.to_vec();
    }
    let mut out = Vec::new();
    for g in groups {
        let mut readers: Vec<usize> = (0..g.len()).filter(|&i| g.members[i].kind == AccessKind::Read).collect();
        readers.sort_by(|&a, &b| g.members[a].uid.cmp(&g.members[b].uid).then(a.cmp(&b)));
        for j in 0..d as usize {
            let mine: BTreeSet<usize> = readers.iter().skip(j).step_by(d as usize).copied().collect();
            let keep: Vec<usize> =
                (0..g.len()).filter(|&i| mine.contains(&i) || g.members[i].kind == AccessKind::Write).collect();
            if keep.is_empty() {
                continue;
            }
            let pos: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(p, &i)| (i, p)).collect();
            out.push(AccessGroup {
                memory: g.memory.clone(),
                members: keep.iter().map(|&i| g.members[i].clone()).collect(),
                exclusive: g.exclusive.iter().filter_map(|(a, b)| Some((*pos.get(a)?, *pos.get(b)?))).collect(),
            });
        }
    }
    out
}

/// Per-dimension projections of each group with redundant accesses (same
/// projected address form over the same variables) removed.
pub fn project(groups: &[AccessGroup], dim: usize, cfg: &AnalysisConfig) -> Result<Vec<AccessGroup>> {
    groups
        .iter()
        .map(|g| {
            let mut seen = HashSet::new();
            let mut members = Vec::new();
            for a in &g.members {
                let sig = NormalizedAccess::new(a, cfg)?.row_signature(dim);
                if seen.insert(sig) {
                    members.push(a.project(dim));
                }
            }
            Ok(AccessGroup { memory: g.memory.clone(), members, exclusive: vec![] })
        })
        .collect()
}

/// A valid scheme with its costing artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub geometry: HyperplaneGeometry,
    pub p: Vec<u64>,
    pub metrics: SchemeMetrics,
    pub dag: ResolutionDag,
    pub predicted: Resources,
    pub duplication: u32,
    /// Fewest ports per bank the scheme needs.
    pub ports: u32,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SolveStats {
    pub groups: usize,
    pub instances: usize,
    pub candidates_examined: u64,
    pub flat_checks: u64,
    pub multidim_checks: u64,
    pub multidim_nodes: u64,
    /// Candidates skipped because an emptiness check ran out of budget.
    pub budget_skips: u64,
    pub solutions: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solutions: Vec<Solution>,
    pub stats: SolveStats,
}

impl SolveReport {
    pub fn summary(&self) -> String {
        let s = &self.stats;
        format!(
            "{} solution(s) from {} candidate(s); {} flat and {} multidimensional checks over {} group(s) of {} access(es) in {} ms",
            s.solutions, s.candidates_examined, s.flat_checks, s.multidim_checks, s.groups, s.instances, s.elapsed_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub budget: CandidateBudget,
    pub cfg: AnalysisConfig,
    pub objective: Objective,
    pub ports: u32,
    pub element_bits: u32,
    /// Resource model; the seeded default when `None`.
    pub model: Option<ResourceModel>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            budget: CandidateBudget::default(),
            cfg: AnalysisConfig::default(),
            objective: Objective::Lut,
            ports: 1,
            element_bits: 32,
            model: None,
        }
    }
}

impl SolveOptions {
    pub fn from_problem(p: &ProblemFile) -> Self {
        SolveOptions {
            budget: p.budget.clone(),
            cfg: p.analysis_config(),
            objective: p.objective,
            ports: p.memory.ports,
            element_bits: p.memory.element_bits,
            model: None,
        }
    }

    /// Uses a model trained with `seed` instead of the default one.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if seed != GbtParams::default().random_state {
            let params = GbtParams { random_state: seed, ..Default::default() };
            let ds = crate::costmodel::synth::generate(crate::costmodel::DEFAULT_ROWS, seed);
            self.model = Some(ResourceModel::train(&ds, &params).expect("synthetic dataset is well formed"));
        }
        self
    }
}

/// Normalized members of one group and which pairs may run together.
struct GroupData {
    norm: Vec<NormalizedAccess>,
    pairs: Vec<(usize, usize)>,
    source: AccessGroup,
}

impl GroupData {
    fn new(g: &AccessGroup, cfg: &AnalysisConfig) -> Result<Self> {
        let norm = g.members.iter().map(|a| NormalizedAccess::new(a, cfg)).collect::<Result<Vec<_>>>()?;
        let mut pairs = Vec::new();
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                if g.concurrent(i, j) {
                    pairs.push((i, j));
                }
            }
        }
        Ok(GroupData { norm, pairs, source: g.clone() })
    }
}

#[derive(Default)]
struct Counters {
    examined: AtomicU64,
    flat_checks: AtomicU64,
    multidim_checks: AtomicU64,
    budget_skips: AtomicU64,
}

/// `Ok(None)` when an emptiness check ran out of budget.
fn flat_valid(
    groups: &[GroupData],
    g: &HyperplaneGeometry,
    k: u32,
    budget: u64,
    ctr: &Counters,
) -> Result<Option<bool>> {
    let outcome = (|| -> Result<bool> {
        for gd in groups {
            if k <= 1 {
                for &(i, j) in &gd.pairs {
                    ctr.flat_checks.fetch_add(1, Ordering::Relaxed);
                    let p = build_joint_normalized(&[&gd.norm[i], &gd.norm[j]], g)?;
                    if !p.is_empty(budget)? {
                        return Ok(false);
                    }
                }
            } else {
                ctr.flat_checks.fetch_add(gd.pairs.len() as u64, Ordering::Relaxed);
                let refs: Vec<&NormalizedAccess> = gd.norm.iter().collect();
                if find_violation(&refs, &|i, j| gd.source.concurrent(i, j), g, k, budget)?.is_some() {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    })();
    match outcome {
        Ok(v) => Ok(Some(v)),
        Err(Error::BoundsBudgetExceeded { .. }) => {
            ctr.budget_skips.fetch_add(1, Ordering::Relaxed);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Valid flat geometries in priority order, at most `per_n` per bank count.
fn search_flat(
    groups: &[GroupData],
    dims: &[u64],
    k: u32,
    budget: &CandidateBudget,
    cfg: &AnalysisConfig,
    ctr: &Counters,
) -> Result<Vec<HyperplaneGeometry>> {
    let sizes: Vec<usize> = groups.iter().map(|g| g.norm.len()).collect();
    let stream = candidates(&sizes, dims, budget);
    let mut per_n: HashMap<u64, usize> = HashMap::new();
    let mut found = Vec::new();
    let mut examined = 0usize;
    const CHUNK: usize = 64;
    let mut rest = &stream[..];
    while !rest.is_empty() && found.len() < budget.max_solutions && examined < budget.max_candidates {
        let take = CHUNK.min(rest.len()).min(budget.max_candidates - examined);
        let (chunk, tail) = rest.split_at(take);
        rest = tail;
        let todo: Vec<&HyperplaneGeometry> =
            chunk.iter().filter(|g| per_n.get(&g.n[0]).copied().unwrap_or(0) < budget.per_n).collect();
        examined += todo.len();
        ctr.examined.fetch_add(todo.len() as u64, Ordering::Relaxed);
        let verdicts: Vec<Option<bool>> =
            todo.par_iter().map(|g| flat_valid(groups, g, k, cfg.budget, ctr)).collect::<Result<_>>()?;
        for (g, v) in todo.into_iter().zip(verdicts) {
            let slot = per_n.entry(g.n[0]).or_insert(0);
            if v == Some(true) && *slot < budget.per_n && found.len() < budget.max_solutions {
                *slot += 1;
                found.push(g.clone());
            }
        }
    }
    Ok(found)
}

/// One-dimensional geometry for a single array dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct DimCandidate {
    n: u64,
    b: u64,
    alpha: i64,
}

fn dim_candidates(extent: u64, max_n: u64, budget: &CandidateBudget) -> Vec<DimCandidate> {
    let mut out = vec![DimCandidate { n: 1, b: 1, alpha: 1 }];
    for b in 1..=budget.b_max {
        for n in 2..=max_n.min(extent) {
            for alpha in 1..=budget.alpha_max.min(n * b - 1) as i64 {
                if gcd(alpha, b as i64) == 1 && gcd_u(alpha as u64, n * b) <= b {
                    out.push(DimCandidate { n, b, alpha });
                }
            }
        }
    }
    out.truncate(budget.multidim_per_dim);
    out
}

/// Multidimensional search: one 1-D geometry per dimension such that every
/// concurrent pair is provably separated in at least one dimension.
struct MultidimSearch<'a> {
    rank: usize,
    dims: &'a [u64],
    /// Projected accesses per dimension (deduplicated representatives).
    reps: Vec<Vec<NormalizedAccess>>,
    /// `(rep index per dim)` for each global pair endpoint.
    pairs: Vec<(Vec<usize>, Vec<usize>)>,
    cands: Vec<Vec<DimCandidate>>,
    cache: HashMap<(usize, usize, usize, usize), bool>,
    budget: u64,
    max_banks: u64,
    nodes: u64,
    node_cap: u64,
    limit: usize,
    checks: u64,
    found: Vec<Vec<DimCandidate>>,
}

impl MultidimSearch<'_> {
    fn separated(&mut self, d: usize, c: usize, pair: usize) -> Result<bool> {
        let (a, b) = (self.pairs[pair].0[d], self.pairs[pair].1[d]);
        if a == b {
            return Ok(false);
        }
        let key = (d, c, a.min(b), a.max(b));
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        self.checks += 1;
        let dc = self.cands[d][c];
        let g = HyperplaneGeometry::flat(dc.n, dc.b, vec![dc.alpha], vec![self.dims[d]]);
        let poly = build_joint_normalized(&[&self.reps[d][a], &self.reps[d][b]], &g)?;
        let v = poly.is_empty(self.budget)?;
        self.cache.insert(key, v);
        Ok(v)
    }

    fn dfs(&mut self, d: usize, uncovered: Vec<usize>, banks: u64, chosen: &mut Vec<usize>) -> Result<()> {
        if self.found.len() >= self.limit || self.nodes >= self.node_cap {
            return Ok(());
        }
        self.nodes += 1;
        if d == self.rank {
            if uncovered.is_empty() {
                self.found.push(chosen.iter().enumerate().map(|(d, &c)| self.cands[d][c]).collect());
            }
            return Ok(());
        }
        for c in 0..self.cands[d].len() {
            let n = self.cands[d][c].n;
            if banks * n > self.max_banks {
                continue;
            }
            let last = d + 1 == self.rank;
            let mut left = Vec::with_capacity(uncovered.len());
            let mut ok = true;
            for &p in &uncovered {
                if !self.separated(d, c, p)? {
                    if last {
                        ok = false;
                        break;
                    }
                    left.push(p);
                }
            }
            // A dimension that separates nothing new only adds banks.
            if !ok || (n > 1 && left.len() == uncovered.len()) {
                continue;
            }
            chosen.push(c);
            self.dfs(d + 1, left, banks * n, chosen)?;
            chosen.pop();
            if self.found.len() >= self.limit || self.nodes >= self.node_cap {
                break;
            }
        }
        Ok(())
    }
}

fn search_multidim(
    groups: &[GroupData],
    dims: &[u64],
    budget: &CandidateBudget,
    cfg: &AnalysisConfig,
    ctr: &Counters,
) -> Result<(Vec<HyperplaneGeometry>, u64)> {
    let rank = dims.len();
    let sizes: Vec<usize> = groups.iter().map(|g| g.norm.len()).collect();
    let max_banks = budget.bank_cap(&sizes, dims);
    let mut reps: Vec<Vec<NormalizedAccess>> = vec![vec![]; rank];
    let mut rep_of: Vec<HashMap<_, usize>> = vec![HashMap::new(); rank];
    let mut endpoint = |a: &NormalizedAccess, reps: &mut Vec<Vec<NormalizedAccess>>| -> Vec<usize> {
        (0..rank)
            .map(|d| {
                let sig = a.row_signature(d);
                *rep_of[d].entry(sig).or_insert_with(|| {
                    reps[d].push(NormalizedAccess { rows: vec![a.rows[d].clone()], ..a.clone() });
                    reps[d].len() - 1
                })
            })
            .collect()
    };
    let mut pairs = Vec::new();
    for gd in groups {
        for &(i, j) in &gd.pairs {
            let a = endpoint(&gd.norm[i], &mut reps);
            let b = endpoint(&gd.norm[j], &mut reps);
            pairs.push((a, b));
        }
    }
    let cands = (0..rank).map(|d| dim_candidates(dims[d], max_banks, budget)).collect();
    let mut s = MultidimSearch {
        rank,
        dims,
        reps,
        pairs,
        cands,
        cache: HashMap::new(),
        budget: cfg.budget,
        max_banks,
        nodes: 0,
        node_cap: budget.multidim_nodes,
        limit: budget.multidim_solutions,
        checks: 0,
        found: vec![],
    };
    let all: Vec<usize> = (0..s.pairs.len()).collect();
    let res = s.dfs(0, all, 1, &mut Vec::new());
    ctr.multidim_checks.fetch_add(s.checks, Ordering::Relaxed);
    match res {
        Ok(()) => {}
        Err(Error::BoundsBudgetExceeded { .. }) => {
            ctr.budget_skips.fetch_add(1, Ordering::Relaxed);
        }
        Err(e) => return Err(e),
    }
    let geoms = s
        .found
        .iter()
        .map(|cs| {
            HyperplaneGeometry::multidim(
                cs.iter().map(|c| c.n).collect(),
                cs.iter().map(|c| c.b).collect(),
                cs.iter().map(|c| c.alpha).collect(),
                dims.to_vec(),
            )
        })
        .collect();
    Ok((geoms, s.nodes))
}

struct Costing<'a> {
    accesses: Vec<&'a AffineAccess>,
    readers: usize,
    writers: usize,
    groups: usize,
    depth: usize,
    opts: &'a SolveOptions,
    model: &'a ResourceModel,
}

impl Costing<'_> {
    fn finish(&self, g: HyperplaneGeometry, duplication: u32, ports: u32) -> Result<Option<Solution>> {
        let p = match g.select_parallelotope() {
            Ok(p) => p,
            Err(Error::NoValidP(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let metrics = g.metrics(&self.accesses, &p, &self.opts.cfg)?;
        let dag = build_resolution(&g, &p);
        let ctx = SchemeContext {
            geometry: &g,
            p: &p,
            metrics: &metrics,
            census: dag.census(),
            ports,
            element_bits: self.opts.element_bits,
            duplication,
            readers: self.readers,
            writers: self.writers,
            groups: self.groups,
            depth: self.depth,
        };
        let features = FeatureVector::from_scheme(&ctx);
        let predicted = self.model.predict(&features);
        Ok(Some(Solution { geometry: g, p, metrics, dag, predicted, duplication, ports, features }))
    }
}

/// Fewest ports in `1..=k` under which `g` stays conflict free.
fn min_ports(groups: &[GroupData], g: &HyperplaneGeometry, k: u32, budget: u64, ctr: &Counters) -> Result<u32> {
    for kk in 1..k {
        if flat_valid(groups, g, kk, budget, ctr)? == Some(true) {
            return Ok(kk);
        }
    }
    Ok(k)
}

fn rank_key(s: &Solution, objective: Objective) -> (f64, f64, f64, f64, u64, String) {
    let geometry = serde_json::to_string(&(&s.geometry, s.duplication, s.ports)).unwrap_or_default();
    (
        objective.pick(&s.predicted),
        s.predicted.lut,
        s.predicted.bram,
        s.predicted.ff,
        s.geometry.total_banks(),
        geometry,
    )
}

/// Groups, candidate search (flat, multidimensional, duplicated), costing
/// and ranking.
pub fn solve(program: &Program, opts: &SolveOptions) -> Result<SolveReport> {
    let start = Instant::now();
    opts.budget.check()?;
    let prepared = program.prepare(&opts.cfg, None)?;
    let model = opts.model.as_ref().unwrap_or_else(|| ResourceModel::default_models());
    let ctr = Counters::default();
    let k = opts.ports.max(1);
    let dims = &program.dims;
    let groups: Vec<GroupData> = prepared.groups.iter().map(|g| GroupData::new(g, &opts.cfg)).collect::<Result<_>>()?;
    let accesses: Vec<&AffineAccess> = prepared.instances.iter().map(|i| &i.access).collect();
    let costing = Costing {
        readers: accesses.iter().filter(|a| a.kind == AccessKind::Read).count(),
        writers: accesses.iter().filter(|a| a.kind == AccessKind::Write).count(),
        accesses,
        groups: prepared.groups.len(),
        depth: prepared.max_depth(),
        opts,
        model,
    };

    // (geometry, duplication, ports) in discovery order.
    let mut valid: Vec<(HyperplaneGeometry, u32, u32)> = Vec::new();
    for g in search_flat(&groups, dims, k, &opts.budget, &opts.cfg, &ctr)? {
        let ports = min_ports(&groups, &g, k, opts.cfg.budget, &ctr)?;
        valid.push((g, 1, ports));
    }
    let mut md_nodes = 0;
    if opts.budget.multidim && dims.len() >= 2 {
        let (geoms, nodes) = search_multidim(&groups, dims, &opts.budget, &opts.cfg, &ctr)?;
        md_nodes = nodes;
        valid.extend(geoms.into_iter().map(|g| (g, 1, 1)));
    }
    let max_readers = prepared.groups.iter().map(AccessGroup::readers).max().unwrap_or(0);
    for &d in &opts.budget.duplication {
        if d as usize > max_readers {
            continue;
        }
        let split = split_for_duplication(&prepared.groups, d);
        let split: Vec<GroupData> = split.iter().map(|g| GroupData::new(g, &opts.cfg)).collect::<Result<_>>()?;
        for g in search_flat(&split, dims, k, &opts.budget, &opts.cfg, &ctr)? {
            let ports = min_ports(&split, &g, k, opts.cfg.budget, &ctr)?;
            valid.push((g, d, ports));
        }
    }

    let mut seen = HashSet::new();
    valid.retain(|(g, d, _)| seen.insert((g.normalize(), *d)));
    let mut solutions: Vec<Solution> = valid
        .into_par_iter()
        .map(|(g, d, ports)| costing.finish(g, d, ports))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    solutions.sort_by(|a, b| {
        let (x, y) = (rank_key(a, opts.objective), rank_key(b, opts.objective));
        x.0.total_cmp(&y.0)
            .then(x.1.total_cmp(&y.1))
            .then(x.2.total_cmp(&y.2))
            .then(x.3.total_cmp(&y.3))
            .then(x.4.cmp(&y.4))
            .then(x.5.cmp(&y.5))
    });
    let stats = SolveStats {
        groups: prepared.groups.len(),
        instances: prepared.instances.len(),
        candidates_examined: ctr.examined.load(Ordering::Relaxed),
        flat_checks: ctr.flat_checks.load(Ordering::Relaxed),
        multidim_checks: ctr.multidim_checks.load(Ordering::Relaxed),
        multidim_nodes: md_nodes,
        budget_skips: ctr.budget_skips.load(Ordering::Relaxed),
        solutions: solutions.len(),
        elapsed_ms: start.elapsed().as_millis() as u64,
    };
    if solutions.is_empty() {
        if stats.budget_skips > 0 {
            return Err(Error::BoundsBudgetExceeded {
                volume: opts.cfg.budget.saturating_add(1),
                budget: opts.cfg.budget,
            });
        }
        return Err(Error::NoSolution);
    }
    Ok(SolveReport { solutions, stats })
}

pub fn solve_problem(problem: &ProblemFile) -> Result<SolveReport> {
    solve(&problem.program(), &SolveOptions::from_problem(problem))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiers_and_order() {
        let b = CandidateBudget::default();
        let c = candidates(&[4], &[102], &b);
        let pos = |n: u64| c.iter().position(|g| g.n[0] == n).unwrap();
        assert!(pos(4) < pos(5));
        assert!(pos(6) < pos(7));
        assert_eq!(c[0], HyperplaneGeometry::flat(1, 1, vec![1], vec![102]));
        let c = candidates(&[2, 3], &[64], &b);
        assert_eq!(c.iter().find(|g| g.n[0] > 1).unwrap().n[0], 6);
        assert_eq!(group_lcm(&[2, 3]), 6);
    }

    #[test]
    fn no_gcd_equivalent_candidates() {
        let c = candidates(&[4], &[32, 32], &CandidateBudget::default());
        let mut seen = HashSet::new();
        for g in &c {
            assert!(seen.insert(g.normalize()), "{g:?}");
        }
    }

    #[test]
    fn alpha_vector_order() {
        let v = alpha_vectors(2, 2, 100);
        assert_eq!(v[..3], [vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(v.len(), 8);
    }

    #[test]
    fn friendly_constants() {
        let f: Vec<u64> = (1..=12).filter(|&c| !rewrite_friendly(c)).collect();
        assert_eq!(f, vec![11]);
    }
}
