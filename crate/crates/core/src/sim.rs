//! Brute-force replay of an unrolled program against a banking scheme.
//!
//! Accesses of a group that share a variable (a synchronized iteration
//! index or a shared symbol) are replayed together: every assignment of
//! their shared variables is one cycle, and each access then reaches the
//! banks given by all values of its private variables (unsynchronized
//! phases, private symbols). Accesses with no variable in common are
//! independent, so their worst cycles add up per bank.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HyperplaneGeometry;
use crate::io::SchemeEntry;
use crate::polytope::{AffineAccess, AnalysisConfig, SyncClass, VarKey};
use crate::program::{AccessGroup, Program};
use crate::rewrite::{build_resolution, ResolutionDag};
use crate::search::split_for_duplication;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayOptions {
    /// Resolved accesses before switching to sampled cycles.
    pub budget: u64,
    pub seed: u64,
    /// Record up to this many cycles in the trace.
    pub record: usize,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions { budget: 1_000_000, seed: 0, record: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub access: String,
    pub uid: Vec<u32>,
    pub address: Vec<i64>,
    pub bank: u64,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCycle {
    pub group: usize,
    /// Shared variable values of this cycle.
    pub assignment: BTreeMap<String, i64>,
    pub active: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ReplayTrace {
    pub cycles: Vec<TraceCycle>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    PortConflict { bank: u64, ports: u32, accesses: Vec<String> },
    OffsetOverflow { access: String, address: Vec<i64>, offset: u64, capacity: u64 },
    DagMismatch { access: String, address: Vec<i64>, expected: (Vec<u64>, u64), dag: (Vec<u64>, Option<u64>) },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub group: usize,
    /// Variable values of the violating cycle, one map per independent
    /// cluster involved.
    pub cycle: Vec<BTreeMap<String, i64>>,
    pub violation: Violation,
}

impl ConflictReport {
    pub fn render(&self) -> String {
        let cycle: Vec<String> = self
            .cycle
            .iter()
            .map(|m| m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" "))
            .collect();
        let what = match &self.violation {
            Violation::PortConflict { bank, ports, accesses } => {
                format!(
                    "bank {bank} receives {} accesses with {ports} port(s): {}",
                    accesses.len(),
                    accesses.join(", ")
                )
            }
            Violation::OffsetOverflow { access, address, offset, capacity } => {
                format!("{access} at {address:?} resolves to offset {offset} >= capacity {capacity}")
            }
            Violation::DagMismatch { access, address, expected, dag } => {
                format!("{access} at {address:?}: equations give {expected:?}, datapath gives {dag:?}")
            }
        };
        format!("conflict in group {} at [{}]: {what}", self.group, cycle.join(" | "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ReplayOutcome {
    pub cycles: u64,
    pub resolved: u64,
    pub out_of_bounds: u64,
    /// False when some cluster was sampled instead of fully enumerated.
    pub exhaustive: bool,
    pub conflict: Option<ConflictReport>,
    pub trace: ReplayTrace,
}

impl ReplayOutcome {
    pub fn is_clean(&self) -> bool {
        self.conflict.is_none()
    }
}

/// A scheme made concrete for one array.
struct Resolved {
    geometry: HyperplaneGeometry,
    p: Vec<u64>,
    dag: ResolutionDag,
    capacity: u64,
    padded: Vec<u64>,
    ports: u32,
}

impl Resolved {
    fn new(entry: &SchemeEntry, dims: &[u64], ports: u32) -> Result<Self> {
        let mut geometry = entry.geometry.clone();
        if geometry.dims.is_empty() {
            geometry.dims = dims.to_vec();
        }
        if geometry.dims != dims {
            return Err(Error::DimensionMismatch(format!("scheme dims {:?} vs memory {dims:?}", geometry.dims)));
        }
        geometry.check()?;
        let p = match &entry.p {
            Some(p) if p.len() == dims.len() && !p.contains(&0) => p.clone(),
            Some(_) => return Err(Error::invalid("partition region P does not match the memory rank")),
            None => geometry.select_parallelotope()?,
        };
        let dag = entry.dag.clone().unwrap_or_else(|| build_resolution(&geometry, &p));
        let capacity = entry.metrics.as_ref().map(|m| m.capacity).unwrap_or_else(|| geometry.enumerated_capacity(&p));
        let padded = crate::geometry::padded_dims(dims, &p);
        Ok(Resolved { geometry, p, dag, capacity, padded, ports: entry.ports.unwrap_or(ports).max(1) })
    }
}

/// Variable keys of one access, mirroring the synchronization classes.
fn access_keys(a: &AffineAccess) -> (Vec<VarKey>, Vec<VarKey>) {
    let iters = a.iterators.iter().map(|it| VarKey::Iter(it.name.clone())).collect();
    let syms = a
        .symbols
        .iter()
        .enumerate()
        .map(|(slot, s)| {
            let args: Option<Vec<(String, i64, i64)>> = s
                .args
                .iter()
                .map(|name| {
                    let it = a.iterators.iter().find(|it| &it.name == name)?;
                    (it.sync == SyncClass::Synchronized).then(|| (name.clone(), it.start, it.step))
                })
                .collect();
            match args {
                Some(args) => VarKey::Symbol { name: s.name.clone(), args },
                None => VarKey::Private { access: a.id.clone(), uid: a.uid.clone(), slot },
            }
        })
        .collect();
    (iters, syms)
}

struct Member<'a> {
    index: usize,
    access: &'a AffineAccess,
    iters: Vec<usize>,
    syms: Vec<usize>,
    private: Vec<usize>,
    /// Own inclusive range of every variable the member uses.
    bounds: HashMap<usize, (i64, i64)>,
}

struct Cluster<'a> {
    members: Vec<Member<'a>>,
    shared: Vec<usize>,
}

/// Variable table of one group: key and the union of member ranges.
struct Vars {
    keys: Vec<VarKey>,
    range: Vec<(i64, i64)>,
}

fn mixed_volume(extents: impl Iterator<Item = u64>) -> u64 {
    extents.fold(1u64, |v, e| v.saturating_mul(e))
}

struct Replayer<'a> {
    scheme: &'a Resolved,
    dims: &'a [u64],
    opts: &'a ReplayOptions,
    rng: ChaCha8Rng,
    out: ReplayOutcome,
    checked: HashSet<Vec<i64>>,
}

impl Replayer<'_> {
    /// Bank of an in-bounds address after checking datapath and capacity.
    fn resolve(&mut self, access: &AffineAccess, x: &[i64]) -> std::result::Result<Option<(u64, u64)>, Violation> {
        if x.iter().zip(self.dims).any(|(&v, &d)| v < 0 || v as u64 >= d) {
            self.out.out_of_bounds += 1;
            return Ok(None);
        }
        self.out.resolved += 1;
        let g = &self.scheme.geometry;
        let bank = g.bank_id(x);
        let offset = g.bank_offset(x, &self.scheme.p).expect("in bounds");
        if !self.checked.contains(x) {
            let vec = g.bank_vector(x);
            let dag = self.scheme.dag.resolve(x);
            if dag.0 != vec || dag.1 != Some(offset) {
                return Err(Violation::DagMismatch {
                    access: access.id.clone(),
                    address: x.to_vec(),
                    expected: (vec, offset),
                    dag,
                });
            }
            if offset >= self.scheme.capacity {
                return Err(Violation::OffsetOverflow {
                    access: access.id.clone(),
                    address: x.to_vec(),
                    offset,
                    capacity: self.scheme.capacity,
                });
            }
            debug_assert!(x.iter().zip(&self.scheme.padded).all(|(&v, &d)| (v as u64) < d));
            self.checked.insert(x.to_vec());
        }
        Ok(Some((bank, offset)))
    }

    /// Banks `m` reaches with shared variables fixed in `values`.
    fn member_banks(
        &mut self,
        m: &Member,
        vars: &Vars,
        values: &mut [i64],
        record: Option<&mut Vec<TraceEntry>>,
    ) -> std::result::Result<BTreeSet<u64>, Violation> {
        let mut banks = BTreeSet::new();
        let idle = m.bounds.iter().any(|(v, &(lo, hi))| !m.private.contains(v) && !(lo..=hi).contains(&values[*v]));
        let extents: Vec<u64> =
            m.private.iter().map(|&v| (vars.range[v].1 - vars.range[v].0 + 1).max(0) as u64).collect();
        if idle || extents.contains(&0) {
            return Ok(banks);
        }
        let mut rec = record;
        let mut pt = vec![0u64; extents.len()];
        let a = m.access;
        loop {
            for (slot, &v) in m.private.iter().enumerate() {
                values[v] = vars.range[v].0 + pt[slot] as i64;
            }
            let iters: Vec<i64> = m.iters.iter().zip(&a.iterators).map(|(&v, it)| it.value(values[v] as u64)).collect();
            let syms: Vec<i64> = m.syms.iter().map(|&v| values[v]).collect();
            let x = a.address(&iters, &syms);
            if let Some((bank, offset)) = self.resolve(a, &x)? {
                banks.insert(bank);
                if let Some(r) = rec.as_deref_mut() {
                    r.push(TraceEntry { access: a.id.clone(), uid: a.uid.clone(), address: x, bank, offset });
                }
            }
            let mut d = extents.len();
            loop {
                if d == 0 {
                    return Ok(banks);
                }
                d -= 1;
                pt[d] += 1;
                if pt[d] < extents[d] {
                    break;
                }
                pt[d] = 0;
            }
        }
    }
}

/// Largest subset of `hits` that is pairwise concurrent.
fn max_clique(hits: &[usize], concurrent: &dyn Fn(usize, usize) -> bool) -> Vec<usize> {
    fn rec(cand: &[usize], cur: &mut Vec<usize>, best: &mut Vec<usize>, concurrent: &dyn Fn(usize, usize) -> bool) {
        if cur.len() > best.len() {
            *best = cur.clone();
        }
        for (i, &v) in cand.iter().enumerate() {
            if cur.len() + cand.len() - i <= best.len() {
                return;
            }
            let next: Vec<usize> = cand[i + 1..].iter().copied().filter(|&u| concurrent(u, v)).collect();
            cur.push(v);
            rec(&next, cur, best, concurrent);
            cur.pop();
        }
    }
    let mut best = Vec::new();
    rec(hits, &mut Vec::new(), &mut best, concurrent);
    best
}

/// Worst per-bank load of one cluster: bank -> (hitting members, cycle).
type Peaks = BTreeMap<u64, (Vec<usize>, BTreeMap<String, i64>)>;

fn replay_group(
    rp: &mut Replayer,
    gi: usize,
    group: &AccessGroup,
    cfg: &AnalysisConfig,
) -> Result<Option<ConflictReport>> {
    // Variable table; a member idles while a shared value is outside its own range.
    let mut vars = Vars { keys: vec![], range: vec![] };
    let mut index: HashMap<VarKey, usize> = HashMap::new();
    let mut key = |k: VarKey, lo: i64, hi: i64, vars: &mut Vars| -> usize {
        if let Some(&i) = index.get(&k) {
            let r = &mut vars.range[i];
            *r = (r.0.min(lo), r.1.max(hi));
            return i;
        }
        vars.keys.push(k.clone());
        vars.range.push((lo, hi));
        index.insert(k, vars.keys.len() - 1);
        vars.keys.len() - 1
    };
    let mut members = Vec::new();
    for (mi, a) in group.members.iter().enumerate() {
        let (ik, sk) = access_keys(a);
        let mut bounds = HashMap::new();
        let iters = ik
            .into_iter()
            .zip(&a.iterators)
            .map(|(k, it)| {
                let r = (0, it.count() as i64 - 1);
                let v = key(k, r.0, r.1, &mut vars);
                bounds.insert(v, r);
                v
            })
            .collect();
        let syms = sk
            .into_iter()
            .map(|k| {
                let r = (cfg.symbol_range.0, cfg.symbol_range.1 - 1);
                let v = key(k, r.0, r.1, &mut vars);
                bounds.insert(v, r);
                v
            })
            .collect();
        members.push(Member { index: mi, access: a, iters, syms, private: vec![], bounds });
    }
    let mut users = vec![BTreeSet::new(); vars.keys.len()];
    for m in &members {
        for &v in m.iters.iter().chain(&m.syms) {
            users[v].insert(m.index);
        }
    }
    // Clusters: union of members sharing a variable; one cluster overall
    // when some pairs never run together.
    let n = members.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for u in &users {
        let mut it = u.iter();
        if let Some(&first) = it.next() {
            for &o in it {
                let (a, b) = (find(&mut parent, first), find(&mut parent, o));
                parent[b] = a;
            }
        }
    }
    if !group.exclusive.is_empty() {
        for i in 1..n {
            let (a, b) = (find(&mut parent, 0), find(&mut parent, i));
            parent[b] = a;
        }
    }
    let mut by_root: BTreeMap<usize, Vec<Member>> = BTreeMap::new();
    for mut m in members {
        let mut own: BTreeSet<usize> = m.iters.iter().chain(&m.syms).copied().collect();
        own.retain(|&v| users[v].len() == 1);
        m.private = own.into_iter().collect();
        by_root.entry(find(&mut parent, m.index)).or_default().push(m);
    }
    let clusters: Vec<Cluster> = by_root
        .into_values()
        .map(|members| {
            let shared: BTreeSet<usize> = members
                .iter()
                .flat_map(|m| m.iters.iter().chain(&m.syms))
                .copied()
                .filter(|&v| users[v].len() > 1)
                .collect();
            Cluster { members, shared: shared.into_iter().collect() }
        })
        .collect();

    let ports = rp.scheme.ports as usize;
    let concurrent = |a: usize, b: usize| group.concurrent(a, b);
    let mut all_peaks: Vec<Peaks> = Vec::new();
    for cl in &clusters {
        if cl.shared.iter().any(|&v| vars.range[v].1 < vars.range[v].0) {
            continue;
        }
        let extents: Vec<u64> =
            cl.shared.iter().map(|&v| (vars.range[v].1 - vars.range[v].0 + 1).max(0) as u64).collect();
        let cycles = mixed_volume(extents.iter().copied());
        let per_cycle: u64 = cl
            .members
            .iter()
            .map(|m| mixed_volume(m.private.iter().map(|&v| (vars.range[v].1 - vars.range[v].0 + 1).max(0) as u64)))
            .sum();
        if per_cycle > rp.opts.budget {
            return Err(Error::BoundsBudgetExceeded { volume: per_cycle, budget: rp.opts.budget });
        }
        let wanted = (rp.opts.budget / per_cycle.max(1)).max(1);
        let picks: Vec<u64> = if cycles <= wanted {
            (0..cycles).collect()
        } else {
            rp.out.exhaustive = false;
            let width = cycles / wanted;
            (0..wanted).map(|s| s * width + rp.rng.random_range(0..width)).collect()
        };
        let mut peaks: Peaks = BTreeMap::new();
        let mut values = vec![0i64; vars.keys.len()];
        for idx in picks {
            rp.out.cycles += 1;
            let mut rem = idx;
            for (slot, &v) in cl.shared.iter().enumerate().rev() {
                values[v] = vars.range[v].0 + (rem % extents[slot]) as i64;
                rem /= extents[slot];
            }
            let assignment = |values: &[i64]| -> BTreeMap<String, i64> {
                cl.shared.iter().map(|&v| (vars.keys[v].label(), values[v])).collect()
            };
            let recording = rp.out.trace.cycles.len() < rp.opts.record;
            let mut entries = Vec::new();
            let mut hits: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for m in &cl.members {
                let rec = if recording { Some(&mut entries) } else { None };
                match rp.member_banks(m, &vars, &mut values, rec) {
                    Ok(banks) => {
                        for b in banks {
                            hits.entry(b).or_default().push(m.index);
                        }
                    }
                    Err(v) => {
                        return Ok(Some(ConflictReport { group: gi, cycle: vec![assignment(&values)], violation: v }));
                    }
                }
            }
            if recording {
                rp.out.trace.cycles.push(TraceCycle { group: gi, assignment: assignment(&values), active: entries });
            }
            for (bank, h) in hits {
                let clique = max_clique(&h, &concurrent);
                if clique.len() > ports {
                    let names = clique.iter().map(|&i| group.members[i].id.clone()).collect();
                    return Ok(Some(ConflictReport {
                        group: gi,
                        cycle: vec![assignment(&values)],
                        violation: Violation::PortConflict { bank, ports: ports as u32, accesses: names },
                    }));
                }
                let e = peaks.entry(bank).or_insert_with(|| (vec![], BTreeMap::new()));
                if clique.len() > e.0.len() {
                    *e = (clique, assignment(&values));
                }
            }
        }
        all_peaks.push(peaks);
    }
    // Independent clusters can line up their worst cycles.
    let banks: BTreeSet<u64> = all_peaks.iter().flat_map(|p| p.keys().copied()).collect();
    for bank in banks {
        let involved: Vec<&(Vec<usize>, BTreeMap<String, i64>)> =
            all_peaks.iter().filter_map(|p| p.get(&bank)).collect();
        let load: usize = involved.iter().map(|e| e.0.len()).sum();
        if load > ports {
            let mut names: Vec<String> =
                involved.iter().flat_map(|e| e.0.iter().map(|&i| group.members[i].id.clone())).collect();
            names.sort();
            return Ok(Some(ConflictReport {
                group: gi,
                cycle: involved.iter().map(|e| e.1.clone()).collect(),
                violation: Violation::PortConflict { bank, ports: ports as u32, accesses: names },
            }));
        }
    }
    Ok(None)
}

/// Replays every access group of `program` under `scheme`. Dynamic bounds
/// take `concrete` values when given, else the configured clamp.
pub fn replay(
    program: &Program,
    scheme: &SchemeEntry,
    ports: u32,
    concrete: Option<&BTreeMap<String, i64>>,
    cfg: &AnalysisConfig,
    opts: &ReplayOptions,
) -> Result<ReplayOutcome> {
    let prepared = program.prepare(cfg, concrete)?;
    let resolved = Resolved::new(scheme, &program.dims, ports)?;
    let groups = split_for_duplication(&prepared.groups, scheme.duplication);
    let mut rp = Replayer {
        scheme: &resolved,
        dims: &program.dims,
        opts,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        out: ReplayOutcome { exhaustive: true, ..Default::default() },
        checked: HashSet::new(),
    };
    for (gi, g) in groups.iter().enumerate() {
        if let Some(report) = replay_group(&mut rp, gi, g, cfg)? {
            rp.out.conflict = Some(report);
            break;
        }
    }
    Ok(rp.out)
}
