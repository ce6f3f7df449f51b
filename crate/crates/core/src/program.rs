//! Controller hierarchy: unrolling, lowest common ancestors, concurrency,
//! access grouping and per-lane iterator synchronization.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::mixed_radix_rank;
use crate::polytope::{AccessKind, AffineAccess, AnalysisConfig, IteratorDomain, SymbolRef, SyncClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Inner,
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Schedule {
    Sequential,
    Pipelined,
    ForkJoin,
    Fork,
    Streaming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum UnrollStrategy {
    #[default]
    ForkJoinOfPipelines,
    PipelineOfForkJoins,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Controller {
    pub id: String,
    pub level: Level,
    pub schedule: Schedule,
    #[serde(default)]
    pub counters: Vec<IteratorDomain>,
    #[serde(default)]
    pub children: Vec<Controller>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initiation_interval: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<u32>,
    /// Controller this node was cloned from, for unrolled trees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

impl Controller {
    pub fn new(id: impl Into<String>, level: Level, schedule: Schedule) -> Self {
        Controller {
            id: id.into(),
            level,
            schedule,
            counters: vec![],
            children: vec![],
            initiation_interval: None,
            latency: None,
            origin: None,
        }
    }

    pub fn with_counter(mut self, c: IteratorDomain) -> Self {
        self.counters.push(c);
        self
    }

    pub fn with_child(mut self, c: Controller) -> Self {
        self.children.push(c);
        self
    }

    /// Lane count: product of counter parallelizations.
    pub fn lanes(&self) -> u32 {
        self.counters.iter().map(|c| c.parallelization).product()
    }

    pub fn check(&self) -> Result<()> {
        let mut ids = HashSet::new();
        self.check_rec(&mut ids)
    }

    fn check_rec<'a>(&'a self, ids: &mut HashSet<&'a str>) -> Result<()> {
        if !ids.insert(&self.id) {
            return Err(Error::invalid(format!("duplicate controller id `{}`", self.id)));
        }
        if self.level == Level::Inner && !self.children.is_empty() {
            return Err(Error::invalid(format!("inner controller `{}` has children", self.id)));
        }
        if self.level == Level::Outer && (self.initiation_interval.is_some() || self.latency.is_some()) {
            return Err(Error::invalid(format!("outer controller `{}` carries ii/latency", self.id)));
        }
        for c in &self.counters {
            c.check()?;
        }
        self.children.iter().try_for_each(|c| c.check_rec(ids))
    }

    pub fn find(&self, id: &str) -> Option<&Controller> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(id))
    }

    /// Child-index path from `self` to the node `id`.
    pub fn path_to(&self, id: &str) -> Option<Vec<usize>> {
        if self.id == id {
            return Some(vec![]);
        }
        self.children.iter().enumerate().find_map(|(i, c)| {
            c.path_to(id).map(|mut p| {
                p.insert(0, i);
                p
            })
        })
    }

    pub fn at(&self, path: &[usize]) -> &Controller {
        path.iter().fold(self, |node, &i| &node.children[i])
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Controller::node_count).sum::<usize>()
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Controller)) {
        f(self);
        self.children.iter().for_each(|c| c.visit(f));
    }

    /// Controllers from the root down to `id`, inclusive.
    pub fn chain(&self, id: &str) -> Option<Vec<&Controller>> {
        let path = self.path_to(id)?;
        let mut out = vec![self];
        let mut node = self;
        for i in path {
            node = &node.children[i];
            out.push(node);
        }
        Some(out)
    }
}

/// Lowest common ancestor of two controllers in one tree. A node paired with
/// itself yields its parent.
pub fn lca<'a>(root: &'a Controller, a: &str, b: &str) -> Result<&'a Controller> {
    let (pa, pb) = match (root.path_to(a), root.path_to(b)) {
        (Some(pa), Some(pb)) => (pa, pb),
        _ => return Err(Error::DisjointTrees(a.to_string(), b.to_string())),
    };
    if pa == pb {
        return match pa.split_last() {
            Some((_, parent)) => Ok(root.at(parent)),
            None => Err(Error::DisjointTrees(a.to_string(), b.to_string())),
        };
    }
    Ok(root.at(&common_prefix(&pa, &pb)))
}

fn common_prefix(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().zip(b).take_while(|(x, y)| x == y).map(|(x, _)| *x).collect()
}

/// Whether two accesses below `lca` can be active in the same cycle.
pub fn is_concurrent(lca: &Controller, a: &AffineAccess, b: &AffineAccess) -> Result<bool> {
    match lca.level {
        Level::Outer => Ok(matches!(lca.schedule, Schedule::ForkJoin | Schedule::Streaming)),
        Level::Inner => match (a.cycle, b.cycle, lca.initiation_interval) {
            (Some(x), Some(y), Some(ii)) => Ok(x.abs_diff(y) < ii),
            (None, None, _) => Ok(true),
            _ => Err(Error::MissingSchedule(format!("`{}` and `{}` under inner controller `{}`", a.id, b.id, lca.id))),
        },
    }
}

/// An access as written in the program, before unrolling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessTemplate {
    pub id: String,
    pub controller: String,
    pub kind: AccessKind,
    pub matrix: Vec<Vec<i64>>,
    pub offset: Vec<i64>,
    pub iterators: Vec<String>,
    #[serde(default)]
    pub symbols: Vec<SymbolRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<u32>,
}

/// Accesses that may be active together on one memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessGroup {
    pub memory: String,
    pub members: Vec<AffineAccess>,
    /// Member index pairs that ended up grouped but never run together.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusive: Vec<(usize, usize)>,
}

impl AccessGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn concurrent(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        i != j && !self.exclusive.contains(&key)
    }

    pub fn readers(&self) -> usize {
        self.members.iter().filter(|a| a.kind == AccessKind::Read).count()
    }

    pub fn writers(&self) -> usize {
        self.members.len() - self.readers()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub memory: String,
    pub dims: Vec<u64>,
    pub root: Controller,
    pub accesses: Vec<AccessTemplate>,
    #[serde(default)]
    pub strategy: UnrollStrategy,
}

/// One unrolled access and where it sits in the unrolled tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub access: AffineAccess,
    pub path: Vec<usize>,
    pub template: usize,
}

/// Output of unrolling, grouping and synchronization.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tree: Controller,
    pub instances: Vec<Instance>,
    pub groups: Vec<AccessGroup>,
}

impl Prepared {
    pub fn max_depth(&self) -> usize {
        fn depth(c: &Controller) -> usize {
            1 + c.children.iter().map(depth).max().unwrap_or(0)
        }
        depth(&self.tree)
    }
}

impl Program {
    pub fn check(&self) -> Result<()> {
        self.root.check()?;
        let mut ids = HashSet::new();
        for a in &self.accesses {
            if !ids.insert(&a.id) {
                return Err(Error::invalid(format!("duplicate access id `{}`", a.id)));
            }
            let ctrl = self.root.find(&a.controller).ok_or_else(|| {
                Error::invalid(format!("access `{}` names unknown controller `{}`", a.id, a.controller))
            })?;
            if ctrl.level != Level::Inner {
                return Err(Error::invalid(format!("access `{}` sits in outer controller `{}`", a.id, a.controller)));
            }
            if a.matrix.len() != self.dims.len() || a.offset.len() != self.dims.len() {
                return Err(Error::DimensionMismatch(format!(
                    "access `{}` has {} rows, memory has {} dims",
                    a.id,
                    a.matrix.len(),
                    self.dims.len()
                )));
            }
            let chain = self.root.chain(&a.controller).expect("found above");
            for name in &a.iterators {
                if !chain.iter().any(|c| c.counters.iter().any(|it| &it.name == name)) {
                    return Err(Error::invalid(format!("access `{}` uses unknown iterator `{name}`", a.id)));
                }
            }
        }
        Ok(())
    }

    /// Unrolled tree, synchronized instances and access groups. Dynamic
    /// bounds take `concrete` values when given, else the configured clamp.
    pub fn prepare(&self, cfg: &AnalysisConfig, concrete: Option<&BTreeMap<String, i64>>) -> Result<Prepared> {
        self.check()?;
        let root = self.bind_dynamic(cfg, concrete)?;
        let unsync = unsync_controllers(&root, self.strategy);
        let mut b = Builder { program: self, root: &root, unsync: &unsync, instances: vec![] };
        let tree = match self.strategy {
            UnrollStrategy::ForkJoinOfPipelines => b.fop(&root, &[], &[], vec![]),
            UnrollStrategy::PipelineOfForkJoins => b.pof(&root, &[], &[], vec![]),
        }?;
        let mut instances = b.instances;
        instances.sort_by(|x, y| x.template.cmp(&y.template).then_with(|| x.access.uid.cmp(&y.access.uid)));
        let groups = group_instances(&tree, &instances, &self.memory)?;
        Ok(Prepared { tree, instances, groups })
    }

    fn bind_dynamic(&self, cfg: &AnalysisConfig, concrete: Option<&BTreeMap<String, i64>>) -> Result<Controller> {
        let mut root = self.root.clone();
        fn rec(c: &mut Controller, cfg: &AnalysisConfig, concrete: Option<&BTreeMap<String, i64>>) -> Result<()> {
            for it in &mut c.counters {
                let Some(dyn_bound) = &it.dynamic else { continue };
                let clamp = it.start + cfg.dynamic_clamp * it.step;
                it.stop = match concrete.and_then(|m| m.get(&dyn_bound.name)) {
                    Some(&v) => {
                        let probe = IteratorDomain { stop: v, ..it.clone() };
                        let bound = IteratorDomain { stop: clamp, ..it.clone() };
                        probe.check()?;
                        if probe.count() > bound.count() {
                            return Err(Error::invalid(format!(
                                "concrete bound {v} for `{}` exceeds clamp {clamp}",
                                dyn_bound.name
                            )));
                        }
                        v
                    }
                    None => clamp,
                };
            }
            c.children.iter_mut().try_for_each(|ch| rec(ch, cfg, concrete))
        }
        rec(&mut root, cfg, concrete)?;
        Ok(root)
    }
}

/// Tree unrolling alone.
pub fn unroll(root: &Controller, strategy: UnrollStrategy) -> Result<Controller> {
    let program = Program { memory: String::new(), dims: vec![], root: root.clone(), accesses: vec![], strategy };
    let unsync = BTreeSet::new();
    let mut b = Builder { program: &program, root, unsync: &unsync, instances: vec![] };
    match strategy {
        UnrollStrategy::ForkJoinOfPipelines => b.fop(root, &[], &[], vec![]),
        UnrollStrategy::PipelineOfForkJoins => b.pof(root, &[], &[], vec![]),
    }
}

/// Controllers whose counters drift apart between lanes: under FoP every
/// controller below a parallel outer ancestor of a dynamic-bound loop.
fn unsync_controllers(root: &Controller, strategy: UnrollStrategy) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    if strategy != UnrollStrategy::ForkJoinOfPipelines {
        return out;
    }
    let mut dynamic = Vec::new();
    root.visit(&mut |c| {
        if c.counters.iter().any(|it| it.dynamic.is_some()) {
            dynamic.push(c.id.clone());
        }
    });
    for id in dynamic {
        let chain = root.chain(&id).expect("visited");
        for anc in &chain[..chain.len() - 1] {
            if anc.level == Level::Outer && anc.lanes() > 1 {
                for ch in &anc.children {
                    ch.visit(&mut |c| {
                        out.insert(c.id.clone());
                    });
                }
            }
        }
    }
    out
}

struct Builder<'a> {
    program: &'a Program,
    root: &'a Controller,
    unsync: &'a BTreeSet<String>,
    instances: Vec<Instance>,
}

fn suffixed(id: &str, lanes: &[u32], radix: &[u32]) -> String {
    if radix.iter().all(|&r| r <= 1) {
        id.to_string()
    } else {
        let parts: Vec<String> = lanes.iter().map(u32::to_string).collect();
        format!("{id}@{}", parts.join("."))
    }
}

impl Builder<'_> {
    fn copy(&self, c: &Controller, lanes: &[u32], radix: &[u32]) -> Controller {
        Controller { id: suffixed(&c.id, lanes, radix), children: vec![], origin: Some(c.id.clone()), ..c.clone() }
    }

    fn fork_join(id: String) -> Controller {
        let mut fj = Controller::new(id, Level::Outer, Schedule::ForkJoin);
        fj.origin = None;
        fj
    }

    /// ForkJoin-of-Pipelines: each child of a parallel controller is wrapped
    /// in a ForkJoin over its lane clones.
    fn fop(&mut self, c: &Controller, lanes: &[u32], radix: &[u32], path: Vec<usize>) -> Result<Controller> {
        let mut node = self.copy(c, lanes, radix);
        if c.level == Level::Inner {
            self.emit(c, lanes, radix, &path)?;
            return Ok(node);
        }
        let l = c.lanes();
        let mut radix2 = radix.to_vec();
        radix2.push(l);
        for (ci, ch) in c.children.iter().enumerate() {
            let mut p = path.clone();
            p.push(ci);
            if l > 1 {
                let mut fj = Self::fork_join(format!("fj:{}", suffixed(&ch.id, lanes, radix)));
                for lane in 0..l {
                    let mut ln = lanes.to_vec();
                    ln.push(lane);
                    let mut pp = p.clone();
                    pp.push(lane as usize);
                    fj.children.push(self.fop(ch, &ln, &radix2, pp)?);
                }
                node.children.push(fj);
            } else {
                let mut ln = lanes.to_vec();
                ln.push(0);
                node.children.push(self.fop(ch, &ln, &radix2, p)?);
            }
        }
        Ok(node)
    }

    /// Pipeline-of-ForkJoins: a parallel controller becomes a ForkJoin over
    /// whole clones of itself.
    fn pof(&mut self, c: &Controller, lanes: &[u32], radix: &[u32], path: Vec<usize>) -> Result<Controller> {
        let l = c.lanes();
        if c.level == Level::Inner {
            self.emit(c, lanes, radix, &path)?;
            return Ok(self.copy(c, lanes, radix));
        }
        let mut radix2 = radix.to_vec();
        radix2.push(l);
        let build = |me: &mut Self, lane: u32, path: Vec<usize>| -> Result<Controller> {
            let mut ln = lanes.to_vec();
            ln.push(lane);
            let mut node = me.copy(c, &ln, &radix2);
            for (ci, ch) in c.children.iter().enumerate() {
                let mut p = path.clone();
                p.push(ci);
                node.children.push(me.pof(ch, &ln, &radix2, p)?);
            }
            Ok(node)
        };
        if l > 1 {
            let mut fj = Self::fork_join(format!("fj:{}", suffixed(&c.id, lanes, radix)));
            for lane in 0..l {
                let mut p = path.clone();
                p.push(lane as usize);
                fj.children.push(build(self, lane, p)?);
            }
            Ok(fj)
        } else {
            build(self, 0, path)
        }
    }

    /// Instances of every access in inner controller `c`, one per vector lane.
    fn emit(&mut self, c: &Controller, lanes: &[u32], radix: &[u32], path: &[usize]) -> Result<()> {
        let chain = self.root.chain(&c.id).expect("node from this tree");
        let mut full_radix = radix.to_vec();
        full_radix.push(c.lanes());
        let node_id = suffixed(&c.id, lanes, radix);
        for (ti, t) in self.program.accesses.iter().enumerate() {
            if t.controller != c.id {
                continue;
            }
            for v in 0..c.lanes() {
                let mut uid = lanes.to_vec();
                uid.push(v);
                let iterators = t
                    .iterators
                    .iter()
                    .map(|name| self.domain(&chain, name, &uid, &full_radix))
                    .collect::<Result<Vec<_>>>()?;
                let access = AffineAccess {
                    id: suffixed(&t.id, &uid, &full_radix),
                    memory: self.program.memory.clone(),
                    kind: t.kind,
                    matrix: t.matrix.clone(),
                    offset: t.offset.clone(),
                    iterators,
                    symbols: t.symbols.clone(),
                    uid,
                    uid_radix: full_radix.clone(),
                    cycle: t.cycle,
                    controller: node_id.clone(),
                };
                self.instances.push(Instance { access, path: path.to_vec(), template: ti });
            }
        }
        Ok(())
    }

    /// Lane-specialized and synchronized domain of iterator `name`.
    fn domain(&self, chain: &[&Controller], name: &str, uid: &[u32], radix: &[u32]) -> Result<IteratorDomain> {
        let (level, owner) = chain
            .iter()
            .enumerate()
            .rev()
            .find(|(_, c)| c.counters.iter().any(|it| it.name == name))
            .ok_or_else(|| Error::invalid(format!("unknown iterator `{name}`")))?;
        let idx = owner.counters.iter().position(|it| it.name == name).expect("found");
        // Lane of this counter within the owner's row-major lane space.
        let pars: Vec<u32> = owner.counters.iter().map(|it| it.parallelization).collect();
        let mut rest = uid[level];
        let mut digit = 0;
        for (k, &p) in pars.iter().enumerate().rev() {
            if k == idx {
                digit = rest % p;
            }
            rest /= p;
        }
        let base = &owner.counters[idx];
        let par = base.parallelization as i64;
        let mut it = IteratorDomain {
            start: base.start + digit as i64 * base.step,
            step: base.step * par,
            level,
            vectorized: owner.level == Level::Inner,
            ..base.clone()
        };
        if (it.stop - it.start).signum() * it.step.signum() < 0 {
            // More lanes than trips: this lane never runs.
            it.stop = it.start;
        }
        let derived = if base.dynamic.is_some() || self.unsync.contains(&owner.id) {
            SyncClass::Unsynchronized
        } else {
            SyncClass::Synchronized
        };
        if derived.strength() > it.sync.strength() {
            it.sync = derived;
        }
        match it.sync {
            SyncClass::Synchronized => {}
            SyncClass::PartiallySynchronized(off) => {
                let shift = off * mixed_radix_rank(&uid[..level], &radix[..level]) as i64;
                it.start += shift;
                it.stop += shift;
            }
            SyncClass::Unsynchronized => {
                let mut parts: Vec<String> = uid[..level].iter().map(u32::to_string).collect();
                if owner.level == Level::Outer {
                    parts.push(uid[level].to_string());
                }
                it.name = format!("{name}@{}", parts.join("."));
            }
        }
        Ok(it)
    }
}

fn instance_concurrent(tree: &Controller, a: &Instance, b: &Instance) -> Result<bool> {
    let node = if a.path == b.path { tree.at(&a.path) } else { tree.at(&common_prefix(&a.path, &b.path)) };
    is_concurrent(node, &a.access, &b.access)
}

/// Groups in instance order: an access joins the group holding a concurrent
/// member; groups it bridges are merged.
fn group_instances(tree: &Controller, instances: &[Instance], memory: &str) -> Result<Vec<AccessGroup>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let mut hits = Vec::new();
        for (g, members) in groups.iter().enumerate() {
            for &m in members {
                if instance_concurrent(tree, &instances[m], inst)? {
                    hits.push(g);
                    break;
                }
            }
        }
        match hits.split_first() {
            None => groups.push(vec![i]),
            Some((&first, rest)) => {
                for &g in rest.iter().rev() {
                    let moved = std::mem::take(&mut groups[g]);
                    groups[first].extend(moved);
                }
                groups[first].push(i);
                groups[first].sort_unstable();
                groups.retain(|g| !g.is_empty());
            }
        }
    }
    groups
        .into_iter()
        .map(|members| {
            let mut exclusive = Vec::new();
            for x in 0..members.len() {
                for y in x + 1..members.len() {
                    if !instance_concurrent(tree, &instances[members[x]], &instances[members[y]])? {
                        exclusive.push((x, y));
                    }
                }
            }
            Ok(AccessGroup {
                memory: memory.to_string(),
                members: members.iter().map(|&m| instances[m].access.clone()).collect(),
                exclusive,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counter(name: &str, stop: i64, par: u32) -> IteratorDomain {
        IteratorDomain { parallelization: par, ..IteratorDomain::new(name, 0, 1, stop) }
    }

    fn inner(id: &str, c: IteratorDomain) -> Controller {
        Controller::new(id, Level::Inner, Schedule::Pipelined).with_counter(c)
    }

    /// Outer loop i (par `op`) with two inner children over k (par `ip`).
    fn two_stage(op: u32, ip: u32) -> Controller {
        Controller::new("i", Level::Outer, Schedule::Pipelined)
            .with_counter(counter("i", 8, op))
            .with_child(inner("c0", counter("k", 8, ip)))
            .with_child(inner("c1", counter("j", 8, 1)))
    }

    fn template(id: &str, ctrl: &str, it: &str) -> AccessTemplate {
        AccessTemplate {
            id: id.into(),
            controller: ctrl.into(),
            kind: AccessKind::Read,
            matrix: vec![vec![1, 1]],
            offset: vec![0],
            iterators: vec!["i".into(), it.into()],
            symbols: vec![],
            cycle: None,
        }
    }

    #[test]
    fn identity_unroll() {
        let t = two_stage(1, 1);
        let u = unroll(&t, UnrollStrategy::ForkJoinOfPipelines).unwrap();
        assert_eq!(u.node_count(), t.node_count());
        assert_eq!(u.children[0].id, "c0");
    }

    #[test]
    fn fop_injects_fork_join_per_child() {
        let u = unroll(&two_stage(2, 1), UnrollStrategy::ForkJoinOfPipelines).unwrap();
        assert_eq!(u.children.len(), 2);
        for fj in &u.children {
            assert_eq!(fj.schedule, Schedule::ForkJoin);
            assert_eq!(fj.children.len(), 2);
        }
        assert_eq!(lca(&u, "c0@0", "c0@1").unwrap().id, "fj:c0");
        assert_eq!(lca(&u, "c0@0", "c1@0").unwrap().id, "i");
        assert_eq!(lca(&u, "c0@1", "c0@1").unwrap().id, "fj:c0");
        assert!(matches!(lca(&u, "c0@0", "nope"), Err(Error::DisjointTrees(..))));
    }

    #[test]
    fn pof_clones_whole_pipeline() {
        let u = unroll(&two_stage(2, 1), UnrollStrategy::PipelineOfForkJoins).unwrap();
        assert_eq!(u.schedule, Schedule::ForkJoin);
        assert_eq!(u.children.len(), 2);
        let (a, b) = (&u.children[0], &u.children[1]);
        assert_eq!(a.children.len(), b.children.len());
        assert_eq!(a.origin.as_deref(), Some("i"));
    }

    #[test]
    fn concurrency_rules() {
        let a = AffineAccess {
            id: "a".into(),
            memory: "m".into(),
            kind: AccessKind::Read,
            matrix: vec![vec![1]],
            offset: vec![0],
            iterators: vec![IteratorDomain::new("k", 0, 1, 4)],
            symbols: vec![],
            uid: vec![],
            uid_radix: vec![],
            cycle: Some(0),
            controller: "c".into(),
        };
        let b = AffineAccess { id: "b".into(), cycle: Some(3), ..a.clone() };
        let mut inner = Controller::new("c", Level::Inner, Schedule::Pipelined);
        inner.initiation_interval = Some(2);
        assert!(!is_concurrent(&inner, &a, &b).unwrap());
        inner.initiation_interval = Some(4);
        assert!(is_concurrent(&inner, &a, &b).unwrap());
        inner.initiation_interval = None;
        assert!(matches!(is_concurrent(&inner, &a, &b), Err(Error::MissingSchedule(_))));
        let fj = Controller::new("o", Level::Outer, Schedule::ForkJoin);
        assert!(is_concurrent(&fj, &a, &b).unwrap());
        let seq = Controller::new("o", Level::Outer, Schedule::Sequential);
        assert!(!is_concurrent(&seq, &a, &b).unwrap());
    }

    #[test]
    fn prepare_counts_and_groups() {
        let program = Program {
            memory: "m".into(),
            dims: vec![64],
            root: two_stage(2, 2),
            accesses: vec![template("r0", "c0", "k"), template("r1", "c1", "j")],
            strategy: UnrollStrategy::ForkJoinOfPipelines,
        };
        let prep = program.prepare(&AnalysisConfig::default(), None).unwrap();
        // r0: 2 outer lanes x 2 vector lanes; r1: 2 outer lanes.
        assert_eq!(prep.instances.len(), 6);
        assert_eq!(prep.groups.len(), 2);
        assert_eq!(prep.groups[0].len(), 4);
        let lane = &prep.groups[0].members[3];
        assert_eq!(lane.id, "r0@1.1");
        assert_eq!(lane.iterators[0].start, 1);
        assert_eq!(lane.iterators[0].step, 2);
        assert_eq!(lane.iterators[1].start, 1);
        assert!(lane.iterators[1].vectorized);
    }

    #[test]
    fn dynamic_bounds_desynchronize_fop_lanes() {
        let mut q = counter("q", 4, 1);
        q.dynamic = Some(crate::polytope::DynamicBound { name: "Q".into(), args: vec!["i".into()] });
        let root = Controller::new("i", Level::Outer, Schedule::Pipelined).with_counter(counter("i", 8, 2)).with_child(
            Controller::new("p", Level::Outer, Schedule::Pipelined)
                .with_counter(counter("p", 4, 1))
                .with_child(inner("q", q)),
        );
        let program = Program {
            memory: "m".into(),
            dims: vec![64],
            root,
            accesses: vec![AccessTemplate {
                iterators: vec!["i".into(), "p".into(), "q".into()],
                matrix: vec![vec![1, 1, 1]],
                ..template("r", "q", "q")
            }],
            strategy: UnrollStrategy::ForkJoinOfPipelines,
        };
        let cfg = AnalysisConfig { dynamic_clamp: 6, ..Default::default() };
        let prep = program.prepare(&cfg, None).unwrap();
        let a = &prep.instances[1].access;
        assert_eq!(a.iterators[0].sync, SyncClass::Synchronized);
        assert_eq!(a.iterators[1].name, "p@1.0");
        assert_eq!(a.iterators[2].name, "q@1.0");
        assert_eq!(a.iterators[2].stop, 6);
        let pof = Program { strategy: UnrollStrategy::PipelineOfForkJoins, ..program };
        let prep = pof.prepare(&cfg, None).unwrap();
        assert_eq!(prep.instances[1].access.iterators[1].sync, SyncClass::Synchronized);
        assert_eq!(prep.instances[1].access.iterators[2].sync, SyncClass::Unsynchronized);
    }
}
