//! Affine access patterns and conflict-polytope emptiness.
//!
//! An access maps iterator values (and opaque symbol values) to an address
//! vector `x = A * i + C`. Two accesses conflict under a geometry when some
//! joint assignment of their variables, within bounds and respecting which
//! variables are shared between them, lands both on the same bank. The
//! resulting integer problem is decided by interval/GCD pruned enumeration
//! with direct solving of constraints that have a single open variable.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HyperplaneGeometry;
use crate::math::{floor_div, gcd, mod_inverse};
use crate::DEFAULT_ENUMERATION_BUDGET;

/// How one iterator relates across the unroll lanes (UIDs) of its loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum SyncClass {
    #[default]
    Synchronized,
    /// Shares the iteration variable; each clone starts `offset * rank` later.
    PartiallySynchronized(i64),
    Unsynchronized,
}

impl SyncClass {
    pub(crate) fn strength(self) -> u8 {
        match self {
            SyncClass::Synchronized => 0,
            SyncClass::PartiallySynchronized(_) => 1,
            SyncClass::Unsynchronized => 2,
        }
    }
}

/// A data-dependent loop bound such as `Q_RNG(x, y, z)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DynamicBound {
    pub name: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IteratorDomain {
    pub name: String,
    pub start: i64,
    pub step: i64,
    /// Exclusive bound; ignored when `dynamic` is set.
    #[serde(default)]
    pub stop: i64,
    #[serde(default = "one", alias = "par")]
    pub parallelization: u32,
    #[serde(default)]
    pub sync: SyncClass,
    /// Set when `stop` is a clamp standing in for a runtime value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<DynamicBound>,
    /// Index of the owning controller in the access UID.
    #[serde(default)]
    pub level: usize,
    /// Lanes of the owning controller are vectorized (inner controller).
    #[serde(default)]
    pub vectorized: bool,
}

fn one() -> u32 {
    1
}

impl IteratorDomain {
    pub fn new(name: impl Into<String>, start: i64, step: i64, stop: i64) -> Self {
        IteratorDomain {
            name: name.into(),
            start,
            step,
            stop,
            parallelization: 1,
            sync: SyncClass::Synchronized,
            dynamic: None,
            level: 0,
            vectorized: false,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.step == 0 {
            return Err(Error::invalid(format!("iterator `{}` has zero step", self.name)));
        }
        if self.parallelization == 0 {
            return Err(Error::invalid(format!("iterator `{}` has zero parallelization", self.name)));
        }
        if (self.stop - self.start).signum() * self.step.signum() < 0 {
            return Err(Error::invalid(format!(
                "iterator `{}` runs backwards: start {} stop {} step {}",
                self.name, self.start, self.stop, self.step
            )));
        }
        Ok(())
    }

    /// Number of values `start, start + step, ...` strictly before `stop`.
    pub fn count(&self) -> u64 {
        let span = self.stop - self.start;
        if span == 0 || span.signum() != self.step.signum() {
            return 0;
        }
        let (span, step) = (span.unsigned_abs(), self.step.unsigned_abs());
        span.div_ceil(step)
    }

    pub fn value(&self, t: u64) -> i64 {
        self.start + self.step * t as i64
    }

    pub fn values(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.count()).map(|t| self.value(t))
    }
}

/// Opaque side-effect-free function of iterators, e.g. `f(i)` in `m[f(i) + j]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymbolRef {
    pub name: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
}

/// One logical access `x = A * [iterators; symbols] + C`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineAccess {
    pub id: String,
    pub memory: String,
    pub kind: AccessKind,
    /// `n` rows, one column per iterator followed by one per symbol.
    pub matrix: Vec<Vec<i64>>,
    pub offset: Vec<i64>,
    pub iterators: Vec<IteratorDomain>,
    #[serde(default)]
    pub symbols: Vec<SymbolRef>,
    #[serde(default)]
    pub uid: Vec<u32>,
    /// Lane count of each UID position.
    #[serde(default)]
    pub uid_radix: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<u32>,
    #[serde(default)]
    pub controller: String,
}

impl AffineAccess {
    pub fn dims(&self) -> usize {
        self.matrix.len()
    }

    pub fn check(&self) -> Result<()> {
        let cols = self.iterators.len() + self.symbols.len();
        if self.offset.len() != self.matrix.len() {
            return Err(Error::DimensionMismatch(format!(
                "access `{}`: {} rows but {} offsets",
                self.id,
                self.matrix.len(),
                self.offset.len()
            )));
        }
        if let Some(row) = self.matrix.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch(format!(
                "access `{}`: row has {} columns, expected {cols}",
                self.id,
                row.len()
            )));
        }
        for it in &self.iterators {
            it.check()?;
        }
        Ok(())
    }

    /// Same access instance (same logical access, same lane).
    pub fn same_instance(&self, other: &AffineAccess) -> bool {
        self.id == other.id && self.uid == other.uid
    }

    /// Address for concrete iterator and symbol values.
    pub fn address(&self, iters: &[i64], symbols: &[i64]) -> Vec<i64> {
        self.matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, c)| {
                let (ri, rs) = row.split_at(self.iterators.len());
                c + ri.iter().zip(iters).map(|(a, v)| a * v).sum::<i64>()
                    + rs.iter().zip(symbols).map(|(a, v)| a * v).sum::<i64>()
            })
            .collect()
    }

    /// Keeps only address row `dim`.
    pub fn project(&self, dim: usize) -> AffineAccess {
        AffineAccess { matrix: vec![self.matrix[dim].clone()], offset: vec![self.offset[dim]], ..self.clone() }
    }
}

/// Knobs shared by polytope construction and enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Half-open range opaque symbols may take.
    pub symbol_range: (i64, i64),
    /// Exclusive clamp for data-dependent loop bounds.
    pub dynamic_clamp: i64,
    /// Maximum search nodes / enumerated points.
    pub budget: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { symbol_range: (0, 256), dynamic_clamp: 256, budget: DEFAULT_ENUMERATION_BUDGET }
    }
}

/// Identity of a variable in a normalized access.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKey {
    /// Iteration index of a (post-synchronization) iterator name.
    Iter(String),
    /// Symbol shared by every access applying it to the same synchronized arguments.
    Symbol { name: String, args: Vec<(String, i64, i64)> },
    /// Symbol value private to one access instance.
    Private { access: String, uid: Vec<u32>, slot: usize },
}

impl VarKey {
    pub fn label(&self) -> String {
        match self {
            VarKey::Iter(n) => n.clone(),
            VarKey::Symbol { name, args } => {
                let a: Vec<_> = args.iter().map(|(n, _, _)| n.as_str()).collect();
                format!("{name}({})", a.join(","))
            }
            VarKey::Private { access, uid, slot } => format!("{access}{uid:?}#s{slot}"),
        }
    }

    pub fn is_symbol(&self) -> bool {
        !matches!(self, VarKey::Iter(_))
    }
}

/// `sum(coef * var) + constant`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LinearForm {
    pub terms: BTreeMap<VarKey, i64>,
    pub constant: i64,
}

impl LinearForm {
    fn add_term(&mut self, key: VarKey, coef: i64) {
        if coef == 0 {
            return;
        }
        let e = self.terms.entry(key.clone()).or_insert(0);
        *e += coef;
        if *e == 0 {
            self.terms.remove(&key);
        }
    }

    fn scaled_add(&mut self, other: &LinearForm, factor: i64) {
        for (k, c) in &other.terms {
            self.add_term(k.clone(), c * factor);
        }
        self.constant += other.constant * factor;
    }

    pub fn eval(&self, values: &BTreeMap<VarKey, i64>) -> i64 {
        self.constant + self.terms.iter().map(|(k, c)| c * values[k]).sum::<i64>()
    }

    /// Value range given inclusive variable domains.
    pub fn interval(&self, domains: &BTreeMap<VarKey, (i64, i64)>) -> (i64, i64) {
        let (mut lo, mut hi) = (self.constant, self.constant);
        for (k, &c) in &self.terms {
            let (a, b) = domains[k];
            let (x, y) = (c * a, c * b);
            lo += x.min(y);
            hi += x.max(y);
        }
        (lo, hi)
    }
}

/// An access rewritten over shared variable keys with inclusive domains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedAccess {
    pub id: String,
    pub uid: Vec<u32>,
    pub rows: Vec<LinearForm>,
    pub domains: BTreeMap<VarKey, (i64, i64)>,
}

impl NormalizedAccess {
    pub fn new(access: &AffineAccess, cfg: &AnalysisConfig) -> Result<Self> {
        access.check()?;
        let m_it = access.iterators.len();
        let mut domains = BTreeMap::new();
        let mut iter_keys = Vec::with_capacity(m_it);
        for it in &access.iterators {
            let key = VarKey::Iter(it.name.clone());
            domains.insert(key.clone(), (0, it.count() as i64 - 1));
            iter_keys.push(key);
        }
        let mut sym_keys = Vec::with_capacity(access.symbols.len());
        for (slot, s) in access.symbols.iter().enumerate() {
            let mut args = Vec::with_capacity(s.args.len());
            let mut shareable = true;
            for a in &s.args {
                match access.iterators.iter().find(|it| &it.name == a) {
                    Some(it) if it.sync == SyncClass::Synchronized => args.push((a.clone(), it.start, it.step)),
                    Some(_) => shareable = false,
                    None => {
                        return Err(Error::invalid(format!(
                            "symbol `{}` of access `{}` uses unknown iterator `{a}`",
                            s.name, access.id
                        )))
                    }
                }
            }
            let key = if shareable {
                VarKey::Symbol { name: s.name.clone(), args }
            } else {
                VarKey::Private { access: access.id.clone(), uid: access.uid.clone(), slot }
            };
            domains.insert(key.clone(), (cfg.symbol_range.0, cfg.symbol_range.1 - 1));
            sym_keys.push(key);
        }
        let rows = access
            .matrix
            .iter()
            .zip(&access.offset)
            .map(|(row, &c)| {
                let mut f = LinearForm { constant: c, ..Default::default() };
                for (j, &a) in row.iter().enumerate() {
                    if j < m_it {
                        let it = &access.iterators[j];
                        f.constant += a * it.start;
                        f.add_term(iter_keys[j].clone(), a * it.step);
                    } else {
                        f.add_term(sym_keys[j - m_it].clone(), a);
                    }
                }
                f
            })
            .collect();
        Ok(NormalizedAccess { id: access.id.clone(), uid: access.uid.clone(), rows, domains })
    }

    pub fn same_instance(&self, other: &NormalizedAccess) -> bool {
        self.id == other.id && self.uid == other.uid
    }

    /// Projection key used to detect redundant projected accesses.
    pub fn row_signature(&self, dim: usize) -> RowSignature {
        let row = self.rows[dim].clone();
        let doms = row.terms.keys().map(|k| (k.clone(), self.domains[k])).collect();
        (row, doms)
    }
}

/// A projected row with the domains of the variables it mentions.
pub type RowSignature = (LinearForm, Vec<(VarKey, (i64, i64))>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    /// `sum(coef * var) + constant = 0`
    Eq { terms: Vec<(usize, i64)>, constant: i64 },
    /// `sum(coef * var) + constant = 0 (mod modulus)`
    Congruence { terms: Vec<(usize, i64)>, constant: i64, modulus: i64 },
}

impl Constraint {
    fn terms(&self) -> &[(usize, i64)] {
        match self {
            Constraint::Eq { terms, .. } | Constraint::Congruence { terms, .. } => terms,
        }
    }

    pub fn holds(&self, point: &[i64]) -> bool {
        match self {
            Constraint::Eq { terms, constant } => terms.iter().map(|&(v, c)| c * point[v]).sum::<i64>() + constant == 0,
            Constraint::Congruence { terms, constant, modulus } => {
                (terms.iter().map(|&(v, c)| c * point[v]).sum::<i64>() + constant).rem_euclid(*modulus) == 0
            }
        }
    }
}

/// Integer feasibility problem over bounded variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ConflictPolytope {
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub canceled_symbols: BTreeSet<String>,
}

impl ConflictPolytope {
    pub fn add_var(&mut self, name: impl Into<String>, lo: i64, hi: i64) -> usize {
        self.vars.push(Variable { name: name.into(), lo, hi });
        self.vars.len() - 1
    }

    /// Unsatisfiable marker, used for self-conflicts.
    pub fn empty() -> Self {
        ConflictPolytope { constraints: vec![Constraint::Eq { terms: vec![], constant: 1 }], ..Default::default() }
    }

    /// Product of variable domain sizes.
    pub fn volume(&self) -> u128 {
        self.vars
            .iter()
            .map(|v| if v.hi < v.lo { 0 } else { (v.hi - v.lo) as u128 + 1 })
            .fold(1u128, |a, b| a.saturating_mul(b))
    }

    pub fn contains(&self, point: &[i64]) -> bool {
        point.len() == self.vars.len()
            && self.vars.iter().zip(point).all(|(v, &x)| v.lo <= x && x <= v.hi)
            && self.constraints.iter().all(|c| c.holds(point))
    }

    pub fn is_empty(&self, budget: u64) -> Result<bool> {
        Ok(self.find_point(budget)?.is_none())
    }

    /// Some integer point satisfying every constraint, if one exists.
    pub fn find_point(&self, budget: u64) -> Result<Option<Vec<i64>>> {
        Solver::new(self, budget).run()
    }
}

pub fn is_empty(p: &ConflictPolytope) -> Result<bool> {
    p.is_empty(DEFAULT_ENUMERATION_BUDGET)
}

/// Conflict polytope of two accesses under `geom`.
pub fn build_conflict(
    a1: &AffineAccess,
    a2: &AffineAccess,
    geom: &HyperplaneGeometry,
    cfg: &AnalysisConfig,
) -> Result<ConflictPolytope> {
    build_joint(&[a1, a2], geom, cfg)
}

/// Polytope of "all listed accesses resolve to one bank at once".
pub fn build_joint(
    accesses: &[&AffineAccess],
    geom: &HyperplaneGeometry,
    cfg: &AnalysisConfig,
) -> Result<ConflictPolytope> {
    if let Some(first) = accesses.first() {
        if let Some(other) = accesses.iter().find(|a| a.memory != first.memory) {
            return Err(Error::MismatchedMemory(first.memory.clone(), other.memory.clone()));
        }
    }
    let forms = accesses.iter().map(|a| NormalizedAccess::new(a, cfg)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = forms.iter().collect();
    build_joint_normalized(&refs, geom)
}

/// Same as [`build_joint`] over pre-normalized accesses.
pub fn build_joint_normalized(forms: &[&NormalizedAccess], geom: &HyperplaneGeometry) -> Result<ConflictPolytope> {
    for f in forms {
        if f.rows.len() != geom.dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "access `{}` has {} dims, geometry has {}",
                f.id,
                f.rows.len(),
                geom.dims.len()
            )));
        }
    }
    for (i, a) in forms.iter().enumerate() {
        if forms[i + 1..].iter().any(|b| a.same_instance(b)) {
            return Ok(ConflictPolytope::empty());
        }
    }

    let mut domains: BTreeMap<VarKey, (i64, i64)> = BTreeMap::new();
    for f in forms {
        for (k, &(lo, hi)) in &f.domains {
            domains.entry(k.clone()).and_modify(|d| *d = (d.0.max(lo), d.1.min(hi))).or_insert((lo, hi));
        }
    }

    let mut p = ConflictPolytope::default();
    let mut index: BTreeMap<VarKey, usize> = BTreeMap::new();
    for (k, &(lo, hi)) in &domains {
        index.insert(k.clone(), p.add_var(k.label(), lo, hi));
    }
    let lower = |form: &LinearForm| -> Vec<(usize, i64)> { form.terms.iter().map(|(k, &c)| (index[k], c)).collect() };

    // Accesses only touch in-bounds addresses.
    for (fi, f) in forms.iter().enumerate() {
        for (d, row) in f.rows.iter().enumerate() {
            let (lo, hi) = row.interval(&domains);
            let extent = geom.dims[d] as i64;
            if lo >= 0 && hi < extent {
                continue;
            }
            let slack = p.add_var(format!("addr{fi}.{d}"), 0, extent - 1);
            let mut terms = lower(row);
            terms.push((slack, -1));
            p.constraints.push(Constraint::Eq { terms, constant: row.constant });
        }
    }

    for (u, unit) in geom.units().iter().enumerate() {
        if unit.banks == 1 {
            continue;
        }
        let sums: Vec<LinearForm> = forms
            .iter()
            .map(|f| {
                let mut s = LinearForm::default();
                for &(d, a) in &unit.coeffs {
                    s.scaled_add(&f.rows[d], a);
                }
                s
            })
            .collect();
        let modulus = unit.banks as i64;
        if unit.block == 1 {
            for s in &sums[1..] {
                let mut delta = sums[0].clone();
                delta.scaled_add(s, -1);
                for k in sums[0].terms.keys().chain(s.terms.keys()) {
                    if k.is_symbol() && !delta.terms.contains_key(k) {
                        p.canceled_symbols.insert(k.label());
                    }
                }
                p.constraints.push(Constraint::Congruence { terms: lower(&delta), constant: delta.constant, modulus });
            }
        } else {
            let block = unit.block as i64;
            let quotients: Vec<usize> = sums
                .iter()
                .enumerate()
                .map(|(fi, s)| {
                    let (lo, hi) = s.interval(&domains);
                    let q = p.add_var(format!("q{u}.{fi}"), floor_div(lo, block), floor_div(hi, block));
                    let r = p.add_var(format!("r{u}.{fi}"), 0, block - 1);
                    let mut terms = lower(s);
                    terms.push((q, -block));
                    terms.push((r, -1));
                    p.constraints.push(Constraint::Eq { terms, constant: s.constant });
                    q
                })
                .collect();
            for &q in &quotients[1..] {
                p.constraints.push(Constraint::Congruence {
                    terms: vec![(quotients[0], 1), (q, -1)],
                    constant: 0,
                    modulus,
                });
            }
        }
    }
    Ok(p)
}

/// Pruned depth-first search for an integer point.
struct Solver {
    lo: Vec<i64>,
    hi: Vec<i64>,
    cons: Vec<Constraint>,
    /// Constraints touching each variable.
    by_var: Vec<Vec<usize>>,
    budget: u64,
    nodes: u64,
    trivially_empty: bool,
}

enum Branch {
    Done,
    Values(usize, Vec<i64>),
    Range(usize, i64, i64),
    Fail,
}

impl Solver {
    fn new(p: &ConflictPolytope, budget: u64) -> Self {
        let n = p.vars.len();
        let mut trivially_empty = p.vars.iter().any(|v| v.lo > v.hi);
        let mut cons = Vec::new();
        for c in &p.constraints {
            let c = match c {
                Constraint::Eq { terms, constant } => {
                    let terms: Vec<_> = merge_terms(terms).into_iter().filter(|t| t.1 != 0).collect();
                    Constraint::Eq { terms, constant: *constant }
                }
                Constraint::Congruence { terms, constant, modulus } => {
                    let m = modulus.abs();
                    if m <= 1 {
                        continue;
                    }
                    let terms: Vec<_> = merge_terms(terms)
                        .into_iter()
                        .map(|(v, c)| (v, c.rem_euclid(m)))
                        .filter(|t| t.1 != 0)
                        .collect();
                    Constraint::Congruence { terms, constant: constant.rem_euclid(m), modulus: m }
                }
            };
            if c.terms().is_empty() {
                if !c.holds(&[]) {
                    trivially_empty = true;
                }
                continue;
            }
            cons.push(c);
        }
        let mut by_var = vec![Vec::new(); n];
        for (ci, c) in cons.iter().enumerate() {
            for &(v, _) in c.terms() {
                by_var[v].push(ci);
            }
        }
        Solver {
            lo: p.vars.iter().map(|v| v.lo).collect(),
            hi: p.vars.iter().map(|v| v.hi).collect(),
            cons,
            by_var,
            budget,
            nodes: 0,
            trivially_empty,
        }
    }

    fn run(mut self) -> Result<Option<Vec<i64>>> {
        if self.trivially_empty {
            return Ok(None);
        }
        let mut assign: Vec<Option<i64>> = vec![None; self.lo.len()];
        // Variables outside every constraint take any value in range.
        for (v, slot) in assign.iter_mut().enumerate() {
            if self.by_var[v].is_empty() {
                *slot = Some(self.lo[v]);
            }
        }
        if self.search(&mut assign)? {
            Ok(Some(assign.into_iter().map(|v| v.unwrap_or(0)).collect()))
        } else {
            Ok(None)
        }
    }

    fn search(&mut self, assign: &mut Vec<Option<i64>>) -> Result<bool> {
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(Error::BoundsBudgetExceeded { volume: self.nodes, budget: self.budget });
        }
        match self.choose(assign) {
            Branch::Done => Ok(true),
            Branch::Fail => Ok(false),
            Branch::Values(v, vals) => {
                for x in vals {
                    assign[v] = Some(x);
                    if self.search(assign)? {
                        return Ok(true);
                    }
                }
                assign[v] = None;
                Ok(false)
            }
            Branch::Range(v, lo, hi) => {
                for x in lo..=hi {
                    assign[v] = Some(x);
                    if self.search(assign)? {
                        return Ok(true);
                    }
                }
                assign[v] = None;
                Ok(false)
            }
        }
    }

    /// Checks every constraint under the partial assignment and picks the
    /// next variable to branch on.
    fn choose(&self, assign: &[Option<i64>]) -> Branch {
        let mut best_forced: Option<(usize, Vec<i64>)> = None;
        for c in &self.cons {
            let (terms, constant) = match c {
                Constraint::Eq { terms, constant } | Constraint::Congruence { terms, constant, .. } => {
                    (terms, *constant)
                }
            };
            let mut partial = constant;
            let mut open: Vec<(usize, i64)> = Vec::new();
            for &(v, k) in terms {
                match assign[v] {
                    Some(x) => partial += k * x,
                    None => open.push((v, k)),
                }
            }
            match c {
                Constraint::Eq { .. } => {
                    if open.is_empty() {
                        if partial != 0 {
                            return Branch::Fail;
                        }
                        continue;
                    }
                    let g = open.iter().fold(0, |g, &(_, k)| gcd(g, k));
                    if partial % g != 0 {
                        return Branch::Fail;
                    }
                    let (mut lo, mut hi) = (0i64, 0i64);
                    for &(v, k) in &open {
                        let (a, b) = (k * self.lo[v], k * self.hi[v]);
                        lo += a.min(b);
                        hi += a.max(b);
                    }
                    if -partial < lo || -partial > hi {
                        return Branch::Fail;
                    }
                    if let [(v, k)] = open[..] {
                        let x = -partial / k;
                        if x < self.lo[v] || x > self.hi[v] {
                            return Branch::Fail;
                        }
                        if best_forced.as_ref().is_none_or(|b| b.1.len() > 1) {
                            best_forced = Some((v, vec![x]));
                        }
                    }
                }
                Constraint::Congruence { modulus, .. } => {
                    let m = *modulus;
                    if open.is_empty() {
                        if partial.rem_euclid(m) != 0 {
                            return Branch::Fail;
                        }
                        continue;
                    }
                    let g = open.iter().fold(m, |g, &(_, k)| gcd(g, k));
                    if partial.rem_euclid(g) != 0 {
                        return Branch::Fail;
                    }
                    if let [(v, k)] = open[..] {
                        // k * x = -partial (mod m)  =>  x = x0 (mod m / g)
                        let step = m / g;
                        let rhs = (-partial).rem_euclid(m) / g;
                        let x0 = if step == 1 {
                            0
                        } else {
                            let inv = mod_inverse((k / g).rem_euclid(step), step).expect("coprime");
                            (rhs.rem_euclid(step) * inv).rem_euclid(step)
                        };
                        let first = self.lo[v] + (x0 - self.lo[v]).rem_euclid(step);
                        let count = if first > self.hi[v] { 0 } else { (self.hi[v] - first) / step + 1 };
                        if count == 0 {
                            return Branch::Fail;
                        }
                        let better = best_forced.as_ref().is_none_or(|b| (b.1.len() as i64) > count);
                        if better && count <= 1 << 16 {
                            let vals = (0..count).map(|i| first + i * step).collect();
                            best_forced = Some((v, vals));
                        }
                    }
                }
            }
        }
        if let Some((v, vals)) = best_forced {
            return Branch::Values(v, vals);
        }
        let next = (0..assign.len())
            .filter(|&v| assign[v].is_none())
            .min_by_key(|&v| (self.hi[v] - self.lo[v], std::cmp::Reverse(self.by_var[v].len())));
        match next {
            None => Branch::Done,
            Some(v) => Branch::Range(v, self.lo[v], self.hi[v]),
        }
    }
}

fn merge_terms(terms: &[(usize, i64)]) -> Vec<(usize, i64)> {
    let mut m: BTreeMap<usize, i64> = BTreeMap::new();
    for &(v, c) in terms {
        *m.entry(v).or_insert(0) += c;
    }
    m.into_iter().collect()
}
