//! Hyperplane bank geometries: bank address and offset math, periodicity,
//! partition-region selection, fan-in/fan-out metrics and validation.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{gcd, gcd_u, lcm_u, mixed_radix_rank};
use crate::polytope::{build_joint_normalized, AffineAccess, AnalysisConfig, NormalizedAccess};
use crate::program::AccessGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BankingStyle {
    Flat,
    Multidimensional,
}

/// `(N, B, alpha)` over an array of extents `dims`. Flat geometries carry a
/// single `N` and `B`; multidimensional ones carry one per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HyperplaneGeometry {
    pub style: BankingStyle,
    #[serde(rename = "N")]
    pub n: Vec<u64>,
    #[serde(rename = "B")]
    pub b: Vec<u64>,
    pub alpha: Vec<i64>,
    #[serde(default)]
    pub dims: Vec<u64>,
}

/// One independent `floor(s / block) mod banks` term, `s = sum(coef * x_dim)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankUnit {
    pub coeffs: Vec<(usize, i64)>,
    pub banks: u64,
    pub block: u64,
}

impl BankUnit {
    pub fn sum(&self, x: &[i64]) -> i64 {
        self.coeffs.iter().map(|&(d, a)| a * x[d]).sum()
    }

    /// `gcd(alpha, N * B)`: every `s mod N*B` is a multiple of it.
    pub fn stride(&self) -> u64 {
        self.coeffs.iter().fold(self.banks * self.block, |g, &(_, a)| gcd_u(g, a.unsigned_abs()))
    }

    /// Distinct offsets one bank needs inside a region.
    pub fn effective_block(&self) -> u64 {
        self.block.div_ceil(self.stride())
    }

    pub fn address(&self, x: &[i64]) -> u64 {
        self.sum(x).div_euclid(self.block as i64).rem_euclid(self.banks as i64) as u64
    }

    pub fn correction(&self, x: &[i64]) -> u64 {
        self.sum(x).rem_euclid(self.block as i64) as u64 / self.stride()
    }
}

/// `Phi = lcm(alpha, N*B) / alpha`, with `Phi = 1` for a zero coefficient.
pub fn phi(alpha: i64, n: u64, b: u64) -> u64 {
    if alpha == 0 {
        return 1;
    }
    let a = alpha.unsigned_abs();
    lcm_u(a, n * b) / a
}

impl HyperplaneGeometry {
    pub fn flat(n: u64, b: u64, alpha: Vec<i64>, dims: Vec<u64>) -> Self {
        HyperplaneGeometry { style: BankingStyle::Flat, n: vec![n], b: vec![b], alpha, dims }
    }

    pub fn multidim(n: Vec<u64>, b: Vec<u64>, alpha: Vec<i64>, dims: Vec<u64>) -> Self {
        HyperplaneGeometry { style: BankingStyle::Multidimensional, n, b, alpha, dims }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.rank();
        let units = match self.style {
            BankingStyle::Flat => 1,
            BankingStyle::Multidimensional => n,
        };
        if n == 0 || self.alpha.len() != n || self.n.len() != units || self.b.len() != units {
            return Err(Error::DimensionMismatch(format!(
                "geometry over {n} dims has |N|={}, |B|={}, |alpha|={}",
                self.n.len(),
                self.b.len(),
                self.alpha.len()
            )));
        }
        if self.n.iter().chain(&self.b).chain(&self.dims).any(|&v| v == 0) {
            return Err(Error::invalid("N, B and dims must be positive"));
        }
        if self.alpha.iter().any(|&a| a < 0) {
            return Err(Error::invalid("alpha must be nonnegative"));
        }
        Ok(())
    }

    pub fn units(&self) -> Vec<BankUnit> {
        match self.style {
            BankingStyle::Flat => vec![BankUnit {
                coeffs: self.alpha.iter().copied().enumerate().collect(),
                banks: self.n[0],
                block: self.b[0],
            }],
            BankingStyle::Multidimensional => (0..self.rank())
                .map(|d| BankUnit { coeffs: vec![(d, self.alpha[d])], banks: self.n[d], block: self.b[d] })
                .collect(),
        }
    }

    pub fn total_banks(&self) -> u64 {
        self.n.iter().product()
    }

    /// Divides `(alpha, B)` of each unit by their common gcd.
    pub fn normalize(&self) -> Self {
        let mut g = self.clone();
        match self.style {
            BankingStyle::Flat => {
                let c = self.alpha.iter().fold(self.b[0] as i64, |acc, &a| gcd(acc, a));
                if c > 1 {
                    g.alpha.iter_mut().for_each(|a| *a /= c);
                    g.b[0] /= c as u64;
                }
            }
            BankingStyle::Multidimensional => {
                for d in 0..self.rank() {
                    let c = gcd(self.alpha[d], self.b[d] as i64);
                    if c > 1 {
                        g.alpha[d] /= c;
                        g.b[d] /= c as u64;
                    }
                }
            }
        }
        g
    }

    pub fn periodicity(&self) -> Vec<u64> {
        match self.style {
            BankingStyle::Flat => self.alpha.iter().map(|&a| phi(a, self.n[0], self.b[0])).collect(),
            BankingStyle::Multidimensional => {
                (0..self.rank()).map(|d| phi(self.alpha[d], self.n[d], self.b[d])).collect()
            }
        }
    }

    /// Offsets a single bank needs per partition region.
    pub fn region_slots(&self) -> u64 {
        self.units().iter().map(BankUnit::effective_block).product()
    }

    /// Bank id per unit, without bounds checking.
    pub fn bank_vector(&self, x: &[i64]) -> Vec<u64> {
        self.units().iter().map(|u| u.address(x)).collect()
    }

    /// Flattened bank id in `[0, total_banks)`.
    pub fn bank_id(&self, x: &[i64]) -> u64 {
        let units = self.units();
        units.iter().fold(0, |acc, u| acc * u.banks + u.address(x))
    }

    pub fn bank_address(&self, x: &[i64]) -> Result<Vec<u64>> {
        self.check_bounds(x, &self.dims)?;
        Ok(self.bank_vector(x))
    }

    fn correction(&self, x: &[i64]) -> u64 {
        self.units().iter().fold(0, |acc, u| acc * u.effective_block() + u.correction(x))
    }

    fn check_bounds(&self, x: &[i64], extents: &[u64]) -> Result<()> {
        if x.len() != extents.len() || x.iter().zip(extents).any(|(&v, &e)| v < 0 || v as u64 >= e) {
            return Err(Error::OutOfBounds { address: x.to_vec(), bounds: extents.to_vec() });
        }
        Ok(())
    }

    /// Intra-bank offset given partition region `p`; `x` may reach into padding.
    pub fn bank_offset(&self, x: &[i64], p: &[u64]) -> Result<u64> {
        let padded = padded_dims(&self.dims, p);
        self.check_bounds(x, &padded)?;
        Ok(self.offset_unchecked(x, p))
    }

    pub(crate) fn offset_unchecked(&self, x: &[i64], p: &[u64]) -> u64 {
        let regions: Vec<u32> = self.dims.iter().zip(p).map(|(&d, &pi)| d.div_ceil(pi) as u32).collect();
        let digits: Vec<u32> = x.iter().zip(p).map(|(&v, &pi)| (v as u64 / pi) as u32).collect();
        self.region_slots() * mixed_radix_rank(&digits, &regions) + self.correction(x)
    }

    /// Closed-form capacity bound `B * prod(ceil(D_i / P_i))`.
    pub fn capacity_bound(&self, p: &[u64]) -> u64 {
        self.region_slots() * self.dims.iter().zip(p).map(|(&d, &pi)| d.div_ceil(pi)).product::<u64>()
    }

    /// Partition region minimizing padded capacity subject to coverage and
    /// offset injectivity.
    pub fn select_parallelotope(&self) -> Result<Vec<u64>> {
        self.check()?;
        let phis = self.periodicity();
        let cands: Vec<Vec<u64>> = (0..self.rank()).map(|d| p_candidates(phis[d], self.dims[d])).collect();
        match self.style {
            BankingStyle::Multidimensional => (0..self.rank())
                .map(|d| {
                    let sub = HyperplaneGeometry::flat(self.n[d], self.b[d], vec![self.alpha[d]], vec![self.dims[d]]);
                    sub.best_region(&[cands[d].clone()], &[phis[d]])
                        .map(|p| p[0])
                        .ok_or_else(|| Error::NoValidP(format!("{self:?} dim {d}")))
                })
                .collect(),
            BankingStyle::Flat => self.best_region(&cands, &phis).ok_or_else(|| Error::NoValidP(format!("{self:?}"))),
        }
    }

    fn best_region(&self, cands: &[Vec<u64>], phis: &[u64]) -> Option<Vec<u64>> {
        let banks = self.total_banks();
        let slots = self.region_slots();
        let mut combos: Vec<(u64, Vec<u64>)> = Vec::new();
        let mut cur = Vec::with_capacity(cands.len());
        fn rec(i: usize, cands: &[Vec<u64>], cur: &mut Vec<u64>, vol: u64, cap: u64, out: &mut Vec<Vec<u64>>) {
            if i == cands.len() {
                out.push(cur.clone());
                return;
            }
            for &c in &cands[i] {
                if vol * c <= cap {
                    cur.push(c);
                    rec(i + 1, cands, cur, vol * c, cap, out);
                    cur.pop();
                }
            }
        }
        let mut all = Vec::new();
        rec(0, cands, &mut cur, 1, banks * slots, &mut all);
        for p in all {
            if p.iter().product::<u64>() >= banks {
                combos.push((self.capacity_bound(&p), p));
            }
        }
        combos.sort();
        combos.into_iter().map(|(_, p)| p).find(|p| self.region_ok(p, phis))
    }

    /// Every distinct aligned region holds each bank 1..=slots times with
    /// distinct offsets.
    fn region_ok(&self, p: &[u64], phis: &[u64]) -> bool {
        let counts: Vec<u64> = self.dims.iter().zip(p).map(|(&d, &pi)| d.div_ceil(pi)).collect();
        let classes: Vec<u64> =
            p.iter().zip(phis).zip(&counts).map(|((&pi, &f), &c)| (f / gcd_u(pi, f)).min(c)).collect();
        let slots = self.region_slots();
        let banks = self.total_banks();
        let mut seen_origin = HashSet::new();
        let mut ok = true;
        for_each_point(&classes, |r| {
            if !ok {
                return;
            }
            let origin: Vec<i64> = r.iter().zip(p).map(|(&ri, &pi)| ri * pi as i64).collect();
            let key: Vec<u64> = origin.iter().zip(phis).map(|(&o, &f)| o as u64 % f).collect();
            if !seen_origin.insert(key) {
                return;
            }
            let mut per_bank = vec![0u64; banks as usize];
            let mut used = HashSet::new();
            let extent: Vec<u64> = p.to_vec();
            for_each_point(&extent, |off| {
                if !ok {
                    return;
                }
                let x: Vec<i64> = origin.iter().zip(off).map(|(o, v)| o + v).collect();
                let bank = self.bank_id(&x);
                let c = self.correction(&x);
                per_bank[bank as usize] += 1;
                if per_bank[bank as usize] > slots || !used.insert((bank, c)) {
                    ok = false;
                }
            });
            if per_bank.contains(&0) {
                ok = false;
            }
        });
        ok
    }

    /// Fan-out/fan-in, padding and capacity of `accesses` under `(self, p)`.
    pub fn metrics(&self, accesses: &[&AffineAccess], p: &[u64], cfg: &AnalysisConfig) -> Result<SchemeMetrics> {
        let mut fo = Vec::with_capacity(accesses.len());
        let mut fi = vec![0u64; self.total_banks() as usize];
        for a in accesses {
            let banks = self.access_banks(a, cfg)?;
            for &b in &banks {
                fi[b as usize] += 1;
            }
            fo.push(banks.len() as u64);
        }
        Ok(SchemeMetrics { fo, fi, delta: padding(&self.dims, p), capacity: self.enumerated_capacity(p) })
    }

    /// Banks reachable by one access over its whole iteration domain.
    pub fn access_banks(&self, a: &AffineAccess, cfg: &AnalysisConfig) -> Result<BTreeSet<u64>> {
        let mut extents: Vec<u64> = a.iterators.iter().map(|it| it.count()).collect();
        let width = (cfg.symbol_range.1 - cfg.symbol_range.0).max(0) as u64;
        extents.extend(std::iter::repeat_n(width, a.symbols.len()));
        let volume = extents.iter().fold(1u64, |v, &e| v.saturating_mul(e));
        if volume > cfg.budget {
            return Err(Error::BoundsBudgetExceeded { volume, budget: cfg.budget });
        }
        let m = a.iterators.len();
        let mut out = BTreeSet::new();
        let mut iters = vec![0i64; m];
        let mut syms = vec![0i64; a.symbols.len()];
        for_each_point(&extents, |pt| {
            for j in 0..m {
                iters[j] = a.iterators[j].value(pt[j] as u64);
            }
            for (s, v) in syms.iter_mut().zip(&pt[m..]) {
                *s = cfg.symbol_range.0 + v;
            }
            let x = a.address(&iters, &syms);
            if x.iter().zip(&self.dims).all(|(&v, &d)| v >= 0 && (v as u64) < d) {
                out.insert(self.bank_id(&x));
            }
        });
        Ok(out)
    }

    /// Max offset + 1 over the padded array. Offsets grow with region index,
    /// so the last region holds the maximum.
    pub fn enumerated_capacity(&self, p: &[u64]) -> u64 {
        let origin: Vec<i64> = self.dims.iter().zip(p).map(|(&d, &pi)| ((d.div_ceil(pi) - 1) * pi) as i64).collect();
        let mut max = 0;
        for_each_point(p, |off| {
            let x: Vec<i64> = origin.iter().zip(off).map(|(o, v)| o + v).collect();
            max = max.max(self.offset_unchecked(&x, p));
        });
        max + 1
    }
}

/// Divisors of `phi` and its multiples up to the first one covering `extent`.
fn p_candidates(phi: u64, extent: u64) -> Vec<u64> {
    let mut c: BTreeSet<u64> = (1..=phi).filter(|d| phi % d == 0).collect();
    let mut k = 2;
    while phi * (k - 1) < extent && k <= 16 {
        c.insert(phi * k);
        k += 1;
    }
    c.into_iter().collect()
}

pub fn padded_dims(dims: &[u64], p: &[u64]) -> Vec<u64> {
    dims.iter().zip(p).map(|(&d, &pi)| d.div_ceil(pi) * pi).collect()
}

/// `delta_i = ceil(D_i / P_i) * P_i - D_i`.
pub fn padding(dims: &[u64], p: &[u64]) -> Vec<u64> {
    dims.iter().zip(p).map(|(&d, &pi)| d.div_ceil(pi) * pi - d).collect()
}

/// Calls `f` on every point of the box `[0, extents)` in row-major order.
pub(crate) fn for_each_point(extents: &[u64], mut f: impl FnMut(&[i64])) {
    if extents.contains(&0) {
        return;
    }
    let mut pt = vec![0i64; extents.len()];
    loop {
        f(&pt);
        let mut d = extents.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            pt[d] += 1;
            if (pt[d] as u64) < extents[d] {
                break;
            }
            pt[d] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SchemeMetrics {
    /// Banks touched, per access.
    pub fo: Vec<u64>,
    /// Accesses served, per bank.
    pub fi: Vec<u64>,
    pub delta: Vec<u64>,
    pub capacity: u64,
}

impl SchemeMetrics {
    pub fn max_fo(&self) -> u64 {
        self.fo.iter().copied().max().unwrap_or(0)
    }

    pub fn max_fi(&self) -> u64 {
        self.fi.iter().copied().max().unwrap_or(0)
    }
}

/// Whether every group is free of `k + 1` accesses meeting on one bank.
pub fn validate(groups: &[AccessGroup], g: &HyperplaneGeometry, k: u32, cfg: &AnalysisConfig) -> Result<bool> {
    for grp in groups {
        let norm = grp.members.iter().map(|a| NormalizedAccess::new(a, cfg)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&NormalizedAccess> = norm.iter().collect();
        if find_violation(&refs, &|i, j| grp.concurrent(i, j), g, k, cfg.budget)?.is_some() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// First set of `k + 1` accesses (indices into `group`) that can share a bank.
pub fn find_violation(
    group: &[&NormalizedAccess],
    concurrent: &dyn Fn(usize, usize) -> bool,
    g: &HyperplaneGeometry,
    k: u32,
    budget: u64,
) -> Result<Option<Vec<usize>>> {
    let k = k.max(1) as usize;
    if group.len() <= k {
        return Ok(None);
    }
    let mut adj: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for i in 0..group.len() {
        for j in i + 1..group.len() {
            if !concurrent(i, j) {
                continue;
            }
            let p = build_joint_normalized(&[group[i], group[j]], g)?;
            if !p.is_empty(budget)? {
                if k == 1 {
                    return Ok(Some(vec![i, j]));
                }
                adj.entry(i).or_default().insert(j);
                adj.entry(j).or_default().insert(i);
            }
        }
    }
    let mut found = None;
    let mut clique = Vec::new();
    extend_cliques(&adj, &mut clique, (0..group.len()).collect(), k + 1, &mut |c| {
        let members: Vec<&NormalizedAccess> = c.iter().map(|&i| group[i]).collect();
        let p = build_joint_normalized(&members, g)?;
        if !p.is_empty(budget)? {
            found = Some(c.to_vec());
            return Ok(true);
        }
        Ok(false)
    })?;
    Ok(found)
}

/// Visits `size`-cliques in increasing index order until `visit` returns true.
fn extend_cliques(
    adj: &BTreeMap<usize, BTreeSet<usize>>,
    clique: &mut Vec<usize>,
    cand: Vec<usize>,
    size: usize,
    visit: &mut dyn FnMut(&[usize]) -> Result<bool>,
) -> Result<bool> {
    if clique.len() == size {
        return visit(clique);
    }
    for (idx, &v) in cand.iter().enumerate() {
        if cand.len() - idx < size - clique.len() {
            break;
        }
        let Some(nb) = adj.get(&v) else { continue };
        let next: Vec<usize> = cand[idx + 1..].iter().copied().filter(|u| nb.contains(u)).collect();
        clique.push(v);
        if extend_cliques(adj, clique, next, size, visit)? {
            return Ok(true);
        }
        clique.pop();
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_correction_example() {
        let g = HyperplaneGeometry::flat(4, 2, vec![3], vec![16]);
        assert_eq!(g.periodicity(), vec![8]);
        let banks: Vec<u64> = (0..8).map(|x| g.bank_address(&[x]).unwrap()[0]).collect();
        assert_eq!(banks, vec![0, 1, 3, 0, 2, 3, 1, 2]);
        let p = g.select_parallelotope().unwrap();
        assert_eq!(p, vec![8]);
        let mut seen = HashSet::new();
        for x in 0..8 {
            assert!(seen.insert((g.bank_id(&[x]), g.bank_offset(&[x], &p).unwrap())));
        }
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(1, 4, 1), 4);
        assert_eq!(phi(6, 4, 2), 4);
        assert_eq!(phi(0, 4, 2), 1);
    }

    #[test]
    fn simple_offsets() {
        let g = HyperplaneGeometry::flat(4, 1, vec![1], vec![16]);
        assert_eq!(g.bank_address(&[5]).unwrap(), vec![1]);
        assert_eq!(g.bank_offset(&[0], &[4]).unwrap(), 0);
        assert_eq!(g.bank_offset(&[5], &[4]).unwrap(), 1);
        assert_eq!(g.select_parallelotope().unwrap(), vec![4]);
        assert!(matches!(g.bank_address(&[16]), Err(Error::OutOfBounds { .. })));
        assert_eq!(padding(&[16], &[5]), vec![4]);
    }

    #[test]
    fn multidim_region() {
        let g = HyperplaneGeometry::multidim(vec![2, 2], vec![1, 1], vec![1, 1], vec![4, 4]);
        assert_eq!(g.select_parallelotope().unwrap(), vec![2, 2]);
        assert_eq!(g.total_banks(), 4);
    }

    #[test]
    fn toy_option_two_banks() {
        let g = HyperplaneGeometry::flat(4, 3, vec![2], vec![102]);
        let banks: BTreeSet<u64> = [1, 2, 4, 5].iter().map(|&x| g.bank_id(&[x])).collect();
        assert_eq!(banks.len(), 4);
    }

    #[test]
    fn non_coprime_block_stays_injective() {
        let g = HyperplaneGeometry::flat(2, 3, vec![2], vec![30]);
        let p = g.select_parallelotope().unwrap();
        let cap = g.enumerated_capacity(&p);
        let mut seen = HashSet::new();
        for x in 0..padded_dims(&g.dims, &p)[0] as i64 {
            let o = g.bank_offset(&[x], &p).unwrap();
            assert!(o < cap);
            assert!(seen.insert((g.bank_id(&[x]), o)));
        }
        assert!(cap <= g.capacity_bound(&p));
    }

    #[test]
    fn normalization_keeps_bank_map() {
        let g = HyperplaneGeometry::flat(3, 4, vec![2, 6], vec![8, 8]);
        let h = g.normalize();
        assert_eq!(h.b, vec![2]);
        for x in 0..8 {
            for y in 0..8 {
                assert_eq!(g.bank_id(&[x, y]), h.bank_id(&[x, y]));
            }
        }
    }
}
