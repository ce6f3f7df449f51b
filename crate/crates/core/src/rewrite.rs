//! Bank-resolution datapaths as integer expression DAGs, with constant
//! multiply/divide/modulo strength-reduced into shifts, masks, adds and muxes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HyperplaneGeometry;
use crate::math::{is_power_of_two, mersenne_exponent, mersenne_multiple};

/// Default term budget for shift-add constant multiplication.
pub const SHIFT_ADD_RADIUS: usize = 2;
/// Largest `k` (exclusive) for `M2 * k = M` composite reductions.
pub const COMPOSITE_RADIUS: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    Input,
    Const,
    Add,
    Sub,
    ShiftLeft,
    ShiftRight,
    And,
    /// `operands[0] != 0 ? operands[1] : operands[2]`
    Mux,
    Mul,
    Div,
    Mod,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub operands: Vec<usize>,
    /// Constant value, or input index for `Input`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u64>,
}

/// Node-type census used as cost-model features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCounts {
    pub add: u32,
    pub sub: u32,
    pub shift: u32,
    pub and: u32,
    pub mux: u32,
    pub mul: u32,
    pub div: u32,
    pub modulo: u32,
}

impl OpCounts {
    pub fn arithmetic(&self) -> u32 {
        self.mul + self.div + self.modulo
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ResolutionDag {
    pub nodes: Vec<Node>,
    pub inputs: Vec<String>,
    /// Bank address outputs, one per banking unit.
    pub ba: Vec<usize>,
    /// Bank offset output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bo: Option<usize>,
}

impl ResolutionDag {
    /// Value of every node for the given inputs.
    pub fn eval_all(&self, inputs: &[i64]) -> Vec<i64> {
        let mut v = vec![0i64; self.nodes.len()];
        for n in &self.nodes {
            let o = |k: usize| v[n.operands[k]];
            v[n.id] = match n.op {
                Op::Input => inputs[n.value.unwrap_or(0) as usize],
                Op::Const => n.value.unwrap_or(0) as i64,
                Op::Add => o(0) + o(1),
                Op::Sub => o(0) - o(1),
                Op::ShiftLeft => o(0) << o(1),
                Op::ShiftRight => o(0) >> o(1),
                Op::And => o(0) & o(1),
                Op::Mux => {
                    if o(0) != 0 {
                        o(1)
                    } else {
                        o(2)
                    }
                }
                Op::Mul => o(0) * o(1),
                Op::Div => o(0).div_euclid(o(1)),
                Op::Mod => o(0).rem_euclid(o(1)),
            };
        }
        v
    }

    /// `(bank address per unit, bank offset)`.
    pub fn resolve(&self, inputs: &[i64]) -> (Vec<u64>, Option<u64>) {
        let v = self.eval_all(inputs);
        (self.ba.iter().map(|&i| v[i] as u64).collect(), self.bo.map(|i| v[i] as u64))
    }

    pub fn census(&self) -> OpCounts {
        let mut c = OpCounts::default();
        for n in &self.nodes {
            match n.op {
                Op::Add => c.add += 1,
                Op::Sub => c.sub += 1,
                Op::ShiftLeft | Op::ShiftRight => c.shift += 1,
                Op::And => c.and += 1,
                Op::Mux => c.mux += 1,
                Op::Mul => c.mul += 1,
                Op::Div => c.div += 1,
                Op::Mod => c.modulo += 1,
                Op::Input | Op::Const => {}
            }
        }
        c
    }

    /// Nodes are stored in topological order with operands before users.
    pub fn is_acyclic(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, n)| n.id == i && n.operands.iter().all(|&o| o < i))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for n in &self.nodes {
            let args: Vec<String> = n.operands.iter().map(|o| format!("%{o}")).collect();
            let line = match n.op {
                Op::Input => format!("%{} = input {}\n", n.id, self.inputs[n.value.unwrap_or(0) as usize]),
                Op::Const => format!("%{} = const {}\n", n.id, n.value.unwrap_or(0)),
                op => format!("%{} = {:?} {}\n", n.id, op, args.join(", ")),
            };
            s.push_str(&line);
        }
        for (u, b) in self.ba.iter().enumerate() {
            s.push_str(&format!("ba[{u}] = %{b}\n"));
        }
        if let Some(b) = self.bo {
            s.push_str(&format!("bo = %{b}\n"));
        }
        s
    }
}

/// One `sign * 2^exp` term of a shift-add multiplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftTerm {
    pub negative: bool,
    pub exp: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftAddPlan {
    pub terms: Vec<ShiftTerm>,
    pub radius: usize,
}

impl ShiftAddPlan {
    pub fn value(&self) -> i128 {
        self.terms.iter().map(|t| if t.negative { -(1i128 << t.exp) } else { 1i128 << t.exp }).sum()
    }
}

/// Plan with at most `radius` terms: plain binary when the popcount fits,
/// else the non-adjacent form.
pub fn shift_add_plan(c: u64, radius: usize) -> Result<ShiftAddPlan> {
    let bits = |c: u64| (0..64).filter(move |b| c >> b & 1 == 1);
    if c != 0 && c.count_ones() as usize <= radius {
        let terms = bits(c).rev().map(|exp| ShiftTerm { negative: false, exp }).collect();
        return Ok(ShiftAddPlan { terms, radius });
    }
    let mut terms = Vec::new();
    let mut n = c as i128;
    let mut exp = 0;
    while n != 0 {
        if n & 1 == 1 {
            let digit = 2 - (n & 3);
            terms.push(ShiftTerm { negative: digit < 0, exp });
            n -= digit;
        }
        n >>= 1;
        exp += 1;
    }
    terms.reverse();
    if c == 0 || terms.len() > radius {
        return Err(Error::NotRepresentable { constant: c, radius });
    }
    Ok(ShiftAddPlan { terms, radius })
}

/// Hash-consing DAG builder that tracks an upper bound per node.
#[derive(Debug, Clone, Default)]
pub struct DagBuilder {
    nodes: Vec<Node>,
    inputs: Vec<String>,
    bounds: Vec<u64>,
    memo: HashMap<(Op, Vec<usize>, Option<u64>), usize>,
    radius: usize,
}

fn bits_for(bound: u64) -> u32 {
    64 - bound.leading_zeros()
}

impl DagBuilder {
    pub fn new() -> Self {
        DagBuilder { radius: SHIFT_ADD_RADIUS, ..Default::default() }
    }

    pub fn with_radius(radius: usize) -> Self {
        DagBuilder { radius, ..Default::default() }
    }

    pub fn bound(&self, x: usize) -> u64 {
        self.bounds[x]
    }

    fn node(&mut self, op: Op, operands: Vec<usize>, value: Option<u64>, bound: u64) -> usize {
        let key = (op, operands.clone(), value);
        if let Some(&id) = self.memo.get(&key) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(Node { id, op, operands, value });
        self.bounds.push(bound);
        self.memo.insert(key, id);
        id
    }

    pub fn input(&mut self, name: impl Into<String>, max: u64) -> usize {
        let idx = self.inputs.len() as u64;
        self.inputs.push(name.into());
        self.node(Op::Input, vec![], Some(idx), max)
    }

    pub fn constant(&mut self, c: u64) -> usize {
        self.node(Op::Const, vec![], Some(c), c)
    }

    fn const_value(&self, x: usize) -> Option<u64> {
        (self.nodes[x].op == Op::Const).then(|| self.nodes[x].value.unwrap_or(0))
    }

    pub fn add(&mut self, a: usize, b: usize) -> usize {
        match (self.const_value(a), self.const_value(b)) {
            (Some(0), _) => b,
            (_, Some(0)) => a,
            (Some(x), Some(y)) => self.constant(x + y),
            _ => {
                let (a, b) = (a.min(b), a.max(b));
                let bound = self.bounds[a].saturating_add(self.bounds[b]);
                self.node(Op::Add, vec![a, b], None, bound)
            }
        }
    }

    /// `a - b`, for callers that guarantee a nonnegative result.
    pub fn sub(&mut self, a: usize, b: usize) -> usize {
        if self.const_value(b) == Some(0) {
            return a;
        }
        let bound = self.bounds[a];
        self.node(Op::Sub, vec![a, b], None, bound)
    }

    pub fn shl(&mut self, a: usize, k: u32) -> usize {
        if k == 0 {
            return a;
        }
        if let Some(v) = self.const_value(a) {
            return self.constant(v << k);
        }
        let c = self.constant(k as u64);
        let bound = self.bounds[a].checked_shl(k).unwrap_or(u64::MAX);
        self.node(Op::ShiftLeft, vec![a, c], None, bound)
    }

    pub fn shr(&mut self, a: usize, k: u32) -> usize {
        if k == 0 {
            return a;
        }
        if let Some(v) = self.const_value(a) {
            return self.constant(v >> k);
        }
        if self.bounds[a] >> k == 0 {
            return self.constant(0);
        }
        let c = self.constant(k as u64);
        let bound = self.bounds[a] >> k;
        self.node(Op::ShiftRight, vec![a, c], None, bound)
    }

    pub fn and(&mut self, a: usize, mask: u64) -> usize {
        if let Some(v) = self.const_value(a) {
            return self.constant(v & mask);
        }
        if mask.checked_add(1).is_some_and(|m| m.is_power_of_two()) && self.bounds[a] <= mask {
            return a;
        }
        let c = self.constant(mask);
        let bound = self.bounds[a].min(mask);
        self.node(Op::And, vec![a, c], None, bound)
    }

    pub fn mux(&mut self, sel: usize, a: usize, b: usize) -> usize {
        if a == b {
            return a;
        }
        let bound = self.bounds[a].max(self.bounds[b]);
        self.node(Op::Mux, vec![sel, a, b], None, bound)
    }

    fn native(&mut self, op: Op, a: usize, c: u64) -> usize {
        let k = self.constant(c);
        let bound = match op {
            Op::Mul => self.bounds[a].saturating_mul(c),
            Op::Div => self.bounds[a] / c,
            _ => self.bounds[a].min(c - 1),
        };
        self.node(op, vec![a, k], None, bound)
    }

    /// `(x >= c, x - c)` without a comparator: with `w` bits covering both,
    /// `t = x + 2^w - c` carries into bit `w` exactly when `x >= c`.
    fn compare_sub(&mut self, x: usize, c: u64) -> (usize, usize) {
        let w = bits_for(self.bounds[x].max(c));
        let k = self.constant((1u64 << w) - c);
        let t = self.add(x, k);
        let sel = self.shr(t, w);
        let low = self.and(t, (1u64 << w) - 1);
        (sel, low)
    }

    /// Folds `x` below `2M`, returning the reduced value and the quotient
    /// accumulated so far.
    fn crandall_fold(&mut self, x: usize, n: u32) -> (usize, usize) {
        let m = (1u64 << n) - 1;
        let mut q = self.constant(0);
        let mut x = x;
        while self.bounds[x] >= 2 * m {
            let hi = self.shr(x, n);
            let lo = self.and(x, m);
            q = self.add(q, hi);
            x = self.add(lo, hi);
        }
        (x, q)
    }

    /// `x mod M` for Mersenne `M = 2^n - 1` using shifts, masks, adds and a
    /// final compare-subtract.
    pub fn crandall_mod(&mut self, x: usize, m: u64) -> Result<usize> {
        let n = mersenne_exponent(m).ok_or(Error::NotMersenne(m))?;
        let (r, _) = self.crandall_fold(x, n);
        if self.bounds[r] < m {
            return Ok(r);
        }
        let (sel, low) = self.compare_sub(r, m);
        let out = self.mux(sel, low, r);
        self.bounds[out] = self.bounds[out].min(m - 1);
        Ok(out)
    }

    /// `floor(x / M)` for Mersenne `M`.
    pub fn crandall_div(&mut self, x: usize, m: u64) -> Result<usize> {
        let n = mersenne_exponent(m).ok_or(Error::NotMersenne(m))?;
        let (r, q) = self.crandall_fold(x, n);
        if self.bounds[r] < m {
            return Ok(q);
        }
        let (sel, _) = self.compare_sub(r, m);
        Ok(self.add(q, sel))
    }

    /// `x mod M2` where `M2 * k` is Mersenne: Crandall reduction followed by
    /// a `k`-way priority mux of compare-subtracts.
    pub fn composite_mod(&mut self, x: usize, m2: u64) -> Result<usize> {
        let (m, k) = mersenne_multiple(m2, COMPOSITE_RADIUS).ok_or(Error::NoMersenneMultiple(m2))?;
        let r = self.crandall_mod(x, m)?;
        let mut out = r;
        for j in 1..k {
            if self.bounds[r] < j * m2 {
                break;
            }
            let (sel, low) = self.compare_sub(r, j * m2);
            out = self.mux(sel, low, out);
        }
        self.bounds[out] = self.bounds[out].min(m2 - 1);
        Ok(out)
    }

    pub fn shift_add_mul(&mut self, a: usize, c: u64) -> Result<usize> {
        let plan = shift_add_plan(c, self.radius)?;
        let mut acc: Option<usize> = None;
        for t in &plan.terms {
            let term = self.shl(a, t.exp);
            acc = Some(match (acc, t.negative) {
                (None, false) => term,
                (None, true) => unreachable!("leading NAF digit is positive"),
                (Some(v), false) => self.add(v, term),
                (Some(v), true) => self.sub(v, term),
            });
        }
        let out = acc.expect("plan has terms");
        self.bounds[out] = self.bounds[a].saturating_mul(c);
        Ok(out)
    }

    pub fn mul_const(&mut self, a: usize, c: u64) -> usize {
        match c {
            0 => self.constant(0),
            1 => a,
            _ if is_power_of_two(c) => self.shl(a, c.trailing_zeros()),
            _ => match self.shift_add_mul(a, c) {
                Ok(v) => v,
                Err(_) => self.native(Op::Mul, a, c),
            },
        }
    }

    pub fn mod_const(&mut self, x: usize, m: u64) -> usize {
        if m == 1 {
            return self.constant(0);
        }
        if self.bounds[x] < m {
            return x;
        }
        if is_power_of_two(m) {
            return self.and(x, m - 1);
        }
        if let Ok(v) = self.crandall_mod(x, m) {
            return v;
        }
        if let Ok(v) = self.composite_mod(x, m) {
            return v;
        }
        let k = m.trailing_zeros();
        if k > 0 {
            // x mod 2^k m' = ((x >> k) mod m') << k | (x & (2^k - 1))
            let hi = self.shr(x, k);
            let r = self.mod_const(hi, m >> k);
            let r = self.shl(r, k);
            let lo = self.and(x, (1u64 << k) - 1);
            let out = self.add(r, lo);
            self.bounds[out] = self.bounds[out].min(m - 1);
            return out;
        }
        self.native(Op::Mod, x, m)
    }

    pub fn div_const(&mut self, x: usize, m: u64) -> usize {
        if m == 1 {
            return x;
        }
        if self.bounds[x] < m {
            return self.constant(0);
        }
        if is_power_of_two(m) {
            return self.shr(x, m.trailing_zeros());
        }
        if let Ok(v) = self.crandall_div(x, m) {
            return v;
        }
        let k = m.trailing_zeros();
        if k > 0 {
            let hi = self.shr(x, k);
            return self.div_const(hi, m >> k);
        }
        if let Some((big, factor)) = mersenne_multiple(m, COMPOSITE_RADIUS) {
            if shift_add_plan(factor, self.radius).is_ok() {
                let scaled = self.mul_const(x, factor);
                return self.crandall_div(scaled, big).expect("Mersenne");
            }
        }
        self.native(Op::Div, x, m)
    }

    /// Finishes with the given outputs, dropping unreachable nodes.
    pub fn finish(self, ba: Vec<usize>, bo: Option<usize>) -> ResolutionDag {
        let mut live = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = ba.iter().copied().chain(bo).collect();
        while let Some(i) = stack.pop() {
            if !live[i] {
                live[i] = true;
                stack.extend(&self.nodes[i].operands);
            }
        }
        for n in &self.nodes {
            if n.op == Op::Input {
                live[n.id] = true;
            }
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for n in &self.nodes {
            if live[n.id] {
                remap[n.id] = nodes.len();
                nodes.push(Node {
                    id: nodes.len(),
                    op: n.op,
                    operands: n.operands.iter().map(|&o| remap[o]).collect(),
                    value: n.value,
                });
            }
        }
        ResolutionDag {
            nodes,
            inputs: self.inputs,
            ba: ba.iter().map(|&i| remap[i]).collect(),
            bo: bo.map(|i| remap[i]),
        }
    }
}

/// Rewritten bank address and offset logic for `g` with partition region `p`.
pub fn build_resolution(g: &HyperplaneGeometry, p: &[u64]) -> ResolutionDag {
    let mut b = DagBuilder::new();
    let padded = crate::geometry::padded_dims(&g.dims, p);
    let xs: Vec<usize> = padded.iter().enumerate().map(|(d, &e)| b.input(format!("x{d}"), e - 1)).collect();
    let units = g.units();
    let mut ba = Vec::new();
    let mut sums = Vec::new();
    for u in &units {
        let mut s = b.constant(0);
        for &(d, a) in &u.coeffs {
            let t = b.mul_const(xs[d], a as u64);
            s = b.add(s, t);
        }
        let q = b.div_const(s, u.block);
        ba.push(b.mod_const(q, u.banks));
        sums.push(s);
    }
    let mut rank = b.constant(0);
    for (d, &x) in xs.iter().enumerate() {
        let regions = g.dims[d].div_ceil(p[d]);
        let scaled = b.mul_const(rank, regions);
        let digit = b.div_const(x, p[d]);
        rank = b.add(scaled, digit);
    }
    let mut corr = b.constant(0);
    for (u, &s) in units.iter().zip(&sums) {
        let scaled = b.mul_const(corr, u.effective_block());
        let r = b.mod_const(s, u.block);
        let c = b.div_const(r, u.stride());
        corr = b.add(scaled, c);
    }
    let base = b.mul_const(rank, g.region_slots());
    let bo = b.add(base, corr);
    b.finish(ba, Some(bo))
}

/// Single-input DAG computing `x mod m`, `x / m` or `x * m` over `width` bits.
pub fn single_op(kind: Op, m: u64, width: u32) -> Result<ResolutionDag> {
    if m == 0 {
        return Err(Error::invalid("constant must be positive"));
    }
    if !(1..=62).contains(&width) {
        return Err(Error::invalid("width must be in 1..=62"));
    }
    let mut b = DagBuilder::new();
    let x = b.input("x", (1u64 << width) - 1);
    let out = match kind {
        Op::Mod => b.mod_const(x, m),
        Op::Div => b.div_const(x, m),
        Op::Mul => b.mul_const(x, m),
        other => return Err(Error::invalid(format!("unsupported op {other:?}"))),
    };
    Ok(b.finish(vec![out], None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HyperplaneGeometry;

    fn eval1(dag: &ResolutionDag, x: i64) -> i64 {
        dag.resolve(&[x]).0[0] as i64
    }

    #[test]
    fn crandall_examples() {
        let mut b = DagBuilder::new();
        let x = b.input("x", 65535);
        let m7 = b.crandall_mod(x, 7).unwrap();
        let d7 = b.crandall_div(x, 7).unwrap();
        let m15 = b.crandall_mod(x, 15).unwrap();
        let d31 = b.crandall_div(x, 31).unwrap();
        let dag = b.finish(vec![m7, d7, m15, d31], None);
        let r = |x| dag.resolve(&[x]).0;
        assert_eq!(r(100), vec![2, 14, 10, 3]);
        assert_eq!(r(0), vec![0, 0, 0, 0]);
        assert_eq!(r(6)[1], 0);
        assert_eq!(r(65535)[2], 0);
        assert_eq!(r(1000)[3], 32);
        let c = dag.census();
        assert_eq!(c.arithmetic(), 0);
        assert!(matches!(DagBuilder::new().crandall_mod(0, 6), Err(Error::NotMersenne(6))));
    }

    #[test]
    fn composite_examples() {
        let mut b = DagBuilder::new();
        let x = b.input("x", 65535);
        let m5 = b.composite_mod(x, 5).unwrap();
        let m21 = b.composite_mod(x, 21).unwrap();
        let dag = b.finish(vec![m5, m21], None);
        assert_eq!(dag.resolve(&[17]).0[0], 2);
        assert_eq!(dag.resolve(&[0]).0[0], 0);
        assert_eq!(dag.resolve(&[100]).0[1], 16);
        assert!(matches!(DagBuilder::new().composite_mod(0, 6), Err(Error::NoMersenneMultiple(6))));
    }

    #[test]
    fn shift_add_examples() {
        assert_eq!(shift_add_plan(1, 2).unwrap().terms.len(), 1);
        let six = shift_add_plan(6, 2).unwrap();
        assert!(six.terms.iter().all(|t| !t.negative));
        assert_eq!(six.value(), 6);
        let seven = shift_add_plan(7, 2).unwrap();
        assert_eq!(seven.terms, vec![ShiftTerm { negative: false, exp: 3 }, ShiftTerm { negative: true, exp: 0 }]);
        assert!(matches!(shift_add_plan(11, 2), Err(Error::NotRepresentable { constant: 11, radius: 2 })));
        let dag = single_op(Op::Mul, 6, 8).unwrap();
        assert_eq!(eval1(&dag, 7), 42);
        let dag = single_op(Op::Mul, 7, 8).unwrap();
        assert_eq!(eval1(&dag, 9), 63);
    }

    #[test]
    fn power_of_two_is_a_mask() {
        let g = HyperplaneGeometry::flat(4, 1, vec![1], vec![16]);
        let dag = build_resolution(&g, &[4]);
        let c = dag.census();
        assert_eq!(c.arithmetic(), 0);
        assert_eq!(c.add + c.sub + c.mux, 0);
        assert_eq!(dag.nodes[dag.ba[0]].op, Op::And);
    }

    #[test]
    fn mersenne_banks_have_no_native_ops() {
        for n in [6u64, 7] {
            let g = HyperplaneGeometry::flat(n, 1, vec![1], vec![102]);
            let p = g.select_parallelotope().unwrap();
            let dag = build_resolution(&g, &p);
            assert_eq!(dag.census().modulo + dag.census().div, 0, "N={n}");
            for x in 0..102 {
                let (ba, bo) = dag.resolve(&[x]);
                assert_eq!(ba, g.bank_vector(&[x]));
                assert_eq!(bo.unwrap(), g.bank_offset(&[x], &p).unwrap());
            }
        }
    }

    #[test]
    fn native_fallback_stays_exact() {
        for (op, m) in [(Op::Mod, 11u64), (Op::Div, 11), (Op::Mul, 11), (Op::Div, 5), (Op::Mod, 12), (Op::Div, 24)] {
            let dag = single_op(op, m, 12).unwrap();
            assert!(dag.is_acyclic());
            for x in 0..4096i64 {
                let want = match op {
                    Op::Mod => x % m as i64,
                    Op::Div => x / m as i64,
                    _ => x * m as i64,
                };
                assert_eq!(eval1(&dag, x), want, "{op:?} {m} at {x}");
            }
        }
    }
}
