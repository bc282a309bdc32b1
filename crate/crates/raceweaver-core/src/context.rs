//! Context sources and indirection distances.
//!
//! Every field access is walked backwards through the SSA graph — and
//! across call boundaries in both directions — to find where the object
//! it touches came from: function parameters, module globals, or an
//! unknown cutoff. Each discovered source carries the indirection
//! distance of the walk (+1 per load or crossed return value, +k per
//! k-index address computation) and a weight that splits when a
//! parameter fans out to several call sites.
//!
//! The evidence is pooled per accessed struct type and compared per
//! source: when the accesses holding a rule's lock are, on weighted
//! average, strictly more direct than the ones missing it, the locked
//! pattern is trusted and the violation stands; otherwise it is
//! suppressed. Return values of allocation primitives and operands
//! passed to them are initialisation, never context.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::vec::Vec;
use core::cmp::Reverse;

use num_traits::Zero;

use crate::callgraph::{CallGraph, Callee};
use crate::fields::AccessKind;
use crate::ir::*;
use crate::locks::{LockConfig, LockId};
use crate::rules::{AccessField, AccessSite, Suppression, Violation};
use crate::structural::StructuralTypeId;
use crate::Rat;

/// Where a backwards provenance walk ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ContextSource {
    /// A function parameter the accessed object arrived through.
    Param { func: FuncId, index: usize },
    /// A module global.
    Global(GlobalId),
    /// A cutoff: an unmodeled definition, an external call result, or
    /// the depth limit.
    Unknown,
}

/// One source reached from an access.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ContextEdge {
    pub source: ContextSource,
    /// Indirections between the access and the source.
    pub dist: u32,
    /// Caller-split share: each crossing from a parameter to its call
    /// sites divides the path's weight by the number of sites.
    pub weight: Rat,
}

/// Context edges per access site, parallel to the site list.
#[derive(Debug, Clone, Default)]
pub struct ContextIndex {
    pub edges: Vec<Vec<ContextEdge>>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct State {
    dist: u32,
    func: FuncId,
    value: ValueId,
    weight: Rat,
}

struct Walker<'a> {
    m: &'a Module,
    cg: &'a CallGraph,
    alloc_names: &'a BTreeSet<alloc::string::String>,
    limit: u32,
    heap: BinaryHeap<Reverse<State>>,
    /// Smallest distance each (function, value) was expanded at; later
    /// and equal revisits are dropped, so cyclic walks terminate.
    settled: BTreeMap<(FuncId, ValueId), u32>,
    out: BTreeSet<ContextEdge>,
}

impl<'a> Walker<'a> {
    fn emit(&mut self, source: ContextSource, dist: u32, weight: Rat) {
        self.out.insert(ContextEdge {
            source,
            dist,
            weight,
        });
    }

    /// Queue `op`, or emit its terminal edge right away. Constants carry
    /// no object provenance and function references are code, not data.
    fn push_operand(&mut self, func: FuncId, op: &Operand, dist: u32, weight: Rat) {
        match op {
            Operand::Value(v) => self.heap.push(Reverse(State {
                dist,
                func,
                value: *v,
                weight,
            })),
            Operand::Global(g) => self.emit(ContextSource::Global(*g), dist, weight),
            Operand::Func(_) | Operand::Null | Operand::Const(_) => {}
        }
    }

    /// Take a distance-increasing step, cutting off at the depth limit.
    fn costed(&mut self, func: FuncId, op: &Operand, dist: u32, cost: u32, weight: Rat) {
        if dist + cost > self.limit {
            self.emit(ContextSource::Unknown, self.limit, weight);
        } else {
            self.push_operand(func, op, dist + cost, weight);
        }
    }

    /// Cross backwards from a call result into its callees' returns.
    fn crossed_returns(&mut self, site: InstrRef, dist: u32, weight: Rat) {
        if dist + 1 > self.limit {
            self.emit(ContextSource::Unknown, self.limit, weight);
            return;
        }
        let nd = dist + 1;
        let mut crossed = false;
        for callee in self.cg.edges.get(&site).into_iter().flatten() {
            crossed = true;
            match callee {
                Callee::Defined(fid) => {
                    let cf = self.m.func(*fid);
                    // Allocation results are initialisation, never context.
                    if self.alloc_names.contains(&cf.name) {
                        continue;
                    }
                    for (_, _, ins) in cf.instrs() {
                        if let Instr::Ret { val: Some(op) } = ins {
                            self.push_operand(*fid, op, nd, weight);
                        }
                    }
                }
                Callee::External(name) => {
                    if !self.alloc_names.contains(name) {
                        self.emit(ContextSource::Unknown, nd, weight);
                    }
                }
            }
        }
        if !crossed {
            self.emit(ContextSource::Unknown, nd, weight);
        }
    }

    fn expand(&mut self, func: FuncId, v: ValueId, dist: u32, weight: Rat) {
        let f = self.m.func(func);
        match f.value_defs[v.0 as usize] {
            // A parameter is both a source in its own right and a
            // crossing point into every call site's argument.
            ValueDef::Param(i) => {
                self.emit(ContextSource::Param { func, index: i }, dist, weight);
                let Some(sites) = self.cg.callers.get(&func) else {
                    return;
                };
                if sites.is_empty() {
                    return;
                }
                let share = weight * Rat::new(1, sites.len() as i128);
                for &site in sites {
                    let args = match self.m.func(site.func).instr(site.block, site.idx) {
                        Instr::Call { args, .. } | Instr::ICall { args, .. } => args,
                        _ => continue,
                    };
                    if let Some(arg) = args.get(i) {
                        self.push_operand(site.func, arg, dist, share);
                    }
                }
            }
            ValueDef::Instr(b, i) => match f.instr(b, i) {
                Instr::Addr { base, steps, .. } => {
                    let cost = steps.len() as u32;
                    self.costed(func, base, dist, cost, weight);
                }
                Instr::Load { addr, .. } => self.costed(func, addr, dist, 1, weight),
                Instr::Cast { src, .. } => self.push_operand(func, src, dist, weight),
                Instr::Phi { srcs, .. } => {
                    for s in srcs {
                        self.push_operand(func, s, dist, weight);
                    }
                }
                Instr::Select { then_v, else_v, .. } => {
                    self.push_operand(func, then_v, dist, weight);
                    self.push_operand(func, else_v, dist, weight);
                }
                Instr::Call { .. } | Instr::ICall { .. } => {
                    let site = InstrRef {
                        func,
                        block: b,
                        idx: i,
                    };
                    self.crossed_returns(site, dist, weight);
                }
                // Anything else (comparisons, ...) carries no provenance
                // this walk models.
                _ => self.emit(ContextSource::Unknown, dist, weight),
            },
        }
    }

    fn run(mut self, start_func: FuncId, start: &Operand) -> Vec<ContextEdge> {
        self.push_operand(start_func, start, 0, Rat::new(1, 1));
        while let Some(Reverse(st)) = self.heap.pop() {
            let k = (st.func, st.value);
            if let Some(&d) = self.settled.get(&k) {
                if d <= st.dist {
                    continue;
                }
            }
            self.settled.insert(k, st.dist);
            self.expand(st.func, st.value, st.dist, st.weight);
        }
        self.out.into_iter().collect()
    }
}

/// Backwards provenance walk from one operand of `func`.
pub fn context_edges_for_operand(
    m: &Module,
    cg: &CallGraph,
    config: &LockConfig,
    func: FuncId,
    op: &Operand,
    depth_limit: u32,
) -> Vec<ContextEdge> {
    Walker {
        m,
        cg,
        alloc_names: &config.alloc,
        limit: depth_limit,
        heap: BinaryHeap::new(),
        settled: BTreeMap::new(),
        out: BTreeSet::new(),
    }
    .run(func, op)
}

/// Context edges for every access site. Walks each site's address (or
/// escaping argument); operands passed to allocation primitives are
/// skipped entirely.
pub fn compute_context_index(
    m: &Module,
    cg: &CallGraph,
    sites: &[AccessSite],
    config: &LockConfig,
    depth_limit: u32,
) -> ContextIndex {
    let mut index = ContextIndex::default();
    for site in sites {
        let at = site.access.instr;
        let ins = m.func(at.func).instr(at.block, at.idx);
        let op = match (&site.access.kind, ins) {
            (AccessKind::Escape { arg, callee }, Instr::Call { args, .. })
            | (AccessKind::Escape { arg, callee }, Instr::ICall { args, .. }) => {
                if config.alloc.contains(callee) {
                    None
                } else {
                    args.get(*arg)
                }
            }
            (_, Instr::Load { addr, .. }) | (_, Instr::Store { addr, .. }) => Some(addr),
            _ => None,
        };
        let edges = match op {
            Some(op) => context_edges_for_operand(m, cg, config, at.func, op, depth_limit),
            None => Vec::new(),
        };
        index.edges.push(edges);
    }
    index
}

/// Distance evidence for one (struct pool, lock, source) triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceStats {
    pub locked_avg: Option<Rat>,
    pub unlocked_avg: Option<Rat>,
}

impl SourceStats {
    /// Locked accesses must be strictly more direct than unlocked ones
    /// to justify reporting; a tie or missing locked evidence does not.
    pub fn reports(&self) -> bool {
        match (&self.locked_avg, &self.unlocked_avg) {
            (Some(l), Some(u)) => l < u,
            _ => false,
        }
    }
}

/// The struct type a site's evidence pools under: the one containing the
/// innermost accessed field.
fn site_terminal(site: &AccessSite) -> StructuralTypeId {
    match &site.field {
        AccessField::Chain(c) => c.0.last().expect("chains are non-empty").0,
        AccessField::TypeOnly(t) => *t,
    }
}

/// Weighted average distances per source, pooled over every access to
/// fields of `terminal` and split by whether `lock` was held there.
pub fn pool_stats(
    sites: &[AccessSite],
    excluded: &BTreeSet<usize>,
    index: &ContextIndex,
    terminal: StructuralTypeId,
    lock: &LockId,
) -> BTreeMap<ContextSource, SourceStats> {
    // (Σ weight·dist, Σ weight) per source, unlocked then locked.
    let zero = || [(Rat::zero(), Rat::zero()), (Rat::zero(), Rat::zero())];
    let mut acc: BTreeMap<ContextSource, [(Rat, Rat); 2]> = BTreeMap::new();
    for (i, site) in sites.iter().enumerate() {
        if excluded.contains(&i) || site_terminal(site) != terminal {
            continue;
        }
        let held = usize::from(site.locks.contains_key(lock));
        for e in &index.edges[i] {
            let a = &mut acc.entry(e.source).or_insert_with(zero)[held];
            a.0 += e.weight * Rat::from_integer(e.dist as i128);
            a.1 += e.weight;
        }
    }
    let avg = |(num, den): (Rat, Rat)| {
        if den.is_zero() {
            None
        } else {
            Some(num / den)
        }
    };
    acc.into_iter()
        .map(|(src, [unlocked, locked])| {
            (
                src,
                SourceStats {
                    locked_avg: avg(locked),
                    unlocked_avg: avg(unlocked),
                },
            )
        })
        .collect()
}

/// Flag every violation none of whose sources shows the locked accesses
/// as strictly more direct. Context never adds reports, it only takes
/// them away.
pub fn apply_context_suppression(
    violations: &mut [Violation],
    sites: &[AccessSite],
    excluded: &BTreeSet<usize>,
    index: &ContextIndex,
) {
    let mut pools: BTreeMap<(StructuralTypeId, LockId), BTreeMap<ContextSource, SourceStats>> =
        BTreeMap::new();
    for v in violations.iter_mut() {
        let terminal = v.rule.field.0.last().expect("rule fields are full chains").0;
        let stats = pools
            .entry((terminal, v.rule.lock.clone()))
            .or_insert_with(|| pool_stats(sites, excluded, index, terminal, &v.rule.lock));
        let reported = index.edges[v.site]
            .iter()
            .any(|e| stats.get(&e.source).is_some_and(|s| s.reports()));
        if !reported {
            v.suppressed_by.insert(Suppression::Context);
        }
    }
}
