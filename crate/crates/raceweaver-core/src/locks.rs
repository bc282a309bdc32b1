//! Definite lock coverage.
//!
//! Lock operands resolve to type-level identities: the canonical field
//! chain that reaches the lock, or a named global. Each function is
//! summarized per lock as a table mapping entry mode to exit mode, so a
//! call site applies its callees' net effect without re-walking them.
//! Wrapper functions fall out of the same tables. Entry facts then
//! propagate caller-first: a function starts with the intersection of the
//! locksets at its call sites, and every instruction's definite lockset is
//! the meet over all paths from that entry fact.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::callgraph::{CallGraph, Callee};
use crate::cfg::Cfg;
use crate::fields::{canon_steps, trace_operand, CanonChain, ExtractDiagnostics, Pointee};
use crate::ir::*;
use crate::structural::StructuralTypeIds;

/// Identity of a lock, independent of which object instance carries it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum LockId {
    /// A lock reached through a field chain; identified type-level.
    Field(CanonChain),
    /// A module global used directly as a lock.
    Global(String),
}

/// Locks definitely held, with the weakest mode guaranteed on all paths.
pub type LockSet = BTreeMap<LockId, LockMode>;

/// Names of external base primitives and annotation functions.
#[derive(Debug, Clone, Default)]
pub struct LockConfig {
    /// Call names acting as acquire primitives, with their mode.
    pub acquire: BTreeMap<String, LockMode>,
    /// Call names acting as release primitives.
    pub release: BTreeSet<String>,
    /// Call names asserting a lock is held (checked by extensions).
    pub asserts: BTreeSet<String>,
    /// Allocation primitives (used by the init/teardown heuristic).
    pub alloc: BTreeSet<String>,
    /// Deallocation primitives (used by the init/teardown heuristic).
    pub dealloc: BTreeSet<String>,
}

/// Role a wrapper function plays for one lock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrapperRole {
    pub kind: WrapperKind,
    pub lock: LockId,
    /// Mode guaranteed after the call (acquire roles only).
    pub mode: LockMode,
    /// Index of the parameter whose type roots the lock chain, if any.
    pub arg: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrapperKind {
    /// Acquires the lock on every path to return.
    Acquire,
    /// Leaves the lock released on every path to return.
    Release,
}

/// Counters and notes from event resolution and summary construction.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct LockDiagnostics {
    /// Lock operands that resolved to no identity at all.
    pub unresolved_ops: u32,
    /// Lock operands that resolved to more than one identity (acquires
    /// there contribute nothing definite).
    pub ambiguous_ops: u32,
    /// Lock-typed pointers with no field provenance (raw lock parameters).
    pub raw_param_locks: u32,
    /// Functions in recursive call cycles that touch locks; their
    /// summaries are conservative and they are never wrappers.
    pub wrapper_cycles: Vec<String>,
}

/// Result of the coverage analysis.
#[derive(Debug, Default)]
pub struct LockCoverage {
    /// Definite lockset immediately before each reachable instruction,
    /// closed under chain implication (a held A→B→lock also lists B→lock).
    pub facts: BTreeMap<InstrRef, LockSet>,
    /// Every lock identity observed in any event, suffix-closed.
    pub universe: BTreeSet<LockId>,
    /// Wrapper roles per function.
    pub wrappers: BTreeMap<FuncId, Vec<WrapperRole>>,
    /// Lock-held assertions, resolved (for the extensions pass).
    pub asserts: BTreeMap<InstrRef, Vec<LockId>>,
    pub diags: LockDiagnostics,
}

impl LockCoverage {
    /// Lockset in force at `at` (empty when unreachable or lock-free).
    pub fn at(&self, at: InstrRef) -> LockSet {
        self.facts.get(&at).cloned().unwrap_or_default()
    }
}

// Modes form the chain absent < read < write < exclusive. An acquire
// upgrades to the strongest mode seen, a path meet keeps the weakest.
const ABSENT: u8 = 0;

fn mode_up(m: LockMode) -> u8 {
    match m {
        LockMode::Read => 1,
        LockMode::Write => 2,
        LockMode::Exclusive => 3,
    }
}

fn mode_back(v: u8) -> Option<LockMode> {
    match v {
        1 => Some(LockMode::Read),
        2 => Some(LockMode::Write),
        3 => Some(LockMode::Exclusive),
        _ => None,
    }
}

/// Exit mode for each of the four entry modes; identity when untouched.
type Vec4 = [u8; 4];
const IDENTITY: Vec4 = [0, 1, 2, 3];

/// Per-lock effect table of one function.
type Table = BTreeMap<LockId, Vec4>;

/// Concrete fact: held locks and their modes (absent entries omitted).
type Fact = BTreeMap<LockId, u8>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Acquire(u8),
    Release,
    Assert,
}

#[derive(Debug, Clone)]
struct Event {
    kind: EventKind,
    ids: Vec<LockId>,
}

/// All suffixes of a lock identity, itself included: acquiring or
/// releasing A→B→lock also acquires or releases B→lock, never the
/// reverse.
fn suffixes(id: &LockId) -> Vec<LockId> {
    match id {
        LockId::Global(_) => alloc::vec![id.clone()],
        LockId::Field(chain) => (0..chain.0.len())
            .map(|i| LockId::Field(CanonChain(chain.0[i..].to_vec())))
            .collect(),
    }
}

/// Resolves a lock operand to identities. A whole global is a global
/// lock; traced pointees must end at a lock-typed field or be a pointer
/// to a lock object with field provenance.
fn resolve_lock_operand(
    m: &Module,
    f: &Function,
    ids: &StructuralTypeIds,
    op: &Operand,
    diags: &mut LockDiagnostics,
) -> Vec<LockId> {
    if let Operand::Global(g) = op {
        return alloc::vec![LockId::Global(m.global(*g).name.clone())];
    }
    let mut throwaway = ExtractDiagnostics::default();
    let pointees = trace_operand(m, f, op, &mut throwaway);
    let mut out: BTreeSet<LockId> = BTreeSet::new();
    for p in pointees {
        match p {
            Pointee::Field { chain } => {
                let Some(last) = chain.last() else { continue };
                let lockish = match m.types.get(last.ty).field_at(last.offset) {
                    Some(fd) => match fd.elem {
                        ElemType::Lock => true,
                        ElemType::Struct(w) => m.types.is_lock_type(w),
                        _ => false,
                    },
                    None => false,
                };
                if lockish {
                    out.insert(LockId::Field(canon_steps(ids, &chain)));
                }
            }
            Pointee::Object { ty, prefix, .. } if m.types.is_lock_type(ty) => {
                if prefix.is_empty() {
                    // A raw pointer to a lock object carries no field
                    // identity; nothing definite can be said about it.
                    diags.raw_param_locks += 1;
                } else {
                    out.insert(LockId::Field(canon_steps(ids, &prefix)));
                }
            }
            _ => {}
        }
    }
    let out: Vec<LockId> = out.into_iter().collect();
    match out.len() {
        0 => diags.unresolved_ops += 1,
        1 => {}
        _ => diags.ambiguous_ops += 1,
    }
    out
}

/// The lock event an instruction performs, if any: native lock
/// instructions, or calls to configured base primitives (lock = first
/// argument).
fn instr_event(
    m: &Module,
    f: &Function,
    ids: &StructuralTypeIds,
    config: &LockConfig,
    ins: &Instr,
    diags: &mut LockDiagnostics,
) -> Option<Event> {
    let (kind, op) = match ins {
        Instr::Acquire { lock, mode } => (EventKind::Acquire(mode_up(*mode)), lock),
        Instr::Release { lock } => (EventKind::Release, lock),
        Instr::AssertHeld { lock } => (EventKind::Assert, lock),
        Instr::Call { callee, args, .. } => {
            if let Some(mode) = config.acquire.get(callee) {
                match args.first() {
                    Some(a) => (EventKind::Acquire(mode_up(*mode)), a),
                    None => {
                        diags.unresolved_ops += 1;
                        return None;
                    }
                }
            } else if config.release.contains(callee) {
                match args.first() {
                    Some(a) => (EventKind::Release, a),
                    None => {
                        diags.unresolved_ops += 1;
                        return None;
                    }
                }
            } else if config.asserts.contains(callee) {
                match args.first() {
                    Some(a) => (EventKind::Assert, a),
                    None => {
                        diags.unresolved_ops += 1;
                        return None;
                    }
                }
            } else {
                return None;
            }
        }
        _ => return None,
    };
    let ids = resolve_lock_operand(m, f, ids, op, diags);
    Some(Event { kind, ids })
}

/// Shared state of one coverage run.
struct Engine<'a> {
    m: &'a Module,
    cg: &'a CallGraph,
    /// Resolved event per instruction that performs one.
    events: BTreeMap<InstrRef, Event>,
    /// Per-function effect tables (phase A output); no entry means the
    /// function has no path to a return at all.
    tables: BTreeMap<FuncId, Table>,
    /// Functions with no reachable return; calls to them end the path.
    no_return: BTreeSet<FuncId>,
    /// Members of recursive components; never classified as wrappers.
    cyclic: BTreeSet<FuncId>,
    cfgs: Vec<Cfg>,
    universe: BTreeSet<LockId>,
    diags: LockDiagnostics,
}

impl<'a> Engine<'a> {
    fn new(m: &'a Module, cg: &'a CallGraph, config: &LockConfig) -> Self {
        let sids = StructuralTypeIds::compute(&m.types);
        let mut diags = LockDiagnostics::default();
        let mut events = BTreeMap::new();
        let mut universe = BTreeSet::new();
        for (fi, f) in m.funcs.iter().enumerate() {
            for (b, i, ins) in f.instrs() {
                if let Some(ev) = instr_event(m, f, &sids, config, ins, &mut diags) {
                    for id in &ev.ids {
                        universe.extend(suffixes(id));
                    }
                    events.insert(
                        InstrRef {
                            func: FuncId(fi as u32),
                            block: b,
                            idx: i,
                        },
                        ev,
                    );
                }
            }
        }
        let cfgs = m.funcs.iter().map(Cfg::build).collect();
        Engine {
            m,
            cg,
            events,
            tables: BTreeMap::new(),
            no_return: BTreeSet::new(),
            cyclic: BTreeSet::new(),
            cfgs,
            universe,
            diags,
        }
    }

    /// Defined call targets of a call site, plus whether any target is
    /// external or unresolved (those contribute an identity effect).
    fn call_targets(&self, site: InstrRef) -> (Vec<FuncId>, bool) {
        let mut defined = Vec::new();
        let mut opaque = false;
        match self.cg.edges.get(&site) {
            None => opaque = true,
            Some(ts) if ts.is_empty() => opaque = true,
            Some(ts) => {
                for t in ts {
                    match t {
                        Callee::Defined(fid) => defined.push(*fid),
                        Callee::External(_) => opaque = true,
                    }
                }
            }
        }
        (defined, opaque)
    }

    // ----- Phase A: effect tables, callee-first -----------------------

    fn compute_tables(&mut self) {
        let sccs = condensation(self.m, self.cg);
        // `condensation` returns components callee-first already.
        for comp in &sccs {
            let recursive = comp.len() > 1 || self.calls_itself(comp[0]);
            if recursive {
                self.conservative_tables(comp);
            } else {
                match self.function_table(comp[0]) {
                    Some(t) => {
                        self.tables.insert(comp[0], t);
                    }
                    None => {
                        self.no_return.insert(comp[0]);
                    }
                }
            }
        }
    }

    fn calls_itself(&self, f: FuncId) -> bool {
        self.cg
            .callers
            .get(&f)
            .is_some_and(|sites| sites.iter().any(|s| s.func == f))
    }

    /// Members of a recursive component guarantee nothing about any lock
    /// the component touches: their tables kill every mentioned lock.
    /// The kill-only table looks like a release wrapper's, so members
    /// are also barred from wrapper classification.
    fn conservative_tables(&mut self, comp: &[FuncId]) {
        self.cyclic.extend(comp.iter().copied());
        let mut mentioned: BTreeSet<LockId> = BTreeSet::new();
        for &f in comp {
            let fun = self.m.func(f);
            for (b, i, _) in fun.instrs() {
                let site = InstrRef {
                    func: f,
                    block: b,
                    idx: i,
                };
                if let Some(ev) = self.events.get(&site) {
                    for id in &ev.ids {
                        mentioned.extend(suffixes(id));
                    }
                }
                let (defined, _) = self.call_targets(site);
                for callee in defined {
                    if let Some(t) = self.tables.get(&callee) {
                        mentioned.extend(t.keys().cloned());
                    }
                }
            }
        }
        if !mentioned.is_empty() {
            for &f in comp {
                self.diags.wrapper_cycles.push(self.m.func(f).name.clone());
            }
            self.diags.wrapper_cycles.sort();
        }
        let table: Table = mentioned
            .into_iter()
            .map(|l| (l, [ABSENT; 4]))
            .collect();
        for &f in comp {
            self.tables.insert(f, table.clone());
        }
    }

    /// Defined targets of a call that can actually return, plus whether
    /// the effect must also meet with identity (opaque targets). `None`
    /// means the path dies at this call: every target is defined and
    /// none of them ever returns.
    fn call_effect_targets(&self, site: InstrRef) -> Option<(Vec<FuncId>, bool)> {
        let (defined, opaque) = self.call_targets(site);
        if defined.is_empty() {
            return Some((Vec::new(), true));
        }
        let returning: Vec<FuncId> = defined
            .into_iter()
            .filter(|c| !self.no_return.contains(c))
            .collect();
        if returning.is_empty() && !opaque {
            return None;
        }
        Some((returning, opaque))
    }

    /// Symbolic per-lock dataflow: the fact tracks, for each of the four
    /// entry modes, the mode the lock would have now. The function's
    /// table is the meet over all returns; `None` when no return is
    /// reachable (every path loops forever or dies at a call that never
    /// returns).
    fn function_table(&mut self, fid: FuncId) -> Option<Table> {
        let f = self.m.func(fid);
        let cfg = &self.cfgs[fid.0 as usize];
        let nb = f.blocks.len();
        let mut input: Vec<Option<Table>> = alloc::vec![None; nb];
        input[0] = Some(Table::new());
        let mut work: Vec<BlockId> = alloc::vec![BlockId(0)];
        let mut exit: Option<Table> = None;
        while let Some(b) = work.pop() {
            let Some(fact) = input[b.0 as usize].clone() else {
                continue;
            };
            let mut cur = fact;
            let blk = f.block(b);
            let mut live = true;
            for (i, ins) in blk.instrs.iter().enumerate() {
                let site = InstrRef {
                    func: fid,
                    block: b,
                    idx: i as u32,
                };
                if !self.apply_symbolic(site, ins, &mut cur) {
                    live = false;
                    break;
                }
                if matches!(ins, Instr::Ret { .. }) {
                    exit = Some(match exit.take() {
                        None => cur.clone(),
                        Some(e) => meet_tables(&e, &cur),
                    });
                }
            }
            if !live {
                continue;
            }
            for &s in &cfg.succs[b.0 as usize] {
                let merged = match &input[s.0 as usize] {
                    None => cur.clone(),
                    Some(old) => meet_tables(old, &cur),
                };
                if input[s.0 as usize].as_ref() != Some(&merged) {
                    input[s.0 as usize] = Some(merged);
                    work.push(s);
                }
            }
        }
        exit
    }

    /// Applies one instruction to the symbolic fact; false means the
    /// path cannot continue past it.
    fn apply_symbolic(&self, site: InstrRef, ins: &Instr, fact: &mut Table) -> bool {
        if let Some(ev) = self.events.get(&site) {
            apply_event_vec(ev, fact);
            return true;
        }
        if matches!(ins, Instr::Call { .. } | Instr::ICall { .. }) {
            let Some((returning, opaque)) = self.call_effect_targets(site) else {
                return false;
            };
            let touched: BTreeSet<LockId> = returning
                .iter()
                .filter_map(|c| self.tables.get(c))
                .flat_map(|t| t.keys().cloned())
                .collect();
            for l in touched {
                let cur = fact.get(&l).copied().unwrap_or(IDENTITY);
                let mut out = [u8::MAX; 4];
                for callee in &returning {
                    let eff = self
                        .tables
                        .get(callee)
                        .and_then(|t| t.get(&l).copied())
                        .unwrap_or(IDENTITY);
                    for i in 0..4 {
                        out[i] = out[i].min(eff[cur[i] as usize]);
                    }
                }
                if opaque {
                    for i in 0..4 {
                        out[i] = out[i].min(cur[i]);
                    }
                }
                set_vec(fact, l, out);
            }
        }
        true
    }

    // ----- Phase B: entry facts caller-first, concrete facts ----------

    fn compute_facts(&mut self) -> BTreeMap<InstrRef, Fact> {
        let mut order = condensation(self.m, self.cg);
        order.reverse(); // caller-first
        let mut entries: BTreeMap<FuncId, Fact> = BTreeMap::new();
        let mut site_facts: BTreeMap<InstrRef, Fact> = BTreeMap::new();
        let mut out: BTreeMap<InstrRef, Fact> = BTreeMap::new();
        let top: Fact = self.universe.iter().map(|l| (l.clone(), 3u8)).collect();

        for comp in &order {
            let in_comp = |f: FuncId| comp.contains(&f);
            let is_root = |f: FuncId| self.cg.callers.get(&f).is_none_or(|s| s.is_empty());
            // A component only called from code that itself never runs
            // (dead blocks, unreached callers) gets no facts at all.
            let reached = comp.iter().any(|&f| {
                is_root(f)
                    || self
                        .cg
                        .callers
                        .get(&f)
                        .is_some_and(|sites| sites.iter().any(|s| site_facts.contains_key(s)))
            });
            if !reached {
                continue;
            }
            // Optimistic start for members only reached from inside the
            // component; the loop below shrinks facts monotonically.
            for &f in comp {
                let outside: Vec<&Fact> = self
                    .cg
                    .callers
                    .get(&f)
                    .into_iter()
                    .flatten()
                    .filter(|s| !in_comp(s.func))
                    .filter_map(|s| site_facts.get(s))
                    .collect();
                let entry = if is_root(f) {
                    Fact::new() // roots start with nothing held
                } else if outside.is_empty() {
                    top.clone()
                } else {
                    outside
                        .into_iter()
                        .fold(None::<Fact>, |acc, f| {
                            Some(match acc {
                                None => f.clone(),
                                Some(a) => meet_facts(&a, f),
                            })
                        })
                        .unwrap_or_default()
                };
                entries.insert(f, entry);
            }
            loop {
                let mut changed = false;
                for &f in comp {
                    self.concrete_pass(f, &entries[&f], &mut out, &mut site_facts);
                }
                for &f in comp {
                    let Some(all_sites) = self.cg.callers.get(&f) else {
                        continue;
                    };
                    if all_sites.is_empty() {
                        continue;
                    }
                    let mut entry: Option<Fact> = None;
                    let mut any = false;
                    for s in all_sites {
                        if let Some(sf) = site_facts.get(s) {
                            any = true;
                            entry = Some(match entry {
                                None => sf.clone(),
                                Some(e) => meet_facts(&e, sf),
                            });
                        }
                    }
                    // Sites in unreachable code never record a fact and
                    // contribute no paths.
                    if !any {
                        continue;
                    }
                    let entry = entry.unwrap_or_default();
                    if entries[&f] != entry {
                        entries.insert(f, entry);
                        changed = true;
                    }
                }
                if !changed || comp.len() == 1 && !self.calls_itself(comp[0]) {
                    break;
                }
            }
        }
        out
    }

    /// Forward must-pass over one function from a fixed entry fact,
    /// recording the pre-fact of every reachable instruction.
    fn concrete_pass(
        &self,
        fid: FuncId,
        entry: &Fact,
        out: &mut BTreeMap<InstrRef, Fact>,
        site_facts: &mut BTreeMap<InstrRef, Fact>,
    ) {
        let f = self.m.func(fid);
        let cfg = &self.cfgs[fid.0 as usize];
        let nb = f.blocks.len();
        let mut input: Vec<Option<Fact>> = alloc::vec![None; nb];
        input[0] = Some(entry.clone());
        let mut work = alloc::vec![BlockId(0)];
        while let Some(b) = work.pop() {
            let Some(fact) = input[b.0 as usize].clone() else {
                continue;
            };
            let mut cur = fact;
            let mut live = true;
            for (i, ins) in f.block(b).instrs.iter().enumerate() {
                let site = InstrRef {
                    func: fid,
                    block: b,
                    idx: i as u32,
                };
                out.insert(site, cur.clone());
                if matches!(ins, Instr::Call { .. } | Instr::ICall { .. }) {
                    site_facts.insert(site, cur.clone());
                }
                if !self.apply_concrete(site, ins, &mut cur) {
                    live = false;
                    break;
                }
            }
            if !live {
                continue;
            }
            for &s in &cfg.succs[b.0 as usize] {
                let merged = match &input[s.0 as usize] {
                    None => cur.clone(),
                    Some(old) => meet_facts(old, &cur),
                };
                if input[s.0 as usize].as_ref() != Some(&merged) {
                    input[s.0 as usize] = Some(merged);
                    work.push(s);
                }
            }
        }
    }

    /// Applies one instruction to the concrete fact; false means the
    /// path cannot continue past it.
    fn apply_concrete(&self, site: InstrRef, ins: &Instr, fact: &mut Fact) -> bool {
        if let Some(ev) = self.events.get(&site) {
            apply_event(ev, fact);
            return true;
        }
        if matches!(ins, Instr::Call { .. } | Instr::ICall { .. }) {
            let Some((returning, opaque)) = self.call_effect_targets(site) else {
                return false;
            };
            let touched: BTreeSet<LockId> = returning
                .iter()
                .filter_map(|c| self.tables.get(c))
                .flat_map(|t| t.keys().cloned())
                .collect();
            for l in touched {
                let cur = fact.get(&l).copied().unwrap_or(ABSENT);
                let mut m = u8::MAX;
                for callee in &returning {
                    let eff = self
                        .tables
                        .get(callee)
                        .and_then(|t| t.get(&l).copied())
                        .unwrap_or(IDENTITY);
                    m = m.min(eff[cur as usize]);
                }
                if opaque {
                    m = m.min(cur);
                }
                if m == ABSENT {
                    fact.remove(&l);
                } else {
                    fact.insert(l, m);
                }
            }
        }
        true
    }

    fn wrappers(&self) -> BTreeMap<FuncId, Vec<WrapperRole>> {
        let sids = StructuralTypeIds::compute(&self.m.types);
        let mut out: BTreeMap<FuncId, Vec<WrapperRole>> = BTreeMap::new();
        for (fid, table) in &self.tables {
            if self.cyclic.contains(fid) {
                continue;
            }
            let f = self.m.func(*fid);
            let mut roles = Vec::new();
            for (l, vec) in table {
                let arg = match l {
                    LockId::Field(chain) => chain.0.first().and_then(|(root, _)| {
                        f.params.iter().position(|(_, s)| match s {
                            SlotType::Ptr(t) => sids.id(*t) == *root,
                            _ => false,
                        })
                    }),
                    LockId::Global(_) => None,
                };
                if let Some(mode) = mode_back(vec[0]) {
                    // Only parameter-rooted locks make a wrapper.
                    if arg.is_some() {
                        roles.push(WrapperRole {
                            kind: WrapperKind::Acquire,
                            lock: l.clone(),
                            mode,
                            arg,
                        });
                    }
                } else if *vec == [ABSENT; 4] && arg.is_some() {
                    roles.push(WrapperRole {
                        kind: WrapperKind::Release,
                        lock: l.clone(),
                        mode: LockMode::Exclusive,
                        arg,
                    });
                }
            }
            if !roles.is_empty() {
                out.insert(*fid, roles);
            }
        }
        out
    }
}

fn set_vec(fact: &mut Table, l: LockId, v: Vec4) {
    if v == IDENTITY {
        fact.remove(&l);
    } else {
        fact.insert(l, v);
    }
}

fn apply_event_vec(ev: &Event, fact: &mut Table) {
    match ev.kind {
        EventKind::Acquire(m) => {
            if ev.ids.len() == 1 {
                for s in suffixes(&ev.ids[0]) {
                    let cur = fact.get(&s).copied().unwrap_or(IDENTITY);
                    set_vec(fact, s, cur.map(|c| c.max(m)));
                }
            }
        }
        EventKind::Release => {
            for id in &ev.ids {
                for s in suffixes(id) {
                    set_vec(fact, s, [ABSENT; 4]);
                }
            }
        }
        EventKind::Assert => {}
    }
}

fn apply_event(ev: &Event, fact: &mut Fact) {
    match ev.kind {
        EventKind::Acquire(m) => {
            if ev.ids.len() == 1 {
                for s in suffixes(&ev.ids[0]) {
                    let cur = fact.get(&s).copied().unwrap_or(ABSENT);
                    fact.insert(s, cur.max(m));
                }
            }
        }
        EventKind::Release => {
            for id in &ev.ids {
                for s in suffixes(id) {
                    fact.remove(&s);
                }
            }
        }
        EventKind::Assert => {}
    }
}

fn meet_tables(a: &Table, b: &Table) -> Table {
    let mut out = Table::new();
    for l in a.keys().chain(b.keys()) {
        if out.contains_key(l) {
            continue;
        }
        let va = a.get(l).copied().unwrap_or(IDENTITY);
        let vb = b.get(l).copied().unwrap_or(IDENTITY);
        let mut v = [0u8; 4];
        for i in 0..4 {
            v[i] = va[i].min(vb[i]);
        }
        if v != IDENTITY {
            out.insert(l.clone(), v);
        }
    }
    out
}

fn meet_facts(a: &Fact, b: &Fact) -> Fact {
    let mut out = Fact::new();
    for (l, &va) in a {
        if let Some(&vb) = b.get(l) {
            let v = va.min(vb);
            if v != ABSENT {
                out.insert(l.clone(), v);
            }
        }
    }
    out
}

/// Strongly connected components of the defined-call graph, returned
/// callee-first (a component appears after every component it calls
/// into). Deterministic under function reordering is not required here —
/// only the resulting facts must be order-independent, and they are,
/// because the fixed point is unique.
fn condensation(m: &Module, cg: &CallGraph) -> Vec<Vec<FuncId>> {
    let n = m.funcs.len();
    let mut succ: Vec<BTreeSet<u32>> = alloc::vec![BTreeSet::new(); n];
    for (site, targets) in &cg.edges {
        for t in targets {
            if let Callee::Defined(fid) = t {
                succ[site.func.0 as usize].insert(fid.0);
            }
        }
    }
    // Tarjan, iterative.
    let mut index = alloc::vec![u32::MAX; n];
    let mut low = alloc::vec![0u32; n];
    let mut on_stack = alloc::vec![false; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut next = 0u32;
    let mut comps: Vec<Vec<FuncId>> = Vec::new();
    for start in 0..n as u32 {
        if index[start as usize] != u32::MAX {
            continue;
        }
        // (node, iterator position over succs)
        let mut call: Vec<(u32, Vec<u32>, usize)> = Vec::new();
        let succs: Vec<u32> = succ[start as usize].iter().copied().collect();
        index[start as usize] = next;
        low[start as usize] = next;
        next += 1;
        stack.push(start);
        on_stack[start as usize] = true;
        call.push((start, succs, 0));
        while let Some((v, vs, mut i)) = call.pop() {
            let mut descended = false;
            while i < vs.len() {
                let w = vs[i];
                i += 1;
                if index[w as usize] == u32::MAX {
                    index[w as usize] = next;
                    low[w as usize] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w as usize] = true;
                    let wsucc: Vec<u32> = succ[w as usize].iter().copied().collect();
                    call.push((v, vs, i));
                    call.push((w, wsucc, 0));
                    descended = true;
                    break;
                } else if on_stack[w as usize] {
                    low[v as usize] = low[v as usize].min(index[w as usize]);
                }
            }
            if descended {
                continue;
            }
            if low[v as usize] == index[v as usize] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w as usize] = false;
                    comp.push(FuncId(w));
                    if w == v {
                        break;
                    }
                }
                comp.sort();
                comps.push(comp);
            }
            if let Some((p, _, _)) = call.last() {
                let p = *p as usize;
                low[p] = low[p].min(low[v as usize]);
            }
        }
    }
    comps
}

/// Detects lock wrapper functions: per function, the locks it acquires
/// on every path to return (with mode) or leaves released on every path,
/// keyed to the parameter whose type roots the lock chain.
pub fn detect_lock_wrappers(
    m: &Module,
    cg: &CallGraph,
    config: &LockConfig,
) -> BTreeMap<FuncId, Vec<WrapperRole>> {
    let mut eng = Engine::new(m, cg, config);
    eng.compute_tables();
    eng.wrappers()
}

/// Computes definite lock coverage for every reachable instruction.
pub fn compute_lock_coverage(m: &Module, cg: &CallGraph, config: &LockConfig) -> LockCoverage {
    let mut eng = Engine::new(m, cg, config);
    eng.compute_tables();
    let raw = eng.compute_facts();
    let wrappers = eng.wrappers();

    let mut facts: BTreeMap<InstrRef, LockSet> = BTreeMap::new();
    for (site, fact) in raw {
        let set: LockSet = fact
            .into_iter()
            .filter_map(|(l, v)| mode_back(v).map(|m| (l, m)))
            .collect();
        facts.insert(site, set);
    }
    let mut asserts = BTreeMap::new();
    for (site, ev) in &eng.events {
        if ev.kind == EventKind::Assert {
            asserts.insert(*site, ev.ids.clone());
        }
    }
    LockCoverage {
        facts,
        universe: eng.universe,
        wrappers,
        asserts,
        diags: eng.diags,
    }
}
