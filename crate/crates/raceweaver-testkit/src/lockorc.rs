//! Inlined-path lockset oracle.
//!
//! Enumerates execution paths from root functions (functions no direct
//! call names), inlining every defined call and bounding loops by
//! allowing each block at most two visits per activation, and records
//! the meet of the locksets seen immediately before each instruction.
//! Built as plain path walking with none of the analysis machinery so
//! the two implementations can check each other; the analysis and the
//! oracle must agree on every instruction the oracle visits.

use std::collections::{BTreeMap, BTreeSet};

use raceweaver_core::fields::{canon_steps, trace_operand, ExtractDiagnostics, Pointee};
use raceweaver_core::ir::*;
use raceweaver_core::locks::{LockConfig, LockId, LockSet};
use raceweaver_core::structural::StructuralTypeIds;

/// Held modes: 1 read, 2 write, 3 exclusive; absent keys not held.
type Fact = BTreeMap<LockId, u8>;

/// Per-instruction meet-over-paths locksets.
pub struct OracleCoverage {
    pub facts: BTreeMap<InstrRef, LockSet>,
    /// Block segments processed; guards against runaway enumeration.
    pub steps: u64,
}

fn mode_up(m: LockMode) -> u8 {
    match m {
        LockMode::Read => 1,
        LockMode::Write => 2,
        LockMode::Exclusive => 3,
    }
}

fn mode_back(v: u8) -> LockMode {
    match v {
        1 => LockMode::Read,
        2 => LockMode::Write,
        _ => LockMode::Exclusive,
    }
}

/// Independent lock-operand resolution: a global operand is a global
/// lock; a traced field chain ending in a lock-typed field names that
/// chain; a lock-object pointer with field provenance names its prefix.
fn resolve(m: &Module, f: &Function, sids: &StructuralTypeIds, op: &Operand) -> Vec<LockId> {
    if let Operand::Global(g) = op {
        return vec![LockId::Global(m.global(*g).name.clone())];
    }
    let mut scratch = ExtractDiagnostics::default();
    let mut out = BTreeSet::new();
    for p in trace_operand(m, f, op, &mut scratch) {
        match p {
            Pointee::Field { chain } => {
                let Some(last) = chain.last() else { continue };
                let lockish = m.types.get(last.ty).field_at(last.offset).is_some_and(
                    |fd| match fd.elem {
                        ElemType::Lock => true,
                        ElemType::Struct(w) => m.types.is_lock_type(w),
                        _ => false,
                    },
                );
                if lockish {
                    out.insert(LockId::Field(canon_steps(sids, &chain)));
                }
            }
            Pointee::Object { ty, prefix, .. }
                if m.types.is_lock_type(ty) && !prefix.is_empty() =>
            {
                out.insert(LockId::Field(canon_steps(sids, &prefix)));
            }
            _ => {}
        }
    }
    out.into_iter().collect()
}

fn suffixes(id: &LockId) -> Vec<LockId> {
    match id {
        LockId::Global(_) => vec![id.clone()],
        LockId::Field(chain) => (0..chain.0.len())
            .map(|i| {
                LockId::Field(raceweaver_core::fields::CanonChain(chain.0[i..].to_vec()))
            })
            .collect(),
    }
}

enum Ev {
    Acquire(u8, Vec<LockId>),
    Release(Vec<LockId>),
    Nop,
}

/// The lock event `ins` performs, if any. Calls to configured primitive
/// names act on their first argument and are never inlined.
fn event_of(
    m: &Module,
    f: &Function,
    sids: &StructuralTypeIds,
    config: &LockConfig,
    ins: &Instr,
) -> Option<Ev> {
    match ins {
        Instr::Acquire { lock, mode } => {
            Some(Ev::Acquire(mode_up(*mode), resolve(m, f, sids, lock)))
        }
        Instr::Release { lock } => Some(Ev::Release(resolve(m, f, sids, lock))),
        Instr::AssertHeld { .. } => Some(Ev::Nop),
        Instr::Call { callee, args, .. } => {
            let arg = args.first()?;
            if let Some(mode) = config.acquire.get(callee) {
                Some(Ev::Acquire(mode_up(*mode), resolve(m, f, sids, arg)))
            } else if config.release.contains(callee) {
                Some(Ev::Release(resolve(m, f, sids, arg)))
            } else if config.asserts.contains(callee) {
                Some(Ev::Nop)
            } else {
                None
            }
        }
        _ => None,
    }
}

fn apply(ev: &Ev, fact: &mut Fact) {
    match ev {
        Ev::Acquire(m, ids) => {
            // Only an unambiguous acquire establishes anything definite.
            if ids.len() == 1 {
                for s in suffixes(&ids[0]) {
                    let cur = fact.get(&s).copied().unwrap_or(0);
                    fact.insert(s, cur.max(*m));
                }
            }
        }
        Ev::Release(ids) => {
            for id in ids {
                for s in suffixes(id) {
                    fact.remove(&s);
                }
            }
        }
        Ev::Nop => {}
    }
}

fn meet(a: &Fact, b: &Fact) -> Fact {
    let mut out = Fact::new();
    for (l, &va) in a {
        if let Some(&vb) = b.get(l) {
            out.insert(l.clone(), va.min(vb));
        }
    }
    out
}

struct Walker<'a> {
    m: &'a Module,
    config: &'a LockConfig,
    sids: StructuralTypeIds,
    memo: BTreeMap<(FuncId, Fact), BTreeSet<Fact>>,
    in_progress: BTreeSet<(FuncId, Fact)>,
    facts: BTreeMap<InstrRef, Fact>,
    steps: u64,
    cap: u64,
}

impl<'a> Walker<'a> {
    fn record(&mut self, site: InstrRef, fact: &Fact) {
        match self.facts.get_mut(&site) {
            None => {
                self.facts.insert(site, fact.clone());
            }
            Some(cur) => *cur = meet(cur, fact),
        }
    }

    /// Walks every bounded path through `fid` from `entry`, returning the
    /// set of locksets reaching a return.
    fn walk(&mut self, fid: FuncId, entry: &Fact) -> BTreeSet<Fact> {
        let key = (fid, entry.clone());
        if let Some(hit) = self.memo.get(&key) {
            return hit.clone();
        }
        if !self.in_progress.insert(key.clone()) {
            return BTreeSet::new(); // recursion: no completed paths
        }
        let m = self.m;
        let f = m.func(fid);
        let mut exits: BTreeSet<Fact> = BTreeSet::new();
        let mut visits0 = vec![0u8; f.blocks.len()];
        visits0[0] = 1;
        let mut stack: Vec<(BlockId, usize, Fact, Vec<u8>)> =
            vec![(BlockId(0), 0, entry.clone(), visits0)];
        while let Some((b, start, mut fact, visits)) = stack.pop() {
            self.steps += 1;
            assert!(
                self.steps <= self.cap,
                "lock oracle exceeded {} path segments",
                self.cap
            );
            let blk = f.block(b);
            for idx in start..blk.instrs.len() {
                let site = InstrRef {
                    func: fid,
                    block: b,
                    idx: idx as u32,
                };
                self.record(site, &fact);
                let ins = &blk.instrs[idx];
                if let Some(ev) = event_of(m, f, &self.sids, self.config, ins) {
                    apply(&ev, &mut fact);
                    continue;
                }
                match ins {
                    Instr::Call { callee, .. } => {
                        if let Some(target) = m.func_id(callee) {
                            for exit in self.walk(target, &fact) {
                                stack.push((b, idx + 1, exit, visits.clone()));
                            }
                            break; // continuations carry on from idx + 1
                        }
                        // Undefined callee: no lock effect.
                    }
                    Instr::Br {
                        cond,
                        then_b,
                        else_b,
                    } => {
                        let mut targets = vec![*then_b];
                        if let Some(e) = else_b {
                            if cond.is_some() && e != then_b {
                                targets.push(*e);
                            }
                        }
                        for t in targets {
                            if visits[t.0 as usize] < 2 {
                                let mut v = visits.clone();
                                v[t.0 as usize] += 1;
                                stack.push((t, 0, fact.clone(), v));
                            }
                        }
                        break;
                    }
                    Instr::Ret { .. } => {
                        exits.insert(fact.clone());
                        break;
                    }
                    _ => {}
                }
            }
        }
        self.in_progress.remove(&key);
        self.memo.insert(key, exits.clone());
        exits
    }
}

/// Runs the oracle over every root function of `m`.
///
/// Roots are functions no direct call in the module names; each starts
/// with nothing held. `cap` bounds the total number of block segments
/// walked (a guard against runaway path counts, not a soundness knob).
pub fn enumerate_locksets(m: &Module, config: &LockConfig, cap: u64) -> OracleCoverage {
    let mut called: BTreeSet<String> = BTreeSet::new();
    for f in &m.funcs {
        for (_, _, ins) in f.instrs() {
            if let Instr::Call { callee, .. } = ins {
                called.insert(callee.clone());
            }
        }
    }
    let mut w = Walker {
        m,
        config,
        sids: StructuralTypeIds::compute(&m.types),
        memo: BTreeMap::new(),
        in_progress: BTreeSet::new(),
        facts: BTreeMap::new(),
        steps: 0,
        cap,
    };
    for fid in m.func_ids() {
        if !called.contains(&m.func(fid).name) {
            let entry = Fact::new();
            w.walk(fid, &entry);
        }
    }
    let facts = w
        .facts
        .iter()
        .map(|(site, fact)| {
            let set: LockSet = fact
                .iter()
                .map(|(l, &v)| (l.clone(), mode_back(v)))
                .collect();
            (*site, set)
        })
        .collect();
    OracleCoverage {
        facts,
        steps: w.steps,
    }
}
