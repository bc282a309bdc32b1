//! Call graph construction.
//!
//! Direct calls resolve by name. An indirect call is traced
//! intra-procedurally to constant function references — through casts,
//! phi/select joins, and single-hop struct-field store/load pairs — and
//! resolves to exactly those functions when tracing succeeds. Otherwise it
//! degrades to every address-taken function whose structural signature is
//! compatible with the evidence visible at the call site. A function whose
//! address only ever feeds calls through signature casts is dropped from
//! the address-taken set: such a call is a direct call in disguise, not an
//! escape of the function's address.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::fields::{trace_operand, ExtractDiagnostics, Pointee};
use crate::ir::*;
use crate::structural::StructuralTypeIds;

/// Resolved target of a call edge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Callee {
    /// A function defined in the module.
    Defined(FuncId),
    /// A call out of the module, kept as a named stub.
    External(String),
}

/// How a call site's target set was determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// `call name(...)`: exactly the named function.
    Direct,
    /// An indirect call whose pointer is one constant reference behind
    /// signature casts only; semantically a direct call.
    CastDirect,
    /// An indirect call traced to constant function references.
    Constant,
    /// An indirect call matched against the address-taken set by
    /// structural signature.
    TypeMatched,
}

/// Call edges, their exact inverse, and the pruned address-taken set.
#[derive(Debug, Default)]
pub struct CallGraph {
    /// Possible callees of every call site.
    pub edges: BTreeMap<InstrRef, BTreeSet<Callee>>,
    /// How each call site was resolved.
    pub resolution: BTreeMap<InstrRef, Resolution>,
    /// Inverse of `edges`, restricted to defined callees.
    pub callers: BTreeMap<FuncId, BTreeSet<InstrRef>>,
    /// Functions whose address escapes into data or value joins, after
    /// pruning references that only feed calls.
    pub address_taken: BTreeSet<FuncId>,
}

impl CallGraph {
    /// Builds the call graph of `m`. Deterministic; the result is
    /// immutable and can be read from any number of threads.
    pub fn build(m: &Module) -> CallGraph {
        let ids = StructuralTypeIds::compute(&m.types);
        let address_taken = pruned_address_taken(m);
        let mut cg = CallGraph {
            address_taken,
            ..CallGraph::default()
        };

        for (fi, f) in m.funcs.iter().enumerate() {
            let caller = FuncId(fi as u32);
            for (block, idx, ins) in f.instrs() {
                let site = InstrRef {
                    func: caller,
                    block,
                    idx,
                };
                let (targets, res) = match ins {
                    Instr::Call { callee, .. } => {
                        let t = match m.func_id(callee) {
                            Some(fid) => Callee::Defined(fid),
                            None => Callee::External(callee.clone()),
                        };
                        (BTreeSet::from([t]), Resolution::Direct)
                    }
                    Instr::ICall {
                        dst, fptr, args, ..
                    } => match trace_constants(m, f, fptr, &mut BTreeSet::new(), &ids) {
                        Trace::Known { names, casts_only } => {
                            let targets = names
                                .into_iter()
                                .map(|n| match m.func_id(&n) {
                                    Some(fid) => Callee::Defined(fid),
                                    None => Callee::External(n),
                                })
                                .collect();
                            let res = if casts_only {
                                Resolution::CastDirect
                            } else {
                                Resolution::Constant
                            };
                            (targets, res)
                        }
                        Trace::Unknown => {
                            let targets = cg
                                .address_taken
                                .iter()
                                .copied()
                                .filter(|&cand| {
                                    signature_matches(m, &ids, f, args, dst.is_some(), cand)
                                })
                                .map(Callee::Defined)
                                .collect();
                            (targets, Resolution::TypeMatched)
                        }
                    },
                    _ => continue,
                };
                for t in &targets {
                    if let Callee::Defined(fid) = t {
                        cg.callers.entry(*fid).or_default().insert(site);
                    }
                }
                cg.edges.insert(site, targets);
                cg.resolution.insert(site, res);
            }
        }
        cg
    }

    /// Defined-function targets of a call site (empty for unknown sites).
    pub fn defined_targets(&self, site: InstrRef) -> BTreeSet<FuncId> {
        self.edges
            .get(&site)
            .map(|ts| {
                ts.iter()
                    .filter_map(|t| match t {
                        Callee::Defined(fid) => Some(*fid),
                        Callee::External(_) => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Sorted `caller -> callee @block.idx` edge list, one line each.
    /// Independent of function declaration order.
    pub fn dump(&self, m: &Module) -> String {
        let mut lines: Vec<String> = Vec::new();
        for (site, targets) in &self.edges {
            let caller = m.func(site.func);
            let block = &caller.block(site.block).name;
            for t in targets {
                let callee = match t {
                    Callee::Defined(fid) => m.func(*fid).name.as_str(),
                    Callee::External(n) => n.as_str(),
                };
                lines.push(alloc::format!(
                    "{} -> {} @{}.{}",
                    caller.name,
                    callee,
                    block,
                    site.idx
                ));
            }
        }
        lines.sort();
        let mut out = String::new();
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }
}

/// The unrefined target set of an indirect call: every function whose
/// address is taken anywhere (no call-feeding pruning) with a compatible
/// structural signature. Refined resolution never adds to this set.
pub fn naive_indirect_targets(m: &Module, site: InstrRef) -> BTreeSet<FuncId> {
    let f = m.func(site.func);
    let Instr::ICall { dst, args, .. } = f.instr(site.block, site.idx) else {
        return BTreeSet::new();
    };
    let ids = StructuralTypeIds::compute(&m.types);
    raw_address_taken(m)
        .into_iter()
        .filter(|&cand| signature_matches(m, &ids, f, args, dst.is_some(), cand))
        .collect()
}

/// Every defined function that appears as a constant reference operand.
fn raw_address_taken(m: &Module) -> BTreeSet<FuncId> {
    let mut out = BTreeSet::new();
    for f in &m.funcs {
        for (_, _, ins) in f.instrs() {
            for op in ins.operands() {
                if let Operand::Func(name) = op {
                    if let Some(fid) = m.func_id(name) {
                        out.insert(fid);
                    }
                }
            }
        }
    }
    out
}

/// Address-taken set with call-feeding-only references pruned: a function
/// reference that is an indirect-call pointer, or a cast source whose
/// result is used exclusively as indirect-call pointers (transitively
/// through further casts), does not escape the function's address.
fn pruned_address_taken(m: &Module) -> BTreeSet<FuncId> {
    let mut escaping: BTreeSet<FuncId> = BTreeSet::new();
    for f in &m.funcs {
        let mut memo: BTreeMap<ValueId, bool> = BTreeMap::new();
        let escape = |op: &Operand, out: &mut BTreeSet<FuncId>| {
            if let Operand::Func(name) = op {
                if let Some(fid) = m.func_id(name) {
                    out.insert(fid);
                }
            }
        };
        for (_, _, ins) in f.instrs() {
            match ins {
                // The pointer position is a call use; arguments escape.
                Instr::ICall { args, .. } => {
                    for a in args {
                        escape(a, &mut escaping);
                    }
                }
                // A cast source escapes unless the cast result is used
                // exclusively as indirect-call pointers.
                Instr::Cast { dst, src, .. } => {
                    if !only_feeds_calls(f, *dst, &mut memo) {
                        escape(src, &mut escaping);
                    }
                }
                _ => {
                    for op in ins.operands() {
                        escape(op, &mut escaping);
                    }
                }
            }
        }
    }
    escaping
}

/// Whether every use of `v` in `f` is an indirect-call pointer, directly
/// or through further casts. A value with no uses does not feed a call;
/// the reference behind it stays address-taken.
fn only_feeds_calls(f: &Function, v: ValueId, memo: &mut BTreeMap<ValueId, bool>) -> bool {
    if let Some(&hit) = memo.get(&v) {
        return hit;
    }
    memo.insert(v, false); // cycle cut; SSA keeps cast chains acyclic anyway
    let mut any_use = false;
    let mut all_calls = true;
    for (_, _, ins) in f.instrs() {
        match ins {
            Instr::ICall { fptr, args, .. } => {
                if *fptr == Operand::Value(v) {
                    any_use = true;
                }
                if args.contains(&Operand::Value(v)) {
                    all_calls = false;
                }
            }
            Instr::Cast { dst, src, .. } if *src == Operand::Value(v) => {
                any_use = true;
                if !only_feeds_calls(f, *dst, memo) {
                    all_calls = false;
                }
            }
            _ => {
                if ins.operands().contains(&&Operand::Value(v)) {
                    all_calls = false;
                }
            }
        }
    }
    let out = any_use && all_calls;
    memo.insert(v, out);
    out
}

/// Outcome of tracing an indirect-call pointer to constants.
enum Trace {
    /// All paths reach constant function references.
    Known {
        names: BTreeSet<String>,
        /// True when the pointer is a single constant behind casts only.
        casts_only: bool,
    },
    /// At least one path is opaque; fall back to signature matching.
    Unknown,
}

/// Traces `op` to constant function references: through casts, through
/// phi/select joins (every arm must resolve), and through one
/// store/load hop on a struct field within the same function.
fn trace_constants(
    m: &Module,
    f: &Function,
    op: &Operand,
    visiting: &mut BTreeSet<ValueId>,
    ids: &StructuralTypeIds,
) -> Trace {
    match op {
        Operand::Func(name) => Trace::Known {
            names: BTreeSet::from([name.clone()]),
            casts_only: true,
        },
        Operand::Value(v) => {
            if !visiting.insert(*v) {
                return Trace::Unknown;
            }
            let out = match &f.value_defs[v.0 as usize] {
                ValueDef::Param(_) => Trace::Unknown,
                ValueDef::Instr(b, i) => match f.instr(*b, *i) {
                    Instr::Cast { src, .. } => trace_constants(m, f, src, visiting, ids),
                    Instr::Phi { srcs, .. } => join_arms(m, f, srcs, visiting, ids),
                    Instr::Select {
                        then_v, else_v, ..
                    } => {
                        let arms = [then_v.clone(), else_v.clone()];
                        join_arms(m, f, &arms, visiting, ids)
                    }
                    Instr::Load { addr, .. } => field_hop(f, addr, ids),
                    _ => Trace::Unknown,
                },
            };
            visiting.remove(v);
            out
        }
        _ => Trace::Unknown,
    }
}

/// Union of per-arm constants; any opaque arm poisons the join.
fn join_arms(
    m: &Module,
    f: &Function,
    arms: &[Operand],
    visiting: &mut BTreeSet<ValueId>,
    ids: &StructuralTypeIds,
) -> Trace {
    let mut names = BTreeSet::new();
    for arm in arms {
        match trace_constants(m, f, arm, visiting, ids) {
            Trace::Known { names: n, .. } => names.extend(n),
            Trace::Unknown => return Trace::Unknown,
        }
    }
    Trace::Known {
        names,
        casts_only: false,
    }
}

/// A load of a struct field resolves to the constants stored into the
/// structurally same field within this function — one memory hop, no
/// cross-function tracking. Any non-constant store, or no store at all,
/// leaves the load opaque.
fn field_hop(f: &Function, addr: &Operand, ids: &StructuralTypeIds) -> Trace {
    let Some(key) = field_key(f, addr, ids) else {
        return Trace::Unknown;
    };
    let mut names = BTreeSet::new();
    let mut any = false;
    for (_, _, ins) in f.instrs() {
        let Instr::Store {
            val, addr: dest, ..
        } = ins
        else {
            continue;
        };
        if field_key(f, dest, ids) != Some(key.clone()) {
            continue;
        }
        any = true;
        match val {
            Operand::Func(n) => {
                names.insert(n.clone());
            }
            _ => return Trace::Unknown,
        }
    }
    if any {
        Trace::Known {
            names,
            casts_only: false,
        }
    } else {
        Trace::Unknown
    }
}

/// Identity of a declared struct field address: the owner's structural
/// class plus the field steps. `None` for byte arithmetic, undeclared
/// walks, or addresses that are not field computations.
fn field_key(
    f: &Function,
    addr: &Operand,
    ids: &StructuralTypeIds,
) -> Option<(crate::structural::StructuralTypeId, Vec<u64>)> {
    let mut op = addr;
    for _ in 0..64 {
        let Operand::Value(v) = op else { return None };
        match &f.value_defs[v.0 as usize] {
            ValueDef::Param(_) => return None,
            ValueDef::Instr(b, i) => match f.instr(*b, *i) {
                Instr::Cast { src, .. } => op = src,
                Instr::Addr { decl_ty, steps, .. } => {
                    let decl = (*decl_ty)?;
                    let mut offs = Vec::new();
                    for s in steps {
                        match s {
                            AddrStep::Field(o) => offs.push(*o),
                            AddrStep::Byte(_) => return None,
                        }
                    }
                    return Some((ids.id(decl), offs));
                }
                _ => return None,
            },
        }
    }
    None
}

/// Whether `cand` could be the callee of an indirect call with these
/// arguments: arity matches, a used result implies a return value, and
/// every argument whose pointee class is known structurally equals the
/// corresponding parameter slot. Arguments without evidence constrain
/// nothing.
fn signature_matches(
    m: &Module,
    ids: &StructuralTypeIds,
    caller: &Function,
    args: &[Operand],
    wants_ret: bool,
    cand: FuncId,
) -> bool {
    let cf = m.func(cand);
    if cf.params.len() != args.len() {
        return false;
    }
    if wants_ret && cf.ret.is_none() {
        return false;
    }
    for (arg, (_, slot)) in args.iter().zip(&cf.params) {
        let Some(class) = arg_class(m, ids, caller, arg) else {
            continue;
        };
        let param_class = match slot {
            SlotType::Scalar => None,
            SlotType::Ptr(t) => Some((1u8, ids.id(*t))),
            SlotType::PtrPtr(t) => Some((2u8, ids.id(*t))),
        };
        if param_class != Some(class) {
            return false;
        }
    }
    true
}

/// The structural pointer class of an argument, when every traced pointee
/// agrees on one: `(1, id)` for pointer-to-struct, `(2, id)` for
/// pointer-to-pointer. `None` means no usable evidence.
fn arg_class(
    m: &Module,
    ids: &StructuralTypeIds,
    caller: &Function,
    arg: &Operand,
) -> Option<(u8, crate::structural::StructuralTypeId)> {
    let mut diags = ExtractDiagnostics::default();
    let pointees = trace_operand(m, caller, arg, &mut diags);
    let mut class: Option<(u8, crate::structural::StructuralTypeId)> = None;
    for p in pointees {
        let c = match p {
            Pointee::Object { ty, .. } => (1u8, ids.id(ty)),
            Pointee::Slot { ty } => (2u8, ids.id(ty)),
            Pointee::Field { chain } => {
                let last = chain.last()?;
                match m.types.get(last.ty).field_at(last.offset)?.elem {
                    ElemType::Struct(w) => (1u8, ids.id(w)),
                    ElemType::Ref(w) => (2u8, ids.id(w)),
                    ElemType::Scalar | ElemType::Lock => return None,
                }
            }
        };
        match class {
            None => class = Some(c),
            Some(prev) if prev != c => return None,
            Some(_) => {}
        }
    }
    class
}
