//! Field-chain extraction: which struct field does a load, store or escaping
//! call argument touch? Operands are traced backwards through `addr`, `load`,
//! `cast`, `phi` and `select`; out-of-bounds address arithmetic is rewritten
//! against cast targets sharing the same base pointer; and annotated but
//! untraceable accesses fall back to a type-only partial chain.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::ir::*;
use crate::structural::{StructuralTypeId, StructuralTypeIds};

/// One step of a field path: the struct type navigated and the byte offset of
/// the field taken within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChainStep {
    pub ty: TypeId,
    pub offset: u64,
}

/// A field path. `Path` steps run outermost-first; a longer chain implies
/// every suffix of itself. `Partial` carries only a containing type (the
/// annotation fallback) and never identifies a specific field.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum FieldChain {
    Path(Vec<ChainStep>),
    Partial(TypeId),
}

impl FieldChain {
    /// True for the type-only fallback form.
    pub fn is_partial(&self) -> bool {
        matches!(self, FieldChain::Partial(_))
    }

    /// The struct type containing the innermost field (or the fallback type).
    pub fn terminal_type(&self) -> TypeId {
        match self {
            FieldChain::Path(steps) => steps.last().expect("non-empty path").ty,
            FieldChain::Partial(t) => *t,
        }
    }

    /// Path steps, when this is a full chain.
    pub fn steps(&self) -> Option<&[ChainStep]> {
        match self {
            FieldChain::Path(s) => Some(s),
            FieldChain::Partial(_) => None,
        }
    }
}

/// How an access touches its field.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum AccessKind {
    Read,
    Write { atomic: bool },
    /// The field's address was passed to a call.
    Escape { arg: usize, callee: String },
}

/// One field access discovered at an instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldAccess {
    pub chain: FieldChain,
    pub kind: AccessKind,
    pub instr: InstrRef,
    /// Loads weigh by the number of uses of the loaded value (min 1);
    /// stores and escapes weigh 1.
    pub weight: u64,
}

/// Counters for extraction outcomes that lose information.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractDiagnostics {
    /// Address operands that resolved to nothing.
    pub untraceable: u64,
    /// Traces cut off by the per-operand instruction budget.
    pub depth_exceeded: u64,
    /// Out-of-bounds address computations rewritten via a cast target.
    pub recovered: u64,
    /// Recoveries where several cast targets produced distinct valid chains
    /// (all are kept).
    pub ambiguous_recovery: u64,
    /// Accesses salvaged as type-only partial chains from a `!type` note.
    pub partial_fallback: u64,
}

impl ExtractDiagnostics {
    /// Accumulate another function's counters into this one.
    pub fn merge(&mut self, other: &ExtractDiagnostics) {
        self.untraceable += other.untraceable;
        self.depth_exceeded += other.depth_exceeded;
        self.recovered += other.recovered;
        self.ambiguous_recovery += other.ambiguous_recovery;
        self.partial_fallback += other.partial_fallback;
    }
}

/// All accesses of one function plus extraction diagnostics.
#[derive(Debug, Clone, Default)]
pub struct FunctionAccesses {
    pub accesses: Vec<FieldAccess>,
    pub diags: ExtractDiagnostics,
}

/// A chain in name-independent form, used wherever chains act as identities
/// (rule keys, lock identities).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CanonChain(pub Vec<(StructuralTypeId, u64)>);

impl CanonChain {
    /// True when `other` is a suffix of `self` (a chain implies its suffixes).
    pub fn implies(&self, other: &CanonChain) -> bool {
        let (a, b) = (&self.0, &other.0);
        b.len() <= a.len() && a[a.len() - b.len()..] == b[..]
    }
}

/// Canonicalize path steps by structural type identity.
pub fn canon_steps(ids: &StructuralTypeIds, steps: &[ChainStep]) -> CanonChain {
    CanonChain(steps.iter().map(|s| (ids.id(s.ty), s.offset)).collect())
}

/// Human-readable `A.8->B.4` form (or `(T)` for partial chains).
pub fn chain_string(m: &Module, chain: &FieldChain) -> String {
    let mut s = String::new();
    match chain {
        FieldChain::Partial(t) => {
            let _ = write!(s, "({})", m.types.name(*t));
        }
        FieldChain::Path(steps) => {
            for (i, st) in steps.iter().enumerate() {
                if i > 0 {
                    s.push_str("->");
                }
                let _ = write!(s, "{}.{}", m.types.name(st.ty), st.offset);
            }
        }
    }
    s
}

/// What a traced pointer value denotes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pointee {
    /// The address of the field reached by `chain`.
    Field { chain: Vec<ChainStep> },
    /// A pointer to an object of type `ty`. `prefix` is the field path that
    /// produced the pointer (empty for parameters and call results);
    /// `aliases_prefix` is true when the pointer numerically equals the
    /// prefix field's address (cast of a field address) rather than the
    /// value loaded from it.
    Object {
        ty: TypeId,
        prefix: Vec<ChainStep>,
        aliases_prefix: bool,
    },
    /// A pointer-to-pointer parameter slot; one load yields an object of
    /// type `ty`.
    Slot { ty: TypeId },
}

const TRACE_BUDGET: u32 = 128;
const DESCENT_BUDGET: u32 = 32;

struct Tracer<'a> {
    m: &'a Module,
    f: &'a Function,
    budget: u32,
    visiting: BTreeSet<ValueId>,
    memo: BTreeMap<ValueId, Vec<Pointee>>,
    diags: &'a mut ExtractDiagnostics,
}

impl<'a> Tracer<'a> {
    fn new(m: &'a Module, f: &'a Function, diags: &'a mut ExtractDiagnostics) -> Self {
        Tracer {
            m,
            f,
            budget: TRACE_BUDGET,
            visiting: BTreeSet::new(),
            memo: BTreeMap::new(),
            diags,
        }
    }

    fn operand(&mut self, op: &Operand) -> Vec<Pointee> {
        match op {
            Operand::Value(v) => self.value(*v),
            Operand::Global(g) => match self.m.global(*g).ty {
                Some(t) => alloc::vec![Pointee::Object {
                    ty: t,
                    prefix: Vec::new(),
                    aliases_prefix: false,
                }],
                None => Vec::new(),
            },
            Operand::Func(_) | Operand::Null | Operand::Const(_) => Vec::new(),
        }
    }

    fn value(&mut self, v: ValueId) -> Vec<Pointee> {
        if let Some(hit) = self.memo.get(&v) {
            return hit.clone();
        }
        if !self.visiting.insert(v) {
            return Vec::new(); // phi cycle
        }
        if self.budget == 0 {
            self.diags.depth_exceeded += 1;
            self.visiting.remove(&v);
            return Vec::new();
        }
        self.budget -= 1;
        let out = match self.f.value_defs[v.0 as usize] {
            ValueDef::Param(i) => match self.f.params[i].1 {
                SlotType::Scalar => Vec::new(),
                SlotType::Ptr(t) => alloc::vec![Pointee::Object {
                    ty: t,
                    prefix: Vec::new(),
                    aliases_prefix: false,
                }],
                SlotType::PtrPtr(t) => alloc::vec![Pointee::Slot { ty: t }],
            },
            ValueDef::Instr(b, i) => {
                let ins = self.f.instr(b, i).clone();
                self.instr_result(&ins)
            }
        };
        self.visiting.remove(&v);
        let out = dedup(out);
        // Safe to cache even when a cycle guard fired inside: a fresh trace
        // rooted at `v` would cut the same back edges and compute the same
        // set, so the memo never changes an answer, only the cost.
        self.memo.insert(v, out.clone());
        out
    }

    fn instr_result(&mut self, ins: &Instr) -> Vec<Pointee> {
        match ins {
            Instr::Addr {
                base,
                decl_ty,
                steps,
                ..
            } => self.addr(base, *decl_ty, steps),
            Instr::Load { addr, .. } => {
                let mut out = Vec::new();
                for p in self.operand(addr) {
                    match p {
                        Pointee::Field { chain } => {
                            if let Some(ElemType::Ref(w)) = self.elem_at(&chain) {
                                out.push(Pointee::Object {
                                    ty: w,
                                    prefix: chain,
                                    aliases_prefix: false,
                                });
                            }
                        }
                        Pointee::Object { ty, mut prefix, .. } => {
                            if let Some(fd) = self.m.types.get(ty).field_at(0) {
                                if let ElemType::Ref(w) = fd.elem {
                                    prefix.push(ChainStep { ty, offset: 0 });
                                    out.push(Pointee::Object {
                                        ty: w,
                                        prefix,
                                        aliases_prefix: false,
                                    });
                                }
                            }
                        }
                        Pointee::Slot { ty } => out.push(Pointee::Object {
                            ty,
                            prefix: Vec::new(),
                            aliases_prefix: false,
                        }),
                    }
                }
                out
            }
            Instr::Cast { src, to, .. } => {
                let srcs = self.operand(src);
                if srcs.is_empty() {
                    return alloc::vec![Pointee::Object {
                        ty: *to,
                        prefix: Vec::new(),
                        aliases_prefix: false,
                    }];
                }
                srcs.into_iter()
                    .map(|p| match p {
                        Pointee::Field { chain } => Pointee::Object {
                            ty: *to,
                            prefix: chain,
                            aliases_prefix: true,
                        },
                        Pointee::Object {
                            prefix,
                            aliases_prefix,
                            ..
                        } => Pointee::Object {
                            ty: *to,
                            prefix,
                            aliases_prefix,
                        },
                        Pointee::Slot { .. } => Pointee::Object {
                            ty: *to,
                            prefix: Vec::new(),
                            aliases_prefix: false,
                        },
                    })
                    .collect()
            }
            Instr::Phi { srcs, .. } => {
                let mut out = Vec::new();
                for s in srcs {
                    out.extend(self.operand(s));
                }
                out
            }
            Instr::Select { then_v, else_v, .. } => {
                let mut out = self.operand(then_v);
                out.extend(self.operand(else_v));
                out
            }
            Instr::Call { callee, .. } => match self.m.func_id(callee) {
                Some(id) => match self.m.func(id).ret {
                    Some(SlotType::Ptr(t)) => alloc::vec![Pointee::Object {
                        ty: t,
                        prefix: Vec::new(),
                        aliases_prefix: false,
                    }],
                    _ => Vec::new(),
                },
                None => Vec::new(),
            },
            _ => Vec::new(),
        }
    }

    fn elem_at(&self, chain: &[ChainStep]) -> Option<ElemType> {
        let last = chain.last()?;
        let layout = self.m.types.get(last.ty);
        layout.field_at(last.offset).map(|fd| fd.elem)
    }

    fn addr(&mut self, base: &Operand, decl_ty: Option<TypeId>, steps: &[AddrStep]) -> Vec<Pointee> {
        let bases = self.operand(base);
        let has_byte = steps.iter().any(|s| matches!(s, AddrStep::Byte(_)));
        let mut out = Vec::new();
        let mut failed = bases.is_empty();
        if !has_byte {
            for b in &bases {
                match self.walk_fields(b, decl_ty, steps) {
                    Some(chain) => out.push(Pointee::Field { chain }),
                    None => failed = true,
                }
            }
        }
        if out.is_empty() && (has_byte || failed) {
            let recovered = self.recover_oob(base, steps);
            if !recovered.is_empty() {
                self.diags.recovered += 1;
                if recovered.len() > 1 {
                    self.diags.ambiguous_recovery += 1;
                }
                out.extend(
                    recovered
                        .into_iter()
                        .map(|chain| Pointee::Field { chain }),
                );
            }
        }
        out
    }

    /// Navigate declared field steps. Mid-chain steps may only pass through
    /// embedded structs; reference fields need an explicit load.
    fn walk_fields(
        &self,
        base: &Pointee,
        decl_ty: Option<TypeId>,
        steps: &[AddrStep],
    ) -> Option<Vec<ChainStep>> {
        let (start_ty, mut chain) = match base {
            Pointee::Object { ty, prefix, .. } => match decl_ty {
                Some(d) if d != *ty => (d, Vec::new()), // reinterpreted: provenance lost
                _ => (decl_ty.unwrap_or(*ty), prefix.clone()),
            },
            Pointee::Field { chain } => {
                let w = match self.elem_at(chain) {
                    Some(ElemType::Struct(w)) => w,
                    _ => return None,
                };
                if decl_ty.is_some_and(|d| d != w) {
                    return None;
                }
                (w, chain.clone())
            }
            Pointee::Slot { .. } => return None,
        };
        let mut cur = start_ty;
        for (k, step) in steps.iter().enumerate() {
            let off = match step {
                AddrStep::Field(o) => *o,
                AddrStep::Byte(_) => return None,
            };
            let fd = *self.m.types.get(cur).field_at(off)?;
            chain.push(ChainStep { ty: cur, offset: off });
            if k + 1 < steps.len() {
                match fd.elem {
                    ElemType::Struct(u) => cur = u,
                    _ => return None,
                }
            }
        }
        Some(chain)
    }

    /// Rewrite an out-of-bounds or byte-arithmetic address against the type
    /// of its ultimate base or any cast sharing that base: the target chain
    /// is the one at byte offset B_s − B_c from the candidate type's start.
    fn recover_oob(&mut self, base: &Operand, steps: &[AddrStep]) -> Vec<Vec<ChainStep>> {
        let mut delta: i64 = steps.iter().map(step_bytes).sum();
        let root = match base {
            Operand::Value(v) => {
                let (r, d) = self.ultimate_base(*v);
                delta += d;
                r
            }
            other => RootKey::Op(other.clone()),
        };

        // Candidate (type, byte offset) pairs sharing the root.
        let mut cands: Vec<(TypeId, i64)> = Vec::new();
        for p in self.root_pointees(&root) {
            if let Pointee::Object { ty, .. } = p {
                cands.push((ty, 0));
            }
        }
        for (_, _, ins) in self.f.instrs() {
            if let Instr::Cast { src, to, .. } = ins {
                if let Operand::Value(sv) = src {
                    let (r, d) = self.ultimate_base(*sv);
                    if r == root {
                        cands.push((*to, d));
                    }
                } else if RootKey::Op(src.clone()) == root {
                    cands.push((*to, 0));
                }
            }
        }

        let mut out = Vec::new();
        for (ty, bc) in cands {
            let d = delta - bc;
            if d < 0 {
                continue;
            }
            if let Some(chain) = resolve_byte_offset(self.m, ty, d as u64) {
                out.push(chain);
            }
        }
        dedup(out)
    }

    /// Follow `addr` and `cast` definitions to the pointer everything was
    /// computed from, accumulating the byte offset along the way.
    fn ultimate_base(&self, mut v: ValueId) -> (RootKey, i64) {
        let mut delta = 0i64;
        for _ in 0..DESCENT_BUDGET {
            match self.f.value_defs[v.0 as usize] {
                ValueDef::Instr(b, i) => match self.f.instr(b, i) {
                    Instr::Addr { base, steps, .. } => {
                        delta += steps.iter().map(step_bytes).sum::<i64>();
                        match base {
                            Operand::Value(bv) => v = *bv,
                            other => return (RootKey::Op(other.clone()), delta),
                        }
                    }
                    Instr::Cast { src, .. } => match src {
                        Operand::Value(sv) => v = *sv,
                        other => return (RootKey::Op(other.clone()), delta),
                    },
                    _ => return (RootKey::Value(v), delta),
                },
                ValueDef::Param(_) => return (RootKey::Value(v), delta),
            }
        }
        (RootKey::Value(v), delta)
    }

    /// Pointees of the root itself (used as implicit recovery candidates).
    fn root_pointees(&mut self, root: &RootKey) -> Vec<Pointee> {
        match root {
            RootKey::Value(v) => self.value(*v),
            RootKey::Op(op) => self.operand(op),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum RootKey {
    Value(ValueId),
    Op(Operand),
}

fn step_bytes(s: &AddrStep) -> i64 {
    match s {
        AddrStep::Field(o) => *o as i64,
        AddrStep::Byte(d) => *d,
    }
}

/// Descend from `ty` to the field chain sitting exactly `delta` bytes in,
/// passing through embedded structs. Offsets that land mid-field fail.
pub fn resolve_byte_offset(m: &Module, ty: TypeId, delta: u64) -> Option<Vec<ChainStep>> {
    let mut chain = Vec::new();
    let mut cur = ty;
    let mut rem = delta;
    for _ in 0..DESCENT_BUDGET {
        let fd = *m.types.get(cur).field_containing(rem)?;
        chain.push(ChainStep {
            ty: cur,
            offset: fd.offset,
        });
        if rem == fd.offset {
            return Some(chain);
        }
        match fd.elem {
            ElemType::Struct(u) => {
                rem -= fd.offset;
                cur = u;
            }
            _ => return None,
        }
    }
    None
}

/// Trace where a value points; shared by access extraction, lock-operand
/// resolution and the context walk.
pub fn trace_operand(
    m: &Module,
    f: &Function,
    op: &Operand,
    diags: &mut ExtractDiagnostics,
) -> Vec<Pointee> {
    Tracer::new(m, f, diags).operand(op)
}

/// Field accesses of the single instruction at `at`.
pub fn extract_field_access(m: &Module, at: InstrRef) -> (Vec<FieldAccess>, ExtractDiagnostics) {
    let mut diags = ExtractDiagnostics::default();
    let f = m.func(at.func);
    let ins = f.instr(at.block, at.idx);
    let mut out = Vec::new();
    match ins {
        Instr::Load {
            dst,
            addr,
            type_hint,
        } => {
            let weight = f.use_count(*dst).max(1) as u64;
            push_data_accesses(
                m, f, at, addr, *type_hint, AccessKind::Read, weight, &mut out, &mut diags,
            );
        }
        Instr::Store {
            addr,
            atomic,
            type_hint,
            ..
        } => {
            push_data_accesses(
                m,
                f,
                at,
                addr,
                *type_hint,
                AccessKind::Write { atomic: *atomic },
                1,
                &mut out,
                &mut diags,
            );
        }
        Instr::Call { callee, args, .. } => {
            push_escapes(m, f, at, callee, args, &mut out, &mut diags);
        }
        Instr::ICall { args, .. } => {
            push_escapes(m, f, at, "<indirect>", args, &mut out, &mut diags);
        }
        _ => {}
    }
    (out, diags)
}

/// All field accesses of one function.
pub fn extract_function_accesses(m: &Module, f: &Function) -> FunctionAccesses {
    let fid = m.func_id(&f.name).expect("function belongs to module");
    let mut acc = FunctionAccesses::default();
    for (b, i, _) in f.instrs() {
        let at = InstrRef {
            func: fid,
            block: b,
            idx: i,
        };
        let (mut found, diags) = extract_field_access(m, at);
        acc.accesses.append(&mut found);
        acc.diags.merge(&diags);
    }
    acc
}

#[allow(clippy::too_many_arguments)]
fn push_data_accesses(
    m: &Module,
    f: &Function,
    at: InstrRef,
    addr: &Operand,
    type_hint: Option<TypeId>,
    kind: AccessKind,
    weight: u64,
    out: &mut Vec<FieldAccess>,
    diags: &mut ExtractDiagnostics,
) {
    let pointees = trace_operand(m, f, addr, diags);
    let mut chains: Vec<Vec<ChainStep>> = Vec::new();
    let mut understood_non_field = false;
    for p in &pointees {
        match p {
            Pointee::Field { chain } => chains.push(chain.clone()),
            Pointee::Object { ty, prefix, .. } => match m.types.get(*ty).field_at(0) {
                Some(_) => {
                    let mut c = prefix.clone();
                    c.push(ChainStep {
                        ty: *ty,
                        offset: 0,
                    });
                    chains.push(c);
                }
                None => understood_non_field = true,
            },
            Pointee::Slot { .. } => understood_non_field = true,
        }
    }
    for chain in dedup(chains) {
        out.push(FieldAccess {
            chain: FieldChain::Path(chain),
            kind: kind.clone(),
            instr: at,
            weight,
        });
    }
    if out.is_empty() {
        if let Some(t) = type_hint {
            diags.partial_fallback += 1;
            out.push(FieldAccess {
                chain: FieldChain::Partial(t),
                kind,
                instr: at,
                weight,
            });
        } else if !understood_non_field {
            diags.untraceable += 1;
        }
    }
}

fn push_escapes(
    m: &Module,
    f: &Function,
    at: InstrRef,
    callee: &str,
    args: &[Operand],
    out: &mut Vec<FieldAccess>,
    diags: &mut ExtractDiagnostics,
) {
    for (i, arg) in args.iter().enumerate() {
        let mut chains: Vec<Vec<ChainStep>> = Vec::new();
        for p in trace_operand(m, f, arg, diags) {
            match p {
                Pointee::Field { chain } => chains.push(chain),
                Pointee::Object {
                    prefix,
                    aliases_prefix: true,
                    ..
                } if !prefix.is_empty() => chains.push(prefix),
                _ => {}
            }
        }
        for chain in dedup(chains) {
            out.push(FieldAccess {
                chain: FieldChain::Path(chain),
                kind: AccessKind::Escape {
                    arg: i,
                    callee: String::from(callee),
                },
                instr: at,
                weight: 1,
            });
        }
    }
}

fn dedup<T: Ord>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v.dedup();
    v
}
