//! Seeded random generation of valid KIR modules.
//!
//! Modules are valid by construction (unique names, terminated blocks, SSA
//! uses only from dominating definitions) and get renumbered into the
//! parser's canonical value order, so `parse(print(m)) == m` holds for every
//! generated module.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use raceweaver_core::cfg::Cfg;
use raceweaver_core::ir::*;

/// Knobs for [`gen_module`].
#[derive(Debug, Clone)]
pub struct GenOptions {
    /// Maximum number of struct types (a dedicated lock type is always added).
    pub types: usize,
    /// Maximum number of functions.
    pub funcs: usize,
    /// Maximum blocks per function.
    pub blocks: usize,
    /// Maximum generated (non-terminator) instructions per block.
    pub instrs: usize,
    /// Restrict calls to strictly later-declared functions.
    pub acyclic_callgraph: bool,
    /// Allow CFG back edges (loops).
    pub allow_loops: bool,
    /// Emit lock operations and lock-wrapper-shaped functions.
    pub lock_ops: bool,
    /// Emit indirect calls and function-reference operands.
    pub indirect_calls: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            types: 3,
            funcs: 6,
            blocks: 6,
            instrs: 5,
            acyclic_callgraph: true,
            allow_loops: true,
            lock_ops: true,
            indirect_calls: false,
        }
    }
}

/// Names of external lock primitives the generator may call; tests that use
/// the generator with `lock_ops` should include these in their lock config.
pub const EXT_ACQUIRE: &str = "ext_lock";
pub const EXT_RELEASE: &str = "ext_unlock";

struct FnPlan {
    name: String,
    params: Vec<(String, SlotType)>,
    ret: Option<SlotType>,
}

/// A whole random module.
pub fn gen_module(rng: &mut ChaCha8Rng, opts: &GenOptions) -> Module {
    let mut m = Module::default();
    gen_types(rng, opts, &mut m);
    gen_globals(rng, &mut m);

    let nfuncs = rng.gen_range(1..=opts.funcs.max(1));
    let mut plans = Vec::new();
    for i in 0..nfuncs {
        let nparams = rng.gen_range(0..=3);
        let mut params = Vec::new();
        for p in 0..nparams {
            let ty = match rng.gen_range(0..6) {
                0 => SlotType::Scalar,
                1 => SlotType::PtrPtr(random_type(rng, &m)),
                _ => SlotType::Ptr(random_type(rng, &m)),
            };
            params.push((format!("p{p}"), ty));
        }
        let ret = match rng.gen_range(0..4) {
            0 => None,
            1 => Some(SlotType::Scalar),
            _ => Some(SlotType::Ptr(random_type(rng, &m))),
        };
        plans.push(FnPlan {
            name: format!("f{i}"),
            params,
            ret,
        });
    }

    for i in 0..nfuncs {
        let f = gen_function(rng, opts, &m, &plans, i);
        m.push_func(f);
    }
    m
}

/// A function with an arbitrary (possibly partly unreachable) CFG and empty
/// block bodies; for dominator tests.
pub fn gen_cfg_function(rng: &mut ChaCha8Rng, max_blocks: usize) -> Function {
    let n = rng.gen_range(1..=max_blocks.max(1));
    let mut blocks = Vec::new();
    for i in 0..n {
        let term = match rng.gen_range(0..10) {
            0..=2 => Instr::Ret { val: None },
            3..=6 => Instr::Br {
                cond: None,
                then_b: BlockId(rng.gen_range(0..n) as u32),
                else_b: None,
            },
            _ => Instr::Br {
                cond: Some(Operand::Const(1)),
                then_b: BlockId(rng.gen_range(0..n) as u32),
                else_b: Some(BlockId(rng.gen_range(0..n) as u32)),
            },
        };
        blocks.push(Block {
            name: format!("b{i}"),
            instrs: vec![term],
        });
    }
    Function {
        name: "cfg_fn".into(),
        params: Vec::new(),
        ret: None,
        blocks,
        value_names: Vec::new(),
        value_defs: Vec::new(),
    }
}

fn gen_types(rng: &mut ChaCha8Rng, opts: &GenOptions, m: &mut Module) {
    m.types.push(StructLayout {
        name: "lk".into(),
        size: 4,
        is_lock: true,
        fields: Vec::new(),
    });
    let n = rng.gen_range(1..=opts.types.max(1));
    for i in 0..n {
        let mut fields = Vec::new();
        let mut off = 0u64;
        let nfields = rng.gen_range(1..=4);
        for _ in 0..nfields {
            let (elem, size) = match rng.gen_range(0..8) {
                0 | 1 => (ElemType::Lock, 4),
                2 => {
                    // Embed an earlier type by value (keeps embedding acyclic).
                    let prev = rng.gen_range(0..m.types.types.len());
                    let sz = m.types.types[prev].size.max(1);
                    (ElemType::Struct(TypeId(prev as u32)), sz)
                }
                3 => {
                    // Refs may point anywhere, including self (patched below).
                    (ElemType::Ref(TypeId(0)), 8)
                }
                _ => (ElemType::Scalar, if rng.gen_bool(0.5) { 4 } else { 8 }),
            };
            fields.push(FieldDef {
                offset: off,
                size,
                elem,
            });
            off += size;
        }
        let name = format!("t{i}");
        m.types.push(StructLayout {
            name,
            size: off,
            is_lock: false,
            fields,
        });
    }
    // Patch ref targets now that the full count is known.
    let total = m.types.types.len();
    for t in &mut m.types.types {
        for f in &mut t.fields {
            if matches!(f.elem, ElemType::Ref(_)) {
                f.elem = ElemType::Ref(TypeId(rng.gen_range(0..total) as u32));
            }
        }
    }
}

/// A type table stressing structural identity: a few base shapes, renamed
/// copies whose internal references may point at either an original or its
/// copy (both stay structurally equal), and mutated near-misses. Reference
/// targets may form cycles.
pub fn gen_type_table(rng: &mut ChaCha8Rng, bases: usize) -> TypeTable {
    let mut table = TypeTable::default();
    let nbases = rng.gen_range(2..=bases.max(2));
    for i in 0..nbases {
        let mut fields = Vec::new();
        let mut off = 0u64;
        for _ in 0..rng.gen_range(0..=4) {
            let (elem, size) = match rng.gen_range(0..8) {
                0 => (ElemType::Lock, 4),
                1 | 2 => (ElemType::Ref(TypeId(0)), 8), // patched below
                3 if off > 0 || i > 0 => {
                    let prev = rng.gen_range(0..table.types.len().max(1));
                    match table.types.get(prev) {
                        Some(t) if t.size > 0 => (ElemType::Struct(TypeId(prev as u32)), t.size),
                        _ => (ElemType::Scalar, 8),
                    }
                }
                _ => (ElemType::Scalar, if rng.gen_bool(0.5) { 4 } else { 8 }),
            };
            fields.push(FieldDef {
                offset: off,
                size,
                elem,
            });
            off += size;
        }
        table.push(StructLayout {
            name: format!("base{i}"),
            size: off.max(4),
            is_lock: rng.gen_bool(0.1),
            fields,
        });
    }
    let nbases = table.types.len();
    for t in &mut table.types {
        for f in &mut t.fields {
            if matches!(f.elem, ElemType::Ref(_)) {
                f.elem = ElemType::Ref(TypeId(rng.gen_range(0..nbases) as u32));
            }
        }
    }

    // Renamed structural duplicates: refs retarget to any structural copy of
    // the original target. `copies[orig]` lists orig plus every clone of it.
    let mut copies: Vec<Vec<u32>> = (0..nbases as u32).map(|i| vec![i]).collect();
    for round in 0..rng.gen_range(1..=3) {
        for orig in 0..nbases {
            if !rng.gen_bool(0.6) {
                continue;
            }
            let mut dup = table.types[orig].clone();
            dup.name = format!("base{orig}.{}{round}", 100 + orig);
            for f in &mut dup.fields {
                if let ElemType::Ref(t) = f.elem {
                    let pool = &copies[t.0 as usize];
                    f.elem = ElemType::Ref(TypeId(pool[rng.gen_range(0..pool.len())]));
                }
            }
            let id = table.push(dup).expect("unique dup name");
            copies[orig].push(id.0);
        }
    }

    // Near-misses: one mutation each, so they must land in different classes
    // unless the mutation happens to reproduce an existing shape.
    for orig in 0..nbases {
        if !rng.gen_bool(0.4) {
            continue;
        }
        let mut bad = table.types[orig].clone();
        bad.name = format!("mut{orig}");
        match rng.gen_range(0..3) {
            0 => bad.is_lock = !bad.is_lock,
            1 => bad.size += 8,
            _ => {
                if let Some(f) = bad.fields.first_mut() {
                    f.elem = match f.elem {
                        ElemType::Scalar => ElemType::Lock,
                        _ => ElemType::Scalar,
                    };
                } else {
                    bad.size += 4;
                }
            }
        }
        table.push(bad);
    }
    table
}

fn gen_globals(rng: &mut ChaCha8Rng, m: &mut Module) {
    for i in 0..rng.gen_range(0..=2) {
        let ty = match rng.gen_range(0..3) {
            0 => None,
            _ => Some(random_type(rng, m)),
        };
        m.push_global(GlobalDef {
            name: format!("g{i}"),
            ty,
        });
    }
}

fn random_type(rng: &mut ChaCha8Rng, m: &Module) -> TypeId {
    TypeId(rng.gen_range(0..m.types.types.len()) as u32)
}

/// Data types (never the dedicated lock type) make better access targets.
fn random_data_type(rng: &mut ChaCha8Rng, m: &Module) -> TypeId {
    let n = m.types.types.len();
    if n <= 1 {
        return TypeId(0);
    }
    TypeId(rng.gen_range(1..n) as u32)
}

struct FnBuilder {
    names: Vec<String>,
    blocks: Vec<Block>,
}

impl FnBuilder {
    fn alloc(&mut self) -> ValueId {
        let id = ValueId(self.names.len() as u32);
        self.names.push(format!("v{}", self.names.len()));
        id
    }
}

fn gen_function(
    rng: &mut ChaCha8Rng,
    opts: &GenOptions,
    m: &Module,
    plans: &[FnPlan],
    idx: usize,
) -> Function {
    let plan = &plans[idx];

    // Shape choice: a slice of functions come out as deliberate lock-wrapper
    // or conditional-release bodies so summary machinery gets exercised.
    if opts.lock_ops && !plan.params.is_empty() && rng.gen_bool(0.3) {
        if let Some(f) = gen_lock_shape(rng, m, plans, idx) {
            return f;
        }
    }

    let nblocks = rng.gen_range(1..=opts.blocks.max(1));
    // Spanning tree keeps every block reachable; each block holds at most two
    // successors.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nblocks];
    for j in 1..nblocks {
        let choices: Vec<usize> = (0..j).filter(|&p| children[p].len() < 2).collect();
        let p = choices[rng.gen_range(0..choices.len())];
        children[p].push(j);
    }

    let mut b = FnBuilder {
        names: Vec::new(),
        blocks: Vec::new(),
    };
    for p in 0..plan.params.len() {
        b.names.push(format!("p{p}"));
    }

    // Terminator skeleton first (conditions patched after body fill).
    for (i, ch) in children.iter().enumerate() {
        let mut targets: Vec<BlockId> = ch.iter().map(|&c| BlockId(c as u32)).collect();
        if targets.len() < 2 && rng.gen_bool(0.3) {
            let extra = if opts.allow_loops {
                rng.gen_range(0..nblocks)
            } else if i + 1 < nblocks {
                rng.gen_range(i + 1..nblocks)
            } else {
                i
            };
            let eb = BlockId(extra as u32);
            if !targets.contains(&eb) && !(targets.is_empty() && extra == i) {
                targets.push(eb);
            }
        }
        let term = match targets.len() {
            0 => Instr::Ret { val: None },
            1 => Instr::Br {
                cond: None,
                then_b: targets[0],
                else_b: None,
            },
            _ => Instr::Br {
                cond: Some(Operand::Const(1)),
                then_b: targets[0],
                else_b: Some(targets[1]),
            },
        };
        b.blocks.push(Block {
            name: format!("b{i}"),
            instrs: vec![term],
        });
    }

    // Dominators over the skeleton drive which values are in scope where.
    let skeleton = Function {
        name: plan.name.clone(),
        params: plan.params.clone(),
        ret: plan.ret,
        blocks: b.blocks.clone(),
        value_names: Vec::new(),
        value_defs: Vec::new(),
    };
    let cfg = Cfg::build(&skeleton);

    let mut defs_in: Vec<Vec<ValueId>> = vec![Vec::new(); nblocks];
    let params_scope: Vec<ValueId> = (0..plan.params.len() as u32).map(ValueId).collect();

    for bi in 0..nblocks {
        let mut scope: Vec<ValueId> = params_scope.clone();
        for other in 0..nblocks {
            if other != bi && cfg.dominates(BlockId(other as u32), BlockId(bi as u32)) {
                scope.extend(defs_in[other].iter().copied());
            }
        }
        let n_instrs = rng.gen_range(0..=opts.instrs);
        let mut new_defs = Vec::new();
        for _ in 0..n_instrs {
            for ins in gen_instr(rng, opts, m, plans, idx, &mut b, &scope) {
                if let Some(d) = ins.def() {
                    new_defs.push(d);
                    scope.push(d);
                }
                let term_at = b.blocks[bi].instrs.len() - 1;
                b.blocks[bi].instrs.insert(term_at, ins);
            }
        }
        defs_in[bi] = new_defs;

        // Give conditional terminators a real condition when one is in scope.
        let last = b.blocks[bi].instrs.len() - 1;
        if let Instr::Br {
            cond: Some(c),
            ..
        } = &mut b.blocks[bi].instrs[last]
        {
            if !scope.is_empty() && rng.gen_bool(0.8) {
                *c = Operand::Value(scope[rng.gen_range(0..scope.len())]);
            }
        }
    }

    finish_function(plan.name.clone(), plan.params.clone(), plan.ret, b.blocks, b.names)
}

/// Deliberate small bodies: acquire-wrapper, release-wrapper, or a
/// conditional release. Returns `None` when the first param is not a struct
/// pointer or the struct has no lock field.
fn gen_lock_shape(
    rng: &mut ChaCha8Rng,
    m: &Module,
    plans: &[FnPlan],
    idx: usize,
) -> Option<Function> {
    let plan = &plans[idx];
    let SlotType::Ptr(ty) = plan.params[0].1 else {
        return None;
    };
    let lock_off = lock_field_offset(m, ty)?;
    let mut names: Vec<String> = plan.params.iter().map(|(n, _)| n.clone()).collect();
    let alloc = |names: &mut Vec<String>| {
        let id = ValueId(names.len() as u32);
        names.push(format!("v{}", names.len()));
        id
    };

    let shape = rng.gen_range(0..4);
    let blocks = match shape {
        // acquire wrapper
        0 => {
            let a = alloc(&mut names);
            vec![Block {
                name: "b0".into(),
                instrs: vec![
                    Instr::Addr {
                        dst: a,
                        base: Operand::Value(ValueId(0)),
                        decl_ty: Some(ty),
                        steps: vec![AddrStep::Field(lock_off)],
                    },
                    Instr::Acquire {
                        lock: Operand::Value(a),
                        mode: random_mode(rng),
                    },
                    Instr::Ret { val: None },
                ],
            }]
        }
        // release wrapper
        1 => {
            let a = alloc(&mut names);
            vec![Block {
                name: "b0".into(),
                instrs: vec![
                    Instr::Addr {
                        dst: a,
                        base: Operand::Value(ValueId(0)),
                        decl_ty: Some(ty),
                        steps: vec![AddrStep::Field(lock_off)],
                    },
                    Instr::Release {
                        lock: Operand::Value(a),
                    },
                    Instr::Ret { val: None },
                ],
            }]
        }
        // conditional release: kill summaries must see the maybe-path
        2 => {
            let a = alloc(&mut names);
            vec![
                Block {
                    name: "b0".into(),
                    instrs: vec![
                        Instr::Addr {
                            dst: a,
                            base: Operand::Value(ValueId(0)),
                            decl_ty: Some(ty),
                            steps: vec![AddrStep::Field(lock_off)],
                        },
                        Instr::Br {
                            cond: Some(Operand::Const(1)),
                            then_b: BlockId(1),
                            else_b: Some(BlockId(2)),
                        },
                    ],
                },
                Block {
                    name: "b1".into(),
                    instrs: vec![
                        Instr::Release {
                            lock: Operand::Value(a),
                        },
                        Instr::Br {
                            cond: None,
                            then_b: BlockId(2),
                            else_b: None,
                        },
                    ],
                },
                Block {
                    name: "b2".into(),
                    instrs: vec![Instr::Ret { val: None }],
                },
            ]
        }
        // two-level wrapper over a later lock-taking function, if any
        _ => {
            let later: Vec<usize> = (idx + 1..plans.len())
                .filter(|&j| {
                    !plans[j].params.is_empty()
                        && matches!(plans[j].params[0].1, SlotType::Ptr(t) if t == ty)
                })
                .collect();
            if later.is_empty() {
                return None;
            }
            let callee = later[rng.gen_range(0..later.len())];
            let args: Vec<Operand> = plans[callee]
                .params
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    if i < plan.params.len() {
                        Operand::Value(ValueId(i as u32))
                    } else {
                        Operand::Null
                    }
                })
                .collect();
            vec![Block {
                name: "b0".into(),
                instrs: vec![
                    Instr::Call {
                        dst: None,
                        callee: plans[callee].name.clone(),
                        args,
                    },
                    Instr::Ret { val: None },
                ],
            }]
        }
    };
    Some(finish_function(
        plan.name.clone(),
        plan.params.clone(),
        plan.ret,
        blocks,
        names,
    ))
}

fn random_mode(rng: &mut ChaCha8Rng) -> LockMode {
    match rng.gen_range(0..4) {
        0 => LockMode::Read,
        1 => LockMode::Write,
        _ => LockMode::Exclusive,
    }
}

fn lock_field_offset(m: &Module, ty: TypeId) -> Option<u64> {
    m.types.get(ty).fields.iter().find_map(|f| match f.elem {
        ElemType::Lock => Some(f.offset),
        ElemType::Struct(t) if m.types.is_lock_type(t) => Some(f.offset),
        _ => None,
    })
}

fn scalar_field_offset(rng: &mut ChaCha8Rng, m: &Module, ty: TypeId) -> Option<u64> {
    let offs: Vec<u64> = m
        .types
        .get(ty)
        .fields
        .iter()
        .filter(|f| matches!(f.elem, ElemType::Scalar))
        .map(|f| f.offset)
        .collect();
    if offs.is_empty() {
        None
    } else {
        Some(offs[rng.gen_range(0..offs.len())])
    }
}

fn random_operand(rng: &mut ChaCha8Rng, scope: &[ValueId]) -> Operand {
    if !scope.is_empty() && rng.gen_bool(0.75) {
        return Operand::Value(scope[rng.gen_range(0..scope.len())]);
    }
    match rng.gen_range(0..3) {
        0 => Operand::Null,
        _ => Operand::Const(rng.gen_range(-4..64)),
    }
}

fn gen_instr(
    rng: &mut ChaCha8Rng,
    opts: &GenOptions,
    m: &Module,
    plans: &[FnPlan],
    idx: usize,
    b: &mut FnBuilder,
    scope: &[ValueId],
) -> Vec<Instr> {
    let pick = rng.gen_range(0..100);
    match pick {
        // Address of a field, usually through a plausible struct pointer.
        0..=19 => {
            if scope.is_empty() {
                return vec![];
            }
            let ty = random_data_type(rng, m);
            let base = Operand::Value(scope[rng.gen_range(0..scope.len())]);
            let step = match scalar_field_offset(rng, m, ty) {
                Some(o) if rng.gen_bool(0.85) => AddrStep::Field(o),
                _ => {
                    if rng.gen_bool(0.5) {
                        AddrStep::Byte(rng.gen_range(-16..48))
                    } else {
                        AddrStep::Field(rng.gen_range(0..64))
                    }
                }
            };
            vec![Instr::Addr {
                dst: b.alloc(),
                base,
                decl_ty: if rng.gen_bool(0.9) { Some(ty) } else { None },
                steps: vec![step],
            }]
        }
        20..=34 => {
            let addr = random_operand(rng, scope);
            if !matches!(addr, Operand::Value(_)) {
                return vec![];
            }
            vec![Instr::Load {
                dst: b.alloc(),
                addr,
                type_hint: None,
            }]
        }
        35..=44 => {
            let addr = random_operand(rng, scope);
            if !matches!(addr, Operand::Value(_)) {
                return vec![];
            }
            vec![Instr::Store {
                val: random_operand(rng, scope),
                addr,
                atomic: rng.gen_bool(0.1),
                type_hint: None,
            }]
        }
        45..=49 => {
            let src = random_operand(rng, scope);
            vec![Instr::Cast {
                dst: b.alloc(),
                src,
                to: random_type(rng, m),
            }]
        }
        50..=54 => {
            if scope.len() < 2 {
                return vec![];
            }
            let n = rng.gen_range(2..=3.min(scope.len()));
            let srcs = (0..n)
                .map(|_| Operand::Value(scope[rng.gen_range(0..scope.len())]))
                .collect();
            vec![Instr::Phi {
                dst: b.alloc(),
                srcs,
            }]
        }
        55..=59 => {
            if scope.is_empty() {
                return vec![];
            }
            vec![Instr::Select {
                dst: b.alloc(),
                cond: random_operand(rng, scope),
                then_v: random_operand(rng, scope),
                else_v: random_operand(rng, scope),
            }]
        }
        60..=64 => {
            if scope.is_empty() {
                return vec![];
            }
            vec![Instr::Cmp {
                dst: b.alloc(),
                op: if rng.gen_bool(0.5) { CmpOp::Eq } else { CmpOp::Ne },
                lhs: random_operand(rng, scope),
                rhs: if rng.gen_bool(0.5) {
                    Operand::Null
                } else {
                    Operand::Const(0)
                },
            }]
        }
        // Direct call.
        65..=79 => {
            let callees: Vec<usize> = if opts.acyclic_callgraph {
                (idx + 1..plans.len()).collect()
            } else {
                (0..plans.len()).filter(|&j| j != idx).collect()
            };
            if callees.is_empty() || rng.gen_bool(0.25) {
                // External call (base primitive when lock_ops is on).
                if opts.lock_ops && !scope.is_empty() {
                    let name = if rng.gen_bool(0.5) { EXT_ACQUIRE } else { EXT_RELEASE };
                    let arg = Operand::Value(scope[rng.gen_range(0..scope.len())]);
                    return vec![Instr::Call {
                        dst: None,
                        callee: name.into(),
                        args: vec![arg],
                    }];
                }
                return vec![];
            }
            let j = callees[rng.gen_range(0..callees.len())];
            let args = plans[j]
                .params
                .iter()
                .map(|_| random_operand(rng, scope))
                .collect();
            let dst = if plans[j].ret.is_some() && rng.gen_bool(0.6) {
                Some(b.alloc())
            } else {
                None
            };
            vec![Instr::Call {
                dst,
                callee: plans[j].name.clone(),
                args,
            }]
        }
        // Lock operation on a freshly computed lock-field address, or
        // occasionally directly on a module global.
        80..=95 if opts.lock_ops => {
            if !m.globals.is_empty() && rng.gen_ratio(1, 5) {
                let g = Operand::Global(GlobalId(rng.gen_range(0..m.globals.len()) as u32));
                let op = match rng.gen_range(0..3) {
                    0 | 1 => Instr::Acquire {
                        lock: g,
                        mode: random_mode(rng),
                    },
                    _ => Instr::Release { lock: g },
                };
                return vec![op];
            }
            if scope.is_empty() {
                return vec![];
            }
            let ty = random_data_type(rng, m);
            let Some(off) = lock_field_offset(m, ty) else {
                return vec![];
            };
            let base = Operand::Value(scope[rng.gen_range(0..scope.len())]);
            let a = b.alloc();
            let addr = Instr::Addr {
                dst: a,
                base,
                decl_ty: Some(ty),
                steps: vec![AddrStep::Field(off)],
            };
            let op = match rng.gen_range(0..6) {
                0..=2 => Instr::Acquire {
                    lock: Operand::Value(a),
                    mode: random_mode(rng),
                },
                3 | 4 => Instr::Release {
                    lock: Operand::Value(a),
                },
                _ => Instr::AssertHeld {
                    lock: Operand::Value(a),
                },
            };
            vec![addr, op]
        }
        _ => vec![],
    }
}

/// Renumber values into canonical textual order (params first, then defs in
/// block order) and compute the definition table.
pub fn finish_function(
    name: String,
    params: Vec<(String, SlotType)>,
    ret: Option<SlotType>,
    blocks: Vec<Block>,
    names: Vec<String>,
) -> Function {
    let nparams = params.len();
    let mut remap: Vec<Option<ValueId>> = vec![None; names.len()];
    for p in 0..nparams {
        remap[p] = Some(ValueId(p as u32));
    }
    let mut next = nparams as u32;
    for blk in &blocks {
        for ins in &blk.instrs {
            if let Some(d) = ins.def() {
                remap[d.0 as usize] = Some(ValueId(next));
                next += 1;
            }
        }
    }
    let map = |v: ValueId| remap[v.0 as usize].expect("value defined");
    let map_op = |o: &Operand| match o {
        Operand::Value(v) => Operand::Value(map(*v)),
        other => other.clone(),
    };

    let mut new_blocks = Vec::new();
    for blk in &blocks {
        let mut instrs = Vec::new();
        for ins in &blk.instrs {
            instrs.push(remap_instr(ins, &map, &map_op));
        }
        new_blocks.push(Block {
            name: blk.name.clone(),
            instrs,
        });
    }

    let mut value_names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for i in value_names.len()..next as usize {
        value_names.push(format!("v{i}"));
    }
    let mut value_defs = vec![ValueDef::Param(0); next as usize];
    for (i, _) in params.iter().enumerate() {
        value_defs[i] = ValueDef::Param(i);
    }
    for (bi, blk) in new_blocks.iter().enumerate() {
        for (ii, ins) in blk.instrs.iter().enumerate() {
            if let Some(d) = ins.def() {
                value_defs[d.0 as usize] = ValueDef::Instr(BlockId(bi as u32), ii as u32);
            }
        }
    }

    Function {
        name,
        params,
        ret,
        blocks: new_blocks,
        value_names,
        value_defs,
    }
}

fn remap_instr(
    ins: &Instr,
    map: &dyn Fn(ValueId) -> ValueId,
    map_op: &dyn Fn(&Operand) -> Operand,
) -> Instr {
    match ins {
        Instr::Load {
            dst,
            addr,
            type_hint,
        } => Instr::Load {
            dst: map(*dst),
            addr: map_op(addr),
            type_hint: *type_hint,
        },
        Instr::Store {
            val,
            addr,
            atomic,
            type_hint,
        } => Instr::Store {
            val: map_op(val),
            addr: map_op(addr),
            atomic: *atomic,
            type_hint: *type_hint,
        },
        Instr::Addr {
            dst,
            base,
            decl_ty,
            steps,
        } => Instr::Addr {
            dst: map(*dst),
            base: map_op(base),
            decl_ty: *decl_ty,
            steps: steps.clone(),
        },
        Instr::Cast { dst, src, to } => Instr::Cast {
            dst: map(*dst),
            src: map_op(src),
            to: *to,
        },
        Instr::Phi { dst, srcs } => Instr::Phi {
            dst: map(*dst),
            srcs: srcs.iter().map(map_op).collect(),
        },
        Instr::Select {
            dst,
            cond,
            then_v,
            else_v,
        } => Instr::Select {
            dst: map(*dst),
            cond: map_op(cond),
            then_v: map_op(then_v),
            else_v: map_op(else_v),
        },
        Instr::Cmp { dst, op, lhs, rhs } => Instr::Cmp {
            dst: map(*dst),
            op: *op,
            lhs: map_op(lhs),
            rhs: map_op(rhs),
        },
        Instr::Acquire { lock, mode } => Instr::Acquire {
            lock: map_op(lock),
            mode: *mode,
        },
        Instr::Release { lock } => Instr::Release { lock: map_op(lock) },
        Instr::AssertHeld { lock } => Instr::AssertHeld { lock: map_op(lock) },
        Instr::Call { dst, callee, args } => Instr::Call {
            dst: dst.map(|v| map(v)),
            callee: callee.clone(),
            args: args.iter().map(map_op).collect(),
        },
        Instr::ICall { dst, fptr, args } => Instr::ICall {
            dst: dst.map(|v| map(v)),
            fptr: map_op(fptr),
            args: args.iter().map(map_op).collect(),
        },
        Instr::Br {
            cond,
            then_b,
            else_b,
        } => Instr::Br {
            cond: cond.as_ref().map(map_op),
            then_b: *then_b,
            else_b: *else_b,
        },
        Instr::Ret { val } => Instr::Ret {
            val: val.as_ref().map(map_op),
        },
        Instr::DataRace => Instr::DataRace,
    }
}

/// A randomly encoded field-path specification with its known answer.
///
/// The module contains one `probe` function navigating a generated chain of
/// struct types; the instruction at `probe` must extract exactly `expect`.
/// Byte-arithmetic encodings reset the expectation to the recovered segment,
/// since out-of-bounds rewriting roots its result at the candidate type.
pub struct ChainCase {
    pub module: Module,
    pub probe: InstrRef,
    pub expect: Vec<(TypeId, u64)>,
    pub is_store: bool,
}

/// Generate one chain specification and a random encoding of it.
pub fn gen_chain_case(rng: &mut ChaCha8Rng) -> ChainCase {
    let k = rng.gen_range(1..=4usize);
    // links[i]: true = embed, false = reference (i in 0..k-1)
    let links: Vec<bool> = (0..k.saturating_sub(1)).map(|_| rng.gen_bool(0.5)).collect();
    let offs: Vec<u64> = (0..k).map(|_| *[0u64, 8, 16].get(rng.gen_range(0..3)).unwrap()).collect();

    // Types, innermost first so sizes are known when embedding.
    let mut sizes = vec![0u64; k];
    let mut text = String::from("type decoy size 8 { }\n");
    for i in (0..k).rev() {
        let linksize = if i == k - 1 {
            8
        } else if links[i] {
            sizes[i + 1]
        } else {
            8
        };
        let elem = if i == k - 1 {
            "scalar".to_string()
        } else if links[i] {
            format!("c{}", i + 1)
        } else {
            format!("ref c{}", i + 1)
        };
        let lead_filler = offs[i] >= 8 && rng.gen_bool(0.5);
        let trail_filler = rng.gen_bool(0.3);
        let mut size = offs[i] + linksize;
        let mut fields = String::new();
        if lead_filler {
            fields.push_str("  field 0 8 scalar;\n");
        }
        fields.push_str(&format!("  field {} {} {};\n", offs[i], linksize, elem));
        if trail_filler {
            fields.push_str(&format!("  field {size} 8 scalar;\n"));
            size += 8;
        }
        sizes[i] = size;
        text.push_str(&format!("type c{i} size {size} {{\n{fields}}}\n"));
    }

    // Body of `probe`, straight-line.
    let indirect_start = rng.gen_bool(0.2);
    let param = if indirect_start { "%pp: ref c0" } else { "%p: c0" };
    let mut body: Vec<String> = Vec::new();
    let mut nv = 0usize;
    let mut fresh = move || {
        nv += 1;
        format!("%v{nv}")
    };
    let mut cur = if indirect_start {
        let v = fresh();
        body.push(format!("{v} = load %pp"));
        v
    } else {
        "%p".to_string()
    };
    let mut cond: Option<String> = None;

    let mut expect: Vec<(usize, u64)> = Vec::new();
    let mut i = 0usize;
    let mut cur_addr = String::new();
    while i < k {
        // Optional pointer laundering before the run.
        for _ in 0..rng.gen_range(0..=2) {
            match rng.gen_range(0..2) {
                0 => {
                    let v = fresh();
                    body.push(format!("{v} = cast {cur} to c{i}"));
                    cur = v;
                }
                _ => {
                    let cc = cond
                        .get_or_insert_with(|| {
                            let c = fresh();
                            body.push(format!("{c} = cmp eq %c, 0"));
                            c
                        })
                        .clone();
                    let v = fresh();
                    body.push(format!("{v} = select {cc}, {cur}, {cur}"));
                    cur = v;
                }
            }
        }

        // Run of consecutive embed links i..=j.
        let mut j = i;
        while j < k - 1 && links[j] {
            j += 1;
        }
        let bytes_ok = j == i || offs[j] > 0;
        let enc = match rng.gen_range(0..3) {
            0 if bytes_ok => 2,           // byte arithmetic + recovery
            1 if j > i => 1,              // split addr
            _ => 0,                       // single multi-step addr
        };
        match enc {
            2 => {
                let delta: u64 = offs[i..=j].iter().sum();
                if rng.gen_bool(0.5) {
                    let v = fresh();
                    body.push(format!("{v} = cast {cur} to c{i}"));
                }
                if rng.gen_bool(0.3) {
                    let v = fresh();
                    body.push(format!("{v} = cast {cur} to decoy"));
                }
                let a = fresh();
                body.push(format!("{a} = addr {cur} [byte {delta}]"));
                cur_addr = a;
                expect.clear();
                for s in i..=j {
                    expect.push((s, offs[s]));
                }
            }
            1 => {
                let m = rng.gen_range(i..j);
                let steps1: String = offs[i..=m].iter().map(|o| format!(" [{o}]")).collect();
                let a1 = fresh();
                body.push(format!("{a1} = addr {cur} : c{i}{steps1}"));
                let steps2: String = offs[m + 1..=j].iter().map(|o| format!(" [{o}]")).collect();
                let a2 = fresh();
                body.push(format!("{a2} = addr {a1} : c{}{steps2}", m + 1));
                cur_addr = a2;
                for s in i..=j {
                    expect.push((s, offs[s]));
                }
            }
            _ => {
                let steps: String = offs[i..=j].iter().map(|o| format!(" [{o}]")).collect();
                let a = fresh();
                body.push(format!("{a} = addr {cur} : c{i}{steps}"));
                cur_addr = a;
                for s in i..=j {
                    expect.push((s, offs[s]));
                }
            }
        }

        if j < k - 1 {
            // Reference link: one load to cross it.
            let v = fresh();
            body.push(format!("{v} = load {cur_addr}"));
            cur = v;
        }
        i = j + 1;
    }

    let is_store = rng.gen_bool(0.5);
    let probe_idx = body.len() as u32;
    if is_store {
        body.push(format!("store %c, {cur_addr}"));
    } else {
        let v = fresh();
        body.push(format!("{v} = load {cur_addr}"));
    }
    body.push("ret".to_string());

    text.push_str(&format!("func probe({param}, %c: scalar) {{\nblock entry:\n"));
    for line in &body {
        text.push_str("  ");
        text.push_str(line);
        text.push('\n');
    }
    text.push_str("}\n");

    let module = raceweaver_core::parser::parse_module(&text)
        .unwrap_or_else(|e| panic!("generated chain case must parse: {e}\n{text}"));
    let expect = expect
        .into_iter()
        .map(|(s, o)| (module.types.lookup(&format!("c{s}")).unwrap(), o))
        .collect();
    let probe = InstrRef {
        func: module.func_id("probe").unwrap(),
        block: BlockId(0),
        idx: probe_idx,
    };
    ChainCase {
        module,
        probe,
        expect,
        is_store,
    }
}
