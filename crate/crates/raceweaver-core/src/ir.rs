//! In-memory form of KIR: struct layouts with byte offsets, globals, and
//! functions in SSA form with explicit basic blocks.
//!
//! Values are function-local and identified by [`ValueId`] (params first, then
//! instruction results in block order). Call targets and function references
//! are kept as names; resolution against the module happens in `callgraph`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use alloc::collections::BTreeMap;

/// Index into [`TypeTable::types`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TypeId(pub u32);

/// Index into [`Module::funcs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FuncId(pub u32);

/// Index into [`Function::blocks`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

/// Function-local SSA value index (params first, then instruction results).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ValueId(pub u32);

/// Index into [`Module::globals`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GlobalId(pub u32);

/// A specific instruction: function, block, and position within the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstrRef {
    pub func: FuncId,
    pub block: BlockId,
    pub idx: u32,
}

/// What a struct field stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ElemType {
    /// Plain data (integer, flag, ...).
    Scalar,
    /// A lock object embedded directly in the struct.
    Lock,
    /// Another struct embedded by value.
    Struct(TypeId),
    /// A pointer to another struct.
    Ref(TypeId),
}

/// One field of a struct layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldDef {
    pub offset: u64,
    pub size: u64,
    pub elem: ElemType,
}

/// A named struct layout: total size plus fields sorted by offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructLayout {
    pub name: String,
    pub size: u64,
    /// True when the whole type is a lock object (e.g. a spinlock type).
    pub is_lock: bool,
    pub fields: Vec<FieldDef>,
}

impl StructLayout {
    /// Field starting exactly at `offset`, if any.
    pub fn field_at(&self, offset: u64) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.offset == offset)
    }

    /// Field whose byte range contains `offset`, if any.
    pub fn field_containing(&self, offset: u64) -> Option<&FieldDef> {
        self.fields
            .iter()
            .find(|f| f.offset <= offset && offset < f.offset + f.size)
    }
}

/// All struct layouts of a module, with name lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeTable {
    pub types: Vec<StructLayout>,
    by_name: BTreeMap<String, TypeId>,
}

impl TypeTable {
    pub fn push(&mut self, layout: StructLayout) -> Option<TypeId> {
        if self.by_name.contains_key(&layout.name) {
            return None;
        }
        let id = TypeId(self.types.len() as u32);
        self.by_name.insert(layout.name.clone(), id);
        self.types.push(layout);
        Some(id)
    }

    pub fn lookup(&self, name: &str) -> Option<TypeId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: TypeId) -> &StructLayout {
        &self.types[id.0 as usize]
    }

    pub fn name(&self, id: TypeId) -> &str {
        &self.types[id.0 as usize].name
    }

    /// Whether values of `id` are lock objects.
    pub fn is_lock_type(&self, id: TypeId) -> bool {
        self.get(id).is_lock
    }
}

/// Declared kind of a parameter or return slot. KIR values are untyped at
/// use sites; these annotations exist for signatures and indirect-call
/// matching only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SlotType {
    /// A scalar value.
    Scalar,
    /// A pointer to a struct.
    Ptr(TypeId),
    /// A pointer to a pointer to a struct.
    PtrPtr(TypeId),
}

/// A module-level object; `@name` operands take its address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDef {
    pub name: String,
    /// `None` for scalar globals.
    pub ty: Option<TypeId>,
}

/// Operand of an instruction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Operand {
    /// A function-local SSA value.
    Value(ValueId),
    /// Address of a module global (`@name`).
    Global(GlobalId),
    /// Constant reference to a function by name (address-taking use).
    Func(String),
    /// Null pointer literal.
    Null,
    /// Integer literal.
    Const(i64),
}

/// Step of an address computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddrStep {
    /// Select the field at this byte offset of the current struct type.
    Field(u64),
    /// Raw byte displacement (possibly negative); leaves typed navigation.
    Byte(i64),
}

/// Comparison operator of `cmp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
}

/// Lock acquisition mode. Ordered by strength: a path meet keeps the weakest
/// mode, an acquire upgrades to the strongest seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LockMode {
    Read,
    Write,
    Exclusive,
}

impl fmt::Display for LockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LockMode::Read => write!(f, "read"),
            LockMode::Write => write!(f, "write"),
            LockMode::Exclusive => write!(f, "exclusive"),
        }
    }
}

/// One KIR instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instr {
    /// `%dst = load %addr [!type T]`
    Load {
        dst: ValueId,
        addr: Operand,
        type_hint: Option<TypeId>,
    },
    /// `store %val, %addr [atomic] [!type T]`
    Store {
        val: Operand,
        addr: Operand,
        atomic: bool,
        type_hint: Option<TypeId>,
    },
    /// `%dst = addr %base : T [off]... [byte d]...` (type optional).
    Addr {
        dst: ValueId,
        base: Operand,
        decl_ty: Option<TypeId>,
        steps: Vec<AddrStep>,
    },
    /// `%dst = cast %src to T`
    Cast {
        dst: ValueId,
        src: Operand,
        to: TypeId,
    },
    /// `%dst = phi %a, %b, ...`
    Phi { dst: ValueId, srcs: Vec<Operand> },
    /// `%dst = select %cond, %a, %b`
    Select {
        dst: ValueId,
        cond: Operand,
        then_v: Operand,
        else_v: Operand,
    },
    /// `%dst = cmp eq|ne %a, %b`
    Cmp {
        dst: ValueId,
        op: CmpOp,
        lhs: Operand,
        rhs: Operand,
    },
    /// `acquire %l` / `acquire_read %l` / `acquire_write %l`
    Acquire { lock: Operand, mode: LockMode },
    /// `release %l`
    Release { lock: Operand },
    /// `assert_held %l`
    AssertHeld { lock: Operand },
    /// `[%dst =] call name(args...)`
    Call {
        dst: Option<ValueId>,
        callee: String,
        args: Vec<Operand>,
    },
    /// `[%dst =] icall %fptr(args...)`
    ICall {
        dst: Option<ValueId>,
        fptr: Operand,
        args: Vec<Operand>,
    },
    /// `br %cond, then, else` or `br target`
    Br {
        cond: Option<Operand>,
        then_b: BlockId,
        else_b: Option<BlockId>,
    },
    /// `ret [%v]`
    Ret { val: Option<Operand> },
    /// Ground-truth marker carried through from the input; analysis ignores it.
    DataRace,
}

impl Instr {
    /// The value this instruction defines, if any.
    pub fn def(&self) -> Option<ValueId> {
        match self {
            Instr::Load { dst, .. }
            | Instr::Addr { dst, .. }
            | Instr::Cast { dst, .. }
            | Instr::Phi { dst, .. }
            | Instr::Select { dst, .. }
            | Instr::Cmp { dst, .. } => Some(*dst),
            Instr::Call { dst, .. } | Instr::ICall { dst, .. } => *dst,
            _ => None,
        }
    }

    /// All operands, in syntactic order.
    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Instr::Load { addr, .. } => alloc::vec![addr],
            Instr::Store { val, addr, .. } => alloc::vec![val, addr],
            Instr::Addr { base, .. } => alloc::vec![base],
            Instr::Cast { src, .. } => alloc::vec![src],
            Instr::Phi { srcs, .. } => srcs.iter().collect(),
            Instr::Select {
                cond,
                then_v,
                else_v,
                ..
            } => alloc::vec![cond, then_v, else_v],
            Instr::Cmp { lhs, rhs, .. } => alloc::vec![lhs, rhs],
            Instr::Acquire { lock, .. }
            | Instr::Release { lock }
            | Instr::AssertHeld { lock } => alloc::vec![lock],
            Instr::Call { args, .. } => args.iter().collect(),
            Instr::ICall { fptr, args, .. } => {
                let mut v = alloc::vec![fptr];
                v.extend(args.iter());
                v
            }
            Instr::Br { cond, .. } => cond.iter().collect(),
            Instr::Ret { val } => val.iter().collect(),
            Instr::DataRace => Vec::new(),
        }
    }

    /// Whether this instruction ends a basic block.
    pub fn is_terminator(&self) -> bool {
        matches!(self, Instr::Br { .. } | Instr::Ret { .. })
    }
}

/// A basic block: a name and straight-line instructions ending in a terminator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub instrs: Vec<Instr>,
}

/// Where a value is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueDef {
    Param(usize),
    /// Defining instruction (block, index within block).
    Instr(BlockId, u32),
}

/// One function: parameters, return slot, and its CFG as a block list.
/// Block 0 is the entry block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<(String, SlotType)>,
    pub ret: Option<SlotType>,
    pub blocks: Vec<Block>,
    /// Name of every value, indexed by [`ValueId`].
    pub value_names: Vec<String>,
    /// Definition site of every value, indexed by [`ValueId`].
    pub value_defs: Vec<ValueDef>,
}

impl Function {
    pub fn value_name(&self, v: ValueId) -> &str {
        &self.value_names[v.0 as usize]
    }

    pub fn block(&self, b: BlockId) -> &Block {
        &self.blocks[b.0 as usize]
    }

    pub fn instr(&self, block: BlockId, idx: u32) -> &Instr {
        &self.blocks[block.0 as usize].instrs[idx as usize]
    }

    /// Flat instruction index within the function (blocks in order), used in
    /// report locations.
    pub fn flat_index(&self, block: BlockId, idx: u32) -> u32 {
        let mut n = 0u32;
        for b in &self.blocks[..block.0 as usize] {
            n += b.instrs.len() as u32;
        }
        n + idx
    }

    /// Iterate `(block, index, instr)` over all instructions in block order.
    pub fn instrs(&self) -> impl Iterator<Item = (BlockId, u32, &Instr)> {
        self.blocks.iter().enumerate().flat_map(|(bi, b)| {
            b.instrs
                .iter()
                .enumerate()
                .map(move |(ii, ins)| (BlockId(bi as u32), ii as u32, ins))
        })
    }

    /// Number of uses of `v` across all instructions (phi and call operands
    /// included).
    pub fn use_count(&self, v: ValueId) -> usize {
        let mut n = 0;
        for (_, _, ins) in self.instrs() {
            n += ins
                .operands()
                .iter()
                .filter(|o| matches!(o, Operand::Value(u) if *u == v))
                .count();
        }
        n
    }
}

/// A whole KIR module.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Module {
    pub types: TypeTable,
    pub globals: Vec<GlobalDef>,
    pub funcs: Vec<Function>,
    global_by_name: BTreeMap<String, GlobalId>,
    func_by_name: BTreeMap<String, FuncId>,
}

impl Module {
    pub fn push_global(&mut self, g: GlobalDef) -> Option<GlobalId> {
        if self.global_by_name.contains_key(&g.name) {
            return None;
        }
        let id = GlobalId(self.globals.len() as u32);
        self.global_by_name.insert(g.name.clone(), id);
        self.globals.push(g);
        Some(id)
    }

    pub fn push_func(&mut self, f: Function) -> Option<FuncId> {
        if self.func_by_name.contains_key(&f.name) {
            return None;
        }
        let id = FuncId(self.funcs.len() as u32);
        self.func_by_name.insert(f.name.clone(), id);
        self.funcs.push(f);
        Some(id)
    }

    pub fn func_id(&self, name: &str) -> Option<FuncId> {
        self.func_by_name.get(name).copied()
    }

    pub fn global_id(&self, name: &str) -> Option<GlobalId> {
        self.global_by_name.get(name).copied()
    }

    pub fn func(&self, id: FuncId) -> &Function {
        &self.funcs[id.0 as usize]
    }

    pub fn global(&self, id: GlobalId) -> &GlobalDef {
        &self.globals[id.0 as usize]
    }

    /// Function ids in declaration order.
    pub fn func_ids(&self) -> impl Iterator<Item = FuncId> {
        (0..self.funcs.len() as u32).map(FuncId)
    }
}
