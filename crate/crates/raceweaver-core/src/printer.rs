//! Canonical text form of a [`Module`]. Printing then re-parsing yields a
//! structurally equal module, and printing is idempotent over parse.

use alloc::string::String;
use core::fmt::Write;

use crate::ir::*;

/// Render the whole module in canonical form.
pub fn print_module(m: &Module) -> String {
    let mut out = String::new();
    let mut first = true;
    for t in &m.types.types {
        if !first {
            out.push('\n');
        }
        first = false;
        print_type(&mut out, m, t);
    }
    for g in &m.globals {
        if !first {
            out.push('\n');
        }
        first = false;
        match g.ty {
            Some(t) => {
                let _ = writeln!(out, "global {}: {}", g.name, m.types.name(t));
            }
            None => {
                let _ = writeln!(out, "global {}: scalar", g.name);
            }
        }
    }
    for f in &m.funcs {
        if !first {
            out.push('\n');
        }
        first = false;
        print_func(&mut out, m, f);
    }
    out
}

fn print_type(out: &mut String, m: &Module, t: &StructLayout) {
    let lock = if t.is_lock { " lock" } else { "" };
    if t.fields.is_empty() {
        let _ = writeln!(out, "type {} size {}{} {{ }}", t.name, t.size, lock);
        return;
    }
    let _ = writeln!(out, "type {} size {}{} {{", t.name, t.size, lock);
    for f in &t.fields {
        let elem = match f.elem {
            ElemType::Scalar => String::from("scalar"),
            ElemType::Lock => String::from("lock"),
            ElemType::Struct(id) => String::from(m.types.name(id)),
            ElemType::Ref(id) => {
                let mut s = String::from("ref ");
                s.push_str(m.types.name(id));
                s
            }
        };
        let _ = writeln!(out, "  field {} {} {};", f.offset, f.size, elem);
    }
    out.push_str("}\n");
}

fn slot_type(m: &Module, t: SlotType) -> String {
    match t {
        SlotType::Scalar => String::from("scalar"),
        SlotType::Ptr(id) => String::from(m.types.name(id)),
        SlotType::PtrPtr(id) => {
            let mut s = String::from("ref ");
            s.push_str(m.types.name(id));
            s
        }
    }
}

fn print_func(out: &mut String, m: &Module, f: &Function) {
    let _ = write!(out, "func {}(", f.name);
    for (i, (name, ty)) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "%{}: {}", name, slot_type(m, *ty));
    }
    out.push(')');
    if let Some(r) = f.ret {
        let _ = write!(out, " -> {}", slot_type(m, r));
    }
    out.push_str(" {\n");
    for b in &f.blocks {
        let _ = writeln!(out, "block {}:", b.name);
        for ins in &b.instrs {
            out.push_str("  ");
            print_instr(out, m, f, ins);
            out.push('\n');
        }
    }
    out.push_str("}\n");
}

fn op(m: &Module, f: &Function, o: &Operand) -> String {
    match o {
        Operand::Value(v) => {
            let mut s = String::from("%");
            s.push_str(f.value_name(*v));
            s
        }
        Operand::Global(g) => {
            let mut s = String::from("@");
            s.push_str(&m.global(*g).name);
            s
        }
        Operand::Func(name) => name.clone(),
        Operand::Null => String::from("null"),
        Operand::Const(n) => {
            let mut s = String::new();
            let _ = write!(s, "{n}");
            s
        }
    }
}

fn print_instr(out: &mut String, m: &Module, f: &Function, ins: &Instr) {
    let v = |id: &ValueId| {
        let mut s = String::from("%");
        s.push_str(f.value_name(*id));
        s
    };
    match ins {
        Instr::Load {
            dst,
            addr,
            type_hint,
        } => {
            let _ = write!(out, "{} = load {}", v(dst), op(m, f, addr));
            if let Some(t) = type_hint {
                let _ = write!(out, " !type {}", m.types.name(*t));
            }
        }
        Instr::Store {
            val,
            addr,
            atomic,
            type_hint,
        } => {
            let _ = write!(out, "store {}, {}", op(m, f, val), op(m, f, addr));
            if *atomic {
                out.push_str(" atomic");
            }
            if let Some(t) = type_hint {
                let _ = write!(out, " !type {}", m.types.name(*t));
            }
        }
        Instr::Addr {
            dst,
            base,
            decl_ty,
            steps,
        } => {
            let _ = write!(out, "{} = addr {}", v(dst), op(m, f, base));
            if let Some(t) = decl_ty {
                let _ = write!(out, " : {}", m.types.name(*t));
            }
            for s in steps {
                match s {
                    AddrStep::Field(o) => {
                        let _ = write!(out, " [{o}]");
                    }
                    AddrStep::Byte(d) => {
                        let _ = write!(out, " [byte {d}]");
                    }
                }
            }
        }
        Instr::Cast { dst, src, to } => {
            let _ = write!(out, "{} = cast {} to {}", v(dst), op(m, f, src), m.types.name(*to));
        }
        Instr::Phi { dst, srcs } => {
            let _ = write!(out, "{} = phi ", v(dst));
            for (i, s) in srcs.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&op(m, f, s));
            }
        }
        Instr::Select {
            dst,
            cond,
            then_v,
            else_v,
        } => {
            let _ = write!(
                out,
                "{} = select {}, {}, {}",
                v(dst),
                op(m, f, cond),
                op(m, f, then_v),
                op(m, f, else_v)
            );
        }
        Instr::Cmp { dst, op: o, lhs, rhs } => {
            let os = match o {
                CmpOp::Eq => "eq",
                CmpOp::Ne => "ne",
            };
            let _ = write!(out, "{} = cmp {} {}, {}", v(dst), os, op(m, f, lhs), op(m, f, rhs));
        }
        Instr::Acquire { lock, mode } => {
            let kw = match mode {
                LockMode::Read => "acquire_read",
                LockMode::Write => "acquire_write",
                LockMode::Exclusive => "acquire",
            };
            let _ = write!(out, "{} {}", kw, op(m, f, lock));
        }
        Instr::Release { lock } => {
            let _ = write!(out, "release {}", op(m, f, lock));
        }
        Instr::AssertHeld { lock } => {
            let _ = write!(out, "assert_held {}", op(m, f, lock));
        }
        Instr::Call { dst, callee, args } => {
            if let Some(d) = dst {
                let _ = write!(out, "{} = ", v(d));
            }
            let _ = write!(out, "call {callee}(");
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&op(m, f, a));
            }
            out.push(')');
        }
        Instr::ICall { dst, fptr, args } => {
            if let Some(d) = dst {
                let _ = write!(out, "{} = ", v(d));
            }
            let _ = write!(out, "icall {}(", op(m, f, fptr));
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&op(m, f, a));
            }
            out.push(')');
        }
        Instr::Br {
            cond,
            then_b,
            else_b,
        } => match (cond, else_b) {
            (Some(c), Some(e)) => {
                let _ = write!(
                    out,
                    "br {}, {}, {}",
                    op(m, f, c),
                    f.block(*then_b).name,
                    f.block(*e).name
                );
            }
            _ => {
                let _ = write!(out, "br {}", f.block(*then_b).name);
            }
        },
        Instr::Ret { val } => match val {
            Some(o) => {
                let _ = write!(out, "ret {}", op(m, f, o));
            }
            None => out.push_str("ret"),
        },
        Instr::DataRace => out.push_str("data_race"),
    }
}
