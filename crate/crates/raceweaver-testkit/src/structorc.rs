//! Brute-force structural type equality: the classic assume-and-verify check
//! for equirecursive equality. A pair under test is assumed equal while its
//! components are compared; any mismatch fails the whole query, so assumptions
//! never outlive a failed check. Used as an oracle for the partition-refined
//! implementation.

use std::collections::BTreeSet;

use raceweaver_core::ir::{ElemType, TypeId, TypeTable};

/// Coinductive structural equality of `a` and `b`, by direct unfolding.
pub fn struct_eq_bf(table: &TypeTable, a: TypeId, b: TypeId) -> bool {
    let mut assumed = BTreeSet::new();
    go(table, a, b, &mut assumed)
}

fn go(table: &TypeTable, a: TypeId, b: TypeId, assumed: &mut BTreeSet<(u32, u32)>) -> bool {
    if a == b || !assumed.insert((a.0, b.0)) {
        return true;
    }
    let (la, lb) = (&table.types[a.0 as usize], &table.types[b.0 as usize]);
    if la.size != lb.size || la.is_lock != lb.is_lock || la.fields.len() != lb.fields.len() {
        return false;
    }
    for (fa, fb) in la.fields.iter().zip(&lb.fields) {
        if fa.offset != fb.offset || fa.size != fb.size {
            return false;
        }
        let ok = match (&fa.elem, &fb.elem) {
            (ElemType::Scalar, ElemType::Scalar) | (ElemType::Lock, ElemType::Lock) => true,
            (ElemType::Struct(x), ElemType::Struct(y)) | (ElemType::Ref(x), ElemType::Ref(y)) => {
                go(table, *x, *y, assumed)
            }
            _ => false,
        };
        if !ok {
            return false;
        }
    }
    true
}
