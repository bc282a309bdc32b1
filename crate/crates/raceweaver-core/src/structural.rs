//! Structural type identity: two layouts are the same type when their field
//! sequences match, regardless of declared names. This defeats name-suffix
//! duplication (`foo` vs `foo.123`) in module inputs. Equality is coinductive,
//! so mutually recursive types compare by unfolding rather than by name; it is
//! computed as a bisimulation quotient via partition refinement.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::ir::{ElemType, TypeId, TypeTable};

/// Name-independent identity of a struct layout. Equal ids mean structurally
/// equal types; distinct ids mean structurally distinct (hash collisions are
/// detected during construction and disambiguated).
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StructuralTypeId(pub u64);

/// Structural identities for every type in a table, computed once.
#[derive(Debug, Clone)]
pub struct StructuralTypeIds {
    class_of: Vec<u32>,
    class_ids: Vec<StructuralTypeId>,
}

impl StructuralTypeIds {
    /// Partition all types into structural-equality classes and assign each
    /// class a deterministic id.
    pub fn compute(table: &TypeTable) -> Self {
        Self::compute_with_hasher(table, fnv1a)
    }

    /// Structural id of `t`.
    pub fn id(&self, t: TypeId) -> StructuralTypeId {
        self.class_ids[self.class_of[t.0 as usize] as usize]
    }

    /// True when `a` and `b` are structurally equal.
    pub fn same(&self, a: TypeId, b: TypeId) -> bool {
        self.class_of[a.0 as usize] == self.class_of[b.0 as usize]
    }

    /// Number of distinct structural classes.
    pub fn class_count(&self) -> usize {
        self.class_ids.len()
    }

    fn compute_with_hasher(table: &TypeTable, hash: impl Fn(&str) -> u64) -> Self {
        let n = table.types.len();

        // Initial partition: shallow shape with element kinds but no targets.
        let mut class_of: Vec<u32> = Vec::with_capacity(n);
        let mut seen: BTreeMap<Vec<u64>, u32> = BTreeMap::new();
        for layout in &table.types {
            let mut key = alloc::vec![layout.size, layout.is_lock as u64];
            for f in &layout.fields {
                key.push(f.offset);
                key.push(f.size);
                key.push(elem_tag(&f.elem));
            }
            let next = seen.len() as u32;
            class_of.push(*seen.entry(key).or_insert(next));
        }

        // Refine: split classes whose field targets fall in different classes,
        // until stable. Classes only ever split, so this terminates.
        loop {
            let mut next_seen: BTreeMap<(u32, Vec<u32>), u32> = BTreeMap::new();
            let mut next: Vec<u32> = Vec::with_capacity(n);
            for (i, layout) in table.types.iter().enumerate() {
                let mut targets = Vec::new();
                for f in &layout.fields {
                    match f.elem {
                        ElemType::Struct(t) | ElemType::Ref(t) => {
                            targets.push(class_of[t.0 as usize]);
                        }
                        ElemType::Scalar | ElemType::Lock => {}
                    }
                }
                let fresh = next_seen.len() as u32;
                next.push(*next_seen.entry((class_of[i], targets)).or_insert(fresh));
            }
            let stable = next_seen.len() == seen_count(&class_of);
            class_of = next;
            if stable {
                break;
            }
        }

        // Canonical serialization per class over the quotient graph, then a
        // hash with deterministic linear-probe disambiguation of collisions.
        let class_count = seen_count(&class_of);
        let mut rep: Vec<Option<TypeId>> = alloc::vec![None; class_count];
        for (i, &c) in class_of.iter().enumerate() {
            if rep[c as usize].is_none() {
                rep[c as usize] = Some(TypeId(i as u32));
            }
        }
        let mut strings: Vec<String> = Vec::with_capacity(class_count);
        for c in 0..class_count {
            let mut s = String::new();
            let mut disc = BTreeMap::new();
            serialize_class(table, &class_of, &rep, c as u32, &mut disc, &mut s);
            strings.push(s);
        }

        let mut order: Vec<usize> = (0..class_count).collect();
        order.sort_by(|&a, &b| strings[a].cmp(&strings[b]));
        let mut class_ids = alloc::vec![StructuralTypeId(0); class_count];
        let mut used: alloc::collections::BTreeSet<u64> = alloc::collections::BTreeSet::new();
        for c in order {
            let mut h = hash(&strings[c]);
            while !used.insert(h) {
                h = h.wrapping_add(1);
            }
            class_ids[c] = StructuralTypeId(h);
        }

        StructuralTypeIds {
            class_of,
            class_ids,
        }
    }
}

/// Structural id of one layout; convenience wrapper that computes the whole
/// table's partition. Callers needing many ids should hold a
/// [`StructuralTypeIds`] instead.
pub fn structural_type_id(table: &TypeTable, t: TypeId) -> StructuralTypeId {
    StructuralTypeIds::compute(table).id(t)
}

fn elem_tag(e: &ElemType) -> u64 {
    match e {
        ElemType::Scalar => 0,
        ElemType::Lock => 1,
        ElemType::Struct(_) => 2,
        ElemType::Ref(_) => 3,
    }
}

fn seen_count(class_of: &[u32]) -> usize {
    class_of.iter().copied().max().map_or(0, |m| m as usize + 1)
}

/// Write a canonical description of the quotient graph reachable from class
/// `c`. Back-edges print as `#k` where `k` is the discovery index, so equal
/// classes produce byte-identical strings and distinct classes cannot.
fn serialize_class(
    table: &TypeTable,
    class_of: &[u32],
    rep: &[Option<TypeId>],
    c: u32,
    disc: &mut BTreeMap<u32, usize>,
    out: &mut String,
) {
    if let Some(&k) = disc.get(&c) {
        let _ = write!(out, "#{k}");
        return;
    }
    disc.insert(c, disc.len());
    let layout = &table.types[rep[c as usize].expect("class has a member").0 as usize];
    let _ = write!(out, "({},{}", layout.size, layout.is_lock as u8);
    for f in &layout.fields {
        let _ = write!(out, ",{}:{}:", f.offset, f.size);
        match f.elem {
            ElemType::Scalar => out.push('v'),
            ElemType::Lock => out.push('l'),
            ElemType::Struct(t) => {
                out.push('s');
                serialize_class(table, class_of, rep, class_of[t.0 as usize], disc, out);
            }
            ElemType::Ref(t) => {
                out.push('r');
                serialize_class(table, class_of, rep, class_of[t.0 as usize], disc, out);
            }
        }
    }
    out.push(')');
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{FieldDef, StructLayout};

    fn table(layouts: Vec<StructLayout>) -> TypeTable {
        let mut t = TypeTable::default();
        for l in layouts {
            t.push(l).expect("unique name");
        }
        t
    }

    fn layout(name: &str, size: u64, is_lock: bool, fields: Vec<FieldDef>) -> StructLayout {
        StructLayout {
            name: name.into(),
            size,
            is_lock,
            fields,
        }
    }

    fn field(offset: u64, size: u64, elem: ElemType) -> FieldDef {
        FieldDef { offset, size, elem }
    }

    #[test]
    fn collision_disambiguation_keeps_distinct_classes_distinct() {
        // A constant hash collides everything; linear probing must still hand
        // every class its own id, in canonical order.
        let t = table(alloc::vec![
            layout("a", 8, false, alloc::vec![field(0, 8, ElemType::Scalar)]),
            layout("b", 16, false, alloc::vec![field(0, 8, ElemType::Scalar)]),
            layout("c", 8, true, alloc::vec![field(0, 8, ElemType::Scalar)]),
            layout("a2", 8, false, alloc::vec![field(0, 8, ElemType::Scalar)]),
        ]);
        let ids = StructuralTypeIds::compute_with_hasher(&t, |_| 42);
        assert_eq!(ids.class_count(), 3);
        assert_eq!(ids.id(TypeId(0)), ids.id(TypeId(3)));
        assert_ne!(ids.id(TypeId(0)), ids.id(TypeId(1)));
        assert_ne!(ids.id(TypeId(1)), ids.id(TypeId(2)));
        assert_ne!(ids.id(TypeId(0)), ids.id(TypeId(2)));
    }

    #[test]
    fn shared_versus_duplicated_targets_compare_equal() {
        // `pair` points at two structurally equal but distinct types; `pair2`
        // points at one shared type. Unfoldings agree, so the ids must too.
        let t = table(alloc::vec![
            layout("x", 8, false, alloc::vec![field(0, 8, ElemType::Scalar)]),
            layout("y", 8, false, alloc::vec![field(0, 8, ElemType::Scalar)]),
            layout(
                "pair",
                16,
                false,
                alloc::vec![
                    field(0, 8, ElemType::Ref(TypeId(0))),
                    field(8, 8, ElemType::Ref(TypeId(1))),
                ],
            ),
            layout(
                "pair2",
                16,
                false,
                alloc::vec![
                    field(0, 8, ElemType::Ref(TypeId(0))),
                    field(8, 8, ElemType::Ref(TypeId(0))),
                ],
            ),
        ]);
        let ids = StructuralTypeIds::compute(&t);
        assert!(ids.same(TypeId(2), TypeId(3)));
    }
}
