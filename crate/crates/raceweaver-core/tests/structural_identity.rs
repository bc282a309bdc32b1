//! Structural type identity against a brute-force unfolding oracle, plus the
//! name-suffix and determinism guarantees.

use raceweaver_core::ir::TypeId;
use raceweaver_core::parser::parse_module;
use raceweaver_core::structural::{structural_type_id, StructuralTypeIds};
use raceweaver_testkit::structorc::struct_eq_bf;
use raceweaver_testkit::{gen_type_table, rng};

#[test]
fn id_equality_matches_unfolding_oracle() {
    let mut r = rng(0x57f_0c71);
    let mut pairs = 0usize;
    while pairs < 500 {
        let table = gen_type_table(&mut r, 5);
        let ids = StructuralTypeIds::compute(&table);
        let n = table.types.len();
        for a in 0..n {
            for b in 0..n {
                let (ta, tb) = (TypeId(a as u32), TypeId(b as u32));
                let want = struct_eq_bf(&table, ta, tb);
                assert_eq!(
                    ids.same(ta, tb),
                    want,
                    "classes disagree with oracle for `{}` vs `{}`",
                    table.types[a].name,
                    table.types[b].name
                );
                assert_eq!(
                    ids.id(ta) == ids.id(tb),
                    want,
                    "ids disagree with oracle for `{}` vs `{}`",
                    table.types[a].name,
                    table.types[b].name
                );
                pairs += 1;
            }
        }
    }
}

#[test]
fn name_suffix_duplicates_share_an_id() {
    // The same shape under a suffixed name, self-references included, is the
    // same type.
    let m = parse_module(
        "type lk size 4 lock { }
         type foo size 24 {
           field 0 4 lk;
           field 8 8 scalar;
           field 16 8 ref foo;
         }
         type foo.123 size 24 {
           field 0 4 lk;
           field 8 8 scalar;
           field 16 8 ref foo.123;
         }",
    )
    .expect("parse");
    let foo = m.types.lookup("foo").unwrap();
    let foo123 = m.types.lookup("foo.123").unwrap();
    let ids = StructuralTypeIds::compute(&m.types);
    assert!(ids.same(foo, foo123));
    assert_eq!(ids.id(foo), ids.id(foo123));
    assert_ne!(ids.id(foo), ids.id(m.types.lookup("lk").unwrap()));
}

#[test]
fn empty_structs_compare_equal_regardless_of_name() {
    let m = parse_module("type a size 8 { }\ntype b size 8 { }\ntype c size 16 { }")
        .expect("parse");
    let ids = StructuralTypeIds::compute(&m.types);
    assert!(ids.same(TypeId(0), TypeId(1)));
    assert!(!ids.same(TypeId(0), TypeId(2)));
    assert_eq!(structural_type_id(&m.types, TypeId(0)), ids.id(TypeId(1)));
}

#[test]
fn lock_marker_and_layout_differences_split_classes() {
    let m = parse_module(
        "type a size 4 { }
         type a_lock size 4 lock { }
         type w size 8 {
           field 0 4 a;
         }
         type w2 size 8 {
           field 4 4 a;
         }",
    )
    .expect("parse");
    let ids = StructuralTypeIds::compute(&m.types);
    assert!(!ids.same(TypeId(0), TypeId(1)), "lock marker must distinguish");
    assert!(!ids.same(TypeId(2), TypeId(3)), "field offset must distinguish");
}

#[test]
fn ids_do_not_depend_on_declaration_order() {
    let fwd = parse_module(
        "type inner size 8 {
           field 0 8 scalar;
         }
         type outer size 16 {
           field 0 8 inner;
           field 8 8 ref outer;
         }",
    )
    .expect("parse");
    let rev = parse_module(
        "type outer size 16 {
           field 0 8 inner;
           field 8 8 ref outer;
         }
         type inner size 8 {
           field 0 8 scalar;
         }",
    )
    .expect("parse");
    let fids = StructuralTypeIds::compute(&fwd.types);
    let rids = StructuralTypeIds::compute(&rev.types);
    for name in ["inner", "outer"] {
        assert_eq!(
            fids.id(fwd.types.lookup(name).unwrap()),
            rids.id(rev.types.lookup(name).unwrap()),
            "id for `{name}` should not depend on table order"
        );
    }
}
