//! Parser/printer round-trip guarantees: printing a parsed module and
//! re-parsing yields the same module, printing is idempotent, and malformed
//! input produces positioned errors rather than panics.

use raceweaver_core::parser::{parse_module, ParseErrorKind};
use raceweaver_core::printer::print_module;
use raceweaver_testkit::{gen_module, rng, GenOptions};

#[test]
fn generated_modules_round_trip() {
    let mut r = rng(0x0d0_11e7);
    for case in 0..60 {
        let m = gen_module(&mut r, &GenOptions::default());
        let text = print_module(&m);
        let back = parse_module(&text)
            .unwrap_or_else(|e| panic!("case {case}: reparse failed: {e}\n{text}"));
        assert_eq!(m, back, "case {case}: round trip changed the module");
        assert_eq!(text, print_module(&back), "case {case}: print not idempotent");
    }
}

#[test]
fn large_module_round_trips() {
    let mut r = rng(0xb16_0d);
    let opts = GenOptions {
        funcs: 50,
        blocks: 8,
        instrs: 7,
        ..GenOptions::default()
    };
    let m = gen_module(&mut r, &opts);
    let text = print_module(&m);
    let back = parse_module(&text).expect("reparse");
    assert_eq!(m, back);
}

#[test]
fn hand_written_module_round_trips() {
    let src = "
# scratch buffer protected by its embedded lock
type lk size 4 lock { }
type buf size 24 {
  field 0 4 lk;
  field 8 8 scalar;
  field 16 8 ref buf;
}

global head: buf
global counter: scalar

func get(%b: buf) -> scalar {
block entry:
  %l = addr %b : buf [0]
  acquire %l
  %d = addr %b : buf [8]
  %v = load %d
  release %l
  ret %v
}

func set(%b: buf, %v: scalar) {
block entry:
  %d = addr %b : buf [8]
  store %v, %d
  ret
}
";
    let m = parse_module(src).expect("parse");
    let text = print_module(&m);
    let back = parse_module(&text).expect("reparse");
    assert_eq!(m, back);
    assert_eq!(text, print_module(&back));
    assert_eq!(m.funcs.len(), 2);
    assert_eq!(m.types.types.len(), 2);
    assert!(m.types.types[0].is_lock);
    assert_eq!(m.types.types[1].fields.len(), 3);
}

#[test]
fn every_instruction_form_round_trips() {
    let src = "
type lk size 4 lock { }
type s size 16 {
  field 0 4 lk;
  field 8 8 scalar;
}

global g: s

func callee(%p: s) -> scalar {
block entry:
  ret 0
}

func f(%p: s, %fp: scalar, %c: scalar) -> scalar {
block entry:
  %a = addr %p : s [8]
  %b = addr %p [byte -8]
  %v = load %a
  %w = load %b !type s
  %gv = load @g !type s
  store %v, %a
  store %w, %a atomic !type s
  %x = cast %p to s
  %k = addr %p : s [0]
  acquire %k
  acquire_read %k
  acquire_write %k
  assert_held %k
  release %k
  %r = call callee(%p)
  call ext_thing(%p, 4, null)
  %i = icall %fp(%p)
  icall %fp()
  %cc = cmp eq %v, 0
  %nn = cmp ne %p, null
  %sel = select %cc, %v, %w
  br %cc, one, two
block one:
  br three
block two:
  br three
block three:
  %m = phi %v, %w, %r
  data_race
  ret %m
}
";
    let m = parse_module(src).expect("parse");
    let text = print_module(&m);
    let back = parse_module(&text).expect("reparse");
    assert_eq!(m, back);
    assert_eq!(text, print_module(&back));
}

fn err_kind(src: &str) -> ParseErrorKind {
    let e = parse_module(src).expect_err("expected parse failure");
    eprintln!("err_kind: {e}");
    e.kind
}

#[test]
fn duplicate_and_undefined_names_are_rejected() {
    assert_eq!(
        err_kind("type t size 8 { }\ntype t size 8 { }"),
        ParseErrorKind::DuplicateType
    );
    assert_eq!(
        err_kind("global g: scalar\nglobal g: scalar"),
        ParseErrorKind::DuplicateGlobal
    );
    assert_eq!(
        err_kind("func f() {\nblock e:\n ret\n}\nfunc f() {\nblock e:\n ret\n}"),
        ParseErrorKind::DuplicateFunction
    );
    assert_eq!(
        err_kind("func f() {\nblock e:\n %v = load %q\n ret\n}"),
        ParseErrorKind::UndefinedValue
    );
    assert_eq!(
        err_kind("func f() {\nblock e:\n br nowhere\n}"),
        ParseErrorKind::UndefinedBlock
    );
    assert_eq!(
        err_kind("func f(%p: t) {\nblock e:\n ret\n}"),
        ParseErrorKind::UndefinedType
    );
    assert_eq!(
        err_kind("global bad: nothere"),
        ParseErrorKind::UndefinedType
    );
}

#[test]
fn layout_violations_are_rejected() {
    // Overlapping fields.
    assert_eq!(
        err_kind("type t size 16 {\n field 0 8 scalar;\n field 4 8 scalar;\n}"),
        ParseErrorKind::IllFormedLayout
    );
    // Field past the end of the struct.
    assert_eq!(
        err_kind("type t size 8 {\n field 4 8 scalar;\n}"),
        ParseErrorKind::IllFormedLayout
    );
    // Embedded struct slot must match the embedded type's size.
    assert_eq!(
        err_kind("type a size 16 { }\ntype t size 32 {\n field 0 8 a;\n}"),
        ParseErrorKind::IllFormedLayout
    );
}

#[test]
fn ssa_discipline_is_enforced() {
    // Use before def in the same block.
    assert_eq!(
        err_kind("func f() {\nblock e:\n %b = cmp eq %a, 0\n %a = cmp eq 0, 0\n ret\n}"),
        ParseErrorKind::DominanceViolation
    );
    // Definition in a non-dominating sibling branch.
    assert_eq!(
        err_kind(
            "func f(%c: scalar) {
             block e:
               br %c, l, r
             block l:
               %v = cmp eq 0, 0
               br j
             block r:
               br j
             block j:
               %u = cmp eq %v, 0
               ret
             }"
        ),
        ParseErrorKind::DominanceViolation
    );
    // Same shape through a phi is fine.
    let ok = "func f(%c: scalar) {
              block e:
                br %c, l, r
              block l:
                %v = cmp eq 0, 0
                br j
              block r:
                br j
              block j:
                %u = phi %v, %c
                ret
              }";
    assert!(parse_module(ok).is_ok());
    // Duplicate SSA names are rejected.
    assert_eq!(
        err_kind("func f() {\nblock e:\n %v = cmp eq 0, 0\n %v = cmp eq 0, 0\n ret\n}"),
        ParseErrorKind::DuplicateValue
    );
}

#[test]
fn block_discipline_is_enforced() {
    // Missing terminator.
    assert_eq!(
        err_kind("func f() {\nblock e:\n %v = cmp eq 0, 0\n}"),
        ParseErrorKind::IllFormedBlock
    );
    // Instruction after the terminator.
    assert_eq!(
        err_kind("func f() {\nblock e:\n ret\n %v = cmp eq 0, 0\n}"),
        ParseErrorKind::IllFormedBlock
    );
    // Empty function.
    assert_eq!(err_kind("func f() {\n}"), ParseErrorKind::IllFormedBlock);
}

#[test]
fn errors_carry_positions() {
    let e = parse_module("type t size 8 { }\nglobal g: nope").expect_err("fail");
    assert_eq!(e.line, 2);
    assert!(e.col > 1);
    assert_eq!(e.kind, ParseErrorKind::UndefinedType);
    let msg = e.to_string();
    assert!(msg.contains("2:"), "message should lead with position: {msg}");
    assert!(msg.contains("nope"), "message should name the offender: {msg}");
}

mod fuzz {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        // The parser must never panic, whatever bytes it is fed.
        #[test]
        fn parser_never_panics(s in "\\PC*") {
            let _ = parse_module(&s);
        }

        #[test]
        fn parser_never_panics_on_kir_like_soup(
            s in proptest::collection::vec(
                prop_oneof![
                    Just("func".to_string()), Just("type".to_string()),
                    Just("block".to_string()), Just("{".to_string()),
                    Just("}".to_string()), Just("(".to_string()),
                    Just(")".to_string()), Just(":".to_string()),
                    Just("%v".to_string()), Just("@g".to_string()),
                    Just("addr".to_string()), Just("load".to_string()),
                    Just("acquire".to_string()), Just("ret".to_string()),
                    Just("->".to_string()), Just("size".to_string()),
                    Just("8".to_string()), Just("-3".to_string()),
                    Just("[".to_string()), Just("]".to_string()),
                    Just(",".to_string()), Just("=".to_string()),
                ],
                0..40
            )
        ) {
            let _ = parse_module(&s.join(" "));
        }
    }
}
