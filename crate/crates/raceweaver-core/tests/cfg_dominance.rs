//! Dominator/postdominator agreement with brute-force path enumeration, plus
//! the virtual-exit invariants on hand-built CFGs.

use raceweaver_core::cfg::{Cfg, PdomParent};
use raceweaver_core::ir::BlockId;
use raceweaver_core::parser::parse_module;
use raceweaver_testkit::domorc::{dominates_bf, postdominates_bf};
use raceweaver_testkit::{gen_cfg_function, rng};

#[test]
fn dominance_matches_bruteforce_on_random_cfgs() {
    let mut r = rng(0x5eed_d011);
    for case in 0..100 {
        let f = gen_cfg_function(&mut r, 12);
        let cfg = Cfg::build(&f);
        let n = f.blocks.len();
        for a in 0..n {
            for b in 0..n {
                let (ba, bb) = (BlockId(a as u32), BlockId(b as u32));
                assert_eq!(
                    cfg.dominates(ba, bb),
                    dominates_bf(&f, ba, bb),
                    "case {case}: dominates({a}, {b}) over {n} blocks"
                );
                assert_eq!(
                    cfg.postdominates(ba, bb),
                    postdominates_bf(&f, ba, bb),
                    "case {case}: postdominates({a}, {b}) over {n} blocks"
                );
            }
        }
    }
}

#[test]
fn every_block_hangs_off_the_virtual_exit() {
    let mut r = rng(0x5eed_d012);
    for _ in 0..100 {
        let f = gen_cfg_function(&mut r, 12);
        let cfg = Cfg::build(&f);
        // Walking parent links from any block terminates at the virtual exit,
        // i.e. the postdominator tree contains every block plus the exit.
        for b in 0..f.blocks.len() {
            let mut cur = BlockId(b as u32);
            let mut steps = 0;
            loop {
                match cfg.ipdom[cur.0 as usize] {
                    PdomParent::VirtualExit => break,
                    PdomParent::Block(p) => {
                        cur = p;
                        steps += 1;
                        assert!(steps <= f.blocks.len(), "cycle in postdominator tree");
                    }
                }
            }
        }
    }
}

fn func_cfg(body: &str) -> Cfg {
    let m = parse_module(body).expect("parse");
    Cfg::build(&m.funcs[0])
}

#[test]
fn diamond_postdominated_by_join() {
    let cfg = func_cfg(
        "func f(%c: scalar) {
         block e:
           br %c, l, r
         block l:
           br j
         block r:
           br j
         block j:
           ret
         }",
    );
    // join postdominates everything; entry dominates everything.
    for b in 0..4 {
        assert!(cfg.postdominates(BlockId(3), BlockId(b)));
        assert!(cfg.dominates(BlockId(0), BlockId(b)));
    }
    assert!(!cfg.postdominates(BlockId(1), BlockId(0)));
    assert!(!cfg.dominates(BlockId(1), BlockId(3)));
}

#[test]
fn multiple_returns_join_at_virtual_exit() {
    let cfg = func_cfg(
        "func f(%c: scalar) {
         block e:
           br %c, a, b
         block a:
           ret
         block b:
           ret
         }",
    );
    assert_eq!(cfg.ipdom[1], PdomParent::VirtualExit);
    assert_eq!(cfg.ipdom[2], PdomParent::VirtualExit);
    // Neither return block postdominates the entry; only the virtual exit does.
    assert!(!cfg.postdominates(BlockId(1), BlockId(0)));
    assert!(!cfg.postdominates(BlockId(2), BlockId(0)));
    assert_eq!(cfg.ipdom[0], PdomParent::VirtualExit);
    assert_eq!(cfg.ret_blocks, vec![BlockId(1), BlockId(2)]);
}

#[test]
fn infinite_loop_sits_directly_under_virtual_exit() {
    let cfg = func_cfg(
        "func f(%c: scalar) {
         block e:
           br %c, spin, out
         block spin:
           br spin
         block out:
           ret
         }",
    );
    // `spin` has no path to any return: postdominated only by the virtual exit.
    assert_eq!(cfg.ipdom[1], PdomParent::VirtualExit);
    assert!(!cfg.postdominates(BlockId(2), BlockId(1)));
    assert!(cfg.postdominates(BlockId(1), BlockId(1)));
}

#[test]
fn loop_body_dominated_by_header() {
    let cfg = func_cfg(
        "func f(%c: scalar) {
         block e:
           br h
         block h:
           br %c, body, exit
         block body:
           br h
         block exit:
           ret
         }",
    );
    assert!(cfg.dominates(BlockId(1), BlockId(2)));
    assert!(cfg.dominates(BlockId(1), BlockId(3)));
    assert!(!cfg.dominates(BlockId(2), BlockId(1)));
    assert_eq!(cfg.idom[2], Some(BlockId(1)));
    assert_eq!(cfg.idom[3], Some(BlockId(1)));
    // The loop header postdominates the body (all exits go through it).
    assert!(cfg.postdominates(BlockId(1), BlockId(2)));
}
