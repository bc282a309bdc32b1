//! Brute-force dominance by bounded path enumeration.
//!
//! Paths revisit each block at most twice; that bound is exact for dominance
//! questions (any witness path avoiding a block can be cycle-cut down to two
//! simple segments). Unreachable blocks dominate/are dominated by nothing,
//! matching the analytic implementation.

use raceweaver_core::ir::{BlockId, Function, Instr};

fn succs(f: &Function, b: usize) -> Vec<usize> {
    match f.blocks[b].instrs.last() {
        Some(Instr::Br {
            cond,
            then_b,
            else_b,
        }) => {
            let mut v = vec![then_b.0 as usize];
            if let Some(e) = else_b {
                if cond.is_some() && e != then_b {
                    v.push(e.0 as usize);
                }
            }
            v
        }
        _ => Vec::new(),
    }
}

fn is_ret(f: &Function, b: usize) -> bool {
    matches!(f.blocks[b].instrs.last(), Some(Instr::Ret { .. }))
}

/// Intersection of block sets over all bounded paths `from -> ... -> pred(stop)`,
/// where `stop` decides which path endpoints count as complete.
fn enumerate(
    f: &Function,
    cur: usize,
    visits: &mut [u8],
    path: u32,
    complete_at: &dyn Fn(usize) -> bool,
    inter: &mut u32,
    any: &mut bool,
) {
    let path = path | (1 << cur);
    if complete_at(cur) {
        *inter &= path;
        *any = true;
        // A completed path may still continue (e.g. paths ending at a later
        // arrival); for ret blocks there are no successors anyway, and for
        // "reach block b" queries later arrivals only grow the path set, so
        // stopping here is exact.
        return;
    }
    visits[cur] += 1;
    for s in succs(f, cur) {
        if visits[s] < 2 {
            enumerate(f, s, visits, path, complete_at, inter, any);
        }
    }
    visits[cur] -= 1;
}

/// Does `a` dominate `b`? Every entry-to-`b` path passes through `a`.
/// False when `b` is unreachable from the entry.
pub fn dominates_bf(f: &Function, a: BlockId, b: BlockId) -> bool {
    let (a, b) = (a.0 as usize, b.0 as usize);
    let mut visits = vec![0u8; f.blocks.len()];
    let mut inter = u32::MAX;
    let mut any = false;
    enumerate(f, 0, &mut visits, 0, &|c| c == b, &mut inter, &mut any);
    any && inter & (1 << a) != 0
}

/// Does `a` postdominate `b`? Every path from `b` to a `ret` passes through
/// `a`. When no return is reachable from `b`, only `b` itself qualifies.
pub fn postdominates_bf(f: &Function, a: BlockId, b: BlockId) -> bool {
    let (a, b) = (a.0 as usize, b.0 as usize);
    let mut visits = vec![0u8; f.blocks.len()];
    let mut inter = u32::MAX;
    let mut any = false;
    enumerate(f, b, &mut visits, 0, &|c| is_ret(f, c), &mut inter, &mut any);
    if !any {
        return a == b;
    }
    inter & (1 << a) != 0
}
