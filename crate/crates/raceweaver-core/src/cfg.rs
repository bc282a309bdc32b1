//! Per-function control-flow graph with dominators and postdominators.
//!
//! Postdominators are computed against a virtual exit node that joins every
//! `ret` block, so functions with multiple returns have a single tree root.
//! Blocks with no path to any return are attached directly under the virtual
//! exit.

use alloc::vec;
use alloc::vec::Vec;

use crate::ir::{BlockId, Function, Instr};

/// Parent link in the postdominator tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdomParent {
    /// Immediate postdominator is the virtual exit (return blocks, and blocks
    /// that cannot reach any return).
    VirtualExit,
    Block(BlockId),
}

/// Control-flow graph and dominance information for one function.
#[derive(Debug, Clone)]
pub struct Cfg {
    pub succs: Vec<Vec<BlockId>>,
    pub preds: Vec<Vec<BlockId>>,
    /// Reachable from the entry block.
    pub reachable: Vec<bool>,
    /// Immediate dominator; `None` for the entry block and unreachable blocks.
    pub idom: Vec<Option<BlockId>>,
    /// Immediate postdominator of every block.
    pub ipdom: Vec<PdomParent>,
    /// Reverse postorder over reachable blocks, starting at the entry.
    pub rpo: Vec<BlockId>,
    /// Blocks ending in `ret`.
    pub ret_blocks: Vec<BlockId>,
}

impl Cfg {
    pub fn build(f: &Function) -> Cfg {
        let n = f.blocks.len();
        let mut succs: Vec<Vec<BlockId>> = vec![Vec::new(); n];
        let mut preds: Vec<Vec<BlockId>> = vec![Vec::new(); n];
        let mut ret_blocks = Vec::new();
        for (bi, b) in f.blocks.iter().enumerate() {
            match b.instrs.last() {
                Some(Instr::Br {
                    cond,
                    then_b,
                    else_b,
                }) => {
                    let mut targets = vec![*then_b];
                    if let Some(e) = else_b {
                        if cond.is_some() && e != then_b {
                            targets.push(*e);
                        }
                    }
                    for t in targets {
                        succs[bi].push(t);
                        preds[t.0 as usize].push(BlockId(bi as u32));
                    }
                }
                Some(Instr::Ret { .. }) => ret_blocks.push(BlockId(bi as u32)),
                _ => {}
            }
        }

        let succ_of = |i: usize| succs[i].iter().map(|b| b.0 as usize).collect::<Vec<_>>();

        // Forward reachability and reverse postorder from the entry.
        let rpo_idx = postorder(n, 0, &|i| succ_of(i));
        let mut rpo: Vec<BlockId> = rpo_idx.iter().rev().map(|&i| BlockId(i as u32)).collect();
        if rpo.first() != Some(&BlockId(0)) {
            // Entry is always first in RPO by construction; defensive only.
            rpo.retain(|b| b.0 != 0);
            rpo.insert(0, BlockId(0));
        }
        let mut reachable = vec![false; n];
        for b in &rpo {
            reachable[b.0 as usize] = true;
        }

        let idom_raw = compute_idom(n, 0, &|i| succ_of(i));
        let idom = (0..n)
            .map(|i| {
                if i == 0 || !reachable[i] {
                    None
                } else {
                    idom_raw[i].map(|d| BlockId(d as u32))
                }
            })
            .collect();

        // Postdominators: reversed graph over n real nodes plus the virtual
        // exit at index n, whose successors are the return blocks.
        let exit = n;
        let rev_succ = |i: usize| -> Vec<usize> {
            if i == exit {
                ret_blocks.iter().map(|b| b.0 as usize).collect()
            } else {
                preds[i].iter().map(|b| b.0 as usize).collect()
            }
        };
        let ipdom_raw = compute_idom(n + 1, exit, &rev_succ);
        let ipdom = (0..n)
            .map(|i| match ipdom_raw[i] {
                Some(p) if p != exit => PdomParent::Block(BlockId(p as u32)),
                // Return blocks point at the exit; blocks that cannot reach a
                // return have no postdominator information and sit under the
                // exit as well.
                _ => PdomParent::VirtualExit,
            })
            .collect();

        Cfg {
            succs,
            preds,
            reachable,
            idom,
            ipdom,
            rpo,
            ret_blocks,
        }
    }

    /// Does `a` dominate `b`? Reflexive; false when `b` is unreachable.
    pub fn dominates(&self, a: BlockId, b: BlockId) -> bool {
        if !self.reachable[b.0 as usize] {
            return false;
        }
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom[cur.0 as usize] {
                Some(d) => cur = d,
                None => return false,
            }
        }
    }

    /// Does `a` postdominate `b`? Reflexive.
    pub fn postdominates(&self, a: BlockId, b: BlockId) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.ipdom[cur.0 as usize] {
                PdomParent::Block(p) => cur = p,
                PdomParent::VirtualExit => return false,
            }
        }
    }
}

/// Postorder over nodes reachable from `entry`; iterative DFS, first-successor
/// order, each node visited once.
fn postorder(n: usize, entry: usize, succ: &dyn Fn(usize) -> Vec<usize>) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut seen = vec![false; n.max(entry + 1)];
    let mut order = Vec::new();
    // (node, next successor index)
    let mut stack = vec![(entry, 0usize)];
    seen[entry] = true;
    while let Some(top) = stack.last_mut() {
        let (node, next) = *top;
        let ss = succ(node);
        if next < ss.len() {
            top.1 += 1;
            let s = ss[next];
            if !seen[s] {
                seen[s] = true;
                stack.push((s, 0));
            }
        } else {
            order.push(node);
            stack.pop();
        }
    }
    order
}

/// Iterative immediate-dominator computation (Cooper/Harvey/Kennedy).
/// Returns `None` for the entry and for nodes unreachable from it.
fn compute_idom(n: usize, entry: usize, succ: &dyn Fn(usize) -> Vec<usize>) -> Vec<Option<usize>> {
    let post = postorder(n, entry, succ);
    let mut po_num = vec![usize::MAX; n];
    for (i, &b) in post.iter().enumerate() {
        po_num[b] = i;
    }
    let rpo: Vec<usize> = post.iter().rev().copied().collect();

    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &b in &rpo {
        for s in succ(b) {
            preds[s].push(b);
        }
    }

    let mut idom: Vec<Option<usize>> = vec![None; n];
    idom[entry] = Some(entry);
    let mut changed = true;
    while changed {
        changed = false;
        for &b in &rpo {
            if b == entry {
                continue;
            }
            let mut new_idom: Option<usize> = None;
            for &p in &preds[b] {
                if idom[p].is_none() {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(cur, p, &idom, &po_num),
                });
            }
            if new_idom != idom[b] {
                idom[b] = new_idom;
                changed = true;
            }
        }
    }
    idom[entry] = None;
    idom
}

fn intersect(a: usize, b: usize, idom: &[Option<usize>], po_num: &[usize]) -> usize {
    let (mut x, mut y) = (a, b);
    while x != y {
        while po_num[x] < po_num[y] {
            x = idom[x].expect("processed node has idom");
        }
        while po_num[y] < po_num[x] {
            y = idom[y].expect("processed node has idom");
        }
    }
    x
}
