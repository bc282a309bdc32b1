//! Scratch harness: dump lock coverage facts, wrappers and the call
//! graph for a module read from stdin, for debugging coverage results.

use std::io::Read;

use raceweaver_core::callgraph::CallGraph;
use raceweaver_core::ir::LockMode;
use raceweaver_core::locks::{compute_lock_coverage, LockConfig};
use raceweaver_core::parser::parse_module;
use raceweaver_testkit::{EXT_ACQUIRE, EXT_RELEASE};

fn main() {
    let mut src = String::new();
    std::io::stdin().read_to_string(&mut src).unwrap();
    let m = parse_module(&src).unwrap();
    let cg = CallGraph::build(&m);
    println!("callgraph:\n{}", cg.dump(&m));
    let mut config = LockConfig::default();
    config.acquire.insert(EXT_ACQUIRE.into(), LockMode::Exclusive);
    config.release.insert(EXT_RELEASE.into());
    let cov = compute_lock_coverage(&m, &cg, &config);
    for (f, roles) in &cov.wrappers {
        println!("wrapper {}: {roles:?}", m.func(*f).name);
    }
    println!("diags: {:?}", cov.diags);
    for (site, fact) in &cov.facts {
        println!(
            "{}.{}.{} -> {:?}",
            m.func(site.func).name,
            site.block.0,
            site.idx,
            fact.iter()
                .map(|(l, md)| format!("{l:?}={md}"))
                .collect::<Vec<_>>()
        );
    }
}
