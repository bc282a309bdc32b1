//! Scratch harness: replay one generated module from the lock-coverage
//! equivalence test by index and dump analysis-vs-oracle facts.

use raceweaver_core::callgraph::CallGraph;
use raceweaver_core::ir::LockMode;
use raceweaver_core::locks::{compute_lock_coverage, LockConfig};
use raceweaver_core::printer::print_module;
use raceweaver_testkit::lockorc::enumerate_locksets;
use raceweaver_testkit::{gen_module, rng, GenOptions, EXT_ACQUIRE, EXT_RELEASE};

fn main() {
    let which: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut r = rng(0x10c0_c0de);
    let mut config = LockConfig::default();
    config.acquire.insert(EXT_ACQUIRE.into(), LockMode::Exclusive);
    config.release.insert(EXT_RELEASE.into());
    let opts = GenOptions {
        funcs: 8,
        blocks: 10,
        ..GenOptions::default()
    };
    for case in 0..=which {
        let m = gen_module(&mut r, &opts);
        if case < which {
            continue;
        }
        println!("{}", print_module(&m));
        let cg = CallGraph::build(&m);
        let cov = compute_lock_coverage(&m, &cg, &config);
        let orc = enumerate_locksets(&m, &config, 4_000_000);
        println!("oracle steps: {}", orc.steps);
        for (site, want) in &orc.facts {
            let got = cov.facts.get(site);
            if got != Some(want) {
                println!(
                    "MISMATCH {}.{}.{}: analysis={:?} oracle={:?}",
                    m.func(site.func).name,
                    site.block.0,
                    site.idx,
                    got,
                    want
                );
            }
        }
    }
}
