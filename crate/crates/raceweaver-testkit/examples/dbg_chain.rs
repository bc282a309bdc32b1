//! Replay a generated chain case by index and dump it (debugging aid).

use raceweaver_core::fields::extract_field_access;
use raceweaver_core::printer::print_module;
use raceweaver_testkit::{gen_chain_case, rng};

fn main() {
    let target: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(179);
    let mut r = rng(0xc4a1_0f5e);
    for case in 0..=target {
        let c = gen_chain_case(&mut r);
        if case == target {
            println!("{}", print_module(&c.module));
            println!("probe: {:?}  store={}", c.probe, c.is_store);
            println!("expect: {:?}", c.expect);
            let (accs, diags) = extract_field_access(&c.module, c.probe);
            println!("got: {accs:#?}");
            println!("diags: {diags:?}");
        }
    }
}
