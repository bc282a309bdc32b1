//! Rule inference and violation detection: hand-written cases for
//! candidate-lock restrictions, lock-field exclusion, suffix tallying,
//! type-only fallback accesses and the inclusive threshold, plus
//! recount-oracle and monotonicity properties on generated modules.

use std::collections::{BTreeMap, BTreeSet};

use raceweaver_core::callgraph::CallGraph;
use raceweaver_core::fields::CanonChain;
use raceweaver_core::ir::{LockMode, Module};
use raceweaver_core::locks::{compute_lock_coverage, LockConfig, LockCoverage, LockId};
use raceweaver_core::parser::parse_module;
use raceweaver_core::rules::{
    collect_access_sites, detect_violations, infer_rules, is_candidate_lock, lock_typed_fields,
    AccessField, AccessSite, AccessSites, RuleKey, Rules, Tally, TallyMode, Violation,
};
use raceweaver_core::structural::{StructuralTypeId, StructuralTypeIds};
use raceweaver_core::{rat, Rat};
use raceweaver_testkit::{gen_module, rng, GenOptions, EXT_ACQUIRE, EXT_RELEASE};

fn parsed(src: &str) -> Module {
    parse_module(src).expect("test module parses")
}

fn coverage(m: &Module, config: &LockConfig) -> LockCoverage {
    let cg = CallGraph::build(m);
    compute_lock_coverage(m, &cg, config)
}

/// Full pipeline front half: coverage, access sites, inferred rules.
fn pipeline(m: &Module, config: &LockConfig) -> (AccessSites, Rules) {
    let cov = coverage(m, config);
    let sids = StructuralTypeIds::compute(&m.types);
    let sites = collect_access_sites(m, &sids, &cov);
    let rules = infer_rules(
        &sites.sites,
        &BTreeSet::new(),
        &lock_typed_fields(m, &sids),
    );
    (sites, rules)
}

fn canon(m: &Module, steps: &[(&str, u64)]) -> CanonChain {
    let sids = StructuralTypeIds::compute(&m.types);
    CanonChain(
        steps
            .iter()
            .map(|&(name, off)| (sids.id(m.types.lookup(name).unwrap()), off))
            .collect(),
    )
}

fn key(m: &Module, field: &[(&str, u64)], lock: &[(&str, u64)]) -> RuleKey {
    RuleKey {
        field: canon(m, field),
        lock: LockId::Field(canon(m, lock)),
    }
}

fn tally(locked: u64, unlocked: u64, lw: u64, uw: u64) -> Tally {
    Tally {
        locked_count: locked,
        unlocked_count: unlocked,
        locked_weight: lw,
        unlocked_weight: uw,
    }
}

/// The config matching the generated corpus's external primitives.
fn ext_config() -> LockConfig {
    let mut c = LockConfig::default();
    c.acquire.insert(EXT_ACQUIRE.into(), LockMode::Exclusive);
    c.release.insert(EXT_RELEASE.into());
    c
}

// ---------------------------------------------------------------------
// Rule discovery and tallies.
// ---------------------------------------------------------------------

#[test]
fn four_of_five_locked_accesses_make_one_rule() {
    let m = parsed(
        "
type t size 16 {
  field 0 4 lock;
  field 8 8 scalar;
}
func f(%o: t) {
block entry:
  %l = addr %o : t [0]
  %d = addr %o : t [8]
  acquire %l
  store 1, %d
  store 2, %d
  store 3, %d
  store 4, %d
  release %l
  store 5, %d
  ret
}
",
    );
    let (_, rules) = pipeline(&m, &LockConfig::default());
    let expect: BTreeMap<RuleKey, Tally> =
        [(key(&m, &[("t", 8)], &[("t", 0)]), tally(4, 1, 4, 1))].into();
    assert_eq!(rules.rules, expect);
    let t = rules.rules.values().next().unwrap();
    assert_eq!(t.fraction(TallyMode::Weighted), rat(1, 5));
}

#[test]
fn lock_typed_fields_never_become_rule_targets() {
    // t.0 (a lock) is read under t.4; that pairing must not become a rule,
    // while the plain data field t.8 does.
    let m = parsed(
        "
type t size 16 {
  field 0 4 lock;
  field 4 4 lock;
  field 8 8 scalar;
}
func f(%o: t) {
block entry:
  %outer = addr %o : t [4]
  acquire %outer
  %l = addr %o : t [0]
  %v = load %l
  %d = addr %o : t [8]
  store %v, %d
  release %outer
  ret
}
",
    );
    let (_, rules) = pipeline(&m, &LockConfig::default());
    let expect: BTreeMap<RuleKey, Tally> =
        [(key(&m, &[("t", 8)], &[("t", 4)]), tally(1, 0, 1, 0))].into();
    assert_eq!(rules.rules, expect);
}

#[test]
fn two_locks_held_together_make_two_independent_rules() {
    let m = parsed(
        "
type t size 24 {
  field 0 4 lock;
  field 4 4 lock;
  field 8 8 scalar;
}
func f(%o: t) {
block entry:
  %l1 = addr %o : t [0]
  %l2 = addr %o : t [4]
  acquire %l1
  acquire %l2
  %d = addr %o : t [8]
  store 1, %d
  store 2, %d
  release %l2
  release %l1
  ret
}
",
    );
    let (sites, rules) = pipeline(&m, &LockConfig::default());
    let expect: BTreeMap<RuleKey, Tally> = [
        (key(&m, &[("t", 8)], &[("t", 0)]), tally(2, 0, 2, 0)),
        (key(&m, &[("t", 8)], &[("t", 4)]), tally(2, 0, 2, 0)),
    ]
    .into();
    assert_eq!(rules.rules, expect);
    for t in rules.rules.values() {
        assert_eq!(t.fraction(TallyMode::Weighted), rat(0, 1));
    }
    // Every access satisfies both rules, so nothing is reported even
    // though both fractions sit below any threshold.
    let v = detect_violations(&rules, &sites.sites, rat(1, 2), TallyMode::Weighted);
    assert!(v.is_empty());
}

#[test]
fn a_lock_sharing_no_struct_is_not_a_candidate() {
    let m = parsed(
        "
type u size 8 {
  field 0 4 lock;
}
type t size 16 {
  field 8 8 scalar;
}
func f(%q: u, %o: t) {
block entry:
  %l = addr %q : u [0]
  acquire %l
  %d = addr %o : t [8]
  store 1, %d
  release %l
  ret
}
",
    );
    let (sites, rules) = pipeline(&m, &LockConfig::default());
    // The store really does run under u's lock; it is excluded because the
    // lock shares no aggregate type with the accessed field.
    let store = sites
        .sites
        .iter()
        .find(|s| s.field == AccessField::Chain(canon(&m, &[("t", 8)])))
        .unwrap();
    assert!(!store.locks.is_empty());
    assert!(rules.rules.is_empty());
}

#[test]
fn a_common_ancestor_lock_is_a_candidate() {
    let m = parsed(
        "
type t size 16 {
  field 8 8 scalar;
}
type p size 32 {
  field 16 8 ref t;
  field 24 4 lock;
}
func f(%o: p) {
block entry:
  %lp = addr %o : p [24]
  acquire %lp
  %tp = addr %o : p [16]
  %q = load %tp
  %d = addr %q : t [8]
  store 1, %d
  release %lp
  ret
}
",
    );
    let (_, rules) = pipeline(&m, &LockConfig::default());
    let expect: BTreeMap<RuleKey, Tally> = [
        // The nested store and the pointer-field load both sit under p's
        // lock; the nested chain pairs with it through the shared root p.
        (key(&m, &[("p", 16), ("t", 8)], &[("p", 24)]), tally(1, 0, 1, 0)),
        (key(&m, &[("p", 16)], &[("p", 24)]), tally(1, 0, 1, 0)),
    ]
    .into();
    assert_eq!(rules.rules, expect);
    // The suffix (t, 8) alone shares nothing with (p, 24): no such rule.
    assert!(!rules
        .rules
        .keys()
        .any(|k| k.field == canon(&m, &[("t", 8)])));
}

#[test]
fn global_locks_never_form_rules() {
    let m = parsed(
        "
type spin size 4 lock { }
type t size 16 {
  field 8 8 scalar;
}
global glock : spin
func f(%o: t) {
block entry:
  acquire @glock
  %d = addr %o : t [8]
  store 1, %d
  release @glock
  ret
}
",
    );
    let (sites, rules) = pipeline(&m, &LockConfig::default());
    // Coverage sees the global held; candidate pairing still rejects it.
    assert!(sites.sites[0]
        .locks
        .contains_key(&LockId::Global("glock".into())));
    assert!(rules.rules.is_empty());
}

#[test]
fn candidate_test_follows_shared_aggregate_types() {
    let t = StructuralTypeId(1);
    let p = StructuralTypeId(2);
    let u = StructuralTypeId(3);
    let field = |steps: &[(StructuralTypeId, u64)]| CanonChain(steps.to_vec());
    // Same struct.
    assert!(is_candidate_lock(
        &field(&[(t, 8)]),
        &LockId::Field(field(&[(t, 0)]))
    ));
    // Common ancestor struct.
    assert!(is_candidate_lock(
        &field(&[(p, 16), (t, 8)]),
        &LockId::Field(field(&[(p, 24)]))
    ));
    // Unrelated struct.
    assert!(!is_candidate_lock(
        &field(&[(t, 8)]),
        &LockId::Field(field(&[(u, 0)]))
    ));
    // Globals have no chain to share.
    assert!(!is_candidate_lock(
        &field(&[(t, 8)]),
        &LockId::Global("g".into())
    ));
}

#[test]
fn long_chain_accesses_count_toward_suffix_rules_but_not_back() {
    let m = parsed(
        "
type t size 16 {
  field 0 4 lock;
  field 4 4 scalar;
}
type p size 32 {
  field 16 8 ref t;
}
func outer_path(%o: p) {
block entry:
  %tp = addr %o : p [16]
  %q = load %tp
  %l = addr %q : t [0]
  acquire %l
  %d = addr %q : t [4]
  store 1, %d
  release %l
  ret
}
func direct_path(%q: t) {
block entry:
  %d = addr %q : t [4]
  store 2, %d
  ret
}
",
    );
    let (sites, rules) = pipeline(&m, &LockConfig::default());
    // The locked store through p tallies into the rules for both its full
    // chain and the chain-implied field (t, 4); the direct unlocked store
    // tallies only into the (t, 4) rules, never into the longer chain.
    let expect: BTreeMap<RuleKey, Tally> = [
        (
            key(&m, &[("p", 16), ("t", 4)], &[("p", 16), ("t", 0)]),
            tally(1, 0, 1, 0),
        ),
        (
            key(&m, &[("p", 16), ("t", 4)], &[("t", 0)]),
            tally(1, 0, 1, 0),
        ),
        (
            key(&m, &[("t", 4)], &[("p", 16), ("t", 0)]),
            tally(1, 1, 1, 1),
        ),
        (key(&m, &[("t", 4)], &[("t", 0)]), tally(1, 1, 1, 1)),
    ]
    .into();
    assert_eq!(rules.rules, expect);

    // At 1/2 exactly the direct store violates, once per (t, 4) rule.
    let v = detect_violations(&rules, &sites.sites, rat(1, 2), TallyMode::Weighted);
    let got: BTreeSet<(RuleKey, usize)> =
        v.iter().map(|v| (v.rule.clone(), v.site)).collect();
    let direct = sites.sites.len() - 1;
    let want: BTreeSet<(RuleKey, usize)> = [
        (
            key(&m, &[("t", 4)], &[("p", 16), ("t", 0)]),
            direct,
        ),
        (key(&m, &[("t", 4)], &[("t", 0)]), direct),
    ]
    .into();
    assert_eq!(got, want);
}

#[test]
fn type_only_accesses_tally_but_never_violate() {
    let m = parsed(
        "
type t size 16 {
  field 0 4 lock;
  field 8 8 scalar;
}
func locked2(%o: t) {
block entry:
  %l = addr %o : t [0]
  acquire %l
  %d = addr %o : t [8]
  store 1, %d
  store 2, %d
  release %l
  ret
}
func hazy(%raw: scalar, %o: t) {
block entry:
  %v = load %raw !type t
  %d = addr %o : t [8]
  store %v, %d
  ret
}
func hazy_locked(%raw: scalar, %o: t) {
block entry:
  %l = addr %o : t [0]
  acquire %l
  %v = load %raw !type t
  release %l
  ret
}
",
    );
    let (sites, rules) = pipeline(&m, &LockConfig::default());
    // Two locked stores, one locked type-only read, one unlocked full
    // store, one unlocked type-only read.
    let expect: BTreeMap<RuleKey, Tally> =
        [(key(&m, &[("t", 8)], &[("t", 0)]), tally(3, 2, 3, 2))].into();
    assert_eq!(rules.rules, expect);

    // Only the full-chain unlocked store is reportable; the type-only
    // access cannot name the field it violated.
    let v = detect_violations(&rules, &sites.sites, rat(2, 5), TallyMode::Weighted);
    assert_eq!(
        v,
        vec![Violation {
            rule: key(&m, &[("t", 8)], &[("t", 0)]),
            site: 3,
            fraction: rat(2, 5),
            suppressed_by: BTreeSet::new(),
        }]
    );
    assert!(matches!(sites.sites[3].field, AccessField::Chain(_)));
}

// ---------------------------------------------------------------------
// Thresholds and fractions.
// ---------------------------------------------------------------------

#[test]
fn threshold_comparison_is_inclusive_at_the_boundary() {
    let m = parsed(
        "
type t size 16 {
  field 0 4 lock;
  field 8 8 scalar;
}
func f(%o: t) {
block entry:
  %l = addr %o : t [0]
  %d = addr %o : t [8]
  acquire %l
  store 1, %d
  store 2, %d
  store 3, %d
  store 4, %d
  store 5, %d
  release %l
  store 6, %d
  ret
}
",
    );
    let (sites, rules) = pipeline(&m, &LockConfig::default());
    let t = rules.rules.values().next().unwrap();
    assert_eq!(t.fraction(TallyMode::Weighted), rat(1, 6));
    // Detected at exactly its own fraction, missed just below it.
    let at = |th: Rat| detect_violations(&rules, &sites.sites, th, TallyMode::Weighted).len();
    assert_eq!(at(rat(1, 6)), 1);
    assert_eq!(at(rat(1666, 10000)), 0);
    assert_eq!(at(rat(1667, 10000)), 1);
}

#[test]
fn an_even_split_needs_a_half_threshold() {
    let m = parsed(
        "
type t size 16 {
  field 0 4 lock;
  field 8 8 scalar;
}
func f(%o: t) {
block entry:
  %l = addr %o : t [0]
  %d = addr %o : t [8]
  acquire %l
  store 1, %d
  release %l
  store 2, %d
  ret
}
",
    );
    let (sites, rules) = pipeline(&m, &LockConfig::default());
    assert_eq!(
        rules.rules.values().next().unwrap().fraction(TallyMode::Weighted),
        rat(1, 2)
    );
    let at = |th: Rat| detect_violations(&rules, &sites.sites, th, TallyMode::Weighted).len();
    assert_eq!(at(rat(1, 6)), 0);
    assert_eq!(at(rat(1, 2)), 1);
}

#[test]
fn fractions_are_exact_rationals() {
    assert_eq!(tally(18, 1, 18, 1).fraction(TallyMode::Weighted), rat(1, 19));
    assert_eq!(tally(13, 7, 13, 7).fraction(TallyMode::Weighted), rat(7, 20));
    assert_eq!(tally(5, 1, 5, 1).fraction(TallyMode::Weighted), rat(1, 6));
    assert_eq!(tally(9, 0, 9, 0).fraction(TallyMode::Weighted), rat(0, 1));
    // The two modes diverge once weights do.
    let t = tally(2, 1, 2, 3);
    assert_eq!(t.fraction(TallyMode::Weighted), rat(3, 5));
    assert_eq!(t.fraction(TallyMode::Raw), rat(1, 3));
}

#[test]
fn use_count_weighting_can_flip_a_report() {
    let m = parsed(
        "
type t size 16 {
  field 0 4 lock;
  field 8 8 scalar;
}
func f(%o: t) {
block entry:
  %l = addr %o : t [0]
  %d = addr %o : t [8]
  acquire %l
  store 1, %d
  store 2, %d
  release %l
  %v = load %d
  %a = cmp eq %v, 0
  %b = cmp ne %v, 1
  %c = select %a, %v, %b
  ret
}
",
    );
    let (sites, rules) = pipeline(&m, &LockConfig::default());
    let expect: BTreeMap<RuleKey, Tally> =
        [(key(&m, &[("t", 8)], &[("t", 0)]), tally(2, 1, 2, 3))].into();
    assert_eq!(rules.rules, expect);
    // The unlocked load's value is used three times, so by weight it is
    // 3 of 5 observations — too common to be an outlier — while by raw
    // count it is 1 of 3.
    let v = detect_violations(&rules, &sites.sites, rat(1, 2), TallyMode::Weighted);
    assert!(v.is_empty());
    let v = detect_violations(&rules, &sites.sites, rat(1, 2), TallyMode::Raw);
    assert_eq!(v.len(), 1);
}

// ---------------------------------------------------------------------
// Site collection.
// ---------------------------------------------------------------------

#[test]
fn unreachable_accesses_are_skipped() {
    let m = parsed(
        "
type t size 16 {
  field 0 4 lock;
  field 8 8 scalar;
}
func f(%o: t) {
block entry:
  %l = addr %o : t [0]
  %d = addr %o : t [8]
  acquire %l
  store 1, %d
  ret
block dead:
  %d2 = addr %o : t [8]
  store 2, %d2
  ret
}
",
    );
    let cov = coverage(&m, &LockConfig::default());
    let sids = StructuralTypeIds::compute(&m.types);
    let sites = collect_access_sites(&m, &sids, &cov);
    // The dead store has no lock fact: it is no evidence either way.
    assert_eq!(sites.sites.len(), 1);
    assert_eq!(sites.skipped_unreachable, 1);
    let rules = infer_rules(&sites.sites, &BTreeSet::new(), &lock_typed_fields(&m, &sids));
    let expect: BTreeMap<RuleKey, Tally> =
        [(key(&m, &[("t", 8)], &[("t", 0)]), tally(1, 0, 1, 0))].into();
    assert_eq!(rules.rules, expect);
}

// ---------------------------------------------------------------------
// Properties on generated modules.
// ---------------------------------------------------------------------

/// Reference recount: re-derive the rule set and tallies with plain
/// quadratic loops and slice suffix tests, independent of the indexed
/// bookkeeping in `infer_rules`.
fn naive_rules(
    sites: &[AccessSite],
    excluded: &BTreeSet<usize>,
    lock_fields: &BTreeSet<(StructuralTypeId, u64)>,
) -> BTreeMap<RuleKey, Tally> {
    let ends_with = |c1: &CanonChain, c2: &CanonChain| {
        c1.0.len() >= c2.0.len() && c1.0[c1.0.len() - c2.0.len()..] == c2.0[..]
    };
    let mut keys: BTreeSet<RuleKey> = BTreeSet::new();
    for (i, s) in sites.iter().enumerate() {
        if excluded.contains(&i) {
            continue;
        }
        let AccessField::Chain(c) = &s.field else {
            continue;
        };
        for start in 0..c.0.len() {
            let f = CanonChain(c.0[start..].to_vec());
            if lock_fields.contains(f.0.last().unwrap()) {
                continue;
            }
            for lock in s.locks.keys() {
                let LockId::Field(lc) = lock else { continue };
                if f.0.iter().any(|(a, _)| lc.0.iter().any(|(b, _)| a == b)) {
                    keys.insert(RuleKey {
                        field: f.clone(),
                        lock: lock.clone(),
                    });
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for k in keys {
        let mut t = Tally::default();
        for (i, s) in sites.iter().enumerate() {
            if excluded.contains(&i) {
                continue;
            }
            let touches = match &s.field {
                AccessField::Chain(c) => ends_with(c, &k.field),
                AccessField::TypeOnly(tid) => *tid == k.field.0.last().unwrap().0,
            };
            if !touches {
                continue;
            }
            if s.locks.contains_key(&k.lock) {
                t.locked_count += 1;
                t.locked_weight += s.access.weight;
            } else {
                t.unlocked_count += 1;
                t.unlocked_weight += s.access.weight;
            }
        }
        out.insert(k, t);
    }
    out
}

#[test]
fn inference_matches_a_naive_recount() {
    let mut r = rng(0x0ca7_0001);
    let config = ext_config();
    for case in 0..60 {
        let m = gen_module(&mut r, &GenOptions::default());
        let cov = coverage(&m, &config);
        let sids = StructuralTypeIds::compute(&m.types);
        let sites = collect_access_sites(&m, &sids, &cov);
        let lf = lock_typed_fields(&m, &sids);
        let rules = infer_rules(&sites.sites, &BTreeSet::new(), &lf);
        assert_eq!(
            rules.rules,
            naive_rules(&sites.sites, &BTreeSet::new(), &lf),
            "case {case}"
        );
    }
}

#[test]
fn lower_thresholds_report_a_subset() {
    let ladder = [
        rat(0, 1),
        rat(1, 10),
        rat(1, 6),
        rat(1, 5),
        rat(1, 4),
        rat(1, 3),
        rat(1, 2),
        rat(2, 3),
        rat(1, 1),
    ];
    let mut r = rng(0x0ca7_0002);
    let config = ext_config();
    for case in 0..40 {
        let m = gen_module(&mut r, &GenOptions::default());
        let (sites, rules) = pipeline(&m, &config);
        let sets: Vec<BTreeSet<(RuleKey, usize)>> = ladder
            .iter()
            .map(|&th| {
                detect_violations(&rules, &sites.sites, th, TallyMode::Weighted)
                    .into_iter()
                    .map(|v| (v.rule, v.site))
                    .collect()
            })
            .collect();
        for w in sets.windows(2) {
            assert!(w[0].is_subset(&w[1]), "case {case}");
        }
    }
}

#[test]
fn dropping_one_site_never_raises_any_tally() {
    let mut r = rng(0x0ca7_0003);
    let config = ext_config();
    for case in 0..25 {
        let m = gen_module(&mut r, &GenOptions::default());
        let cov = coverage(&m, &config);
        let sids = StructuralTypeIds::compute(&m.types);
        let sites = collect_access_sites(&m, &sids, &cov);
        let lf = lock_typed_fields(&m, &sids);
        let base = infer_rules(&sites.sites, &BTreeSet::new(), &lf);
        for i in 0..sites.sites.len().min(12) {
            let excluded: BTreeSet<usize> = [i].into();
            let pruned = infer_rules(&sites.sites, &excluded, &lf);
            for (k, t) in &pruned.rules {
                let b = base.rules.get(k).unwrap_or_else(|| {
                    panic!("case {case}: pruning created rule {k:?}")
                });
                assert!(t.locked_count <= b.locked_count, "case {case}");
                assert!(t.unlocked_count <= b.unlocked_count, "case {case}");
                assert!(t.locked_weight <= b.locked_weight, "case {case}");
                assert!(t.unlocked_weight <= b.unlocked_weight, "case {case}");
            }
        }
    }
}

#[test]
fn violations_always_lack_the_rules_lock() {
    let mut r = rng(0x0ca7_0004);
    let config = ext_config();
    for case in 0..40 {
        let m = gen_module(&mut r, &GenOptions::default());
        let (sites, rules) = pipeline(&m, &config);
        for v in detect_violations(&rules, &sites.sites, rat(1, 2), TallyMode::Weighted) {
            let site = &sites.sites[v.site];
            assert!(
                !site.locks.contains_key(&v.rule.lock),
                "case {case}: violation under its own lock"
            );
            assert_eq!(
                v.fraction,
                rules.rules[&v.rule].fraction(TallyMode::Weighted),
                "case {case}"
            );
            assert!(v.fraction <= rat(1, 2), "case {case}");
            assert!(v.suppressed_by.is_empty(), "case {case}");
        }
    }
}
