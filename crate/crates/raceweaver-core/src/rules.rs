//! Locking-rule inference and outlier violation detection.
//!
//! A rule pairs a field (a canonical chain) with a lock observed held at
//! accesses to that field. Rules are born in a discovery pass — one per
//! (field, candidate lock) pair seen together — then every access to the
//! field counts toward the rule's locked or unlocked tally. A rule whose
//! unlocked share is at or below the configured threshold is treated as
//! real, and each access missing its lock becomes a violation.
//!
//! Candidate locks must share an aggregate type with the field's chain
//! (same struct or a common ancestor struct); locks with no chain (module
//! globals) therefore never form rules. Fields that are themselves locks
//! never become rule targets. An access to a long chain counts as an
//! access to every suffix of that chain, mirroring how lock coverage
//! treats acquired chains.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use num_traits::Zero;

use crate::fields::{
    canon_steps, extract_function_accesses, CanonChain, ExtractDiagnostics, FieldAccess,
    FieldChain,
};
use crate::ir::*;
use crate::locks::{LockCoverage, LockId, LockSet};
use crate::structural::{StructuralTypeId, StructuralTypeIds};
use crate::Rat;

/// Field identity an access contributes to: a full canonical chain, or —
/// for the annotation fallback — only the containing type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum AccessField {
    Chain(CanonChain),
    TypeOnly(StructuralTypeId),
}

/// One field access joined with the definite lockset in force there.
#[derive(Debug, Clone)]
pub struct AccessSite {
    pub access: FieldAccess,
    pub field: AccessField,
    pub locks: LockSet,
}

/// Every access site of a module, in function/instruction order.
#[derive(Debug, Default)]
pub struct AccessSites {
    pub sites: Vec<AccessSite>,
    /// Extraction diagnostics merged over all functions.
    pub extract_diags: ExtractDiagnostics,
    /// Accesses dropped because the coverage pass never reached their
    /// instruction; nothing definite is known there, so they are not
    /// evidence for or against any rule.
    pub skipped_unreachable: u64,
}

/// Extract all field accesses and pair each with its lockset.
pub fn collect_access_sites(
    m: &Module,
    sids: &StructuralTypeIds,
    cov: &LockCoverage,
) -> AccessSites {
    let mut out = AccessSites::default();
    for f in &m.funcs {
        let fa = extract_function_accesses(m, f);
        out.extract_diags.merge(&fa.diags);
        for access in fa.accesses {
            let Some(locks) = cov.facts.get(&access.instr) else {
                out.skipped_unreachable += 1;
                continue;
            };
            let field = match &access.chain {
                FieldChain::Path(steps) => AccessField::Chain(canon_steps(sids, steps)),
                FieldChain::Partial(t) => AccessField::TypeOnly(sids.id(*t)),
            };
            out.sites.push(AccessSite {
                field,
                locks: locks.clone(),
                access,
            });
        }
    }
    out
}

/// Canonical (containing type, offset) pairs whose field is itself a lock:
/// an embedded lock slot, a lock-typed struct, or a pointer to one. Rules
/// never target these fields.
pub fn lock_typed_fields(
    m: &Module,
    sids: &StructuralTypeIds,
) -> BTreeSet<(StructuralTypeId, u64)> {
    let mut out = BTreeSet::new();
    for (i, t) in m.types.types.iter().enumerate() {
        let sid = sids.id(TypeId(i as u32));
        for fd in &t.fields {
            let locky = match fd.elem {
                ElemType::Lock => true,
                ElemType::Struct(u) | ElemType::Ref(u) => m.types.is_lock_type(u),
                ElemType::Scalar => false,
            };
            if locky {
                out.insert((sid, fd.offset));
            }
        }
    }
    out
}

/// Whether `lock` can plausibly protect `field`: the lock's chain must
/// share at least one aggregate type with the field's chain (same struct,
/// or a common ancestor struct). Global locks have no chain and are never
/// candidates.
pub fn is_candidate_lock(field: &CanonChain, lock: &LockId) -> bool {
    let LockId::Field(lc) = lock else {
        return false;
    };
    field
        .0
        .iter()
        .any(|(t, _)| lc.0.iter().any(|(u, _)| t == u))
}

/// Identity of a rule: a field and a lock that may protect it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RuleKey {
    pub field: CanonChain,
    pub lock: LockId,
}

/// Locked/unlocked observations for one rule, kept both as raw access
/// counts and weighted by each access's use count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub locked_count: u64,
    pub unlocked_count: u64,
    pub locked_weight: u64,
    pub unlocked_weight: u64,
}

/// Which counts back fractions: use-count weighted (the default) or raw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TallyMode {
    Weighted,
    Raw,
}

impl Tally {
    /// Share of observations made without the lock, exact. This is also
    /// the smallest threshold at which the rule's violations are reported.
    pub fn fraction(&self, mode: TallyMode) -> Rat {
        let (locked, unlocked) = match mode {
            TallyMode::Weighted => (self.locked_weight, self.unlocked_weight),
            TallyMode::Raw => (self.locked_count, self.unlocked_count),
        };
        let total = locked + unlocked;
        if total == 0 {
            return Rat::zero();
        }
        Rat::new(unlocked as i128, total as i128)
    }
}

/// The inferred rule set with tallies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Rules {
    pub rules: BTreeMap<RuleKey, Tally>,
}

/// All suffixes of `c`, longest first; an access to a chain is an access
/// to each of its suffixes.
fn suffixes(c: &CanonChain) -> impl Iterator<Item = CanonChain> + '_ {
    (0..c.0.len()).map(move |i| CanonChain(c.0[i..].to_vec()))
}

/// Infer rules from access sites and fill in their tallies. Sites whose
/// index is in `excluded` contribute nothing (the init/teardown heuristic
/// removes tainted sites from the arithmetic this way). `lock_fields`
/// names the fields that are themselves locks (see [`lock_typed_fields`]).
pub fn infer_rules(
    sites: &[AccessSite],
    excluded: &BTreeSet<usize>,
    lock_fields: &BTreeSet<(StructuralTypeId, u64)>,
) -> Rules {
    // Discovery: a rule exists once some access to its field happened
    // under a candidate lock. Every suffix of a held lock chain is itself
    // in the lockset, so candidate pairing sees implied locks directly.
    let mut found: BTreeSet<RuleKey> = BTreeSet::new();
    for (i, site) in sites.iter().enumerate() {
        if excluded.contains(&i) {
            continue;
        }
        let AccessField::Chain(chain) = &site.field else {
            continue;
        };
        if lock_fields.contains(chain.0.last().expect("chains are non-empty")) {
            continue;
        }
        for field in suffixes(chain) {
            for lock in site.locks.keys() {
                if is_candidate_lock(&field, lock) {
                    found.insert(RuleKey {
                        field: field.clone(),
                        lock: lock.clone(),
                    });
                }
            }
        }
    }

    // Tallying: every access to a rule's field counts, locked or not.
    // Full chains match rules on any suffix; type-only accesses match
    // every rule on a field of that type, since the exact field is
    // unknown but some field of the type was certainly touched.
    let keys: Vec<RuleKey> = found.into_iter().collect();
    let mut tallies = alloc::vec![Tally::default(); keys.len()];
    let mut by_field: BTreeMap<CanonChain, Vec<usize>> = BTreeMap::new();
    let mut by_terminal: BTreeMap<StructuralTypeId, Vec<usize>> = BTreeMap::new();
    for (k, key) in keys.iter().enumerate() {
        by_field.entry(key.field.clone()).or_default().push(k);
        let (t, _) = *key.field.0.last().expect("rule fields are full chains");
        by_terminal.entry(t).or_default().push(k);
    }

    for (i, site) in sites.iter().enumerate() {
        if excluded.contains(&i) {
            continue;
        }
        let matched: Vec<usize> = match &site.field {
            AccessField::Chain(c) => suffixes(c)
                .filter_map(|s| by_field.get(&s))
                .flatten()
                .copied()
                .collect(),
            AccessField::TypeOnly(t) => by_terminal.get(t).into_iter().flatten().copied().collect(),
        };
        for k in matched {
            let t = &mut tallies[k];
            if site.locks.contains_key(&keys[k].lock) {
                t.locked_count += 1;
                t.locked_weight += site.access.weight;
            } else {
                t.unlocked_count += 1;
                t.unlocked_weight += site.access.weight;
            }
        }
    }

    Rules {
        rules: keys.into_iter().zip(tallies).collect(),
    }
}

/// Why a violation is withheld from the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suppression {
    /// Locked accesses are more "direct" than unlocked ones in context.
    Context,
    /// The object is still being initialized or torn down.
    InitCleanup,
    /// An unlocked check whose result is re-checked under the lock.
    Recheck,
    /// The whole function runs effectively lock-free.
    SafeFn,
    /// The rule's field is never written under the lock and never escapes.
    WriteEscape,
}

/// One access that lacks a lock its field's rule demands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: RuleKey,
    /// Index of the offending access into the site list.
    pub site: usize,
    /// The rule's unlocked fraction when the violation was detected.
    pub fraction: Rat,
    /// Filled by the context and heuristic passes; a violation is
    /// reported only while this stays empty.
    pub suppressed_by: BTreeSet<Suppression>,
}

/// Find every access that misses a rule's lock, for rules whose unlocked
/// fraction is at or below `threshold` (inclusive: a rule with 5 locked
/// and 1 unlocked observations is detected at exactly 1/6). Type-only
/// accesses never produce violations — their exact field is unknown.
pub fn detect_violations(
    rules: &Rules,
    sites: &[AccessSite],
    threshold: Rat,
    mode: TallyMode,
) -> Vec<Violation> {
    debug_assert!(
        threshold >= Rat::zero() && threshold <= Rat::new(1, 1),
        "threshold is validated by the caller"
    );
    let mut by_field: BTreeMap<&CanonChain, Vec<(&RuleKey, &Tally)>> = BTreeMap::new();
    for (k, t) in &rules.rules {
        by_field.entry(&k.field).or_default().push((k, t));
    }

    let mut out = Vec::new();
    for (i, site) in sites.iter().enumerate() {
        let AccessField::Chain(chain) = &site.field else {
            continue;
        };
        for s in suffixes(chain) {
            let Some(matching) = by_field.get(&s) else {
                continue;
            };
            for (key, tally) in matching {
                if site.locks.contains_key(&key.lock) {
                    continue;
                }
                let fraction = tally.fraction(mode);
                if fraction <= threshold {
                    out.push(Violation {
                        rule: (*key).clone(),
                        site: i,
                        fraction,
                        suppressed_by: BTreeSet::new(),
                    });
                }
            }
        }
    }
    out
}
