//! Usage-policy model: temporal retention and purpose obligations, a
//! purpose taxonomy with subsumption, canonical byte serialization (the form
//! hashed and stored on chain), and the pure evaluation functions shared by
//! the market contract and the trusted sandboxes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Reserved taxonomy root. Granting exactly this purpose withdraws every
/// purpose-based grant on a resource; applications never declare it.
pub const REVOKED_PURPOSE: &str = "revoked";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("purpose token must be non-empty [a-z0-9-]+: {0:?}")]
    BadPurpose(String),
    #[error("policy id must be non-empty [A-Za-z0-9._:/#-]+: {0:?}")]
    BadPolicyId(String),
    #[error("policy version must be at least 1")]
    BadVersion,
    #[error("temporal retention duration must be positive")]
    ZeroDuration,
    #[error("purpose restriction allowed-set must be non-empty")]
    EmptyAllowedSet,
    #[error("at most one temporal retention obligation per policy")]
    DuplicateRetention,
    #[error("purpose not in taxonomy: {0}")]
    UnknownPurpose(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("line {line}: expected \"parent child\", \"alias child satisfies\", or a bare node")]
    BadLine { line: usize },
    #[error("line {line}: {source}")]
    BadToken { line: usize, source: PolicyError },
    #[error("node {0} has more than one parent")]
    MultipleParents(String),
    #[error("subsumption cycle through {0}")]
    Cycle(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyParseError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("input is not in canonical form")]
    NotCanonical,
    #[error(transparent)]
    Validation(#[from] PolicyError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyDiffError {
    #[error("policy ids differ: {old} vs {new}")]
    IdMismatch { old: String, new: String },
    #[error("new version {new} does not exceed old version {old}")]
    VersionNotIncreasing { old: u64, new: u64 },
}

/// Purpose token: lowercase, dot-free, e.g. `medical`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Purpose(String);

impl Purpose {
    pub fn new(token: impl Into<String>) -> Result<Self, PolicyError> {
        let token = token.into();
        let ok = !token.is_empty()
            && token
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-');
        if ok {
            Ok(Purpose(token))
        } else {
            Err(PolicyError::BadPurpose(token))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Purpose({})", self.0)
    }
}

impl Serialize for Purpose {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Purpose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Purpose::new(s).map_err(de::Error::custom)
    }
}

/// A single usage obligation attached to a policy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Obligation {
    /// Delete the resource copy this many seconds after acquisition.
    TemporalRetention { max_storage_duration: u64 },
    /// Only uses whose declared purpose is subsumed by one of the allowed
    /// purposes are permitted.
    PurposeRestriction { allowed: BTreeSet<Purpose> },
}

impl Obligation {
    pub fn retention(seconds: u64) -> Self {
        Obligation::TemporalRetention {
            max_storage_duration: seconds,
        }
    }

    pub fn purposes<I: IntoIterator<Item = Purpose>>(allowed: I) -> Self {
        Obligation::PurposeRestriction {
            allowed: allowed.into_iter().collect(),
        }
    }

    fn validate(&self) -> Result<(), PolicyError> {
        match self {
            Obligation::TemporalRetention {
                max_storage_duration,
            } => {
                if *max_storage_duration == 0 {
                    return Err(PolicyError::ZeroDuration);
                }
            }
            Obligation::PurposeRestriction { allowed } => {
                if allowed.is_empty() {
                    return Err(PolicyError::EmptyAllowedSet);
                }
            }
        }
        Ok(())
    }

    // Canonical sort key: variant name first, then the wire payload.
    fn sort_key(&self) -> (u8, Vec<u8>) {
        let rank = match self {
            Obligation::PurposeRestriction { .. } => 0,
            Obligation::TemporalRetention { .. } => 1,
        };
        let payload = serde_json::to_vec(&ObligationWire::from(self)).expect("obligation encodes");
        (rank, payload)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
enum ObligationWire {
    PurposeRestriction { allowed: Vec<Purpose> },
    TemporalRetention { max_storage_duration: u64 },
}

impl From<&Obligation> for ObligationWire {
    fn from(o: &Obligation) -> Self {
        match o {
            Obligation::PurposeRestriction { allowed } => ObligationWire::PurposeRestriction {
                allowed: allowed.iter().cloned().collect(),
            },
            Obligation::TemporalRetention {
                max_storage_duration,
            } => ObligationWire::TemporalRetention {
                max_storage_duration: *max_storage_duration,
            },
        }
    }
}

impl From<ObligationWire> for Obligation {
    fn from(w: ObligationWire) -> Self {
        match w {
            ObligationWire::PurposeRestriction { allowed } => Obligation::PurposeRestriction {
                allowed: allowed.into_iter().collect(),
            },
            ObligationWire::TemporalRetention {
                max_storage_duration,
            } => Obligation::TemporalRetention {
                max_storage_duration,
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyWire {
    policy_id: String,
    version: u64,
    obligations: Vec<ObligationWire>,
}

/// Versioned set of obligations attached to a resource or pod. Obligations
/// are kept in canonical order so structurally equal policies always
/// serialize to identical bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct UsagePolicy {
    policy_id: String,
    version: u64,
    obligations: Vec<Obligation>,
}

fn valid_policy_id(id: &str) -> bool {
    !id.is_empty()
        && id.bytes().all(|b| {
            b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b':' | b'/' | b'#' | b'-')
        })
}

impl UsagePolicy {
    pub fn new(
        policy_id: impl Into<String>,
        version: u64,
        obligations: Vec<Obligation>,
    ) -> Result<Self, PolicyError> {
        let policy_id = policy_id.into();
        if !valid_policy_id(&policy_id) {
            return Err(PolicyError::BadPolicyId(policy_id));
        }
        if version == 0 {
            return Err(PolicyError::BadVersion);
        }
        let mut retention_seen = false;
        for ob in &obligations {
            ob.validate()?;
            if matches!(ob, Obligation::TemporalRetention { .. }) {
                if retention_seen {
                    return Err(PolicyError::DuplicateRetention);
                }
                retention_seen = true;
            }
        }
        let mut obligations = obligations;
        obligations.sort_by_key(Obligation::sort_key);
        Ok(UsagePolicy {
            policy_id,
            version,
            obligations,
        })
    }

    pub fn policy_id(&self) -> &str {
        &self.policy_id
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn obligations(&self) -> &[Obligation] {
        &self.obligations
    }

    /// Retention duration in seconds, if a temporal obligation is present.
    pub fn retention(&self) -> Option<u64> {
        self.obligations.iter().find_map(|o| match o {
            Obligation::TemporalRetention {
                max_storage_duration,
            } => Some(*max_storage_duration),
            _ => None,
        })
    }

    pub fn purpose_restrictions(&self) -> impl Iterator<Item = &BTreeSet<Purpose>> {
        self.obligations.iter().filter_map(|o| match o {
            Obligation::PurposeRestriction { allowed } => Some(allowed),
            _ => None,
        })
    }

    /// Same policy id, version bumped by one, obligations replaced.
    pub fn next_version(&self, obligations: Vec<Obligation>) -> Result<Self, PolicyError> {
        UsagePolicy::new(self.policy_id.clone(), self.version + 1, obligations)
    }
}

impl fmt::Debug for UsagePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "UsagePolicy({} v{} {:?})",
            self.policy_id, self.version, self.obligations
        )
    }
}

impl Serialize for UsagePolicy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let wire = PolicyWire {
            policy_id: self.policy_id.clone(),
            version: self.version,
            obligations: self.obligations.iter().map(ObligationWire::from).collect(),
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for UsagePolicy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = PolicyWire::deserialize(deserializer)?;
        UsagePolicy::new(
            wire.policy_id,
            wire.version,
            wire.obligations.into_iter().map(Obligation::from).collect(),
        )
        .map_err(de::Error::custom)
    }
}

/// Canonical UTF-8 serialization: fixed field order, no insignificant
/// whitespace, obligations sorted by variant then payload. Equal policies
/// yield byte-identical output, which is what the chain hashes.
pub fn serialize_policy(policy: &UsagePolicy) -> Vec<u8> {
    serde_json::to_vec(policy).expect("policy encodes")
}

/// Parses a canonical policy. Rejects syntactically malformed input with a
/// position, invariant violations, and non-canonical (but parseable) input.
pub fn parse_policy(bytes: &[u8]) -> Result<UsagePolicy, PolicyParseError> {
    let wire: PolicyWire = serde_json::from_slice(bytes).map_err(|e| PolicyParseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let policy = UsagePolicy::new(
        wire.policy_id,
        wire.version,
        wire.obligations.into_iter().map(Obligation::from).collect(),
    )?;
    if serialize_policy(&policy) != bytes {
        return Err(PolicyParseError::NotCanonical);
    }
    Ok(policy)
}

/// Purpose taxonomy: a rooted forest (every node has at most one parent)
/// plus alias edges. A purpose `a` is subsumed by `b` when `b` is reachable
/// from `a` by walking parent or alias edges, or when `a == b`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PurposeTaxonomy {
    nodes: BTreeSet<Purpose>,
    parent: BTreeMap<Purpose, Purpose>,
    aliases: BTreeMap<Purpose, BTreeSet<Purpose>>,
}

impl PurposeTaxonomy {
    /// Parses the taxonomy file format: one `parent child` pair per line,
    /// `alias child satisfies` lines, bare tokens declaring standalone
    /// nodes, `#` comments, and blank lines.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut tx = PurposeTaxonomy::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let parse = |t: &str| {
                Purpose::new(t).map_err(|source| TaxonomyError::BadToken {
                    line: line_no,
                    source,
                })
            };
            match tokens.as_slice() {
                ["alias", child, satisfies] => {
                    tx.add_alias(parse(child)?, parse(satisfies)?);
                }
                [node] => {
                    let node = parse(node)?;
                    tx.nodes.insert(node);
                }
                [parent, child] if *parent != "alias" => {
                    tx.add_edge(parse(parent)?, parse(child)?)?;
                }
                _ => return Err(TaxonomyError::BadLine { line: line_no }),
            }
        }
        tx.check_acyclic()?;
        Ok(tx)
    }

    /// The taxonomy shipped with the simulator.
    pub fn default_market() -> Self {
        PurposeTaxonomy::parse(include_str!("../data/taxonomy.txt"))
            .expect("bundled taxonomy is valid")
    }

    fn add_edge(&mut self, parent: Purpose, child: Purpose) -> Result<(), TaxonomyError> {
        if let Some(existing) = self.parent.get(&child) {
            if *existing != parent {
                return Err(TaxonomyError::MultipleParents(child.as_str().to_owned()));
            }
        }
        self.nodes.insert(parent.clone());
        self.nodes.insert(child.clone());
        self.parent.insert(child, parent);
        Ok(())
    }

    fn add_alias(&mut self, child: Purpose, satisfies: Purpose) {
        self.nodes.insert(child.clone());
        self.nodes.insert(satisfies.clone());
        self.aliases.entry(child).or_default().insert(satisfies);
    }

    fn outgoing(&self, p: &Purpose) -> Vec<Purpose> {
        let mut out = Vec::new();
        if let Some(parent) = self.parent.get(p) {
            out.push(parent.clone());
        }
        if let Some(targets) = self.aliases.get(p) {
            out.extend(targets.iter().cloned());
        }
        out
    }

    fn check_acyclic(&self) -> Result<(), TaxonomyError> {
        // DFS over the union of parent and alias edges.
        for start in &self.nodes {
            let mut stack = vec![start.clone()];
            let mut seen = BTreeSet::new();
            while let Some(node) = stack.pop() {
                for next in self.outgoing(&node) {
                    if next == *start {
                        return Err(TaxonomyError::Cycle(start.as_str().to_owned()));
                    }
                    if seen.insert(next.clone()) {
                        stack.push(next);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Purpose) -> bool {
        self.nodes.contains(p)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Purpose> {
        self.nodes.iter()
    }

    /// All purposes that `p` satisfies, including itself.
    pub fn satisfied_by(&self, p: &Purpose) -> BTreeSet<Purpose> {
        let mut closure = BTreeSet::new();
        let mut stack = vec![p.clone()];
        while let Some(node) = stack.pop() {
            if closure.insert(node.clone()) {
                stack.extend(self.outgoing(&node));
            }
        }
        closure
    }

    /// True when `declared` is subsumed by `ancestor` (equal, or `ancestor`
    /// reachable upward from `declared`).
    pub fn subsumes(&self, declared: &Purpose, ancestor: &Purpose) -> bool {
        declared == ancestor || self.satisfied_by(declared).contains(ancestor)
    }
}

/// Outcome of a purpose check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

/// Allow iff the policy has no purpose restriction, or `declared` is
/// subsumed by at least one allowed purpose of every restriction.
pub fn check_purpose(
    policy: &UsagePolicy,
    taxonomy: &PurposeTaxonomy,
    declared: &Purpose,
) -> Result<Decision, PolicyError> {
    if !taxonomy.contains(declared) {
        return Err(PolicyError::UnknownPurpose(declared.as_str().to_owned()));
    }
    for allowed in policy.purpose_restrictions() {
        if !allowed.iter().any(|a| taxonomy.subsumes(declared, a)) {
            return Ok(Decision::Deny);
        }
    }
    Ok(Decision::Allow)
}

/// Deadline after which a copy acquired at `acquired_at` must be gone, if
/// the policy carries a temporal retention obligation.
pub fn expiry_at(policy: &UsagePolicy, acquired_at: u64) -> Option<u64> {
    policy.retention().map(|d| acquired_at + d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObligationKind {
    TemporalRetention,
    PurposeRestriction,
}

impl fmt::Display for ObligationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObligationKind::TemporalRetention => f.write_str("temporal-retention"),
            ObligationKind::PurposeRestriction => f.write_str("purpose-restriction"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyChange {
    Added(ObligationKind),
    Removed(ObligationKind),
    Tightened(ObligationKind),
    Relaxed(ObligationKind),
}

/// Classifies the obligation changes between two versions of one policy.
/// A retention change is Tightened when the duration strictly shrinks; a
/// purpose change is Tightened when the new allowed-set is not a superset
/// of the old one.
pub fn diff_policy(
    old: &UsagePolicy,
    new: &UsagePolicy,
) -> Result<Vec<PolicyChange>, PolicyDiffError> {
    if old.policy_id != new.policy_id {
        return Err(PolicyDiffError::IdMismatch {
            old: old.policy_id.clone(),
            new: new.policy_id.clone(),
        });
    }
    if new.version <= old.version {
        return Err(PolicyDiffError::VersionNotIncreasing {
            old: old.version,
            new: new.version,
        });
    }

    let mut changes = Vec::new();

    match (old.retention(), new.retention()) {
        (None, Some(_)) => changes.push(PolicyChange::Added(ObligationKind::TemporalRetention)),
        (Some(_), None) => changes.push(PolicyChange::Removed(ObligationKind::TemporalRetention)),
        (Some(a), Some(b)) if b < a => {
            changes.push(PolicyChange::Tightened(ObligationKind::TemporalRetention))
        }
        (Some(a), Some(b)) if b > a => {
            changes.push(PolicyChange::Relaxed(ObligationKind::TemporalRetention))
        }
        _ => {}
    }

    let old_sets: Vec<&BTreeSet<Purpose>> = old.purpose_restrictions().collect();
    let new_sets: Vec<&BTreeSet<Purpose>> = new.purpose_restrictions().collect();
    let paired = old_sets.len().min(new_sets.len());
    for i in 0..paired {
        let (o, n) = (old_sets[i], new_sets[i]);
        if o == n {
            continue;
        }
        if n.is_superset(o) {
            changes.push(PolicyChange::Relaxed(ObligationKind::PurposeRestriction));
        } else {
            changes.push(PolicyChange::Tightened(ObligationKind::PurposeRestriction));
        }
    }
    for _ in paired..new_sets.len() {
        changes.push(PolicyChange::Added(ObligationKind::PurposeRestriction));
    }
    for _ in paired..old_sets.len() {
        changes.push(PolicyChange::Removed(ObligationKind::PurposeRestriction));
    }

    Ok(changes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn purpose(t: &str) -> Purpose {
        Purpose::new(t).unwrap()
    }

    fn policy_allowing(purposes: &[&str]) -> UsagePolicy {
        UsagePolicy::new(
            "p",
            1,
            vec![Obligation::purposes(
                purposes.iter().map(|p| purpose(p)).collect::<Vec<_>>(),
            )],
        )
        .unwrap()
    }

    #[test]
    fn reflexive_purpose_allows() {
        let tax = PurposeTaxonomy::default_market();
        let p = policy_allowing(&["medical"]);
        assert_eq!(
            check_purpose(&p, &tax, &purpose("medical")).unwrap(),
            Decision::Allow
        );
    }

    #[test]
    fn cross_domain_purpose_survives_both_roots() {
        // medical-research-university-hospital sits under academic in the
        // tree and also satisfies medical via an alias edge.
        let tax = PurposeTaxonomy::default_market();
        let declared = purpose("medical-research-university-hospital");
        assert_eq!(
            check_purpose(&policy_allowing(&["academic"]), &tax, &declared).unwrap(),
            Decision::Allow
        );
        assert_eq!(
            check_purpose(&policy_allowing(&["medical"]), &tax, &declared).unwrap(),
            Decision::Allow
        );
    }

    #[test]
    fn unrelated_purpose_is_denied() {
        let tax = PurposeTaxonomy::default_market();
        // Exhaustive walk: web-analytics reaches only itself and commercial.
        let reach = tax.satisfied_by(&purpose("web-analytics"));
        assert!(!reach.contains(&purpose("medical")));
        assert_eq!(
            check_purpose(
                &policy_allowing(&["medical"]),
                &tax,
                &purpose("web-analytics")
            )
            .unwrap(),
            Decision::Deny
        );
    }

    #[test]
    fn unknown_purpose_errors() {
        let tax = PurposeTaxonomy::default_market();
        let err =
            check_purpose(&policy_allowing(&["medical"]), &tax, &purpose("quantum")).unwrap_err();
        assert_eq!(err, PolicyError::UnknownPurpose("quantum".into()));
    }

    #[test]
    fn no_restriction_allows_everything() {
        let tax = PurposeTaxonomy::default_market();
        let p = UsagePolicy::new("p", 1, vec![]).unwrap();
        assert_eq!(
            check_purpose(&p, &tax, &purpose("advertising")).unwrap(),
            Decision::Allow
        );
    }

    #[test]
    fn expiry_for_thirty_days() {
        let p = UsagePolicy::new("p", 1, vec![Obligation::retention(2_592_000)]).unwrap();
        assert_eq!(expiry_at(&p, 0), Some(2_592_000));
    }

    #[test]
    fn expiry_absent_without_retention() {
        let p = UsagePolicy::new("p", 1, vec![]).unwrap();
        assert_eq!(expiry_at(&p, 0), None);
    }

    #[test]
    fn expiry_one_week_from_day_two() {
        let p = UsagePolicy::new("p", 1, vec![Obligation::retention(604_800)]).unwrap();
        assert_eq!(expiry_at(&p, 172_800), Some(777_600));
    }

    #[test]
    fn canonical_bytes_ignore_construction_order() {
        let a = UsagePolicy::new(
            "p",
            1,
            vec![
                Obligation::retention(100),
                Obligation::purposes(vec![purpose("medical"), purpose("academic")]),
            ],
        )
        .unwrap();
        let b = UsagePolicy::new(
            "p",
            1,
            vec![
                Obligation::purposes(vec![purpose("academic"), purpose("medical")]),
                Obligation::retention(100),
            ],
        )
        .unwrap();
        assert_eq!(serialize_policy(&a), serialize_policy(&b));
    }

    #[test]
    fn missing_version_is_a_parse_error() {
        let err = parse_policy(br#"{"policy_id":"p","obligations":[]}"#).unwrap_err();
        assert!(matches!(err, PolicyParseError::Syntax { .. }));
    }

    #[test]
    fn reordered_fields_are_not_canonical() {
        let err = parse_policy(br#"{"version":1,"policy_id":"p","obligations":[]}"#).unwrap_err();
        assert_eq!(err, PolicyParseError::NotCanonical);
    }

    #[test]
    fn invalid_invariants_are_validation_errors() {
        let err = parse_policy(
            br#"{"policy_id":"p","version":1,"obligations":[{"type":"purpose-restriction","allowed":[]}]}"#,
        )
        .unwrap_err();
        assert_eq!(
            err,
            PolicyParseError::Validation(PolicyError::EmptyAllowedSet)
        );
    }

    #[test]
    fn duplicate_retention_rejected() {
        let err = UsagePolicy::new(
            "p",
            1,
            vec![Obligation::retention(5), Obligation::retention(9)],
        )
        .unwrap_err();
        assert_eq!(err, PolicyError::DuplicateRetention);
    }

    #[test]
    fn diff_detects_tightened_retention() {
        let old = UsagePolicy::new("p", 1, vec![Obligation::retention(2_592_000)]).unwrap();
        let new = old
            .next_version(vec![Obligation::retention(604_800)])
            .unwrap();
        assert_eq!(
            diff_policy(&old, &new).unwrap(),
            vec![PolicyChange::Tightened(ObligationKind::TemporalRetention)]
        );
    }

    #[test]
    fn diff_detects_tightened_purposes() {
        let old = policy_allowing(&["medical"]);
        let new = old
            .next_version(vec![Obligation::purposes(vec![purpose("academic")])])
            .unwrap();
        assert_eq!(
            diff_policy(&old, &new).unwrap(),
            vec![PolicyChange::Tightened(ObligationKind::PurposeRestriction)]
        );
    }

    #[test]
    fn diff_of_identical_obligations_is_empty() {
        let old = policy_allowing(&["medical"]);
        let new = old
            .next_version(vec![Obligation::purposes(vec![purpose("medical")])])
            .unwrap();
        assert_eq!(diff_policy(&old, &new).unwrap(), vec![]);
    }

    #[test]
    fn diff_requires_increasing_versions() {
        let old = policy_allowing(&["medical"]);
        let err = diff_policy(&old, &old).unwrap_err();
        assert_eq!(
            err,
            PolicyDiffError::VersionNotIncreasing { old: 1, new: 1 }
        );
    }

    #[test]
    fn taxonomy_rejects_second_parent() {
        let err = PurposeTaxonomy::parse("a b\nc b\n").unwrap_err();
        assert_eq!(err, TaxonomyError::MultipleParents("b".into()));
    }

    #[test]
    fn taxonomy_rejects_alias_cycle() {
        let err = PurposeTaxonomy::parse("a b\nalias a b\n").unwrap_err();
        assert!(matches!(err, TaxonomyError::Cycle(_)));
    }

    // Random forest of up to 50 nodes where parents always have a smaller
    // index than children, plus upward alias edges. Acyclic by construction.
    fn arb_taxonomy() -> impl Strategy<Value = PurposeTaxonomy> {
        (2usize..=50).prop_flat_map(|n| {
            let parents = proptest::collection::vec(any::<proptest::sample::Index>(), n - 1);
            let aliases = proptest::collection::vec(
                (
                    any::<proptest::sample::Index>(),
                    any::<proptest::sample::Index>(),
                ),
                0..n,
            );
            (parents, aliases).prop_map(move |(parents, aliases)| {
                let name = |i: usize| format!("p{i}");
                let mut text = String::new();
                for (child_off, pick) in parents.iter().enumerate() {
                    let child = child_off + 1;
                    let parent = pick.index(child);
                    text.push_str(&format!("{} {}\n", name(parent), name(child)));
                }
                for (a, b) in &aliases {
                    let from = a.index(n - 1) + 1;
                    let to = b.index(from);
                    text.push_str(&format!("alias {} {}\n", name(from), name(to)));
                }
                text.push_str("p0\n");
                PurposeTaxonomy::parse(&text).expect("generated taxonomy is acyclic")
            })
        })
    }

    proptest! {
        #[test]
        fn subsumption_is_a_partial_order(tax in arb_taxonomy()) {
            let nodes: Vec<Purpose> = tax.nodes().cloned().collect();
            for a in &nodes {
                prop_assert!(tax.subsumes(a, a));
            }
            // Antisymmetry and transitivity via exhaustive closure checks.
            let closures: Vec<BTreeSet<Purpose>> =
                nodes.iter().map(|a| tax.satisfied_by(a)).collect();
            for (i, a) in nodes.iter().enumerate() {
                for (j, b) in nodes.iter().enumerate() {
                    if closures[i].contains(b) && closures[j].contains(a) {
                        prop_assert_eq!(a, b);
                    }
                    if closures[i].contains(b) {
                        prop_assert!(closures[j].is_subset(&closures[i]));
                    }
                }
            }
        }

        #[test]
        fn check_purpose_is_monotone(extra in proptest::collection::btree_set("[a-z]{1,6}", 0..4)) {
            let tax = PurposeTaxonomy::default_market();
            let declared = purpose("web-analytics");
            let base: BTreeSet<Purpose> = [purpose("commercial")].into_iter().collect();
            let mut larger = base.clone();
            for token in extra {
                if let Ok(p) = Purpose::new(token) {
                    larger.insert(p);
                }
            }
            let small =
                UsagePolicy::new("p", 1, vec![Obligation::PurposeRestriction { allowed: base }])
                    .unwrap();
            let big =
                UsagePolicy::new("p", 1, vec![Obligation::PurposeRestriction { allowed: larger }])
                    .unwrap();
            if check_purpose(&small, &tax, &declared).unwrap() == Decision::Allow {
                prop_assert_eq!(check_purpose(&big, &tax, &declared).unwrap(), Decision::Allow);
            }
        }

        #[test]
        fn expiry_is_translation_equivariant(
            duration in 1u64..1_000_000,
            t in 0u64..1_000_000,
            delta in 0u64..1_000_000,
        ) {
            let p = UsagePolicy::new("p", 1, vec![Obligation::retention(duration)]).unwrap();
            prop_assert_eq!(
                expiry_at(&p, t + delta),
                expiry_at(&p, t).map(|e| e + delta)
            );
        }
    }
}
