//! Executable preservation and secrecy checking.
//!
//! A secrecy query names a rule and one of its fresh nonce or key
//! variables, the guarding key set (possibly extended by keys the trace
//! itself designates, as in Yahalom), and the agent variables that must be
//! honest. Over every explored state the checker finds the query's
//! introduction instances and
//!
//!  * reports an attack when the secret of such an instance is deducible
//!    by the spy, and
//!  * checks, under the hypotheses that the trace is guarded and the
//!    guarding keys are safe, that every enabled rule instance keeps the
//!    secret guarded in its conclusion.
//!
//! Verdicts hold within the configured bounds; they are falsification plus
//! bounded assurance, not proofs.

use crate::explore::{
    self, explore, Bounds, ExploreError, StateView, StepKind, Visitor,
};
use crate::guard::{guard_member, GuardSpec, Secret};
use crate::model::{Event, Protocol, Rule, Trace};
use crate::msg::{self, AgentId, KeyId, Message};
use crate::pattern::{
    apm_key, match_event, ApplyMode, Binding, EventPattern, KeyTerm, Pattern, Subst, VarType,
};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Keys collected from trace events, e.g. the session keys a server has
/// issued for the matching request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceKeySpec {
    /// The key variable of `pattern` to collect.
    pub key_var: String,
    /// Event shape to scan for; variables shared with the origin rule are
    /// constrained to the instance's bindings.
    pub pattern: EventPattern,
}

/// A secrecy question: the secret introduced at `secret_var` by
/// `origin_rule`, guarded by `ks` (plus trace-designated keys), with the
/// named agent variables assumed honest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecrecyQuery {
    pub name: String,
    pub origin_rule: String,
    pub secret_var: String,
    pub ks: Vec<KeyTerm>,
    pub trace_keys: Option<TraceKeySpec>,
    pub honest: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    Secrecy,
    Preservation,
    Both,
}

/// Two message shapes that must agree on their residual bindings whenever
/// both occur in `parts(spies evs)` sharing a spy-unknown nonce. An empty
/// agreement list means the co-occurrence itself is the violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnicitySpec {
    pub name: String,
    pub shape1: Pattern,
    pub shape2: Pattern,
    /// Nonce variable name common to both shapes.
    pub shared: String,
    /// Pairs (variable of shape1, variable of shape2) that must coincide.
    pub agree: Vec<(String, String)>,
}

/// A replayable counterexample state.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub trace: Trace,
    pub provenance: Vec<StepKind>,
}

#[derive(Debug, Clone)]
pub struct AttackReport {
    pub counterexample: Counterexample,
    pub secret: Secret,
    /// Bindings of the origin instance whose secret leaked.
    pub instance: Subst,
}

#[derive(Debug, Clone)]
pub enum SecrecyVerdict {
    HoldsWithinBounds,
    Attack(Box<AttackReport>),
    Unknown(String),
}

impl SecrecyVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            SecrecyVerdict::HoldsWithinBounds => "holds-within-bounds",
            SecrecyVerdict::Attack(_) => "attack",
            SecrecyVerdict::Unknown(_) => "unknown",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreservationCounterexample {
    pub counterexample: Counterexample,
    pub rule: String,
    pub subst: Subst,
    pub conclusion: Event,
}

#[derive(Debug, Clone)]
pub enum RuleOutcome {
    Preserved,
    Violated(Box<PreservationCounterexample>),
    /// The rule was never enabled while a query hypothesis was active.
    Unknown(String),
}

impl RuleOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            RuleOutcome::Preserved => "preserved",
            RuleOutcome::Violated(_) => "violated",
            RuleOutcome::Unknown(_) => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalOutcome {
    Preserved,
    Violated,
    Unknown,
}

impl GlobalOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            GlobalOutcome::Preserved => "preserved",
            GlobalOutcome::Violated => "violated",
            GlobalOutcome::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreservationVerdict {
    /// Outcome per rule, in declaration order.
    pub per_rule: Vec<(String, RuleOutcome)>,
    pub global: GlobalOutcome,
}

#[derive(Debug, Clone)]
pub struct UnicityViolation {
    pub counterexample: Counterexample,
    pub first: Message,
    pub second: Message,
}

#[derive(Debug, Clone)]
pub enum UnicityVerdict {
    HoldsWithinBounds,
    Violated(Box<UnicityViolation>),
}

impl UnicityVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            UnicityVerdict::HoldsWithinBounds => "holds-within-bounds",
            UnicityVerdict::Violated(_) => "violated",
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonRepudiationViolation {
    pub counterexample: Counterexample,
    pub signature: Message,
    pub signer: AgentId,
}

#[derive(Debug, Clone)]
pub enum NonRepudiationVerdict {
    HoldsWithinBounds,
    Violated(Box<NonRepudiationViolation>),
}

impl NonRepudiationVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            NonRepudiationVerdict::HoldsWithinBounds => "holds-within-bounds",
            NonRepudiationVerdict::Violated(_) => "violated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("query {query}: no rule named {rule}")]
    NoSuchRule { query: String, rule: String },
    #[error("query {query}: ${var} is not a fresh nonce or key variable of rule {rule}")]
    NotFreshVariable { query: String, var: String, rule: String },
    #[error("query {query}: variable ${var} is not structurally recoverable from the conclusion of rule {rule}")]
    NotRecoverable { query: String, var: String, rule: String },
    #[error("query {query}: honest variable ${var} is not an agent variable of rule {rule}")]
    BadHonestVariable { query: String, var: String, rule: String },
    #[error("unicity {name}: shared variable ${var} must be a nonce variable of both shapes")]
    BadSharedVariable { name: String, var: String },
    #[error("unicity {name}: agreement variable ${var} missing from its shape")]
    BadAgreeVariable { name: String, var: String },
    #[error("initial spy knowledge already contains a {0} atom; the secret cannot be guarded")]
    InitKnowledgeViolation(&'static str),
    #[error(transparent)]
    Explore(#[from] ExploreError),
}

/// `safe Ks (spies evs)`: no guarding key is deducible by the spy.
pub fn safe(ks: &BTreeSet<KeyId>, evs: &[Event], p: &Protocol, pool: &[AgentId]) -> bool {
    let universe = crate::model::agent_universe(p, pool);
    let knowledge = msg::analz(&crate::model::spies(evs, p, &universe));
    ks.iter().all(|k| !knowledge.contains(&Message::Key(*k)))
}

/// Was `secret` introduced in `evs` by this substitution instance of
/// `rule`, guarded by `ks`? True when the instantiated conclusion occurs,
/// the secret is the image of one of the rule's fresh variables, and the
/// conclusion body guards it.
pub fn fresh(
    rule: &Rule,
    s: &Subst,
    secret: Secret,
    ks: &BTreeSet<KeyId>,
    evs: &[Event],
) -> bool {
    let Ok(ev) = crate::pattern::ap_event(s, &rule.post) else {
        return false;
    };
    if !evs.contains(&ev) {
        return false;
    }
    let introduced = match secret {
        Secret::Nonce(n) => rule
            .newn()
            .iter()
            .any(|v| s.get(v) == Some(&Binding::Nonce(n))),
        Secret::Key(k) => rule
            .newk()
            .iter()
            .any(|v| s.get(v) == Some(&Binding::Key(k))),
    };
    if !introduced {
        return false;
    }
    guard_member(&GuardSpec { secret, ks: ks.clone() }, &ev.body)
}

/// Variables of a pattern that survive wildcard matching (everything not
/// confined to computed list expressions).
fn structural_vars(p: &Pattern, out: &mut BTreeMap<String, VarType>) {
    match p {
        Pattern::Apply(_, _) => {}
        Pattern::Hash(x) => structural_vars(x, out),
        Pattern::Pair(x, y) => {
            structural_vars(x, out);
            structural_vars(y, out);
        }
        Pattern::Crypt(_, x) => {
            let mut tmp = BTreeMap::new();
            p_key_vars(p, &mut tmp);
            out.extend(tmp);
            structural_vars(x, out);
        }
        other => other.vars(out),
    }
}

fn p_key_vars(p: &Pattern, out: &mut BTreeMap<String, VarType>) {
    if let Pattern::Crypt(k, _) = p {
        match k {
            KeyTerm::Var(v) => {
                out.insert(v.clone(), VarType::Key);
            }
            KeyTerm::Pub(crate::pattern::AgentTerm::Var(v))
            | KeyTerm::Pri(crate::pattern::AgentTerm::Var(v))
            | KeyTerm::Shr(crate::pattern::AgentTerm::Var(v)) => {
                out.insert(v.clone(), VarType::Agent);
            }
            _ => {}
        }
    }
}

fn event_structural_vars(ep: &EventPattern) -> BTreeMap<String, VarType> {
    let mut out = BTreeMap::new();
    if let crate::pattern::AgentTerm::Var(v) = &ep.sender {
        out.insert(v.clone(), VarType::Agent);
    }
    if let crate::pattern::AgentTerm::Var(v) = &ep.recipient {
        out.insert(v.clone(), VarType::Agent);
    }
    structural_vars(&ep.body, &mut out);
    out
}

fn keyterm_vars(t: &KeyTerm) -> Option<&String> {
    match t {
        KeyTerm::Var(v) => Some(v),
        KeyTerm::Pub(crate::pattern::AgentTerm::Var(v))
        | KeyTerm::Pri(crate::pattern::AgentTerm::Var(v))
        | KeyTerm::Shr(crate::pattern::AgentTerm::Var(v)) => Some(v),
        _ => None,
    }
}

/// What to check in one exploration pass.
#[derive(Debug, Clone, Default)]
pub struct CheckRequest {
    pub queries: Vec<(SecrecyQuery, QueryMode)>,
    pub unicity: Vec<UnicitySpec>,
    pub non_repudiation: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub secrecy: BTreeMap<String, SecrecyVerdict>,
    pub preservation: BTreeMap<String, PreservationVerdict>,
    pub unicity: BTreeMap<String, UnicityVerdict>,
    pub non_repudiation: Option<NonRepudiationVerdict>,
    pub states: u64,
    pub expansions: u64,
    pub truncated: bool,
}

struct QueryState {
    query: SecrecyQuery,
    mode: QueryMode,
    origin_idx: usize,
    secret_is_key: bool,
    attack: Option<AttackReport>,
    violations: BTreeMap<String, PreservationCounterexample>,
    exercised: BTreeSet<String>,
    /// States where the hypotheses held but the traffic itself was not
    /// guarded; nonzero values contradict the preservation theorem and
    /// indicate an engine defect.
    coherence_breaks: u64,
}

struct UnicityState {
    spec: UnicitySpec,
    crypt_rooted: bool,
    violation: Option<UnicityViolation>,
}

struct NonRepState {
    violation: Option<NonRepudiationViolation>,
}

struct CheckEngine<'r> {
    protocol: &'r Protocol,
    queries: Vec<QueryState>,
    unicity: Vec<UnicityState>,
    nonrep: Option<NonRepState>,
}

impl CheckEngine<'_> {
    /// Everything that can still change a verdict has been decided.
    fn done(&self) -> bool {
        let queries_done = self.queries.iter().all(|q| {
            let secrecy_done = !wants_secrecy(q.mode) || q.attack.is_some();
            let preservation_done = !wants_preservation(q.mode)
                || self
                    .protocol
                    .rules
                    .iter()
                    .all(|r| q.violations.contains_key(&r.name));
            secrecy_done && preservation_done
        });
        let unicity_done = self.unicity.iter().all(|u| u.violation.is_some());
        let nonrep_done = self.nonrep.as_ref().is_none_or(|n| n.violation.is_some());
        queries_done && unicity_done && nonrep_done
    }
}

fn wants_secrecy(m: QueryMode) -> bool {
    matches!(m, QueryMode::Secrecy | QueryMode::Both)
}

fn wants_preservation(m: QueryMode) -> bool {
    matches!(m, QueryMode::Preservation | QueryMode::Both)
}

fn resolve_ks(
    query: &SecrecyQuery,
    inst: &Subst,
    view: &StateView<'_, '_>,
) -> Option<BTreeSet<KeyId>> {
    let mut ks = BTreeSet::new();
    for t in &query.ks {
        ks.insert(apm_key(inst, t).ok()?);
    }
    if let Some(tk) = &query.trace_keys {
        for ev in &view.know.event_set {
            if let Some(s2) = match_event(&tk.pattern, ev, inst, ApplyMode::Strict) {
                if let Some(Binding::Key(k)) = s2.get(&tk.key_var) {
                    ks.insert(*k);
                }
            }
        }
    }
    Some(ks)
}

impl Visitor for CheckEngine<'_> {
    fn visit(&mut self, view: &StateView<'_, '_>) -> Option<String> {
        let mut flag = None;
        for q in &mut self.queries {
            if let Some(label) = eval_query(q, self.protocol, view) {
                flag.get_or_insert(label);
            }
        }
        for u in &mut self.unicity {
            if u.violation.is_none() {
                if let Some(label) = eval_unicity(u, view) {
                    flag.get_or_insert(label);
                }
            }
        }
        if let Some(n) = &mut self.nonrep {
            if n.violation.is_none() {
                if let Some(label) = eval_nonrep(n, self.protocol, view) {
                    flag.get_or_insert(label);
                }
            }
        }
        flag
    }
}

fn eval_query(
    q: &mut QueryState,
    protocol: &Protocol,
    view: &StateView<'_, '_>,
) -> Option<String> {
    let rule = &protocol.rules[q.origin_idx];
    let mut flag = None;
    'instances: for ev in &view.know.event_set {
        let Some(inst) = match_event(&rule.post, ev, &Subst::new(), ApplyMode::Wildcard)
        else {
            continue;
        };
        let secret = match (q.secret_is_key, inst.get(&q.query.secret_var)) {
            (false, Some(Binding::Nonce(n))) => Secret::Nonce(*n),
            (true, Some(Binding::Key(k))) => Secret::Key(*k),
            _ => continue,
        };
        for hv in &q.query.honest {
            match inst.get(hv) {
                Some(Binding::Agent(a)) if !protocol.is_bad(*a) => {}
                _ => continue 'instances,
            }
        }
        let Some(ks) = resolve_ks(&q.query, &inst, view) else { continue };
        let spec = GuardSpec { secret, ks: ks.clone() };
        // Introduction must itself be guarded (the freshness condition).
        if !guard_member(&spec, &ev.body) {
            continue;
        }

        if wants_secrecy(q.mode) && q.attack.is_none() {
            let leaked = match secret {
                Secret::Nonce(n) => view.know.analz.nonces.contains(&n),
                Secret::Key(k) => view.know.analz.keys.contains(&k),
            };
            if leaked {
                q.attack = Some(AttackReport {
                    counterexample: Counterexample {
                        trace: view.know.trace(),
                        provenance: view.know.provenance_newest_first(),
                    },
                    secret,
                    instance: inst.clone(),
                });
                flag.get_or_insert(format!("secrecy {}: secret deducible", q.query.name));
            }
        }

        if wants_preservation(q.mode) {
            let is_safe = ks.iter().all(|k| !view.know.analz.keys.contains(k));
            if !is_safe {
                continue;
            }
            let guarded_traffic = view.know.spies.iter().all(|m| guard_member(&spec, m));
            if !guarded_traffic {
                q.coherence_breaks += 1;
                continue;
            }
            for (ridx, subst, conclusion) in view.rule_steps {
                let rname = &protocol.rules[*ridx].name;
                q.exercised.insert(rname.clone());
                if q.violations.contains_key(rname) {
                    continue;
                }
                if !guard_member(&spec, &conclusion.body) {
                    q.violations.insert(
                        rname.clone(),
                        PreservationCounterexample {
                            counterexample: Counterexample {
                                trace: view.know.trace(),
                                provenance: view.know.provenance_newest_first(),
                            },
                            rule: rname.clone(),
                            subst: subst.clone(),
                            conclusion: conclusion.clone(),
                        },
                    );
                    flag.get_or_insert(format!(
                        "preservation {}: rule {} breaks the guard",
                        q.query.name, rname
                    ));
                }
            }
        }
    }
    flag
}

fn eval_unicity(u: &mut UnicityState, view: &StateView<'_, '_>) -> Option<String> {
    let matches_of = |shape: &Pattern| -> Vec<(Message, Subst)> {
        let mut out = Vec::new();
        if u.crypt_rooted {
            for m in &view.know.parts_crypts {
                if let Some(s) = crate::pattern::match_pattern(shape, m, &Subst::new(), ApplyMode::Strict) {
                    out.push((m.clone(), s));
                }
            }
        } else {
            for m in &view.know.parts_spies {
                if let Some(s) = crate::pattern::match_pattern(shape, m, &Subst::new(), ApplyMode::Strict) {
                    out.push((m.clone(), s));
                }
            }
        }
        out
    };
    let ms1 = matches_of(&u.spec.shape1);
    if ms1.is_empty() {
        return None;
    }
    let ms2 = matches_of(&u.spec.shape2);
    for (m1, s1) in &ms1 {
        let Some(Binding::Nonce(n)) = s1.get(&u.spec.shared) else { continue };
        if view.know.analz.nonces.contains(n) {
            continue;
        }
        for (m2, s2) in &ms2 {
            if s2.get(&u.spec.shared) != Some(&Binding::Nonce(*n)) {
                continue;
            }
            let broken = if u.spec.agree.is_empty() {
                true
            } else {
                u.spec
                    .agree
                    .iter()
                    .any(|(v1, v2)| s1.get(v1) != s2.get(v2))
            };
            if broken {
                u.violation = Some(UnicityViolation {
                    counterexample: Counterexample {
                        trace: view.know.trace(),
                        provenance: view.know.provenance_newest_first(),
                    },
                    first: m1.clone(),
                    second: m2.clone(),
                });
                return Some(format!("unicity {} violated", u.spec.name));
            }
        }
    }
    None
}

/// Recognize `sign A X`: the triple `{Agent A, X, Crypt (priK A) (Hash X)}`.
pub fn as_signature(m: &Message) -> Option<(AgentId, &Message)> {
    if let Message::Pair(agent, rest) = m {
        if let (Message::Agent(a), Message::Pair(x, sig)) = (agent.as_ref(), rest.as_ref()) {
            if let Message::Crypt(k, h) = sig.as_ref() {
                if let Message::Hash(hb) = h.as_ref() {
                    if *k == msg::prik(*a) && hb == x {
                        return Some((*a, x));
                    }
                }
            }
        }
    }
    None
}

/// Is `needle` a part of `{hay}`?
fn part_of(needle: &Message, hay: &Message) -> bool {
    if needle == hay {
        return true;
    }
    match hay {
        Message::Pair(x, y) => part_of(needle, x) || part_of(needle, y),
        Message::Crypt(_, x) => part_of(needle, x),
        _ => false,
    }
}

fn eval_nonrep(
    n: &mut NonRepState,
    protocol: &Protocol,
    view: &StateView<'_, '_>,
) -> Option<String> {
    for m in view.new_parts {
        let Some((signer, _)) = as_signature(m) else { continue };
        if protocol.is_bad(signer) {
            continue;
        }
        let justified = view
            .know
            .events
            .iter()
            .any(|ev| ev.sender == signer && part_of(m, &ev.body));
        if !justified {
            n.violation = Some(NonRepudiationViolation {
                counterexample: Counterexample {
                    trace: view.know.trace(),
                    provenance: view.know.provenance_newest_first(),
                },
                signature: m.clone(),
                signer,
            });
            return Some(format!("signature by {signer} has no sending event"));
        }
    }
    None
}

fn validate_query(
    protocol: &Protocol,
    query: &SecrecyQuery,
) -> Result<(usize, bool), CheckError> {
    let origin_idx = protocol
        .rules
        .iter()
        .position(|r| r.name == query.origin_rule)
        .ok_or_else(|| CheckError::NoSuchRule {
            query: query.name.clone(),
            rule: query.origin_rule.clone(),
        })?;
    let rule = &protocol.rules[origin_idx];
    let secret_is_key = if rule.newn().contains(&query.secret_var) {
        false
    } else if rule.newk().contains(&query.secret_var) {
        true
    } else {
        return Err(CheckError::NotFreshVariable {
            query: query.name.clone(),
            var: query.secret_var.clone(),
            rule: rule.name.clone(),
        });
    };
    let visible = event_structural_vars(&rule.post);
    if !visible.contains_key(&query.secret_var) {
        return Err(CheckError::NotRecoverable {
            query: query.name.clone(),
            var: query.secret_var.clone(),
            rule: rule.name.clone(),
        });
    }
    for v in &query.honest {
        if visible.get(v) != Some(&VarType::Agent) {
            return Err(CheckError::BadHonestVariable {
                query: query.name.clone(),
                var: v.clone(),
                rule: rule.name.clone(),
            });
        }
    }
    for t in &query.ks {
        if let Some(v) = keyterm_vars(t) {
            if !visible.contains_key(v) {
                return Err(CheckError::NotRecoverable {
                    query: query.name.clone(),
                    var: v.clone(),
                    rule: rule.name.clone(),
                });
            }
        }
    }
    Ok((origin_idx, secret_is_key))
}

fn validate_unicity(spec: &UnicitySpec) -> Result<(), CheckError> {
    for shape in [&spec.shape1, &spec.shape2] {
        let mut vars = BTreeMap::new();
        shape.vars(&mut vars);
        if vars.get(&spec.shared) != Some(&VarType::Nonce) {
            return Err(CheckError::BadSharedVariable {
                name: spec.name.clone(),
                var: spec.shared.clone(),
            });
        }
    }
    let mut v1 = BTreeMap::new();
    spec.shape1.vars(&mut v1);
    let mut v2 = BTreeMap::new();
    spec.shape2.vars(&mut v2);
    for (a, b) in &spec.agree {
        if !v1.contains_key(a) {
            return Err(CheckError::BadAgreeVariable { name: spec.name.clone(), var: a.clone() });
        }
        if !v2.contains_key(b) {
            return Err(CheckError::BadAgreeVariable { name: spec.name.clone(), var: b.clone() });
        }
    }
    Ok(())
}

/// Run every requested check in one family of deepening sweeps. Sweeps at
/// depths 1..=max give counterexamples of minimal length; holds-verdicts
/// are decided by the final full-depth sweep.
pub fn run_checks(
    protocol: &Protocol,
    bounds: &Bounds,
    request: &CheckRequest,
) -> Result<CheckReport, CheckError> {
    let mut queries = Vec::new();
    for (q, mode) in &request.queries {
        let (origin_idx, secret_is_key) = validate_query(protocol, q)?;
        // The precondition "the secret is guarded in the spy's initial
        // knowledge" is vacuous for fresh atoms unless the initial
        // knowledge already holds atoms of that kind.
        let universe = crate::model::agent_universe(protocol, &bounds.agent_pool);
        let init = crate::model::init_state(AgentId::Spy, protocol, &universe);
        let init_parts = msg::parts(&init);
        if !secret_is_key && init_parts.iter().any(|m| matches!(m, Message::Nonce(_))) {
            return Err(CheckError::InitKnowledgeViolation("nonce"));
        }
        if secret_is_key
            && init_parts.iter().any(|m| {
                matches!(m, Message::Key(k)
                    if matches!(msg::key_kind(*k), Some(msg::KeyKind::Session(_))))
            })
        {
            return Err(CheckError::InitKnowledgeViolation("session key"));
        }
        queries.push(QueryState {
            query: q.clone(),
            mode: *mode,
            origin_idx,
            secret_is_key,
            attack: None,
            violations: BTreeMap::new(),
            exercised: BTreeSet::new(),
            coherence_breaks: 0,
        });
    }
    let mut unicity = Vec::new();
    for spec in &request.unicity {
        validate_unicity(spec)?;
        let crypt_rooted = matches!(spec.shape1, Pattern::Crypt(_, _))
            && matches!(spec.shape2, Pattern::Crypt(_, _));
        unicity.push(UnicityState { spec: spec.clone(), crypt_rooted, violation: None });
    }
    let nonrep = request.non_repudiation.then_some(NonRepState { violation: None });

    let mut engine = CheckEngine { protocol, queries, unicity, nonrep };
    let mut states = 0;
    let mut expansions = 0;
    let mut truncated = false;

    let depths: Vec<usize> = if bounds.max_trace_len == 0 {
        vec![0]
    } else {
        (1..=bounds.max_trace_len).collect()
    };
    for depth in depths {
        let b = Bounds { max_trace_len: depth, ..bounds.clone() };
        let outcome = explore(protocol, &b, &mut engine)?;
        states = outcome.states;
        expansions += outcome.expansions;
        truncated |= outcome.truncated;
        if engine.done() {
            break;
        }
    }

    let mut report = CheckReport {
        states,
        expansions,
        truncated,
        ..CheckReport::default()
    };
    for q in engine.queries {
        let per_rule: Vec<(String, RuleOutcome)> = protocol
            .rules
            .iter()
            .map(|r| {
                let outcome = if let Some(cex) = q.violations.get(&r.name) {
                    RuleOutcome::Violated(Box::new(cex.clone()))
                } else if q.exercised.contains(&r.name) {
                    RuleOutcome::Preserved
                } else {
                    RuleOutcome::Unknown(
                        "never enabled while the query hypothesis was active".into(),
                    )
                };
                (r.name.clone(), outcome)
            })
            .collect();
        let global = if per_rule.iter().any(|(_, o)| matches!(o, RuleOutcome::Violated(_))) {
            GlobalOutcome::Violated
        } else if truncated
            || per_rule.iter().any(|(_, o)| matches!(o, RuleOutcome::Unknown(_)))
        {
            GlobalOutcome::Unknown
        } else {
            GlobalOutcome::Preserved
        };
        if wants_preservation(q.mode) {
            report
                .preservation
                .insert(q.query.name.clone(), PreservationVerdict { per_rule: per_rule.clone(), global });
        }
        if wants_secrecy(q.mode) {
            let verdict = if let Some(attack) = q.attack {
                SecrecyVerdict::Attack(Box::new(attack))
            } else if truncated {
                SecrecyVerdict::Unknown("exploration truncated by the state cap".into())
            } else if q.coherence_breaks > 0 {
                SecrecyVerdict::Unknown(format!(
                    "guard hypothesis failed on {} states without an attack; \
                     preservation and deducibility disagree",
                    q.coherence_breaks
                ))
            } else {
                SecrecyVerdict::HoldsWithinBounds
            };
            report.secrecy.insert(q.query.name.clone(), verdict);
        }
    }
    for u in engine.unicity {
        let verdict = match u.violation {
            Some(v) => UnicityVerdict::Violated(Box::new(v)),
            None => UnicityVerdict::HoldsWithinBounds,
        };
        report.unicity.insert(u.spec.name.clone(), verdict);
    }
    if let Some(n) = engine.nonrep {
        report.non_repudiation = Some(match n.violation {
            Some(v) => NonRepudiationVerdict::Violated(Box::new(v)),
            None => NonRepudiationVerdict::HoldsWithinBounds,
        });
    }
    Ok(report)
}

/// Replay a counterexample against the rule semantics.
pub fn replay_counterexample(
    protocol: &Protocol,
    bounds: &Bounds,
    cex: &Counterexample,
) -> Result<(), explore::ReplayError> {
    explore::replay(protocol, bounds, &cex.trace, &cex.provenance)
}
