//! Bounded trace exploration.
//!
//! Enumerates the traces a protocol generates under configured pools and a
//! pattern-directed intruder, depth-first and deterministically. Soundness
//! is unconditional: every emitted trace replays under the rule semantics.
//! Completeness is relative to the bounds: values come from finite pools,
//! the Fake rule is restricted to messages shaped like rule preconditions,
//! and states are deduplicated up to the canonical event set (optionally up
//! to a consistent renaming of nonces and session keys, which never
//! affects verdicts because rules and queries only name atoms through
//! variables).
//!
//! The engine keeps one mutable knowledge state (spy analysis, parts,
//! used atoms) and applies/reverts per-event deltas while backtracking, so
//! deep searches allocate almost nothing per state.

use crate::list;
use crate::model::{self, Event, Protocol, Rule, SideCondition, Trace};
use crate::msg::{self, AnalzState, Message, MsgSet};
use crate::msg::{key_kind, AgentId, KeyKind};
use crate::pattern::{
    ap_event, apm, match_event, AgentTerm, ApplyMode, Binding, EventPattern, NatTerm, Pattern,
    Subst, VarType,
};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

/// Pools and limits for bounded exploration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bounds {
    pub max_trace_len: usize,
    /// Honest agents to instantiate variables with; the spy is always
    /// added.
    pub agent_pool: Vec<AgentId>,
    /// Values available for fresh nonces.
    pub nonce_pool: Vec<u64>,
    /// When set, each fresh-nonce position of each rule draws from its own
    /// disjoint pool of this size instead of the shared pool, bounding the
    /// number of sessions per role.
    pub nonces_per_role: Option<usize>,
    /// Indices available for fresh session keys.
    pub key_pool: Vec<u64>,
    /// Values for number (guessable) variables.
    pub number_pool: Vec<u64>,
    /// Maximum length of enumerated agent lists (rule variables under an
    /// `agl` side condition).
    pub list_max_len: usize,
    /// Intruder synthesis width: 0 replays opaque blobs into message-variable
    /// positions, 1 allows any deducible message.
    pub fake_depth: usize,
    /// Hard cap on state expansions; exceeding it truncates the report.
    pub max_states: u64,
    /// Introduce each fresh nonce/key with the single smallest unused pool
    /// value rather than branching over all of them.
    pub canonical_fresh: bool,
    /// Deduplicate states up to renaming of nonces and session keys, and of
    /// interchangeable honest pool agents.
    pub atom_symmetry: bool,
    /// Agents never renamed by the symmetry reduction (beyond compromised
    /// agents and rule constants, which are always fixed). Checkers add the
    /// agents their queries name.
    pub fixed_agents: Vec<AgentId>,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_trace_len: 5,
            agent_pool: vec![AgentId::Friend(1), AgentId::Friend(2), AgentId::Spy],
            nonce_pool: (0..8).collect(),
            nonces_per_role: None,
            key_pool: (0..4).collect(),
            number_pool: vec![0],
            list_max_len: 0,
            fake_depth: 0,
            max_states: 20_000_000,
            canonical_fresh: true,
            atom_symmetry: true,
            fixed_agents: Vec::new(),
        }
    }
}

impl Bounds {
    fn normalized(&self) -> Bounds {
        let mut b = self.clone();
        if !b.agent_pool.contains(&AgentId::Spy) {
            b.agent_pool.push(AgentId::Spy);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExploreError {
    #[error("bounds too small: {0}")]
    BoundsTooSmall(String),
    #[error(transparent)]
    Model(#[from] model::ModelError),
}

/// How an event entered the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepKind {
    Rule { rule: String, subst: Subst },
    Fake,
}

/// A trace the visitor flagged, newest event first, with per-event
/// provenance (aligned with the trace).
#[derive(Debug, Clone)]
pub struct FlaggedTrace {
    pub label: String,
    pub trace: Trace,
    pub provenance: Vec<StepKind>,
}

#[derive(Debug, Clone, Default)]
pub struct ExploreOutcome {
    /// Node expansions, including re-expansions at shallower depth.
    pub expansions: u64,
    /// Distinct canonical states visited.
    pub states: u64,
    pub flagged: Vec<FlaggedTrace>,
    /// True when `max_states` stopped the search early.
    pub truncated: bool,
}

/// The mutable search state: the trace so far plus incrementally
/// maintained spy knowledge.
pub struct Knowledge<'p> {
    pub protocol: &'p Protocol,
    pub universe: BTreeSet<AgentId>,
    /// Events oldest first (the reverse of the paper's trace order).
    pub events: Vec<Event>,
    pub provenance: Vec<StepKind>,
    pub event_set: BTreeSet<Event>,
    pub spies: MsgSet,
    pub analz: AnalzState,
    pub parts_spies: MsgSet,
    /// Encrypted members of `parts_spies`, insertion order.
    pub parts_crypts: Vec<Message>,
    /// Fake events no fired rule instance has used as a precondition yet.
    /// Since fakes add no deducible atoms, only these can still influence
    /// the future; exploration caps their number at the largest
    /// precondition count of any rule.
    pub dangling_fakes: BTreeSet<Event>,
    max_dangling: usize,
    /// Friend indices interchangeable under the symmetry reduction.
    sym_friends: BTreeSet<u64>,
    /// Per-event cached (masked skeleton, plain render), stack-aligned
    /// with `events`.
    event_meta: Vec<(String, String)>,
    /// Parts of every agent's initial knowledge (constant).
    init_parts_all: MsgSet,
}

pub struct Delta {
    event: Event,
    spies_added: bool,
    analz_added: Vec<Message>,
    parts_added: Vec<Message>,
    crypts_added: usize,
    fake_added: bool,
    consumed_fakes: Vec<Event>,
}

impl<'p> Knowledge<'p> {
    pub fn new(protocol: &'p Protocol, bounds: &Bounds) -> Self {
        let universe = model::agent_universe(protocol, &bounds.agent_pool);
        let spy_init = model::init_state(AgentId::Spy, protocol, &universe);
        let mut analz = AnalzState::new();
        let mut parts_spies = MsgSet::new();
        let mut parts_crypts = Vec::new();
        for m in &spy_init {
            analz.insert(m.clone());
            descend_parts(m, &mut parts_spies, &mut parts_crypts);
        }
        let mut all_init = MsgSet::new();
        for &a in &universe {
            all_init.extend(model::init_state(a, protocol, &universe));
        }
        let init_parts_all = msg::parts(&all_init);
        let max_dangling = protocol.rules.iter().map(|r| r.pre.len()).max().unwrap_or(0);
        let fixed = protocol.agent_constants();
        let sym_friends: BTreeSet<u64> = bounds
            .agent_pool
            .iter()
            .filter_map(|a| match a {
                AgentId::Friend(k)
                    if !protocol.is_bad(*a)
                        && !fixed.contains(a)
                        && !bounds.fixed_agents.contains(a) =>
                {
                    Some(*k)
                }
                _ => None,
            })
            .collect();
        Knowledge {
            protocol,
            universe,
            events: Vec::new(),
            provenance: Vec::new(),
            event_set: BTreeSet::new(),
            spies: spy_init,
            analz,
            parts_spies,
            parts_crypts,
            dangling_fakes: BTreeSet::new(),
            max_dangling,
            sym_friends,
            event_meta: Vec::new(),
            init_parts_all,
        }
    }

    /// Rebuild a knowledge state from a trace (newest first), e.g. for
    /// replaying counterexamples.
    pub fn from_trace(
        protocol: &'p Protocol,
        bounds: &Bounds,
        trace: &[Event],
        provenance: &[StepKind],
    ) -> Self {
        let mut k = Knowledge::new(protocol, bounds);
        for (ev, pr) in trace.iter().rev().zip(provenance.iter().rev()) {
            k.apply(ev.clone(), pr.clone());
        }
        k
    }

    /// Is the atom among the parts of traffic or of initial knowledge?
    pub fn is_used(&self, m: &Message) -> bool {
        self.parts_spies.contains(m) || self.init_parts_all.contains(m)
    }

    /// The trace in the paper's order, newest first.
    pub fn trace(&self) -> Trace {
        self.events.iter().rev().cloned().collect()
    }

    pub fn provenance_newest_first(&self) -> Vec<StepKind> {
        self.provenance.iter().rev().cloned().collect()
    }

    pub fn apply(&mut self, event: Event, prov: StepKind) -> Delta {
        let body = event.body.clone();
        let inserted = self.event_set.insert(event.clone());
        debug_assert!(inserted, "duplicate events are pruned before apply");
        let mut fake_added = false;
        let mut consumed_fakes = Vec::new();
        match &prov {
            StepKind::Fake => {
                fake_added = self.dangling_fakes.insert(event.clone());
            }
            StepKind::Rule { rule, subst } => {
                if let Some(r) = self.protocol.rule(rule) {
                    for pre in &r.pre {
                        if let Ok(inst) = ap_event(subst, pre) {
                            if self.dangling_fakes.remove(&inst) {
                                consumed_fakes.push(inst);
                            }
                        }
                    }
                }
            }
        }
        self.event_meta
            .push((skeleton_string(&event, &self.sym_friends), event.to_string()));
        self.events.push(event.clone());
        self.provenance.push(prov);
        let spies_added = self.spies.insert(body.clone());
        let analz_added = if spies_added {
            self.analz.insert(body.clone())
        } else {
            Vec::new()
        };
        let mut parts_added = Vec::new();
        let crypts_before = self.parts_crypts.len();
        if spies_added {
            descend_parts_logged(
                &body,
                &mut self.parts_spies,
                &mut self.parts_crypts,
                &mut parts_added,
            );
        }
        Delta {
            event,
            spies_added,
            analz_added,
            parts_added,
            crypts_added: self.parts_crypts.len() - crypts_before,
            fake_added,
            consumed_fakes,
        }
    }

    pub fn revert(&mut self, delta: Delta) {
        self.events.pop();
        self.event_meta.pop();
        self.provenance.pop();
        self.event_set.remove(&delta.event);
        if delta.fake_added {
            self.dangling_fakes.remove(&delta.event);
        }
        for ev in delta.consumed_fakes {
            self.dangling_fakes.insert(ev);
        }
        if delta.spies_added {
            self.spies.remove(&delta.event.body);
            self.analz.revert(&delta.analz_added);
            for m in delta.parts_added.iter().rev() {
                self.parts_spies.remove(m);
            }
            self.parts_crypts
                .truncate(self.parts_crypts.len() - delta.crypts_added);
        }
    }

    /// Canonical dedup key for the current event set. States with the same
    /// events but a different set of dangling fakes key differently: their
    /// remaining fake budgets differ.
    fn canonical_key(&self, symmetry: bool) -> u128 {
        let mut hasher = Fnv128::new();
        if !symmetry {
            for ev in &self.event_set {
                hasher.write_str(&ev.to_string());
                hasher.write_str(";");
            }
            hasher.write_str("|");
            for ev in &self.dangling_fakes {
                hasher.write_str(&ev.to_string());
                hasher.write_str(";");
            }
            return hasher.finish();
        }
        // Order events by a rendering that masks renameable atoms, then
        // assign canonical ids by first occurrence in that order. Ties may
        // order differently across isomorphic states, which only costs
        // dedup precision, never soundness.
        let mut order: Vec<usize> = (0..self.events.len()).collect();
        order.sort_by(|&i, &j| {
            self.event_meta[i]
                .cmp(&self.event_meta[j])
                .then_with(|| self.events[i].cmp(&self.events[j]))
        });
        let mut ren = Renaming::default();
        let mut buf = String::with_capacity(256);
        for &i in &order {
            buf.clear();
            render_renamed_event(&self.events[i], &mut ren, &self.sym_friends, &mut buf);
            hasher.write_str(&buf);
            hasher.write_str(";");
        }
        hasher.write_str("|");
        for ev in &self.dangling_fakes {
            buf.clear();
            render_renamed_event(ev, &mut ren, &self.sym_friends, &mut buf);
            hasher.write_str(&buf);
            hasher.write_str(";");
        }
        hasher.finish()
    }
}

fn descend_parts(m: &Message, out: &mut MsgSet, crypts: &mut Vec<Message>) {
    if !out.insert(m.clone()) {
        return;
    }
    if matches!(m, Message::Crypt(_, _)) {
        crypts.push(m.clone());
    }
    match m {
        Message::Pair(x, y) => {
            descend_parts(x, out, crypts);
            descend_parts(y, out, crypts);
        }
        Message::Crypt(_, x) => descend_parts(x, out, crypts),
        _ => {}
    }
}

fn descend_parts_logged(
    m: &Message,
    out: &mut MsgSet,
    crypts: &mut Vec<Message>,
    log: &mut Vec<Message>,
) {
    if !out.insert(m.clone()) {
        return;
    }
    log.push(m.clone());
    if matches!(m, Message::Crypt(_, _)) {
        crypts.push(m.clone());
    }
    match m {
        Message::Pair(x, y) => {
            descend_parts_logged(x, out, crypts, log);
            descend_parts_logged(y, out, crypts, log);
        }
        Message::Crypt(_, x) => descend_parts_logged(x, out, crypts, log),
        _ => {}
    }
}

#[derive(Default)]
struct Renaming {
    nonces: BTreeMap<u64, u64>,
    sessions: BTreeMap<u64, u64>,
}

fn render_renamed(m: &Message, ren: &mut Renaming, out: &mut String) {
    use std::fmt::Write;
    match m {
        Message::Nonce(n) => {
            let next = ren.nonces.len() as u64;
            let id = *ren.nonces.entry(*n).or_insert(next);
            let _ = write!(out, "Nonce #{id}");
        }
        Message::Key(k) => {
            if let Some(KeyKind::Session(j)) = key_kind(*k) {
                let next = ren.sessions.len() as u64;
                let id = *ren.sessions.entry(j).or_insert(next);
                let _ = write!(out, "Key #s{id}");
            } else {
                let _ = write!(out, "Key {}", k.0);
            }
        }
        Message::Hash(x) => {
            out.push_str("Hash{");
            render_renamed(x, ren, out);
            out.push('}');
        }
        Message::Pair(x, y) => {
            out.push('{');
            render_renamed(x, ren, out);
            out.push(',');
            render_renamed(y, ren, out);
            out.push('}');
        }
        Message::Crypt(k, x) => {
            use std::fmt::Write;
            if let Some(KeyKind::Session(j)) = key_kind(*k) {
                let next = ren.sessions.len() as u64;
                let id = *ren.sessions.entry(j).or_insert(next);
                let _ = write!(out, "Crypt(#s{id}){{");
            } else {
                let _ = write!(out, "Crypt({}){{", k.0);
            }
            render_renamed(x, ren, out);
            out.push('}');
        }
        other => {
            let _ = write!(out, "{other}");
        }
    }
}

fn render_renamed_event(ev: &Event, ren: &mut Renaming, out: &mut String) {
    use std::fmt::Write;
    let _ = write!(out, "{} -> {} : ", ev.sender, ev.recipient);
    render_renamed(&ev.body, ren, out);
}

fn skeleton_message(m: &Message, out: &mut String) {
    use std::fmt::Write;
    match m {
        Message::Nonce(_) => out.push_str("Nonce *"),
        Message::Key(k) => {
            if matches!(key_kind(*k), Some(KeyKind::Session(_))) {
                out.push_str("Key *s");
            } else {
                let _ = write!(out, "Key {}", k.0);
            }
        }
        Message::Hash(x) => {
            out.push_str("Hash{");
            skeleton_message(x, out);
            out.push('}');
        }
        Message::Pair(x, y) => {
            out.push('{');
            skeleton_message(x, out);
            out.push(',');
            skeleton_message(y, out);
            out.push('}');
        }
        Message::Crypt(k, x) => {
            use std::fmt::Write;
            if matches!(key_kind(*k), Some(KeyKind::Session(_))) {
                out.push_str("Crypt(*s){");
            } else {
                let _ = write!(out, "Crypt({}){{", k.0);
            }
            skeleton_message(x, out);
            out.push('}');
        }
        other => {
            use std::fmt::Write;
            let _ = write!(out, "{other}");
        }
    }
}

fn skeleton_string(ev: &Event) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = write!(s, "{} -> {} : ", ev.sender, ev.recipient);
    skeleton_message(&ev.body, &mut s);
    s
}

/// 128-bit FNV-1a, deterministic across runs.
struct Fnv128(u128);

impl Fnv128 {
    fn new() -> Self {
        Fnv128(0x6c62272e07bb014262b821756295c58d)
    }

    fn write_str(&mut self, s: &str) {
        const PRIME: u128 = 0x0000000001000000000000000000013b;
        for b in s.bytes() {
            self.0 ^= b as u128;
            self.0 = self.0.wrapping_mul(PRIME);
        }
    }

    fn finish(&self) -> u128 {
        self.0
    }
}

/// The fresh-nonce pool for one introduction site (rule, variable): the
/// shared pool, or a disjoint slice per site when sessions are bounded
/// per role.
fn nonce_site_pool(
    bounds: &Bounds,
    protocol: &Protocol,
    rule_name: &str,
    var: &str,
) -> Vec<u64> {
    match bounds.nonces_per_role {
        None => bounds.nonce_pool.clone(),
        Some(k) => {
            let k = k as u64;
            let mut site = 0u64;
            for r in &protocol.rules {
                for v in r.newn() {
                    if r.name == rule_name && v == var {
                        return (site * k..(site + 1) * k).collect();
                    }
                    site += 1;
                }
            }
            Vec::new()
        }
    }
}

/// A rule is fresh-dead when some fresh nonce or key position has
/// exhausted its pool; it can never fire again on any extension.
fn rule_fresh_dead(know: &Knowledge<'_>, bounds: &Bounds, rule: &Rule) -> bool {
    let nonces_dead = rule.newn().iter().any(|v| {
        nonce_site_pool(bounds, know.protocol, &rule.name, v)
            .iter()
            .all(|n| know.is_used(&Message::Nonce(*n)))
    });
    let keys_dead = !rule.newk().is_empty()
        && bounds
            .key_pool
            .iter()
            .all(|j| know.is_used(&Message::Key(msg::sessionk(*j))));
    nonces_dead || keys_dead
}

/// Enumerate agent lists over the pool up to `max_len`, shortest first.
fn agent_lists(pool: &[AgentId], max_len: usize) -> Vec<Message> {
    let mut out = vec![list::nil()];
    let mut layer: Vec<Vec<AgentId>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in &layer {
            for &a in pool {
                let mut l = prefix.clone();
                l.push(a);
                out.push(list::agent_list(&l));
                next.push(l);
            }
        }
        layer = next;
    }
    out
}

/// All substitutions enabling `rule` on the current trace: precondition
/// matches extended with pool values for the remaining variables, fresh
/// values for the rule's new nonces and keys, filtered through `ok`.
pub fn rule_instances(
    know: &Knowledge<'_>,
    rule: &Rule,
    bounds: &Bounds,
) -> Vec<Subst> {
    let mut partials = vec![Subst::new()];
    for pre in &rule.pre {
        let mut next = Vec::new();
        for s in &partials {
            for ev in &know.event_set {
                if let Some(s2) = match_event(pre, ev, s, ApplyMode::Strict) {
                    next.push(s2);
                }
            }
        }
        if next.is_empty() {
            return Vec::new();
        }
        partials = next;
    }

    let var_types = rule.var_types();
    let newn = rule.newn();
    let newk = rule.newk();
    let agl_vars: BTreeSet<&String> = rule
        .side
        .iter()
        .filter_map(|sc| match sc {
            SideCondition::AgentList(v) => Some(v),
            _ => None,
        })
        .collect();

    let fresh_keys: Vec<u64> = bounds
        .key_pool
        .iter()
        .copied()
        .filter(|j| !know.is_used(&Message::Key(msg::sessionk(*j))))
        .collect();
    let lists = agent_lists(&bounds.agent_pool, bounds.list_max_len);

    let mut out = Vec::new();
    'outer: for partial in partials {
        let mut candidates: Vec<Subst> = vec![partial];
        let mut nonces_taken = 0usize;
        let mut keys_taken = 0usize;
        for (v, ty) in &var_types {
            if candidates.is_empty() {
                continue 'outer;
            }
            if candidates[0].get(v).is_some() {
                continue;
            }
            let mut next = Vec::new();
            match ty {
                VarType::Agent => {
                    for s in &candidates {
                        for &a in &bounds.agent_pool {
                            let mut s2 = s.clone();
                            s2.bind(v, Binding::Agent(a));
                            next.push(s2);
                        }
                    }
                }
                VarType::Number => {
                    for s in &candidates {
                        for &n in &bounds.number_pool {
                            let mut s2 = s.clone();
                            s2.bind(v, Binding::Number(n));
                            next.push(s2);
                        }
                    }
                }
                VarType::Nonce if newn.contains(v) => {
                    let site: Vec<u64> = nonce_site_pool(bounds, know.protocol, &rule.name, v)
                        .into_iter()
                        .filter(|n| !know.is_used(&Message::Nonce(*n)))
                        .collect();
                    let skip = if bounds.nonces_per_role.is_some() { 0 } else { nonces_taken };
                    let opts: Vec<u64> = if bounds.canonical_fresh {
                        site.iter().skip(skip).take(1).copied().collect()
                    } else {
                        site
                    };
                    nonces_taken += 1;
                    for s in &candidates {
                        for &n in &opts {
                            if s.0.values().any(|b| *b == Binding::Nonce(n)) {
                                continue;
                            }
                            let mut s2 = s.clone();
                            s2.bind(v, Binding::Nonce(n));
                            next.push(s2);
                        }
                    }
                }
                VarType::Key if newk.contains(v) => {
                    let opts: Vec<u64> = if bounds.canonical_fresh {
                        fresh_keys.iter().skip(keys_taken).take(1).copied().collect()
                    } else {
                        fresh_keys.clone()
                    };
                    keys_taken += 1;
                    for s in &candidates {
                        for &j in &opts {
                            let k = msg::sessionk(j);
                            if s.0.values().any(|b| *b == Binding::Key(k)) {
                                continue;
                            }
                            let mut s2 = s.clone();
                            s2.bind(v, Binding::Key(k));
                            next.push(s2);
                        }
                    }
                }
                VarType::Msg if agl_vars.contains(v) => {
                    for s in &candidates {
                        for l in &lists {
                            let mut s2 = s.clone();
                            s2.bind(v, Binding::Msg(l.clone()));
                            next.push(s2);
                        }
                    }
                }
                // Unbound nonces, keys, or plain message variables cannot
                // be guessed by honest agents; the rule does not fire.
                _ => continue 'outer,
            }
            candidates = next;
        }
        out.extend(candidates);
    }

    let used_view = UsedView(know);
    out.retain(|s| {
        matches!(
            ok_with(&know.events_newest_first_tmp(), rule, s, &used_view),
            Ok(true)
        )
    });
    out.sort_by(|a, b| a.cmp(b));
    out.dedup();
    out
}

// `ok` needs trace membership and used-atom queries; serve both from the
// incremental state without materializing sets.
struct UsedView<'a, 'p>(&'a Knowledge<'p>);

impl Knowledge<'_> {
    fn events_newest_first_tmp(&self) -> Vec<Event> {
        self.events.iter().rev().cloned().collect()
    }
}

fn ok_with(
    evs: &[Event],
    r: &Rule,
    s: &Subst,
    used: &UsedView<'_, '_>,
) -> Result<bool, model::ModelError> {
    for pre in &r.pre {
        let inst = ap_event(s, pre)?;
        if !used.0.event_set.contains(&inst) {
            debug_assert!(!evs.contains(&inst));
            return Ok(false);
        }
    }
    for v in r.newn() {
        match s.get(&v) {
            Some(Binding::Nonce(n)) => {
                if used.0.is_used(&Message::Nonce(*n)) {
                    return Ok(false);
                }
            }
            _ => {
                return Err(crate::pattern::PatternError::UnboundVariable(v).into());
            }
        }
    }
    for v in r.newk() {
        match s.get(&v) {
            Some(Binding::Key(k)) => {
                if used.0.is_used(&Message::Key(*k)) {
                    return Ok(false);
                }
            }
            _ => {
                return Err(crate::pattern::PatternError::UnboundVariable(v).into());
            }
        }
    }
    for sc in &r.side {
        if !model::side_condition_holds(sc, s)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Variables a rule mentions outside one designated precondition.
fn vars_outside_precondition(rule: &Rule, skip: usize) -> BTreeSet<String> {
    let mut out = BTreeMap::new();
    for (i, p) in rule.pre.iter().enumerate() {
        if i != skip {
            p.vars(&mut out);
        }
    }
    rule.post.vars(&mut out);
    for sc in &rule.side {
        match sc {
            SideCondition::AgentList(v) => {
                out.insert(v.clone(), VarType::Msg);
            }
            SideCondition::IsIn { elem, list } => {
                elem.vars(&mut out);
                list.vars(&mut out);
            }
        }
    }
    out.into_keys().collect()
}

/// Could the spy ever supply an event matching `ep` consistently with the
/// bindings in `s`? Errs on the side of yes; the hard constraints are the
/// spy sender and that bound nonces, keys, and ground encryption keys are
/// already deducible.
fn spy_fakeable(ep: &EventPattern, s: &Subst, know: &Knowledge<'_>) -> bool {
    let mut s = s.clone();
    match &ep.sender {
        AgentTerm::Const(a) if *a != AgentId::Spy => return false,
        AgentTerm::Const(_) => {}
        AgentTerm::Var(v) => {
            if !s.bind(v, Binding::Agent(AgentId::Spy)) {
                return false;
            }
        }
    }
    fn feasible(p: &Pattern, s: &Subst, know: &Knowledge<'_>) -> bool {
        match p {
            Pattern::Nonce(NatTerm::Const(n)) => know.analz.nonces.contains(n),
            Pattern::Nonce(NatTerm::Var(v)) => match s.get(v) {
                Some(Binding::Nonce(n)) => know.analz.nonces.contains(n),
                _ => !know.analz.nonces.is_empty(),
            },
            Pattern::Key(kt) => match crate::pattern::apm_key(s, kt) {
                Ok(k) => know.analz.keys.contains(&k),
                Err(_) => !know.analz.keys.is_empty(),
            },
            Pattern::Hash(x) => feasible(x, s, know),
            Pattern::Pair(x, y) => feasible(x, s, know) && feasible(y, s, know),
            Pattern::Crypt(kt, x) => {
                let key_ok = match crate::pattern::apm_key(s, kt) {
                    Ok(k) => know.analz.keys.contains(&k),
                    Err(_) => true,
                };
                // Either built with a known key, or replayed whole.
                (key_ok && feasible(x, s, know))
                    || know
                        .analz
                        .set
                        .iter()
                        .any(|m| match_event_body(p, m, s))
            }
            _ => true,
        }
    }
    fn match_event_body(p: &Pattern, m: &Message, s: &Subst) -> bool {
        crate::pattern::match_pattern(p, m, s, ApplyMode::Strict).is_some()
    }
    feasible(&ep.body, &s, know)
}

/// Fake events: instantiations of rule precondition shapes from deducible
/// material, certified by `synth_member` and filtered for relevance. A
/// fake is kept only if the rule it targets can still fire (its fresh
/// pools are not exhausted), it contributes an instance binding no
/// existing event already provides, and the rule's remaining
/// preconditions are satisfiable by existing events or spy-fakeable ones.
/// Pruned fakes cannot change any verdict: they add no deducible atoms
/// and enable no rule instance.
pub fn fake_candidates(
    know: &Knowledge<'_>,
    bounds: &Bounds,
) -> Vec<(Message, AgentId)> {
    let mut seen: BTreeSet<(Message, AgentId)> = BTreeSet::new();
    let analz_nonces: Vec<u64> = know.analz.nonces.iter().copied().collect();
    let analz_keys: Vec<msg::KeyId> = know.analz.keys.iter().copied().collect();
    let mut numbers: Vec<u64> = bounds.number_pool.clone();
    for n in &know.analz.numbers {
        if !numbers.contains(n) {
            numbers.push(*n);
        }
    }
    // Opaque blobs worth replaying into message-variable positions.
    let blobs: Vec<Message> = if bounds.fake_depth == 0 {
        know.analz
            .set
            .iter()
            .filter(|m| matches!(m, Message::Crypt(_, _) | Message::Hash(_)))
            .cloned()
            .collect()
    } else {
        know.analz.set.iter().cloned().collect()
    };

    for rule in &know.protocol.rules {
        if rule_fresh_dead(know, bounds, rule) {
            continue;
        }
        'pre: for (pre_idx, pre) in rule.pre.iter().enumerate() {
            // The spy signs the event; a constant non-spy sender can never
            // be faked.
            let mut base = Subst::new();
            let sender_var = match &pre.sender {
                AgentTerm::Const(a) if *a != AgentId::Spy => continue 'pre,
                AgentTerm::Const(_) => None,
                AgentTerm::Var(v) => {
                    base.bind(v, Binding::Agent(AgentId::Spy));
                    Some(v.clone())
                }
            };
            if pre.body.contains_apply() {
                continue 'pre;
            }
            let outside = vars_outside_precondition(rule, pre_idx);
            // A sender variable used nowhere else is a wildcard: events
            // with any sender provide the same instances.
            let sender_wildcard = sender_var
                .as_ref()
                .is_some_and(|v| !outside.contains(v));

            let mut vars = BTreeMap::new();
            pre.body.vars(&mut vars);
            if let AgentTerm::Var(v) = &pre.recipient {
                vars.insert(v.clone(), VarType::Agent);
            }

            let mut cands = vec![base];
            for (v, ty) in &vars {
                if cands.is_empty() {
                    continue 'pre;
                }
                if cands[0].get(v).is_some() {
                    continue;
                }
                let mut next = Vec::new();
                for s in &cands {
                    match ty {
                        VarType::Agent => {
                            for &a in &bounds.agent_pool {
                                let mut s2 = s.clone();
                                s2.bind(v, Binding::Agent(a));
                                next.push(s2);
                            }
                        }
                        VarType::Nonce => {
                            for &n in &analz_nonces {
                                let mut s2 = s.clone();
                                s2.bind(v, Binding::Nonce(n));
                                next.push(s2);
                            }
                        }
                        VarType::Key => {
                            for &k in &analz_keys {
                                let mut s2 = s.clone();
                                s2.bind(v, Binding::Key(k));
                                next.push(s2);
                            }
                        }
                        VarType::Number => {
                            for &n in &numbers {
                                let mut s2 = s.clone();
                                s2.bind(v, Binding::Number(n));
                                next.push(s2);
                            }
                        }
                        VarType::Msg => {
                            for b in &blobs {
                                let mut s2 = s.clone();
                                s2.bind(v, Binding::Msg(b.clone()));
                                next.push(s2);
                            }
                        }
                    }
                }
                cands = next;
            }

            'cand: for s in cands {
                let Ok(body) = apm(&s, &pre.body) else { continue };
                if !msg::synth_member(&body, &know.analz.set) {
                    continue;
                }
                // Covered: some existing event already yields this
                // instance binding (modulo a wildcard sender).
                let mut relevant = s.clone();
                if sender_wildcard {
                    if let Some(v) = &sender_var {
                        relevant.0.remove(v);
                    }
                }
                for ev in &know.event_set {
                    if let Some(b) = match_event(pre, ev, &Subst::new(), ApplyMode::Strict) {
                        let mut b = b;
                        if sender_wildcard {
                            if let Some(v) = &sender_var {
                                b.0.remove(v);
                            }
                        }
                        if b == relevant {
                            continue 'cand;
                        }
                    }
                }
                // Joinable: every other precondition has a compatible
                // partner, existing or forgeable.
                for (j, other) in rule.pre.iter().enumerate() {
                    if j == pre_idx {
                        continue;
                    }
                    let satisfiable = know
                        .event_set
                        .iter()
                        .any(|ev| match_event(other, ev, &s, ApplyMode::Strict).is_some())
                        || spy_fakeable(other, &s, know);
                    if !satisfiable {
                        continue 'cand;
                    }
                }
                let recipients: Vec<AgentId> = match &pre.recipient {
                    AgentTerm::Const(a) => vec![*a],
                    AgentTerm::Var(v) => match s.get(v) {
                        Some(Binding::Agent(a)) => vec![*a],
                        _ => bounds.agent_pool.clone(),
                    },
                };
                for r in recipients {
                    seen.insert((body.clone(), r));
                }
            }
        }
    }
    seen.into_iter().collect()
}

/// One successor step: the event plus how it would be justified.
#[derive(Debug, Clone)]
pub struct Successor {
    pub event: Event,
    pub step: StepKind,
    /// Index into `Protocol::rules` for rule steps.
    pub rule_idx: Option<usize>,
    pub subst: Option<Subst>,
}

/// Enumerate successors in the canonical order: rules as declared, then
/// intruder steps; duplicates of events already on the trace are dropped.
pub fn successors(know: &Knowledge<'_>, bounds: &Bounds, include_fakes: bool) -> Vec<Successor> {
    let mut out = Vec::new();
    let mut seen: BTreeSet<Event> = BTreeSet::new();
    for (idx, rule) in know.protocol.rules.iter().enumerate() {
        for s in rule_instances(know, rule, bounds) {
            let Ok(event) = ap_event(&s, &rule.post) else { continue };
            if know.event_set.contains(&event) || !seen.insert(event.clone()) {
                continue;
            }
            out.push(Successor {
                event,
                step: StepKind::Rule { rule: rule.name.clone(), subst: s.clone() },
                rule_idx: Some(idx),
                subst: Some(s),
            });
        }
    }
    if include_fakes && know.dangling_fakes.len() < know.max_dangling {
        for (body, recipient) in fake_candidates(know, bounds) {
            let event = Event { sender: AgentId::Spy, recipient, body };
            if know.event_set.contains(&event) || !seen.insert(event.clone()) {
                continue;
            }
            out.push(Successor { event, step: StepKind::Fake, rule_idx: None, subst: None });
        }
    }
    out
}

/// What a visitor sees at each state.
pub struct StateView<'a, 'p> {
    pub know: &'a Knowledge<'p>,
    pub depth: usize,
    /// Enabled rule steps at this state (rule index, substitution, event).
    pub rule_steps: &'a [(usize, Subst, Event)],
    /// Messages added to `parts(spies)` by the newest event (all initial
    /// spy parts at the root).
    pub new_parts: &'a [Message],
}

/// Per-state callback; a returned label flags the current trace in the
/// report.
pub trait Visitor {
    fn visit(&mut self, view: &StateView<'_, '_>) -> Option<String>;
}

impl<F: FnMut(&StateView<'_, '_>) -> Option<String>> Visitor for F {
    fn visit(&mut self, view: &StateView<'_, '_>) -> Option<String> {
        self(view)
    }
}

/// A visitor that flags nothing; for reports that only need counts.
pub struct NullVisitor;

impl Visitor for NullVisitor {
    fn visit(&mut self, _: &StateView<'_, '_>) -> Option<String> {
        None
    }
}

/// Depth-first enumeration of all bounded traces, deduplicated by
/// canonical state. The visitor runs once per distinct state, in a
/// deterministic order for fixed bounds.
pub fn explore(
    protocol: &Protocol,
    bounds: &Bounds,
    visitor: &mut dyn Visitor,
) -> Result<ExploreOutcome, ExploreError> {
    let bounds = bounds.normalized();
    if bounds.agent_pool.is_empty() {
        return Err(ExploreError::BoundsTooSmall("empty agent pool".into()));
    }
    let symmetry = bounds.atom_symmetry && atom_symmetry_applicable(protocol);
    let mut know = Knowledge::new(protocol, &bounds);
    let mut visited: HashMap<u128, usize> = HashMap::new();
    let mut outcome = ExploreOutcome::default();

    let init_parts: Vec<Message> = know.parts_spies.iter().cloned().collect();
    dfs(
        &mut know,
        &bounds,
        symmetry,
        0,
        &init_parts,
        visitor,
        &mut visited,
        &mut outcome,
    );

    if bounds.max_trace_len >= 1 && outcome.states <= 1 && !outcome.truncated {
        // Nothing was reachable from the empty trace.
        let mut probe = Knowledge::new(protocol, &bounds);
        if successors(&mut probe, &bounds, true).is_empty() {
            return Err(ExploreError::BoundsTooSmall(
                "no rule can be instantiated from the configured pools".into(),
            ));
        }
    }
    Ok(outcome)
}

fn atom_symmetry_applicable(p: &Protocol) -> bool {
    p.rules.iter().all(|r| {
        r.pre
            .iter()
            .chain(std::iter::once(&r.post))
            .all(|ep| !ep.body.mentions_nonce_literal() && !ep.body.mentions_session_key_literal())
    })
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    know: &mut Knowledge<'_>,
    bounds: &Bounds,
    symmetry: bool,
    depth: usize,
    new_parts: &[Message],
    visitor: &mut dyn Visitor,
    visited: &mut HashMap<u128, usize>,
    outcome: &mut ExploreOutcome,
) {
    if outcome.expansions >= bounds.max_states {
        outcome.truncated = true;
        return;
    }
    let key = know.canonical_key(symmetry);
    match visited.get(&key) {
        Some(&d) if d <= depth => return,
        Some(_) => {
            visited.insert(key, depth);
        }
        None => {
            visited.insert(key, depth);
            outcome.states += 1;
        }
    }
    outcome.expansions += 1;

    let leaf = depth >= bounds.max_trace_len;
    let succs = successors(know, bounds, !leaf);
    let rule_steps: Vec<(usize, Subst, Event)> = succs
        .iter()
        .filter_map(|s| {
            Some((s.rule_idx?, s.subst.clone()?, s.event.clone()))
        })
        .collect();

    let view = StateView { know, depth, rule_steps: &rule_steps, new_parts };
    if let Some(label) = visitor.visit(&view) {
        outcome.flagged.push(FlaggedTrace {
            label,
            trace: know.trace(),
            provenance: know.provenance_newest_first(),
        });
    }

    if leaf {
        return;
    }
    for succ in succs {
        let delta = know.apply(succ.event.clone(), succ.step.clone());
        let np = delta.parts_added.clone();
        dfs(know, bounds, symmetry, depth + 1, &np, visitor, visited, outcome);
        know.revert(delta);
        if outcome.truncated {
            return;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("step {index}: rule {rule} not found")]
    NoSuchRule { index: usize, rule: String },
    #[error("step {index}: rule {rule} not enabled at its position")]
    NotEnabled { index: usize, rule: String },
    #[error("step {index}: event does not match the rule conclusion instance")]
    WrongEvent { index: usize },
    #[error("step {index}: fake body is not synthesizable from prior traffic")]
    UnsoundFake { index: usize },
    #[error("step {index}: fake sender must be the spy")]
    FakeSender { index: usize },
    #[error("trace and provenance lengths differ")]
    LengthMismatch,
}

/// Re-validate a trace (newest first) against the rule semantics: each
/// event must be justified by its recorded provenance at its position.
pub fn replay(
    protocol: &Protocol,
    bounds: &Bounds,
    trace: &[Event],
    provenance: &[StepKind],
) -> Result<(), ReplayError> {
    if trace.len() != provenance.len() {
        return Err(ReplayError::LengthMismatch);
    }
    let bounds = bounds.normalized();
    let mut know = Knowledge::new(protocol, &bounds);
    for (index, (ev, prov)) in trace.iter().rev().zip(provenance.iter().rev()).enumerate() {
        match prov {
            StepKind::Rule { rule, subst } => {
                let r = know
                    .protocol
                    .rule(rule)
                    .ok_or_else(|| ReplayError::NoSuchRule { index, rule: rule.clone() })?;
                let evs = know.trace();
                let used = UsedView(&know);
                match ok_with(&evs, r, subst, &used) {
                    Ok(true) => {}
                    _ => return Err(ReplayError::NotEnabled { index, rule: rule.clone() }),
                }
                let inst = ap_event(subst, &r.post)
                    .map_err(|_| ReplayError::NotEnabled { index, rule: rule.clone() })?;
                if inst != *ev {
                    return Err(ReplayError::WrongEvent { index });
                }
            }
            StepKind::Fake => {
                if ev.sender != AgentId::Spy {
                    return Err(ReplayError::FakeSender { index });
                }
                if !msg::synth_member(&ev.body, &know.analz.set) {
                    return Err(ReplayError::UnsoundFake { index });
                }
            }
        }
        know.apply(ev.clone(), prov.clone());
    }
    Ok(())
}

/// Public form of the per-rule instance enumeration, reconstructing the
/// knowledge state from a plain trace (newest first).
pub fn enabled_instances(
    evs: &[Event],
    rule: &Rule,
    bounds: &Bounds,
    protocol: &Protocol,
) -> Vec<Subst> {
    let bounds = bounds.normalized();
    let provenance = vec![StepKind::Fake; evs.len()];
    let know = Knowledge::from_trace(protocol, &bounds, evs, &provenance);
    rule_instances(&know, rule, &bounds)
}

/// Public form of the fake-message enumeration: bodies only, per the
/// intruder rule `X ∈ synth(analz(spies evs))`.
pub fn fake_messages(evs: &[Event], protocol: &Protocol, bounds: &Bounds) -> MsgSet {
    let bounds = bounds.normalized();
    let provenance = vec![StepKind::Fake; evs.len()];
    let know = Knowledge::from_trace(protocol, &bounds, evs, &provenance);
    fake_candidates(&know, &bounds)
        .into_iter()
        .map(|(body, _)| body)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{EventPattern, KeyTerm, NatTerm, Pattern};

    fn fr(k: u64) -> AgentId {
        AgentId::Friend(k)
    }

    fn av(v: &str) -> AgentTerm {
        AgentTerm::Var(v.into())
    }

    fn nsl() -> Protocol {
        let ns1 = Rule {
            name: "NS1".into(),
            pre: vec![],
            post: EventPattern {
                sender: av("A"),
                recipient: av("B"),
                body: Pattern::crypt(
                    KeyTerm::Pub(av("B")),
                    Pattern::tuple(vec![
                        Pattern::Nonce(NatTerm::Var("NA".into())),
                        Pattern::Agent(av("A")),
                    ]),
                ),
            },
            side: vec![],
        };
        let ns2 = Rule {
            name: "NS2".into(),
            pre: vec![EventPattern {
                sender: av("A2"),
                recipient: av("B"),
                body: Pattern::crypt(
                    KeyTerm::Pub(av("B")),
                    Pattern::tuple(vec![
                        Pattern::Nonce(NatTerm::Var("NA".into())),
                        Pattern::Agent(av("A")),
                    ]),
                ),
            }],
            post: EventPattern {
                sender: av("B"),
                recipient: av("A"),
                body: Pattern::crypt(
                    KeyTerm::Pub(av("A")),
                    Pattern::tuple(vec![
                        Pattern::Nonce(NatTerm::Var("NA".into())),
                        Pattern::Nonce(NatTerm::Var("NB".into())),
                        Pattern::Agent(av("B")),
                    ]),
                ),
            },
            side: vec![],
        };
        let ns3 = Rule {
            name: "NS3".into(),
            pre: vec![
                EventPattern {
                    sender: av("A"),
                    recipient: av("B"),
                    body: Pattern::crypt(
                        KeyTerm::Pub(av("B")),
                        Pattern::tuple(vec![
                            Pattern::Nonce(NatTerm::Var("NA".into())),
                            Pattern::Agent(av("A")),
                        ]),
                    ),
                },
                EventPattern {
                    sender: av("B2"),
                    recipient: av("A"),
                    body: Pattern::crypt(
                        KeyTerm::Pub(av("A")),
                        Pattern::tuple(vec![
                            Pattern::Nonce(NatTerm::Var("NA".into())),
                            Pattern::Nonce(NatTerm::Var("NB".into())),
                            Pattern::Agent(av("B")),
                        ]),
                    ),
                },
            ],
            post: EventPattern {
                sender: av("A"),
                recipient: av("B"),
                body: Pattern::crypt(
                    KeyTerm::Pub(av("B")),
                    Pattern::Nonce(NatTerm::Var("NB".into())),
                ),
            },
            side: vec![],
        };
        Protocol { name: "nsl".into(), rules: vec![ns1, ns2, ns3], bad: BTreeSet::new() }
    }

    fn small_bounds() -> Bounds {
        Bounds {
            max_trace_len: 3,
            agent_pool: vec![fr(1), fr(2), AgentId::Spy],
            nonce_pool: vec![0, 1, 2, 3],
            ..Bounds::default()
        }
    }

    #[test]
    fn ns1_instance_count_without_canonical_fresh() {
        // Pools {Friend 1, Friend 2} x fresh nonce choices {0, 1}.
        let p = nsl();
        let b = Bounds {
            agent_pool: vec![fr(1), fr(2)],
            nonce_pool: vec![0, 1],
            canonical_fresh: false,
            ..Bounds::default()
        };
        let instances = enabled_instances(&[], p.rule("NS1").unwrap(), &b, &p);
        // Spy is always appended to the pool: 3x3 agent pairs, 2 nonces.
        assert_eq!(instances.len(), 18);

        let b2 = Bounds { canonical_fresh: true, ..b };
        let instances2 = enabled_instances(&[], p.rule("NS1").unwrap(), &b2, &p);
        assert_eq!(instances2.len(), 9);
    }

    #[test]
    fn unsatisfied_preconditions_give_no_instances() {
        let p = nsl();
        let b = small_bounds();
        let instances = enabled_instances(&[], p.rule("NS2").unwrap(), &b, &p);
        assert!(instances.is_empty());
    }

    #[test]
    fn honest_run_is_reachable() {
        let p = nsl();
        let b = small_bounds();
        let mut saw_full_run = false;
        let mut v = |view: &StateView<'_, '_>| -> Option<String> {
            let names: Vec<&str> = view
                .know
                .provenance
                .iter()
                .map(|s| match s {
                    StepKind::Rule { rule, .. } => rule.as_str(),
                    StepKind::Fake => "Fake",
                })
                .collect();
            if names == ["NS1", "NS2", "NS3"] {
                saw_full_run = true;
            }
            None
        };
        explore(&p, &b, &mut v).unwrap();
        assert!(saw_full_run, "honest NS1;NS2;NS3 run must be visited");
    }

    #[test]
    fn zero_length_exploration_visits_only_empty_trace() {
        let p = nsl();
        let b = Bounds { max_trace_len: 0, ..small_bounds() };
        let mut count = 0u32;
        let mut v = |view: &StateView<'_, '_>| -> Option<String> {
            assert!(view.know.events.is_empty());
            count += 1;
            None
        };
        let out = explore(&p, &b, &mut v).unwrap();
        assert_eq!(count, 1);
        assert_eq!(out.states, 1);
    }

    #[test]
    fn exploration_is_deterministic() {
        let p = nsl();
        let b = Bounds { max_trace_len: 4, ..small_bounds() };
        let run = || {
            let mut trace_log: Vec<String> = Vec::new();
            let mut v = |view: &StateView<'_, '_>| -> Option<String> {
                trace_log.push(
                    view.know
                        .events
                        .iter()
                        .map(|e| e.to_string())
                        .collect::<Vec<_>>()
                        .join(" | "),
                );
                None
            };
            let out = explore(&p, &b, &mut v).unwrap();
            (out.states, out.expansions, trace_log)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fake_soundness_postcondition() {
        let p = nsl();
        let b = small_bounds();
        // After an honest message to the spy, the spy can decrypt and
        // re-encrypt the nonce.
        let first = Event {
            sender: fr(1),
            recipient: AgentId::Spy,
            body: Message::crypt(
                msg::pubk(AgentId::Spy),
                Message::pair(Message::Nonce(0), Message::Agent(fr(1))),
            ),
        };
        let evs = vec![first];
        let fakes = fake_messages(&evs, &p, &b);
        assert!(!fakes.is_empty());
        let uni = model::agent_universe(&p, &b.agent_pool);
        let knowledge = msg::analz(&model::spies(&evs, &p, &uni));
        for f in &fakes {
            assert!(msg::synth_member(f, &knowledge), "unsound fake {f}");
        }
        // The spy has learned nonce 0 and can restate it under any public
        // key, e.g. an NS1-shaped message to Friend 2 naming the spy.
        let forged = Message::crypt(
            msg::pubk(fr(2)),
            Message::pair(Message::Nonce(0), Message::Agent(AgentId::Spy)),
        );
        assert!(fakes.contains(&forged));
    }

    #[test]
    fn replay_accepts_explored_traces_and_rejects_tampering() {
        let p = nsl();
        let b = small_bounds();
        let mut captured: Option<(Trace, Vec<StepKind>)> = None;
        let mut v = |view: &StateView<'_, '_>| -> Option<String> {
            if view.depth == 3 && captured.is_none() {
                captured = Some((view.know.trace(), view.know.provenance_newest_first()));
            }
            None
        };
        explore(&p, &b, &mut v).unwrap();
        let (trace, prov) = captured.expect("depth-3 state reached");
        replay(&p, &b, &trace, &prov).unwrap();

        // Dropping the oldest event invalidates later preconditions or
        // freshness for at least one recorded step.
        let mut broken = trace.clone();
        broken.pop();
        let mut broken_prov = prov.clone();
        broken_prov.pop();
        if !broken.is_empty() {
            let r = replay(&p, &b, &broken, &broken_prov);
            // Either still fine (if the dropped event was independent) or a
            // structured error; never a panic. Tamper with the body instead.
            let _ = r;
        }
        let mut tampered = trace;
        tampered[0].body = Message::Nonce(99);
        assert!(replay(&p, &b, &tampered, &prov).is_err());
    }

    #[test]
    fn state_dedup_counts_sets_once() {
        // NS1 twice in the two orders leads to the same event set; the
        // canonical-state dedup must not double-count it.
        let p = Protocol { rules: vec![nsl().rules[0].clone()], ..nsl() };
        let b = Bounds {
            max_trace_len: 2,
            agent_pool: vec![fr(1)],
            nonce_pool: vec![0, 1],
            canonical_fresh: false,
            atom_symmetry: false,
            ..Bounds::default()
        };
        // Agent pool {F1, Spy}: 4 ordered pairs; nonces {0,1}.
        // Depth 1: 8 states. Depth 2: unordered pairs of compatible events.
        let mut leaves = BTreeSet::new();
        let mut v = |view: &StateView<'_, '_>| -> Option<String> {
            if view.depth == 2 {
                leaves.insert(format!("{:?}", view.know.event_set));
            }
            None
        };
        let out = explore(&p, &b, &mut v).unwrap();
        // 4 pairs x 2 nonces = 8 distinct events; sets of two with distinct
        // nonces: 4*4 unordered combinations = 16.
        assert_eq!(leaves.len(), 16);
        assert_eq!(out.states, 1 + 8 + 16);
    }

    #[test]
    fn atom_symmetry_collapses_nonce_renamings() {
        let p = Protocol { rules: vec![nsl().rules[0].clone()], ..nsl() };
        let base = Bounds {
            max_trace_len: 2,
            agent_pool: vec![fr(1)],
            nonce_pool: vec![0, 1],
            canonical_fresh: false,
            ..Bounds::default()
        };
        let mut v = NullVisitor;
        let with_sym = explore(&p, &Bounds { atom_symmetry: true, ..base.clone() }, &mut v)
            .unwrap();
        let without = explore(&p, &Bounds { atom_symmetry: false, ..base }, &mut v).unwrap();
        assert!(with_sym.states < without.states);
    }

    #[test]
    fn bounds_too_small_when_nothing_fires() {
        let p = nsl();
        let b = Bounds {
            max_trace_len: 2,
            nonce_pool: vec![],
            ..small_bounds()
        };
        let mut v = NullVisitor;
        match explore(&p, &b, &mut v) {
            Err(ExploreError::BoundsTooSmall(_)) => {}
            other => panic!("expected BoundsTooSmall, got {other:?}"),
        }
    }
}
