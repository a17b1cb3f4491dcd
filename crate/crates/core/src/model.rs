//! Protocols as rule sets over event patterns, and the trace-level
//! knowledge functions: initial states, spy knowledge, used atoms, and the
//! firing condition `ok`.

use crate::msg::{self, AgentId, Message, MsgSet};
use crate::pattern::{
    apm, ap_event, match_event, ApplyMode, EventPattern, Pattern, Subst, VarType,
};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// `Says sender recipient body`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub sender: AgentId,
    pub recipient: AgentId,
    pub body: Message,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {} : {}", self.sender, self.recipient, self.body)
    }
}

/// A trace is a sequence of events, most recent first.
pub type Trace = Vec<Event>;

/// Side conditions a rule may impose beyond pattern matching.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SideCondition {
    /// The variable must be bound to a list of agent names.
    AgentList(String),
    /// `isin(elem, list)` on the instantiated patterns.
    IsIn { elem: Pattern, list: Pattern },
}

/// A named rule: precondition event patterns and one conclusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub pre: Vec<EventPattern>,
    pub post: EventPattern,
    pub side: Vec<SideCondition>,
}

impl Rule {
    pub fn var_types(&self) -> BTreeMap<String, VarType> {
        let mut out = BTreeMap::new();
        for p in &self.pre {
            p.vars(&mut out);
        }
        self.post.vars(&mut out);
        for sc in &self.side {
            match sc {
                SideCondition::AgentList(v) => {
                    out.entry(v.clone()).or_insert(VarType::Msg);
                }
                SideCondition::IsIn { elem, list } => {
                    elem.vars(&mut out);
                    list.vars(&mut out);
                }
            }
        }
        out
    }

    fn pre_vars(&self) -> BTreeMap<String, VarType> {
        let mut out = BTreeMap::new();
        for p in &self.pre {
            p.vars(&mut out);
        }
        out
    }

    /// Nonce variables of the conclusion absent from every precondition:
    /// the rule's fresh nonces.
    pub fn newn(&self) -> BTreeSet<String> {
        let pre = self.pre_vars();
        let mut post = BTreeMap::new();
        self.post.vars(&mut post);
        post.into_iter()
            .filter(|(v, t)| *t == VarType::Nonce && !pre.contains_key(v))
            .map(|(v, _)| v)
            .collect()
    }

    /// Key variables of the conclusion absent from every precondition:
    /// fresh session keys (the server rules of Otway-Rees and Yahalom).
    pub fn newk(&self) -> BTreeSet<String> {
        let pre = self.pre_vars();
        let mut post = BTreeMap::new();
        self.post.vars(&mut post);
        post.into_iter()
            .filter(|(v, t)| *t == VarType::Key && !pre.contains_key(v))
            .map(|(v, _)| v)
            .collect()
    }
}

/// A protocol: an ordered rule set plus the compromised agents. The spy is
/// always treated as compromised; `bad` lists additional colluders.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Protocol {
    pub name: String,
    pub rules: Vec<Rule>,
    pub bad: BTreeSet<AgentId>,
}

impl Protocol {
    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn is_bad(&self, a: AgentId) -> bool {
        a == AgentId::Spy || self.bad.contains(&a)
    }

    /// Agent constants mentioned anywhere in the rules.
    pub fn agent_constants(&self) -> BTreeSet<AgentId> {
        fn from_pattern(p: &Pattern, out: &mut BTreeSet<AgentId>) {
            use crate::pattern::{AgentTerm, KeyTerm};
            fn key(t: &KeyTerm, out: &mut BTreeSet<AgentId>) {
                if let KeyTerm::Pub(AgentTerm::Const(a))
                | KeyTerm::Pri(AgentTerm::Const(a))
                | KeyTerm::Shr(AgentTerm::Const(a)) = t
                {
                    out.insert(*a);
                }
            }
            match p {
                Pattern::Agent(AgentTerm::Const(a)) => {
                    out.insert(*a);
                }
                Pattern::Key(k) => key(k, out),
                Pattern::Crypt(k, x) => {
                    key(k, out);
                    from_pattern(x, out);
                }
                Pattern::Hash(x) => from_pattern(x, out),
                Pattern::Pair(x, y) => {
                    from_pattern(x, out);
                    from_pattern(y, out);
                }
                Pattern::Apply(_, args) => args.iter().for_each(|a| from_pattern(a, out)),
                _ => {}
            }
        }
        let mut out = BTreeSet::new();
        for r in &self.rules {
            for ep in r.pre.iter().chain(std::iter::once(&r.post)) {
                if let crate::pattern::AgentTerm::Const(a) = ep.sender {
                    out.insert(a);
                }
                if let crate::pattern::AgentTerm::Const(a) = ep.recipient {
                    out.insert(a);
                }
                from_pattern(&ep.body, &mut out);
            }
        }
        out
    }
}

/// The closed world of agents for a run: the configured pool, the spy, the
/// compromised agents, and every agent constant in the rules.
pub fn agent_universe(p: &Protocol, pool: &[AgentId]) -> BTreeSet<AgentId> {
    let mut out: BTreeSet<AgentId> = pool.iter().copied().collect();
    out.insert(AgentId::Spy);
    out.extend(p.bad.iter().copied());
    out.extend(p.agent_constants());
    out
}

/// An agent's initial knowledge: every agent name, every public key, its
/// own private and shared key. The spy additionally holds the private and
/// shared keys of compromised agents.
pub fn init_state(a: AgentId, p: &Protocol, universe: &BTreeSet<AgentId>) -> MsgSet {
    let mut out = MsgSet::new();
    for &b in universe {
        out.insert(Message::Agent(b));
        out.insert(Message::Key(msg::pubk(b)));
    }
    out.insert(Message::Key(msg::prik(a)));
    out.insert(Message::Key(msg::shrk(a)));
    if a == AgentId::Spy {
        for &b in universe {
            if p.is_bad(b) {
                out.insert(Message::Key(msg::prik(b)));
                out.insert(Message::Key(msg::shrk(b)));
            }
        }
    }
    out
}

/// The spy's view of a trace: its initial knowledge plus every message
/// body sent so far.
pub fn spies(evs: &[Event], p: &Protocol, universe: &BTreeSet<AgentId>) -> MsgSet {
    let mut out = init_state(AgentId::Spy, p, universe);
    for ev in evs {
        out.insert(ev.body.clone());
    }
    out
}

/// Parts of every sent message and of every agent's initial knowledge.
pub fn used(evs: &[Event], p: &Protocol, universe: &BTreeSet<AgentId>) -> MsgSet {
    let mut base = MsgSet::new();
    for &a in universe {
        base.extend(init_state(a, p, universe));
    }
    for ev in evs {
        base.insert(ev.body.clone());
    }
    msg::parts(&base)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Pattern(#[from] crate::pattern::PatternError),
}

/// Can the `s`-instance of `r` extend `evs`? Every instantiated
/// precondition must occur, and every fresh nonce or key image must be
/// unused.
pub fn ok(
    evs: &[Event],
    r: &Rule,
    s: &Subst,
    used_set: &MsgSet,
) -> Result<bool, ModelError> {
    for pre in &r.pre {
        let inst = ap_event(s, pre)?;
        if !evs.contains(&inst) {
            return Ok(false);
        }
    }
    for v in r.newn() {
        match s.get(&v) {
            Some(crate::pattern::Binding::Nonce(n)) => {
                if used_set.contains(&Message::Nonce(*n)) {
                    return Ok(false);
                }
            }
            _ => return Err(crate::pattern::PatternError::UnboundVariable(v).into()),
        }
    }
    for v in r.newk() {
        match s.get(&v) {
            Some(crate::pattern::Binding::Key(k)) => {
                if used_set.contains(&Message::Key(*k)) {
                    return Ok(false);
                }
            }
            _ => return Err(crate::pattern::PatternError::UnboundVariable(v).into()),
        }
    }
    for sc in &r.side {
        if !side_condition_holds(sc, s)? {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn side_condition_holds(sc: &SideCondition, s: &Subst) -> Result<bool, ModelError> {
    match sc {
        SideCondition::AgentList(v) => match s.get(v) {
            Some(crate::pattern::Binding::Msg(m)) => Ok(crate::list::is_agent_list(m)),
            Some(_) => Ok(false),
            None => Err(crate::pattern::PatternError::UnboundVariable(v.clone()).into()),
        },
        SideCondition::IsIn { elem, list } => {
            let e = apm(s, elem)?;
            let l = apm(s, list)?;
            Ok(crate::list::isin(&e, &l).unwrap_or(false))
        }
    }
}

/// Instances of a rule's conclusion found among the events of a trace.
/// List expressions in the conclusion match as wildcards, since their
/// arguments are not recoverable from the message alone; the substitutions
/// returned bind every structurally visible variable.
pub fn conclusion_instances(evs: &BTreeSet<Event>, r: &Rule) -> Vec<(Event, Subst)> {
    let mut out = Vec::new();
    for ev in evs {
        if let Some(s) = match_event(&r.post, ev, &Subst::new(), ApplyMode::Wildcard) {
            out.push((ev.clone(), s));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{AgentTerm, KeyTerm, NatTerm};

    fn fr(k: u64) -> AgentId {
        AgentId::Friend(k)
    }

    fn av(v: &str) -> AgentTerm {
        AgentTerm::Var(v.into())
    }

    /// NS1: fresh NA, no preconditions.
    fn ns1() -> Rule {
        Rule {
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
        }
    }

    fn ns2() -> Rule {
        Rule {
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
        }
    }

    #[test]
    fn newn_collects_fresh_nonces() {
        assert_eq!(ns1().newn(), BTreeSet::from(["NA".to_string()]));
        assert_eq!(ns2().newn(), BTreeSet::from(["NB".to_string()]));
    }

    #[test]
    fn init_state_contents() {
        let p = Protocol {
            name: "t".into(),
            rules: vec![],
            bad: BTreeSet::from([fr(2)]),
        };
        let uni = agent_universe(&p, &[fr(1), fr(2)]);
        assert!(uni.contains(&AgentId::Spy));

        let honest = init_state(fr(1), &p, &uni);
        assert!(honest.contains(&Message::Key(msg::prik(fr(1)))));
        assert!(honest.contains(&Message::Key(msg::pubk(fr(2)))));
        assert!(!honest.contains(&Message::Key(msg::prik(fr(2)))));

        let spy = init_state(AgentId::Spy, &p, &uni);
        assert!(spy.contains(&Message::Key(msg::prik(fr(2)))));
        assert!(spy.contains(&Message::Key(msg::shrk(fr(2)))));
        assert!(spy.contains(&Message::Key(msg::prik(AgentId::Spy))));
        assert!(!spy.contains(&Message::Key(msg::prik(fr(1)))));
    }

    #[test]
    fn server_knows_its_shared_key() {
        let p = Protocol::default();
        let uni = BTreeSet::from([AgentId::Server, AgentId::Spy]);
        let st = init_state(AgentId::Server, &p, &uni);
        assert!(st.contains(&Message::Key(msg::shrk(AgentId::Server))));
    }

    #[test]
    fn spies_accumulates_traffic() {
        let p = Protocol::default();
        let uni = agent_universe(&p, &[fr(1), fr(2)]);
        let empty = spies(&[], &p, &uni);
        assert_eq!(empty, init_state(AgentId::Spy, &p, &uni));

        let m = Message::Nonce(4);
        let evs = vec![Event { sender: fr(1), recipient: fr(2), body: m.clone() }];
        let mut want = empty;
        want.insert(m);
        assert_eq!(spies(&evs, &p, &uni), want);
    }

    #[test]
    fn used_contains_sent_nonces() {
        let p = Protocol::default();
        let uni = agent_universe(&p, &[fr(1)]);
        let evs = vec![Event {
            sender: fr(1),
            recipient: AgentId::Spy,
            body: Message::crypt(msg::pubk(fr(1)), Message::Nonce(9)),
        }];
        assert!(used(&evs, &p, &uni).contains(&Message::Nonce(9)));
        assert!(!used(&[], &p, &uni).contains(&Message::Nonce(9)));
    }

    #[test]
    fn ok_requires_fresh_nonce_and_preconditions() {
        let p = Protocol { name: "ns".into(), rules: vec![ns1(), ns2()], bad: BTreeSet::new() };
        let uni = agent_universe(&p, &[fr(1), fr(2)]);

        let mut s = Subst::new();
        s.bind("A", crate::pattern::Binding::Agent(fr(1)));
        s.bind("B", crate::pattern::Binding::Agent(fr(2)));
        s.bind("NA", crate::pattern::Binding::Nonce(0));
        let u0 = used(&[], &p, &uni);
        assert!(ok(&[], &ns1(), &s, &u0).unwrap());

        // Same nonce already on the wire: refused.
        let ev = ap_event(&s, &ns1().post).unwrap();
        let evs = vec![ev];
        let u1 = used(&evs, &p, &uni);
        assert!(!ok(&evs, &ns1(), &s, &u1).unwrap());

        // NS2 without the matching NS1 event: refused.
        let mut s2 = Subst::new();
        s2.bind("A", crate::pattern::Binding::Agent(fr(1)));
        s2.bind("A2", crate::pattern::Binding::Agent(fr(1)));
        s2.bind("B", crate::pattern::Binding::Agent(fr(2)));
        s2.bind("NA", crate::pattern::Binding::Nonce(7));
        s2.bind("NB", crate::pattern::Binding::Nonce(1));
        assert!(!ok(&[], &ns2(), &s2, &u0).unwrap());
    }
}
