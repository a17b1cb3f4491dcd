//! Message and event patterns with typed variables, substitutions, and
//! first-order matching.
//!
//! Variables come in five types (agent, nonce, key, number, message) and
//! never unify across types. `apm` instantiates a pattern to a ground
//! message; `match_pattern` inverts it, computing the least extension of a
//! substitution making the pattern equal a given message.

use crate::list;
use crate::msg::{self, AgentId, KeyId, Message};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VarType {
    Agent,
    Nonce,
    Key,
    Number,
    Msg,
}

impl fmt::Display for VarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VarType::Agent => "agent",
            VarType::Nonce => "nonce",
            VarType::Key => "key",
            VarType::Number => "num",
            VarType::Msg => "msg",
        };
        write!(f, "{s}")
    }
}

/// An agent position: a constant or an agent variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum AgentTerm {
    Const(AgentId),
    Var(String),
}

/// A natural-number position (nonce or number payload).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum NatTerm {
    Const(u64),
    Var(String),
}

/// A key position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum KeyTerm {
    Const(KeyId),
    Var(String),
    Pub(AgentTerm),
    Pri(AgentTerm),
    Shr(AgentTerm),
}

/// List functions that may appear in rule conclusions; they are evaluated
/// during instantiation, not matched against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ListFn {
    Head,
    App,
    Del,
}

impl fmt::Display for ListFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ListFn::Head => "head",
            ListFn::App => "app",
            ListFn::Del => "del",
        };
        write!(f, "{s}")
    }
}

/// A message with typed variables at selected positions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pattern {
    Number(NatTerm),
    Nonce(NatTerm),
    Agent(AgentTerm),
    Key(KeyTerm),
    Hash(Box<Pattern>),
    Pair(Box<Pattern>, Box<Pattern>),
    Crypt(KeyTerm, Box<Pattern>),
    /// Message variable.
    Var(String),
    /// Computed list expression (conclusion-only).
    Apply(ListFn, Vec<Pattern>),
}

impl Pattern {
    pub fn pair(x: Pattern, y: Pattern) -> Pattern {
        Pattern::Pair(Box::new(x), Box::new(y))
    }

    pub fn crypt(k: KeyTerm, x: Pattern) -> Pattern {
        Pattern::Crypt(k, Box::new(x))
    }

    pub fn hash(x: Pattern) -> Pattern {
        Pattern::Hash(Box::new(x))
    }

    pub fn tuple(items: Vec<Pattern>) -> Pattern {
        let mut it = items.into_iter().rev();
        let last = it.next().expect("tuple of at least one element");
        it.fold(last, |acc, x| Pattern::pair(x, acc))
    }

    pub fn from_message(m: &Message) -> Pattern {
        match m {
            Message::Number(n) => Pattern::Number(NatTerm::Const(*n)),
            Message::Nonce(n) => Pattern::Nonce(NatTerm::Const(*n)),
            Message::Agent(a) => Pattern::Agent(AgentTerm::Const(*a)),
            Message::Key(k) => Pattern::Key(KeyTerm::Const(*k)),
            Message::Hash(x) => Pattern::hash(Pattern::from_message(x)),
            Message::Pair(x, y) => {
                Pattern::pair(Pattern::from_message(x), Pattern::from_message(y))
            }
            Message::Crypt(k, x) => {
                Pattern::crypt(KeyTerm::Const(*k), Pattern::from_message(x))
            }
        }
    }

    /// Collect `(name, type)` for every variable occurrence.
    pub fn vars(&self, out: &mut BTreeMap<String, VarType>) {
        fn agent(t: &AgentTerm, out: &mut BTreeMap<String, VarType>) {
            if let AgentTerm::Var(v) = t {
                out.insert(v.clone(), VarType::Agent);
            }
        }
        fn key(t: &KeyTerm, out: &mut BTreeMap<String, VarType>) {
            match t {
                KeyTerm::Var(v) => {
                    out.insert(v.clone(), VarType::Key);
                }
                KeyTerm::Pub(a) | KeyTerm::Pri(a) | KeyTerm::Shr(a) => agent(a, out),
                KeyTerm::Const(_) => {}
            }
        }
        match self {
            Pattern::Number(NatTerm::Var(v)) => {
                out.insert(v.clone(), VarType::Number);
            }
            Pattern::Nonce(NatTerm::Var(v)) => {
                out.insert(v.clone(), VarType::Nonce);
            }
            Pattern::Agent(a) => agent(a, out),
            Pattern::Key(k) => key(k, out),
            Pattern::Hash(x) => x.vars(out),
            Pattern::Pair(x, y) => {
                x.vars(out);
                y.vars(out);
            }
            Pattern::Crypt(k, x) => {
                key(k, out);
                x.vars(out);
            }
            Pattern::Var(v) => {
                out.insert(v.clone(), VarType::Msg);
            }
            Pattern::Apply(_, args) => {
                for a in args {
                    a.vars(out);
                }
            }
            _ => {}
        }
    }

    pub fn is_ground(&self) -> bool {
        let mut vs = BTreeMap::new();
        self.vars(&mut vs);
        vs.is_empty()
    }

    pub fn contains_apply(&self) -> bool {
        match self {
            Pattern::Apply(_, _) => true,
            Pattern::Hash(x) => x.contains_apply(),
            Pattern::Pair(x, y) => x.contains_apply() || y.contains_apply(),
            Pattern::Crypt(_, x) => x.contains_apply(),
            _ => false,
        }
    }

    /// Does any literal nonce constant occur? Used to decide whether nonce
    /// values are interchangeable for symmetry reduction.
    pub fn mentions_nonce_literal(&self) -> bool {
        match self {
            Pattern::Nonce(NatTerm::Const(_)) => true,
            Pattern::Hash(x) | Pattern::Crypt(_, x) => x.mentions_nonce_literal(),
            Pattern::Pair(x, y) => x.mentions_nonce_literal() || y.mentions_nonce_literal(),
            Pattern::Apply(_, args) => args.iter().any(|a| a.mentions_nonce_literal()),
            _ => false,
        }
    }

    /// Does any literal session-key constant occur?
    pub fn mentions_session_key_literal(&self) -> bool {
        fn key(t: &KeyTerm) -> bool {
            matches!(t, KeyTerm::Const(k) if matches!(msg::key_kind(*k), Some(msg::KeyKind::Session(_))))
        }
        match self {
            Pattern::Key(k) => key(k),
            Pattern::Crypt(k, x) => key(k) || x.mentions_session_key_literal(),
            Pattern::Hash(x) => x.mentions_session_key_literal(),
            Pattern::Pair(x, y) => {
                x.mentions_session_key_literal() || y.mentions_session_key_literal()
            }
            Pattern::Apply(_, args) => args.iter().any(|a| a.mentions_session_key_literal()),
            _ => false,
        }
    }
}

/// An event pattern: sender, recipient and body.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct EventPattern {
    pub sender: AgentTerm,
    pub recipient: AgentTerm,
    pub body: Pattern,
}

impl EventPattern {
    pub fn vars(&self, out: &mut BTreeMap<String, VarType>) {
        if let AgentTerm::Var(v) = &self.sender {
            out.insert(v.clone(), VarType::Agent);
        }
        if let AgentTerm::Var(v) = &self.recipient {
            out.insert(v.clone(), VarType::Agent);
        }
        self.body.vars(out);
    }
}

/// A ground value bound to a variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Binding {
    Agent(AgentId),
    Nonce(u64),
    Key(KeyId),
    Number(u64),
    Msg(Message),
}

impl Binding {
    pub fn var_type(&self) -> VarType {
        match self {
            Binding::Agent(_) => VarType::Agent,
            Binding::Nonce(_) => VarType::Nonce,
            Binding::Key(_) => VarType::Key,
            Binding::Number(_) => VarType::Number,
            Binding::Msg(_) => VarType::Msg,
        }
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binding::Agent(a) => write!(f, "{a}"),
            Binding::Nonce(n) => write!(f, "Nonce {n}"),
            Binding::Key(k) => write!(f, "Key {}", k.0),
            Binding::Number(n) => write!(f, "Number {n}"),
            Binding::Msg(m) => write!(f, "{m}"),
        }
    }
}

/// A well-typed finite map from variable names to ground values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Subst(pub BTreeMap<String, Binding>);

impl Subst {
    pub fn new() -> Self {
        Subst(BTreeMap::new())
    }

    pub fn get(&self, v: &str) -> Option<&Binding> {
        self.0.get(v)
    }

    /// Bind `v`, failing on a conflicting existing binding.
    pub fn bind(&mut self, v: &str, b: Binding) -> bool {
        match self.0.get(v) {
            Some(prev) => *prev == b,
            None => {
                self.0.insert(v.to_string(), b);
                true
            }
        }
    }
}

impl fmt::Display for Subst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        write!(f, "[")?;
        for (v, b) in &self.0 {
            if !first {
                write!(f, ", ")?;
            }
            first = false;
            write!(f, "${v} := {b}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("unbound variable ${0}")]
    UnboundVariable(String),
    #[error("variable ${var} bound to {found}, expected {expected}")]
    TypeMismatch { var: String, expected: VarType, found: VarType },
    #[error("list operation {0} applied to malformed list")]
    MalformedList(ListFn),
}

fn apm_agent(s: &Subst, t: &AgentTerm) -> Result<AgentId, PatternError> {
    match t {
        AgentTerm::Const(a) => Ok(*a),
        AgentTerm::Var(v) => match s.get(v) {
            Some(Binding::Agent(a)) => Ok(*a),
            Some(b) => Err(PatternError::TypeMismatch {
                var: v.clone(),
                expected: VarType::Agent,
                found: b.var_type(),
            }),
            None => Err(PatternError::UnboundVariable(v.clone())),
        },
    }
}

pub fn apm_key(s: &Subst, t: &KeyTerm) -> Result<KeyId, PatternError> {
    match t {
        KeyTerm::Const(k) => Ok(*k),
        KeyTerm::Var(v) => match s.get(v) {
            Some(Binding::Key(k)) => Ok(*k),
            Some(b) => Err(PatternError::TypeMismatch {
                var: v.clone(),
                expected: VarType::Key,
                found: b.var_type(),
            }),
            None => Err(PatternError::UnboundVariable(v.clone())),
        },
        KeyTerm::Pub(a) => Ok(msg::pubk(apm_agent(s, a)?)),
        KeyTerm::Pri(a) => Ok(msg::prik(apm_agent(s, a)?)),
        KeyTerm::Shr(a) => Ok(msg::shrk(apm_agent(s, a)?)),
    }
}

fn apm_nat(s: &Subst, t: &NatTerm, ty: VarType) -> Result<u64, PatternError> {
    match t {
        NatTerm::Const(n) => Ok(*n),
        NatTerm::Var(v) => match (s.get(v), ty) {
            (Some(Binding::Nonce(n)), VarType::Nonce) => Ok(*n),
            (Some(Binding::Number(n)), VarType::Number) => Ok(*n),
            (Some(b), _) => Err(PatternError::TypeMismatch {
                var: v.clone(),
                expected: ty,
                found: b.var_type(),
            }),
            (None, _) => Err(PatternError::UnboundVariable(v.clone())),
        },
    }
}

/// Instantiate a pattern under `s` to a ground message. List functions in
/// the pattern are evaluated on the instantiated arguments.
pub fn apm(s: &Subst, p: &Pattern) -> Result<Message, PatternError> {
    match p {
        Pattern::Number(t) => Ok(Message::Number(apm_nat(s, t, VarType::Number)?)),
        Pattern::Nonce(t) => Ok(Message::Nonce(apm_nat(s, t, VarType::Nonce)?)),
        Pattern::Agent(t) => Ok(Message::Agent(apm_agent(s, t)?)),
        Pattern::Key(t) => Ok(Message::Key(apm_key(s, t)?)),
        Pattern::Hash(x) => Ok(Message::hash(apm(s, x)?)),
        Pattern::Pair(x, y) => Ok(Message::pair(apm(s, x)?, apm(s, y)?)),
        Pattern::Crypt(k, x) => Ok(Message::crypt(apm_key(s, k)?, apm(s, x)?)),
        Pattern::Var(v) => match s.get(v) {
            Some(Binding::Msg(m)) => Ok(m.clone()),
            Some(b) => Err(PatternError::TypeMismatch {
                var: v.clone(),
                expected: VarType::Msg,
                found: b.var_type(),
            }),
            None => Err(PatternError::UnboundVariable(v.clone())),
        },
        Pattern::Apply(f, args) => {
            let ground: Vec<Message> =
                args.iter().map(|a| apm(s, a)).collect::<Result<_, _>>()?;
            let bad = || PatternError::MalformedList(*f);
            match f {
                ListFn::Head => list::head(&ground[0]).map_err(|_| bad()),
                ListFn::App => list::app(&ground[0], &ground[1]).map_err(|_| bad()),
                ListFn::Del => list::del(&ground[0], &ground[1]).map_err(|_| bad()),
            }
        }
    }
}

/// Instantiate an event pattern.
pub fn ap_event(s: &Subst, ep: &EventPattern) -> Result<crate::model::Event, PatternError> {
    Ok(crate::model::Event {
        sender: apm_agent(s, &ep.sender)?,
        recipient: apm_agent(s, &ep.recipient)?,
        body: apm(s, &ep.body)?,
    })
}

fn match_agent(t: &AgentTerm, a: AgentId, s: &mut Subst) -> bool {
    match t {
        AgentTerm::Const(c) => *c == a,
        AgentTerm::Var(v) => s.bind(v, Binding::Agent(a)),
    }
}

fn match_key(t: &KeyTerm, k: KeyId, s: &mut Subst) -> bool {
    match t {
        KeyTerm::Const(c) => *c == k,
        KeyTerm::Var(v) => s.bind(v, Binding::Key(k)),
        KeyTerm::Pub(a) => match msg::key_kind(k) {
            Some(msg::KeyKind::Pub(owner)) => match_agent(a, owner, s),
            _ => false,
        },
        KeyTerm::Pri(a) => match msg::key_kind(k) {
            Some(msg::KeyKind::Pri(owner)) => match_agent(a, owner, s),
            _ => false,
        },
        KeyTerm::Shr(a) => match msg::key_kind(k) {
            Some(msg::KeyKind::Shr(owner)) => match_agent(a, owner, s),
            _ => false,
        },
    }
}

/// How computed list expressions behave during matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyMode {
    /// Patterns containing `Apply` never match (preconditions are
    /// required to be `Apply`-free).
    Strict,
    /// `Apply` subtrees match anything and bind nothing; used when
    /// recognizing instances of rule conclusions whose list arguments are
    /// not recoverable from the message alone.
    Wildcard,
}

fn match_inner(p: &Pattern, m: &Message, s: &mut Subst, mode: ApplyMode) -> bool {
    match (p, m) {
        (Pattern::Number(NatTerm::Const(c)), Message::Number(n)) => c == n,
        (Pattern::Number(NatTerm::Var(v)), Message::Number(n)) => {
            s.bind(v, Binding::Number(*n))
        }
        (Pattern::Nonce(NatTerm::Const(c)), Message::Nonce(n)) => c == n,
        (Pattern::Nonce(NatTerm::Var(v)), Message::Nonce(n)) => s.bind(v, Binding::Nonce(*n)),
        (Pattern::Agent(t), Message::Agent(a)) => match_agent(t, *a, s),
        (Pattern::Key(t), Message::Key(k)) => match_key(t, *k, s),
        (Pattern::Hash(x), Message::Hash(b)) => match_inner(x, b, s, mode),
        (Pattern::Pair(x, y), Message::Pair(a, b)) => {
            match_inner(x, a, s, mode) && match_inner(y, b, s, mode)
        }
        (Pattern::Crypt(kt, x), Message::Crypt(k, b)) => {
            match_key(kt, *k, s) && match_inner(x, b, s, mode)
        }
        (Pattern::Var(v), m) => s.bind(v, Binding::Msg(m.clone())),
        (Pattern::Apply(_, _), _) => mode == ApplyMode::Wildcard,
        _ => false,
    }
}

/// First-order matching: the least extension of `s0` with
/// `apm(s, p) = m`, or `None`.
pub fn match_pattern(p: &Pattern, m: &Message, s0: &Subst, mode: ApplyMode) -> Option<Subst> {
    let mut s = s0.clone();
    if match_inner(p, m, &mut s, mode) {
        Some(s)
    } else {
        None
    }
}

/// Match an event pattern against a concrete event.
pub fn match_event(
    ep: &EventPattern,
    ev: &crate::model::Event,
    s0: &Subst,
    mode: ApplyMode,
) -> Option<Subst> {
    let mut s = s0.clone();
    if match_agent(&ep.sender, ev.sender, &mut s)
        && match_agent(&ep.recipient, ev.recipient, &mut s)
        && match_inner(&ep.body, &ev.body, &mut s, mode)
    {
        Some(s)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msg::pubk;

    fn fr(k: u64) -> AgentId {
        AgentId::Friend(k)
    }

    #[test]
    fn apm_identity_on_ground() {
        let p = Pattern::Nonce(NatTerm::Const(3));
        assert_eq!(apm(&Subst::new(), &p), Ok(Message::Nonce(3)));
    }

    #[test]
    fn apm_substitutes_structurally() {
        let mut s = Subst::new();
        s.bind("NA", Binding::Nonce(5));
        s.bind("A", Binding::Agent(fr(1)));
        s.bind("B", Binding::Agent(fr(2)));
        let p = Pattern::crypt(
            KeyTerm::Pub(AgentTerm::Var("B".into())),
            Pattern::pair(
                Pattern::Nonce(NatTerm::Var("NA".into())),
                Pattern::Agent(AgentTerm::Var("A".into())),
            ),
        );
        let want = Message::crypt(
            pubk(fr(2)),
            Message::pair(Message::Nonce(5), Message::Agent(fr(1))),
        );
        assert_eq!(apm(&s, &p), Ok(want));
    }

    #[test]
    fn apm_unbound_variable_errors() {
        let p = Pattern::Nonce(NatTerm::Var("NA".into()));
        assert_eq!(
            apm(&Subst::new(), &p),
            Err(PatternError::UnboundVariable("NA".into()))
        );
    }

    #[test]
    fn match_binds_nonce_var() {
        let p = Pattern::Nonce(NatTerm::Var("NA".into()));
        let got = match_pattern(&p, &Message::Nonce(5), &Subst::new(), ApplyMode::Strict)
            .expect("match");
        assert_eq!(got.get("NA"), Some(&Binding::Nonce(5)));
    }

    #[test]
    fn match_rejects_conflicting_binding() {
        let p = Pattern::pair(
            Pattern::Agent(AgentTerm::Var("A".into())),
            Pattern::Agent(AgentTerm::Var("A".into())),
        );
        let m = Message::pair(Message::Agent(AgentId::Spy), Message::Agent(AgentId::Server));
        assert!(match_pattern(&p, &m, &Subst::new(), ApplyMode::Strict).is_none());
    }

    #[test]
    fn match_binds_key_and_msg_vars() {
        let p = Pattern::crypt(KeyTerm::Var("K".into()), Pattern::Var("X".into()));
        let m = Message::crypt(msg::shrk(fr(2)), Message::Nonce(1));
        let s = match_pattern(&p, &m, &Subst::new(), ApplyMode::Strict).expect("match");
        assert_eq!(s.get("K"), Some(&Binding::Key(msg::shrk(fr(2)))));
        assert_eq!(s.get("X"), Some(&Binding::Msg(Message::Nonce(1))));
        // Round-trip through apm.
        assert_eq!(apm(&s, &p), Ok(m));
    }

    #[test]
    fn match_key_shape_binds_owner() {
        let p = Pattern::Key(KeyTerm::Pub(AgentTerm::Var("B".into())));
        let s = match_pattern(
            &p,
            &Message::Key(pubk(fr(4))),
            &Subst::new(),
            ApplyMode::Strict,
        )
        .expect("match");
        assert_eq!(s.get("B"), Some(&Binding::Agent(fr(4))));
        assert!(match_pattern(
            &p,
            &Message::Key(msg::prik(fr(4))),
            &Subst::new(),
            ApplyMode::Strict
        )
        .is_none());
    }

    #[test]
    fn apply_evaluates_in_apm() {
        let mut s = Subst::new();
        s.bind(
            "L",
            Binding::Msg(list::cons(Message::Nonce(9), list::nil())),
        );
        let p = Pattern::Apply(ListFn::Head, vec![Pattern::Var("L".into())]);
        assert_eq!(apm(&s, &p), Ok(Message::Nonce(9)));
        // Strict matching refuses Apply, wildcard accepts it.
        assert!(
            match_pattern(&p, &Message::Nonce(9), &Subst::new(), ApplyMode::Strict).is_none()
        );
        assert!(
            match_pattern(&p, &Message::Nonce(9), &Subst::new(), ApplyMode::Wildcard).is_some()
        );
    }
}
