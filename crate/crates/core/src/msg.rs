//! The message term algebra and the closure operators over message sets.
//!
//! Messages form a free algebra: constructors are injective with pairwise
//! distinct images, so structural equality is the only equality (perfect
//! encryption, collision-free hashing). Sets of messages are `BTreeSet`s,
//! which gives canonical, order-insensitive equality and a deterministic
//! iteration order used everywhere tie-breaking matters.

use std::collections::BTreeSet;
use std::fmt;

/// A protocol participant. Friend indices are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentId {
    Server,
    Friend(u64),
    Spy,
}

impl AgentId {
    /// Injective numbering used to derive key identifiers.
    pub fn index(self) -> u64 {
        match self {
            AgentId::Server => 0,
            AgentId::Spy => 1,
            AgentId::Friend(k) => k + 2,
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Server => write!(f, "Server"),
            AgentId::Friend(k) => write!(f, "Friend {k}"),
            AgentId::Spy => write!(f, "Spy"),
        }
    }
}

/// Key identifier. Keys are naturals laid out so that the public, private
/// and shared key of each agent, and every session key, are pairwise
/// distinct, with a total involutive `inv`.
///
/// Layout: agent with index `i` owns `pubK = 6i`, `priK = 6i + 1`,
/// `shrK = 6i + 2`; session key `j` is `6j + 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyId(pub u64);

pub fn pubk(a: AgentId) -> KeyId {
    KeyId(6 * a.index())
}

pub fn prik(a: AgentId) -> KeyId {
    KeyId(6 * a.index() + 1)
}

pub fn shrk(a: AgentId) -> KeyId {
    KeyId(6 * a.index() + 2)
}

pub fn sessionk(j: u64) -> KeyId {
    KeyId(6 * j + 3)
}

/// The inverse-key involution: `inv(pubK A) = priK A` and back; shared and
/// session keys are self-inverse.
pub fn inv(k: KeyId) -> KeyId {
    match k.0 % 6 {
        0 => KeyId(k.0 + 1),
        1 => KeyId(k.0 - 1),
        _ => k,
    }
}

/// What role a key identifier plays under the fixed numbering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    Pub(AgentId),
    Pri(AgentId),
    Shr(AgentId),
    Session(u64),
}

fn agent_of_index(i: u64) -> AgentId {
    match i {
        0 => AgentId::Server,
        1 => AgentId::Spy,
        k => AgentId::Friend(k - 2),
    }
}

/// Classify a key identifier. Residues 4 and 5 are never produced by the
/// constructors above.
pub fn key_kind(k: KeyId) -> Option<KeyKind> {
    let (q, r) = (k.0 / 6, k.0 % 6);
    match r {
        0 => Some(KeyKind::Pub(agent_of_index(q))),
        1 => Some(KeyKind::Pri(agent_of_index(q))),
        2 => Some(KeyKind::Shr(agent_of_index(q))),
        3 => Some(KeyKind::Session(q)),
        _ => None,
    }
}

/// A message term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Message {
    /// Guessable atom.
    Number(u64),
    /// Unguessable atom.
    Nonce(u64),
    Agent(AgentId),
    Key(KeyId),
    Hash(Box<Message>),
    Pair(Box<Message>, Box<Message>),
    Crypt(KeyId, Box<Message>),
}

impl Message {
    pub fn pair(x: Message, y: Message) -> Message {
        Message::Pair(Box::new(x), Box::new(y))
    }

    pub fn crypt(k: KeyId, x: Message) -> Message {
        Message::Crypt(k, Box::new(x))
    }

    pub fn hash(x: Message) -> Message {
        Message::Hash(Box::new(x))
    }

    /// Right-nested tuple, the rendering of the paper-style `{X, Y, Z}`.
    pub fn tuple(items: Vec<Message>) -> Message {
        let mut it = items.into_iter().rev();
        let last = it.next().expect("tuple of at least one element");
        it.fold(last, |acc, x| Message::pair(x, acc))
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Number(n) => write!(f, "Number {n}"),
            Message::Nonce(n) => write!(f, "Nonce {n}"),
            Message::Agent(a) => write!(f, "Agent {a}"),
            Message::Key(k) => write!(f, "Key {}", k.0),
            Message::Hash(x) => write!(f, "Hash{{{x}}}"),
            Message::Pair(x, y) => {
                // Right-nested pairs flatten to one n-ary brace group.
                write!(f, "{{{x}")?;
                let mut rest: &Message = y;
                while let Message::Pair(a, b) = rest {
                    write!(f, ", {a}")?;
                    rest = b;
                }
                write!(f, ", {rest}}}")
            }
            Message::Crypt(k, x) => write!(f, "Crypt({}){{{x}}}", k.0),
        }
    }
}

/// Finite set of messages with canonical equality.
pub type MsgSet = BTreeSet<Message>;

/// Convenience constructor for literal sets.
pub fn msg_set<I: IntoIterator<Item = Message>>(items: I) -> MsgSet {
    items.into_iter().collect()
}

fn parts_descend(m: &Message, out: &mut MsgSet) {
    if !out.insert(m.clone()) {
        return;
    }
    match m {
        Message::Pair(x, y) => {
            parts_descend(x, out);
            parts_descend(y, out);
        }
        Message::Crypt(_, x) => parts_descend(x, out),
        // `X` is not a part of `Hash X`.
        _ => {}
    }
}

/// All actual sub-components of a set: the least superset closed under
/// splitting pairs and opening encryptions. Hash bodies are not parts.
pub fn parts(h: &MsgSet) -> MsgSet {
    let mut out = MsgSet::new();
    for m in h {
        parts_descend(m, &mut out);
    }
    out
}

/// Everything deducible from `h` by splitting pairs and decrypting with
/// deducible keys, computed by saturation to fixpoint.
pub fn analz(h: &MsgSet) -> MsgSet {
    let mut st = AnalzState::new();
    for m in h {
        st.insert(m.clone());
    }
    st.set
}

/// Saturation state for `analz`, supporting incremental insertion.
///
/// The exploration engine feeds one message at a time and undoes the
/// resulting additions when backtracking; `delta` insertion returns every
/// element the saturation actually added.
#[derive(Debug, Clone, Default)]
pub struct AnalzState {
    pub set: MsgSet,
    /// Keys `k` with `Key k` in the set (decryption capability is `inv`).
    pub keys: BTreeSet<KeyId>,
    pub nonces: BTreeSet<u64>,
    pub numbers: BTreeSet<u64>,
    /// Encrypted members, insertion order.
    pub crypts: Vec<Message>,
    /// Hashed members, insertion order.
    pub hashes: Vec<Message>,
}

impl AnalzState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert and saturate; returns all messages newly added (in insertion
    /// order, suitable for exact undo).
    pub fn insert(&mut self, m: Message) -> Vec<Message> {
        let mut added = Vec::new();
        let mut work = vec![m];
        while let Some(m) = work.pop() {
            if !self.set.insert(m.clone()) {
                continue;
            }
            match &m {
                Message::Pair(x, y) => {
                    work.push((**x).clone());
                    work.push((**y).clone());
                }
                Message::Hash(_) => {
                    self.hashes.push(m.clone());
                }
                Message::Crypt(k, x) => {
                    if self.keys.contains(&inv(*k)) {
                        work.push((**x).clone());
                    }
                    self.crypts.push(m.clone());
                }
                Message::Key(k) => {
                    self.keys.insert(*k);
                    // A fresh key may unlock encryptions already present.
                    let unlockable: Vec<Message> = self
                        .set
                        .iter()
                        .filter_map(|c| match c {
                            Message::Crypt(ck, body) if inv(*ck) == *k => Some((**body).clone()),
                            _ => None,
                        })
                        .collect();
                    work.extend(unlockable);
                }
                Message::Nonce(n) => {
                    self.nonces.insert(*n);
                }
                Message::Number(n) => {
                    self.numbers.insert(*n);
                }
                _ => {}
            }
            added.push(m);
        }
        added
    }

    /// Remove exactly the messages a prior `insert` added.
    pub fn revert(&mut self, added: &[Message]) {
        for m in added.iter().rev() {
            self.set.remove(m);
            match m {
                Message::Key(k) => {
                    self.keys.remove(k);
                }
                Message::Nonce(n) => {
                    self.nonces.remove(n);
                }
                Message::Number(n) => {
                    self.numbers.remove(n);
                }
                Message::Crypt(_, _) => {
                    self.crypts.pop();
                }
                Message::Hash(_) => {
                    self.hashes.pop();
                }
                _ => {}
            }
        }
    }
}

/// Membership in `synth h`: can `x` be built from `h` plus guessable atoms?
/// `h` should be analz-closed when modelling the intruder.
pub fn synth_member(x: &Message, h: &MsgSet) -> bool {
    match x {
        Message::Agent(_) | Message::Number(_) => true,
        Message::Nonce(_) | Message::Key(_) => h.contains(x),
        Message::Hash(b) => h.contains(x) || synth_member(b, h),
        Message::Pair(a, b) => h.contains(x) || (synth_member(a, h) && synth_member(b, h)),
        Message::Crypt(k, b) => {
            h.contains(x) || (h.contains(&Message::Key(*k)) && synth_member(b, h))
        }
    }
}

fn pparts_descend(m: &Message, out: &mut MsgSet) {
    if let Message::Pair(x, y) = m {
        if out.insert(m.clone()) {
            pparts_descend(x, out);
            pparts_descend(y, out);
        }
    }
}

/// All pairs of `h` plus, recursively, their components that are pairs.
pub fn pparts(h: &MsgSet) -> MsgSet {
    let mut out = MsgSet::new();
    for m in h {
        pparts_descend(m, &mut out);
    }
    out
}

fn kparts_descend(m: &Message, out: &mut MsgSet) {
    match m {
        Message::Pair(x, y) => {
            kparts_descend(x, out);
            kparts_descend(y, out);
        }
        _ => {
            out.insert(m.clone());
        }
    }
}

/// All non-pair members of `h` plus all non-pair messages reachable by
/// splitting pairs recursively.
pub fn kparts(h: &MsgSet) -> MsgSet {
    let mut out = MsgSet::new();
    for m in h {
        kparts_descend(m, &mut out);
    }
    out
}

/// Number of members whose outermost constructor is `Crypt` (the measure
/// driving the secrecy theorem's descent).
pub fn crypt_measure(h: &MsgSet) -> usize {
    h.iter()
        .filter(|m| matches!(m, Message::Crypt(_, _)))
        .count()
}

/// Structural occurrence of an atom in `parts {x}`. Hash bodies are opaque.
pub fn occurs(atom: &Message, x: &Message) -> bool {
    if atom == x {
        return true;
    }
    match x {
        Message::Pair(a, b) => occurs(atom, a) || occurs(atom, b),
        Message::Crypt(_, b) => occurs(atom, b),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(k: u64) -> AgentId {
        AgentId::Friend(k)
    }

    #[test]
    fn key_map_is_involutive_and_disjoint() {
        let agents = [AgentId::Server, AgentId::Spy, f(0), f(1), f(7)];
        let mut seen = BTreeSet::new();
        for &a in &agents {
            for k in [pubk(a), prik(a), shrk(a)] {
                assert_eq!(inv(inv(k)), k);
                assert!(seen.insert(k), "key collision at {k:?}");
            }
            assert_eq!(inv(pubk(a)), prik(a));
            assert_eq!(inv(prik(a)), pubk(a));
            assert_eq!(inv(shrk(a)), shrk(a));
        }
        for j in 0..4 {
            assert_eq!(inv(sessionk(j)), sessionk(j));
            assert!(seen.insert(sessionk(j)));
        }
    }

    #[test]
    fn key_kind_roundtrip() {
        assert_eq!(key_kind(pubk(f(3))), Some(KeyKind::Pub(f(3))));
        assert_eq!(key_kind(prik(AgentId::Spy)), Some(KeyKind::Pri(AgentId::Spy)));
        assert_eq!(key_kind(shrk(AgentId::Server)), Some(KeyKind::Shr(AgentId::Server)));
        assert_eq!(key_kind(sessionk(5)), Some(KeyKind::Session(5)));
    }

    #[test]
    fn parts_empty() {
        assert_eq!(parts(&MsgSet::new()), MsgSet::new());
    }

    #[test]
    fn parts_descends_pairs_and_crypts() {
        let k = pubk(f(0));
        let m = Message::pair(
            Message::Agent(f(0)),
            Message::crypt(k, Message::Nonce(1)),
        );
        let got = parts(&msg_set([m.clone()]));
        let want = msg_set([
            m,
            Message::Agent(f(0)),
            Message::crypt(k, Message::Nonce(1)),
            Message::Nonce(1),
        ]);
        assert_eq!(got, want);
    }

    #[test]
    fn hash_body_is_not_a_part() {
        let h = msg_set([Message::hash(Message::Nonce(1))]);
        assert_eq!(parts(&h), h);
    }

    #[test]
    fn analz_stops_at_unknown_key() {
        let h = msg_set([Message::crypt(pubk(f(0)), Message::Nonce(1))]);
        assert_eq!(analz(&h), h);
    }

    #[test]
    fn analz_decrypts_with_inverse_key() {
        let h = msg_set([
            Message::crypt(pubk(f(0)), Message::Nonce(1)),
            Message::Key(prik(f(0))),
        ]);
        let got = analz(&h);
        let mut want = h.clone();
        want.insert(Message::Nonce(1));
        assert_eq!(got, want);
    }

    #[test]
    fn analz_uses_self_inverse_shared_key() {
        let b = f(1);
        let h = msg_set([Message::pair(
            Message::Key(shrk(b)),
            Message::crypt(shrk(b), Message::Nonce(7)),
        )]);
        assert!(analz(&h).contains(&Message::Nonce(7)));
    }

    #[test]
    fn analz_key_found_after_crypt() {
        // Key arrives later than the encryption it unlocks.
        let h = msg_set([
            Message::crypt(shrk(f(2)), Message::Nonce(9)),
            Message::pair(Message::Number(0), Message::Key(shrk(f(2)))),
        ]);
        assert!(analz(&h).contains(&Message::Nonce(9)));
    }

    #[test]
    fn synth_guessable_atoms() {
        assert!(synth_member(&Message::Agent(AgentId::Spy), &MsgSet::new()));
        assert!(synth_member(&Message::Number(42), &MsgSet::new()));
        assert!(!synth_member(&Message::Nonce(5), &MsgSet::new()));
    }

    #[test]
    fn synth_composition() {
        let b = f(1);
        let h = msg_set([Message::Nonce(1), Message::Key(pubk(b))]);
        let x = Message::crypt(
            pubk(b),
            Message::pair(Message::Nonce(1), Message::Agent(f(0))),
        );
        assert!(synth_member(&x, &h));
        // Encrypting requires the key itself, not just its existence.
        let y = Message::crypt(prik(b), Message::Nonce(1));
        assert!(!synth_member(&y, &h));
    }

    #[test]
    fn pparts_examples() {
        assert_eq!(pparts(&msg_set([Message::Nonce(1)])), MsgSet::new());

        let a = Message::Agent(f(0));
        let b = Message::Nonce(1);
        let c = Message::Number(2);
        let inner = Message::pair(a.clone(), b.clone());
        let outer = Message::pair(inner.clone(), c.clone());
        assert_eq!(
            pparts(&msg_set([outer.clone()])),
            msg_set([outer, inner])
        );

        // A pair under encryption is not a pair of H.
        let hid = Message::crypt(pubk(f(0)), Message::pair(a, b));
        assert_eq!(pparts(&msg_set([hid])), MsgSet::new());
    }

    #[test]
    fn kparts_examples() {
        assert_eq!(kparts(&MsgSet::new()), MsgSet::new());
        assert_eq!(
            kparts(&msg_set([Message::Nonce(1)])),
            msg_set([Message::Nonce(1)])
        );
        let k = shrk(f(0));
        let m = Message::pair(
            Message::Nonce(1),
            Message::pair(Message::Agent(f(0)), Message::crypt(k, Message::Nonce(2))),
        );
        assert_eq!(
            kparts(&msg_set([m])),
            msg_set([
                Message::Nonce(1),
                Message::Agent(f(0)),
                Message::crypt(k, Message::Nonce(2)),
            ])
        );
    }

    #[test]
    fn crypt_measure_counts_outermost_only() {
        assert_eq!(crypt_measure(&MsgSet::new()), 0);
        let k = pubk(f(0));
        let k2 = shrk(f(1));
        let nested = Message::crypt(k, Message::crypt(k2, Message::Nonce(1)));
        assert_eq!(
            crypt_measure(&msg_set([nested.clone(), Message::Nonce(1)])),
            1
        );
        assert_eq!(
            crypt_measure(&msg_set([nested, Message::crypt(k2, Message::Nonce(2))])),
            2
        );
    }

    #[test]
    fn occurrence_skips_hash_bodies() {
        let n = Message::Nonce(3);
        assert!(occurs(&n, &Message::pair(Message::Number(0), n.clone())));
        assert!(occurs(&n, &Message::crypt(pubk(f(0)), n.clone())));
        assert!(!occurs(&n, &Message::hash(n.clone())));
    }

    #[test]
    fn rendering_flattens_right_nested_pairs() {
        let m = Message::tuple(vec![
            Message::Nonce(1),
            Message::Nonce(2),
            Message::Agent(f(0)),
        ]);
        assert_eq!(m.to_string(), "{Nonce 1, Nonce 2, Agent Friend 0}");
        let c = Message::crypt(pubk(f(1)), m);
        assert_eq!(
            c.to_string(),
            "Crypt(18){{Nonce 1, Nonce 2, Agent Friend 0}}"
        );
    }

    #[test]
    fn analz_state_insert_revert_roundtrip() {
        let mut st = AnalzState::new();
        st.insert(Message::crypt(pubk(f(0)), Message::Nonce(1)));
        let before = st.clone();
        let added = st.insert(Message::Key(prik(f(0))));
        assert!(st.set.contains(&Message::Nonce(1)));
        st.revert(&added);
        assert_eq!(st.set, before.set);
        assert_eq!(st.keys, before.keys);
        assert_eq!(st.nonces, before.nonces);
    }
}
