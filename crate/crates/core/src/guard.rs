//! Guarded messages and the constructive secrecy theorem.
//!
//! A secret (nonce or key) is guarded in a message by a key set `Ks` when
//! every occurrence of the secret sits under an encryption whose decryption
//! key belongs to `Ks`. The central result: if the secret is deducible from
//! a guarded set, one of the guarding keys is deducible too.
//! `secrecy_witness` realizes that result constructively, returning the key.

use crate::msg::{self, inv, kparts, KeyId, Message, MsgSet};
use std::collections::BTreeSet;
use thiserror::Error;

/// What must stay secret: a nonce or a key atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Secret {
    Nonce(u64),
    Key(KeyId),
}

impl Secret {
    pub fn atom(self) -> Message {
        match self {
            Secret::Nonce(n) => Message::Nonce(n),
            Secret::Key(k) => Message::Key(k),
        }
    }
}

/// A secret together with its guarding key set. An empty `ks` means the
/// secret must not occur at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardSpec {
    pub secret: Secret,
    pub ks: BTreeSet<KeyId>,
}

impl GuardSpec {
    pub fn new(secret: Secret, ks: impl IntoIterator<Item = KeyId>) -> Self {
        GuardSpec { secret, ks: ks.into_iter().collect() }
    }
}

/// Is `x` in `guard n Ks`? Decided by structural recursion with an
/// occurrence pre-check: absent secrets are vacuously guarded; a pair is
/// guarded when both components are; an encryption is guarded when its
/// decryption key is in `Ks` or its body is guarded.
pub fn guard_member(spec: &GuardSpec, x: &Message) -> bool {
    let atom = spec.secret.atom();
    fn go(atom: &Message, ks: &BTreeSet<KeyId>, x: &Message) -> bool {
        if !msg::occurs(atom, x) {
            return true; // No_Nonce
        }
        match x {
            Message::Pair(a, b) => go(atom, ks, a) && go(atom, ks, b),
            Message::Crypt(k, body) => ks.contains(&inv(*k)) || go(atom, ks, body),
            // Bare occurrence of the secret itself.
            _ => false,
        }
    }
    go(&atom, &spec.ks, x)
}

/// `Guard n Ks G`: every member of `g` is guarded.
pub fn guard_set(spec: &GuardSpec, g: &MsgSet) -> bool {
    g.iter().all(|m| guard_member(spec, m))
}

/// First member of `g` that is not guarded, for error reporting.
pub fn first_unguarded(spec: &GuardSpec, g: &MsgSet) -> Option<Message> {
    g.iter().find(|m| !guard_member(spec, m)).cloned()
}

/// Outcome of the constructive secrecy theorem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Witness {
    /// The secret is deducible, and so is this guarding key.
    SomeKey(KeyId),
    /// The secret is not deducible from the set.
    SecretSafe,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuardError {
    #[error("set is not guarded: offending message {0}")]
    GuardViolation(Message),
}

/// Constructive content of the secrecy theorem. Precondition: `g` is
/// guarded for `spec`. If the secret is deducible from `g`, returns a key
/// of `Ks` that is deducible from `g`; otherwise `SecretSafe`.
///
/// Follows the proof's descent: locate a decryptable encryption in
/// `kparts g`; either its decryption key lies in `Ks`, or recurse on the
/// set with that encryption replaced by its body, which strictly shrinks.
/// The first candidate under the canonical term ordering is taken, so the
/// witness is deterministic.
pub fn secrecy_witness(spec: &GuardSpec, g: &MsgSet) -> Result<Witness, GuardError> {
    if let Some(bad) = first_unguarded(spec, g) {
        return Err(GuardError::GuardViolation(bad));
    }
    let atom = spec.secret.atom();
    if !msg::analz(g).contains(&atom) {
        return Ok(Witness::SecretSafe);
    }

    let mut cur = kparts(g);
    loop {
        debug_assert!(msg::analz(&cur).contains(&atom));
        // Smallest decryptable encryption under the canonical ordering.
        let candidate = cur.iter().find_map(|m| match m {
            Message::Crypt(k, body) if cur.contains(&Message::Key(inv(*k))) => {
                Some((m.clone(), *k, (**body).clone()))
            }
            _ => None,
        });
        let (crypt, k, body) = candidate.expect(
            "guarded set with deducible secret must contain a decryptable encryption",
        );
        if spec.ks.contains(&inv(k)) {
            return Ok(Witness::SomeKey(inv(k)));
        }
        let mut next = cur.clone();
        next.remove(&crypt);
        next.insert(body);
        // Replacing an encryption by its body strictly shrinks the total
        // term size, which bounds the descent.
        cur = kparts(&next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msg::{msg_set, prik, pubk, shrk, AgentId, Message};

    fn f(k: u64) -> AgentId {
        AgentId::Friend(k)
    }

    #[test]
    fn absent_secret_is_guarded() {
        let spec = GuardSpec::new(Secret::Nonce(7), []);
        assert!(guard_member(&spec, &Message::Agent(f(0))));
    }

    #[test]
    fn guard_rule_on_encryption() {
        let a = f(0);
        let spec = GuardSpec::new(Secret::Nonce(7), [prik(a)]);
        let x = Message::crypt(pubk(a), Message::Nonce(7));
        assert!(guard_member(&spec, &x));
    }

    #[test]
    fn key_guarded_by_itself_under_inverse_encryption() {
        // The coideal comparison example: Key K guarded by {K} in
        // Crypt (invKey K) (Key K).
        let k = shrk(f(2));
        let spec = GuardSpec::new(Secret::Key(k), [k]);
        let x = Message::crypt(inv(k), Message::Key(k));
        assert!(guard_member(&spec, &x));

        let kp = pubk(f(3));
        let spec2 = GuardSpec::new(Secret::Key(kp), [kp]);
        let x2 = Message::crypt(inv(kp), Message::Key(kp));
        assert!(guard_member(&spec2, &x2));
    }

    #[test]
    fn bare_occurrence_in_pair_component_fails() {
        let a = f(0);
        let spec = GuardSpec::new(Secret::Nonce(7), [prik(a)]);
        let x = Message::pair(
            Message::Nonce(7),
            Message::crypt(pubk(a), Message::Nonce(7)),
        );
        assert!(!guard_member(&spec, &x));
    }

    #[test]
    fn nested_crypt_guards_via_body() {
        let a = f(0);
        let other = shrk(f(5));
        let spec = GuardSpec::new(Secret::Nonce(7), [prik(a)]);
        // Outer key is not in Ks, but the body is guarded.
        let x = Message::crypt(other, Message::crypt(pubk(a), Message::Nonce(7)));
        assert!(guard_member(&spec, &x));
    }

    #[test]
    fn hash_occurrences_do_not_count() {
        let spec = GuardSpec::new(Secret::Nonce(7), []);
        assert!(guard_member(&spec, &Message::hash(Message::Nonce(7))));
    }

    #[test]
    fn guard_set_examples() {
        let a = f(0);
        let spec = GuardSpec::new(Secret::Nonce(7), [prik(a)]);
        assert!(guard_set(&spec, &MsgSet::new()));
        assert!(guard_set(
            &spec,
            &msg_set([
                Message::crypt(pubk(a), Message::Nonce(7)),
                Message::Agent(f(1)),
            ])
        ));
        let none = GuardSpec::new(Secret::Nonce(7), []);
        assert!(!guard_set(&none, &msg_set([Message::Nonce(7)])));
    }

    #[test]
    fn witness_when_secret_deducible() {
        let a = f(0);
        let spec = GuardSpec::new(Secret::Nonce(7), [prik(a)]);
        let g = msg_set([
            Message::crypt(pubk(a), Message::Nonce(7)),
            Message::Key(prik(a)),
        ]);
        assert_eq!(secrecy_witness(&spec, &g), Ok(Witness::SomeKey(prik(a))));
    }

    #[test]
    fn witness_safe_when_key_missing() {
        let a = f(0);
        let spec = GuardSpec::new(Secret::Nonce(7), [prik(a)]);
        let g = msg_set([Message::crypt(pubk(a), Message::Nonce(7))]);
        assert_eq!(secrecy_witness(&spec, &g), Ok(Witness::SecretSafe));
    }

    #[test]
    fn witness_safe_when_secret_absent() {
        let spec = GuardSpec::new(Secret::Nonce(7), []);
        let g = msg_set([Message::Agent(f(0))]);
        assert_eq!(secrecy_witness(&spec, &g), Ok(Witness::SecretSafe));
    }

    #[test]
    fn witness_rejects_unguarded_input() {
        let spec = GuardSpec::new(Secret::Nonce(7), []);
        let g = msg_set([Message::Nonce(7)]);
        assert_eq!(
            secrecy_witness(&spec, &g),
            Err(GuardError::GuardViolation(Message::Nonce(7)))
        );
    }

    #[test]
    fn witness_descends_through_outer_encryptions() {
        // Secret under two encryptions; the outer key is deducible but not
        // in Ks, the inner key is the guard.
        let a = f(0);
        let outer = shrk(f(1));
        let spec = GuardSpec::new(Secret::Nonce(7), [prik(a)]);
        let g = msg_set([
            Message::crypt(outer, Message::crypt(pubk(a), Message::Nonce(7))),
            Message::Key(outer),
            Message::Key(prik(a)),
        ]);
        assert_eq!(secrecy_witness(&spec, &g), Ok(Witness::SomeKey(prik(a))));
    }
}
