//! Hash-chained offer lists for the mobile-agent shopping protocols.
//!
//! Two variants share one structure. Each offer commits, inside a hash, to
//! the previous offer and to the next shop; shops sign their offers. In
//! the first variant the signature is outermost and anyone can verify the
//! chain; in the second the signed offer sits under the owner's public
//! key, so the shop identities are readable only with the owner's private
//! key.
//!
//! Chain validity is a structural check decided by descent from the head;
//! the resilience properties (no replacement, insertion, or truncation
//! without detection) follow from it and are exercised exhaustively in the
//! test suites.

use crate::list::{self, ListError};
use crate::model::{Protocol, Rule, SideCondition};
use crate::msg::{self, key_kind, AgentId, KeyKind, Message};
use crate::pattern::{AgentTerm, EventPattern, KeyTerm, ListFn, NatTerm, Pattern};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    P1,
    P2,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::P1 => "p1",
            Variant::P2 => "p2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error(transparent)]
    List(#[from] ListError),
    #[error("not a chain-shaped message: {0}")]
    NotAChain(Message),
    #[error("owner key required to inspect this offer")]
    OwnerKeyRequired,
}

/// `sign B X = {Agent B, X, Crypt (priK B) (Hash X)}`.
pub fn sign(b: AgentId, x: Message) -> Message {
    Message::tuple(vec![
        Message::Agent(b),
        x.clone(),
        Message::crypt(msg::prik(b), Message::hash(x)),
    ])
}

/// An offer by shop `b` (nonce `ofr`, encrypted to owner `a`) chained over
/// the previous offer `head l` and committing to next shop `c`.
pub fn chain(
    variant: Variant,
    b: AgentId,
    ofr: u64,
    a: AgentId,
    l: &Message,
    c: AgentId,
) -> Result<Message, ChainError> {
    let prev = list::head(l)?;
    let link = Message::hash(Message::pair(prev, Message::Agent(c)));
    Ok(match variant {
        Variant::P1 => sign(
            b,
            Message::pair(
                Message::crypt(msg::pubk(a), Message::Nonce(ofr)),
                link,
            ),
        ),
        Variant::P2 => Message::pair(
            Message::crypt(msg::pubk(a), sign(b, Message::Nonce(ofr))),
            link,
        ),
    })
}

/// `anchor A n B = chain A n A (cons nil nil) B`: the chain's base element.
pub fn anchor(variant: Variant, a: AgentId, n: u64, b: AgentId) -> Message {
    let l = list::cons(list::nil(), list::nil());
    chain(variant, a, n, a, &l, b).expect("cons nil nil has a head")
}

/// The request message: state `{Agent A, Number r, itinerary, offers}`
/// with the owner and first shop prepended to the itinerary and the
/// anchor as the only offer.
pub fn reqm(
    variant: Variant,
    a: AgentId,
    r: u64,
    n: u64,
    i: &Message,
    b: AgentId,
) -> Result<Message, ChainError> {
    if !list::is_agent_list(i) {
        return Err(ListError::MalformedList(i.clone()).into());
    }
    Ok(Message::tuple(vec![
        Message::Agent(a),
        Message::Number(r),
        list::cons(
            Message::Agent(a),
            list::cons(Message::Agent(b), i.clone()),
        ),
        list::cons(anchor(variant, a, n, b), list::nil()),
    ]))
}

/// The proposition message: shop `b` removes itself from the itinerary,
/// appends its own server list `j`, and prepends its offer to the chain.
#[allow(clippy::too_many_arguments)]
pub fn prom(
    variant: Variant,
    b: AgentId,
    ofr: u64,
    a: AgentId,
    r: u64,
    i: &Message,
    l: &Message,
    j: &Message,
    c: AgentId,
) -> Result<Message, ChainError> {
    if !list::is_agent_list(i) {
        return Err(ListError::MalformedList(i.clone()).into());
    }
    if !list::is_agent_list(j) {
        return Err(ListError::MalformedList(j.clone()).into());
    }
    let itinerary = list::app(j, &list::del(&Message::Agent(b), i)?)?;
    Ok(Message::tuple(vec![
        Message::Agent(a),
        Message::Number(r),
        itinerary,
        list::cons(chain(variant, b, ofr, a, l, c)?, l.clone()),
    ]))
}

/// The fields of one offer. `signer` and `ofr` are `None` when they sit
/// under the owner's key and no owner access was granted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfferFields {
    pub signer: Option<AgentId>,
    pub ofr: Option<u64>,
    pub owner: AgentId,
    pub prev: Message,
    pub next: AgentId,
}

fn split_signature(m: &Message) -> Option<(AgentId, &Message)> {
    crate::preserve::as_signature(m)
}

/// Destructure a chain-shaped message.
pub fn parse_offer(
    m: &Message,
    variant: Variant,
    owner_key_access: bool,
) -> Result<OfferFields, ChainError> {
    let not_chain = || ChainError::NotAChain(m.clone());
    match variant {
        Variant::P1 => {
            let (signer, payload) = split_signature(m).ok_or_else(not_chain)?;
            let Message::Pair(enc, link) = payload else {
                return Err(not_chain());
            };
            let Message::Crypt(k, body) = enc.as_ref() else {
                return Err(not_chain());
            };
            let Some(KeyKind::Pub(owner)) = key_kind(*k) else {
                return Err(not_chain());
            };
            let Message::Nonce(ofr) = body.as_ref() else {
                return Err(not_chain());
            };
            let (prev, next) = parse_link(link).ok_or_else(not_chain)?;
            Ok(OfferFields {
                signer: Some(signer),
                ofr: Some(*ofr),
                owner,
                prev,
                next,
            })
        }
        Variant::P2 => {
            let Message::Pair(enc, link) = m else {
                return Err(not_chain());
            };
            let Message::Crypt(k, inner) = enc.as_ref() else {
                return Err(not_chain());
            };
            let Some(KeyKind::Pub(owner)) = key_kind(*k) else {
                return Err(not_chain());
            };
            let (prev, next) = parse_link(link).ok_or_else(not_chain)?;
            let (signer, ofr) = if owner_key_access {
                let (signer, payload) = split_signature(inner).ok_or_else(not_chain)?;
                let Message::Nonce(ofr) = payload else {
                    return Err(not_chain());
                };
                (Some(signer), Some(*ofr))
            } else {
                (None, None)
            };
            Ok(OfferFields { signer, ofr, owner, prev, next })
        }
    }
}

fn parse_link(link: &Message) -> Option<(Message, AgentId)> {
    if let Message::Hash(b) = link {
        if let Message::Pair(prev, next) = b.as_ref() {
            if let Message::Agent(c) = next.as_ref() {
                return Some(((**prev).clone(), *c));
            }
        }
    }
    None
}

/// The signer of an offer. For the private variant this requires owner
/// access.
pub fn shop(m: &Message, variant: Variant, owner_key_access: bool) -> Result<AgentId, ChainError> {
    if variant == Variant::P2 && !owner_key_access {
        return Err(ChainError::OwnerKeyRequired);
    }
    parse_offer(m, variant, owner_key_access)?
        .signer
        .ok_or(ChainError::OwnerKeyRequired)
}

/// The next shop an offer commits to. Readable without owner access in
/// both variants: the commitment hash sits outside the owner encryption.
pub fn next_shop(m: &Message, variant: Variant) -> Result<AgentId, ChainError> {
    Ok(parse_offer(m, variant, false)?.next)
}

/// Why a list failed validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainVerdict {
    Valid,
    Invalid {
        /// Index from the head (0 = newest offer).
        position: usize,
        reason: String,
    },
}

impl ChainVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, ChainVerdict::Valid)
    }
}

/// Check membership in `valid A n B`: the last element must be the anchor
/// for `(a, n, b)` and every later offer must be signed by the shop the
/// previous offer commits to, over a hash of exactly that previous offer,
/// encrypted to the owner.
pub fn validate_chain(
    l: &Message,
    a: AgentId,
    n: u64,
    b: AgentId,
    variant: Variant,
    owner_key_access: bool,
) -> Result<ChainVerdict, ChainError> {
    if variant == Variant::P2 && !owner_key_access {
        return Err(ChainError::OwnerKeyRequired);
    }
    let items = list::elements(l)?;
    if items.is_empty() {
        return Ok(ChainVerdict::Invalid {
            position: 0,
            reason: "empty list has no anchor".into(),
        });
    }
    let last = items.len() - 1;
    if *items[last] != anchor(variant, a, n, b) {
        return Ok(ChainVerdict::Invalid {
            position: last,
            reason: format!("last element is not the anchor for owner {a}, session {n}, first shop {b}"),
        });
    }
    for pos in (0..last).rev() {
        let offer = items[pos];
        let fields = match parse_offer(offer, variant, owner_key_access) {
            Ok(f) => f,
            Err(ChainError::NotAChain(_)) => {
                return Ok(ChainVerdict::Invalid {
                    position: pos,
                    reason: "not a well-formed signed offer".into(),
                })
            }
            Err(e) => return Err(e),
        };
        if fields.owner != a {
            return Ok(ChainVerdict::Invalid {
                position: pos,
                reason: format!("offer is encrypted to {} instead of the owner {a}", fields.owner),
            });
        }
        if fields.prev != *items[pos + 1] {
            return Ok(ChainVerdict::Invalid {
                position: pos,
                reason: "hash link does not commit to the previous offer".into(),
            });
        }
        let expected_signer = parse_offer(items[pos + 1], variant, owner_key_access)?.next;
        match fields.signer {
            Some(s) if s == expected_signer => {}
            Some(s) => {
                return Ok(ChainVerdict::Invalid {
                    position: pos,
                    reason: format!(
                        "signed by {s} but the previous offer designates {expected_signer}"
                    ),
                })
            }
            None => return Err(ChainError::OwnerKeyRequired),
        }
    }
    Ok(ChainVerdict::Valid)
}

/// Boolean form of `validate_chain`.
pub fn valid_member(
    l: &Message,
    a: AgentId,
    n: u64,
    b: AgentId,
    variant: Variant,
    owner_key_access: bool,
) -> Result<bool, ChainError> {
    Ok(validate_chain(l, a, n, b, variant, owner_key_access)?.is_valid())
}

/// Extend a valid list by one offer (nonce `ofr`, next shop `c`): the
/// signer is forced to be the shop the current head designates.
pub fn extend_valid(
    variant: Variant,
    l: &Message,
    a: AgentId,
    ofr: u64,
    c: AgentId,
) -> Result<Message, ChainError> {
    let signer = next_shop(&list::head(l)?, variant)?;
    Ok(list::cons(chain(variant, signer, ofr, a, l, c)?, l.clone()))
}

/// Forward privacy, structurally: does `agent` occur in the parts of `m`
/// outside encryptions under the owner's public key? Hash bodies are not
/// parts and do not count.
pub fn agent_visible_outside_owner_crypt(m: &Message, agent: AgentId, owner: AgentId) -> bool {
    match m {
        Message::Agent(a) => *a == agent,
        Message::Pair(x, y) => {
            agent_visible_outside_owner_crypt(x, agent, owner)
                || agent_visible_outside_owner_crypt(y, agent, owner)
        }
        Message::Crypt(k, body) => {
            if *k == msg::pubk(owner) {
                false
            } else {
                agent_visible_outside_owner_crypt(body, agent, owner)
            }
        }
        _ => false,
    }
}

/// An offer list together with the validation context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfferChain {
    pub list: Message,
    pub owner: AgentId,
    pub session: u64,
    pub first_shop: AgentId,
    pub variant: Variant,
}

/// One line per offer (position, shop or `<hidden>`), then the verdict.
pub fn dump_chain(chain: &OfferChain, owner_key_access: bool) -> Result<String, ChainError> {
    let items = list::elements(&chain.list)?;
    let mut out = String::new();
    for (pos, offer) in items.iter().enumerate() {
        let shop_label = match shop(offer, chain.variant, owner_key_access) {
            Ok(s) => s.to_string(),
            Err(ChainError::OwnerKeyRequired) => "<hidden>".to_string(),
            Err(_) => "<malformed>".to_string(),
        };
        let _ = writeln!(out, "{pos}: shop {shop_label}");
    }
    match validate_chain(
        &chain.list,
        chain.owner,
        chain.session,
        chain.first_shop,
        chain.variant,
        owner_key_access,
    ) {
        Ok(ChainVerdict::Valid) => {
            let _ = writeln!(out, "verdict: valid");
        }
        Ok(ChainVerdict::Invalid { position, reason }) => {
            let _ = writeln!(out, "verdict: invalid at position {position}: {reason}");
        }
        Err(ChainError::OwnerKeyRequired) => return Err(ChainError::OwnerKeyRequired),
        Err(e) => return Err(e),
    }
    Ok(out)
}

fn av(v: &str) -> AgentTerm {
    AgentTerm::Var(v.into())
}

fn sign_pattern(b: AgentTerm, x: Pattern) -> Pattern {
    Pattern::tuple(vec![
        Pattern::Agent(b.clone()),
        x.clone(),
        Pattern::crypt(KeyTerm::Pri(b), Pattern::hash(x)),
    ])
}

fn chain_pattern(variant: Variant, b: AgentTerm, ofr: &str, a: AgentTerm, prev: Pattern, c: AgentTerm) -> Pattern {
    let link = Pattern::hash(Pattern::pair(prev, Pattern::Agent(c)));
    match variant {
        Variant::P1 => sign_pattern(
            b,
            Pattern::pair(
                Pattern::crypt(KeyTerm::Pub(a), Pattern::Nonce(NatTerm::Var(ofr.into()))),
                link,
            ),
        ),
        Variant::P2 => Pattern::pair(
            Pattern::crypt(
                KeyTerm::Pub(a),
                sign_pattern(b, Pattern::Nonce(NatTerm::Var(ofr.into()))),
            ),
            link,
        ),
    }
}

fn nil_pattern() -> Pattern {
    Pattern::Number(NatTerm::Const(0))
}

/// The protocol: `Req` sends the agent with a fresh session nonce and the
/// anchored offer list; `Prop` adds a signed offer and forwards the agent
/// to a shop drawn from the itinerary or a freshly appended list.
pub fn p_protocol(variant: Variant) -> Protocol {
    let req_post_body = Pattern::tuple(vec![
        Pattern::Agent(av("A")),
        Pattern::Number(NatTerm::Var("r".into())),
        Pattern::pair(
            Pattern::Agent(av("A")),
            Pattern::pair(Pattern::Agent(av("B")), Pattern::Var("I".into())),
        ),
        Pattern::pair(
            // anchor A n B, with head (cons nil nil) folded to nil
            chain_pattern(variant, av("A"), "n", av("A"), nil_pattern(), av("B")),
            nil_pattern(),
        ),
    ]);
    let req = Rule {
        name: "Req".into(),
        pre: vec![],
        post: EventPattern { sender: av("A"), recipient: av("B"), body: req_post_body },
        side: vec![SideCondition::AgentList("I".into())],
    };

    let next_hop_list = Pattern::Apply(
        ListFn::App,
        vec![
            Pattern::Var("J".into()),
            Pattern::Apply(
                ListFn::Del,
                vec![Pattern::Agent(av("B")), Pattern::Var("I".into())],
            ),
        ],
    );
    let prop_post_body = Pattern::tuple(vec![
        Pattern::Agent(av("A")),
        Pattern::Number(NatTerm::Var("r".into())),
        next_hop_list.clone(),
        Pattern::pair(
            chain_pattern(
                variant,
                av("B"),
                "ofr",
                av("A"),
                Pattern::Apply(ListFn::Head, vec![Pattern::Var("L".into())]),
                av("C"),
            ),
            Pattern::Var("L".into()),
        ),
    ]);
    let prop = Rule {
        name: "Prop".into(),
        pre: vec![EventPattern {
            sender: av("A2"),
            recipient: av("B"),
            body: Pattern::tuple(vec![
                Pattern::Agent(av("A")),
                Pattern::Number(NatTerm::Var("r".into())),
                Pattern::Var("I".into()),
                Pattern::Var("L".into()),
            ]),
        }],
        post: EventPattern { sender: av("B"), recipient: av("C"), body: prop_post_body },
        side: vec![
            SideCondition::AgentList("I".into()),
            SideCondition::AgentList("J".into()),
            SideCondition::IsIn {
                elem: Pattern::Agent(av("C")),
                list: next_hop_list,
            },
        ],
    };

    Protocol {
        name: variant.name().into(),
        rules: vec![req, prop],
        bad: Default::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(k: u64) -> AgentId {
        AgentId::Friend(k)
    }

    #[test]
    fn sign_is_the_exact_triple() {
        let got = sign(f(1), Message::Nonce(3));
        let want = Message::pair(
            Message::Agent(f(1)),
            Message::pair(
                Message::Nonce(3),
                Message::crypt(msg::prik(f(1)), Message::hash(Message::Nonce(3))),
            ),
        );
        assert_eq!(got, want);
        assert_eq!(split_signature(&got), Some((f(1), &Message::Nonce(3))));
    }

    #[test]
    fn tampered_signature_fails_verification() {
        let m = sign(f(1), Message::Nonce(3));
        // Replace the body but keep the old signature field.
        if let Message::Pair(agent, rest) = &m {
            if let Message::Pair(_, sig) = rest.as_ref() {
                let forged = Message::pair(
                    (**agent).clone(),
                    Message::pair(Message::Nonce(4), (**sig).clone()),
                );
                assert_eq!(split_signature(&forged), None);
            }
        }
    }

    #[test]
    fn p1_chain_shape() {
        let (a, b, c) = (f(0), f(1), f(2));
        let l = list::cons(Message::Nonce(77), list::nil());
        let got = chain(Variant::P1, b, 5, a, &l, c).unwrap();
        let payload = Message::pair(
            Message::crypt(msg::pubk(a), Message::Nonce(5)),
            Message::hash(Message::pair(Message::Nonce(77), Message::Agent(c))),
        );
        assert_eq!(got, sign(b, payload));
    }

    #[test]
    fn anchor_is_chain_over_cons_nil_nil() {
        let (a, b) = (f(0), f(1));
        for variant in [Variant::P1, Variant::P2] {
            let l = list::cons(list::nil(), list::nil());
            assert_eq!(anchor(variant, a, 9, b), chain(variant, a, 9, a, &l, b).unwrap());
        }
    }

    #[test]
    fn p2_chain_hides_shop_identity() {
        let (a, b, c) = (f(0), f(1), f(2));
        let l = list::cons(Message::Nonce(77), list::nil());
        let m = chain(Variant::P2, b, 5, a, &l, c).unwrap();
        assert!(!agent_visible_outside_owner_crypt(&m, b, a));
        // The first variant exposes the signer.
        let m1 = chain(Variant::P1, b, 5, a, &l, c).unwrap();
        assert!(agent_visible_outside_owner_crypt(&m1, b, a));
    }

    #[test]
    fn reqm_prepends_owner_and_first_shop() {
        let (a, b) = (f(0), f(1));
        let i = list::agent_list(&[f(2)]);
        let m = reqm(Variant::P1, a, 1, 9, &i, b).unwrap();
        let items = match &m {
            Message::Pair(_, rest) => rest,
            _ => panic!(),
        };
        let Message::Pair(_, rest2) = items.as_ref() else { panic!() };
        let Message::Pair(itin, offers) = rest2.as_ref() else { panic!() };
        assert_eq!(
            **itin,
            list::agent_list(&[a, b, f(2)]),
        );
        assert_eq!(list::len(offers).unwrap(), 1);
        assert_eq!(list::head(offers).unwrap(), anchor(Variant::P1, a, 9, b));
    }

    #[test]
    fn prom_removes_shop_and_appends_new_servers() {
        let (a, b, c) = (f(0), f(1), f(2));
        let i = list::agent_list(&[a, b]);
        let j = list::agent_list(&[c]);
        let l = list::cons(anchor(Variant::P1, a, 9, b), list::nil());
        let m = prom(Variant::P1, b, 5, a, 1, &i, &l, &j, c).unwrap();
        let Message::Pair(_, rest) = &m else { panic!() };
        let Message::Pair(_, rest2) = rest.as_ref() else { panic!() };
        let Message::Pair(itin, offers) = rest2.as_ref() else { panic!() };
        assert_eq!(**itin, list::agent_list(&[c, a]));
        assert_eq!(list::len(offers).unwrap(), list::len(&l).unwrap() + 1);
    }

    #[test]
    fn singleton_anchor_is_valid() {
        let (a, b) = (f(0), f(1));
        for variant in [Variant::P1, Variant::P2] {
            let l = list::cons(anchor(variant, a, 9, b), list::nil());
            assert!(valid_member(&l, a, 9, b, variant, true).unwrap());
            // Wrong session nonce: anchor mismatch.
            assert!(!valid_member(&l, a, 8, b, variant, true).unwrap());
        }
    }

    #[test]
    fn honest_extension_stays_valid_and_replacement_invalidates() {
        let (a, b, b2, b3) = (f(0), f(1), f(2), f(3));
        for variant in [Variant::P1, Variant::P2] {
            let mut l = list::cons(anchor(variant, a, 9, b), list::nil());
            // b signs (designated by the anchor), forwards to b2; b2 signs,
            // forwards to b3.
            l = extend_valid(variant, &l, a, 10, b2).unwrap();
            l = extend_valid(variant, &l, a, 11, b3).unwrap();
            assert!(valid_member(&l, a, 9, b, variant, true).unwrap());
            assert_eq!(list::len(&l).unwrap(), 3);

            // Replacing the middle offer breaks the chain.
            let other = chain(variant, b, 99, a, &list::cons(Message::Nonce(1), list::nil()), b3)
                .unwrap();
            let mutated = list::repl(&l, 1, other).unwrap();
            assert!(!valid_member(&mutated, a, 9, b, variant, true).unwrap());
        }
    }

    #[test]
    fn shop_extraction_and_owner_gate() {
        let (a, b, c) = (f(0), f(1), f(2));
        let l = list::cons(Message::Nonce(77), list::nil());
        let p1 = chain(Variant::P1, b, 5, a, &l, c).unwrap();
        assert_eq!(shop(&p1, Variant::P1, false).unwrap(), b);
        let p2 = chain(Variant::P2, b, 5, a, &l, c).unwrap();
        assert_eq!(shop(&p2, Variant::P2, true).unwrap(), b);
        assert_eq!(shop(&p2, Variant::P2, false), Err(ChainError::OwnerKeyRequired));
        // The next-shop commitment is public in both variants.
        assert_eq!(next_shop(&p1, Variant::P1).unwrap(), c);
        assert_eq!(next_shop(&p2, Variant::P2).unwrap(), c);
    }

    #[test]
    fn p2_validation_requires_owner_key() {
        let (a, b) = (f(0), f(1));
        let l = list::cons(anchor(Variant::P2, a, 9, b), list::nil());
        assert_eq!(
            valid_member(&l, a, 9, b, Variant::P2, false),
            Err(ChainError::OwnerKeyRequired)
        );
        // The public variant is verifiable by anyone.
        let l1 = list::cons(anchor(Variant::P1, a, 9, b), list::nil());
        assert!(valid_member(&l1, a, 9, b, Variant::P1, false).unwrap());
    }

    #[test]
    fn dump_lists_offers_and_verdict() {
        let (a, b, b2) = (f(0), f(1), f(2));
        let mut l = list::cons(anchor(Variant::P1, a, 9, b), list::nil());
        l = extend_valid(Variant::P1, &l, a, 10, b2).unwrap();
        let oc = OfferChain {
            list: l,
            owner: a,
            session: 9,
            first_shop: b,
            variant: Variant::P1,
        };
        let dump = dump_chain(&oc, false).unwrap();
        assert!(dump.contains("0: shop Friend 1"));
        assert!(dump.contains("1: shop Friend 0"));
        assert!(dump.lines().last().unwrap().starts_with("verdict: valid"));
    }

    #[test]
    fn p_protocol_rules_have_expected_freshness() {
        for variant in [Variant::P1, Variant::P2] {
            let p = p_protocol(variant);
            let req = p.rule("Req").unwrap();
            let prop = p.rule("Prop").unwrap();
            assert_eq!(req.newn(), std::collections::BTreeSet::from(["n".to_string()]));
            assert_eq!(prop.newn(), std::collections::BTreeSet::from(["ofr".to_string()]));
            assert!(req.newk().is_empty());
        }
    }

    #[test]
    fn p_protocol_conclusions_instantiate_to_reqm_and_prom() {
        use crate::pattern::{ap_event, Binding, Subst};
        let (a, b, c) = (f(0), f(1), f(2));
        for variant in [Variant::P1, Variant::P2] {
            let p = p_protocol(variant);
            let mut s = Subst::new();
            s.bind("A", Binding::Agent(a));
            s.bind("B", Binding::Agent(b));
            s.bind("r", Binding::Number(1));
            s.bind("n", Binding::Nonce(9));
            s.bind("I", Binding::Msg(list::nil()));
            let ev = ap_event(&s, &p.rule("Req").unwrap().post).unwrap();
            assert_eq!(ev.body, reqm(variant, a, 1, 9, &list::nil(), b).unwrap());
            assert_eq!(ev.sender, a);
            assert_eq!(ev.recipient, b);

            // Prop over the request's state message.
            let i = list::agent_list(&[a, b]);
            let l = list::cons(anchor(variant, a, 9, b), list::nil());
            let mut s2 = Subst::new();
            s2.bind("A", Binding::Agent(a));
            s2.bind("A2", Binding::Agent(a));
            s2.bind("B", Binding::Agent(b));
            s2.bind("C", Binding::Agent(c));
            s2.bind("r", Binding::Number(1));
            s2.bind("ofr", Binding::Nonce(10));
            s2.bind("I", Binding::Msg(i.clone()));
            s2.bind("J", Binding::Msg(list::agent_list(&[c])));
            s2.bind("L", Binding::Msg(l.clone()));
            let ev2 = ap_event(&s2, &p.rule("Prop").unwrap().post).unwrap();
            assert_eq!(
                ev2.body,
                prom(variant, b, 10, a, 1, &i, &l, &list::agent_list(&[c]), c).unwrap()
            );
        }
    }
}
