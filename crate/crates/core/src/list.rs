//! Message-level lists: `nil` is `Number 0`, `cons(X, L)` is the pair
//! `{X, L}`. This is the wire convention for itineraries and offer lists;
//! `Number 0` is guessable and constructor-distinct from `Pair`, so
//! well-formedness stays decidable by a structural scan.

use crate::msg::{AgentId, Message};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ListError {
    #[error("malformed message list: {0}")]
    MalformedList(Message),
    #[error("index {index} out of range for list of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

pub fn nil() -> Message {
    Message::Number(0)
}

pub fn is_nil(m: &Message) -> bool {
    *m == Message::Number(0)
}

pub fn cons(x: Message, l: Message) -> Message {
    Message::pair(x, l)
}

/// Elements of a well-formed list, front (most recent) first.
pub fn elements(l: &Message) -> Result<Vec<&Message>, ListError> {
    let mut out = Vec::new();
    let mut cur = l;
    loop {
        match cur {
            Message::Number(0) => return Ok(out),
            Message::Pair(h, t) => {
                out.push(h.as_ref());
                cur = t;
            }
            other => return Err(ListError::MalformedList(other.clone())),
        }
    }
}

pub fn from_elements(items: Vec<Message>) -> Message {
    let mut l = nil();
    for x in items.into_iter().rev() {
        l = cons(x, l);
    }
    l
}

pub fn is_list(m: &Message) -> bool {
    elements(m).is_ok()
}

/// Is `m` a list whose every element is an `Agent` message?
pub fn is_agent_list(m: &Message) -> bool {
    match elements(m) {
        Ok(items) => items.iter().all(|x| matches!(x, Message::Agent(_))),
        Err(_) => false,
    }
}

pub fn len(l: &Message) -> Result<usize, ListError> {
    Ok(elements(l)?.len())
}

pub fn head(l: &Message) -> Result<Message, ListError> {
    match l {
        Message::Pair(h, _) => Ok((**h).clone()),
        other => Err(ListError::MalformedList(other.clone())),
    }
}

/// Concatenation `app(J, L)`.
pub fn app(j: &Message, l: &Message) -> Result<Message, ListError> {
    let mut items: Vec<Message> = elements(j)?.into_iter().cloned().collect();
    elements(l)?; // validate
    items.reverse();
    let mut out = l.clone();
    for x in items {
        out = cons(x, out);
    }
    Ok(out)
}

/// Remove the first occurrence of `x` from `l`, if any.
pub fn del(x: &Message, l: &Message) -> Result<Message, ListError> {
    let items = elements(l)?;
    let mut out = Vec::with_capacity(items.len());
    let mut removed = false;
    for it in items {
        if !removed && it == x {
            removed = true;
        } else {
            out.push(it.clone());
        }
    }
    Ok(from_elements(out))
}

pub fn isin(x: &Message, l: &Message) -> Result<bool, ListError> {
    Ok(elements(l)?.iter().any(|it| *it == x))
}

/// The `i+1`-th element of `l` (zero-based index).
pub fn ith(l: &Message, i: usize) -> Result<Message, ListError> {
    let items = elements(l)?;
    items
        .get(i)
        .map(|m| (*m).clone())
        .ok_or(ListError::IndexOutOfRange { index: i, len: items.len() })
}

/// `l` with its `i+1`-th element replaced by `m`.
pub fn repl(l: &Message, i: usize, m: Message) -> Result<Message, ListError> {
    let mut items: Vec<Message> = elements(l)?.into_iter().cloned().collect();
    if i >= items.len() {
        return Err(ListError::IndexOutOfRange { index: i, len: items.len() });
    }
    items[i] = m;
    Ok(from_elements(items))
}

/// `l` with `m` inserted before the `i+1`-th element.
pub fn ins(l: &Message, i: usize, m: Message) -> Result<Message, ListError> {
    let mut items: Vec<Message> = elements(l)?.into_iter().cloned().collect();
    if i > items.len() {
        return Err(ListError::IndexOutOfRange { index: i, len: items.len() });
    }
    items.insert(i, m);
    Ok(from_elements(items))
}

/// Remove the `i` first elements of `l`.
pub fn trunc(l: &Message, i: usize) -> Result<Message, ListError> {
    let items = elements(l)?;
    if i > items.len() {
        return Err(ListError::IndexOutOfRange { index: i, len: items.len() });
    }
    Ok(from_elements(items[i..].iter().map(|m| (*m).clone()).collect()))
}

pub fn agent_list(agents: &[AgentId]) -> Message {
    from_elements(agents.iter().map(|&a| Message::Agent(a)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(k: u64) -> Message {
        Message::Agent(AgentId::Friend(k))
    }

    #[test]
    fn nil_and_cons_shape() {
        let l = cons(a(0), cons(a(1), nil()));
        assert!(is_list(&l));
        assert!(is_agent_list(&l));
        assert_eq!(len(&l).unwrap(), 2);
        assert!(!is_list(&Message::Nonce(1)));
        assert!(!is_agent_list(&cons(Message::Nonce(1), nil())));
        // Number 0 under a non-list tail is malformed.
        assert!(!is_list(&cons(a(0), Message::Nonce(3))));
    }

    #[test]
    fn ith_is_zero_based_successor() {
        let l = cons(a(0), cons(a(1), nil()));
        assert_eq!(ith(&l, 1).unwrap(), a(1));
        assert!(matches!(
            ith(&l, 2),
            Err(ListError::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn del_removes_first_occurrence_only() {
        assert_eq!(del(&a(9), &nil()).unwrap(), nil());
        let l = cons(a(0), cons(a(1), cons(a(0), nil())));
        assert_eq!(del(&a(0), &l).unwrap(), cons(a(1), cons(a(0), nil())));
    }

    #[test]
    fn trunc_removes_leading_elements() {
        let l = cons(a(0), cons(a(1), nil()));
        assert_eq!(trunc(&l, 1).unwrap(), cons(a(1), nil()));
        assert_eq!(trunc(&l, 2).unwrap(), nil());
        assert!(trunc(&l, 3).is_err());
    }

    #[test]
    fn app_and_isin() {
        let j = cons(a(5), nil());
        let l = cons(a(0), nil());
        let joined = app(&j, &l).unwrap();
        assert_eq!(joined, cons(a(5), cons(a(0), nil())));
        assert!(isin(&a(0), &joined).unwrap());
        assert!(!isin(&a(7), &joined).unwrap());
    }

    #[test]
    fn repl_and_ins() {
        let l = cons(a(0), cons(a(1), nil()));
        assert_eq!(
            repl(&l, 1, a(9)).unwrap(),
            cons(a(0), cons(a(9), nil()))
        );
        assert_eq!(
            ins(&l, 1, a(9)).unwrap(),
            cons(a(0), cons(a(9), cons(a(1), nil())))
        );
        assert!(repl(&l, 2, a(9)).is_err());
    }
}
