//! Message terms, key duality and the possession closure.
//!
//! Messages form a free term algebra: atoms, pairs, encryptions, hashes and
//! keys used as message payloads. A signature is an encryption under a
//! private key, verified by "decrypting" with the matching public key.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a protocol participant.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(pub String);

impl PartyId {
    pub fn new(name: impl Into<String>) -> Self {
        PartyId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PartyId {
    fn from(s: &str) -> Self {
        PartyId(s.to_string())
    }
}

/// A declared participant. `is_ttp` marks trusted third parties.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Party {
    pub id: PartyId,
    pub is_ttp: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KeyTerm {
    Public(PartyId),
    Private(PartyId),
    /// Long-term symmetric key shared by two parties. Endpoints are kept sorted.
    Shared { name: String, endpoints: (PartyId, PartyId) },
    Session(String),
}

impl KeyTerm {
    pub fn shared(name: impl Into<String>, a: PartyId, b: PartyId) -> Self {
        let endpoints = if a <= b { (a, b) } else { (b, a) };
        KeyTerm::Shared { name: name.into(), endpoints }
    }

    pub fn session(name: impl Into<String>) -> Self {
        KeyTerm::Session(name.into())
    }

    pub fn is_private(&self) -> bool {
        matches!(self, KeyTerm::Private(_))
    }
}

impl fmt::Display for KeyTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyTerm::Public(p) => write!(f, "pk({p})"),
            KeyTerm::Private(p) => write!(f, "sk({p})"),
            KeyTerm::Shared { name, .. } => f.write_str(name),
            KeyTerm::Session(name) => f.write_str(name),
        }
    }
}

/// The decryption counterpart of a key.
pub fn dual_key(k: &KeyTerm) -> KeyTerm {
    match k {
        KeyTerm::Public(p) => KeyTerm::Private(p.clone()),
        KeyTerm::Private(p) => KeyTerm::Public(p.clone()),
        other => other.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Msg {
    Atom(String),
    Pair(Box<Msg>, Box<Msg>),
    Enc(Box<Msg>, KeyTerm),
    Hash(Box<Msg>),
    Key(KeyTerm),
}

impl Msg {
    pub fn atom(name: impl Into<String>) -> Msg {
        Msg::Atom(name.into())
    }

    pub fn pair(a: Msg, b: Msg) -> Msg {
        Msg::Pair(Box::new(a), Box::new(b))
    }

    pub fn enc(body: Msg, key: KeyTerm) -> Msg {
        Msg::Enc(Box::new(body), key)
    }

    /// `{m}_{K_p^{-1}}`
    pub fn sign(body: Msg, signer: &PartyId) -> Msg {
        Msg::Enc(Box::new(body), KeyTerm::Private(signer.clone()))
    }

    pub fn hash(body: Msg) -> Msg {
        Msg::Hash(Box::new(body))
    }

    pub fn key(k: KeyTerm) -> Msg {
        Msg::Key(k)
    }

    /// Right-nested tuple `pair(a, pair(b, ...))`. Panics on an empty slice.
    pub fn tuple(items: Vec<Msg>) -> Msg {
        let mut it = items.into_iter().rev();
        let last = it.next().expect("tuple of zero messages");
        it.fold(last, |acc, m| Msg::pair(m, acc))
    }

    pub fn depth(&self) -> usize {
        match self {
            Msg::Atom(_) | Msg::Key(_) => 1,
            Msg::Pair(a, b) => 1 + a.depth().max(b.depth()),
            Msg::Enc(m, _) | Msg::Hash(m) => 1 + m.depth(),
        }
    }

    /// All syntactic subterms, including `self`. Keys used for encryption are
    /// included as `Msg::Key` entries.
    pub fn subterms(&self, out: &mut BTreeSet<Msg>) {
        if !out.insert(self.clone()) {
            return;
        }
        match self {
            Msg::Atom(_) | Msg::Key(_) => {}
            Msg::Pair(a, b) => {
                a.subterms(out);
                b.subterms(out);
            }
            Msg::Enc(m, k) => {
                m.subterms(out);
                out.insert(Msg::Key(k.clone()));
            }
            Msg::Hash(m) => m.subterms(out),
        }
    }

    pub fn contains(&self, needle: &Msg) -> bool {
        if self == needle {
            return true;
        }
        match self {
            Msg::Atom(_) | Msg::Key(_) => false,
            Msg::Pair(a, b) => a.contains(needle) || b.contains(needle),
            Msg::Enc(m, k) => m.contains(needle) || *needle == Msg::Key(k.clone()),
            Msg::Hash(m) => m.contains(needle),
        }
    }
}

impl fmt::Display for Msg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Msg::Atom(a) => f.write_str(a),
            Msg::Pair(a, b) => write!(f, "pair({a}, {b})"),
            Msg::Enc(m, KeyTerm::Private(p)) => write!(f, "sign({m}, {p})"),
            Msg::Enc(m, k) => write!(f, "enc({m}, {k})"),
            Msg::Hash(m) => write!(f, "hash({m})"),
            Msg::Key(k) => write!(f, "{k}"),
        }
    }
}

/// Pair components one level down. Encryption and hash bodies are opaque.
pub fn immediate_parts(m: &Msg) -> BTreeSet<Msg> {
    match m {
        Msg::Pair(a, b) => [(**a).clone(), (**b).clone()].into_iter().collect(),
        _ => BTreeSet::new(),
    }
}

/// Smallest superset of `s` closed under pair splitting and decryption with
/// an available dual key.
pub fn analyze_closure(s: &BTreeSet<Msg>) -> BTreeSet<Msg> {
    let mut known: BTreeSet<Msg> = BTreeSet::new();
    // ciphertexts parked until the dual of their key shows up
    let mut waiting: BTreeMap<KeyTerm, Vec<Msg>> = BTreeMap::new();
    let mut queue: VecDeque<Msg> = s.iter().cloned().collect();

    while let Some(m) = queue.pop_front() {
        if known.contains(&m) {
            continue;
        }
        known.insert(m.clone());
        match &m {
            Msg::Pair(a, b) => {
                queue.push_back((**a).clone());
                queue.push_back((**b).clone());
            }
            Msg::Enc(body, k) => {
                let opener = dual_key(k);
                if known.contains(&Msg::Key(opener.clone())) {
                    queue.push_back((**body).clone());
                } else {
                    waiting.entry(opener).or_default().push((**body).clone());
                }
            }
            Msg::Key(k) => {
                if let Some(bodies) = waiting.remove(k) {
                    queue.extend(bodies);
                }
            }
            Msg::Atom(_) | Msg::Hash(_) => {}
        }
    }
    known
}

/// Whether `goal` can be assembled from what `s` reveals.
pub fn can_derive(s: &BTreeSet<Msg>, goal: &Msg) -> bool {
    let closure = analyze_closure(s);
    can_synthesize(&closure, goal)
}

/// Synthesis over an already analyzed set.
pub fn can_synthesize(closure: &BTreeSet<Msg>, goal: &Msg) -> bool {
    if closure.contains(goal) {
        return true;
    }
    match goal {
        Msg::Atom(_) | Msg::Key(_) => false,
        Msg::Pair(a, b) => can_synthesize(closure, a) && can_synthesize(closure, b),
        Msg::Hash(m) => can_synthesize(closure, m),
        Msg::Enc(m, k) => closure.contains(&Msg::Key(k.clone())) && can_synthesize(closure, m),
    }
}
