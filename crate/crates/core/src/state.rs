//! Account-based state machine over the sparse Merkle tree.
//!
//! Each account key maps to a 16-byte value `balance || nonce` (big-endian).
//! An account with balance 0 and nonce 0 is not stored at all. Fees
//! accumulate under [`fees_key`] until a collection transaction, sent from
//! that key with zero fee and the whole accumulated amount, pays them out.

use std::sync::OnceLock;

use thiserror::Error;

use crate::merkle::{self, Digest};
use crate::smt::{self, Key, PartialTree, SmtError, SparseMerkleTree, SparseProof};

pub const TX_LEN: usize = 88;
pub const ACCOUNT_LEN: usize = 16;

pub fn fees_key() -> &'static Key {
    static K: OnceLock<Key> = OnceLock::new();
    K.get_or_init(|| merkle::hash(b"__fees__").0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transaction {
    pub from: Key,
    pub to: Key,
    pub amount: u64,
    pub fee: u64,
    pub nonce: u64,
}

impl Transaction {
    pub fn to_bytes(&self) -> [u8; TX_LEN] {
        let mut out = [0u8; TX_LEN];
        out[..32].copy_from_slice(&self.from);
        out[32..64].copy_from_slice(&self.to);
        out[64..72].copy_from_slice(&self.amount.to_be_bytes());
        out[72..80].copy_from_slice(&self.fee.to_be_bytes());
        out[80..88].copy_from_slice(&self.nonce.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != TX_LEN {
            return None;
        }
        let u = |r: std::ops::Range<usize>| u64::from_be_bytes(bytes[r].try_into().unwrap());
        Some(Transaction {
            from: bytes[..32].try_into().unwrap(),
            to: bytes[32..64].try_into().unwrap(),
            amount: u(64..72),
            fee: u(72..80),
            nonce: u(80..88),
        })
    }

    /// The fee payout to `producer` of everything accumulated so far.
    pub fn fee_collection(producer: Key, accumulated: u64) -> Self {
        Transaction {
            from: *fees_key(),
            to: producer,
            amount: accumulated,
            fee: 0,
            nonce: 0,
        }
    }

    pub fn is_fee_collection(&self) -> bool {
        self.from == *fees_key()
    }

    /// Keys read or written when applying this transaction, sorted and distinct.
    pub fn touched_keys(&self) -> Vec<Key> {
        let mut keys = vec![self.from, self.to, *fees_key()];
        keys.sort();
        keys.dedup();
        keys
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AccountValue {
    pub balance: u64,
    pub nonce: u64,
}

impl AccountValue {
    /// Empty for the default account, 16 bytes otherwise.
    pub fn encode(&self) -> Vec<u8> {
        if *self == AccountValue::default() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(ACCOUNT_LEN);
        out.extend_from_slice(&self.balance.to_be_bytes());
        out.extend_from_slice(&self.nonce.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        match bytes.len() {
            0 => Some(AccountValue::default()),
            ACCOUNT_LEN => Some(AccountValue {
                balance: u64::from_be_bytes(bytes[..8].try_into().unwrap()),
                nonce: u64::from_be_bytes(bytes[8..].try_into().unwrap()),
            }),
            _ => None,
        }
    }
}

/// Why a transaction cannot be applied.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TxError {
    #[error("nonce {got} does not match account nonce {expected}")]
    BadNonce { expected: u64, got: u64 },
    #[error("balance {balance} below required {required}")]
    InsufficientFunds { balance: u64, required: u128 },
    #[error("arithmetic overflow")]
    Overflow,
    #[error("fee collection must pay out exactly {0} with no fee")]
    BadCollection(u64),
    #[error("stored account value is malformed")]
    MalformedAccount,
}

/// Failure of a witness-based transition: either the witness itself is
/// unusable, or the transaction is invalid against the state it proves.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TransitionError {
    #[error("witness: {0}")]
    Witness(#[from] SmtError),
    #[error("invalid transaction: {0}")]
    Invalid(#[from] TxError),
}

/// Key-value access used by the transition rules.
pub trait AccountStore {
    fn read(&self, key: &Key) -> Result<Vec<u8>, SmtError>;
    fn write(&mut self, key: &Key, value: &[u8]) -> Result<(), SmtError>;
}

impl AccountStore for SparseMerkleTree {
    fn read(&self, key: &Key) -> Result<Vec<u8>, SmtError> {
        Ok(self.get(key).to_vec())
    }

    fn write(&mut self, key: &Key, value: &[u8]) -> Result<(), SmtError> {
        self.update(key, value);
        Ok(())
    }
}

impl AccountStore for PartialTree {
    fn read(&self, key: &Key) -> Result<Vec<u8>, SmtError> {
        self.get(key).map(<[u8]>::to_vec)
    }

    fn write(&mut self, key: &Key, value: &[u8]) -> Result<(), SmtError> {
        self.update(key, value).map(|_| ())
    }
}

fn load<S: AccountStore>(s: &S, key: &Key) -> Result<AccountValue, TransitionError> {
    AccountValue::decode(&s.read(key)?).ok_or(TransitionError::Invalid(TxError::MalformedAccount))
}

fn store<S: AccountStore>(s: &mut S, key: &Key, v: AccountValue) -> Result<(), TransitionError> {
    Ok(s.write(key, &v.encode())?)
}

/// Applies `tx` to `s`. Every check happens before the first write, so on
/// error the store is unchanged.
pub fn apply_tx<S: AccountStore>(s: &mut S, tx: &Transaction) -> Result<(), TransitionError> {
    let fees = *fees_key();
    let from = load(s, &tx.from)?;
    let to = load(s, &tx.to)?;
    let pot = load(s, &fees)?;

    if tx.is_fee_collection() {
        if tx.fee != 0 || tx.amount != from.balance || tx.nonce != from.nonce {
            return Err(TxError::BadCollection(from.balance).into());
        }
        if tx.to == fees {
            return Ok(());
        }
        let credited = to.balance.checked_add(tx.amount).ok_or(TxError::Overflow)?;
        store(s, &fees, AccountValue { balance: 0, ..from })?;
        store(s, &tx.to, AccountValue { balance: credited, ..to })?;
        return Ok(());
    }

    if tx.nonce != from.nonce {
        return Err(TxError::BadNonce {
            expected: from.nonce,
            got: tx.nonce,
        }
        .into());
    }
    let required = tx.amount as u128 + tx.fee as u128;
    if (from.balance as u128) < required {
        return Err(TxError::InsufficientFunds {
            balance: from.balance,
            required,
        }
        .into());
    }
    let next_nonce = from.nonce.checked_add(1).ok_or(TxError::Overflow)?;

    // Apply on a small overlay so that aliasing between from, to and the fee
    // pot works out and overflow is detected before anything is written.
    let mut view: Vec<(Key, AccountValue)> = vec![(tx.from, from)];
    let get = |view: &mut Vec<(Key, AccountValue)>, k: Key, fallback: AccountValue| -> usize {
        match view.iter().position(|(key, _)| *key == k) {
            Some(i) => i,
            None => {
                view.push((k, fallback));
                view.len() - 1
            }
        }
    };
    let i = get(&mut view, tx.from, from);
    view[i].1.balance -= required as u64;
    view[i].1.nonce = next_nonce;
    let i = get(&mut view, tx.to, to);
    view[i].1.balance = view[i].1.balance.checked_add(tx.amount).ok_or(TxError::Overflow)?;
    let i = get(&mut view, fees, pot);
    view[i].1.balance = view[i].1.balance.checked_add(tx.fee).ok_or(TxError::Overflow)?;
    for (k, v) in view {
        store(s, &k, v)?;
    }
    Ok(())
}

/// Proofs for the given keys against the current root of `tree`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StateWitness {
    pub entries: Vec<SparseProof>,
}

impl StateWitness {
    pub fn for_keys(tree: &SparseMerkleTree, keys: &[Key]) -> Self {
        StateWitness {
            entries: keys.iter().map(|k| tree.prove(k)).collect(),
        }
    }

    /// `count (u16) || per entry: key || value length (u16) || value || proof`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.entries.len() as u16).to_be_bytes().to_vec();
        for e in &self.entries {
            out.extend_from_slice(&e.key);
            out.extend_from_slice(&(e.value.len() as u16).to_be_bytes());
            out.extend_from_slice(&e.value);
            out.extend(e.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), SmtError> {
        let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or(SmtError::Malformed);
        let count = u16::from_be_bytes(take(0, 2)?.try_into().unwrap()) as usize;
        let mut at = 2;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let key = smt::key_from_slice(take(at, 32)?)?;
            let vlen = u16::from_be_bytes(take(at + 32, 2)?.try_into().unwrap()) as usize;
            let value = take(at + 34, vlen)?.to_vec();
            at += 34 + vlen;
            let (p, used) = SparseProof::from_bytes(key, value, &bytes[at..])?;
            at += used;
            entries.push(p);
        }
        Ok((StateWitness { entries }, at))
    }

    pub fn encoded_len(&self) -> usize {
        self.to_bytes().len()
    }
}

/// Full account state.
#[derive(Clone, Debug, Default)]
pub struct State {
    tree: SparseMerkleTree,
}

impl State {
    pub fn new() -> Self {
        State::default()
    }

    /// A state with the given starting balances.
    pub fn genesis(balances: &[(Key, u64)]) -> Self {
        let mut s = State::new();
        for (k, b) in balances {
            s.set_account(k, AccountValue { balance: *b, nonce: 0 });
        }
        s
    }

    pub fn root(&self) -> Digest {
        self.tree.root()
    }

    pub fn tree(&self) -> &SparseMerkleTree {
        &self.tree
    }

    pub fn account(&self, key: &Key) -> AccountValue {
        AccountValue::decode(self.tree.get(key)).unwrap_or_default()
    }

    pub fn set_account(&mut self, key: &Key, v: AccountValue) {
        self.tree.update(key, &v.encode());
    }

    pub fn fees(&self) -> u64 {
        self.account(fees_key()).balance
    }

    /// Sum over all accounts including the fee pot.
    pub fn total_balance(&self) -> u128 {
        self.tree
            .iter()
            .filter_map(|(_, v)| AccountValue::decode(v))
            .map(|a| a.balance as u128)
            .sum()
    }

    pub fn apply(&mut self, tx: &Transaction) -> Result<(), TxError> {
        apply_tx(&mut self.tree, tx).map_err(|e| match e {
            TransitionError::Invalid(t) => t,
            TransitionError::Witness(_) => unreachable!("full tree has every key"),
        })
    }

    pub fn witness(&self, tx: &Transaction) -> StateWitness {
        StateWitness::for_keys(&self.tree, &tx.touched_keys())
    }

    /// Pays the accumulated fees to `producer`; returns the collection
    /// transaction, or `None` when there is nothing to collect.
    pub fn collect_fees(&mut self, producer: Key) -> Option<Transaction> {
        let pot = self.fees();
        if pot == 0 {
            return None;
        }
        let tx = Transaction::fee_collection(producer, pot);
        self.apply(&tx).expect("collection of the current pot is valid");
        Some(tx)
    }
}

/// Functional form: the post-state, or the error.
pub fn transition(state: &State, tx: &Transaction) -> Result<State, TxError> {
    let mut s = state.clone();
    s.apply(tx)?;
    Ok(s)
}

/// True iff every transaction applies in order.
pub fn valid(txs: &[Transaction], state: &State) -> bool {
    let mut s = state.clone();
    txs.iter().all(|t| s.apply(t).is_ok())
}

/// Applies `tx` to the part of the state revealed by `witness`, which must
/// prove every touched key against `root`.
pub fn root_transition(
    root: &Digest,
    tx: &Transaction,
    witness: &StateWitness,
) -> Result<Digest, TransitionError> {
    let mut partial = PartialTree::from_proofs(*root, &witness.entries)?;
    apply_tx(&mut partial, tx)?;
    Ok(partial.root())
}
