//! Closed-system double-entry ledger.
//!
//! Every money movement in the exchange is a [`LedgerEntry`] that debits one
//! account and credits another by the same positive amount. Balances are
//! exact integers in minor currency units and never go negative. Money only
//! enters the system through [`Ledger::fund`] grants, so after funding the
//! sum of all balances is fixed.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// An amount of money in minor currency units (cents).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(pub u64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn cents(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Money) -> Option<Money> {
        self.0.checked_add(other.0).map(Money)
    }

    pub fn checked_sub(self, other: Money) -> Option<Money> {
        self.0.checked_sub(other.0).map(Money)
    }

    /// Signed view, for net-flow arithmetic.
    pub fn signed(self) -> i128 {
        self.0 as i128
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

/// Identifier of a brokered transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Opaque account handle. Serialized as `"acct-<n>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccountId(u64);

impl AccountId {
    pub(crate) fn from_raw(n: u64) -> Self {
        AccountId(n)
    }

    pub(crate) fn raw(self) -> u64 {
        self.0
    }

    fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "acct-{}", self.0)
    }
}

impl FromStr for AccountId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix("acct-")
            .and_then(|n| n.parse::<u64>().ok())
            .map(AccountId)
            .ok_or_else(|| format!("malformed account id {s:?}"))
    }
}

impl Serialize for AccountId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AccountId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountKind {
    Buyer,
    Seller,
    Escrow,
    ExchangeFee,
    Sink,
}

/// Who an account belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Party(String),
    Txn(TxnId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub id: AccountId,
    pub kind: AccountKind,
    pub owner: Option<Owner>,
}

/// Closed set of reasons a ledger entry may be posted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reason {
    PostPrice,
    PostDeposit,
    Stake,
    FeeQ,
    FeeA,
    PayoutPrice,
    ReturnStake,
    ReturnDeposit,
    ForfeitStake,
    ForfeitDeposit,
    SinkPrice,
    Refund,
    /// Generic transfer, not used by the protocol.
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub debit: AccountId,
    pub credit: AccountId,
    pub amount: Money,
    pub reason: Reason,
    pub txn: Option<TxnId>,
}

/// Money issued into the system by the funding faucet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub account: AccountId,
    pub amount: Money,
}

/// A transfer request, used for atomic batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub debit: AccountId,
    pub credit: AccountId,
    pub amount: Money,
    pub reason: Reason,
}

impl Transfer {
    pub fn new(debit: AccountId, credit: AccountId, amount: Money, reason: Reason) -> Self {
        Transfer { debit, credit, amount, reason }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("an account of kind {0:?} already exists")]
    DuplicateSingleton(AccountKind),
    #[error("account {account} holds {balance}, cannot debit {amount}")]
    InsufficientFunds { account: AccountId, balance: Money, amount: Money },
    #[error("debit and credit are the same account {0}")]
    SameAccount(AccountId),
    #[error("entry amounts must be positive")]
    NonPositiveAmount,
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("balance overflow")]
    Overflow,
    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    accounts: Vec<Account>,
    balances: Vec<Money>,
    entries: Vec<LedgerEntry>,
    grants: Vec<Grant>,
    exchange_fee: Option<AccountId>,
    sink: Option<AccountId>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// A ledger with the exchange fee and sink accounts already opened.
    pub fn with_house_accounts() -> Self {
        let mut ledger = Self::new();
        ledger
            .open_account(AccountKind::ExchangeFee, None)
            .expect("fresh ledger");
        ledger.open_account(AccountKind::Sink, None).expect("fresh ledger");
        ledger
    }

    pub fn open_account(&mut self, kind: AccountKind, owner: Option<Owner>) -> Result<AccountId, LedgerError> {
        let id = AccountId(self.accounts.len() as u64);
        let slot = match kind {
            AccountKind::ExchangeFee => Some(&mut self.exchange_fee),
            AccountKind::Sink => Some(&mut self.sink),
            _ => None,
        };
        if slot.as_ref().is_some_and(|s| s.is_some()) {
            return Err(LedgerError::DuplicateSingleton(kind));
        }
        if let Some(slot) = slot {
            *slot = Some(id);
        }
        self.accounts.push(Account { id, kind, owner });
        self.balances.push(Money::ZERO);
        Ok(id)
    }

    /// Issue new money into `account`. This is the only way supply grows.
    pub fn fund(&mut self, account: AccountId, amount: Money) -> Result<(), LedgerError> {
        self.account(account)?;
        if amount.is_zero() {
            return Err(LedgerError::NonPositiveAmount);
        }
        self.total_issued().checked_add(amount).ok_or(LedgerError::Overflow)?;
        let bal = &mut self.balances[account.index()];
        *bal = bal.checked_add(amount).ok_or(LedgerError::Overflow)?;
        self.grants.push(Grant { account, amount });
        Ok(())
    }

    pub fn post_entry(
        &mut self,
        debit: AccountId,
        credit: AccountId,
        amount: Money,
        reason: Reason,
        txn: Option<TxnId>,
    ) -> Result<LedgerEntry, LedgerError> {
        self.check_transfer(debit, credit, amount)?;
        if self.balances[debit.index()] < amount {
            return Err(LedgerError::InsufficientFunds {
                account: debit,
                balance: self.balances[debit.index()],
                amount,
            });
        }
        self.balances[credit.index()]
            .checked_add(amount)
            .ok_or(LedgerError::Overflow)?;
        Ok(self.apply(debit, credit, amount, reason, txn))
    }

    /// Post several transfers atomically: either all are applied in order or
    /// none is and the ledger is unchanged.
    pub fn post_batch(&mut self, transfers: &[Transfer], txn: Option<TxnId>) -> Result<Vec<LedgerEntry>, LedgerError> {
        let mut scratch: Vec<(AccountId, Money)> = Vec::new();
        fn slot(scratch: &mut Vec<(AccountId, Money)>, ledger: &Ledger, id: AccountId) -> usize {
            match scratch.iter().position(|(a, _)| *a == id) {
                Some(i) => i,
                None => {
                    scratch.push((id, ledger.balances[id.index()]));
                    scratch.len() - 1
                }
            }
        }
        for t in transfers {
            self.check_transfer(t.debit, t.credit, t.amount)?;
            let d = slot(&mut scratch, self, t.debit);
            let balance = scratch[d].1;
            scratch[d].1 = balance.checked_sub(t.amount).ok_or(LedgerError::InsufficientFunds {
                account: t.debit,
                balance,
                amount: t.amount,
            })?;
            let c = slot(&mut scratch, self, t.credit);
            scratch[c].1 = scratch[c].1.checked_add(t.amount).ok_or(LedgerError::Overflow)?;
        }
        Ok(transfers
            .iter()
            .map(|t| self.apply(t.debit, t.credit, t.amount, t.reason, txn))
            .collect())
    }

    fn check_transfer(&self, debit: AccountId, credit: AccountId, amount: Money) -> Result<(), LedgerError> {
        self.account(debit)?;
        self.account(credit)?;
        if debit == credit {
            return Err(LedgerError::SameAccount(debit));
        }
        if amount.is_zero() {
            return Err(LedgerError::NonPositiveAmount);
        }
        Ok(())
    }

    fn apply(&mut self, debit: AccountId, credit: AccountId, amount: Money, reason: Reason, txn: Option<TxnId>) -> LedgerEntry {
        self.balances[debit.index()].0 -= amount.0;
        self.balances[credit.index()].0 += amount.0;
        let entry = LedgerEntry {
            seq: self.entries.len() as u64 + 1,
            debit,
            credit,
            amount,
            reason,
            txn,
        };
        self.entries.push(entry.clone());
        entry
    }

    pub fn balance_of(&self, account: AccountId) -> Result<Money, LedgerError> {
        self.account(account)?;
        Ok(self.balances[account.index()])
    }

    pub fn account(&self, id: AccountId) -> Result<&Account, LedgerError> {
        self.accounts.get(id.index()).ok_or(LedgerError::UnknownAccount(id))
    }

    pub fn accounts(&self) -> &[Account] {
        &self.accounts
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Entries recorded at or after sequence number `from`.
    pub fn entries_since(&self, from: u64) -> &[LedgerEntry] {
        let start = (from.saturating_sub(1) as usize).min(self.entries.len());
        &self.entries[start..]
    }

    pub fn grants(&self) -> &[Grant] {
        &self.grants
    }

    pub fn singleton(&self, kind: AccountKind) -> Option<AccountId> {
        match kind {
            AccountKind::ExchangeFee => self.exchange_fee,
            AccountKind::Sink => self.sink,
            _ => None,
        }
    }

    pub fn exchange_fee_account(&self) -> Option<AccountId> {
        self.exchange_fee
    }

    pub fn sink_account(&self) -> Option<AccountId> {
        self.sink
    }

    /// Sum of every account balance.
    pub fn total_supply(&self) -> Money {
        self.balances.iter().copied().sum()
    }

    /// Sum of every funding grant ever issued.
    pub fn total_issued(&self) -> Money {
        self.grants.iter().map(|g| g.amount).sum()
    }

    /// Write the entry journal, one JSON object per line.
    pub fn export_journal<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for entry in &self.entries {
            serde_json::to_writer(&mut out, entry)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuild a ledger from its account table, grants and entry journal,
    /// re-checking every entry.
    pub fn replay(accounts: &[Account], grants: &[Grant], entries: &[LedgerEntry]) -> Result<Ledger, LedgerError> {
        let mut ledger = Ledger::new();
        for (i, acct) in accounts.iter().enumerate() {
            let id = ledger.open_account(acct.kind, acct.owner.clone())?;
            if id != acct.id {
                return Err(LedgerError::Journal {
                    line: i + 1,
                    message: format!("account table out of order at {}", acct.id),
                });
            }
        }
        for g in grants {
            ledger.fund(g.account, g.amount)?;
        }
        for (i, e) in entries.iter().enumerate() {
            if e.seq != i as u64 + 1 {
                return Err(LedgerError::Journal {
                    line: i + 1,
                    message: format!("expected seq {}, found {}", i + 1, e.seq),
                });
            }
            ledger.post_entry(e.debit, e.credit, e.amount, e.reason, e.txn)?;
        }
        Ok(ledger)
    }
}

/// Read an entry journal written by [`Ledger::export_journal`].
pub fn import_journal<R: BufRead>(input: R) -> Result<Vec<LedgerEntry>, LedgerError> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| LedgerError::Journal { line: i + 1, message: e.to_string() })?;
        let entry: LedgerEntry = serde_json::from_str(&line)
            .map_err(|e| LedgerError::Journal { line: i + 1, message: e.to_string() })?;
        entries.push(entry);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, HashSet};

    fn funded(amounts: &[u64]) -> (Ledger, Vec<AccountId>) {
        let mut ledger = Ledger::with_house_accounts();
        let ids = amounts
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let id = ledger
                    .open_account(AccountKind::Buyer, Some(Owner::Party(format!("p{i}"))))
                    .unwrap();
                if a > 0 {
                    ledger.fund(id, Money(a)).unwrap();
                }
                id
            })
            .collect();
        (ledger, ids)
    }

    #[test]
    fn fresh_account_is_empty() {
        let mut ledger = Ledger::new();
        let id = ledger
            .open_account(AccountKind::Buyer, Some(Owner::Party("q1".into())))
            .unwrap();
        assert_eq!(ledger.balance_of(id).unwrap(), Money::ZERO);
    }

    #[test]
    fn singletons_are_unique() {
        let mut ledger = Ledger::new();
        ledger.open_account(AccountKind::Sink, None).unwrap();
        assert_eq!(
            ledger.open_account(AccountKind::Sink, None),
            Err(LedgerError::DuplicateSingleton(AccountKind::Sink))
        );
        ledger.open_account(AccountKind::ExchangeFee, None).unwrap();
        assert_eq!(
            ledger.open_account(AccountKind::ExchangeFee, None),
            Err(LedgerError::DuplicateSingleton(AccountKind::ExchangeFee))
        );
    }

    #[test]
    fn thousand_accounts_are_distinct() {
        let (mut ledger, _) = funded(&[500]);
        let before = ledger.total_supply();
        let ids: HashSet<AccountId> = (0..1000)
            .map(|_| ledger.open_account(AccountKind::Buyer, None).unwrap())
            .collect();
        assert_eq!(ids.len(), 1000);
        assert_eq!(ledger.total_supply(), before);
    }

    #[test]
    fn full_balance_transfer() {
        let (mut ledger, ids) = funded(&[100]);
        let escrow = ledger
            .open_account(AccountKind::Escrow, Some(Owner::Txn(TxnId(1))))
            .unwrap();
        let e = ledger
            .post_entry(ids[0], escrow, Money(100), Reason::PostPrice, Some(TxnId(1)))
            .unwrap();
        assert_eq!(e.seq, 1);
        assert_eq!(ledger.balance_of(ids[0]).unwrap(), Money(0));
        assert_eq!(ledger.balance_of(escrow).unwrap(), Money(100));
    }

    #[test]
    fn rejects_bad_entries() {
        let (mut ledger, ids) = funded(&[100, 0]);
        assert_eq!(
            ledger.post_entry(ids[0], ids[1], Money(0), Reason::Transfer, None),
            Err(LedgerError::NonPositiveAmount)
        );
        assert_eq!(
            ledger.post_entry(ids[0], ids[0], Money(1), Reason::Transfer, None),
            Err(LedgerError::SameAccount(ids[0]))
        );
        assert!(matches!(
            ledger.post_entry(ids[0], ids[1], Money(101), Reason::Transfer, None),
            Err(LedgerError::InsufficientFunds { .. })
        ));
        let ghost = AccountId(999);
        assert_eq!(
            ledger.post_entry(ghost, ids[1], Money(1), Reason::Transfer, None),
            Err(LedgerError::UnknownAccount(ghost))
        );
        assert_eq!(ledger.balance_of(ghost), Err(LedgerError::UnknownAccount(ghost)));
        assert!(ledger.entries().is_empty());
    }

    #[test]
    fn balance_after_entry_list() {
        // +500, -200, +75 against a counterparty holding enough to cover it
        let (mut ledger, ids) = funded(&[0, 1000]);
        let (a, other) = (ids[0], ids[1]);
        ledger.post_entry(other, a, Money(500), Reason::Transfer, None).unwrap();
        ledger.post_entry(a, other, Money(200), Reason::Transfer, None).unwrap();
        ledger.post_entry(other, a, Money(75), Reason::Transfer, None).unwrap();
        assert_eq!(ledger.balance_of(a).unwrap(), Money(375));
        let mut net: i128 = 0;
        for e in ledger.entries() {
            if e.credit == a {
                net += e.amount.signed();
            }
            if e.debit == a {
                net -= e.amount.signed();
            }
        }
        assert_eq!(net, 375);
    }

    #[test]
    fn batch_is_atomic() {
        let (mut ledger, ids) = funded(&[100, 0]);
        let snapshot = ledger.clone();
        let err = ledger
            .post_batch(
                &[
                    Transfer::new(ids[0], ids[1], Money(60), Reason::Transfer),
                    Transfer::new(ids[0], ids[1], Money(60), Reason::Transfer),
                ],
                None,
            )
            .unwrap_err();
        assert!(matches!(err, LedgerError::InsufficientFunds { balance: Money(40), .. }));
        assert_eq!(ledger, snapshot);
        // money received earlier in the batch can be spent later in it
        let got = ledger
            .post_batch(
                &[
                    Transfer::new(ids[0], ids[1], Money(100), Reason::Transfer),
                    Transfer::new(ids[1], ids[0], Money(30), Reason::Transfer),
                ],
                None,
            )
            .unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(ledger.balance_of(ids[0]).unwrap(), Money(30));
    }

    #[test]
    fn empty_ledger_supply() {
        assert_eq!(Ledger::new().total_supply(), Money::ZERO);
    }

    #[test]
    fn journal_round_trip_and_replay() {
        let (mut ledger, ids) = funded(&[100, 50]);
        ledger.post_entry(ids[0], ids[1], Money(30), Reason::Stake, Some(TxnId(4))).unwrap();
        ledger.post_entry(ids[1], ids[0], Money(70), Reason::Refund, None).unwrap();
        let mut buf = Vec::new();
        ledger.export_journal(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "{\"seq\":1,\"debit\":\"acct-2\",\"credit\":\"acct-3\",\"amount\":30,\"reason\":\"STAKE\",\"txn\":4}\n"
        ));
        let entries = import_journal(&buf[..]).unwrap();
        assert_eq!(entries, ledger.entries());
        let replayed = Ledger::replay(ledger.accounts(), ledger.grants(), &entries).unwrap();
        assert_eq!(replayed, ledger);
        let mut again = Vec::new();
        replayed.export_journal(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn replay_rejects_gaps() {
        let (mut ledger, ids) = funded(&[100, 0]);
        ledger.post_entry(ids[0], ids[1], Money(30), Reason::Transfer, None).unwrap();
        let mut entries = ledger.entries().to_vec();
        entries[0].seq = 2;
        assert!(matches!(
            Ledger::replay(ledger.accounts(), ledger.grants(), &entries),
            Err(LedgerError::Journal { .. })
        ));
    }

    #[test]
    fn random_entries_conserve_supply() {
        use rand::{Rng, SeedableRng};
        let (mut ledger, ids) = funded(&[100, 50, 1_000, 0, 7]);
        let supply = ledger.total_supply();
        assert_eq!(supply, Money(1157));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut posted = 0;
        while posted < 10_000 {
            let d = ids[rng.random_range(0..ids.len())];
            let c = ids[rng.random_range(0..ids.len())];
            let bal = ledger.balance_of(d).unwrap().0;
            if d == c || bal == 0 {
                continue;
            }
            let amt = rng.random_range(1..=bal);
            ledger.post_entry(d, c, Money(amt), Reason::Transfer, None).unwrap();
            posted += 1;
            assert_eq!(ledger.total_supply(), supply);
        }
        let mut replay: BTreeMap<AccountId, i128> = BTreeMap::new();
        for g in ledger.grants() {
            *replay.entry(g.account).or_default() += g.amount.signed();
        }
        for e in ledger.entries() {
            *replay.entry(e.debit).or_default() -= e.amount.signed();
            *replay.entry(e.credit).or_default() += e.amount.signed();
        }
        for id in &ids {
            assert_eq!(replay.get(id).copied().unwrap_or(0), ledger.balance_of(*id).unwrap().signed());
        }
    }

    #[test]
    fn account_id_text_form() {
        assert_eq!(AccountId(12).to_string(), "acct-12");
        assert_eq!("acct-12".parse::<AccountId>().unwrap(), AccountId(12));
        assert!("acct-".parse::<AccountId>().is_err());
        assert!("12".parse::<AccountId>().is_err());
    }
}
