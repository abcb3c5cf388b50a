use im::{OrdMap, OrdSet};
use serde_json::{json, Map, Value};

use super::types::*;
use crate::crypto::{self, Digest, PublicKey};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractState {
    pub contract_address: Digest,
    pub admin: PublicKey,
    pub issuers: OrdSet<PublicKey>,
    pub prescriptions: OrdMap<PublicKey, PrescriptionToken>,
}

impl ContractState {
    pub fn to_json(&self) -> Value {
        let prescriptions: Map<String, Value> = self
            .prescriptions
            .iter()
            .map(|(pk, t)| (pk.to_b64(), json!({"issuer": t.issuer, "remaining_redemptions": t.remaining_redemptions})))
            .collect();
        json!({
            "contract_address": self.contract_address,
            "admin": self.admin,
            "issuers": self.issuers.iter().collect::<Vec<_>>(),
            "prescriptions": prescriptions,
        })
    }
}

/// Deterministic ledger state. Cloning is O(1) thanks to structural sharing,
/// so the applier can publish a snapshot after every batch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LedgerState {
    height: u64,
    contracts: OrdMap<Digest, ContractState>,
    last_nonces: OrdMap<PublicKey, u64>,
}

impl LedgerState {
    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn contract(&self, address: &Digest) -> Option<&ContractState> {
        self.contracts.get(address)
    }

    pub fn contracts(&self) -> impl Iterator<Item = &ContractState> {
        self.contracts.values()
    }

    pub fn query_token(&self, address: &Digest, patient_pk: &PublicKey) -> Option<PrescriptionToken> {
        self.contracts.get(address)?.prescriptions.get(patient_pk).cloned()
    }

    pub fn last_nonce(&self, sender: &PublicKey) -> Option<u64> {
        self.last_nonces.get(sender).copied()
    }

    pub fn next_nonce(&self, sender: &PublicKey) -> u64 {
        self.last_nonce(sender).map_or(0, |n| n + 1)
    }

    pub fn check_nonce(&self, tx: &LedgerTransaction) -> Result<(), SubmitError> {
        match self.last_nonce(&tx.sender) {
            Some(last) if tx.nonce <= last => Err(SubmitError::StaleNonce { got: tx.nonce, last }),
            _ => Ok(()),
        }
    }

    /// Full admission + application: nonce, then signature, then the
    /// contract logic. Pre-order failures leave the state untouched.
    pub fn submit(&mut self, tx: &LedgerTransaction) -> Result<LedgerReceipt, SubmitError> {
        self.check_nonce(tx)?;
        if !tx.signature_valid() {
            return Err(SubmitError::BadSignature);
        }
        Ok(self.apply_admitted(tx))
    }

    /// Assign the next height and run the contract transition. The caller
    /// has already checked nonce freshness and signature.
    pub(crate) fn apply_admitted(&mut self, tx: &LedgerTransaction) -> LedgerReceipt {
        let height = self.height;
        self.height += 1;
        self.last_nonces.insert(tx.sender, tx.nonce);
        match &tx.command {
            Command::Deploy => self.apply_deploy(height, tx.sender, tx.nonce),
            Command::Create { contract_address, patient_pk, count } => {
                self.apply_create(height, tx.sender, contract_address, patient_pk, *count)
            }
            Command::Spend { contract_address } => self.apply_spend(height, tx.sender, contract_address),
            Command::AddIssuer { contract_address, new_issuer_pk } => {
                self.apply_add_issuer(height, tx.sender, contract_address, new_issuer_pk)
            }
        }
    }

    fn apply_deploy(&mut self, height: u64, sender: PublicKey, nonce: u64) -> LedgerReceipt {
        let address = contract_address(&sender, nonce);
        self.contracts.insert(
            address,
            ContractState {
                contract_address: address,
                admin: sender,
                issuers: OrdSet::unit(sender),
                prescriptions: OrdMap::new(),
            },
        );
        let mut receipt = LedgerReceipt::ok(height);
        receipt.contract_address = Some(address);
        receipt
    }

    fn apply_create(
        &mut self,
        height: u64,
        sender: PublicKey,
        address: &Digest,
        patient_pk: &PublicKey,
        count: u64,
    ) -> LedgerReceipt {
        let Some(contract) = self.contracts.get_mut(address) else {
            return LedgerReceipt::rejected(height, ErrorCode::UnknownContract);
        };
        if !contract.issuers.contains(&sender) {
            return LedgerReceipt::rejected(height, ErrorCode::NotAuthorized);
        }
        if count == 0 {
            return LedgerReceipt::rejected(height, ErrorCode::BadCount);
        }
        if !well_formed(patient_pk) {
            return LedgerReceipt::rejected(height, ErrorCode::MalformedKey);
        }
        if contract.prescriptions.contains_key(patient_pk) {
            return LedgerReceipt::rejected(height, ErrorCode::DuplicateToken);
        }
        contract
            .prescriptions
            .insert(*patient_pk, PrescriptionToken { issuer: sender, remaining_redemptions: count });
        let mut receipt = LedgerReceipt::ok(height);
        receipt.remaining_redemptions = Some(count);
        receipt
    }

    fn apply_spend(&mut self, height: u64, sender: PublicKey, address: &Digest) -> LedgerReceipt {
        let Some(contract) = self.contracts.get_mut(address) else {
            return LedgerReceipt::rejected(height, ErrorCode::UnknownContract);
        };
        // unknown keys read as a zero-value token
        match contract.prescriptions.get_mut(&sender) {
            Some(token) if token.remaining_redemptions >= 1 => {
                token.remaining_redemptions -= 1;
                let mut receipt = LedgerReceipt::ok(height);
                receipt.remaining_redemptions = Some(token.remaining_redemptions);
                receipt
            }
            _ => LedgerReceipt::rejected(height, ErrorCode::AlreadySpent),
        }
    }

    fn apply_add_issuer(&mut self, height: u64, sender: PublicKey, address: &Digest, new_issuer: &PublicKey) -> LedgerReceipt {
        let Some(contract) = self.contracts.get_mut(address) else {
            return LedgerReceipt::rejected(height, ErrorCode::UnknownContract);
        };
        if contract.admin != sender {
            return LedgerReceipt::rejected(height, ErrorCode::NotAuthorized);
        }
        if !well_formed(new_issuer) {
            return LedgerReceipt::rejected(height, ErrorCode::MalformedKey);
        }
        contract.issuers.insert(*new_issuer);
        LedgerReceipt::ok(height)
    }

    pub fn to_json(&self) -> Value {
        let contracts: Map<String, Value> =
            self.contracts.iter().map(|(addr, c)| (addr.to_b64(), c.to_json())).collect();
        let nonces: Map<String, Value> = self.last_nonces.iter().map(|(pk, n)| (pk.to_b64(), json!(n))).collect();
        json!({"height": self.height, "contracts": contracts, "last_nonces": nonces})
    }

    pub fn digest(&self) -> Digest {
        crypto::hash_canonical(&self.to_json()).expect("ledger state is canonicalizable")
    }
}

fn well_formed(pk: &PublicKey) -> bool {
    ed25519_dalek::VerifyingKey::from_bytes(&pk.0).is_ok()
}
