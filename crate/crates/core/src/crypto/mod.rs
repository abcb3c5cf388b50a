//! Signatures, hashing, salted commitments, channel encryption and the
//! canonical encoding every signed structure goes through.
//!
//! Wire-level choices: Ed25519 signatures, SHA-256 digests,
//! ChaCha20-Poly1305 for sealed channels, X25519 + HKDF-SHA256 for channel
//! key agreement. Byte-strings travel as unpadded base64url.

pub mod canonical;

use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chacha20poly1305::aead::{Aead, Payload};
use chacha20poly1305::{ChaCha20Poly1305, KeyInit};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub use canonical::{canonical, canonical_parse, from_canonical, to_canonical, CanonicalError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid encoding: {0}")]
    InvalidEncoding(String),
    #[error("ciphertext failed authentication")]
    Tamper,
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

pub fn b64(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn unb64(text: &str) -> Result<Vec<u8>, CryptoError> {
    URL_SAFE_NO_PAD
        .decode(text)
        .map_err(|e| CryptoError::InvalidEncoding(e.to_string()))
}

fn unb64_array<const N: usize>(text: &str) -> Result<[u8; N], CryptoError> {
    let bytes = unb64(text)?;
    bytes
        .as_slice()
        .try_into()
        .map_err(|_| CryptoError::InvalidEncoding(format!("expected {N} bytes, got {}", bytes.len())))
}

/// Fixed-size byte newtypes that serialize as base64url strings.
macro_rules! byte_newtype {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_b64(&self) -> String {
                b64(&self.0)
            }

            pub fn from_b64(text: &str) -> Result<Self, CryptoError> {
                unb64_array::<$len>(text).map($name)
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                bytes.try_into().map($name).map_err(|_| {
                    CryptoError::InvalidEncoding(format!(
                        "expected {} bytes, got {}",
                        $len,
                        bytes.len()
                    ))
                })
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_b64())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_b64())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_b64())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                $name::from_b64(&text).map_err(de::Error::custom)
            }
        }
    };
}

byte_newtype!(
    /// Ed25519 verification key.
    PublicKey,
    32
);
byte_newtype!(
    /// Ed25519 signature.
    Signature,
    64
);
byte_newtype!(
    /// SHA-256 output.
    Digest,
    32
);
byte_newtype!(Salt, 16);
byte_newtype!(Nonce32, 32);
byte_newtype!(
    /// X25519 public value used in a channel handshake.
    AgreementKey,
    32
);

impl Digest {
    /// Short lowercase hex prefix, for logs and fingerprints.
    pub fn short_hex(&self) -> String {
        self.0[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Ed25519 signing pair. The secret half is the 32-byte RFC 8032 seed.
#[derive(Clone)]
pub struct KeyPair {
    secret: [u8; 32],
    signing: SigningKey,
    public: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&seed);
        let public = PublicKey(signing.verifying_key().to_bytes());
        KeyPair { secret: seed, signing, public }
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn secret_bytes(&self) -> &[u8; 32] {
        &self.secret
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }

    /// Sign the canonical encoding of `value`.
    pub fn sign_canonical<T: Serialize + ?Sized>(&self, value: &T) -> Result<Signature, CryptoError> {
        Ok(self.sign(&to_canonical(value)?))
    }
}

pub fn keygen(seed: [u8; 32]) -> KeyPair {
    KeyPair::from_seed(seed)
}

pub fn sign(secret_key: &[u8; 32], message: &[u8]) -> Signature {
    KeyPair::from_seed(*secret_key).sign(message)
}

/// `Ok(false)` for a well-formed but wrong signature; `Err` when the key
/// is not a valid curve point.
pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> Result<bool, CryptoError> {
    let vk = VerifyingKey::from_bytes(&public_key.0)
        .map_err(|e| CryptoError::InvalidEncoding(format!("public key: {e}")))?;
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    Ok(vk.verify(message, &sig).is_ok())
}

/// Length-checked variant for raw byte inputs.
pub fn verify_raw(public_key: &[u8], message: &[u8], signature: &[u8]) -> Result<bool, CryptoError> {
    let pk = PublicKey::from_slice(public_key)?;
    let sig = Signature::from_slice(signature)?;
    verify(&pk, message, &sig)
}

pub fn verify_canonical<T: Serialize + ?Sized>(
    public_key: &PublicKey,
    value: &T,
    signature: &Signature,
) -> Result<bool, CryptoError> {
    verify(public_key, &to_canonical(value)?, signature)
}

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

pub fn hash_canonical<T: Serialize + ?Sized>(value: &T) -> Result<Digest, CryptoError> {
    Ok(hash(&to_canonical(value)?))
}

/// Commitment to one named attribute value under a salt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaltedCommitment {
    pub salt: Salt,
    pub value_digest: Digest,
}

pub fn commitment_digest(name: &str, value: &str, salt: &Salt) -> Digest {
    // Array of strings only, so canonicalization cannot fail.
    let body = serde_json::json!([name, value, salt.to_b64()]);
    hash(&canonical(&body).expect("string array is canonicalizable"))
}

pub fn commit(name: &str, value: &str, salt: Salt) -> SaltedCommitment {
    SaltedCommitment { salt, value_digest: commitment_digest(name, value, &salt) }
}

pub fn random_bytes<const N: usize, R: RngCore + ?Sized>(rng: &mut R) -> [u8; N] {
    let mut out = [0u8; N];
    rng.fill_bytes(&mut out);
    out
}

/// ChaCha20-Poly1305 encryption of `plaintext` under `channel_key`.
pub fn seal(channel_key: &[u8; 32], plaintext: &[u8], nonce: &[u8; 12]) -> Vec<u8> {
    seal_with_aad(channel_key, plaintext, nonce, &[])
}

pub fn open(channel_key: &[u8; 32], ciphertext: &[u8], nonce: &[u8; 12]) -> Result<Vec<u8>, CryptoError> {
    open_with_aad(channel_key, ciphertext, nonce, &[])
}

pub fn seal_with_aad(channel_key: &[u8; 32], plaintext: &[u8], nonce: &[u8; 12], aad: &[u8]) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(channel_key.into());
    cipher
        .encrypt(nonce.into(), Payload { msg: plaintext, aad })
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers")
}

pub fn open_with_aad(
    channel_key: &[u8; 32],
    ciphertext: &[u8],
    nonce: &[u8; 12],
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let cipher = ChaCha20Poly1305::new(channel_key.into());
    cipher
        .decrypt(nonce.into(), Payload { msg: ciphertext, aad })
        .map_err(|_| CryptoError::Tamper)
}

/// X25519 ephemeral secret for one channel handshake.
pub struct EphemeralSecret(x25519_dalek::StaticSecret);

impl EphemeralSecret {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        EphemeralSecret(x25519_dalek::StaticSecret::from(random_bytes::<32, _>(rng)))
    }

    pub fn public(&self) -> AgreementKey {
        AgreementKey(x25519_dalek::PublicKey::from(&self.0).to_bytes())
    }

    /// Derive the 32-byte channel key from the X25519 shared secret.
    /// `salt` mixes in both handshake nonces, `info` binds both identities.
    pub fn derive_channel_key(&self, their_public: &AgreementKey, salt: &[u8], info: &[u8]) -> [u8; 32] {
        let shared = self.0.diffie_hellman(&x25519_dalek::PublicKey::from(their_public.0));
        let hk = hkdf::Hkdf::<Sha256>::new(Some(salt), shared.as_bytes());
        let mut key = [0u8; 32];
        hk.expand(info, &mut key).expect("32 bytes is a valid HKDF-SHA256 output length");
        key
    }
}
