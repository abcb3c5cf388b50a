use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{b64, unb64};

/// Revocation bits, LSB-first within each byte. Trailing zero bytes are
/// trimmed so that equal sets always encode identically.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RevocationBitmap(Vec<u8>);

impl RevocationBitmap {
    pub fn from_indices<I: IntoIterator<Item = u64>>(indices: I) -> Self {
        let mut bitmap = RevocationBitmap::default();
        for i in indices {
            bitmap.set(i);
        }
        bitmap
    }

    pub fn is_set(&self, index: u64) -> bool {
        let byte = (index / 8) as usize;
        self.0.get(byte).is_some_and(|b| b & (1 << (index % 8)) != 0)
    }

    pub fn set(&mut self, index: u64) {
        let byte = (index / 8) as usize;
        if self.0.len() <= byte {
            self.0.resize(byte + 1, 0);
        }
        self.0[byte] |= 1 << (index % 8);
    }

    pub fn is_superset_of(&self, other: &RevocationBitmap) -> bool {
        other.0.iter().enumerate().all(|(i, &b)| self.0.get(i).copied().unwrap_or(0) & b == b)
    }

    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.0.iter().enumerate().flat_map(|(byte, &bits)| {
            (0..8u64).filter(move |bit| bits & (1 << bit) != 0).map(move |bit| byte as u64 * 8 + bit)
        })
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|b| b.count_ones() as usize).sum()
    }

    fn trimmed(mut bytes: Vec<u8>) -> Self {
        while bytes.last() == Some(&0) {
            bytes.pop();
        }
        RevocationBitmap(bytes)
    }
}

impl Serialize for RevocationBitmap {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&b64(&self.0))
    }
}

impl<'de> Deserialize<'de> for RevocationBitmap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = unb64(&text).map_err(de::Error::custom)?;
        let bitmap = RevocationBitmap::trimmed(bytes.clone());
        if bitmap.0.len() != bytes.len() {
            return Err(de::Error::custom("revocation bitmap has trailing zero bytes"));
        }
        Ok(bitmap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn set_and_query() {
        let mut b = RevocationBitmap::default();
        assert!(!b.is_set(3));
        b.set(3);
        b.set(17);
        assert!(b.is_set(3) && b.is_set(17) && !b.is_set(4));
        assert_eq!(b.indices().collect::<Vec<_>>(), vec![3, 17]);
        assert_eq!(serde_json::to_string(&b).unwrap(), "\"CAAC\"");
    }

    #[test]
    fn empty_encodes_as_empty_string() {
        assert_eq!(serde_json::to_string(&RevocationBitmap::default()).unwrap(), "\"\"");
        assert!(serde_json::from_str::<RevocationBitmap>("\"CAA\"").is_err());
    }

    proptest! {
        #[test]
        fn superset_matches_set_semantics(a in prop::collection::btree_set(0u64..200, 0..20),
                                          b in prop::collection::btree_set(0u64..200, 0..20)) {
            let ba = RevocationBitmap::from_indices(a.iter().copied());
            let bb = RevocationBitmap::from_indices(b.iter().copied());
            prop_assert_eq!(ba.is_superset_of(&bb), a.is_superset(&b));
            prop_assert_eq!(ba.indices().collect::<std::collections::BTreeSet<_>>(), a.clone());
            let json = serde_json::to_string(&ba).unwrap();
            prop_assert_eq!(serde_json::from_str::<RevocationBitmap>(&json).unwrap(), ba);
        }
    }
}
