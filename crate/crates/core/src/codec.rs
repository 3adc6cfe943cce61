//! Serde adapters that store numeric blocks as base64 little-endian `f64`
//! bytes. Bit-exact, so reloaded models predict identically.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("numeric block length {} is not a multiple of 8", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// `#[serde(with = "codec::vec")]` for `Vec<f64>`.
pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        encode_f64s(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        decode_f64s(&text).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct Block {
    shape: Vec<usize>,
    data: String,
}

/// `#[serde(with = "codec::array2")]` for `Array2<f64>`.
pub mod array2 {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data: Vec<f64> = a.iter().copied().collect();
        Block {
            shape: vec![a.nrows(), a.ncols()],
            data: encode_f64s(&data),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let b = Block::deserialize(d)?;
        if b.shape.len() != 2 {
            return Err(D::Error::custom("expected a 2-d block"));
        }
        let data = decode_f64s(&b.data).map_err(D::Error::custom)?;
        Array2::from_shape_vec((b.shape[0], b.shape[1]), data).map_err(D::Error::custom)
    }
}

/// `#[serde(with = "codec::array1")]` for `Array1<f64>`.
pub mod array1 {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data: Vec<f64> = a.iter().copied().collect();
        Block {
            shape: vec![a.len()],
            data: encode_f64s(&data),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        let b = Block::deserialize(d)?;
        let data = decode_f64s(&b.data).map_err(D::Error::custom)?;
        if b.shape != [data.len()] {
            return Err(D::Error::custom("1-d block shape does not match data"));
        }
        Ok(Array1::from(data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f64_blocks_round_trip_bit_exactly(v in proptest::collection::vec(proptest::num::f64::ANY, 0..64)) {
            let back = decode_f64s(&encode_f64s(&v)).unwrap();
            prop_assert_eq!(back.len(), v.len());
            for (a, b) in back.iter().zip(&v) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_truncated_block() {
        assert!(decode_f64s(&STANDARD.encode([0u8; 7])).is_err());
    }
}
