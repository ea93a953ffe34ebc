use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};

/// A packed binary code. Bit `j` lives in word `j / 64` at position `j % 64`;
/// padding bits beyond `bit_count` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    words: Vec<u64>,
    bit_count: usize,
    pub embedding_id: String,
}

impl BinaryCode {
    pub fn from_words(words: Vec<u64>, bit_count: usize, embedding_id: impl Into<String>) -> Result<Self> {
        if words.len() != bit_count.div_ceil(64) {
            return Err(Error::Shape(format!("{} words cannot hold exactly {bit_count} bits", words.len())));
        }
        if !bit_count.is_multiple_of(64) {
            let last = words[words.len() - 1];
            if last >> (bit_count % 64) != 0 {
                return Err(Error::Domain("padding bits must be zero".into()));
            }
        }
        Ok(Self { words, bit_count, embedding_id: embedding_id.into() })
    }

    pub fn from_bits(bits: &[bool], embedding_id: impl Into<String>) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (j, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            words[j / 64] |= 1 << (j % 64);
        }
        Self { words, bit_count: bits.len(), embedding_id: embedding_id.into() }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit_count(&self) -> usize {
        self.bit_count
    }

    pub fn bit(&self, j: usize) -> bool {
        assert!(j < self.bit_count, "bit {j} out of range");
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.bit_count).map(|j| self.bit(j)).collect()
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }
}

/// Packs `v_j > 0` as bit `j`; zeros map to 0.
pub fn sign_quantize(v: &[f64]) -> BinaryCode {
    let mut words = vec![0u64; v.len().div_ceil(64)];
    for (j, &x) in v.iter().enumerate() {
        if x > 0.0 {
            words[j / 64] |= 1 << (j % 64);
        }
    }
    BinaryCode { words, bit_count: v.len(), embedding_id: String::new() }
}

/// Hamming distance between codes of the same embedding.
pub fn hamming(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.embedding_id != b.embedding_id {
        return Err(Error::EmbeddingMismatch { expected: a.embedding_id.clone(), actual: b.embedding_id.clone() });
    }
    if a.bit_count != b.bit_count {
        return Err(Error::Shape(format!("codes of {} and {} bits", a.bit_count, b.bit_count)));
    }
    Ok(hamming_words(&a.words, &b.words))
}

pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Serialize, Deserialize)]
struct CodesMeta {
    kind: String,
    embedding_id: String,
    ids: Vec<String>,
}

/// A batch of codes from one embedding with one identifier per code.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBatch {
    pub bit_count: usize,
    pub embedding_id: String,
    pub ids: Vec<String>,
    pub codes: Vec<BinaryCode>,
}

impl CodeBatch {
    pub fn new(bit_count: usize, embedding_id: impl Into<String>) -> Self {
        Self { bit_count, embedding_id: embedding_id.into(), ids: Vec::new(), codes: Vec::new() }
    }

    pub fn push(&mut self, id: impl Into<String>, code: BinaryCode) -> Result<()> {
        if code.embedding_id != self.embedding_id {
            return Err(Error::EmbeddingMismatch { expected: self.embedding_id.clone(), actual: code.embedding_id });
        }
        if code.bit_count != self.bit_count {
            return Err(Error::Shape(format!("{}-bit code in a {}-bit batch", code.bit_count, self.bit_count)));
        }
        self.ids.push(id.into());
        self.codes.push(code);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let words: Vec<&[u64]> = self.codes.iter().map(|c| c.words()).collect();
        container::write_codes(path, self.bit_count as u32, &words)?;
        container::write_sidecar(
            path,
            &CodesMeta { kind: "codes".into(), embedding_id: self.embedding_id.clone(), ids: self.ids.clone() },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: CodesMeta = container::read_sidecar(path)?;
        if meta.kind != "codes" {
            return Err(Error::format(path, format!("expected codes, found `{}`", meta.kind)));
        }
        let (bits, words) = container::read_codes(path)?;
        if words.len() != meta.ids.len() {
            return Err(Error::format(path, "identifier count does not match code count"));
        }
        let mut batch = Self::new(bits as usize, meta.embedding_id.clone());
        for (id, w) in meta.ids.into_iter().zip(words) {
            let code = BinaryCode::from_words(w, bits as usize, meta.embedding_id.clone())
                .map_err(|e| Error::format(path, e.to_string()))?;
            batch.push(id, code)?;
        }
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn sign_rule_and_ties() {
        let c = sign_quantize(&[3.0, -2.0, 0.0]);
        assert_eq!(c.bits(), vec![true, false, false]);
        assert_eq!(sign_quantize(&[-0.0]).bits(), vec![false]);
    }

    #[test]
    fn small_hamming_examples() {
        let a = BinaryCode::from_bits(&[true, false, true, false], "e");
        let b = BinaryCode::from_bits(&[false, true, true, false], "e");
        assert_eq!(hamming(&a, &b).unwrap(), 2);
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        let other = BinaryCode::from_bits(&[true, false, true, false], "f");
        assert!(matches!(hamming(&a, &other), Err(Error::EmbeddingMismatch { .. })));
    }

    #[test]
    fn packing_matches_scalar_oracle() {
        let mut rng = rng_from_seed(1);
        for _ in 0..10_000 {
            let n = rng.random_range(1..200);
            let v: Vec<f64> = (0..n)
                .map(|_| match rng.random_range(0..10) {
                    0 => 0.0,
                    _ => rng.random_range(-1.0..1.0),
                })
                .collect();
            let c = sign_quantize(&v);
            for (j, &x) in v.iter().enumerate() {
                let word = c.words()[j / 64];
                assert_eq!((word >> (j % 64)) & 1 == 1, x > 0.0);
            }
            assert_eq!(c.count_ones() as usize, v.iter().filter(|&&x| x > 0.0).count());
        }
    }

    #[test]
    fn hamming_matches_bit_loop() {
        let mut rng = rng_from_seed(2);
        for _ in 0..100_000 {
            let bits = 64 * rng.random_range(1..4);
            let a: Vec<bool> = (0..bits).map(|_| rng.random()).collect();
            let b: Vec<bool> = (0..bits).map(|_| rng.random()).collect();
            let oracle = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
            let (ca, cb) = (BinaryCode::from_bits(&a, ""), BinaryCode::from_bits(&b, ""));
            assert_eq!(hamming(&ca, &cb).unwrap(), oracle);
        }
    }

    proptest! {
        #[test]
        fn negation_complements(v in proptest::collection::vec(-1e6f64..1e6, 1..300)) {
            prop_assume!(v.iter().all(|&x| x != 0.0));
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let (a, b) = (sign_quantize(&v), sign_quantize(&neg));
            prop_assert_eq!(hamming(&a, &b).unwrap() as usize, v.len());
        }

        #[test]
        fn hamming_is_a_metric(
            a in proptest::collection::vec(any::<bool>(), 128),
            b in proptest::collection::vec(any::<bool>(), 128),
            c in proptest::collection::vec(any::<bool>(), 128),
        ) {
            let (a, b, c) = (BinaryCode::from_bits(&a, ""), BinaryCode::from_bits(&b, ""), BinaryCode::from_bits(&c, ""));
            let ab = hamming(&a, &b).unwrap();
            prop_assert_eq!(ab, hamming(&b, &a).unwrap());
            prop_assert!(hamming(&a, &c).unwrap() <= ab + hamming(&b, &c).unwrap());
        }
    }

    #[test]
    fn batch_round_trip() {
        let mut batch = CodeBatch::new(128, "lsh-x");
        let mut rng = rng_from_seed(3);
        for i in 0..5 {
            let bits: Vec<bool> = (0..128).map(|_| rng.random()).collect();
            batch.push(format!("d{i}"), BinaryCode::from_bits(&bits, "lsh-x")).unwrap();
        }
        assert!(batch.push("bad", BinaryCode::from_bits(&[true; 128], "other")).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.codes");
        batch.save(&p).unwrap();
        assert_eq!(CodeBatch::load(&p).unwrap(), batch);
    }

    #[test]
    fn rejects_dirty_padding() {
        assert!(BinaryCode::from_words(vec![1 << 10], 8, "").is_err());
        assert!(BinaryCode::from_words(vec![0, 0], 64, "").is_err());
        assert!(BinaryCode::from_words(vec![0xff], 8, "").is_ok());
    }
}
