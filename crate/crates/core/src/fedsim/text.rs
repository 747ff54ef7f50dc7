//! Hashed word tokenizer and fixed-length sequence packing.

use crate::hashing::fnv1a64;

/// Token id reserved for padding.
pub const PAD: u32 = 0;

/// Id of one word: `1 + fnv1a64(word) mod (vocab_size - 1)`.
pub fn word_id(word: &str, vocab_size: usize) -> u32 {
    assert!(vocab_size >= 2, "vocab_size must be >= 2");
    1 + (fnv1a64(word.as_bytes(), 0) % (vocab_size as u64 - 1)) as u32
}

/// Whitespace-split words of `text`, hashed into `[1, vocab_size)`.
pub fn tokenize_hashed(text: &str, vocab_size: usize) -> Vec<u32> {
    text.split_whitespace().map(|w| word_id(w, vocab_size)).collect()
}

/// Consecutive chunks of `seq_len` tokens, the last right-padded with [`PAD`].
pub fn pack_sequences(tokens: &[u32], seq_len: usize) -> Vec<Vec<u32>> {
    assert!(seq_len >= 2, "seq_len must be >= 2");
    tokens
        .chunks(seq_len)
        .map(|c| {
            let mut s = c.to_vec();
            s.resize(seq_len, PAD);
            s
        })
        .collect()
}

/// Exactly `n` items, cycling through `items` from the start as needed.
pub fn cycle_take<T: Clone>(items: &[T], n: usize) -> Vec<T> {
    if items.is_empty() {
        return Vec::new();
    }
    items.iter().cycle().take(n).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::stream_rng;
    use rand::Rng;

    #[test]
    fn tokenizer() {
        assert!(tokenize_hashed("", 8192).is_empty());
        let t = tokenize_hashed("cat dog cat", 8192);
        assert_eq!(t[0], t[2]);
        let mut rng = stream_rng(0, "words", b"");
        for _ in 0..10_000 {
            let len = rng.random_range(1..12);
            let w: String = (0..len).map(|_| char::from(rng.random_range(b'a'..=b'z'))).collect();
            let id = word_id(&w, 8192);
            assert!((1..=8191).contains(&id));
        }
        assert!(tokenize_hashed("a b c d", 2).iter().all(|&t| t == 1));
    }

    #[test]
    fn packing() {
        let toks: Vec<u32> = (1..=130).collect();
        let p = pack_sequences(&toks, 129);
        assert_eq!(p.len(), 2);
        assert_eq!(p[1][0], 130);
        assert!(p[1][1..].iter().all(|&t| t == PAD));
        assert_eq!(p[1].len(), 129);
        assert_eq!(pack_sequences(&toks[..129], 129).len(), 1);
        assert!(pack_sequences(&[], 129).is_empty());
    }

    #[test]
    fn cycling() {
        assert_eq!(cycle_take(&[1, 2, 3], 7), [1, 2, 3, 1, 2, 3, 1]);
        assert_eq!(cycle_take(&[1, 2, 3], 2), [1, 2]);
        assert!(cycle_take::<u8>(&[], 3).is_empty());
    }
}
