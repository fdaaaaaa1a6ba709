//! Vocabulary-free tokenizer: casefold, split on whitespace, strip edge
//! punctuation, and hash each word into a fixed number of buckets. No fitted
//! state means curated corpora can be re-tokenized forever without drift.

/// FNV-1a, the same family used for parameter checksums.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Debug, Clone)]
pub struct HashTokenizer {
    vocab_size: usize,
    max_tokens: usize,
}

impl HashTokenizer {
    /// Bucket 0 is reserved for the empty sequence, so `vocab_size` must be
    /// at least 2.
    pub fn new(vocab_size: usize, max_tokens: usize) -> Self {
        assert!(vocab_size >= 2, "need at least one hash bucket plus the empty token");
        assert!(max_tokens >= 1, "max_tokens must be positive");
        HashTokenizer { vocab_size, max_tokens }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    /// Token ids in [0, vocab_size), truncated to `max_tokens`. Words are
    /// casefolded and stripped of leading/trailing non-alphanumerics before
    /// hashing, so "Fingers." and "fingers" collide on purpose. Text with no
    /// usable word yields the single reserved empty token.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            if out.len() == self.max_tokens {
                break;
            }
            let trimmed = word.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                continue;
            }
            let lower = trimmed.to_lowercase();
            let bucket = 1 + (fnv1a(lower.as_bytes()) % (self.vocab_size as u64 - 1)) as usize;
            out.push(bucket);
        }
        if out.is_empty() {
            out.push(0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_and_case_collide() {
        let tok = HashTokenizer::new(1024, 16);
        assert_eq!(tok.encode("Fingers."), tok.encode("fingers"));
        assert_eq!(tok.encode("(spider)"), tok.encode("Spider"));
        assert_ne!(tok.encode("spider"), tok.encode("finger"));
    }

    #[test]
    fn empty_input_gets_reserved_token() {
        let tok = HashTokenizer::new(64, 8);
        assert_eq!(tok.encode(""), vec![0]);
        assert_eq!(tok.encode("  ... !!"), vec![0]);
    }

    #[test]
    fn truncates_to_max_tokens() {
        let tok = HashTokenizer::new(64, 3);
        let ids = tok.encode("one two three four five");
        assert_eq!(ids.len(), 3);
        assert_eq!(ids, tok.encode("one two three"));
    }

    #[test]
    fn ids_stay_in_range_and_nonzero_for_words() {
        let tok = HashTokenizer::new(16, 32);
        for word in ["alpha", "beta", "gamma", "delta", "x1", "x2", "x3"] {
            let ids = tok.encode(word);
            assert_eq!(ids.len(), 1);
            assert!(ids[0] >= 1 && ids[0] < 16);
        }
    }
}
