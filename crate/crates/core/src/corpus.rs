//! Password corpus ingestion: length filtering, train/test splitting,
//! unseen-test construction, vocabulary and one-hot index codec.
//!
//! Passwords are raw byte strings; leak files are not assumed to be valid
//! UTF-8 and no decoding is performed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A single candidate password: non-empty raw bytes, no line terminators,
/// at most `max_len` bytes long (checked at construction).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Password(Vec<u8>);

impl Password {
    pub fn new(bytes: impl Into<Vec<u8>>, max_len: usize) -> Result<Self> {
        let bytes = bytes.into();
        if bytes.is_empty()
            || bytes.len() > max_len
            || bytes.iter().any(|&b| b == b'\n' || b == b'\r')
        {
            return Err(Error::Format(format!(
                "invalid password of length {} (max {})",
                bytes.len(),
                max_len
            )));
        }
        Ok(Password(bytes))
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[u8]> for Password {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl std::borrow::Borrow<[u8]> for Password {
    fn borrow(&self) -> &[u8] {
        &self.0
    }
}

/// Multiset of passwords with occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    entries: BTreeMap<Password, u64>,
    total: u64,
    max_len: usize,
}

impl Corpus {
    pub fn new(max_len: usize) -> Self {
        Corpus {
            entries: BTreeMap::new(),
            total: 0,
            max_len,
        }
    }

    pub fn insert(&mut self, p: Password, count: u64) {
        if count == 0 {
            return;
        }
        self.total += count;
        *self.entries.entry(p).or_insert(0) += count;
    }

    /// Occurrence count across all entries.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct passwords.
    pub fn unique(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, bytes: &[u8]) -> u64 {
        self.entries.get(bytes).copied().unwrap_or(0)
    }

    pub fn contains(&self, bytes: &[u8]) -> bool {
        self.entries.contains_key(bytes)
    }

    /// Entries in ascending byte order.
    pub fn iter(&self) -> impl Iterator<Item = (&Password, u64)> {
        self.entries.iter().map(|(p, &c)| (p, c))
    }
}

/// Reproducible train/test split parameters.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    /// Fraction of occurrences assigned to the training side, in (0, 1).
    pub train_fraction: f64,
    pub seed: u64,
    pub max_len: usize,
}

/// Load a newline-delimited password file, keeping lines whose length after
/// stripping the terminator is in `1..=max_len`. Returns the corpus and the
/// number of skipped (empty, too long, or stray-`\r`) lines.
pub fn load_corpus(path: impl AsRef<Path>, max_len: usize) -> Result<(Corpus, u64)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut corpus = Corpus::new(max_len);
    let mut skipped = 0u64;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        if line.last() == Some(&b'\n') {
            line.pop();
        }
        if line.last() == Some(&b'\r') {
            line.pop();
        }
        match Password::new(line.clone(), max_len) {
            Ok(p) => corpus.insert(p, 1),
            Err(_) => skipped += 1,
        }
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "{} has no usable lines (skipped {skipped})",
            path.display()
        )));
    }
    Ok((corpus, skipped))
}

/// Partition the corpus occurrences into train/test sides.
///
/// Exactly `round(train_fraction * total)` occurrence slots go to the train
/// side, chosen uniformly at random by the seeded generator, so the split
/// ratio is exact and the partition is reproducible. The two sides add back
/// to the input multiset; frequent passwords may land on both sides.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("cannot split an empty corpus".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0,1), got {}",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = corpus.total();
    let mut remaining_train = (spec.train_fraction * total as f64).round() as u64;
    let mut remaining = total;
    let mut train = Corpus::new(corpus.max_len());
    let mut test = Corpus::new(corpus.max_len());
    for (p, count) in corpus.iter() {
        let mut to_train = 0u64;
        for _ in 0..count {
            if rng.gen_range(0..remaining) < remaining_train {
                to_train += 1;
                remaining_train -= 1;
            }
            remaining -= 1;
        }
        if to_train > 0 {
            train.insert(p.clone(), to_train);
        }
        if to_train < count {
            test.insert(p.clone(), count - to_train);
        }
    }
    Ok((train, test))
}

/// Unique passwords of `test_raw` that never occur in `train` (set
/// difference over distinct passwords).
pub fn unseen_test(test_raw: &Corpus, train: &Corpus) -> BTreeSet<Password> {
    assert_eq!(
        test_raw.max_len(),
        train.max_len(),
        "corpora must share max_len"
    );
    test_raw
        .iter()
        .filter(|(p, _)| !train.contains(p.bytes()))
        .map(|(p, _)| p.clone())
        .collect()
}

/// Character alphabet with a distinguished padding symbol at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<u8>,
    index: [u16; 256],
}

/// Index reserved for the padding symbol.
pub const PAD: u16 = 0;

impl Vocab {
    /// Build from the distinct bytes of `chars` (sorted, deduplicated).
    pub fn from_bytes(chars: impl IntoIterator<Item = u8>) -> Self {
        let set: BTreeSet<u8> = chars.into_iter().collect();
        let chars: Vec<u8> = set.into_iter().collect();
        let mut index = [u16::MAX; 256];
        for (i, &b) in chars.iter().enumerate() {
            index[b as usize] = (i + 1) as u16;
        }
        Vocab { chars, index }
    }

    /// Total symbol count including the pad.
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// The non-pad byte alphabet in index order (index 1 onward).
    pub fn chars(&self) -> &[u8] {
        &self.chars
    }

    pub fn index_of(&self, byte: u8) -> Option<u16> {
        let i = self.index[byte as usize];
        (i != u16::MAX).then_some(i)
    }

    /// Byte for a non-pad index.
    pub fn byte_at(&self, idx: u16) -> Option<u8> {
        if idx == PAD {
            None
        } else {
            self.chars.get(idx as usize - 1).copied()
        }
    }
}

/// Vocabulary over every distinct byte occurring in the training corpus.
pub fn build_vocab(train: &Corpus) -> Result<Vocab> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus(
            "cannot build a vocab from an empty corpus".into(),
        ));
    }
    Ok(Vocab::from_bytes(
        train.iter().flat_map(|(p, _)| p.bytes().iter().copied()),
    ))
}

/// Map a password to exactly `max_len` vocab indices, right-padded with the
/// pad index.
pub fn encode(p: &Password, v: &Vocab, max_len: usize) -> Result<Vec<u16>> {
    let mut out = vec![PAD; max_len];
    for (slot, &b) in out.iter_mut().zip(p.bytes()) {
        *slot = v.index_of(b).ok_or(Error::UnknownSymbol { byte: b })?;
    }
    Ok(out)
}

/// Inverse of [`encode`]: bytes up to the first pad index.
pub fn decode(indices: &[u16], v: &Vocab) -> Vec<u8> {
    indices.iter().map_while(|&i| v.byte_at(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn corpus_from(pairs: &[(&[u8], u64)], max_len: usize) -> Corpus {
        let mut c = Corpus::new(max_len);
        for &(bytes, count) in pairs {
            c.insert(Password::new(bytes, max_len).unwrap(), count);
        }
        c
    }

    fn write_lines(lines: &[&[u8]]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            f.write_all(l).unwrap();
            f.write_all(b"\n").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_counts_and_skips() {
        let f = write_lines(&[b"123456", b"123456", b"abc", b"thispasswordistoolong"]);
        let (c, skipped) = load_corpus(f.path(), 10).unwrap();
        assert_eq!(c.count(b"123456"), 2);
        assert_eq!(c.count(b"abc"), 1);
        assert_eq!(c.total(), 3);
        assert_eq!(c.unique(), 2);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn load_rejects_empty_corpus() {
        let f = write_lines(&[b""]);
        let err = load_corpus(f.path(), 10).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus(_)));
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let err = load_corpus("/nonexistent/leak.txt", 10).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn load_is_idempotent() {
        let f = write_lines(&[b"aa", b"bb", b"aa", b"x"]);
        let (c1, s1) = load_corpus(f.path(), 10).unwrap();
        let (c2, s2) = load_corpus(f.path(), 10).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn split_ten_distinct_eighty_twenty() {
        let pairs: Vec<(Vec<u8>, u64)> = (0..10u8).map(|i| (vec![b'a' + i], 1)).collect();
        let refs: Vec<(&[u8], u64)> = pairs.iter().map(|(b, c)| (b.as_slice(), *c)).collect();
        let c = corpus_from(&refs, 10);
        let spec = SplitSpec {
            train_fraction: 0.8,
            seed: 7,
            max_len: 10,
        };
        let (train, test) = split(&c, &spec).unwrap();
        assert_eq!(train.total(), 8);
        assert_eq!(test.total(), 2);
        // union of occurrences equals the input
        for (p, count) in c.iter() {
            assert_eq!(train.count(p.bytes()) + test.count(p.bytes()), count);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let c = corpus_from(&[(b"aa", 5), (b"bb", 3), (b"cc", 9)], 10);
        let spec = SplitSpec {
            train_fraction: 0.8,
            seed: 123,
            max_len: 10,
        };
        let a = split(&c, &spec).unwrap();
        let b = split(&c, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_ratio_tight_for_large_corpus() {
        let pairs: Vec<(Vec<u8>, u64)> = (0..200u16)
            .map(|i| {
                (
                    vec![b'a' + (i % 26) as u8, b'a' + (i / 26) as u8],
                    50,
                )
            })
            .collect();
        let refs: Vec<(&[u8], u64)> = pairs.iter().map(|(b, c)| (b.as_slice(), *c)).collect();
        let c = corpus_from(&refs, 10);
        assert_eq!(c.total(), 10_000);
        let (train, _) = split(
            &c,
            &SplitSpec {
                train_fraction: 0.8,
                seed: 1,
                max_len: 10,
            },
        )
        .unwrap();
        let ratio = train.total() as f64 / c.total() as f64;
        assert!((ratio - 0.8).abs() <= 0.005, "ratio {ratio}");
    }

    #[test]
    fn unseen_is_set_difference() {
        let test = corpus_from(&[(b"a", 1), (b"b", 2)], 10);
        let train = corpus_from(&[(b"b", 5), (b"c", 1)], 10);
        let unseen = unseen_test(&test, &train);
        assert_eq!(unseen.len(), 1);
        assert!(unseen.contains(b"a".as_slice()));
    }

    #[test]
    fn unseen_of_subset_is_empty() {
        let test = corpus_from(&[(b"b", 1)], 10);
        let train = corpus_from(&[(b"b", 5), (b"c", 1)], 10);
        assert!(unseen_test(&test, &train).is_empty());
    }

    #[test]
    fn vocab_sorted_with_pad_zero() {
        let train = corpus_from(&[(b"ab", 1), (b"ba", 2)], 10);
        let v = build_vocab(&train).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.chars(), b"ab");
        assert_eq!(v.index_of(b'a'), Some(1));
        assert_eq!(v.index_of(b'b'), Some(2));
        assert_eq!(v.byte_at(PAD), None);
    }

    #[test]
    fn vocab_ignores_counts() {
        let a = corpus_from(&[(b"ab", 1)], 10);
        let b = corpus_from(&[(b"ab", 9)], 10);
        assert_eq!(build_vocab(&a).unwrap(), build_vocab(&b).unwrap());
    }

    #[test]
    fn vocab_matches_sort_oracle() {
        // bytes 0x31..=0x39 plus 'a'..='z' -> 35 chars, V = 36
        let mut c = Corpus::new(10);
        for b in 0x31u8..=0x39 {
            c.insert(Password::new(vec![b], 10).unwrap(), 1);
        }
        for b in b'a'..=b'z' {
            c.insert(Password::new(vec![b], 10).unwrap(), 1);
        }
        let v = build_vocab(&c).unwrap();
        assert_eq!(v.len(), 36);
        let mut expect: Vec<u8> = (0x31..=0x39).chain(b'a'..=b'z').collect();
        expect.sort_unstable();
        expect.dedup();
        assert_eq!(v.chars(), expect.as_slice());
        for (i, &b) in expect.iter().enumerate() {
            assert_eq!(v.index_of(b), Some((i + 1) as u16));
        }
    }

    #[test]
    fn encode_pads_right() {
        let v = Vocab::from_bytes(*b"abc");
        let p = Password::new(*b"abc", 5).unwrap();
        assert_eq!(encode(&p, &v, 5).unwrap(), vec![1, 2, 3, 0, 0]);
    }

    #[test]
    fn encode_unknown_symbol_errors() {
        let v = Vocab::from_bytes(*b"abc");
        let p = Password::new(*b"abz", 5).unwrap();
        assert!(matches!(
            encode(&p, &v, 5).unwrap_err(),
            Error::UnknownSymbol { byte: b'z' }
        ));
    }

    proptest! {
        #[test]
        fn split_conserves_multiset(counts in proptest::collection::vec(1u64..20, 1..30), seed in 0u64..1000) {
            let pairs: Vec<(Vec<u8>, u64)> = counts.iter().enumerate()
                .map(|(i, &c)| (vec![b'a' + (i % 26) as u8, b'0' + (i / 26) as u8], c))
                .collect();
            let mut corpus = Corpus::new(10);
            for (b, c) in &pairs {
                corpus.insert(Password::new(b.clone(), 10).unwrap(), *c);
            }
            let (train, test) = split(&corpus, &SplitSpec { train_fraction: 0.8, seed, max_len: 10 }).unwrap();
            prop_assert_eq!(train.total() + test.total(), corpus.total());
            for (p, c) in corpus.iter() {
                prop_assert_eq!(train.count(p.bytes()) + test.count(p.bytes()), c);
            }
            let unseen = unseen_test(&test, &train);
            for p in &unseen {
                prop_assert!(!train.contains(p.bytes()));
            }
        }

        #[test]
        fn encode_decode_round_trip(bytes in proptest::collection::vec(0u8..=255u8, 1..10)) {
            prop_assume!(bytes.iter().all(|&b| b != b'\n' && b != b'\r'));
            let v = Vocab::from_bytes(bytes.iter().copied());
            let p = Password::new(bytes.clone(), 10).unwrap();
            let enc = encode(&p, &v, 10).unwrap();
            prop_assert_eq!(enc.len(), 10);
            prop_assert_eq!(decode(&enc, &v), bytes);
        }
    }
}
