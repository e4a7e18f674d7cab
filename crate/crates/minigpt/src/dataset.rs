//! Train/validation token streams and shifted next-token batches.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RandomState;
use crate::tensor::IdTensor;
use crate::tokenizer::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?} (expected train or val)"))),
        }
    }
}

/// Inputs and targets of shape `(B, T)`; `y` is `x` shifted one token left.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub x: IdTensor,
    pub y: IdTensor,
}

/// A corpus token stream split into a training prefix and validation suffix.
#[derive(Clone, Debug)]
pub struct TokenStore {
    train: Vec<usize>,
    val: Vec<usize>,
    block_size: usize,
}

impl TokenStore {
    /// Puts the first `floor(train_fraction * N)` tokens in the training split.
    pub fn split(ids: &[usize], train_fraction: f64, block_size: usize) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("train fraction must be in (0, 1), got {train_fraction}")));
        }
        if block_size == 0 {
            return Err(Error::InvalidArgument("block size must be at least 1".into()));
        }
        let cut = (train_fraction * ids.len() as f64).floor() as usize;
        let store = TokenStore { train: ids[..cut].to_vec(), val: ids[cut..].to_vec(), block_size };
        for split in [Split::Train, Split::Val] {
            store.check_len(split)?;
        }
        Ok(store)
    }

    pub fn tokens(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    fn check_len(&self, split: Split) -> Result<()> {
        let len = self.tokens(split).len();
        if len < self.block_size + 1 {
            return Err(Error::SplitTooSmall {
                split: split.name(),
                len,
                needed: self.block_size + 1,
                block_size: self.block_size,
            });
        }
        Ok(())
    }

    /// Builds the window starting at `start`: `x = ids[start..start+T]`,
    /// `y = ids[start+1..start+T+1]`.
    pub fn window(&self, split: Split, start: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let ids = self.tokens(split);
        let t = self.block_size;
        if start + t + 1 > ids.len() {
            return Err(Error::InvalidArgument(format!(
                "window at {start} with block size {t} overruns the {split} split ({} tokens)",
                ids.len()
            )));
        }
        Ok((ids[start..start + t].to_vec(), ids[start + 1..start + t + 1].to_vec()))
    }

    /// Largest valid window start, `len - T - 1`.
    pub fn max_start(&self, split: Split) -> usize {
        self.tokens(split).len() - self.block_size - 1
    }

    /// Draws `batch_size` independent uniform window starts, one per row in order.
    pub fn sample_batch(&self, split: Split, batch_size: usize, rng: &mut RandomState) -> Result<Batch> {
        self.check_len(split)?;
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        let max_start = self.max_start(split);
        let t = self.block_size;
        let (mut x, mut y) = (Vec::with_capacity(batch_size * t), Vec::with_capacity(batch_size * t));
        for _ in 0..batch_size {
            let start = rng.index_inclusive(max_start);
            let (xr, yr) = self.window(split, start)?;
            x.extend(xr);
            y.extend(yr);
        }
        Ok(Batch { x: IdTensor::new(&[batch_size, t], x)?, y: IdTensor::new(&[batch_size, t], y)? })
    }
}

/// Reads a UTF-8 corpus, builds its vocabulary and encodes it.
pub fn load_corpus(path: &Path) -> Result<(Vocabulary, Vec<usize>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vocab = Vocabulary::build(&text)?;
    let ids = vocab.encode(&text)?;
    Ok((vocab, ids))
}

/// Where a training corpus was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusSource {
    /// The `MINIGPT_DATA` environment variable.
    Env,
    /// `data/input.txt`, the Tiny Shakespeare file fetched by `scripts/fetch_tinyshakespeare.sh`.
    TinyShakespeare,
    /// `data/standin_shakespeare.txt`, a substitute built from public-domain plays.
    StandIn,
}

impl fmt::Display for CorpusSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusSource::Env => "MINIGPT_DATA",
            CorpusSource::TinyShakespeare => "Tiny Shakespeare",
            CorpusSource::StandIn => "stand-in corpus (not Tiny Shakespeare)",
        })
    }
}

/// First existing corpus among `$MINIGPT_DATA`, `<root>/data/input.txt` and
/// `<root>/data/standin_shakespeare.txt`.
pub fn find_corpus(root: &Path) -> Option<(std::path::PathBuf, CorpusSource)> {
    let env = std::env::var_os("MINIGPT_DATA").map(|p| (p.into(), CorpusSource::Env));
    let candidates = env.into_iter().chain([
        (root.join("data/input.txt"), CorpusSource::TinyShakespeare),
        (root.join("data/standin_shakespeare.txt"), CorpusSource::StandIn),
    ]);
    candidates.into_iter().find(|(p, _)| p.is_file())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let ids: Vec<usize> = (0..100).collect();
        let s = TokenStore::split(&ids, 0.9, 4).unwrap();
        assert_eq!(s.tokens(Split::Train).len(), 90);
        assert_eq!(s.tokens(Split::Val).len(), 10);

        let ids: Vec<usize> = (0..10).collect();
        let s = TokenStore::split(&ids, 0.5, 2).unwrap();
        assert_eq!(s.tokens(Split::Train), &[0, 1, 2, 3, 4]);
        assert_eq!(s.tokens(Split::Val), &[5, 6, 7, 8, 9]);
    }

    #[test]
    fn split_too_small() {
        let ids: Vec<usize> = (0..100).collect();
        let err = TokenStore::split(&ids, 0.9, 10).unwrap_err();
        assert!(matches!(err, Error::SplitTooSmall { split: "val", len: 10, needed: 11, .. }));
        assert!(TokenStore::split(&ids, 0.9, 9).is_ok());
        assert!(TokenStore::split(&ids, 1.0, 2).is_err());
        assert!(TokenStore::split(&ids, 0.0, 2).is_err());
    }

    #[test]
    fn hell_ello_window() {
        let vocab = Vocabulary::build("hello").unwrap();
        let ids = vocab.encode("hello").unwrap();
        let store = TokenStore { train: ids.clone(), val: ids, block_size: 4 };
        let (x, y) = store.window(Split::Train, 0).unwrap();
        assert_eq!(vocab.decode(&x).unwrap(), "hell");
        assert_eq!(vocab.decode(&y).unwrap(), "ello");
        assert_eq!(store.max_start(Split::Train), 0);
        assert!(store.window(Split::Train, 1).is_err());
        // the only legal window is the one above
        let mut rng = RandomState::new(3);
        let b = store.sample_batch(Split::Train, 5, &mut rng).unwrap();
        assert!(b.x.ids().chunks(4).all(|r| r == x.as_slice()));
    }

    #[test]
    fn shift_identity_and_bounds() {
        let ids: Vec<usize> = (0..500).collect();
        let store = TokenStore::split(&ids, 0.9, 8).unwrap();
        let mut rng = RandomState::new(42);
        for split in [Split::Train, Split::Val] {
            let toks = store.tokens(split);
            for _ in 0..50 {
                let b = store.sample_batch(split, 4, &mut rng).unwrap();
                assert_eq!(b.x.shape(), &[4, 8]);
                for (xr, yr) in b.x.ids().chunks(8).zip(b.y.ids().chunks(8)) {
                    assert_eq!(&xr[1..], &yr[..7]);
                    // ids equal their position, so windows are in-split and contiguous
                    assert!(toks.contains(&xr[0]) && toks.contains(&yr[7]));
                    assert_eq!(yr[7], xr[7] + 1);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_batches() {
        let ids: Vec<usize> = (0..300).map(|i| i % 17).collect();
        let store = TokenStore::split(&ids, 0.9, 6).unwrap();
        let (mut a, mut b) = (RandomState::new(42), RandomState::new(42));
        for _ in 0..10 {
            assert_eq!(
                store.sample_batch(Split::Train, 3, &mut a).unwrap(),
                store.sample_batch(Split::Train, 3, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn start_indices_are_uniform() {
        // 1008 train tokens with T = 8 leave exactly 1000 legal starts, 100 per bin
        let ids: Vec<usize> = (0..2016).collect();
        let store = TokenStore::split(&ids, 0.5, 8).unwrap();
        assert_eq!(store.max_start(Split::Train), 999);
        let mut rng = RandomState::new(42);
        let draws = 10_000;
        let mut bins = [0usize; 10];
        for _ in 0..draws {
            let b = store.sample_batch(Split::Train, 1, &mut rng).unwrap();
            bins[b.x.ids()[0] / 100] += 1;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 9 degrees of freedom
        assert!(chi2 < 27.877, "chi2 = {chi2}, bins = {bins:?}");
    }
}
