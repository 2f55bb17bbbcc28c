use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::dsp::{Spectrogram, Stft};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::mixer::{derive_seed, Dataset, Kind, Split, UtteranceMeta, UtteranceRecord};

/// An utterance with its spectra precomputed.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub meta: UtteranceMeta,
    pub noisy: Waveform,
    pub y: Spectrogram,
    pub clean: Option<(Waveform, Spectrogram)>,
    pub clean_rev: Option<(Waveform, Spectrogram)>,
}

impl Utterance {
    pub fn prepare(r: &UtteranceRecord, stft: &Stft) -> Result<Self> {
        if !r.is_consistent() {
            return Err(Error::Manifest(format!("record {} has inconsistent references", r.id())));
        }
        let both = |w: &Option<Waveform>| -> Result<Option<(Waveform, Spectrogram)>> {
            w.as_ref().map(|w| Ok((w.clone(), stft.analyze(w)?))).transpose()
        };
        Ok(Utterance {
            meta: r.meta.clone(),
            noisy: r.noisy.clone(),
            y: stft.analyze(&r.noisy)?,
            clean: both(&r.clean)?,
            clean_rev: both(&r.clean_rev)?,
        })
    }

    pub fn kind(&self) -> Kind {
        self.meta.kind
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }
}

/// Utterances grouped by kind and split.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub synth_train: Vec<Utterance>,
    pub synth_val: Vec<Utterance>,
    pub synth_test: Vec<Utterance>,
    pub real_train: Vec<Utterance>,
    pub real_val: Vec<Utterance>,
    pub real_test: Vec<Utterance>,
}

impl TrainData {
    pub fn from_records(records: &[UtteranceRecord], stft: &Stft, exec: ExecMode) -> Result<Self> {
        let all = exec.try_map(records, |r| Utterance::prepare(r, stft))?;
        let mut d = TrainData::default();
        for u in all {
            let bucket = match (u.meta.kind, u.meta.split) {
                (Kind::Synthetic, Split::Train) => &mut d.synth_train,
                (Kind::Synthetic, Split::Val) => &mut d.synth_val,
                (Kind::Synthetic, Split::Test) => &mut d.synth_test,
                (Kind::Real, Split::Train) => &mut d.real_train,
                (Kind::Real, Split::Val) => &mut d.real_val,
                (Kind::Real, Split::Test) => &mut d.real_test,
            };
            bucket.push(u);
        }
        Ok(d)
    }

    pub fn from_dataset(ds: &Dataset, stft: &Stft, exec: ExecMode) -> Result<Self> {
        Self::from_records(&ds.records, stft, exec)
    }
}

/// Endless seeded stream of minibatch indices. Each pass over the data uses
/// a fresh permutation derived from `(seed, pass)`, so the position alone
/// determines every future batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStream {
    pub seed: u64,
    pub pass: u64,
    pub pos: usize,
}

impl BatchStream {
    pub fn new(seed: u64, label: &str) -> Self {
        BatchStream { seed: derive_seed(seed, label), pass: 0, pos: 0 }
    }

    fn order(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &self.pass.to_string())));
        idx
    }

    /// Next `size` indices into a collection of `n` items.
    pub fn next_batch(&mut self, n: usize, size: usize, what: &str) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::DataExhausted(format!("no {what} utterances available")));
        }
        let mut out = Vec::with_capacity(size);
        let mut order = self.order(n);
        while out.len() < size {
            if self.pos >= n {
                self.pass += 1;
                self.pos = 0;
                order = self.order(n);
            }
            out.push(order[self.pos]);
            self.pos += 1;
        }
        Ok(out)
    }
}

/// Seeded permutation of `0..n` for epoch-based training.
pub fn epoch_order(n: usize, seed: u64, label: &str, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{label}/{epoch}"))));
    idx
}
