//! Counter-based random streams.
//!
//! A single user seed fans out into four independent ChaCha8 streams. The
//! position inside a stream is an explicit word counter, so any draw can be
//! replayed from `(seed, stream, counter)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// The purpose a random draw serves. Each purpose has its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Init,
    Dropout,
    BatchOrder,
    Sampling,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::BatchOrder => 3,
            Stream::Sampling => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrngState {
    seed: u64,
    stream: Stream,
    rng: ChaCha8Rng,
}

impl PrngState {
    pub fn new(seed: u64, stream: Stream) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream.id());
        Self { seed, stream, rng }
    }

    /// Resume a stream at an explicit 32-bit word counter.
    pub fn at(seed: u64, stream: Stream, counter: u64) -> Self {
        let mut state = Self::new(seed, stream);
        state.rng.set_word_pos(u128::from(counter));
        state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    pub fn counter(&self) -> u64 {
        self.rng.get_word_pos() as u64
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self, std: f64) -> f64 {
        // std is validated by callers; Normal::new only fails on non-finite std.
        Normal::new(0.0, std)
            .expect("finite standard deviation")
            .sample(&mut self.rng)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for PrngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
