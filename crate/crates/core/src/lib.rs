//! Transformer language models with lag-weighted token mixers, trained from scratch on CPU.

pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod complexity;
pub mod config;
pub mod corpus;
pub mod error;
pub mod extractors;
pub mod generation;
pub mod io;
pub mod model;
pub mod nn;
pub mod par;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use autograd::{finite_diff_check, finite_diff_check_all, finite_diff_report, CustomOp, GradCheck, Gradients, Tape, Var};
pub use config::{ModelConfig, SublayerKind};
pub use corpus::{Corpus, Windows};
pub use error::{Category, Error, Result};
pub use generation::{generate, DecodeMode, Generation, SamplerSpec, Strategy};
pub use model::{Decoder, Model};
pub use nn::Mode;
pub use params::ParamSet;
pub use rng::{PrngState, Stream};
pub use tensor::{ewise, matmul, softmax_rows, EwiseOp, Tensor};
pub use tokenizer::{Vocab, BOS, BOS_ID};
pub use training::{AdamW, BatchSchedule, CostLog, TrainConfig, Trainer};
