//! Lite semantic communication toolkit.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`nncore`] | tape autodiff, layers, Adam, checkpoint container |
//! | [`textpipe`] | corpus ingestion, vocabulary, BLEU |
//! | [`channel`] | fading channels, transmission, zero-forcing, constellation quantization |
//! | [`csi`] | LS / LMMSE estimation and the learned CSI denoiser |
//! | [`deepsc`] | the semantic transceiver and CSI-aided training |
//! | [`slim`] | pruning, weight/activation quantization, compression ratio |
//! | [`classic`] | Huffman / fixed-length + Reed–Solomon + 64-QAM baseline |
//! | [`registry`] | name-keyed lookup of interchangeable strategies |

pub mod nncore;
pub mod textpipe;
pub mod channel;
pub mod registry;
pub mod csi;
pub mod deepsc;
pub mod slim;
pub mod classic;
