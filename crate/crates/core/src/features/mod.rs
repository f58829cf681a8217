//! Per-frame network inputs: 40 MFCCs spliced over five frames (200 dims)
//! followed by a 100-dim per-recording embedding, 300 dims in total.
//!
//! The embedding fills the slot an i-vector would occupy. It is a fixed
//! linear map of the per-recording MFCC mean and standard deviation, so it
//! does not depend on any trained model.

mod archive;
mod mfcc;

use std::sync::OnceLock;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use archive::{read_feature_archive, read_feature_file, write_feature_archive, write_feature_file, ArchiveEntry};
pub use mfcc::{compute_mfcc, dct_matrix, mel_filterbank, MfccConfig, MfccExtractor};

use crate::audio::AudioSignal;
use crate::error::{Error, Result};

pub const MFCC_DIM: usize = 40;
pub const SPLICE_LEFT: usize = 2;
pub const SPLICE_RIGHT: usize = 2;
pub const SPLICED_DIM: usize = MFCC_DIM * (SPLICE_LEFT + SPLICE_RIGHT + 1);
pub const EMBEDDING_DIM: usize = 100;
pub const INPUT_DIM: usize = SPLICED_DIM + EMBEDDING_DIM;

/// Statistics fed to the embedding projection: mean and std of each MFCC.
const EMBEDDING_STATS_DIM: usize = 2 * MFCC_DIM;
/// Seed the shipped projection matrix was generated from.
pub const PROJECTION_SEED: u64 = 0x1_7EC7_0125;

static PROJECTION_ASSET: &[u8] = include_bytes!("../../assets/embedding_projection.bin");

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// `T x D`, one row per frame.
    pub frames: Array2<f64>,
    pub frame_shift_ms: f64,
    pub frame_length_ms: f64,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Concatenates each frame with its `left` predecessors and `right`
/// successors, replicating the first and last frames at the edges.
pub fn splice(frames: ArrayView2<f64>, left: usize, right: usize) -> Array2<f64> {
    let (t, d) = frames.dim();
    let width = left + right + 1;
    let mut out = Array2::zeros((t, d * width));
    if t == 0 {
        return out;
    }
    for i in 0..t {
        for k in 0..width {
            let src = (i + k).saturating_sub(left).min(t - 1);
            out.slice_mut(s![i, k * d..(k + 1) * d]).assign(&frames.row(src));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingEmbedding {
    pub vector: Array1<f64>,
    pub source_id: String,
}

/// The `100 x 80` projection with orthonormal columns, decoded from the
/// shipped asset.
pub fn embedding_projection() -> &'static Array2<f64> {
    static CELL: OnceLock<Array2<f64>> = OnceLock::new();
    CELL.get_or_init(|| {
        let values: Vec<f64> = PROJECTION_ASSET
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        Array2::from_shape_vec((EMBEDDING_DIM, EMBEDDING_STATS_DIM), values).expect("asset has 100x80 values")
    })
}

/// Regenerates the projection matrix: Gaussian entries from a seeded
/// ChaCha stream, orthonormalized column by column with two passes of
/// modified Gram-Schmidt.
pub fn generate_projection(seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Array2::from_shape_simple_fn((EMBEDDING_DIM, EMBEDDING_STATS_DIM), || {
        // Box-Muller; the first uniform is kept away from zero.
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    });
    for j in 0..EMBEDDING_STATS_DIM {
        for _pass in 0..2 {
            for k in 0..j {
                let proj = m.column(k).dot(&m.column(j));
                let ck = m.column(k).to_owned();
                m.column_mut(j).scaled_add(-proj, &ck);
            }
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        m.column_mut(j).mapv_inplace(|v| v / norm);
    }
    m
}

/// Embeds a recording from its MFCC frames (`T x 40`).
pub fn recording_embedding(frames: &FeatureMatrix, source_id: &str) -> Result<RecordingEmbedding> {
    if frames.num_frames() == 0 {
        return Err(Error::domain("embedding needs at least one frame"));
    }
    if frames.dim() != MFCC_DIM {
        return Err(Error::domain(format!("embedding expects {MFCC_DIM}-dim frames, got {}", frames.dim())));
    }
    let mean = frames.frames.mean_axis(Axis(0)).expect("non-empty");
    let std = frames.frames.std_axis(Axis(0), 0.0);
    let mut stats = Array1::zeros(EMBEDDING_STATS_DIM);
    stats.slice_mut(s![..MFCC_DIM]).assign(&mean);
    stats.slice_mut(s![MFCC_DIM..]).assign(&std);
    Ok(RecordingEmbedding {
        vector: embedding_projection().dot(&stats),
        source_id: source_id.to_string(),
    })
}

/// Appends the embedding to every spliced frame, giving `T x 300`.
pub fn assemble_input(spliced: ArrayView2<f64>, emb: &RecordingEmbedding) -> Result<Array2<f64>> {
    if spliced.ncols() != SPLICED_DIM {
        return Err(Error::domain(format!("spliced features must be {SPLICED_DIM}-dim, got {}", spliced.ncols())));
    }
    if emb.vector.len() != EMBEDDING_DIM {
        return Err(Error::domain(format!("embedding must be {EMBEDDING_DIM}-dim, got {}", emb.vector.len())));
    }
    let t = spliced.nrows();
    let mut out = Array2::zeros((t, INPUT_DIM));
    out.slice_mut(s![.., ..SPLICED_DIM]).assign(&spliced);
    out.slice_mut(s![.., SPLICED_DIM..]).assign(&emb.vector.broadcast((t, EMBEDDING_DIM)).expect("row broadcast"));
    Ok(out)
}

/// Full audio-to-input pipeline for one recording.
pub struct FeaturePipeline {
    mfcc: MfccExtractor,
}

impl FeaturePipeline {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        if cfg.num_ceps != MFCC_DIM {
            return Err(Error::config(format!("network input needs {MFCC_DIM} cepstra")));
        }
        Ok(FeaturePipeline {
            mfcc: MfccExtractor::new(cfg)?,
        })
    }

    pub fn mfcc_config(&self) -> &MfccConfig {
        self.mfcc.config()
    }

    pub fn extract(&self, signal: &AudioSignal, source_id: &str) -> Result<Array2<f64>> {
        let m = self.mfcc.compute(signal)?;
        let emb = recording_embedding(&m, source_id)?;
        assemble_input(splice(m.frames.view(), SPLICE_LEFT, SPLICE_RIGHT).view(), &emb)
    }
}

impl Default for FeaturePipeline {
    fn default() -> Self {
        FeaturePipeline::new(MfccConfig::default()).expect("default config is valid")
    }
}
