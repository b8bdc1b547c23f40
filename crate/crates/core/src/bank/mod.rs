//! The frozen prototype bank: two L2-normalised dense indices (text and
//! vision), a phrase vocabulary with its inverted index, the prototype feature
//! matrix, and the captions the indices were built from.

mod inverted;
mod store;
mod vocab;

use serde::{Deserialize, Serialize};

pub use inverted::{build_inverted_index, InvertedIndex};
pub use store::{load_bank, save_bank, BankManifest, BANK_FORMAT_VERSION};
pub use vocab::{extract_vocabulary, phrase_set, Vocabulary, DEFAULT_TOP_N};

use crate::codec::snap_to_f32;
use crate::embed::ProviderSpec;
use crate::error::{Error, Result};
use crate::linalg::{FeatureMatrix, UNIT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Vision,
}

/// Row-normalised index matrix. Rows are stored at `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    matrix: FeatureMatrix,
    modality: Modality,
}

impl DenseIndex {
    /// Wraps a matrix that is already row-normalised.
    pub fn from_unit_rows(matrix: FeatureMatrix, modality: Modality) -> Result<Self> {
        for i in 0..matrix.rows() {
            let n = crate::linalg::norm(matrix.row(i));
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::ShapeMismatch(format!(
                    "{modality:?} index row {i} has norm {n}"
                )));
            }
        }
        Ok(Self { matrix, modality })
    }

    pub fn matrix(&self) -> &FeatureMatrix {
        &self.matrix
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// L2-normalises every row and stores it at file precision.
pub fn build_dense_index(vectors: &FeatureMatrix, modality: Modality) -> Result<DenseIndex> {
    let unit = snap_to_f32(&vectors.normalized_rows()?);
    DenseIndex::from_unit_rows(unit, modality)
}

/// Everything needed to assemble a bank.
#[derive(Debug, Clone)]
pub struct BankInputs {
    pub captions: Vec<String>,
    pub text_vectors: FeatureMatrix,
    pub vision_vectors: FeatureMatrix,
    pub proto: FeatureMatrix,
    pub vocab: Vocabulary,
    pub seed: u64,
    pub provider: Option<ProviderSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub(crate) text_index: DenseIndex,
    pub(crate) vision_index: DenseIndex,
    pub(crate) vocab: Vocabulary,
    pub(crate) inverted: InvertedIndex,
    pub(crate) proto: FeatureMatrix,
    pub(crate) captions: Vec<String>,
    pub(crate) seed: u64,
    pub(crate) provider: Option<ProviderSpec>,
}

impl PrototypeBank {
    pub fn build(inputs: BankInputs) -> Result<Self> {
        let m = inputs.captions.len();
        for (name, rows) in [
            ("text vectors", inputs.text_vectors.rows()),
            ("vision vectors", inputs.vision_vectors.rows()),
            ("prototype features", inputs.proto.rows()),
        ] {
            if rows != m {
                return Err(Error::ShapeMismatch(format!(
                    "{name} have {rows} rows but there are {m} captions"
                )));
            }
        }
        if inputs.text_vectors.dim() != inputs.vision_vectors.dim() {
            return Err(Error::ShapeMismatch(format!(
                "text dim {} != vision dim {}",
                inputs.text_vectors.dim(),
                inputs.vision_vectors.dim()
            )));
        }
        let captions: Vec<String> = inputs
            .captions
            .iter()
            .map(|c| c.replace(['\n', '\r'], " "))
            .collect();
        let inverted = build_inverted_index(&captions, &inputs.vocab)?;
        let vocab = inputs
            .vocab
            .with_frequencies(|t| inverted.postings(t).map_or(0, <[usize]>::len));
        Ok(Self {
            text_index: build_dense_index(&inputs.text_vectors, Modality::Text)?,
            vision_index: build_dense_index(&inputs.vision_vectors, Modality::Vision)?,
            vocab,
            inverted,
            proto: snap_to_f32(&inputs.proto),
            captions,
            seed: inputs.seed,
            provider: inputs.provider,
        })
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn d_q(&self) -> usize {
        self.text_index.dim()
    }

    pub fn d_p(&self) -> usize {
        self.proto.dim()
    }

    pub fn text_index(&self) -> &DenseIndex {
        &self.text_index
    }

    pub fn vision_index(&self) -> &DenseIndex {
        &self.vision_index
    }

    /// Vocabulary whose frequencies are bank caption counts.
    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn inverted(&self) -> &InvertedIndex {
        &self.inverted
    }

    pub fn proto(&self) -> &FeatureMatrix {
        &self.proto
    }

    pub fn captions(&self) -> &[String] {
        &self.captions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provider(&self) -> Option<&ProviderSpec> {
        self.provider.as_ref()
    }
}
