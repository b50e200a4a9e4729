//! Versioned on-disk bundles for trained artifacts.
//!
//! Every file starts with a magic tag, a format version, and a kind
//! byte, followed by a bincode payload. The header keeps stale or
//! mismatched files from deserializing into the wrong type.

use crate::ensemble::{EnsembleConfig, ModeEnsemble};
use crate::error::{Error, Result};
use crate::features::{LinearClassifier, SegmentVocabulary};
use crate::nhpylm::NhpylmModel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CHANTSG\0";
const FORMAT_VERSION: u32 = 1;

const KIND_MODEL: u8 = 1;
const KIND_ENSEMBLE: u8 = 2;
const KIND_CLASSIFIER: u8 = 3;

fn write_bundle<T: Serialize>(path: &Path, kind: u8, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&[kind])?;
    bincode::serialize_into(&mut out, value)
        .map_err(|e| Error::Model(format!("encoding {}: {e}", path.display())))?;
    out.flush()?;
    Ok(())
}

fn read_bundle<T: DeserializeOwned>(path: &Path, kind: u8) -> Result<T> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Model(format!(
            "{} is not a model bundle",
            path.display()
        )));
    }
    let mut version = [0u8; 4];
    input.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(Error::Model(format!(
            "{}: format version {version}, expected {FORMAT_VERSION}",
            path.display()
        )));
    }
    let mut got_kind = [0u8; 1];
    input.read_exact(&mut got_kind)?;
    if got_kind[0] != kind {
        return Err(Error::Model(format!(
            "{}: bundle kind {} does not match the requested kind {kind}",
            path.display(),
            got_kind[0]
        )));
    }
    bincode::deserialize_from(&mut input)
        .map_err(|e| Error::Model(format!("decoding {}: {e}", path.display())))
}

pub fn save_model(path: &Path, model: &NhpylmModel) -> Result<()> {
    write_bundle(path, KIND_MODEL, model)
}

pub fn load_model(path: &Path) -> Result<NhpylmModel> {
    read_bundle(path, KIND_MODEL)
}

/// Serialized form of an ensemble: the parts it is rebuilt from.
#[derive(Serialize, Deserialize)]
struct EnsembleBundle {
    models: Vec<NhpylmModel>,
    prior: Vec<f64>,
    config: EnsembleConfig,
}

pub fn save_ensemble(path: &Path, ensemble: &ModeEnsemble) -> Result<()> {
    let bundle = EnsembleBundle {
        models: ensemble.models().to_vec(),
        prior: ensemble.prior().to_vec(),
        config: ensemble.config(),
    };
    write_bundle(path, KIND_ENSEMBLE, &bundle)
}

pub fn load_ensemble(path: &Path) -> Result<ModeEnsemble> {
    let bundle: EnsembleBundle = read_bundle(path, KIND_ENSEMBLE)?;
    ModeEnsemble::from_parts(bundle.models, bundle.prior, bundle.config)
}

/// A feature vocabulary plus the classifier trained over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBundle {
    pub vocabulary: SegmentVocabulary,
    pub classifier: LinearClassifier,
}

pub fn save_classifier(path: &Path, bundle: &ClassifierBundle) -> Result<()> {
    write_bundle(path, KIND_CLASSIFIER, bundle)
}

pub fn load_classifier(path: &Path) -> Result<ClassifierBundle> {
    let mut bundle: ClassifierBundle = read_bundle(path, KIND_CLASSIFIER)?;
    bundle.vocabulary.rebuild_index();
    Ok(bundle)
}
