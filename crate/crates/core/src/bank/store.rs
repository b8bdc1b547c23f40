//! Bank directory layout: `manifest.json`, `text.idx`, `vision.idx`,
//! `proto.bin`, `vocab.txt`, `inverted.json`, `captions.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenseIndex, InvertedIndex, Modality, PrototypeBank, Vocabulary};
use crate::checksum::sha256_hex;
use crate::codec;
use crate::embed::ProviderSpec;
use crate::error::{Error, Result};
use crate::rng;

pub const BANK_FORMAT_VERSION: u32 = 1;

const TEXT_IDX: &str = "text.idx";
const VISION_IDX: &str = "vision.idx";
const PROTO: &str = "proto.bin";
const VOCAB: &str = "vocab.txt";
const INVERTED: &str = "inverted.json";
const CAPTIONS: &str = "captions.txt";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankManifest {
    pub version: u32,
    pub m: usize,
    pub d_q: usize,
    pub d_p: usize,
    pub seed: u64,
    pub rng: String,
    #[serde(default)]
    pub provider: Option<ProviderSpec>,
    /// File name → SHA-256 hex digest.
    pub checksums: BTreeMap<String, String>,
}

fn text_lines(lines: &[String]) -> Vec<u8> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    s.into_bytes()
}

fn write(dir: &Path, name: &str, bytes: &[u8], sums: &mut BTreeMap<String, String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    sums.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

pub fn save_bank(bank: &PrototypeBank, dir: &Path) -> Result<BankManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sums = BTreeMap::new();
    write(dir, TEXT_IDX, &codec::encode(bank.text_index.matrix()), &mut sums)?;
    write(dir, VISION_IDX, &codec::encode(bank.vision_index.matrix()), &mut sums)?;
    write(dir, PROTO, &codec::encode(&bank.proto), &mut sums)?;
    write(dir, VOCAB, &text_lines(bank.vocab.terms()), &mut sums)?;
    let inverted = serde_json::to_vec_pretty(bank.inverted.as_map())
        .map_err(|e| Error::format(dir.join(INVERTED), e.to_string()))?;
    write(dir, INVERTED, &inverted, &mut sums)?;
    write(dir, CAPTIONS, &text_lines(&bank.captions), &mut sums)?;
    let manifest = BankManifest {
        version: BANK_FORMAT_VERSION,
        m: bank.len(),
        d_q: bank.d_q(),
        d_p: bank.d_p(),
        seed: bank.seed,
        rng: rng::ALGORITHM.to_string(),
        provider: bank.provider.clone(),
        checksums: sums,
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<BankManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

fn read_checked(dir: &Path, name: &str, manifest: &BankManifest) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = manifest
        .checksums
        .get(name)
        .ok_or_else(|| Error::format(dir.join(MANIFEST), format!("no checksum for {name}")))?;
    if sha256_hex(&bytes) != *expected {
        return Err(Error::ChecksumMismatch {
            file: name.to_string(),
        });
    }
    Ok(bytes)
}

fn utf8(bytes: Vec<u8>, path: &Path) -> Result<String> {
    String::from_utf8(bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn shape(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::ShapeMismatch(format!(
            "{what}: manifest says {expected}, found {got}"
        )));
    }
    Ok(())
}

/// Loads a bank, verifying version, every file checksum, then cross-component shapes.
pub fn load_bank(dir: &Path) -> Result<PrototypeBank> {
    let manifest = read_manifest(dir)?;
    if manifest.version != BANK_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.version,
            expected: BANK_FORMAT_VERSION,
        });
    }
    let text = codec::decode(&read_checked(dir, TEXT_IDX, &manifest)?, &dir.join(TEXT_IDX))?;
    let vision = codec::decode(
        &read_checked(dir, VISION_IDX, &manifest)?,
        &dir.join(VISION_IDX),
    )?;
    let proto = codec::decode(&read_checked(dir, PROTO, &manifest)?, &dir.join(PROTO))?;
    let vocab_text = utf8(read_checked(dir, VOCAB, &manifest)?, &dir.join(VOCAB))?;
    let inverted_bytes = read_checked(dir, INVERTED, &manifest)?;
    let captions_text = utf8(read_checked(dir, CAPTIONS, &manifest)?, &dir.join(CAPTIONS))?;

    let m = manifest.m;
    let captions: Vec<String> = captions_text.lines().map(str::to_string).collect();
    shape("caption count", captions.len(), m)?;
    shape("text index rows", text.rows(), m)?;
    shape("vision index rows", vision.rows(), m)?;
    shape("prototype rows", proto.rows(), m)?;
    shape("text index dim", text.dim(), manifest.d_q)?;
    shape("vision index dim", vision.dim(), manifest.d_q)?;
    shape("prototype dim", proto.dim(), manifest.d_p)?;

    let postings: BTreeMap<String, Vec<usize>> = serde_json::from_slice(&inverted_bytes)
        .map_err(|e| Error::format(dir.join(INVERTED), e.to_string()))?;
    let inverted = InvertedIndex::from_postings(postings, m)?;
    let terms: Vec<String> = vocab_text.lines().map(str::to_string).collect();
    if terms.len() != inverted.len() || terms.iter().any(|t| inverted.postings(t).is_none()) {
        return Err(Error::ShapeMismatch(
            "vocabulary and inverted index disagree on terms".into(),
        ));
    }
    let freq: Vec<usize> = terms
        .iter()
        .map(|t| inverted.postings(t).map_or(0, <[usize]>::len))
        .collect();
    let vocab = Vocabulary::new(terms, freq)?;

    Ok(PrototypeBank {
        text_index: DenseIndex::from_unit_rows(text, Modality::Text)?,
        vision_index: DenseIndex::from_unit_rows(vision, Modality::Vision)?,
        vocab,
        inverted,
        proto,
        captions,
        seed: manifest.seed,
        provider: manifest.provider,
    })
}
