//! Builds a prototype bank from captions and feature matrices, saves it and
//! loads it back.
//!
//! cargo run --release --example prototype_bank

use protoflow::bank::{extract_vocabulary, load_bank, save_bank, BankInputs, PrototypeBank};
use protoflow::embed::{EmbeddingProvider, ProviderSpec};
use protoflow::linalg::FeatureMatrix;
use protoflow::rng::SeededRng;

fn main() -> protoflow::Result<()> {
    let captions: Vec<String> = [
        "tumor region with nuclear atypia",
        "tumor region with mitotic figures",
        "benign stroma with fibrosis",
        "benign stroma with lymphocytes",
        "dense lymphocytes near tumor region",
        "necrosis inside tumor region",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let spec = ProviderSpec::HashText {
        dim: 32,
        ngram: 3,
        seed: 0,
    };
    let provider = EmbeddingProvider::from_spec(&spec)?;
    let text_rows = captions
        .iter()
        .map(|c| Ok(provider.encode_text(c)?.into_values()))
        .collect::<protoflow::Result<Vec<_>>>()?;
    let text = FeatureMatrix::from_rows(&text_rows)?;
    let mut rng = SeededRng::new(5);
    let jitter = |rows: &[Vec<f64>], rng: &mut SeededRng| -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.iter().map(|v| v + 0.05 * rng.normal()).collect()).collect()
    };
    let vision = FeatureMatrix::from_rows(&jitter(&text_rows, &mut rng))?;
    let proto_rows: Vec<Vec<f64>> = (0..captions.len()).map(|_| (0..8).map(|_| rng.normal()).collect()).collect();

    let vocab = extract_vocabulary(&captions, 5000, 2)?;
    println!("vocabulary: {} terms, most frequent {:?}", vocab.len(), &vocab.terms()[..4]);

    let bank = PrototypeBank::build(BankInputs {
        captions,
        text_vectors: text,
        vision_vectors: vision,
        proto: FeatureMatrix::from_rows(&proto_rows)?,
        vocab,
        seed: 0,
        provider: Some(spec),
    })?;
    for term in ["tumor region", "lymphocytes", "fibrosis"] {
        println!("postings[{term}] = {:?}", bank.inverted().postings(term).unwrap_or(&[]));
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = save_bank(&bank, dir.path())?;
    println!("saved M = {}, d_q = {}, d_p = {}", manifest.m, manifest.d_q, manifest.d_p);
    let back = load_bank(dir.path())?;
    println!("reload identical: {}", back == bank);
    Ok(())
}
