//! Dedup, sharpness filtering, clustering and the two cluster-aware samplers
//! on a synthetic pool.
//!
//! cargo run --release --example curation

use protoflow::curation::{
    dedup, kmeans, laplacian_variance, proportional_sample, rare_first_sample, sharpness_filter, GrayImage,
    DEDUP_THRESHOLD, SHARPNESS_KEEP_FRACTION,
};
use protoflow::linalg::FeatureMatrix;
use protoflow::rng::SeededRng;

fn main() -> protoflow::Result<()> {
    let mut rng = SeededRng::new(1);

    // Three 16-d blobs of very different size, then 20 rescaled copies.
    let sizes = [150, 40, 10];
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            rows.push((0..16).map(|j| if j == c { 3.0 } else { 0.0 } + rng.normal()).collect());
        }
    }
    for _ in 0..20 {
        let src = rng.below(rows.len());
        let copy = rows[src].iter().map(|v| 1.5 * v).collect();
        rows.push(copy);
    }
    let features = FeatureMatrix::from_rows(&rows)?;
    let kept = dedup(&features, DEDUP_THRESHOLD)?;
    println!("dedup: {} -> {} rows at cosine > {DEDUP_THRESHOLD}", rows.len(), kept.len());

    let images: Vec<GrayImage> = kept
        .iter()
        .map(|&i| {
            let contrast = 0.1 + 0.8 * ((i * 37 % 100) as f64 / 100.0);
            GrayImage::from_fn(16, 16, |x, y| 0.5 + 0.5 * contrast * ((x + 2 * y) as f64).sin())
        })
        .collect::<protoflow::Result<_>>()?;
    let sharp: Vec<usize> = sharpness_filter(&images, SHARPNESS_KEEP_FRACTION)?
        .into_iter()
        .map(|j| kept[j])
        .collect();
    let scores: Vec<f64> = images.iter().map(laplacian_variance).collect::<protoflow::Result<_>>()?;
    let (lo, hi) = scores.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
    println!("sharpness: kept {} of {} (Laplacian variance {lo:.4}..{hi:.4})", sharp.len(), kept.len());

    let clusters = kmeans(&features.gather(&sharp)?, 3, 7, 100, 1e-9)?;
    println!(
        "kmeans: sizes {:?}, inertia {:.2} after {} passes",
        clusters.sizes(),
        clusters.inertia,
        clusters.history.len()
    );

    let proportional = proportional_sample(&clusters, 30, 3)?;
    let rare_first = rare_first_sample(&clusters, 30, 3)?;
    let per_cluster = |ids: &[usize]| {
        let mut counts = vec![0; clusters.k];
        for &i in ids {
            counts[clusters.labels[i]] += 1;
        }
        counts
    };
    println!("proportional sample of 30 per cluster: {:?}", per_cluster(&proportional));
    println!("rare-first sample of 30 per cluster:   {:?}", per_cluster(&rare_first));
    Ok(())
}
