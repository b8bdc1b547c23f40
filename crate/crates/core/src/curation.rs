//! Data-governance pipeline: near-duplicate removal, sharpness filtering,
//! k-means clustering, and the two cluster-aware sampling policies used to
//! carve training, test, and prototype splits.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::{dot, FeatureMatrix, ZERO_NORM};
use crate::rng::SeededRng;

/// Default similarity above which two items count as duplicates.
pub const DEDUP_THRESHOLD: f64 = 0.95;
/// Default fraction of images kept by the sharpness filter.
pub const SHARPNESS_KEEP_FRACTION: f64 = 0.5;
/// Default cluster count for the refined-subset clustering.
pub const DEFAULT_CLUSTERS: usize = 128;

/// Greedy first-occurrence-wins deduplication.
///
/// An item is kept iff its cosine similarity to every previously kept item is
/// at most `threshold`. Returned ids keep input order.
pub fn dedup(features: &FeatureMatrix, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dedup threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let unit = features.normalized_rows()?;
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..unit.rows() {
        let row = unit.row(i);
        let duplicate = kept.iter().any(|&j| dot(row, unit.row(j)) > threshold);
        if !duplicate {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Grayscale image with pixel values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(index) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    /// Decodes a PGM or PNG file to 8-bit luma and rescales to `[0, 1]`.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::format(path, e.to_string()))?
            .to_luma8();
        let (w, h) = img.dimensions();
        let pixels = img.into_raw().into_iter().map(|p| p as f64 / 255.0).collect();
        Self::new(w as usize, h as usize, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }
}

/// Lists `*.pgm` / `*.png` files in a directory, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm") | Some("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Population variance of the 4-neighbour Laplacian response over the valid interior.
pub fn laplacian_variance(img: &GrayImage) -> Result<f64> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let mut responses = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let r = img.get(x, y - 1) + img.get(x - 1, y) + img.get(x + 1, y) + img.get(x, y + 1)
                - 4.0 * img.get(x, y);
            responses.push(r);
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n)
}

/// Number of items kept when retaining `fraction` of `n`, rounding up.
pub fn keep_count(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // Subtracting a hair keeps exact products like 4 * 0.5 from rounding up.
    (((n as f64) * fraction - 1e-9).ceil() as usize).clamp(1, n)
}

/// Keeps the sharpest `⌈n·keep_fraction⌉` images. Returns ascending ids.
pub fn sharpness_filter(images: &[GrayImage], keep_fraction: f64) -> Result<Vec<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let scores = images
        .iter()
        .map(laplacian_variance)
        .collect::<Result<Vec<_>>>()?;
    Ok(top_fraction(&scores, keep_fraction))
}

/// Ids of the highest `⌈n·fraction⌉` scores; ties favour the lower id.
pub fn top_fraction(scores: &[f64], fraction: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(keep_count(scores.len(), fraction));
    order.sort_unstable();
    order
}

/// Result of [`kmeans`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: FeatureMatrix,
    pub inertia: f64,
    /// Inertia after every assignment pass, in order.
    pub history: Vec<f64>,
}

impl ClusterAssignment {
    /// Member ids per cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members().iter().map(Vec::len).collect()
    }

    /// Builds an assignment directly from labels (centroids left empty).
    pub fn from_labels(k: usize, labels: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} >= k = {k}")));
        }
        Ok(Self {
            k,
            labels,
            centroids: FeatureMatrix::zeros(0, 0),
            inertia: 0.0,
            history: Vec::new(),
        })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Nearest centroid per row (ties to the lower index) and the resulting inertia.
fn assign(x: &FeatureMatrix, centroids: &Array2<f64>) -> (Vec<usize>, f64) {
    let c = centroids.as_slice().expect("standard layout");
    let d = x.dim();
    let mut labels = Vec::with_capacity(x.rows());
    let mut inertia = 0.0;
    for i in 0..x.rows() {
        let row = x.row(i);
        let (best, dist) = (0..centroids.nrows())
            .map(|j| (j, sq_dist(row, &c[j * d..(j + 1) * d])))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        labels.push(best);
        inertia += dist;
    }
    (labels, inertia)
}

fn kmeans_plus_plus(x: &FeatureMatrix, k: usize, rng: &mut SeededRng) -> Array2<f64> {
    let n = x.rows();
    let d = x.dim();
    let mut chosen = vec![rng.below(n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total <= 0.0 {
            // All remaining mass sits on existing centres; fall back to an unused row.
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.below(unused.len())]
        } else {
            let mut target = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        chosen.push(next);
        for (i, m) in nearest.iter_mut().enumerate() {
            *m = m.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    let mut c = Array2::zeros((k, d));
    for (r, &i) in chosen.iter().enumerate() {
        c.row_mut(r).assign(&x.row_view(i));
    }
    c
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Stops when the largest centroid shift drops below `tol` or after
/// `max_iters` update passes. Empty clusters keep their previous centroid.
pub fn kmeans(
    x: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    if x.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > x.rows() {
        return Err(Error::KExceedsRows { k, rows: x.rows() });
    }
    let mut rng = SeededRng::new(seed);
    let d = x.dim();
    let mut centroids = kmeans_plus_plus(x, k, &mut rng);
    let mut history = Vec::new();
    let (mut labels, mut inertia) = assign(x, &centroids);
    history.push(inertia);
    for _ in 0..max_iters {
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            let mut s = sums.row_mut(l);
            s += &x.row_view(i);
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let mean = sums.row(j).mapv(|v| v / counts[j] as f64);
            let delta = sq_dist(
                mean.as_slice().expect("contiguous"),
                centroids.row(j).as_slice().expect("contiguous"),
            )
            .sqrt();
            shift = shift.max(delta);
            centroids.row_mut(j).assign(&mean);
        }
        let (l, i) = assign(x, &centroids);
        labels = l;
        inertia = i;
        history.push(inertia);
        if shift < tol {
            break;
        }
    }
    Ok(ClusterAssignment {
        k,
        labels,
        centroids: FeatureMatrix::from_array(centroids)?,
        inertia,
        history,
    })
}

/// Largest-remainder apportionment of `n` over clusters of the given sizes.
pub fn proportional_quotas(sizes: &[usize], n: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if n > total {
        return Err(Error::BudgetExceedsPopulation {
            budget: n,
            population: total,
        });
    }
    if n == 0 {
        return Ok(vec![0; sizes.len()]);
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| n * s / total).collect();
    let mut remainders: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(c, &s)| (c, n * s % total))
        .collect();
    remainders.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut left = n - quotas.iter().sum::<usize>();
    for (c, _) in remainders {
        if left == 0 {
            break;
        }
        if quotas[c] < sizes[c] {
            quotas[c] += 1;
            left -= 1;
        }
    }
    Ok(quotas)
}

/// Per-cluster uniform sampling with largest-remainder quotas. Returns ascending ids.
pub fn proportional_sample(
    assignment: &ClusterAssignment,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let members = assignment.members();
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = proportional_quotas(&sizes, n)?;
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(n);
    for (m, &q) in members.iter().zip(&quotas) {
        out.extend(rng.choose_k(m.len(), q).into_iter().map(|i| m[i]));
    }
    out.sort_unstable();
    Ok(out)
}

/// Round-robin over clusters in ascending size (ties by index), drawing one
/// uniform remaining item per visit until `n` items are drawn. Returns ids in
/// draw order.
pub fn rare_first_sample(
    assignment: &ClusterAssignment,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut members = assignment.members();
    let total: usize = members.iter().map(Vec::len).sum();
    if n > total {
        return Err(Error::BudgetExceedsPopulation {
            budget: n,
            population: total,
        });
    }
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by_key(|&c| (members[c].len(), c));
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        for &c in &order {
            if out.len() == n {
                break;
            }
            let pool = &mut members[c];
            if pool.is_empty() {
                continue;
            }
            let pick = rng.below(pool.len());
            out.push(pool.remove(pick));
        }
    }
    Ok(out)
}

/// Cosine similarity above which `dedup` drops an item; exposed for audits.
pub fn is_duplicate(a: &[f64], b: &[f64], threshold: f64) -> bool {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    na > ZERO_NORM && nb > ZERO_NORM && dot(a, b) / (na * nb) > threshold
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fm(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn dedup_examples() {
        assert_eq!(dedup(&fm(&[vec![1., 2.], vec![1., 2.]]), 0.95).unwrap(), vec![0]);
        let ortho = fm(&[vec![1., 0., 0.], vec![0., 1., 0.], vec![0., 0., 1.]]);
        assert_eq!(dedup(&ortho, 0.95).unwrap(), vec![0, 1, 2]);
        let c: f64 = 0.96;
        let s = (1.0 - c * c).sqrt();
        let planted = fm(&[vec![1., 0.], vec![0., 1.], vec![c, s]]);
        assert_eq!(dedup(&planted, 0.95).unwrap(), vec![0, 1]);
        assert!(matches!(
            dedup(&fm(&[vec![1., 0.], vec![0., 0.]]), 0.95),
            Err(Error::ZeroVector { row: Some(1) })
        ));
        assert!(dedup(&planted, 0.0).is_err());
    }

    /// Direct convolution, written independently of `laplacian_variance`.
    fn oracle_responses(img: &[Vec<f64>]) -> Vec<f64> {
        let kernel = [[0., 1., 0.], [1., -4., 1.], [0., 1., 0.]];
        let h = img.len();
        let w = img[0].len();
        let mut out = vec![];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 0.0;
                for (ky, krow) in kernel.iter().enumerate() {
                    for (kx, kv) in krow.iter().enumerate() {
                        acc += kv * img[y + ky - 1][x + kx - 1];
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn laplacian_examples() {
        let flat = GrayImage::from_fn(5, 4, |_, _| 0.3).unwrap();
        assert_eq!(laplacian_variance(&flat).unwrap(), 0.0);

        let board: Vec<Vec<f64>> = (0..4)
            .map(|y| (0..4).map(|x| ((x + y) % 2) as f64).collect())
            .collect();
        let r = oracle_responses(&board);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64;
        assert_eq!(var, 16.0);
        let img = GrayImage::from_fn(4, 4, |x, y| board[y][x]).unwrap();
        assert_eq!(laplacian_variance(&img).unwrap(), 16.0);

        let dot_img = GrayImage::from_fn(3, 3, |x, y| if x == 1 && y == 1 { 1.0 } else { 0.0 })
            .unwrap();
        assert_eq!(oracle_responses(&[vec![0., 0., 0.], vec![0., 1., 0.], vec![0., 0., 0.]]), vec![-4.0]);
        assert_eq!(laplacian_variance(&dot_img).unwrap(), 0.0);

        let small = GrayImage::from_fn(2, 5, |_, _| 0.0).unwrap();
        assert!(matches!(
            laplacian_variance(&small),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    fn image_with_variance_rank(rank: usize) -> GrayImage {
        // Amplitude scales the checkerboard, so variance = 16 * amp^2.
        let amp = rank as f64 * 0.1;
        GrayImage::from_fn(4, 4, |x, y| ((x + y) % 2) as f64 * amp).unwrap()
    }

    #[test]
    fn sharpness_filter_examples() {
        let imgs: Vec<GrayImage> = (0..4).map(image_with_variance_rank).collect();
        assert_eq!(sharpness_filter(&imgs, 0.5).unwrap(), vec![2, 3]);
        assert_eq!(sharpness_filter(&imgs, 1.0).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(top_fraction(&[0., 1., 2., 3.], 0.5), vec![2, 3]);
        assert_eq!(top_fraction(&[1., 1., 1.], 0.34), vec![0, 1]);
        assert!(sharpness_filter(&imgs, 0.0).is_err());
        let bad = vec![GrayImage::from_fn(2, 2, |_, _| 0.).unwrap()];
        assert!(matches!(
            sharpness_filter(&bad, 0.5),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    fn inertia_of(x: &FeatureMatrix, labels: &[usize], k: usize) -> f64 {
        let d = x.dim();
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<usize> = (0..x.rows()).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; d];
            for &i in &members {
                for (m, v) in mean.iter_mut().zip(x.row(i)) {
                    *m += v / members.len() as f64;
                }
            }
            total += members.iter().map(|&i| sq_dist(x.row(i), &mean)).sum::<f64>();
        }
        total
    }

    #[test]
    fn kmeans_two_pairs_matches_brute_force() {
        let x = fm(&[vec![0., 0.], vec![10., 10.], vec![0., 0.1], vec![10., 10.1]]);
        // Brute force over all labelings into two non-empty groups.
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << 4) - 1 {
            let labels: Vec<usize> = (0..4).map(|i| ((mask >> i) & 1) as usize).collect();
            let v = inertia_of(&x, &labels, 2);
            if v < best.0 {
                best = (v, labels);
            }
        }
        let a = kmeans(&x, 2, 7, 100, 1e-12).unwrap();
        assert!((a.inertia - best.0).abs() < 1e-9);
        assert_eq!(a.labels[0], a.labels[2]);
        assert_eq!(a.labels[1], a.labels[3]);
        assert_ne!(a.labels[0], a.labels[1]);
        let c0 = a.centroids.row(a.labels[0]);
        assert!((c0[0] - 0.0).abs() < 1e-12 && (c0[1] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn kmeans_extremes() {
        let x = fm(&[vec![1., 2.], vec![3., 6.], vec![5., 1.]]);
        let one = kmeans(&x, 1, 0, 10, 1e-9).unwrap();
        assert!((one.centroids.row(0)[0] - 3.0).abs() < 1e-12);
        assert!((one.centroids.row(0)[1] - 3.0).abs() < 1e-12);
        let all = kmeans(&x, 3, 0, 10, 1e-9).unwrap();
        assert_eq!(all.inertia, 0.0);
        let mut l = all.labels.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2]);
        assert!(matches!(kmeans(&x, 4, 0, 10, 1e-9), Err(Error::KExceedsRows { .. })));
        assert!(matches!(
            kmeans(&FeatureMatrix::zeros(0, 2), 1, 0, 10, 1e-9),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn kmeans_duplicate_points() {
        let x = fm(&[vec![1., 1.], vec![1., 1.], vec![1., 1.]]);
        let a = kmeans(&x, 2, 3, 10, 1e-9).unwrap();
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn quotas_examples() {
        assert_eq!(proportional_quotas(&[80, 20], 10).unwrap(), vec![8, 2]);
        assert_eq!(proportional_quotas(&[1, 1, 1], 2).unwrap(), vec![1, 1, 0]);
        assert!(proportional_quotas(&[1], 2).is_err());
    }

    #[test]
    fn proportional_sample_examples() {
        let labels: Vec<usize> = (0..100).map(|i| if i < 80 { 0 } else { 1 }).collect();
        let a = ClusterAssignment::from_labels(2, labels).unwrap();
        let s = proportional_sample(&a, 10, 1).unwrap();
        assert_eq!(s.iter().filter(|&&i| i < 80).count(), 8);
        assert!(proportional_sample(&a, 0, 1).unwrap().is_empty());
        let tri = ClusterAssignment::from_labels(3, vec![0, 1, 2]).unwrap();
        assert_eq!(proportional_sample(&tri, 3, 1).unwrap(), vec![0, 1, 2]);
        assert!(matches!(
            proportional_sample(&tri, 4, 1),
            Err(Error::BudgetExceedsPopulation { .. })
        ));
    }

    #[test]
    fn rare_first_examples() {
        let mut labels = vec![0; 100];
        labels.extend(vec![1; 5]);
        labels.extend(vec![2; 3]);
        let a = ClusterAssignment::from_labels(3, labels).unwrap();
        // Simulated schedule: visits go 2, 1, 0, 2, 1, 0 -> two draws per cluster.
        let s = rare_first_sample(&a, 6, 4).unwrap();
        let count = |c: usize| s.iter().filter(|&&i| a.labels[i] == c).count();
        assert_eq!((count(2), count(1), count(0)), (2, 2, 2));
        assert_eq!(a.labels[s[0]], 2);
        // Exhaust: n = total returns everything.
        let mut all = rare_first_sample(&a, 108, 4).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..108).collect::<Vec<_>>());
        let single = ClusterAssignment::from_labels(1, vec![0; 4]).unwrap();
        let two = rare_first_sample(&single, 2, 9).unwrap();
        assert_eq!(two.len(), 2);
        assert_ne!(two[0], two[1]);
        // Smallest cluster fully covered once n reaches 3 * its size.
        let nine = rare_first_sample(&a, 9, 4).unwrap();
        assert_eq!(nine.iter().filter(|&&i| a.labels[i] == 2).count(), 3);
    }

    proptest! {
        #[test]
        fn dedup_postconditions(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..25),
            dup in prop::collection::vec(0usize..25, 0..5),
        ) {
            let mut rows: Vec<Vec<f64>> = rows.into_iter()
                .map(|mut r| { r[0] += 2.0; r })
                .collect();
            for d in dup {
                let src = rows[d % rows.len()].clone();
                rows.push(src);
            }
            let x = fm(&rows);
            let kept = dedup(&x, 0.95).unwrap();
            for (a, &i) in kept.iter().enumerate() {
                for &j in &kept[a + 1..] {
                    prop_assert!(!is_duplicate(x.row(i), x.row(j), 0.95));
                }
            }
            for i in 0..x.rows() {
                if !kept.contains(&i) {
                    prop_assert!(kept.iter().any(|&j| is_duplicate(x.row(i), x.row(j), 0.95)));
                }
            }
            let again = dedup(&x.gather(&kept).unwrap(), 0.95).unwrap();
            prop_assert_eq!(again.len(), kept.len());
        }

        #[test]
        fn quotas_sum_to_budget(sizes in prop::collection::vec(0usize..50, 1..10), frac in 0.0f64..1.0) {
            let total: usize = sizes.iter().sum();
            let n = (total as f64 * frac) as usize;
            let q = proportional_quotas(&sizes, n).unwrap();
            prop_assert_eq!(q.iter().sum::<usize>(), n);
            for (qi, si) in q.iter().zip(&sizes) {
                prop_assert!(qi <= si);
            }
        }

        #[test]
        fn laplacian_shift_invariant(
            pixels in prop::collection::vec(0.0f64..1.0, 20),
            shift in -5.0f64..5.0,
        ) {
            let img = GrayImage::new(5, 4, pixels).unwrap();
            let a = laplacian_variance(&img).unwrap();
            let b = laplacian_variance(&img.map(|p| p + shift)).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }

        #[test]
        fn kmeans_monotone_and_locally_optimal(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 3..40),
            k in 1usize..5,
            seed in 0u64..1000,
        ) {
            prop_assume!(k <= rows.len());
            let x = fm(&rows);
            let a = kmeans(&x, k, seed, 100, 0.0).unwrap();
            for w in a.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
            }
            let direct: f64 = (0..x.rows()).map(|i| sq_dist(x.row(i), a.centroids.row(a.labels[i]))).sum();
            prop_assert!((direct - a.inertia).abs() <= 1e-6 * (1.0 + direct));
            for i in 0..x.rows() {
                let own = sq_dist(x.row(i), a.centroids.row(a.labels[i]));
                for c in 0..k {
                    prop_assert!(own <= sq_dist(x.row(i), a.centroids.row(c)) + 1e-12);
                }
            }
        }
    }
}
