//! Agglomerative clustering with average linkage over Euclidean distance.
//!
//! Class counts here are tiny (tens), so the naive O(n³) merge loop is used.

/// Euclidean distance between two equal-length vectors.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Merges clusters bottom-up until `num_clusters` remain.
///
/// Each step merges the pair with the smallest mean pairwise distance.
/// Ties go to the pair whose smallest members are lexicographically first,
/// so the result is fully determined by the input order. Returned clusters
/// are sorted internally and ordered by their smallest member.
pub fn average_linkage(points: &[Vec<f64>], num_clusters: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    assert!(num_clusters >= 1 && num_clusters <= n);

    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| euclidean(&points[i], &points[j])).collect())
        .collect();

    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // Sum of pairwise distances between clusters a and b.
    let mut link: Vec<Vec<f64>> = dist.clone();

    while clusters.len() > num_clusters {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let avg = link[a][b] / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(d, _, _)| avg < d) {
                    best = Some((avg, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two clusters");

        // Fold b into a. Sums of distances are additive across merged members.
        for k in 0..clusters.len() {
            link[a][k] += link[b][k];
            link[k][a] = link[a][k];
        }
        link[a][a] = 0.0;
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters[a].sort_unstable();
        link.remove(b);
        for row in &mut link {
            row.remove(b);
        }
    }
    // Clusters stay ordered by smallest member: merges keep the lower slot.
    clusters
}
