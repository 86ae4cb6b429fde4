use serde::{Deserialize, Serialize};

/// Cluster membership of one point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClusterLabel {
    Cluster(usize),
    Noise,
}

impl ClusterLabel {
    pub fn cluster(self) -> Option<usize> {
        match self {
            ClusterLabel::Cluster(c) => Some(c),
            ClusterLabel::Noise => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<ClusterLabel>,
    pub n_clusters: usize,
    pub eps: f64,
    pub min_samples: usize,
}

impl ClusterAssignment {
    /// Indices of the points in cluster `c`.
    pub fn members(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, l)| **l == ClusterLabel::Cluster(c))
            .map(|(i, _)| i)
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == ClusterLabel::Noise).count()
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn region(points: &[Vec<f64>], i: usize, eps2: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| squared_distance(&points[i], p) <= eps2)
        .map(|(j, _)| j)
        .collect()
}

/// DBSCAN with Euclidean distance.
///
/// A point is core when at least `min_samples` points (itself included) lie
/// within `eps`. Points are scanned in index order and clusters are numbered
/// in the order they are discovered; a border point reachable from several
/// clusters stays with the first one that reached it.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_samples: usize) -> ClusterAssignment {
    assert!(eps > 0.0, "eps must be positive");
    assert!(min_samples >= 1, "min_samples must be at least 1");
    let eps2 = eps * eps;
    let n = points.len();
    let mut labels = vec![None::<ClusterLabel>; n];
    let mut n_clusters = 0;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        let neighbors = region(points, i, eps2);
        if neighbors.len() < min_samples {
            labels[i] = Some(ClusterLabel::Noise);
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        labels[i] = Some(ClusterLabel::Cluster(c));
        let mut frontier = neighbors;
        while let Some(j) = frontier.pop() {
            match labels[j] {
                Some(ClusterLabel::Cluster(_)) => continue,
                // unvisited, or noise that turns out to be a border point
                Some(ClusterLabel::Noise) | None => {
                    labels[j] = Some(ClusterLabel::Cluster(c));
                    let nb = region(points, j, eps2);
                    if nb.len() >= min_samples {
                        frontier.extend(nb);
                    }
                }
            }
        }
    }
    ClusterAssignment {
        labels: labels.into_iter().map(|l| l.unwrap_or(ClusterLabel::Noise)).collect(),
        n_clusters,
        eps,
        min_samples,
    }
}
