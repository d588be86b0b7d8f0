use super::graph::compact;
use super::SubdomainAssignment;
use crate::numeric::{squared_distance, Matrix};
use crate::{Error, Result};

/// Greedily merges the two communities with the closest embedding centroids until at most `m`
/// remain. Ties go to the pair with the smallest ids.
pub fn merge_to_m(labels: &[usize], embeddings: &Matrix, knowledge: &Matrix, m: usize) -> Result<SubdomainAssignment> {
    if labels.len() != embeddings.rows() {
        return Err(Error::shape("merge_to_m labels", embeddings.rows(), labels.len()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("M must be at least 1".into()));
    }
    let (mut labels, k) = compact(labels);
    if k <= m {
        return Ok(SubdomainAssignment::from_labels(labels, embeddings, knowledge));
    }
    let dim = embeddings.cols();
    let mut size = vec![0usize; k];
    let mut centroid = vec![vec![0.0; dim]; k];
    for (i, &l) in labels.iter().enumerate() {
        size[l] += 1;
        for (c, v) in centroid[l].iter_mut().zip(embeddings.row(i)) {
            *c += v;
        }
    }
    for (c, &s) in centroid.iter_mut().zip(&size) {
        c.iter_mut().for_each(|v| *v /= s as f64);
    }
    let mut alive = vec![true; k];
    let mut owner: Vec<usize> = (0..k).collect();

    // nearest live partner of each live community (smallest id on ties)
    let nearest = |a: usize, alive: &[bool], centroid: &[Vec<f64>]| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for b in 0..k {
            if b != a && alive[b] {
                let d = squared_distance(&centroid[a], &centroid[b]);
                if d < best.1 {
                    best = (b, d);
                }
            }
        }
        best
    };
    let mut nn: Vec<(usize, f64)> = (0..k).map(|a| nearest(a, &alive, &centroid)).collect();
    let mut live = k;
    while live > m {
        let mut pick = (usize::MAX, usize::MAX, f64::INFINITY);
        for a in 0..k {
            if !alive[a] {
                continue;
            }
            let (b, d) = nn[a];
            let pair = (a.min(b), a.max(b));
            if d < pick.2 || (d == pick.2 && pair < (pick.0, pick.1)) {
                pick = (pair.0, pair.1, d);
            }
        }
        let (a, b, _) = pick;
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        let merged: Vec<f64> =
            centroid[a].iter().zip(&centroid[b]).map(|(x, y)| (x * sa + y * sb) / (sa + sb)).collect();
        centroid[a] = merged;
        size[a] += size[b];
        alive[b] = false;
        owner.iter_mut().filter(|o| **o == b).for_each(|o| *o = a);
        live -= 1;
        for c in 0..k {
            if !alive[c] {
                continue;
            }
            if c == a || nn[c].0 == a || nn[c].0 == b {
                nn[c] = nearest(c, &alive, &centroid);
            } else {
                let d = squared_distance(&centroid[c], &centroid[a]);
                if d < nn[c].1 || (d == nn[c].1 && a < nn[c].0) {
                    nn[c] = (a, d);
                }
            }
        }
    }
    for l in &mut labels {
        *l = owner[*l];
    }
    Ok(SubdomainAssignment::from_labels(labels, embeddings, knowledge))
}
