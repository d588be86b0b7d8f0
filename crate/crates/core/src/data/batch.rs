use super::DomainDataset;
use crate::division::SubdomainAssignment;
use crate::numeric::Rng;
use crate::{Error, Result};

/// Splits one epoch into batches such that every non-empty group contributes at least two
/// samples to every batch.
///
/// The batch count is the smallest `nb >= ceil(N / batch_size)` for which padding each group
/// to `max(n_g, 2 nb)` (by cycling through its shuffled members) fits in `nb` batches. Each
/// group's padded list is spread as evenly as possible, and the remainders go to the least
/// loaded batches, so no batch exceeds `batch_size`. Every sample appears at least once.
pub fn stratify_groups(groups: &[usize], batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let n = groups.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    for (i, &g) in groups.iter().enumerate() {
        members[g].push(i);
    }
    members.retain(|m| !m.is_empty());
    let needed = 2 * members.len();
    if batch_size < needed {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} is below the minimum {needed} (two per non-empty subdomain, {} subdomains)",
            members.len()
        )));
    }
    for m in &mut members {
        rng.shuffle(m);
    }
    let mut nb = n.div_ceil(batch_size);
    loop {
        let padded: usize = members.iter().map(|m| m.len().max(2 * nb)).sum();
        if padded <= nb * batch_size {
            break;
        }
        nb += 1;
    }
    let mut batches: Vec<Vec<usize>> = vec![Vec::new(); nb];
    for m in &members {
        let total = m.len().max(2 * nb);
        let base = total / nb;
        let rem = total % nb;
        // batches receiving one extra: the `rem` least loaded, ties to the lowest index
        let mut order: Vec<usize> = (0..nb).collect();
        order.sort_by_key(|&b| (batches[b].len(), b));
        let mut extra = vec![false; nb];
        for &b in order.iter().take(rem) {
            extra[b] = true;
        }
        let mut cursor = 0;
        for (b, batch) in batches.iter_mut().enumerate() {
            let take = base + usize::from(extra[b]);
            for _ in 0..take {
                batch.push(m[cursor % m.len()]);
                cursor += 1;
            }
        }
    }
    for b in &mut batches {
        rng.shuffle(b);
    }
    rng.shuffle(&mut batches);
    Ok(batches)
}

/// Epoch batches over `data` stratified by `assignment`.
pub fn stratified_batches(
    data: &DomainDataset,
    assignment: &SubdomainAssignment,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    if assignment.labels.len() != data.len() {
        return Err(Error::shape("stratified_batches assignment", data.len(), assignment.labels.len()));
    }
    stratify_groups(&assignment.labels, batch_size, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(batch: &[usize], groups: &[usize], g: usize) -> usize {
        batch.iter().filter(|&&i| groups[i] == g).count()
    }

    #[test]
    fn equal_groups_fill_proportionally() {
        let groups: Vec<usize> = (0..16).map(|i| i / 8).collect();
        let batches = stratify_groups(&groups, 8, &mut Rng::new(1)).unwrap();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            assert_eq!(count(b, &groups, 0), 4);
            assert_eq!(count(b, &groups, 1), 4);
        }
    }

    #[test]
    fn small_group_gets_two_per_batch() {
        let groups: Vec<usize> = (0..16).map(|i| usize::from(i >= 12)).collect();
        let batches = stratify_groups(&groups, 8, &mut Rng::new(2)).unwrap();
        let mut seen = vec![false; 16];
        for b in &batches {
            assert!(b.len() <= 8);
            assert!(count(b, &groups, 1) >= 2);
            b.iter().for_each(|&i| seen[i] = true);
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn tiny_group_is_padded_by_repetition() {
        let mut groups = vec![0; 30];
        groups.push(1);
        let batches = stratify_groups(&groups, 8, &mut Rng::new(3)).unwrap();
        for b in &batches {
            assert!(b.len() <= 8);
            assert_eq!(count(b, &groups, 1), 2);
        }
    }

    #[test]
    fn too_small_batch_is_rejected() {
        let groups = vec![0, 1, 2, 0, 1, 2];
        let err = stratify_groups(&groups, 5, &mut Rng::new(4)).unwrap_err();
        assert!(err.to_string().contains("minimum 6"));
    }

    #[test]
    fn same_seed_same_batches() {
        let groups: Vec<usize> = (0..50).map(|i| i % 3).collect();
        let a = stratify_groups(&groups, 12, &mut Rng::new(9)).unwrap();
        let b = stratify_groups(&groups, 12, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }
}
