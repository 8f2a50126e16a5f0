//! Brute-force enumeration of partitions, used to certify the threshold solvers.

use super::Partition;
use crate::{Error, Result};

/// Largest population size for which all `2^n` partitions may be enumerated.
pub const MAX_ENUMERATION_SIZE: usize = 20;

fn check_size(n: usize) -> Result<()> {
    if n > MAX_ENUMERATION_SIZE {
        return Err(Error::Precondition(format!(
            "exhaustive enumeration is capped at {MAX_ENUMERATION_SIZE} units, got {n}"
        )));
    }
    Ok(())
}

fn mask_to_partition(n: usize, bits: u32) -> Partition {
    Partition::from_mask((0..n).map(|i| bits >> i & 1 == 1).collect())
}

/// Every partition of `n` units, `T` ranging over all subsets.
pub fn all_partitions(n: usize) -> Result<impl Iterator<Item = Partition>> {
    check_size(n)?;
    Ok((0u32..1 << n).map(move |bits| mask_to_partition(n, bits)))
}

/// Every partition with exactly `m` treated units.
pub fn partitions_of_size(n: usize, m: usize) -> Result<impl Iterator<Item = Partition>> {
    check_size(n)?;
    Ok((0u32..1 << n)
        .filter(move |bits| bits.count_ones() as usize == m)
        .map(move |bits| mask_to_partition(n, bits)))
}

/// Maximum of `objective` over `partitions`, with every maximizer (within `tol`).
pub fn maximize<I, F>(partitions: I, objective: F, tol: f64) -> Result<(f64, Vec<Partition>)>
where
    I: IntoIterator<Item = Partition>,
    F: Fn(&Partition) -> Result<f64>,
{
    let mut best = f64::NEG_INFINITY;
    let mut argmax = Vec::new();
    for part in partitions {
        let v = objective(&part)?;
        if v > best + tol {
            best = v;
            argmax.clear();
            argmax.push(part);
        } else if (v - best).abs() <= tol {
            argmax.push(part);
        }
    }
    Ok((best, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(all_partitions(4).unwrap().count(), 16);
        assert_eq!(partitions_of_size(5, 2).unwrap().count(), 10);
        assert!(all_partitions(21).is_err());
    }
}
