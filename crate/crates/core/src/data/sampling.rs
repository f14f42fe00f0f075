//! Seeded pair and triplet samplers for the metric-learning baselines.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub first: usize,
    pub second: usize,
    pub same_class: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

fn members_by_class(d: &Dataset) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); d.num_classes()];
    for (i, &l) in d.labels.iter().enumerate() {
        members[l].push(i);
    }
    members
}

fn require_two_classes(members: &[Vec<usize>]) -> Result<()> {
    if members.iter().filter(|m| !m.is_empty()).count() < 2 {
        return Err(Error::Sampling(
            "at least two classes with samples are required".into(),
        ));
    }
    Ok(())
}

/// `count / 2` same-class pairs and the rest different-class pairs, each
/// uniform over the eligible index pairs, returned in shuffled order.
pub fn sample_pairs(d: &Dataset, count: usize, seed: u64) -> Result<Vec<Pair>> {
    let members = members_by_class(d);
    require_two_classes(&members)?;
    let n_pos = count / 2;
    let pair_weights: Vec<usize> = members.iter().map(|m| m.len() * m.len().saturating_sub(1)).collect();
    let total_pos: usize = pair_weights.iter().sum();
    if n_pos > 0 && total_pos == 0 {
        return Err(Error::Sampling(
            "no class has two samples, cannot form same-class pairs".into(),
        ));
    }

    let mut rng = rng::seeded(seed);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..n_pos {
        let mut r = rng.random_range(0..total_pos);
        let class = pair_weights
            .iter()
            .position(|&w| {
                if r < w {
                    true
                } else {
                    r -= w;
                    false
                }
            })
            .unwrap();
        let m = &members[class];
        let a = rng.random_range(0..m.len());
        let mut b = rng.random_range(0..m.len() - 1);
        if b >= a {
            b += 1;
        }
        pairs.push(Pair {
            first: m[a],
            second: m[b],
            same_class: true,
        });
    }
    let n = d.len();
    while pairs.len() < count {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if d.labels[a] != d.labels[b] {
            pairs.push(Pair {
                first: a,
                second: b,
                same_class: false,
            });
        }
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

/// Uniform anchors among samples whose class has a second member, a distinct
/// same-class positive, and a negative from any other class.
pub fn sample_triplets(d: &Dataset, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let members = members_by_class(d);
    require_two_classes(&members)?;
    let anchors: Vec<usize> = (0..d.len())
        .filter(|&i| members[d.labels[i]].len() >= 2)
        .collect();
    if anchors.is_empty() {
        return Err(Error::Sampling(
            "no class has two samples, cannot form anchor/positive pairs".into(),
        ));
    }
    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = anchors[rng.random_range(0..anchors.len())];
        let label = d.labels[anchor];
        let same = &members[label];
        let positive = loop {
            let p = same[rng.random_range(0..same.len())];
            if p != anchor {
                break p;
            }
        };
        let n_other = d.len() - same.len();
        let mut k = rng.random_range(0..n_other);
        let negative = members
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != label)
            .find_map(|(_, m)| {
                if k < m.len() {
                    Some(m[k])
                } else {
                    k -= m.len();
                    None
                }
            })
            .unwrap();
        out.push(Triplet {
            anchor,
            positive,
            negative,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClassId, Split};
    use crate::tensor::Matrix;

    fn tiny(per_class: &[usize]) -> Dataset {
        let labels: Vec<usize> = per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let features = Matrix::zeros(labels.len(), 1);
        let catalog = (0..per_class.len() as u32).map(ClassId).collect();
        Dataset::new(features, labels, catalog, Split::Train).unwrap()
    }

    #[test]
    fn balanced_pairs() {
        let d = tiny(&[2, 2]);
        let pairs = sample_pairs(&d, 4, 1).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.same_class).count(), 2);
        assert_eq!(pairs.iter().filter(|p| !p.same_class).count(), 2);
        for p in &pairs {
            assert_eq!(p.same_class, d.labels[p.first] == d.labels[p.second]);
            assert_ne!(p.first, p.second);
        }
        assert_eq!(pairs, sample_pairs(&d, 4, 1).unwrap());
    }

    #[test]
    fn positive_fraction_over_many_draws() {
        let d = tiny(&[7, 3, 12, 5]);
        let pairs = sample_pairs(&d, 100_000, 42).unwrap();
        let pos = pairs.iter().filter(|p| p.same_class).count() as f64 / pairs.len() as f64;
        assert!((pos - 0.5).abs() <= 0.01);
        assert!(pairs
            .iter()
            .all(|p| p.same_class == (d.labels[p.first] == d.labels[p.second])));
    }

    #[test]
    fn pairs_need_two_classes_and_a_pairable_class() {
        assert!(sample_pairs(&tiny(&[5]), 4, 0).is_err());
        assert!(sample_pairs(&tiny(&[1, 1]), 4, 0).is_err());
        // negatives alone are fine
        assert!(sample_pairs(&tiny(&[1, 1]), 1, 0).is_ok());
    }

    #[test]
    fn triplet_contract() {
        let d = tiny(&[2, 2]);
        let t = sample_triplets(&d, 1, 3).unwrap();
        assert_ne!(t[0].positive, t[0].anchor);
        assert_ne!(d.labels[t[0].negative], d.labels[t[0].anchor]);
        assert_eq!(t, sample_triplets(&d, 1, 3).unwrap());
    }

    #[test]
    fn triplet_labels_over_many_draws() {
        let d = tiny(&[1, 4, 9, 2]);
        let ts = sample_triplets(&d, 10_000, 8).unwrap();
        for t in ts {
            assert_ne!(t.anchor, t.positive);
            assert_eq!(d.labels[t.anchor], d.labels[t.positive]);
            assert_ne!(d.labels[t.anchor], d.labels[t.negative]);
            // the singleton class never anchors
            assert_ne!(d.labels[t.anchor], 0);
        }
    }

    #[test]
    fn triplets_need_pairable_class() {
        assert!(sample_triplets(&tiny(&[1, 1, 1]), 1, 0).is_err());
    }
}
