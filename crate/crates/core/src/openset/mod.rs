//! Novel-class machinery.
//!
//! A class that was never part of training gets a classifier column by
//! averaging the unit-normalized embeddings of a few labeled samples and
//! renormalizing the mean. Under a cosine head this is the same decision
//! rule as nearest-prototype classification with cosine similarity, which
//! the baselines use with Euclidean prototypes instead.

mod ablation;
mod eval;

pub use ablation::{
    anchor_ablation, infer_head_weights, support_macro_f1, weight_reconstruction_error,
    AnchorMode, ReconstructionError,
};
pub use eval::{
    evaluate_closed, evaluate_disjoint, evaluate_joint, evaluate_joint_prototypes, RunReport,
    ReportMode, ScenarioMode, ScenarioSpec, SupportSize,
};

use std::fmt;
use std::str::FromStr;

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, squared_distance, Matrix, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Cosine,
    Euclidean,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// Mean point of a class in the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype {
    pub class_id: ClassId,
    /// For the cosine metric: mean of unit-normalized embeddings (norm in (0, 1]).
    pub vector: Vec<f64>,
    pub metric: Metric,
    pub support_count: usize,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let k = 1.0 / l2_norm(v);
    v.iter().map(|x| x * k).collect()
}

fn mean_of_unit_rows(embeddings: &Matrix) -> Result<Vec<f64>> {
    if embeddings.rows() == 0 {
        return Err(Error::EmptySupportSet);
    }
    let normalized = embeddings.row_normalize(1.0, DEFAULT_EPSILON)?;
    let mut mean = vec![0.0; embeddings.cols()];
    for row in normalized.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = embeddings.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

pub fn build_prototype(
    class_id: ClassId,
    embeddings: &Matrix,
    metric: Metric,
) -> Result<ClassPrototype> {
    let vector = match metric {
        Metric::Cosine => {
            let mean = mean_of_unit_rows(embeddings)?;
            let norm = l2_norm(&mean);
            if norm < DEFAULT_EPSILON {
                return Err(Error::DegeneratePrototype { norm });
            }
            mean
        }
        Metric::Euclidean => {
            if embeddings.rows() == 0 {
                return Err(Error::EmptySupportSet);
            }
            let n = embeddings.rows() as f64;
            let mut mean = vec![0.0; embeddings.cols()];
            for row in embeddings.row_iter() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            mean
        }
    };
    Ok(ClassPrototype {
        class_id,
        vector,
        metric,
        support_count: embeddings.rows(),
    })
}

/// Unit-norm classifier column for a class, inferred from support
/// embeddings: the mean of the normalized supports, renormalized.
pub fn infer_class_weight(support_embeddings: &Matrix) -> Result<Vec<f64>> {
    let mean = mean_of_unit_rows(support_embeddings)?;
    let norm = l2_norm(&mean);
    if norm < DEFAULT_EPSILON {
        return Err(Error::DegeneratePrototype { norm });
    }
    Ok(unit(&mean))
}

/// Class of the nearest prototype (k = 1). Cosine distance is `1 - cos`;
/// ties resolve to the earliest prototype in the list.
pub fn knn_classify(query: &[f64], prototypes: &[ClassPrototype], metric: Metric) -> Result<ClassId> {
    if prototypes.is_empty() {
        return Err(Error::Contract("no prototypes to classify against".into()));
    }
    for p in prototypes {
        if p.vector.len() != query.len() {
            return Err(Error::Shape {
                op: "knn_classify",
                lhs: (1, query.len()),
                rhs: (1, p.vector.len()),
            });
        }
    }
    let best = match metric {
        Metric::Cosine => {
            let qn = l2_norm(query);
            if !(qn >= DEFAULT_EPSILON) {
                return Err(Error::DegenerateEmbedding { row: 0, norm: qn });
            }
            let q = unit(query);
            // smallest 1 - cos is the largest cos
            let sims: Vec<f64> = prototypes
                .iter()
                .map(|p| {
                    let pn = l2_norm(&p.vector);
                    if pn < DEFAULT_EPSILON {
                        return Err(Error::DegeneratePrototype { norm: pn });
                    }
                    Ok(dot(&q, &unit(&p.vector)))
                })
                .collect::<Result<_>>()?;
            crate::tensor::argmax(&sims)
        }
        Metric::Euclidean => {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, p) in prototypes.iter().enumerate() {
                let d = squared_distance(query, &p.vector);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        }
    };
    Ok(prototypes[best].class_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NslHead;
    use rand::Rng;

    fn rows(seed: u64, n: usize, m: usize) -> Matrix {
        let mut rng = crate::rng::seeded(seed);
        Matrix::new(n, m, (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_sample_prototype_and_weight() {
        let x = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let p = build_prototype(ClassId(0), &x, Metric::Cosine).unwrap();
        assert!((p.vector[0] - 0.6).abs() < 1e-15 && (p.vector[1] - 0.8).abs() < 1e-15);
        let w = infer_class_weight(&x).unwrap();
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn antipodal_support_is_degenerate() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert!(matches!(
            build_prototype(ClassId(0), &x, Metric::Cosine),
            Err(Error::DegeneratePrototype { .. })
        ));
        assert!(matches!(infer_class_weight(&x), Err(Error::DegeneratePrototype { .. })));
    }

    #[test]
    fn empty_and_zero_rows_rejected() {
        let empty = Matrix::zeros(0, 3);
        assert!(matches!(infer_class_weight(&empty), Err(Error::EmptySupportSet)));
        assert!(build_prototype(ClassId(0), &empty, Metric::Euclidean).is_err());
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            build_prototype(ClassId(0), &z, Metric::Cosine),
            Err(Error::DegenerateEmbedding { row: 1, .. })
        ));
    }

    #[test]
    fn prototype_matches_direct_mean() {
        let x = rows(4, 10, 8);
        let cos = build_prototype(ClassId(1), &x, Metric::Cosine).unwrap();
        let euc = build_prototype(ClassId(1), &x, Metric::Euclidean).unwrap();
        for j in 0..8 {
            let mut a = 0.0;
            let mut b = 0.0;
            for i in 0..10 {
                let r = x.row(i);
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                a += r[j] / n;
                b += r[j];
            }
            assert!((cos.vector[j] - a / 10.0).abs() <= 1e-12);
            assert!((euc.vector[j] - b / 10.0).abs() <= 1e-12);
        }
        assert_eq!(cos.support_count, 10);
        assert!(l2_norm(&cos.vector) <= 1.0);
    }

    #[test]
    fn parallel_supports_give_the_direction() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 2.0], [10.0, 20.0, 20.0], [0.1, 0.2, 0.2]]).unwrap();
        let w = infer_class_weight(&x).unwrap();
        let expected = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((l2_norm(&w) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn knn_query_on_prototype_and_ties() {
        let x = rows(5, 3, 4);
        let protos: Vec<_> = (0..3)
            .map(|i| build_prototype(ClassId(10 + i as u32), &x.select_rows(&[i]), Metric::Euclidean).unwrap())
            .collect();
        for (i, p) in protos.iter().enumerate() {
            assert_eq!(knn_classify(&p.vector, &protos, Metric::Euclidean).unwrap(), ClassId(10 + i as u32));
        }
        let tie = vec![
            ClassPrototype { class_id: ClassId(7), vector: vec![1.0, 0.0], metric: Metric::Cosine, support_count: 1 },
            ClassPrototype { class_id: ClassId(3), vector: vec![0.0, 1.0], metric: Metric::Cosine, support_count: 1 },
        ];
        assert_eq!(knn_classify(&[1.0, 1.0], &tie, Metric::Cosine).unwrap(), ClassId(7));
        assert_eq!(knn_classify(&[1.0, 1.0], &tie, Metric::Euclidean).unwrap(), ClassId(7));
        assert!(knn_classify(&[1.0], &tie, Metric::Cosine).is_err());
    }

    #[test]
    fn knn_matches_brute_force() {
        let centers = rows(6, 7, 5);
        let protos: Vec<_> = (0..7)
            .map(|i| ClassPrototype {
                class_id: ClassId(i as u32),
                vector: centers.row(i).to_vec(),
                metric: Metric::Euclidean,
                support_count: 1,
            })
            .collect();
        let queries = rows(7, 100, 5);
        for metric in [Metric::Euclidean, Metric::Cosine] {
            for q in queries.row_iter() {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for i in 0..7 {
                    let c = centers.row(i);
                    let d = match metric {
                        Metric::Euclidean => (0..5).map(|j| (q[j] - c[j]).powi(2)).sum::<f64>(),
                        Metric::Cosine => {
                            let num: f64 = (0..5).map(|j| q[j] * c[j]).sum();
                            let nq: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                            let nc: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                            1.0 - num / (nq * nc)
                        }
                    };
                    if d < best_d {
                        best = i;
                        best_d = d;
                    }
                }
                assert_eq!(knn_classify(q, &protos, metric).unwrap(), ClassId(best as u32));
            }
        }
    }

    #[test]
    fn imprinted_head_agrees_with_cosine_knn() {
        for seed in 0..50 {
            let m = 6;
            let mut cols = Vec::new();
            let mut protos = Vec::new();
            for c in 0..4 {
                let s = rows(seed * 100 + c, 1 + (c as usize % 3), m);
                cols.push(infer_class_weight(&s).unwrap());
                protos.push(build_prototype(ClassId(c as u32), &s, Metric::Cosine).unwrap());
            }
            let head = NslHead::from_columns(&cols, 16.0, (0..4).map(ClassId).collect()).unwrap();
            let q = rows(seed + 9999, 20, m);
            let pred = head.predict(&q).unwrap();
            for (i, qr) in q.row_iter().enumerate() {
                assert_eq!(ClassId(pred[i] as u32), knn_classify(qr, &protos, Metric::Cosine).unwrap());
            }
        }
    }
}
