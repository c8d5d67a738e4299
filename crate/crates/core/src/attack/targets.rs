//! Target-candidate selection for attacks.
//!
//! Given a labeled pool, a source cloud and a requested target class, pick
//! the `k` candidate targets an attack should try. All methods return pool
//! indices in rank order and are deterministic for a fixed seed.

use super::TargetSelection;
use crate::error::{Error, Result};
use crate::metrics;
use crate::models::{AEModel, ClassifierParams};
use crate::pointcloud::{PointCloud, ShapeClass};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sort pool indices by a distance key, ties broken by index, and keep the
/// first `k`.
fn rank_by_key(mut keyed: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    keyed.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, id)| id).collect()
}

/// Select `k` attack-target candidates of `target_class` from `pool`.
///
/// `model` is required for [`TargetSelection::LatentSpace`], `classifier` for
/// [`TargetSelection::GeometricClassifier`]; both are ignored otherwise.
/// `seed` only affects [`TargetSelection::Random`].
///
/// Errors: the source's own class is never a valid target class; a pool with
/// fewer than `k` usable members of the class reports how many were found.
pub fn select_targets(
    pool: &[PointCloud],
    source: &PointCloud,
    target_class: ShapeClass,
    k: usize,
    selection: TargetSelection,
    model: Option<&AEModel>,
    classifier: Option<&ClassifierParams>,
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("candidate count must be at least 1".into()));
    }
    if source.label() == Some(target_class) {
        return Err(Error::InvalidInput(format!(
            "target class {target_class} equals the source class"
        )));
    }
    let members: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, c)| c.label() == Some(target_class))
        .map(|(i, _)| i)
        .collect();
    let insufficient = |found: usize| Error::InsufficientPool {
        needed: k,
        found,
        class: target_class.name().to_string(),
    };
    if members.len() < k {
        return Err(insufficient(members.len()));
    }

    match selection {
        TargetSelection::Geometric => {
            let keyed = members
                .into_iter()
                .map(|i| Ok((metrics::chamfer(source, &pool[i])?, i)))
                .collect::<Result<Vec<_>>>()?;
            Ok(rank_by_key(keyed, k))
        }
        TargetSelection::GeometricClassifier => {
            let classifier = classifier.ok_or_else(|| {
                Error::Config("geometric-classifier selection needs a classifier".into())
            })?;
            let mut keyed = Vec::new();
            for i in members {
                if classifier.predict_index(&pool[i])? == target_class.id() {
                    keyed.push((metrics::chamfer(source, &pool[i])?, i));
                }
            }
            if keyed.len() < k {
                return Err(insufficient(keyed.len()));
            }
            Ok(rank_by_key(keyed, k))
        }
        TargetSelection::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ids = members;
            for i in 0..k {
                let j = rng.gen_range(i..ids.len());
                ids.swap(i, j);
            }
            ids.truncate(k);
            Ok(ids)
        }
        TargetSelection::LatentSpace => {
            let model = model.ok_or_else(|| {
                Error::Config("latent-space selection needs an autoencoder".into())
            })?;
            let (source_code, _) = model.encode(source)?;
            let keyed = members
                .into_iter()
                .map(|i| {
                    let (code, _) = model.encode(&pool[i])?;
                    Ok((source_code.distance(&code)?, i))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(rank_by_key(keyed, k))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::brute::chamfer_brute;
    use crate::models::ModelDims;
    use crate::pointcloud::generate_shape;

    fn labeled(class: ShapeClass, seed: u64) -> PointCloud {
        generate_shape(class, 16, seed).unwrap().with_label(class)
    }

    fn mixed_pool() -> (PointCloud, Vec<PointCloud>) {
        let source = labeled(ShapeClass::Sphere, 100);
        let pool = vec![
            labeled(ShapeClass::Box, 1),
            labeled(ShapeClass::Sphere, 2),
            labeled(ShapeClass::Box, 3),
            labeled(ShapeClass::Torus, 4),
            labeled(ShapeClass::Box, 5),
            labeled(ShapeClass::Box, 6),
        ];
        (source, pool)
    }

    #[test]
    fn geometric_matches_brute_force_ordering() {
        let (source, pool) = mixed_pool();
        let mut expected: Vec<(f64, usize)> = pool
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label() == Some(ShapeClass::Box))
            .map(|(i, c)| {
                (
                    chamfer_brute(source.points(), c.points()).unwrap(),
                    i,
                )
            })
            .collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected_ids: Vec<usize> = expected.into_iter().map(|(_, i)| i).collect();

        let got = select_targets(
            &pool,
            &source,
            ShapeClass::Box,
            4,
            TargetSelection::Geometric,
            None,
            None,
            0,
        )
        .unwrap();
        assert_eq!(got, expected_ids);
    }

    #[test]
    fn scaled_copy_of_source_ranks_first() {
        let source = labeled(ShapeClass::Sphere, 100);
        let copy: Vec<[f64; 3]> = source
            .points()
            .iter()
            .map(|p| [p[0] * 0.9, p[1] * 0.9, p[2] * 0.9])
            .collect();
        let mut pool = vec![
            labeled(ShapeClass::Box, 1),
            labeled(ShapeClass::Box, 2),
            labeled(ShapeClass::Box, 3),
        ];
        pool.push(PointCloud::new(copy).unwrap().with_label(ShapeClass::Box));

        let got = select_targets(
            &pool,
            &source,
            ShapeClass::Box,
            2,
            TargetSelection::Geometric,
            None,
            None,
            0,
        )
        .unwrap();
        assert_eq!(got[0], 3);
    }

    #[test]
    fn full_class_request_returns_every_member_sorted() {
        let (source, pool) = mixed_pool();
        let got = select_targets(
            &pool,
            &source,
            ShapeClass::Box,
            4,
            TargetSelection::Geometric,
            None,
            None,
            0,
        )
        .unwrap();
        assert_eq!(got.len(), 4);
        let mut sorted = got.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 2, 4, 5]);
    }

    #[test]
    fn source_class_is_not_a_valid_target() {
        let (source, pool) = mixed_pool();
        assert!(matches!(
            select_targets(
                &pool,
                &source,
                ShapeClass::Sphere,
                1,
                TargetSelection::Geometric,
                None,
                None,
                0,
            ),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn small_pool_reports_shortfall() {
        let (source, pool) = mixed_pool();
        match select_targets(
            &pool,
            &source,
            ShapeClass::Torus,
            3,
            TargetSelection::Geometric,
            None,
            None,
            0,
        ) {
            Err(Error::InsufficientPool {
                needed,
                found,
                class,
            }) => {
                assert_eq!(needed, 3);
                assert_eq!(found, 1);
                assert_eq!(class, "torus");
            }
            other => panic!("expected pool shortfall, got {other:?}"),
        }
    }

    #[test]
    fn random_selection_is_seeded_and_stays_in_class() {
        let (source, pool) = mixed_pool();
        let pick = |seed| {
            select_targets(
                &pool,
                &source,
                ShapeClass::Box,
                3,
                TargetSelection::Random,
                None,
                None,
                seed,
            )
            .unwrap()
        };
        let a = pick(7);
        assert_eq!(a, pick(7));
        for &i in &a {
            assert_eq!(pool[i].label(), Some(ShapeClass::Box));
        }
        let mut dedup = a.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), a.len());
        let distinct = (0..20).map(pick).any(|other| other != a);
        assert!(distinct, "twenty seeds never changed the selection");
    }

    #[test]
    fn latent_selection_ranks_by_code_distance() {
        let (source, pool) = mixed_pool();
        let dims = ModelDims {
            n: 16,
            m: 4,
            width_factor: 0.03125,
        };
        let model = AEModel::new(dims, 5).unwrap();
        let (source_code, _) = model.encode(&source).unwrap();
        let mut expected: Vec<(f64, usize)> = pool
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label() == Some(ShapeClass::Box))
            .map(|(i, c)| {
                let (code, _) = model.encode(c).unwrap();
                (source_code.distance(&code).unwrap(), i)
            })
            .collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected_ids: Vec<usize> = expected.into_iter().take(2).map(|(_, i)| i).collect();

        let got = select_targets(
            &pool,
            &source,
            ShapeClass::Box,
            2,
            TargetSelection::LatentSpace,
            Some(&model),
            None,
            0,
        )
        .unwrap();
        assert_eq!(got, expected_ids);
        assert!(matches!(
            select_targets(
                &pool,
                &source,
                ShapeClass::Box,
                2,
                TargetSelection::LatentSpace,
                None,
                None,
                0,
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn classifier_gate_matches_manual_filter() {
        let (source, pool) = mixed_pool();
        let classifier = ClassifierParams::new(2, 0.0625, 3).unwrap();
        let survivors: Vec<usize> = pool
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label() == Some(ShapeClass::Box))
            .filter(|(_, c)| classifier.predict_index(c).unwrap() == ShapeClass::Box.id())
            .map(|(i, _)| i)
            .collect();

        let got = select_targets(
            &pool,
            &source,
            ShapeClass::Box,
            1,
            TargetSelection::GeometricClassifier,
            None,
            Some(&classifier),
            0,
        );
        if survivors.is_empty() {
            assert!(matches!(got, Err(Error::InsufficientPool { found: 0, .. })));
        } else {
            let mut expected: Vec<(f64, usize)> = survivors
                .iter()
                .map(|&i| (metrics::chamfer(&source, &pool[i]).unwrap(), i))
                .collect();
            expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            assert_eq!(got.unwrap(), vec![expected[0].1]);
        }
        assert!(matches!(
            select_targets(
                &pool,
                &source,
                ShapeClass::Box,
                1,
                TargetSelection::GeometricClassifier,
                None,
                None,
                0,
            ),
            Err(Error::Config(_))
        ));
    }
}
