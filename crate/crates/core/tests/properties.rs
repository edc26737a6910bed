//! Invariants checked over generated inputs.

mod common;

use contactseg::coverage::{min_bounding_rectangle, plan_patch, CoverageConfig, DirectionMode};
use contactseg::geom::signed_area;
use contactseg::segmentation::{score, ContactSource};
use contactseg::surface::{apply_crop, CropEdit, CropRegion, CropStatus, SupportGrid, SurfacePatch};
use contactseg::{ContactPointSet, PointIndexSet, Vec2, Vec3};
use proptest::collection::vec;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn score_stays_within_bounds(
        op in 1usize..1_000_000,
        cp in 1usize..5000,
        oi_frac in 0.0f64..=1.0,
        ci_frac in 0.0f64..=1.0,
        d in 0.5f64..4.0,
    ) {
        let oi = ((op as f64) * oi_frac) as usize;
        let ci = ((cp as f64) * ci_frac) as usize;
        let s = score(oi, op, ci, cp, d).unwrap();
        prop_assert!(s >= 0.0);
        prop_assert!(s <= 2.0 / d * (1.0 + 1e-15));
        if oi < op {
            prop_assert!(score(oi + 1, op, ci, cp, d).unwrap() > s);
        }
        if ci < cp {
            prop_assert!(score(oi, op, ci + 1, cp, d).unwrap() > s);
        }
        prop_assert!(score(op + 1, op, ci, cp, d).is_err());
        prop_assert!(score(oi, op, ci, cp, 0.0).is_err());
    }

    #[test]
    fn contact_batches_add_and_undo(batches in vec(vec(any::<[i16; 3]>(), 1..6), 1..8), undos in 0usize..10) {
        let mut cps = ContactPointSet::new();
        let mut history = vec![cps.clone()];
        for b in &batches {
            let pts: Vec<Vec3> = b.iter().map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) * 1e-3).collect();
            let before = cps.revision();
            prop_assert_eq!(cps.add_batch(&pts, ContactSource::Selected).unwrap(), before + 1);
            history.push(cps.clone());
        }
        prop_assert_eq!(cps.len(), batches.iter().map(Vec::len).sum::<usize>());
        prop_assert_eq!(cps.batch_count(), batches.len());
        for k in 0..undos {
            let before = cps.revision();
            match cps.undo_batch() {
                Some(rev) => {
                    prop_assert!(k < batches.len());
                    prop_assert_eq!(rev, before + 1);
                    let earlier = &history[batches.len() - k - 1];
                    prop_assert_eq!(cps.positions(), earlier.positions());
                    prop_assert_eq!(cps.sources(), earlier.sources());
                }
                None => {
                    prop_assert!(k >= batches.len());
                    prop_assert!(cps.is_empty());
                    prop_assert_eq!(cps.revision(), before);
                }
            }
        }
        let text = serde_json::to_string(&cps).unwrap();
        prop_assert_eq!(serde_json::from_str::<ContactPointSet>(&text).unwrap(), cps);
    }

    #[test]
    fn index_runs_round_trip(indices in vec(0usize..5000, 0..400)) {
        let set = PointIndexSet::from_unsorted(indices.clone());
        let runs = set.to_runs();
        for w in runs.windows(2) {
            // Runs are sorted, non-empty and separated by a gap.
            prop_assert!(w[0][0] + w[0][1] < w[1][0]);
        }
        prop_assert!(runs.iter().all(|r| r[1] > 0));
        prop_assert_eq!(runs.iter().map(|r| r[1]).sum::<usize>(), set.len());
        prop_assert_eq!(PointIndexSet::from_runs(&runs).unwrap(), set.clone());
        for i in indices {
            prop_assert!(set.contains(i));
        }
    }

    #[test]
    fn grid_json_round_trips(seed in any::<u64>()) {
        let grid = common::random_grid(&mut common::rng(seed), 0.005);
        let text = serde_json::to_string(&grid).unwrap();
        let back: SupportGrid = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &grid);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn boundary_area_matches_cell_count(seed in any::<u64>()) {
        let patch = common::random_cropped_patch(seed, 0.004);
        let h = patch.grid.cell_size();
        let area: f64 = patch.boundary.iter().map(|r| signed_area(r)).sum();
        let expected = patch.grid.occupied_count() as f64 * h * h;
        prop_assert!((area - expected).abs() <= 1e-9 * expected, "{} vs {}", area, expected);
        prop_assert_eq!(patch.mesh.triangles.len(), 2 * patch.grid.occupied_count());
    }

    #[test]
    fn crops_only_remove_cells(seed in any::<u64>(), crop_seed in any::<u64>()) {
        let patch = common::random_cropped_patch(seed, 0.005);
        let (lo, hi) = common::grid_bounds(&patch.grid);
        let polygon = common::random_crop_polygon(&mut common::rng(crop_seed), lo, hi);
        let seq = patch.last_edit_seq().unwrap_or(0) + 1;
        let edit = CropEdit { seq, region: CropRegion::Polygon(polygon) };
        let Ok((next, status)) = apply_crop(&patch, &edit) else {
            // Self-intersecting polygons are rejected; nothing to check.
            return Ok(());
        };
        let before = patch.grid.occupied_count();
        let after = next.grid.occupied_count();
        match status {
            CropStatus::Applied { cleared } => {
                prop_assert!(cleared > 0);
                prop_assert_eq!(before - after, cleared);
            }
            CropStatus::Emptied { cleared } => {
                prop_assert_eq!((cleared, after), (before, 0));
                prop_assert!(next.mesh.is_empty());
            }
            CropStatus::NoOp => prop_assert_eq!(after, before),
            CropStatus::AlreadyApplied => prop_assert!(false, "fresh edit reported as repeated"),
        }
        for (i, j) in next.grid.occupied_cells() {
            prop_assert!(patch.grid.is_occupied(i, j));
        }
        // Re-sending the same edit changes nothing.
        let (again, status) = apply_crop(&next, &edit).unwrap();
        if after != before {
            prop_assert_eq!(status, CropStatus::AlreadyApplied);
        }
        prop_assert_eq!(again.grid.occupied_count(), after);
        // Replaying from the uncropped grid reproduces the edit; dropping it
        // restores the previous cells.
        let base = patch.grid.clone();
        let replayed = SurfacePatch::replay(&patch.model, base.clone(), std::slice::from_ref(&edit)).unwrap();
        prop_assert_eq!(&replayed.grid, &next.grid);
        let undone = SurfacePatch::replay(&patch.model, base, &[]).unwrap();
        prop_assert_eq!(&undone.grid, &patch.grid);
    }

    #[test]
    fn trajectory_poses_are_valid(seed in any::<u64>(), serpentine in any::<bool>()) {
        let patch = common::random_cropped_patch(seed, 0.006);
        let config = CoverageConfig {
            direction_mode: if serpentine { DirectionMode::Serpentine } else { DirectionMode::Unidirectional },
            ..CoverageConfig::default()
        };
        let t = plan_patch(&patch, &config).unwrap();
        prop_assert!(!t.poses.is_empty());
        prop_assert!(!t.poses[0].contact && !t.poses.last().unwrap().contact);
        for p in &t.poses {
            prop_assert!((p.approach.norm() - 1.0).abs() < 1e-9);
            prop_assert!((p.travel.norm() - 1.0).abs() < 1e-9);
            prop_assert!(p.approach.dot(&p.travel).abs() < 1e-9);
            prop_assert!(p.position.iter().all(|c| c.is_finite()));
        }
        for w in t.poses.windows(2) {
            if w[0].contact && w[1].contact {
                let d = (w[1].position - w[0].position).norm();
                prop_assert!(d <= config.step_along * (1.0 + 1e-6), "step {}", d);
            }
            if w[0].contact != w[1].contact {
                // Transitions are vertical moves of `clearance` along the tool axis.
                let lift = w[1].position - w[0].position;
                prop_assert!((lift.norm() - config.clearance).abs() < 1e-9);
                prop_assert!(lift.cross(&w[0].approach).norm() < 1e-9);
            }
        }
        let roundtrip = contactseg::coverage::trajectory_from_json(&contactseg::coverage::trajectory_to_json(&t)).unwrap();
        prop_assert_eq!(roundtrip.poses.len(), t.poses.len());
    }

    #[test]
    fn bounding_rectangle_is_rotation_invariant(
        pts in vec((-1.0f64..1.0, -1.0f64..1.0), 3..40),
        theta in 0.0f64..std::f64::consts::TAU,
        shift in (-5.0f64..5.0, -5.0f64..5.0),
    ) {
        let points: Vec<Vec2> = pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        let Ok(a) = min_bounding_rectangle(&points) else {
            return Ok(());
        };
        let (s, c) = theta.sin_cos();
        let moved: Vec<Vec2> = points
            .iter()
            .map(|p| Vec2::new(c * p.x - s * p.y + shift.0, s * p.x + c * p.y + shift.1))
            .collect();
        let b = min_bounding_rectangle(&moved).unwrap();
        prop_assert!((a.area() - b.area()).abs() <= 1e-9 * a.area().max(1e-12));
        prop_assert!(a.width >= a.height);
        // Ties between sides make the orientation ambiguous, so only the
        // area is compared; containment and optimality are checked directly.
        let (u, v) = (a.axis(), Vec2::new(-a.axis().y, a.axis().x));
        let centre = Vec2::new(a.center[0], a.center[1]);
        let slack = 1e-9 * a.width.max(1e-9);
        for p in &points {
            let d = p - centre;
            prop_assert!(d.dot(&u).abs() <= a.width / 2.0 + slack);
            prop_assert!(d.dot(&v).abs() <= a.height / 2.0 + slack);
        }
        for k in 0..360 {
            let t = k as f64 * std::f64::consts::PI / 360.0;
            prop_assert!(a.area() <= common::rect_area_at(&points, t) * (1.0 + 1e-9));
        }
    }
}

#[test]
fn patch_json_round_trips_with_hash() {
    for seed in 0..10 {
        let patch = common::random_cropped_patch(seed, 0.005);
        let text = serde_json::to_string(&patch).unwrap();
        let back: SurfacePatch = serde_json::from_str(&text).unwrap();
        assert_eq!(back.content_hash(), patch.content_hash());
        assert_eq!(back.grid, patch.grid);
        assert_eq!(back.mesh.vertices.len(), patch.mesh.vertices.len());
    }
}
