use ndarray::Array2;

use super::{cosine_similarity_matrix, window_soft_argmax, Correspondence, CorrespondenceSet, FeatureSet, SimilarityMap};
use crate::error::{Error, Result};
use crate::geom::patch_center_pixel;
use crate::grouping::{GroupSet, PatchGrid};

/// Per-group similarity maps over the patch grid, in `kept` order.
pub fn coarse_similarity_maps(features: &FeatureSet, kept: &[usize], grid: &PatchGrid) -> Result<Vec<SimilarityMap>> {
    if features.coarse_image.nrows() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} patch features for a {}-patch grid",
            features.coarse_image.nrows(),
            grid.len()
        )));
    }
    if let Some(&g) = kept.iter().find(|&&g| g >= features.coarse_points.nrows()) {
        return Err(Error::invalid(format!("group {g} has no coarse feature")));
    }
    let rows = features.coarse_points.select(ndarray::Axis(0), kept);
    let sim = cosine_similarity_matrix(rows.view(), features.coarse_image.view())?;
    Ok(sim
        .outer_iter()
        .map(|r| {
            let values = Array2::from_shape_vec((grid.rows, grid.cols), r.to_vec())
                .expect("row length equals grid size");
            SimilarityMap::new(values)
        })
        .collect())
}

/// Coarse pixel for each kept group: window soft-argmax over its patch
/// similarity map, mapped to pixels through the patch-center convention.
/// Confidence is the peak cosine similarity mapped to `[0, 1]`.
pub fn coarse_match(
    features: &FeatureSet,
    kept: &[usize],
    groups: &GroupSet,
    grid: &PatchGrid,
    window: usize,
    temperature: f64,
) -> Result<CorrespondenceSet> {
    if kept.is_empty() {
        return Err(Error::invalid("coarse matching needs at least one kept group"));
    }
    if let Some(&g) = kept.iter().find(|&&g| g >= groups.len()) {
        return Err(Error::invalid(format!("group {g} out of range")));
    }
    let maps = coarse_similarity_maps(features, kept, grid)?;
    let s = grid.patch_size as f64;
    let mut pairs = Vec::with_capacity(kept.len());
    for (&g, map) in kept.iter().zip(&maps) {
        let at = window_soft_argmax(map, window, temperature)?;
        // Linear in grid coordinates, so fractional positions map consistently.
        let pixel = patch_center_pixel(0, 0, grid.patch_size) + at * s;
        pairs.push(Correspondence {
            group: g,
            point_index: groups.center_indices[g],
            point: groups.centers[g],
            pixel,
            confidence: ((map.max() + 1.0) / 2.0).clamp(0.0, 1.0),
        });
    }
    Ok(CorrespondenceSet { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};
    use ndarray::Array2;

    fn features(grid: &PatchGrid, hot: &[(usize, usize)]) -> (FeatureSet, GroupSet) {
        // One-hot descriptors: group g matches patch hot[g].1.
        let c = grid.len() + hot.len();
        let mut img = Array2::zeros((grid.len(), c));
        for p in 0..grid.len() {
            img[(p, p)] = 1.0;
        }
        let mut pts = Array2::zeros((hot.len(), c));
        for (g, &(_, p)) in hot.iter().enumerate() {
            pts[(g, p)] = 1.0;
        }
        let groups = GroupSet {
            centers: (0..hot.len()).map(|g| Vector3::new(g as f64, 0.0, 1.0)).collect(),
            center_indices: (0..hot.len()).collect(),
            assignment: (0..hot.len()).collect(),
        };
        let fs = FeatureSet {
            coarse_image: img,
            coarse_points: pts,
            fine_image: Array2::zeros((0, 1)),
            fine_rows: 0,
            fine_cols: 0,
            fine_points: Array2::zeros((hot.len(), 1)),
        };
        (fs, groups)
    }

    #[test]
    fn exact_descriptors_pick_their_patch() {
        let grid = PatchGrid::new(128, 64, 16).unwrap();
        let hot = [(0, grid.linear(1, 2)), (1, grid.linear(3, 7)), (2, grid.linear(0, 0))];
        let (fs, groups) = features(&grid, &hot);
        let out = coarse_match(&fs, &[0, 1, 2], &groups, &grid, 1, 1.0).unwrap();
        for (pair, &(_, p)) in out.pairs.iter().zip(&hot) {
            assert_eq!(pair.pixel, grid.center_pixel(p));
            assert_eq!(pair.confidence, 1.0);
        }
        // Sharp temperature with a wider window lands on the same patch center.
        let out = coarse_match(&fs, &[1], &groups, &grid, 5, 1e-3).unwrap();
        assert!((out.pairs[0].pixel - Vector2::new(7.5 * 16.0 - 0.5, 3.5 * 16.0 - 0.5)).norm() < 1e-9);
    }

    #[test]
    fn kept_order_permutes_outputs() {
        let grid = PatchGrid::new(128, 64, 16).unwrap();
        let hot = [(0, 5), (1, 17), (2, 30)];
        let (fs, groups) = features(&grid, &hot);
        let a = coarse_match(&fs, &[0, 1, 2], &groups, &grid, 5, 0.1).unwrap();
        let b = coarse_match(&fs, &[2, 0, 1], &groups, &grid, 5, 0.1).unwrap();
        assert_eq!(a.pairs[0], b.pairs[1]);
        assert_eq!(a.pairs[2], b.pairs[0]);
    }

    #[test]
    fn empty_kept_is_an_error() {
        let grid = PatchGrid::new(32, 32, 16).unwrap();
        let (fs, groups) = features(&grid, &[(0, 1)]);
        assert!(coarse_match(&fs, &[], &groups, &grid, 5, 1.0).is_err());
    }
}
