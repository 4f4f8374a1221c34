use nalgebra::Vector2;
use ndarray::Array2;

use super::{soft_argmax, CorrespondenceSet, FeatureSet, SimilarityMap};
use crate::error::{Error, Result};

/// Full-resolution pixel to continuous half-resolution cell coordinate.
pub fn pixel_to_fine(px: &Vector2<f64>) -> Vector2<f64> {
    (px - Vector2::repeat(0.5)) / 2.0
}

/// Half-resolution cell coordinate to full-resolution pixel.
pub fn fine_to_pixel(q: &Vector2<f64>) -> Vector2<f64> {
    q * 2.0 + Vector2::repeat(0.5)
}

/// Fine similarity map of one point against a `w x w` cell window.
#[derive(Debug, Clone, PartialEq)]
pub struct FineWindow {
    /// Dot products; `origin` holds the window's top-left cell `(col, row)`.
    pub map: SimilarityMap,
}

/// Window of `w x w` half-resolution cells centered on `center_pixel`,
/// shifted to stay inside the fine map.
pub fn extract_fine_window(
    features: &FeatureSet,
    point_index: usize,
    center_pixel: &Vector2<f64>,
    w: usize,
) -> Result<FineWindow> {
    let (rows, cols) = (features.fine_rows, features.fine_cols);
    if w == 0 || w > rows || w > cols {
        return Err(Error::invalid(format!("fine window {w} does not fit a {rows}x{cols} map")));
    }
    if features.fine_image.nrows() != rows * cols {
        return Err(Error::ShapeMismatch("fine image rows != fine_rows * fine_cols".into()));
    }
    if point_index >= features.fine_points.nrows() {
        return Err(Error::invalid(format!("point {point_index} has no fine feature")));
    }
    let q = pixel_to_fine(center_pixel);
    let half = (w as f64 - 1.0) / 2.0;
    let start = |c: f64, n: usize| -> usize { ((c - half).round().max(0.0) as usize).min(n - w) };
    let (r0, c0) = (start(q.y, rows), start(q.x, cols));
    let f = features.fine_points.row(point_index);
    let mut values = Array2::zeros((w, w));
    for r in 0..w {
        for c in 0..w {
            values[(r, c)] = f.dot(&features.fine_image.row((r0 + r) * cols + c0 + c));
        }
    }
    Ok(FineWindow {
        map: SimilarityMap::with_origin(values, Vector2::new(c0 as f64, r0 as f64)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineMatchOutput {
    pub matches: CorrespondenceSet,
    /// Coarse pairs dropped because their point has no fine feature.
    pub skipped: usize,
}

/// Refines coarse pixels by soft-argmax over the whole fine window.
pub fn fine_match(features: &FeatureSet, coarse: &CorrespondenceSet, w: usize, temperature: f64) -> Result<FineMatchOutput> {
    let mut pairs = Vec::with_capacity(coarse.len());
    let mut skipped = 0;
    for c in &coarse.pairs {
        if c.point_index >= features.fine_points.nrows() {
            skipped += 1;
            continue;
        }
        let win = extract_fine_window(features, c.point_index, &c.pixel, w)?;
        let q = soft_argmax(&win.map, temperature)?;
        let mut refined = *c;
        refined.pixel = fine_to_pixel(&q);
        pairs.push(refined);
    }
    Ok(FineMatchOutput {
        matches: CorrespondenceSet { pairs },
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::Correspondence;
    use nalgebra::Vector3;

    fn fine_features(rows: usize, cols: usize, hot_cell: (usize, usize)) -> FeatureSet {
        let mut fine_image = Array2::zeros((rows * cols, 2));
        for i in 0..rows * cols {
            fine_image[(i, 1)] = 1.0;
        }
        let hot = hot_cell.0 * cols + hot_cell.1;
        fine_image[(hot, 0)] = 1.0;
        fine_image[(hot, 1)] = 0.0;
        let mut fine_points = Array2::zeros((1, 2));
        fine_points[(0, 0)] = 1.0;
        FeatureSet {
            coarse_image: Array2::zeros((0, 1)),
            coarse_points: Array2::zeros((0, 1)),
            fine_image,
            fine_rows: rows,
            fine_cols: cols,
            fine_points,
        }
    }

    fn pair(px: Vector2<f64>, point_index: usize) -> Correspondence {
        Correspondence {
            group: 0,
            point_index,
            point: Vector3::zeros(),
            pixel: px,
            confidence: 0.5,
        }
    }

    #[test]
    fn pixel_fine_round_trip() {
        let p = Vector2::new(17.25, 3.0);
        assert!((fine_to_pixel(&pixel_to_fine(&p)) - p).norm() < 1e-15);
    }

    #[test]
    fn window_covers_patch_cells() {
        // Patch (row 1, col 2) at s=16 has center pixel (39.5, 23.5) -> cells 16..24 x 8..16.
        let fs = fine_features(40, 40, (0, 0));
        let win = extract_fine_window(&fs, 0, &Vector2::new(39.5, 23.5), 8).unwrap();
        assert_eq!(win.map.origin, Vector2::new(16.0, 8.0));
    }

    #[test]
    fn border_window_is_shifted_inside() {
        let fs = fine_features(20, 30, (0, 0));
        let win = extract_fine_window(&fs, 0, &Vector2::new(0.0, 0.0), 8).unwrap();
        assert_eq!(win.map.origin, Vector2::new(0.0, 0.0));
        let win = extract_fine_window(&fs, 0, &Vector2::new(59.9, 39.9), 8).unwrap();
        assert_eq!(win.map.origin, Vector2::new(22.0, 12.0));
    }

    #[test]
    fn sharp_fine_match_lands_on_the_hot_cell() {
        let fs = fine_features(20, 30, (5, 9));
        let coarse = CorrespondenceSet {
            pairs: vec![pair(Vector2::new(17.0, 12.0), 0), pair(Vector2::new(1.0, 1.0), 3)],
        };
        let out = fine_match(&fs, &coarse, 8, 1e-3).unwrap();
        assert_eq!(out.skipped, 1);
        let expected = fine_to_pixel(&Vector2::new(9.0, 5.0));
        assert!((out.matches.pairs[0].pixel - expected).norm() < 1e-9);
    }
}
