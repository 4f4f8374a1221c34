use nalgebra::Vector2;
use ndarray::{s, Array2};

use crate::error::{Error, Result};

/// Grid of scores. Entry `(row, col)` sits at coordinate
/// `origin + (col, row)`, i.e. coordinates are `(x, y)` like pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    pub values: Array2<f64>,
    pub origin: Vector2<f64>,
}

impl SimilarityMap {
    pub fn new(values: Array2<f64>) -> Self {
        Self {
            values,
            origin: Vector2::zeros(),
        }
    }

    pub fn with_origin(values: Array2<f64>, origin: Vector2<f64>) -> Self {
        Self { values, origin }
    }

    /// `(row, col)` of the maximum; the lowest linear index wins ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for ((r, c), &v) in self.values.indexed_iter() {
            if v > best_v {
                best_v = v;
                best = (r, c);
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn softmax_weights(map: &SimilarityMap, temperature: f64) -> Result<Array2<f64>> {
    if map.values.is_empty() {
        return Err(Error::invalid("soft-argmax over an empty map"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let max = map.max();
    let mut w = map.values.mapv(|v| ((v - max) / temperature).exp());
    let z: f64 = w.sum();
    w /= z;
    Ok(w)
}

/// Expected grid coordinate under `softmax(values / temperature)`.
pub fn soft_argmax(map: &SimilarityMap, temperature: f64) -> Result<Vector2<f64>> {
    let w = softmax_weights(map, temperature)?;
    let mut acc = Vector2::zeros();
    for ((r, c), &p) in w.indexed_iter() {
        acc.x += p * c as f64;
        acc.y += p * r as f64;
    }
    Ok(acc + map.origin)
}

/// Gradient of `⟨grad_out, soft_argmax(map)⟩` with respect to the map values.
pub fn soft_argmax_backward(map: &SimilarityMap, temperature: f64, grad_out: &Vector2<f64>) -> Result<Array2<f64>> {
    let w = softmax_weights(map, temperature)?;
    let u = soft_argmax(map, temperature)? - map.origin;
    let mut g = Array2::zeros(w.raw_dim());
    for ((r, c), &p) in w.indexed_iter() {
        let d = Vector2::new(c as f64, r as f64) - u;
        g[(r, c)] = p * d.dot(grad_out) / temperature;
    }
    Ok(g)
}

/// Argmax, then soft-argmax inside the `window x window` neighborhood of it
/// (intersected with the map bounds).
pub fn window_soft_argmax(map: &SimilarityMap, window: usize, temperature: f64) -> Result<Vector2<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("window must be odd and >= 1, got {window}")));
    }
    if map.values.is_empty() {
        return Err(Error::invalid("soft-argmax over an empty map"));
    }
    let (r, c) = map.argmax();
    let h = window / 2;
    let (rows, cols) = map.values.dim();
    let (r0, r1) = (r.saturating_sub(h), (r + h + 1).min(rows));
    let (c0, c1) = (c.saturating_sub(h), (c + h + 1).min(cols));
    let sub = SimilarityMap::with_origin(
        map.values.slice(s![r0..r1, c0..c1]).to_owned(),
        map.origin + Vector2::new(c0 as f64, r0 as f64),
    );
    soft_argmax(&sub, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_map_gives_centroid() {
        let m = SimilarityMap::with_origin(Array2::zeros((2, 2)), Vector2::new(3.0, 4.0));
        assert_eq!(soft_argmax(&m, 1.0).unwrap(), Vector2::new(3.5, 4.5));
    }

    #[test]
    fn sharpened_map_approaches_argmax() {
        let v = array![[0.1, 0.3, 0.2], [0.25, 0.0, 0.29], [0.05, 0.1, 0.0]];
        let sharp = SimilarityMap::new(v.mapv(|x| x * 1e3));
        let u = soft_argmax(&sharp, 1.0).unwrap();
        assert!((u - Vector2::new(1.0, 0.0)).norm() < 1e-3);
        // Scaling values by c equals dividing the temperature by c.
        let a = soft_argmax(&SimilarityMap::new(v.mapv(|x| x * 7.0)), 2.0).unwrap();
        let b = soft_argmax(&SimilarityMap::new(v.clone()), 2.0 / 7.0).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn window_one_is_argmax() {
        let mut v = Array2::zeros((6, 7));
        v[(4, 2)] = 1.0;
        let u = window_soft_argmax(&SimilarityMap::new(v), 1, 1.0).unwrap();
        assert_eq!(u, Vector2::new(2.0, 4.0));
    }

    #[test]
    fn corner_peak_is_clamped() {
        let mut v = Array2::zeros((6, 7));
        v[(0, 6)] = 1.0;
        let u = window_soft_argmax(&SimilarityMap::new(v), 5, 1.0).unwrap();
        assert!(u.x >= 4.0 && u.x <= 6.0 && u.y >= 0.0 && u.y <= 2.0);
    }

    #[test]
    fn rejects_even_window_and_bad_temperature() {
        let m = SimilarityMap::new(Array2::zeros((3, 3)));
        assert!(window_soft_argmax(&m, 4, 1.0).is_err());
        assert!(soft_argmax(&m, 0.0).is_err());
        assert!(soft_argmax(&SimilarityMap::new(Array2::zeros((0, 3))), 1.0).is_err());
    }
}
