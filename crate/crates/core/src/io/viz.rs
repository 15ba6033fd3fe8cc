use rand::Rng;

use super::pnm::Image;
use crate::clustering::AssignmentMatrix;
use crate::grid::GridShape;
use crate::rng::substream;
use crate::scalar::Scalar;

pub const MARKER_COLOR: [u8; 3] = [255, 255, 255];

/// Seeded group colors with every channel in `[32, 223]`, so no group color
/// equals the marker.
pub fn color_table(n_groups: usize, seed: u64) -> Vec<[u8; 3]> {
    let mut rng = substream(seed, 0xC0_10);
    (0..n_groups)
        .map(|_| [0; 3].map(|_: u8| rng.random_range(32..=223)))
        .collect()
}

/// Colors each pixel by its argmax group and marks the center pixels.
pub fn cluster_visualize<T: Scalar>(
    s: &AssignmentMatrix<T>,
    shape: GridShape,
    centers: &[usize],
    seed: u64,
) -> Image {
    let colors = color_table(s.n_groups(), seed);
    let mut img = Image::filled(shape.width(), shape.height(), [0; 3]).expect("shape is non-empty");
    for (p, g) in s.argmax().into_iter().enumerate().take(shape.n_pixels()) {
        let (r, c) = shape.coords(p);
        img.set_pixel(r, c, &colors[g]);
    }
    for &p in centers.iter().filter(|&&p| p < shape.n_pixels()) {
        let (r, c) = shape.coords(p);
        img.set_pixel(r, c, &MARKER_COLOR);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn colors(img: &Image) -> BTreeSet<Vec<u8>> {
        img.data().chunks(3).map(<[u8]>::to_vec).collect()
    }

    #[test]
    fn single_group_is_uniform_with_one_marker() {
        let shape = GridShape::new(3, 4).unwrap();
        let s = AssignmentMatrix::<f32>::from_labels(&[0; 12], 1).unwrap();
        let img = cluster_visualize(&s, shape, &[5], 1);
        let cs = colors(&img);
        assert_eq!(cs.len(), 2);
        assert_eq!(img.pixel(1, 1), &MARKER_COLOR);
        assert_eq!(
            img.data().chunks(3).filter(|c| *c == MARKER_COLOR).count(),
            1
        );
    }

    #[test]
    fn hard_two_groups_give_two_region_colors() {
        let shape = GridShape::new(1, 4).unwrap();
        let s = AssignmentMatrix::<f32>::from_labels(&[0, 0, 1, 1], 2).unwrap();
        let img = cluster_visualize(&s, shape, &[], 3);
        assert_eq!(colors(&img).len(), 2);
        assert_eq!(img.pixel(0, 0), img.pixel(0, 1));
        assert_ne!(img.pixel(0, 1), img.pixel(0, 2));
    }

    #[test]
    fn deterministic_per_seed() {
        let shape = GridShape::new(4, 4).unwrap();
        let labels: Vec<usize> = (0..16).map(|p| p % 5).collect();
        let s = AssignmentMatrix::<f32>::from_labels(&labels, 5).unwrap();
        let a = cluster_visualize(&s, shape, &[0, 7], 11);
        assert_eq!(a, cluster_visualize(&s, shape, &[0, 7], 11));
        assert!(color_table(50, 4)
            .iter()
            .flatten()
            .all(|&v| (32..=223).contains(&v)));
    }
}
