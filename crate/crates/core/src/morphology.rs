//! Flat grayscale morphology on 2-D images: erosion and dilation with disk
//! structuring elements, and geodesic reconstruction run to its fixed point.
//!
//! Reconstruction uses the sequential raster/anti-raster formulation: the
//! marker is swept forward and backward with the causal halves of the
//! 8-neighbourhood until nothing changes. Neighbourhoods are clipped at the
//! image border.

use ndarray::Array2;

/// Offsets `(dr, dc)` of a disk of the given radius: all displacements with
/// `dr^2 + dc^2 <= radius^2`. Radius 0 degenerates to the centre pixel.
pub fn disk_offsets(radius: u32) -> Vec<(i32, i32)> {
    let r = radius as i32;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Minimum over the structuring element, clipped to the image.
pub fn erode(img: &Array2<f64>, offsets: &[(i32, i32)]) -> Array2<f64> {
    extremum(img, offsets, f64::min, f64::INFINITY)
}

/// Maximum over the structuring element, clipped to the image.
pub fn dilate(img: &Array2<f64>, offsets: &[(i32, i32)]) -> Array2<f64> {
    extremum(img, offsets, f64::max, f64::NEG_INFINITY)
}

fn extremum(
    img: &Array2<f64>,
    offsets: &[(i32, i32)],
    pick: fn(f64, f64) -> f64,
    init: f64,
) -> Array2<f64> {
    let (h, w) = img.dim();
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut best = init;
            for &(dr, dc) in offsets {
                let rr = r as i32 + dr;
                let cc = c as i32 + dc;
                if rr >= 0 && rr < h as i32 && cc >= 0 && cc < w as i32 {
                    best = pick(best, img[[rr as usize, cc as usize]]);
                }
            }
            out[[r, c]] = best;
        }
    }
    out
}

const FORWARD: [(i32, i32); 4] = [(-1, -1), (-1, 0), (-1, 1), (0, -1)];
const BACKWARD: [(i32, i32); 4] = [(0, 1), (1, -1), (1, 0), (1, 1)];

/// Reconstruction by dilation of `marker` under `mask` (marker clamped below
/// the mask first). The fixed point is the largest image below the mask whose
/// regional maxima all touch the marker.
pub fn reconstruct_by_dilation(marker: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    let (h, w) = mask.dim();
    let mut m = marker.clone();
    m.zip_mut_with(mask, |v, &f| *v = v.min(f));
    let cap = h * w + 2;
    for _ in 0..cap {
        let mut changed = false;
        for r in 0..h {
            for c in 0..w {
                let mut best = m[[r, c]];
                for &(dr, dc) in &FORWARD {
                    let rr = r as i32 + dr;
                    let cc = c as i32 + dc;
                    if rr >= 0 && rr < h as i32 && cc >= 0 && cc < w as i32 {
                        best = best.max(m[[rr as usize, cc as usize]]);
                    }
                }
                let v = best.min(mask[[r, c]]);
                if v != m[[r, c]] {
                    m[[r, c]] = v;
                    changed = true;
                }
            }
        }
        for r in (0..h).rev() {
            for c in (0..w).rev() {
                let mut best = m[[r, c]];
                for &(dr, dc) in &BACKWARD {
                    let rr = r as i32 + dr;
                    let cc = c as i32 + dc;
                    if rr >= 0 && rr < h as i32 && cc >= 0 && cc < w as i32 {
                        best = best.max(m[[rr as usize, cc as usize]]);
                    }
                }
                let v = best.min(mask[[r, c]]);
                if v != m[[r, c]] {
                    m[[r, c]] = v;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    m
}

/// Reconstruction by erosion of `marker` above `mask`; dual of
/// [`reconstruct_by_dilation`].
pub fn reconstruct_by_erosion(marker: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    let (h, w) = mask.dim();
    let mut m = marker.clone();
    m.zip_mut_with(mask, |v, &f| *v = v.max(f));
    let cap = h * w + 2;
    for _ in 0..cap {
        let mut changed = false;
        for r in 0..h {
            for c in 0..w {
                let mut worst = m[[r, c]];
                for &(dr, dc) in &FORWARD {
                    let rr = r as i32 + dr;
                    let cc = c as i32 + dc;
                    if rr >= 0 && rr < h as i32 && cc >= 0 && cc < w as i32 {
                        worst = worst.min(m[[rr as usize, cc as usize]]);
                    }
                }
                let v = worst.max(mask[[r, c]]);
                if v != m[[r, c]] {
                    m[[r, c]] = v;
                    changed = true;
                }
            }
        }
        for r in (0..h).rev() {
            for c in (0..w).rev() {
                let mut worst = m[[r, c]];
                for &(dr, dc) in &BACKWARD {
                    let rr = r as i32 + dr;
                    let cc = c as i32 + dc;
                    if rr >= 0 && rr < h as i32 && cc >= 0 && cc < w as i32 {
                        worst = worst.min(m[[rr as usize, cc as usize]]);
                    }
                }
                let v = worst.max(mask[[r, c]]);
                if v != m[[r, c]] {
                    m[[r, c]] = v;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    m
}

/// Opening by reconstruction: erode with a disk, then rebuild under the
/// original image. Removes bright structures the disk cannot contain while
/// preserving the shape of everything that survives.
pub fn opening_by_reconstruction(img: &Array2<f64>, radius: u32) -> Array2<f64> {
    let marker = erode(img, &disk_offsets(radius));
    reconstruct_by_dilation(&marker, img)
}

/// Closing by reconstruction: dilate with a disk, then rebuild above the
/// original image. Dual of [`opening_by_reconstruction`] for dark structures.
pub fn closing_by_reconstruction(img: &Array2<f64>, radius: u32) -> Array2<f64> {
    let marker = dilate(img, &disk_offsets(radius));
    reconstruct_by_erosion(&marker, img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Naive reconstruction oracle: whole-image geodesic steps with the full
    /// 3x3 neighbourhood, iterated until stable.
    fn naive_reconstruct(
        marker: &Array2<f64>,
        mask: &Array2<f64>,
        by_dilation: bool,
    ) -> Array2<f64> {
        let neighbourhood: Vec<(i32, i32)> = (-1..=1)
            .flat_map(|dr| (-1..=1).map(move |dc| (dr, dc)))
            .collect();
        let mut m = marker.clone();
        if by_dilation {
            m.zip_mut_with(mask, |v, &f| *v = v.min(f));
        } else {
            m.zip_mut_with(mask, |v, &f| *v = v.max(f));
        }
        loop {
            let stepped = if by_dilation {
                let mut d = dilate(&m, &neighbourhood);
                d.zip_mut_with(mask, |v, &f| *v = v.min(f));
                d
            } else {
                let mut e = erode(&m, &neighbourhood);
                e.zip_mut_with(mask, |v, &f| *v = v.max(f));
                e
            };
            if stepped == m {
                return m;
            }
            m = stepped;
        }
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
    }

    #[test]
    fn disk_radius_one_is_a_cross() {
        let mut d = disk_offsets(1);
        d.sort();
        assert_eq!(d, vec![(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]);
        assert_eq!(disk_offsets(0), vec![(0, 0)]);
    }

    #[test]
    fn opening_removes_single_bright_pixel() {
        let mut img = Array2::zeros((5, 7));
        img[[2, 3]] = 9.0;
        let opened = opening_by_reconstruction(&img, 1);
        assert!(
            opened.iter().all(|&v| v == 0.0),
            "isolated peak should vanish entirely"
        );
    }

    #[test]
    fn closing_fills_single_dark_pixel() {
        let mut img = Array2::from_elem((5, 7), 4.0);
        img[[2, 3]] = 0.5;
        let closed = closing_by_reconstruction(&img, 1);
        assert!(closed.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn constant_image_is_a_fixed_point_of_everything() {
        let img = Array2::from_elem((6, 6), 2.5);
        for radius in [1u32, 2, 3] {
            assert_eq!(opening_by_reconstruction(&img, radius), img);
            assert_eq!(closing_by_reconstruction(&img, radius), img);
        }
    }

    #[test]
    fn raster_reconstruction_matches_naive_oracle() {
        for seed in [1u64, 2, 3, 4, 5] {
            let img = random_image(9, 11, seed);
            for radius in [1u32, 2] {
                let marker = erode(&img, &disk_offsets(radius));
                let fast = reconstruct_by_dilation(&marker, &img);
                let slow = naive_reconstruct(&marker, &img, true);
                assert_eq!(fast, slow, "dilation reconstruction diverged, seed {seed}");

                let marker = dilate(&img, &disk_offsets(radius));
                let fast = reconstruct_by_erosion(&marker, &img);
                let slow = naive_reconstruct(&marker, &img, false);
                assert_eq!(fast, slow, "erosion reconstruction diverged, seed {seed}");
            }
        }
    }

    #[test]
    fn reconstruction_handles_snaking_geodesics() {
        // A one-pixel-wide serpentine ridge forces information to travel
        // against the raster direction repeatedly.
        let (h, w) = (9, 9);
        let mut img = Array2::zeros((h, w));
        for r in 0..h {
            if r % 2 == 0 {
                for c in 0..w {
                    img[[r, c]] = 5.0;
                }
            }
        }
        for r in (1..h).step_by(2) {
            let c = if (r / 2) % 2 == 0 { w - 1 } else { 0 };
            img[[r, c]] = 5.0;
        }
        let mut marker = Array2::zeros((h, w));
        marker[[0, 0]] = 5.0;
        let rebuilt = reconstruct_by_dilation(&marker, &img);
        let oracle = naive_reconstruct(&marker, &img, true);
        assert_eq!(rebuilt, oracle);
        // The whole ridge is geodesically connected to the seed.
        assert_eq!(rebuilt, img);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]

        #[test]
        fn opening_below_image_below_closing(seed in 0u64..500, radius in 1u32..4) {
            let img = random_image(7, 8, seed);
            let opened = opening_by_reconstruction(&img, radius);
            let closed = closing_by_reconstruction(&img, radius);
            for ((&o, &i), &c) in opened.iter().zip(img.iter()).zip(closed.iter()) {
                prop_assert!(o <= i + 1e-12);
                prop_assert!(c >= i - 1e-12);
            }
        }

        #[test]
        fn opening_is_idempotent(seed in 0u64..500) {
            let img = random_image(6, 6, seed);
            let once = opening_by_reconstruction(&img, 2);
            let twice = opening_by_reconstruction(&once, 2);
            prop_assert_eq!(once, twice);
        }
    }
}
