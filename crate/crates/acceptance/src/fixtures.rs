//! Seeded random fixtures.

use aerodet::boxes::Bbox;
use aerodet::eval::{Detection, GroundTruth};
use aerodet::tide::ErrorType;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ltwh(l: f64, t: f64, w: f64, h: f64) -> Bbox {
    Bbox::from_ltwh(l, t, w, h).expect("positive extent")
}

/// Up to `max_images` images with up to `max_dets` detections each, three
/// classes, integer boxes on a 64 px canvas so overlaps, ties and ignore
/// hits are common. Scores come from a coarse grid so equal scores occur.
pub fn eval_fixture(
    r: &mut impl Rng,
    max_images: usize,
    max_dets: usize,
) -> (Vec<Detection>, Vec<GroundTruth>) {
    let images = r.gen_range(1..=max_images);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for img in 0..images as u64 {
        let n_gt = r.gen_range(0..=4);
        let first = gts.len();
        for _ in 0..n_gt {
            let b = ltwh(
                r.gen_range(0..48) as f64,
                r.gen_range(0..48) as f64,
                r.gen_range(4..24) as f64,
                r.gen_range(4..24) as f64,
            );
            let mut g = GroundTruth::new(img, r.gen_range(0..3), b);
            if r.gen_bool(0.1) {
                g = g.ignored();
            }
            gts.push(g);
        }
        for _ in 0..r.gen_range(0..=max_dets) {
            let score = r.gen_range(1..=10) as f64 / 10.0;
            let near = &gts[first..];
            let (class, bbox) = if !near.is_empty() && r.gen_bool(0.7) {
                let g = &near[r.gen_range(0..near.len())];
                let [l, t, w, h] = g.bbox.to_ltwh();
                let class = if r.gen_bool(0.8) {
                    g.class_id
                } else {
                    r.gen_range(0..3)
                };
                let j = |r: &mut dyn rand::RngCore| r.gen_range(-3..=3) as f64;
                let (dw, dh) = (j(r), j(r));
                (
                    class,
                    ltwh(l + j(r), t + j(r), (w + dw).max(1.0), (h + dh).max(1.0)),
                )
            } else {
                let b = ltwh(
                    r.gen_range(0..56) as f64,
                    r.gen_range(0..56) as f64,
                    r.gen_range(2..20) as f64,
                    r.gen_range(2..20) as f64,
                );
                (r.gen_range(0..3), b)
            };
            dets.push(Detection::new(img, class, score, bbox).expect("score in range"));
        }
    }
    (dets, gts)
}

pub const TIDE_CLASSES: u32 = 3;
const CELL: f64 = 60.0;
const SIDE: f64 = 20.0;
/// Shift giving IoU 240/560 (about 0.43) between two 20 px squares.
const LOOSE_SHIFT: f64 = 8.0;
/// Shift giving IoU 380/420 (about 0.90).
const TIGHT_SHIFT: f64 = 1.0;

/// A clean scene plus injected errors.
///
/// `images x per_image` ground-truth squares sit on a sparse grid, each with
/// a correct detection at score 0.5. `counts[i]` errors of `ErrorType::ALL[i]`
/// are then injected, each on its own ground truth, with scores in
/// `[0.9, 1.0)` so they outrank every correct detection:
/// * Cls: exact box, wrong class;
/// * Loc: right class, shifted to IoU about 0.43;
/// * Both: wrong class, shifted to IoU about 0.43;
/// * Dupe: right class, shifted to IoU about 0.90;
/// * Bkg: a box far from any ground truth;
/// * Miss: the correct detection is removed.
pub fn tide_injection(
    r: &mut impl Rng,
    images: u64,
    per_image: usize,
    counts: [usize; 6],
) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut gts = Vec::new();
    for img in 0..images {
        for j in 0..per_image {
            let class = r.gen_range(0..TIDE_CLASSES);
            gts.push(GroundTruth::new(
                img,
                class,
                ltwh(j as f64 * CELL, 0.0, SIDE, SIDE),
            ));
        }
    }
    let needed: usize = counts
        .iter()
        .enumerate()
        .filter(|(i, _)| ErrorType::ALL[*i] != ErrorType::Bkg)
        .map(|(_, c)| c)
        .sum();
    assert!(
        needed <= gts.len(),
        "not enough ground truth for the injections"
    );
    let mut targets: Vec<usize> = (0..gts.len()).collect();
    targets.shuffle(r);
    let mut targets = targets.into_iter();

    let mut missed = vec![false; gts.len()];
    let mut errors = Vec::new();
    let other =
        |c: u32, r: &mut dyn rand::RngCore| (c + r.gen_range(1..TIDE_CLASSES)) % TIDE_CLASSES;
    for (t, &n) in ErrorType::ALL.iter().zip(&counts) {
        for _ in 0..n {
            let score = r.gen_range(0.9..1.0);
            if *t == ErrorType::Bkg {
                let img = r.gen_range(0..images);
                let b = ltwh(
                    r.gen_range(0.0..500.0),
                    1000.0 + r.gen_range(0.0..500.0),
                    SIDE,
                    SIDE,
                );
                errors.push(Detection::new(img, r.gen_range(0..TIDE_CLASSES), score, b).unwrap());
                continue;
            }
            let g = targets.next().expect("checked above");
            let gt = &gts[g];
            let b = gt.bbox;
            let det =
                |class, bbox| Detection::new(gt.image_id.clone(), class, score, bbox).unwrap();
            match t {
                ErrorType::Cls => errors.push(det(other(gt.class_id, r), b)),
                ErrorType::Loc => errors.push(det(gt.class_id, b.translated(LOOSE_SHIFT, 0.0))),
                ErrorType::Both => {
                    errors.push(det(other(gt.class_id, r), b.translated(0.0, LOOSE_SHIFT)))
                }
                ErrorType::Dupe => errors.push(det(gt.class_id, b.translated(TIGHT_SHIFT, 0.0))),
                ErrorType::Miss => missed[g] = true,
                ErrorType::Bkg => unreachable!(),
            }
        }
    }
    let mut dets: Vec<Detection> = gts
        .iter()
        .zip(&missed)
        .filter(|(_, &m)| !m)
        .map(|(g, _)| Detection::new(g.image_id.clone(), g.class_id, 0.5, g.bbox).unwrap())
        .collect();
    dets.extend(errors);
    dets.shuffle(r);
    (dets, gts)
}

/// `n` annotations with log-uniform sides between 1 and 256 px.
pub fn annotations(r: &mut impl Rng, n: usize) -> Vec<GroundTruth> {
    (0..n)
        .map(|i| {
            let w = 2f64.powf(r.gen_range(0.0..8.0));
            let h = 2f64.powf(r.gen_range(0.0..8.0));
            GroundTruth::new(
                i as u64 % 7,
                r.gen_range(0..10),
                Bbox::new(500.0, 500.0, w, h).unwrap(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injection_sizes() {
        let (dets, gts) = tide_injection(&mut rng(1), 4, 8, [1, 1, 1, 1, 1, 1]);
        assert_eq!(gts.len(), 32);
        // 31 correct plus five injected detections.
        assert_eq!(dets.len(), 36);
    }

    #[test]
    fn eval_fixture_bounds() {
        let mut r = rng(2);
        for _ in 0..50 {
            let (dets, gts) = eval_fixture(&mut r, 10, 6);
            assert!(dets.len() <= 60);
            assert!(gts.len() <= 40);
        }
    }
}
