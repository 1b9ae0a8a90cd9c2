use aerodet::boxes::Bbox;
use aerodet::loss::{
    ciou_loss, enclosing_extent, grad_with, iou, update_mean, value_with, wiou_loss, wiou_r,
    FocusMode, Frozen, LossKind, WiouState,
};
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = Bbox> {
    (
        -100.0f64..100.0,
        -100.0f64..100.0,
        0.5f64..80.0,
        0.5f64..80.0,
    )
        .prop_map(|(cx, cy, w, h)| Bbox::new(cx, cy, w, h).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Central differences with a step on each coordinate, computed here rather
/// than through the library's own checker.
fn central_diff(kind: LossKind, a: &Bbox, b: &Bbox, fr: &Frozen, h: f64) -> [f64; 4] {
    let mut g = [0.0; 4];
    for (i, gi) in g.iter_mut().enumerate() {
        let shift = |sign: f64| {
            let mut v = [a.cx, a.cy, a.w, a.h];
            v[i] += sign * h;
            Bbox {
                cx: v[0],
                cy: v[1],
                w: v[2],
                h: v[3],
            }
        };
        *gi = (value_with(kind, &shift(1.0), b, fr) - value_with(kind, &shift(-1.0), b, fr))
            / (2.0 * h);
    }
    g
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn scale_invariance(a in bbox(), b in bbox(), s in 0.01f64..100.0) {
        let (sa, sb) = (a.scaled(s), b.scaled(s));
        prop_assert!(rel(iou(&a, &b), iou(&sa, &sb)) <= 1e-9 || (iou(&a, &b) - iou(&sa, &sb)).abs() < 1e-15);
        prop_assert!(rel(ciou_loss(&a, &b), ciou_loss(&sa, &sb)) <= 1e-9);
        prop_assert!(rel(wiou_r(&a, &b), wiou_r(&sa, &sb)) <= 1e-9);
        let st = WiouState::default();
        let (p, q) = (wiou_loss(&a, &b, &st).unwrap(), wiou_loss(&sa, &sb, &st).unwrap());
        prop_assert!(rel(p.loss, q.loss) <= 1e-9 || (p.loss - q.loss).abs() < 1e-15);
    }

    #[test]
    fn translation_invariance(a in bbox(), b in bbox(), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let (ta, tb) = (a.translated(dx, dy), b.translated(dx, dy));
        prop_assert!((ciou_loss(&a, &b) - ciou_loss(&ta, &tb)).abs() < 1e-9);
        prop_assert!((wiou_r(&a, &b) - wiou_r(&ta, &tb)).abs() < 1e-9);
    }

    #[test]
    fn distance_factor_range(a in bbox(), b in bbox()) {
        // rho^2 never exceeds the enclosing diagonal squared.
        let r = wiou_r(&a, &b);
        prop_assert!((1.0..=std::f64::consts::E).contains(&r));
        let (wg, hg) = enclosing_extent(&a, &b);
        prop_assert!(wg >= a.w.max(b.w) * (1.0 - 1e-12) && hg >= a.h.max(b.h) * (1.0 - 1e-12));
    }

    #[test]
    fn ciou_at_least_iou_loss(a in bbox(), b in bbox()) {
        prop_assert!(ciou_loss(&a, &b) >= 1.0 - iou(&a, &b) - 1e-12);
    }

    #[test]
    fn perfect_overlap_is_zero(a in bbox(), m in 0.01f64..1.0) {
        for mode in [FocusMode::PaperAlpha, FocusMode::ReferenceR] {
            let st = WiouState { running_mean: m, mode, ..WiouState::default() };
            prop_assert_eq!(wiou_loss(&a, &a, &st).unwrap().loss, 0.0);
        }
        prop_assert_eq!(ciou_loss(&a, &a), 0.0);
        prop_assert_eq!(wiou_r(&a, &a), 1.0);
    }

    #[test]
    fn running_mean_converges(init in 0.001f64..=1.0, target in 0.0f64..=1.0) {
        let mut st = WiouState::with_mean(init);
        for _ in 0..200 {
            st = update_mean(&st, &[target, target]).unwrap();
        }
        prop_assert!((st.running_mean - target).abs() < 0.01);
    }

    #[test]
    fn gradients_match_central_differences(
        gx in 0.0f64..100.0, gy in 0.0f64..100.0, gw in 5.0f64..60.0, gh in 5.0f64..60.0,
        jx in -0.4f64..0.4, jy in -0.4f64..0.4, sw in -0.6f64..0.6, sh in -0.6f64..0.6,
    ) {
        let gt = Bbox::new(gx, gy, gw, gh).unwrap();
        let pred = Bbox::new(gx + jx * gw, gy + jy * gh, gw * sw.exp(), gh * sh.exp()).unwrap();
        let h = 1e-5 * pred.w.max(pred.h);
        prop_assume!(aerodet::loss::is_smooth_pair(&pred, &gt, 20.0 * h));
        for kind in LossKind::ALL {
            let fr = Frozen::at(kind, &pred, &gt, &WiouState::default()).unwrap();
            let g = grad_with(kind, &pred, &gt, &fr);
            prop_assert!(!g.at_kink);
            let n = central_diff(kind, &pred, &gt, &fr, h);
            let scale = g.d.iter().chain(&n).fold(1e-12f64, |m, v| m.max(v.abs()));
            for i in 0..4 {
                prop_assert!((g.d[i] - n[i]).abs() / scale < 1e-4, "{kind} d{i}: {} vs {}", g.d[i], n[i]);
            }
        }
    }
}

#[test]
fn focus_is_one_at_delta() {
    for mode in [FocusMode::PaperAlpha, FocusMode::ReferenceR] {
        let st = WiouState {
            mode,
            ..WiouState::default()
        };
        assert_eq!(st.focus(st.delta), 1.0);
    }
}

#[test]
fn concentric_boxes_have_unit_distance_factor() {
    let a = Bbox::new(10.0, 20.0, 4.0, 9.0).unwrap();
    let b = Bbox::new(10.0, 20.0, 30.0, 1.0).unwrap();
    assert_eq!(wiou_r(&a, &b), 1.0);
}

#[test]
fn state_is_not_mutated_by_evaluation() {
    let st = WiouState::with_mean(0.3);
    let a = Bbox::new(0.0, 0.0, 4.0, 4.0).unwrap();
    let b = Bbox::new(1.0, 0.0, 4.0, 4.0).unwrap();
    let first = wiou_loss(&a, &b, &st).unwrap();
    assert_eq!(wiou_loss(&a, &b, &st).unwrap(), first);
    assert_eq!(st, WiouState::with_mean(0.3));
}

#[test]
fn rejects_non_positive_mean() {
    let a = Bbox::new(0.0, 0.0, 4.0, 4.0).unwrap();
    assert!(wiou_loss(&a, &a, &WiouState::with_mean(0.0)).is_err());
    assert!(update_mean(&WiouState::default(), &[]).is_err());
}
