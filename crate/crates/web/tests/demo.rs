use stflow_web::{diverging, lti_impulse, rgb_to_rgba, selective_step, UpsampleDemo, VoxelDemo};

#[test]
fn colormaps() {
    assert_eq!(diverging(0.0), [255, 255, 255, 255]);
    assert_eq!(diverging(1.0), [255, 0, 0, 255]);
    assert_eq!(diverging(-3.0), [0, 0, 255, 255]);
    assert_eq!(rgb_to_rgba(&[1, 2, 3, 4, 5, 6]), vec![1, 2, 3, 255, 4, 5, 6, 255]);
}

#[test]
fn voxel_demo_buffers() {
    let d = VoxelDemo::build(32, 80.0, 30.0, 0.1, 2, 6).unwrap();
    assert!(d.event_count() > 0);
    for b in 0..d.bins() {
        assert_eq!(d.bin_pixels(b).len(), 32 * 32 * 4);
    }
    assert!(d.polarity_sum().is_finite());
    let still = VoxelDemo::build(32, 0.0, 0.0, 0.1, 2, 6).unwrap();
    assert_eq!(still.event_count(), 0);
    assert!(still.bin_pixels(0).iter().all(|&c| c == 255));
    assert!(VoxelDemo::build(32, 0.0, 0.0, 0.1, 2, 1).is_err());
}

#[test]
fn upsample_demo_stays_in_coarse_range() {
    let d = UpsampleDemo::build(5, 11, 6.0).unwrap();
    assert_eq!(d.size(), 40);
    let fine_rgba = d.fine_rgba();
    assert_eq!(fine_rgba.len(), 40 * 40 * 4);
    assert_eq!(d.coarse_rgba().len(), fine_rgba.len());

    let (c, f) = (d.coarse().data(), d.fine_field());
    let at = |ch: usize, y: usize, x: usize| c[(ch * 5 + y) * 5 + x];
    for y in 0..40 {
        for x in 0..40 {
            let (cy, cx) = (y / 8, x / 8);
            for (ch, got) in [(0, f.u[y * 40 + x]), (1, f.v[y * 40 + x])] {
                let mut hood = vec![];
                for ny in cy.saturating_sub(1)..=(cy + 1).min(4) {
                    for nx in cx.saturating_sub(1)..=(cx + 1).min(4) {
                        hood.push(8.0 * at(ch, ny, nx));
                    }
                }
                let lo = hood.iter().copied().fold(f32::INFINITY, f32::min);
                let hi = hood.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                assert!(got >= lo - 1e-4 && got <= hi + 1e-4, "({x}, {y}) ch {ch}: {got} not in [{lo}, {hi}]");
            }
        }
    }
    let coarse = d.coarse_field();
    assert_eq!(coarse.u[9 * 40 + 17], 8.0 * at(0, 1, 2));
}

#[test]
fn lti_impulse_matches_closed_form() {
    let (decay, delta, n, len) = (0.3, 0.5, 6, 40);
    for parallel in [false, true] {
        let y = lti_impulse(decay, delta, n, len, parallel).unwrap();
        assert_eq!(y[0], 0.0);
        for (k, &got) in y.iter().enumerate().skip(1) {
            let want: f64 = (1..=n)
                .map(|i| {
                    let a = -decay * i as f64;
                    let abar = (a * delta).exp();
                    abar.powi(k as i32 - 1) * (abar - 1.0) / a / n as f64
                })
                .sum();
            assert!((got - want).abs() < 1e-12, "step {k}: {got} vs {want}");
        }
    }
}

#[test]
fn selective_response_depends_on_amplitude() {
    let a = selective_step(1.0, 30, 5).unwrap();
    let b = selective_step(3.0, 30, 5).unwrap();
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-3, "normalized responses coincide: {gap}");
    assert!(a[1..].iter().any(|v| v.abs() > 1e-3), "response vanishes after the first step");
    assert!(selective_step(0.0, 30, 5).unwrap().iter().all(|&v| v == 0.0));
}
