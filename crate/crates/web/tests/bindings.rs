use recoil_web::{geometry_contrasts, spectrum, timing_errors};

#[test]
fn timing_errors_match_known_values() {
    let e = timing_errors(0.07, 0.1, &[20.0, 100.0]).unwrap();
    assert_eq!(e.len(), 4);
    assert!((e[0] - 2.0e-3).abs() < 2e-4, "{}", e[0]);
    assert!((e[2] - 9.8e-3).abs() < 1e-3, "{}", e[2]);
    assert!(e[1] > 0.0 && e[3] > e[1]);
}

#[test]
fn geometry_two_sided_beats_one_sided() {
    let c = geometry_contrasts(0.1, 10.0, &[0.0, 30.0, 60.0]).unwrap();
    assert_eq!(c[0], 1.0);
    assert_eq!(c[1], 1.0);
    for p in c.chunks(2).skip(1) {
        assert!(p[1] > p[0] && p[0] < 1.0);
    }
}

#[test]
fn spectrum_is_normalized() {
    let d = spectrum(1.0, 10.0, 0.0, -45.0, 15.0, 601).unwrap();
    let integral: f64 = d.windows(2).map(|w| 0.05 * (w[0] + w[1])).sum();
    assert!((integral - 1.0).abs() < 1e-9, "{integral}");
    assert!(spectrum(1.0, 10.0, 0.0, -1.0, 1.0, 50_000).is_err());
    assert!(spectrum(1.0, -1.0, 0.0, -1.0, 1.0, 10).is_err());
}
