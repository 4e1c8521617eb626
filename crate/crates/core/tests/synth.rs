use countkey::synth::{generate, PlantedKey, SynthConfig};

fn rate(labels: impl Iterator<Item = u8>) -> (f64, f64) {
    let (n, c) = labels.fold((0usize, 0usize), |(n, c), y| (n + 1, c + usize::from(y)));
    (c as f64 / n as f64, n as f64)
}

#[test]
fn unplanted_ctr_is_calibrated() {
    let cfg = SynthConfig {
        seed: 3,
        n_users: 150,
        base_ctr: 0.05,
        planted: vec![],
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    assert!(ds.len() >= 100_000, "{}", ds.len());
    let (p, n) = rate(ds.impressions().iter().map(|i| i.label));
    let se = (0.05 * 0.95 / n).sqrt();
    assert!((p - 0.05).abs() < 4.0 * se, "ctr {p} n {n}");
}

#[test]
fn hot_tuples_carry_the_lift() {
    let cfg = SynthConfig {
        seed: 4,
        n_users: 150,
        base_ctr: 0.05,
        planted: vec![PlantedKey::new(&["hour_of_day"], 0.2, 5.0, 1.0)],
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    assert!(ds.len() >= 100_000);
    let imps = ds.impressions();
    let (ph, nh) = rate(imps.iter().filter(|i| cfg.is_hot(0, i)).map(|i| i.label));
    let (pc, nc) = rate(imps.iter().filter(|i| !cfg.is_hot(0, i)).map(|i| i.label));
    assert!(nh > 1000.0 && nc > 1000.0);

    let se_h = (0.25 * 0.75 / nh).sqrt();
    let se_c = (0.05 * 0.95 / nc).sqrt();
    assert!((ph - 0.25).abs() < 4.0 * se_h, "hot ctr {ph}");
    assert!((pc - 0.05).abs() < 4.0 * se_c, "cold ctr {pc}");

    let ratio = ph / pc;
    let se_ratio = ratio * ((se_h / ph).powi(2) + (se_c / pc).powi(2)).sqrt();
    assert!((ratio - 5.0).abs() < 4.0 * se_ratio, "ratio {ratio} se {se_ratio}");
}
