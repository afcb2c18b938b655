use plumeseg::radiometry::{
    median_filter, planck_excitance, radiance_to_emissivity, spectral_median_filter_3x3,
};
use plumeseg::synth::{generate, SceneSpec, SpectrumShape};
use proptest::prelude::*;

// 2hc²ν³/(exp(hcν/kT) − 1) evaluated with 40-digit arithmetic (mpmath).
const REFERENCE: [(f64, f64, f64); 5] = [
    (1.0e5, 300.0, 0.000_992_403_333_007_069_4),
    (1.0e5, 250.0, 0.000_378_349_705_949_940_9),
    (8.0e4, 320.0, 0.001_718_439_651_028_265_7),
    (1.2e5, 300.0, 0.000_653_788_291_881_497_9),
    (5.0e4, 1000.0, 0.014_136_308_111_388_283),
];

#[test]
fn planck_matches_high_precision_reference() {
    for (nu, t, expect) in REFERENCE {
        let got = planck_excitance(nu, t).unwrap();
        assert!(
            ((got - expect) / expect).abs() < 5e-13,
            "nu={nu} T={t}: {got} vs {expect}"
        );
    }
}

#[test]
fn uniform_noise_free_roundtrip() {
    let shape = SpectrumShape::Sinusoid {
        mean: 0.94,
        amplitude: 0.03,
        period_nm: 400.0,
        phase: 0.3,
    };
    let spec = SceneSpec::uniform(2, 4, 5, 16, 287.5, shape.clone());
    let (cube, _) = generate(&spec).unwrap();
    let res = radiance_to_emissivity(&cube, 287.5).unwrap();
    let expect = shape.sample(&spec.wavelengths()).unwrap();
    assert_eq!(res.outlier_count(), 0);
    for p in 0..res.cube.pixel_count() {
        for (a, b) in res.cube.pixel(p).iter().zip(&expect) {
            assert!(((a - b) / b).abs() < 1e-12);
        }
    }
}

#[test]
fn desk_scene_noise_free_roundtrip_per_region() {
    let mut spec = SceneSpec::desk_default();
    spec.noise_std = 0.0;
    spec.frames = 12;
    let (cube, _) = generate(&spec).unwrap();
    let map = spec.region_map().unwrap();
    let n = spec.height * spec.width;
    for (r, region) in spec.regions.iter().enumerate() {
        let em = radiance_to_emissivity(&cube, region.temperature)
            .unwrap()
            .cube;
        for t in (0..spec.frames).step_by(3) {
            for i in (0..n).step_by(17).filter(|&i| map[i] == r) {
                let (h, w) = (i / spec.width, i % spec.width);
                let expect = spec.emissivity(t, h, w).unwrap();
                for (a, b) in em.spectrum(t, h, w).iter().zip(&expect) {
                    assert!(((a - b) / b).abs() < 1e-12, "t={t} h={h} w={w}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn band_means_match_analytic_mixture() {
    let spec = SceneSpec::desk_default();
    let (cube, _) = generate(&spec).unwrap();
    let hw = spec.height * spec.width;
    let pixels = (spec.frames * hw) as f64;
    let mut observed = vec![0.0; spec.bands];
    let mut analytic = vec![0.0; spec.bands];
    for t in 0..spec.frames {
        for h in 0..spec.height {
            for w in 0..spec.width {
                let clean = spec.noise_free_radiance(t, h, w).unwrap();
                for (b, c) in clean.iter().enumerate() {
                    analytic[b] += c / pixels;
                    observed[b] += cube.get(t, h, w, b) / pixels;
                }
            }
        }
    }
    let tol = 3.0 * spec.noise_std / (hw as f64).sqrt();
    for (b, (o, a)) in observed.iter().zip(&analytic).enumerate() {
        assert!((o - a).abs() < tol, "band {b}: {o} vs {a}");
    }
}

#[test]
fn mismatched_temperature_flags_hottest_region() {
    let spec = SceneSpec::desk_default();
    let (cube, _) = generate(&spec).unwrap();
    let map = spec.region_map().unwrap();
    let hottest = (0..spec.regions.len())
        .max_by(|&a, &b| {
            spec.regions[a]
                .temperature
                .total_cmp(&spec.regions[b].temperature)
        })
        .unwrap();
    let assumed = spec
        .regions
        .iter()
        .map(|r| r.temperature)
        .fold(f64::MAX, f64::min);
    let res = radiance_to_emissivity(&cube, assumed).unwrap();
    let n = spec.height * spec.width;
    let mut oracle_hot = 0;
    for p in 0..cube.pixel_count() {
        let out = res.cube.pixel(p).iter().any(|v| !(0.0..=1.0).contains(v));
        assert_eq!(out, res.outlier_mask[p]);
        if out && map[p % n] == hottest {
            oracle_hot += 1;
        }
    }
    assert!(oracle_hot > 0);
}

#[test]
fn default_scene_outliers_cleaned() {
    let spec = SceneSpec::desk_default();
    let (cube, _) = generate(&spec).unwrap();
    let res = radiance_to_emissivity(&cube, 300.0).unwrap();
    let flagged: Vec<usize> = (0..res.outlier_mask.len())
        .filter(|&p| res.outlier_mask[p])
        .collect();
    assert!(!flagged.is_empty());
    let cleaned = spectral_median_filter_3x3(&res);
    let ok = flagged
        .iter()
        .filter(|&&p| cleaned.pixel(p).iter().all(|v| (0.0..=1.0).contains(v)))
        .count();
    assert!(
        ok as f64 >= 0.99 * flagged.len() as f64,
        "{ok} of {}",
        flagged.len()
    );
}

proptest! {
    #[test]
    fn planck_increasing_in_temperature(nu in 2e4f64..2e5, t in 150.0f64..1500.0, dt in 0.5f64..200.0) {
        let a = planck_excitance(nu, t).unwrap();
        let b = planck_excitance(nu, t + dt).unwrap();
        prop_assert!(a > 0.0 && b > a);
    }

    #[test]
    fn median_filter_stays_in_range(
        h in 1usize..9,
        w in 1usize..9,
        radius in 0usize..5,
        seed in proptest::collection::vec(-5.0f64..5.0, 81),
    ) {
        let img: Vec<f64> = seed[..h * w].to_vec();
        let out = median_filter(&img, h, w, radius);
        let lo = img.iter().cloned().fold(f64::MAX, f64::min);
        let hi = img.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(out.iter().all(|v| (lo..=hi).contains(v)));
        let c = vec![img[0]; h * w];
        prop_assert_eq!(median_filter(&c, h, w, radius), c);
    }
}
