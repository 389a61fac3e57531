use std::sync::OnceLock;

use cce_core::phantom::netpbm::{decode, encode, Raster};
use cce_core::phantom::{augment, generate_dataset, split_dataset, PhantomConfig, PhantomSample};
use proptest::prelude::*;

fn samples() -> &'static [PhantomSample] {
    static S: OnceLock<Vec<PhantomSample>> = OnceLock::new();
    S.get_or_init(|| generate_dataset(&PhantomConfig::default(), 3, 2, 17).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn augment_keeps_shape_and_label(i in 0usize..5, seed in any::<u64>()) {
        let s = &samples()[i];
        let a = augment(s, seed, PhantomConfig::default().periphery_band_px);
        prop_assert_eq!(a.image.shape(), s.image.shape());
        prop_assert_eq!((a.mask.width(), a.mask.height()), (s.mask.width(), s.mask.height()));
        prop_assert_eq!((a.has_polyp, a.neoplastic), (s.has_polyp, s.neoplastic));
        prop_assert_eq!(&a.origin, &s.origin);
    }
}

proptest! {
    #[test]
    fn netpbm_round_trip_is_bit_exact(
        (w, h, channels, pixels) in (1usize..20, 1usize..20, prop::sample::select(vec![1usize, 3]))
            .prop_flat_map(|(w, h, c)| (Just(w), Just(h), Just(c), prop::collection::vec(any::<u8>(), w * h * c))),
    ) {
        let r = Raster { width: w, height: h, channels, pixels };
        let bytes = encode(&r);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn split_is_deterministic(seed in any::<u64>(), frac in 0.1f64..0.9) {
        let s = samples();
        prop_assert_eq!(split_dataset(s, frac, seed).unwrap(), split_dataset(s, frac, seed).unwrap());
    }
}

/// Closed-form OLS slope of histopathology size on CCE-equivalent size.
#[test]
fn hp_bias_is_recoverable() {
    let cfg = PhantomConfig::default();
    let polyps = generate_dataset(&cfg, 240, 0, 3).unwrap();
    let n = polyps.len() as f64;
    let (mx, my) = polyps
        .iter()
        .fold((0.0, 0.0), |(a, b), s| (a + s.cce_equivalent_mm / n, b + s.hp_mm / n));
    let (sxy, sxx) = polyps.iter().fold((0.0, 0.0), |(a, b), s| {
        let dx = s.cce_equivalent_mm - mx;
        (a + dx * (s.hp_mm - my), b + dx * dx)
    });
    let slope = sxy / sxx;
    assert!((slope - cfg.hp_bias_alpha).abs() <= 0.05, "slope {slope}");
}
