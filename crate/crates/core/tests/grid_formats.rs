use aridprob_core::grid::{
    convert_kelvin_to_celsius, convert_precip_rate_to_cm, days_in_month, load_grid, read_layers, save_grid,
    synth_generate, winsorize, write_layers, GridFormat, GridSpec, Layer, LayerStack, MonthlyField, StGrid,
    SynthConfig,
};
use aridprob_core::Error;
use proptest::prelude::*;

fn small_spec(n_lat: usize, n_lon: usize, years: i32) -> GridSpec {
    GridSpec::new((10.0, 10.0 + n_lat as f64 * 0.5), (-5.0, -5.0 + n_lon as f64 * 0.5), 0.5, (1990, 1990 + years - 1))
        .unwrap()
}

fn grid_from(spec: &GridSpec, values: &[f64], holes: &[bool]) -> StGrid {
    let mut precip = Vec::new();
    let mut temp = Vec::new();
    let mut k = 0;
    for year in spec.years() {
        for month in 1..=12u8 {
            let take = |k: &mut usize| {
                (0..spec.n_cells())
                    .map(|_| {
                        let v = values[*k % values.len()];
                        let hole = holes[*k % holes.len()];
                        *k += 1;
                        if hole {
                            f64::NAN
                        } else {
                            v
                        }
                    })
                    .collect::<Vec<_>>()
            };
            precip.push(MonthlyField { year, month, values: take(&mut k).iter().map(|v| v.abs()).collect() });
            temp.push(MonthlyField { year, month, values: take(&mut k) });
        }
    }
    StGrid::new(spec.clone(), precip, temp).unwrap()
}

fn value() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, -1.0..1.0f64, Just(0.0), (1e-300..1e300f64),]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn binary_round_trip_is_bit_exact(
        n_lat in 1usize..4, n_lon in 1usize..4, years in 1i32..3,
        values in prop::collection::vec(value(), 1..64),
        holes in prop::collection::vec(prop::bool::weighted(0.1), 1..16),
    ) {
        let spec = small_spec(n_lat, n_lon, years);
        let grid = grid_from(&spec, &values, &holes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        save_grid(&grid, &path, GridFormat::Binary).unwrap();
        let back = load_grid(&path, None).unwrap();
        prop_assert_eq!(back.spec(), grid.spec());
        for (a, b) in grid.precip().iter().chain(grid.temp()).zip(back.precip().iter().chain(back.temp())) {
            prop_assert_eq!((a.year, a.month), (b.year, b.month));
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn csv_round_trip_within_relative_tolerance(
        n_lat in 1usize..4, n_lon in 1usize..4,
        values in prop::collection::vec(value(), 1..64),
        holes in prop::collection::vec(prop::bool::weighted(0.1), 1..16),
    ) {
        let spec = small_spec(n_lat, n_lon, 1);
        let grid = grid_from(&spec, &values, &holes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        save_grid(&grid, &path, GridFormat::Csv).unwrap();
        let back = load_grid(&path, Some(&spec)).unwrap();
        for (a, b) in grid.precip().iter().chain(grid.temp()).zip(back.precip().iter().chain(back.temp())) {
            for (x, y) in a.values.iter().zip(&b.values) {
                if x.is_nan() {
                    prop_assert!(y.is_nan());
                } else {
                    prop_assert!((x - y).abs() <= 1e-6 * x.abs(), "{} vs {}", x, y);
                }
            }
        }
    }

    #[test]
    fn winsorize_is_idempotent_and_bounded(
        values in prop::collection::vec(-10.0..10.0f64, 0..50),
        lo in -5.0..0.0f64, width in 0.0..5.0f64,
    ) {
        let hi = lo + width;
        let once = winsorize(&values, lo, hi).unwrap();
        let twice = winsorize(&once, lo, hi).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.iter().all(|v| (lo..=hi).contains(v)));
    }

    #[test]
    fn precip_conversion_is_linear(a in 0.0..1e-3f64, b in 0.0..1e-3f64, days in 28u32..=31) {
        let lhs = convert_precip_rate_to_cm(a + b, days).unwrap();
        let rhs = convert_precip_rate_to_cm(a, days).unwrap() + convert_precip_rate_to_cm(b, days).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn kelvin_conversion_is_a_shift(t in 150.0..350.0f64, dt in -20.0..20.0f64) {
        let d = convert_kelvin_to_celsius(t + dt).unwrap() - convert_kelvin_to_celsius(t).unwrap();
        prop_assert!((d - dt).abs() < 1e-9);
    }
}

#[test]
fn february_lengths_follow_the_gregorian_calendar() {
    assert_eq!(days_in_month(1900, 2).unwrap(), 28);
    assert_eq!(days_in_month(2000, 2).unwrap(), 29);
    assert_eq!(days_in_month(1964, 2).unwrap(), 29);
    assert_eq!(days_in_month(1963, 2).unwrap(), 28);
}

#[test]
fn corrupted_binary_files_are_rejected() {
    let spec = small_spec(2, 2, 1);
    let grid = grid_from(&spec, &[1.0, 2.0, 3.0], &[false]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.bin");
    save_grid(&grid, &path, GridFormat::Binary).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_grid(&path, None), Err(Error::Integrity(_))));

    let mut bad = bytes.clone();
    bad[8] = 9;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_grid(&path, None), Err(Error::Version { found: 9, .. })));
}

#[test]
fn csv_requires_a_spec_and_reports_lines() {
    let spec = small_spec(1, 1, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.csv");
    std::fs::write(&path, "variable,year,month,lat_index,lon_index,value\nprecip,1990,13,0,0,1.0\n").unwrap();
    assert!(matches!(read_layers(&path, None), Err(Error::Usage(_))));
    match read_layers(&path, Some(&spec)) {
        Err(Error::Parse { line, msg }) => {
            assert_eq!(line, 2);
            assert!(msg.contains("month 13"), "{msg}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn arbitrary_layers_round_trip_through_binary() {
    let spec = small_spec(2, 3, 2);
    let layers = vec![
        Layer { variable: "prob_arid".into(), year: 1990, month: 0, values: vec![0.1, 0.2, f64::NAN, 0.4, 0.5, 0.6] },
        Layer { variable: "cv".into(), year: 1990, month: 0, values: vec![0.0; 6] },
    ];
    let stack = LayerStack::new(spec, layers).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.bin");
    write_layers(&stack, &path, GridFormat::Binary).unwrap();
    let back = read_layers(&path, None).unwrap();
    assert_eq!(back.layers.len(), 2);
    assert_eq!(back.layers[0].variable, "cv");
    assert!(back.find("prob_arid", 1990, 0).unwrap().values[2].is_nan());
}

#[test]
fn synthetic_grid_is_reproducible() {
    let cfg = SynthConfig {
        spec: small_spec(4, 4, 2),
        seed: 11,
        precip_gradient: 0.5,
        precip_base: 12.0,
        noise_sd: 1.0,
        temp_base: 25.0,
        temp_lapse: 0.3,
        seasonal_amp: 0.2,
    };
    let a = synth_generate(&cfg).unwrap();
    let b = synth_generate(&cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.precip().iter().flat_map(|f| &f.values).all(|v| *v >= 0.0));
}

#[test]
fn csv_keeps_all_missing_layers() {
    let spec = small_spec(1, 2, 1);
    let grid = grid_from(&spec, &[0.0], &[true]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.csv");
    save_grid(&grid, &path, GridFormat::Csv).unwrap();
    let back = load_grid(&path, Some(&spec)).unwrap();
    assert_eq!(back.precip().len(), grid.precip().len());
    assert!(back.precip().iter().chain(back.temp()).all(|l| l.values.iter().all(|v| v.is_nan())));
}
