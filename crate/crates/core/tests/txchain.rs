use proptest::prelude::*;
use prx_core::field::{propagate_cd, rrc_matched, square_law, Branch, ComplexWaveform, DispersionSpec};
use prx_core::tx::{build_frame, premix, shape_frame, FrameSpec, PilotRatio, QamConstellation, QamOrder};
use prx_core::C64;

const ORDERS: [QamOrder; 3] = [QamOrder::Qpsk, QamOrder::Qam16, QamOrder::Qam32];

fn order_strategy() -> impl Strategy<Value = QamOrder> {
    prop::sample::select(ORDERS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn demap_inverts_map(order in order_strategy(), symbols in prop::collection::vec(0usize..32, 1..200)) {
        let c = QamConstellation::new(order);
        let m = c.bits_per_symbol();
        let mut bits = Vec::new();
        for s in symbols {
            c.bits_of(s % order.order(), &mut bits);
        }
        prop_assert_eq!(bits.len() % m, 0);
        let mapped = c.map(&bits).unwrap();
        prop_assert_eq!(c.demap(&mapped), bits);
    }

    #[test]
    fn frame_length_and_guards(
        training_len in 64usize..512,
        guard_len in 0usize..64,
        block in 1usize..256,
        repeats in 1usize..5,
        k in 2u32..8,
        seed in any::<u64>(),
    ) {
        let spec = FrameSpec {
            training_len,
            guard_len,
            payload_block_len: block,
            payload_repeats: repeats,
            pilot_ratio: PilotRatio::one_in(k).unwrap(),
            ..FrameSpec::default()
        };
        let c = QamConstellation::new(QamOrder::Qam16);
        let l = build_frame(&spec, &c, seed).unwrap();
        prop_assert_eq!(l.symbols.len(), 2 * guard_len + training_len + block * repeats);
        prop_assert_eq!(l.symbols.len(), spec.frame_len());
        // Guards are the cyclic prefix and postfix of the training sequence.
        let t = &l.training_symbols;
        prop_assert_eq!(&l.symbols[..guard_len], &t[training_len - guard_len..]);
        prop_assert_eq!(&l.symbols[guard_len..guard_len + training_len], &t[..]);
        prop_assert_eq!(&l.symbols[guard_len + training_len..2 * guard_len + training_len], &t[..guard_len]);
        // Pilots sit on every k-th payload slot and match the regenerated plan.
        let plan = l.pilot_plan();
        for (i, &p) in plan.mask.iter().enumerate() {
            prop_assert_eq!(p, i % k as usize == 0);
            if p {
                prop_assert_eq!(plan.values[i], l.payload_block[i]);
            }
        }
        let regenerated = build_frame(&spec, &c, seed).unwrap();
        prop_assert_eq!(regenerated.pilot_plan(), plan);
        prop_assert_eq!(regenerated.training_symbols, l.training_symbols);
    }
}

#[test]
fn identity_channel_frame_round_trip_is_error_free() {
    for order in ORDERS {
        let spec = FrameSpec {
            order,
            ..FrameSpec::default()
        };
        let c = QamConstellation::new(order);
        let l = build_frame(&spec, &c, 11).unwrap();
        let w = shape_frame(&spec, &l).unwrap();
        let symbols = rrc_matched(&w, spec.rolloff, spec.samples_per_symbol).unwrap();
        let start = spec.payload_start(spec.reconstruction_repeat());
        let block = &symbols[start..start + spec.payload_block_len];
        let data: Vec<C64> = block
            .iter()
            .zip(&l.pilot_mask)
            .filter(|(_, &p)| !p)
            .map(|(s, _)| *s)
            .collect();
        assert_eq!(c.demap(&data), l.payload_bits, "{order:?}");
    }
}

#[test]
fn premix_is_undone_by_opposite_dispersion() {
    let spec = FrameSpec::default();
    let c = QamConstellation::new(spec.order);
    let l = build_frame(&spec, &c, 3).unwrap();
    let w = shape_frame(&spec, &l).unwrap();
    let back = propagate_cd(&premix(&w, &spec).unwrap(), &spec.premix_dispersion.negate()).unwrap();
    assert!(prx_core::field::relative_l2(back.samples(), w.samples()) < 1e-10);
}

/// Largest deviation, over the training window, between the intensity of the
/// isolated guard+training+guard segment propagated circularly and that of
/// the full frame, relative to the mean intensity.
fn guard_window_deviation(d: f64) -> f64 {
    let spec = FrameSpec::default();
    let c = QamConstellation::new(spec.order);
    let l = build_frame(&spec, &c, 5).unwrap();
    let sps = spec.samples_per_symbol;
    let (g, t) = (spec.guard_len, spec.training_len);
    let full = shape_frame(&spec, &l).unwrap();
    let segment = ComplexWaveform::new(full.samples()[..(2 * g + t) * sps].to_vec(), full.sample_rate_hz()).unwrap();
    let d = DispersionSpec::new(d);
    let a = square_law(&propagate_cd(&full, &d).unwrap(), Branch::Dispersed).samples;
    let b = square_law(&propagate_cd(&segment, &d).unwrap(), Branch::Dispersed).samples;
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    (g * sps..(g + t) * sps)
        .map(|k| (a[k] - b[k]).abs())
        .fold(0.0, f64::max)
        / mean
}

#[test]
fn guards_make_training_window_circularly_consistent() {
    assert_eq!(guard_window_deviation(0.0), 0.0);
    // Dispersive spreads inside the guard leave only the kernel's far sidelobes.
    let inside = guard_window_deviation(-1275.0);
    assert!(inside < 1e-2, "{inside}");
    // A spread beyond the 64-symbol guard breaks the circular model.
    let beyond = guard_window_deviation(-6000.0);
    assert!(beyond > 10.0 * inside, "{beyond} vs {inside}");
}
