use proptest::prelude::*;

use tacmux::channel::{superimpose, superimpose_seq, ChannelConfig};
use tacmux::codebook::{sylvester_hadamard, CodeBook};
use tacmux::decoder::correlate;
use tacmux::encoder::{encode_word, frame_schedule, NodeWaveform};
use tacmux::sensor::SensorModel;
use tacmux::sweep::{default_max_active, run_trial, scale_config};

fn order() -> impl Strategy<Value = usize> {
    (1u32..=7).prop_map(|e| 1usize << e)
}

proptest! {
    #[test]
    fn hadamard_rows_are_pairwise_orthogonal(n in order(), i_seed: usize, j_seed: usize) {
        let rows = sylvester_hadamard(n).unwrap();
        let i = i_seed % n;
        let j = j_seed % n;
        let want = if i == j { n as i64 } else { 0 };
        prop_assert_eq!(rows[i].dot(&rows[j]), want);
    }

    #[test]
    fn every_row_but_the_first_is_zero_sum(n in order(), r_seed: usize) {
        let rows = sylvester_hadamard(n).unwrap();
        let r = 1 + r_seed % (n - 1);
        prop_assert_eq!(rows[r].chip_sum(), 0);
        prop_assert_eq!(rows[0].chip_sum(), n as i64);
    }

    #[test]
    fn assignment_is_deterministic(nodes in 1usize..100, skip_dc: bool) {
        let a = CodeBook::assign(nodes, skip_dc).unwrap();
        let b = CodeBook::assign(nodes, skip_dc).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn any_word_survives_sign_correlation(
        n in order(),
        row_seed: usize,
        k in 1u8..=16,
        word_seed: u32,
    ) {
        let rows = sylvester_hadamard(n).unwrap();
        let code = &rows[row_seed % n];
        let word = word_seed & ((1u32 << k) - 1);
        let chips = encode_word(code, word, k).unwrap();
        let mut recovered = 0u32;
        for slot in 0..k as usize {
            let values: Vec<i64> =
                chips[slot * n..(slot + 1) * n].iter().map(|&c| i64::from(c)).collect();
            let dot = correlate(&values, code);
            prop_assert_eq!(dot.abs(), n as i64);
            recovered = recovered << 1 | u32::from(dot > 0);
        }
        prop_assert_eq!(recovered, word);
    }

    #[test]
    fn a_constant_line_correlates_to_zero(n in order(), r_seed: usize, level in -10_000i64..10_000) {
        let rows = sylvester_hadamard(n).unwrap();
        let r = 1 + r_seed % (n - 1);
        prop_assert_eq!(correlate(&vec![level; n], &rows[r]), 0);
    }

    #[test]
    fn burst_length_is_exactly_k_n_t(
        k in 1u8..=24,
        n in order(),
        t in 1e-7f64..1e-3,
    ) {
        let period = k as f64 * n as f64 * t * 2.0;
        let s = frame_schedule(k, n, t, period, 0.1).unwrap();
        prop_assert_eq!(s.frame_duration, k as f64 * n as f64 * t);
        prop_assert_eq!(s.gap, period - s.frame_duration);
    }

    #[test]
    fn superposition_is_linear(
        parts in (4usize..64).prop_flat_map(|len| {
            prop::collection::vec(prop::collection::vec(-3.3f64..3.3, len), 2..=5)
        }),
    ) {
        let cfg = ChannelConfig::default();
        let waves: Vec<NodeWaveform> = parts
            .into_iter()
            .map(|samples| NodeWaveform { sample_rate: 1e6, t0: 0.0, samples })
            .collect();
        let refs: Vec<&NodeWaveform> = waves.iter().collect();
        let whole = superimpose(&refs, &cfg).unwrap();
        let seq = superimpose_seq(&refs, &cfg).unwrap();
        prop_assert_eq!(&whole.samples, &seq.samples);
        let head = superimpose(&refs[..1], &cfg).unwrap();
        let tail = superimpose(&refs[1..], &cfg).unwrap();
        for (i, &v) in whole.samples.iter().enumerate() {
            prop_assert!((v - (head.samples[i] + tail.samples[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn pressure_map_inverts_exactly(p in 0.0f64..=140.0) {
        let m = SensorModel::default();
        let v = m.pressure_to_voltage(p).unwrap();
        let back = m.voltage_to_pressure(v);
        prop_assert!(!back.clamped);
        prop_assert!((back.kpa - p).abs() < 1e-9);
    }

    #[test]
    fn adc_word_falls_as_pressure_rises(a in 0.0f64..=140.0, b in 0.0f64..=140.0) {
        let m = SensorModel::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let w_lo = m.adc_quantize(m.pressure_to_voltage(lo).unwrap());
        let w_hi = m.adc_quantize(m.pressure_to_voltage(hi).unwrap());
        prop_assert!(w_lo >= w_hi);
    }

    #[test]
    fn quantizer_roundtrip_stays_within_one_lsb(v in -1.0f64..5.0) {
        let m = SensorModel::default();
        let back = m.word_to_voltage(m.adc_quantize(v));
        let lsb = m.vref / ((1u32 << m.adc_bits) - 1) as f64;
        prop_assert!((back - v.clamp(0.0, m.vref)).abs() <= lsb);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ideal_channel_roundtrips_exactly(n_exp in 2u32..=4, trial_seed: u64) {
        let setup = scale_config(1 << n_exp, 10, 8.0).resolve().unwrap();
        let stats = run_trial(&setup, 2, default_max_active(&setup), trial_seed).unwrap();
        prop_assert!(stats.is_exact());
        prop_assert_eq!(stats.frames, 2);
    }
}
