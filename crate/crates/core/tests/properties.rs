//! Randomized structural invariants: flux conservation, normalization,
//! comb uniformity, serialization round trips, norm decay.

use proptest::prelude::*;

use cqad_core::dynamics::{evolve_states, multimode_decay_rate, phonon_emission_probability};
use cqad_core::io::config::{parse_config, parse_quantity, write_config, CavityConfig, DeviceConfig};
use cqad_core::io::csv::{read_scan, write_scan};
use cqad_core::model::{
    rate_from_t1, t1_from_rate, DbrSpec, FpCavitySpec, IdtSpec, MaterialParams, Mode, ModeSet,
    QubitSpec, RingCavitySpec, ScanData,
};
use cqad_core::spectrum::{ring_fsr, ring_mode_set};
use cqad_core::wave::{bragg_frequency, dbr_unit_cell_matrix, idt_response, mirror_reflectivity};

fn material_strategy() -> impl Strategy<Value = MaterialParams> {
    (1500.0..8000.0f64, 1500.0..8000.0f64, 4000.0..9000.0f64).prop_map(|(vp, vg, vs)| {
        MaterialParams {
            phase_velocity: vp,
            group_velocity: vg,
            substrate_velocity: vs,
        }
    })
}

fn mirror_strategy(max_loss: f64) -> impl Strategy<Value = DbrSpec> {
    let loss = if max_loss > 0.0 {
        (0.0..max_loss).boxed()
    } else {
        Just(0.0).boxed()
    };
    (100e-9..1000e-9f64, 0.2..0.8f64, 1u32..160, 0.005..0.3f64, loss).prop_map(
        |(period, duty_cycle, strip_count, velocity_contrast, per_cell_amplitude_loss)| DbrSpec {
            period,
            duty_cycle,
            strip_count,
            velocity_contrast,
            per_cell_amplitude_loss,
        },
    )
}

fn idt_strategy() -> impl Strategy<Value = IdtSpec> {
    (
        1u32..40,
        200e-9..2000e-9f64,
        prop::option::of(1e9..8e9f64),
        0.0..5e6f64,
    )
        .prop_map(|(finger_pairs, period, center_frequency, peak_coupling)| IdtSpec {
            finger_pairs,
            period,
            center_frequency,
            peak_coupling,
        })
}

fn ring_strategy() -> impl Strategy<Value = RingCavitySpec> {
    (
        50e-6..2000e-6f64,
        1e2..1e6f64,
        1e3..2e6f64,
        1e9..8e9f64,
        material_strategy(),
    )
        .prop_map(
            |(circumference, uniform_q, uniform_coupling, reference_frequency, material)| {
                RingCavitySpec {
                    circumference,
                    uniform_q,
                    uniform_coupling,
                    reference_frequency,
                    material,
                }
            },
        )
}

fn fp_strategy() -> impl Strategy<Value = FpCavitySpec> {
    (
        (50e-6..1000e-6f64, mirror_strategy(0.01), mirror_strategy(0.01)),
        idt_strategy(),
        material_strategy(),
        prop::option::of(1e2..1e6f64),
        prop::option::of(1e9..8e9f64),
    )
        .prop_map(
            |((mirror_separation, left_mirror, right_mirror), idt, material, intrinsic_q, mode_anchor)| {
                FpCavitySpec {
                    mirror_separation,
                    left_mirror,
                    right_mirror,
                    idt,
                    material,
                    intrinsic_q,
                    mode_anchor,
                }
            },
        )
}

fn mode_set_strategy() -> impl Strategy<Value = (f64, ModeSet)> {
    (
        3e9..6e9f64,
        prop::collection::vec((-2e7..2e7f64, 1e3..5e6f64, 0.0..1e6f64), 1..6),
    )
        .prop_map(|(f_q, raw)| {
            let mut modes: Vec<Mode> = raw
                .into_iter()
                .map(|(detuning, linewidth, coupling)| Mode {
                    frequency: f_q + detuning,
                    linewidth,
                    coupling,
                    lossy: false,
                })
                .collect();
            modes.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
            let set = ModeSet {
                modes,
                band: (f_q - 3e7, f_q + 3e7),
            };
            (f_q, set)
        })
}

proptest! {
    #[test]
    fn lossless_mirrors_conserve_flux(
        mirror in mirror_strategy(0.0),
        mat in material_strategy(),
        rel in 0.5..1.5f64,
    ) {
        let f = rel * bragg_frequency(&mirror, &mat);
        let rt = mirror_reflectivity(f, &mirror, &mat).unwrap();
        let sum = rt.r.norm_sqr() + rt.t.norm_sqr();
        prop_assert!((sum - 1.0).abs() < 1e-11, "|r|^2+|t|^2 = {sum}");
        let det = dbr_unit_cell_matrix(f, &mirror, &mat).unwrap().determinant();
        prop_assert!((det - 1.0).norm() < 1e-10, "det = {det}");
    }

    #[test]
    fn idt_response_is_normalized(
        idt in idt_strategy(),
        mat in material_strategy(),
        rel in 0.01..4.0f64,
    ) {
        let f0 = idt.resolved_center_frequency(&mat);
        let a = idt_response(rel * f0, &idt, &mat);
        prop_assert!((0.0..=1.0).contains(&a), "A = {a}");
        prop_assert_eq!(idt_response(f0, &idt, &mat), 1.0);
    }

    #[test]
    fn decay_rate_is_additive_in_the_intrinsic_rate(
        (f_q, set) in mode_set_strategy(),
        gamma_0 in 0.0..1e6f64,
        extra in 0.0..1e6f64,
    ) {
        let base = multimode_decay_rate(f_q, &set, gamma_0);
        let shifted = multimode_decay_rate(f_q, &set, gamma_0 + extra);
        prop_assert!((shifted - (base + extra)).abs() <= 1e-9 * shifted.max(1.0));
        prop_assert!(base >= gamma_0);
    }

    #[test]
    fn ring_mode_comb_is_uniform(ring in ring_strategy(), half_spans in 2.0..20.0f64) {
        let fsr = ring_fsr(&ring).unwrap();
        let band = (
            (ring.reference_frequency - half_spans * fsr).max(fsr * 0.5),
            ring.reference_frequency + half_spans * fsr,
        );
        let set = ring_mode_set(&ring, band).unwrap();
        prop_assert!(!set.modes.is_empty());
        for m in &set.modes {
            prop_assert!(m.frequency >= band.0 && m.frequency <= band.1);
            prop_assert!(m.linewidth > 0.0);
            prop_assert_eq!(m.coupling, ring.uniform_coupling);
        }
        for w in set.modes.windows(2) {
            prop_assert!((w[1].frequency - w[0].frequency - fsr).abs() <= 1e-6 * fsr);
        }
    }

    #[test]
    fn config_text_round_trip_is_exact(
        ring in ring_strategy(),
        fp in fp_strategy(),
        qubit in prop::option::of((1e9..8e9f64, 0.0..1e6f64)),
        pick_ring in any::<bool>(),
    ) {
        let cavity = if pick_ring {
            CavityConfig::Ring(ring)
        } else {
            CavityConfig::Fp(fp)
        };
        let config = DeviceConfig {
            cavity,
            qubit: qubit.map(|(frequency, intrinsic_rate)| QubitSpec {
                frequency,
                intrinsic_rate,
            }),
        };
        let text = write_config(&config);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(back, config);
    }

    #[test]
    fn quantity_suffixes_normalize(
        value in 1e-3..1e3f64,
        unit in prop::sample::select(vec![
            ("Hz", 1.0),
            ("kHz", 1e3),
            ("MHz", 1e6),
            ("GHz", 1e9),
            ("nm", 1e-9),
            ("um", 1e-6),
            ("mm", 1e-3),
            ("m", 1.0),
            ("us", 1e-6),
            ("ns", 1e-9),
            ("s", 1.0),
        ]),
    ) {
        let (suffix, factor) = unit;
        let parsed = parse_quantity(&format!("{value}{suffix}")).unwrap();
        let want = value * factor;
        prop_assert!((parsed - want).abs() <= 1e-15 * want.abs());
    }

    #[test]
    fn scan_csv_round_trip_is_bitwise(
        steps in prop::collection::vec(1.0..1e6f64, 1..40),
        with_sigma in any::<bool>(),
    ) {
        let mut f = 1e6;
        let mut frequencies = Vec::with_capacity(steps.len() + 1);
        frequencies.push(f);
        for s in &steps {
            f += s;
            frequencies.push(f);
        }
        let rates: Vec<f64> = frequencies.iter().map(|x| (x * 0.37).sin().abs() * 1e5).collect();
        let uncertainties = with_sigma
            .then(|| rates.iter().map(|r| 0.01 * r + 1.0).collect::<Vec<f64>>());
        let scan = ScanData { frequencies, rates, uncertainties };
        let back = read_scan(&write_scan(&scan)).unwrap();
        prop_assert_eq!(back, scan);
    }

    #[test]
    fn lifetime_conversions_invert(exponent in -3.0..12.0f64) {
        let rate = 10f64.powf(exponent);
        let back = rate_from_t1(t1_from_rate(rate));
        prop_assert!((back - rate).abs() <= 1e-12 * rate);
    }

    #[test]
    fn emission_probability_is_bounded_and_monotone(
        gamma_0 in 1e2..1e6f64,
        enhancement in 1.0..1e4f64,
        more in 1.0..10.0f64,
    ) {
        let gamma_e = gamma_0 * enhancement;
        let p = phonon_emission_probability(gamma_e, gamma_0).unwrap();
        prop_assert!((0.0..1.0).contains(&p), "p = {p}");
        let p_more = phonon_emission_probability(gamma_e * more, gamma_0).unwrap();
        prop_assert!(p_more >= p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn excitation_norm_never_grows(
        (f_q, set) in mode_set_strategy(),
        gamma_0 in 0.0..1e5f64,
    ) {
        let t_grid: Vec<f64> = (0..24).map(|i| i as f64 * 1e-7).collect();
        let states = evolve_states(f_q, &set, gamma_0, &t_grid).unwrap();
        let norms: Vec<f64> = states.iter().map(|s| s.norm_sqr()).collect();
        prop_assert!((norms[0] - 1.0).abs() < 1e-12);
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "norm grew: {} -> {}", w[0], w[1]);
        }
    }
}
