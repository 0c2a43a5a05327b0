use std::f64::consts::{FRAC_PI_2, PI, TAU};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subcycle::clock::*;
use subcycle::dacsim::*;
use subcycle::sequencer::*;
use subcycle::waveform::*;

fn clock() -> ClockConfig {
    ClockConfig::default()
}

fn layout_with(lengths: &[(&str, u32, f64)]) -> (ChannelLayout, Vec<WaveformBank>) {
    let c = clock();
    let banks: Vec<WaveformBank> =
        lengths.iter().map(|&(id, n, ph)| build_bank(id, make_envelope(n, 1.0, ph, Shape::Constant).unwrap(), &c)).collect();
    (allocate_channel(&banks).unwrap(), banks)
}

fn program(events: Vec<PulseEvent>, carrier: f64) -> PulseProgram {
    PulseProgram::new(clock(), carrier, events, ProgramMetadata::default()).unwrap()
}

#[test]
fn round_trip_first_million() {
    let c = clock();
    for d in 0..=1_000_000u64 {
        let s = c.decompose(d);
        assert!(s.fine < 16 && s.coarse * 16 + u64::from(s.fine) == d);
        assert_eq!(c.recompose(&s).unwrap(), d);
    }
}

#[test]
fn shift_mask_equals_division_for_random_delays() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xdec0);
    for shift in 1..=6u32 {
        let ratio = 1u64 << shift;
        let c = ClockConfig::new(307_200_000 * ratio, 307_200_000, 2).unwrap();
        for _ in 0..100_000 / 6 + 1 {
            let d: u64 = rng.random_range(0..u64::MAX / 2);
            let s = c.decompose(d);
            assert_eq!((s.coarse, u64::from(s.fine)), (d / ratio, d % ratio));
            assert_eq!(s, decompose_arith(d, ratio as u32));
        }
    }
}

#[test]
fn fig4_timestep_is_25_samples() {
    let q = clock().seconds_to_samples(5.09e-9, Rounding::Nearest).unwrap();
    assert_eq!(q.samples, 25);
    assert!((q.error_s - (25.0 / 4.9152e9 - 5.09e-9)).abs() < 1e-18);
}

proptest! {
    #[test]
    fn decomposition_is_monotone(a in 0u64..10_000_000, b in 0u64..10_000_000) {
        let c = clock();
        let (sa, sb) = (c.decompose(a), c.decompose(b));
        prop_assert_eq!(a.cmp(&b), (sa.coarse, sa.fine).cmp(&(sb.coarse, sb.fine)));
    }

    #[test]
    fn replicas_are_shifted_copies(len in 1u32..400, phase in -PI..PI) {
        let c = clock();
        let bank = build_bank("b", make_envelope(len, 0.7, phase, Shape::GaussianEdged { edge_samples: 8 }).unwrap(), &c);
        let padded = bank.padded_length() as usize;
        prop_assert!(padded.is_multiple_of(16) && padded >= len as usize + 15 && padded < len as usize + 31);
        prop_assert_eq!(bank.total_samples(), 16 * padded as u64);
        let r0 = bank.replica(0).unwrap();
        for r in 0..16usize {
            let rep = bank.replica(r as u32).unwrap();
            prop_assert_eq!(rep.len(), padded);
            for k in 0..padded {
                let want = if k >= r { (r0.i_samples()[k - r], r0.q_samples()[k - r]) } else { (0, 0) };
                prop_assert_eq!((rep.i_samples()[k], rep.q_samples()[k]), want);
            }
        }
    }

    #[test]
    fn allocator_respects_the_budget(lengths in prop::collection::vec(1u32..4000, 1..24)) {
        let c = clock();
        let banks: Vec<WaveformBank> = lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| build_bank(format!("b{i}"), make_envelope(n, 1.0, 0.0, Shape::Constant).unwrap(), &c))
            .collect();
        let total: u64 = banks.iter().map(WaveformBank::total_samples).sum();
        match allocate_channel(&banks) {
            Ok(layout) => {
                prop_assert!(total <= 65536);
                prop_assert_eq!(u64::from(layout.used), total);
                let mut next = 0;
                for (slot, bank) in layout.slots.iter().zip(&banks) {
                    prop_assert_eq!(slot.offset, next);
                    next += slot.padded_length * slot.ratio;
                    prop_assert_eq!(u64::from(slot.padded_length * slot.ratio), bank.total_samples());
                }
            }
            Err(WaveformError::BudgetExceeded { requested, capacity, overflow }) => {
                prop_assert!(total > 65536);
                prop_assert_eq!((requested, capacity, overflow), (total, 65536, total - 65536));
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn iq_and_nco_phase_render_alike(phase in 0.0..TAU, start in 32u64..400) {
        let (nco_layout, nco_banks) = layout_with(&[("p", 40, 0.0)]);
        let (iq_layout, iq_banks) = layout_with(&[("p", 40, phase)]);
        let prog = program(vec![PulseEvent::mw(start, 40, phase, "p")], DEFAULT_CARRIER_HZ);
        let a = render(&compile(&prog, &nco_layout).unwrap(), &nco_banks).unwrap();
        let b = render(&compile(&prog, &iq_layout).unwrap(), &iq_banks).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for n in 0..a.len() {
            prop_assert!((a.samples[n] - b.samples[n]).abs() <= 1.0, "sample {n}: {} vs {}", a.samples[n], b.samples[n]);
        }
    }

    #[test]
    fn xy8_phases_survive_compilation(blocks in 1u32..6, tau in 300u64..3000) {
        let spec = CpmgSpec {
            n_pulses: 8 * blocks,
            tau_samples: tau,
            pi: PulseRef { bank: "pi".into(), length: 268 },
            pi2: PulseRef { bank: "pi2".into(), length: 134 },
            phase_pattern: PhasePattern::Xy8,
            readout: ReadoutSign::Plus,
        };
        let prog = build_cpmg(&spec, &Scaffold::default(), &clock(), DEFAULT_CARRIER_HZ).unwrap();
        let (layout, _) = layout_with(&[("pi", 268, 0.0), ("pi2", 134, 0.0)]);
        let c = compile(&prog, &layout).unwrap();
        let phases = c.pulse_phases();
        let unit = [0.0, FRAC_PI_2, 0.0, FRAC_PI_2, FRAC_PI_2, 0.0, FRAC_PI_2, 0.0];
        for (k, p) in phases[1..phases.len() - 1].iter().enumerate() {
            prop_assert!((p - unit[k % 8]).abs() < 1e-9);
        }
        // closing edge: opening edge + pi/2 + 2 N tau - pi/2
        let e = &c.predicted_edges;
        prop_assert_eq!(e[e.len() - 1] + 134, e[0] + 134 + 2 * u64::from(spec.n_pulses) * tau);
    }
}

#[test]
fn random_single_pulse_delays_land_exactly() {
    let (layout, banks) = layout_with(&[("p", 20, 0.0)]);
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let start: u64 = rng.random_range(32..5000);
        let prog = program(vec![PulseEvent::mw(start, 20, 0.0, "p")], DEFAULT_CARRIER_HZ);
        let c = compile(&prog, &layout).unwrap();
        let edges = measure_edges(&render(&c, &banks).unwrap(), DEFAULT_EDGE_THRESHOLD).unwrap();
        assert_eq!(edges.measured_starts, vec![start]);
        assert_eq!(c.predicted_edges, vec![start]);
    }
}

#[test]
fn residue_sweep_covers_every_replica() {
    let (layout, banks) = layout_with(&[("p", 20, 0.0)]);
    let mut residues = Vec::new();
    for fine in 0..16 {
        let start = 48 + fine;
        let prog = program(vec![PulseEvent::mw(start, 20, 0.0, "p")], 0.0);
        let e = measure_edges(&render(&compile(&prog, &layout).unwrap(), &banks).unwrap(), 0.5).unwrap();
        residues.push(e.residues[0]);
    }
    assert_eq!(residues, (0..16).collect::<Vec<u32>>());
}

#[test]
fn two_pulse_spacing() {
    let (layout, banks) = layout_with(&[("p", 20, 0.0)]);
    for gap in [32u64, 33, 47, 100, 257] {
        let prog = program(vec![PulseEvent::mw(40, 20, 0.0, "p"), PulseEvent::mw(60 + gap, 20, 0.0, "p")], DEFAULT_CARRIER_HZ);
        let e = measure_edges(&render(&compile(&prog, &layout).unwrap(), &banks).unwrap(), 0.5).unwrap();
        assert_eq!(e.measured_starts[1] - e.measured_starts[0], gap + 20);
    }
}

#[test]
fn carrier_phase_is_coherent_across_pulses() {
    let (layout, banks) = layout_with(&[("p", 20, 0.0)]);
    let carrier = 1.2345e9;
    let word = freq_to_word(carrier, clock().dac_rate_hz());
    for (a, b) in [(40u64, 97u64), (33, 1000), (100, 4321)] {
        let prog = program(vec![PulseEvent::mw(a, 20, 0.0, "p"), PulseEvent::mw(b, 20, 0.0, "p")], carrier);
        let s = render(&compile(&prog, &layout).unwrap(), &banks).unwrap();
        let measured = (s.phase(b as usize) - s.phase(a as usize)).rem_euclid(TAU);
        let expected = word_to_phase(nco_phase_advance(word, b - a));
        let diff = (measured - expected + PI).rem_euclid(TAU) - PI;
        assert!(diff.abs() < 1e-6, "{measured} vs {expected}");
        // demodulating with the accumulator state leaves the envelope
        let (i, q) = s.demodulate(b as usize, nco_phase_advance(word, b));
        assert!((i - FULL_SCALE).abs() < 1e-6 && q.abs() < 1e-6);
    }
}

#[test]
fn rendering_is_additive() {
    let (layout, banks) = layout_with(&[("p", 30, 0.0), ("q", 50, 0.3)]);
    let a = PulseEvent::mw(45, 30, 0.7, "p");
    let b = PulseEvent::mw(200, 50, 1.9, "q");
    let r = |ev: Vec<PulseEvent>| render(&compile(&program(ev, DEFAULT_CARRIER_HZ), &layout).unwrap(), &banks).unwrap();
    let both = r(vec![a.clone(), b.clone()]);
    let (sa, sb) = (r(vec![a]), r(vec![b]));
    for n in 0..both.len() {
        let single = sa.samples.get(n).copied().unwrap_or(0.0) + sb.samples.get(n).copied().unwrap_or(0.0);
        assert!((both.samples[n] - single).abs() < 1e-9, "sample {n}");
    }
}

#[test]
fn tau_step_moves_each_pulse_by_its_ladder_offset() {
    let (layout, banks) = layout_with(&[("pi", 268, 0.0), ("pi2", 134, 0.0)]);
    let edges = |tau: u64| {
        let spec = CpmgSpec {
            n_pulses: 32,
            tau_samples: tau,
            pi: PulseRef { bank: "pi".into(), length: 268 },
            pi2: PulseRef { bank: "pi2".into(), length: 134 },
            phase_pattern: PhasePattern::Xy8,
            readout: ReadoutSign::Plus,
        };
        let prog = build_cpmg(&spec, &Scaffold::default(), &clock(), DEFAULT_CARRIER_HZ).unwrap();
        let c = compile(&prog, &layout).unwrap();
        let m = measure_edges(&render(&c, &banks).unwrap(), 0.5).unwrap();
        assert_eq!(m.measured_starts, c.predicted_edges);
        c.predicted_edges
    };
    let (e0, e1) = (edges(2444), edges(2445));
    assert_eq!(e0.len(), 34);
    assert_eq!(e1[0], e0[0]);
    for k in 1..=32u64 {
        assert_eq!(e1[k as usize] - e0[k as usize], 2 * k - 1);
    }
    assert_eq!(e1[33] - e0[33], 64);
}
