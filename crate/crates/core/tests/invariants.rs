//! Derived quantities of the simulation and recovery chain checked against
//! values computed independently from first principles.

mod common;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use fdm_recover::analysis::fit::{difference_stats, fit_photopeak, mean_sd};
use fdm_recover::analysis::psd::{psd_param, PsdParams};
use fdm_recover::chain::{
    chain_impulse_response, classify_detector, digitize, front_end, resonator_impulse_response, DigitizerSpec,
    FanInSpec,
};
use fdm_recover::config::RunConfig;
use fdm_recover::deconv::deconvolve;
use fdm_recover::detector::{sample_events, synth_pulse, PulseShape, SourceKind, SourceSpec, Species};
use fdm_recover::pipeline::{Pipeline, RecoveryChannel};
use fdm_recover::signal::{dft, Trace};
use fdm_recover::summary::charge_summary;

fn organic(energy: f64, species: Species) -> Trace {
    let shape = match species {
        Species::Gamma => PulseShape::organic_gamma(),
        Species::Neutron => PulseShape::organic_neutron(),
    };
    synth_pulse(&event(energy, species, 205e-9), &shape, 0.8e-11, &DigitizerSpec::default()).unwrap().trace
}

#[test]
fn gated_charge_is_proportional_to_energy() {
    let p = Pipeline::new(RunConfig::default()).unwrap();
    let e: Vec<f64> = (1..=20).map(|i| 50.0 * i as f64).collect();
    let q: Vec<f64> = e.iter().map(|&x| p.measure(&organic(x, Species::Gamma), 0).unwrap().charge_kevee).collect();
    let (me, mq) = (e.iter().sum::<f64>() / 20.0, q.iter().sum::<f64>() / 20.0);
    let sxy: f64 = e.iter().zip(&q).map(|(a, b)| (a - me) * (b - mq)).sum();
    let sxx: f64 = e.iter().map(|a| (a - me).powi(2)).sum();
    let syy: f64 = q.iter().map(|b| (b - mq).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mq - slope * me;
    assert!(sxy * sxy / (sxx * syy) > 0.9999);
    assert!(intercept.abs() < 1e-9 * mq, "{intercept}");
    assert!(slope > 0.0);
}

#[test]
fn neutron_pulses_carry_more_delayed_light() {
    let cfg = RunConfig::default();
    let conv = cfg.conventions().unwrap();
    let params = PsdParams::default();
    for offset in [5, 10, 20] {
        let g = psd_param(&organic(500.0, Species::Gamma), offset, &params, 1.25e11, &conv).unwrap();
        let n = psd_param(&organic(500.0, Species::Neutron), offset, &params, 1.25e11, &conv).unwrap();
        assert!(g.ratio > n.ratio, "offset {offset}: {} vs {}", g.ratio, n.ratio);
        assert!((g.q_long - n.q_long).abs() < 0.05 * g.q_long);
    }
}

#[test]
fn fission_source_species_mix_matches_configured_fraction() {
    let src = SourceSpec { kind: SourceKind::Cf252Mixed, ..SourceSpec::default() };
    let n = 20_000;
    let ev = sample_events(&src, &DigitizerSpec::default(), n, 4).unwrap();
    let neutrons = ev.iter().filter(|e| e.species == Species::Neutron).count() as f64;
    let p = src.energy.neutron_fraction;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((neutrons - n as f64 * p).abs() < 3.0 * sd, "{neutrons}");
}

#[test]
fn photopeak_of_sampled_energies_has_configured_width() {
    let src = SourceSpec::default();
    let ev = sample_events(&src, &DigitizerSpec::default(), 100_000, 5).unwrap();
    let e: Vec<f64> = ev.iter().map(|x| x.energy_kevee).collect();
    let fit = fit_photopeak(&e, 600.0, 724.0, 62).unwrap();
    assert!((fit.sigma - 13.5).abs() < 0.2 + 3.0 * fit.sigma_err, "{fit:?}");
    assert!((fit.mean - 662.0).abs() < 3.0 * fit.mean_err, "{fit:?}");
    let expected = 100_000.0 * src.energy.photopeak_fraction;
    assert!((fit.area - expected).abs() < 3.0 * expected.sqrt() + 3.0 * fit.area_err, "{fit:?}");
}

#[test]
fn difference_width_matches_generating_gaussian() {
    let a: Vec<f64> = gaussian_vec(20_000, 6).iter().map(|z| 3.0 * z).collect();
    let b = vec![0.0; a.len()];
    let s = difference_stats(&a, &b).unwrap();
    assert!((s.sigma() / 3.0 - 1.0).abs() < 0.05, "{s:?}");
    assert!(s.centre().abs() < 3.0 * s.centre_err());
}

#[test]
fn quantization_error_is_uniform_over_one_code() {
    let d = DigitizerSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..200_000).map(|_| rng.random_range(-0.9..0.9)).collect();
    let q = digitize(&Trace::new(x.clone(), d.dt()).unwrap(), &d).unwrap();
    let err: Vec<f64> = q.trace.samples().iter().zip(&x).map(|(a, b)| a - b).collect();
    let (m, sd) = mean_sd(&err);
    assert!(m.abs() < 0.01 * d.lsb());
    assert!((sd / (d.lsb() / 12f64.sqrt()) - 1.0).abs() < 0.05, "{sd}");
    assert!(err.iter().all(|e| e.abs() <= 0.5 * d.lsb() + 1e-15));
}

#[test]
fn front_end_equals_direct_convolution_times_fan_in_gain() {
    let d = DigitizerSpec::default();
    let cfg = RunConfig::default();
    let fanin = FanInSpec { gain: 1.7, ..FanInSpec::default() };
    let x = organic(400.0, Species::Neutron);
    for r in &cfg.resonators {
        let h = resonator_impulse_response(r, &d).unwrap();
        let y = front_end::<ChaCha8Rng>(&x, r, &fanin, None).unwrap();
        let want: Vec<f64> = brute_convolve(x.samples(), h.samples()).iter().map(|v| v * fanin.gain).collect();
        assert!(rel_err(y.samples(), &want) < 1e-9);
    }
}

#[test]
fn impulse_response_spectrum_peaks_at_the_resonance() {
    let d = DigitizerSpec::default();
    let cfg = RunConfig::default();
    for r in &cfg.resonators {
        let h = dft(&chain_impulse_response(r, &cfg.fanin, &d).unwrap());
        let half = h.len() / 2;
        let k = (1..=half).max_by(|&a, &b| h.bins()[a].norm().total_cmp(&h.bins()[b].norm())).unwrap();
        let nearest = (r.f0_hz / h.df()).round() as usize;
        assert!(k.abs_diff(nearest) <= 1, "{} MHz: bin {k} vs {nearest}", r.f0_hz / 1e6);
    }
}

#[test]
fn single_detector_records_are_classified_correctly() {
    let cfg =
        RunConfig { source: SourceSpec { detectors: vec![0, 1], ..SourceSpec::default() }, ..RunConfig::default() };
    let p = Pipeline::new(cfg.clone()).unwrap();
    let mut wrong = 0;
    let mut n = 0;
    for rec in p.simulate(1000, 8).unwrap() {
        let rec = rec.unwrap();
        let truth = rec.truth[0].detector_id;
        n += 1;
        wrong += (classify_detector(&rec.fanins[0].trace, &cfg.resonators) != Some(truth)) as usize;
    }
    assert_eq!(n, 1000);
    assert_eq!(wrong, 0);
}

#[test]
fn recovered_area_of_a_single_pulse_matches_the_anode() {
    let cfg = RunConfig::default();
    let p = Pipeline::new(cfg.clone()).unwrap();
    let bank = p.analytic_bank().unwrap();
    let rec = p.process_one(0, &[event(480.0, Species::Gamma, 205e-9)], 14, &bank).unwrap();
    let a = p.measure(&rec.anodes[0], 0).unwrap().charge_kevee;
    let r = p.measure(rec.recovered[0].as_ref().unwrap(), 0).unwrap().charge_kevee;
    assert!((r / a - 1.0).abs() < 0.015, "{r} vs {a}");
}

#[test]
fn full_gate_charge_recovers_true_energy() {
    let mut cfg = RunConfig::default();
    cfg.analysis.charge_gate_len = cfg.digitizer.record_len - cfg.digitizer.pre_trigger + cfg.analysis.charge_gate_lead;
    let q = Pipeline::new(cfg).unwrap().measure(&organic(662.0, Species::Gamma), 0).unwrap().charge_kevee;
    assert!((q / 662.0 - 1.0).abs() < 0.005, "{q}");
}

/// Recovered noise power per octave band against the prediction
/// `sigma^2 N |F|^2 / |H|^2` summed over the band's bins.
#[test]
fn recovered_noise_follows_inverse_transfer_per_octave() {
    let mut cfg = RunConfig::default();
    cfg.digitizer.ideal = true;
    let p = Pipeline::new(cfg.clone()).unwrap();
    let ch: RecoveryChannel = p.analytic_channel(0).unwrap();
    let filter = cfg.deconv.filter.unwrap();
    let d = &cfg.digitizer;
    let n = d.record_len;
    let sigma = cfg.fanin.noise_rms_v;
    let mut power = vec![0.0; n];
    let records = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..records {
        let y: Vec<f64> = gaussian_vec(n, rng.random()).iter().map(|z| sigma * z).collect();
        let x = deconvolve(&Trace::new(y, d.dt()).unwrap(), &ch.transfer, None, &cfg.deconv).unwrap();
        dft(&x).bins().iter().zip(power.iter_mut()).for_each(|(c, p)| *p += c.norm_sqr() / records as f64);
    }
    let df = ch.transfer.df();
    let mut lo = 1e6;
    while 2.0 * lo <= d.nyquist_hz() {
        let ks: Vec<usize> = (1..n / 2).filter(|&k| k as f64 * df >= lo && (k as f64 * df) < 2.0 * lo).collect();
        let measured: f64 = ks.iter().map(|&k| power[k]).sum();
        let predicted: f64 = ks
            .iter()
            .map(|&k| {
                let h: Complex64 = ch.transfer.bins()[k];
                sigma * sigma * n as f64 * filter.gain(k as f64 * df).powi(2) / h.norm_sqr()
            })
            .sum();
        assert!((measured / predicted - 1.0).abs() < 0.1, "{lo} Hz: {measured} vs {predicted}");
        lo *= 2.0;
    }
}

#[test]
fn recovery_amplifies_baseline_noise() {
    let cfg = RunConfig::default();
    let p = Pipeline::new(cfg.clone()).unwrap();
    let bank = p.analytic_bank().unwrap();
    let events = fdm_recover::detector::sample_records(&cfg.source, &cfg.digitizer, 50, 10).unwrap();
    let w = p.conventions().baseline.clone();
    let rms = |t: &Trace| mean_sd(&t.samples()[w.clone()]).1;
    for (i, ev) in events.iter().enumerate() {
        let rec = p.process_one(i as u64, ev, 10, &bank).unwrap();
        let r = rec.recovered[0].as_ref().unwrap();
        assert!(rms(r) > rms(&rec.anodes[0]));
    }
}

#[test]
fn noise_free_charge_difference_is_negligible() {
    let mut cfg = RunConfig::default();
    // Quantization is itself a noise source; the ideal converter removes it.
    cfg.fanin.noise_rms_v = 0.0;
    cfg.digitizer.ideal = true;
    let p = Pipeline::new(cfg).unwrap();
    let rows = p.run(2000, 11, &p.analytic_bank().unwrap()).unwrap();
    let s = charge_summary(&rows).unwrap();
    assert!(s.difference.sigma() < 0.1, "{:?}", s.difference);
}

#[test]
fn calibrated_transfer_recovers_charge_nearly_as_well_as_analytic() {
    let cfg = RunConfig::default();
    let p = Pipeline::new(cfg).unwrap();
    let estimated = vec![RecoveryChannel::from_estimate(0, p.calibrate(0, 10_000, 12).unwrap())];
    let analytic = vec![p.analytic_channel(0).unwrap()];
    let sd = |bank: &[RecoveryChannel]| charge_summary(&p.run(2000, 13, bank).unwrap()).unwrap().difference.sigma();
    let (se, sa) = (sd(&estimated), sd(&analytic));
    assert!(se <= 2.0 * sa, "{se} vs {sa}");
}
