use std::f64::consts::PI;

use dasc_core::cqt::{CqtBackend, CqtConfig, CqtExtractor, LOG_FLOOR};
use dasc_core::exec;
use dasc_core::fixture::{synth_clip, unseen_channel, FixtureConfig};
use dasc_core::AudioClip;

const SR: f64 = 16000.0;

fn tone(freq: f64, amp: f64, len: usize) -> AudioClip {
    let s = (0..len).map(|i| amp * (2.0 * PI * freq * i as f64 / SR).sin()).collect();
    AudioClip::new(s, 16000).unwrap()
}

fn argmax(col: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in col.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Frames whose every analysis window lies inside a clip of `len` samples.
fn interior_frames(cfg: &CqtConfig, len: usize) -> std::ops::Range<usize> {
    let half = cfg.window_length(0) / 2 + 1;
    let first = half.div_ceil(cfg.hop);
    let last = (len - half) / cfg.hop;
    first..last + 1
}

#[test]
fn pure_tone_peaks_at_its_bin_for_every_bin() {
    let cfg = CqtConfig::default();
    let ex = CqtExtractor::new(cfg.clone()).unwrap();
    let len = 12000;
    for k in 0..cfg.n_bins() {
        let lps = ex.lps(&tone(cfg.center_frequency(k), 0.5, len)).unwrap();
        for m in interior_frames(&cfg, len) {
            assert_eq!(argmax(lps.column(m).iter().copied()), k, "bin {k}, frame {m}");
        }
    }
}

#[test]
fn upward_sweep_tracks_monotonically() {
    let cfg = CqtConfig::default();
    let ex = CqtExtractor::new(cfg.clone()).unwrap();
    let len = 32000;
    let (f0, f1) = (100.0, 6000.0);
    let dur = len as f64 / SR;
    let rate = (f1 / f0 as f64).ln() / dur;
    let s = (0..len)
        .map(|i| {
            let t = i as f64 / SR;
            0.5 * (2.0 * PI * f0 * ((rate * t).exp() - 1.0) / rate).sin()
        })
        .collect();
    let lps = ex.lps(&AudioClip::new(s, 16000).unwrap()).unwrap();
    let path: Vec<usize> = interior_frames(&cfg, len)
        .map(|m| argmax(lps.column(m).iter().copied()))
        .collect();
    assert!(path.windows(2).all(|w| w[1] >= w[0]), "{path:?}");
    assert!(path.last().unwrap() - path[0] > 40);
}

#[test]
fn gain_shifts_log_power_by_twice_log_gain() {
    let cfg = CqtConfig::default();
    let ex = CqtExtractor::new(cfg.clone()).unwrap();
    let len = 16000;
    let mut base = vec![0.0; len];
    for k in (3..cfg.n_bins()).step_by(7) {
        for (i, v) in tone(cfg.center_frequency(k), 0.06, len).samples().iter().enumerate() {
            base[i] += v;
        }
    }
    let g = 1.3;
    let loud: Vec<f64> = base.iter().map(|v| v * g).collect();
    let a = ex.lps(&AudioClip::new(base, 16000).unwrap()).unwrap();
    let b = ex.lps(&AudioClip::new(loud, 16000).unwrap()).unwrap();
    let shift = 2.0 * g.log10();
    let mut strict = 0;
    for (x, y) in a.iter().zip(b.iter()) {
        // six decades above the floor its contribution is below 1e-6
        if *x > LOG_FLOOR.log10() + 6.0 {
            assert!((y - x - shift).abs() < 1e-6, "{x} -> {y}");
            strict += 1;
        }
        // closer to the floor, remove it explicitly
        if *x > LOG_FLOOR.log10() + 2.0 {
            let px = 10f64.powf(*x) - LOG_FLOOR;
            let py = 10f64.powf(*y) - LOG_FLOOR;
            assert!(((py / px).log10() - shift).abs() < 1e-6, "{x} -> {y}");
        }
    }
    assert!(strict > a.len() / 20, "only {strict} entries checked");
}

#[test]
fn fft_path_matches_direct_path() {
    let fft = CqtExtractor::new(CqtConfig { backend: CqtBackend::Fft, ..Default::default() }).unwrap();
    let cfg = FixtureConfig::default();
    for (seed, len) in [(1, 8000), (2, 4000), (3, 24000)] {
        let mut clip = synth_clip(Some(seed as usize % 2), seed, &FixtureConfig { clip_secs: len as f64 / SR, ..cfg.clone() });
        if seed == 2 {
            clip = unseen_channel(&clip);
        }
        let a = fft.lps(&clip).unwrap();
        let b = fft.lps_direct(&clip).unwrap();
        let max = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(max <= 1e-6, "len {len}: max difference {max}");
    }
}

#[test]
fn features_are_fixed_size_finite_and_deterministic() {
    let ex = CqtExtractor::new(CqtConfig::default()).unwrap();
    let clips: Vec<(String, AudioClip)> = [300usize, 8000, 70400, 90000]
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            let cfg = FixtureConfig { clip_secs: len as f64 / SR, ..Default::default() };
            (format!("u{i}"), synth_clip(None, i as u64, &cfg))
        })
        .collect();
    let par = ex.features_batch(&clips);
    let seq = exec::sequential(|| ex.features_batch(&clips));
    for (p, s) in par.iter().zip(&seq) {
        let (p, s) = (p.as_ref().unwrap(), s.as_ref().unwrap());
        assert_eq!(p.shape(), (84, 550));
        assert!(p.values.iter().all(|v| v.is_finite()));
        assert_eq!(p, s);
    }
}
