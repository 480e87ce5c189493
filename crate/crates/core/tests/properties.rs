use proptest::prelude::*;

use tempokit::eval::{acc1, acc2, read_annotation, segment_bounds, segment_clips, split_ids, write_annotation, ClipAnnotation};
use tempokit::postproc::{
    acf_scores, acf_tempo, comb_beats, crf_beats, dbn_beats, detect_tempo, BeatActivation, BeatSequence, DecoderConfig,
    TempoActivation,
};
use tempokit::synth::{brute_force_tempo, gen_activation, gen_click_track, ClickTrackSpec, SyntheticActivationSpec};

fn no_smoothing() -> DecoderConfig {
    DecoderConfig { activation_smoothing: 0.0, ..Default::default() }
}

fn activation_spec() -> impl Strategy<Value = SyntheticActivationSpec> {
    (40.0f64..220.0, 0.0f64..0.5, 0.0f64..0.08, 0.0f64..0.01, 8.0f64..20.0, any::<u64>()).prop_map(
        |(bpm, phase, noise_std, jitter, duration, seed)| SyntheticActivationSpec {
            bpm,
            duration,
            phase,
            noise_std,
            timing_jitter_std: jitter,
            seed,
            ..Default::default()
        },
    )
}

fn beat_grid(bpm: f64, duration: f64) -> Vec<f64> {
    (0..).map(|k| k as f64 * 60.0 / bpm).take_while(|&t| t < duration).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn acc1_implies_acc2(est in 1.0f64..500.0, reference in 1.0f64..500.0) {
        if acc1(est, reference).unwrap() {
            prop_assert!(acc2(est, reference).unwrap());
        }
    }

    #[test]
    fn accuracy_is_scale_invariant(est in 1.0f64..500.0, reference in 1.0f64..500.0, k in -3i32..=3) {
        // Powers of two scale exactly, so boundary cases cannot flip.
        let s = 2f64.powi(k);
        prop_assert_eq!(acc1(est * s, reference * s).unwrap(), acc1(est, reference).unwrap());
        prop_assert_eq!(acc2(est * s, reference * s).unwrap(), acc2(est, reference).unwrap());
    }

    #[test]
    fn octave_multiples_hit_acc2(reference in 20.0f64..300.0, fi in 0usize..5) {
        let f = [1.0 / 3.0, 0.5, 1.0, 2.0, 3.0][fi];
        prop_assert!(acc2(reference * f, reference).unwrap());
    }

    #[test]
    fn segmentation_conserves_duration(duration in 1.0f64..200.0, bpm in 40.0f64..220.0) {
        let ann = ClipAnnotation::new("c", beat_grid(bpm, duration), Some(bpm)).unwrap();
        let bounds = segment_bounds(duration, &ann, 30.0);
        prop_assert_eq!(bounds.first().unwrap().0, 0.0);
        prop_assert_eq!(bounds.last().unwrap().1, duration);
        for w in bounds.windows(2) {
            prop_assert_eq!(w[0].1, w[1].0);
        }
        let total: f64 = bounds.iter().map(|(s, e)| e - s).sum();
        prop_assert!((total - duration).abs() < 1e-9);

        let kept = segment_clips(duration, &ann, 30.0, 5.0);
        let dropped: f64 = bounds.iter().map(|(s, e)| e - s).filter(|d| *d < 5.0).sum();
        let kept_total: f64 = kept.iter().map(|s| s.duration()).sum();
        prop_assert!((kept_total + dropped - duration).abs() < 1e-9);
        for seg in &kept {
            prop_assert!(seg.duration() >= 5.0);
            prop_assert!(seg.annotation.beat_times.iter().all(|&t| t >= 0.0 && t < seg.duration()));
        }
    }

    #[test]
    fn split_partitions(n in 2usize..400, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("id{i:04}")).collect();
        let split = split_ids(&ids, ratio, seed).unwrap();
        prop_assert!(!split.train_ids.is_empty() && !split.test_ids.is_empty());
        prop_assert_eq!(split.train_ids.len() + split.test_ids.len(), n);
        let mut all: Vec<String> = split.train_ids.iter().chain(&split.test_ids).cloned().collect();
        all.sort();
        prop_assert_eq!(all, ids.clone());
        prop_assert_eq!(split_ids(&ids, ratio, seed).unwrap(), split);
    }

    #[test]
    fn detect_tempo_finds_symmetric_peaks(center in 60usize..230, width in 0.5f64..6.0) {
        let weights: Vec<f64> = (0..300)
            .map(|b| {
                let d = b as f64 - center as f64;
                (-0.5 * d * d / (width * width)).exp()
            })
            .collect();
        let act = TempoActivation::from_weights(weights).unwrap();
        let est = detect_tempo(&act, &DecoderConfig::default()).unwrap();
        prop_assert!((est.bpm - center as f64).abs() < 1e-6, "{} vs {}", est.bpm, center);
    }

    #[test]
    fn seeded_generators_are_deterministic(spec in activation_spec()) {
        prop_assert_eq!(gen_activation(&spec).unwrap(), gen_activation(&spec).unwrap());
        let click = ClickTrackSpec { bpm: spec.bpm, duration: 3.0, timing_jitter_std: 0.003, seed: spec.seed, ..Default::default() };
        let (a, ann_a) = gen_click_track(&click).unwrap();
        let (b, ann_b) = gen_click_track(&click).unwrap();
        prop_assert_eq!(a.samples(), b.samples());
        prop_assert_eq!(ann_a, ann_b);
    }

    #[test]
    fn click_track_annotation_round_trip(bpm in 30.0f64..300.0, duration in 2.0f64..20.0) {
        let (clip, ann) = gen_click_track(&ClickTrackSpec { bpm, duration, ..Default::default() }).unwrap();
        prop_assert_eq!(clip.len(), (duration * 44_100.0).round() as usize);
        for (k, t) in ann.beat_times.iter().enumerate() {
            prop_assert!((t - k as f64 * 60.0 / bpm).abs() < 1e-9);
        }
        let ibis: Vec<f64> = ann.beat_times.windows(2).map(|w| w[1] - w[0]).collect();
        prop_assert!(ibis.iter().all(|ibi| (60.0 / ibi - bpm).abs() < 1e-6));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.beats");
        write_annotation(&path, &ann).unwrap();
        let back = read_annotation(&path, &ann.clip_id, ann.reference_bpm).unwrap();
        prop_assert_eq!(back.beat_times.len(), ann.beat_times.len());
        for (x, y) in back.beat_times.iter().zip(&ann.beat_times) {
            prop_assert_eq!(x, y);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn acf_ignores_power_of_two_gain(spec in activation_spec(), k in 1i32..4) {
        let (act, _) = gen_activation(&spec).unwrap();
        let cfg = DecoderConfig::default();
        let scaled = act.scaled(0.5f64.powi(k));
        prop_assert_eq!(acf_tempo(&act, &cfg).unwrap().bpm, acf_tempo(&scaled, &cfg).unwrap().bpm);
    }

    #[test]
    fn acf_ignores_leading_silence(spec in activation_spec(), shift in 0usize..300) {
        // Raw ACF only: smoothing truncates pulses at the left edge, which
        // leading silence avoids. Scores agree up to summation order.
        let (act, _) = gen_activation(&spec).unwrap();
        let cfg = no_smoothing();
        let (_, a) = acf_scores(&act, &cfg).unwrap();
        let (_, b) = acf_scores(&act.delayed(shift), &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{} vs {}", x, y);
        }
    }

    #[test]
    fn decoded_beats_ascend_within_the_clip(spec in activation_spec()) {
        let (act, _) = gen_activation(&spec).unwrap();
        let cfg = DecoderConfig::default();
        let duration = act.len() as f64 / act.fps();
        let decoders: [fn(&BeatActivation, &DecoderConfig) -> Result<BeatSequence, _>; 3] = [crf_beats, dbn_beats, comb_beats];
        for decode in decoders {
            let beats = decode(&act, &cfg).unwrap();
            prop_assert!(beats.times().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(beats.times().iter().all(|&t| t >= 0.0 && t < duration));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn acf_matches_brute_force_oracle(spec in activation_spec()) {
        let (act, _) = gen_activation(&spec).unwrap();
        let cfg = no_smoothing();
        let fast = acf_tempo(&act, &cfg).unwrap().bpm;
        let slow = brute_force_tempo(&act, cfg.bpm_min, cfg.bpm_max).unwrap();
        prop_assert_eq!(fast, slow);
    }
}
