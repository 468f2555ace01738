use dasc_core::audio::read_wav;
use dasc_core::augment::{
    augment_manifest, dasc_augment, measured_snr_db, write_failure_report, AugmentationPlan, NoiseSource,
};
use dasc_core::companding::{companding_perturb, CompandingLaw, CompandingMode};
use dasc_core::exec;
use dasc_core::fixture::{write_fixture, FixtureLayout, SubsetSize};
use dasc_core::DatasetManifest;

fn small_corpus(dir: &std::path::Path) -> DatasetManifest {
    let size = SubsetSize { bonafide: 3, spoof: 4 };
    let layout = FixtureLayout { train: size, dev: size, eval: size, eval_channel: false, ..Default::default() };
    write_fixture(dir, &layout).unwrap().train
}

#[test]
fn companding_expansion_triples_and_keeps_labels() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"));
    let plan = AugmentationPlan::dasc(dir.path().join("aug"), 3, CompandingMode::Quantized8);
    let out = dasc_augment(&manifest, &plan).unwrap();
    assert!(out.failures.is_empty());
    assert_eq!(out.manifest.len(), 3 * manifest.len());
    let (b, s) = manifest.counts();
    assert_eq!(out.manifest.counts(), (3 * b, 3 * s));

    for rec in &manifest.records {
        let original = read_wav(manifest.audio_path(rec)).unwrap();
        let copy = out.manifest.find(&rec.utt_id).expect("identity copy");
        assert_eq!(read_wav(out.manifest.audio_path(copy)).unwrap(), original);
        for law in [CompandingLaw::a_law(), CompandingLaw::mu_law()] {
            let id = format!("{}{}", rec.utt_id, law.kind.suffix());
            let derived = out.manifest.find(&id).expect("companded copy");
            assert_eq!(
                (&derived.speaker_id, &derived.env, &derived.attack_id, derived.key),
                (&rec.speaker_id, &rec.env, &rec.attack_id, rec.key)
            );
            let audio = read_wav(out.manifest.audio_path(derived)).unwrap();
            assert_eq!(audio, companding_perturb(&original, &law).unwrap());
        }
    }
}

#[test]
fn missing_audio_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"));
    let victim = manifest.records[2].clone();
    std::fs::remove_file(manifest.audio_path(&victim)).unwrap();
    let plan = AugmentationPlan::dasc(dir.path().join("aug"), 3, CompandingMode::Quantized8);
    let out = dasc_augment(&manifest, &plan).unwrap();
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].utt_id, victim.utt_id);
    assert_eq!(out.manifest.len(), 3 * (manifest.len() - 1));

    let report = dir.path().join("failures.tsv");
    write_failure_report(&out.failures, &report).unwrap();
    let text = std::fs::read_to_string(report).unwrap();
    assert!(text.starts_with(&format!("{}\t", victim.utt_id)));
}

#[test]
fn white_noise_lands_on_target_snr() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"));
    let plan = AugmentationPlan::noise(dir.path().join("aug"), 5, NoiseSource::White, 20.0);
    let out = augment_manifest(&manifest, &plan).unwrap();
    assert_eq!(out.manifest.len(), 2 * manifest.len());
    assert_eq!(out.snr_log.len(), manifest.len());
    for (utt, snr) in &out.snr_log {
        assert!((snr - 20.0).abs() <= 0.1, "{utt}: {snr} dB");
        // still on target after 16-bit storage
        let base = utt.trim_end_matches("_white20");
        let clean = read_wav(manifest.audio_path(manifest.find(base).unwrap())).unwrap();
        let stored = read_wav(out.manifest.audio_path(out.manifest.find(utt).unwrap())).unwrap();
        assert!((measured_snr_db(&clean, &stored) - 20.0).abs() <= 0.1);
    }
}

#[test]
fn augmentation_is_deterministic_and_schedule_independent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"));
    let run = |name: &str, seq: bool| {
        let plan = AugmentationPlan::noise(dir.path().join(name), 9, NoiseSource::White, 10.0);
        let out = if seq {
            exec::sequential(|| augment_manifest(&manifest, &plan)).unwrap()
        } else {
            augment_manifest(&manifest, &plan).unwrap()
        };
        out.manifest
            .records
            .iter()
            .map(|r| std::fs::read(out.manifest.audio_path(r)).unwrap())
            .collect::<Vec<_>>()
    };
    let a = run("a", false);
    assert_eq!(a, run("b", false));
    assert_eq!(a, run("c", true));
}
