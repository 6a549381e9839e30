//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Training-based criteria run on a procedural corpus at the desk config, with
//! step counts cut down so the whole suite fits a single CPU core.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use adaptts::adapters::build_placement_plan;
use adaptts::config::{Config, Mode, ModelKind, PlanVariant, RunConfig, Task};
use adaptts::dataio::wav::read_wav;
use adaptts::dataio::synth::{generate_corpus, CorpusSpec, VoiceProfile};
use adaptts::dataio::{load_manifest, Dataset, Manifest, PITCH_BINS};
use adaptts::eval::ctc::ctc_nll;
use adaptts::eval::{align, psr, validate_against_mushra, EvalUtterance, MushraPair, PhonemeRecognizer, SystemSamples};
use adaptts::losses::{
    discriminator_adversarial_loss, duration_loss, feature_matching_loss, generator_adversarial_loss, mel_loss,
    pitch_loss, StftLoss,
};
use adaptts::model::TtsModel;
use adaptts::nn::spectral::MelSpectrogram;
use adaptts::nn::{scalar, to_f64_vec, Parameterized};
use adaptts::training::{epoch_summaries, param_checksums, Checkpoint, MetricsLog, Trainer};
use candle_core::{DType, Device, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Backbone steps for the learning smoke test (2000 on an accelerator).
const BACKBONE_STEPS: u64 = 300;
/// Window averaged at the start and the end of backbone training.
const LOSS_WINDOW: usize = 50;
/// Steps compared bit for bit across two seeded runs.
const DETERMINISM_STEPS: u64 = 100;
/// Adapter fine-tune epochs (200 steps on an accelerator).
const FINETUNE_EPOCHS: u64 = 5;
const SEED: u64 = 2024;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn corpus(dir: &Path, voice: VoiceProfile, utterances: usize, seed: u64) -> Manifest {
    let cfg = Config::desk();
    let spec = CorpusSpec {
        voices: vec![voice],
        language: "en".into(),
        utterances_per_voice: utterances,
        min_phonemes: 4,
        max_phonemes: 8,
        sample_rate: cfg.audio.sample_rate,
        hop: cfg.audio.hop_length,
        seed,
    };
    let (path, _) = generate_corpus(&spec, dir).unwrap();
    load_manifest(&path, &cfg.audio).unwrap()
}

fn fixture_sentences(phonemes: &[String], n: usize) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let spoken: Vec<&String> = phonemes.iter().filter(|p| p.as_str() != "sil").collect();
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..9);
            let mut s = vec!["sil".to_string()];
            s.extend((0..len).map(|_| spoken.choose(&mut rng).unwrap().to_string()));
            s.push("sil".into());
            s
        })
        .collect()
}

fn synthesize_all(model: &TtsModel, sentences: &[Vec<String>], speaker: &str) -> Vec<Vec<f32>> {
    sentences.iter().map(|s| model.synthesize(s, speaker, "en").unwrap()).collect()
}

fn max_abs_diff(a: &[Vec<f32>], b: &[Vec<f32>]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.len() != y.len() {
                return f32::INFINITY;
            }
            x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f32::max)
        })
        .fold(0.0, f32::max)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

// ---------------------------------------------------------------- budget

fn parameter_budget() -> Outcome {
    let cfg = Config::default_file();
    let vocab = adaptts::dataio::Vocab {
        phonemes: (0..40).map(|i| format!("p{i}")).collect(),
        speakers: vec!["S1".into()],
        languages: vec!["L1".into()],
    };
    let model = TtsModel::new(&cfg, &vocab, 0).unwrap();
    let b = model.parameter_budget(ModelKind::Both, PlanVariant::PaperDefault).unwrap();
    let within = |x: usize, target: f64| (x as f64 - target).abs() <= 0.15 * target;
    let detail = format!(
        "acoustic adapters {}, vocoder adapters {}, backbone {}, adapter ratio {:.4}",
        b.acoustic_adapters, b.vocoder_adapters, b.backbone, b.adapter_ratio
    );
    check(
        within(b.acoustic_adapters, 150e3)
            && within(b.vocoder_adapters, 50e3)
            && within(b.backbone, 2e6)
            && (0.08..=0.12).contains(&b.adapter_ratio),
        detail.clone(),
        detail,
    )
}

// ---------------------------------------------------------------- losses

fn t64(v: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
}

/// Worst relative error between autograd and central differences.
fn gradient_error(x: &[f64], shape: &[usize], f: &dyn Fn(&Tensor) -> Tensor, probes: &[usize]) -> f64 {
    let var = Var::from_tensor(&t64(x.to_vec(), shape)).unwrap();
    let grads = f(var.as_tensor()).backward().unwrap();
    let g = to_f64_vec(grads.get(var.as_tensor()).unwrap()).unwrap();
    let mut worst: f64 = 0.0;
    for &i in probes {
        let eps = 1e-6 * x[i].abs().max(1e-2);
        let mut p = x.to_vec();
        p[i] += eps;
        let up = scalar(&f(&t64(p.clone(), shape))).unwrap();
        p[i] -= 2.0 * eps;
        let down = scalar(&f(&t64(p, shape))).unwrap();
        let fd = (up - down) / (2.0 * eps);
        let scale = fd.abs().max(g[i].abs()).max(1e-6);
        worst = worst.max((fd - g[i]).abs() / scale);
    }
    worst
}

fn loss_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = Config::desk();
    let stft = StftLoss::new(&cfg.losses.stft_resolutions, DType::F64).unwrap();
    let mel = MelSpectrogram::new(&cfg.audio, DType::F64, &Device::Cpu).unwrap();
    let n = stft.max_window().max(cfg.audio.win_length) * 2;

    let mut errors: BTreeMap<&str, f64> = BTreeMap::new();
    let target = t64(noise(&mut rng, 6, 1.0), &[6]);
    errors.insert(
        "duration",
        gradient_error(&noise(&mut rng, 6, 1.0), &[6], &|x| duration_loss(x, &target).unwrap(), &[0, 3, 5]),
    );
    let bins = [0u8, 17, 128, 255];
    errors.insert(
        "pitch",
        gradient_error(
            &noise(&mut rng, 4 * PITCH_BINS, 2.0),
            &[4, PITCH_BINS],
            &|x| pitch_loss(x, &bins).unwrap(),
            &[0, 273, 640, 1023],
        ),
    );
    let real = t64(noise(&mut rng, 10, 1.0), &[1, 1, 10]);
    errors.insert(
        "generator adversarial",
        gradient_error(&noise(&mut rng, 10, 1.0), &[1, 1, 10], &|x| generator_adversarial_loss(&[x]).unwrap(), &[0, 9]),
    );
    let d_fake = gradient_error(
        &noise(&mut rng, 10, 1.0),
        &[1, 1, 10],
        &|x| discriminator_adversarial_loss(&[&real], &[x]).unwrap(),
        &[2, 7],
    );
    let d_real = gradient_error(
        &noise(&mut rng, 10, 1.0),
        &[1, 1, 10],
        &|x| discriminator_adversarial_loss(&[x], &[&real]).unwrap(),
        &[1, 8],
    );
    errors.insert("discriminator adversarial", d_fake.max(d_real));
    let feats = vec![vec![real.clone()]];
    errors.insert(
        "feature matching",
        gradient_error(
            &noise(&mut rng, 10, 1.0),
            &[1, 1, 10],
            &|x| feature_matching_loss(&feats, &[vec![x.clone()]]).unwrap(),
            &[0, 4, 9],
        ),
    );
    let wave = t64(noise(&mut rng, n, 0.5), &[1, n]);
    errors.insert(
        "multi-resolution stft",
        gradient_error(&noise(&mut rng, n, 0.5), &[1, n], &|y| stft.forward(&wave, y).unwrap(), &[5, n / 2, n - 3]),
    );
    errors.insert(
        "mel",
        gradient_error(&noise(&mut rng, n, 0.5), &[1, n], &|y| mel_loss(&wave, y, &mel).unwrap(), &[11, n / 3, n - 7]),
    );

    let mut closed: BTreeMap<&str, f64> = BTreeMap::new();
    let uniform = Tensor::zeros((5, PITCH_BINS), DType::F64, &Device::Cpu).unwrap();
    closed.insert(
        "uniform pitch CE - ln 256",
        scalar(&pitch_loss(&uniform, &[0, 1, 128, 200, 255]).unwrap()).unwrap() - (PITCH_BINS as f64).ln(),
    );
    let ones = t64(vec![1.0; 10], &[1, 1, 10]);
    let zeros = t64(vec![0.0; 10], &[1, 1, 10]);
    closed.insert("generator LSGAN optimum", scalar(&generator_adversarial_loss(&[&ones]).unwrap()).unwrap());
    closed.insert(
        "discriminator LSGAN optimum",
        scalar(&discriminator_adversarial_loss(&[&ones], &[&zeros]).unwrap()).unwrap(),
    );
    closed.insert("identical stft", scalar(&stft.forward(&wave, &wave).unwrap()).unwrap());
    closed.insert("identical mel", scalar(&mel_loss(&wave, &wave, &mel).unwrap()).unwrap());
    closed.insert("identical features", scalar(&feature_matching_loss(&feats, &feats).unwrap()).unwrap());

    let worst_grad = errors.values().cloned().fold(0.0, f64::max);
    let worst_closed = closed.values().map(|v| v.abs()).fold(0.0, f64::max);
    let bad: Vec<String> = errors
        .iter()
        .filter(|(_, e)| **e > 1e-3)
        .map(|(k, e)| format!("{k} gradient rel err {e:.2e}"))
        .chain(closed.iter().filter(|(_, v)| v.abs() > 1e-9).map(|(k, v)| format!("{k} = {v:.3e}")))
        .collect();
    check(
        bad.is_empty(),
        format!(
            "{} gradients, worst rel err {worst_grad:.2e}; {} closed forms, worst {worst_closed:.1e}",
            errors.len(),
            closed.len()
        ),
        bad.join("; "),
    )
}

// ---------------------------------------------------------------- PSR

fn all_sequences(max_len: usize, symbols: u8) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..symbols {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Plain Levenshtein distance, one row at a time.
fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut row = vec![i + 1];
        for (j, y) in b.iter().enumerate() {
            row.push((prev[j] + (x != y) as usize).min(prev[j + 1] + 1).min(row[j] + 1));
        }
        prev = row;
    }
    prev[b.len()]
}

/// Sum over all CTC paths, blank last, by brute force.
fn enumerate_ctc(log_probs: &[f64], frames: usize, classes: usize, labels: &[u32]) -> f64 {
    let blank = (classes - 1) as u32;
    let mut total = 0.0;
    for code in 0..classes.pow(frames as u32) {
        let mut c = code;
        let path: Vec<u32> = (0..frames)
            .map(|_| {
                let k = c % classes;
                c /= classes;
                k as u32
            })
            .collect();
        let mut collapsed: Vec<u32> = Vec::new();
        let mut last = None;
        for &k in &path {
            if Some(k) != last && k != blank {
                collapsed.push(k);
            }
            last = Some(k);
        }
        if collapsed == labels {
            total += path.iter().enumerate().map(|(t, &k)| log_probs[t * classes + k as usize]).sum::<f64>().exp();
        }
    }
    total
}

fn psr_oracles() -> Outcome {
    let seqs = all_sequences(6, 3);
    let mut pairs = 0usize;
    let mut failures = Vec::new();
    for r in &seqs {
        for h in &seqs {
            let a = align(r, h);
            let ok = a.edit_distance() == levenshtein(r, h)
                && a.matches + a.substitutions + a.deletions == r.len()
                && a.matches + a.substitutions + a.insertions == h.len();
            if !ok && failures.len() < 3 {
                failures.push(format!("align {r:?} vs {h:?}"));
            }
            pairs += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let classes = 3;
    let mut ctc_cases = 0;
    let mut worst: f64 = 0.0;
    for frames in 1..=4usize {
        for labels in all_sequences(2, 2) {
            let logits: Vec<f64> = (0..frames * classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let log_probs: Vec<f64> = logits
                .chunks(classes)
                .flat_map(|row| {
                    let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
                    row.iter().map(move |v| v - lse).collect::<Vec<_>>()
                })
                .collect();
            let labels: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
            let brute = enumerate_ctc(&log_probs, frames, classes, &labels);
            match ctc_nll(&log_probs, classes, &labels) {
                Ok((nll, _)) => {
                    let rel = ((-nll).exp() - brute).abs() / brute;
                    worst = worst.max(rel);
                    if rel > 1e-9 {
                        failures.push(format!("ctc {frames} frames {labels:?}: rel err {rel:.2e}"));
                    }
                }
                Err(_) if brute == 0.0 => {}
                Err(e) => failures.push(format!("ctc {frames} frames {labels:?}: {e}")),
            }
            ctc_cases += 1;
        }
    }

    for _ in 0..1000 {
        let x: Vec<u8> = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(0..5)).collect();
        let y: Vec<u8> = (0..rng.gen_range(0..20)).map(|_| rng.gen_range(0..5)).collect();
        let p = psr(&x, &y).unwrap();
        if psr(&x, &x).unwrap() != 0.0 || !(0.0..=100.0).contains(&p) {
            failures.push(format!("psr bounds on {x:?} vs {y:?}"));
        }
    }
    check(
        failures.is_empty(),
        format!("{pairs} alignment pairs, {ctc_cases} CTC cases (worst rel err {worst:.1e}), 1000 random PSR pairs"),
        failures.join("; "),
    )
}

/// Reads phonemes off a waveform: each block of `BLOCK` samples holds one
/// phoneme as a constant level, with silence between phonemes.
struct LevelRecognizer {
    phonemes: Vec<String>,
}

const BLOCK: usize = 8;

impl LevelRecognizer {
    fn encode(&self, ids: &[u32]) -> Vec<f32> {
        let levels = self.phonemes.len() as f32;
        ids.iter()
            .flat_map(|&k| {
                let mut b = vec![(k as f32 + 1.0) / levels; BLOCK];
                b.extend([0.0; BLOCK]);
                b
            })
            .collect()
    }
}

impl PhonemeRecognizer for LevelRecognizer {
    fn phonemes(&self) -> &[String] {
        &self.phonemes
    }

    fn posteriors(&self, waveform: &[f32]) -> adaptts::Result<Tensor> {
        let p = self.phonemes.len();
        let levels = p as f32;
        let path: Vec<u32> = waveform
            .chunks(BLOCK)
            .map(|b| {
                let level = b.iter().sum::<f32>() / b.len() as f32;
                let k = (level * levels).round() as i64 - 1;
                if (0..p as i64).contains(&k) {
                    k as u32
                } else {
                    p as u32
                }
            })
            .collect();
        adaptts::eval::peaked_posteriors(&path, p + 1)
    }
}

/// Copies `reference` with exactly `count` phonemes replaced by others.
fn substitute(reference: &[u32], count: usize, symbols: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut out = reference.to_vec();
    let mut positions: Vec<usize> = (0..reference.len()).collect();
    positions.shuffle(rng);
    for &i in &positions[..count] {
        out[i] = (out[i] + rng.gen_range(1..symbols)) % symbols;
    }
    out
}

fn psr_ranking() -> Outcome {
    let rec = LevelRecognizer {
        phonemes: (0..12).map(|i| format!("p{i}")).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let references: Vec<Vec<u32>> = (0..10).map(|_| (0..10).map(|_| rng.gen_range(0..12)).collect()).collect();
    // Substituted phonemes per 10-phoneme utterance, and the listening score
    // such a system would get.
    let systems: Vec<SystemSamples> = [0usize, 1, 2, 3, 5, 7]
        .iter()
        .map(|&subs| SystemSamples {
            id: format!("subs{subs}"),
            mushra: 90.0 - 10.0 * subs as f64,
            utterances: references
                .iter()
                .enumerate()
                .map(|(i, r)| EvalUtterance {
                    id: format!("u{i}"),
                    waveform: rec.encode(&substitute(r, subs, 12, &mut rng)),
                    reference: r.clone(),
                })
                .collect(),
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..systems.len() {
        for j in i + 1..systems.len() {
            // Alternate order so both branches of the comparison are used.
            let (a, b) = if (i + j) % 2 == 0 { (i, j) } else { (j, i) };
            pairs.push(MushraPair {
                a: systems[a].clone(),
                b: systems[b].clone(),
            });
        }
    }
    let v = validate_against_mushra(&pairs, &rec).map_err(|e| e.to_string())?;
    let psrs: Vec<String> = systems
        .iter()
        .map(|s| format!("{:.0}", adaptts::eval::psr_corpus(&s.utterances, &rec).unwrap().mean))
        .collect();
    let detail = format!("accuracy {} over {} pairs (system PSRs {})", v.accuracy, v.outcomes.len(), psrs.join(", "));
    check(v.accuracy == 1.0, detail.clone(), detail)
}

// ---------------------------------------------------------------- training

struct TrainingResults {
    identity: Outcome,
    freeze: Outcome,
    learning: Outcome,
    determinism: Outcome,
}

fn training_criteria() -> TrainingResults {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::desk();
    cfg.seed = SEED;
    let backbone_manifest = corpus(&dir.path().join("solo"), VoiceProfile::new("solo", 140.0, 1.0), 24, 3);
    let vocab = backbone_manifest.vocab();
    let data = Dataset::from_manifest(&backbone_manifest, &vocab, &cfg.audio, None).unwrap();
    let seconds: f64 = backbone_manifest
        .entries
        .iter()
        .map(|e| {
            let (w, sr) = read_wav(&e.audio_path).unwrap();
            w.len() as f64 / sr as f64
        })
        .sum();
    assert!(seconds <= 30.0 * 60.0, "corpus is {seconds} s");

    // Determinism: two independent runs of the first steps.
    let mut first = Trainer::backbone(&cfg, &vocab, RunConfig::backbone(&cfg)).unwrap();
    let mut history = first.run_until(&data, DETERMINISM_STEPS, &mut MetricsLog::discard(), None).unwrap();
    let bytes_a = first.checkpoint(&data).unwrap().to_bytes().unwrap();
    let mut second = Trainer::backbone(&cfg, &vocab, RunConfig::backbone(&cfg)).unwrap();
    second.run_until(&data, DETERMINISM_STEPS, &mut MetricsLog::discard(), None).unwrap();
    let bytes_b = second.checkpoint(&data).unwrap().to_bytes().unwrap();
    drop(second);
    let determinism = check(
        bytes_a == bytes_b,
        format!("{DETERMINISM_STEPS}-step checkpoints identical ({} bytes)", bytes_a.len()),
        format!("{DETERMINISM_STEPS}-step checkpoints differ"),
    );

    history.extend(first.run_until(&data, BACKBONE_STEPS, &mut MetricsLog::discard(), None).unwrap());
    let totals: Vec<f64> = history.iter().map(|r| r.total).collect();
    let start = mean(totals[..LOSS_WINDOW].iter().cloned());
    let end = mean(totals[totals.len() - LOSS_WINDOW..].iter().cloned());
    let reduction = 1.0 - end / start;
    let backbone = first.checkpoint(&data).unwrap();
    drop(first);

    // Identity at init on a trained backbone.
    let sentences = fixture_sentences(&vocab.phonemes, 20);
    let trained = backbone.model().unwrap();
    let before = synthesize_all(&trained, &sentences, "solo");
    let mut injected = backbone.model().unwrap();
    let plan = build_placement_plan(
        ModelKind::Both,
        PlanVariant::PaperDefault,
        &injected.attachment_points(),
        &injected.cfg.adapters,
    )
    .unwrap();
    injected.inject(&plan, SEED).unwrap();
    let d = max_abs_diff(&before, &synthesize_all(&injected, &sentences, "solo"));
    let identity = check(
        d < 1e-5,
        format!("max |diff| {d:.2e} over {} sentences", sentences.len()),
        format!("max |diff| {d:.2e}"),
    );

    // Adapter fine-tune on a second voice.
    let voice_manifest = corpus(&dir.path().join("duo"), VoiceProfile::new("duo", 210.0, 1.12), 16, 4);
    let run = RunConfig::finetune(&cfg, Task::FinetuneSpeaker, Mode::Adapters, PlanVariant::PaperDefault);
    let mut tuner = Trainer::finetune(&backbone, &voice_manifest.vocab(), run).unwrap();
    let voice_data = Dataset::from_manifest(&voice_manifest, &tuner.model.vocab, &cfg.audio, None).unwrap();
    let theta = |t: &Trainer| {
        let (_, frozen) = t.freeze.partition(&t.model.named_params("")).unwrap();
        param_checksums(&frozen).unwrap()
    };
    let theta_before = theta(&tuner);
    let one_epoch = tuner.steps_for_epochs(1, &voice_data);
    let mut ft_history = tuner.run_until(&voice_data, one_epoch, &mut MetricsLog::discard(), None).unwrap();
    let theta_same = theta(&tuner) == theta_before;
    let mut stripped = Checkpoint::from_bytes(&tuner.checkpoint(&voice_data).unwrap().to_bytes().unwrap())
        .unwrap()
        .model()
        .unwrap();
    stripped.strip_adapters().unwrap();
    let restored = synthesize_all(&stripped, &sentences, "solo") == before;
    let frozen_count = theta_before.len();
    let freeze = check(
        theta_same && restored,
        format!("{frozen_count} frozen tensors unchanged after {one_epoch} steps; stripped synthesis bit-identical"),
        format!("frozen tensors unchanged: {theta_same}; stripped synthesis bit-identical: {restored}"),
    );

    let total_steps = tuner.steps_for_epochs(FINETUNE_EPOCHS, &voice_data);
    ft_history.extend(tuner.run_until(&voice_data, total_steps, &mut MetricsLog::discard(), None).unwrap());
    let epochs = epoch_summaries(&ft_history, 0, |s| tuner.epoch_of(s, &voice_data));
    let means: Vec<f64> = epochs.iter().map(|e| e.mean_total).collect();
    let monotone = means.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.3}")).collect();
    let detail = format!(
        "backbone {BACKBONE_STEPS} steps: loss {start:.3} -> {end:.3} ({:.1}% lower); fine-tune {total_steps} steps, epoch means [{}]",
        100.0 * reduction,
        shown.join(", ")
    );
    let learning = check(reduction >= 0.30 && monotone, detail.clone(), detail);

    TrainingResults {
        identity,
        freeze,
        learning,
        determinism,
    }
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())
    })
}

fn main() {
    let training = guarded(training_criteria);
    let from_training = |f: fn(&TrainingResults) -> &Outcome| match &training {
        Ok(t) => f(t).clone(),
        Err(e) => Err(format!("training fixture failed: {e}")),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("parameter budget", guarded(parameter_budget).and_then(|r| r)),
        ("identity at injection", from_training(|t| &t.identity)),
        ("freeze integrity", from_training(|t| &t.freeze)),
        ("loss correctness", guarded(loss_correctness).and_then(|r| r)),
        ("PSR oracle equivalence", guarded(psr_oracles).and_then(|r| r)),
        ("PSR ranking validation", guarded(psr_ranking).and_then(|r| r)),
        ("desk-scale learning", from_training(|t| &t.learning)),
        ("determinism", from_training(|t| &t.determinism)),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("PASS criterion {} ({name}): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {d}", i + 1)
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
