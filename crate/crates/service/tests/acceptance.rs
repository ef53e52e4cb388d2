//! Acceptance suite: one line per criterion, then a single verdict.
//!
//! Run with `cargo test -p patchline-service --test acceptance -- --nocapture`
//! to see the report.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use patchline_core::augment::{expand_corpus, snr_db, AugmentPlan, Transform, Waveform};
use patchline_core::classify::{
    train_classifier, CnnConfig, CnnParams, LabelSet, LabeledCorpus, TextCnn, Vocabulary, DEFAULT_LEARNING_RATE,
};
use patchline_core::ctc::{ctc_grad, ctc_loss, ctc_loss_flat, enumerate_oracle, min_frames, Alphabet, FrameProbs, LabelSeq};
use patchline_core::decode::{beam_decode, train_lm, DecodeConfig, NgramLm};
use patchline_core::lookup::{match_ocr_text, DinRegistry};
use patchline_core::nlu::{extract_fields, Lexicons, PatchForm};
use patchline_core::nn::{finite_diff_grad, relative_error, TrainConfig};
use patchline_core::orders::{example_dispatch, recommend, reference_time, FixedClock};
use patchline_core::reminders::{AdministrationEvent, ReminderStatus, RuleTable, Schedule};
use patchline_core::report::{aggregate_accuracy, load_gold, normalize_value, score_extraction, workflow_totals, WorkflowProfile};
use patchline_service::{ClockMode, Command, Pipeline, Store};

const GOLD: &str = include_str!("../../../fixtures/table3_gold.json");
const CORPUS: &str = include_str!("../../../fixtures/classifier_corpus.ndjson");

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget: Duration) -> Result<(), String> {
    ensure(elapsed < budget, || format!("took {elapsed:?}, budget {budget:?}"))
}

fn field_extraction() -> Verdict {
    let start = Instant::now();
    let gold = load_gold(GOLD).map_err(|e| e.to_string())?;
    let lex = Lexicons::bundled();
    let mut scores = Vec::new();
    for (row, entry) in gold.iter().enumerate() {
        let got = extract_fields(&entry.transcript, &lex);
        for (field, want) in entry.fields.iter() {
            let value = got.get(field).unwrap_or("<missing>");
            ensure(normalize_value(value) == normalize_value(want), || {
                format!("row {}: {field} = {value:?}, expected {want:?}", row + 1)
            })?;
        }
        scores.push(score_extraction(&got, &entry.fields));
    }
    let accuracy = aggregate_accuracy(&scores).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(1))?;
    ensure(accuracy >= 93.3, || format!("aggregate {accuracy}%"))?;
    let correct: usize = scores.iter().map(|s| s.correct).sum();
    let total: usize = scores.iter().map(|s| s.total).sum();
    Ok(format!("{correct}/{total} fields, aggregate {accuracy}%"))
}

fn workflow_totals_match() -> Verdict {
    let mut out = Vec::new();
    for (name, text, want) in [
        ("existing", include_str!("../../../fixtures/table2_existing.json"), 38.75),
        ("proposed", include_str!("../../../fixtures/table2_proposed.json"), 50.75),
        ("ideal", include_str!("../../../fixtures/table2_ideal.json"), 16.75),
    ] {
        let profile = WorkflowProfile::from_json(text).map_err(|e| e.to_string())?;
        let total = workflow_totals(&profile).map_err(|e| e.to_string())?;
        ensure(total == want, || format!("{name}: {total}, expected {want}"))?;
        out.push(format!("{name} {total}"));
    }
    Ok(out.join(", "))
}

fn ocr_keywords() -> Verdict {
    let m = match_ocr_text(&DinRegistry::bundled(), include_str!("../../../fixtures/fig5_ocr_raw.txt"));
    ensure(m.raw.found_count() == 5 && m.raw.total() == 6 && m.raw.percent == 83.33, || format!("raw {:?}", m.raw))?;
    ensure(m.rescored.found_count() == 6 && m.rescored.percent == 100.0, || format!("rescored {:?}", m.rescored))?;
    let recovered: Vec<&String> = m.rescored.found.iter().filter(|k| !m.raw.found.contains(k)).collect();
    ensure(recovered == ["Bicarbonate"], || format!("recovered {recovered:?}"))?;
    Ok(format!("raw 5/6 = {:.2}%, rescored 6/6 = {:.2}%, recovered Bicarbonate", m.raw.percent, m.rescored.percent))
}

fn standing_order() -> Verdict {
    let pipeline = Pipeline::bundled();
    let rec = recommend(&pipeline.orders, &example_dispatch(), &FixedClock(reference_time())).map_err(|e| e.to_string())?;
    let sum: f64 = rec.confidence_levels.iter().map(|c| c.confidence).sum();
    ensure((sum - 1.0).abs() <= 1e-9, || format!("confidences sum to {sum}"))?;
    ensure(rec.confidence_levels.windows(2).all(|w| w[0].confidence <= w[1].confidence), || "not ascending".into())?;
    ensure(rec.timestamp == "20190101T010101-000000", || format!("timestamp {}", rec.timestamp))?;
    let wire = rec.to_wire();
    let shown: Vec<String> = wire.confidence_levels.iter().map(|c| format!("{} {}", c.order, c.confidence)).collect();
    Ok(format!("{} at {}", shown.join(", "), rec.timestamp))
}

fn random_frames(rng: &mut ChaCha8Rng, alphabet: &Alphabet, max_frames: usize) -> FrameProbs {
    let frames = rng.random_range(1..=max_frames);
    let rows = (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..alphabet.num_classes()).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        })
        .collect();
    FrameProbs::new(alphabet.clone(), rows).expect("normalized rows")
}

fn targets_up_to(symbols: usize, max_len: usize) -> Vec<LabelSeq> {
    let mut out = vec![LabelSeq::default()];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_len {
        let next: Vec<Vec<usize>> =
            frontier.iter().flat_map(|p| (0..symbols).map(move |s| [p.as_slice(), &[s]].concat())).collect();
        out.extend(next.iter().cloned().map(LabelSeq));
        frontier = next;
    }
    out
}

fn ctc_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let (mut checked, mut worst_loss, mut worst_grad) = (0usize, 0.0f64, 0.0f64);
    for instance in 0..200 {
        let symbols: Vec<char> = if rng.random_bool(0.5) { vec!['a'] } else { vec!['a', 'b'] };
        let alphabet = Alphabet::new(symbols.clone(), '-').unwrap();
        let probs = random_frames(&mut rng, &alphabet, 6);
        let t = probs.num_frames();
        let classes = alphabet.num_classes();
        let blank = alphabet.blank_index();
        for target in targets_up_to(symbols.len(), 3).into_iter().filter(|y| min_frames(y.as_slice()) <= t) {
            let loss = ctc_loss(&probs, &target).map_err(|e| e.to_string())?;
            let oracle = enumerate_oracle(&probs, &target).map_err(|e| e.to_string())?;
            worst_loss = worst_loss.max((loss - oracle).abs());
            ensure((loss - oracle).abs() <= 1e-9, || format!("instance {instance} {target:?}: {loss} vs {oracle}"))?;

            let analytic = ctc_grad(&probs, &target).map_err(|e| e.to_string())?;
            let numeric = finite_diff_grad(
                |flat| ctc_loss_flat(flat, classes, blank, target.as_slice()).expect("valid lattice"),
                probs.as_tensor().data(),
                1e-6,
            );
            for (a, n) in analytic.data().iter().zip(&numeric) {
                let err = relative_error(*a, *n, 1e-3);
                worst_grad = worst_grad.max(err);
                ensure(err <= 1e-6, || format!("instance {instance} {target:?}: gradient {a} vs {n}"))?;
            }
            checked += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{checked} targets, max loss gap {worst_loss:.1e}, max gradient error {worst_grad:.1e}"))
}

/// Exhaustive argmax of `-loss + α·LM + β·len`, ties to the smaller label sequence.
fn brute_force_best(probs: &FrameProbs, lm: Option<&NgramLm>, cfg: &DecodeConfig) -> (LabelSeq, f64) {
    let mut best: Option<(LabelSeq, f64)> = None;
    for target in targets_up_to(probs.alphabet().symbols().len(), probs.num_frames()) {
        let loss = enumerate_oracle(probs, &target).unwrap();
        if loss.is_infinite() {
            continue;
        }
        let text = probs.alphabet().decode(&target);
        let words: Vec<String> = text.split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect();
        let lm_term = lm.map_or(0.0, |lm| cfg.lm_weight * lm.log_prob(&words));
        let score = -loss + lm_term + cfg.length_bonus * target.len() as f64;
        if best.as_ref().is_none_or(|(b, s)| score > *s || (score == *s && target < *b)) {
            best = Some((target, score));
        }
    }
    best.expect("the empty target is always feasible")
}

fn decoder() -> Verdict {
    const EXHAUSTIVE: usize = 1 << 20;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let lm = train_lm(&["a b", "b", "a a b", "b a"], 2, 0.5).map_err(|e| e.to_string())?;
    let plain = Alphabet::new(vec!['a', 'b'], '-').unwrap();
    let spaced = Alphabet::new(vec!['a', 'b', ' '], '-').unwrap();
    for i in 0..200 {
        let with_lm = i % 2 == 1;
        let alphabet = if with_lm { &spaced } else { &plain };
        let probs = random_frames(&mut rng, alphabet, 5);
        let cfg = DecodeConfig {
            beam_width: EXHAUSTIVE,
            lm_weight: if with_lm { [0.5, 1.0, 3.0][i % 3] } else { 0.0 },
            length_bonus: [0.0, 0.4][(i / 2) % 2],
        };
        let lm = with_lm.then_some(&lm);
        let (labels, score) = brute_force_best(&probs, lm, &cfg);
        let out = beam_decode(&probs, lm, &cfg).map_err(|e| e.to_string())?;
        ensure(out.best.labels == labels && (out.best.score - score).abs() < 1e-9, || {
            format!("instance {i}: beam {:?} {} vs brute force {labels:?} {score}", out.best.labels, out.best.score)
        })?;
    }
    for i in 0..500 {
        let probs = random_frames(&mut rng, &plain, 6);
        let score = |width| {
            let cfg = DecodeConfig { beam_width: width, lm_weight: 0.0, length_bonus: 0.0 };
            beam_decode(&probs, None, &cfg).map(|o| o.best.score).map_err(|e| e.to_string())
        };
        let (w3, w1) = (score(3)?, score(1)?);
        ensure(w3 >= w1 - 1e-12, || format!("instance {i}: width 3 {w3} < width 1 {w1}"))?;
    }
    Ok("200 exhaustive instances equal brute force, width 3 >= width 1 on 500".into())
}

fn classifier() -> Verdict {
    let start = Instant::now();
    let corpus = LabeledCorpus::from_ndjson(CORPUS, &LabelSet::default()).map_err(|e| e.to_string())?;

    // gradient check on a reduced network over the full corpus
    let small = CnnConfig { embedding_dim: 4, filter_widths: vec![1, 2, 3], feature_maps: 3, seed: 1 };
    let vocab = Vocabulary::build(corpus.examples.iter().map(|(t, _)| t.as_str()));
    let params = CnnParams::random(&small, vocab.size(), corpus.labels.len());
    let probe = TextCnn::new(corpus.labels.clone(), vocab, small, params);
    let analytic = probe.gradient(&corpus);
    let numeric = finite_diff_grad(
        |flat| {
            let mut m = probe.clone();
            m.params.load_flat(flat).expect("same shape");
            m.loss(&corpus)
        },
        &probe.params.to_flat(),
        1e-5,
    );
    let worst = analytic.iter().zip(&numeric).map(|(a, n)| relative_error(*a, *n, 1e-6)).fold(0.0, f64::max);
    ensure(worst < 1e-4, || format!("gradient relative error {worst:.2e}"))?;

    let tc = TrainConfig { learning_rate: DEFAULT_LEARNING_RATE, epochs: 500, seed: 0 };
    let (a, report) = train_classifier(&corpus, &CnnConfig::default(), &tc).map_err(|e| e.to_string())?;
    let (b, _) = train_classifier(&corpus, &CnnConfig::default(), &tc).map_err(|e| e.to_string())?;
    ensure(a.params.to_flat() == b.params.to_flat(), || "two runs differ".into())?;
    let epochs = report.losses.len();
    let accuracy = a.accuracy(&corpus);
    ensure(accuracy >= 0.9, || format!("training accuracy {accuracy}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("gradient error {worst:.1e}, accuracy {accuracy:.3} after {epochs} epochs, repeatable"))
}

fn tone(n: usize) -> Waveform {
    let samples = (0..n).map(|i| 0.5 * (i as f64 * 0.05).sin() + 0.1 * (i as f64 * 0.31).cos()).collect();
    Waveform::new(16_000, samples).unwrap()
}

fn augmentation() -> Verdict {
    let corpus: Vec<Waveform> = [1600, 2001, 3333].into_iter().map(tone).collect();
    let plan = AugmentPlan { seed: 9, ..AugmentPlan::default() };
    let out = expand_corpus(&corpus, &plan).map_err(|e| e.to_string())?;
    ensure(out.len() == 30, || format!("{} copies", out.len()))?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut worst_snr = 0.0f64;
    for a in &out {
        let original = &corpus[a.provenance.source_index];
        match a.provenance.transform {
            Transform::Noise { snr_db: target, .. } => {
                *counts.entry("noise").or_default() += 1;
                ensure((40.0..=50.0).contains(&target), || format!("snr target {target}"))?;
                let noise: Vec<f64> = a.waveform.samples.iter().zip(&original.samples).map(|(x, s)| x - s).collect();
                let measured = snr_db(&original.samples, &noise);
                worst_snr = worst_snr.max((measured - target).abs());
                ensure((measured - target).abs() <= 0.01, || format!("snr {measured} vs {target}"))?;
            }
            Transform::Speed { factor } => {
                *counts.entry("speed").or_default() += 1;
                let want = (original.samples.len() as f64 / factor).round() as usize;
                ensure(a.waveform.samples.len() == want, || format!("speed {factor}: {} samples, want {want}", a.waveform.samples.len()))?;
            }
            Transform::Gain { .. } => *counts.entry("gain").or_default() += 1,
        }
    }
    ensure(counts == BTreeMap::from([("gain", 6), ("noise", 18), ("speed", 6)]), || format!("{counts:?}"))?;
    Ok(format!("60/20/20 per original, worst snr error {worst_snr:.1e} dB"))
}

fn random_log(rng: &mut ChaCha8Rng, rules: &RuleTable) -> Vec<AdministrationEvent> {
    let drugs: Vec<_> = rules.iter().collect();
    let mut time = 0.0;
    (0..rng.random_range(1..=20))
        .map(|_| {
            time += rng.random_range(0.0..400.0f64).floor();
            let rule = drugs[rng.random_range(0..drugs.len())];
            AdministrationEvent {
                drug: rule.drug.clone(),
                dose_amount: rule.dose_amount,
                dose_unit: rule.dose_unit.clone(),
                route: rule.route.clone(),
                time,
            }
        })
        .collect()
}

/// Replays a log, firing reminders between events; returns every reminder state seen.
fn run_log(rules: &RuleTable, log: &[AdministrationEvent]) -> Result<Vec<String>, String> {
    let mut schedule = Schedule::new(rules.clone());
    let mut seen = Vec::new();
    let mut given: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for event in log {
        for r in schedule.due_reminders(event.time) {
            seen.push(format!("fired {} {} at {}", r.id, r.drug, r.due_time));
        }
        let scheduled = schedule.record_administration(event).map_err(|e| e.to_string())?;
        let times = given.entry(event.drug.as_str()).or_default();
        times.push(event.time);
        let rule = rules.get(&event.drug).expect("log drugs come from the rules");
        match &scheduled {
            Some(r) => {
                ensure(times.len() < rule.max_doses as usize, || format!("{} scheduled past max_doses", r.drug))?;
                ensure(r.due_time == event.time + rule.interval_seconds as f64, || format!("{} due at {}", r.drug, r.due_time))?;
            }
            None => ensure(times.len() >= rule.max_doses as usize, || format!("{} missing a reminder", event.drug))?,
        }
        let pending = schedule.reminders().iter().filter(|r| r.drug == event.drug && r.status == ReminderStatus::Pending).count();
        ensure(pending <= 1, || format!("{pending} pending reminders for {}", event.drug))?;
        seen.push(format!("{scheduled:?}"));
    }
    Ok(seen)
}

fn reminders() -> Verdict {
    let rules = RuleTable::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for i in 0..1000 {
        let log = random_log(&mut rng, &rules);
        let first = run_log(&rules, &log).map_err(|e| format!("log {i}: {e}"))?;
        let second = run_log(&rules, &log).map_err(|e| format!("log {i}: {e}"))?;
        ensure(first == second, || format!("log {i} replayed differently"))?;
    }
    Ok("1000 random logs respect interval and max_doses, replays identical".into())
}

/// Runs the gold transcript script through a fresh simulated-clock store and returns the confirmed ePCR.
fn scripted_epcr() -> Result<String, String> {
    let store = Store::new(Pipeline::bundled(), ClockMode::Simulated { base: reference_time() }, None);
    let created = store.create(example_dispatch()).map_err(|e| e.message)?;
    let id = created["id"].as_str().ok_or("no session id")?.to_string();
    let gold = load_gold(GOLD).map_err(|e| e.to_string())?;
    for (i, entry) in gold.iter().enumerate() {
        let time = 45.0 * (i + 1) as f64;
        store.execute(&id, Command::Transcript { line: entry.transcript.clone(), time }).map_err(|e| e.message)?;
        store.execute(&id, Command::FireReminders { now: time + 20.0 }).map_err(|e| e.message)?;
    }
    let form: PatchForm = store.get(&id).map_err(|e| e.message)?.read(|s| s.form.clone());
    let confirmed = store.execute(&id, Command::Confirm { form, time: 400.0 }).map_err(|e| e.message)?;
    let doc = confirmed["epcr"].as_str().ok_or("no ePCR in the response")?.to_string();
    let (frozen, stored) = store.get(&id).map_err(|e| e.message)?.read(|s| s.epcr());
    ensure(frozen && stored == doc, || "stored ePCR differs from the confirmation".into())?;
    Ok(doc)
}

fn service_determinism() -> Verdict {
    let first = scripted_epcr()?;
    let second = scripted_epcr()?;
    ensure(first == second, || "two runs produced different ePCRs".into())?;
    Ok(format!("{} identical bytes", first.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("field extraction", field_extraction),
        ("workflow totals", workflow_totals_match),
        ("OCR keyword recovery", ocr_keywords),
        ("standing order recommendation", standing_order),
        ("CTC oracle equivalence", ctc_oracle),
        ("decoder exactness", decoder),
        ("classifier training", classifier),
        ("augmentation recipe", augmentation),
        ("reminder engine", reminders),
        ("service determinism", service_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let verdict = check();
        let ms = start.elapsed().as_millis();
        match verdict {
            Ok(detail) => println!("PASS  {name}: {detail} ({ms} ms)"),
            Err(why) => {
                println!("FAIL  {name}: {why} ({ms} ms)");
                failed.push(name);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        eprintln!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
