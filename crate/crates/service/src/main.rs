use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;

use patchline_core::augment::{expand_corpus, AugmentPlan, Waveform};
use patchline_core::classify::{train_classifier, CnnConfig, LabelSet, LabeledCorpus, TextCnn};
use patchline_core::ctc::FrameProbs;
use patchline_core::decode::{beam_decode, train_lm, DecodeConfig, NgramLm};
use patchline_core::nlu::{extract_fields, Lexicons};
use patchline_core::nn::{ModelDocument, TrainConfig};
use patchline_core::orders::{default_catalog, load_records, recommend, reference_time, train_orders, DispatchInfo, FixedClock, OrderModel};
use patchline_core::report::{aggregate_accuracy, load_gold, score_extraction, workflow_totals, WorkflowProfile};
use patchline_service::pipeline::default_classifier_training;
use patchline_service::{api, ClockMode, Pipeline, Store};

#[derive(Parser)]
#[command(name = "patchline", version, about = "Paramedic transcript pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Beam-search a frame-probability lattice, optionally with a language model.
    Decode {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        beam_width: usize,
        #[arg(long, default_value_t = 1.0)]
        lm_weight: f64,
        #[arg(long, default_value_t = 0.0)]
        length_bonus: f64,
    },
    /// Extract patch-form fields from a transcript.
    Extract {
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        text: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long)]
        lexicons: Option<PathBuf>,
    },
    /// Classify sentences with a saved or freshly trained model.
    Classify {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(required = true)]
        sentences: Vec<String>,
    },
    /// Train the sentence classifier on an NDJSON corpus and save it.
    TrainClassifier {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train an n-gram model from one sentence per line.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.5)]
        smoothing: f64,
    },
    /// Train the standing-order model on a records CSV and save it.
    TrainOrders {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 1.0)]
        learning_rate: f64,
    },
    /// Recommend standing orders for a dispatch JSON under the reference clock.
    Recommend {
        #[arg(long)]
        dispatch: String,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Expand WAV files into noise, speed and gain copies.
    Augment {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        factor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score field extraction against the gold transcripts.
    ScoreTable3 {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        lexicons: Option<PathBuf>,
    },
    /// Workflow totals for each bundled profile.
    Table2Report {
        #[arg(long, default_value = "fixtures")]
        dir: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        simulated_clock: bool,
        /// Overrides PATCHLINE_DATA_DIR.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

enum CliError {
    /// Bad invocation or unreadable input; exit 2.
    Usage(String),
    /// Input read fine but violated a contract; exit 1.
    Contract(String),
}

type CliResult = Result<(), CliError>;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Usage(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn contract(e: impl ToString) -> CliError {
    CliError::Contract(e.to_string())
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize")
}

fn lexicons(dir: Option<&Path>) -> Result<Lexicons, CliError> {
    match dir {
        Some(d) if !d.is_dir() => Err(CliError::Usage(format!("{}: not a directory", d.display()))),
        Some(d) => Lexicons::load_dir(d).map_err(contract),
        None => Ok(Lexicons::bundled()),
    }
}

fn decode(frames: &Path, lm: Option<&Path>, cfg: DecodeConfig) -> CliResult {
    let probs = FrameProbs::from_json(&read(frames)?).map_err(contract)?;
    let lm = match lm {
        Some(p) => Some(NgramLm::from_json(&read(p)?).map_err(contract)?),
        None => None,
    };
    let out = beam_decode(&probs, lm.as_ref(), &cfg).map_err(contract)?;
    let hyps: Vec<_> = out
        .hypotheses
        .iter()
        .map(|h| json!({ "text": h.text, "score": h.score, "ctc_log_prob": h.ctc_log_prob, "lm_log_prob": h.lm_log_prob }))
        .collect();
    println!("{}", pretty(&json!({ "text": out.best.text, "score": out.best.score, "hypotheses": hyps })));
    Ok(())
}

fn load_classifier(model: Option<&Path>) -> Result<TextCnn, CliError> {
    match model {
        Some(p) => {
            let doc = ModelDocument::from_json(&read(p)?).map_err(contract)?;
            TextCnn::from_document(&doc).map_err(contract)
        }
        None => Ok(Pipeline::bundled().classifier.clone()),
    }
}

fn load_orders(model: Option<&Path>) -> Result<OrderModel, CliError> {
    match model {
        Some(p) => {
            let doc = ModelDocument::from_json(&read(p)?).map_err(contract)?;
            OrderModel::from_document(&doc).map_err(contract)
        }
        None => Ok(Pipeline::bundled().orders.clone()),
    }
}

fn augment(inputs: &[PathBuf], out_dir: &Path, factor: usize, seed: u64) -> CliResult {
    let mut corpus = Vec::with_capacity(inputs.len());
    for p in inputs {
        let f = fs::File::open(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        corpus.push(Waveform::read_wav(std::io::BufReader::new(f)).map_err(contract)?);
    }
    let plan = AugmentPlan { expansion_factor: factor, seed, ..AugmentPlan::default() };
    let copies = expand_corpus(&corpus, &plan).map_err(contract)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Usage(format!("{}: {e}", out_dir.display())))?;
    let mut provenance = String::new();
    for c in &copies {
        let stem = inputs[c.provenance.source_index].file_stem().and_then(|s| s.to_str()).unwrap_or("input");
        let name = format!("{stem}_{:03}.wav", c.provenance.copy_index);
        let path = out_dir.join(&name);
        let f = fs::File::create(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        c.waveform.write_wav(std::io::BufWriter::new(f)).map_err(contract)?;
        let mut line = serde_json::to_value(c.provenance).expect("serializable");
        line["file"] = json!(name);
        provenance.push_str(&serde_json::to_string(&line).expect("serializable"));
        provenance.push('\n');
    }
    write(&out_dir.join("provenance.ndjson"), &provenance)?;
    let counts = plan.partition();
    println!("{} copies written to {} (noise {}, speed {}, gain {} per input)", copies.len(), out_dir.display(), counts.noise, counts.speed, counts.gain);
    Ok(())
}

fn score_table3(gold: &Path, lex: Option<&Path>) -> CliResult {
    let entries = load_gold(&read(gold)?).map_err(contract)?;
    let lex = lexicons(lex)?;
    let mut scores = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let s = score_extraction(&extract_fields(&e.transcript, &lex), &e.fields);
        println!("row {}: {}/{}", i + 1, s.correct, s.total);
        scores.push(s);
    }
    let correct: usize = scores.iter().map(|s| s.correct).sum();
    let total: usize = scores.iter().map(|s| s.total).sum();
    let pct = aggregate_accuracy(&scores).map_err(contract)?;
    println!("total: {correct}/{total} = {pct:.1}%");
    Ok(())
}

fn table2(dir: &Path) -> CliResult {
    for column in ["existing", "proposed", "ideal"] {
        let path = dir.join(format!("table2_{column}.json"));
        let profile = WorkflowProfile::from_json(&read(&path)?).map_err(contract)?;
        println!("{}: {:.2}", profile.column, workflow_totals(&profile).map_err(contract)?);
    }
    Ok(())
}

fn serve(host: &str, port: u16, simulated: bool, data_dir: Option<PathBuf>) -> CliResult {
    let data_dir = data_dir.or_else(|| std::env::var_os("PATCHLINE_DATA_DIR").map(PathBuf::from));
    let clock = if simulated { ClockMode::Simulated { base: reference_time() } } else { ClockMode::Real };
    let store = match &data_dir {
        Some(dir) => {
            let pipeline = Pipeline::from_dir(dir).map_err(contract)?;
            Store::open(Arc::new(pipeline), clock, dir.join("sessions")).map_err(CliError::Contract)?
        }
        None => Store::new(Pipeline::bundled(), clock, None),
    };
    let app = api::router(Arc::new(store));
    let rt = tokio::runtime::Runtime::new().map_err(contract)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await.map_err(|e| CliError::Usage(format!("bind {host}:{port}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(contract)?);
        axum::serve(listener, app).await.map_err(contract)
    })
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Cmd::Decode { frames, lm, beam_width, lm_weight, length_bonus } => {
            decode(&frames, lm.as_deref(), DecodeConfig { beam_width, lm_weight, length_bonus })
        }
        Cmd::Extract { text, file, lexicons: dir } => {
            let text = match (text, file) {
                (Some(t), _) => t,
                (None, Some(f)) => read(&f)?,
                (None, None) => return Err(CliError::Usage("give --text or --file".into())),
            };
            let form = extract_fields(&text, &lexicons(dir.as_deref())?);
            println!("{}", pretty(&serde_json::to_value(&form).expect("serializable")));
            Ok(())
        }
        Cmd::Classify { model, sentences } => {
            let m = load_classifier(model.as_deref())?;
            for s in sentences {
                let (label, probs) = m.classify(&s);
                println!("{}", json!({ "sentence": s, "label": label, "probabilities": probs }));
            }
            Ok(())
        }
        Cmd::TrainClassifier { corpus, out, epochs, learning_rate, seed } => {
            let corpus = LabeledCorpus::from_ndjson(&read(&corpus)?, &LabelSet::default()).map_err(contract)?;
            let d = default_classifier_training();
            let tc = TrainConfig { learning_rate: learning_rate.unwrap_or(d.learning_rate), epochs: epochs.unwrap_or(d.epochs), seed };
            let cfg = CnnConfig { seed, ..CnnConfig::default() };
            let (model, report) = train_classifier(&corpus, &cfg, &tc).map_err(contract)?;
            write(&out, &model.to_document().to_json())?;
            println!("final loss {:.6}, training accuracy {:.3}", report.final_loss, report.train_accuracy);
            Ok(())
        }
        Cmd::TrainLm { corpus, out, order, smoothing } => {
            let text = read(&corpus)?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let lm = train_lm(&lines, order, smoothing).map_err(contract)?;
            write(&out, &lm.to_json())?;
            println!("{} sentences, vocabulary {}", lines.len(), lm.vocabulary().len());
            Ok(())
        }
        Cmd::TrainOrders { records, out, epochs, learning_rate } => {
            let records = load_records(&read(&records)?).map_err(contract)?;
            let tc = TrainConfig { learning_rate, epochs, seed: 0 };
            let model = train_orders(&records, &default_catalog(), &tc).map_err(contract)?;
            write(&out, &model.to_document().to_json())?;
            println!("training accuracy {:.3}", model.accuracy(&records));
            Ok(())
        }
        Cmd::Recommend { dispatch, model } => {
            let d: DispatchInfo = serde_json::from_str(&dispatch).map_err(|e| CliError::Usage(format!("--dispatch: {e}")))?;
            let m = load_orders(model.as_deref())?;
            let rec = recommend(&m, &d, &FixedClock(reference_time())).map_err(contract)?;
            println!("{}", rec.to_json());
            Ok(())
        }
        Cmd::Augment { inputs, out_dir, factor, seed } => augment(&inputs, &out_dir, factor, seed),
        Cmd::ScoreTable3 { gold, lexicons } => score_table3(&gold, lexicons.as_deref()),
        Cmd::Table2Report { dir } => table2(&dir),
        Cmd::Serve { port, host, simulated_clock, data_dir } => serve(&host, port, simulated_clock, data_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Contract(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
