//! The trained models and registries a session runs against.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use patchline_core::classify::{train_classifier, CnnConfig, LabelSet, LabeledCorpus, TextCnn, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE};
use patchline_core::lookup::{DinRegistry, ErgRegistry};
use patchline_core::nlu::Lexicons;
use patchline_core::nn::{ModelDocument, TrainConfig};
use patchline_core::orders::{default_catalog, load_records, train_orders, OrderModel, DEFAULT_ORDER_TRAINING};
use patchline_core::reminders::RuleTable;

pub const CLASSIFIER_CORPUS: &str = include_str!("../../../fixtures/classifier_corpus.ndjson");
pub const ORDER_RECORDS: &str = include_str!("../../../fixtures/orders_records.csv");

#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct PipelineError {
    pub path: PathBuf,
    pub message: String,
}

fn err(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub lexicons: Lexicons,
    pub classifier: TextCnn,
    pub orders: OrderModel,
    pub rules: RuleTable,
    pub din: DinRegistry,
    pub erg: ErgRegistry,
}

pub fn default_classifier_training() -> TrainConfig {
    TrainConfig { learning_rate: DEFAULT_LEARNING_RATE, epochs: DEFAULT_EPOCHS, seed: 0 }
}

/// Classifier trained on a labeled NDJSON corpus with the default settings.
pub fn classifier_from_corpus(text: &str) -> Result<TextCnn, String> {
    let corpus = LabeledCorpus::from_ndjson(text, &LabelSet::default()).map_err(|e| e.to_string())?;
    let (model, _) = train_classifier(&corpus, &CnnConfig::default(), &default_classifier_training()).map_err(|e| e.to_string())?;
    Ok(model)
}

pub fn orders_from_records(text: &str) -> Result<OrderModel, String> {
    let records = load_records(text).map_err(|e| e.to_string())?;
    train_orders(&records, &default_catalog(), &DEFAULT_ORDER_TRAINING).map_err(|e| e.to_string())
}

impl Pipeline {
    /// Bundled fixtures with models trained on first use, shared per process.
    pub fn bundled() -> Arc<Pipeline> {
        static BUNDLED: OnceLock<Arc<Pipeline>> = OnceLock::new();
        BUNDLED
            .get_or_init(|| {
                Arc::new(Pipeline {
                    lexicons: Lexicons::bundled(),
                    classifier: classifier_from_corpus(CLASSIFIER_CORPUS).expect("bundled corpus trains"),
                    orders: orders_from_records(ORDER_RECORDS).expect("bundled records train"),
                    rules: RuleTable::bundled(),
                    din: DinRegistry::bundled(),
                    erg: ErgRegistry::bundled(),
                })
            })
            .clone()
    }

    /// Loads a data directory laid out like `fixtures/`. Any missing piece
    /// falls back to the bundled one; saved models under `models/` are
    /// preferred to retraining.
    pub fn from_dir(dir: &Path) -> Result<Pipeline, PipelineError> {
        let bundled = Pipeline::bundled();
        let read = |name: &str| -> Result<Option<String>, PipelineError> {
            let path = dir.join(name);
            if path.is_file() {
                fs::read_to_string(&path).map(Some).map_err(|e| err(&path, e))
            } else {
                Ok(None)
            }
        };
        let lex_dir = dir.join("lexicons");
        let lexicons = if lex_dir.is_dir() {
            Lexicons::load_dir(&lex_dir).map_err(|e| err(&lex_dir, e))?
        } else {
            bundled.lexicons.clone()
        };
        let classifier = match (read("models/classifier.json")?, read("classifier_corpus.ndjson")?) {
            (Some(doc), _) => {
                let path = dir.join("models/classifier.json");
                let doc = ModelDocument::from_json(&doc).map_err(|e| err(&path, e))?;
                TextCnn::from_document(&doc).map_err(|e| err(&path, e))?
            }
            (None, Some(corpus)) => classifier_from_corpus(&corpus).map_err(|e| err(&dir.join("classifier_corpus.ndjson"), e))?,
            (None, None) => bundled.classifier.clone(),
        };
        let orders = match (read("models/orders.json")?, read("orders_records.csv")?) {
            (Some(doc), _) => {
                let path = dir.join("models/orders.json");
                let doc = ModelDocument::from_json(&doc).map_err(|e| err(&path, e))?;
                OrderModel::from_document(&doc).map_err(|e| err(&path, e))?
            }
            (None, Some(records)) => orders_from_records(&records).map_err(|e| err(&dir.join("orders_records.csv"), e))?,
            (None, None) => bundled.orders.clone(),
        };
        let rules = match read("dosing_rules.csv")? {
            Some(t) => RuleTable::from_csv(&t).map_err(|e| err(&dir.join("dosing_rules.csv"), e))?,
            None => bundled.rules.clone(),
        };
        let din = match read("din.csv")? {
            Some(t) => DinRegistry::from_csv(&t).map_err(|e| err(&dir.join("din.csv"), e))?,
            None => bundled.din.clone(),
        };
        let erg = match read("erg.csv")? {
            Some(t) => ErgRegistry::from_csv(&t).map_err(|e| err(&dir.join("erg.csv"), e))?,
            None => bundled.erg.clone(),
        };
        Ok(Pipeline { lexicons, classifier, orders, rules, din, erg })
    }
}
