//! Saved model documents for both trained models.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::classify::TextCnn;
use patchline_core::nn::ModelDocument;
use patchline_core::orders::OrderModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(doc) = ModelDocument::from_json(text) else { return };
    if let Ok(model) = TextCnn::from_document(&doc) {
        let p = model.probabilities("pulse is 80");
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    if let Ok(model) = OrderModel::from_document(&doc) {
        let _ = model.to_document();
    }
});
