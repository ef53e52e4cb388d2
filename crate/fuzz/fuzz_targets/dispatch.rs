//! Dispatch records through the saved standing-order model.

#![no_main]

use std::sync::LazyLock;

use libfuzzer_sys::fuzz_target;
use patchline_core::nn::ModelDocument;
use patchline_core::orders::{recommend, reference_time, DispatchInfo, FixedClock, OrderModel};

static MODEL: LazyLock<OrderModel> = LazyLock::new(|| {
    let doc = ModelDocument::from_json(include_str!("../../fixtures/models/orders.json")).unwrap();
    OrderModel::from_document(&doc).unwrap()
});

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(dispatch) = serde_json::from_str::<DispatchInfo>(text) else { return };
    if let Ok(rec) = recommend(&MODEL, &dispatch, &FixedClock(reference_time())) {
        rec.check_invariants().unwrap();
    }
});
