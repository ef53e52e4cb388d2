//! Paramedic transcript understanding: CTC decoding with language-model
//! fusion, patch-form extraction, sentence classification, standing-order
//! recommendation, medication reminders and report generation.

pub mod augment;
pub mod classify;
pub mod ctc;
pub mod nn;
pub mod decode;
pub mod lookup;
pub mod nlu;
pub mod orders;
pub mod reminders;
pub mod report;
