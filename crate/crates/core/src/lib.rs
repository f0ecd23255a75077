pub mod cli;
pub mod corpus;
pub mod embstore;
pub mod evalreport;
pub mod features;
pub mod folds;
pub mod protocol;
pub mod svm;
pub mod synth;
pub mod textgrid;
