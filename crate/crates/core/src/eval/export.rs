//! Embedding export as comma-separated text:
//!
//! ```text
//! pair_id,domain,label,e0,e1,...,e{d-1}
//! 17,target,3,1.23456791e-1,...
//! ```
//!
//! `domain` is `source` or `target`; `label` is empty for unlabeled
//! windows; values are written with 9 significant digits, which round-trips
//! every `f32` exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::EvalError;
use crate::data::Window;
use crate::model::{embed_batch, Domain, ModelParams};
use crate::numerics::Tensor;

pub const EMBEDDING_HEADER_PREFIX: &str = "pair_id,domain,label";

pub fn write_embeddings<W: Write>(model: &ModelParams, windows: &[Window], mut out: W) -> Result<(), EvalError> {
    let d = model.meta.arch.embedding_dim();
    let mut header = String::from(EMBEDDING_HEADER_PREFIX);
    for i in 0..d {
        header.push_str(&format!(",e{}", i));
    }
    writeln!(out, "{}", header)?;
    let domain = match model.meta.domain {
        Domain::Source => "source",
        Domain::Target => "target",
    };
    let signals: Vec<&Tensor> = windows.iter().map(|w| &w.samples).collect();
    let embeddings = embed_batch(model, &signals)?;
    for (w, e) in windows.iter().zip(&embeddings) {
        let mut line = format!("{},{},{}", w.pair_id, domain, w.label.map(|l| l.to_string()).unwrap_or_default());
        for v in e.values() {
            line.push_str(&format!(",{:.8e}", v));
        }
        writeln!(out, "{}", line)?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_embeddings(model: &ModelParams, windows: &[Window], path: impl AsRef<Path>) -> Result<(), EvalError> {
    write_embeddings(model, windows, BufWriter::new(File::create(path)?))
}
