//! Line-delimited metrics records, one per epoch, append-only and
//! flushed as they complete so a killed run keeps every finished epoch.

use std::collections::HashMap;
use std::io::Write;

use crate::train::EpochRecord;

/// Renders one epoch as a `key=value` record. Floats use the shortest
/// round-trippable form.
pub fn epoch_line(record: &EpochRecord) -> String {
    let nnz: Vec<String> = record.layer_nnz.iter().map(|n| n.to_string()).collect();
    let mut line = format!(
        "epoch={} train_loss={} train_acc={} test_loss={} test_acc={} nnz={} gflow={} seconds={}",
        record.epoch,
        record.train_loss,
        record.train_acc,
        record.test_loss,
        record.test_acc,
        nnz.join(","),
        record.gradient_flow,
        record.seconds,
    );
    if let Some(pruning) = &record.pruning {
        let pruned: Vec<String> = pruning
            .pruned_neurons_per_layer
            .iter()
            .map(|n| n.to_string())
            .collect();
        line.push_str(&format!(
            " pruned_neurons={} removed_connections={}",
            pruned.join(","),
            pruning.removed_connections
        ));
    }
    line
}

/// Parses a metrics or audit line back into its fields.
pub fn parse_line(line: &str) -> HashMap<String, String> {
    line.split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Writes a record and flushes immediately.
pub fn write_epoch(sink: &mut impl Write, record: &EpochRecord) -> std::io::Result<()> {
    writeln!(sink, "{}", epoch_line(record))?;
    sink.flush()
}
