//! Evaluate a saved network on CSV inputs.

use std::fs::File;
use std::io::{BufReader, Read, Write};

use holofit_core::dnn::FeedforwardNetwork;

use crate::{BenchError, Result};

/// Reads points (one per row, header line required) and writes one output
/// row `phi1,…,phiK` per point.
pub fn eval_network<R: Read, W: Write>(net: &FeedforwardNetwork, input: R, output: W) -> Result<usize> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut w = csv::Writer::from_writer(output);
    w.write_record((1..=net.output_dim()).map(|k| format!("phi{k}")))?;
    let mut count = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let y = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| BenchError::config(format!("row {}: {e}", count + 1)))?;
        if y.len() < net.input_dim() {
            return Err(BenchError::config(format!(
                "row {} has {} values, network takes {}",
                count + 1,
                y.len(),
                net.input_dim()
            )));
        }
        let out = net.eval(&y)?;
        w.write_record(out.iter().map(|v| format!("{v:.17e}")))?;
        count += 1;
    }
    w.flush()?;
    Ok(count)
}

pub fn load_network(path: &std::path::Path) -> Result<FeedforwardNetwork> {
    Ok(FeedforwardNetwork::read_binary(BufReader::new(File::open(path)?))?)
}
