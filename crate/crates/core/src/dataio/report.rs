use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::pruner::{removal_order_map, PruneStep};

pub const PRUNE_CURVE_FILE: &str = "prune_curve.csv";
pub const REMOVAL_ORDER_FILE: &str = "removal_order.txt";

/// One row per removal: `step,removed_count,removed_feature_index,val_accuracy,retrained`.
pub fn curve_csv(history: &[PruneStep]) -> String {
    let mut out = String::from("step,removed_count,removed_feature_index,val_accuracy,retrained\n");
    for s in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.step,
            s.step + 1,
            s.removed_feature,
            s.val_accuracy,
            u8::from(s.retrained)
        );
    }
    out
}

#[derive(Serialize, Deserialize)]
struct RemovalOrder {
    bands: usize,
    order: Vec<usize>,
}

/// TOML document with the band count and the per-band removal step
/// (`bands` marks bands that were never removed).
pub fn removal_order_text(order: &[usize]) -> String {
    let doc = RemovalOrder {
        bands: order.len(),
        order: order.to_vec(),
    };
    let mut out =
        String::from("# entry j: step at which band j was removed; value `bands` = retained\n");
    out.push_str(&toml::to_string(&doc).expect("plain integers serialise"));
    out
}

pub fn parse_removal_order(text: &str) -> Result<Vec<usize>, FormatError> {
    let doc: RemovalOrder = toml::from_str(text).map_err(|e| FormatError::Header(e.to_string()))?;
    if doc.order.len() != doc.bands {
        return Err(FormatError::Inconsistent(format!(
            "removal order lists {} entries for {} bands",
            doc.order.len(),
            doc.bands
        )));
    }
    Ok(doc.order)
}

pub fn write_prune_report(
    dir: impl AsRef<Path>,
    history: &[PruneStep],
    bands: usize,
) -> Result<(), FormatError> {
    let dir = dir.as_ref();
    fs::write(dir.join(PRUNE_CURVE_FILE), curve_csv(history))?;
    let order = removal_order_map(history, bands);
    fs::write(dir.join(REMOVAL_ORDER_FILE), removal_order_text(&order))?;
    Ok(())
}
