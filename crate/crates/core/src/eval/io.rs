//! Evaluation tables. The `distance` column of the metrics table reads
//! `all` on the overall row; empty cells mean "not available".

use std::io::Write;

use super::{EnvelopeRow, MetricsRow, PpQqRow, ZValue};
use crate::error::Result;

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["distance", "n", "rmse", "mae", "hdi_mass", "hdi_length", "coverage", "crps"])?;
    for r in rows {
        wtr.write_record([
            r.distance.map_or_else(|| "all".to_string(), |d| d.to_string()),
            r.n.to_string(),
            r.rmse.to_string(),
            r.mae.to_string(),
            r.hdi_mass.to_string(),
            r.hdi_length.to_string(),
            r.coverage.to_string(),
            r.crps.map_or_else(String::new, |c| c.to_string()),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row per (distance, rank); P-P pairs are `(empirical_prob,
/// model_prob)` and Q-Q pairs `(model_quantile, z)`.
pub fn write_ppqq<W: Write>(w: W, rows: &[PpQqRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    if rows.is_empty() {
        wtr.write_record(["distance", "rank", "n", "z", "empirical_prob", "model_prob", "model_quantile"])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_z<W: Write>(w: W, z: &[ZValue]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for v in z {
        wtr.serialize(v)?;
    }
    if z.is_empty() {
        wtr.write_record(["record_id", "distance", "z"])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_envelope<W: Write>(w: W, rows: &[EnvelopeRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    if rows.is_empty() {
        wtr.write_record(["distance", "rank", "empirical_prob", "model_prob_lo", "model_prob_hi"])?;
    }
    wtr.flush()?;
    Ok(())
}
