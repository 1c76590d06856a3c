//! Predictions CSV. Interval columns are named `hdi<percent>_lo` and
//! `hdi<percent>_hi`, one pair per mass.

use std::io::{Read, Write};

use super::{Interval, Prediction};
use crate::error::{Error, Result};
use crate::features::RecordFlags;

const LEAD: [&str; 9] = ["record_id", "disruption_id", "origin", "destination", "distance", "is_first", "y", "mean", "median"];
const TAIL: [&str; 3] = ["crps", "negative_fraction", "flags"];

fn percent_label(mass: f64) -> String {
    let pct = (mass * 100.0 * 1e6).round() / 1e6;
    format!("hdi{pct}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_predictions<W: Write>(w: W, masses: &[f64], predictions: &[Prediction]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = LEAD.iter().map(|s| s.to_string()).collect();
    for &m in masses {
        let l = percent_label(m);
        header.push(format!("{l}_lo"));
        header.push(format!("{l}_hi"));
    }
    header.extend(TAIL.iter().map(|s| s.to_string()));
    wtr.write_record(&header)?;
    for p in predictions {
        let mut row = vec![
            p.record_id.to_string(),
            p.disruption_id.to_string(),
            p.origin.to_string(),
            p.destination.to_string(),
            p.distance().to_string(),
            u8::from(p.is_first).to_string(),
            opt(p.y),
            p.mean.to_string(),
            p.median.to_string(),
        ];
        for &m in masses {
            let iv = p
                .interval(m)
                .ok_or_else(|| Error::InvalidParameter(format!("record {} has no interval at mass {m}", p.record_id)))?;
            row.push(iv.lo.to_string());
            row.push(iv.hi.to_string());
        }
        row.push(opt(p.crps));
        row.push(p.negative_fraction.to_string());
        row.push(p.flags.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a predictions file, returning the interval masses found in the
/// header and the rows.
pub fn read_predictions<R: Read>(r: R) -> Result<(Vec<f64>, Vec<Prediction>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let n_mid = cols.len().checked_sub(LEAD.len() + TAIL.len()).filter(|k| k % 2 == 0);
    let bad_header = || Error::Parse("predictions header does not match the expected layout".into());
    let n_mid = n_mid.ok_or_else(bad_header)?;
    if cols[..LEAD.len()] != LEAD || cols[LEAD.len() + n_mid..] != TAIL {
        return Err(bad_header());
    }
    let mut masses = Vec::new();
    for pair in cols[LEAD.len()..LEAD.len() + n_mid].chunks(2) {
        let lo = pair[0].strip_prefix("hdi").and_then(|s| s.strip_suffix("_lo")).ok_or_else(bad_header)?;
        if pair[1] != format!("hdi{lo}_hi") {
            return Err(bad_header());
        }
        let pct: f64 = lo.parse().map_err(|_| bad_header())?;
        masses.push(pct / 100.0);
    }

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> &str { &rec[i] };
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| Error::Parse(format!("bad {} value {:?}", cols[i], field(i))))
        };
        let int = |i: usize| -> Result<i64> {
            field(i).parse().map_err(|_| Error::Parse(format!("bad {} value {:?}", cols[i], field(i))))
        };
        let optional = |i: usize| -> Result<Option<f64>> { if field(i).is_empty() { Ok(None) } else { num(i).map(Some) } };
        let intervals = masses
            .iter()
            .enumerate()
            .map(|(k, &mass)| Ok(Interval { mass, lo: num(LEAD.len() + 2 * k)?, hi: num(LEAD.len() + 2 * k + 1)? }))
            .collect::<Result<Vec<_>>>()?;
        let t = LEAD.len() + n_mid;
        let p = Prediction {
            record_id: int(0)? as u64,
            disruption_id: int(1)?,
            origin: int(2)? as usize,
            destination: int(3)? as usize,
            is_first: field(5) == "1",
            y: optional(6)?,
            mean: num(7)?,
            median: num(8)?,
            intervals,
            crps: optional(t)?,
            negative_fraction: num(t + 1)?,
            flags: RecordFlags::parse(field(t + 2))?,
        };
        if p.origin >= p.destination || int(4)? as usize != p.distance() {
            return Err(Error::Parse(format!("record {}: inconsistent stations", p.record_id)));
        }
        out.push(p);
    }
    Ok((masses, out))
}
