//! Draws file: one CSV row per (chain, iteration) with named parameter
//! columns.

use std::io::{Read, Write};

use super::{diagnostics, PosteriorDraws};
use crate::error::{Error, Result};

const FIXED: [&str; 3] = ["chain", "iter", "divergent"];

impl PosteriorDraws {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let header: Vec<&str> = FIXED.iter().copied().chain(self.names.iter().map(String::as_str)).collect();
        wtr.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for (c, chain) in self.values.iter().enumerate() {
            for (i, v) in chain.iter().enumerate() {
                row.clear();
                row.push(c.to_string());
                row.push(i.to_string());
                row.push(u8::from(self.divergent[c][i]).to_string());
                row.extend(v.iter().map(f64::to_string));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a draws file and recomputes the diagnostics. Step sizes are not
    /// part of the file and come back empty.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < FIXED.len() || header.iter().zip(FIXED).any(|(a, b)| a != b) {
            return Err(Error::Parse("draws file must start with chain,iter,divergent".into()));
        }
        let names: Vec<String> = header.iter().skip(FIXED.len()).map(str::to_string).collect();
        let mut values: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut divergent: Vec<Vec<bool>> = Vec::new();
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse(format!("bad {what} value {s:?} in draws file")))
        };
        for rec in rdr.records() {
            let rec = rec?;
            let chain = parse(&rec[0], "chain")? as usize;
            let iter = parse(&rec[1], "iter")? as usize;
            if chain == values.len() {
                values.push(Vec::new());
                divergent.push(Vec::new());
            }
            if chain + 1 != values.len() || iter != values[chain].len() {
                return Err(Error::Parse(format!("draws file rows out of order at chain {chain}, iter {iter}")));
            }
            divergent[chain].push(&rec[2] == "1");
            let v = (FIXED.len()..rec.len()).map(|k| parse(&rec[k], &names[k - FIXED.len()])).collect::<Result<Vec<_>>>()?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("draws file contains a non-finite value".into()));
            }
            values[chain].push(v);
        }
        if values.is_empty() || values.iter().any(|c| c.len() != values[0].len()) {
            return Err(Error::Parse("draws file needs equally long, non-empty chains".into()));
        }
        let summary = diagnostics::summarize(&names, &values);
        Ok(PosteriorDraws { names, values, divergent, step_sizes: Vec::new(), summary })
    }

    /// Every `k`-th draw in chain-major order, so at most `budget` remain.
    pub fn thinned(&self, budget: usize) -> Vec<&[f64]> {
        let all: Vec<&[f64]> = self.iter_draws().collect();
        if budget == 0 || all.len() <= budget {
            return all;
        }
        let step = all.len().div_ceil(budget);
        all.into_iter().step_by(step).collect()
    }
}
