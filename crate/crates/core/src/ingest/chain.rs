//! Option-chain records and the chain CSV format.
//!
//! Header `t,T,strike,kind,mid,underlying[,discount]`; `kind` is `C` or `P`.
//! When the optional `discount` column is present, each mid price is
//! multiplied by it at parse time.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptionKind {
    #[serde(rename = "C")]
    Call,
    #[serde(rename = "P")]
    Put,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteRecord {
    pub t: f64,
    pub expiry: f64,
    pub strike: f64,
    pub kind: OptionKind,
    pub mid: f64,
    pub underlying: f64,
}

impl QuoteRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Ingest(m));
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return bad(format!("strike must be positive, got {}", self.strike));
        }
        if !(self.t.is_finite() && self.expiry.is_finite() && self.expiry > self.t) {
            return bad(format!("expiry {} must exceed observation time {}", self.expiry, self.t));
        }
        if !(self.mid >= 0.0 && self.mid.is_finite()) {
            return bad(format!("mid price must be ≥ 0, got {}", self.mid));
        }
        if !(self.underlying > 0.0 && self.underlying.is_finite()) {
            return bad(format!("underlying must be positive, got {}", self.underlying));
        }
        Ok(())
    }
}

/// Quotes sharing one `(t, T)`, sorted by strike then kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGroup {
    pub t: f64,
    pub expiry: f64,
    pub underlying: f64,
    pub quotes: Vec<QuoteRecord>,
}

impl ChainGroup {
    /// The quote of `kind` at `strike`, if present.
    pub fn quote(&self, kind: OptionKind, strike: f64) -> Option<&QuoteRecord> {
        self.quotes
            .iter()
            .find(|q| q.kind == kind && q.strike == strike)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptionChain {
    pub groups: Vec<ChainGroup>,
}

impl OptionChain {
    /// Groups records by `(t, T)`, rejecting duplicates and inconsistent underlyings.
    pub fn from_records(records: Vec<QuoteRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut groups: BTreeMap<(u64, u64), ChainGroup> = BTreeMap::new();
        for q in records {
            q.validate()?;
            let key = (q.t.to_bits(), q.expiry.to_bits(), q.strike.to_bits(), q.kind);
            if !seen.insert(key) {
                return Err(Error::Ingest(format!(
                    "duplicate quote (t={}, T={}, K={}, {:?})",
                    q.t, q.expiry, q.strike, q.kind
                )));
            }
            let g = groups
                .entry((order_key(q.t), order_key(q.expiry)))
                .or_insert_with(|| ChainGroup {
                    t: q.t,
                    expiry: q.expiry,
                    underlying: q.underlying,
                    quotes: Vec::new(),
                });
            if (g.underlying - q.underlying).abs() > 1e-12 * g.underlying {
                return Err(Error::Ingest(format!(
                    "inconsistent underlying at (t={}, T={}): {} vs {}",
                    q.t, q.expiry, g.underlying, q.underlying
                )));
            }
            g.quotes.push(q);
        }
        let mut groups: Vec<ChainGroup> = groups.into_values().collect();
        for g in &mut groups {
            g.quotes.sort_by(|a, b| {
                a.strike
                    .total_cmp(&b.strike)
                    .then((a.kind == OptionKind::Put).cmp(&(b.kind == OptionKind::Put)))
            });
        }
        Ok(Self { groups })
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.quotes.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Total order on finite floats as integers, for map keys.
fn order_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    t: f64,
    #[serde(rename = "T")]
    expiry: f64,
    strike: f64,
    kind: OptionKind,
    mid: f64,
    underlying: f64,
    #[serde(default)]
    discount: Option<f64>,
}

pub fn read_chain(path: &Path) -> Result<OptionChain> {
    let f = File::open(path)?;
    read_chain_from(BufReader::new(f), &path.display().to_string())
}

/// Parses a chain; lines starting with `#` are ignored.
pub fn read_chain_from(reader: impl Read, source: &str) -> Result<OptionChain> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["t", "T", "strike", "kind", "mid", "underlying"];
    let names: Vec<&str> = headers.iter().collect();
    let ok = names.len() >= 6
        && names[..6] == expected
        && (names.len() == 6 || (names.len() == 7 && names[6] == "discount"));
    if !ok {
        return Err(Error::Parse {
            path: source.into(),
            line: 1,
            message: format!(
                "header must be t,T,strike,kind,mid,underlying[,discount], got {}",
                names.join(",")
            ),
        });
    }
    let mut records = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Parse {
            path: source.into(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let discount = row.discount.unwrap_or(1.0);
        if !(discount > 0.0 && discount.is_finite()) {
            return Err(Error::Ingest(format!("discount must be positive, got {discount}")));
        }
        records.push(QuoteRecord {
            t: row.t,
            expiry: row.expiry,
            strike: row.strike,
            kind: row.kind,
            mid: row.mid * discount,
            underlying: row.underlying,
        });
    }
    OptionChain::from_records(records)
}

pub fn write_chain(chain: &OptionChain, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "T", "strike", "kind", "mid", "underlying"])?;
    for g in &chain.groups {
        for q in &g.quotes {
            let kind = match q.kind {
                OptionKind::Call => "C",
                OptionKind::Put => "P",
            };
            w.write_record([
                q.t.to_string(),
                q.expiry.to_string(),
                q.strike.to_string(),
                kind.to_string(),
                q.mid.to_string(),
                q.underlying.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
