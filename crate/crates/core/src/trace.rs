//! Trace files: CSV with header `slot,user,value`.
//!
//! Users are numbered from 1. Every user's slots must run 0, 1, 2, ...
//! without gaps or repeats; rows of different users may interleave. For
//! arrival traces the value is a job count, for channel traces an index into
//! the configured level list.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{ArrivalProcess, ChannelProcess};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub source: String,
    /// `values[i]` is user `i + 1`'s series.
    pub values: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSummary {
    pub user: usize,
    pub slots: usize,
    pub mean: f64,
}

fn parse_err(source: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        row,
        message: message.into(),
    }
}

/// Parses a trace; `row` in errors is the 1-based line number.
pub fn parse_trace<R: Read>(reader: R, source: &str) -> Result<TraceTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(source, 1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["slot", "user", "value"] {
        return Err(parse_err(source, 1, "header must be slot,user,value"));
    }
    let mut values: Vec<Vec<u64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse_err(source, row, e.to_string()))?;
        let field = |j: usize, name: &str| -> Result<i64> {
            rec.get(j)
                .ok_or_else(|| parse_err(source, row, format!("missing {name}")))?
                .parse::<i64>()
                .map_err(|_| parse_err(source, row, format!("{name} is not an integer")))
        };
        let (slot, user, value) = (field(0, "slot")?, field(1, "user")?, field(2, "value")?);
        if slot < 0 || value < 0 {
            return Err(parse_err(source, row, "negative slot or value"));
        }
        if user < 1 {
            return Err(parse_err(source, row, "users are numbered from 1"));
        }
        let u = (user - 1) as usize;
        if values.len() <= u {
            values.resize(u + 1, Vec::new());
        }
        let series = &mut values[u];
        let expected = series.len() as i64;
        if slot < expected {
            return Err(parse_err(source, row, format!("duplicate slot {slot} for user {user}")));
        }
        if slot > expected {
            return Err(parse_err(source, row, format!("gap: user {user} jumps from slot {} to {slot}", expected - 1)));
        }
        series.push(value as u64);
    }
    if values.is_empty() {
        return Err(parse_err(source, 1, "trace has no rows"));
    }
    if let Some(u) = values.iter().position(Vec::is_empty) {
        return Err(parse_err(source, 1, format!("user {} has no rows", u + 1)));
    }
    Ok(TraceTable {
        source: source.to_string(),
        values,
    })
}

/// Reads a trace file; a missing file is reported with its path.
pub fn read_trace(path: &Path) -> Result<TraceTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(file, &path.display().to_string())
}

/// Writes per-user series as `slot,user,value`, slot-major.
pub fn write_trace<W: Write>(writer: W, series: &[Vec<u64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let ser = |e: csv::Error| Error::Serde(e.to_string());
    w.write_record(["slot", "user", "value"]).map_err(ser)?;
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    for t in 0..len {
        for (u, s) in series.iter().enumerate() {
            if let Some(v) = s.get(t) {
                w.write_record([t.to_string(), (u + 1).to_string(), v.to_string()]).map_err(ser)?;
            }
        }
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))
}

impl TraceTable {
    pub fn num_users(&self) -> usize {
        self.values.len()
    }

    fn series(&self, user: usize) -> Result<&[u64]> {
        self.values
            .get(user)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("{}: no user {}", self.source, user + 1)))
    }

    /// Replayable arrivals of zero-based `user`.
    pub fn arrivals(&self, user: usize) -> Result<ArrivalProcess> {
        let values = self
            .series(user)?
            .iter()
            .map(|&v| u32::try_from(v).map_err(|_| Error::Config(format!("{}: arrival count {v} too large", self.source))))
            .collect::<Result<Vec<u32>>>()?;
        Ok(ArrivalProcess::Trace { values: Arc::from(values) })
    }

    /// Replayable channel of zero-based `user` over `levels`.
    pub fn channel(&self, user: usize, levels: &[f64]) -> Result<ChannelProcess> {
        let series = self.series(user)?;
        if let Some(&bad) = series.iter().find(|&&v| v as usize >= levels.len()) {
            return Err(Error::Config(format!(
                "{}: channel index {bad} outside {} levels",
                self.source,
                levels.len()
            )));
        }
        let process = ChannelProcess::Trace {
            levels: levels.to_vec(),
            indices: series.iter().map(|&v| v as usize).collect(),
        };
        process.validate()?;
        Ok(process)
    }

    /// Per-user slot count and mean value.
    pub fn summary(&self) -> Vec<TraceSummary> {
        self.values
            .iter()
            .enumerate()
            .map(|(u, s)| TraceSummary {
                user: u + 1,
                slots: s.len(),
                mean: s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64,
            })
            .collect()
    }
}

/// Draws `slots` values from a synthetic arrival process.
pub fn synthetic_arrivals(process: &ArrivalProcess, slots: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..slots as u64).map(|t| u64::from(process.sample(&mut rng, t))).collect()
}

/// Draws `slots` channel indices from a synthetic channel process.
pub fn synthetic_channel(process: &ChannelProcess, slots: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(slots);
    let mut state = process.initial_state(&mut rng);
    for t in 0..slots as u64 {
        out.push(state as u64);
        state = process.next_state(&mut rng, state, t + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaved_users_replay_independently() {
        let text = "slot,user,value\n0,1,3\n0,2,0\n1,2,1\n1,1,4\n2,1,5\n";
        let t = parse_trace(text.as_bytes(), "mem").unwrap();
        assert_eq!(t.values, vec![vec![3, 4, 5], vec![0, 1]]);
        let a = t.arrivals(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got: Vec<u32> = (0..4).map(|s| a.sample(&mut rng, s)).collect();
        assert_eq!(got, vec![3, 4, 5, 3]);
        let c = t.channel(1, &[1.0, 2.0]).unwrap();
        assert_eq!(c.next_state(&mut rng, 0, 1), 1);
    }

    #[test]
    fn errors_carry_row_numbers() {
        let cases = [
            ("slot,user,value\n0,1,1\n2,1,1\n", 3),
            ("slot,user,value\n0,1,1\n0,1,2\n", 3),
            ("slot,user,value\n0,1,-1\n", 2),
            ("slot,user,value\n0,1,x\n", 2),
        ];
        for (text, row) in cases {
            match parse_trace(text.as_bytes(), "mem") {
                Err(Error::Parse { row: r, .. }) => assert_eq!(r, row, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn empty_and_headerless_rejected() {
        assert!(parse_trace("".as_bytes(), "mem").is_err());
        assert!(parse_trace("slot,user,value\n".as_bytes(), "mem").is_err());
        assert!(parse_trace("a,b,c\n0,1,1\n".as_bytes(), "mem").is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_trace(Path::new("/nonexistent/trace.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/trace.csv"));
    }

    #[test]
    fn write_then_read() {
        let series = vec![vec![1, 2, 3], vec![0, 0]];
        let mut buf = Vec::new();
        write_trace(&mut buf, &series).unwrap();
        assert_eq!(parse_trace(buf.as_slice(), "mem").unwrap().values, series);
    }
}
