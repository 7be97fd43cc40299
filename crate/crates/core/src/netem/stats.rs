use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NetemError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Master to slave.
    Request,
    /// Slave to master.
    Response,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Request => "request",
            Direction::Response => "response",
        })
    }
}

/// One delayed message. Times in microseconds on the proxy clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRecord {
    pub direction: Direction,
    pub msg_index: u64,
    pub bytes: usize,
    pub arrival_us: f64,
    pub release_us: f64,
    pub delay_us: f64,
}

/// Counts in 0.1 ms bins, keyed by bin index; only occupied bins are kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: BTreeMap<i64, u64>,
}

impl Histogram {
    pub const BIN_MS: f64 = 0.1;

    pub fn add(&mut self, delay_ms: f64) {
        *self.bins.entry((delay_ms / Self::BIN_MS).floor() as i64).or_default() += 1;
    }

    pub fn total(&self) -> u64 {
        self.bins.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub count: usize,
    pub mean_ms: f64,
    /// Mean absolute difference of consecutive delays, microseconds.
    pub jitter_us: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    #[serde(skip)]
    pub histogram: Histogram,
}

impl DelayStats {
    /// Statistics of a delay sequence in arrival order.
    pub fn from_delays(delays_ms: &[f64]) -> Result<Self, NetemError> {
        if delays_ms.len() < 2 {
            return Err(NetemError::InsufficientSamples(delays_ms.len()));
        }
        let n = delays_ms.len();
        let mean_ms = delays_ms.iter().sum::<f64>() / n as f64;
        let jitter_ms = delays_ms.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (n - 1) as f64;
        let mut histogram = Histogram::default();
        for &d in delays_ms {
            histogram.add(d);
        }
        Ok(Self {
            count: n,
            mean_ms,
            jitter_us: jitter_ms * 1e3,
            min_ms: delays_ms.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: delays_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            histogram,
        })
    }
}

/// Per-direction statistics of a record set. Directions with fewer than two
/// messages are reported as errors.
pub fn stats_report(records: &[DelayRecord]) -> BTreeMap<Direction, Result<DelayStats, NetemError>> {
    let mut by_dir: BTreeMap<Direction, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_dir.entry(r.direction).or_default().push(r.delay_us / 1e3);
    }
    for d in [Direction::Request, Direction::Response] {
        by_dir.entry(d).or_default();
    }
    by_dir.into_iter().map(|(d, v)| (d, DelayStats::from_delays(&v))).collect()
}

pub fn write_records_csv(records: &[DelayRecord], path: &Path) -> Result<(), NetemError> {
    let io = |e: csv::Error| NetemError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in records {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| NetemError::Io(e.to_string()))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<DelayRecord>, NetemError> {
    let io = |e: csv::Error| NetemError::Io(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_message_example() {
        let s = DelayStats::from_delays(&[5.0, 7.0]).unwrap();
        assert_eq!(s.mean_ms, 6.0);
        assert_eq!(s.jitter_us, 2000.0);
        assert_eq!((s.min_ms, s.max_ms), (5.0, 7.0));
        assert_eq!(s.histogram.total(), 2);
    }

    #[test]
    fn constant_delays_have_no_jitter() {
        let s = DelayStats::from_delays(&[3.25; 50]).unwrap();
        assert_eq!(s.jitter_us, 0.0);
        assert_eq!(s.histogram.bins.len(), 1);
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(DelayStats::from_delays(&[1.0]), Err(NetemError::InsufficientSamples(1)));
    }

    #[test]
    fn report_splits_directions() {
        let rec = |direction, msg_index, delay_us| DelayRecord {
            direction,
            msg_index,
            bytes: 12,
            arrival_us: 0.0,
            release_us: delay_us,
            delay_us,
        };
        let records = vec![
            rec(Direction::Request, 0, 1000.0),
            rec(Direction::Response, 0, 4000.0),
            rec(Direction::Request, 1, 3000.0),
        ];
        let report = stats_report(&records);
        assert_eq!(report[&Direction::Request].as_ref().unwrap().mean_ms, 2.0);
        assert!(report[&Direction::Response].is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let records = vec![DelayRecord {
            direction: Direction::Response,
            msg_index: 3,
            bytes: 21,
            arrival_us: 10.5,
            release_us: 2050.25,
            delay_us: 2039.75,
        }];
        write_records_csv(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("direction,msg_index,bytes,arrival_us,release_us,delay_us"));
        assert_eq!(read_records_csv(&path).unwrap(), records);
    }
}
