//! CSV for point sets and weight curves. `.` decimals, `\n` line
//! endings, no quoting.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, WeightingScheme};

pub const WEIGHTS_HEADER: &str = "t,beta,alpha_bar,snr,weight";

/// Points with optional per-point mode labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointTable {
    pub points: Vec<[f64; 2]>,
    pub labels: Option<Vec<usize>>,
}

impl PointTable {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points, labels: None }
    }

    pub fn labelled(points: Vec<[f64; 2]>, labels: Vec<usize>) -> Self {
        Self {
            points,
            labels: Some(labels),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match &self.labels {
            Some(labels) => {
                s.push_str("x,y,mode\n");
                for (p, l) in self.points.iter().zip(labels) {
                    writeln!(s, "{:e},{:e},{l}", p[0], p[1]).unwrap();
                }
            }
            None => {
                s.push_str("x,y\n");
                for p in &self.points {
                    writeln!(s, "{:e},{:e}", p[0], p[1]).unwrap();
                }
            }
        }
        s
    }

    /// Parses `x,y` or `x,y,mode`; row numbers in errors count the header as
    /// row 1.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = ::csv::ReaderBuilder::new()
            .trim(::csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| parse_error(1, e))?.clone();
        let labelled = match header.iter().collect::<Vec<_>>().as_slice() {
            ["x", "y"] => false,
            ["x", "y", "mode"] => true,
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header `x,y` or `x,y,mode`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
                })
            }
        };
        let want = if labelled { 3 } else { 2 };
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_error(line, e)
            })?;
            let n = record.position().map_or(0, |p| p.line() as usize);
            if record.len() != want {
                return Err(Error::Parse {
                    line: n,
                    msg: format!("expected {want} fields, got {}", record.len()),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    line: n,
                    msg: format!("bad number `{s}`"),
                })
            };
            points.push([num(&record[0])?, num(&record[1])?]);
            if labelled {
                labels.push(record[2].parse::<usize>().map_err(|e| parse_error(n, e))?);
            }
        }
        Ok(Self {
            points,
            labels: labelled.then_some(labels),
        })
    }
}

fn parse_error(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

/// One row per timestep: `t,beta,alpha_bar,snr,weight`.
pub fn weights_csv(schedule: &NoiseSchedule, scheme: &WeightingScheme) -> Result<String> {
    let curve = scheme.curve(schedule)?;
    let mut s = String::from(WEIGHTS_HEADER);
    s.push('\n');
    for (i, w) in curve.iter().enumerate() {
        let t = i + 1;
        writeln!(
            s,
            "{t},{:e},{:e},{:e},{:e}",
            schedule.beta(t),
            schedule.alpha_bar(t),
            schedule.snrs()[i],
            w
        )
        .unwrap();
    }
    Ok(s)
}
