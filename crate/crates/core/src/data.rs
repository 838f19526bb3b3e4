//! Ring-of-Gaussians datasets and their text file format.
//!
//! A source ring places modes at angles `2πj/n`; a limited target keeps a
//! subset of those angles and moves them to another radius. Angle plays the
//! role of a shared feature, radius the domain-specific one.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::Tensor;

pub const DATA_HEADER: &str = "SDFT-DATA v1";
const DATA_MAGIC: &str = "SDFT-DATA";

/// Points farther than this many standard deviations are redrawn.
pub const TRUNCATION_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub angle: f64,
    pub radius: f64,
    pub std: f64,
}

impl Mode {
    pub fn center(&self) -> [f64; 2] {
        [self.radius * self.angle.cos(), self.radius * self.angle.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub modes: Vec<Mode>,
    pub domain: Domain,
}

/// Parameters of a ring dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingSpec {
    pub n_modes: usize,
    pub radius: f64,
    pub std: f64,
}

impl Default for RingSpec {
    fn default() -> Self {
        Self {
            n_modes: 8,
            radius: 1.0,
            std: 0.05,
        }
    }
}

impl RingSpec {
    pub fn modes(&self) -> Vec<Mode> {
        (0..self.n_modes)
            .map(|j| Mode {
                angle: TAU * j as f64 / self.n_modes as f64,
                radius: self.radius,
                std: self.std,
            })
            .collect()
    }
}

fn draw(modes: &[Mode], n_points: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let label = i % modes.len();
        let mode = &modes[label];
        let [cx, cy] = mode.center();
        let (dx, dy) = loop {
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            if dx.hypot(dy) <= TRUNCATION_SIGMAS {
                break (dx, dy);
            }
        };
        points.push([cx + mode.std * dx, cy + mode.std * dy]);
        labels.push(label);
    }
    (points, labels)
}

impl ToyDataset {
    /// Isotropic Gaussians at `n_modes` evenly spaced angles, points assigned
    /// to modes round-robin.
    pub fn ring(spec: RingSpec, n_points: usize, seed: u64) -> Result<Self> {
        if spec.n_modes == 0 || !(spec.std > 0.0) {
            return Err(Error::Parameter("ring needs n_modes >= 1 and std > 0".into()));
        }
        if n_points < spec.n_modes {
            return Err(Error::Parameter(format!(
                "{n_points} points cannot cover {} modes",
                spec.n_modes
            )));
        }
        let modes = spec.modes();
        let (points, labels) = draw(&modes, n_points, seed);
        Ok(Self {
            points,
            labels,
            modes,
            domain: Domain::Source,
        })
    }

    /// Keeps a subset of the source angles at a new radius.
    pub fn limited_target(
        source: RingSpec,
        target_radius: f64,
        keep_modes: &[usize],
        n_points: usize,
        seed: u64,
    ) -> Result<Self> {
        if keep_modes.is_empty() {
            return Err(Error::Parameter("keep set must not be empty".into()));
        }
        let mut keep = keep_modes.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if let Some(&bad) = keep.iter().find(|&&m| m >= source.n_modes) {
            return Err(Error::Parameter(format!(
                "mode {bad} not among {} source modes",
                source.n_modes
            )));
        }
        if !(target_radius > 0.0) || !(source.std > 0.0) {
            return Err(Error::Parameter("target radius and std must be positive".into()));
        }
        if n_points < keep.len() {
            return Err(Error::Parameter(format!(
                "{n_points} points cannot cover {} modes",
                keep.len()
            )));
        }
        let all = source.modes();
        let modes: Vec<Mode> = keep
            .iter()
            .map(|&m| Mode {
                radius: target_radius,
                ..all[m]
            })
            .collect();
        let (points, labels) = draw(&modes, n_points, seed);
        Ok(Self {
            points,
            labels,
            modes,
            domain: Domain::Target,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.points).expect("rows of width 2")
    }

    /// Gathers rows by index into a `n × 2` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let values = indices.iter().flat_map(|&i| self.points[i]).collect();
        Tensor::matrix(indices.len(), 2, values).expect("shape matches")
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.labels.len() {
            return Err(Error::Contract("points and labels differ in length".into()));
        }
        if self
            .modes
            .windows(2)
            .any(|w| w[1].angle <= w[0].angle)
            || self.modes.iter().any(|m| !(0.0..TAU).contains(&m.angle))
        {
            return Err(Error::Contract("mode angles must increase within [0, 2π)".into()));
        }
        for (i, (p, &l)) in self.points.iter().zip(&self.labels).enumerate() {
            let mode = self
                .modes
                .get(l)
                .ok_or_else(|| Error::Contract(format!("point {i} has unknown mode {l}")))?;
            let [cx, cy] = mode.center();
            if (p[0] - cx).hypot(p[1] - cy) > TRUNCATION_SIGMAS * mode.std * (1.0 + 1e-12) {
                return Err(Error::Contract(format!("point {i} is far from mode {l}")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{DATA_HEADER}").unwrap();
        writeln!(s, "domain {}", self.domain.tag()).unwrap();
        writeln!(s, "count {} {}", self.modes.len(), self.points.len()).unwrap();
        for (i, m) in self.modes.iter().enumerate() {
            writeln!(s, "mode {i} {:.16e} {:.16e} {:.16e}", m.angle, m.radius, m.std).unwrap();
        }
        for (p, l) in self.points.iter().zip(&self.labels) {
            writeln!(s, "pt {:.16e} {:.16e} {l}", p[0], p[1]).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };

        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?;
        if header != DATA_HEADER {
            if let Some(version) = header.strip_prefix(DATA_MAGIC) {
                return Err(Error::Incompatible(format!(
                    "dataset version `{}` is not supported (expected `{DATA_HEADER}`)",
                    version.trim()
                )));
            }
            return Err(parse_err(1, format!("expected header `{DATA_HEADER}`")));
        }

        let mut domain = Domain::Source;
        let mut counts: Option<(usize, usize)> = None;
        let mut modes = Vec::new();
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut last_line = 1;
        for (n, line) in lines {
            last_line = n;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                fields
                    .get(i)
                    .ok_or_else(|| parse_err(n, "missing field".into()))?
                    .parse::<f64>()
                    .map_err(|e| parse_err(n, e.to_string()))
            };
            let idx = |i: usize| -> Result<usize> {
                fields
                    .get(i)
                    .ok_or_else(|| parse_err(n, "missing field".into()))?
                    .parse::<usize>()
                    .map_err(|e| parse_err(n, e.to_string()))
            };
            match fields.first().copied() {
                None => continue,
                Some("domain") if fields.len() == 2 => {
                    domain = match fields[1] {
                        "source" => Domain::Source,
                        "target" => Domain::Target,
                        other => return Err(parse_err(n, format!("unknown domain `{other}`"))),
                    };
                }
                Some("count") if fields.len() == 3 => counts = Some((idx(1)?, idx(2)?)),
                Some("mode") if fields.len() == 5 => {
                    if !points.is_empty() {
                        return Err(parse_err(n, "mode line after points".into()));
                    }
                    if idx(1)? != modes.len() {
                        return Err(parse_err(n, "mode indices must be consecutive".into()));
                    }
                    modes.push(Mode {
                        angle: num(2)?,
                        radius: num(3)?,
                        std: num(4)?,
                    });
                }
                Some("pt") if fields.len() == 4 => {
                    let label = idx(3)?;
                    if label >= modes.len() {
                        return Err(parse_err(n, format!("unknown mode {label}")));
                    }
                    points.push([num(1)?, num(2)?]);
                    labels.push(label);
                }
                Some(_) => return Err(parse_err(n, format!("malformed line `{line}`"))),
            }
        }
        let (n_modes, n_points) =
            counts.ok_or_else(|| parse_err(last_line, "missing `count` line".into()))?;
        if modes.len() != n_modes || points.len() != n_points {
            return Err(parse_err(
                last_line,
                format!(
                    "truncated: expected {n_modes} modes and {n_points} points, found {} and {}",
                    modes.len(),
                    points.len()
                ),
            ));
        }
        let ds = Self {
            points,
            labels,
            modes,
            domain,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Index of the mode whose center is closest to `p`.
pub fn nearest_mode(p: [f64; 2], modes: &[Mode]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, m) in modes.iter().enumerate() {
        let [cx, cy] = m.center();
        let d = (p[0] - cx).hypot(p[1] - cy);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}
