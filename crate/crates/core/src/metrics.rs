//! Point-cloud metrics: mode coverage, RBF-kernel MMD, angular faithfulness
//! of translations and angular alignment of paired samples.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Mode;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_HITS: usize = 5;

/// Points closer than this to the origin carry no angle.
pub const ORIGIN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub coverage: f64,
    pub per_mode_counts: Vec<usize>,
}

fn check_nonempty(points: &[[f64; 2]], what: &str) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Contract(format!("{what}: empty sample set")));
    }
    Ok(())
}

fn coverage_from_counts(counts: Vec<usize>, min_hits: usize) -> Coverage {
    let hits = counts.iter().filter(|&&c| c >= min_hits.max(1)).count();
    Coverage {
        coverage: hits as f64 / counts.len().max(1) as f64,
        per_mode_counts: counts,
    }
}

/// A mode is hit when at least `min_hits` samples lie within
/// `capture_radius` of its center.
pub fn mode_coverage(samples: &[[f64; 2]], modes: &[Mode], capture_radius: f64, min_hits: usize) -> Result<Coverage> {
    check_nonempty(samples, "mode_coverage")?;
    if !(capture_radius >= 0.0) {
        return Err(Error::Parameter(format!("capture radius must be >= 0, got {capture_radius}")));
    }
    let centers: Vec<[f64; 2]> = modes.iter().map(Mode::center).collect();
    let counts = centers
        .iter()
        .map(|c| {
            samples
                .iter()
                .filter(|p| (p[0] - c[0]).hypot(p[1] - c[1]) < capture_radius)
                .count()
        })
        .collect();
    Ok(coverage_from_counts(counts, min_hits))
}

/// Coverage judged on angle alone: a sample counts toward a mode when its
/// direction lies within `capture_angle` of the mode's angle. Radius is
/// ignored, so source and target rings share the same mode table.
pub fn angular_coverage(samples: &[[f64; 2]], modes: &[Mode], capture_angle: f64, min_hits: usize) -> Result<Coverage> {
    check_nonempty(samples, "angular_coverage")?;
    if !(capture_angle >= 0.0) {
        return Err(Error::Parameter(format!("capture angle must be >= 0, got {capture_angle}")));
    }
    let angles: Vec<f64> = samples.iter().filter_map(|&p| angle_of(p)).collect();
    let counts = modes
        .iter()
        .map(|m| angles.iter().filter(|&&a| wrapped_distance(a, m.angle) < capture_angle).count())
        .collect();
    Ok(coverage_from_counts(counts, min_hits))
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Median of all pairwise distances in the pooled set.
pub fn median_heuristic(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    let pooled: Vec<[f64; 2]> = a.iter().chain(b).copied().collect();
    if pooled.len() < 2 {
        return Err(Error::Contract("median heuristic needs two points".into()));
    }
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(*m)
}

/// Unbiased MMD² with kernel `exp(−‖x−y‖²/(2h²))`. Can be negative; see
/// [`mmd_rbf`] for the clamped value.
pub fn mmd_rbf_unbiased(a: &[[f64; 2]], b: &[[f64; 2]], bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::Parameter(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract("unbiased MMD needs at least two points per set".into()));
    }
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |x: [f64; 2], y: [f64; 2]| (-g * sq_dist(x, y)).exp();
    let within = |s: &[[f64; 2]]| {
        let mut total = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                total += k(s[i], s[j]);
            }
        }
        2.0 * total / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for &x in a {
        for &y in b {
            cross += k(x, y);
        }
    }
    cross /= (a.len() * b.len()) as f64;
    Ok(within(a) + within(b) - 2.0 * cross)
}

/// MMD² clamped at zero; `bandwidth = None` uses the median heuristic.
pub fn mmd_rbf(a: &[[f64; 2]], b: &[[f64; 2]], bandwidth: Option<f64>) -> Result<f64> {
    let h = match bandwidth {
        Some(h) => h,
        None => median_heuristic(a, b)?,
    };
    Ok(mmd_rbf_unbiased(a, b, h)?.max(0.0))
}

pub fn angle_of(p: [f64; 2]) -> Option<f64> {
    (p[0].hypot(p[1]) > ORIGIN_EPS).then(|| p[1].atan2(p[0]))
}

/// Angular distance folded into `[0, π]`.
pub fn wrapped_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        2.0 * PI - d
    } else {
        d
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Faithfulness {
    pub angle_median: f64,
    pub radius_median: f64,
    /// Pairs skipped for the angle median because a point sat at the origin.
    pub excluded: usize,
}

/// Median angular change and median signed radius change per pair.
pub fn faithfulness(inputs: &[[f64; 2]], outputs: &[[f64; 2]]) -> Result<Faithfulness> {
    if inputs.len() != outputs.len() {
        return Err(Error::dims("faithfulness", &[inputs.len()], &[outputs.len()]));
    }
    check_nonempty(inputs, "faithfulness")?;
    let mut angles = Vec::with_capacity(inputs.len());
    let mut radii = Vec::with_capacity(inputs.len());
    let mut excluded = 0;
    for (&p, &q) in inputs.iter().zip(outputs) {
        radii.push(q[0].hypot(q[1]) - p[0].hypot(p[1]));
        match (angle_of(p), angle_of(q)) {
            (Some(a), Some(b)) => angles.push(wrapped_distance(a, b)),
            _ => excluded += 1,
        }
    }
    Ok(Faithfulness {
        angle_median: median(&mut angles).unwrap_or(f64::NAN),
        radius_median: median(&mut radii).expect("non-empty"),
        excluded,
    })
}

/// Median wrapped angular distance between paired samples.
pub fn alignment(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims("alignment", &[a.len()], &[b.len()]));
    }
    check_nonempty(a, "alignment")?;
    let mut d: Vec<f64> = a
        .iter()
        .zip(b)
        .filter_map(|(&p, &q)| Some(wrapped_distance(angle_of(p)?, angle_of(q)?)))
        .collect();
    median(&mut d).ok_or_else(|| Error::Contract("alignment: every pair touches the origin".into()))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub coverage: Option<f64>,
    pub per_mode_counts: Option<Vec<usize>>,
    pub min_hits: Option<usize>,
    pub mmd: Option<f64>,
    pub faithfulness_angle_median: Option<f64>,
    pub faithfulness_radius_median: Option<f64>,
    pub alignment_median: Option<f64>,
}

pub const REPORT_HEADER: &str =
    "coverage,per_mode_counts,min_hits,mmd,faithfulness_angle_median,faithfulness_radius_median,alignment_median";

impl MetricReport {
    pub fn csv_row(&self) -> String {
        fn f(v: Option<f64>) -> String {
            v.map(|x| format!("{x:e}")).unwrap_or_default()
        }
        let counts = self
            .per_mode_counts
            .as_ref()
            .map(|c| c.iter().map(usize::to_string).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            f(self.coverage),
            counts,
            self.min_hits.map(|m| m.to_string()).unwrap_or_default(),
            f(self.mmd),
            f(self.faithfulness_angle_median),
            f(self.faithfulness_radius_median),
            f(self.alignment_median)
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{REPORT_HEADER}\n{}\n", self.csv_row())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(c) = self.coverage {
            writeln!(s, "coverage:                  {c:.4}").unwrap();
        }
        if let Some(counts) = &self.per_mode_counts {
            writeln!(s, "per-mode counts:           {counts:?}").unwrap();
        }
        if let Some(m) = self.min_hits {
            writeln!(s, "min hits per mode:         {m}").unwrap();
        }
        if let Some(m) = self.mmd {
            writeln!(s, "mmd^2 (rbf):               {m:.6}").unwrap();
        }
        if let Some(a) = self.faithfulness_angle_median {
            writeln!(s, "median angle change (rad): {a:.4}").unwrap();
        }
        if let Some(r) = self.faithfulness_radius_median {
            writeln!(s, "median radius change:      {r:.4}").unwrap();
        }
        if let Some(a) = self.alignment_median {
            writeln!(s, "median paired angle (rad): {a:.4}").unwrap();
        }
        s
    }
}
