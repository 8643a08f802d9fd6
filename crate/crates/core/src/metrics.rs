//! Motion evaluation: group-restricted L1 and DTW distances and jerk.
//!
//! Sequences are `T x N x 3` joint positions. In every two-sequence metric the
//! first argument is the prediction and the second the ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSchema;

/// Longest sequence `dtw_oracle` will enumerate.
pub const ORACLE_MAX_LEN: usize = 8;

fn check_group(group: &[usize], n_joints: usize) -> Result<()> {
    if group.is_empty() {
        return Err(Error::EmptyGroup("joint group has no members".into()));
    }
    if let Some(&j) = group.iter().find(|&&j| j >= n_joints) {
        return Err(Error::DimensionMismatch(format!("joint {j} out of range for {n_joints} joints")));
    }
    Ok(())
}

/// Stacks the group's coordinates per frame: `T x 3|group|`.
fn gather(j: &Array3<f64>, group: &[usize]) -> Array2<f64> {
    let t = j.dim().0;
    let mut out = Array2::zeros((t, 3 * group.len()));
    for (k, &g) in group.iter().enumerate() {
        for a in 0..3 {
            out.column_mut(3 * k + a).assign(&j.slice(ndarray::s![.., g, a]));
        }
    }
    out
}

/// Mean over frames of the summed L1 distance over the group's joints.
pub fn l1_metric(j: &Array3<f64>, j_hat: &Array3<f64>, group: &[usize]) -> Result<f64> {
    if j.dim() != j_hat.dim() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", j.dim(), j_hat.dim())));
    }
    let (t, n, _) = j.dim();
    check_group(group, n)?;
    if t == 0 {
        return Err(Error::EmptySequence("motion has no frames".into()));
    }
    let mut sum = 0.0;
    for (fa, fb) in j.outer_iter().zip(j_hat.outer_iter()) {
        for &g in group {
            for a in 0..3 {
                sum += (fa[[g, a]] - fb[[g, a]]).abs();
            }
        }
    }
    Ok(sum / t as f64)
}

fn euclid(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn local_costs(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut c = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (k, rb) in b.rows().into_iter().enumerate() {
            c[[i, k]] = euclid(ra, rb);
        }
    }
    c
}

/// Accumulated cost of the cheapest boundary-matched monotone alignment with
/// steps (1,0), (0,1), (1,1), before normalization.
pub fn dtw_accumulated(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    if n == 0 || m == 0 {
        return Err(Error::EmptySequence("DTW needs non-empty sequences".into()));
    }
    let c = local_costs(a, b);
    let mut d = Array2::from_elem((n, m), f64::INFINITY);
    for i in 0..n {
        for k in 0..m {
            let best = if i == 0 && k == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 {
                    best = best.min(d[[i - 1, k]]);
                }
                if k > 0 {
                    best = best.min(d[[i, k - 1]]);
                }
                if i > 0 && k > 0 {
                    best = best.min(d[[i - 1, k - 1]]);
                }
                best
            };
            d[[i, k]] = best + c[[i, k]];
        }
    }
    Ok(d[[n - 1, m - 1]])
}

fn dtw_inputs(j: &Array3<f64>, j_hat: &Array3<f64>, group: &[usize]) -> Result<(Array2<f64>, Array2<f64>)> {
    let (n, nh) = (j.dim().1, j_hat.dim().1);
    if n != nh {
        return Err(Error::DimensionMismatch(format!("{n} vs {nh} joints")));
    }
    check_group(group, n)?;
    if j.dim().0 == 0 || j_hat.dim().0 == 0 {
        return Err(Error::EmptySequence("DTW needs non-empty sequences".into()));
    }
    Ok((gather(j, group), gather(j_hat, group)))
}

/// DTW distance over the group's stacked coordinates, divided by the ground
/// truth length.
pub fn dtw_distance(j: &Array3<f64>, j_hat: &Array3<f64>, group: &[usize]) -> Result<f64> {
    let (a, b) = dtw_inputs(j, j_hat, group)?;
    Ok(dtw_accumulated(a.view(), b.view())? / b.nrows() as f64)
}

/// Exhaustive-search reference for [`dtw_distance`] on short sequences.
pub fn dtw_oracle(j: &Array3<f64>, j_hat: &Array3<f64>, group: &[usize]) -> Result<f64> {
    let (t, th) = (j.dim().0, j_hat.dim().0);
    if t > ORACLE_MAX_LEN || th > ORACLE_MAX_LEN {
        return Err(Error::TooLong(format!("{t} and {th} frames, limit {ORACLE_MAX_LEN}")));
    }
    let (a, b) = dtw_inputs(j, j_hat, group)?;
    let c = local_costs(a.view(), b.view());
    let (n, m) = c.dim();
    // Depth-first over every path, accumulating costs from the start cell.
    fn walk(c: &Array2<f64>, i: usize, k: usize, acc: f64, best: &mut f64) {
        let acc = acc + c[[i, k]];
        let (n, m) = c.dim();
        if i == n - 1 && k == m - 1 {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < n {
            walk(c, i + 1, k, acc, best);
        }
        if k + 1 < m {
            walk(c, i, k + 1, acc, best);
        }
        if i + 1 < n && k + 1 < m {
            walk(c, i + 1, k + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(&c, 0, 0, 0.0, &mut best);
    debug_assert!(n > 0 && m > 0);
    Ok(best / m as f64)
}

/// Mean L2 norm of the third forward difference over frames and joints.
pub fn jerk(j: &Array3<f64>) -> Result<f64> {
    let (t, n, _) = j.dim();
    if t < 4 {
        return Err(Error::TooShort(format!("jerk needs at least 4 frames, got {t}")));
    }
    if n == 0 {
        return Err(Error::EmptyGroup("motion has no joints".into()));
    }
    let mut sum = 0.0;
    for k in 0..t - 3 {
        for g in 0..n {
            let mut sq = 0.0;
            for a in 0..3 {
                let d = j[[k + 3, g, a]] - 3.0 * j[[k + 2, g, a]] + 3.0 * j[[k + 1, g, a]] - j[[k, g, a]];
                sq += d * d;
            }
            sum += sq.sqrt();
        }
    }
    Ok(sum / ((t - 3) * n) as f64)
}

/// One row of metric values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub l1_all: f64,
    pub l1_ra: f64,
    pub l1_la: f64,
    pub l1_lf: f64,
    pub dtw_all: f64,
    pub dtw_ra: f64,
    pub dtw_la: f64,
    pub dtw_lf: f64,
    pub jerk: f64,
}

impl MetricRow {
    pub const COLUMNS: [&'static str; 9] = ["L1", "L1RA", "L1LA", "L1LF", "DTW", "DTWRA", "DTWLA", "DTWLF", "Jerk"];

    pub fn values(&self) -> [f64; 9] {
        [
            self.l1_all,
            self.l1_ra,
            self.l1_la,
            self.l1_lf,
            self.dtw_all,
            self.dtw_ra,
            self.dtw_la,
            self.dtw_lf,
            self.jerk,
        ]
    }

    fn from_values(v: [f64; 9]) -> Self {
        MetricRow {
            l1_all: v[0],
            l1_ra: v[1],
            l1_la: v[2],
            l1_lf: v[3],
            dtw_all: v[4],
            dtw_ra: v[5],
            dtw_la: v[6],
            dtw_lf: v[7],
            jerk: v[8],
        }
    }
}

/// Mean metrics over pieces plus the per-piece breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub mean: MetricRow,
    pub per_piece: BTreeMap<String, MetricRow>,
}

/// All metrics for one predicted/ground-truth pair.
pub fn piece_metrics(pred: &Array3<f64>, gt: &Array3<f64>, schema: &SkeletonSchema) -> Result<MetricRow> {
    let all = schema.all_joints();
    let e = &schema.eval_groups;
    Ok(MetricRow {
        l1_all: l1_metric(pred, gt, &all)?,
        l1_ra: l1_metric(pred, gt, &e.ra)?,
        l1_la: l1_metric(pred, gt, &e.la)?,
        l1_lf: l1_metric(pred, gt, &e.lf)?,
        dtw_all: dtw_distance(pred, gt, &all)?,
        dtw_ra: dtw_distance(pred, gt, &e.ra)?,
        dtw_la: dtw_distance(pred, gt, &e.la)?,
        dtw_lf: dtw_distance(pred, gt, &e.lf)?,
        jerk: jerk(pred)?,
    })
}

/// Evaluates every piece and averages the per-piece values with equal
/// weight. Both corpora must contain exactly the same piece ids.
pub fn evaluate(
    pred: &BTreeMap<String, Array3<f64>>,
    gt: &BTreeMap<String, Array3<f64>>,
    schema: &SkeletonSchema,
) -> Result<MetricReport> {
    let pk: Vec<_> = pred.keys().collect();
    let gk: Vec<_> = gt.keys().collect();
    if pk != gk {
        let only_pred: Vec<_> = pk.iter().filter(|k| !gt.contains_key(k.as_str())).collect();
        let only_gt: Vec<_> = gk.iter().filter(|k| !pred.contains_key(k.as_str())).collect();
        return Err(Error::PieceMismatch(format!(
            "only in predictions: {only_pred:?}; only in ground truth: {only_gt:?}"
        )));
    }
    if pred.is_empty() {
        return Err(Error::PieceMismatch("no pieces to evaluate".into()));
    }
    let mut per_piece = BTreeMap::new();
    let mut sums = [0.0; 9];
    for (id, p) in pred {
        let row = piece_metrics(p, &gt[id], schema)?;
        for (s, v) in sums.iter_mut().zip(row.values()) {
            *s += v;
        }
        per_piece.insert(id.clone(), row);
    }
    let n = pred.len() as f64;
    Ok(MetricReport {
        mean: MetricRow::from_values(sums.map(|s| s / n)),
        per_piece,
    })
}

impl MetricReport {
    /// Aligned plain-text table, one row per piece followed by the mean.
    pub fn to_table(&self) -> String {
        let name_w = self.per_piece.keys().map(String::len).chain([5]).max().unwrap_or(5);
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "piece");
        for c in MetricRow::COLUMNS {
            let _ = write!(out, " {c:>10}");
        }
        out.push('\n');
        let mut line = |name: &str, row: &MetricRow| {
            let _ = write!(out, "{name:<name_w$}");
            for v in row.values() {
                let _ = write!(out, " {v:>10.4}");
            }
            out.push('\n');
        };
        for (id, row) in &self.per_piece {
            line(id, row);
        }
        line("mean", &self.mean);
        out
    }

    /// Writes one SVG line plot per metric, with pieces on the x axis.
    pub fn write_plots(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        use plotters::prelude::*;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let pieces: Vec<&String> = self.per_piece.keys().collect();
        let mut written = Vec::new();
        for (col, name) in MetricRow::COLUMNS.iter().enumerate() {
            let ys: Vec<f64> = self.per_piece.values().map(|r| r.values()[col]).collect();
            let path = dir.join(format!("{}.svg", name.to_lowercase()));
            let ymax = ys.iter().copied().fold(0.0f64, f64::max).max(1e-12) * 1.1;
            let plot = || -> std::result::Result<(), Box<dyn std::error::Error>> {
                let root = SVGBackend::new(&path, (640, 400)).into_drawing_area();
                root.fill(&WHITE)?;
                let xmax = pieces.len().saturating_sub(1).max(1) as f64;
                let mut chart = ChartBuilder::on(&root)
                    .caption(format!("{name} per piece (mean {:.4})", self.mean.values()[col]), ("sans-serif", 18))
                    .margin(10)
                    .x_label_area_size(30)
                    .y_label_area_size(50)
                    .build_cartesian_2d(0.0..xmax, 0.0..ymax)?;
                chart.configure_mesh().x_desc("piece index").y_desc(*name).draw()?;
                chart.draw_series(LineSeries::new(ys.iter().enumerate().map(|(i, &y)| (i as f64, y)), &BLUE))?;
                root.present()?;
                Ok(())
            };
            plot().map_err(|e| Error::malformed(&path, e.to_string()))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Adds i.i.d. Gaussian noise to every coordinate.
pub fn add_noise(j: &Array3<f64>, sigma: f64, rng: &mut impl rand::Rng) -> Array3<f64> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    j.mapv(|v| v + normal.sample(rng))
}

/// Convenience: collects a time-major view for a single joint trajectory.
pub fn trajectory(values: &[[f64; 3]]) -> Array3<f64> {
    let mut out = Array3::zeros((values.len(), 1, 3));
    for (mut row, v) in out.axis_iter_mut(Axis(0)).zip(values) {
        row.row_mut(0).assign(&ndarray::arr1(v));
    }
    out
}
