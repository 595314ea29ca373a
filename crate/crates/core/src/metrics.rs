//! Depth accuracy with median scaling, and absolute trajectory error.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose6D;
use crate::imaging::write_atomic;

/// Standard single-view depth error measures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3
        )
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Pixels with positive ground truth (and a set mask entry, if a mask is given).
fn validity(gt: &[f64], mask: Option<&[bool]>) -> Vec<bool> {
    gt.iter()
        .enumerate()
        .map(|(i, &g)| g > 0.0 && mask.is_none_or(|m| m[i]))
        .collect()
}

/// Scales `pred` by `median(gt) / median(pred)` over the valid pixels.
/// Returns the scaled depths and the factor.
pub fn median_align(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<(Vec<f64>, f64)> {
    check_lengths(pred, gt, mask)?;
    let valid = validity(gt, mask);
    let mut p: Vec<f64> = pred.iter().zip(&valid).filter(|(_, v)| **v).map(|(p, _)| *p).collect();
    let mut g: Vec<f64> = gt.iter().zip(&valid).filter(|(_, v)| **v).map(|(g, _)| *g).collect();
    if p.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let mp = median(&mut p);
    if !(mp > 0.0) {
        return Err(Error::DegenerateDepth(format!("median predicted depth is {mp}")));
    }
    let scale = median(&mut g) / mp;
    Ok((pred.iter().map(|v| v * scale).collect(), scale))
}

fn check_lengths(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<()> {
    if pred.len() != gt.len() || mask.is_some_and(|m| m.len() != gt.len()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} values, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Depth metrics over pixels with `0 < gt < max_depth_cap`.
pub fn depth_metrics(
    pred: &[f64],
    gt: &[f64],
    mask: Option<&[bool]>,
    align: bool,
    max_depth_cap: Option<f64>,
) -> Result<DepthMetrics> {
    check_lengths(pred, gt, mask)?;
    let mut valid = validity(gt, mask);
    if let Some(cap) = max_depth_cap {
        for (v, g) in valid.iter_mut().zip(gt) {
            *v &= *g < cap;
        }
    }
    if !valid.iter().any(|v| *v) {
        return Err(Error::NoValidPixels);
    }
    let pred = if align {
        median_align(pred, gt, Some(&valid))?.0
    } else {
        pred.to_vec()
    };
    let mut n = 0.0;
    let mut acc = [0.0; 7];
    for i in (0..gt.len()).filter(|&i| valid[i]) {
        let (p, g) = (pred[i], gt[i]);
        let ratio = (p / g).max(g / p);
        n += 1.0;
        acc[0] += (p - g).abs() / g;
        acc[1] += (p - g) * (p - g) / g;
        acc[2] += (p - g) * (p - g);
        acc[3] += (p.ln() - g.ln()).powi(2);
        for (k, slot) in acc[4..].iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *slot += 1.0;
            }
        }
    }
    Ok(DepthMetrics {
        abs_rel: acc[0] / n,
        sq_rel: acc[1] / n,
        rmse: (acc[2] / n).sqrt(),
        rmse_log: (acc[3] / n).sqrt(),
        delta1: acc[4] / n,
        delta2: acc[5] / n,
        delta3: acc[6] / n,
    })
}

/// Camera-to-world poses of consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    poses: Vec<Matrix4<f64>>,
}

impl Trajectory {
    pub fn new(poses: Vec<Matrix4<f64>>) -> Result<Self> {
        if poses.len() < 2 {
            return Err(Error::LengthMismatch(format!("a trajectory needs at least 2 poses, got {}", poses.len())));
        }
        Ok(Trajectory { poses })
    }

    /// Chains relative motions: `rel[i]` maps frame `i` points into frame `i + 1`.
    pub fn from_relative(rel: &[Pose6D]) -> Result<Self> {
        let mut poses = vec![Matrix4::identity()];
        for p in rel {
            let last = *poses.last().expect("non-empty");
            poses.push(last * p.inverse().to_matrix());
        }
        Trajectory::new(poses)
    }

    pub fn poses(&self) -> &[Matrix4<f64>] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|m| m.fixed_view::<3, 1>(0, 3).into_owned()).collect()
    }

    /// Parses one row-major 3×4 matrix (12 numbers) per non-empty line.
    pub fn parse_kitti(text: &str, path: &Path) -> Result<Self> {
        let mut poses = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len();
            if line.trim().is_empty() {
                continue;
            }
            let mut values = Vec::with_capacity(12);
            let mut col = 0;
            for token in line.split_ascii_whitespace() {
                let at = start + line[col..].find(token).map_or(col, |p| p + col);
                col = at - start + token.len();
                let v: f64 = token.parse().map_err(|_| Error::Format {
                    path: path.to_path_buf(),
                    offset: at,
                    message: format!("expected a number, found {token:?}"),
                })?;
                values.push(v);
            }
            if values.len() != 12 {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: start,
                    message: format!("expected 12 numbers per line, found {}", values.len()),
                });
            }
            let mut m = Matrix4::identity();
            for r in 0..3 {
                for c in 0..4 {
                    m[(r, c)] = values[4 * r + c];
                }
            }
            poses.push(m);
        }
        Trajectory::new(poses).map_err(|_| Error::Format {
            path: path.to_path_buf(),
            offset,
            message: "a trajectory needs at least 2 poses".into(),
        })
    }

    pub fn read_kitti(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Trajectory::parse_kitti(&text, path)
    }

    pub fn to_kitti(&self) -> String {
        let mut out = String::new();
        for m in &self.poses {
            out.push_str(&kitti_line(m));
            out.push('\n');
        }
        out
    }

    pub fn write_kitti(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_kitti().as_bytes())
    }
}

/// The top three rows of `m` as 12 space-separated numbers.
pub fn kitti_line(m: &Matrix4<f64>) -> String {
    let mut s = String::new();
    for r in 0..3 {
        for c in 0..4 {
            if !s.is_empty() {
                s.push(' ');
            }
            write!(s, "{}", m[(r, c)]).expect("writing to a String");
        }
    }
    s
}

/// Mean and population standard deviation of per-window errors.
#[derive(Clone, Debug, PartialEq)]
pub struct AteResult {
    pub mean: f64,
    pub std: f64,
    pub per_window: Vec<f64>,
}

/// Similarity `(s, R, t)` minimizing `Σ‖yᵢ − (s·R·xᵢ + t)‖²`.
pub fn align_similarity(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<Vector3<f64>>() / n;
    let my = y.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        cov += db * da.transpose();
        var_x += da.norm_squared();
    }
    cov /= n;
    var_x /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * s[(i, i)]).sum();
    let scale = if var_x > 0.0 { trace / var_x } else { 0.0 };
    let t = my - scale * r * mx;
    (scale, r, t)
}

/// RMSE of translations after similarity alignment of one window.
fn window_error(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    let (s, r, t) = align_similarity(pred, gt);
    let sq: f64 = pred.iter().zip(gt).map(|(p, g)| (s * r * p + t - g).norm_squared()).sum();
    (sq / pred.len() as f64).sqrt()
}

/// Absolute trajectory error over every window of `snippet_len` frames (stride 1).
pub fn ate(pred: &Trajectory, gt: &Trajectory, snippet_len: usize) -> Result<AteResult> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "predicted trajectory has {} poses, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if snippet_len < 2 || pred.len() < snippet_len {
        return Err(Error::LengthMismatch(format!(
            "{} poses cannot form windows of {snippet_len}",
            pred.len()
        )));
    }
    let (p, g) = (pred.positions(), gt.positions());
    let per_window: Vec<f64> = (0..=p.len() - snippet_len)
        .map(|i| window_error(&p[i..i + snippet_len], &g[i..i + snippet_len]))
        .collect();
    let n = per_window.len() as f64;
    let mean = per_window.iter().sum::<f64>() / n;
    let std = (per_window.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(AteResult { mean, std, per_window })
}
