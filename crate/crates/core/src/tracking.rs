//! The 2D feature-tracking matrix: storage, masking, TRK text I/O,
//! centroid registration and rank diagnostics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::svd_sorted;

/// Boolean frames×points grid, row-major. `true` means the cell is observed
/// and currently trusted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    frames: usize,
    points: usize,
    cells: Vec<bool>,
}

impl Mask {
    pub fn filled(frames: usize, points: usize, value: bool) -> Self {
        Mask { frames, points, cells: vec![value; frames * points] }
    }

    pub fn from_fn(frames: usize, points: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(frames * points);
        for i in 0..frames {
            for j in 0..points {
                cells.push(f(i, j));
            }
        }
        Mask { frames, points, cells }
    }

    pub fn from_cells(frames: usize, points: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != frames * points {
            return Err(Error::DimensionMismatch(format!(
                "mask of {frames}x{points} needs {} cells, got {}",
                frames * points,
                cells.len()
            )));
        }
        Ok(Mask { frames, points, cells })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn points(&self) -> usize {
        self.points
    }
    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.points + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i * self.points + j] = v;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn all(&self) -> bool {
        self.cells.iter().all(|&c| c)
    }

    pub fn frame_count(&self, i: usize) -> usize {
        self.cells[i * self.points..(i + 1) * self.points].iter().filter(|&&c| c).count()
    }

    pub fn point_count(&self, j: usize) -> usize {
        (0..self.frames).filter(|&i| self.get(i, j)).count()
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.frames == other.frames && self.points == other.points
    }

    /// Cellwise AND.
    pub fn and(&self, other: &Mask) -> Mask {
        assert!(self.same_shape(other), "mask shapes differ");
        let cells = self.cells.iter().zip(&other.cells).map(|(a, b)| *a && *b).collect();
        Mask { frames: self.frames, points: self.points, cells }
    }

    /// True when every `true` cell of `self` is also `true` in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_shape(other) && self.cells.iter().zip(&other.cells).all(|(a, b)| !*a || *b)
    }

    /// Run-length encoding as alternating run lengths over the row-major
    /// cells, starting with a run of `false` (possibly empty).
    pub fn to_runs(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut cur = false;
        let mut len = 0;
        for &c in &self.cells {
            if c == cur {
                len += 1;
            } else {
                runs.push(len);
                cur = c;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_runs(frames: usize, points: usize, runs: &[usize]) -> Result<Self> {
        let mut cells = Vec::with_capacity(frames * points);
        let mut cur = false;
        for &r in runs {
            cells.extend(std::iter::repeat_n(cur, r));
            cur = !cur;
        }
        Mask::from_cells(frames, points, cells)
    }
}

/// Serialized form of a [`Mask`]: dimensions plus alternating run lengths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRle {
    pub frames: usize,
    pub points: usize,
    /// Alternating runs, starting with `false`.
    pub runs: Vec<usize>,
}

impl From<&Mask> for MaskRle {
    fn from(m: &Mask) -> Self {
        MaskRle { frames: m.frames, points: m.points, runs: m.to_runs() }
    }
}

impl TryFrom<&MaskRle> for Mask {
    type Error = Error;
    fn try_from(r: &MaskRle) -> Result<Mask> {
        Mask::from_runs(r.frames, r.points, &r.runs)
    }
}

/// 2m×n stacked image observations plus an m×n observation mask.
///
/// Rows `2i` and `2i+1` hold the u and v coordinates of frame `i`.
/// Masked-out cells may hold anything and are never read.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingMatrix {
    values: DMatrix<f64>,
    mask: Mask,
}

/// Per-frame image centroids.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidSet {
    pub centroids: Vec<Vector2<f64>>,
}

impl TrackingMatrix {
    pub fn new(values: DMatrix<f64>, mask: Mask) -> Result<Self> {
        let (rows, cols) = values.shape();
        if rows == 0 || rows % 2 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "tracking matrix needs a positive even row count, got {rows}"
            )));
        }
        if cols == 0 {
            return Err(Error::DimensionMismatch("tracking matrix has no points".into()));
        }
        if mask.frames != rows / 2 || mask.points != cols {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{} but values imply {}x{}",
                mask.frames,
                mask.points,
                rows / 2,
                cols
            )));
        }
        Ok(TrackingMatrix { values, mask })
    }

    /// Builds the mask from NaN cells: a point is missing in a frame when
    /// either of its coordinates is NaN.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = values.shape();
        if rows % 2 != 0 {
            return Err(Error::DimensionMismatch(format!("odd row count {rows}")));
        }
        let mask = Mask::from_fn(rows / 2, cols, |i, j| {
            !(values[(2 * i, j)].is_nan() || values[(2 * i + 1, j)].is_nan())
        });
        TrackingMatrix::new(values, mask)
    }

    /// Fully observed matrix.
    pub fn complete(values: DMatrix<f64>) -> Result<Self> {
        let mask = Mask::filled(values.nrows() / 2, values.ncols(), true);
        TrackingMatrix::new(values, mask)
    }

    pub fn frames(&self) -> usize {
        self.mask.frames
    }
    pub fn points(&self) -> usize {
        self.mask.points
    }
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
    pub fn mask(&self) -> &Mask {
        &self.mask
    }
    pub fn is_complete(&self) -> bool {
        self.mask.all()
    }

    /// Same values under a different mask.
    pub fn with_mask(&self, mask: Mask) -> Result<Self> {
        TrackingMatrix::new(self.values.clone(), mask)
    }

    /// Observation of point `j` in frame `i`, if present.
    pub fn point(&self, i: usize, j: usize) -> Option<Vector2<f64>> {
        self.mask
            .get(i, j)
            .then(|| Vector2::new(self.values[(2 * i, j)], self.values[(2 * i + 1, j)]))
    }

    /// Root mean square of the observed coordinates.
    pub fn observed_rms(&self) -> f64 {
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for i in 0..self.frames() {
            for j in 0..self.points() {
                if self.mask.get(i, j) {
                    acc += self.values[(2 * i, j)].powi(2) + self.values[(2 * i + 1, j)].powi(2);
                    cnt += 2;
                }
            }
        }
        if cnt == 0 {
            0.0
        } else {
            (acc / cnt as f64).sqrt()
        }
    }

    /// Renders the matrix in TRK format. Masked-out cells are written as NaN
    /// pairs so the mask survives a round trip.
    pub fn to_trk(&self) -> String {
        let mut out = String::new();
        out.push_str("NRSFM-TRK 1\n");
        let _ = writeln!(out, "frames={} points={}", self.frames(), self.points());
        for row in 0..2 * self.frames() {
            for j in 0..self.points() {
                if j > 0 {
                    out.push(' ');
                }
                if self.mask.get(row / 2, j) {
                    let _ = write!(out, "{:.16e}", self.values[(row, j)]);
                } else {
                    out.push_str("NaN");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Parses TRK text.
pub fn parse_trk(text: &str) -> Result<TrackingMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let perr = |line: usize, msg: String| Error::Parse { line, msg };

    let (ln, magic) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    if magic != "NRSFM-TRK 1" {
        return Err(perr(ln, format!("expected header \"NRSFM-TRK 1\", found {magic:?}")));
    }
    let (ln, dims) = lines.next().ok_or_else(|| perr(2, "missing dimension line".into()))?;
    let (mut m, mut n) = (None, None);
    for tok in dims.split_whitespace() {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| perr(ln, format!("malformed dimension token {tok:?}")))?;
        let v: usize = val.parse().map_err(|_| perr(ln, format!("bad count {val:?}")))?;
        match key {
            "frames" => m = Some(v),
            "points" => n = Some(v),
            _ => return Err(perr(ln, format!("unknown key {key:?}"))),
        }
    }
    let (m, n) = match (m, n) {
        (Some(m), Some(n)) if m > 0 && n > 0 => (m, n),
        _ => return Err(perr(ln, "need positive frames=<m> points=<n>".into())),
    };

    let mut values = DMatrix::zeros(2 * m, n);
    let mut row = 0;
    let mut last_line = ln;
    for (ln, line) in lines {
        last_line = ln;
        if line.is_empty() {
            continue;
        }
        if row == 2 * m {
            return Err(perr(ln, format!("expected {} rows, found more", 2 * m)));
        }
        let mut col = 0;
        for tok in line.split_whitespace() {
            if col == n {
                return Err(perr(ln, format!("expected {n} values, found more")));
            }
            let v = if tok.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| perr(ln, format!("non-numeric token {tok:?}")))?
            };
            values[(row, col)] = v;
            col += 1;
        }
        if col != n {
            return Err(perr(ln, format!("expected {n} values, found {col}")));
        }
        row += 1;
    }
    if row != 2 * m {
        return Err(perr(last_line, format!("expected {} rows, found {row}", 2 * m)));
    }
    TrackingMatrix::from_values(values).map_err(|e| perr(last_line, e.to_string()))
}

pub fn load_tracking(path: impl AsRef<Path>) -> Result<TrackingMatrix> {
    let text = std::fs::read_to_string(path)?;
    parse_trk(&text)
}

/// Subtracts each frame's centroid (mean over observed points) from the
/// observed cells. Masked-out cells are left untouched.
pub fn register_to_centroid(w: &TrackingMatrix) -> Result<(TrackingMatrix, CentroidSet)> {
    let mut values = w.values.clone();
    let mut centroids = Vec::with_capacity(w.frames());
    for i in 0..w.frames() {
        let cnt = w.mask.frame_count(i);
        if cnt == 0 {
            return Err(Error::DegenerateFrame { frame: i });
        }
        let mut c = Vector2::zeros();
        for j in 0..w.points() {
            if w.mask.get(i, j) {
                c[0] += values[(2 * i, j)];
                c[1] += values[(2 * i + 1, j)];
            }
        }
        c /= cnt as f64;
        for j in 0..w.points() {
            if w.mask.get(i, j) {
                values[(2 * i, j)] -= c[0];
                values[(2 * i + 1, j)] -= c[1];
            }
        }
        centroids.push(c);
    }
    Ok((TrackingMatrix { values, mask: w.mask.clone() }, CentroidSet { centroids }))
}

/// Singular values in descending order. Requires a fully observed matrix.
pub fn singular_spectrum(w: &TrackingMatrix) -> Result<Vec<f64>> {
    if !w.is_complete() {
        return Err(Error::Precondition(
            "singular spectrum needs a fully observed matrix; use alternating_factor for missing data"
                .into(),
        ));
    }
    Ok(svd_sorted(&w.values).s)
}

/// Sum of squared singular values beyond rank `r`.
pub fn truncation_error(spectrum: &[f64], r: usize) -> Result<f64> {
    if r < 1 || r >= spectrum.len() {
        return Err(Error::Argument(format!(
            "rank {r} outside 1..{} for a spectrum of length {}",
            spectrum.len(),
            spectrum.len()
        )));
    }
    Ok(spectrum[r..].iter().map(|s| s * s).sum())
}
