//! BEV grid geometry, occupancy rasters and distance fields.
//!
//! Cell `(r, c)` covers `x ∈ [(r − origin_row)·s, (r − origin_row + 1)·s)` and
//! `y ∈ [(c − origin_col)·s, (c − origin_col + 1)·s)` with `s` the cell size;
//! rows run along +x (forward), columns along +y (left). The ego origin is the
//! lower corner of cell `(origin_row, origin_col)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Metres per cell.
    pub cell_size: f64,
    pub origin_row: usize,
    pub origin_col: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 32,
            cols: 32,
            cell_size: 1.0,
            origin_row: 16,
            origin_col: 16,
        }
    }
}

impl GridSpec {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn x_range(&self) -> (f64, f64) {
        let lo = -(self.origin_row as f64) * self.cell_size;
        (lo, lo + self.rows as f64 * self.cell_size)
    }

    pub fn y_range(&self) -> (f64, f64) {
        let lo = -(self.origin_col as f64) * self.cell_size;
        (lo, lo + self.cols as f64 * self.cell_size)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        x >= x0 && x < x1 && y >= y0 && y < y1
    }

    /// Cell containing the point, if it lies on the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.contains(x, y) {
            return None;
        }
        let r = (x / self.cell_size).floor() as i64 + self.origin_row as i64;
        let c = (y / self.cell_size).floor() as i64 + self.origin_col as i64;
        let r = r.clamp(0, self.rows as i64 - 1) as usize;
        let c = c.clamp(0, self.cols as i64 - 1) as usize;
        Some((r, c))
    }

    pub fn cell_bounds(&self, r: usize, c: usize) -> ([f64; 2], [f64; 2]) {
        let x0 = (r as f64 - self.origin_row as f64) * self.cell_size;
        let y0 = (c as f64 - self.origin_col as f64) * self.cell_size;
        ([x0, x0 + self.cell_size], [y0, y0 + self.cell_size])
    }

    pub fn cell_center(&self, r: usize, c: usize) -> (f64, f64) {
        let (xs, ys) = self.cell_bounds(r, c);
        (0.5 * (xs[0] + xs[1]), 0.5 * (ys[0] + ys[1]))
    }

    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    /// Inclusive cell index ranges overlapping the open rectangle
    /// `(x0, x1) × (y0, y1)` with positive area, clipped to the grid.
    pub fn cells_overlapping(&self, x: [f64; 2], y: [f64; 2]) -> Option<((usize, usize), (usize, usize))> {
        let span = |lo: f64, hi: f64, origin: usize, n: usize| -> Option<(usize, usize)> {
            if hi <= lo {
                return None;
            }
            let first = (lo / self.cell_size).floor() as i64 + origin as i64;
            let last = (hi / self.cell_size).ceil() as i64 - 1 + origin as i64;
            let first = first.max(0);
            let last = last.min(n as i64 - 1);
            (first <= last).then_some((first as usize, last as usize))
        };
        let rs = span(x[0], x[1], self.origin_row, self.rows)?;
        let cs = span(y[0], y[1], self.origin_col, self.cols)?;
        Some((rs, cs))
    }
}

/// Binary occupancy raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    pub rows: usize,
    pub cols: usize,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(rows: usize, cols: usize) -> Self {
        OccupancyGrid {
            rows,
            cols,
            cells: vec![false; rows * cols],
        }
    }

    pub fn from_cells(rows: usize, cols: usize, cells: Vec<bool>) -> Option<Self> {
        (cells.len() == rows * cols).then_some(OccupancyGrid { rows, cols, cells })
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.cells[r * self.cols + c] = v;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Whether the point lies in an occupied cell. Off-grid points never do.
    pub fn occupied_at(&self, spec: &GridSpec, x: f64, y: f64) -> bool {
        spec.cell_of(x, y).is_some_and(|(r, c)| self.get(r, c))
    }

    /// Run-length encoding: alternating run lengths starting with a run of
    /// zeros, e.g. `"0x500,1x4,0x520"`.
    pub fn to_rle(&self) -> String {
        let mut runs: Vec<String> = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &b in &self.cells {
            if b == current {
                len += 1;
            } else {
                runs.push(format!("{}x{len}", u8::from(current)));
                current = b;
                len = 1;
            }
        }
        runs.push(format!("{}x{len}", u8::from(current)));
        runs.join(",")
    }

    pub fn from_rle(rows: usize, cols: usize, rle: &str) -> Result<Self, String> {
        let mut cells = Vec::with_capacity(rows * cols);
        for run in rle.split(',') {
            let (bit, len) = run.split_once('x').ok_or_else(|| format!("malformed run '{run}'"))?;
            let value = match bit {
                "0" => false,
                "1" => true,
                _ => return Err(format!("run bit must be 0 or 1 in '{run}'")),
            };
            let len: usize = len.parse().map_err(|_| format!("bad run length in '{run}'"))?;
            cells.extend(std::iter::repeat_n(value, len));
        }
        if cells.len() != rows * cols {
            return Err(format!(
                "run lengths cover {} cells, expected {}",
                cells.len(),
                rows * cols
            ));
        }
        Ok(OccupancyGrid { rows, cols, cells })
    }
}

impl Serialize for OccupancyGrid {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format!("{}x{}:{}", self.rows, self.cols, self.to_rle()))
    }
}

impl<'de> Deserialize<'de> for OccupancyGrid {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let s = String::deserialize(deserializer)?;
        let (dims, rle) = s
            .split_once(':')
            .ok_or_else(|| D::Error::custom("occupancy must look like ROWSxCOLS:RUNS"))?;
        let (r, c) = dims
            .split_once('x')
            .ok_or_else(|| D::Error::custom("occupancy dims must look like ROWSxCOLS"))?;
        let rows: usize = r.parse().map_err(D::Error::custom)?;
        let cols: usize = c.parse().map_err(D::Error::custom)?;
        OccupancyGrid::from_rle(rows, cols, rle).map_err(D::Error::custom)
    }
}

/// Euclidean distance (m) from each cell centre to the nearest occupied cell
/// centre. `None` when nothing is occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub spec: GridSpec,
    values: Vec<f64>,
}

impl DistanceField {
    pub fn from_occupancy(spec: &GridSpec, occ: &OccupancyGrid) -> Option<Self> {
        let occupied: Vec<(f64, f64)> = (0..spec.rows)
            .flat_map(|r| (0..spec.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| occ.get(r, c))
            .map(|(r, c)| spec.cell_center(r, c))
            .collect();
        if occupied.is_empty() {
            return None;
        }
        let mut values = Vec::with_capacity(spec.cells());
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                let (x, y) = spec.cell_center(r, c);
                let d2 = occupied
                    .iter()
                    .map(|&(ox, oy)| (x - ox).powi(2) + (y - oy).powi(2))
                    .fold(f64::INFINITY, f64::min);
                values.push(d2.sqrt());
            }
        }
        Some(DistanceField { spec: *spec, values })
    }

    pub fn at_cell(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.spec.cols + c]
    }

    /// Bilinear interpolation between cell centres, clamped inside the outer
    /// half cell. Returns the value and its gradient wrt (x, y), or `None` for
    /// an off-grid point.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f64, [f64; 2])> {
        let s = &self.spec;
        if !s.contains(x, y) {
            return None;
        }
        let axis = |p: f64, origin: usize, n: usize| -> (usize, f64, f64) {
            // continuous index with cell centres at integers
            let u = p / s.cell_size + origin as f64 - 0.5;
            let max = (n - 1) as f64;
            let (clamped, slope) = if u <= 0.0 {
                (0.0, 0.0)
            } else if u >= max {
                (max, 0.0)
            } else {
                (u, 1.0 / s.cell_size)
            };
            let i0 = (clamped.floor() as usize).min(n.saturating_sub(2));
            (i0, clamped - i0 as f64, slope)
        };
        let (r0, fr, sr) = axis(x, s.origin_row, s.rows);
        let (c0, fc, sc) = axis(y, s.origin_col, s.cols);
        let v00 = self.at_cell(r0, c0);
        let v01 = self.at_cell(r0, c0 + 1);
        let v10 = self.at_cell(r0 + 1, c0);
        let v11 = self.at_cell(r0 + 1, c0 + 1);
        let value = v00 * (1.0 - fr) * (1.0 - fc) + v10 * fr * (1.0 - fc) + v01 * (1.0 - fr) * fc + v11 * fr * fc;
        let d_fr = (v10 - v00) * (1.0 - fc) + (v11 - v01) * fc;
        let d_fc = (v01 - v00) * (1.0 - fr) + (v11 - v10) * fr;
        Some((value, [d_fr * sr, d_fc * sc]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_lookup_matches_bounds() {
        let s = GridSpec::default();
        assert_eq!(s.cell_of(0.0, 0.0), Some((16, 16)));
        assert_eq!(s.cell_of(-0.1, 0.0), Some((15, 16)));
        assert_eq!(s.cell_of(15.99, -16.0), Some((31, 0)));
        assert_eq!(s.cell_of(16.0, 0.0), None);
        let (xs, ys) = s.cell_bounds(16, 16);
        assert_eq!((xs, ys), ([0.0, 1.0], [0.0, 1.0]));
    }

    #[test]
    fn rle_round_trip_and_errors() {
        let mut g = OccupancyGrid::empty(4, 4);
        g.set(1, 1, true);
        g.set(1, 2, true);
        g.set(3, 3, true);
        let rle = g.to_rle();
        assert_eq!(rle, "0x5,1x2,0x8,1x1");
        assert_eq!(OccupancyGrid::from_rle(4, 4, &rle).unwrap(), g);
        assert!(OccupancyGrid::from_rle(4, 4, "0x15").is_err());
        assert!(OccupancyGrid::from_rle(4, 4, "2x16").is_err());
        assert_eq!(OccupancyGrid::empty(2, 2).to_rle(), "0x4");
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, "\"4x4:0x5,1x2,0x8,1x1\"");
        assert_eq!(serde_json::from_str::<OccupancyGrid>(&json).unwrap(), g);
    }

    #[test]
    fn distance_field_zero_on_obstacle_center() {
        let s = GridSpec::default();
        let mut g = OccupancyGrid::empty(32, 32);
        g.set(20, 16, true);
        let f = DistanceField::from_occupancy(&s, &g).unwrap();
        let (cx, cy) = s.cell_center(20, 16);
        let (v, _) = f.sample(cx, cy).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(f.at_cell(22, 16), 2.0);
        assert!(f.sample(40.0, 0.0).is_none());
        assert!(DistanceField::from_occupancy(&s, &OccupancyGrid::empty(32, 32)).is_none());
    }

    #[test]
    fn bilinear_gradient_matches_differences() {
        let s = GridSpec::default();
        let mut g = OccupancyGrid::empty(32, 32);
        g.set(21, 14, true);
        g.set(10, 20, true);
        let f = DistanceField::from_occupancy(&s, &g).unwrap();
        let (x, y) = (3.37, -0.81);
        let (_, grad) = f.sample(x, y).unwrap();
        let h = 1e-6;
        let gx = (f.sample(x + h, y).unwrap().0 - f.sample(x - h, y).unwrap().0) / (2.0 * h);
        let gy = (f.sample(x, y + h).unwrap().0 - f.sample(x, y - h).unwrap().0) / (2.0 * h);
        assert!((gx - grad[0]).abs() < 1e-6);
        assert!((gy - grad[1]).abs() < 1e-6);
    }
}
