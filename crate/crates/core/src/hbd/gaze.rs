use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::HbdError;

/// Frames per gaze window.
pub const WINDOW_FRAMES: usize = 24;

/// Gaze points (image pixels) of one window, in frame order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeTrace {
    pub points: Vec<[f64; 2]>,
}

impl GazeTrace {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, HbdError> {
        if points.is_empty() || points.len() > WINDOW_FRAMES {
            return Err(HbdError::Contract(format!(
                "a gaze window holds 1..={WINDOW_FRAMES} points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p[0] >= 0.0 && p[1] >= 0.0 && p[0].is_finite() && p[1].is_finite()))
        {
            return Err(HbdError::Contract(format!(
                "gaze point {p:?} has negative or non-finite coordinates"
            )));
        }
        Ok(GazeTrace { points })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    /// Text form used in gaze answers.
    pub fn render(&self) -> String {
        format!(
            "region ({:.0},{:.0})–({:.0},{:.0})",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

/// Axis-aligned box spanning every gaze point of the window.
pub fn gaze_to_bbox(points: &[[f64; 2]]) -> Result<BBox, HbdError> {
    let first = points
        .first()
        .ok_or_else(|| HbdError::Contract("gaze trace is empty".into()))?;
    let init = BBox {
        x_min: first[0],
        y_min: first[1],
        x_max: first[0],
        y_max: first[1],
    };
    Ok(points.iter().fold(init, |b, p| BBox {
        x_min: b.x_min.min(p[0]),
        y_min: b.y_min.min(p[1]),
        x_max: b.x_max.max(p[0]),
        y_max: b.y_max.max(p[1]),
    }))
}

/// One disjoint window of an imported clip.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeWindow {
    pub clip: String,
    /// Window number: frames `[24·index, 24·index + 24)`.
    pub index: u64,
    pub trace: GazeTrace,
}

#[derive(Deserialize)]
struct GazeRow {
    clip: String,
    frame: u64,
    x: f64,
    y: f64,
}

/// Reads `clip,frame,x,y` CSV rows and splits each clip into disjoint
/// 24-frame windows. Windows come out ordered by clip, then index.
pub fn import_gaze_csv(reader: impl Read) -> Result<Vec<GazeWindow>, HbdError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut grouped: BTreeMap<(String, u64), BTreeMap<u64, [f64; 2]>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<GazeRow>().enumerate() {
        let row = row.map_err(|e| HbdError::Line {
            line: i + 2,
            message: e.to_string(),
        })?;
        let key = (row.clip, row.frame / WINDOW_FRAMES as u64);
        grouped.entry(key).or_default().insert(row.frame, [row.x, row.y]);
    }
    grouped
        .into_iter()
        .map(|((clip, index), frames)| {
            let trace = GazeTrace::new(frames.into_values().collect())?;
            Ok(GazeWindow { clip, index, trace })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_examples() {
        let b = gaze_to_bbox(&[[100.0, 50.0]]).unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (100.0, 50.0, 100.0, 50.0));
        let b = gaze_to_bbox(&[[10.0, 20.0], [30.0, 5.0], [15.0, 40.0]]).unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (10.0, 5.0, 30.0, 40.0));
        let b = gaze_to_bbox(&[[7.0, 9.0]; 24]).unwrap();
        assert_eq!((b.x_min, b.y_max), (7.0, 9.0));
        assert!(gaze_to_bbox(&[]).is_err());
        assert_eq!(b.render(), "region (7,9)–(7,9)");
    }

    #[test]
    fn csv_import_splits_windows() {
        let mut csv = String::from("clip,frame,x,y\n");
        for f in 0..30 {
            csv.push_str(&format!("a,{f},{},{}\n", f * 2, f));
        }
        csv.push_str("b,3,1,1\n");
        let w = import_gaze_csv(csv.as_bytes()).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].trace.points.len(), 24);
        assert_eq!(w[1].trace.points.len(), 6);
        assert_eq!(w[1].trace.points[0], [48.0, 24.0]);
        assert_eq!(w[2].clip, "b");
        assert!(import_gaze_csv("clip,frame,x,y\na,x,1,1\n".as_bytes()).is_err());
        assert!(import_gaze_csv("clip,frame,x,y\na,1,-1,1\n".as_bytes()).is_err());
    }
}
