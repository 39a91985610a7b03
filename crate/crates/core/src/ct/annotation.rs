use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Organ codes used for stratified reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Organ {
    /// bone
    BN,
    /// lung
    LNG,
    /// mediastinum
    MDT,
    /// liver
    LVR,
    /// kidney
    KDY,
    /// abdomen
    ABM,
    /// pelvis
    PLS,
    /// soft tissue
    ST,
}

impl Organ {
    pub const ALL: [Organ; 8] = [
        Organ::BN,
        Organ::LNG,
        Organ::MDT,
        Organ::LVR,
        Organ::KDY,
        Organ::ABM,
        Organ::PLS,
        Organ::ST,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Organ::BN => "BN",
            Organ::LNG => "LNG",
            Organ::MDT => "MDT",
            Organ::LVR => "LVR",
            Organ::KDY => "KDY",
            Organ::ABM => "ABM",
            Organ::PLS => "PLS",
            Organ::ST => "ST",
        }
    }
}

impl std::fmt::Display for Organ {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for Organ {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Organ::ALL
            .iter()
            .copied()
            .find(|o| o.code() == s.trim())
            .ok_or_else(|| Error::Data(format!("unknown organ code {s:?}")))
    }
}

/// Ground-truth lesion box on a key slice, in resampled pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxAnnotation {
    pub image_id: String,
    pub bbox: BBox,
    pub organ: Organ,
    /// Longest diameter in mm.
    pub size_mm: f64,
}

impl BoxAnnotation {
    pub fn new(image_id: impl Into<String>, bbox: BBox, organ: Organ, size_mm: f64) -> Result<Self> {
        if !bbox.is_valid() {
            return Err(Error::Data(format!("degenerate annotation box {bbox:?}")));
        }
        if !(size_mm > 0.0) {
            return Err(Error::Data(format!("lesion size must be > 0 mm, got {size_mm}")));
        }
        Ok(BoxAnnotation {
            image_id: image_id.into(),
            bbox,
            organ,
            size_mm,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationRow {
    image_id: String,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    organ: String,
    size_mm: f64,
}

/// Writes `image_id,x1,y1,x2,y2,organ,size_mm`.
pub fn write_annotations(path: &Path, rows: &[BoxAnnotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for a in rows {
        w.serialize(AnnotationRow {
            image_id: a.image_id.clone(),
            x1: a.bbox.x1,
            y1: a.bbox.y1,
            x2: a.bbox.x2,
            y2: a.bbox.y2,
            organ: a.organ.code().into(),
            size_mm: a.size_mm,
        })
        .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<BoxAnnotation>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let expected = ["image_id", "x1", "y1", "x2", "y2", "organ", "size_mm"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::format(path, format!("expected header {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<AnnotationRow>().enumerate() {
        let row = row.map_err(|e| Error::format(path, format!("row {}: {e}", i + 1)))?;
        let organ: Organ = row.organ.parse()?;
        out.push(BoxAnnotation::new(
            row.image_id,
            BBox::new(row.x1, row.y1, row.x2, row.y2),
            organ,
            row.size_mm,
        )?);
    }
    Ok(out)
}
