use std::fmt;

use crate::ct::Organ;
use crate::error::{Error, Result};

use super::froc::{operating_step, sweep, Evaluation, FrocResult};

/// Lesion size bins in mm: `[0, b0)`, `[b0, b1)`, `[b1, inf)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeBins {
    pub small_below: f64,
    pub large_from: f64,
}

impl Default for SizeBins {
    fn default() -> Self {
        SizeBins {
            small_below: 10.0,
            large_from: 30.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SizeBin {
    Small,
    Medium,
    Large,
}

impl SizeBins {
    pub fn bin(&self, size_mm: f64) -> SizeBin {
        if size_mm < self.small_below {
            SizeBin::Small
        } else if size_mm < self.large_from {
            SizeBin::Medium
        } else {
            SizeBin::Large
        }
    }

    pub fn label(&self, bin: SizeBin) -> String {
        match bin {
            SizeBin::Small => format!("<{}mm", self.small_below),
            SizeBin::Medium => format!("{}-{}mm", self.small_below, self.large_from),
            SizeBin::Large => format!(">={}mm", self.large_from),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StratumKind {
    Organ,
    Size,
}

impl fmt::Display for StratumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StratumKind::Organ => "organ",
            StratumKind::Size => "size",
        })
    }
}

/// Sensitivities of one stratum at the global operating points; `None`
/// when the stratum has no lesions.
#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    pub kind: StratumKind,
    pub name: String,
    pub num_lesions: usize,
    pub sensitivities: Option<Vec<f64>>,
}

impl Stratum {
    pub fn average(&self) -> Option<f64> {
        self.sensitivities
            .as_ref()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Sensitivity at the largest false-positive rate.
    pub fn at_highest_fp(&self) -> Option<f64> {
        self.sensitivities.as_ref().and_then(|s| s.last().copied())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedReport {
    pub fp_points: Vec<f64>,
    pub strata: Vec<Stratum>,
}

impl StratifiedReport {
    pub fn get(&self, kind: StratumKind, name: &str) -> Option<&Stratum> {
        self.strata.iter().find(|s| s.kind == kind && s.name == name)
    }
}

/// Per-organ and per-size sensitivities using the detections admitted at each
/// global operating point.
pub fn stratified_report(ev: &Evaluation, global: &FrocResult, bins: &SizeBins) -> Result<StratifiedReport> {
    if global.num_lesions != ev.lesions.len() {
        return Err(Error::Data("FROC result does not belong to this evaluation".into()));
    }
    let steps = sweep(ev);
    let admitted: Vec<usize> = global
        .fp_points
        .iter()
        .map(|&f| steps[operating_step(&steps, ev.num_images, f)].0)
        .collect();
    // Rank of the detection that hits each lesion; lesions are hit at most once.
    let mut hit_rank = vec![usize::MAX; ev.lesions.len()];
    for (rank, d) in ev.detections.iter().enumerate() {
        if let Some(l) = d.lesion {
            hit_rank[l] = rank;
        }
    }
    let stratum = |kind, name: String, member: &dyn Fn(usize) -> bool| {
        let members: Vec<usize> = (0..ev.lesions.len()).filter(|&i| member(i)).collect();
        let sensitivities = (!members.is_empty()).then(|| {
            admitted
                .iter()
                .map(|&a| members.iter().filter(|&&i| hit_rank[i] < a).count() as f64 / members.len() as f64)
                .collect()
        });
        Stratum {
            kind,
            name,
            num_lesions: members.len(),
            sensitivities,
        }
    };
    let mut strata = Vec::new();
    for organ in Organ::ALL {
        strata.push(stratum(StratumKind::Organ, organ.code().to_string(), &|i| {
            ev.lesions[i].organ == organ
        }));
    }
    for bin in [SizeBin::Small, SizeBin::Medium, SizeBin::Large] {
        strata.push(stratum(StratumKind::Size, bins.label(bin), &|i| {
            bins.bin(ev.lesions[i].size_mm) == bin
        }));
    }
    Ok(StratifiedReport {
        fp_points: global.fp_points.clone(),
        strata,
    })
}
