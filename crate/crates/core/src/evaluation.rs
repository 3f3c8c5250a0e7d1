//! Spacing sweeps: render every eligible window of a test set at each
//! spacing and tabulate errors as trained-spacing rows by tested-spacing
//! columns.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{eligible_centers, evaluate, EvalReport, StereoSequence};
use crate::error::{Error, Result};
use crate::inpaint::{median_fusion, InpaintNet};
use crate::pipeline::{inpaint_window, warp_window, DepthSource, StageTimings};

/// One rendered window's errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub sequence: usize,
    pub center: usize,
    /// Network error; `None` for a median-only evaluation.
    pub error: Option<f64>,
    pub median_error: f64,
    pub hole_fraction: f64,
}

/// Errors of the network and of median fusion at one test spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct SpacingResult {
    pub spacing: usize,
    pub ours: Option<EvalReport>,
    pub median: EvalReport,
    pub frames: Vec<FrameRecord>,
    pub timings: StageTimings,
}

/// Mean camera travel in meters between frames `spacing` apart, over every
/// sequence. `None` if no sequence is long enough.
pub fn spacing_meters(data: &[Box<dyn StereoSequence>], spacing: usize) -> Result<Option<f64>> {
    let (mut sum, mut n) = (0.0, 0usize);
    for seq in data {
        for i in 0..seq.len().saturating_sub(spacing) {
            let (a, b) = (seq.pose(i)?.t, seq.pose(i + spacing)?.t);
            sum += (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Renders every window that fits at `spacing` in every sequence, with the
/// inpainting network when given and always with median fusion.
pub fn evaluate_spacing(
    data: &[Box<dyn StereoSequence>],
    spacing: usize,
    source: DepthSource,
    inpaint: Option<&InpaintNet<f32>>,
    progress: &mut dyn FnMut(&str),
) -> Result<SpacingResult> {
    let (mut renders, mut medians, mut targets, mut holes) = (vec![], vec![], vec![], vec![]);
    let mut keys = vec![];
    let mut timings = StageTimings::default();
    for (s, seq) in data.iter().enumerate() {
        for c in eligible_centers(seq.len(), spacing) {
            let w = warp_window(seq.as_ref(), c, spacing, source)?;
            timings.depth += w.timings.depth;
            timings.warp += w.timings.warp;
            if let Some(net) = inpaint {
                let t = std::time::Instant::now();
                renders.push(inpaint_window(net, &w.views)?);
                timings.inpaint += t.elapsed().as_secs_f64();
            }
            let (median, hole) = median_fusion(&w.views)?;
            medians.push(median);
            targets.push(w.target);
            holes.push(hole);
            keys.push((s, c));
            progress(&format!("spacing {spacing}: sequence {s} frame {c}"));
        }
    }
    if keys.is_empty() {
        return Err(Error::Empty(format!("no window fits at spacing {spacing}")));
    }
    let ours = match inpaint {
        Some(_) => Some(evaluate(&renders, &targets)?.with_holes(&holes)?),
        None => None,
    };
    let median = evaluate(&medians, &targets)?.with_holes(&holes)?;
    let frames = keys
        .iter()
        .enumerate()
        .map(|(i, &(sequence, center))| FrameRecord {
            sequence,
            center,
            error: ours.as_ref().map(|o| o.frame_errors[i]),
            median_error: median.frame_errors[i],
            hole_fraction: median.hole_fractions[i],
        })
        .collect();
    Ok(SpacingResult {
        spacing,
        ours,
        median,
        frames,
        timings,
    })
}

/// Mean errors of models trained at different spacings, each tested at every
/// spacing in `tested`. With `median` set, each row block carries a second
/// method line for median fusion of the warped views.
#[derive(Clone, Debug, PartialEq)]
pub struct SpacingTable {
    pub tested: Vec<usize>,
    /// Meters per tested spacing (falls back to frame counts when unknown).
    pub tested_meters: Vec<Option<f64>>,
    pub rows: Vec<TableRow>,
    pub median: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub trained: usize,
    pub trained_meters: Option<f64>,
    pub errors: Vec<f64>,
}

fn label(spacing: usize, meters: Option<f64>) -> String {
    match meters {
        Some(m) => format!("{m:.1} m"),
        None => format!("{spacing} fr"),
    }
}

impl SpacingTable {
    /// Tab-separated table: `Spacing`, `Method`, then one `Test ...` column
    /// per tested spacing.
    pub fn to_text(&self) -> String {
        let mut s = String::from("Spacing\tMethod");
        for (&t, &m) in self.tested.iter().zip(&self.tested_meters) {
            write!(s, "\tTest {}", label(t, m)).unwrap();
        }
        s.push('\n');
        for row in &self.rows {
            let train = format!("Train {}", label(row.trained, row.trained_meters));
            write!(s, "{train}\tOurs").unwrap();
            for e in &row.errors {
                write!(s, "\t{e:.2}").unwrap();
            }
            s.push('\n');
            if let Some(med) = &self.median {
                write!(s, "{train}\tMedian").unwrap();
                for e in med {
                    write!(s, "\t{e:.2}").unwrap();
                }
                s.push('\n');
            }
        }
        s
    }

    /// Long format, one line per (trained, method, tested) cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trained_spacing,method,test_spacing,test_meters,mean_error\n");
        let meters = |m: Option<f64>| m.map_or(String::new(), |m| format!("{m}"));
        for row in &self.rows {
            let mut methods = vec![("ours", &row.errors)];
            if let Some(med) = &self.median {
                methods.push(("median", med));
            }
            for (name, errs) in methods {
                for ((&t, &m), e) in self.tested.iter().zip(&self.tested_meters).zip(errs) {
                    writeln!(s, "{},{name},{t},{},{e}", row.trained, meters(m)).unwrap();
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SceneConfig, SyntheticScene};
    use crate::inpaint::InpaintConfig;

    fn table(median: bool) -> SpacingTable {
        SpacingTable {
            tested: vec![1, 2, 3],
            tested_meters: vec![Some(0.8), Some(1.6), Some(2.4)],
            rows: vec![
                TableRow {
                    trained: 1,
                    trained_meters: Some(0.8),
                    errors: vec![6.66, 8.9, 12.14],
                },
                TableRow {
                    trained: 2,
                    trained_meters: Some(1.6),
                    errors: vec![6.92, 8.47, 10.38],
                },
            ],
            median: median.then(|| vec![18.97, 31.72, 41.29]),
        }
    }

    #[test]
    fn text_layout_has_row_per_trained_and_column_per_tested_spacing() {
        let t = table(false).to_text();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(
            lines[0],
            "Spacing\tMethod\tTest 0.8 m\tTest 1.6 m\tTest 2.4 m"
        );
        assert_eq!(lines[1], "Train 0.8 m\tOurs\t6.66\t8.90\t12.14");
        assert_eq!(lines.len(), 3);
        let t = table(true).to_text();
        assert_eq!(
            t.lines().nth(2).unwrap(),
            "Train 0.8 m\tMedian\t18.97\t31.72\t41.29"
        );
        assert_eq!(t.lines().count(), 5);
        assert_eq!(table(true).to_csv().lines().count(), 1 + 2 * 2 * 3);
    }

    #[test]
    fn synthetic_travel_matches_track_step() {
        let cfg = SceneConfig {
            height: 16,
            width: 16,
            track_step: Some([0.8, 0.0, 0.0]),
            ..SceneConfig::default()
        };
        let data: Vec<Box<dyn StereoSequence>> =
            vec![Box::new(SyntheticScene::generate(0, &cfg).unwrap())];
        for s in 1..=3 {
            let m = spacing_meters(&data, s).unwrap().unwrap();
            assert!((m - 0.8 * s as f64).abs() < 1e-12);
        }
        assert_eq!(spacing_meters(&data, 5).unwrap(), None);
    }

    #[test]
    fn empty_eligible_set_is_reported() {
        let cfg = SceneConfig {
            height: 16,
            width: 16,
            ..SceneConfig::default()
        };
        let data: Vec<Box<dyn StereoSequence>> =
            vec![Box::new(SyntheticScene::generate(0, &cfg).unwrap())];
        let net = InpaintNet::new(
            InpaintConfig {
                base_channels: 2,
                tail_channels: 2,
                ..InpaintConfig::default()
            },
            0,
        )
        .unwrap();
        let err = evaluate_spacing(&data, 2, DepthSource::GroundTruth, Some(&net), &mut |_| {})
            .unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
        let ok =
            evaluate_spacing(&data, 1, DepthSource::GroundTruth, Some(&net), &mut |_| {}).unwrap();
        assert_eq!(ok.frames.len(), 1);
        assert!(ok.median.mean_error < ok.ours.unwrap().mean_error);
        let med = evaluate_spacing(&data, 1, DepthSource::GroundTruth, None, &mut |_| {}).unwrap();
        assert!(med.ours.is_none());
        assert_eq!(med.median, ok.median);
    }
}
