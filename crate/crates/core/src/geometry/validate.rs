use serde::{Deserialize, Serialize};

use super::polygon::convex_intersection_area;
use super::{apply_pose, overlap_tolerance, SolveTrace, Tan, Variant, TAN_SET};

#[derive(Clone, Copy, Debug)]
pub struct ValidateOptions {
    /// Largest pairwise overlap area (board units squared) allowed between placed tans.
    pub overlap_tolerance: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { overlap_tolerance: overlap_tolerance() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyTrace,
    MissingName,
    OutOfRange,
    Overlap,
    NonMonotonePlacement,
    IncompleteFinal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Zero-based step index, `None` for trace-level problems.
    pub step: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, step: Option<usize>, kind: ViolationKind, message: String) {
        self.violations.push(Violation { step, kind, message });
    }
}

/// Checks pose ranges, pairwise overlap of placed tans at every step, and
/// for variant B that placement only grows and ends with all seven tans.
pub fn validate_trace(trace: &SolveTrace, opts: &ValidateOptions) -> ValidationReport {
    let mut report = ValidationReport::default();
    if trace.steps.is_empty() {
        report.push(None, ViolationKind::EmptyTrace, "trace has no steps".into());
        return report;
    }
    if trace.puzzle_name.trim().is_empty() {
        report.push(None, ViolationKind::MissingName, "puzzle_name is empty".into());
    }
    let tans: Vec<Tan> = TAN_SET.iter().map(|&k| Tan::of(k)).collect();
    for (step, state) in trace.steps.iter().enumerate() {
        let mut polys = Vec::new();
        for (slot, pose) in state.poses.iter().enumerate() {
            match apply_pose(&tans[slot], pose) {
                Ok(poly) if pose.placed => polys.push((slot, poly)),
                Ok(_) => {}
                Err(e) => report.push(Some(step), ViolationKind::OutOfRange, format!("tan {slot}: {e}")),
            }
        }
        for i in 0..polys.len() {
            for j in i + 1..polys.len() {
                let overlap = convex_intersection_area(&polys[i].1, &polys[j].1);
                if overlap > opts.overlap_tolerance {
                    report.push(
                        Some(step),
                        ViolationKind::Overlap,
                        format!(
                            "tans {} and {} overlap by {overlap:.3} (limit {:.3})",
                            polys[i].0, polys[j].0, opts.overlap_tolerance
                        ),
                    );
                }
            }
        }
    }
    if trace.variant == Variant::B {
        for (step, pair) in trace.steps.windows(2).enumerate() {
            for slot in 0..7 {
                if pair[0].poses[slot].placed && !pair[1].poses[slot].placed {
                    report.push(
                        Some(step + 1),
                        ViolationKind::NonMonotonePlacement,
                        format!("tan {slot} was un-placed after step {step}"),
                    );
                }
            }
        }
        let last = trace.steps.len() - 1;
        let placed = trace.steps[last].placed_count();
        if placed != 7 {
            report.push(Some(last), ViolationKind::IncompleteFinal, format!("final step has {placed} of 7 tans placed"));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{canonical_square_config, generate_trace, BoardState};

    fn square_trace(variant: Variant) -> SolveTrace {
        SolveTrace {
            puzzle_name: "square".into(),
            variant,
            steps: vec![canonical_square_config(); 3],
            embedding_key: "square".into(),
        }
    }

    #[test]
    fn rotation_out_of_range_is_reported_at_its_step() {
        let mut t = square_trace(Variant::A);
        t.steps[1].poses[2].rot = 24;
        let report = validate_trace(&t, &Default::default());
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].step, Some(1));
        assert_eq!(report.violations[0].kind, ViolationKind::OutOfRange);
    }

    #[test]
    fn unplacing_breaks_monotonicity() {
        let mut t = generate_trace(5, Variant::B, 7).unwrap();
        let slot = (0..7).find(|&s| t.steps[2].poses[s].placed).unwrap();
        t.steps[3].poses[slot].placed = false;
        let report = validate_trace(&t, &Default::default());
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::NonMonotonePlacement && v.step == Some(3)));
    }

    #[test]
    fn overlap_and_incomplete_final() {
        let mut state: BoardState = canonical_square_config();
        state.poses[1] = state.poses[0];
        state.poses[6].placed = false;
        let t = SolveTrace { puzzle_name: "x".into(), variant: Variant::B, steps: vec![state], embedding_key: "x".into() };
        let kinds: Vec<ViolationKind> = validate_trace(&t, &Default::default()).violations.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::Overlap));
        assert!(kinds.contains(&ViolationKind::IncompleteFinal));
    }

    #[test]
    fn empty_trace() {
        let t = SolveTrace { puzzle_name: "x".into(), variant: Variant::A, steps: vec![], embedding_key: "x".into() };
        assert_eq!(validate_trace(&t, &Default::default()).violations[0].kind, ViolationKind::EmptyTrace);
    }
}
