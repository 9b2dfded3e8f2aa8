//! Tool-specific output filters and training acceptance checks.

use crate::model::Detection;
use crate::tools::scene::BBox;

/// LOC detections below this confidence are dropped.
pub const LOC_MIN_CONFIDENCE: f64 = 0.1;
/// Average IoU a LOC prompt must reach on its validation boxes.
pub const LOC_MIN_IOU: f64 = 0.6;

/// Filters raw candidates for `tool`; only LOC has a gate.
pub fn tool_specific_gates(tool: &str, candidates: Vec<Detection>) -> Vec<Detection> {
    match tool {
        "LOC" => candidates.into_iter().filter(|d| d.confidence >= LOC_MIN_CONFIDENCE).collect(),
        _ => candidates,
    }
}

/// Mean over `labels` of the best IoU any prediction reaches. 0 when either side is empty.
pub fn average_iou(predicted: &[Detection], labels: &[BBox]) -> f64 {
    if predicted.is_empty() || labels.is_empty() {
        return 0.0;
    }
    let total: f64 = labels
        .iter()
        .map(|l| predicted.iter().map(|p| p.bbox.iou(l)).fold(0.0, f64::max))
        .sum();
    total / labels.len() as f64
}

/// LOC training acceptance: every label found and the average IoU reaches the bar.
pub fn loc_training_accepted(predicted: &[Detection], labels: &[BBox]) -> bool {
    predicted.len() == labels.len() && average_iou(predicted, labels) >= LOC_MIN_IOU
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(conf: f64, b: BBox) -> Detection {
        Detection {
            label: "x".into(),
            bbox: b,
            confidence: conf,
            entity: None,
        }
    }

    #[test]
    fn low_confidence_dropped() {
        let b = BBox::new(0, 0, 10, 10);
        let kept = tool_specific_gates("LOC", vec![det(0.05, b), det(0.1, b), det(0.9, b)]);
        assert_eq!(kept.len(), 2);
        assert!(tool_specific_gates("LOC", vec![]).is_empty());
        assert_eq!(tool_specific_gates("SEG", vec![det(0.05, b)]).len(), 1);
    }

    #[test]
    fn iou_acceptance() {
        let label = BBox::new(0, 0, 10, 10);
        // 10x10 vs 10x7 nested: IoU 0.7.
        let pred = det(1.0, BBox::new(0, 0, 10, 7));
        assert!((average_iou(std::slice::from_ref(&pred), &[label]) - 0.7).abs() < 1e-12);
        assert!(loc_training_accepted(&[pred], &[label]));
        let poor = det(1.0, BBox::new(0, 0, 10, 5));
        assert!(!loc_training_accepted(&[poor], &[label]));
        assert!(!loc_training_accepted(&[], &[label]));
    }
}
