//! The structured synthetic world that stands in for images.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Axis-aligned box `(x, y, w, h)` in scene pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl BBox {
    pub const fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        f64::from(self.w.max(0)) * f64::from(self.h.max(0))
    }

    pub fn right(&self) -> i32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i32 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.x) + f64::from(self.w) / 2.0,
            f64::from(self.y) + f64::from(self.h) / 2.0,
        )
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn union(&self, other: &BBox) -> BBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersect(other).map_or(0.0, |b| b.area());
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEntity {
    pub id: u32,
    pub concept: String,
    pub bbox: BBox,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
}

impl SimEntity {
    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn has_face(&self) -> bool {
        self.attr("face") == Some("yes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Replace,
    Colorpop,
    Bgblur,
    Emoji,
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EffectKind::Replace => "replace",
            EffectKind::Colorpop => "colorpop",
            EffectKind::Bgblur => "bgblur",
            EffectKind::Emoji => "emoji",
        };
        f.write_str(s)
    }
}

/// One applied edit: which entities it touched and what it did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditEffect {
    pub kind: EffectKind,
    pub entities: Vec<u32>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScene {
    pub id: String,
    /// Seed for per-instance features drawn from this scene.
    pub seed: u64,
    pub width: i32,
    pub height: i32,
    pub entities: Vec<SimEntity>,
    #[serde(default)]
    pub effects: Vec<EditEffect>,
}

impl SimScene {
    pub fn bounds(&self) -> BBox {
        BBox::new(0, 0, self.width, self.height)
    }

    pub fn entity(&self, id: u32) -> Option<&SimEntity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn entities_of<'a>(&'a self, concept: &'a str) -> impl Iterator<Item = &'a SimEntity> + 'a {
        self.entities.iter().filter(move |e| e.concept == concept)
    }

    /// Checks box bounds and id uniqueness.
    pub fn check(&self) -> Result<(), String> {
        let bounds = self.bounds();
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entities {
            if !seen.insert(e.id) {
                return Err(format!("duplicate entity id {}", e.id));
            }
            let b = e.bbox;
            if b.w <= 0 || b.h <= 0 || b.x < 0 || b.y < 0 || b.right() > bounds.w || b.bottom() > bounds.h {
                return Err(format!("entity {} box {} outside {}x{}", e.id, b, self.width, self.height));
            }
        }
        Ok(())
    }

    /// Sub-image covering `region`, with entity boxes shifted into the crop's frame.
    /// Entities whose center falls outside the region are dropped; the rest are clipped.
    pub fn crop(&self, region: BBox) -> SimScene {
        let region = region.intersect(&self.bounds()).unwrap_or(BBox::new(0, 0, 1, 1));
        let entities = self
            .entities
            .iter()
            .filter(|e| {
                let (cx, cy) = e.bbox.center();
                cx >= f64::from(region.x)
                    && cx < f64::from(region.right())
                    && cy >= f64::from(region.y)
                    && cy < f64::from(region.bottom())
            })
            .filter_map(|e| {
                let clipped = e.bbox.intersect(&region)?;
                Some(SimEntity {
                    bbox: BBox::new(clipped.x - region.x, clipped.y - region.y, clipped.w, clipped.h),
                    ..e.clone()
                })
            })
            .collect();
        SimScene {
            id: format!("{}[{}]", self.id, region),
            seed: self.seed,
            width: region.w,
            height: region.h,
            entities,
            effects: Vec::new(),
        }
    }

    /// One-line caption used by reflection prompts and edit-task predictions.
    pub fn describe(&self) -> String {
        let mut out = format!("image {}x{}:", self.width, self.height);
        if self.entities.is_empty() {
            out.push_str(" empty");
        }
        for (i, e) in self.entities.iter().enumerate() {
            out.push_str(if i == 0 { " " } else { ", " });
            out.push_str(&format!("{}@{}", e.concept, e.bbox));
            if !e.attrs.is_empty() {
                let attrs: Vec<String> = e.attrs.iter().map(|(k, v)| format!("{k}={v}")).collect();
                out.push_str(&format!("{{{}}}", attrs.join(",")));
            }
        }
        for fx in &self.effects {
            let ids: Vec<String> = fx.entities.iter().map(u32::to_string).collect();
            out.push_str(&format!("; {} on [{}]", fx.kind, ids.join(",")));
            if !fx.detail.is_empty() {
                out.push_str(&format!(" ({})", fx.detail));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SimScene {
        SimScene {
            id: "s".into(),
            seed: 1,
            width: 100,
            height: 50,
            entities: vec![
                SimEntity { id: 1, concept: "person".into(), bbox: BBox::new(5, 10, 20, 30), attrs: BTreeMap::new() },
                SimEntity { id: 2, concept: "umbrella".into(), bbox: BBox::new(50, 10, 20, 20), attrs: BTreeMap::new() },
            ],
            effects: vec![],
        }
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = BBox::new(0, 0, 10, 10);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(20, 20, 5, 5)), 0.0);
        // half overlap: inter 50, union 150
        assert!((a.iou(&BBox::new(5, 0, 10, 10)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn crop_shifts_and_filters() {
        let s = scene();
        let left = s.crop(BBox::new(0, 0, 50, 50));
        assert_eq!(left.entities.len(), 1);
        assert_eq!(left.entities[0].concept, "person");
        assert_eq!(left.entities[0].bbox, BBox::new(5, 10, 20, 30));
        let right = s.crop(BBox::new(40, 0, 60, 50));
        assert_eq!(right.entities[0].bbox, BBox::new(10, 10, 20, 20));
        assert!(right.check().is_ok());
    }

    #[test]
    fn check_rejects_duplicates_and_out_of_bounds() {
        let mut s = scene();
        s.entities[1].id = 1;
        assert!(s.check().is_err());
        let mut s = scene();
        s.entities[0].bbox = BBox::new(90, 0, 20, 10);
        assert!(s.check().is_err());
    }
}
