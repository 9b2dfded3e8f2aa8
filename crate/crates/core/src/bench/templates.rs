//! Task templates: instruction, plan and program text with `${slot}` placeholders,
//! plus the scene and feedback builder for each.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Feedback, LabeledBox, SceneAssertion, TaskKind};
use crate::tools::scene::{BBox, EffectKind, SimEntity, SimScene};
use crate::tools::{ACTIVITIES, COLORS};

pub type Values = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotPool {
    Object,
    Person,
}

#[derive(Debug, Clone, Copy)]
pub struct Slot {
    pub name: &'static str,
    pub pool: SlotPool,
    /// Updatable tools whose competence on the slot's concept the task needs.
    pub consumers: &'static [&'static str],
    /// Draw from the same person category as this slot.
    pub same_category_as: Option<&'static str>,
}

/// Concepts available to scene builders.
pub struct Catalog<'a> {
    pub objects: &'a [String],
    pub people: &'a BTreeMap<String, Vec<String>>,
}

impl Catalog<'_> {
    pub fn category_of(&self, name: &str) -> Option<&str> {
        self.people
            .iter()
            .find(|(_, names)| names.iter().any(|n| n == name))
            .map(|(c, _)| c.as_str())
    }

    fn other_objects<'b>(&'b self, exclude: &[&str], n: usize, r: &mut ChaCha8Rng) -> Vec<&'b str> {
        let pool: Vec<&str> = self.objects.iter().map(String::as_str).filter(|o| !exclude.contains(o)).collect();
        pool.choose_multiple(r, n).copied().collect()
    }

    fn other_person<'b>(&'b self, exclude: &[&str], r: &mut ChaCha8Rng) -> Option<&'b str> {
        let pool: Vec<&str> = self
            .people
            .values()
            .flatten()
            .map(String::as_str)
            .filter(|p| !exclude.contains(p))
            .collect();
        pool.choose(r).copied()
    }
}

/// Scenes, feedback and derived placeholder values for one task.
pub struct Built {
    pub scenes: Vec<SimScene>,
    pub feedback: Feedback,
    pub extra: Values,
}

type Builder = fn(&Values, &Catalog<'_>, &str, &mut ChaCha8Rng) -> Option<Built>;

pub struct Template {
    pub id: &'static str,
    pub kind: TaskKind,
    pub instruction: &'static str,
    pub plan: &'static str,
    pub program: &'static str,
    pub slots: &'static [Slot],
    pub build: Builder,
}

impl Template {
    /// Regex over the instruction with one named capture per placeholder.
    pub fn pattern(&self) -> String {
        let mut out = String::from("^");
        let mut rest = self.instruction;
        while let Some(start) = rest.find("${") {
            out.push_str(&regex::escape(&rest[..start]));
            let end = rest[start..].find('}').map(|e| e + start).unwrap_or(rest.len());
            out.push_str(&format!("(?P<{}>[a-z]+)", &rest[start + 2..end]));
            rest = &rest[(end + 1).min(rest.len())..];
        }
        out.push_str(&regex::escape(rest));
        out.push('$');
        out
    }

    pub fn supports(&self, tool: &str, pool: SlotPool) -> bool {
        self.slots.iter().any(|s| s.pool == pool && s.consumers.contains(&tool))
    }
}

/// Replaces `${name}` placeholders.
pub fn fill(template: &str, values: &Values) -> String {
    let mut out = template.to_string();
    for (k, v) in values {
        out = out.replace(&format!("${{{k}}}"), v);
    }
    out
}

const fn slot(name: &'static str, pool: SlotPool, consumers: &'static [&'static str]) -> Slot {
    Slot {
        name,
        pool,
        consumers,
        same_category_as: None,
    }
}

struct Item {
    concept: String,
    attrs: Vec<(&'static str, String)>,
}

fn item(concept: &str) -> Item {
    Item {
        concept: concept.to_string(),
        attrs: Vec::new(),
    }
}

fn face(name: &str) -> Item {
    Item {
        concept: name.to_string(),
        attrs: vec![("face", "yes".to_string())],
    }
}

/// Lays entities out left to right in 50px slots; random colors and activities
/// fill any attribute the item does not set.
fn layout(id: &str, items: Vec<Item>, r: &mut ChaCha8Rng) -> SimScene {
    let slot = 50;
    let width = slot * items.len() as i32 + 10;
    let entities = items
        .into_iter()
        .enumerate()
        .map(|(i, it)| {
            let mut attrs = BTreeMap::new();
            attrs.insert("color".to_string(), COLORS[r.gen_range(0..COLORS.len())].to_string());
            attrs.insert("activity".to_string(), ACTIVITIES[r.gen_range(0..ACTIVITIES.len())].to_string());
            for (k, v) in it.attrs {
                attrs.insert(k.to_string(), v);
            }
            SimEntity {
                id: i as u32 + 1,
                concept: it.concept,
                bbox: BBox::new(10 + slot * i as i32, r.gen_range(5..=25), r.gen_range(25..=40), r.gen_range(25..=45)),
                attrs,
            }
        })
        .collect();
    SimScene {
        id: id.to_string(),
        seed: r.gen(),
        width,
        height: 80,
        entities,
        effects: Vec::new(),
    }
}

fn v<'a>(values: &'a Values, k: &str) -> &'a str {
    values.get(k).map(String::as_str).unwrap_or_default()
}

fn answer(text: impl Into<String>) -> Feedback {
    Feedback {
        expected_answer: Some(text.into()),
        ..Default::default()
    }
}

fn two_activities(r: &mut ChaCha8Rng) -> (String, String) {
    let picked: Vec<&str> = ACTIVITIES.choose_multiple(r, 2).copied().collect();
    (picked[0].to_string(), picked[1].to_string())
}

fn build_left_activity(values: &Values, cat: &Catalog<'_>, id: &str, r: &mut ChaCha8Rng) -> Option<Built> {
    let (a, b) = (v(values, "a"), v(values, "b"));
    let (act1, act2) = two_activities(r);
    let d = cat.other_objects(&[a, b], 1, r);
    let mut first = item(a);
    first.attrs.push(("activity", act1.clone()));
    let mut third = item(a);
    third.attrs.push(("activity", act2));
    let mut items = vec![first, item(b), third];
    items.extend(d.into_iter().map(item));
    Some(Built {
        scenes: vec![layout(&format!("{id}-0"), items, r)],
        feedback: answer(act1),
        extra: Values::new(),
    })
}

fn build_color(values: &Values, cat: &Catalog<'_>, id: &str, r: &mut ChaCha8Rng) -> Option<Built> {
    let a = v(values, "a");
    let color = COLORS.choose(r)?.to_string();
    let mut target = item(a);
    target.attrs.push(("color", color.clone()));
    let mut items: Vec<Item> = cat.other_objects(&[a], 2, r).into_iter().map(item).collect();
    items.insert(r.gen_range(0..=items.len()), target);
    Some(Built {
        scenes: vec![layout(&format!("{id}-0"), items, r)],
        feedback: answer(color),
        extra: Values::new(),
    })
}

fn with_count(a: &str, n: usize, cat: &Catalog<'_>, r: &mut ChaCha8Rng) -> Vec<Item> {
    let mut items: Vec<Item> = (0..n).map(|_| item(a)).collect();
    let k = r.gen_range(1..=2);
    items.extend(cat.other_objects(&[a], k, r).into_iter().map(item));
    items.shuffle(r);
    items
}

fn build_count(values: &Values, cat: &Catalog<'_>, id: &str, r: &mut ChaCha8Rng) -> Option<Built> {
    let a = v(values, "a");
    let n = r.gen_range(1..=3);
    let items = with_count(a, n, cat, r);
    Some(Built {
        scenes: vec![layout(&format!("{id}-0"), items, r)],
        feedback: answer(n.to_string()),
        extra: Values::new(),
    })
}

fn build_more(values: &Values, cat: &Catalog<'_>, id: &str, r: &mut ChaCha8Rng) -> Option<Built> {
    let a = v(values, "a");
    let n1 = r.gen_range(0..=3);
    let n2 = loop {
        let n = r.gen_range(0..=3);
        if n != n1 {
            break n;
        }
    };
    let left = layout(&format!("{id}-0"), with_count(a, n1, cat, r), r);
    let right = layout(&format!("{id}-1"), with_count(a, n2, cat, r), r);
    Some(Built {
        scenes: vec![left, right],
        feedback: answer(if n1 > n2 { "yes" } else { "no" }),
        extra: Values::new(),
    })
}

fn build_both(values: &Values, cat: &Catalog<'_>, id: &str, r: &mut ChaCha8Rng) -> Option<Built> {
    let a = v(values, "a");
    let (p1, p2) = (r.gen_bool(0.6), r.gen_bool(0.6));
    let left = layout(&format!("{id}-0"), with_count(a, usize::from(p1), cat, r), r);
    let right = layout(&format!("{id}-1"), with_count(a, usize::from(p2), cat, r), r);
    Some(Built {
        scenes: vec![left, right],
        feedback: answer(if p1 && p2 { "yes" } else { "no" }),
        extra: Values::new(),
    })
}

fn build_replace(values: &Values, cat: &Catalog<'_>, id: &str, r: &mut ChaCha8Rng) -> Option<Built> {
    let (a, b) = (v(values, "a"), v(values, "b"));
    let mut items: Vec<Item> = cat.other_objects(&[a, b], 2, r).into_iter().map(item).collect();
    items.insert(r.gen_range(0..=items.len()), item(a));
    let scene = layout(&format!("{id}-0"), items, r);
    let bbox = scene.entities_of(a).next()?.bbox;
    Some(Built {
        scenes: vec![scene],
        feedback: Feedback {
            expected_edit: Some(vec![
                SceneAssertion::ConceptAt {
                    concept: b.to_string(),
                    bbox,
                },
                SceneAssertion::ConceptAbsent { concept: a.to_string() },
            ]),
            ..Default::default()
        },
        extra: Values::new(),
    })
}

fn effect_feedback(effect: EffectKind, concept: &str, scene: &SimScene) -> Feedback {
    Feedback {
        expected_edit: Some(vec![SceneAssertion::EffectOn {
            effect,
            concept: concept.to_string(),
            entities: scene.entities_of(concept).map(|e| e.id).collect(),
        }]),
        ..Default::default()
    }
}

fn build_emoji(values: &Values, cat: &Catalog<'_>, id: &str, r: &mut ChaCha8Rng) -> Option<Built> {
    let p = v(values, "p");
    let q = cat.other_person(&[p], r)?;
    let mut items = vec![face(p), face(q)];
    items.extend(cat.other_objects(&[], 1, r).into_iter().map(item));
    items.shuffle(r);
    let scene = layout(&format!("{id}-0"), items, r);
    Some(Built {
        feedback: effect_feedback(EffectKind::Emoji, p, &scene),
        scenes: vec![scene],
        extra: Values::new(),
    })
}

fn build_colorpop(values: &Values, cat: &Catalog<'_>, id: &str, r: &mut ChaCha8Rng) -> Option<Built> {
    let a = v(values, "a");
    let mut items: Vec<Item> = cat.other_objects(&[a], 2, r).into_iter().map(item).collect();
    items.insert(r.gen_range(0..=items.len()), item(a));
    let scene = layout(&format!("{id}-0"), items, r);
    Some(Built {
        feedback: effect_feedback(EffectKind::Colorpop, a, &scene),
        scenes: vec![scene],
        extra: Values::new(),
    })
}

fn build_tag(values: &Values, cat: &Catalog<'_>, id: &str, r: &mut ChaCha8Rng) -> Option<Built> {
    let (p1, p2) = (v(values, "p1"), v(values, "p2"));
    let category = cat.category_of(p1)?.to_string();
    let mut items = vec![face(p1), face(p2)];
    items.extend(cat.other_objects(&[], 1, r).into_iter().map(item));
    items.shuffle(r);
    let scene = layout(&format!("{id}-0"), items, r);
    let boxes = scene
        .entities
        .iter()
        .filter(|e| e.has_face())
        .map(|e| LabeledBox {
            label: e.concept.clone(),
            bbox: e.bbox,
        })
        .collect();
    Some(Built {
        scenes: vec![scene],
        feedback: Feedback {
            expected_boxes: Some(boxes),
            ..Default::default()
        },
        extra: [("cat".to_string(), category)].into_iter().collect(),
    })
}

pub fn templates() -> &'static [Template] {
    use SlotPool::*;
    const T: &[Template] = &[
        Template {
            id: "vqa_left_activity",
            kind: TaskKind::Vqa,
            instruction: "What is the ${a} to the left of the ${b} doing?",
            plan: "1. Locate the ${b}.\n2. Crop the region to the left of the ${b}.\n3. Locate the ${a} in the crop.\n4. Ask what the ${a} is doing.\n5. Return the answer.",
            program: "BOX0=LOC(image=IMAGE,object='${b}')\nIMAGE0=CROP(image=IMAGE,box=BOX0,side='left')\nBOX1=LOC(image=IMAGE0,object='${a}')\nANSWER0=VQA(image=IMAGE0,question='what is the ${a} doing')\nFINAL=RESULT(var=ANSWER0)\n",
            slots: &[slot("a", Object, &["LOC", "VQA"]), slot("b", Object, &["LOC"])],
            build: build_left_activity,
        },
        Template {
            id: "vqa_color",
            kind: TaskKind::Vqa,
            instruction: "What color is the ${a}?",
            plan: "1. Ask what color the ${a} is.\n2. Return the answer.",
            program: "ANSWER0=VQA(image=IMAGE,question='what color is the ${a}')\nFINAL=RESULT(var=ANSWER0)\n",
            slots: &[slot("a", Object, &["VQA"])],
            build: build_color,
        },
        Template {
            id: "vqa_count",
            kind: TaskKind::Vqa,
            instruction: "How many ${a} are in the image?",
            plan: "1. Locate every ${a}.\n2. Count the boxes.\n3. Return the count.",
            program: "BOX0=LOC(image=IMAGE,object='${a}')\nANSWER0=COUNT(box=BOX0)\nFINAL=RESULT(var=ANSWER0)\n",
            slots: &[slot("a", Object, &["LOC"])],
            build: build_count,
        },
        Template {
            id: "multi_more",
            kind: TaskKind::MultiImage,
            instruction: "The left image has more ${a} than the right image.",
            plan: "1. Locate every ${a} in the left image.\n2. Locate every ${a} in the right image.\n3. Count both.\n4. Answer yes if the left count is larger.",
            program: "BOX0=LOC(image=LEFT,object='${a}')\nBOX1=LOC(image=RIGHT,object='${a}')\nN0=COUNT(box=BOX0)\nN1=COUNT(box=BOX1)\nANSWER0=EVAL(expr=\"'yes' if {N0} > {N1} else 'no'\")\nFINAL=RESULT(var=ANSWER0)\n",
            slots: &[slot("a", Object, &["LOC"])],
            build: build_more,
        },
        Template {
            id: "multi_both",
            kind: TaskKind::MultiImage,
            instruction: "There is a ${a} in both images.",
            plan: "1. Ask whether there is a ${a} in the left image.\n2. Ask the same of the right image.\n3. Answer yes if both answers are yes.",
            program: "ANSWER0=VQA(image=LEFT,question='is there a ${a}')\nANSWER1=VQA(image=RIGHT,question='is there a ${a}')\nANSWER2=EVAL(expr=\"'yes' if {ANSWER0} == 'yes' and {ANSWER1} == 'yes' else 'no'\")\nFINAL=RESULT(var=ANSWER2)\n",
            slots: &[slot("a", Object, &["VQA"])],
            build: build_both,
        },
        Template {
            id: "edit_replace",
            kind: TaskKind::Edit,
            instruction: "Replace the ${a} with a ${b}.",
            plan: "1. Segment the ${a}.\n2. Replace it with a ${b}.\n3. Return the edited image.",
            program: "OBJ0=SEG(image=IMAGE,object='${a}')\nIMAGE0=REPLACE(image=IMAGE,object=OBJ0,prompt='${b}')\nFINAL=RESULT(var=IMAGE0)\n",
            slots: &[slot("a", Object, &["SEG"]), slot("b", Object, &["REPLACE"])],
            build: build_replace,
        },
        Template {
            id: "edit_emoji",
            kind: TaskKind::Edit,
            instruction: "Hide the face of ${p} with a smiley.",
            plan: "1. Detect faces.\n2. Select the face of ${p}.\n3. Cover it with a smiley.\n4. Return the edited image.",
            program: "OBJ0=FACEDET(image=IMAGE)\nOBJ1=SELECT(image=IMAGE,object=OBJ0,query='${p}')\nIMAGE0=EMOJI(image=IMAGE,object=OBJ1,emoji='smiley')\nFINAL=RESULT(var=IMAGE0)\n",
            slots: &[slot("p", Person, &["SELECT"])],
            build: build_emoji,
        },
        Template {
            id: "edit_colorpop",
            kind: TaskKind::Edit,
            instruction: "Keep the color of the ${a} and make the rest gray.",
            plan: "1. Segment the ${a}.\n2. Keep its color and gray out the rest.\n3. Return the edited image.",
            program: "OBJ0=SEG(image=IMAGE,object='${a}')\nIMAGE0=COLORPOP(image=IMAGE,object=OBJ0)\nFINAL=RESULT(var=IMAGE0)\n",
            slots: &[slot("a", Object, &["SEG"])],
            build: build_colorpop,
        },
        Template {
            id: "tag_people",
            kind: TaskKind::Tag,
            instruction: "Tag the ${cat} in this image.",
            plan: "1. Detect faces.\n2. List famous ${cat}.\n3. Classify each face among them.\n4. Return the tagged boxes.",
            program: "OBJ0=FACEDET(image=IMAGE)\nLIST0=LIST(query='${cat}',max=10)\nOBJ1=CLASSIFY(image=IMAGE,object=OBJ0,categories=LIST0)\nFINAL=RESULT(var=OBJ1)\n",
            slots: &[
                slot("p1", Person, &["CLASSIFY"]),
                Slot {
                    name: "p2",
                    pool: Person,
                    consumers: &["CLASSIFY"],
                    same_category_as: Some("p1"),
                },
            ],
            build: build_tag,
        },
    ];
    T
}

pub fn template(id: &str) -> Option<&'static Template> {
    templates().iter().find(|t| t.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, pretty_print, validate};
    use crate::tools::standard_signatures;
    use regex::Regex;

    fn sample_values(t: &Template) -> Values {
        let mut vals: Values = t.slots.iter().map(|s| (s.name.to_string(), format!("x{}", s.name))).collect();
        vals.insert("cat".into(), "singers".into());
        vals
    }

    #[test]
    fn programs_are_canonical_and_valid() {
        let sigs = standard_signatures();
        for t in templates() {
            let src = fill(t.program, &sample_values(t));
            let ast = parse_program(&src).unwrap();
            assert_eq!(pretty_print(&ast), src, "{}", t.id);
            assert_eq!(validate(&ast, &sigs), vec![], "{}", t.id);
        }
    }

    #[test]
    fn pattern_expansion_matches_fill() {
        for t in templates() {
            let vals: Values = sample_values(t)
                .into_iter()
                .map(|(k, v)| (k, v.replace(|c: char| c.is_ascii_digit(), "")))
                .collect();
            let instruction = fill(t.instruction, &vals);
            let re = Regex::new(&t.pattern()).unwrap();
            let caps = re.captures(&instruction).unwrap_or_else(|| panic!("{} does not match", t.id));
            let mut expanded = String::new();
            caps.expand(t.program, &mut expanded);
            assert_eq!(expanded, fill(t.program, &vals), "{}", t.id);
        }
    }

    #[test]
    fn patterns_are_disjoint_within_kind() {
        for a in templates() {
            for b in templates() {
                if a.id != b.id && a.kind == b.kind {
                    let instruction = fill(a.instruction, &sample_values(a));
                    assert!(!Regex::new(&b.pattern()).unwrap().is_match(&instruction), "{} vs {}", a.id, b.id);
                }
            }
        }
    }
}
