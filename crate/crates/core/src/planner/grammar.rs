//! Template grammar: anchored phrases with typed `{name:type}` slots and
//! `[optional]` segments, gated by trigger keywords.

use std::collections::BTreeMap;

use regex::Regex;
use serde::Deserialize;

use super::PlannerError;

#[derive(Debug, Clone, Deserialize)]
pub struct PatternSpec {
    pub kind: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    pub template: String,
}

#[derive(Debug, Clone, Deserialize)]
struct GrammarFile {
    #[serde(rename = "pattern")]
    patterns: Vec<PatternSpec>,
}

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    ty: SlotType,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SlotType {
    Number,
    Word,
    Text,
}

impl SlotType {
    fn regex(&self) -> &'static str {
        match self {
            SlotType::Number => r"([-+]?\d+(?:\.\d+)?)",
            SlotType::Word => r"([A-Za-z][A-Za-z0-9()+\-]*)",
            SlotType::Text => r"(.*?)",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompiledPattern {
    pub kind: String,
    keywords: Vec<String>,
    template: String,
    slots: Vec<Slot>,
    regex: Regex,
}

/// Captured slot values by name.
pub type Captures = BTreeMap<String, String>;

#[derive(Debug, Clone)]
pub struct GrammarProfile {
    patterns: Vec<CompiledPattern>,
}

fn compile_template(template: &str, relax: Option<&str>) -> Result<(String, Vec<Slot>), PlannerError> {
    let mut re = String::from("(?is)^\\s*");
    let mut slots = Vec::new();
    let mut chars = template.chars().peekable();
    let mut literal = String::new();
    let flush = |literal: &mut String, re: &mut String| {
        let words: Vec<String> = literal
            .split_whitespace()
            .map(regex::escape)
            .collect();
        if !words.is_empty() {
            let leading = literal.starts_with(char::is_whitespace);
            let trailing = literal.ends_with(char::is_whitespace);
            if leading {
                re.push_str("\\s*");
            }
            re.push_str(&words.join("\\s+"));
            if trailing {
                re.push_str("\\s*");
            }
        } else if !literal.is_empty() {
            re.push_str("\\s*");
        }
        literal.clear();
    };
    while let Some(c) = chars.next() {
        match c {
            '{' => {
                flush(&mut literal, &mut re);
                let mut body = String::new();
                for c in chars.by_ref() {
                    if c == '}' {
                        break;
                    }
                    body.push(c);
                }
                let (name, ty) = body
                    .split_once(':')
                    .ok_or_else(|| PlannerError::Grammar(format!("slot `{body}` has no type")))?;
                let ty = match ty.trim() {
                    "number" => SlotType::Number,
                    "word" => SlotType::Word,
                    "text" => SlotType::Text,
                    other => return Err(PlannerError::Grammar(format!("unknown slot type `{other}`"))),
                };
                let name = name.trim().to_string();
                if relax == Some(name.as_str()) {
                    re.push_str(r"(.*?)");
                } else {
                    re.push_str(ty.regex());
                }
                slots.push(Slot { name, ty });
            }
            '[' => {
                flush(&mut literal, &mut re);
                re.push_str("(?:");
            }
            ']' => {
                flush(&mut literal, &mut re);
                re.push_str(")?");
            }
            _ => literal.push(c),
        }
    }
    flush(&mut literal, &mut re);
    re.push_str("\\s*$");
    Ok((re, slots))
}

impl CompiledPattern {
    fn new(spec: &PatternSpec) -> Result<Self, PlannerError> {
        let (re, slots) = compile_template(&spec.template, None)?;
        let regex = Regex::new(&re).map_err(|e| PlannerError::Grammar(e.to_string()))?;
        Ok(Self {
            kind: spec.kind.clone(),
            keywords: spec.keywords.iter().map(|k| k.to_lowercase()).collect(),
            template: spec.template.clone(),
            slots,
            regex,
        })
    }

    fn triggered(&self, lower: &str) -> bool {
        self.keywords.iter().all(|k| lower.contains(k.as_str()))
    }

    fn captures(&self, text: &str) -> Option<Captures> {
        let caps = self.regex.captures(text)?;
        let mut out = Captures::new();
        for (i, slot) in self.slots.iter().enumerate() {
            if let Some(m) = caps.get(i + 1) {
                let v = m.as_str().trim();
                if !(slot.ty == SlotType::Text && v.is_empty()) {
                    out.insert(slot.name.clone(), v.to_string());
                }
            }
        }
        Some(out)
    }

    /// The first number slot whose relaxation lets the text match.
    fn missing_slot(&self, text: &str) -> Option<String> {
        self.slots
            .iter()
            .filter(|s| s.ty != SlotType::Text)
            .find(|s| {
                compile_template(&self.template, Some(&s.name))
                    .ok()
                    .and_then(|(re, _)| Regex::new(&re).ok())
                    .is_some_and(|re| re.is_match(text))
            })
            .map(|s| s.name.clone())
    }
}

impl GrammarProfile {
    pub fn from_specs(specs: &[PatternSpec]) -> Result<Self, PlannerError> {
        let patterns = specs
            .iter()
            .map(CompiledPattern::new)
            .collect::<Result<_, _>>()?;
        Ok(Self { patterns })
    }

    pub fn from_toml(text: &str) -> Result<Self, PlannerError> {
        let file: GrammarFile = toml::from_str(text).map_err(|e| PlannerError::Grammar(e.to_string()))?;
        Self::from_specs(&file.patterns)
    }

    /// Built-in grammar shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_toml(include_str!("../../scenarios/grammar.toml")).expect("bundled grammar is valid")
    }

    /// Matches `text` against every pattern. Exactly one must match.
    pub fn match_text(&self, text: &str) -> Result<(String, Captures), PlannerError> {
        let lower = text.to_lowercase();
        let triggered: Vec<&CompiledPattern> = self.patterns.iter().filter(|p| p.triggered(&lower)).collect();
        let matched: Vec<(&CompiledPattern, Captures)> = triggered
            .iter()
            .filter_map(|p| p.captures(text).map(|c| (*p, c)))
            .collect();
        match matched.len() {
            1 => {
                let (p, c) = matched.into_iter().next().expect("one match");
                Ok((p.kind.clone(), c))
            }
            0 => {
                for p in &triggered {
                    if let Some(slot) = p.missing_slot(text) {
                        return Err(PlannerError::MissingParameter(slot));
                    }
                }
                Err(PlannerError::UnrecognizedInstruction(text.to_string()))
            }
            _ => Err(PlannerError::AmbiguousInstruction(
                matched.iter().map(|(p, _)| p.kind.clone()).collect(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(template: &str) -> GrammarProfile {
        GrammarProfile::from_specs(&[PatternSpec {
            kind: "k".into(),
            keywords: vec!["weigh".into()],
            template: template.into(),
        }])
        .unwrap()
    }

    #[test]
    fn typed_slots_and_optional() {
        let g = profile("Weigh {mass:number} g of {solid:word}.[ Then {rest:text}]");
        let (_, c) = g.match_text("weigh  2.50 g of NaCl.").unwrap();
        assert_eq!(c["mass"], "2.50");
        assert_eq!(c["solid"], "NaCl");
        let (_, c) = g.match_text("Weigh 2.5 g of NaCl. Then stir it").unwrap();
        assert_eq!(c["rest"], "stir it");
    }

    #[test]
    fn missing_number() {
        let g = profile("Weigh {mass:number} g of {solid:word}.");
        assert!(matches!(
            g.match_text("Weigh some g of NaCl."),
            Err(PlannerError::MissingParameter(s)) if s == "mass"
        ));
    }

    #[test]
    fn no_match() {
        let g = profile("Weigh {mass:number} g of {solid:word}.");
        assert!(matches!(
            g.match_text("paint the beaker blue"),
            Err(PlannerError::UnrecognizedInstruction(_))
        ));
    }
}
