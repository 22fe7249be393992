//! Shape, texture, and color names, the 24 shape-texture categories, and the
//! caption tokenizer over a fixed 28-word vocabulary.
//!
//! Captions, gaze prompts, and embodiment prefixes all draw from the same
//! token table, so the text encoder sees one closed vocabulary. Token 0 is
//! the null token: it encodes the empty prompt and fills padded positions,
//! which attention masks by sequence length.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Result, WorldError};

/// Token id of the null word; also the pad value in batched id buffers.
pub const NULL_TOKEN: u32 = 0;

/// Every word the caption grammar, gaze prompts, and embodiment prefixes can
/// emit, in fixed id order. Index in this table is the token id.
pub const TOKENS: [&str; 28] = [
    "<null>", "a", "the", "gaze", "at", "left", "right", "above", "below", "of", "human",
    "robot", "red", "green", "blue", "yellow", "purple", "orange", "striped", "dotted",
    "circle", "square", "triangle", "diamond", "cross", "ring", "star", "bar",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Diamond,
    Cross,
    Ring,
    Star,
    Bar,
}

pub const SHAPES: [Shape; 8] = [
    Shape::Circle,
    Shape::Square,
    Shape::Triangle,
    Shape::Diamond,
    Shape::Cross,
    Shape::Ring,
    Shape::Star,
    Shape::Bar,
];

impl Shape {
    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Diamond => "diamond",
            Shape::Cross => "cross",
            Shape::Ring => "ring",
            Shape::Star => "star",
            Shape::Bar => "bar",
        }
    }
}

/// Surface texture of a shape. `Solid` has no caption word: a solid circle
/// is written plainly as "circle".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Solid,
    Striped,
    Dotted,
}

pub const TEXTURES: [Texture; 3] = [Texture::Solid, Texture::Striped, Texture::Dotted];

impl Texture {
    /// Caption word, or `None` for the unnamed solid texture.
    pub fn word(self) -> Option<&'static str> {
        match self {
            Texture::Solid => None,
            Texture::Striped => Some("striped"),
            Texture::Dotted => Some("dotted"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
}

pub const COLORS: [Color; 6] = [
    Color::Red,
    Color::Green,
    Color::Blue,
    Color::Yellow,
    Color::Purple,
    Color::Orange,
];

impl Color {
    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
        }
    }

    /// Saturated RGB used in the plain style.
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 50, 47],
            Color::Green => [64, 180, 60],
            Color::Blue => [38, 110, 230],
            Color::Yellow => [235, 200, 40],
            Color::Purple => [150, 70, 200],
            Color::Orange => [235, 130, 30],
        }
    }
}

/// A shape-texture pair, the unit of the seen/unseen axis. Colors are
/// attributes of objects, not part of the category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Category {
    pub shape: Shape,
    pub texture: Texture,
}

impl Category {
    pub fn new(shape: Shape, texture: Texture) -> Self {
        Category { shape, texture }
    }

    /// Caption form: "circle", "striped circle", "dotted bar".
    pub fn name(self) -> String {
        match self.texture.word() {
            Some(t) => format!("{t} {}", self.shape.word()),
            None => self.shape.word().to_string(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let (a, b) = (parts.next(), parts.next());
        if parts.next().is_some() {
            return Err(WorldError::format(format!("bad category '{s}'")));
        }
        let (texture, shape_word) = match (a, b) {
            (Some(w), None) => (Texture::Solid, w),
            (Some("striped"), Some(w)) => (Texture::Striped, w),
            (Some("dotted"), Some(w)) => (Texture::Dotted, w),
            _ => return Err(WorldError::format(format!("bad category '{s}'"))),
        };
        let shape = SHAPES
            .into_iter()
            .find(|sh| sh.word() == shape_word)
            .ok_or_else(|| WorldError::format(format!("unknown shape '{shape_word}'")))?;
        Ok(Category { shape, texture })
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// All 24 categories in fixed shape-major order.
pub fn all_categories() -> Vec<Category> {
    let mut out = Vec::with_capacity(24);
    for shape in SHAPES {
        for texture in TEXTURES {
            out.push(Category { shape, texture });
        }
    }
    out
}

/// The closed caption vocabulary with word-to-id lookup.
#[derive(Debug, Clone)]
pub struct Vocab {
    ids: std::collections::HashMap<&'static str, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let ids = TOKENS
            .iter()
            .enumerate()
            .map(|(i, w)| (*w, i as u32))
            .collect();
        Vocab { ids }
    }

    pub fn len(&self) -> usize {
        TOKENS.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn word(&self, id: u32) -> Option<&'static str> {
        TOKENS.get(id as usize).copied()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    /// Whitespace tokenization over the closed vocabulary. The empty string
    /// encodes to the length-1 null sequence.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        if text.trim().is_empty() {
            return Ok(vec![NULL_TOKEN]);
        }
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| WorldError::format(format!("word '{w}' not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let words: Result<Vec<&str>> = ids
            .iter()
            .map(|&i| {
                self.word(i)
                    .ok_or_else(|| WorldError::format(format!("token id {i} out of range")))
            })
            .collect();
        Ok(words?.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_four_categories_with_unique_names() {
        let cats = all_categories();
        assert_eq!(cats.len(), 24);
        let names: std::collections::HashSet<String> =
            cats.iter().map(|c| c.name()).collect();
        assert_eq!(names.len(), 24);
        for c in cats {
            assert_eq!(Category::parse(&c.name()).unwrap(), c);
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let v = Vocab::new();
        let ids = v.encode("a red striped circle left of a blue square").unwrap();
        assert_eq!(
            v.decode(&ids).unwrap(),
            "a red striped circle left of a blue square"
        );
        assert_eq!(v.encode("").unwrap(), vec![NULL_TOKEN]);
        assert!(v.encode("zebra").is_err());
    }

    #[test]
    fn every_caption_word_has_one_id() {
        let v = Vocab::new();
        assert_eq!(v.len(), 28);
        for (i, w) in TOKENS.iter().enumerate() {
            assert_eq!(v.id(w), Some(i as u32));
        }
    }
}
