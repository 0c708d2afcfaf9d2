//! Fixed token vocabulary shared by every generated world.

use serde::{Deserialize, Serialize};

macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $word)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn word(self) -> &'static str {
                match self {
                    $($name::$variant => $word),+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }
    };
}

token_enum!(ObjectClass {
    Chair => "chair",
    Table => "table",
    Sofa => "sofa",
    Bed => "bed",
    Lamp => "lamp",
    Plant => "plant",
    Cabinet => "cabinet",
    Television => "television",
});

token_enum!(Color {
    Red => "red",
    Blue => "blue",
    Green => "green",
    White => "white",
    Black => "black",
    Brown => "brown",
});

token_enum!(Size {
    Small => "small",
    Medium => "medium",
    Large => "large",
});

token_enum!(Shape {
    Round => "round",
    Square => "square",
    Long => "long",
    Tall => "tall",
});

token_enum!(Relation {
    Near => "near",
    Above => "above",
    Below => "below",
    LeftOf => "left-of",
    RightOf => "right-of",
});

token_enum!(RegionKind {
    Kitchen => "kitchen",
    Bedroom => "bedroom",
    Bathroom => "bathroom",
    LivingRoom => "living-room",
    DiningRoom => "dining-room",
    Hallway => "hallway",
    Office => "office",
    Laundry => "laundry",
    Garage => "garage",
    Balcony => "balcony",
});

impl Size {
    /// Physical extent in meters.
    pub fn meters(self) -> f64 {
        match self {
            Size::Small => 0.3,
            Size::Medium => 0.6,
            Size::Large => 1.0,
        }
    }
}

/// Function words used by the instruction templates.
pub const TEMPLATE_WORDS: &[&str] = &[
    "find", "the", "it", "is", "in", "and", "next", "to", ".", "room", "of",
];

/// What a token id denotes. Content tokens carry the instruction semantics;
/// template tokens are glue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenKind {
    Template,
    Class,
    Color,
    Size,
    Shape,
    Relation,
    Region,
}

#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<(&'static str, TokenKind)>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut words = Vec::new();
        words.extend(TEMPLATE_WORDS.iter().map(|w| (*w, TokenKind::Template)));
        words.extend(ObjectClass::ALL.iter().map(|t| (t.word(), TokenKind::Class)));
        words.extend(Color::ALL.iter().map(|t| (t.word(), TokenKind::Color)));
        words.extend(Size::ALL.iter().map(|t| (t.word(), TokenKind::Size)));
        words.extend(Shape::ALL.iter().map(|t| (t.word(), TokenKind::Shape)));
        words.extend(Relation::ALL.iter().map(|t| (t.word(), TokenKind::Relation)));
        words.extend(RegionKind::ALL.iter().map(|t| (t.word(), TokenKind::Region)));
        Self { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|(w, _)| *w == word)
    }

    pub fn word(&self, id: usize) -> Option<&'static str> {
        self.words.get(id).map(|(w, _)| *w)
    }

    pub fn kind(&self, id: usize) -> Option<TokenKind> {
        self.words.get(id).map(|(_, k)| *k)
    }

    pub(crate) fn must(&self, word: &str) -> usize {
        self.id(word)
            .unwrap_or_else(|| panic!("template word {word:?} missing from vocabulary"))
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
