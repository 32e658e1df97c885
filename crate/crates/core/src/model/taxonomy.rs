//! Four-dimension context taxonomy: what kind of context, where it came
//! from, how far it reaches, and whether it still holds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Raised when a taxonomy string is not one of the closed set.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {dimension} value `{value}` (expected one of: {expected})")]
pub struct UnknownTaxonomyValue {
    pub dimension: &'static str,
    pub value: String,
    pub expected: String,
}

macro_rules! taxonomy_enum {
    ($(#[$meta:meta])* $name:ident, $dimension:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub const DIMENSION: &'static str = $dimension;

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownTaxonomyValue;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(UnknownTaxonomyValue {
                        dimension: $dimension,
                        value: s.to_string(),
                        expected: [$($text),+].join(", "),
                    }),
                }
            }
        }
    };
}

taxonomy_enum!(
    /// What kind of context it is.
    ContextKind, "kind", {
        Temporal => "temporal",
        Emotional => "emotional",
        Social => "social",
        Procedural => "procedural",
        Strategic => "strategic",
        Historical => "historical",
    }
);

taxonomy_enum!(
    /// Where the context originated.
    ContextSource, "source", {
        User => "user",
        System => "system",
        Ambient => "ambient",
        Organizational => "organizational",
        Document => "document",
    }
);

taxonomy_enum!(
    /// How far the context reaches.
    ContextScope, "scope", {
        Task => "task",
        Process => "process",
        Enterprise => "enterprise",
    }
);

taxonomy_enum!(
    /// Whether the context still holds.
    ContextState, "state", {
        Active => "active",
        Latent => "latent",
        Decayed => "decayed",
        Contradictory => "contradictory",
    }
);
