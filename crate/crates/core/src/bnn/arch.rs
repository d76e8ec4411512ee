use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How a dense layer computes with its weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Continuous,
    Binary,
}

impl LayerKind {
    fn suffix(self) -> char {
        match self {
            LayerKind::Continuous => 'c',
            LayerKind::Binary => 'b',
        }
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" | "c" => Ok(LayerKind::Continuous),
            "binary" | "b" => Ok(LayerKind::Binary),
            other => Err(format!("unknown layer kind {other:?} (expected binary or continuous)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ArchError {
    #[error("architecture spec is empty")]
    Empty,

    #[error("field {field} ({token:?}): {reason}")]
    Field {
        field: usize,
        token: String,
        reason: String,
    },

    #[error("architecture needs an input width and an output width, got {0} field(s)")]
    TooShort(usize),
}

/// Layer widths plus the kind of each dense map between them.
///
/// Text form: widths joined by `-` or `,`, each with a one-letter suffix.
/// `c` or `b` on a width means the dense layer reading from that width is
/// continuous or binary; the final width carries `s` for the softmax output.
/// `784c-1024b-1024b-10s` is 784→1024 continuous, then 1024→1024 and
/// 1024→10 binary.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArchSpec {
    widths: Vec<usize>,
    kinds: Vec<LayerKind>,
}

impl ArchSpec {
    pub fn new(widths: Vec<usize>, kinds: Vec<LayerKind>) -> Result<Self, ArchError> {
        if widths.len() < 2 {
            return Err(ArchError::TooShort(widths.len()));
        }
        if kinds.len() != widths.len() - 1 {
            return Err(ArchError::Field {
                field: widths.len(),
                token: String::new(),
                reason: format!("{} widths need {} layer kinds, got {}", widths.len(), widths.len() - 1, kinds.len()),
            });
        }
        if let Some(i) = widths.iter().position(|&w| w == 0) {
            return Err(ArchError::Field {
                field: i + 1,
                token: "0".into(),
                reason: "width must be at least 1".into(),
            });
        }
        Ok(Self { widths, kinds })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn kinds(&self) -> &[LayerKind] {
        &self.kinds
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn num_dense(&self) -> usize {
        self.kinds.len()
    }

    /// Same widths with the first dense layer replaced by `kind`.
    pub fn with_first_layer(mut self, kind: LayerKind) -> Self {
        self.kinds[0] = kind;
        self
    }
}

impl FromStr for ArchSpec {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, ArchError> {
        let s = s.trim();
        if s.is_empty() {
            return Err(ArchError::Empty);
        }
        let tokens: Vec<&str> = s.split(['-', ',']).map(str::trim).collect();
        let n = tokens.len();
        let mut widths = Vec::with_capacity(n);
        let mut kinds = Vec::with_capacity(n);
        for (i, tok) in tokens.iter().enumerate() {
            let field = i + 1;
            let err = |reason: String| ArchError::Field {
                field,
                token: (*tok).to_string(),
                reason,
            };
            let Some(suffix) = tok.chars().last() else {
                return Err(err("empty field".into()));
            };
            let digits = &tok[..tok.len() - suffix.len_utf8()];
            let width: usize = digits
                .parse()
                .map_err(|_| err(format!("expected a width followed by c, b or s, width part {digits:?} is not a number")))?;
            if width == 0 {
                return Err(err("width must be at least 1".into()));
            }
            let last = i + 1 == n;
            match (suffix, last) {
                ('s', true) => {}
                ('s', false) => return Err(err("softmax output 's' is only allowed on the last field".into())),
                ('c' | 'b', true) => return Err(err(format!("last field must be the softmax output, e.g. \"{width}s\""))),
                ('c', false) => kinds.push(LayerKind::Continuous),
                ('b', false) => kinds.push(LayerKind::Binary),
                (other, _) => return Err(err(format!("unknown layer kind {other:?} (expected c, b or s)"))),
            }
            widths.push(width);
        }
        if n < 2 {
            return Err(ArchError::TooShort(n));
        }
        Self::new(widths, kinds)
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (w, k) in self.widths.iter().zip(&self.kinds) {
            write!(f, "{w}{}-", k.suffix())?;
        }
        write!(f, "{}s", self.num_classes())
    }
}

impl TryFrom<String> for ArchSpec {
    type Error = ArchError;

    fn try_from(s: String) -> Result<Self, ArchError> {
        s.parse()
    }
}

impl From<ArchSpec> for String {
    fn from(a: ArchSpec) -> String {
        a.to_string()
    }
}
