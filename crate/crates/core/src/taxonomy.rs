//! Clause categories and their interpretability groups.
//!
//! Every clause of a building code falls into exactly one of seven
//! categories. The categories collapse into three groups, and each group
//! carries a crisp per-clause score used by document-level scoring.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::TaxonomyError;

/// The seven clause categories, in canonical (ordinal) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// Information explicitly available from the building model.
    Direct,
    /// Information derivable from the model by calculation.
    Indirect,
    /// Requires an extended data structure or domain knowledge.
    Method,
    /// Requires external tables, figures, formulas or other clauses.
    Reference,
    /// Macro design guidance.
    General,
    /// Term definitions.
    Term,
    /// Everything else (construction and maintenance requirements).
    Other,
}

impl Category {
    pub const COUNT: usize = 7;

    pub const ALL: [Category; Category::COUNT] = [
        Category::Direct,
        Category::Indirect,
        Category::Method,
        Category::Reference,
        Category::General,
        Category::Term,
        Category::Other,
    ];

    /// Position in [`Category::ALL`]. Used as the class index by classifiers
    /// and as the tie-breaker in argmax (lowest ordinal wins).
    pub const fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<Category> {
        Category::ALL.get(ordinal).copied()
    }

    /// Lowercase token used in every file format.
    pub const fn as_str(self) -> &'static str {
        match self {
            Category::Direct => "direct",
            Category::Indirect => "indirect",
            Category::Method => "method",
            Category::Reference => "reference",
            Category::General => "general",
            Category::Term => "term",
            Category::Other => "other",
        }
    }

    pub const fn group(self) -> InterpretabilityGroup {
        match self {
            Category::Direct | Category::Indirect => InterpretabilityGroup::Easy,
            Category::Method | Category::Reference => InterpretabilityGroup::Medium,
            Category::General | Category::Term | Category::Other => InterpretabilityGroup::Hard,
        }
    }

    pub const fn score(self) -> Score {
        self.group().score()
    }

    /// Whether downstream rule interpretation should attempt the clause
    /// (easy and medium groups).
    pub const fn is_interpretable(self) -> bool {
        !matches!(self.group(), InterpretabilityGroup::Hard)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| TaxonomyError::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpretabilityGroup {
    Easy,
    Medium,
    Hard,
}

impl InterpretabilityGroup {
    pub const ALL: [InterpretabilityGroup; 3] = [
        InterpretabilityGroup::Easy,
        InterpretabilityGroup::Medium,
        InterpretabilityGroup::Hard,
    ];

    pub const fn score(self) -> Score {
        match self {
            InterpretabilityGroup::Easy => Score::from_halves(2),
            InterpretabilityGroup::Medium => Score::from_halves(1),
            InterpretabilityGroup::Hard => Score::ZERO,
        }
    }

    pub fn categories(self) -> impl Iterator<Item = Category> {
        Category::ALL.into_iter().filter(move |c| c.group() == self)
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            InterpretabilityGroup::Easy => "easy",
            InterpretabilityGroup::Medium => "medium",
            InterpretabilityGroup::Hard => "hard",
        }
    }
}

impl fmt::Display for InterpretabilityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An exact non-negative score counted in half points.
///
/// Clause scores are 1, 1/2 or 0, so any sum of them is a whole number of
/// halves and can be carried without rounding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score {
    halves: u64,
}

impl Score {
    pub const ZERO: Score = Score { halves: 0 };

    pub const fn from_halves(halves: u64) -> Score {
        Score { halves }
    }

    pub const fn halves(self) -> u64 {
        self.halves
    }

    pub fn to_f64(self) -> f64 {
        self.halves as f64 / 2.0
    }

    pub fn scaled(self, times: u64) -> Score {
        Score::from_halves(self.halves * times)
    }
}

impl Add for Score {
    type Output = Score;

    fn add(self, rhs: Score) -> Score {
        Score::from_halves(self.halves + rhs.halves)
    }
}

impl AddAssign for Score {
    fn add_assign(&mut self, rhs: Score) {
        self.halves += rhs.halves;
    }
}

impl Sum for Score {
    fn sum<I: Iterator<Item = Score>>(iter: I) -> Score {
        iter.fold(Score::ZERO, Add::add)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.halves % 2 == 0 {
            write!(f, "{}", self.halves / 2)
        } else {
            write!(f, "{}.5", self.halves / 2)
        }
    }
}

/// Group of a category. Total over the enum.
pub fn group_of(category: Category) -> InterpretabilityGroup {
    category.group()
}

/// Per-clause score of a category.
pub fn clause_score(category: Category) -> Score {
    category.score()
}
