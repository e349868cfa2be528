use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

/// The known object categories, numbered 1..=6.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Bottle = 1,
    Bowl = 2,
    Camera = 3,
    Can = 4,
    Laptop = 5,
    Mug = 6,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    Cylinder,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Bottle,
        Category::Bowl,
        Category::Camera,
        Category::Can,
        Category::Laptop,
        Category::Mug,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Category> {
        Self::ALL.get((id as usize).wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Bottle => "bottle",
            Category::Bowl => "bowl",
            Category::Camera => "camera",
            Category::Can => "can",
            Category::Laptop => "laptop",
            Category::Mug => "mug",
        }
    }

    pub fn shape(self) -> Shape {
        match self {
            Category::Camera | Category::Laptop => Shape::Box,
            _ => Shape::Cylinder,
        }
    }

    /// Default half-extent ranges `(min, max)` in metres. For cylinders
    /// x is the radius (y follows x) and z the half-height.
    pub fn default_extents(self) -> (Vec3, Vec3) {
        let (lo, hi) = match self {
            Category::Bottle => ([0.030, 0.030, 0.090], [0.040, 0.040, 0.120]),
            Category::Bowl => ([0.070, 0.070, 0.030], [0.090, 0.090, 0.040]),
            Category::Camera => ([0.060, 0.040, 0.040], [0.080, 0.050, 0.050]),
            Category::Can => ([0.032, 0.032, 0.055], [0.035, 0.035, 0.065]),
            Category::Laptop => ([0.150, 0.110, 0.090], [0.180, 0.130, 0.110]),
            Category::Mug => ([0.040, 0.040, 0.045], [0.050, 0.050, 0.055]),
        };
        (Vec3::from(lo), Vec3::from(hi))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown category label `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_and_names_roundtrip() {
        for c in Category::ALL {
            assert_eq!(Category::from_id(c.id()), Some(c));
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
        }
        assert_eq!(Category::from_id(0), None);
        assert_eq!(Category::from_id(7), None);
        assert!("chair".parse::<Category>().is_err());
    }
}
