use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which patches are intervened on together when attributing one patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionOp {
    /// The patch alone.
    NoPad,
    /// All patches within Chebyshev distance `radius`.
    Box { radius: usize },
    /// All patches within Manhattan distance `radius`.
    Manhattan { radius: usize },
}

impl Default for SelectionOp {
    fn default() -> Self {
        SelectionOp::Box { radius: 1 }
    }
}

impl SelectionOp {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionOp::Box { radius: 0 } | SelectionOp::Manhattan { radius: 0 } => Err(
                Error::InvalidArgument("selection radius must be at least 1".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Patch indices (not token indices) selected around `center`, in
    /// ascending order, clipped at the grid border.
    pub fn select(&self, center: usize, grid: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if center >= grid * grid {
            return Err(Error::InvalidArgument(format!(
                "center patch {center} outside a {grid}x{grid} grid"
            )));
        }
        let (cy, cx) = ((center / grid) as isize, (center % grid) as isize);
        let within = |y: isize, x: isize| -> bool {
            let (dy, dx) = ((y - cy).unsigned_abs(), (x - cx).unsigned_abs());
            match *self {
                SelectionOp::NoPad => dy == 0 && dx == 0,
                SelectionOp::Box { radius } => dy.max(dx) <= radius,
                SelectionOp::Manhattan { radius } => dy + dx <= radius,
            }
        };
        let g = grid as isize;
        Ok((0..g)
            .flat_map(|y| (0..g).map(move |x| (y, x)))
            .filter(|&(y, x)| within(y, x))
            .map(|(y, x)| (y * g + x) as usize)
            .collect())
    }

    pub fn label(&self) -> String {
        match *self {
            SelectionOp::NoPad => "nopad".into(),
            SelectionOp::Box { radius } => format!("box{radius}"),
            SelectionOp::Manhattan { radius } => format!("manhattan{radius}"),
        }
    }
}

impl std::str::FromStr for SelectionOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let radius = |digits: &str| {
            digits
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad selection {s:?}")))
        };
        let op = if s == "nopad" {
            SelectionOp::NoPad
        } else if let Some(r) = s.strip_prefix("box") {
            SelectionOp::Box { radius: radius(r)? }
        } else if let Some(r) = s.strip_prefix("manhattan") {
            SelectionOp::Manhattan { radius: radius(r)? }
        } else {
            return Err(Error::InvalidArgument(format!("unknown selection {s:?}")));
        };
        op.validate()?;
        Ok(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_counts_on_four_by_four() {
        let b = SelectionOp::Box { radius: 1 };
        assert_eq!(b.select(5, 4).unwrap().len(), 9);
        assert_eq!(b.select(0, 4).unwrap(), vec![0, 1, 4, 5]);
        assert_eq!(b.select(1, 4).unwrap().len(), 6);
    }

    #[test]
    fn manhattan_cross() {
        let m = SelectionOp::Manhattan { radius: 1 };
        assert_eq!(m.select(5, 4).unwrap(), vec![1, 4, 5, 6, 9]);
    }

    #[test]
    fn nopad_and_errors() {
        assert_eq!(SelectionOp::NoPad.select(7, 4).unwrap(), vec![7]);
        assert!(SelectionOp::NoPad.select(16, 4).is_err());
        assert!(SelectionOp::Box { radius: 0 }.select(0, 4).is_err());
    }

    #[test]
    fn parses_cli_names() {
        for name in ["nopad", "box1", "box2", "manhattan1"] {
            assert_eq!(name.parse::<SelectionOp>().unwrap().label(), name);
        }
        assert!("ring1".parse::<SelectionOp>().is_err());
    }

    #[test]
    fn center_always_included() {
        for op in [
            SelectionOp::NoPad,
            SelectionOp::Box { radius: 2 },
            SelectionOp::Manhattan { radius: 1 },
        ] {
            for c in 0..25 {
                let s = op.select(c, 5).unwrap();
                assert!(s.contains(&c));
                assert!(s.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
