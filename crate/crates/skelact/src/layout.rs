//! Joint layouts: skeletal parent maps and body-part groupings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A skeleton layout: for each joint its parent in the kinematic tree
/// (None = root) and the body part it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLayout {
    pub name: String,
    pub parents: Vec<Option<usize>>,
    pub parts: Vec<usize>,
    pub num_parts: usize,
}

impl JointLayout {
    /// 17-keypoint COCO ordering:
    /// 0 nose, 1/2 eyes, 3/4 ears, 5/6 shoulders, 7/8 elbows, 9/10 wrists,
    /// 11/12 hips, 13/14 knees, 15/16 ankles (left first in each pair).
    ///
    /// Parent map (root = nose): eyes→nose, ears→eyes, shoulders→nose,
    /// elbows→shoulders, wrists→elbows, hips→shoulders, knees→hips,
    /// ankles→knees. 16 edges in total.
    ///
    /// Parts (P=5): head {0..=4}, left arm {5,7,9}, right arm {6,8,10},
    /// left leg {11,13,15}, right leg {12,14,16}.
    pub fn coco17() -> Self {
        let parents = vec![
            None,
            Some(0),
            Some(0),
            Some(1),
            Some(2),
            Some(0),
            Some(0),
            Some(5),
            Some(6),
            Some(7),
            Some(8),
            Some(5),
            Some(6),
            Some(11),
            Some(12),
            Some(13),
            Some(14),
        ];
        let parts = vec![0, 0, 0, 0, 0, 1, 2, 1, 2, 1, 2, 3, 4, 3, 4, 3, 4];
        JointLayout {
            name: "coco17".into(),
            parents,
            parts,
            num_parts: 5,
        }
    }

    /// Degenerate single-joint layout.
    pub fn single() -> Self {
        JointLayout {
            name: "single".into(),
            parents: vec![None],
            parts: vec![0],
            num_parts: 1,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "coco17" => Ok(Self::coco17()),
            "single" => Ok(Self::single()),
            other => Err(Error::config(format!("unknown joint layout '{other}'"))),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    /// (child, parent) skeletal edges.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (c, p)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.num_joints();
        if v == 0 {
            return Err(Error::config("layout has no joints"));
        }
        if self.parts.len() != v {
            return Err(Error::config(format!(
                "layout '{}': {} joints but {} part assignments",
                self.name,
                v,
                self.parts.len()
            )));
        }
        if self.parents.iter().filter(|p| p.is_none()).count() != 1 {
            return Err(Error::config("layout must have exactly one root joint"));
        }
        for (j, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                if *p >= v {
                    return Err(Error::config(format!("joint {j} has parent {p} >= V")));
                }
            }
        }
        for (j, &part) in self.parts.iter().enumerate() {
            if part >= self.num_parts {
                return Err(Error::config(format!(
                    "joint {j} assigned to part {part} >= P={}",
                    self.num_parts
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coco17_has_16_edges_and_5_parts() {
        let l = JointLayout::coco17();
        l.validate().unwrap();
        assert_eq!(l.num_joints(), 17);
        assert_eq!(l.edges().len(), 16);
        assert_eq!(l.num_parts, 5);
        // every joint in exactly one part
        for p in 0..5 {
            assert!(l.parts.iter().any(|&x| x == p));
        }
    }

    #[test]
    fn single_joint_layout_valid() {
        let l = JointLayout::single();
        l.validate().unwrap();
        assert!(l.edges().is_empty());
    }
}
