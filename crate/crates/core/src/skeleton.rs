//! Joint layout and its body-semantic grouping.
//!
//! The default layout has 75 joints. The motion network regresses each of
//! the four groups with its own recurrent branch; evaluation additionally
//! looks at the right arm (elbow and wrist), the left arm and the left-hand
//! fingers.
//!
//! Default joint order:
//!
//! | indices | joints | group |
//! |---|---|---|
//! | 0..=14 | pelvis, spine1-3, neck, head, head_top, jaw, nose, eyes, ears, clavicles | others |
//! | 15..=17 | left shoulder, elbow, wrist | left_arm |
//! | 18..=37 | left thumb, index, middle, ring, pinky (4 joints each, base to tip) | left_hand |
//! | 38..=40 | right shoulder, elbow, wrist | right_hand_arm |
//! | 41..=60 | right-hand fingers, same order as the left | right_hand_arm |
//! | 61..=74 | hips, knees, ankles, heels, feet, big toes, small toes (left then right) | others |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four regression branches of the motion network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    LeftHand,
    LeftArm,
    RightHandArm,
    Others,
}

impl Branch {
    pub const ALL: [Branch; 4] = [Branch::LeftHand, Branch::LeftArm, Branch::RightHandArm, Branch::Others];

    pub fn name(self) -> &'static str {
        match self {
            Branch::LeftHand => "left_hand",
            Branch::LeftArm => "left_arm",
            Branch::RightHandArm => "right_hand_arm",
            Branch::Others => "others",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointGroups {
    pub left_hand: Vec<usize>,
    pub left_arm: Vec<usize>,
    pub right_hand_arm: Vec<usize>,
    pub others: Vec<usize>,
}

impl JointGroups {
    pub fn get(&self, b: Branch) -> &[usize] {
        match b {
            Branch::LeftHand => &self.left_hand,
            Branch::LeftArm => &self.left_arm,
            Branch::RightHandArm => &self.right_hand_arm,
            Branch::Others => &self.others,
        }
    }
}

/// Joint subsets reported separately by the evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalGroups {
    /// Right elbow and wrist.
    pub ra: Vec<usize>,
    pub la: Vec<usize>,
    /// Left-hand finger joints.
    pub lf: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonSchema {
    pub n_joints: usize,
    pub joint_names: Vec<String>,
    pub groups: JointGroups,
    pub eval_groups: EvalGroups,
}

const FINGERS: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];

impl Default for SkeletonSchema {
    fn default() -> Self {
        let mut names: Vec<String> = [
            "pelvis",
            "spine1",
            "spine2",
            "spine3",
            "neck",
            "head",
            "head_top",
            "jaw",
            "nose",
            "left_eye",
            "right_eye",
            "left_ear",
            "right_ear",
            "left_clavicle",
            "right_clavicle",
            "left_shoulder",
            "left_elbow",
            "left_wrist",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let hand = |side: &str| -> Vec<String> {
            FINGERS
                .iter()
                .flat_map(|f| (1..=4).map(move |k| format!("{side}_{f}{k}")))
                .collect()
        };
        names.extend(hand("left"));
        names.extend(["right_shoulder", "right_elbow", "right_wrist"].map(String::from));
        names.extend(hand("right"));
        for part in ["hip", "knee", "ankle", "heel", "foot", "big_toe", "small_toe"] {
            names.push(format!("left_{part}"));
            names.push(format!("right_{part}"));
        }
        debug_assert_eq!(names.len(), 75);
        let others = (0..=14).chain(61..=74).collect();
        SkeletonSchema {
            n_joints: names.len(),
            joint_names: names,
            groups: JointGroups {
                left_hand: (18..=37).collect(),
                left_arm: (15..=17).collect(),
                right_hand_arm: (38..=60).collect(),
                others,
            },
            eval_groups: EvalGroups {
                ra: vec![39, 40],
                la: (15..=17).collect(),
                lf: (18..=37).collect(),
            },
        }
    }
}

impl SkeletonSchema {
    /// Six-joint layout for small tests.
    pub fn tiny() -> Self {
        SkeletonSchema {
            n_joints: 6,
            joint_names: vec![],
            groups: JointGroups {
                left_hand: vec![1, 4],
                left_arm: vec![0],
                right_hand_arm: vec![2, 5],
                others: vec![3],
            },
            eval_groups: EvalGroups {
                ra: vec![2],
                la: vec![0],
                lf: vec![1, 4],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.joint_names.is_empty() && self.joint_names.len() != self.n_joints {
            return Err(Error::Config(format!(
                "{} joint names for {} joints",
                self.joint_names.len(),
                self.n_joints
            )));
        }
        let mut seen = vec![false; self.n_joints];
        for b in Branch::ALL {
            let g = self.groups.get(b);
            if g.is_empty() {
                return Err(Error::Config(format!("group {} is empty", b.name())));
            }
            for &j in g {
                if j >= self.n_joints {
                    return Err(Error::Config(format!("joint {j} in {} is out of range", b.name())));
                }
                if std::mem::replace(&mut seen[j], true) {
                    return Err(Error::Config(format!("joint {j} assigned to more than one group")));
                }
            }
        }
        if let Some(j) = seen.iter().position(|&s| !s) {
            return Err(Error::Config(format!("joint {j} belongs to no group")));
        }
        let subset = |sub: &[usize], sup: &[usize], what: &str| {
            if sub.iter().all(|j| sup.contains(j)) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} is not contained in its branch group")))
            }
        };
        subset(&self.eval_groups.ra, &self.groups.right_hand_arm, "RA")?;
        subset(&self.eval_groups.la, &self.groups.left_arm, "LA")?;
        subset(&self.eval_groups.lf, &self.groups.left_hand, "LF")?;
        Ok(())
    }

    pub fn all_joints(&self) -> Vec<usize> {
        (0..self.n_joints).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: SkeletonSchema =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}
