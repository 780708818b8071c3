use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the body a joint belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
    Center,
}

/// Joint hierarchy plus a rest pose, in root-relative meters (x right, y up, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonFile", into = "SkeletonFile")]
pub struct Skeleton {
    joint_names: Vec<String>,
    parent_index: Vec<i32>,
    handedness_map: Vec<Handedness>,
    rest_pose: Vec<[f32; 3]>,
}

/// On-disk sidecar layout. `rest_pose` is optional; missing means all joints at the origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SkeletonFile {
    joint_names: Vec<String>,
    parent_index: Vec<i32>,
    handedness_map: Vec<Handedness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rest_pose: Option<Vec<[f32; 3]>>,
}

impl TryFrom<SkeletonFile> for Skeleton {
    type Error = Error;

    fn try_from(f: SkeletonFile) -> Result<Self> {
        let n = f.joint_names.len();
        let rest = f.rest_pose.unwrap_or_else(|| vec![[0.0; 3]; n]);
        Skeleton::new(f.joint_names, f.parent_index, f.handedness_map, rest)
    }
}

impl From<Skeleton> for SkeletonFile {
    fn from(s: Skeleton) -> Self {
        SkeletonFile {
            joint_names: s.joint_names,
            parent_index: s.parent_index,
            handedness_map: s.handedness_map,
            rest_pose: Some(s.rest_pose),
        }
    }
}

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        parent_index: Vec<i32>,
        handedness_map: Vec<Handedness>,
        rest_pose: Vec<[f32; 3]>,
    ) -> Result<Self> {
        let n = joint_names.len();
        if n == 0 {
            return Err(Error::invalid("skeleton needs at least one joint"));
        }
        if parent_index.len() != n || handedness_map.len() != n || rest_pose.len() != n {
            return Err(Error::invalid(format!(
                "skeleton field lengths disagree: {} names, {} parents, {} handedness tags, {} rest joints",
                n,
                parent_index.len(),
                handedness_map.len(),
                rest_pose.len()
            )));
        }
        let roots = parent_index.iter().filter(|&&p| p == -1).count();
        if roots != 1 {
            return Err(Error::invalid(format!("skeleton must have exactly one root, found {roots}")));
        }
        for (j, &p) in parent_index.iter().enumerate() {
            if p < -1 || p >= n as i32 || p == j as i32 {
                return Err(Error::invalid(format!("joint {j} has invalid parent {p}")));
            }
        }
        // Every joint must reach the root within n hops, otherwise there is a cycle.
        for start in 0..n {
            let mut j = start as i32;
            let mut hops = 0;
            while j != -1 {
                j = parent_index[j as usize];
                hops += 1;
                if hops > n {
                    return Err(Error::invalid(format!("parent cycle through joint {start}")));
                }
            }
        }
        if rest_pose.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rest pose contains non-finite values"));
        }
        Ok(Skeleton {
            joint_names,
            parent_index,
            handedness_map,
            rest_pose,
        })
    }

    /// Desk-scale upper body: root, spine, neck, head and per side shoulder, elbow, wrist and three hand points.
    pub fn upper_body() -> Self {
        let mut names: Vec<String> = ["root", "spine", "neck", "head"].map(String::from).to_vec();
        let mut parents = vec![-1, 0, 1, 2];
        let mut hand = vec![Handedness::Center; 4];
        let mut rest: Vec<[f32; 3]> = vec![
            [0.0, 0.0, 0.0],
            [0.0, 0.25, 0.0],
            [0.0, 0.50, 0.0],
            [0.0, 0.65, 0.02],
        ];
        for (side, sign, prefix) in [(Handedness::Left, -1.0f32, "l"), (Handedness::Right, 1.0, "r")] {
            let base = names.len() as i32;
            let arm: [(&str, i32, [f32; 3]); 6] = [
                ("shoulder", 2, [0.18, 0.48, 0.0]),
                ("elbow", base, [0.24, 0.22, 0.0]),
                ("wrist", base + 1, [0.26, -0.02, 0.02]),
                ("thumb", base + 2, [0.23, -0.07, 0.05]),
                ("index", base + 2, [0.27, -0.10, 0.03]),
                ("pinky", base + 2, [0.29, -0.08, 0.0]),
            ];
            for (name, parent, p) in arm {
                names.push(format!("{prefix}_{name}"));
                parents.push(parent);
                hand.push(side);
                rest.push([sign * p[0], p[1], p[2]]);
            }
        }
        Skeleton::new(names, parents, hand, rest)
            .expect("built-in skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parent_index(&self) -> &[i32] {
        &self.parent_index
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        let p = self.parent_index[joint];
        (p >= 0).then_some(p as usize)
    }

    pub fn handedness(&self, joint: usize) -> Handedness {
        self.handedness_map[joint]
    }

    pub fn handedness_map(&self) -> &[Handedness] {
        &self.handedness_map
    }

    pub fn rest_pose(&self) -> &[[f32; 3]] {
        &self.rest_pose
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// (child, parent) pairs; a tree over J joints has J - 1 bones.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.joint_count()).filter_map(move |j| self.parent(j).map(|p| (j, p)))
    }

    /// Hops from the first joint of this joint's side chain (the one whose parent is a center joint).
    /// Center joints return `None`.
    pub fn side_depth(&self, joint: usize) -> Option<usize> {
        if self.handedness(joint) == Handedness::Center {
            return None;
        }
        let mut depth = 0;
        let mut j = joint;
        while let Some(p) = self.parent(j) {
            if self.handedness(p) == Handedness::Center {
                break;
            }
            depth += 1;
            j = p;
        }
        Some(depth)
    }

    /// The joint on `side` that carries the largest side depth among depth-2 joints, i.e. the wrist
    /// for arm chains shaped like shoulder -> elbow -> wrist -> fingers. Falls back to a name match.
    pub fn wrist(&self, side: Handedness) -> Option<usize> {
        let by_name = (0..self.joint_count()).find(|&j| {
            self.handedness(j) == side && self.joint_names[j].to_ascii_lowercase().contains("wrist")
        });
        by_name.or_else(|| {
            (0..self.joint_count()).find(|&j| self.handedness(j) == side && self.side_depth(j) == Some(2))
        })
    }
}
