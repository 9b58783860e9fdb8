//! Skeleton topology and the static graphs derived from it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use symgnn_autodiff::Tensor;

use crate::error::{ensure, Error, Result};

/// Joint count, bones, joint-to-part map and the root joint that orients
/// bones. Validated on construction and on deserialisation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonFile", into = "SkeletonFile")]
pub struct SkeletonSpec {
    m: usize,
    bones: Vec<(usize, usize)>,
    parts: Vec<usize>,
    root: usize,
    num_parts: usize,
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    #[serde(rename = "M")]
    m: usize,
    bones: Vec<[usize; 2]>,
    parts: Vec<usize>,
    root: usize,
}

impl TryFrom<SkeletonFile> for SkeletonSpec {
    type Error = Error;

    fn try_from(f: SkeletonFile) -> Result<Self> {
        SkeletonSpec::new(f.m, f.bones.iter().map(|b| (b[0], b[1])).collect(), f.parts, f.root)
    }
}

impl From<SkeletonSpec> for SkeletonFile {
    fn from(s: SkeletonSpec) -> Self {
        SkeletonFile {
            m: s.m,
            bones: s.bones.iter().map(|&(i, j)| [i, j]).collect(),
            parts: s.parts,
            root: s.root,
        }
    }
}

impl SkeletonSpec {
    pub fn new(m: usize, bones: Vec<(usize, usize)>, parts: Vec<usize>, root: usize) -> Result<Self> {
        ensure!(m >= 1, "skeleton needs at least one joint");
        ensure!(parts.len() == m, "parts has {} entries for {m} joints", parts.len());
        ensure!(root < m, "root {root} out of range for {m} joints");
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &bones {
            ensure!(i < m && j < m, "bone ({i}, {j}) out of range for {m} joints");
            ensure!(i != j, "bone ({i}, {j}) is a self-loop");
            ensure!(seen.insert((i.min(j), i.max(j))), "duplicate bone ({i}, {j})");
        }
        let num_parts = parts.iter().max().map_or(0, |&p| p + 1);
        for p in 0..num_parts {
            ensure!(parts.contains(&p), "part {p} has no joints");
        }
        let spec = Self { m, bones, parts, root, num_parts };
        let dist = spec.hop_distances();
        ensure!(
            dist[root].iter().all(Option::is_some),
            "skeleton graph is not connected"
        );
        Ok(spec)
    }

    /// The 11-joint stick figure used by the synthetic generator: head, neck,
    /// shoulders, elbows, hips, knees and a root, grouped into 6 parts.
    pub fn synthetic() -> Self {
        // 0 head, 1 neck, 2 l_shoulder, 3 l_elbow, 4 r_shoulder, 5 r_elbow,
        // 6 l_hip, 7 l_knee, 8 r_hip, 9 r_knee, 10 root
        let bones = vec![(10, 1), (1, 0), (1, 2), (2, 3), (1, 4), (4, 5), (10, 6), (6, 7), (10, 8), (8, 9)];
        // head, torso, left arm, right arm, left leg, right leg
        let parts = vec![0, 1, 2, 2, 3, 3, 4, 4, 5, 5, 1];
        Self::new(11, bones, parts, 10).expect("valid built-in skeleton")
    }

    /// 21-joint humanoid with the 10-part partition: head, torso, upper arms,
    /// forearms, thighs and crura.
    pub fn humanoid() -> Self {
        // 0 pelvis, 1 spine, 2 chest, 3 neck, 4 head,
        // 5-8 left shoulder/elbow/wrist/hand, 9-12 right arm,
        // 13-16 left hip/knee/ankle/foot, 17-20 right leg
        let bones = vec![
            (0, 1), (1, 2), (2, 3), (3, 4),
            (2, 5), (5, 6), (6, 7), (7, 8),
            (2, 9), (9, 10), (10, 11), (11, 12),
            (0, 13), (13, 14), (14, 15), (15, 16),
            (0, 17), (17, 18), (18, 19), (19, 20),
        ];
        let parts = vec![1, 1, 1, 0, 0, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9];
        Self::new(21, bones, parts, 0).expect("valid built-in skeleton")
    }

    pub fn num_joints(&self) -> usize {
        self.m
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn num_parts(&self) -> usize {
        self.num_parts
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Binary adjacency with self-loops.
    pub fn adjacency(&self) -> Tensor<f64> {
        let mut a = Tensor::eye(self.m);
        for &(i, j) in &self.bones {
            a.set(&[i, j], 1.0);
            a.set(&[j, i], 1.0);
        }
        a
    }

    fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.m];
        for &(i, j) in &self.bones {
            nb[i].push(j);
            nb[j].push(i);
        }
        nb
    }

    /// All-pairs hop distances (`None` when unreachable).
    pub fn hop_distances(&self) -> Vec<Vec<Option<usize>>> {
        let nb = self.neighbours();
        (0..self.m)
            .map(|s| {
                let mut d = vec![None; self.m];
                d[s] = Some(0);
                let mut q = VecDeque::from([s]);
                while let Some(u) = q.pop_front() {
                    for &v in &nb[u] {
                        if d[v].is_none() {
                            d[v] = Some(d[u].unwrap() + 1);
                            q.push_back(v);
                        }
                    }
                }
                d
            })
            .collect()
    }

    /// `(centripetal, centrifugal)` endpoints of every bone, in bone order;
    /// the centripetal endpoint is the one nearer the root.
    pub fn bone_orientation(&self) -> Vec<(usize, usize)> {
        let depth = &self.hop_distances()[self.root];
        self.bones
            .iter()
            .map(|&(i, j)| if depth[i] <= depth[j] { (i, j) } else { (j, i) })
            .collect()
    }

    /// Relabels joints: joint `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        ensure!(perm.len() == self.m, "permutation length {} for {} joints", perm.len(), self.m);
        let mut parts = vec![0; self.m];
        for (i, &p) in perm.iter().enumerate() {
            parts[p] = self.parts[i];
        }
        let bones = self.bones.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        Self::new(self.m, bones, parts, perm[self.root])
    }
}

/// `D⁻¹A` for the self-looped adjacency: rows sum to one.
pub fn normalize_adjacency(spec: &SkeletonSpec) -> Tensor<f64> {
    row_normalize(spec.adjacency())
}

fn row_normalize(mut a: Tensor<f64>) -> Tensor<f64> {
    let n = a.shape()[1];
    for row in a.data_mut().chunks_mut(n) {
        let d: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= d);
    }
    a
}

/// Powers `Ã¹ … Ã^Γ` with their (initial, all-ones) edge masks.
#[derive(Clone, Debug)]
pub struct StructuralSupports {
    pub supports: Vec<Tensor<f64>>,
    pub masks: Vec<Tensor<f64>>,
}

impl StructuralSupports {
    pub fn new(a_tilde: &Tensor<f64>, gamma: usize) -> Result<Self> {
        ensure!(gamma >= 1, "Γ must be at least 1, got {gamma}");
        let m = a_tilde.shape()[0];
        let mut supports = vec![a_tilde.clone()];
        for _ in 1..gamma {
            let next = supports.last().unwrap().matmul(a_tilde)?;
            supports.push(next);
        }
        Ok(Self { supports, masks: vec![Tensor::ones(&[m, m]); gamma] })
    }

    pub fn gamma(&self) -> usize {
        self.supports.len()
    }
}

/// Row-normalised part adjacency with its (initial) mask.
#[derive(Clone, Debug)]
pub struct PartGraph {
    pub support: Tensor<f64>,
    pub mask: Tensor<f64>,
}

impl PartGraph {
    /// Parts are adjacent when some bone joins their joints.
    pub fn build(spec: &SkeletonSpec) -> Self {
        let p = spec.num_parts();
        let mut a = Tensor::eye(p);
        for &(i, j) in spec.bones() {
            let (pi, pj) = (spec.parts[i], spec.parts[j]);
            a.set(&[pi, pj], 1.0);
            a.set(&[pj, pi], 1.0);
        }
        Self { support: row_normalize(a), mask: Tensor::ones(&[p, p]) }
    }
}

/// Line graph of the skeleton: one node per bone, edges between bones that
/// share a joint. Each bone takes the part of its centripetal joint; part ids
/// are then renumbered densely in order of first use.
pub fn build_bone_dual(spec: &SkeletonSpec) -> Result<SkeletonSpec> {
    let bones = spec.bones();
    ensure!(!bones.is_empty(), "bone dual of a skeleton without bones");
    let mut edges = Vec::new();
    for a in 0..bones.len() {
        for b in a + 1..bones.len() {
            let (i, j) = bones[a];
            let (k, l) = bones[b];
            let shared = [i == k, i == l, j == k, j == l].iter().filter(|&&s| s).count();
            if shared == 1 {
                edges.push((a, b));
            }
        }
    }
    let orient = spec.bone_orientation();
    let mut remap: Vec<Option<usize>> = vec![None; spec.num_parts()];
    let mut next = 0;
    let parts = orient
        .iter()
        .map(|&(c, _)| {
            let p = spec.parts[c];
            *remap[p].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    let root = orient.iter().position(|&(c, _)| c == spec.root()).unwrap_or(0);
    // disjoint bones leave the dual disconnected; connectivity is only
    // required of real skeletons, so validate the rest by hand
    let dual = SkeletonSpec {
        m: bones.len(),
        bones: edges,
        parts,
        root,
        num_parts: next,
    };
    Ok(dual)
}

/// Bone vectors `x_centrifugal − x_centripetal` per frame of a `[T, M, 3]`
/// clip; output `[T, B, 3]`.
pub fn bone_features(x: &Tensor<f64>, spec: &SkeletonSpec) -> Result<Tensor<f64>> {
    let s = x.shape();
    ensure!(
        s.len() == 3 && s[1] == spec.num_joints() && s[2] == 3,
        "bone_features expects [T, {}, 3], got {s:?}",
        spec.num_joints()
    );
    ensure!(!spec.bones().is_empty(), "skeleton has no bones");
    let orient = spec.bone_orientation();
    let (t, m, b) = (s[0], s[1], orient.len());
    let d = x.data();
    let mut out = Vec::with_capacity(t * b * 3);
    for f in 0..t {
        for &(i, j) in &orient {
            for c in 0..3 {
                out.push(d[(f * m + j) * 3 + c] - d[(f * m + i) * 3 + c]);
            }
        }
    }
    Ok(Tensor::new(&[t, b, 3], out)?)
}
