//! Multi-branch, two-scale backbone: one branch per difference order, each
//! interleaving joint- and part-scale graph-temporal blocks with
//! bidirectional fusion.

use rand::Rng;
use serde::{Deserialize, Serialize};
use symgnn_autodiff::{ParamStore, Real, Tensor, Var};

use crate::agim::{Agim, AgimConfig};
use crate::error::{ensure, Result};
use crate::graph::{difference, BlockShape, GtcBlock, Padding};
use crate::nn::Ctx;
use crate::skeleton::{normalize_adjacency, PartGraph, SkeletonSpec, StructuralSupports};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Light4,
    Full9,
}

impl Profile {
    /// Joint-scale block layouts; part-scale blocks 2.. use the same ones.
    pub fn blocks(self, input: usize) -> Vec<BlockShape> {
        let b = |input, spatial, output, kernel, stride| BlockShape { input, spatial, output, kernel, stride };
        match self {
            Profile::Light4 => vec![
                b(input, 32, 32, 9, 1),
                b(32, 32, 64, 9, 2),
                b(128, 128, 128, 9, 2),
                b(256, 256, 256, 7, 2),
            ],
            Profile::Full9 => vec![
                b(input, 64, 64, 9, 1),
                b(64, 64, 64, 9, 1),
                b(64, 64, 128, 9, 2),
                b(256, 128, 128, 9, 1),
                b(128, 128, 128, 9, 1),
                b(128, 128, 256, 9, 2),
                b(512, 256, 256, 9, 1),
                b(256, 256, 256, 9, 1),
                b(256, 256, 256, 9, 1),
            ],
        }
    }

    /// 1-based block indices followed by bidirectional fusion.
    pub fn fusion_after(self) -> &'static [usize] {
        match self {
            Profile::Light4 => &[2, 3],
            Profile::Full9 => &[3, 6],
        }
    }

    pub fn output_channels(self) -> usize {
        256
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub profile: Profile,
    /// Difference orders, one branch each.
    pub branches: Vec<usize>,
    pub gamma: usize,
    pub lambda_act: f64,
    pub padding: Padding,
    pub agim: AgimConfig,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Light4,
            branches: vec![0, 1, 2],
            gamma: 1,
            lambda_act: 1.0,
            padding: Padding::Zero,
            agim: AgimConfig::default(),
        }
    }
}

/// Averages joint features per part: `[N, M, T, C]` → `[N, M_p, T, C]`.
pub fn joint2part_pool<'t, T: Real>(ctx: &Ctx<'t, '_, T>, x: Var<'t, T>, parts: &[usize]) -> Result<Var<'t, T>> {
    let np = parts.iter().max().map_or(0, |&p| p + 1);
    let mut counts = vec![0.0; np];
    for &p in parts {
        counts[p] += 1.0;
    }
    let inv = Tensor::from_fn(&[np, 1, 1], |i| T::from_f64_lossy(1.0 / counts[i]));
    Ok(x.scatter_add(1, parts, np)?.mul(ctx.constant(inv))?)
}

/// Copies each part's features to its joints: `[N, M_p, T, C]` → `[N, M, T, C]`.
pub fn part2joint_match<'t, T: Real>(x: Var<'t, T>, parts: &[usize]) -> Result<Var<'t, T>> {
    Ok(x.gather(1, parts)?)
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub joint: Vec<GtcBlock>,
    /// Part-scale blocks 2..B.
    pub part: Vec<GtcBlock>,
    pub fusion_after: Vec<usize>,
    pub parts: Vec<usize>,
}

impl Branch {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        profile: Profile,
        input: usize,
        supports: &StructuralSupports,
        part_graph: &PartGraph,
        parts: &[usize],
        lambda_act: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let shapes = profile.blocks(input);
        let mut joint = Vec::new();
        let mut part = Vec::new();
        for (i, &shape) in shapes.iter().enumerate() {
            let block = format!("{name}.block{}", i + 1);
            joint.push(GtcBlock::joint(store, &block, supports, shape, lambda_act, rng)?);
            if i > 0 {
                part.push(GtcBlock::part(store, &format!("{block}.part"), part_graph, shape, rng)?);
            }
        }
        Ok(Self { joint, part, fusion_after: profile.fusion_after().to_vec(), parts: parts.to_vec() })
    }

    /// `[N, M, T, D]` → `[N, M, 256]`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>, a_act: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut j = self.joint[0].forward(ctx, x, Some(a_act))?;
        let mut p = joint2part_pool(ctx, j, &self.parts)?;
        for (i, (jb, pb)) in self.joint[1..].iter().zip(&self.part).enumerate() {
            let idx = i + 2;
            let jn = jb.forward(ctx, j, Some(a_act))?;
            let pn = pb.forward(ctx, p, None)?;
            if self.fusion_after.contains(&idx) && idx < self.joint.len() {
                j = ctx.tape.concat(&[jn, part2joint_match(pn, &self.parts)?], 3)?;
                p = ctx.tape.concat(&[pn, joint2part_pool(ctx, jn, &self.parts)?], 3)?;
            } else {
                j = jn;
                p = pn;
            }
        }
        let fused = if self.part.is_empty() { j } else { j.add(part2joint_match(p, &self.parts)?)? };
        Ok(fused.mean(2)?)
    }
}

/// Static graphs of one skeleton.
#[derive(Clone, Debug)]
pub struct Graphs {
    pub supports: StructuralSupports,
    pub part_graph: PartGraph,
}

impl Graphs {
    pub fn build(spec: &SkeletonSpec, gamma: usize) -> Result<Self> {
        Ok(Self {
            supports: StructuralSupports::new(&normalize_adjacency(spec), gamma)?,
            part_graph: PartGraph::build(spec),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub agim: Agim,
    pub branches: Vec<Branch>,
}

pub struct BackboneOutput<'t, T: Real> {
    pub a_act: Var<'t, T>,
    /// One `[N, M, 256]` matrix per branch.
    pub h: Vec<Var<'t, T>>,
}

impl Backbone {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        config: &BackboneConfig,
        spec: &SkeletonSpec,
        graphs: &Graphs,
        coords: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure!(!config.branches.is_empty(), "at least one branch is required");
        for &b in &config.branches {
            ensure!(b <= 2, "branch difference order must be 0, 1 or 2, got {b}");
        }
        ensure!(config.lambda_act >= 0.0, "lambda_act must be non-negative");
        let agim = Agim::new(store, "agim", &config.agim, spec.num_joints(), coords, rng)?;
        let mut branches = Vec::new();
        for (i, _) in config.branches.iter().enumerate() {
            branches.push(Branch::new(
                store,
                &format!("branch{i}"),
                config.profile,
                coords,
                &graphs.supports,
                &graphs.part_graph,
                spec.parts(),
                config.lambda_act,
                rng,
            )?);
        }
        Ok(Self { config: config.clone(), agim, branches })
    }

    /// `x: [N, T, M, D]` observed clips.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<BackboneOutput<'t, T>> {
        let s = x.shape();
        ensure!(s.len() == 4 && s[1] >= 3, "backbone expects [N, T ≥ 3, M, D], got {s:?}");
        let a_act = self.agim.forward(ctx, x)?;
        let value = x.value();
        let mut h = Vec::new();
        for (order, branch) in self.config.branches.iter().zip(&self.branches) {
            let d = difference(&value, 1, *order, self.config.padding)?;
            let input = ctx.constant(d).permute(&[0, 2, 1, 3])?;
            h.push(branch.forward(ctx, input, a_act)?);
        }
        Ok(BackboneOutput { a_act, h })
    }
}
