//! Synthetic stick-figure motions with class-specific limb oscillations.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use symgnn_autodiff::Tensor;

use crate::data::{Dataset, MotionSample, Repr};
use crate::error::{ensure, Result};
use crate::skeleton::SkeletonSpec;

/// Oscillating degrees of freedom of the synthetic figure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dof {
    /// Forward swing of the upper arm.
    LeftArm,
    RightArm,
    /// Sideways raise of the upper arm.
    LeftArmSide,
    RightArmSide,
    /// Forward swing of the thigh.
    LeftLeg,
    RightLeg,
    /// Vertical bounce of the whole body.
    Bounce,
    /// Sideways lean of the upper body.
    Sway,
}

const DOFS: usize = 8;

/// `offset + amplitude · sin(2π · frequency · t + phase + phase_offset)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub dof: Dof,
    /// Cycles per second.
    pub frequency: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_offset: f64,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub oscillations: Vec<Oscillation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub per_class: usize,
    pub sigma: f64,
    pub t_prev: usize,
    pub t_pred: usize,
    pub fps: f64,
    /// Fractions of each class assigned to train and val; the rest is test.
    pub train_frac: f64,
    pub val_frac: f64,
    pub classes: Vec<ClassSpec>,
}

impl SynthConfig {
    pub fn new(seed: u64, classes: usize, per_class: usize, sigma: f64) -> Result<Self> {
        Ok(Self {
            seed,
            per_class,
            sigma,
            t_prev: 40,
            t_pred: 10,
            fps: 25.0,
            train_frac: 0.7,
            val_frac: 0.1,
            classes: default_classes(classes)?,
        })
    }
}

fn osc(dof: Dof, frequency: f64, amplitude: f64, phase_offset: f64, offset: f64) -> Oscillation {
    Oscillation { dof, frequency, amplitude, phase_offset, offset }
}

/// The first `k` of a fixed list of motion classes with distinct frequency
/// signatures.
pub fn default_classes(k: usize) -> Result<Vec<ClassSpec>> {
    use std::f64::consts::PI;
    use Dof::*;
    let all = vec![
        ("walk", vec![
            osc(LeftLeg, 1.0, 0.5, 0.0, 0.0),
            osc(RightLeg, 1.0, 0.5, PI, 0.0),
            osc(LeftArm, 1.0, 0.4, PI, 0.0),
            osc(RightArm, 1.0, 0.4, 0.0, 0.0),
            osc(Bounce, 2.0, 0.03, 0.0, 0.0),
        ]),
        ("wave", vec![osc(RightArmSide, 2.0, 0.4, 0.0, 2.2)]),
        ("jump", vec![
            osc(Bounce, 1.5, 0.15, 0.0, 0.0),
            osc(LeftArmSide, 1.5, 0.8, 0.0, 0.8),
            osc(RightArmSide, 1.5, 0.8, 0.0, 0.8),
            osc(LeftLeg, 1.5, 0.2, 0.0, 0.0),
            osc(RightLeg, 1.5, 0.2, 0.0, 0.0),
        ]),
        ("box", vec![
            osc(LeftArm, 3.0, 0.5, 0.0, 1.3),
            osc(RightArm, 3.0, 0.5, PI, 1.3),
            osc(Sway, 0.75, 0.08, 0.0, 0.0),
        ]),
        ("kick", vec![osc(RightLeg, 1.25, 0.7, 0.0, 0.4), osc(Sway, 1.25, 0.05, 0.0, 0.0)]),
        ("stretch", vec![
            osc(LeftArmSide, 0.5, 1.2, 0.0, 1.2),
            osc(RightArmSide, 0.5, 1.2, 0.0, 1.2),
            osc(Sway, 0.5, 0.12, 0.0, 0.0),
        ]),
    ];
    ensure!((1..=all.len()).contains(&k), "between 1 and {} synthetic classes supported, got {k}", all.len());
    Ok(all
        .into_iter()
        .take(k)
        .map(|(name, oscillations)| ClassSpec { name: name.into(), oscillations })
        .collect())
}

/// Angles (and offsets) of every degree of freedom at time `t` seconds.
fn dof_values(spec: &ClassSpec, t: f64, phase: f64) -> [f64; DOFS] {
    let mut v = [0.0; DOFS];
    for o in &spec.oscillations {
        v[o.dof as usize] += o.offset + o.amplitude * (TAU * o.frequency * t + phase + o.phase_offset).sin();
    }
    v
}

/// Forward kinematics of the 11-joint figure (joint order of
/// [`SkeletonSpec::synthetic`]); y is up, z is forward.
fn pose(v: &[f64; DOFS]) -> [[f64; 3]; 11] {
    use Dof::*;
    let root = [0.0, 1.0 + v[Bounce as usize], 0.0];
    let sway = v[Sway as usize];
    let neck = [root[0] + 0.5 * sway.sin(), root[1] + 0.5 * sway.cos(), 0.0];
    let head = [neck[0] + 0.2 * sway.sin(), neck[1] + 0.2 * sway.cos(), 0.0];
    // segment hanging from `anchor`, swung forward by `fwd` and out by `side`
    let seg = |anchor: [f64; 3], sign: f64, fwd: f64, side: f64, len: f64| {
        [
            anchor[0] + sign * len * side.sin(),
            anchor[1] - len * side.cos() * fwd.cos(),
            anchor[2] + len * side.cos() * fwd.sin(),
        ]
    };
    let l_sh = [neck[0] - 0.2, neck[1], 0.0];
    let r_sh = [neck[0] + 0.2, neck[1], 0.0];
    let l_hip = [root[0] - 0.12, root[1], 0.0];
    let r_hip = [root[0] + 0.12, root[1], 0.0];
    [
        head,
        neck,
        l_sh,
        seg(l_sh, -1.0, v[LeftArm as usize], v[LeftArmSide as usize], 0.3),
        r_sh,
        seg(r_sh, 1.0, v[RightArm as usize], v[RightArmSide as usize], 0.3),
        l_hip,
        seg(l_hip, -1.0, v[LeftLeg as usize], 0.0, 0.45),
        r_hip,
        seg(r_hip, 1.0, v[RightLeg as usize], 0.0, 0.45),
        root,
    ]
}

/// Deterministic synthetic dataset on [`SkeletonSpec::synthetic`].
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    ensure!(config.sigma >= 0.0 && config.sigma.is_finite(), "sigma must be non-negative");
    ensure!(config.t_prev >= 3 && config.t_pred >= 1, "t_prev ≥ 3 and t_pred ≥ 1 required");
    ensure!(config.fps > 0.0, "fps must be positive");
    ensure!(
        config.train_frac >= 0.0 && config.val_frac >= 0.0 && config.train_frac + config.val_frac <= 1.0,
        "invalid split fractions"
    );
    ensure!(!config.classes.is_empty(), "at least one class is required");
    let skeleton = SkeletonSpec::synthetic();
    let mut ds = Dataset::new(skeleton, config.classes.iter().map(|c| c.name.clone()).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let jitter = Normal::new(0.0, config.sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let total = config.t_prev + config.t_pred;
    let n_train = (config.train_frac * config.per_class as f64).round() as usize;
    let n_val = (config.val_frac * config.per_class as f64).round() as usize;
    for (label, spec) in config.classes.iter().enumerate() {
        for i in 0..config.per_class {
            let phase = rng.random_range(0.0..TAU);
            let mut frames = Vec::with_capacity(total * 33);
            for f in 0..total {
                let p = pose(&dof_values(spec, f as f64 / config.fps, phase));
                for j in p {
                    for c in j {
                        let noise = if config.sigma > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
                        frames.push(c + noise);
                    }
                }
            }
            let per = 33;
            let prev = Tensor::new(&[config.t_prev, 11, 3], frames[..config.t_prev * per].to_vec())?;
            let pred = Tensor::new(&[config.t_pred, 11, 3], frames[config.t_prev * per..].to_vec())?;
            let split = if i < n_train {
                "train"
            } else if i < n_train + n_val {
                "val"
            } else {
                "test"
            };
            ds.samples.push(MotionSample { label, prev, pred, repr: Repr::Xyz, split: split.into() });
        }
    }
    Ok(ds)
}
