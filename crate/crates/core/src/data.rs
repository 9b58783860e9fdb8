//! Motion datasets on disk: `skeleton.json`, `classes.json` and one JSON
//! object per line in `samples.jsonl`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use symgnn_autodiff::{Real, Tensor};

use crate::error::{ensure, Error, Result};
use crate::skeleton::SkeletonSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Repr {
    #[default]
    Xyz,
    Expmap,
}

impl Repr {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "xyz" => Some(Repr::Xyz),
            "expmap" => Some(Repr::Expmap),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Repr::Xyz => "xyz",
            Repr::Expmap => "expmap",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSample {
    pub label: usize,
    /// `[T_prev, M, D]`
    pub prev: Tensor<f64>,
    /// `[T_pred, M, D]`
    pub pred: Tensor<f64>,
    pub repr: Repr,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub skeleton: SkeletonSpec,
    pub classes: Vec<String>,
    pub samples: Vec<MotionSample>,
}

fn clip_to_json(t: &Tensor<f64>) -> Value {
    let s = t.shape();
    let (m, d) = (s[1], s[2]);
    Value::Array(
        t.data()
            .chunks(m * d)
            .map(|frame| Value::Array(frame.chunks(d).map(|j| json!(j)).collect()))
            .collect(),
    )
}

fn clip_from_json(v: &Value) -> std::result::Result<Tensor<f64>, String> {
    let frames = v.as_array().ok_or("expected an array of frames")?;
    let mut shape: Option<(usize, usize)> = None;
    let mut data = Vec::new();
    for (f, frame) in frames.iter().enumerate() {
        let joints = frame.as_array().ok_or(format!("frame {f} is not an array"))?;
        for (j, joint) in joints.iter().enumerate() {
            let coords = joint.as_array().ok_or(format!("frame {f} joint {j} is not an array"))?;
            match shape {
                None => shape = Some((joints.len(), coords.len())),
                Some((m, d)) if m != joints.len() || d != coords.len() => {
                    return Err(format!("frame {f} joint {j} has shape [{}, {}], expected [{m}, {d}]", joints.len(), coords.len()))
                }
                _ => {}
            }
            for c in coords {
                let x = c.as_f64().ok_or(format!("frame {f} joint {j}: non-numeric value"))?;
                if !x.is_finite() {
                    return Err(format!("frame {f} joint {j}: non-finite value"));
                }
                data.push(x);
            }
        }
    }
    let (m, d) = shape.ok_or("empty clip")?;
    ensure_shape(m, d)?;
    Tensor::new(&[frames.len(), m, d], data).map_err(|e| e.to_string())
}

fn ensure_shape(m: usize, d: usize) -> std::result::Result<(), String> {
    if m == 0 || d == 0 {
        return Err("clip has an empty joint or coordinate axis".into());
    }
    Ok(())
}

impl MotionSample {
    pub fn to_json(&self) -> Value {
        json!({
            "label": self.label,
            "prev": clip_to_json(&self.prev),
            "pred": clip_to_json(&self.pred),
            "repr": self.repr.as_str(),
            "split": self.split,
        })
    }
}

impl Dataset {
    pub fn new(skeleton: SkeletonSpec, classes: Vec<String>) -> Self {
        Self { skeleton, classes, samples: Vec::new() }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn split(&self, name: &str) -> Vec<&MotionSample> {
        self.samples.iter().filter(|s| s.split == name).collect()
    }

    fn check_sample(&self, s: &MotionSample) -> std::result::Result<(), (String, String)> {
        let m = self.skeleton.num_joints();
        if s.label >= self.classes.len() {
            return Err(("label".into(), format!("label {} out of range for {} classes", s.label, self.classes.len())));
        }
        for (field, t) in [("prev", &s.prev), ("pred", &s.pred)] {
            if t.shape()[1] != m {
                return Err((field.into(), format!("{} joints, skeleton has {m}", t.shape()[1])));
            }
        }
        if s.prev.shape()[2] != s.pred.shape()[2] {
            return Err(("pred".into(), "coordinate width differs from prev".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if let Err((field, msg)) = self.check_sample(s) {
                return Err(Error::Schema { file: "samples.jsonl".into(), line: i + 1, field, msg });
            }
            ensure!(s.prev.all_finite() && s.pred.all_finite(), "sample {i} holds non-finite values");
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("skeleton.json"), serde_json::to_string_pretty(&self.skeleton)?)?;
        fs::write(dir.join("classes.json"), serde_json::to_string_pretty(&self.classes)?)?;
        let mut w = BufWriter::new(fs::File::create(dir.join("samples.jsonl"))?);
        for s in &self.samples {
            serde_json::to_writer(&mut w, &s.to_json())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<String> {
            fs::read_to_string(dir.join(name)).map_err(|e| Error::invalid(format!("{}: {e}", dir.join(name).display())))
        };
        let skeleton: SkeletonSpec = serde_json::from_str(&read("skeleton.json")?)
            .map_err(|e| Error::Schema { file: "skeleton.json".into(), line: e.line(), field: "skeleton".into(), msg: e.to_string() })?;
        let classes: Vec<String> = serde_json::from_str(&read("classes.json")?)
            .map_err(|e| Error::Schema { file: "classes.json".into(), line: e.line(), field: "classes".into(), msg: e.to_string() })?;
        let mut ds = Dataset::new(skeleton, classes);
        let path = dir.join("samples.jsonl");
        let file = fs::File::open(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s = ds.parse_line(&line).map_err(|(field, msg)| Error::Schema {
                file: "samples.jsonl".into(),
                line: i + 1,
                field,
                msg,
            })?;
            ds.samples.push(s);
        }
        Ok(ds)
    }

    fn parse_line(&self, line: &str) -> std::result::Result<MotionSample, (String, String)> {
        let v: Value = serde_json::from_str(line).map_err(|e| ("json".to_string(), e.to_string()))?;
        let obj = v.as_object().ok_or(("json".to_string(), "expected an object".to_string()))?;
        let field = |name: &str| obj.get(name).ok_or((name.to_string(), "missing".to_string()));
        let label = field("label")?
            .as_u64()
            .ok_or(("label".to_string(), "expected a non-negative integer".to_string()))? as usize;
        let prev = clip_from_json(field("prev")?).map_err(|m| ("prev".to_string(), m))?;
        let pred = clip_from_json(field("pred")?).map_err(|m| ("pred".to_string(), m))?;
        let repr = obj
            .get("repr")
            .map(|r| r.as_str().and_then(Repr::parse).ok_or(("repr".to_string(), "expected \"xyz\" or \"expmap\"".to_string())))
            .transpose()?
            .unwrap_or_default();
        let split = obj
            .get("split")
            .map(|s| s.as_str().map(str::to_string).ok_or(("split".to_string(), "expected a string".to_string())))
            .transpose()?
            .unwrap_or_else(|| "train".to_string());
        let sample = MotionSample { label, prev, pred, repr, split };
        self.check_sample(&sample)?;
        Ok(sample)
    }

    /// Permutes the labels of a random `ratio` fraction of the `split`
    /// samples among themselves.
    pub fn shuffle_labels(&mut self, split: &str, ratio: f64, rng: &mut impl Rng) -> Result<()> {
        let idx = self.noisy_subset(split, ratio, rng)?;
        let mut labels: Vec<usize> = idx.iter().map(|&i| self.samples[i].label).collect();
        labels.shuffle(rng);
        for (&i, l) in idx.iter().zip(labels) {
            self.samples[i].label = l;
        }
        Ok(())
    }

    /// Permutes the future clips of a random `ratio` fraction of the `split`
    /// samples among themselves.
    pub fn shuffle_targets(&mut self, split: &str, ratio: f64, rng: &mut impl Rng) -> Result<()> {
        let idx = self.noisy_subset(split, ratio, rng)?;
        let mut targets: Vec<Tensor<f64>> = idx.iter().map(|&i| self.samples[i].pred.clone()).collect();
        targets.shuffle(rng);
        for (&i, t) in idx.iter().zip(targets) {
            self.samples[i].pred = t;
        }
        Ok(())
    }

    fn noisy_subset(&self, split: &str, ratio: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
        ensure!((0.0..=1.0).contains(&ratio), "noise ratio must be in [0, 1], got {ratio}");
        let mut idx: Vec<usize> = (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect();
        idx.shuffle(rng);
        idx.truncate((ratio * idx.len() as f64).round() as usize);
        idx.sort_unstable();
        Ok(idx)
    }
}

/// Stacked samples ready for a forward pass.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[N, T_prev, M, D]`
    pub prev: Tensor<T>,
    /// `[N, T_pred, M, D]`
    pub pred: Tensor<T>,
    pub labels: Vec<usize>,
}

fn stack<T: Real>(clips: &[&Tensor<f64>]) -> Result<Tensor<T>> {
    let first = clips.first().ok_or_else(|| Error::invalid("empty batch"))?.shape().to_vec();
    let mut data = Vec::with_capacity(first.iter().product::<usize>() * clips.len());
    for c in clips {
        ensure!(c.shape() == first.as_slice(), "clips of shape {:?} and {:?} in one batch", first, c.shape());
        data.extend(c.data().iter().map(|&v| T::from_f64_lossy(v)));
    }
    let mut shape = vec![clips.len()];
    shape.extend(first);
    Ok(Tensor::new(&shape, data)?)
}

impl<T: Real> Batch<T> {
    pub fn from_samples(samples: &[&MotionSample]) -> Result<Self> {
        Ok(Self {
            prev: stack(&samples.iter().map(|s| &s.prev).collect::<Vec<_>>())?,
            pred: stack(&samples.iter().map(|s| &s.pred).collect::<Vec<_>>())?,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Keeps the first `ceil(ratio · T)` frames of a clip (at least 3).
pub fn observe_prefix(clip: &Tensor<f64>, ratio: f64) -> Result<Tensor<f64>> {
    ensure!(ratio > 0.0 && ratio <= 1.0, "observe ratio must be in (0, 1], got {ratio}");
    let s = clip.shape();
    let keep = ((ratio * s[0] as f64).ceil() as usize).clamp(3.min(s[0]), s[0]);
    let per = s[1] * s[2];
    Ok(Tensor::new(&[keep, s[1], s[2]], clip.data()[..keep * per].to_vec())?)
}
