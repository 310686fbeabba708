//! The deception classifier: stacked LSTM deep features, concatenation with
//! the handcrafted features, a small conv/pool stack and an FC head.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gait::{GaitFeatureVector, GAIT_DIM};
use crate::gesture::{GestureVector, NUM_GESTURES};
use crate::pose::{condition_length, flatten_pose, minmax_apply, NormStats, PoseSequence, POSE_DIM};
use crate::tensor::{grad_check_with, softmax_rows, GradCheckOptions, GradCheckReport, Graph, Tensor, Var};

pub const NUM_CLASSES: usize = 2;
pub const HANDCRAFTED_DIM: usize = GAIT_DIM + NUM_GESTURES;
pub const CONCAT_ORDER: [&str; 3] = ["deep", "gait", "gesture"];
/// Gradient-check settings for whole-model checks, where some LSTM weights
/// receive gradients near 1e-9 and the loss roundoff over the step is ~1e-11.
pub const REDUCED_MODEL_CHECK: GradCheckOptions = GradCheckOptions { step: 1e-5, floor: 1e-6 };
const CHECKPOINT_MAGIC: &[u8; 4] = b"LWLK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which parts of the concatenated feature vector are live. Absent segments
/// are zero-filled so every mode shares one architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    Gestures,
    Gait,
    #[serde(rename = "gestures+gait")]
    GesturesGait,
    Deep,
    #[default]
    All,
}

impl FeatureMode {
    pub const ALL_MODES: [FeatureMode; 5] = [
        FeatureMode::Gestures,
        FeatureMode::Gait,
        FeatureMode::GesturesGait,
        FeatureMode::Deep,
        FeatureMode::All,
    ];

    /// Column header used in ablation tables.
    pub fn display_name(self) -> &'static str {
        match self {
            FeatureMode::Gestures => "Gestures",
            FeatureMode::Gait => "Gait",
            FeatureMode::GesturesGait => "Gestures + Gait",
            FeatureMode::Deep => "Deep",
            FeatureMode::All => "All",
        }
    }

    pub fn uses_deep(self) -> bool {
        matches!(self, FeatureMode::Deep | FeatureMode::All)
    }

    pub fn uses_gait(self) -> bool {
        matches!(self, FeatureMode::Gait | FeatureMode::GesturesGait | FeatureMode::All)
    }

    pub fn uses_gestures(self) -> bool {
        matches!(self, FeatureMode::Gestures | FeatureMode::GesturesGait | FeatureMode::All)
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureMode::Gestures => "gestures",
            FeatureMode::Gait => "gait",
            FeatureMode::GesturesGait => "gestures+gait",
            FeatureMode::Deep => "deep",
            FeatureMode::All => "all",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(' ', "").as_str() {
            "gestures" | "gesture" => Ok(FeatureMode::Gestures),
            "gait" => Ok(FeatureMode::Gait),
            "gestures+gait" | "gait+gestures" | "gait+gesture" => Ok(FeatureMode::GesturesGait),
            "deep" => Ok(FeatureMode::Deep),
            "all" => Ok(FeatureMode::All),
            _ => Err(Error::invalid(format!("unknown feature mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Conditioned sequence length fed to the LSTM stack.
    pub t_frames: usize,
    /// Hidden size of each LSTM block.
    pub lstm_units: Vec<usize>,
    /// Layers per block.
    pub lstm_depth: usize,
    pub conv_channels: [usize; 2],
    pub kernel: usize,
    pub pool: usize,
    pub fc_sizes: Vec<usize>,
    pub elu_after_conv: bool,
    /// Shift the [0, 1] scaled poses to [-0.5, 0.5] before the LSTM stack.
    pub center_inputs: bool,
    pub feature_mode: FeatureMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t_frames: 240,
            lstm_units: vec![128, 64, 32],
            lstm_depth: 2,
            conv_channels: [48, 16],
            kernel: 3,
            pool: 3,
            fc_sizes: vec![32, 8],
            elu_after_conv: true,
            center_inputs: true,
            feature_mode: FeatureMode::All,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Hidden sizes of every LSTM layer in stacking order.
    pub fn lstm_layers(&self) -> Vec<usize> {
        self.lstm_units
            .iter()
            .flat_map(|&h| std::iter::repeat_n(h, self.lstm_depth))
            .collect()
    }

    pub fn deep_dim(&self) -> usize {
        *self.lstm_units.last().unwrap_or(&0)
    }

    pub fn concat_dim(&self) -> usize {
        self.deep_dim() + HANDCRAFTED_DIM
    }

    /// Lengths after conv1, pool and conv2.
    pub fn conv_lengths(&self) -> Result<[usize; 3]> {
        let l0 = self.concat_dim();
        let k = self.kernel;
        let c1 = l0.checked_sub(k - 1).filter(|&l| l > 0);
        let p = c1.filter(|&l| l >= self.pool).map(|l| (l - self.pool) / self.pool + 1);
        let c2 = p.and_then(|l| l.checked_sub(k - 1)).filter(|&l| l > 0);
        match (c1, p, c2) {
            (Some(a), Some(b), Some(c)) => Ok([a, b, c]),
            _ => Err(Error::invalid("convolution stack does not fit the concatenated feature length")),
        }
    }

    pub fn flatten_dim(&self) -> Result<usize> {
        Ok(self.conv_lengths()?[2] * self.conv_channels[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_frames < 2 {
            return Err(Error::invalid("t_frames must be at least 2"));
        }
        if self.lstm_units.is_empty() || self.lstm_units.contains(&0) || self.lstm_depth == 0 {
            return Err(Error::invalid("LSTM sizes and depth must be positive"));
        }
        if self.conv_channels.contains(&0) || self.kernel == 0 || self.pool == 0 || self.fc_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        self.conv_lengths().map(|_| ())
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_specs(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut out = Vec::new();
        let mut input = POSE_DIM;
        for (l, h) in self.lstm_layers().into_iter().enumerate() {
            out.push((format!("lstm.{l}.w"), vec![input, 4 * h]));
            out.push((format!("lstm.{l}.u"), vec![h, 4 * h]));
            out.push((format!("lstm.{l}.b"), vec![4 * h]));
            input = h;
        }
        let [c1, c2] = self.conv_channels;
        out.push(("conv1.w".into(), vec![c1, 1, self.kernel]));
        out.push(("conv1.b".into(), vec![c1]));
        out.push(("conv2.w".into(), vec![c2, c1, self.kernel]));
        out.push(("conv2.b".into(), vec![c2]));
        let mut input = self.flatten_dim()?;
        for (i, &n) in self.fc_sizes.iter().enumerate() {
            out.push((format!("fc{}.w", i + 1), vec![input, n]));
            out.push((format!("fc{}.b", i + 1), vec![n]));
            input = n;
        }
        out.push(("fc_out.w".into(), vec![input, NUM_CLASSES]));
        out.push(("fc_out.b".into(), vec![NUM_CLASSES]));
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_specs()?.iter().map(|(_, s)| s.iter().product::<usize>()).sum())
    }
}

/// One classifier input: a conditioned, min-max scaled sequence (time-major,
/// `T x 48`) and the handcrafted features of the original sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub frames: Vec<f64>,
    pub gait: GaitFeatureVector,
    pub gesture: GestureVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub probs: [f64; NUM_CLASSES],
    pub logits: [f64; NUM_CLASSES],
}

impl Classification {
    pub fn label(&self) -> u8 {
        predict_from_probs(self.probs)
    }
}

/// Higher-probability class; an exact tie goes to 0.
pub fn predict_from_probs(probs: [f64; NUM_CLASSES]) -> u8 {
    u8::from(probs[1] > probs[0])
}

/// Graph handles for the intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub deep: Var,
    pub concat: Var,
    pub conv1: Var,
    pub pool: Var,
    pub conv2: Var,
    pub flat: Var,
    pub fc: Vec<Var>,
    pub logits: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    pub norm_stats: Option<NormStats>,
}

impl Model {
    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases
    /// zero except LSTM forget gates at +1.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let specs = config.param_specs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".b") {
                let mut b = vec![0.0; n];
                if name.starts_with("lstm.") {
                    let h = n / 4;
                    b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                }
                b
            } else {
                let fan_in = if shape.len() == 3 { shape[1] * shape[2] } else { shape[0] };
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Model {
            config,
            names,
            params,
            norm_stats: None,
        })
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a trainable graph leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Registers parameters as constants, for inference.
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    fn check_inputs(&self, inputs: &[ModelInput]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let want = self.config.t_frames * POSE_DIM;
        if let Some(bad) = inputs.iter().find(|x| x.frames.len() != want) {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {} frames x {POSE_DIM}",
                bad.frames.len(),
                self.config.t_frames
            )));
        }
        Ok(())
    }

    /// Stacked LSTM over a batch; returns the last hidden state of the final
    /// layer, `[B, deep_dim]`.
    pub fn lstm_forward(&self, g: &mut Graph, vars: &[Var], inputs: &[ModelInput]) -> Result<Var> {
        self.check_inputs(inputs)?;
        let (b, t) = (inputs.len(), self.config.t_frames);
        let offset = if self.config.center_inputs { 0.5 } else { 0.0 };
        let mut x = vec![0.0; t * b * POSE_DIM];
        for (bi, inp) in inputs.iter().enumerate() {
            for (ti, frame) in inp.frames.chunks(POSE_DIM).enumerate() {
                let row = (ti * b + bi) * POSE_DIM;
                for (xi, &v) in x[row..row + POSE_DIM].iter_mut().zip(frame) {
                    *xi = v - offset;
                }
            }
        }
        let mut h = g.constant(Tensor::new(vec![t * b, POSE_DIM], x)?);
        for l in 0..self.config.lstm_layers().len() {
            h = g.lstm(h, vars[3 * l], vars[3 * l + 1], vars[3 * l + 2], b)?;
        }
        g.slice_rows(h, (t - 1) * b, b)
    }

    /// Full forward pass to logits `[B, 2]`, honouring the feature mode.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], inputs: &[ModelInput]) -> Result<ForwardTrace> {
        self.check_inputs(inputs)?;
        let cfg = &self.config;
        let mode = cfg.feature_mode;
        let b = inputs.len();
        let deep = if mode.uses_deep() {
            self.lstm_forward(g, vars, inputs)?
        } else {
            g.constant(Tensor::zeros(&[b, cfg.deep_dim()]))
        };
        let mut hand = Vec::with_capacity(b * HANDCRAFTED_DIM);
        for inp in inputs {
            if mode.uses_gait() {
                hand.extend_from_slice(inp.gait.as_slice());
            } else {
                hand.extend(std::iter::repeat_n(0.0, GAIT_DIM));
            }
            if mode.uses_gestures() {
                hand.extend_from_slice(inp.gesture.as_slice());
            } else {
                hand.extend(std::iter::repeat_n(0.0, NUM_GESTURES));
            }
        }
        let hand = g.constant(Tensor::new(vec![b, HANDCRAFTED_DIM], hand)?);
        let concat = g.concat_cols(&[deep, hand])?;
        let head = 3 * cfg.lstm_layers().len();
        let x = g.reshape(concat, &[b, 1, cfg.concat_dim()])?;
        let mut conv1 = g.conv1d(x, vars[head], vars[head + 1])?;
        if cfg.elu_after_conv {
            conv1 = g.elu(conv1);
        }
        let pool = g.maxpool1d(conv1, cfg.pool, cfg.pool)?;
        let mut conv2 = g.conv1d(pool, vars[head + 2], vars[head + 3])?;
        if cfg.elu_after_conv {
            conv2 = g.elu(conv2);
        }
        let flat = g.reshape(conv2, &[b, cfg.flatten_dim()?])?;
        let mut h = flat;
        let mut fc = Vec::new();
        let mut idx = head + 4;
        for _ in &cfg.fc_sizes {
            let z = g.matmul(h, vars[idx])?;
            let z = g.add(z, vars[idx + 1])?;
            h = g.elu(z);
            fc.push(h);
            idx += 2;
        }
        let z = g.matmul(h, vars[idx])?;
        let logits = g.add(z, vars[idx + 1])?;
        Ok(ForwardTrace {
            deep,
            concat,
            conv1,
            pool,
            conv2,
            flat,
            fc,
            logits,
        })
    }

    /// Conditions and scales a similarity-normalized sequence for the model.
    pub fn prepare_input(
        &self,
        seq: &PoseSequence,
        gait: &GaitFeatureVector,
        gesture: &GestureVector,
    ) -> Result<ModelInput> {
        let stats = self.norm_stats.as_ref().ok_or(Error::UnfittedNormStats)?;
        seq.validate()?;
        let conditioned = condition_length(seq, self.config.t_frames)?;
        let scaled = minmax_apply(&conditioned, stats)?;
        let frames = scaled.frames.iter().flat_map(flatten_pose).collect();
        Ok(ModelInput {
            frames,
            gait: *gait,
            gesture: *gesture,
        })
    }

    pub fn classify(
        &self,
        seq: &PoseSequence,
        gait: &GaitFeatureVector,
        gesture: &GestureVector,
    ) -> Result<Classification> {
        let input = self.prepare_input(seq, gait, gesture)?;
        Ok(self.classify_batch(std::slice::from_ref(&input))?[0])
    }

    pub fn classify_batch(&self, inputs: &[ModelInput]) -> Result<Vec<Classification>> {
        let mut g = Graph::new();
        let vars = self.bind_frozen(&mut g);
        let trace = self.forward(&mut g, &vars, inputs)?;
        let logits = g.value(trace.logits);
        let probs = softmax_rows(logits)?;
        Ok(logits
            .data()
            .chunks(NUM_CLASSES)
            .zip(probs.chunks(NUM_CLASSES))
            .map(|(l, p)| Classification {
                probs: [p[0], p[1]],
                logits: [l[0], l[1]],
            })
            .collect())
    }

    pub fn predict_batch(&self, inputs: &[ModelInput]) -> Result<Vec<u8>> {
        Ok(self.classify_batch(inputs)?.iter().map(Classification::label).collect())
    }

    /// `f_d` for each input, `deep_dim` values per row.
    pub fn deep_features(&self, inputs: &[ModelInput]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let vars = self.bind_frozen(&mut g);
        let deep = self.lstm_forward(&mut g, &vars, inputs)?;
        Ok(g.value(deep).data().chunks(self.config.deep_dim()).map(<[f64]>::to_vec).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }

    /// Loads a checkpoint and insists its configuration equals `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Model> {
        let model = Model::load(path)?;
        model.check_config(expected)?;
        Ok(model)
    }

    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.config == expected {
            return Ok(());
        }
        let (a, b) = (&self.config, expected);
        let what = if a.t_frames != b.t_frames {
            format!("checkpoint T = {}, requested T = {}", a.t_frames, b.t_frames)
        } else if a.feature_mode != b.feature_mode {
            format!("checkpoint feature mode {}, requested {}", a.feature_mode, b.feature_mode)
        } else {
            "checkpoint architecture differs from the requested configuration".to_string()
        };
        Err(Error::ConfigMismatch(what))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = CheckpointHeader {
            config: self.config.clone(),
            concat_order: CONCAT_ORDER.iter().map(|s| s.to_string()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut records: Vec<(&str, &[usize], &[f64])> = self
            .names
            .iter()
            .zip(&self.params)
            .map(|(n, t)| (n.as_str(), t.shape(), t.data()))
            .collect();
        let norm_shape = [POSE_DIM];
        if let Some(stats) = &self.norm_stats {
            records.push(("norm.min", &norm_shape, &stats.min));
            records.push(("norm.max", &norm_shape, &stats.max));
        }
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, shape, data) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let json_len = r.len_u64()?;
        let header: CheckpointHeader = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
        let n_records = r.u32()? as usize;
        let mut records = Vec::with_capacity(n_records.min(1024));
        for _ in 0..n_records {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.len_u64()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some())
                .ok_or_else(|| Error::Checkpoint(format!("record {name}: shape overflow")))?;
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<_>>();
            records.push((name, shape, data));
        }
        let body_end = r.pos;
        let trailer = r.take(32)?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checksum".into()));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != trailer {
            return Err(Error::Checkpoint("checksum mismatch; file is corrupt".into()));
        }
        if header.concat_order != CONCAT_ORDER {
            return Err(Error::ConfigMismatch(format!(
                "feature concatenation order {:?}, expected {CONCAT_ORDER:?}",
                header.concat_order
            )));
        }
        let specs = header
            .config
            .param_specs()
            .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
        let mut model = Model {
            config: header.config,
            names: Vec::with_capacity(specs.len()),
            params: Vec::with_capacity(specs.len()),
            norm_stats: None,
        };
        let mut norm_min = None;
        let mut norm_max = None;
        let mut expected = specs.into_iter();
        for (name, shape, data) in records {
            match name.as_str() {
                "norm.min" => norm_min = Some(data),
                "norm.max" => norm_max = Some(data),
                _ => {
                    let (want_name, want_shape) = expected
                        .next()
                        .ok_or_else(|| Error::ConfigMismatch(format!("unexpected record {name}")))?;
                    if want_name != name || want_shape != shape {
                        return Err(Error::ConfigMismatch(format!(
                            "record {name} {shape:?} where config implies {want_name} {want_shape:?}"
                        )));
                    }
                    model.names.push(name);
                    model.params.push(Tensor::new(shape, data)?);
                }
            }
        }
        if let Some((name, _)) = expected.next() {
            return Err(Error::ConfigMismatch(format!("missing parameter record {name}")));
        }
        model.norm_stats = match (norm_min, norm_max) {
            (Some(min), Some(max)) => {
                let stats = NormStats { min, max };
                stats.validate()?;
                Some(stats)
            }
            (None, None) => None,
            _ => return Err(Error::Checkpoint("incomplete normalization statistics".into())),
        };
        Ok(model)
    }
}

/// The small architecture used for whole-model gradient checks: LSTM
/// hidden sizes 8/8/4, `T = 8`, conv depths 4/2.
pub fn reduced_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        t_frames: 8,
        lstm_units: vec![8, 8, 4],
        conv_channels: [4, 2],
        seed,
        ..ModelConfig::default()
    }
}

/// Uniform random frames and gait values in [0, 1) and random 0/1 gestures.
pub fn random_inputs(config: &ModelConfig, n: usize, seed: u64) -> Vec<ModelInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut gait = [0.0; GAIT_DIM];
            gait.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
            let mut gest = [0.0; NUM_GESTURES];
            gest.iter_mut().for_each(|v| *v = f64::from(rng.random_range(0..2u8)));
            ModelInput {
                frames: (0..config.t_frames * POSE_DIM).map(|_| rng.random_range(0.0..1.0)).collect(),
                gait: GaitFeatureVector(gait),
                gesture: GestureVector(gest),
            }
        })
        .collect()
}

/// Central-difference check of the cross-entropy gradient with respect to
/// every parameter of the reduced model on a batch of two random inputs.
pub fn reduced_model_check(seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let model = Model::new(reduced_model_config(seed))?;
    let inputs = random_inputs(&model.config, 2, seed.wrapping_add(1));
    grad_check_with(
        model.params(),
        |g, vars| {
            let tr = model.forward(g, vars, &inputs)?;
            Ok(g.softmax_cross_entropy(tr.logits, &[0, 1])?.0)
        },
        tolerance,
        REDUCED_MODEL_CHECK,
    )
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    concat_order: Vec<String>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated file at byte {}", self.bytes.len())))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Checkpoint("length field overflows".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> ModelConfig {
        reduced_model_config(3)
    }

    fn toy_inputs(model: &Model, n: usize, seed: u64) -> Vec<ModelInput> {
        random_inputs(&model.config, n, seed)
    }

    #[test]
    fn default_dimensions() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.lstm_layers(), vec![128, 128, 64, 64, 32, 32]);
        assert_eq!(cfg.deep_dim(), 32);
        assert_eq!(cfg.concat_dim(), 68);
        assert_eq!(cfg.conv_lengths().unwrap(), [66, 22, 20]);
        assert_eq!(cfg.flatten_dim().unwrap(), 320);
        assert_eq!(cfg.param_count().unwrap(), 338_442);
    }

    #[test]
    fn intermediate_shapes() {
        let model = Model::new(ModelConfig {
            t_frames: 6,
            ..ModelConfig::default()
        })
        .unwrap();
        let inputs = toy_inputs(&model, 3, 1);
        let mut g = Graph::new();
        let vars = model.bind_frozen(&mut g);
        let tr = model.forward(&mut g, &vars, &inputs).unwrap();
        assert_eq!(g.value(tr.deep).shape(), &[3, 32]);
        assert_eq!(g.value(tr.concat).shape(), &[3, 68]);
        assert_eq!(g.value(tr.conv1).shape(), &[3, 48, 66]);
        assert_eq!(g.value(tr.pool).shape(), &[3, 48, 22]);
        assert_eq!(g.value(tr.conv2).shape(), &[3, 16, 20]);
        assert_eq!(g.value(tr.flat).shape(), &[3, 320]);
        assert_eq!(g.value(tr.fc[0]).shape(), &[3, 32]);
        assert_eq!(g.value(tr.fc[1]).shape(), &[3, 8]);
        assert_eq!(g.value(tr.logits).shape(), &[3, 2]);
    }

    #[test]
    fn centered_zero_input_and_biases_give_zero_deep_features() {
        let mut model = Model::new(toy_config()).unwrap();
        for (name, p) in model.names.clone().iter().zip(model.params_mut()) {
            if name.starts_with("lstm.") && name.ends_with(".b") {
                p.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut inputs = toy_inputs(&model, 2, 2);
        inputs.iter_mut().for_each(|x| x.frames.iter_mut().for_each(|v| *v = 0.5));
        let f = model.deep_features(&inputs).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn probabilities_are_distributions_and_deterministic() {
        let model = Model::new(toy_config()).unwrap();
        let inputs = toy_inputs(&model, 5, 4);
        let a = model.classify_batch(&inputs).unwrap();
        let b = Model::new(toy_config()).unwrap().classify_batch(&inputs).unwrap();
        assert_eq!(a, b);
        for c in &a {
            assert!((c.probs[0] + c.probs[1] - 1.0).abs() < 1e-12);
            assert!(c.probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn predict_tie_break() {
        assert_eq!(predict_from_probs([0.9, 0.1]), 0);
        assert_eq!(predict_from_probs([0.1, 0.9]), 1);
        assert_eq!(predict_from_probs([0.5, 0.5]), 0);
    }

    #[test]
    fn reduced_model_gradient_check() {
        let report = reduced_model_check(3, 1e-4).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn lstm_stack_gradient_check() {
        let model = Model::new(toy_config()).unwrap();
        let inputs = toy_inputs(&model, 2, 6);
        let n_lstm = 3 * model.config.lstm_layers().len();
        let report = grad_check_with(
            &model.params()[..n_lstm],
            |g, vars| {
                let deep = model.lstm_forward(g, vars, &inputs)?;
                let s = g.mul(deep, deep)?;
                Ok(g.sum(s))
            },
            1e-4,
            REDUCED_MODEL_CHECK,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn feature_modes_mask_segments() {
        for mode in FeatureMode::ALL_MODES {
            let model = Model::new(ModelConfig {
                feature_mode: mode,
                ..toy_config()
            })
            .unwrap();
            let inputs = toy_inputs(&model, 2, 7);
            let mut g = Graph::new();
            let vars = model.bind_frozen(&mut g);
            let tr = model.forward(&mut g, &vars, &inputs).unwrap();
            let c = g.value(tr.concat).data();
            let d = model.config.deep_dim();
            let row = &c[..model.config.concat_dim()];
            assert_eq!(row[..d].iter().any(|&v| v != 0.0), mode.uses_deep(), "{mode}");
            assert_eq!(row[d..d + GAIT_DIM].iter().any(|&v| v != 0.0), mode.uses_gait(), "{mode}");
            assert_eq!(
                row[d + GAIT_DIM..].iter().any(|&v| v != 0.0),
                mode.uses_gestures() && inputs[0].gesture.0.iter().any(|&v| v != 0.0),
                "{mode}"
            );
        }
    }

    #[test]
    fn feature_mode_parsing() {
        for mode in FeatureMode::ALL_MODES {
            assert_eq!(mode.to_string().parse::<FeatureMode>().unwrap(), mode);
        }
        assert!("bogus".parse::<FeatureMode>().is_err());
    }

    fn with_stats(mut m: Model) -> Model {
        m.norm_stats = Some(NormStats {
            min: (0..POSE_DIM).map(|i| -(i as f64)).collect(),
            max: (0..POSE_DIM).map(|i| i as f64 + 0.5).collect(),
        });
        m
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = with_stats(Model::new(toy_config()).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.names, model.names);
        assert_eq!(back.norm_stats, model.norm_stats);
        for (a, b) in back.params.iter().zip(&model.params) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let model = with_stats(Model::new(toy_config()).unwrap());
        let bytes = model.to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Model::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("magic")));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Model::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("version")));

        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(Model::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(m)) if m.contains("truncated")),
                "cut at {cut}"
            );
        }

        let mut bad = bytes.clone();
        let mid = bytes.len() - 100;
        bad[mid] ^= 0x01;
        assert!(matches!(Model::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("checksum")));
    }

    #[test]
    fn checkpoint_config_mismatch_is_reported() {
        let model = Model::new(toy_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let other = ModelConfig {
            t_frames: 16,
            ..toy_config()
        };
        let err = Model::load_expecting(&path, &other).unwrap_err();
        assert!(matches!(&err, Error::ConfigMismatch(m) if m.contains("T = 8")), "{err}");
        assert!(Model::load_expecting(&path, &toy_config()).is_ok());
    }

    #[test]
    fn unfitted_stats_are_rejected() {
        let model = Model::new(toy_config()).unwrap();
        let seq = PoseSequence::new("a", "s", 1, 30.0, vec![[[0.0; 3]; 16]; 10]).unwrap();
        let err = model
            .classify(&seq, &GaitFeatureVector([0.0; GAIT_DIM]), &GestureVector([0.0; NUM_GESTURES]))
            .unwrap_err();
        assert!(matches!(err, Error::UnfittedNormStats));
    }
}
