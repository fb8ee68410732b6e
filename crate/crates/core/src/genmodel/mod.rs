//! Conditional generative reconstruction of the radio map at the receiver.
//!
//! The generator maps the feature stack `[M_U, M_T, M_D, I…]` to a
//! normalized power map; the discriminator scores a map together with the
//! same features. Both are small convolutional stacks with hand-written
//! reverse-mode gradients, trained with Adam on the adversarial plus MSE
//! objective.

mod adam;
mod net;
mod physics;
mod tensor;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use net::{
    backward, forward, LayerSpec, Layout, ModelParams, NetRole, Trace, LAYOUT_VERSION, LEAKY_SLOPE,
};
pub use physics::physics_baseline;
pub use tensor::Tensor;
pub use train::{
    dataset_mse, init_models, train, train_from, write_history_csv, EpochLosses, Sample, TrainConfig,
    TrainOutcome,
};

use crate::grid::{GridError, GridMap, MapKind};
use thiserror::Error;

/// Smallest argument passed to `log` in the losses.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("numeric overflow: {0}")]
    NumericOverflow(&'static str),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("network layout does not match: {0}")]
    LayoutMismatch(&'static str),
    #[error("corrupt model file: {0}")]
    CorruptModel(&'static str),
    #[error("i/o: {message}")]
    Io { kind: std::io::ErrorKind, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl From<std::io::Error> for GenError {
    fn from(e: std::io::Error) -> Self {
        GenError::Io { kind: e.kind(), message: e.to_string() }
    }
}

/// Receiver-side conditioning: building map, transmitter map, radio depth
/// map and optional side information broadcast as constant channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    m_u: GridMap,
    m_t: GridMap,
    m_d: GridMap,
    side: Vec<f64>,
}

impl FeatureStack {
    pub fn new(m_u: GridMap, m_t: GridMap, m_d: GridMap, side: Vec<f64>) -> Result<Self, GenError> {
        m_u.ensure_same_dims(&m_t)?;
        m_u.ensure_same_dims(&m_d)?;
        for (m, name) in [(&m_u, "M_U"), (&m_t, "M_T")] {
            if m.kind() != MapKind::Binary {
                return Err(GenError::ShapeMismatch {
                    expected: format!("binary {name}"),
                    actual: format!("{:?}", m.kind()),
                });
            }
        }
        if m_d.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(GenError::ShapeMismatch {
                expected: "M_D within [0, 1]".into(),
                actual: "values outside [0, 1]".into(),
            });
        }
        if side.iter().any(|v| !v.is_finite()) {
            return Err(GenError::NumericOverflow("non-finite side information"));
        }
        Ok(FeatureStack { m_u, m_t, m_d, side })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.m_u.dims()
    }

    pub fn buildings(&self) -> &GridMap {
        &self.m_u
    }

    pub fn transmitters(&self) -> &GridMap {
        &self.m_t
    }

    pub fn depth(&self) -> &GridMap {
        &self.m_d
    }

    pub fn side(&self) -> &[f64] {
        &self.side
    }

    /// Applies a grid symmetry (see [`GridMap::symmetry`]) to every map;
    /// side information is unchanged.
    pub fn symmetry(&self, t: u8) -> FeatureStack {
        FeatureStack {
            m_u: self.m_u.symmetry(t),
            m_t: self.m_t.symmetry(t),
            m_d: self.m_d.symmetry(t),
            side: self.side.clone(),
        }
    }

    pub fn channels(&self) -> usize {
        3 + self.side.len()
    }

    fn push_channels(&self, data: &mut Vec<f64>) {
        data.extend_from_slice(self.m_u.values());
        data.extend_from_slice(self.m_t.values());
        data.extend_from_slice(self.m_d.values());
        for &s in &self.side {
            data.extend(std::iter::repeat_n(s, self.m_u.len()));
        }
    }

    /// Generator input, shape `[3 + |I|, h, w]`.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h) = self.dims();
        let mut data = Vec::with_capacity(self.channels() * w * h);
        self.push_channels(&mut data);
        Tensor::new(vec![self.channels(), h, w], data).expect("channel sizes agree")
    }

    /// Discriminator input: the candidate map stacked on the features.
    pub fn with_candidate(&self, y: &[f64]) -> Result<Tensor, GenError> {
        let (w, h) = self.dims();
        if y.len() != w * h {
            return Err(GenError::ShapeMismatch {
                expected: format!("{} candidate pixels", w * h),
                actual: format!("{}", y.len()),
            });
        }
        let mut data = Vec::with_capacity((1 + self.channels()) * w * h);
        data.extend_from_slice(y);
        self.push_channels(&mut data);
        Tensor::new(vec![1 + self.channels(), h, w], data)
    }
}

fn check_role(params: &ModelParams, role: NetRole) -> Result<(), GenError> {
    if params.layout().role != role {
        return Err(GenError::LayoutMismatch(match role {
            NetRole::Generator => "expected generator parameters",
            NetRole::Discriminator => "expected discriminator parameters",
        }));
    }
    Ok(())
}

/// Predicted normalized power map, same dimensions as the features.
pub fn generator_forward(params: &ModelParams, f: &FeatureStack) -> Result<GridMap, GenError> {
    check_role(params, NetRole::Generator)?;
    let (w, h) = f.dims();
    let trace = forward(params, f.to_tensor())?;
    let out = trace.output();
    if out.shape() != [1, h, w] {
        return Err(GenError::ShapeMismatch {
            expected: format!("[1, {h}, {w}] output (dims must be multiples of 4)"),
            actual: format!("{:?}", out.shape()),
        });
    }
    Ok(GridMap::new(w, h, MapKind::NormalizedPower, out.data().to_vec())?)
}

/// Probability that `y` is a real map for these features.
pub fn discriminator_forward(params: &ModelParams, y: &GridMap, f: &FeatureStack) -> Result<f64, GenError> {
    check_role(params, NetRole::Discriminator)?;
    y.ensure_same_dims(f.buildings())?;
    let trace = forward(params, f.with_candidate(y.values())?)?;
    Ok(trace.output().data()[0])
}

/// Scores each `(y, f)` pair independently.
pub fn discriminator_forward_batch(
    params: &ModelParams,
    batch: &[(&GridMap, &FeatureStack)],
) -> Result<Vec<f64>, GenError> {
    use rayon::prelude::*;
    batch.par_iter().map(|(y, f)| discriminator_forward(params, y, f)).collect()
}

fn clamped_log(x: f64) -> f64 {
    x.max(LOG_CLAMP).ln()
}

/// Derivative of [`clamped_log`]; zero where the clamp is active.
pub(crate) fn clamped_log_grad(x: f64) -> f64 {
    if x > LOG_CLAMP {
        1.0 / x
    } else {
        0.0
    }
}

/// Adversarial term `log(1 − d_fake)`.
pub fn adversarial_term(d_fake: f64) -> f64 {
    clamped_log(1.0 - d_fake)
}

/// `alpha · log(1 − d_fake) + mse(y_hat, y_true)`.
pub fn generator_loss(d_fake: f64, y_hat: &GridMap, y_true: &GridMap, alpha: f64) -> Result<f64, GenError> {
    Ok(alpha * adversarial_term(d_fake) + crate::metrics::mse(y_hat, y_true)?)
}

/// `−[log d_real + log(1 − d_fake)]`.
pub fn discriminator_loss(d_real: f64, d_fake: f64) -> f64 {
    -(clamped_log(d_real) + clamped_log(1.0 - d_fake))
}
