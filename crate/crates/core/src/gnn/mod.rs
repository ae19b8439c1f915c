//! Two-layer GCN and MLP node classifiers, written from scratch.

mod dense;
mod model;
mod norm;
mod stacked;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Container, Section, SectionData};

pub use dense::{argmax, Matrix};
pub use model::{cross_entropy_grad, forward, loss_and_grad, predict, Gradients};
pub use norm::{gcn_normalize, NormAdj};
pub use stacked::{stacked_forward, BlockDiagonal, Inference, DEFAULT_MAX_COPIES};
pub use train::{accuracy_on, train, TrainConfig, TrainReport};

/// Hidden width of both architectures.
pub const HIDDEN: usize = 64;

/// Floating point type the model can run in. Inference and training use
/// `f32`; `f64` exists for finite-difference gradient checks.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::MulAssign
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Mlp,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Gcn => 0,
            ModelKind::Mlp => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Gcn),
            1 => Some(ModelKind::Mlp),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Mlp => "mlp",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(ModelKind::Gcn),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Parameters of `logits = A' relu(A' X W0 + b0) W1 + b1`, where `A'` is the
/// normalized adjacency for a GCN and the identity for an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T = f32> {
    pub kind: ModelKind,
    pub w0: Matrix<T>,
    pub b0: Vec<T>,
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
}

impl<T: Real> ModelWeights<T> {
    pub fn zeros(kind: ModelKind, d: usize, h: usize, c: usize) -> Self {
        ModelWeights {
            kind,
            w0: Matrix::zeros(d, h),
            b0: vec![T::zero(); h],
            w1: Matrix::zeros(h, c),
            b1: vec![T::zero(); c],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(kind: ModelKind, d: usize, h: usize, c: usize, rng: &mut crate::rng::Rng) -> Self {
        use rand::Rng as _;
        let mut init = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| T::from_f64(rng.random_range(-a..a)).unwrap())
        };
        let w0 = init(d, h);
        let w1 = init(h, c);
        ModelWeights { kind, w0, b0: vec![T::zero(); h], w1, b1: vec![T::zero(); c] }
    }

    pub fn num_features(&self) -> usize {
        self.w0.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w0.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.w1.cols()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (d, h) = self.w0.shape();
        let (h1, c) = self.w1.shape();
        if h != h1 || self.b0.len() != h || self.b1.len() != c || d == 0 || c == 0 {
            return Err(Error::Dimension(format!(
                "inconsistent weights: W0 {d}x{h}, b0 {}, W1 {h1}x{c}, b1 {}",
                self.b0.len(),
                self.b1.len()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite()
            && self.w1.is_finite()
            && self.b0.iter().chain(&self.b1).all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        let c = |x: T| U::from(x).unwrap();
        ModelWeights {
            kind: self.kind,
            w0: self.w0.map(c),
            b0: self.b0.iter().map(|&x| c(x)).collect(),
            w1: self.w1.map(c),
            b1: self.b1.iter().map(|&x| c(x)).collect(),
        }
    }
}

impl ModelWeights<f32> {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.push(Section::new("kind", vec![1], SectionData::U8(vec![self.kind.code()])));
        c.push(Section::new(
            "W0",
            vec![self.w0.rows(), self.w0.cols()],
            SectionData::F32(self.w0.as_slice().to_vec()),
        ));
        c.push(Section::new("b0", vec![self.b0.len()], SectionData::F32(self.b0.clone())));
        c.push(Section::new(
            "W1",
            vec![self.w1.rows(), self.w1.cols()],
            SectionData::F32(self.w1.as_slice().to_vec()),
        ));
        c.push(Section::new("b1", vec![self.b1.len()], SectionData::F32(self.b1.clone())));
        c
    }

    pub fn from_container(c: &Container, origin: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Container { path: origin.to_path_buf(), reason };
        let kind = match &c.require("kind", origin)?.data {
            SectionData::U8(v) if v.len() == 1 => {
                ModelKind::from_code(v[0]).ok_or_else(|| fail(format!("unknown model kind {}", v[0])))?
            }
            _ => return Err(fail("section kind must be a single u8".into())),
        };
        let matrix = |name: &str| -> Result<Matrix<f32>> {
            let s = c.require(name, origin)?;
            match (&s.data, s.shape.as_slice()) {
                (SectionData::F32(v), &[r, k]) => Matrix::from_vec(r, k, v.clone()),
                _ => Err(fail(format!("section {name} must be a 2-d f32 tensor"))),
            }
        };
        let vector = |name: &str| -> Result<Vec<f32>> {
            match &c.require(name, origin)?.data {
                SectionData::F32(v) => Ok(v.clone()),
                _ => Err(fail(format!("section {name} must be f32"))),
            }
        };
        let w = ModelWeights { kind, w0: matrix("W0")?, b0: vector("b0")?, w1: matrix("W1")?, b1: vector("b1")? };
        w.check_shapes().map_err(|e| fail(e.to_string()))?;
        Ok(w)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_container(&Container::read(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip_through_container() {
        let mut rng = crate::rng::from_seed(3);
        let w = ModelWeights::<f32>::glorot(ModelKind::Mlp, 5, 4, 3, &mut rng);
        let bytes = w.to_container().to_bytes();
        let c = Container::from_bytes(&bytes, Path::new("w")).unwrap();
        assert_eq!(ModelWeights::from_container(&c, Path::new("w")).unwrap(), w);
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let mut w = ModelWeights::<f32>::zeros(ModelKind::Gcn, 3, 4, 2);
        w.b1.push(0.0);
        assert!(w.check_shapes().is_err());
        assert!(ModelWeights::from_container(&w.to_container(), Path::new("w")).is_err());
    }
}
