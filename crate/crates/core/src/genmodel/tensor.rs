use super::GenError;

/// Dense row-major `f64` array. Feature maps use shape `[c, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, GenError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(GenError::ShapeMismatch {
                expected: format!("{expected} values for shape {shape:?}"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(c, h, w)` of a feature map.
    pub(crate) fn chw(&self) -> Result<(usize, usize, usize), GenError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(GenError::ShapeMismatch {
                expected: "a [c, h, w] feature map".into(),
                actual: format!("{:?}", self.shape),
            }),
        }
    }
}
