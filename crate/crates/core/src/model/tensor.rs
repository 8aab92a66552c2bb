use super::ModelError;

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ModelError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ModelError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
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

    /// Number of rows along the leading axis.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// The `i`-th slice along the leading axis.
    pub fn row(&self, i: usize) -> &[f64] {
        let stride = self.row_len();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        let stride = self.row_len().max(1);
        self.data.chunks_exact(stride)
    }

    /// Stacks equally sized rows under a new leading axis.
    pub fn stack(rows: &[Vec<f64>], row_shape: &[usize]) -> Result<Self, ModelError> {
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(row_shape);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(shape, data)
    }
}
