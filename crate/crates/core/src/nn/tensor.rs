//! Row-major n-dimensional array of f64, rank <= 4, laid out NHWC.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.len() <= 4, "rank must be <= 4");
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>) -> Self {
        assert!(shape.len() <= 4, "rank must be <= 4");
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length must equal product of extents"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reshaped(&self, shape: &[usize]) -> Tensor {
        Tensor::from_data(shape, self.data.clone())
    }

    /// Rounds every value through f32, simulating 32-bit storage.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}
