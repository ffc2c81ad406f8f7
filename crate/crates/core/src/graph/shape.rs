use std::fmt;

/// Tensor extents. Index 0 is the batch axis and is stored as `0` ("any")
/// in graph-level shapes; index 1 is always the channel axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorShape {
    dims: Vec<usize>,
}

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Self {
        TensorShape { dims }
    }

    /// `[batch, channels]` with symbolic batch.
    pub fn vector(channels: usize) -> Self {
        TensorShape::new(vec![0, channels])
    }

    /// `[batch, channels, height, width]` with symbolic batch.
    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        TensorShape::new(vec![0, channels, height, width])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn batch(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn channels(&self) -> usize {
        self.dims.get(1).copied().unwrap_or(0)
    }

    /// Product of the dims after the channel axis (1 for vectors).
    pub fn spatial(&self) -> usize {
        self.dims.iter().skip(2).product()
    }

    /// Number of elements per batch row.
    pub fn row_len(&self) -> usize {
        self.dims.iter().skip(1).product()
    }

    pub fn with_batch(&self, batch: usize) -> Self {
        let mut dims = self.dims.clone();
        if let Some(b) = dims.first_mut() {
            *b = batch;
        }
        TensorShape { dims }
    }

    /// True when both shapes agree on every non-batch dim.
    pub fn matches_symbolic(&self, other: &TensorShape) -> bool {
        self.rank() == other.rank() && self.dims[1..] == other.dims[1..]
    }

    /// A graph-level shape must have rank 2 or 4 and positive non-batch dims.
    pub fn is_well_formed(&self) -> bool {
        matches!(self.rank(), 2 | 4) && self.dims[1..].iter().all(|&d| d >= 1)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Dense row-major tensor of 64-bit reals with a concrete batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub shape: TensorShape,
    pub data: Vec<f64>,
}

impl TensorValue {
    /// Panics if `data.len()` doesn't match the product of `shape`'s dims.
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Self {
        let expected: usize = shape.dims().iter().product();
        assert_eq!(
            data.len(),
            expected,
            "tensor data length {} does not match shape {}",
            data.len(),
            shape
        );
        TensorValue { shape, data }
    }

    pub fn zeros(shape: TensorShape) -> Self {
        let len = shape.dims().iter().product();
        TensorValue {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn batch(&self) -> usize {
        self.shape.batch()
    }

    /// Elementwise sum of absolute differences. Shapes must agree.
    pub fn l1_distance(&self, other: &TensorValue) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn linf_distance(&self, other: &TensorValue) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
