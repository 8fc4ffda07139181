use crate::tensor::{Tensor, TensorError};

/// Planar RGB image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Channel-major: `data[(c * height + y) * width + x]`.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; 3 * width * height],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[self.index(c, x, y)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        let i = self.index(c, x, y);
        self.data[i] = v;
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn clamped(&self) -> Image {
        let mut c = self.clone();
        c.clamp01();
        c
    }

    /// Stacks images into an `(n, 3, h, w)` constant tensor.
    pub fn batch_tensor(images: &[&Image]) -> Result<Tensor, TensorError> {
        let first = images.first().ok_or(TensorError::Invalid {
            op: "batch_tensor",
            reason: "empty batch".into(),
        })?;
        let (w, h) = (first.width, first.height);
        let mut data = Vec::with_capacity(images.len() * 3 * w * h);
        for img in images {
            crate::tensor::check_dim("batch_tensor", "width", w, img.width)?;
            crate::tensor::check_dim("batch_tensor", "height", h, img.height)?;
            data.extend_from_slice(&img.data);
        }
        Tensor::new([images.len(), 3, h, w], data)
    }

    pub fn to_tensor(&self) -> Tensor {
        Self::batch_tensor(&[self]).expect("single image batch")
    }

    /// Batch item `index` of an `(n, 3, h, w)` tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Image, TensorError> {
        let [n, c, h, w] = t.shape();
        crate::tensor::check_dim("from_tensor", "channels", 3, c)?;
        if index >= n {
            return Err(TensorError::Invalid {
                op: "from_tensor",
                reason: format!("index {index} out of batch {n}"),
            });
        }
        let item = 3 * h * w;
        Ok(Image {
            width: w,
            height: h,
            data: t.data()[index * item..(index + 1) * item].to_vec(),
        })
    }
}
