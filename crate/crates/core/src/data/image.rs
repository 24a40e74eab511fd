use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planar-interleaved RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB {
    pub width: usize,
    pub height: usize,
    /// Row-major `height × width × 3`.
    pub pixels: Vec<f64>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("image must be at least 1x1, got {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::dim(
                "image",
                "pixels",
                format!("{width}x{height}x3 needs {} values, got {}", width * height * 3, pixels.len()),
            ));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * 3 + c] = v;
    }

    pub fn same_size(&self, other: &ImageRGB) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamp(&mut self) {
        self.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// `w × h` window starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ImageRGB {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut out = ImageRGB::filled(w, h, 0.0);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * 3;
            out.pixels[y * w * 3..(y + 1) * w * 3].copy_from_slice(&self.pixels[src..src + w * 3]);
        }
        out
    }

    pub fn flip_horizontal(&self) -> ImageRGB {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    out.set(x, y, c, self.get(self.width - 1 - x, y, c));
                }
            }
        }
        out
    }

    /// Rotates by `quarter_turns × 90°` counter-clockwise.
    pub fn rotate90(&self, quarter_turns: usize) -> ImageRGB {
        let mut img = self.clone();
        for _ in 0..quarter_turns % 4 {
            let (w, h) = (img.width, img.height);
            let mut out = ImageRGB::filled(h, w, 0.0);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        out.set(y, w - 1 - x, c, img.get(x, y, c));
                    }
                }
            }
            img = out;
        }
        img
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Self::batch_to_tensor(std::slice::from_ref(self)).expect("single image batch")
    }

    /// Stacks equally sized images into `[B, 3, H, W]`.
    pub fn batch_to_tensor(images: &[ImageRGB]) -> Result<Tensor> {
        let first = images.first().ok_or_else(|| Error::Config("empty image batch".into()))?;
        let (w, h) = (first.width, first.height);
        let mut data = Vec::with_capacity(images.len() * 3 * w * h);
        for img in images {
            if !img.same_size(first) {
                return Err(Error::dim("batch", "spatial", "images differ in size"));
            }
            for c in 0..3 {
                data.extend((0..w * h).map(|p| img.pixels[p * 3 + c]));
            }
        }
        Tensor::new(data, &[images.len(), 3, h, w])
    }

    /// Splits a `[B, 3, H, W]` tensor back into images (values unclamped).
    pub fn from_tensor(t: &Tensor) -> Result<Vec<ImageRGB>> {
        let [b, c, h, w] = t.dims4("to_image")?;
        if c != 3 {
            return Err(Error::dim("to_image", "channels", format!("expected 3, got {c}")));
        }
        let d = t.data();
        Ok((0..b)
            .map(|bi| {
                let mut pixels = vec![0.0; h * w * 3];
                for ci in 0..3 {
                    for p in 0..h * w {
                        pixels[p * 3 + ci] = d[(bi * 3 + ci) * h * w + p];
                    }
                }
                ImageRGB {
                    width: w,
                    height: h,
                    pixels,
                }
            })
            .collect())
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}
