//! In-memory image buffers. Row-major, origin at the top-left. All pixel
//! arithmetic in the pipeline happens on these f64 buffers; 8-bit and float
//! file formats are converted at the I/O boundary (see [`crate::image_io`]).

/// RGB image with f64 channels (linear or display-referred depending on
/// context; callers track the transfer function).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, px: [f64; 3]) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![px; width * height],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i] = px;
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> ImageRgb {
        ImageRgb {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Rec. 709 luminance.
    pub fn luminance(&self) -> ImageGray {
        ImageGray {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| luminance(*p)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }
}

#[inline]
pub fn luminance(px: [f64; 3]) -> f64 {
    0.2126 * px[0] + 0.7152 * px[1] + 0.0722 * px[2]
}

/// Single-channel f64 image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageGray {
    pub fn new(width: usize, height: usize) -> Self {
        ImageGray {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }
}

/// Multi-channel planar feature buffer (channel-major): channel c occupies
/// `data[c*w*h .. (c+1)*w*h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Planes {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c * self.width * self.height + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[c * self.width * self.height + y * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }
}
