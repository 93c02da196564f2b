/// Square-kernel convolution geometry over a `(channels, height, width)` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the patch matrix.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Visits `(patch row, output pixel, image index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for y in 0..oh {
                        let iy = (y * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let base = (c * self.height + iy as usize) * self.width;
                        for x in 0..ow {
                            let ix = (x * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            f(row, y * ow + x, base + ix as usize);
                        }
                    }
                }
            }
        }
    }

    /// Unfolds `image` into a `patch_len x out_pixels` matrix.
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        cols.fill(0.0);
        let p = self.out_pixels();
        self.for_each_tap(|row, pix, idx| cols[row * p + pix] = image[idx]);
    }

    /// Adjoint of [`Geometry::im2col`]: scatters patches back, accumulating.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let p = self.out_pixels();
        self.for_each_tap(|row, pix, idx| image[idx] += cols[row * p + pix]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_sizes() {
        let g = Geometry { channels: 1, height: 28, width: 28, kernel: 3, stride: 2, pad: 1 };
        assert_eq!((g.out_height(), g.out_width()), (14, 14));
        let g = Geometry { channels: 1, height: 7, width: 7, kernel: 3, stride: 2, pad: 1 };
        assert_eq!(g.out_height(), 4);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Geometry { channels: 2, height: 5, width: 4, kernel: 3, stride: 2, pad: 1 };
        let image: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols_in: Vec<f64> = (0..g.patch_len() * g.out_pixels())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut cols = vec![0.0; cols_in.len()];
        g.im2col(&image, &mut cols);
        let mut back = vec![0.0; image.len()];
        g.col2im(&cols_in, &mut back);
        let lhs: f64 = cols.iter().zip(&cols_in).map(|(a, b)| a * b).sum();
        let rhs: f64 = image.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
