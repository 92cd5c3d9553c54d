//! Full linear convolution of real 2D/3D arrays through zero-padded real FFTs.

use realfft::RealFftPlanner;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Smallest `m >= n` whose only prime factors are 2, 3 and 5.
pub(crate) fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Row-major array geometry over the active axes only.
fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// Applies `f` to every lane of `data` running along `axis`.
fn for_each_lane(
    data: &mut [Complex<f64>],
    dims: &[usize],
    axis: usize,
    scratch: &mut Vec<Complex<f64>>,
    mut f: impl FnMut(&mut [Complex<f64>]),
) {
    let st = strides(dims);
    let stride = st[axis];
    let len = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    scratch.resize(len, Complex::default());
    for o in 0..outer {
        for inner in 0..stride {
            let start = o * len * stride + inner;
            for t in 0..len {
                scratch[t] = data[start + t * stride];
            }
            f(scratch);
            for t in 0..len {
                data[start + t * stride] = scratch[t];
            }
        }
    }
}

pub(crate) struct Convolver {
    real: RealFftPlanner<f64>,
    complex: FftPlanner<f64>,
    max_elements: usize,
}

impl Convolver {
    pub(crate) fn new(max_elements: usize) -> Self {
        Self {
            real: RealFftPlanner::new(),
            complex: FftPlanner::new(),
            max_elements,
        }
    }

    /// Padded transform shape for convolving arrays of the given shapes.
    pub(crate) fn padded_shape(&self, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
        let padded: Vec<usize> = a.iter().zip(b).map(|(x, y)| fast_len(x + y - 1)).collect();
        let total = padded
            .iter()
            .try_fold(1usize, |acc, &p| acc.checked_mul(p))
            .filter(|&t| t <= self.max_elements);
        match total {
            Some(_) => Ok(padded),
            None => Err(Error::Resource(format!(
                "FFT of shape {padded:?} exceeds the {} element budget",
                self.max_elements
            ))),
        }
    }

    fn forward(&mut self, src: &[f64], src_dims: &[usize], padded: &[usize]) -> Vec<Complex<f64>> {
        let n = padded.len();
        let last = padded[n - 1];
        let half = last / 2 + 1;
        let mut spec_dims = padded.to_vec();
        spec_dims[n - 1] = half;
        let rows: usize = padded[..n - 1].iter().product();
        let mut spectrum = vec![Complex::default(); rows * half];

        let r2c = self.real.plan_fft_forward(last);
        let mut input = r2c.make_input_vec();
        let mut output = r2c.make_output_vec();
        let src_st = strides(src_dims);
        let pad_st = strides(&padded[..n - 1]);
        for row in 0..rows {
            // Row coordinates in the padded array (all axes but the last).
            let mut src_off = Some(0usize);
            for a in 0..n - 1 {
                let c = (row / pad_st[a]) % padded[a];
                if c >= src_dims[a] {
                    src_off = None;
                    break;
                }
                if let Some(off) = src_off.as_mut() {
                    *off += c * src_st[a];
                }
            }
            let Some(off) = src_off else { continue };
            input.iter_mut().for_each(|v| *v = 0.0);
            input[..src_dims[n - 1]].copy_from_slice(&src[off..off + src_dims[n - 1]]);
            r2c.process(&mut input, &mut output).expect("sizes from plan");
            spectrum[row * half..(row + 1) * half].copy_from_slice(&output);
        }

        let mut scratch = Vec::new();
        for axis in 0..n - 1 {
            let fft = self.complex.plan_fft_forward(spec_dims[axis]);
            for_each_lane(&mut spectrum, &spec_dims, axis, &mut scratch, |lane| fft.process(lane));
        }
        spectrum
    }

    /// Full linear convolution; output shape is `a + b - 1` per axis.
    pub(crate) fn convolve(
        &mut self,
        a: &[f64],
        a_dims: &[usize],
        b: &[f64],
        b_dims: &[usize],
    ) -> Result<(Vec<f64>, Vec<usize>)> {
        debug_assert_eq!(a_dims.len(), b_dims.len());
        let padded = self.padded_shape(a_dims, b_dims)?;
        let n = padded.len();
        let fa = self.forward(a, a_dims, &padded);
        let fb = self.forward(b, b_dims, &padded);
        let mut spectrum: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();

        let last = padded[n - 1];
        let half = last / 2 + 1;
        let mut spec_dims = padded.clone();
        spec_dims[n - 1] = half;
        let mut scratch = Vec::new();
        for axis in 0..n - 1 {
            let ifft = self.complex.plan_fft_inverse(spec_dims[axis]);
            for_each_lane(&mut spectrum, &spec_dims, axis, &mut scratch, |lane| ifft.process(lane));
        }

        let out_dims: Vec<usize> = a_dims.iter().zip(b_dims).map(|(x, y)| x + y - 1).collect();
        let out_st = strides(&out_dims);
        let pad_st = strides(&padded[..n - 1]);
        let rows: usize = padded[..n - 1].iter().product();
        let scale = 1.0 / padded.iter().product::<usize>() as f64;
        let mut out = vec![0.0; out_dims.iter().product()];

        let c2r = self.real.plan_fft_inverse(last);
        let mut input = c2r.make_input_vec();
        let mut output = c2r.make_output_vec();
        for row in 0..rows {
            let mut dst = Some(0usize);
            for a in 0..n - 1 {
                let c = (row / pad_st[a]) % padded[a];
                if c >= out_dims[a] {
                    dst = None;
                    break;
                }
                if let Some(off) = dst.as_mut() {
                    *off += c * out_st[a];
                }
            }
            let Some(off) = dst else { continue };
            input.copy_from_slice(&spectrum[row * half..(row + 1) * half]);
            // Spectra of real signals are real at DC and Nyquist; drop rounding noise.
            input[0].im = 0.0;
            if last % 2 == 0 {
                input[half - 1].im = 0.0;
            }
            c2r.process(&mut input, &mut output).expect("sizes from plan");
            let w = out_dims[n - 1];
            for (dst, src) in out[off..off + w].iter_mut().zip(&output[..w]) {
                *dst = src * scale;
            }
        }
        Ok((out, out_dims))
    }
}
