//! Classical interpolation of planar field stacks along the rotation angle, and the
//! error metrics shared by every comparison.

use nalgebra::DMatrix;

use crate::cspace::{FieldCrossSection, FieldStack};
use crate::error::{Error, Result};
use crate::voxel::{Orientation, VoxelGrid};

const PERIOD: f64 = 360.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpKind {
    /// Periodic piecewise linear.
    Linear,
    /// Periodic natural cubic spline.
    Cubic,
    /// Trigonometric polynomial through equispaced knots.
    Trig,
}

impl InterpKind {
    pub fn name(self) -> &'static str {
        match self {
            InterpKind::Linear => "Linear",
            InterpKind::Cubic => "Cubic",
            InterpKind::Trig => "Trig",
        }
    }
}

impl std::str::FromStr for InterpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(InterpKind::Linear),
            "cubic" => Ok(InterpKind::Cubic),
            "trig" => Ok(InterpKind::Trig),
            other => Err(Error::Config(format!("unknown interpolant `{other}`"))),
        }
    }
}

/// Per-voxel periodic interpolant in theta.
///
/// `coeffs` holds one row per knot (linear: knot values; cubic: second derivatives;
/// trig: `a0, a1, b1, a2, b2, ...`), each row spanning every voxel.
#[derive(Debug, Clone)]
pub struct AngularInterpolant {
    kind: InterpKind,
    knots: Vec<f64>,
    values: Vec<Vec<f64>>,
    coeffs: Vec<Vec<f64>>,
    template: VoxelGrid,
}

/// Result of evaluating an interpolant at new angles.
#[derive(Debug, Clone)]
pub struct Upsampled {
    /// Unclamped values; cubic and trig may leave `[0, 1]`.
    pub raw: Vec<FieldCrossSection>,
    /// Values clamped to `[0, 1]`, usable wherever a valid field is required.
    pub clamped: FieldStack,
}

impl Upsampled {
    pub fn raw_grids(&self) -> Vec<&VoxelGrid> {
        self.raw.iter().map(|s| &s.field).collect()
    }
}

fn theta_of(o: &Orientation) -> Result<f64> {
    match *o {
        Orientation::Planar { theta } => Ok(theta),
        Orientation::Spatial { .. } => Err(Error::structure(
            "orientation",
            "angular baselines are defined for planar stacks only",
        )),
    }
}

/// Fits one interpolant per voxel through the stack's sections.
pub fn fit_interpolant(stack: &FieldStack, kind: InterpKind) -> Result<AngularInterpolant> {
    if stack.ndim() != 2 {
        return Err(Error::structure("stack", "angular baselines need a 2D stack"));
    }
    if stack.len() < 2 {
        return Err(Error::Config(format!("{} knot(s); at least 2 are needed", stack.len())));
    }
    let knots = stack
        .sections()
        .iter()
        .map(|s| theta_of(&s.orientation))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<Vec<f64>> = stack.sections().iter().map(|s| s.field.data().to_vec()).collect();
    let coeffs = match kind {
        InterpKind::Linear => Vec::new(),
        InterpKind::Cubic => apply_rows(&periodic_spline_matrix(&knots), &values),
        InterpKind::Trig => trig_coefficients(&knots, &values)?,
    };
    Ok(AngularInterpolant {
        kind,
        knots,
        values,
        coeffs,
        template: stack.sections()[0].field.clone(),
    })
}

/// `out[i] = sum_j m[i, j] * rows[j]`.
fn apply_rows(m: &DMatrix<f64>, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| {
            let mut out = vec![0.0; rows[0].len()];
            for (j, row) in rows.iter().enumerate() {
                let w = m[(i, j)];
                if w != 0.0 {
                    out.iter_mut().zip(row).for_each(|(o, y)| *o += w * y);
                }
            }
            out
        })
        .collect()
}

fn gaps(knots: &[f64]) -> Vec<f64> {
    let n = knots.len();
    (0..n)
        .map(|i| {
            if i + 1 < n {
                knots[i + 1] - knots[i]
            } else {
                knots[0] + PERIOD - knots[i]
            }
        })
        .collect()
}

/// Matrix taking knot values to the second derivatives of the periodic cubic spline.
fn periodic_spline_matrix(knots: &[f64]) -> DMatrix<f64> {
    let n = knots.len();
    let h = gaps(knots);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        let prev = (i + n - 1) % n;
        let next = (i + 1) % n;
        a[(i, prev)] += h[prev];
        a[(i, i)] += 2.0 * (h[prev] + h[i]);
        a[(i, next)] += h[i];
        b[(i, next)] += 6.0 / h[i];
        b[(i, i)] -= 6.0 / h[i] + 6.0 / h[prev];
        b[(i, prev)] += 6.0 / h[prev];
    }
    let lu = a.lu();
    lu.solve(&b).expect("periodic spline system is diagonally dominant")
}

fn trig_coefficients(knots: &[f64], values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = knots.len();
    let step = PERIOD / n as f64;
    for (j, k) in knots.iter().enumerate() {
        if (k - knots[0] - j as f64 * step).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "trigonometric interpolation needs equispaced knots; knot {j} is {k}"
            )));
        }
    }
    let harmonics = n / 2;
    let voxels = values[0].len();
    let mut coeffs = vec![vec![0.0; voxels]; 1 + 2 * harmonics];
    for (j, row) in values.iter().enumerate() {
        let phase = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
        for (c, y) in coeffs[0].iter_mut().zip(row) {
            *c += y / n as f64;
        }
        for k in 1..=harmonics {
            // The Nyquist cosine of an even knot count is shared by +k and -k.
            let scale = if 2 * k == n { 1.0 } else { 2.0 } / n as f64;
            let (s, c) = (k as f64 * phase).sin_cos();
            let (lo, hi) = coeffs.split_at_mut(2 * k);
            let a = &mut lo[2 * k - 1];
            let b = &mut hi[0];
            for ((a, b), y) in a.iter_mut().zip(b.iter_mut()).zip(row) {
                *a += scale * c * y;
                *b += scale * s * y;
            }
        }
    }
    Ok(coeffs)
}

impl AngularInterpolant {
    pub fn kind(&self) -> InterpKind {
        self.kind
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot interval containing `theta`: `(i, offset from knot i, interval width)`.
    fn locate(&self, theta: f64) -> (usize, f64, f64) {
        let base = self.knots[0];
        let t = base + (theta - base).rem_euclid(PERIOD);
        let i = self.knots.partition_point(|&k| k <= t).saturating_sub(1);
        let h = gaps(&self.knots)[i];
        (i, t - self.knots[i], h)
    }

    /// Interpolated values at every voxel for one angle.
    pub fn evaluate(&self, theta: f64) -> Vec<f64> {
        let n = self.knots.len();
        let (i, dx, h) = self.locate(theta);
        let next = (i + 1) % n;
        let (yi, yn) = (&self.values[i], &self.values[next]);
        if dx == 0.0 {
            return yi.clone();
        }
        match self.kind {
            InterpKind::Linear => {
                let w = (dx / h).clamp(0.0, 1.0);
                yi.iter()
                    .zip(yn)
                    .map(|(&a, &b)| {
                        // Anchored at the smaller endpoint so the value never drops below it.
                        if a <= b {
                            a + (b - a) * w
                        } else {
                            b + (a - b) * (1.0 - w)
                        }
                    })
                    .collect()
            }
            InterpKind::Cubic => {
                let (mi, mn) = (&self.coeffs[i], &self.coeffs[next]);
                let rx = h - dx;
                (0..yi.len())
                    .map(|v| {
                        mi[v] * rx.powi(3) / (6.0 * h)
                            + mn[v] * dx.powi(3) / (6.0 * h)
                            + (yi[v] / h - mi[v] * h / 6.0) * rx
                            + (yn[v] / h - mn[v] * h / 6.0) * dx
                    })
                    .collect()
            }
            InterpKind::Trig => {
                let phase = (theta - self.knots[0]).to_radians();
                let mut out = self.coeffs[0].clone();
                for k in 1..=(n / 2) {
                    let (s, c) = (k as f64 * phase).sin_cos();
                    let (a, b) = (&self.coeffs[2 * k - 1], &self.coeffs[2 * k]);
                    for v in 0..out.len() {
                        out[v] += a[v] * c + b[v] * s;
                    }
                }
                out
            }
        }
    }
}

/// Evaluates the interpolant at each target angle.
pub fn upsample_stack(interp: &AngularInterpolant, targets: &[Orientation]) -> Result<Upsampled> {
    let mut raw = Vec::with_capacity(targets.len());
    let mut clamped = Vec::with_capacity(targets.len());
    for o in targets {
        let theta = theta_of(o)?;
        let values = interp.evaluate(theta);
        let field = interp.template.with_data(values);
        clamped.push(FieldCrossSection {
            orientation: *o,
            field: field.map(|v| v.clamp(0.0, 1.0)),
        });
        raw.push(FieldCrossSection { orientation: *o, field });
    }
    Ok(Upsampled {
        raw,
        clamped: FieldStack::new(clamped)?,
    })
}

fn check_pair(a: &VoxelGrid, b: &VoxelGrid) -> Result<()> {
    a.lattice().ensure_same(b.lattice())
}

/// Mean squared voxelwise difference.
pub fn mse(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(sum / a.len() as f64)
}

/// Maximum absolute voxelwise difference.
pub fn mpe(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// MSE and MPE pooled over every voxel of paired section lists.
pub fn stack_errors<'a>(
    predicted: impl IntoIterator<Item = &'a VoxelGrid>,
    truth: impl IntoIterator<Item = &'a VoxelGrid>,
) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut worst = 0.0f64;
    let mut truth = truth.into_iter();
    for p in predicted {
        let t = truth
            .next()
            .ok_or_else(|| Error::structure("stack", "prediction has more sections than truth"))?;
        check_pair(p, t)?;
        for (x, y) in p.data().iter().zip(t.data()) {
            let d = x - y;
            sum += d * d;
            worst = worst.max(d.abs());
        }
        count += p.len();
    }
    if truth.next().is_some() {
        return Err(Error::structure("stack", "truth has more sections than prediction"));
    }
    if count == 0 {
        return Err(Error::Config("no sections to compare".into()));
    }
    Ok((sum / count as f64, worst))
}

/// Pointwise minimum over grids that may lie outside `[0, 1]`.
pub fn min_over(grids: &[&VoxelGrid]) -> Result<VoxelGrid> {
    let first = grids
        .first()
        .ok_or_else(|| Error::Config("no grids to reduce".into()))?;
    let mut data = first.data().to_vec();
    for g in &grids[1..] {
        check_pair(first, g)?;
        data.iter_mut().zip(g.data()).for_each(|(m, v)| *m = m.min(*v));
    }
    Ok(first.with_data(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cspace::{equispaced_orientations, imf_from_stack};
    use crate::voxel::Lattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack_from(thetas: &[f64], f: impl Fn(f64, usize) -> f64) -> FieldStack {
        let l = Lattice::unit(&[3, 2]).unwrap();
        FieldStack::new(
            thetas
                .iter()
                .map(|&t| FieldCrossSection {
                    orientation: Orientation::planar(t).unwrap(),
                    field: VoxelGrid::from_fn(l.clone(), |i| f(t, l.flat_index(i))).unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn thetas(n: usize) -> Vec<f64> {
        (0..n).map(|i| 360.0 * i as f64 / n as f64).collect()
    }

    const KINDS: [InterpKind; 3] = [InterpKind::Linear, InterpKind::Cubic, InterpKind::Trig];

    #[test]
    fn constant_data_stays_constant() {
        let s = stack_from(&thetas(7), |_, v| 0.1 * v as f64);
        for kind in KINDS {
            let it = fit_interpolant(&s, kind).unwrap();
            for theta in [0.0, 13.7, 200.0, 359.9] {
                for (v, x) in it.evaluate(theta).iter().enumerate() {
                    assert!((x - 0.1 * v as f64).abs() < 1e-12, "{kind:?} {theta}");
                }
            }
        }
    }

    #[test]
    fn knots_are_reproduced_and_periodic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table: Vec<f64> = (0..9 * 6).map(|_| rng.gen()).collect();
        let ts = thetas(9);
        let s = stack_from(&ts, |t, v| table[(t / 40.0).round() as usize * 6 + v]);
        for kind in KINDS {
            let it = fit_interpolant(&s, kind).unwrap();
            for (j, &t) in ts.iter().enumerate() {
                let got = it.evaluate(t);
                let wrapped = it.evaluate(t + 360.0);
                for v in 0..6 {
                    assert!((got[v] - table[j * 6 + v]).abs() <= 1e-9, "{kind:?}");
                    assert!((got[v] - wrapped[v]).abs() <= 1e-9);
                }
            }
            for theta in [17.0, 123.4, 301.0] {
                let a = it.evaluate(theta);
                let b = it.evaluate(theta + 360.0);
                assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-9));
            }
        }
    }

    #[test]
    fn trig_reproduces_a_cosine() {
        let s = stack_from(&thetas(8), |t, _| 0.5 + 0.4 * t.to_radians().cos());
        let it = fit_interpolant(&s, InterpKind::Trig).unwrap();
        for i in 0..720 {
            let t = i as f64 * 0.5;
            let want = 0.5 + 0.4 * t.to_radians().cos();
            assert!(it.evaluate(t).iter().all(|v| (v - want).abs() <= 1e-9), "{t}");
        }
    }

    #[test]
    fn cubic_matches_an_independent_periodic_solve() {
        // For equispaced knots the second derivatives solve a circulant tridiagonal
        // system; a Gauss-Seidel sweep reaches the same fixed point.
        let ts = thetas(6);
        let ys = [0.1, 0.7, 0.3, 0.9, 0.2, 0.5];
        let s = stack_from(&ts, |t, _| ys[(t / 60.0).round() as usize]);
        let it = fit_interpolant(&s, InterpKind::Cubic).unwrap();
        let h = 60.0;
        let mut m = [0.0f64; 6];
        for _ in 0..200 {
            for i in 0..6 {
                let (p, n) = ((i + 5) % 6, (i + 1) % 6);
                let rhs = 6.0 * (ys[n] - 2.0 * ys[i] + ys[p]) / (h * h);
                m[i] = (rhs - m[p] - m[n]) / 4.0;
            }
        }
        let x = 25.0;
        let want = m[0] * (h - x).powi(3) / (6.0 * h)
            + m[1] * x.powi(3) / (6.0 * h)
            + (ys[0] / h - m[0] * h / 6.0) * (h - x)
            + (ys[1] / h - m[1] * h / 6.0) * x;
        assert!((it.evaluate(x)[0] - want).abs() < 1e-12);
    }

    #[test]
    fn linear_stays_between_endpoints_and_keeps_the_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table: Vec<f64> = (0..36 * 6).map(|_| rng.gen()).collect();
        let s = stack_from(&thetas(36), |t, v| table[(t / 10.0).round() as usize * 6 + v]);
        let it = fit_interpolant(&s, InterpKind::Linear).unwrap();
        let up = upsample_stack(&it, &equispaced_orientations(144, None).unwrap()).unwrap();
        for (k, sec) in up.raw.iter().enumerate() {
            let lo = k / 4;
            let hi = (lo + 1) % 36;
            for v in 0..6 {
                let (a, b) = (table[lo * 6 + v], table[hi * 6 + v]);
                let x = sec.field.data()[v];
                assert!(a.min(b) <= x && x <= a.max(b));
            }
        }
        assert_eq!(imf_from_stack(&up.clamped), imf_from_stack(&s));
    }

    #[test]
    fn upsampling_at_the_knots_returns_the_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table: Vec<f64> = (0..12 * 6).map(|_| rng.gen()).collect();
        let ts = thetas(12);
        let s = stack_from(&ts, |t, v| table[(t / 30.0).round() as usize * 6 + v]);
        let targets: Vec<Orientation> = s.orientations();
        for kind in KINDS {
            let up = upsample_stack(&fit_interpolant(&s, kind).unwrap(), &targets).unwrap();
            for (a, b) in up.raw.iter().zip(s.sections()) {
                assert!(a
                    .field
                    .data()
                    .iter()
                    .zip(b.field.data())
                    .all(|(x, y)| (x - y).abs() <= 1e-9));
            }
        }
    }

    #[test]
    fn fit_errors() {
        let one = stack_from(&[0.0], |_, _| 0.5);
        assert!(fit_interpolant(&one, InterpKind::Linear).is_err());
        let uneven = stack_from(&[0.0, 10.0, 200.0], |_, _| 0.5);
        assert!(fit_interpolant(&uneven, InterpKind::Trig).is_err());
        assert!(fit_interpolant(&uneven, InterpKind::Cubic).is_ok());
        let l = Lattice::unit(&[2, 2, 2]).unwrap();
        let s3 = FieldStack::new(vec![
            FieldCrossSection {
                orientation: Orientation::spatial(0.0, 0.0).unwrap(),
                field: VoxelGrid::zeros(l.clone()),
            },
            FieldCrossSection {
                orientation: Orientation::spatial(90.0, 0.0).unwrap(),
                field: VoxelGrid::zeros(l),
            },
        ])
        .unwrap();
        assert!(fit_interpolant(&s3, InterpKind::Linear).is_err());
    }

    #[test]
    fn metric_examples() {
        let l = Lattice::unit(&[3, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = VoxelGrid::from_fn(l.clone(), |_| rng.gen::<f64>() * 0.8).unwrap();
        assert_eq!((mse(&a, &a).unwrap(), mpe(&a, &a).unwrap()), (0.0, 0.0));
        let b = a.map(|v| v + 0.1);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
        assert!((mpe(&a, &b).unwrap() - 0.1).abs() < 1e-15);
        let c = VoxelGrid::from_fn(l, |_| rng.gen::<f64>()).unwrap();
        let mut sq = 0.0;
        let mut mx = 0.0f64;
        for i in 0..9 {
            let d = a.data()[i] - c.data()[i];
            sq += d * d;
            mx = mx.max(d.abs());
        }
        assert!((mse(&a, &c).unwrap() - sq / 9.0).abs() < 1e-15);
        assert_eq!(mpe(&a, &c).unwrap(), mx);
        let other = VoxelGrid::zeros(Lattice::unit(&[3, 4]).unwrap());
        assert!(mse(&a, &other).is_err());
        assert!(mpe(&a, &other).is_err());
    }
}
