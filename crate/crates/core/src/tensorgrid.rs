//! Scalar and symmetric-tensor fields on rectangular grids, the finite
//! difference operator `∇^m` and its exact transpose.
//!
//! A 2D grid is stored row-major (`index = y * width + x`). A grid with
//! `height == 1` is a 1D signal; its tensors have a single component.
//!
//! `∇^m` is built from first differences. Position `k` of a difference chain
//! (0-based) uses a forward difference when `k` is even and a backward one
//! when `k` is odd. Every first difference is evaluated only where both of
//! its samples are valid and is zero elsewhere, so the valid rectangle of a
//! chain shrinks by one pixel per application. Mixed components average all
//! distinct axis orderings. With that convention the kernel of `∇^m` is
//! exactly the polynomials of degree `< m` and the transpose is assembled by
//! scattering the same stencils.
//!
//! The adjoint is taken with respect to the multiplicity-weighted pairing
//! `⟨P, Q⟩ = Σ_p Σ_c w_c P_c(p) Q_c(p)`. The continuum sign `(-1)^m` of
//! integration by parts is part of [`DiffOperator::transpose`]; callers never
//! apply it themselves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::ops::{Add, Mul, Sub};

use crate::error::{domain, Error, Result};

/// Largest number of distinct components (order 3 in 2D).
pub const MAX_COMPONENTS: usize = 4;

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Order and dimension of a symmetric tensor space `S^m(R^n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TensorShape {
    order: usize,
    dim: usize,
}

impl TensorShape {
    pub fn new(order: usize, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return domain(format!("tensor order must be 1, 2 or 3, got {order}"));
        }
        if !(1..=2).contains(&dim) {
            return domain(format!("dimension must be 1 or 2, got {dim}"));
        }
        Ok(Self { order, dim })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of distinct components: multisets of size `order` over the axes.
    pub fn len(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.order + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of `y` indices in component `c`. Components are ordered
    /// `x…x, x…xy, …, y…y`.
    pub fn y_count(&self, c: usize) -> usize {
        if self.dim == 1 {
            0
        } else {
            c
        }
    }

    /// Multinomial multiplicity of component `c`.
    pub fn weight(&self, c: usize) -> f64 {
        binomial(self.order, self.y_count(c)) as f64
    }

    pub fn label(&self, c: usize) -> String {
        let ys = self.y_count(c);
        let mut s = "x".repeat(self.order - ys);
        s.push_str(&"y".repeat(ys));
        s
    }
}

/// A single element of `S^m(R^n)` stored by distinct components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymTensor {
    shape: TensorShape,
    comps: [f64; MAX_COMPONENTS],
}

impl SymTensor {
    pub fn zeros(shape: TensorShape) -> Self {
        Self {
            shape,
            comps: [0.0; MAX_COMPONENTS],
        }
    }

    pub fn from_components(shape: TensorShape, values: &[f64]) -> Result<Self> {
        if values.len() != shape.len() {
            return domain(format!(
                "expected {} components, got {}",
                shape.len(),
                values.len()
            ));
        }
        let mut t = Self::zeros(shape);
        t.comps[..values.len()].copy_from_slice(values);
        Ok(t)
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn components(&self) -> &[f64] {
        &self.comps[..self.shape.len()]
    }

    pub fn components_mut(&mut self) -> &mut [f64] {
        let n = self.shape.len();
        &mut self.comps[..n]
    }

    /// Weighted Frobenius product `A : B`.
    pub fn dot(&self, other: &SymTensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        (0..self.shape.len())
            .map(|c| self.shape.weight(c) * self.comps[c] * other.comps[c])
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.components().iter().all(|&v| v == 0.0)
    }
}

impl Add for SymTensor {
    type Output = SymTensor;
    fn add(mut self, rhs: SymTensor) -> SymTensor {
        for c in 0..self.shape.len() {
            self.comps[c] += rhs.comps[c];
        }
        self
    }
}

impl Sub for SymTensor {
    type Output = SymTensor;
    fn sub(mut self, rhs: SymTensor) -> SymTensor {
        for c in 0..self.shape.len() {
            self.comps[c] -= rhs.comps[c];
        }
        self
    }
}

impl Mul<SymTensor> for f64 {
    type Output = SymTensor;
    fn mul(self, mut rhs: SymTensor) -> SymTensor {
        for c in 0..rhs.shape.len() {
            rhs.comps[c] *= self;
        }
        rhs
    }
}

/// Real samples on a `width × height` grid with spacing `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    h: f64,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, h: f64, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!("empty grid {width}x{height}")));
        }
        if data.len() != width * height {
            return domain(format!(
                "{}x{} grid needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            ));
        }
        if !(h > 0.0 && h.is_finite()) {
            return domain(format!("grid spacing must be positive, got {h}"));
        }
        Ok(Self {
            width,
            height,
            h,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, h: f64) -> Result<Self> {
        Self::new(width, height, h, vec![0.0; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        h: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, h, data)
    }

    /// A copy of `self` holding different samples.
    pub fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len());
        Self {
            width: self.width,
            height: self.height,
            h: self.h,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// 1 for signals (`height == 1`), 2 otherwise.
    pub fn dim(&self) -> usize {
        if self.height == 1 {
            1
        } else {
            2
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
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

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Observation mask: `true` marks an observed pixel (`Ω − D`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    observed: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != width * height {
            return domain(format!(
                "{}x{} mask needs {} flags, got {}",
                width,
                height,
                width * height,
                observed.len()
            ));
        }
        if !observed.iter().any(|&o| o) {
            return Err(Error::EmptyObserved);
        }
        Ok(Self {
            width,
            height,
            observed,
        })
    }

    /// Pure denoising: every pixel observed.
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            observed: vec![true; width * height],
        }
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_observed(&self, x: usize, y: usize) -> bool {
        self.observed[y * self.width + x]
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn hole_count(&self) -> usize {
        self.observed.len() - self.observed_count()
    }

    /// Row-major indices of the unobserved pixels (the hole `D`).
    pub fn hole_indices(&self) -> Vec<usize> {
        self.observed
            .iter()
            .enumerate()
            .filter_map(|(i, &o)| (!o).then_some(i))
            .collect()
    }
}

/// Field of symmetric order-`m` tensors, one plane per distinct component.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField {
    width: usize,
    height: usize,
    h: f64,
    shape: TensorShape,
    planes: Vec<Vec<f64>>,
}

impl SymTensorField {
    pub fn zeros(width: usize, height: usize, h: f64, shape: TensorShape) -> Self {
        Self {
            width,
            height,
            h,
            shape,
            planes: vec![vec![0.0; width * height]; shape.len()],
        }
    }

    pub fn from_planes(
        width: usize,
        height: usize,
        h: f64,
        shape: TensorShape,
        planes: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if planes.len() != shape.len() || planes.iter().any(|p| p.len() != width * height) {
            return domain("tensor planes do not match shape and extents");
        }
        Ok(Self {
            width,
            height,
            h,
            shape,
            planes,
        })
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn planes(&self) -> &[Vec<f64>] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.planes
    }

    pub fn into_planes(self) -> Vec<Vec<f64>> {
        self.planes
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn at_index(&self, i: usize) -> SymTensor {
        let mut t = SymTensor::zeros(self.shape);
        for (c, plane) in self.planes.iter().enumerate() {
            t.comps[c] = plane[i];
        }
        t
    }

    pub fn at(&self, x: usize, y: usize) -> SymTensor {
        self.at_index(y * self.width + x)
    }

    pub fn set_index(&mut self, i: usize, t: &SymTensor) {
        for (c, plane) in self.planes.iter_mut().enumerate() {
            plane[i] = t.comps[c];
        }
    }

    /// Weighted pairing summed over all pixels in row-major order.
    pub fn dot(&self, other: &SymTensorField) -> f64 {
        let mut s = 0.0;
        for i in 0..self.pixel_count() {
            s += self.at_index(i).dot(&other.at_index(i));
        }
        s
    }

    pub fn pointwise_norms(&self) -> Vec<f64> {
        (0..self.pixel_count())
            .map(|i| self.at_index(i).norm())
            .collect()
    }
}

/// Inclusive pixel rectangle; empty when `x0 > x1` or `y0 > y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: isize,
    pub x1: isize,
    pub y0: isize,
    pub y1: isize,
}

impl Rect {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            x1: width as isize - 1,
            y0: 0,
            y1: height as isize - 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x0 > self.x1 || self.y0 > self.y1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as isize, y as isize);
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn intersect(&self, o: &Rect) -> Rect {
        Rect {
            x0: self.x0.max(o.x0),
            x1: self.x1.min(o.x1),
            y0: self.y0.max(o.y0),
            y1: self.y1.min(o.y1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Forward,
    Backward,
}

fn step_at(position: usize) -> Step {
    if position.is_multiple_of(2) {
        Step::Forward
    } else {
        Step::Backward
    }
}

fn shrink(r: Rect, axis: Axis, step: Step) -> Rect {
    let mut r = r;
    match (axis, step) {
        (Axis::X, Step::Forward) => r.x1 -= 1,
        (Axis::X, Step::Backward) => r.x0 += 1,
        (Axis::Y, Step::Forward) => r.y1 -= 1,
        (Axis::Y, Step::Backward) => r.y0 += 1,
    }
    r
}

/// All distinct axis sequences with `m - ys` x's and `ys` y's.
fn orderings(m: usize, ys: usize) -> Vec<Vec<Axis>> {
    fn rec(xs: usize, ys: usize, prefix: &mut Vec<Axis>, out: &mut Vec<Vec<Axis>>) {
        if xs == 0 && ys == 0 {
            out.push(prefix.clone());
            return;
        }
        if xs > 0 {
            prefix.push(Axis::X);
            rec(xs - 1, ys, prefix, out);
            prefix.pop();
        }
        if ys > 0 {
            prefix.push(Axis::Y);
            rec(xs, ys - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(m - ys, ys, &mut Vec::with_capacity(m), &mut out);
    out
}

/// Interior of an order-`m` operator: pixels inside the valid rectangle of
/// every difference chain.
pub fn interior_rect(shape: TensorShape, width: usize, height: usize) -> Rect {
    let full = Rect::full(width, height);
    let mut r = full;
    for c in 0..shape.len() {
        for seq in orderings(shape.order(), shape.y_count(c)) {
            let mut v = full;
            for (k, &axis) in seq.iter().enumerate() {
                v = shrink(v, axis, step_at(k));
            }
            r = r.intersect(&v);
        }
    }
    r
}

/// The discrete `∇^m` on a fixed grid together with its exact transpose.
#[derive(Clone, Debug)]
pub struct DiffOperator {
    width: usize,
    height: usize,
    inv_h: f64,
    shape: TensorShape,
    chains: Vec<Vec<Vec<Axis>>>,
}

impl DiffOperator {
    /// Works on any grid size; differences that do not fit vanish.
    pub fn new(order: usize, width: usize, height: usize, h: f64) -> Result<Self> {
        let dim = if height == 1 { 1 } else { 2 };
        let shape = TensorShape::new(order, dim)?;
        if width == 0 || height == 0 {
            return Err(Error::Size(format!("empty grid {width}x{height}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return domain(format!("grid spacing must be positive, got {h}"));
        }
        let chains = (0..shape.len())
            .map(|c| orderings(order, shape.y_count(c)))
            .collect();
        Ok(Self {
            width,
            height,
            inv_h: 1.0 / h,
            shape,
            chains,
        })
    }

    pub fn for_field(order: usize, u: &ScalarField) -> Result<Self> {
        Self::new(order, u.width(), u.height(), u.h())
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn h(&self) -> f64 {
        1.0 / self.inv_h
    }

    pub fn interior(&self) -> Rect {
        interior_rect(self.shape, self.width, self.height)
    }

    fn diff(&self, src: &[f64], valid: Rect, axis: Axis, step: Step) -> (Vec<f64>, Rect) {
        let out_rect = shrink(valid, axis, step);
        let mut dst = vec![0.0; src.len()];
        if out_rect.is_empty() {
            return (dst, out_rect);
        }
        let w = self.width as isize;
        let offset = match axis {
            Axis::X => 1,
            Axis::Y => w,
        };
        for y in out_rect.y0..=out_rect.y1 {
            for x in out_rect.x0..=out_rect.x1 {
                let i = y * w + x;
                let (hi, lo) = match step {
                    Step::Forward => (i + offset, i),
                    Step::Backward => (i, i - offset),
                };
                dst[i as usize] = (src[hi as usize] - src[lo as usize]) * self.inv_h;
            }
        }
        (dst, out_rect)
    }

    /// Transpose of `diff(·, valid, axis, step)` as a new vector.
    fn diff_transpose(&self, p: &[f64], valid: Rect, axis: Axis, step: Step) -> Vec<f64> {
        let out_rect = shrink(valid, axis, step);
        let mut dst = vec![0.0; p.len()];
        if out_rect.is_empty() {
            return dst;
        }
        let w = self.width as isize;
        let offset = match axis {
            Axis::X => 1,
            Axis::Y => w,
        };
        for y in out_rect.y0..=out_rect.y1 {
            for x in out_rect.x0..=out_rect.x1 {
                let i = y * w + x;
                let v = p[i as usize] * self.inv_h;
                let (hi, lo) = match step {
                    Step::Forward => (i + offset, i),
                    Step::Backward => (i, i - offset),
                };
                dst[hi as usize] += v;
                dst[lo as usize] -= v;
            }
        }
        dst
    }

    fn check_len(&self, n: usize) {
        assert_eq!(
            n,
            self.width * self.height,
            "field does not match operator extents"
        );
    }

    /// Component planes of `∇^m u`.
    pub fn apply(&self, u: &[f64]) -> Vec<Vec<f64>> {
        self.check_len(u.len());
        let full = Rect::full(self.width, self.height);
        self.chains
            .iter()
            .map(|seqs| {
                let mut acc = vec![0.0; u.len()];
                for seq in seqs {
                    let mut cur = u.to_vec();
                    let mut valid = full;
                    for (k, &axis) in seq.iter().enumerate() {
                        let (next, r) = self.diff(&cur, valid, axis, step_at(k));
                        cur = next;
                        valid = r;
                    }
                    for (a, v) in acc.iter_mut().zip(&cur) {
                        *a += v;
                    }
                }
                if seqs.len() > 1 {
                    let inv = 1.0 / seqs.len() as f64;
                    acc.iter_mut().for_each(|a| *a *= inv);
                }
                acc
            })
            .collect()
    }

    pub fn apply_field(&self, u: &ScalarField) -> SymTensorField {
        SymTensorField {
            width: self.width,
            height: self.height,
            h: 1.0 / self.inv_h,
            shape: self.shape,
            planes: self.apply(u.data()),
        }
    }

    /// `G^T P` for the weighted pairing, so that `⟨Gu, P⟩ = ⟨u, G^T P⟩`.
    pub fn transpose(&self, planes: &[Vec<f64>]) -> Vec<f64> {
        assert_eq!(planes.len(), self.shape.len());
        let n = self.width * self.height;
        let full = Rect::full(self.width, self.height);
        let mut out = vec![0.0; n];
        for (c, seqs) in self.chains.iter().enumerate() {
            self.check_len(planes[c].len());
            // weight_c / |orderings_c| == 1
            for seq in seqs {
                let mut rects = Vec::with_capacity(seq.len());
                let mut valid = full;
                for (k, &axis) in seq.iter().enumerate() {
                    rects.push(valid);
                    valid = shrink(valid, axis, step_at(k));
                }
                let mut cur = planes[c].clone();
                for k in (0..seq.len()).rev() {
                    cur = self.diff_transpose(&cur, rects[k], seq[k], step_at(k));
                }
                for (o, v) in out.iter_mut().zip(&cur) {
                    *o += v;
                }
            }
        }
        out
    }

    pub fn transpose_field(&self, p: &SymTensorField) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            h: 1.0 / self.inv_h,
            data: self.transpose(&p.planes),
        }
    }

    /// `G^T G v`.
    pub fn normal(&self, v: &[f64]) -> Vec<f64> {
        self.transpose(&self.apply(v))
    }
}

/// `∇^m u`; requires every used extent to be at least `m + 1`.
pub fn grad_m(u: &ScalarField, m: usize) -> Result<SymTensorField> {
    let op = DiffOperator::for_field(m, u)?;
    let too_small = u.width() < m + 1 || (u.dim() == 2 && u.height() < m + 1);
    if too_small {
        return Err(Error::Size(format!(
            "order {m} needs extents of at least {}, got {}x{}",
            m + 1,
            u.width(),
            u.height()
        )));
    }
    Ok(op.apply_field(u))
}

/// `G^T P`, the exact adjoint of [`grad_m`].
pub fn div_m_adjoint(p: &SymTensorField) -> Result<ScalarField> {
    let op = DiffOperator::new(p.shape().order(), p.width(), p.height(), p.h())?;
    Ok(op.transpose_field(p))
}

/// `(4 n / h²)^m`, an upper bound on `‖G‖²` for any grid.
pub fn analytic_norm_bound(order: usize, dim: usize, h: f64) -> f64 {
    (4.0 * dim as f64 / (h * h)).powi(order as i32)
}

/// Power-iteration estimate of `‖G‖²`, the largest eigenvalue of `G^T G`.
pub fn operator_norm_estimate(
    order: usize,
    width: usize,
    height: usize,
    h: f64,
    seed: u64,
) -> Result<f64> {
    let op = DiffOperator::new(order, width, height, h)?;
    Ok(power_iteration(&op, seed))
}

pub(crate) fn power_iteration(op: &DiffOperator, seed: u64) -> f64 {
    let n = op.width * op.height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|a| *a /= nv);
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let w = op.normal(&v);
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|a| a / nw).collect();
        let done = (next - lambda).abs() <= 1e-10 * next;
        lambda = next;
        if done {
            break;
        }
    }
    lambda
}

/// Mean of `p` over the interior pixels within Euclidean distance `rho` of
/// `center`.
pub fn disk_mean(p: &SymTensorField, center: (usize, usize), rho: f64) -> Result<SymTensor> {
    let interior = interior_rect(p.shape(), p.width(), p.height());
    let (cx, cy) = center;
    let empty = || Error::EmptyDisk { x: cx, y: cy, rho };
    if !(rho >= 0.0) {
        return domain(format!("disk radius must be nonnegative, got {rho}"));
    }
    let mut acc = SymTensor::zeros(p.shape());
    let mut count = 0usize;
    for_each_disk_pixel(
        &interior,
        center,
        rho,
        |i| {
            acc = acc + p.at_index(i);
            count += 1;
        },
        p.width(),
    );
    if count == 0 {
        return Err(empty());
    }
    Ok((1.0 / count as f64) * acc)
}

/// Visit the row-major index of every pixel of `region` inside the disk.
pub(crate) fn for_each_disk_pixel(
    region: &Rect,
    center: (usize, usize),
    rho: f64,
    mut f: impl FnMut(usize),
    width: usize,
) {
    if region.is_empty() {
        return;
    }
    let (cx, cy) = (center.0 as isize, center.1 as isize);
    let reach = rho.floor() as isize;
    let r2 = rho * rho;
    for y in (cy - reach).max(region.y0)..=(cy + reach).min(region.y1) {
        for x in (cx - reach).max(region.x0)..=(cx + reach).min(region.x1) {
            let (dx, dy) = ((x - cx) as f64, (y - cy) as f64);
            if dx * dx + dy * dy <= r2 {
                f(y as usize * width + x as usize);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_field(w: usize, h: usize, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_fn(w, h, 1.0, |_, _| rng.random::<f64>() * 2.0 - 1.0).unwrap()
    }

    #[test]
    fn shape_components_and_weights() {
        let s = TensorShape::new(2, 2).unwrap();
        assert_eq!(s.len(), 3);
        let w: Vec<f64> = (0..3).map(|c| s.weight(c)).collect();
        assert_eq!(w, vec![1.0, 2.0, 1.0]);
        assert_eq!(s.label(1), "xy");
        let s3 = TensorShape::new(3, 2).unwrap();
        let w3: Vec<f64> = (0..4).map(|c| s3.weight(c)).collect();
        assert_eq!(w3, vec![1.0, 3.0, 3.0, 1.0]);
        assert_eq!(TensorShape::new(3, 1).unwrap().len(), 1);
        assert!(TensorShape::new(4, 2).is_err());
        assert!(TensorShape::new(2, 3).is_err());
    }

    #[test]
    fn weighted_norm_is_frobenius_of_full_tensor() {
        // Z = [[1, 2], [2, 3]] has Frobenius norm² 1 + 4 + 4 + 9.
        let s = TensorShape::new(2, 2).unwrap();
        let z = SymTensor::from_components(s, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(z.dot(&z), 18.0);
    }

    #[test]
    fn linear_field_gives_constant_gradient() {
        let u =
            ScalarField::from_fn(6, 5, 1.0, |x, y| 0.5 + 2.0 * x as f64 - 3.0 * y as f64).unwrap();
        let g = grad_m(&u, 1).unwrap();
        let interior = interior_rect(g.shape(), 6, 5);
        for y in 0..5 {
            for x in 0..6 {
                if interior.contains(x, y) {
                    let t = g.at(x, y);
                    assert_eq!(t.components(), &[2.0, -3.0]);
                }
            }
        }
    }

    #[test]
    fn quadratic_field_gives_constant_hessian() {
        let u = ScalarField::from_fn(7, 6, 1.0, |x, _| (x * x) as f64).unwrap();
        let g = grad_m(&u, 2).unwrap();
        let interior = interior_rect(g.shape(), 7, 6);
        assert_eq!(
            interior,
            Rect {
                x0: 1,
                x1: 5,
                y0: 1,
                y1: 4
            }
        );
        for y in 1..5 {
            for x in 1..6 {
                assert_eq!(g.at(x, y).components(), &[2.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn spacing_scales_derivatives() {
        let h = 0.25;
        let u = ScalarField::from_fn(8, 8, h, |x, y| {
            let (x, y) = (x as f64 * h, y as f64 * h);
            x * x + x * y
        })
        .unwrap();
        let g = grad_m(&u, 2).unwrap();
        let t = g.at(3, 3);
        assert!((t.components()[0] - 2.0).abs() < 1e-12);
        assert!((t.components()[1] - 1.0).abs() < 1e-12);
        assert!(t.components()[2].abs() < 1e-12);
    }

    #[test]
    fn cubic_exactness_in_interior() {
        let u = ScalarField::from_fn(9, 9, 1.0, |x, y| {
            let (x, y) = (x as f64, y as f64);
            x * x * y + 2.0 * y * y * y
        })
        .unwrap();
        let g = grad_m(&u, 3).unwrap();
        let interior = interior_rect(g.shape(), 9, 9);
        assert!(!interior.is_empty());
        for y in 0..9 {
            for x in 0..9 {
                if interior.contains(x, y) {
                    // xxx, xxy, xyy, yyy
                    assert_eq!(g.at(x, y).components(), &[0.0, 2.0, 0.0, 12.0]);
                }
            }
        }
    }

    #[test]
    fn polynomial_kernel_holds_everywhere() {
        let cases: [(usize, fn(f64, f64) -> f64); 3] = [
            (1, |_, _| 3.5),
            (2, |x, y| 1.0 + 2.0 * x - y),
            (3, |x, y| x * x - 3.0 * x * y + 0.5 * y * y + x),
        ];
        for (m, p) in cases {
            let u = ScalarField::from_fn(7, 6, 1.0, |x, y| p(x as f64, y as f64)).unwrap();
            let g = grad_m(&u, m).unwrap();
            for plane in g.planes() {
                assert!(plane.iter().all(|v| v.abs() < 1e-12), "m = {m}");
            }
        }
    }

    #[test]
    fn second_order_matches_explicit_composition() {
        // Independent stencils: centered second differences on the axis,
        // averaged mixed forward/backward pairs.
        let u = random_field(7, 6, 3);
        let g = grad_m(&u, 2).unwrap();
        let at = |x: isize, y: isize| u.get(x as usize, y as usize);
        let (w, h) = (7isize, 6isize);
        for y in 0..h {
            for x in 0..w {
                let xx = if x >= 1 && x <= w - 2 {
                    at(x + 1, y) - 2.0 * at(x, y) + at(x - 1, y)
                } else {
                    0.0
                };
                let yy = if y >= 1 && y <= h - 2 {
                    at(x, y + 1) - 2.0 * at(x, y) + at(x, y - 1)
                } else {
                    0.0
                };
                // x forward then y backward, and y forward then x backward
                let a = if x <= w - 2 && y >= 1 {
                    (at(x + 1, y) - at(x, y)) - (at(x + 1, y - 1) - at(x, y - 1))
                } else {
                    0.0
                };
                let b = if y <= h - 2 && x >= 1 {
                    (at(x, y + 1) - at(x, y)) - (at(x - 1, y + 1) - at(x - 1, y))
                } else {
                    0.0
                };
                let t = g.at(x as usize, y as usize);
                let c = t.components();
                assert!((c[0] - xx).abs() < 1e-14);
                assert!((c[1] - 0.5 * (a + b)).abs() < 1e-14);
                assert!((c[2] - yy).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn adjoint_pairing_is_exact() {
        for m in 1..=3 {
            for &(w, h) in &[(16usize, 16usize), (9, 1), (5, 7)] {
                let u = random_field(w, h, 10 + m as u64);
                let op = DiffOperator::for_field(m, &u).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(99 + m as u64);
                let planes: Vec<Vec<f64>> = (0..op.shape().len())
                    .map(|_| (0..w * h).map(|_| rng.random::<f64>() - 0.5).collect())
                    .collect();
                let p = SymTensorField::from_planes(w, h, 1.0, op.shape(), planes).unwrap();
                let lhs = op.apply_field(&u).dot(&p);
                let gt = op.transpose_field(&p);
                let rhs: f64 = u.data().iter().zip(gt.data()).map(|(a, b)| a * b).sum();
                let scale = u.data().iter().map(|a| a * a).sum::<f64>().sqrt() * p.dot(&p).sqrt();
                assert!((lhs - rhs).abs() <= 1e-12 * scale, "m={m} {w}x{h}");
            }
        }
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let s = TensorShape::new(2, 2).unwrap();
        let p = SymTensorField::zeros(5, 5, 1.0, s);
        let g = div_m_adjoint(&p).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_of_constant_vanishes_in_deep_interior() {
        let s = TensorShape::new(1, 2).unwrap();
        let planes = vec![vec![0.7; 64], vec![-1.3; 64]];
        let p = SymTensorField::from_planes(8, 8, 1.0, s, planes).unwrap();
        let g = div_m_adjoint(&p).unwrap();
        for y in 1..7 {
            for x in 1..7 {
                assert!(g.get(x, y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn size_check() {
        let u = ScalarField::zeros(2, 5, 1.0).unwrap();
        assert!(matches!(grad_m(&u, 2), Err(Error::Size(_))));
        let s = ScalarField::zeros(4, 1, 1.0).unwrap();
        assert!(grad_m(&s, 3).is_ok());
        assert!(grad_m(&s, 2).is_ok());
    }

    #[test]
    fn single_pixel_operator_is_zero() {
        let op = DiffOperator::new(2, 1, 1, 1.0).unwrap();
        assert_eq!(op.apply(&[4.0]), vec![vec![0.0]]);
        assert_eq!(power_iteration(&op, 1), 0.0);
    }

    #[test]
    fn disk_mean_cases() {
        let s = TensorShape::new(2, 2).unwrap();
        let c = SymTensor::from_components(s, &[1.5, -0.5, 2.0]).unwrap();
        let mut p = SymTensorField::zeros(9, 9, 1.0, s);
        for i in 0..81 {
            p.set_index(i, &c);
        }
        let m = disk_mean(&p, (4, 4), 2.0).unwrap();
        for (a, b) in m.components().iter().zip(c.components()) {
            assert!((a - b).abs() < 1e-15);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for plane in p.planes_mut() {
            plane.iter_mut().for_each(|v| *v = rng.random::<f64>());
        }
        assert_eq!(disk_mean(&p, (3, 5), 0.0).unwrap(), p.at(3, 5));

        // 13-point stencil of radius 2
        let offsets = [
            (0, 0),
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
            (2, 0),
            (-2, 0),
            (0, 2),
            (0, -2),
        ];
        let mut acc = [0.0; 3];
        for (dx, dy) in offsets {
            let t = p.at((4 + dx) as usize, (4 + dy) as usize);
            for k in 0..3 {
                acc[k] += t.components()[k] / 13.0;
            }
        }
        let m = disk_mean(&p, (4, 4), 2.0).unwrap();
        for k in 0..3 {
            assert!((m.components()[k] - acc[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn disk_outside_interior_is_an_error() {
        let s = TensorShape::new(2, 2).unwrap();
        let p = SymTensorField::zeros(5, 5, 1.0, s);
        assert!(matches!(
            disk_mean(&p, (0, 0), 0.5),
            Err(Error::EmptyDisk { .. })
        ));
    }
}
