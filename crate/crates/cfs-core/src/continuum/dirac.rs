//! Dirac representation, signature (+,-,-,-), spin product <a|b> = a^dagger g0 b.

use nalgebra::{Matrix4, Vector2, Vector4};
use num_complex::Complex64;

use crate::error::{CfsError, Result};

pub type Spinor = Vector4<Complex64>;
pub type Dirac = Matrix4<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn pauli(i: usize) -> [[Complex64; 2]; 2] {
    let (o, z, im) = (c(1.0), c(0.0), Complex64::new(0.0, 1.0));
    match i {
        0 => [[z, o], [o, z]],
        1 => [[z, -im], [im, z]],
        _ => [[o, z], [z, -o]],
    }
}

pub fn gamma0() -> Dirac {
    Dirac::from_diagonal(&Vector4::new(c(1.0), c(1.0), c(-1.0), c(-1.0)))
}

/// Spatial gamma matrix g^i = [[0, s_i], [-s_i, 0]], i in 0..3.
pub fn gamma(i: usize) -> Dirac {
    let s = pauli(i);
    let mut g = Dirac::zeros();
    for r in 0..2 {
        for col in 0..2 {
            g[(r, col + 2)] = s[r][col];
            g[(r + 2, col)] = -s[r][col];
        }
    }
    g
}

/// k-slash = g0 k0 - g^i k^i for k = (k0, k1, k2, k3).
pub fn slash(k: [f64; 4]) -> Dirac {
    let mut m = gamma0() * c(k[0]);
    for i in 0..3 {
        m -= gamma(i) * c(k[i + 1]);
    }
    m
}

pub fn spin_product(a: &Spinor, b: &Spinor) -> Complex64 {
    (a.adjoint() * gamma0() * b)[(0, 0)]
}

pub fn minkowski_square(k: [f64; 4]) -> f64 {
    k[0] * k[0] - k[1] * k[1] - k[2] * k[2] - k[3] * k[3]
}

/// Unit-norm solution of (k-slash - m) u = 0 on the lower shell
/// k = (-omega, kvec), built from the two-spinor `polarization`.
pub fn shell_spinor(mass: f64, kvec: [f64; 3], polarization: [Complex64; 2]) -> Result<Spinor> {
    if !(mass > 0.0) {
        return Err(CfsError::InvalidInput(format!("mass must be positive, got {mass}")));
    }
    let xi = Vector2::new(polarization[0], polarization[1]);
    let xnorm = xi.norm();
    if !(xnorm > 0.0) || !xnorm.is_finite() {
        return Err(CfsError::InvalidInput("polarization must be a nonzero finite two-spinor".into()));
    }
    let xi = xi / c(xnorm);
    let k2: f64 = kvec.iter().map(|v| v * v).sum();
    let omega = (mass * mass + k2).sqrt();
    let mut sk = nalgebra::Matrix2::<Complex64>::zeros();
    for (i, kv) in kvec.iter().enumerate() {
        let s = pauli(i);
        for r in 0..2 {
            for col in 0..2 {
                sk[(r, col)] += s[r][col] * kv;
            }
        }
    }
    let upper = -(sk * xi);
    let lower = xi * c(omega + mass);
    let norm = (2.0 * omega * (omega + mass)).sqrt();
    Ok(Spinor::new(upper[0], upper[1], lower[0], lower[1]) / c(norm))
}

/// Spin bilinears of two unit shell spinors with masses (ma, mb) at the
/// same momentum of length k, per unit polarization overlap:
/// s = <ua|ub>, s0 = <ua|g0 ub>, kg = <ua|(kvec . g) ub>. They depend on |k|
/// only, which makes the radial reduction of spherical packets exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bilinears {
    pub s: f64,
    pub s0: f64,
    pub kg: f64,
}

pub fn shell_bilinears(ma: f64, mb: f64, k: f64) -> Bilinears {
    let (wa, wb) = ((ma * ma + k * k).sqrt(), (mb * mb + k * k).sqrt());
    let (pa, pb) = (wa + ma, wb + mb);
    let n = (2.0 * wa * pa).sqrt() * (2.0 * wb * pb).sqrt();
    let k2 = k * k;
    Bilinears { s: (k2 - pa * pb) / n, s0: (k2 + pa * pb) / n, kg: -k2 * (pa + pb) / n }
}
