//! Matrix exponential by scaling and squaring around diagonal Padé
//! approximants (degrees 3 to 13, Higham's thresholds in the 1-norm).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::one_norm;

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const THETA_13: f64 = 5.371920351148152;

/// Past this 1-norm of `hA` the squaring phase is not trusted.
const MAX_SCALED_NORM: f64 = 1e5;

const B3: [f64; 4] = [120., 60., 12., 1.];
const B5: [f64; 6] = [30240., 15120., 3360., 420., 30., 1.];
const B7: [f64; 8] = [17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.];
const B9: [f64; 10] = [
    17643225600.,
    8821612800.,
    2075673600.,
    302702400.,
    30270240.,
    2162160.,
    110880.,
    3960.,
    90.,
    1.,
];
const B13: [f64; 14] = [
    64764752532480000.,
    32382376266240000.,
    7771770303897600.,
    1187353796428800.,
    129060195264000.,
    10559470521600.,
    670442572800.,
    33522128640.,
    1323241920.,
    40840800.,
    960960.,
    16380.,
    182.,
    1.,
];

/// `exp(h A)`.
pub fn matrix_exponential(a: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::InvalidArgument(format!("step {h} must be finite and >= 0")));
    }
    if n == 1 {
        let v = (h * a[(0, 0)]).exp();
        if !v.is_finite() {
            return Err(Error::ExponentialOutOfRange {
                norm: (h * a[(0, 0)]).abs(),
            });
        }
        return Ok(DMatrix::from_element(1, 1, v));
    }
    let ha = a * h;
    let norm = one_norm(&ha);
    if !norm.is_finite() || norm > MAX_SCALED_NORM {
        return Err(Error::ExponentialOutOfRange { norm });
    }
    if norm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }

    let (u, v, squarings) = match THETA.iter().find(|(_, theta)| norm <= *theta) {
        Some(&(degree, _)) => {
            let b: &[f64] = match degree {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = pade_low(&ha, b);
            (u, v, 0)
        }
        None => {
            let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
            let scaled = ha * 2f64.powi(-s);
            let (u, v) = pade13(&scaled);
            (u, v, s as u32)
        }
    };

    let numer = &v + &u;
    let denom = v - u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or(Error::ExponentialOutOfRange { norm })?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::ExponentialOutOfRange { norm });
    }
    Ok(r)
}

// Odd/even split of a degree-m Padé numerator for m <= 9.
fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut even_power = ident.clone();
    let mut u_inner = &ident * b[1];
    let mut v = &ident * b[0];
    let mut k = 2;
    while k < b.len() {
        even_power = &even_power * &a2;
        v += &even_power * b[k];
        if k + 1 < b.len() {
            u_inner += &even_power * b[k + 1];
        }
        k += 2;
    }
    (a * u_inner, v)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let b = &B13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u_inner = &a6 * &u_hi + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1];
    let v_hi = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * &v_hi + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    (a * u_inner, v)
}
