//! Small quaternion helpers (w, x, y, z layout).
//!
//! Orientation increments are intrinsic XYZ Euler angles converted to a
//! quaternion and composed by right-multiplication, renormalized after
//! every step.

pub type Quat = [f64; 4];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn normalize(q: &mut Quat) {
    let n = norm(q);
    if n > 0.0 {
        for v in q.iter_mut() {
            *v /= n;
        }
    } else {
        *q = IDENTITY;
    }
}

pub fn conjugate(q: &Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

pub fn multiply(a: &Quat, b: &Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Intrinsic XYZ Euler angles to quaternion.
pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Quat {
    let (sr, cr) = (roll * 0.5).sin_cos();
    let (sp, cp) = (pitch * 0.5).sin_cos();
    let (sy, cy) = (yaw * 0.5).sin_cos();
    [
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ]
}

/// Quaternion to intrinsic XYZ Euler angles.
pub fn to_euler(q: &Quat) -> [f64; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let sinp = 2.0 * (w * y - z * x);
    let pitch = if sinp.abs() >= 1.0 {
        std::f64::consts::FRAC_PI_2.copysign(sinp)
    } else {
        sinp.asin()
    };
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    [roll, pitch, yaw]
}

/// Euler angles of the rotation taking `from` to `to` (the relative
/// rotation in the `from` frame). Suitable as a proportional orientation
/// error for the scripted controller.
pub fn euler_error(from: &Quat, to: &Quat) -> [f64; 3] {
    let mut rel = multiply(&conjugate(from), to);
    // Keep the short way around.
    if rel[0] < 0.0 {
        for v in rel.iter_mut() {
            *v = -*v;
        }
    }
    to_euler(&rel)
}

/// Largest absolute Euler component of the relative rotation.
pub fn angle_error(a: &Quat, b: &Quat) -> f64 {
    let e = euler_error(a, b);
    e.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_round_trip() {
        let q = from_euler(0.3, -0.2, 0.7);
        let e = to_euler(&q);
        assert!((e[0] - 0.3).abs() < 1e-12);
        assert!((e[1] + 0.2).abs() < 1e-12);
        assert!((e[2] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn error_to_self_is_zero() {
        let q = from_euler(0.1, 0.5, -0.4);
        assert!(angle_error(&q, &q) < 1e-12);
    }

    #[test]
    fn composition_reduces_error() {
        let a = from_euler(0.0, 0.0, 0.0);
        let b = from_euler(0.2, -0.1, 0.3);
        let e = euler_error(&a, &b);
        let mut q = multiply(&a, &from_euler(e[0], e[1], e[2]));
        normalize(&mut q);
        assert!(angle_error(&q, &b) < 1e-9);
    }
}
