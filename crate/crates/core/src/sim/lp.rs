//! Incremental 2D linear programming over half-planes inside a speed disc.
//!
//! A constraint line admits velocities `v` with `det(direction, point - v) <= 0`,
//! i.e. the feasible side is to the left of `direction`.

use crate::geometry::Vector2;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line<T> {
    pub point: Vector2<T>,
    pub direction: Vector2<T>,
}

impl<T: Real> Line<T> {
    /// Signed violation; positive when `v` lies on the infeasible side.
    pub fn violation(&self, v: Vector2<T>) -> T {
        self.direction.det(self.point - v)
    }

    pub fn admits(&self, v: Vector2<T>, tol: T) -> bool {
        self.violation(v) <= tol
    }
}

fn eps<T: Real>() -> T {
    T::lit(1e-5)
}

/// Optimizes on line `line_no` subject to all earlier lines and the disc.
fn solve_on_line<T: Real>(
    lines: &[Line<T>],
    line_no: usize,
    radius: T,
    opt: Vector2<T>,
    direction_opt: bool,
    result: &mut Vector2<T>,
) -> bool {
    let line = lines[line_no];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + radius * radius - line.point.length_squared();
    if discriminant < T::zero() {
        // the disc does not reach this line
        return false;
    }
    let sqrt_disc = discriminant.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for other in &lines[..line_no] {
        let denominator = line.direction.det(other.direction);
        let numerator = other.direction.det(line.point - other.point);
        if denominator.abs() <= eps() {
            // parallel lines
            if numerator < T::zero() {
                return false;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= T::zero() {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return false;
        }
    }

    *result = if direction_opt {
        if opt.dot(line.direction) > T::zero() {
            line.point + line.direction * t_right
        } else {
            line.point + line.direction * t_left
        }
    } else {
        let t = line.direction.dot(opt - line.point);
        if t < t_left {
            line.point + line.direction * t_left
        } else if t > t_right {
            line.point + line.direction * t_right
        } else {
            line.point + line.direction * t
        }
    };
    true
}

/// Finds the velocity closest to `opt` (or furthest along `opt` when
/// `direction_opt`) satisfying every line. Returns the index of the first
/// line that made the program infeasible, or `lines.len()` on success.
pub fn solve_2d<T: Real>(
    lines: &[Line<T>],
    radius: T,
    opt: Vector2<T>,
    direction_opt: bool,
    result: &mut Vector2<T>,
) -> usize {
    *result = if direction_opt {
        opt * radius
    } else if opt.length_squared() > radius * radius {
        opt.normalize_or_zero() * radius
    } else {
        opt
    };

    for i in 0..lines.len() {
        if lines[i].violation(*result) > T::zero() {
            let previous = *result;
            if !solve_on_line(lines, i, radius, opt, direction_opt, result) {
                *result = previous;
                return i;
            }
        }
    }
    lines.len()
}

/// Least-violation fallback used when [`solve_2d`] fails at `begin_line`:
/// minimizes the largest violation over the remaining lines.
pub fn solve_3d<T: Real>(lines: &[Line<T>], begin_line: usize, radius: T, result: &mut Vector2<T>) {
    let mut distance = T::zero();
    for i in begin_line..lines.len() {
        if lines[i].violation(*result) > distance {
            let mut projected = Vec::with_capacity(i);
            for j in 0..i {
                let determinant = lines[i].direction.det(lines[j].direction);
                let point = if determinant.abs() <= eps() {
                    if lines[i].direction.dot(lines[j].direction) > T::zero() {
                        // same direction
                        continue;
                    }
                    (lines[i].point + lines[j].point) * T::lit(0.5)
                } else {
                    lines[i].point
                        + lines[i].direction
                            * (lines[j].direction.det(lines[i].point - lines[j].point) / determinant)
                };
                projected.push(Line { point, direction: (lines[j].direction - lines[i].direction).normalize_or_zero() });
            }
            let previous = *result;
            let towards = Vector2::new(-lines[i].direction.y, lines[i].direction.x);
            if solve_2d(&projected, radius, towards, true, result) < projected.len() {
                // only fails through rounding; keep the earlier answer
                *result = previous;
            }
            distance = lines[i].violation(*result);
        }
    }
}
