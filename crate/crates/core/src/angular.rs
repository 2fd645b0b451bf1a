//! Half-integer angular momentum and Clebsch-Gordan coefficients.

use std::fmt;

/// An integer or half-integer quantum number, stored as twice its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const fn from_doubled(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub const fn doubled(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    /// Projections `-j, -j+1, ..., j`.
    pub fn projections(self) -> impl Iterator<Item = HalfInt> {
        let j = self.0;
        (-j..=j).step_by(2).map(HalfInt)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

fn factorial(n: i32) -> f64 {
    debug_assert!(n >= 0);
    (2..=n).map(f64::from).product()
}

/// `<j1 m1; j2 m2 | j m>` in the Condon-Shortley phase convention.
///
/// Returns 0 for any combination violating the triangle or projection rules.
pub fn clebsch_gordan(j1: HalfInt, m1: HalfInt, j2: HalfInt, m2: HalfInt, j: HalfInt, m: HalfInt) -> f64 {
    let (j1, m1, j2, m2, j, m) = (j1.0, m1.0, j2.0, m2.0, j.0, m.0);
    if m1 + m2 != m {
        return 0.0;
    }
    if m1.abs() > j1 || m2.abs() > j2 || m.abs() > j {
        return 0.0;
    }
    if (j1 + m1) % 2 != 0 || (j2 + m2) % 2 != 0 || (j + m) % 2 != 0 {
        return 0.0;
    }
    if j > j1 + j2 || j < (j1 - j2).abs() || (j1 + j2 + j) % 2 != 0 {
        return 0.0;
    }
    // all quantities below are doubled; halve once they are known to be even
    let h = |x: i32| x / 2;
    let pre = f64::from(j + 1) * factorial(h(j + j1 - j2)) * factorial(h(j - j1 + j2)) * factorial(h(j1 + j2 - j))
        / factorial(h(j1 + j2 + j) + 1);
    let proj = factorial(h(j + m))
        * factorial(h(j - m))
        * factorial(h(j1 - m1))
        * factorial(h(j1 + m1))
        * factorial(h(j2 - m2))
        * factorial(h(j2 + m2));
    let mut sum = 0.0;
    for k in 0.. {
        let terms = [h(j1 + j2 - j) - k, h(j1 - m1) - k, h(j2 + m2) - k];
        if terms.iter().any(|&t| t < 0) {
            break;
        }
        let low = [h(j - j2 + m1) + k, h(j - j1 - m2) + k];
        if low.iter().any(|&t| t < 0) {
            continue;
        }
        let denom = factorial(k)
            * terms.iter().map(|&t| factorial(t)).product::<f64>()
            * low.iter().map(|&t| factorial(t)).product::<f64>();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / denom;
    }
    (pre * proj).sqrt() * sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hi(x: i32) -> HalfInt {
        HalfInt::from_doubled(x)
    }

    #[test]
    fn known_values() {
        // <1/2 1/2; 1/2 -1/2 | 0 0> = 1/sqrt(2)
        let v = clebsch_gordan(hi(1), hi(1), hi(1), hi(-1), hi(0), hi(0));
        assert!((v - 0.5f64.sqrt()).abs() < 1e-14);
        // <1/2 -1/2; 1 0 | 1/2 -1/2> = -1/sqrt(3)
        let v = clebsch_gordan(hi(1), hi(-1), hi(2), hi(0), hi(1), hi(-1));
        assert!((v + (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
        // <1/2 1/2; 1 0 | 1/2 1/2> = +1/sqrt(3)
        let v = clebsch_gordan(hi(1), hi(1), hi(2), hi(0), hi(1), hi(1));
        assert!((v - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
        // stretched
        let v = clebsch_gordan(hi(3), hi(3), hi(2), hi(2), hi(5), hi(5));
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn orthonormality() {
        for (j1, j2) in [(1, 2), (3, 2), (5, 2), (1, 4), (3, 3)] {
            let (j1, j2) = (hi(j1), hi(j2));
            let mut jj = (j1.0 - j2.0).abs();
            while jj <= j1.0 + j2.0 {
                for m in hi(jj).projections() {
                    let mut norm = 0.0;
                    for m1 in j1.projections() {
                        let m2 = hi(m.0 - m1.0);
                        norm += clebsch_gordan(j1, m1, j2, m2, hi(jj), m).powi(2);
                    }
                    assert!((norm - 1.0).abs() < 1e-12, "j={jj} m={m}");
                }
                jj += 2;
            }
        }
    }
}
