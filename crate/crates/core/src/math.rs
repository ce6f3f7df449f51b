//! Small integer helpers shared across modules.

pub fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.unsigned_abs(), b.unsigned_abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a as i64
}

pub fn gcd_u(a: u64, b: u64) -> u64 {
    gcd(a as i64, b as i64) as u64
}

pub fn lcm_u(a: u64, b: u64) -> u64 {
    if a == 0 || b == 0 {
        return 0;
    }
    a / gcd_u(a, b) * b
}

pub fn div_ceil_u(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Floor division for signed integers.
pub fn floor_div(a: i64, b: i64) -> i64 {
    a.div_euclid(b) - if b < 0 && a.rem_euclid(b) != 0 { 1 } else { 0 }
}

/// Extended Euclid: returns (g, x, y) with a*x + b*y = g.
pub fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        if a < 0 {
            (-a, -1, 0)
        } else {
            (a, 1, 0)
        }
    } else {
        let (g, x, y) = ext_gcd(b, a.rem_euclid(b));
        (g, y, x - a.div_euclid(b) * y)
    }
}

/// Modular inverse of `a` modulo `m` when gcd(a, m) = 1.
pub fn mod_inverse(a: i64, m: i64) -> Option<i64> {
    let (g, x, _) = ext_gcd(a.rem_euclid(m), m);
    (g == 1).then(|| x.rem_euclid(m))
}

pub fn is_power_of_two(c: u64) -> bool {
    c >= 1 && c.is_power_of_two()
}

/// Exponent n when `m = 2^n - 1` with `2 <= n <= 16`.
pub fn mersenne_exponent(m: u64) -> Option<u32> {
    let n = (m + 1).trailing_zeros();
    ((2..=16).contains(&n) && m + 1 == 1 << n).then_some(n)
}

/// Smallest Mersenne `M = 2^n - 1` (n <= 16) with `M = m2 * k` for
/// `1 < k < radius`. Returns `(M, k)`.
pub fn mersenne_multiple(m2: u64, radius: u64) -> Option<(u64, u64)> {
    if m2 < 2 {
        return None;
    }
    (2..=16u32)
        .map(|n| (1u64 << n) - 1)
        .find_map(|m| (m % m2 == 0 && m / m2 > 1 && m / m2 < radius).then(|| (m, m / m2)))
}

/// Mixed-radix rank of `digits` under `radices` (first digit most significant).
pub fn mixed_radix_rank(digits: &[u32], radices: &[u32]) -> u64 {
    digits.iter().zip(radices).fold(0u64, |acc, (&d, &r)| acc * r.max(1) as u64 + d as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gcd_lcm_basics() {
        assert_eq!(gcd(12, -18), 6);
        assert_eq!(gcd(0, 5), 5);
        assert_eq!(lcm_u(3, 8), 24);
        assert_eq!(lcm_u(6, 8), 24);
    }

    #[test]
    fn floor_div_signs() {
        assert_eq!(floor_div(7, 2), 3);
        assert_eq!(floor_div(-7, 2), -4);
        assert_eq!(floor_div(7, -2), -4);
        assert_eq!(floor_div(-7, -2), 3);
    }

    #[test]
    fn inverse() {
        assert_eq!(mod_inverse(3, 7), Some(5));
        assert_eq!(mod_inverse(2, 4), None);
    }

    #[test]
    fn mersenne_helpers() {
        assert_eq!(mersenne_exponent(7), Some(3));
        assert_eq!(mersenne_exponent(1), None);
        assert_eq!(mersenne_exponent(65535), Some(16));
        assert_eq!(mersenne_exponent(6), None);
        assert_eq!(mersenne_multiple(5, 16), Some((15, 3)));
        assert_eq!(mersenne_multiple(21, 16), Some((63, 3)));
        assert_eq!(mersenne_multiple(6, 16), None);
    }
}
