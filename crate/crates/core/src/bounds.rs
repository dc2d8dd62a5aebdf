/// Smallest integer `m` certified by the log-dominance implication
/// `m ≥ (1+ν)^ν a log^ν((1+ν)^ν a b)  ⇒  m ≥ a log^ν(b m)`.
///
/// Returns 0 when the log argument is at most 1 (nothing to certify) and
/// for any negative or non-finite input.
pub fn sufficient_m(a: f64, b: f64, nu: f64) -> u64 {
    if !(a.is_finite() && b.is_finite() && nu.is_finite()) || a < 0.0 || b < 0.0 || nu < 0.0 {
        return 0;
    }
    if a == 0.0 {
        return 0;
    }
    if nu == 0.0 {
        // log^0 is identically 1 on its domain, so the condition is m ≥ a.
        return a.ceil() as u64;
    }
    let k = (1.0 + nu).powf(nu);
    let arg = k * a * b;
    if arg <= 1.0 {
        return 0;
    }
    let m = k * a * arg.ln().powf(nu);
    m.ceil().min(u64::MAX as f64) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(sufficient_m(0.0, 5.0, 1.0), 0);
        assert_eq!(sufficient_m(1.0, 1.0, 1.0), 2);
        assert_eq!(sufficient_m(10.0, 100.0, 1.0), 153);
        assert!(153.0 >= 10.0 * (100.0f64 * 153.0).ln());
    }
}
