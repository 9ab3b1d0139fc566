use crate::error::{LchsError, Result};

/// Least-squares slope of log(y) against log(x). Used to fit empirical
/// convergence rates; exact for pure power laws y = C x^s.
pub fn fit_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(LchsError::Dimension(format!(
            "slope fit needs matched lengths, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(LchsError::InvalidArgument(
            "slope fit needs at least two points".into(),
        ));
    }
    for (&x, &y) in xs.iter().zip(ys) {
        if x <= 0.0 || y <= 0.0 || !x.is_finite() || !y.is_finite() {
            return Err(LchsError::InvalidArgument(
                "slope fit needs positive finite samples".into(),
            ));
        }
    }
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..xs.len() {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    if den == 0.0 {
        return Err(LchsError::InvalidArgument(
            "slope fit needs distinct x values".into(),
        ));
    }
    Ok(num / den)
}

/// Smallest power of two (2^n, n integer >= 0 or negative) that is >= x.
/// Stable at exact powers of two.
pub fn next_pow2_at_least(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(LchsError::InvalidArgument(format!(
            "next power of two needs positive finite input, got {x}"
        )));
    }
    let e = x.log2().ceil();
    let mut p = e.exp2();
    // log2 rounding can land one notch high or low at exact powers.
    while p / 2.0 >= x {
        p /= 2.0;
    }
    while p < x {
        p *= 2.0;
    }
    Ok(p)
}

/// Round up to the nearest even integer, at least 2.
pub fn even_ceil(x: f64) -> usize {
    let n = x.ceil().max(2.0) as usize;
    if n % 2 == 0 {
        n
    } else {
        n + 1
    }
}

/// Uniform grid of n points covering [0, t] inclusive.
pub fn uniform_grid(t: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| t * i as f64 / (n - 1) as f64).collect()
}
