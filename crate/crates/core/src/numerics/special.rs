use crate::scalar::Real;

/// Below this point `log_std_normal_cdf` switches from the erfc kernel to the
/// Mills-ratio asymptotic series.
pub const LOG_CDF_TAIL_CROSSOVER: f64 = -10.0;

const MAX_TAIL_TERMS: usize = 40;

#[inline]
pub fn std_normal_pdf<T: Real>(x: T) -> T {
    (-(x * x) / T::lit(2.0)).exp() * T::FRAC_1_SQRT_2() * T::FRAC_2_SQRT_PI() / T::lit(2.0)
}

#[inline]
pub fn log_std_normal_pdf<T: Real>(x: T) -> T {
    -(x * x) / T::lit(2.0) - half_log_two_pi::<T>()
}

/// Standard normal CDF through the complementary error function,
/// `Φ(x) = erfc(−x/√2)/2`, which keeps full relative accuracy in the lower
/// tail.
#[inline]
pub fn std_normal_cdf<T: Real>(x: T) -> T {
    (-x * T::FRAC_1_SQRT_2()).erfc() / T::lit(2.0)
}

/// `log Φ(x)` without underflow.
///
/// Above the crossover the erfc kernel is used directly (through `ln_1p` of
/// the upper tail for positive `x`). Below it the Mills-ratio series
///
/// `log Φ(x) = −x²/2 − log(−x√(2π)) + log(1 − 1/x² + 3/x⁴ − 15/x⁶ + …)`
///
/// is summed until its terms fall below machine precision, which at the
/// crossover takes about twenty terms.
pub fn log_std_normal_cdf<T: Real>(x: T) -> T {
    if x >= T::zero() {
        let upper = (x * T::FRAC_1_SQRT_2()).erfc() / T::lit(2.0);
        (-upper).ln_1p()
    } else if x >= T::lit(LOG_CDF_TAIL_CROSSOVER) {
        std_normal_cdf(x).ln()
    } else {
        -(x * x) / T::lit(2.0) - (-x).ln() - half_log_two_pi::<T>() + mills_series(x).ln()
    }
}

/// `1 − 1/x² + 3/x⁴ − 15/x⁶ + …`, truncated once the terms stop shrinking
/// or drop below epsilon.
fn mills_series<T: Real>(x: T) -> T {
    let inv_x2 = (x * x).recip();
    let mut term = T::one();
    let mut total = T::one();
    for k in 1..MAX_TAIL_TERMS {
        let next = -term * T::from_usize_lossy(2 * k - 1) * inv_x2;
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        total = total + term;
        if term.abs() < T::epsilon() * T::lit(1e-2) {
            break;
        }
    }
    total
}

/// Inverse Mills ratio `φ(x)/Φ(x)`, evaluated on the log scale so that it
/// tends smoothly to `−x` as `x → −∞`.
#[inline]
pub fn inverse_mills<T: Real>(x: T) -> T {
    (log_std_normal_pdf(x) - log_std_normal_cdf(x)).exp()
}

/// Standard normal quantile: Acklam's rational approximation refined by one
/// Halley step against `std_normal_cdf`.
///
/// Returns ±∞ at the endpoints and NaN outside `[0, 1]`.
#[allow(clippy::excessive_precision)]
pub fn std_normal_quantile<T: Real>(p: T) -> T {
    if p.is_nan() || p < T::zero() || p > T::one() {
        return T::nan();
    }
    if p == T::zero() {
        return T::neg_infinity();
    }
    if p == T::one() {
        return T::infinity();
    }
    let pf = p.to_f64_lossy();
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x0 = if pf < P_LOW {
        tail((-2.0 * pf.ln()).sqrt())
    } else if pf <= 1.0 - P_LOW {
        let q = pf - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - pf).ln()).sqrt())
    };

    let x = T::lit(x0);
    // Halley refinement, done on whichever tail keeps the residual accurate.
    let e = if x <= T::zero() {
        std_normal_cdf(x) - p
    } else {
        (T::one() - p) - std_normal_cdf(-x)
    };
    let u = e * (T::lit(2.0) * T::PI()).sqrt() * (x * x / T::lit(2.0)).exp();
    x - u / (T::one() + x * u / T::lit(2.0))
}

#[inline]
fn half_log_two_pi<T: Real>() -> T {
    (T::lit(2.0) * T::PI()).ln() / T::lit(2.0)
}
