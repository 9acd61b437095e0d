use crate::error::{Error, Result};
use crate::special::beta_reg;

/// One-sided Clopper-Pearson lower confidence bound on a binomial
/// proportion: the `α = 1 - conf` quantile of `Beta(k, n - k + 1)`, so that
/// `P[Bin(n, p) ≥ k] = α` at the returned `p`. Returns 0 when `k = 0`.
///
/// Solved by bisection on the regularized incomplete beta function down to
/// an interval width of 1e-15.
pub fn lower_conf_bound(k: u64, n: u64, conf: f64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 0 ≤ k ≤ n, n ≥ 1 (k={k}, n={n})")));
    }
    if !(conf > 0.0 && conf < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence must be in (0,1), got {conf}")));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let alpha = 1.0 - conf;
    let (a, b) = (k as f64, (n - k + 1) as f64);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        if hi - lo <= 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
