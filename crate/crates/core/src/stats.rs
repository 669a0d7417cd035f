//! Statistical helpers shared by the verification harnesses: running
//! moments, standard errors and z-scores, weighted empirical CDFs, the
//! weighted two-sample Kolmogorov–Smirnov distance with a permutation
//! p-value, effective sample size of importance weights, and Spearman rank
//! correlation.

use rand::Rng;

/// Welford running mean/variance accumulator.
#[derive(Debug, Clone, Default)]
pub struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n as f64 - 1.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    /// z-score of the sample mean against a target value.
    pub fn z_against(&self, target: f64) -> f64 {
        let se = self.stderr();
        if se == 0.0 {
            if (self.mean - target).abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target) / se
        }
    }

    pub fn merge(&mut self, other: &Running) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let n1 = self.n as f64;
        let n2 = other.n as f64;
        let d = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += d * n2 / n;
        self.m2 += other.m2 + d * d * n1 * n2 / n;
        self.n += other.n;
    }
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let mut r = Running::default();
    for &x in xs {
        r.push(x);
    }
    (r.mean(), r.stderr())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Self-normalized weighted mean and its importance-sampling standard error.
pub fn weighted_mean_se(xs: &[f64], ws: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ws.len());
    let sw: f64 = ws.iter().sum();
    if sw <= 0.0 {
        return (f64::NAN, f64::INFINITY);
    }
    let mean = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let var_num: f64 = xs
        .iter()
        .zip(ws)
        .map(|(x, w)| (w * (x - mean)).powi(2))
        .sum();
    (mean, var_num.sqrt() / sw)
}

/// Effective sample size of a weight vector: (sum w)^2 / sum w^2.
pub fn effective_sample_size(ws: &[f64]) -> f64 {
    let sw: f64 = ws.iter().sum();
    let sw2: f64 = ws.iter().map(|w| w * w).sum();
    if sw2 == 0.0 {
        0.0
    } else {
        sw * sw / sw2
    }
}

/// Weighted two-sample Kolmogorov–Smirnov distance.
///
/// Each sample's weights are self-normalized; the distance is the sup-norm
/// gap between the two weighted empirical CDFs.
pub fn weighted_ks(xs: &[f64], ws: &[f64], ys: &[f64], vs: &[f64]) -> f64 {
    assert_eq!(xs.len(), ws.len());
    assert_eq!(ys.len(), vs.len());
    let swx: f64 = ws.iter().sum();
    let swy: f64 = vs.iter().sum();
    if swx <= 0.0 || swy <= 0.0 {
        return 1.0;
    }
    // Merge both samples, sweeping the pooled order statistic.
    let mut pooled: Vec<(f64, f64, bool)> = xs
        .iter()
        .zip(ws)
        .map(|(&x, &w)| (x, w / swx, true))
        .chain(ys.iter().zip(vs).map(|(&y, &v)| (y, v / swy, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut fx = 0.0;
    let mut fy = 0.0;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        // Consume all ties at t from both samples before comparing.
        while i < pooled.len() && pooled[i].0 == t {
            if pooled[i].2 {
                fx += pooled[i].1;
            } else {
                fy += pooled[i].1;
            }
            i += 1;
        }
        d = d.max((fx - fy).abs());
    }
    d
}

/// Permutation p-value for the weighted KS distance.
///
/// (value, weight) pairs travel together; group labels are reshuffled
/// `n_perm` times. With unit weights this is the exact two-sample KS
/// permutation test; with importance weights it is approximate but keeps
/// each permuted group self-normalized. Returns (observed distance, p).
pub fn ks_permutation_pvalue<R: Rng>(
    xs: &[f64],
    ws: &[f64],
    ys: &[f64],
    vs: &[f64],
    n_perm: usize,
    rng: &mut R,
) -> (f64, f64) {
    let observed = weighted_ks(xs, ws, ys, vs);
    let n1 = xs.len();
    let mut pool: Vec<(f64, f64)> = xs
        .iter()
        .zip(ws)
        .map(|(&x, &w)| (x, w))
        .chain(ys.iter().zip(vs).map(|(&y, &v)| (y, v)))
        .collect();
    let mut at_least = 0usize;
    for _ in 0..n_perm {
        // Partial Fisher–Yates: the first n1 entries become group one.
        for i in 0..n1.min(pool.len().saturating_sub(1)) {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let (gx, gw): (Vec<f64>, Vec<f64>) = pool[..n1].iter().copied().unzip();
        let (gy, gv): (Vec<f64>, Vec<f64>) = pool[n1..].iter().copied().unzip();
        if weighted_ks(&gx, &gw, &gy, &gv) >= observed - 1e-15 {
            at_least += 1;
        }
    }
    let p = (1.0 + at_least as f64) / (1.0 + n_perm as f64);
    (observed, p)
}

/// Spearman rank correlation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Mid-ranks (ties averaged), 1-based.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_matches_two_pass() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let mut r = Running::default();
        for &x in &xs {
            r.push(x);
        }
        assert_relative_eq!(r.mean(), 6.2, epsilon = 1e-12);
        // Two-pass sample variance.
        let v = xs.iter().map(|x| (x - 6.2f64).powi(2)).sum::<f64>() / 4.0;
        assert_relative_eq!(r.variance(), v, epsilon = 1e-12);
    }

    #[test]
    fn merge_equals_single_stream() {
        let mut a = Running::default();
        let mut b = Running::default();
        let mut whole = Running::default();
        for i in 0..50 {
            let x = (i as f64).sin();
            if i % 2 == 0 {
                a.push(x);
            } else {
                b.push(x);
            }
            whole.push(x);
        }
        a.merge(&b);
        assert_eq!(a.count(), whole.count());
        assert_relative_eq!(a.mean(), whole.mean(), epsilon = 1e-12);
        assert_relative_eq!(a.variance(), whole.variance(), epsilon = 1e-12);
    }

    #[test]
    fn weighted_ks_unit_weights_matches_classic() {
        // X = {1,2,3}, Y = {2,3,4}: classic two-sample KS distance is 1/3.
        let xs = [1.0, 2.0, 3.0];
        let ys = [2.0, 3.0, 4.0];
        let w = [1.0; 3];
        let d = weighted_ks(&xs, &w, &ys, &w);
        assert_relative_eq!(d, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_ks_detects_weighting() {
        // Putting all weight on one point makes the CDFs maximally different.
        let xs = [0.0, 10.0];
        let ws = [1.0, 0.0];
        let ys = [0.0, 10.0];
        let vs = [0.0, 1.0];
        assert_relative_eq!(weighted_ks(&xs, &ws, &ys, &vs), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn permutation_test_null_is_calibrated() {
        // Same distribution on both sides: p should not be extreme.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..200).map(|_| rng.gen::<f64>()).collect();
        let ys: Vec<f64> = (0..200).map(|_| rng.gen::<f64>()).collect();
        let w = vec![1.0; 200];
        let (_, p) = ks_permutation_pvalue(&xs, &w, &ys, &w, 400, &mut rng);
        assert!(p > 0.01, "null rejected: p = {p}");
    }

    #[test]
    fn permutation_test_has_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..300).map(|_| rng.gen::<f64>()).collect();
        let ys: Vec<f64> = (0..300).map(|_| rng.gen::<f64>() + 0.5).collect();
        let w = vec![1.0; 300];
        let (d, p) = ks_permutation_pvalue(&xs, &w, &ys, &w, 400, &mut rng);
        assert!(d > 0.3);
        assert!(p < 0.01, "shifted alternative not detected: p = {p}");
    }

    #[test]
    fn spearman_on_monotone_and_anti_monotone() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        assert_relative_eq!(spearman(&xs, &ys), 1.0, epsilon = 1e-12);
        let zs: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_relative_eq!(spearman(&xs, &zs), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn ess_bounds() {
        let w = [1.0, 1.0, 1.0, 1.0];
        assert_relative_eq!(effective_sample_size(&w), 4.0, epsilon = 1e-12);
        let w2 = [1.0, 0.0, 0.0, 0.0];
        assert_relative_eq!(effective_sample_size(&w2), 1.0, epsilon = 1e-12);
    }
}
