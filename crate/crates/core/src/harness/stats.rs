//! Small statistics used to report and compare success ratios.

/// Normal quantile for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation over `n − 1` divided by `sqrt(n)`; zero for a
/// single observation.
pub fn std_err(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Wilson score interval for `successes` out of `n`: `(center, half_width)`.
pub fn wilson(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.5, 0.5);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    (center, half)
}

/// One-sided exact sign test: probability of at least `wins` successes in
/// `wins + losses` fair coin flips.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let mut p = 0.0;
    let mut binom = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            binom = binom * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            p += binom;
        }
    }
    p / 2f64.powi(n as i32)
}

/// Direction a comparison must show.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    /// The first group is strictly better.
    Exceeds,
    /// The first group is at least as good.
    AtLeast,
}

/// Outcome of comparing per-seed success ratios of two variants.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub mean_a: f64,
    pub se_a: f64,
    pub mean_b: f64,
    pub se_b: f64,
    /// Seeds where `a` beat `b`, lost to it, or tied.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub sign_p: f64,
    pub separated: bool,
    pub holds: bool,
}

/// Decides whether `a` is better than `b` (paired by seed). The comparison
/// holds when the mean of `a` is higher and either the standard-error
/// intervals do not overlap or a one-sided sign test over the untied seeds
/// gives p < 0.05. For [`Ordering::AtLeast`], identical results on every seed
/// also hold.
pub fn compare(a: &[f64], b: &[f64], ordering: Ordering) -> Comparison {
    let (mean_a, se_a, mean_b, se_b) = (mean(a), std_err(a), mean(b), std_err(b));
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    let sign_p = sign_test_p(wins, losses);
    let separated = mean_a - se_a > mean_b + se_b;
    let better = mean_a > mean_b && (separated || sign_p < 0.05);
    let identical = a.len() == b.len() && !a.is_empty() && wins == 0 && losses == 0;
    let holds = match ordering {
        Ordering::Exceeds => better,
        Ordering::AtLeast => better || identical,
    };
    Comparison {
        mean_a,
        se_a,
        mean_b,
        se_b,
        wins,
        losses,
        ties,
        sign_p,
        separated,
        holds,
    }
}
