//! Euclidean projection onto the cone of nondecreasing vectors.

/// Pool-adjacent-violators: replaces `y` by its least-squares nondecreasing fit.
pub fn pav_in_place(y: &mut [f64]) {
    let n = y.len();
    if n < 2 {
        return;
    }
    // blocks as (sum, count); each block's value is its mean
    let mut sums: Vec<f64> = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    for &v in y.iter() {
        sums.push(v);
        counts.push(1);
        while sums.len() > 1 {
            let last = sums.len() - 1;
            let prev_mean = sums[last - 1] / counts[last - 1] as f64;
            let last_mean = sums[last] / counts[last] as f64;
            if prev_mean <= last_mean {
                break;
            }
            sums[last - 1] += sums[last];
            counts[last - 1] += counts[last];
            sums.pop();
            counts.pop();
        }
    }
    let mut idx = 0;
    for (s, c) in sums.into_iter().zip(counts) {
        let mean = s / c as f64;
        y[idx..idx + c].iter_mut().for_each(|v| *v = mean);
        idx += c;
    }
}

/// True when `y` is nondecreasing.
pub fn is_monotone(y: &[f64]) -> bool {
    y.windows(2).all(|w| w[0] <= w[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pools_violators() {
        let mut y = vec![1.0, 3.0, 2.0, 4.0];
        pav_in_place(&mut y);
        assert_eq!(y, vec![1.0, 2.5, 2.5, 4.0]);
        let mut z = vec![3.0, 2.0, 1.0];
        pav_in_place(&mut z);
        assert_eq!(z, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn monotone_input_untouched() {
        let mut y = vec![-1.0, 0.0, 0.0, 5.0];
        pav_in_place(&mut y);
        assert_eq!(y, vec![-1.0, 0.0, 0.0, 5.0]);
    }

    proptest! {
        #[test]
        fn output_is_monotone_and_mean_preserving(y in prop::collection::vec(-10.0f64..10.0, 1..60)) {
            let mut p = y.clone();
            pav_in_place(&mut p);
            prop_assert!(is_monotone(&p));
            let s0: f64 = y.iter().sum();
            let s1: f64 = p.iter().sum();
            prop_assert!((s0 - s1).abs() < 1e-9);
        }

        // projection: <y - p, z - p> <= 0 for any monotone z
        #[test]
        fn variational_inequality(y in prop::collection::vec(-5.0f64..5.0, 2..30), seed in 0u64..1000) {
            let mut p = y.clone();
            pav_in_place(&mut p);
            let mut z: Vec<f64> = (0..y.len()).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 10.0 - 5.0).collect();
            z.sort_by(f64::total_cmp);
            let ip: f64 = y.iter().zip(&p).zip(&z).map(|((yi, pi), zi)| (yi - pi) * (zi - pi)).sum();
            prop_assert!(ip <= 1e-9);
        }
    }
}
