use crate::error::{contract, Result};

fn check_simplex(p: &[f64], name: &str) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(contract(format!("{name} is not a probability vector (sum {total})")));
    }
    Ok(())
}

/// Total variation distance, `0.5 * sum |p - q|`.
pub fn tv_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(contract("distributions have different supports"));
    }
    check_simplex(p, "p")?;
    check_simplex(q, "q")?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Kullback-Leibler divergence `sum p ln(p / q)`, with `0 ln 0 = 0`.
///
/// Errors when `q` puts zero mass where `p` does not.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(contract("distributions have different supports"));
    }
    check_simplex(p, "p")?;
    check_simplex(q, "q")?;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Err(contract("KL divergence needs q > 0 wherever p > 0"));
        }
        total += a * (a / b).ln();
    }
    Ok(total.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(tv_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_divergence(&[0.5, 0.5], &[0.75, 0.25]).unwrap(), 0.25);
        assert!(kl_divergence(&[1.0, 0.0], &[0.0, 1.0]).is_err());
        assert!(tv_divergence(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, n).prop_map(|raw| {
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn pinsker_holds((p, q) in (2usize..6).prop_flat_map(|n| (simplex(n), simplex(n)))) {
            let tv = tv_divergence(&p, &q).unwrap();
            let kl = kl_divergence(&p, &q).unwrap();
            prop_assert!(tv * tv <= 0.5 * kl + 1e-15);
        }
    }
}
