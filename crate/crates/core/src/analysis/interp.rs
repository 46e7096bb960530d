use crate::error::{LmcError, Result};
use crate::nn::{BnStats, Checkpoint, ParamVector};

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(LmcError::Precondition(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    Ok(())
}

/// `(1 - lambda) * a + lambda * b`, evaluated in f64 and rounded once.
/// The endpoints return exact copies.
fn mix(a: &[f32], b: &[f32], lambda: f64) -> Vec<f32> {
    if lambda == 0.0 {
        return a.to_vec();
    }
    if lambda == 1.0 {
        return b.to_vec();
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| ((1.0 - lambda) * x as f64 + lambda * y as f64) as f32)
        .collect()
}

pub fn interpolate(a: &ParamVector, b: &ParamVector, lambda: f64) -> Result<ParamVector> {
    if a.len() != b.len() {
        return Err(LmcError::Shape(format!(
            "cannot interpolate vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_lambda(lambda)?;
    Ok(ParamVector(mix(&a.0, &b.0, lambda)))
}

/// Interpolates parameters and BN running statistics alike. Metadata is
/// taken from `a` with the subset renamed to `interp@lambda`.
pub fn interpolate_checkpoint(a: &Checkpoint, b: &Checkpoint, lambda: f64) -> Result<Checkpoint> {
    if a.spec != b.spec {
        return Err(LmcError::Shape(
            "checkpoints have different model specs".into(),
        ));
    }
    let params = interpolate(&a.params, &b.params, lambda)?;
    let bn_stats = a
        .bn_stats
        .iter()
        .zip(&b.bn_stats)
        .map(|(sa, sb)| BnStats {
            mean: mix(&sa.mean, &sb.mean, lambda),
            var: mix(&sa.var, &sb.var, lambda),
        })
        .collect();
    let mut meta = a.meta.clone();
    meta.subset = format!("interp@{lambda}");
    Ok(Checkpoint {
        spec: a.spec.clone(),
        params,
        bn_stats,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        let a = ParamVector(vec![2.0, 0.0]);
        let b = ParamVector(vec![0.0, 2.0]);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        assert_eq!(interpolate(&a, &b, 0.5).unwrap().0, vec![1.0, 1.0]);
        assert!(interpolate(&a, &ParamVector(vec![1.0]), 0.5).is_err());
        assert!(interpolate(&a, &b, 1.5).is_err());
        assert!(interpolate(&a, &b, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn swapping_endpoints_mirrors_lambda(
            pairs in proptest::collection::vec((-1e3f32..1e3, -1e3f32..1e3), 1..64),
            k in 0usize..=20,
        ) {
            let a = ParamVector(pairs.iter().map(|p| p.0).collect());
            let b = ParamVector(pairs.iter().map(|p| p.1).collect());
            let lambda = k as f64 / 20.0;
            let x = interpolate(&a, &b, lambda).unwrap();
            let y = interpolate(&b, &a, 1.0 - lambda).unwrap();
            for (u, v) in x.0.iter().zip(&y.0) {
                prop_assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()), "{u} vs {v}");
            }
        }
    }
}
