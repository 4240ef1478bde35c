use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;

pub type Ratios = [f64; 3];

pub fn validate_ratios(ratios: Ratios) -> Result<(), EvalError> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(EvalError::Config(format!("split ratios {ratios:?} must lie in [0, 1]")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EvalError::Config(format!("split ratios {ratios:?} must sum to 1")));
    }
    Ok(())
}

/// Train, validation and test records.
pub type Splits<R> = (Vec<R>, Vec<R>, Vec<R>);

/// Seeded shuffle, then contiguous train / val / test slices. Train and
/// val sizes are floored; test takes the remainder.
pub fn split_records<R: Clone>(records: &[R], ratios: Ratios, seed: u64) -> Result<Splits<R>, EvalError> {
    validate_ratios(ratios)?;
    let n = records.len();
    // guard against 0.1 * 10 = 0.99999...
    let size = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let (n_train, n_val) = (size(ratios[0]), size(ratios[1]));
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(EvalError::Split(format!(
            "{n} records at {ratios:?} leave an empty split ({n_train}/{n_val}/{})",
            n.saturating_sub(n_train + n_val)
        )));
    }
    let mut shuffled = records.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok((shuffled, val, test))
}
