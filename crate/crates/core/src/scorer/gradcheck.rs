use super::{ScorerError, ScorerParams};

/// Squared error of one prediction.
pub fn sample_loss(params: &ScorerParams<f64>, input: &[f64], label: f64) -> Result<f64, ScorerError> {
    let y = params.score(input)?;
    Ok((y - label).powi(2))
}

/// Maximum relative error between the analytic gradient of the squared
/// error and central finite differences, over every parameter.
pub fn gradient_check(params: &ScorerParams<f64>, input: &[f64], label: f64, epsilon: f64) -> Result<f64, ScorerError> {
    let trace = params.forward(input)?;
    let mut analytic = ScorerParams::zeros(params.shape());
    params.backward(&trace, 2.0 * (trace.score - label), &mut analytic);

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let original = probe.as_slice()[i];
        probe.as_mut_slice()[i] = original + epsilon;
        let up = sample_loss(&probe, input, label)?;
        probe.as_mut_slice()[i] = original - epsilon;
        let down = sample_loss(&probe, input, label)?;
        probe.as_mut_slice()[i] = original;

        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.as_slice()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
