use super::RolloutBuffer;

/// Generalized advantage estimation over each env's trajectory. Terminated
/// steps bootstrap with 0, truncated steps with their recorded final value.
/// Stores and returns `(advantages, returns)` in env-major order.
pub fn compute_gae(buf: &mut RolloutBuffer, gamma: f64, gae_lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv = Vec::with_capacity(buf.len());
    let mut ret = Vec::with_capacity(buf.len());
    for (steps, last_value) in buf.steps.iter().zip(&buf.last_values) {
        let mut a = vec![0.0; steps.len()];
        let mut next_adv = 0.0;
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let done = s.terminated || s.truncated;
            let next_value = if s.terminated {
                0.0
            } else if s.truncated {
                s.bootstrap_value
            } else if t + 1 < steps.len() {
                steps[t + 1].value
            } else {
                *last_value
            };
            let delta = s.reward + gamma * next_value - s.value;
            let carry = if done { 0.0 } else { gamma * gae_lambda * next_adv };
            a[t] = delta + carry;
            next_adv = a[t];
        }
        ret.extend(a.iter().zip(steps).map(|(a, s)| a + s.value));
        adv.extend(a);
    }
    buf.advantages = adv.clone();
    buf.returns = ret.clone();
    (adv, ret)
}
