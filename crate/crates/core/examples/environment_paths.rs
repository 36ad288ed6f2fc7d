//! Samples a two-state switching environment and prints its jumps, occupation
//! and a few values of the rate field.

use convhom::env::{evaluate_mu, sample_environment, EnvironmentSpec, PeriodicProfile};

fn main() -> convhom::Result<()> {
    let profiles = vec![
        PeriodicProfile::constant(1.0).with_term(&[1], &[0], 0.3, 0.0),
        PeriodicProfile::constant(1.0).with_term(&[1], &[-1], 0.25, 0.3),
    ];
    let spec = EnvironmentSpec::markov(1, profiles, 1.0, 11);
    spec.validate()?;
    let path = sample_environment(&spec, (0.0, 10.0), 0)?;
    println!("bounds      [{:.3}, {:.3}]", spec.alpha_lo, spec.alpha_hi);
    println!("jumps       {:?}", path.jump_times.iter().map(|t| (t * 1e3).round() / 1e3).collect::<Vec<_>>());
    println!("states      {:?}", path.states);
    println!("occupation  {:?} (stationary {:?})", path.occupation(), spec.stationary_weights());
    for t in [0.5, 2.5, 7.5] {
        let mu = evaluate_mu(&path, &[0.25], &[0.5], t)?;
        println!("mu(0.25, 0.5; {t}) = {mu:.6}");
    }
    Ok(())
}
