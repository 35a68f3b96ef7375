//! Fits the candidate heavy-tailed families to a truncated power-law sample
//! and reports the likelihood-ratio winner.

use routemix::analysis::{ccdf, fit_report, sample_truncated_power_law};
use routemix::seeds::rng_from;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = sample_truncated_power_law(1.8, 1e-3, 1.0, 20_000, &mut rng_from(5))?;
    let report = fit_report(&x, 1.0)?;
    for f in &report.fits {
        println!(
            "{:<24} loglik {:>12.2}  alpha {:?} lambda {:?}",
            f.model.name(),
            f.loglik,
            f.alpha,
            f.lambda
        );
    }
    println!("winner: {} (wins {:?})", report.winner.name(), report.wins);

    let c = ccdf(&x)?;
    let (x90, p90) = c[c.len() * 9 / 10];
    println!("P(X >= {x90:.1}) = {p90:.4}");
    Ok(())
}
