//! Cosine learning-rate decay and EMA momentum ramp over a 20-epoch run of
//! 42 steps per epoch.
use iqjepa::jepa::{lr_schedule, momentum_schedule};

fn main() -> iqjepa::Result<()> {
    let total = 20 * 42;
    for step in (0..=total).step_by(total as usize / 10) {
        let lr = lr_schedule(step, total, 1e-3)?;
        let tau = momentum_schedule(step, total, 0.996, 1.0)?;
        println!("step {step:>4}: lr {lr:.2e}  tau {tau:.6}");
    }
    Ok(())
}
