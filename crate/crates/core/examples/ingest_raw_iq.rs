//! Raw capture to training windows: interleaved per-antenna streams become a
//! recording, which is cut into windows, unit-max normalized and laid out as
//! the square antenna × time grid.
use iqjepa::grid::{segment_recording, unit_max_normalize, upsample_antennas, IqRecording, Labels};

fn main() -> iqjepa::Result<()> {
    let (antennas, n) = (4, 1000);
    let streams: Vec<Vec<(f32, f32)>> = (0..antennas)
        .map(|a| {
            (0..n)
                .map(|t| {
                    let ph = 0.05 * t as f32 + 0.7 * a as f32;
                    (3.0 * ph.cos(), 3.0 * ph.sin())
                })
                .collect()
        })
        .collect();
    let rec = IqRecording::from_antenna_streams(&streams, 1e6, Labels::default())?;
    let windows = segment_recording(&rec, 256, 128)?;
    println!("{} samples per antenna -> {} windows of 256", rec.samples_per_antenna(), windows.len());
    let w = unit_max_normalize(&windows[0])?;
    println!("max |x| before {:.3}, after {:.3}", windows[0].max_abs(), w.max_abs());
    let g = upsample_antennas(&w, 64)?;
    println!("grid {} x {}; rows 0..64 repeat antenna 0: {}", g.rows(), g.cols(), (0..64).all(|r| g.at(0, r, 5) == w.at(0, 0, 5)));
    Ok(())
}
