//! Generate a synthetic acquisition run, check its singles rates against the
//! closed-form expectation, and round-trip it through the TTAG format.
//!
//! ```bash
//! cargo run --release --example simulate_acquisition
//! ```

use g2kit::simulator::{expected_singles_rates, simulate_run, SimConfig};
use g2kit::timetag::{read_ttag, write_ttag};

fn main() -> g2kit::Result<()> {
    // the key = value text is what `g2kit simulate --config` accepts
    let config = SimConfig::from_keyval(
        "\
acquisition_time_s = 20
background_rate_hz = 3300
seed = 7
",
    )?;
    println!("configuration:\n{}", config.to_keyval());

    let stream = simulate_run(&config)?;
    println!(
        "{} events over {} s on {} channels",
        stream.events.len(),
        config.acquisition_time_s,
        stream.channels.len()
    );

    let (expect_a, expect_b) = expected_singles_rates(&config)?;
    for (ch, expect) in [(0u8, expect_a), (1u8, expect_b)] {
        let observed = stream.singles(ch) as f64 / config.acquisition_time_s;
        println!(
            "channel {ch}: {observed:.0} counts/s observed vs {expect:.0} expected \
             ({:+.2}%)",
            100.0 * (observed - expect) / expect
        );
    }

    let dir = std::env::temp_dir().join("g2kit_example_run.ttag");
    write_ttag(&stream, &dir)?;
    let back = read_ttag(&dir)?;
    assert_eq!(back, stream);
    println!("TTAG round trip ok: {}", dir.display());
    Ok(())
}
