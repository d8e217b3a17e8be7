//! Writes the bundled SEA-like dataset.
//!
//! Usage: `cargo run -p dream-core --example gen_sea_like -- [rows] [seed] [label_noise] > data.csv`

use dream_core::env::{generate_sea_like, write_dataset_csv};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let rows: usize = args.first().map_or(Ok(5000), |s| s.parse())?;
    let seed: u64 = args.get(1).map_or(Ok(20210), |s| s.parse())?;
    let noise: f64 = args.get(2).map_or(Ok(0.0), |s| s.parse())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = generate_sea_like(rows, 3, noise, &mut rng)?;
    write_dataset_csv(std::io::stdout().lock(), &data)?;
    Ok(())
}
