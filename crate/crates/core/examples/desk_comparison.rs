//! Desk-scale comparison of the compact network with quantile mapping and
//! the raw interpolated input on synthetic 1997–2000 data.
//!
//! Usage: `desk_comparison [EPOCHS] [SEED...]`

use precip_downscale::pipeline::{desk_comparison, DeskConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).parse_default_env().init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);
    let mut seeds: Vec<u64> = args.map(|s| s.parse()).collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        seeds = vec![1, 2, 3];
    }
    let cfg = DeskConfig::standard(epochs);
    println!("seed  convlstm    qmap     raw  ordered");
    for seed in seeds {
        let s = desk_comparison(&cfg, seed)?;
        println!("{seed:>4}  {:>8.4} {:>7.4} {:>7.4}  {}", s.convlstm, s.qmap, s.raw, s.ordered());
    }
    Ok(())
}
