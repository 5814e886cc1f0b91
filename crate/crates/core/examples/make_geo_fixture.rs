//! Writes the synthetic geo fixture used by the CLI tests.
//!
//! `make_geo_fixture <out.csv> [n] [seed]`

use gpenkf::geo::generate_fixture;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().ok_or("usage: make_geo_fixture <out.csv> [n] [seed]")?;
    let n = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["longitude", "latitude", "price"])?;
    for r in generate_fixture(n, 0.1, seed)? {
        w.write_record(&[r.longitude.to_string(), r.latitude.to_string(), r.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
