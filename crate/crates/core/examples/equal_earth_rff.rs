//! Projects a few coordinates with Equal Earth and prints their multi-scale
//! Fourier features.
//!
//! ```text
//! cargo run --example equal_earth_rff
//! ```

use smf_lab::geo::{equal_earth_project, rff_features, GeoCoordinate, RffBasis};

fn main() -> smf_lab::Result<()> {
    let places = [(0.0, 0.0), (37.0, -122.0), (-33.9, 151.2), (90.0, 180.0)];
    let bases: Vec<RffBasis> = [1.0, 16.0, 256.0]
        .iter()
        .enumerate()
        .map(|(i, &s)| RffBasis::new(i as u64, s, 4))
        .collect::<smf_lab::Result<_>>()?;
    for (lat, lon) in places {
        let p = equal_earth_project(GeoCoordinate::new(lat, lon)?);
        println!("({lat:>6.1}, {lon:>7.1}) -> x {:+.6} y {:+.6}", p.x, p.y);
        for b in &bases {
            let f = rff_features(p, b);
            let shown: Vec<String> = f.iter().map(|v| format!("{v:+.3}")).collect();
            println!("    sigma {:>5}: {}", b.sigma(), shown.join(" "));
        }
    }
    Ok(())
}
