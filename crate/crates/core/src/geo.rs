//! Coordinate encoding: Equal Earth projection, random Fourier features at
//! several spatial scales, and one MLP per scale summed into a location
//! embedding.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Graph, Mlp, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

// Equal Earth polynomial coefficients (Šavrič, Patterson & Jenny, 2019).
const A1: f64 = 1.340264;
const A2: f64 = -0.081106;
const A3: f64 = 0.000893;
const A4: f64 = 0.003796;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoCoordinate {
    lat: f64,
    lon: f64,
}

impl GeoCoordinate {
    /// Latitude and longitude in degrees.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Contract(format!(
                "coordinate ({lat}, {lon}) outside [-90, 90] x [-180, 180]"
            )));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Point on the Equal Earth plane of a unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
}

pub fn equal_earth_project(c: GeoCoordinate) -> ProjectedPoint {
    let phi = c.lat.to_radians();
    let lambda = c.lon.to_radians();
    let theta = ((3f64).sqrt() / 2.0 * phi.sin()).asin();
    let t2 = theta * theta;
    let t6 = t2 * t2 * t2;
    let y = theta * (A1 + A2 * t2 + t6 * (A3 + A4 * t2));
    let dy = A1 + 3.0 * A2 * t2 + t6 * (7.0 * A3 + 9.0 * A4 * t2);
    let x = 2.0 * (3f64).sqrt() * lambda * theta.cos() / (3.0 * dy);
    ProjectedPoint { x, y }
}

/// Fixed Gaussian frequency matrix for one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RffBasis {
    sigma: f64,
    seed: u64,
    /// `frequencies × 2`, row-major.
    basis: Vec<f64>,
}

impl RffBasis {
    /// Entries are drawn row by row from `ChaCha20Rng::seed_from_u64(seed)`
    /// as standard normals scaled by `sigma`.
    pub fn new(seed: u64, sigma: f64, frequencies: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) || frequencies == 0 {
            return Err(Error::Contract(format!(
                "rff basis needs sigma > 0 and at least one frequency (sigma {sigma}, {frequencies} frequencies)"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let basis = (0..2 * frequencies)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect();
        Ok(Self { sigma, seed, basis })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequencies(&self) -> usize {
        self.basis.len() / 2
    }

    pub fn matrix(&self) -> &[f64] {
        &self.basis
    }

    /// Writes `[cos(2πBp), sin(2πBp)]` into `out` (length `2·frequencies`).
    pub fn features_into(&self, p: ProjectedPoint, out: &mut [f64]) {
        let f = self.frequencies();
        debug_assert_eq!(out.len(), 2 * f);
        for (i, b) in self.basis.chunks_exact(2).enumerate() {
            let arg = 2.0 * PI * (b[0] * p.x + b[1] * p.y);
            let (s, c) = arg.sin_cos();
            out[i] = c;
            out[f + i] = s;
        }
    }
}

/// Cosines first, then sines.
pub fn rff_features(p: ProjectedPoint, basis: &RffBasis) -> Vec<f64> {
    let mut out = vec![0.0; 2 * basis.frequencies()];
    basis.features_into(p, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationEncoderConfig {
    pub sigmas: Vec<f64>,
    pub frequencies: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    /// Per-scale basis seeds are derived from this value and the scale index.
    pub seed: u64,
}

impl LocationEncoderConfig {
    pub fn full_scale(output: usize, seed: u64) -> Self {
        Self {
            sigmas: vec![1.0, 16.0, 256.0],
            frequencies: 256,
            hidden: vec![1024, 1024, 1024],
            output,
            seed,
        }
    }

    pub fn synthetic(output: usize, seed: u64) -> Self {
        Self {
            hidden: vec![128, 128],
            ..Self::full_scale(output, seed)
        }
    }

    pub fn scale_seed(&self, scale: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(scale as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationEncoder {
    bases: Vec<RffBasis>,
    mlps: Vec<Mlp>,
    output: usize,
}

impl LocationEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &LocationEncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if cfg.sigmas.is_empty() || cfg.output == 0 {
            return Err(Error::Contract(
                "location encoder needs at least one scale and a positive output width".into(),
            ));
        }
        let mut bases = Vec::with_capacity(cfg.sigmas.len());
        let mut mlps = Vec::with_capacity(cfg.sigmas.len());
        for (i, &sigma) in cfg.sigmas.iter().enumerate() {
            bases.push(RffBasis::new(cfg.scale_seed(i), sigma, cfg.frequencies)?);
            let mut widths = vec![2 * cfg.frequencies];
            widths.extend(&cfg.hidden);
            widths.push(cfg.output);
            mlps.push(Mlp::new(store, &format!("{name}.scale{i}"), &widths, false, rng));
        }
        Ok(Self {
            bases,
            mlps,
            output: cfg.output,
        })
    }

    pub fn output_width(&self) -> usize {
        self.output
    }

    pub fn bases(&self) -> &[RffBasis] {
        &self.bases
    }

    pub fn mlps(&self) -> &[Mlp] {
        &self.mlps
    }

    /// Frozen RFF features, one `[n × 2F]` matrix per scale.
    pub fn featurize(&self, coords: &[GeoCoordinate]) -> Result<Vec<Tensor>> {
        let projected: Vec<ProjectedPoint> =
            coords.iter().map(|&c| equal_earth_project(c)).collect();
        self.bases
            .iter()
            .map(|b| {
                let w = 2 * b.frequencies();
                let mut data = vec![0.0; projected.len() * w];
                for (p, row) in projected.iter().zip(data.chunks_exact_mut(w)) {
                    b.features_into(*p, row);
                }
                Ok(Tensor::new(vec![projected.len(), w], data)?)
            })
            .collect()
    }

    /// Sums the per-scale MLP outputs in scale order.
    pub fn forward_features(&self, g: &mut Graph, features: &[Var]) -> Result<Var> {
        if features.len() != self.mlps.len() {
            return Err(Error::Contract(format!(
                "location encoder has {} scales, got {} feature blocks",
                self.mlps.len(),
                features.len()
            )));
        }
        let mut acc: Option<Var> = None;
        for (mlp, &f) in self.mlps.iter().zip(features) {
            let y = mlp.forward(g, f)?;
            acc = Some(match acc {
                None => y,
                Some(a) => g.tape.add(a, y)?,
            });
        }
        Ok(acc.expect("at least one scale"))
    }

    /// Per-scale contributions for a batch of coordinates, without a tape.
    pub fn encode_scales(&self, store: &ParamStore, coords: &[GeoCoordinate]) -> Result<Vec<Tensor>> {
        let feats = self.featurize(coords)?;
        let mut g = Graph::new(store, false);
        let mut out = Vec::with_capacity(feats.len());
        for (mlp, f) in self.mlps.iter().zip(feats) {
            let x = g.input(f);
            let y = mlp.forward(&mut g, x)?;
            out.push(g.value(y).clone());
        }
        Ok(out)
    }
}

/// Location embedding for one coordinate.
pub fn encode_location(c: GeoCoordinate, enc: &LocationEncoder, store: &ParamStore) -> Result<Vec<f64>> {
    let feats = enc.featurize(&[c])?;
    let mut g = Graph::new(store, false);
    let vars: Vec<Var> = feats.into_iter().map(|f| g.input(f)).collect();
    let y = enc.forward_features(&mut g, &vars)?;
    Ok(g.value(y).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng as _;

    /// Independent evaluation of the published closed form, written with
    /// explicit powers rather than the nested form above.
    fn oracle(lat: f64, lon: f64) -> (f64, f64) {
        let m = 3f64.sqrt() / 2.0;
        let phi = lat * PI / 180.0;
        let lam = lon * PI / 180.0;
        let t = (m * phi.sin()).asin();
        let x = 2.0 * 3f64.sqrt() * lam * t.cos()
            / (3.0
                * (9.0 * A4 * t.powi(8) + 7.0 * A3 * t.powi(6) + 3.0 * A2 * t.powi(2) + A1));
        let y = A4 * t.powi(9) + A3 * t.powi(7) + A2 * t.powi(3) + A1 * t;
        (x, y)
    }

    #[test]
    fn origin_and_symmetries() {
        let p = equal_earth_project(GeoCoordinate::new(0.0, 0.0).unwrap());
        assert_eq!((p.x, p.y), (0.0, 0.0));
        let mut rng = stream_rng(1, Stream::Data);
        for _ in 0..100 {
            let lat = rng.gen_range(-90.0..=90.0);
            let lon = rng.gen_range(-180.0..=180.0);
            let a = equal_earth_project(GeoCoordinate::new(lat, lon).unwrap());
            let b = equal_earth_project(GeoCoordinate::new(-lat, lon).unwrap());
            let c = equal_earth_project(GeoCoordinate::new(lat, -lon).unwrap());
            assert!((a.x - b.x).abs() < 1e-12 && (a.y + b.y).abs() < 1e-12);
            assert!((a.x + c.x).abs() < 1e-12 && (a.y - c.y).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_closed_form() {
        let p = equal_earth_project(GeoCoordinate::new(45.0, 90.0).unwrap());
        let (x, y) = oracle(45.0, 90.0);
        assert!((p.x - x).abs() < 1e-9 && (p.y - y).abs() < 1e-9);
        // poles are finite
        let n = equal_earth_project(GeoCoordinate::new(90.0, 180.0).unwrap());
        assert!(n.x.is_finite() && n.y.is_finite());
    }

    #[test]
    fn bounds_enforced() {
        assert!(GeoCoordinate::new(90.5, 0.0).is_err());
        assert!(GeoCoordinate::new(0.0, -180.1).is_err());
        assert!(GeoCoordinate::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn rff_origin_and_pythagoras() {
        let basis = RffBasis::new(3, 16.0, 256).unwrap();
        let f = rff_features(ProjectedPoint { x: 0.0, y: 0.0 }, &basis);
        assert_eq!(f.len(), 512);
        assert!(f[..256].iter().all(|&v| v == 1.0));
        assert!(f[256..].iter().all(|&v| v == 0.0));
        let f = rff_features(ProjectedPoint { x: -2.1, y: 0.7 }, &basis);
        for i in 0..256 {
            assert!((f[i] * f[i] + f[256 + i] * f[256 + i] - 1.0).abs() < 1e-12);
        }
        assert!(f.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn rff_rederived_from_seed() {
        let basis = RffBasis::new(7, 1.0, 256).unwrap();
        let p = ProjectedPoint { x: 0.3, y: -0.2 };
        let f = rff_features(p, &basis);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let draws: Vec<f64> = (0..512).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for i in 0..256 {
            let arg = 2.0 * PI * (draws[2 * i] * 0.3 + draws[2 * i + 1] * -0.2);
            assert_eq!(f[i], arg.cos());
            assert_eq!(f[256 + i], arg.sin());
        }
        assert_eq!(RffBasis::new(7, 1.0, 256).unwrap(), basis);
    }

    fn small_cfg() -> LocationEncoderConfig {
        LocationEncoderConfig {
            sigmas: vec![1.0, 16.0, 256.0],
            frequencies: 8,
            hidden: vec![6],
            output: 4,
            seed: 11,
        }
    }

    #[test]
    fn zero_weights_give_bias_sum() {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(0, Stream::Init);
        let enc = LocationEncoder::new(&mut store, "loc", &small_cfg(), &mut rng).unwrap();
        let mut expected = vec![0.0; 4];
        for mlp in enc.mlps() {
            for l in &mlp.layers {
                store.get_mut(l.weight).data_mut().fill(0.0);
            }
            let last = mlp.layers.last().unwrap();
            for (e, b) in expected.iter_mut().zip(store.get(last.bias).data()) {
                *e += b;
            }
        }
        let c = GeoCoordinate::new(37.0, -122.0).unwrap();
        let got = encode_location(c, &enc, &store).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn single_scale_matches_general_path() {
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        let mut rng = stream_rng(0, Stream::Init);
        let enc = LocationEncoder::new(&mut store, "loc", &cfg, &mut rng).unwrap();
        let coords = [
            GeoCoordinate::new(36.95, -122.05).unwrap(),
            GeoCoordinate::new(-12.0, 44.0).unwrap(),
        ];
        let parts = enc.encode_scales(&store, &coords).unwrap();

        // Summation order of the scales does not matter beyond rounding.
        let total = {
            let mut g = Graph::new(&store, false);
            let feats: Vec<Var> = enc
                .featurize(&coords)
                .unwrap()
                .into_iter()
                .map(|f| g.input(f))
                .collect();
            let y = enc.forward_features(&mut g, &feats).unwrap();
            g.value(y).clone()
        };
        for i in 0..total.len() {
            let fwd = parts[0].data()[i] + parts[1].data()[i] + parts[2].data()[i];
            let rev = parts[2].data()[i] + parts[1].data()[i] + parts[0].data()[i];
            assert_eq!(total.data()[i], fwd);
            assert!((fwd - rev).abs() < 1e-12);
        }

        // A one-scale encoder over scale 1's seed and weights reproduces
        // that scale's contribution exactly.
        let single_cfg = LocationEncoderConfig {
            sigmas: vec![16.0],
            ..cfg.clone()
        };
        let mut single_store = ParamStore::new();
        let mut rng2 = stream_rng(5, Stream::Init);
        let mut single =
            LocationEncoder::new(&mut single_store, "one", &single_cfg, &mut rng2).unwrap();
        single.bases[0] = RffBasis::new(cfg.scale_seed(1), 16.0, cfg.frequencies).unwrap();
        for (dst, src) in single.mlps[0].layers.iter().zip(&enc.mlps()[1].layers) {
            *single_store.get_mut(dst.weight) = store.get(src.weight).clone();
            *single_store.get_mut(dst.bias) = store.get(src.bias).clone();
        }
        for (r, c) in coords.iter().enumerate() {
            let v = encode_location(*c, &single, &single_store).unwrap();
            assert_eq!(v.as_slice(), parts[1].row(r));
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let build = || {
            let mut store = ParamStore::new();
            let mut rng = stream_rng(4, Stream::Init);
            let enc = LocationEncoder::new(&mut store, "loc", &small_cfg(), &mut rng).unwrap();
            (enc, store)
        };
        let (a, sa) = build();
        let (b, sb) = build();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }
}
