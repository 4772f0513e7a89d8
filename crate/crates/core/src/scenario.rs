//! Static network configuration, toroidal geometry and the AP-UE service map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// How APs are placed when positions are not listed in the document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApLayout {
    Uniform,
    /// Near-square grid, each AP displaced uniformly by up to
    /// `grid_jitter * cell size` in each axis.
    Grid,
}

/// Spatial correlation model for `R_{m,k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngularSpread {
    /// Gaussian local scattering with the given standard deviation (radians).
    Gaussian(f64),
    /// Infinite spread: `R = beta * I`.
    Uncorrelated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub shadowing_db: f64,
    pub decorrelation_m: f64,
    pub angular_spread: AngularSpread,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            shadowing_db: 4.0,
            decorrelation_m: 9.0,
            angular_spread: AngularSpread::Gaussian(10f64.to_radians()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams {
    pub ap_layout: ApLayout,
    pub grid_jitter: f64,
    pub ap_positions: Option<Vec<Point>>,
    pub ue_positions: Option<Vec<Point>>,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            ap_layout: ApLayout::Uniform,
            grid_jitter: 0.25,
            ap_positions: None,
            ue_positions: None,
        }
    }
}

/// Validated network parameters. Powers are in watts, distances in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub rf_chains: usize,
    pub num_ues: usize,
    pub pilot_len: usize,
    pub coherence: usize,
    pub ue_power: f64,
    pub pilot_power: f64,
    pub noise: f64,
    /// RZF regularization for noise-normalized channels.
    pub rzf_reg: f64,
    pub serve_radius: f64,
    pub conv_tol: f64,
    pub area_side: f64,
    pub carrier_freq: f64,
    pub ap_height: f64,
    pub rng_seed: u64,
    pub channel: ChannelParams,
    pub geometry: GeometryParams,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl Scenario {
    /// Full-size network: 12 APs with 32 antennas and 8 RF chains, 16 UEs on
    /// 8 orthogonal pilots over a 200 m wrapped square. Slow.
    pub fn reference() -> Self {
        Self {
            num_aps: 12,
            antennas_per_ap: 32,
            rf_chains: 8,
            num_ues: 16,
            pilot_len: 8,
            coherence: 200,
            ue_power: 0.2,
            pilot_power: 0.2,
            noise: dbm_to_watts(-96.0),
            rzf_reg: 1e-4,
            serve_radius: 90.0,
            conv_tol: 1e-3,
            area_side: 200.0,
            carrier_freq: 2.0,
            ap_height: 10.0,
            rng_seed: 1,
            channel: ChannelParams::default(),
            geometry: GeometryParams::default(),
        }
    }

    /// Desk-scale network (M=8, N=8, L=4, K=8, tau=4) used by tests and the
    /// shipped default config.
    pub fn desk() -> Self {
        Self {
            num_aps: 8,
            antennas_per_ap: 8,
            rf_chains: 4,
            num_ues: 8,
            pilot_len: 4,
            geometry: GeometryParams {
                ap_layout: ApLayout::Grid,
                ..GeometryParams::default()
            },
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self;
        if s.num_aps == 0 {
            return Err(Error::range("num_aps", "must be at least 1"));
        }
        if s.antennas_per_ap == 0 {
            return Err(Error::range("antennas_per_ap", "must be at least 1"));
        }
        if s.rf_chains == 0 || s.rf_chains > s.antennas_per_ap {
            return Err(Error::range(
                "rf_chains",
                format!("need 1 <= L <= N = {}, got {}", s.antennas_per_ap, s.rf_chains),
            ));
        }
        if s.num_ues == 0 {
            return Err(Error::range("num_ues", "must be at least 1"));
        }
        if s.coherence == 0 {
            return Err(Error::range("coherence", "must be at least 1"));
        }
        if s.pilot_len == 0 || s.pilot_len > s.coherence {
            return Err(Error::range(
                "pilot_len",
                format!("need 1 <= tau <= tau_c = {}, got {}", s.coherence, s.pilot_len),
            ));
        }
        for (name, v) in [
            ("ue_power", s.ue_power),
            ("pilot_power", s.pilot_power),
            ("noise", s.noise),
            ("rzf_reg", s.rzf_reg),
            ("conv_tol", s.conv_tol),
            ("area_side", s.area_side),
            ("serve_radius", s.serve_radius),
            ("carrier_freq", s.carrier_freq),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::range(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(s.ap_height.is_finite() && s.ap_height >= 0.0) {
            return Err(Error::range("ap_height", "must be >= 0"));
        }
        let ch = &s.channel;
        if !(ch.shadowing_db.is_finite() && ch.shadowing_db >= 0.0) {
            return Err(Error::range("channel.shadowing_db", "must be >= 0"));
        }
        if !(ch.decorrelation_m.is_finite() && ch.decorrelation_m > 0.0) {
            return Err(Error::range("channel.decorrelation_m", "must be > 0"));
        }
        if let AngularSpread::Gaussian(sd) = ch.angular_spread {
            if !(sd.is_finite() && sd >= 0.0) {
                return Err(Error::range("channel.angular_spread_deg", "must be >= 0"));
            }
        }
        let g = &s.geometry;
        if !(0.0..=0.5).contains(&g.grid_jitter) {
            return Err(Error::range("geometry.grid_jitter", "must lie in [0, 0.5]"));
        }
        let check_points = |name: &str, pts: &Option<Vec<Point>>, n: usize| -> Result<()> {
            if let Some(p) = pts {
                if p.len() != n {
                    return Err(Error::range(name, format!("expected {n} points, got {}", p.len())));
                }
                if p.iter().flatten().any(|&x| !(0.0..s.area_side).contains(&x)) {
                    return Err(Error::range(name, "coordinates must lie in [0, area_side)"));
                }
            }
            Ok(())
        };
        check_points("geometry.ap_positions", &g.ap_positions, s.num_aps)?;
        check_points("geometry.ue_positions", &g.ue_positions, s.num_ues)?;
        Ok(())
    }

    /// Pilot overhead factor `1 - tau / tau_c`.
    pub fn prelog(&self) -> f64 {
        1.0 - self.pilot_len as f64 / self.coherence as f64
    }

    /// RZF regularizer in the units of the simulated channels. `rzf_reg` is
    /// defined for channels normalized by the noise power, so it scales by
    /// `sigma^2`.
    pub fn rzf_regularizer(&self) -> f64 {
        self.rzf_reg * self.noise
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    shadowing_db: Option<f64>,
    decorrelation_m: Option<f64>,
    angular_spread_deg: Option<f64>,
    iid: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    ap_layout: Option<ApLayout>,
    grid_jitter: Option<f64>,
    ap_positions: Option<Vec<Point>>,
    ue_positions: Option<Vec<Point>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    num_aps: usize,
    antennas_per_ap: usize,
    rf_chains: usize,
    num_ues: usize,
    pilot_len: usize,
    coherence: usize,
    ue_power: f64,
    pilot_power: Option<f64>,
    noise: Option<f64>,
    noise_dbm: Option<f64>,
    rzf_reg: f64,
    serve_radius: f64,
    conv_tol: f64,
    area_side: f64,
    carrier_freq: f64,
    ap_height: f64,
    rng_seed: u64,
    channel: Option<RawChannel>,
    geometry: Option<RawGeometry>,
}

/// Parse and validate a TOML scenario document. Returns the scenario and the
/// topology for `rng_seed` (positions from the document when listed).
pub fn load_scenario(text: &str) -> Result<(Scenario, Topology)> {
    let scenario = parse_scenario(text)?;
    let topology = Topology::for_seed(&scenario, scenario.rng_seed);
    Ok((scenario, topology))
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let noise = match (raw.noise, raw.noise_dbm) {
        (Some(w), None) => w,
        (None, Some(dbm)) => dbm_to_watts(dbm),
        (None, None) => return Err(Error::Parse("missing key `noise` (or `noise_dbm`)".into())),
        (Some(_), Some(_)) => return Err(Error::Parse("give only one of `noise` and `noise_dbm`".into())),
    };
    let defaults = ChannelParams::default();
    let channel = match raw.channel {
        None => defaults,
        Some(c) => ChannelParams {
            shadowing_db: c.shadowing_db.unwrap_or(defaults.shadowing_db),
            decorrelation_m: c.decorrelation_m.unwrap_or(defaults.decorrelation_m),
            angular_spread: match (c.iid.unwrap_or(false), c.angular_spread_deg) {
                (true, _) => AngularSpread::Uncorrelated,
                (false, Some(deg)) => AngularSpread::Gaussian(deg.to_radians()),
                (false, None) => defaults.angular_spread,
            },
        },
    };
    let gdef = GeometryParams::default();
    let geometry = match raw.geometry {
        None => gdef,
        Some(g) => GeometryParams {
            ap_layout: g.ap_layout.unwrap_or(gdef.ap_layout),
            grid_jitter: g.grid_jitter.unwrap_or(gdef.grid_jitter),
            ap_positions: g.ap_positions,
            ue_positions: g.ue_positions,
        },
    };
    let s = Scenario {
        num_aps: raw.num_aps,
        antennas_per_ap: raw.antennas_per_ap,
        rf_chains: raw.rf_chains,
        num_ues: raw.num_ues,
        pilot_len: raw.pilot_len,
        coherence: raw.coherence,
        ue_power: raw.ue_power,
        pilot_power: raw.pilot_power.unwrap_or(raw.ue_power),
        noise,
        rzf_reg: raw.rzf_reg,
        serve_radius: raw.serve_radius,
        conv_tol: raw.conv_tol,
        area_side: raw.area_side,
        carrier_freq: raw.carrier_freq,
        ap_height: raw.ap_height,
        rng_seed: raw.rng_seed,
        channel,
        geometry,
    };
    s.validate()?;
    Ok(s)
}

/// Shortest displacement `b - a` on the square torus of the given side.
pub fn wrap_displacement(a: Point, b: Point, side: f64) -> Point {
    let mut best = [b[0] - a[0], b[1] - a[1]];
    let mut best_d2 = f64::INFINITY;
    for ix in [-1.0, 0.0, 1.0] {
        for iy in [-1.0, 0.0, 1.0] {
            let dx = b[0] + ix * side - a[0];
            let dy = b[1] + iy * side - a[1];
            let d2 = dx * dx + dy * dy;
            if d2 < best_d2 {
                best_d2 = d2;
                best = [dx, dy];
            }
        }
    }
    best
}

/// Distance on the square torus: minimum over the 3x3 image grid.
pub fn wrap_distance(a: Point, b: Point, side: f64) -> f64 {
    let d = wrap_displacement(a, b, side);
    d[0].hypot(d[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub ap_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
}

fn grid_shape(m: usize) -> (usize, usize) {
    let mut rows = (m as f64).sqrt().floor() as usize;
    while rows > 1 && m % rows != 0 {
        rows -= 1;
    }
    (rows.max(1), m / rows.max(1))
}

impl Topology {
    /// Draw positions not listed in the scenario document.
    pub fn generate<R: Rng + ?Sized>(s: &Scenario, rng: &mut R) -> Self {
        let side = s.area_side;
        let uniform = |rng: &mut R| [rng.random::<f64>() * side, rng.random::<f64>() * side];
        let ap_positions = match &s.geometry.ap_positions {
            Some(p) => p.clone(),
            None => match s.geometry.ap_layout {
                ApLayout::Uniform => (0..s.num_aps).map(|_| uniform(rng)).collect(),
                ApLayout::Grid => {
                    let (rows, cols) = grid_shape(s.num_aps);
                    let (cw, ch) = (side / cols as f64, side / rows as f64);
                    let j = s.geometry.grid_jitter;
                    let mut out = Vec::with_capacity(s.num_aps);
                    for r in 0..rows {
                        for c in 0..cols {
                            let ox = (rng.random::<f64>() * 2.0 - 1.0) * j * cw;
                            let oy = (rng.random::<f64>() * 2.0 - 1.0) * j * ch;
                            let x = ((c as f64 + 0.5) * cw + ox).rem_euclid(side);
                            let y = ((r as f64 + 0.5) * ch + oy).rem_euclid(side);
                            out.push([x, y]);
                        }
                    }
                    out
                }
            },
        };
        let ue_positions = match &s.geometry.ue_positions {
            Some(p) => p.clone(),
            None => (0..s.num_ues).map(|_| uniform(rng)).collect(),
        };
        Self {
            ap_positions,
            ue_positions,
        }
    }

    pub fn for_seed(s: &Scenario, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, &[crate::rng::tag::TOPOLOGY]);
        Self::generate(s, &mut rng)
    }

    pub fn ap_ue_distance(&self, m: usize, k: usize, side: f64) -> f64 {
        wrap_distance(self.ap_positions[m], self.ue_positions[k], side)
    }
}

/// Binary AP-UE association: `mask[m][k]` is true when AP `m` serves UE `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceMap {
    mask: Vec<Vec<bool>>,
    served_by: Vec<Vec<usize>>,
    serves: Vec<Vec<usize>>,
}

impl ServiceMap {
    /// Build from an `M x K` mask. Fails when some UE has no serving AP.
    pub fn from_mask(mask: Vec<Vec<bool>>) -> Result<Self> {
        let m = mask.len();
        let k = mask.first().map_or(0, Vec::len);
        if mask.iter().any(|row| row.len() != k) {
            return Err(Error::Dimension("ragged service mask".into()));
        }
        let served_by: Vec<Vec<usize>> = (0..k).map(|ue| (0..m).filter(|&ap| mask[ap][ue]).collect()).collect();
        if let Some(ue) = served_by.iter().position(Vec::is_empty) {
            return Err(Error::UncoveredUe(ue));
        }
        let serves = mask.iter().map(|row| (0..k).filter(|&ue| row[ue]).collect()).collect();
        Ok(Self {
            mask,
            served_by,
            serves,
        })
    }

    /// Every AP serves every UE.
    pub fn full(num_aps: usize, num_ues: usize) -> Self {
        Self::from_mask(vec![vec![true; num_ues]; num_aps]).expect("non-empty")
    }

    pub fn num_aps(&self) -> usize {
        self.mask.len()
    }

    pub fn num_ues(&self) -> usize {
        self.served_by.len()
    }

    #[inline]
    pub fn serves_ue(&self, ap: usize, ue: usize) -> bool {
        self.mask[ap][ue]
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.mask
    }

    /// `F_k`: APs serving UE `k`, ascending.
    pub fn served_by(&self, ue: usize) -> &[usize] {
        &self.served_by[ue]
    }

    /// `U_m`: UEs served by AP `m`, ascending.
    pub fn serves(&self, ap: usize) -> &[usize] {
        &self.serves[ap]
    }

    /// `M (x) 1_L`, an `ML x K` mask.
    pub fn expanded(&self, chains: usize) -> Vec<Vec<bool>> {
        self.mask
            .iter()
            .flat_map(|row| std::iter::repeat_n(row.clone(), chains))
            .collect()
    }

    /// `1 - M (x) 1_L`.
    pub fn complement(&self, chains: usize) -> Vec<Vec<bool>> {
        self.expanded(chains)
            .into_iter()
            .map(|row| row.into_iter().map(|b| !b).collect())
            .collect()
    }
}

/// Serve `(m, k)` when the wrapped AP-UE distance is at most `serve_radius`.
pub fn build_service_map(topology: &Topology, s: &Scenario) -> Result<ServiceMap> {
    if topology.ap_positions.len() != s.num_aps || topology.ue_positions.len() != s.num_ues {
        return Err(Error::Dimension("topology does not match scenario".into()));
    }
    let mask = (0..s.num_aps)
        .map(|m| {
            (0..s.num_ues)
                .map(|k| topology.ap_ue_distance(m, k, s.area_side) <= s.serve_radius)
                .collect()
        })
        .collect();
    ServiceMap::from_mask(mask)
}
