//! Network geometry, large-scale fading and CSI structure.
//!
//! Access points sit on a regular grid over a square service area, users are
//! dropped uniformly at random, and every user is served by the `Q` access
//! points with the strongest large-scale gain. All gains are normalized by the
//! receiver noise power, so a transmit power `p` (mW) over a gain `beta` (1/mW)
//! is directly an SNR.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Thermal noise density at room temperature, dBm/Hz.
const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

/// Log-distance pathloss with log-normal shadowing, `PL(d) = intercept - slope * log10(d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathlossModel {
    /// Channel gain at 1 m, dB.
    pub intercept_db: f64,
    /// Gain decrease per decade of distance, dB.
    pub slope_db_per_decade: f64,
    pub shadowing_std_db: f64,
    /// Distances below this are clamped.
    pub min_distance_m: f64,
}

impl Default for PathlossModel {
    fn default() -> Self {
        Self {
            intercept_db: -30.5,
            slope_db_per_decade: 36.7,
            shadowing_std_db: 4.0,
            min_distance_m: 1.0,
        }
    }
}

impl PathlossModel {
    /// Median channel gain in dB at distance `d_m` (no shadowing).
    pub fn gain_db(&self, d_m: f64) -> f64 {
        let d = d_m.max(self.min_distance_m);
        self.intercept_db - self.slope_db_per_decade * d.log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApPlacement {
    /// Regular `sqrt(L) x sqrt(L)` grid, offset by half a spacing from the border.
    Grid,
    /// Uniform random positions (seeded per drop).
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub area_side_m: f64,
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_users: usize,
    /// Serving cluster size `Q` for the clustered architectures.
    pub cluster_size: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub pathloss: PathlossModel,
    pub ap_placement: ApPlacement,
    /// Measure distances on a torus (wrap-around topology).
    pub wrap_around: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area_side_m: 500.0,
            num_aps: 16,
            antennas_per_ap: 4,
            num_users: 64,
            cluster_size: 4,
            carrier_hz: 2.0e9,
            bandwidth_hz: 20.0e6,
            tx_power_dbm: 20.0,
            noise_figure_db: 7.0,
            pathloss: PathlossModel::default(),
            ap_placement: ApPlacement::Grid,
            wrap_around: false,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_aps == 0 || self.antennas_per_ap == 0 || self.num_users == 0 {
            return fail("num_aps, antennas_per_ap and num_users must be at least 1".into());
        }
        if self.cluster_size == 0 || self.cluster_size > self.num_aps {
            return fail(format!(
                "cluster_size must lie in 1..={} (got {})",
                self.num_aps, self.cluster_size
            ));
        }
        if !(self.area_side_m > 0.0 && self.area_side_m.is_finite()) {
            return fail(format!(
                "area_side_m must be positive (got {})",
                self.area_side_m
            ));
        }
        if [self.bandwidth_hz, self.carrier_hz]
            .iter()
            .any(|x| x.is_nan() || *x <= 0.0)
        {
            return fail("bandwidth_hz and carrier_hz must be positive".into());
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_figure_db.is_finite() {
            return fail("tx_power_dbm and noise_figure_db must be finite".into());
        }
        let pl = &self.pathloss;
        if pl.min_distance_m.is_nan()
            || pl.min_distance_m <= 0.0
            || pl.shadowing_std_db.is_nan()
            || pl.shadowing_std_db < 0.0
        {
            return fail(
                "pathloss.min_distance_m must be positive, shadowing_std_db nonnegative".into(),
            );
        }
        if self.ap_placement == ApPlacement::Grid && grid_side(self.num_aps).is_none() {
            return fail(format!(
                "grid AP placement needs a perfect-square number of APs (got {})",
                self.num_aps
            ));
        }
        Ok(())
    }

    /// Total number of infrastructure antennas `M = N L`.
    pub fn total_antennas(&self) -> usize {
        self.num_aps * self.antennas_per_ap
    }

    /// Receiver noise power in dBm.
    pub fn noise_power_dbm(&self) -> f64 {
        THERMAL_NOISE_DBM_PER_HZ + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    /// Per-user power budget `P` in mW.
    pub fn power_budget_mw(&self) -> f64 {
        dbm_to_mw(self.tx_power_dbm)
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

fn grid_side(n: usize) -> Option<usize> {
    let side = (n as f64).sqrt().round() as usize;
    (side * side == n).then_some(side)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGeometry {
    pub ap_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    pub drop_index: u64,
    /// Seed of this drop; shadowing and channel streams derive from it.
    pub drop_seed: u64,
}

/// Places APs and drops users for one realization of the network.
pub fn generate_drop(config: &ScenarioConfig, drop_index: u64) -> Result<NetworkGeometry> {
    config.validate()?;
    let side = config.area_side_m;
    let seed = rng::drop_seed(config.seed, drop_index);

    let ap_positions = match config.ap_placement {
        ApPlacement::Grid => {
            let per_side = grid_side(config.num_aps).expect("validated");
            let spacing = side / per_side as f64;
            let mut pos = Vec::with_capacity(config.num_aps);
            for row in 0..per_side {
                for col in 0..per_side {
                    pos.push([spacing * (col as f64 + 0.5), spacing * (row as f64 + 0.5)]);
                }
            }
            pos
        }
        ApPlacement::Uniform => {
            let mut r = rng::stream(seed, rng::STREAM_AP_PLACEMENT);
            (0..config.num_aps)
                .map(|_| [r.random::<f64>() * side, r.random::<f64>() * side])
                .collect()
        }
    };

    let mut r = rng::stream(seed, rng::STREAM_USERS);
    let user_positions = (0..config.num_users)
        .map(|_| [r.random::<f64>() * side, r.random::<f64>() * side])
        .collect();

    Ok(NetworkGeometry {
        ap_positions,
        user_positions,
        drop_index,
        drop_seed: seed,
    })
}

/// Noise-normalized large-scale gains, `beta[(l, k)]` for AP `l` and user `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleCoefficients {
    pub beta: DMatrix<f64>,
}

impl LargeScaleCoefficients {
    pub fn new(beta: DMatrix<f64>) -> Result<Self> {
        if beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Input(
                "large-scale gains must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { beta })
    }

    pub fn num_aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.beta.ncols()
    }

    pub fn get(&self, ap: usize, user: usize) -> f64 {
        self.beta[(ap, user)]
    }
}

fn distance(a: [f64; 2], b: [f64; 2], wrap: Option<f64>) -> f64 {
    let mut dx = (a[0] - b[0]).abs();
    let mut dy = (a[1] - b[1]).abs();
    if let Some(side) = wrap {
        dx = dx.min(side - dx);
        dy = dy.min(side - dy);
    }
    dx.hypot(dy)
}

pub fn compute_large_scale(
    geometry: &NetworkGeometry,
    config: &ScenarioConfig,
) -> Result<LargeScaleCoefficients> {
    if geometry.ap_positions.len() != config.num_aps
        || geometry.user_positions.len() != config.num_users
    {
        return Err(Error::Input(
            "geometry does not match the scenario config".into(),
        ));
    }
    let noise_dbm = config.noise_power_dbm();
    let wrap = config.wrap_around.then_some(config.area_side_m);
    let pl = &config.pathloss;
    let mut shadow = rng::stream(geometry.drop_seed, rng::STREAM_SHADOWING);

    // Column-major fill: shadowing draws are ordered by (user, AP).
    let mut beta = DMatrix::zeros(config.num_aps, config.num_users);
    for k in 0..config.num_users {
        for l in 0..config.num_aps {
            let d = distance(geometry.ap_positions[l], geometry.user_positions[k], wrap);
            let z: f64 = StandardNormal.sample(&mut shadow);
            let gain_db = pl.gain_db(d) + pl.shadowing_std_db * z;
            beta[(l, k)] = 10f64.powf((gain_db - noise_dbm) / 10.0);
        }
    }
    LargeScaleCoefficients::new(beta)
}

/// Indices of the `q` strongest APs for every user, sorted ascending.
/// Ties go to the lower AP index.
pub fn assign_clusters(beta: &LargeScaleCoefficients, q: usize) -> Result<Vec<Vec<usize>>> {
    let num_aps = beta.num_aps();
    if q == 0 || q > num_aps {
        return Err(Error::Argument(format!(
            "cluster size {q} outside 1..={num_aps}"
        )));
    }
    let clusters = (0..beta.num_users())
        .map(|k| {
            let mut order: Vec<usize> = (0..num_aps).collect();
            order.sort_by(|&a, &b| beta.get(b, k).total_cmp(&beta.get(a, k)).then(a.cmp(&b)));
            let mut chosen = order[..q].to_vec();
            chosen.sort_unstable();
            chosen
        })
        .collect();
    Ok(clusters)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsiCase {
    /// Case (i): beamformers computed with full CSI sharing inside each user-centric cluster.
    #[serde(alias = "centralized-clustered")]
    Centralized,
    /// Case (ii): every AP computes its blocks from its own local CSI.
    #[serde(alias = "distributed-local")]
    Distributed,
    /// Case (iii): one serving AP per user, local CSI only.
    SmallCells,
}

impl CsiCase {
    pub const ALL: [CsiCase; 3] = [
        CsiCase::Centralized,
        CsiCase::Distributed,
        CsiCase::SmallCells,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CsiCase::Centralized => "centralized",
            CsiCase::Distributed => "distributed",
            CsiCase::SmallCells => "small-cells",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Serving clusters and per-AP CSI visibility.
///
/// AP `l` acquires the instantaneous channels of the users it serves, so
/// `knowledge_mask[l] = { k : l in L_k }`. In the centralized case a cluster
/// pools the knowledge of its APs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiStructure {
    pub case: CsiCase,
    pub serving_sets: Vec<Vec<usize>>,
    pub knowledge_mask: Vec<Vec<usize>>,
    #[serde(skip)]
    serves: Vec<Vec<bool>>,
}

impl CsiStructure {
    pub fn num_aps(&self) -> usize {
        self.knowledge_mask.len()
    }

    pub fn num_users(&self) -> usize {
        self.serving_sets.len()
    }

    /// Whether AP `l` serves (and therefore knows the channel of) user `k`.
    pub fn serves(&self, ap: usize, user: usize) -> bool {
        self.serves[ap][user]
    }

    /// Position of `ap` inside `L_k`, if it serves `user`.
    pub fn slot(&self, ap: usize, user: usize) -> Option<usize> {
        self.serving_sets[user].iter().position(|&l| l == ap)
    }

    /// Whether the beamformer of `user` may use the channel `h_{ap,other}`.
    pub fn visible_to(&self, user: usize, ap: usize, other: usize) -> bool {
        match self.case {
            CsiCase::Centralized => self.serves(ap, user) && self.serves(ap, other),
            CsiCase::Distributed | CsiCase::SmallCells => self.serves(ap, other),
        }
    }
}

pub fn build_csi_structure(
    case: CsiCase,
    serving_sets: Vec<Vec<usize>>,
    num_aps: usize,
) -> Result<CsiStructure> {
    let mut serves = vec![vec![false; serving_sets.len()]; num_aps];
    for (k, set) in serving_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::Input(format!("user {k} has an empty serving set")));
        }
        if case == CsiCase::SmallCells && set.len() != 1 {
            return Err(Error::Input(format!(
                "small cells need exactly one serving AP per user (user {k} has {})",
                set.len()
            )));
        }
        for &l in set {
            if l >= num_aps {
                return Err(Error::Input(format!("user {k} served by unknown AP {l}")));
            }
            if serves[l][k] {
                return Err(Error::Input(format!("AP {l} listed twice for user {k}")));
            }
            serves[l][k] = true;
        }
    }
    let knowledge_mask = serves
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &s)| s)
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    Ok(CsiStructure {
        case,
        serving_sets,
        knowledge_mask,
        serves,
    })
}

impl CsiStructure {
    /// Rebuilds the lookup table after deserialization.
    pub fn rehydrate(self) -> Result<Self> {
        build_csi_structure(self.case, self.serving_sets, self.knowledge_mask.len())
    }
}
