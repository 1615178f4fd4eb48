//! Physical world construction: array responses, cascaded channels, priors,
//! and the JSON scenario configuration with unit-suffixed quantities.
//!
//! Angles are radians internally; degrees are accepted at every external
//! interface with an explicit `deg` suffix. Bound variances are reported in
//! deg^2 by scaling rad^2 with [`RAD2_TO_DEG2`].

use crate::numerics::{C64, CMatrix, CVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Conversion factor from rad^2 to deg^2.
pub const RAD2_TO_DEG2: f64 = (180.0 / PI) * (180.0 / PI);

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to parse scenario config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("missing required field: {0}")]
    MissingField(&'static str),
    #[error("quantity {value:?} has no unit tag (expected one of {expected})")]
    UnitMissing { value: String, expected: &'static str },
    #[error("quantity {value:?} has unsupported unit {unit:?} (expected one of {expected})")]
    BadUnit {
        value: String,
        unit: String,
        expected: &'static str,
    },
    #[error("quantity {0:?} is not a number with a unit suffix")]
    Malformed(String),
    #[error("scenario requires K < min(M, N): K = {k}, M = {m}, N = {n}")]
    TooManyUsers { k: usize, m: usize, n: usize },
    #[error("invalid value: {0}")]
    Invalid(String),
}

/// Converts a power ratio in dB to linear scale.
pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

/// Converts dBm to watts.
pub fn dbm_to_watts(x_dbm: f64) -> f64 {
    10f64.powf((x_dbm - 30.0) / 10.0)
}

fn parse_quantity(text: &str, expected: &'static str) -> Result<(f64, String), ScenarioError> {
    let cleaned = text.replace('\u{2212}', "-");
    let mut parts = cleaned.split_whitespace();
    let number = parts
        .next()
        .ok_or_else(|| ScenarioError::Malformed(text.to_string()))?;
    let value: f64 = number
        .parse()
        .map_err(|_| ScenarioError::Malformed(text.to_string()))?;
    let unit = parts
        .next()
        .ok_or_else(|| ScenarioError::UnitMissing {
            value: text.to_string(),
            expected,
        })?
        .to_string();
    if parts.next().is_some() {
        return Err(ScenarioError::Malformed(text.to_string()));
    }
    Ok((value, unit))
}

/// Parses `"15 dBm"` or `"0.03 W"` into watts.
pub fn parse_power(text: &str) -> Result<f64, ScenarioError> {
    let (value, unit) = parse_quantity(text, "dBm, W")?;
    match unit.as_str() {
        "dBm" => Ok(dbm_to_watts(value)),
        "W" => Ok(value),
        _ => Err(ScenarioError::BadUnit {
            value: text.to_string(),
            unit,
            expected: "dBm, W",
        }),
    }
}

/// Parses `"-56 dB"` or `"2.5e-6 linear"` into a linear power ratio.
pub fn parse_ratio(text: &str) -> Result<f64, ScenarioError> {
    let (value, unit) = parse_quantity(text, "dB, linear")?;
    match unit.as_str() {
        "dB" => Ok(db_to_linear(value)),
        "linear" => Ok(value),
        _ => Err(ScenarioError::BadUnit {
            value: text.to_string(),
            unit,
            expected: "dB, linear",
        }),
    }
}

/// Parses `"70 deg"` or `"1.22 rad"` into radians.
pub fn parse_angle(text: &str) -> Result<f64, ScenarioError> {
    let (value, unit) = parse_quantity(text, "deg, rad")?;
    match unit.as_str() {
        "deg" => Ok(value.to_radians()),
        "rad" => Ok(value),
        _ => Err(ScenarioError::BadUnit {
            value: text.to_string(),
            unit,
            expected: "deg, rad",
        }),
    }
}

/// Uniform rectangular RIS layout. Element `n` (0-based) sits in column
/// `n mod n_col`, which is the only coordinate entering the azimuth response.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ArrayGeometry {
    pub n_row: usize,
    pub n_col: usize,
    /// Element spacing over carrier wavelength (d / omega), default 0.5.
    pub spacing_ratio: f64,
}

impl ArrayGeometry {
    pub fn new(n_row: usize, n_col: usize) -> Self {
        Self {
            n_row,
            n_col,
            spacing_ratio: 0.5,
        }
    }

    pub fn count(&self) -> usize {
        self.n_row * self.n_col
    }

    /// Phase constant tau = 2 pi d / omega.
    pub fn tau(&self) -> f64 {
        2.0 * PI * self.spacing_ratio
    }

    /// Lateral index v(n) = mod(n, n_col) for 0-based n.
    pub fn lateral_index(&self, n: usize) -> f64 {
        (n % self.n_col) as f64
    }
}

/// RIS array response v(eta): entry n is exp(j tau cos(eta) v(n)).
pub fn array_response(eta: f64, geom: &ArrayGeometry) -> CVector {
    let tau = geom.tau();
    let c = eta.cos();
    CVector::from_fn(geom.count(), |n, _| {
        C64::from_polar(1.0, tau * c * geom.lateral_index(n))
    })
}

/// Derivative of the array response with respect to eta.
pub fn array_response_derivative(eta: f64, geom: &ArrayGeometry) -> CVector {
    let tau = geom.tau();
    let c = eta.cos();
    let s = eta.sin();
    CVector::from_fn(geom.count(), |n, _| {
        let v = geom.lateral_index(n);
        C64::new(0.0, -tau * s * v) * C64::from_polar(1.0, tau * c * v)
    })
}

/// Cascaded sensing map U(eta) = G diag(v(eta)): column n is G[:, n] * v_n.
pub fn sensing_matrix(eta: f64, g: &CMatrix, geom: &ArrayGeometry) -> CMatrix {
    scale_columns(g, &array_response(eta, geom))
}

/// Derivative dU/d eta = G diag(dv/d eta).
pub fn sensing_matrix_derivative(eta: f64, g: &CMatrix, geom: &ArrayGeometry) -> CMatrix {
    scale_columns(g, &array_response_derivative(eta, geom))
}

fn scale_columns(g: &CMatrix, diag: &CVector) -> CMatrix {
    assert_eq!(
        g.ncols(),
        diag.len(),
        "channel has {} columns but response has {} entries",
        g.ncols(),
        diag.len()
    );
    let mut out = g.clone();
    for (n, mut col) in out.column_iter_mut().enumerate() {
        col *= diag[n];
    }
    out
}

/// One uplink communication user: azimuth towards the RIS, complex fading
/// coefficient of the user-RIS link, and transmit power in watts.
#[derive(Debug, Clone)]
pub struct CommUser {
    pub phi: f64,
    pub beta: C64,
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingKnowledge {
    Known,
    Unknown,
}

/// The sensing user: pilot power, ground-truth angle and fading coefficient
/// (the latter used only to simulate received signals).
#[derive(Debug, Clone)]
pub struct SensingUser {
    pub power: f64,
    pub alpha_true: C64,
    pub fading: FadingKnowledge,
    pub eta_true: f64,
}

/// Immutable world a solver runs against.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub bs_antennas: usize,
    pub geometry: ArrayGeometry,
    /// RIS-to-BS channel, M x N, shared by all users.
    pub g: CMatrix,
    pub comm_users: Vec<CommUser>,
    pub sensing: SensingUser,
    /// Noise power sigma_n^2 in watts.
    pub noise_power: f64,
    /// SINR threshold Gamma, linear.
    pub sinr_threshold: f64,
    /// Rician factor zeta of the sensing channel (0 = pure LoS).
    pub rician_zeta: f64,
    pub coherence_symbols: usize,
    pub seed: u64,
    /// Amplitude scale g of the fading prior alpha = g * CN(1, 1).
    pub alpha_prior_scale: f64,
    prior: PriorConfig,
}

impl Scenario {
    pub fn n_elements(&self) -> usize {
        self.geometry.count()
    }

    pub fn num_users(&self) -> usize {
        self.comm_users.len()
    }

    /// Per-user normalized threshold Gamma_k = Gamma / p_k.
    pub fn gamma_k(&self, k: usize) -> f64 {
        self.sinr_threshold / self.comm_users[k].power
    }

    /// Cascaded channel matrix H_k = beta_k G diag(v(phi_k)).
    pub fn comm_matrix(&self, k: usize) -> CMatrix {
        comm_matrix(k, self)
    }

    /// Constructs the eta prior (and the alpha lattice when fading is
    /// unknown) described by the scenario config.
    pub fn prior_grid(&self) -> PriorGrid {
        let support = self
            .prior
            .support_radians()
            .expect("validated at load time");
        let len = self.prior.nodes();
        let mut grid = PriorGrid::uniform(support.0, support.1, len);
        if self.sensing.fading == FadingKnowledge::Unknown {
            grid = grid.with_alpha_lattice(
                self.alpha_prior_scale,
                self.prior.alpha_lattice_side(),
                self.prior.alpha_lattice_sigmas(),
            );
        }
        grid
    }

    pub fn prior_support(&self) -> (f64, f64) {
        self.prior.support_radians().expect("validated at load time")
    }
}

/// Cascaded channel matrix of the k-th communication user.
pub fn comm_matrix(k: usize, scen: &Scenario) -> CMatrix {
    let user = &scen.comm_users[k];
    let mut h = sensing_matrix(user.phi, &scen.g, &scen.geometry);
    h *= user.beta;
    h
}

/// Draws one complex Gaussian CN(0, variance) sample.
pub fn sample_cn(rng: &mut impl Rng, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Samples the sensing channel under the Rician refinement
/// alpha (sqrt(1/(1+zeta)) U(eta) + sqrt(zeta/(1+zeta)) G diag(v~)),
/// with v~ entries CN(0, 1). At zeta = 0 this is exactly alpha U(eta) and
/// consumes no randomness.
pub fn sample_rician_sensing_channel(
    eta: f64,
    zeta: f64,
    alpha: C64,
    g: &CMatrix,
    geom: &ArrayGeometry,
    rng: &mut impl Rng,
) -> Result<CMatrix, ScenarioError> {
    if zeta < 0.0 {
        return Err(ScenarioError::Invalid(format!(
            "Rician factor must be nonnegative, got {zeta}"
        )));
    }
    let mut los = sensing_matrix(eta, g, geom);
    if zeta == 0.0 {
        los *= alpha;
        return Ok(los);
    }
    let los_amp = (1.0 / (1.0 + zeta)).sqrt();
    let nlos_amp = (zeta / (1.0 + zeta)).sqrt();
    let scatter = CVector::from_fn(geom.count(), |_, _| sample_cn(rng, 1.0));
    let mut out = los.scale(los_amp) + scale_columns(g, &scatter).scale(nlos_amp);
    out *= alpha;
    Ok(out)
}

// ---------------------------------------------------------------------------
// RIS reflection pattern
// ---------------------------------------------------------------------------

/// Whether every coefficient lies on the unit circle or merely inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModulusState {
    Unit,
    Bounded,
}

/// RIS reflection coefficients with their modulus state.
#[derive(Debug, Clone)]
pub struct RisPattern {
    coeffs: CVector,
    modulus: ModulusState,
}

impl RisPattern {
    /// Wraps a unit-modulus vector; panics if any entry deviates by more
    /// than 1e-9 from unit modulus.
    pub fn unit(coeffs: CVector) -> Self {
        for (n, c) in coeffs.iter().enumerate() {
            assert!(
                (c.norm() - 1.0).abs() <= 1e-9,
                "entry {n} has modulus {} (expected 1)",
                c.norm()
            );
        }
        Self {
            coeffs,
            modulus: ModulusState::Unit,
        }
    }

    /// Wraps a bounded-modulus vector (|x_n| <= 1 + 1e-9).
    pub fn bounded(coeffs: CVector) -> Self {
        for (n, c) in coeffs.iter().enumerate() {
            assert!(
                c.norm() <= 1.0 + 1e-9,
                "entry {n} has modulus {} (expected <= 1)",
                c.norm()
            );
        }
        Self {
            coeffs,
            modulus: ModulusState::Bounded,
        }
    }

    pub fn from_phases(phases: &[f64]) -> Self {
        Self {
            coeffs: CVector::from_iterator(
                phases.len(),
                phases.iter().map(|&t| C64::from_polar(1.0, t)),
            ),
            modulus: ModulusState::Unit,
        }
    }

    pub fn random_unit(n: usize, rng: &mut impl Rng) -> Self {
        Self::from_phases(
            &(0..n)
                .map(|_| rng.gen_range(-PI..PI))
                .collect::<Vec<_>>(),
        )
    }

    /// Projects every entry onto the unit circle, exp(j arg x_n), with the
    /// convention arg(0) = 0.
    pub fn project_unit(&self) -> Self {
        Self {
            coeffs: project_unit_vector(&self.coeffs),
            modulus: ModulusState::Unit,
        }
    }

    pub fn coeffs(&self) -> &CVector {
        &self.coeffs
    }

    pub fn modulus(&self) -> ModulusState {
        self.modulus
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// exp(j arg x) entrywise with arg(0) = 0.
pub fn project_unit_vector(x: &CVector) -> CVector {
    x.map(|c| {
        if c == C64::new(0.0, 0.0) {
            C64::new(1.0, 0.0)
        } else {
            c / c.norm()
        }
    })
}

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

/// Alpha lattice for the unknown-fading case: S points on a real x imag
/// grid with weights from the CN(1, 1) prior, plus per-node conditional
/// eta weights and prior Fisher information.
#[derive(Debug, Clone)]
pub struct AlphaGrid {
    pub nodes: Vec<C64>,
    pub weights: Vec<f64>,
    /// Conditional eta weights w_{i,j}; row i sums to 1.
    pub eta_weights_cond: Vec<Vec<f64>>,
    /// Prior Fisher information of eta given alpha_i.
    pub fip: Vec<f64>,
}

/// Discrete prior over the azimuth angle (and optionally the fading
/// coefficient) with quadrature weights. Expectations over the prior are
/// evaluated as weighted sums over these nodes, never by sampling.
#[derive(Debug, Clone)]
pub struct PriorGrid {
    pub eta_nodes: Vec<f64>,
    pub eta_weights: Vec<f64>,
    /// Fisher information of the eta prior itself (x-independent). Zero for
    /// a uniform prior: the log-density derivative vanishes in the interior
    /// and the boundary spikes are excluded.
    pub fip: f64,
    pub alpha: Option<AlphaGrid>,
}

impl PriorGrid {
    /// Uniform prior over [lo, hi] radians with `len` equally spaced nodes.
    pub fn uniform(lo: f64, hi: f64, len: usize) -> Self {
        assert!(len >= 1 && hi > lo, "prior support must be nonempty");
        let step = if len > 1 { (hi - lo) / (len - 1) as f64 } else { 0.0 };
        let eta_nodes: Vec<f64> = (0..len).map(|i| lo + step * i as f64).collect();
        let eta_weights = vec![1.0 / len as f64; len];
        Self {
            eta_nodes,
            eta_weights,
            fip: 0.0,
            alpha: None,
        }
    }

    /// Arbitrary weighted grid; weights are normalized to sum to 1.
    pub fn weighted(eta_nodes: Vec<f64>, mut eta_weights: Vec<f64>) -> Self {
        assert_eq!(eta_nodes.len(), eta_weights.len());
        assert!(
            eta_nodes.windows(2).all(|w| w[1] > w[0]),
            "eta nodes must be strictly increasing"
        );
        assert!(eta_weights.iter().all(|&w| w >= 0.0));
        let total: f64 = eta_weights.iter().sum();
        assert!(total > 0.0, "at least one weight must be positive");
        for w in eta_weights.iter_mut() {
            *w /= total;
        }
        Self {
            eta_nodes,
            eta_weights,
            fip: 0.0,
            alpha: None,
        }
    }

    /// Attaches an alpha lattice: `side x side` points covering mean 1 plus
    /// minus `span_sigmas` per-component standard deviations of CN(1, 1),
    /// scaled by the pathloss amplitude `scale`. Conditional eta weights
    /// start independent (copies of the marginal), FIP per node is 0.
    pub fn with_alpha_lattice(mut self, scale: f64, side: usize, span_sigmas: f64) -> Self {
        assert!(side >= 1);
        // CN(1, 1): each real component is N(1 or 0, 1/2).
        let sigma_comp = (0.5_f64).sqrt();
        let half_span = span_sigmas * sigma_comp;
        let axis: Vec<f64> = if side == 1 {
            vec![0.0]
        } else {
            (0..side)
                .map(|i| -half_span + 2.0 * half_span * i as f64 / (side - 1) as f64)
                .collect()
        };
        let mut nodes = Vec::with_capacity(side * side);
        let mut weights = Vec::with_capacity(side * side);
        for im in &axis {
            for re in &axis {
                let c = C64::new(1.0 + re, *im);
                nodes.push(c * scale);
                // CN(1,1) density up to normalization: exp(-|c - 1|^2).
                weights.push((-(re * re + im * im)).exp());
            }
        }
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        let s = nodes.len();
        self.alpha = Some(AlphaGrid {
            nodes,
            weights,
            eta_weights_cond: vec![self.eta_weights.clone(); s],
            fip: vec![self.fip; s],
        });
        self
    }

    pub fn len(&self) -> usize {
        self.eta_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta_nodes.is_empty()
    }

    /// Validates the invariants: nonnegative weights summing to one and
    /// strictly increasing nodes.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let check_weights = |w: &[f64], what: &str| -> Result<(), ScenarioError> {
            if w.iter().any(|&x| x < 0.0) {
                return Err(ScenarioError::Invalid(format!("negative {what} weight")));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ScenarioError::Invalid(format!(
                    "{what} weights sum to {sum}, expected 1"
                )));
            }
            Ok(())
        };
        if !self.eta_nodes.windows(2).all(|w| w[1] > w[0]) {
            return Err(ScenarioError::Invalid(
                "eta nodes must be strictly increasing".into(),
            ));
        }
        check_weights(&self.eta_weights, "eta")?;
        if let Some(alpha) = &self.alpha {
            check_weights(&alpha.weights, "alpha")?;
            for row in &alpha.eta_weights_cond {
                check_weights(row, "conditional eta")?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RisConfig {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_spacing")]
    pub spacing_ratio: f64,
}

fn default_spacing() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CommUserConfig {
    pub angle: String,
    #[serde(default)]
    pub power: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SensingConfig {
    #[serde(default)]
    pub angle_true: Option<String>,
    #[serde(default)]
    pub power: Option<String>,
    #[serde(default)]
    pub fading: Option<FadingKnowledge>,
    #[serde(default)]
    pub rician_factor: Option<f64>,
    /// Complex factor c of the true fading alpha = g * c, with g the linear
    /// pathloss amplitude of the user-RIS link.
    #[serde(default)]
    pub alpha_factor: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PriorConfig {
    #[serde(default)]
    pub eta_support: Option<[String; 2]>,
    #[serde(default)]
    pub eta_nodes: Option<usize>,
    #[serde(default)]
    pub alpha_lattice_side: Option<usize>,
    #[serde(default)]
    pub alpha_lattice_sigmas: Option<f64>,
}

impl PriorConfig {
    fn support_radians(&self) -> Result<(f64, f64), ScenarioError> {
        match &self.eta_support {
            Some([lo, hi]) => {
                let lo = parse_angle(lo)?;
                let hi = parse_angle(hi)?;
                if hi <= lo {
                    return Err(ScenarioError::Invalid(
                        "prior support must have hi > lo".into(),
                    ));
                }
                Ok((lo, hi))
            }
            None => Ok((40f64.to_radians(), 80f64.to_radians())),
        }
    }

    fn nodes(&self) -> usize {
        self.eta_nodes.unwrap_or(101)
    }

    fn alpha_lattice_side(&self) -> usize {
        self.alpha_lattice_side.unwrap_or(11)
    }

    fn alpha_lattice_sigmas(&self) -> f64 {
        self.alpha_lattice_sigmas.unwrap_or(3.0)
    }
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            eta_support: None,
            eta_nodes: None,
            alpha_lattice_side: None,
            alpha_lattice_sigmas: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    /// i.i.d. CN(0, pathloss) entries drawn from the scenario seed.
    SeededGaussian,
    /// Deterministic full-rank phase ramp, for reproducible goldens.
    LosLike,
}

/// Declarative scenario description. Every field except `seed` defaults to
/// the standard setup: M = 8 antennas, 10 x 10 RIS at half-wavelength
/// spacing, three communication users at 110/120/130 degrees transmitting
/// 15 dBm, pilot 15 dBm, noise -90 dBm, SINR threshold 10 dB, user-RIS
/// pathloss -56 dB, RIS-BS pathloss -70 dB, uniform eta prior on
/// [40, 80] degrees with the truth at 70 degrees.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default)]
    pub bs_antennas: Option<usize>,
    #[serde(default)]
    pub ris: Option<RisConfig>,
    #[serde(default)]
    pub pathloss_user_ris: Option<String>,
    #[serde(default)]
    pub pathloss_ris_bs: Option<String>,
    #[serde(default)]
    pub noise_power: Option<String>,
    #[serde(default)]
    pub sinr_threshold: Option<String>,
    #[serde(default)]
    pub comm_users: Option<Vec<CommUserConfig>>,
    #[serde(default)]
    pub sensing: Option<SensingConfig>,
    #[serde(default)]
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub channel: Option<ChannelKind>,
    #[serde(default)]
    pub coherence_symbols: Option<usize>,
}

impl ScenarioConfig {
    pub fn with_seed(seed: u64) -> Self {
        serde_json::from_str(&format!("{{\"seed\": {seed}}}")).expect("minimal config")
    }

    /// Desk-scale profile: 6 x 6 RIS, 4 antennas, two communication users,
    /// 41 prior nodes, and a 5 dB SINR target (the default 10 dB exceeds
    /// what a 36-element aperture can deliver to two users). Keeps
    /// runtimes CI-friendly.
    pub fn apply_desk_profile(&mut self) {
        self.bs_antennas = Some(4);
        if self.sinr_threshold.is_none() {
            self.sinr_threshold = Some("5 dB".into());
        }
        self.ris = Some(RisConfig {
            rows: 6,
            cols: 6,
            spacing_ratio: self.ris.as_ref().map_or(0.5, |r| r.spacing_ratio),
        });
        if let Some(users) = &mut self.comm_users {
            users.truncate(2);
        } else {
            self.comm_users = Some(vec![
                CommUserConfig {
                    angle: "110 deg".into(),
                    power: None,
                },
                CommUserConfig {
                    angle: "130 deg".into(),
                    power: None,
                },
            ]);
        }
        let mut prior = self.prior.clone().unwrap_or_default();
        prior.eta_nodes = Some(prior.eta_nodes.unwrap_or(101).min(41));
        self.prior = Some(prior);
    }

    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        let m = self.bs_antennas.unwrap_or(8);
        let ris = self.ris.clone().unwrap_or(RisConfig {
            rows: 10,
            cols: 10,
            spacing_ratio: 0.5,
        });
        if m == 0 || ris.rows == 0 || ris.cols == 0 {
            return Err(ScenarioError::Invalid(
                "antenna and element counts must be positive".into(),
            ));
        }
        if ris.spacing_ratio <= 0.0 {
            return Err(ScenarioError::Invalid("spacing ratio must be positive".into()));
        }
        let geometry = ArrayGeometry {
            n_row: ris.rows,
            n_col: ris.cols,
            spacing_ratio: ris.spacing_ratio,
        };
        let n = geometry.count();

        let pl_user = parse_ratio(self.pathloss_user_ris.as_deref().unwrap_or("-56 dB"))?;
        let pl_bs = parse_ratio(self.pathloss_ris_bs.as_deref().unwrap_or("-70 dB"))?;
        let noise_power = parse_power(self.noise_power.as_deref().unwrap_or("-90 dBm"))?;
        let sinr_threshold = parse_ratio(self.sinr_threshold.as_deref().unwrap_or("10 dB"))?;
        if noise_power <= 0.0 {
            return Err(ScenarioError::Invalid("noise power must be positive".into()));
        }
        if sinr_threshold < 0.0 {
            return Err(ScenarioError::Invalid(
                "SINR threshold must be nonnegative".into(),
            ));
        }

        let user_cfgs = self.comm_users.clone().unwrap_or_else(|| {
            ["110 deg", "120 deg", "130 deg"]
                .iter()
                .map(|a| CommUserConfig {
                    angle: (*a).to_string(),
                    power: None,
                })
                .collect()
        });
        let k = user_cfgs.len();
        if k >= m.min(n) {
            return Err(ScenarioError::TooManyUsers { k, m, n });
        }

        let amp_user = pl_user.sqrt();
        let mut beta_rng = ChaCha8Rng::seed_from_u64(self.seed);
        beta_rng.set_stream(2);
        let mut comm_users = Vec::with_capacity(k);
        for cfg in &user_cfgs {
            let phi = parse_angle(&cfg.angle)?;
            let power = parse_power(cfg.power.as_deref().unwrap_or("15 dBm"))?;
            if power <= 0.0 {
                return Err(ScenarioError::Invalid("user power must be positive".into()));
            }
            let phase = beta_rng.gen_range(-PI..PI);
            comm_users.push(CommUser {
                phi,
                beta: C64::from_polar(amp_user, phase),
                power,
            });
        }

        let sensing_cfg = self.sensing.clone().unwrap_or(SensingConfig {
            angle_true: None,
            power: None,
            fading: None,
            rician_factor: None,
            alpha_factor: None,
        });
        let eta_true = parse_angle(sensing_cfg.angle_true.as_deref().unwrap_or("70 deg"))?;
        let pilot_power = parse_power(sensing_cfg.power.as_deref().unwrap_or("15 dBm"))?;
        if pilot_power <= 0.0 {
            return Err(ScenarioError::Invalid("pilot power must be positive".into()));
        }
        let rician_zeta = sensing_cfg.rician_factor.unwrap_or(0.0);
        if rician_zeta < 0.0 {
            return Err(ScenarioError::Invalid(
                "Rician factor must be nonnegative".into(),
            ));
        }
        let alpha_factor = sensing_cfg
            .alpha_factor
            .map(|[re, im]| C64::new(re, im))
            .unwrap_or(C64::new(0.7, 0.7));

        let channel = self.channel.unwrap_or(ChannelKind::SeededGaussian);
        let g = match channel {
            ChannelKind::SeededGaussian => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(1);
                CMatrix::from_fn(m, n, |_, _| sample_cn(&mut rng, pl_bs))
            }
            ChannelKind::LosLike => {
                let amp = pl_bs.sqrt();
                let denom = (m + n) as f64;
                CMatrix::from_fn(m, n, |i, j| {
                    C64::from_polar(amp, 2.0 * PI * ((i + 1) * (j + 1)) as f64 / denom)
                })
            }
        };

        let prior = self.prior.clone().unwrap_or_default();
        prior.support_radians()?;

        Ok(Scenario {
            bs_antennas: m,
            geometry,
            g,
            comm_users,
            sensing: SensingUser {
                power: pilot_power,
                alpha_true: alpha_factor * amp_user,
                fading: sensing_cfg.fading.unwrap_or(FadingKnowledge::Known),
                eta_true,
            },
            noise_power,
            sinr_threshold,
            rician_zeta,
            coherence_symbols: self.coherence_symbols.unwrap_or(64),
            seed: self.seed,
            alpha_prior_scale: amp_user,
            prior,
        })
    }
}

/// Parses a JSON scenario configuration and builds the world.
pub fn load_scenario(config_text: &str) -> Result<Scenario, ScenarioError> {
    let config: ScenarioConfig = serde_json::from_str(config_text)?;
    config.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::RngCore;

    #[test]
    fn array_response_broadside_is_all_ones() {
        let geom = ArrayGeometry::new(3, 4);
        let v = array_response(PI / 2.0, &geom);
        for e in v.iter() {
            assert_relative_eq!(e.re, 1.0, epsilon = 1e-12);
            assert_relative_eq!(e.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn array_response_single_element() {
        let geom = ArrayGeometry::new(1, 1);
        let v = array_response(0.3, &geom);
        assert_eq!(v.len(), 1);
        assert_relative_eq!(v[0].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn array_response_two_by_two_hand_case() {
        let geom = ArrayGeometry::new(2, 2);
        let v = array_response(0.0, &geom);
        for (n, expect) in [0.0, 1.0, 0.0, 1.0].iter().enumerate() {
            let want = C64::from_polar(1.0, PI * expect);
            assert!((v[n] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn sensing_matrix_identity_channel_is_diagonal_response() {
        let geom = ArrayGeometry::new(1, 4);
        let g = CMatrix::identity(4, 4);
        let u = sensing_matrix(0.8, &g, &geom);
        let v = array_response(0.8, &geom);
        for n in 0..4 {
            assert!((u[(n, n)] - v[n]).norm() < 1e-15);
        }
    }

    #[test]
    fn sensing_matrix_diag_commutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let geom = ArrayGeometry::new(2, 3);
        let g = CMatrix::from_fn(4, 6, |_, _| sample_cn(&mut rng, 1.0));
        let x = CVector::from_fn(6, |_, _| sample_cn(&mut rng, 1.0));
        let eta = 1.1;
        let lhs = sensing_matrix(eta, &g, &geom) * &x;
        // U(eta) x = G diag(x) v(eta)
        let rhs = scale_columns(&g, &x) * array_response(eta, &geom);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn sensing_matrix_broadside_equals_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let geom = ArrayGeometry::new(2, 2);
        let g = CMatrix::from_fn(3, 4, |_, _| sample_cn(&mut rng, 1.0));
        let u = sensing_matrix(PI / 2.0, &g, &geom);
        assert!((&u - &g).norm() < 1e-12);
    }

    #[test]
    fn derivative_vanishes_at_endfire() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let geom = ArrayGeometry::new(2, 3);
        let g = CMatrix::from_fn(2, 6, |_, _| sample_cn(&mut rng, 1.0));
        assert!(sensing_matrix_derivative(0.0, &g, &geom).norm() < 1e-12);
        assert!(sensing_matrix_derivative(PI, &g, &geom).norm() < 1e-12);
    }

    #[test]
    fn derivative_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let geom = ArrayGeometry::new(3, 3);
        let h = 1e-5;
        for _ in 0..100 {
            let g = CMatrix::from_fn(4, 9, |_, _| sample_cn(&mut rng, 1.0));
            let eta = rng.gen_range(0.2..PI - 0.2);
            let analytic = sensing_matrix_derivative(eta, &g, &geom);
            let fd = (sensing_matrix(eta + h, &g, &geom) - sensing_matrix(eta - h, &g, &geom))
                .unscale(2.0 * h);
            assert!((analytic - fd).norm() < 1e-6);
        }
    }

    #[test]
    fn derivative_zero_lateral_index_column() {
        let geom = ArrayGeometry::new(1, 1);
        let g = CMatrix::from_element(2, 1, C64::new(1.0, -1.0));
        assert!(sensing_matrix_derivative(0.7, &g, &geom).norm() < 1e-15);
    }

    #[test]
    fn comm_matrix_zero_beta_and_unit_beta() {
        let mut cfg = ScenarioConfig::with_seed(1);
        cfg.apply_desk_profile();
        let mut scen = cfg.build().unwrap();
        scen.comm_users[0].beta = C64::new(0.0, 0.0);
        assert!(comm_matrix(0, &scen).norm() == 0.0);
        scen.comm_users[1].beta = C64::new(1.0, 0.0);
        scen.comm_users[1].phi = PI / 2.0;
        assert!((comm_matrix(1, &scen) - &scen.g).norm() < 1e-12);
    }

    #[test]
    fn comm_matrix_linear_in_beta() {
        let cfg = ScenarioConfig::with_seed(2);
        let mut scen = cfg.build().unwrap();
        let h1 = comm_matrix(0, &scen);
        scen.comm_users[0].beta *= 2.0;
        let h2 = comm_matrix(0, &scen);
        assert!((h2 - h1.scale(2.0)).norm() < 1e-12);
    }

    #[test]
    fn rician_zero_factor_is_los_and_consumes_no_randomness() {
        let cfg = ScenarioConfig::with_seed(3);
        let scen = cfg.build().unwrap();
        let alpha = scen.sensing.alpha_true;
        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let ch = sample_rician_sensing_channel(
            scen.sensing.eta_true,
            0.0,
            alpha,
            &scen.g,
            &scen.geometry,
            &mut rng_a,
        )
        .unwrap();
        let los = sensing_matrix(scen.sensing.eta_true, &scen.g, &scen.geometry) * alpha;
        assert!((ch - los).norm() == 0.0);
        assert_eq!(rng_a.next_u64(), rng_b.next_u64());
    }

    #[test]
    fn rician_large_factor_suppresses_los() {
        assert!((1.0f64 / 101.0).sqrt() < 0.1);
    }

    #[test]
    fn rician_rejects_negative_factor() {
        let cfg = ScenarioConfig::with_seed(3);
        let scen = cfg.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_rician_sensing_channel(
            1.0,
            -0.5,
            C64::new(1.0, 0.0),
            &scen.g,
            &scen.geometry,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn rician_nlos_second_moment() {
        // Empirical variance of the scattered part over 1e4 draws should be
        // within 5% of |alpha|^2 zeta / (1 + zeta) per diagonal power unit.
        let mut cfg = ScenarioConfig::with_seed(4);
        cfg.apply_desk_profile();
        let scen = cfg.build().unwrap();
        let zeta = 2.0_f64;
        let alpha = C64::new(0.8, -0.3);
        let eta = scen.sensing.eta_true;
        let los = sensing_matrix(eta, &scen.g, &scen.geometry)
            * (alpha * (1.0 / (1.0 + zeta)).sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let trials = 10_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let ch = sample_rician_sensing_channel(
                eta,
                zeta,
                alpha,
                &scen.g,
                &scen.geometry,
                &mut rng,
            )
            .unwrap();
            acc += (ch - &los).norm_squared();
        }
        let measured = acc / trials as f64;
        let expected = alpha.norm_sqr() * zeta / (1.0 + zeta) * scen.g.norm_squared();
        assert!(
            (measured - expected).abs() / expected < 0.05,
            "measured {measured:.4e} expected {expected:.4e}"
        );
    }

    #[test]
    fn units_match_definitions() {
        assert_relative_eq!(dbm_to_watts(15.0), 0.0316227766, max_relative = 1e-9);
        assert_relative_eq!(db_to_linear(-56.0), 2.5119e-6, max_relative = 1e-4);
        assert_relative_eq!(parse_power("15 dBm").unwrap(), 0.0316227766, max_relative = 1e-9);
        assert_relative_eq!(parse_ratio("-56 dB").unwrap(), 2.5119e-6, max_relative = 1e-4);
    }

    #[test]
    fn minimal_config_matches_defaults() {
        let scen = load_scenario("{\"seed\": 7}").unwrap();
        assert_eq!(scen.bs_antennas, 8);
        assert_eq!(scen.geometry.n_row, 10);
        assert_eq!(scen.geometry.n_col, 10);
        assert_eq!(scen.n_elements(), 100);
        assert_eq!(scen.num_users(), 3);
        assert_relative_eq!(scen.noise_power, 1e-12, max_relative = 1e-9);
        assert_relative_eq!(scen.sinr_threshold, 10.0, max_relative = 1e-12);
        assert_relative_eq!(scen.sensing.power, 0.0316227766, max_relative = 1e-8);
        assert_relative_eq!(scen.comm_users[0].phi, 110f64.to_radians(), max_relative = 1e-12);
        assert_relative_eq!(scen.sensing.eta_true, 70f64.to_radians(), max_relative = 1e-12);
        for u in &scen.comm_users {
            assert_relative_eq!(u.beta.norm(), db_to_linear(-56.0).sqrt(), max_relative = 1e-12);
        }
        let var_target = db_to_linear(-70.0);
        let var_measured = scen.g.norm_squared() / (scen.g.len() as f64);
        assert!((var_measured - var_target).abs() / var_target < 0.2);
        let grid = scen.prior_grid();
        grid.validate().unwrap();
        assert_eq!(grid.len(), 101);
        assert!(grid.alpha.is_none());
    }

    #[test]
    fn config_rejects_missing_unit_and_too_many_users() {
        let err = load_scenario("{\"seed\": 1, \"noise_power\": \"-90\"}").unwrap_err();
        assert!(matches!(err, ScenarioError::UnitMissing { .. }));
        let cfg = r#"{"seed": 1, "bs_antennas": 2, "comm_users": [
            {"angle": "100 deg"}, {"angle": "110 deg"}, {"angle": "120 deg"}]}"#;
        assert!(matches!(
            load_scenario(cfg).unwrap_err(),
            ScenarioError::TooManyUsers { .. }
        ));
        assert!(load_scenario("{}").is_err());
    }

    #[test]
    fn unknown_fading_builds_alpha_lattice() {
        let cfg = r#"{"seed": 5, "sensing": {"fading": "unknown"}}"#;
        let scen = load_scenario(cfg).unwrap();
        let grid = scen.prior_grid();
        grid.validate().unwrap();
        let alpha = grid.alpha.as_ref().unwrap();
        assert_eq!(alpha.nodes.len(), 121);
        assert_eq!(alpha.eta_weights_cond.len(), 121);
        // Lattice center is the prior mean g * (1 + 0j).
        let center = alpha.nodes[60];
        assert_relative_eq!(center.re, scen.alpha_prior_scale, max_relative = 1e-9);
        assert_relative_eq!(center.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn los_like_channel_is_deterministic() {
        let cfg = r#"{"seed": 6, "channel": "los-like"}"#;
        let a = load_scenario(cfg).unwrap();
        let b = load_scenario(cfg).unwrap();
        assert!((a.g - b.g).norm() == 0.0);
    }

    #[test]
    fn project_unit_defines_arg_zero_as_one() {
        let x = CVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(0.0, -2.0)]);
        let p = project_unit_vector(&x);
        assert_eq!(p[0], C64::new(1.0, 0.0));
        assert!((p[1] - C64::new(0.0, -1.0)).norm() < 1e-15);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn array_response_is_unit_modulus(eta in 0.0..PI, rows in 1usize..5, cols in 1usize..5) {
                let geom = ArrayGeometry::new(rows, cols);
                let v = array_response(eta, &geom);
                for e in v.iter() {
                    prop_assert!((e.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
