//! Scenario files. Times are in units of 1/Γ, trap frequencies are given as
//! μ/Γ and every angle is in degrees.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    SinglePhoton,
    TwoPhoton,
    TwoPhotonGeometry,
    TimeBin,
    Spectrum,
    PiSigma,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::SinglePhoton => "single-photon",
            Protocol::TwoPhoton => "two-photon",
            Protocol::TwoPhotonGeometry => "two-photon-geometry",
            Protocol::TimeBin => "time-bin",
            Protocol::Spectrum => "spectrum",
            Protocol::PiSigma => "pi-sigma",
        }
    }

    pub fn sweepable(self) -> &'static [SweepParam] {
        use SweepParam::*;
        match self {
            Protocol::SinglePhoton => &[Nbar, Na, Chi],
            Protocol::TwoPhoton => &[Nbar, Na, DtMax],
            Protocol::TwoPhotonGeometry => &[Nbar, Xi],
            Protocol::TimeBin => &[Nbar, Na, Tau, DtMax],
            Protocol::Spectrum => &[],
            Protocol::PiSigma => &[Nbar, Na],
        }
    }

    pub fn correctable(self) -> bool {
        matches!(self, Protocol::SinglePhoton | Protocol::TwoPhoton | Protocol::TimeBin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correction {
    Off,
    On,
    Both,
}

impl Correction {
    pub fn variants(self) -> &'static [bool] {
        match self {
            Correction::Off => &[false],
            Correction::On => &[true],
            Correction::Both => &[false, true],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Nbar,
    Na,
    Xi,
    Tau,
    DtMax,
    Chi,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Nbar => "nbar",
            SweepParam::Na => "na",
            SweepParam::Xi => "xi",
            SweepParam::Tau => "tau",
            SweepParam::DtMax => "dt_max",
            SweepParam::Chi => "chi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    ZeroNa,
    Lens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub axis: [f64; 3],
    pub eta: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeSpec {
    /// Lamb-Dicke parameter shared by three modes along x, y, z.
    pub eta: f64,
    pub mu: f64,
    pub nbar: f64,
    /// Excitation laser direction.
    pub excitation: [f64; 3],
    /// If set, overrides `excitation` with a direction at this angle from the collection axis.
    pub chi: Option<f64>,
    /// Excitation probability (single-photon only).
    pub p: f64,
    pub link_phase: f64,
    /// Explicit modes; replaces the isotropic `eta`/`mu` pair.
    pub modes: Option<Vec<ModeSpec>>,
}

impl Default for NodeSpec {
    fn default() -> Self {
        Self {
            eta: 0.07,
            mu: 0.1,
            nbar: 20.0,
            excitation: [1.0, 0.0, 0.0],
            chi: None,
            p: 0.05,
            link_phase: 0.0,
            modes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    /// Collection direction (zero-NA) or lens axis.
    pub axis: [f64; 3],
    pub na: f64,
    /// Focal length in units of 1/k.
    pub fk: f64,
    /// Fibre waist over focal length; optimized when absent.
    pub waist_ratio: Option<f64>,
    pub fibre_angles: Option<Vec<f64>>,
    pub axis_epsilon: f64,
    /// Split-collection tilt (two-photon-geometry).
    pub xi: f64,
    pub two_sided: bool,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            kind: GeometryKind::ZeroNa,
            axis: [0.0, 0.0, 1.0],
            na: 0.6,
            fk: 1e5,
            waist_ratio: None,
            fibre_angles: None,
            axis_epsilon: recoil_core::collection::AXIS_EPSILON,
            xi: 30.0,
            two_sided: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub t_max: f64,
    pub dt_max: Option<f64>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            t_max: f64::INFINITY,
            dt_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    pub n_polar: usize,
    pub n_azimuthal: usize,
    /// Laguerre (or Legendre, for finite windows) order per time variable.
    pub time_nodes: usize,
    pub search_n_polar: usize,
    pub search_n_azimuthal: usize,
    pub search_time_nodes: usize,
    pub instantaneous: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        let s = recoil_core::protocols::Settings::default();
        Self {
            n_polar: s.quadrature.n_polar,
            n_azimuthal: s.quadrature.n_azimuthal,
            time_nodes: s.quadrature.time_nodes,
            search_n_polar: s.search.n_polar,
            search_n_azimuthal: s.search.n_azimuthal,
            search_time_nodes: s.search.time_nodes,
            instantaneous: s.instantaneous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeBinSpec {
    pub tau: f64,
}

impl Default for TimeBinSpec {
    fn default() -> Self {
        Self {
            tau: std::f64::consts::PI / 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSpec {
    pub eta: f64,
    pub nbar: f64,
    pub mus: Vec<f64>,
    pub detuning_min: f64,
    pub detuning_max: f64,
    pub points: usize,
    /// Fock cutoff of the initial state; chosen from `nbar` and `eta` when absent.
    pub cutoff: Option<usize>,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        Self {
            eta: 1.0,
            nbar: 0.0,
            mus: vec![0.1, 10.0],
            detuning_min: -45.0,
            detuning_max: 15.0,
            points: 2001,
            cutoff: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub protocol: Protocol,
    pub correction: Correction,
    pub output: PathBuf,
    /// Optional JSON mirror of the result rows.
    pub json: Option<PathBuf>,
    pub node: NodeSpec,
    /// Second node of a link; a copy of `node` when absent.
    pub node_b: Option<NodeSpec>,
    pub geometry: GeometrySpec,
    pub window: WindowSpec,
    pub quadrature: QuadratureSpec,
    pub time_bin: TimeBinSpec,
    pub spectrum: SpectrumSpec,
    pub sweep: Option<SweepSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            protocol: Protocol::TwoPhoton,
            correction: Correction::Off,
            output: PathBuf::from("results.csv"),
            json: None,
            node: NodeSpec::default(),
            node_b: None,
            geometry: GeometrySpec::default(),
            window: WindowSpec::default(),
            quadrature: QuadratureSpec::default(),
            time_bin: TimeBinSpec::default(),
            spectrum: SpectrumSpec::default(),
            sweep: None,
        }
    }
}

/// A validation failure at a dotted key path such as `geometry.na`.
#[derive(Debug, Clone, PartialEq)]
pub struct Invalid {
    pub key: String,
    pub message: String,
}

fn bad(key: impl Into<String>, message: impl Into<String>) -> Invalid {
    Invalid {
        key: key.into(),
        message: message.into(),
    }
}

fn unit(key: &str, v: &[f64; 3]) -> std::result::Result<(), Invalid> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(bad(key, format!("must be a unit vector, has norm {n}")));
    }
    Ok(())
}

fn validate_node(prefix: &str, n: &NodeSpec) -> std::result::Result<(), Invalid> {
    let key = |k: &str| format!("{prefix}.{k}");
    if !(n.nbar >= 0.0 && n.nbar.is_finite()) {
        return Err(bad(key("nbar"), format!("must be finite and >= 0, got {}", n.nbar)));
    }
    if !n.eta.is_finite() || n.eta < 0.0 {
        return Err(bad(key("eta"), "must be finite and >= 0"));
    }
    if !(n.mu > 0.0 && n.mu.is_finite()) {
        return Err(bad(key("mu"), "must be finite and > 0"));
    }
    unit(&key("excitation"), &n.excitation)?;
    if !(0.0..=1.0).contains(&n.p) {
        return Err(bad(key("p"), "must lie in [0, 1]"));
    }
    if let Some(modes) = &n.modes {
        if modes.is_empty() {
            return Err(bad(key("modes"), "needs at least one mode"));
        }
        for m in modes {
            unit(&key("modes"), &m.axis)?;
            if !(m.mu > 0.0) || !(m.eta >= 0.0) {
                return Err(bad(key("modes"), "each mode needs mu > 0 and eta >= 0"));
            }
        }
    }
    Ok(())
}

impl Scenario {
    pub fn nodes(&self) -> impl Iterator<Item = (&'static str, &NodeSpec)> {
        std::iter::once(("node", &self.node)).chain(self.node_b.iter().map(|n| ("node_b", n)))
    }

    pub fn validate(&self) -> std::result::Result<(), Invalid> {
        for (prefix, n) in self.nodes() {
            validate_node(prefix, n)?;
        }
        let g = &self.geometry;
        unit("geometry.axis", &g.axis)?;
        if !(g.na > 0.0 && g.na <= 1.0) {
            return Err(bad("geometry.na", format!("must lie in (0, 1], got {}", g.na)));
        }
        if !(g.fk >= 100.0 && g.fk.is_finite()) {
            return Err(bad("geometry.fk", "must be finite and >= 100"));
        }
        if let Some(w) = g.waist_ratio {
            if !(w > 0.0 && w.is_finite()) {
                return Err(bad("geometry.waist_ratio", "must be finite and > 0"));
            }
        }
        if g.fibre_angles.as_ref().is_some_and(|f| f.is_empty()) {
            return Err(bad("geometry.fibre_angles", "needs at least one angle"));
        }
        if !(0.0..0.5).contains(&g.axis_epsilon) {
            return Err(bad("geometry.axis_epsilon", "must lie in [0, 0.5)"));
        }
        if !(g.xi >= 0.0 && g.xi <= 90.0) {
            return Err(bad("geometry.xi", "must lie in [0, 90] degrees"));
        }
        if !(self.window.t_max > 0.0) {
            return Err(bad("window.t_max", "must be > 0"));
        }
        if self.window.dt_max.is_some_and(|d| !(d > 0.0)) {
            return Err(bad("window.dt_max", "must be > 0"));
        }
        let q = &self.quadrature;
        for (k, v) in [
            ("n_polar", q.n_polar),
            ("n_azimuthal", q.n_azimuthal),
            ("time_nodes", q.time_nodes),
            ("search_n_polar", q.search_n_polar),
            ("search_n_azimuthal", q.search_n_azimuthal),
            ("search_time_nodes", q.search_time_nodes),
        ] {
            if v == 0 {
                return Err(bad(format!("quadrature.{k}"), "must be >= 1"));
            }
        }
        if !(self.time_bin.tau > 0.0 && self.time_bin.tau.is_finite()) {
            return Err(bad("time_bin.tau", "must be finite and > 0"));
        }
        if self.protocol == Protocol::Spectrum {
            let s = &self.spectrum;
            if s.mus.is_empty() || s.mus.iter().any(|m| !(*m > 0.0)) {
                return Err(bad("spectrum.mus", "needs at least one trap frequency > 0"));
            }
            if !(s.detuning_max > s.detuning_min) || s.points < 2 {
                return Err(bad("spectrum.points", "needs detuning_max > detuning_min and at least 2 points"));
            }
            if !(s.nbar >= 0.0) {
                return Err(bad("spectrum.nbar", "must be >= 0"));
            }
        }
        if self.correction != Correction::Off && !self.protocol.correctable() {
            return Err(bad("correction", format!("{} has no correction; use \"off\"", self.protocol.name())));
        }
        if self.node_b.is_some() && !matches!(self.protocol, Protocol::SinglePhoton | Protocol::TwoPhoton) {
            return Err(bad("node_b", format!("{} uses a single node configuration", self.protocol.name())));
        }
        if let Some(s) = &self.sweep {
            if !self.protocol.sweepable().contains(&s.parameter) {
                return Err(bad(
                    "sweep.parameter",
                    format!("`{}` cannot be swept for {}", s.parameter.name(), self.protocol.name()),
                ));
            }
            if s.values.is_empty() {
                return Err(bad("sweep.values", "sweep grid is empty"));
            }
            let up = s.values.windows(2).all(|w| w[1] > w[0]);
            let down = s.values.windows(2).all(|w| w[1] < w[0]);
            if !(up || down) || s.values.iter().any(|v| !v.is_finite()) {
                return Err(bad("sweep.values", "sweep grid must be finite and strictly monotone"));
            }
            if s.parameter == SweepParam::Na && g.kind != GeometryKind::Lens && self.protocol != Protocol::PiSigma {
                return Err(bad("sweep.parameter", "sweeping na needs geometry.kind = \"lens\""));
            }
            for v in &s.values {
                let mut t = self.clone();
                t.sweep = None;
                t.apply(s.parameter, *v);
                t.validate().map_err(|e| bad("sweep.values", format!("value {v}: {}", e.message)))?;
            }
        }
        Ok(())
    }

    /// Sets one swept parameter on every node it concerns.
    pub fn apply(&mut self, p: SweepParam, v: f64) {
        match p {
            SweepParam::Nbar => {
                self.node.nbar = v;
                if let Some(b) = &mut self.node_b {
                    b.nbar = v;
                }
            }
            SweepParam::Na => self.geometry.na = v,
            SweepParam::Xi => self.geometry.xi = v,
            SweepParam::Tau => self.time_bin.tau = v,
            SweepParam::DtMax => self.window.dt_max = Some(v),
            SweepParam::Chi => {
                self.node.chi = Some(v);
                if let Some(b) = &mut self.node_b {
                    b.chi = Some(v);
                }
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::Config {
            file: file.to_string(),
            line: e.span().map_or(1, |r| line_of(text, r.start)),
            message: e.message().to_string(),
        })?;
        s.validate().map_err(|e| CliError::Config {
            file: file.to_string(),
            line: locate(text, &e.key),
            message: format!("`{}` {}", e.key, e.message),
        })?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `section.key` in `text`, falling back to the section header and then line 1.
fn locate(text: &str, key: &str) -> usize {
    let (section, leaf) = key.rsplit_once('.').unwrap_or(("", key));
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == leaf {
                    return i + 1;
                }
            }
        }
    }
    header.unwrap_or(1)
}
