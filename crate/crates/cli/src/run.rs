use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use recoil_core::collection::{optimal_waist, CollectionGeometry, DipoleChannel, GaussianLens};
use recoil_core::fock::{auto_cutoff, detuning_grid, emission_spectrum_1d, thermal_density};
use recoil_core::kick::MomentBackend;
use recoil_core::phase_space::{MotionalMode, ThermalState, TrapModel};
use recoil_core::protocols::geometry::geometry_fidelity;
use recoil_core::protocols::pi_sigma::pi_sigma_high_na_fidelity;
use recoil_core::protocols::single_photon::single_photon_result;
use recoil_core::protocols::time_bin::time_bin_fidelity;
use recoil_core::protocols::two_photon::two_photon_fidelity;
use recoil_core::protocols::{HeraldWindow, NodeConfig, Quadrature, Settings};

use crate::config::{GeometryKind, NodeSpec, Protocol, Scenario, SweepParam};
use crate::error::{CliError, Result};

pub const COLUMNS: [&str; 6] = ["sweep_param", "value", "fidelity", "contrast", "efficiency", "corrected"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub sweep_param: String,
    pub value: f64,
    pub fidelity: f64,
    pub contrast: f64,
    pub efficiency: f64,
    pub corrected: bool,
    pub wall_time: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for the sweep; hardware parallelism when `None`.
    pub threads: Option<usize>,
    /// Evaluate every moment in truncated Fock space.
    pub oracle: bool,
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn settings(s: &Scenario, oracle: bool) -> Settings {
    let backend = if oracle { MomentBackend::Fock } else { MomentBackend::Analytic };
    let q = &s.quadrature;
    Settings {
        quadrature: Quadrature {
            n_polar: q.n_polar,
            n_azimuthal: q.n_azimuthal,
            time_nodes: q.time_nodes,
            backend,
        },
        search: Quadrature {
            n_polar: q.search_n_polar,
            n_azimuthal: q.search_n_azimuthal,
            time_nodes: q.search_time_nodes,
            backend,
        },
        instantaneous: q.instantaneous,
    }
}

fn window(s: &Scenario) -> Result<HeraldWindow> {
    Ok(HeraldWindow::new(s.window.t_max, s.window.dt_max)?)
}

/// Unit vector orthogonal to `axis`, as close to x̂ as possible.
fn transverse(axis: &Vector3<f64>) -> Vector3<f64> {
    let pick = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    (pick - axis * pick.dot(axis)).normalize()
}

fn channels(protocol: Protocol) -> Result<Vec<DipoleChannel>> {
    Ok(match protocol {
        Protocol::TwoPhoton => vec![DipoleChannel::linear("H", Vector3::x())?, DipoleChannel::linear("V", Vector3::y())?],
        _ => vec![DipoleChannel::linear("e", Vector3::x())?],
    })
}

fn geometry(s: &Scenario, ch: &[DipoleChannel]) -> Result<CollectionGeometry> {
    let g = &s.geometry;
    let axis = v3(&g.axis);
    let fibres_deg = g.fibre_angles.clone().unwrap_or_else(|| if ch.len() == 2 { vec![0.0, 90.0] } else { vec![0.0] });
    Ok(match g.kind {
        GeometryKind::ZeroNa => CollectionGeometry::ZeroNA {
            direction: axis,
            polarizations: fibres_deg
                .iter()
                .map(|a| {
                    let e1 = transverse(&axis);
                    let e2 = axis.cross(&e1);
                    let r = a.to_radians();
                    e1 * r.cos() + e2 * r.sin()
                })
                .collect(),
        },
        GeometryKind::Lens => {
            let mut lens = GaussianLens::new(g.na, g.fk, 1.0, axis, fibres_deg.iter().map(|a| a.to_radians()).collect())?;
            lens.axis_epsilon = g.axis_epsilon;
            lens.waist_ratio = match g.waist_ratio {
                Some(w) => w,
                None => optimal_waist(&lens, ch)?,
            };
            CollectionGeometry::GaussianLens(lens)
        }
    })
}

fn node(s: &Scenario, n: &NodeSpec) -> Result<NodeConfig> {
    let trap = match &n.modes {
        Some(modes) => TrapModel::new(
            modes
                .iter()
                .map(|m| MotionalMode::new(m.mu, m.eta, v3(&m.axis)))
                .collect::<recoil_core::Result<Vec<_>>>()?,
        )?,
        None => TrapModel::isotropic(n.mu, n.eta)?,
    };
    let motion = ThermalState::for_trap(&trap, n.nbar)?;
    let ch = channels(s.protocol)?;
    let geom = geometry(s, &ch)?;
    let axis = v3(&s.geometry.axis);
    let excitation = match n.chi {
        Some(chi) => axis * chi.to_radians().cos() + transverse(&axis) * chi.to_radians().sin(),
        None => v3(&n.excitation),
    };
    let mut cfg = NodeConfig::new(trap, motion, geom, ch)?
        .with_excitation(excitation)?
        .with_link_phase(n.link_phase.to_radians());
    if s.protocol == Protocol::SinglePhoton {
        cfg = cfg.with_p(n.p)?;
    }
    Ok(cfg)
}

/// One row for a fully specified (unswept) scenario.
fn evaluate_point(s: &Scenario, corrected: bool, oracle: bool) -> Result<(f64, f64, f64, BTreeMap<String, f64>)> {
    let set = settings(s, oracle);
    let mut extra = BTreeMap::new();
    let r = match s.protocol {
        Protocol::SinglePhoton | Protocol::TwoPhoton => {
            let a = node(s, &s.node)?;
            let b = match &s.node_b {
                Some(nb) => node(s, nb)?,
                None => a.clone(),
            };
            let w = window(s)?;
            if s.protocol == Protocol::SinglePhoton {
                single_photon_result(&a, &b, &w, corrected, &set)?
            } else {
                two_photon_fidelity(&a, &b, &w, corrected, &set)?
            }
        }
        Protocol::TimeBin => time_bin_fidelity(&node(s, &s.node)?, s.time_bin.tau, &window(s)?, corrected, &set)?,
        Protocol::TwoPhotonGeometry => {
            geometry_fidelity(s.node.eta, s.geometry.xi.to_radians(), s.node.nbar, s.geometry.two_sided, &set)?
        }
        Protocol::PiSigma => {
            let p = pi_sigma_high_na_fidelity(s.node.eta, s.geometry.na, s.node.nbar, s.geometry.fk, s.geometry.waist_ratio, &set)?;
            extra.insert("longitudinal_error".into(), p.longitudinal_error);
            extra.insert("transverse_error".into(), p.transverse_only.error());
            extra.insert("waist_ratio".into(), p.waist_ratio);
            p.total
        }
        Protocol::Spectrum => return Err(CliError::Schema("spectrum scenarios write spectra, not result rows".into())),
    };
    if let Some(k) = &r.k_avg {
        for (j, v) in k.iter().enumerate() {
            extra.insert(format!("k_avg_{j}"), *v);
        }
    }
    Ok((r.fidelity, r.contrast, r.efficiency, extra))
}

/// All result rows, ordered by sweep value and then correction variant.
pub fn evaluate(s: &Scenario, oracle: bool) -> Result<Vec<ResultRow>> {
    let points: Vec<(Option<SweepParam>, f64)> = match &s.sweep {
        Some(sw) => sw.values.iter().map(|v| (Some(sw.parameter), *v)).collect(),
        None => vec![(None, 0.0)],
    };
    let jobs: Vec<(Option<SweepParam>, f64, bool)> = points
        .iter()
        .flat_map(|(p, v)| s.correction.variants().iter().map(move |c| (*p, *v, *c)))
        .collect();
    jobs.par_iter()
        .map(|(p, v, corrected)| {
            let mut point = s.clone();
            if let Some(p) = p {
                point.apply(*p, *v);
            }
            let start = Instant::now();
            let (fidelity, contrast, efficiency, extra) = evaluate_point(&point, *corrected, oracle)?;
            Ok(ResultRow {
                sweep_param: p.map_or("none", |p| p.name()).to_string(),
                value: *v,
                fidelity,
                contrast,
                efficiency,
                corrected: *corrected,
                wall_time: start.elapsed().as_secs_f64(),
                extra,
            })
        })
        .collect()
}

fn provenance(s: &Scenario, opts: &RunOptions) -> String {
    let mut out = format!(
        "# recoil {}\n# protocol = {}\n# backend = {}\n# effective configuration:\n",
        env!("CARGO_PKG_VERSION"),
        s.protocol.name(),
        if opts.oracle { "fock" } else { "analytic" }
    );
    for line in s.to_toml().lines() {
        out.push_str("#   ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(path: &Path, header: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = header.as_bytes().to_vec();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        let err = |e| CliError::Csv {
            path: path.display().to_string(),
            source: e,
        };
        w.write_record(columns).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&buf).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Output file for one trap frequency of a spectrum run: `out.csv` becomes `out_mu10.csv`.
pub fn spectrum_path(base: &Path, mu: f64) -> PathBuf {
    let stem = base.file_stem().map_or("spectrum".into(), |s| s.to_string_lossy().into_owned());
    let ext = base.extension().map_or("csv".into(), |e| e.to_string_lossy().into_owned());
    base.with_file_name(format!("{stem}_mu{mu}.{ext}"))
}

#[derive(Serialize)]
struct SpectrumSummary {
    mu: f64,
    path: String,
    peak: f64,
    fwhm: f64,
    integral: f64,
    wall_time: f64,
}

fn run_spectrum(s: &Scenario, header: &str, base: &Path, json: Option<&Path>) -> Result<Vec<PathBuf>> {
    let sp = &s.spectrum;
    let cutoff = sp.cutoff.unwrap_or_else(|| auto_cutoff(sp.nbar, sp.eta));
    let initial = thermal_density(sp.nbar, cutoff)?;
    let grid = detuning_grid(sp.detuning_min, sp.detuning_max, sp.points);
    let results: Vec<(PathBuf, SpectrumSummary)> = sp
        .mus
        .par_iter()
        .map(|mu| {
            let start = Instant::now();
            let r = emission_spectrum_1d(sp.eta, *mu, &initial, &grid)?;
            let path = spectrum_path(base, *mu);
            let rows: Vec<Vec<String>> = r.detunings.iter().zip(&r.density).map(|(d, p)| vec![float(*d), float(*p)]).collect();
            write_csv(&path, header, &["detuning", "density"], &rows)?;
            let summary = SpectrumSummary {
                mu: *mu,
                path: path.display().to_string(),
                peak: r.peak(),
                fwhm: r.fwhm(),
                integral: r.integral(),
                wall_time: start.elapsed().as_secs_f64(),
            };
            Ok((path, summary))
        })
        .collect::<Result<_>>()?;
    if let Some(j) = json {
        let summaries: Vec<&SpectrumSummary> = results.iter().map(|(_, x)| x).collect();
        write_json(j, &serde_json::json!({ "scenario": s, "spectra": summaries }))?;
    }
    Ok(results.into_iter().map(|(p, _)| p).collect())
}

/// Runs a scenario and writes its result files, returning their paths.
/// Relative output paths are resolved against `base_dir`.
pub fn run(scenario: &Scenario, opts: &RunOptions, base_dir: &Path) -> Result<Vec<PathBuf>> {
    let s = scenario;
    let output = base_dir.join(&s.output);
    let json = s.json.as_ref().map(|j| base_dir.join(j));
    let header = provenance(s, opts);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::io("thread pool", std::io::Error::other(e)))?;
    pool.install(|| {
        if s.protocol == Protocol::Spectrum {
            let mut written = run_spectrum(s, &header, &output, json.as_deref())?;
            written.extend(json.clone());
            return Ok(written);
        }
        let rows = evaluate(s, opts.oracle)?;
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.sweep_param.clone(),
                    float(r.value),
                    float(r.fidelity),
                    float(r.contrast),
                    float(r.efficiency),
                    r.corrected.to_string(),
                ]
            })
            .collect();
        write_csv(&output, &header, &COLUMNS, &body)?;
        let mut written = vec![output.clone()];
        if let Some(j) = &json {
            write_json(j, &serde_json::json!({ "scenario": s, "rows": rows }))?;
            written.push(j.clone());
        }
        Ok(written)
    })
}
