use std::path::{Path, PathBuf};

use rbsvie::grid::TimeGrid;
use rbsvie::instances::{catalog_instance, InstanceSpec, Param, ParamMap};
use rbsvie::mc::{BasisFamily, RegressionBasis};
use rbsvie::volterra::{PicardConfig, SolveMode, ZCoupling};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Lattice,
    Mc,
}

impl Engine {
    pub fn tag(self) -> &'static str {
        match self {
            Engine::Lattice => "lattice",
            Engine::Mc => "mc",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    engine: Option<Engine>,
    instance: toml::Table,
    grid: RawGrid,
    #[serde(default)]
    picard: RawPicard,
    #[serde(default)]
    mc: RawMc,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(rename = "N")]
    steps: i64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPicard {
    tolerance: Option<f64>,
    max_iters: Option<i64>,
    mode: Option<SolveMode>,
    delta: Option<f64>,
    z_coupling: Option<ZCoupling>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    n_paths: Option<i64>,
    seed: Option<i64>,
    basis_degree: Option<i64>,
    basis: Option<BasisFamily>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct McSettings {
    pub n_paths: usize,
    pub seed: u64,
    pub basis: RegressionBasis,
}

/// A parsed and cross-checked run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub instance_name: String,
    pub params: ParamMap,
    pub spec: InstanceSpec,
    pub grid: TimeGrid,
    pub engine: Engine,
    pub picard: PicardConfig,
    pub mc: McSettings,
    pub out_dir: PathBuf,
}

pub const DEFAULT_LATTICE_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MC_TOLERANCE: f64 = 1e-6;

fn count(name: &str, v: i64, min: i64) -> Result<usize, String> {
    if v < min {
        return Err(format!("{name} must be at least {min}, got {v}"));
    }
    Ok(v as usize)
}

impl RunConfig {
    pub fn load(path: &Path, engine_override: Option<Engine>, out_override: Option<&Path>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text, engine_override, out_override).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str, engine_override: Option<Engine>, out_override: Option<&Path>) -> Result<Self, String> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut instance = raw.instance;
        let name = match instance.remove("name") {
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err("instance.name must be a string".into()),
            None => return Err("instance.name is required".into()),
        };
        let mut params = ParamMap::new();
        for (k, v) in instance {
            let p = match v {
                toml::Value::Float(f) => Param::Num(f),
                toml::Value::Integer(i) => Param::Num(i as f64),
                toml::Value::String(s) => Param::Text(s),
                other => return Err(format!("instance.{k}: unsupported value {other}")),
            };
            params.insert(k, p);
        }
        let spec = catalog_instance(&name, &params, raw.grid.horizon).map_err(|e| e.to_string())?;
        let steps = count("grid.N", raw.grid.steps, 1)?;
        let grid = TimeGrid::new(raw.grid.horizon, steps).map_err(|e| e.to_string())?;
        let engine = engine_override.or(raw.engine).unwrap_or(Engine::Lattice);
        let default_tol = match engine {
            Engine::Lattice => DEFAULT_LATTICE_TOLERANCE,
            Engine::Mc => DEFAULT_MC_TOLERANCE,
        };
        let picard = PicardConfig {
            tolerance: raw.picard.tolerance.unwrap_or(default_tol),
            max_iters: match raw.picard.max_iters {
                Some(m) => count("picard.max_iters", m, 1)?,
                None => 200,
            },
            mode: raw.picard.mode.unwrap_or(SolveMode::Global),
            delta: raw.picard.delta,
            z_coupling: raw.picard.z_coupling.unwrap_or(ZCoupling::Explicit),
            ..PicardConfig::default()
        };
        picard.validate().map_err(|e| e.to_string())?;
        if picard.delta.is_some() && picard.mode != SolveMode::Windowed {
            return Err("picard.delta only applies to picard.mode = \"windowed\"".into());
        }
        if picard.mode == SolveMode::Windowed {
            if let Some(d) = picard.delta {
                let m = (d / grid.dt()).round();
                if m < 1.0 || (m * grid.dt() - d).abs() > 1e-9 * d.max(1.0) {
                    return Err(format!("picard.delta = {d} is not a multiple of dt = {}", grid.dt()));
                }
            }
        }
        let mc = McSettings {
            n_paths: match raw.mc.n_paths {
                Some(n) => count("mc.n_paths", n, 2)?,
                None => 100_000,
            },
            seed: match raw.mc.seed {
                Some(s) if s >= 0 => s as u64,
                Some(s) => return Err(format!("mc.seed must be nonnegative, got {s}")),
                None => 0,
            },
            basis: RegressionBasis {
                family: raw.mc.basis.unwrap_or(BasisFamily::PiecewiseLinear),
                degree: match raw.mc.basis_degree {
                    Some(d) => count("mc.basis_degree", d, 0)?,
                    None => 8,
                },
            },
        };
        if engine == Engine::Mc && mc.n_paths < 2 * mc.basis.dim() {
            return Err(format!(
                "mc.n_paths = {} is below twice the basis dimension {}",
                mc.n_paths,
                mc.basis.dim()
            ));
        }
        let out_dir = out_override
            .map(Path::to_path_buf)
            .or(raw.output.dir)
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self {
            instance_name: name,
            params,
            spec,
            grid,
            engine,
            picard,
            mc,
            out_dir,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[instance]
name = "american_put"
strike = 1.1

[grid]
T = 1.0
N = 20
"#;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse(BASE, None, None).unwrap();
        assert_eq!(c.engine, Engine::Lattice);
        assert_eq!(c.picard.tolerance, 1e-10);
        assert_eq!(c.picard.max_iters, 200);
        assert_eq!(c.params["strike"], Param::Num(1.1));
        assert_eq!(c.out_dir, PathBuf::from("out"));
        let c = RunConfig::parse(BASE, Some(Engine::Mc), Some(Path::new("x"))).unwrap();
        assert_eq!(c.picard.tolerance, 1e-6);
        assert_eq!(c.out_dir, PathBuf::from("x"));
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            "not toml [",
            "[grid]\nT = 1.0\nN = 5\n",
            &BASE.replace("strike = 1.1", "strik = 1.1"),
            &BASE.replace("N = 20", "N = 0"),
            &BASE.replace("american_put", "no_such"),
            &format!("{BASE}\n[picard]\nmode = \"windowed\"\ndelta = 0.07\n"),
            &format!("{BASE}\n[picard]\ndelta = 0.1\n"),
            &format!("{BASE}\n[picard]\ntolerance = -1.0\n"),
            &format!("{BASE}\n[extra]\nx = 1\n"),
            &format!("engine = \"gpu\"\n{BASE}"),
        ] {
            assert!(RunConfig::parse(bad, None, None).is_err(), "{bad}");
        }
        let ok = format!("{BASE}\n[picard]\nmode = \"windowed\"\ndelta = 0.1\n");
        assert!(RunConfig::parse(&ok, None, None).is_ok());
    }
}
