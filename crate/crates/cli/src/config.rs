//! Settings from defaults, a `key = value` file and command-line overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use veclens_core::costmodel::CostModelConfig;
use veclens_core::isa::Opcode;
use veclens_core::kernels::{KernelConfig, Variant};

use crate::CliError;

pub const CONFIG_ENV: &str = "VECLENS_CONFIG";
pub const DEFAULT_SIZES: [usize; 6] = [16, 64, 128, 240, 256, 512];
pub const MAX_SIZE: usize = 512;

#[derive(Debug, Clone)]
pub struct Settings {
    pub sizes: Vec<usize>,
    pub variants: Vec<Variant>,
    pub out: PathBuf,
    pub jobs: usize,
    pub full_traces: bool,
    pub kernel: KernelConfig,
    pub cost: CostModelConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            sizes: DEFAULT_SIZES.to_vec(),
            variants: Variant::ALL.to_vec(),
            out: PathBuf::from("veclens-out"),
            jobs: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            full_traces: false,
            kernel: KernelConfig::default(),
            cost: CostModelConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "`{key}`: expected true or false, got `{value}`"
        ))),
    }
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

pub fn parse_variants(value: &str) -> Result<Vec<Variant>, CliError> {
    if value.trim().eq_ignore_ascii_case("all") {
        return Ok(Variant::ALL.to_vec());
    }
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Variant>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

impl Settings {
    /// Applies one `key = value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let c = &mut self.cost;
        match key.trim() {
            "sizes" => self.sizes = parse_list(key, v)?,
            "variants" => self.variants = parse_variants(v)?,
            "out" => self.out = PathBuf::from(v),
            "jobs" => self.jobs = parse(key, v)?,
            "full_traces" => self.full_traces = parse_bool(key, v)?,
            "nelem" => self.kernel.nelem = parse(key, v)?,
            "seed" => self.kernel.seed = parse(key, v)?,
            "ngauss" => self.kernel.ngauss = parse(key, v)?,
            "semi_implicit" => self.kernel.semi_implicit = parse_bool(key, v)?,
            "vl_max" => c.vl_max = parse(key, v)?,
            "lanes" => c.lanes = parse(key, v)?,
            "fsm_chunk" => c.fsm_chunk = parse(key, v)?,
            "vmem_base" => c.vmem_base = parse(key, v)?,
            "vmem_per_elem" => c.vmem_per_elem = parse(key, v)?,
            "l1_miss_penalty" => c.l1_miss_penalty = parse(key, v)?,
            "l2_miss_penalty" => c.l2_miss_penalty = parse(key, v)?,
            "l1_size" => c.l1.size = parse(key, v)?,
            "l1_ways" => c.l1.ways = parse(key, v)?,
            "l2_size" => c.l2.size = parse(key, v)?,
            "l2_ways" => c.l2.ways = parse(key, v)?,
            "line_size" => {
                let line = parse(key, v)?;
                c.l1.line = line;
                c.l2.line = line;
            }
            k => match k.strip_prefix("scalar_cycles.") {
                Some(m) => {
                    let op = Opcode::from_mnemonic(m).map_err(|e| CliError::Usage(format!("`{k}`: {e}")))?;
                    c.set_scalar_cost(op, parse(k, v)?);
                }
                None => return Err(CliError::Usage(format!("unknown setting `{k}`"))),
            },
        }
        Ok(())
    }

    /// Applies every line of a config file. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected `key = value`", origin.display(), n + 1)))?;
            self.apply(k, v)
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", origin.display(), n + 1)))?;
        }
        Ok(())
    }

    /// Defaults, then the config file (explicit path, else `VECLENS_CONFIG`).
    pub fn load(explicit: Option<&Path>) -> Result<Settings, CliError> {
        let mut s = Settings::default();
        let path = explicit.map(Path::to_path_buf).or_else(|| {
            std::env::var_os(CONFIG_ENV)
                .filter(|p| !p.is_empty())
                .map(PathBuf::from)
        });
        if let Some(p) = path {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            s.apply_text(&text, &p)?;
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.sizes.is_empty() {
            return Err(CliError::Usage("no vector sizes given".into()));
        }
        if let Some(s) = self.sizes.iter().find(|s| **s == 0 || **s > MAX_SIZE) {
            return Err(CliError::Usage(format!("vector size {s} outside 1..={MAX_SIZE}")));
        }
        if self.variants.is_empty() {
            return Err(CliError::Usage("no variants given".into()));
        }
        if self.jobs == 0 {
            return Err(CliError::Usage("jobs must be >= 1".into()));
        }
        self.cost.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.kernel.validate().map_err(|e| CliError::Usage(e.to_string()))
    }
}
