//! Run configuration: a flat sectioned key-value format (grammar in
//! `docs/config.md`).

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use unravel::ensemble::MethodId;
use unravel::extended::RatePolicy;
use unravel::linalg::{pauli, Matrix};
use unravel::local::GaugeTransform;
use unravel::models::{self, PhaseCovariantRates};
use unravel::{ComplexMatrix, MasterEquation, PureState, TimeGrid};

pub const MODELS: &[&str] = &["eternally_nm", "non_p_divisible", "spontaneous_emission", "phase_covariant", "delayed_negative"];
pub const METHODS: &[&str] =
    &["mcwf", "wtd", "nmqj", "wroqj", "r_roqj", "psi_roqj", "doubled", "tripled", "im", "plqt", "cloning"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("unknown model '{name}'; valid models: {}", MODELS.join(", "))]
    UnknownModel { name: String },
    #[error("unknown method '{name}'; valid methods: {}", METHODS.join(", "))]
    UnknownMethod { name: String },
    #[error("bad initial amplitudes: {0}")]
    BadAmplitudes(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::ParseError { line, message: message.into() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub methods: Vec<MethodSpec>,
    pub t_max: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub initial_state: Vec<Complex64>,
    pub observables: Vec<(String, ComplexMatrix)>,
    pub output: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            model: ModelSpec { name: "eternally_nm".into(), params: BTreeMap::new() },
            methods: Vec::new(),
            t_max: 5.0,
            dt: 0.01,
            n_traj: 10_000,
            seed: 42,
            initial_state: vec![Complex64::new(s, 0.0), Complex64::new(s, 0.0)],
            observables: default_observables(),
            output: "unravel_out".into(),
        }
    }
}

fn default_observables() -> Vec<(String, ComplexMatrix)> {
    ["sigma_x", "sigma_y", "sigma_z"].iter().map(|n| (n.to_string(), builtin_observable(n).unwrap())).collect()
}

fn builtin_observable(name: &str) -> Option<ComplexMatrix> {
    Some(match name {
        "sigma_x" => pauli::sigma_x(),
        "sigma_y" => pauli::sigma_y(),
        "sigma_z" => pauli::sigma_z(),
        "identity" => Matrix::identity(2),
        "excited" => Matrix::from_diagonal(&[Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]),
        "ground" => Matrix::from_diagonal(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]),
        _ => return None,
    })
}

/// `a`, `bi`, `a+bi`, `a-bi`, `i`, `-i`.
pub fn parse_complex(s: &str) -> Option<Complex64> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return None;
    }
    let Some(body) = s.strip_suffix('i') else {
        return s.parse::<f64>().ok().map(|x| Complex64::new(x, 0.0));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let imag = |t: &str| -> Option<f64> {
        match t {
            "" | "+" => Some(1.0),
            "-" => Some(-1.0),
            _ => t.parse().ok(),
        }
    };
    match split {
        Some(k) => Some(Complex64::new(body[..k].parse().ok()?, imag(&body[k..])?)),
        None => Some(Complex64::new(0.0, imag(body)?)),
    }
}

struct Entry {
    value: String,
    line: usize,
}

type Sections = HashMap<String, BTreeMap<String, Entry>>;

fn tokenize(text: &str) -> Result<(Sections, Vec<String>), ConfigError> {
    let mut sections: Sections = HashMap::new();
    let mut order = Vec::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| parse_err(line, "unterminated section header"))?.trim();
            let valid = name == "model"
                || name == "run"
                || name == "observables"
                || name.strip_prefix("method.").is_some_and(|m| !m.is_empty());
            if !valid {
                return Err(parse_err(line, format!("unknown section [{name}]")));
            }
            if sections.contains_key(name) {
                return Err(parse_err(line, format!("duplicate section [{name}]")));
            }
            sections.insert(name.to_string(), BTreeMap::new());
            order.push(name.to_string());
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| parse_err(line, "expected 'key = value'"))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(parse_err(line, format!("invalid key '{key}'")));
        }
        let section = current.as_ref().ok_or_else(|| parse_err(line, "key outside of any section"))?;
        let map = sections.get_mut(section).expect("section exists");
        if map.contains_key(key) {
            return Err(parse_err(line, format!("duplicate key '{key}'")));
        }
        map.insert(key.to_string(), Entry { value: value.trim().to_string(), line });
    }
    Ok((sections, order))
}

fn number(e: &Entry) -> Result<f64, ConfigError> {
    e.value
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| parse_err(e.line, format!("expected a number, got '{}'", e.value)))
}

fn integer(e: &Entry) -> Result<u64, ConfigError> {
    e.value.parse::<u64>().map_err(|_| parse_err(e.line, format!("expected a non-negative integer, got '{}'", e.value)))
}

fn list(e: &Entry) -> Vec<String> {
    e.value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

const MODEL_KEYS: &[&str] = &["name", "kappa", "omega0", "omega", "gamma", "gamma_plus", "gamma_minus", "gamma_z"];
const RUN_KEYS: &[&str] = &["methods", "t_max", "dt", "n_traj", "seed", "initial_state", "output"];
const METHOD_KEYS: &[(&str, &[&str])] = &[("psi_roqj", &["gauge", "lambda"]), ("r_roqj", &["gauge"]), ("im", &["r_min"])];

fn check_keys(map: &BTreeMap<String, Entry>, allowed: &[&str], section: &str) -> Result<(), ConfigError> {
    for (k, e) in map {
        if !allowed.contains(&k.as_str()) {
            return Err(parse_err(e.line, format!("unknown key '{k}' in [{section}]")));
        }
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let (sections, _) = tokenize(text)?;
    let mut cfg = RunConfig::default();
    let empty = BTreeMap::new();

    let model = sections.get("model").unwrap_or(&empty);
    check_keys(model, MODEL_KEYS, "model")?;
    if let Some(e) = model.get("name") {
        if !MODELS.contains(&e.value.as_str()) {
            return Err(ConfigError::UnknownModel { name: e.value.clone() });
        }
        cfg.model.name = e.value.clone();
    }
    for (k, e) in model.iter().filter(|(k, _)| k.as_str() != "name") {
        cfg.model.params.insert(k.clone(), number(e)?);
    }
    if let Some(e) = model.get("kappa") {
        let k = number(e)?;
        if !(0.0..=1.0).contains(&k) {
            return Err(parse_err(e.line, "kappa must lie in [0, 1]"));
        }
    }
    if let Some(e) = model.get("gamma") {
        if number(e)? < 0.0 {
            return Err(parse_err(e.line, "gamma must be non-negative"));
        }
    }

    let run = sections.get("run").unwrap_or(&empty);
    check_keys(run, RUN_KEYS, "run")?;
    if let Some(e) = run.get("methods") {
        for name in list(e) {
            if !METHODS.contains(&name.as_str()) {
                return Err(ConfigError::UnknownMethod { name });
            }
            cfg.methods.push(MethodSpec { name, params: BTreeMap::new() });
        }
    }
    if let Some(e) = run.get("t_max") {
        cfg.t_max = number(e)?;
    }
    if let Some(e) = run.get("dt") {
        cfg.dt = number(e)?;
    }
    if let Err(err) = TimeGrid::from_zero(cfg.t_max, cfg.dt) {
        let line = run.get("dt").or(run.get("t_max")).map_or(0, |e| e.line);
        return Err(parse_err(line, err.to_string()));
    }
    if let Some(e) = run.get("n_traj") {
        cfg.n_traj = integer(e)? as usize;
        if cfg.n_traj == 0 {
            return Err(parse_err(e.line, "n_traj must be at least 1"));
        }
    }
    if let Some(e) = run.get("seed") {
        cfg.seed = integer(e)?;
    }
    if let Some(e) = run.get("output") {
        cfg.output = e.value.clone();
    }
    if let Some(e) = run.get("initial_state") {
        cfg.initial_state = list(e)
            .iter()
            .map(|s| parse_complex(s).ok_or_else(|| ConfigError::BadAmplitudes(format!("'{s}' is not a complex number"))))
            .collect::<Result<_, _>>()?;
    }
    validate_amplitudes(&cfg.initial_state)?;

    for (section, map) in &sections {
        let Some(method) = section.strip_prefix("method.") else { continue };
        let allowed = METHOD_KEYS.iter().find(|(m, _)| *m == method).map_or(&[][..], |(_, k)| *k);
        if !METHODS.contains(&method) {
            return Err(ConfigError::UnknownMethod { name: method.to_string() });
        }
        check_keys(map, allowed, section)?;
        for spec in cfg.methods.iter_mut().filter(|m| m.name == method) {
            spec.params = map.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect();
        }
        if let Some(e) = map.get("gauge") {
            if !["gamma_z", "w_embedding", "none"].contains(&e.value.as_str()) {
                return Err(parse_err(e.line, format!("unknown gauge '{}'", e.value)));
            }
        }
        for key in ["lambda", "r_min"] {
            if let Some(e) = map.get(key) {
                let v = number(e)?;
                if key == "r_min" && v <= 0.0 {
                    return Err(parse_err(e.line, "r_min must be positive"));
                }
            }
        }
    }

    if let Some(obs) = sections.get("observables") {
        cfg.observables.clear();
        for (name, e) in obs {
            let m = match builtin_observable(&e.value) {
                Some(m) => m,
                None => {
                    let entries: Vec<Complex64> = list(e)
                        .iter()
                        .map(|s| parse_complex(s).ok_or_else(|| parse_err(e.line, format!("bad matrix entry '{s}'"))))
                        .collect::<Result<_, _>>()?;
                    if entries.len() != 4 {
                        return Err(parse_err(e.line, "observable must be a builtin name or 4 row-major entries"));
                    }
                    let m = Matrix::from_row_major(entries);
                    m.ensure_hermitian().map_err(|err| parse_err(e.line, err.to_string()))?;
                    m
                }
            };
            cfg.observables.push((name.clone(), m));
        }
    }
    Ok(cfg)
}

pub fn validate_amplitudes(a: &[Complex64]) -> Result<(), ConfigError> {
    if a.len() != 2 {
        return Err(ConfigError::BadAmplitudes(format!("expected 2 amplitudes, got {}", a.len())));
    }
    let n: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    if !n.is_finite() || n <= 1e-24 {
        return Err(ConfigError::BadAmplitudes("amplitudes have zero norm".into()));
    }
    Ok(())
}

impl RunConfig {
    fn param(&self, key: &str, default: f64) -> f64 {
        self.model.params.get(key).copied().unwrap_or(default)
    }

    /// Rates of the phase-covariant models (`None` for spontaneous emission).
    pub fn phase_rates(&self) -> Option<PhaseCovariantRates> {
        match self.model.name.as_str() {
            "eternally_nm" => Some(models::eternally_nm_rates()),
            "non_p_divisible" => Some(models::non_p_divisible_rates(self.param("kappa", 0.25))),
            "delayed_negative" => Some(models::delayed_negative_rates()),
            "phase_covariant" => Some(PhaseCovariantRates::constant(
                self.param("gamma_plus", 0.0),
                self.param("gamma_minus", 0.0),
                self.param("gamma_z", 0.0),
                self.param("omega0", 0.0),
            )),
            _ => None,
        }
    }

    pub fn master_equation(&self) -> MasterEquation {
        match self.phase_rates() {
            Some(r) => models::phase_covariant(&r),
            None => models::spontaneous_emission(self.param("omega0", 0.0), self.param("omega", 0.0), self.param("gamma", 1.0)),
        }
    }

    pub fn initial_state(&self) -> Result<PureState, ConfigError> {
        validate_amplitudes(&self.initial_state)?;
        PureState::from_amplitudes(self.initial_state.clone()).map_err(|e| ConfigError::BadAmplitudes(e.to_string()))
    }

    pub fn grid(&self) -> Result<TimeGrid, ConfigError> {
        TimeGrid::from_zero(self.t_max, self.dt).map_err(|e| parse_err(0, e.to_string()))
    }

    /// Gauge used by the rate-operator methods when none is configured:
    /// `C_t = γ_z𝟙` except on the non-P-divisible model, where the
    /// W-embedding gauge keeps all jump rates positive.
    fn default_gauge(&self) -> &'static str {
        match self.model.name.as_str() {
            "non_p_divisible" | "spontaneous_emission" => "w_embedding",
            _ => "gamma_z",
        }
    }

    fn gauge(&self, spec: &MethodSpec) -> GaugeTransform {
        let name = spec.params.get("gauge").map_or(self.default_gauge(), |s| s.as_str());
        let lambda = spec.params.get("lambda").and_then(|s| s.parse().ok()).unwrap_or(0.0);
        match (name, self.phase_rates()) {
            ("gamma_z", Some(r)) => models::gamma_z_gauge(&r),
            ("w_embedding", _) => models::w_gauge(lambda),
            _ => GaugeTransform::None,
        }
    }

    pub fn method(&self, spec: &MethodSpec) -> Result<MethodId, ConfigError> {
        Ok(match spec.name.as_str() {
            "mcwf" => MethodId::Mcwf,
            "wtd" => MethodId::Wtd,
            "nmqj" => MethodId::Nmqj,
            "wroqj" => MethodId::Wroqj,
            "r_roqj" => MethodId::Rroqj(self.gauge(spec)),
            "psi_roqj" => MethodId::PsiRoqj(self.gauge(spec)),
            "doubled" => MethodId::Doubled,
            "tripled" => MethodId::Tripled(None),
            "im" => MethodId::Im(RatePolicy::AbsFloor(
                spec.params.get("r_min").and_then(|s| s.parse().ok()).unwrap_or(0.05),
            )),
            "plqt" => MethodId::Plqt,
            "cloning" => MethodId::Cloning,
            other => return Err(ConfigError::UnknownMethod { name: other.to_string() }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("[model]\nname = eternally_nm\n[run]\nmethods = psi_roqj\n").unwrap();
        assert_eq!(cfg.n_traj, 10_000);
        assert_eq!(cfg.dt, 0.01);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.t_max, 5.0);
        assert_eq!(cfg.methods[0].name, "psi_roqj");
        assert_eq!(cfg.observables.len(), 3);
    }

    #[test]
    fn errors_are_reported() {
        let e = parse_config("[run]\nmethods = psi_roqj, roqj_typo\n").unwrap_err();
        assert_eq!(e, ConfigError::UnknownMethod { name: "roqj_typo".into() });
        assert!(e.to_string().contains("psi_roqj"));
        let e = parse_config("[run]\n# comment\ndt = 0\n").unwrap_err();
        assert!(matches!(e, ConfigError::ParseError { line: 3, .. }));
        assert!(matches!(parse_config("[model]\nname = nope\n"), Err(ConfigError::UnknownModel { .. })));
        assert!(matches!(parse_config("[run]\ninitial_state = 0, 0\n"), Err(ConfigError::BadAmplitudes(_))));
        assert!(matches!(parse_config("[run]\ninitial_state = 1\n"), Err(ConfigError::BadAmplitudes(_))));
        assert!(matches!(parse_config("[run]\nbogus = 1\n"), Err(ConfigError::ParseError { line: 2, .. })));
        assert!(matches!(parse_config("x = 1\n"), Err(ConfigError::ParseError { line: 1, .. })));
    }

    #[test]
    fn complex_literals() {
        assert_eq!(parse_complex("0.5"), Some(Complex64::new(0.5, 0.0)));
        assert_eq!(parse_complex("-i"), Some(Complex64::new(0.0, -1.0)));
        assert_eq!(parse_complex("1e-3-2.5i"), Some(Complex64::new(1e-3, -2.5)));
        assert_eq!(parse_complex("0.3 + 0.2i"), Some(Complex64::new(0.3, 0.2)));
        assert_eq!(parse_complex("2i"), Some(Complex64::new(0.0, 2.0)));
        assert_eq!(parse_complex("abc"), None);
    }

    #[test]
    fn observables_and_method_params() {
        let cfg = parse_config(
            "[run]\nmethods = im, psi_roqj\n[method.im]\nr_min = 0.1\n[method.psi_roqj]\ngauge = w_embedding\n[observables]\npop = 0, 0, 0, 1\nsx = sigma_x\n",
        )
        .unwrap();
        assert_eq!(cfg.methods[0].params["r_min"], "0.1");
        assert_eq!(cfg.observables.len(), 2);
        assert!(parse_config("[observables]\nbad = 0, 1, 0, 0\n").is_err());
    }
}
