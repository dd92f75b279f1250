//! INI-style run configuration: `[section]` headers, `key = value` lines,
//! `#` comments, double-quoted strings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use pergo::conditions::CheckConfig;
use pergo::functionals::PeriodicFunctional;
use pergo::model::{Param, ParamMap};
use pergo::simulate::Scheme;
use pergo::{catalog_model, Error, PeriodicSDEModel};

const SECTIONS: [&str; 5] = ["model", "plan", "check", "functional", "output"];

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Text(String),
}

impl Value {
    fn as_param(&self) -> Param {
        match self {
            Value::Number(v) => Param::Number(*v),
            Value::Text(s) => Param::Text(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: Value,
    pub line: usize,
}

/// One problem in a config file; `line` is 1-based, 0 when not tied to a line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            f.write_str(&self.message)
        }
    }
}

#[derive(Debug)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

/// Strips a trailing comment that is not inside a quoted string.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_value(raw: &str, line: usize) -> Result<Value, ConfigError> {
    let raw = raw.trim();
    if let Some(rest) = raw.strip_prefix('"') {
        return match rest.strip_suffix('"') {
            Some(inner) if !inner.contains('"') => Ok(Value::Text(inner.to_string())),
            _ => Err(err(line, format!("unterminated or malformed string {raw}"))),
        };
    }
    if raw.is_empty() {
        return Err(err(line, "missing value"));
    }
    Ok(raw.parse::<f64>().map(Value::Number).unwrap_or_else(|_| Value::Text(raw.to_string())))
}

/// Splits the text into sections; collects every syntax problem.
pub fn parse_sections(text: &str) -> Result<Sections, Vec<ConfigError>> {
    let mut sections = Sections::new();
    let mut errors = Vec::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            match name.strip_suffix(']').map(str::trim) {
                Some(name) if SECTIONS.contains(&name) => {
                    if sections.contains_key(name) {
                        errors.push(err(n, format!("section [{name}] appears twice")));
                    }
                    sections.entry(name.to_string()).or_default();
                    current = Some(name.to_string());
                }
                Some(name) => {
                    errors.push(err(n, format!("unknown section [{name}]; expected one of {}", SECTIONS.join(", "))));
                    current = None;
                }
                None => errors.push(err(n, "malformed section header")),
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(err(n, format!("expected `key = value`, got `{line}`")));
            continue;
        };
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            errors.push(err(n, format!("invalid key `{key}`")));
            continue;
        }
        let Some(section) = &current else {
            errors.push(err(n, format!("key `{key}` outside of a known section")));
            continue;
        };
        match parse_value(value, n) {
            Ok(value) => {
                let map = sections.get_mut(section).expect("section registered");
                if let Some(prev) = map.get(key) {
                    errors.push(err(n, format!("duplicate key `{key}` (first set on line {})", prev.line)));
                } else {
                    map.insert(key.to_string(), Entry { value, line: n });
                }
            }
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(sections)
    } else {
        Err(errors)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub step: f64,
    pub periods: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub x0: Vec<f64>,
    pub start_time: f64,
    pub record_every: usize,
    pub burn_in: usize,
    pub thin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extras {
    pub aronson: bool,
    pub signal: bool,
    pub degenerate: bool,
    /// `(M, r)` for the Veretennikov check
    pub veretennikov: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalConfig {
    pub integrand: String,
    pub density: Option<String>,
    pub atoms: Vec<(f64, f64)>,
}

pub struct RunConfig {
    pub source: String,
    pub model: PeriodicSDEModel,
    pub plan: PlanConfig,
    pub check: CheckConfig,
    pub extras: Extras,
    pub functional: FunctionalConfig,
    pub output_dir: PathBuf,
    pub formats: Vec<String>,
}

impl RunConfig {
    pub fn functional(&self) -> pergo::Result<PeriodicFunctional> {
        let f = &self.functional;
        PeriodicFunctional::parse(&f.integrand, self.model.dim(), f.density.as_deref(), f.atoms.clone(), self.model.period())
    }
}

/// Keys a catalog model understands besides numeric expression parameters.
fn model_keys(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "ou-gauss" => &["gamma", "sigma", "signal"],
        "ou-levy" => &["gamma", "signal", "jump_rate", "jump", "compensate"],
        "pearson" => &["theta", "c0", "c1", "signal", "sigma"],
        "gbm" => &["mu", "sigma"],
        "degenerate2d" => &["b1", "b2", "sigma"],
        "custom" => &["d", "m"],
        _ => return None,
    })
}

fn indexed_key(key: &str) -> bool {
    let digits = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit());
    for prefix in ["bhat", "signal", "b"] {
        if key.strip_prefix(prefix).is_some_and(digits) {
            return true;
        }
    }
    key.strip_prefix('s').and_then(|r| r.split_once('_')).is_some_and(|(i, j)| digits(i) && digits(j))
}

struct Reader<'a> {
    section: &'static str,
    map: Option<&'a BTreeMap<String, Entry>>,
    errors: &'a mut Vec<ConfigError>,
    header_line: usize,
}

impl Reader<'_> {
    fn entry(&self, key: &str) -> Option<&Entry> {
        self.map.and_then(|m| m.get(key))
    }

    fn line_of(&self, key: &str) -> usize {
        self.entry(key).map_or(self.header_line, |e| e.line)
    }

    fn number(&mut self, key: &str) -> Option<f64> {
        match self.entry(key).cloned() {
            None => None,
            Some(Entry { value: Value::Number(v), .. }) => Some(v),
            Some(Entry { value: Value::Text(s), line }) => {
                self.errors.push(err(line, format!("[{}] {key}: expected a number, got `{s}`", self.section)));
                None
            }
        }
    }

    fn number_or(&mut self, key: &str, default: f64) -> f64 {
        self.number(key).unwrap_or(default)
    }

    fn count(&mut self, key: &str, default: usize) -> usize {
        match self.number(key) {
            None => default,
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= 1e15 => v as usize,
            Some(v) => {
                let line = self.line_of(key);
                self.errors.push(err(line, format!("[{}] {key}: expected a non-negative integer, got {v}", self.section)));
                default
            }
        }
    }

    fn text(&self, key: &str) -> Option<String> {
        self.entry(key).map(|e| match &e.value {
            Value::Text(s) => s.clone(),
            Value::Number(v) => format!("{v:?}"),
        })
    }

    fn flag(&mut self, key: &str) -> bool {
        match self.entry(key).cloned() {
            None => false,
            Some(Entry { value: Value::Number(v), .. }) => v != 0.0,
            Some(Entry { value: Value::Text(s), line }) => match s.as_str() {
                "true" | "yes" | "on" => true,
                "false" | "no" | "off" => false,
                other => {
                    self.errors.push(err(line, format!("[{}] {key}: expected true or false, got `{other}`", self.section)));
                    false
                }
            },
        }
    }

    fn reject_unknown(&mut self, known: &[&str]) {
        if let Some(map) = self.map {
            for (k, e) in map {
                if !known.contains(&k.as_str()) {
                    self.errors.push(err(e.line, format!("[{}] unknown key `{k}`", self.section)));
                }
            }
        }
    }
}

fn reader<'a>(sections: &'a Sections, lines: &BTreeMap<&str, usize>, section: &'static str, errors: &'a mut Vec<ConfigError>) -> Reader<'a> {
    Reader { section, map: sections.get(section), errors, header_line: lines.get(section).copied().unwrap_or(0) }
}

fn header_lines(text: &str) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        for s in SECTIONS {
            if line.strip_prefix('[').and_then(|l| l.strip_suffix(']')).map(str::trim) == Some(s) {
                out.entry(s).or_insert(i + 1);
            }
        }
    }
    out
}

fn parse_list(text: &str) -> Option<Vec<f64>> {
    text.split(',').map(|s| s.trim().parse::<f64>().ok()).collect()
}

/// `"s:w, s:w"` atom list.
fn parse_atoms(text: &str) -> Option<Vec<(f64, f64)>> {
    if text.trim().is_empty() {
        return Some(Vec::new());
    }
    text.split(',')
        .map(|pair| {
            let (s, w) = pair.split_once(':')?;
            Some((s.trim().parse().ok()?, w.trim().parse().ok()?))
        })
        .collect()
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigErrors(vec![err(0, format!("cannot read {}: {e}", path.display()))]))?;
    parse_config(&text)
}

/// Parses and validates a whole config, reporting every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let sections = parse_sections(text).map_err(ConfigErrors)?;
    let lines = header_lines(text);
    let mut errors = Vec::new();

    // model
    let r = reader(&sections, &lines, "model", &mut errors);
    let model_line = r.header_line;
    let name = r.text("name");
    let mut params = ParamMap::new();
    match &name {
        None => r.errors.push(err(model_line, "[model] name is required")),
        Some(n) => match model_keys(n) {
            None => r.errors.push(err(r.line_of("name"), format!("[model] unknown model `{n}`"))),
            Some(keys) => {
                if let Some(map) = r.map {
                    let open_scope = matches!(n.as_str(), "custom" | "degenerate2d");
                    for (k, e) in map {
                        let known = k == "name" || k == "T" || k == "declared_c0" || keys.contains(&k.as_str());
                        let indexed = n == "custom" && indexed_key(k);
                        let scoped = open_scope && matches!(e.value, Value::Number(_));
                        if !(known || indexed || scoped) {
                            r.errors.push(err(e.line, format!("[model] unknown key `{k}` for model `{n}`")));
                        } else if k != "name" {
                            params.insert(k.clone(), e.value.as_param());
                        }
                    }
                }
            }
        },
    }
    let model = match (&name, r.errors.is_empty()) {
        (Some(n), true) => match catalog_model(n, &params) {
            Ok(m) => Some(m),
            Err(e) => {
                let line = match &e {
                    Error::Validation { name, .. } => r.line_of(name),
                    _ => model_line,
                };
                r.errors.push(err(line, format!("[model] {e}")));
                None
            }
        },
        _ => None,
    };

    // plan
    let mut r = reader(&sections, &lines, "plan", &mut errors);
    r.reject_unknown(&["h", "K", "N", "seed", "scheme", "x0", "start", "record_every", "burn_in", "thin"]);
    let step = r.number_or("h", 1e-2);
    let periods = r.count("K", 100);
    let n_paths = r.count("N", 1);
    let seed = r.count("seed", 0) as u64;
    let scheme = match r.text("scheme") {
        None => Scheme::EulerMaruyama,
        Some(s) => s.parse().unwrap_or_else(|e: pergo::Error| {
            let line = r.line_of("scheme");
            r.errors.push(err(line, format!("[plan] {e}")));
            Scheme::EulerMaruyama
        }),
    };
    let dim = model.as_ref().map_or(1, |m| m.dim());
    let x0 = match r.text("x0") {
        None => vec![0.0; dim],
        Some(s) => match parse_list(&s) {
            Some(v) if v.len() == dim => v,
            _ => {
                let line = r.line_of("x0");
                r.errors.push(err(line, format!("[plan] x0 must be {dim} comma-separated numbers, got `{s}`")));
                vec![0.0; dim]
            }
        },
    };
    let start_time = r.number_or("start", 0.0);
    let record_every = r.count("record_every", 1);
    let burn_in = r.count("burn_in", 0);
    let thin = r.count("thin", 1);
    if !(step > 0.0 && step.is_finite()) {
        let line = r.line_of("h");
        r.errors.push(err(line, format!("[plan] h must be positive, got {step}")));
    } else if let Some(m) = &model {
        let ratio = m.period() / step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            let line = r.line_of("h");
            r.errors.push(err(line, format!("[plan] h={step} does not divide the period {}", m.period())));
        }
    }
    for (key, v) in [("N", n_paths), ("K", periods), ("record_every", record_every), ("thin", thin)] {
        if v == 0 {
            let line = r.line_of(key);
            r.errors.push(err(line, format!("[plan] {key} must be >= 1")));
        }
    }
    let plan = PlanConfig { step, periods, n_paths, seed, scheme, x0, start_time, record_every, burn_in, thin };

    // check
    let mut r = reader(&sections, &lines, "check", &mut errors);
    r.reject_unknown(&[
        "r_min", "r_max", "radial_n", "angular_n", "time_n", "epsilon", "lambda_margin", "refine_passes", "c0", "box_half_width", "box_n",
        "bound_cap", "aronson", "signal", "degenerate", "veretennikov_m", "veretennikov_r",
    ]);
    let d = CheckConfig::default();
    let check = CheckConfig {
        r_min: r.number_or("r_min", d.r_min),
        r_max: r.number_or("r_max", d.r_max),
        radial_n: r.count("radial_n", d.radial_n),
        angular_n: r.count("angular_n", d.angular_n),
        time_n: r.count("time_n", d.time_n),
        epsilon: r.number("epsilon"),
        lambda_margin: r.number_or("lambda_margin", d.lambda_margin),
        refine_passes: r.count("refine_passes", d.refine_passes),
        c0: r.number("c0"),
        box_half_width: r.number_or("box_half_width", d.box_half_width),
        box_n: r.count("box_n", d.box_n),
        bound_cap: r.number_or("bound_cap", d.bound_cap),
        execution: d.execution,
    };
    if let Err(e) = check.validate() {
        let line = r.header_line;
        r.errors.push(err(line, format!("[check] {e}")));
    }
    let veretennikov = match (r.number("veretennikov_m"), r.number("veretennikov_r")) {
        (Some(m), Some(rr)) => Some((m, rr)),
        (None, None) => None,
        _ => {
            let line = r.header_line;
            r.errors.push(err(line, "[check] veretennikov_m and veretennikov_r must be given together"));
            None
        }
    };
    let extras = Extras { aronson: r.flag("aronson"), signal: r.flag("signal"), degenerate: r.flag("degenerate"), veretennikov };

    // functional
    let mut r = reader(&sections, &lines, "functional", &mut errors);
    r.reject_unknown(&["F", "density", "atoms"]);
    let atoms = match r.text("atoms") {
        None => Vec::new(),
        Some(s) => parse_atoms(&s).unwrap_or_else(|| {
            let line = r.line_of("atoms");
            r.errors.push(err(line, format!("[functional] atoms must look like \"0:1, 0.5:2\", got `{s}`")));
            Vec::new()
        }),
    };
    let functional = FunctionalConfig { integrand: r.text("F").unwrap_or_else(|| "x1".into()), density: r.text("density").or(Some("1".into())), atoms };
    if let Some(m) = &model {
        if let Err(e) = PeriodicFunctional::parse(&functional.integrand, m.dim(), functional.density.as_deref(), functional.atoms.clone(), m.period()) {
            let key = if e.to_string().contains("atom") { "atoms" } else { "F" };
            let line = r.line_of(key);
            r.errors.push(err(line, format!("[functional] {e}")));
        }
    }

    // output
    let mut r = reader(&sections, &lines, "output", &mut errors);
    r.reject_unknown(&["dir", "formats"]);
    let output_dir = PathBuf::from(r.text("dir").unwrap_or_else(|| "pergo-out".into()));
    let formats: Vec<String> = r.text("formats").unwrap_or_else(|| "csv,json".into()).split(',').map(|s| s.trim().to_string()).collect();
    if let Some(bad) = formats.iter().find(|f| !matches!(f.as_str(), "csv" | "json")) {
        let line = r.line_of("formats");
        r.errors.push(err(line, format!("[output] unknown format `{bad}`")));
    }

    match model {
        Some(model) if errors.is_empty() => Ok(RunConfig {
            source: text.to_string(),
            model,
            plan,
            check,
            extras,
            functional,
            output_dir,
            formats,
        }),
        _ => {
            errors.sort_by_key(|e| e.line);
            Err(ConfigErrors(errors))
        }
    }
}
