//! Flat `key = value [unit]` configuration files.
//!
//! Lines before any section header describe [`PhysicalParams`]; a `[run]` section holds
//! solver settings. `#` starts a comment. A bare number is read in SI base units (rad/s,
//! m, m^-3, m/s); otherwise a unit suffix follows the number, e.g. `delta = 20 gamma`,
//! `omega = 2 MHz` (cyclic, converted to angular), `c6 = 8.6e5 MHz*um^6`,
//! `medium_length = 40 c/gamma`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::units::PhysicalParams;

const PHYSICAL_KEYS: &[&str] = &[
    "gamma",
    "delta",
    "omega",
    "g_sqrt_n",
    "lambda",
    "density",
    "c6",
    "medium_length",
    "light_speed",
    "potential_power",
    "allow_sign_override",
    "hamiltonian_test",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub params: PhysicalParams,
    /// Raw `[run]` entries; consumers check them against their own key sets.
    pub run: BTreeMap<String, String>,
}

impl Config {
    pub fn from_params(params: PhysicalParams) -> Self {
        Config { params, run: BTreeMap::new() }
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut phys: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut run = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                if section != "run" {
                    return Err(Error::Config { line: line_no, msg: format!("unknown section [{section}]") });
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config { line: line_no, msg: "expected key = value".into() })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if section.is_empty() {
                if !PHYSICAL_KEYS.contains(&key.as_str()) {
                    return Err(Error::Config { line: line_no, msg: format!("unknown key '{key}'") });
                }
                if phys.insert(key.clone(), (line_no, value)).is_some() {
                    return Err(Error::Config { line: line_no, msg: format!("duplicate key '{key}'") });
                }
            } else if run.insert(key.clone(), value).is_some() {
                return Err(Error::Config { line: line_no, msg: format!("duplicate key '{key}'") });
            }
        }
        Ok(Config { params: build_params(&phys)?, run })
    }

    /// Canonical text form: SI values at 17 significant digits, sorted `[run]` keys.
    /// Parsing it back reproduces the same parameters.
    pub fn canonical(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let mut put = |k: &str, v: f64| out.push_str(&format!("{k} = {}\n", fmt17(v)));
        put("gamma", p.gamma);
        put("delta", p.delta);
        put("omega", p.omega);
        if let Some(g) = p.g_sqrt_n {
            put("g_sqrt_n", g);
        }
        if let Some(l) = p.lambda {
            put("lambda", l);
        }
        if let Some(n) = p.density {
            put("density", n);
        }
        put("c6", p.c6);
        put("medium_length", p.medium_length);
        put("light_speed", p.light_speed);
        put("potential_power", p.potential_power);
        out.push_str(&format!("allow_sign_override = {}\n", p.allow_sign_override));
        out.push_str(&format!("hamiltonian_test = {}\n", p.hamiltonian_test));
        if !self.run.is_empty() {
            out.push_str("[run]\n");
            for (k, v) in &self.run {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn run_f64(&self, key: &str) -> Result<Option<f64>> {
        self.run
            .get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config { line: 0, msg: format!("[run] {key}: '{v}' is not a number") })
            })
            .transpose()
    }

    /// Rejects `[run]` keys outside `allowed`.
    pub fn check_run_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.run.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config { line: 0, msg: format!("unknown [run] key '{k}'") });
            }
        }
        Ok(())
    }
}

/// Formats with 17 significant digits, the round-trip precision of f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn split_value(s: &str) -> (&str, &str) {
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim()),
        None => (s, ""),
    }
}

fn frequency_unit(unit: &str, gamma: Option<f64>) -> Option<f64> {
    Some(match unit {
        "" | "rad/s" => 1.0,
        "rad/us" => 1e6,
        "Hz" => 2.0 * PI,
        "kHz" => 2.0 * PI * 1e3,
        "MHz" => 2.0 * PI * 1e6,
        "GHz" => 2.0 * PI * 1e9,
        "gamma" => gamma?,
        _ => return None,
    })
}

fn length_unit(unit: &str, c_over_gamma: Option<f64>) -> Option<f64> {
    Some(match unit {
        "" | "m" => 1.0,
        "cm" => 1e-2,
        "mm" => 1e-3,
        "um" => 1e-6,
        "nm" => 1e-9,
        "c/gamma" => c_over_gamma?,
        _ => return None,
    })
}

fn build_params(raw: &BTreeMap<String, (usize, String)>) -> Result<PhysicalParams> {
    let err = |line: usize, msg: String| Error::Config { line, msg };
    let number = |key: &str| -> Result<Option<(usize, f64, String)>> {
        match raw.get(key) {
            None => Ok(None),
            Some((line, v)) => {
                let (num, unit) = split_value(v);
                let x = num.parse::<f64>().map_err(|_| err(*line, format!("{key}: '{num}' is not a number")))?;
                Ok(Some((*line, x, unit.to_string())))
            }
        }
    };
    let flag = |key: &str| -> Result<bool> {
        match raw.get(key) {
            None => Ok(false),
            Some((line, v)) => v.parse::<bool>().map_err(|_| err(*line, format!("{key}: expected true or false"))),
        }
    };
    let required = |key: &str| -> Result<(usize, f64, String)> {
        number(key)?.ok_or_else(|| err(0, format!("missing required key '{key}'")))
    };

    let (gl, gv, gu) = required("gamma")?;
    let gamma = gv * frequency_unit(&gu, None).ok_or_else(|| err(gl, format!("gamma: unsupported unit '{gu}'")))?;
    let (cl, cv, cu) = required("light_speed")?;
    let light_speed = match cu.as_str() {
        "" | "m/s" => cv,
        "um/us" => cv,
        "km/s" => cv * 1e3,
        _ => return Err(err(cl, format!("light_speed: unsupported unit '{cu}'"))),
    };
    let c_over_gamma = (gamma > 0.0).then(|| light_speed / gamma);
    let freq = |key: &str, v: Option<(usize, f64, String)>| -> Result<Option<f64>> {
        v.map(|(l, x, u)| {
            frequency_unit(&u, Some(gamma))
                .map(|s| x * s)
                .ok_or_else(|| err(l, format!("{key}: unsupported unit '{u}'")))
        })
        .transpose()
    };
    let length = |key: &str, v: Option<(usize, f64, String)>| -> Result<Option<f64>> {
        v.map(|(l, x, u)| {
            length_unit(&u, c_over_gamma)
                .map(|s| x * s)
                .ok_or_else(|| err(l, format!("{key}: unsupported unit '{u}'")))
        })
        .transpose()
    };

    let potential_power = number("potential_power")?.map(|(_, x, _)| x).unwrap_or(6.0);
    let delta = freq("delta", Some(required("delta")?))?.unwrap();
    let omega = freq("omega", Some(required("omega")?))?.unwrap();
    let g_sqrt_n = freq("g_sqrt_n", number("g_sqrt_n")?)?;
    let lambda = length("lambda", number("lambda")?)?;
    let medium_length = length("medium_length", Some(required("medium_length")?))?.unwrap();
    let density = number("density")?
        .map(|(l, x, u)| {
            let s = match u.as_str() {
                "" | "m^-3" => 1.0,
                "cm^-3" => 1e6,
                "um^-3" => 1e18,
                _ => return Err(err(l, format!("density: unsupported unit '{u}'"))),
            };
            Ok(x * s)
        })
        .transpose()?;
    let (c6l, c6v, c6u) = required("c6")?;
    let c6 = c6v * c6_unit(&c6u, gamma, c_over_gamma, potential_power).ok_or_else(|| err(c6l, format!("c6: unsupported unit '{c6u}'")))?;

    Ok(PhysicalParams {
        gamma,
        delta,
        omega,
        g_sqrt_n,
        lambda,
        density,
        c6,
        medium_length,
        light_speed,
        potential_power,
        allow_sign_override: flag("allow_sign_override")?,
        hamiltonian_test: flag("hamiltonian_test")?,
    })
}

/// `<frequency unit>*<length unit>^<power>`, e.g. `MHz*um^6` or `gamma*(c/gamma)^6`.
fn c6_unit(unit: &str, gamma: f64, c_over_gamma: Option<f64>, power: f64) -> Option<f64> {
    if unit.is_empty() {
        return Some(1.0);
    }
    let (f, l) = unit.split_once('*')?;
    let (l, p) = match l.rsplit_once('^') {
        Some((base, exp)) => (base, exp.parse::<f64>().ok()?),
        None => (l, 1.0),
    };
    if (p - power).abs() > 1e-12 {
        return None;
    }
    let l = l.trim_start_matches('(').trim_end_matches(')');
    Some(frequency_unit(f, Some(gamma))? * length_unit(l, c_over_gamma)?.powf(p))
}
