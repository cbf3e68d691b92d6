use std::path::Path;

use crate::config::{parse_flag, parse_kv, parse_value, write_kv};
use crate::error::{Error, Result};

/// Sampling ranges for one synthetic snow layer. Every pair is `(lo, hi)`
/// and sampled uniformly.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    /// Per 128x128 pixels; see [`super::mask::REFERENCE_SIDE`].
    pub flake_count_range: (usize, usize),
    /// Semi-axis lengths in pixels.
    pub flake_radius_range: (f64, f64),
    /// Per 128x128 pixels, like `flake_count_range`.
    pub streak_count_range: (usize, usize),
    pub streak_length_range: (f64, f64),
    /// Degrees from the +x axis; 90 is vertical.
    pub streak_angle_range: (f64, f64),
    /// Per-particle opacity, written into `Z`.
    pub opacity_range: (f64, f64),
    pub transmission_range: (f64, f64),
    pub atmospheric_range: (f64, f64),
    /// Snow colour is `1 - chroma_jitter * u` per channel, `u ~ U(0, 1)`.
    pub chroma_jitter: f64,
    pub binary_mask: bool,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            flake_count_range: (10, 60),
            flake_radius_range: (0.8, 3.0),
            streak_count_range: (0, 30),
            streak_length_range: (4.0, 16.0),
            streak_angle_range: (60.0, 120.0),
            opacity_range: (0.5, 1.0),
            transmission_range: (0.75, 1.0),
            atmospheric_range: (0.75, 0.95),
            chroma_jitter: 0.05,
            binary_mask: false,
            seed: 0,
        }
    }
}

fn check_pair(name: &str, (lo, hi): (f64, f64), domain: Option<(f64, f64)>) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::Parameter(format!(
            "{name} = ({lo}, {hi}) is not an ordered range"
        )));
    }
    if let Some((dlo, dhi)) = domain {
        if lo < dlo || hi > dhi {
            return Err(Error::Parameter(format!(
                "{name} = ({lo}, {hi}) must lie within [{dlo}, {dhi}]"
            )));
        }
    }
    Ok(())
}

fn parse_pair<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<(T, T), String>
where
    T::Err: std::fmt::Display,
{
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| format!("`{key}` expects `lo, hi`, found `{value}`"))?;
    Ok((parse_value(key, a.trim())?, parse_value(key, b.trim())?))
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let (flo, fhi) = self.flake_count_range;
        let (slo, shi) = self.streak_count_range;
        if flo > fhi || slo > shi {
            return Err(Error::Parameter("count ranges must satisfy lo <= hi".into()));
        }
        check_pair("flake_radius_range", self.flake_radius_range, Some((0.0, f64::MAX)))?;
        if fhi > 0 && self.flake_radius_range.0 <= 0.0 {
            return Err(Error::Parameter("flake radii must be positive".into()));
        }
        check_pair("streak_length_range", self.streak_length_range, Some((0.0, f64::MAX)))?;
        check_pair("streak_angle_range", self.streak_angle_range, None)?;
        let unit = Some((0.0, 1.0));
        check_pair("opacity_range", self.opacity_range, unit)?;
        check_pair("transmission_range", self.transmission_range, unit)?;
        check_pair("atmospheric_range", self.atmospheric_range, unit)?;
        if !(0.0..=1.0).contains(&self.chroma_jitter) {
            return Err(Error::Parameter(format!(
                "chroma_jitter = {} must lie in [0, 1]",
                self.chroma_jitter
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Applies one `key = value` setting; `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        match key {
            "flake_count_range" => self.flake_count_range = parse_pair(key, value)?,
            "flake_radius_range" => self.flake_radius_range = parse_pair(key, value)?,
            "streak_count_range" => self.streak_count_range = parse_pair(key, value)?,
            "streak_length_range" => self.streak_length_range = parse_pair(key, value)?,
            "streak_angle_range" => self.streak_angle_range = parse_pair(key, value)?,
            "opacity_range" => self.opacity_range = parse_pair(key, value)?,
            "transmission_range" => self.transmission_range = parse_pair(key, value)?,
            "atmospheric_range" => self.atmospheric_range = parse_pair(key, value)?,
            "chroma_jitter" => self.chroma_jitter = parse_value(key, value)?,
            "binary_mask" => self.binary_mask = parse_flag(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let p = |a: &dyn std::fmt::Display, b: &dyn std::fmt::Display| format!("{a}, {b}");
        vec![
            (
                "flake_count_range".into(),
                p(&self.flake_count_range.0, &self.flake_count_range.1),
            ),
            (
                "flake_radius_range".into(),
                p(&self.flake_radius_range.0, &self.flake_radius_range.1),
            ),
            (
                "streak_count_range".into(),
                p(&self.streak_count_range.0, &self.streak_count_range.1),
            ),
            (
                "streak_length_range".into(),
                p(&self.streak_length_range.0, &self.streak_length_range.1),
            ),
            (
                "streak_angle_range".into(),
                p(&self.streak_angle_range.0, &self.streak_angle_range.1),
            ),
            ("opacity_range".into(), p(&self.opacity_range.0, &self.opacity_range.1)),
            (
                "transmission_range".into(),
                p(&self.transmission_range.0, &self.transmission_range.1),
            ),
            (
                "atmospheric_range".into(),
                p(&self.atmospheric_range.0, &self.atmospheric_range.1),
            ),
            ("chroma_jitter".into(), self.chroma_jitter.to_string()),
            ("binary_mask".into(), self.binary_mask.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Self::default();
        for e in parse_kv(text)? {
            let known = p
                .set(&e.key, &e.value)
                .map_err(|msg| Error::ConfigLine { line: e.line, msg })?;
            if !known {
                return Err(Error::ConfigLine {
                    line: e.line,
                    msg: format!("unknown key `{}`", e.key),
                });
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let pairs = self.to_pairs();
        write_kv(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip_as_text() {
        let p = SynthParams {
            binary_mask: true,
            seed: 42,
            ..SynthParams::default()
        };
        p.validate().unwrap();
        assert_eq!(SynthParams::parse(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn out_of_domain_ranges_are_rejected() {
        let cases = [
            SynthParams {
                opacity_range: (0.2, 1.2),
                ..Default::default()
            },
            SynthParams {
                transmission_range: (0.9, 0.1),
                ..Default::default()
            },
            SynthParams {
                flake_count_range: (5, 2),
                ..Default::default()
            },
            SynthParams {
                chroma_jitter: -0.1,
                ..Default::default()
            },
            SynthParams {
                flake_radius_range: (0.0, 2.0),
                ..Default::default()
            },
        ];
        for p in cases {
            assert!(matches!(p.validate(), Err(Error::Parameter(_))), "{p:?}");
        }
    }
}
