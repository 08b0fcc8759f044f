//! Structured-text scenario files.
//!
//! Scenarios are TOML with a strict schema: unknown fields are rejected,
//! missing optional fields take the documented defaults (deadline 250 ms,
//! loss requirement 1%, interval 250 ms, packet spacing 5 ms, TLV 1.2).
//! See `scenarios/` in the repository root for shipped examples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{GilbertParams, PathSpec, StepTrace};
use crate::distortion::DistortionParams;
use crate::simulator::{BackgroundSpec, Scenario, VideoConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("field `{field}`: {message}")]
    Invalid {
        field: String,
        message: String,
    },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Chain used for paths declared lossless; stationary loss ~1e-12.
const NEARLY_LOSSLESS: (f64, f64) = (1.0, 1e-12);

fn default_deadline() -> f64 {
    250.0
}
fn default_loss_req() -> f64 {
    0.01
}
fn default_interval() -> f64 {
    250.0
}
fn default_omega() -> f64 {
    5.0
}
fn default_tlv() -> f64 {
    1.2
}
fn default_rbuf() -> u64 {
    64 * 1024
}
fn default_sbuf() -> u64 {
    128 * 1024
}
fn default_mtu() -> u64 {
    1500
}
fn default_sequence() -> String {
    "foreman".into()
}

/// Sequence-specific distortion constants. Fitted offline; overridable per
/// scenario through `[video.distortion]`.
pub fn sequence_preset(name: &str) -> Option<DistortionParams> {
    let (d0, alpha, r0, beta) = match name.to_ascii_lowercase().as_str() {
        "foreman" => (0.8, 1200.0, 60.0, 90.0),
        "bus" => (1.6, 2400.0, 80.0, 150.0),
        "stefan" => (2.0, 3200.0, 90.0, 170.0),
        "soccer" => (1.2, 1900.0, 70.0, 120.0),
        _ => return None,
    };
    Some(DistortionParams { d0, alpha, r0, beta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoFile {
    /// Constant encoding rate, Kbps. Mutually exclusive with `rate_trace`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding_rate_kbps: Option<f64>,
    /// Piecewise-constant rate trace: `[[t_ms, kbps], ...]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_trace: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_sequence")]
    pub sequence: String,
    /// Explicit distortion constants; defaults to the sequence preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion: Option<DistortionParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundFile {
    pub frac_min: f64,
    pub frac_max: f64,
    pub resample_ms: f64,
}

impl Default for BackgroundFile {
    fn default() -> Self {
        Self {
            frac_min: 0.0,
            frac_max: 0.10,
            resample_ms: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Constant capacity, Kbps. Mutually exclusive with `capacity_trace`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_kbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_trace: Option<Vec<[f64; 2]>>,
    /// Stationary loss rate in [0, 1); 0 declares the path lossless.
    pub loss_rate: f64,
    pub mean_burst_ms: f64,
    pub rtt_ms: f64,
    /// `[[start_ms, end_ms], ...]`; omitted means always available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<Vec<[f64; 2]>>,
}

/// On-disk scenario schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub duration_ms: f64,
    #[serde(default = "default_deadline")]
    pub deadline_ms: f64,
    #[serde(default = "default_loss_req")]
    pub loss_requirement: f64,
    #[serde(default = "default_interval")]
    pub interval_ms: f64,
    #[serde(default = "default_omega")]
    pub omega_ms: f64,
    #[serde(default = "default_tlv")]
    pub tlv: f64,
    #[serde(default = "default_rbuf")]
    pub receiver_buffer_bytes: u64,
    #[serde(default = "default_sbuf")]
    pub send_buffer_bytes: u64,
    #[serde(default = "default_mtu")]
    pub mtu_bytes: u64,
    pub video: VideoFile,
    #[serde(default)]
    pub background: BackgroundFile,
    pub paths: Vec<PathFile>,
}

fn trace_from(
    field: &str,
    constant: Option<f64>,
    steps: &Option<Vec<[f64; 2]>>,
) -> Result<StepTrace, ScenarioError> {
    match (constant, steps) {
        (Some(v), None) => {
            if v < 0.0 {
                return Err(invalid(field, format!("negative value {v}")));
            }
            Ok(StepTrace::constant(v))
        }
        (None, Some(steps)) => {
            if steps.iter().any(|s| s[1] < 0.0) {
                return Err(invalid(field, "negative trace value"));
            }
            StepTrace::new(steps.iter().map(|s| (s[0], s[1])).collect())
                .map_err(|e| invalid(field, e.to_string()))
        }
        (Some(_), Some(_)) => Err(invalid(field, "constant and trace are mutually exclusive")),
        (None, None) => Err(invalid(field, "either a constant or a trace is required")),
    }
}

impl ScenarioFile {
    /// Builds the runtime [`Scenario`] (seed 0; the batch driver overrides
    /// the seed per run).
    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let rate_trace = trace_from(
            "video.encoding_rate_kbps",
            self.video.encoding_rate_kbps,
            &self.video.rate_trace,
        )?;
        let distortion = match &self.video.distortion {
            Some(d) => *d,
            None => sequence_preset(&self.video.sequence).ok_or_else(|| {
                invalid(
                    "video.sequence",
                    format!(
                        "unknown sequence `{}` and no explicit distortion block",
                        self.video.sequence
                    ),
                )
            })?,
        };
        distortion
            .validate()
            .map_err(|e| invalid("video.distortion", e.to_string()))?;

        if self.paths.is_empty() {
            return Err(invalid("paths", "at least one path is required"));
        }
        let mut paths = Vec::with_capacity(self.paths.len());
        for (i, p) in self.paths.iter().enumerate() {
            let field = |sub: &str| format!("paths[{i}].{sub}");
            let capacity_trace = trace_from(
                &field("capacity_kbps"),
                p.capacity_kbps,
                &p.capacity_trace,
            )?;
            if !(0.0..1.0).contains(&p.loss_rate) {
                return Err(invalid(
                    &field("loss_rate"),
                    format!("must lie in [0, 1), got {}", p.loss_rate),
                ));
            }
            let gilbert = if p.loss_rate == 0.0 {
                GilbertParams::new(NEARLY_LOSSLESS.0, NEARLY_LOSSLESS.1)
                    .expect("lossless chain constants")
            } else {
                GilbertParams::from_stats(p.loss_rate, p.mean_burst_ms)
                    .map_err(|e| invalid(&field("loss_rate"), e.to_string()))?
            };
            let availability = match &p.availability {
                None => vec![(0.0, f64::INFINITY)],
                Some(ivs) => ivs.iter().map(|iv| (iv[0], iv[1])).collect(),
            };
            let spec = PathSpec {
                id: i,
                capacity_trace,
                base_rtt_ms: p.rtt_ms,
                gilbert,
                availability,
            };
            spec.validate()
                .map_err(|e| invalid(&format!("paths[{i}]"), e.to_string()))?;
            paths.push(spec);
        }

        let scenario = Scenario {
            paths,
            video: VideoConfig {
                rate_trace,
                distortion,
                sequence: self.video.sequence.clone(),
            },
            deadline_ms: self.deadline_ms,
            loss_requirement: self.loss_requirement,
            interval_ms: self.interval_ms,
            omega_ms: self.omega_ms,
            tlv: self.tlv,
            background: BackgroundSpec {
                frac_min: self.background.frac_min,
                frac_max: self.background.frac_max,
                resample_ms: self.background.resample_ms,
            },
            duration_ms: self.duration_ms,
            seed: 0,
            receiver_buffer_bytes: self.receiver_buffer_bytes,
            send_buffer_bytes: self.send_buffer_bytes,
            mtu_bytes: self.mtu_bytes,
        };
        scenario
            .validate()
            .map_err(|e| invalid("scenario", e.to_string()))?;
        Ok(scenario)
    }
}

/// Parses a scenario file, returning the runtime scenario plus any soft
/// warnings from validation.
pub fn load_scenario(text: &str) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let file: ScenarioFile = toml::from_str(text)?;
    let scenario = file.into_scenario()?;
    let warnings = scenario
        .validate()
        .map_err(|e| invalid("scenario", e.to_string()))?;
    Ok((scenario, warnings))
}

/// Parses only the schema (no semantic conversion); used for round-trips.
pub fn parse_file(text: &str) -> Result<ScenarioFile, ScenarioError> {
    Ok(toml::from_str(text)?)
}

pub fn serialize_file(file: &ScenarioFile) -> Result<String, ScenarioError> {
    Ok(toml::to_string_pretty(file)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
duration_ms = 10000.0

[video]
encoding_rate_kbps = 800.0

[[paths]]
capacity_kbps = 1000.0
loss_rate = 0.02
mean_burst_ms = 10.0
rtt_ms = 60.0
"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let (sc, warnings) = load_scenario(MINIMAL).unwrap();
        assert_eq!(sc.deadline_ms, 250.0);
        assert_eq!(sc.loss_requirement, 0.01);
        assert_eq!(sc.interval_ms, 250.0);
        assert_eq!(sc.omega_ms, 5.0);
        assert_eq!(sc.tlv, 1.2);
        assert_eq!(sc.mtu_bytes, 1500);
        assert_eq!(sc.receiver_buffer_bytes, 65536);
        assert!(warnings.is_empty());
        assert_eq!(sc.paths.len(), 1);
        let (_, pi_b) = sc.paths[0].gilbert.stationary();
        assert!((pi_b - 0.02).abs() < 1e-12);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{MINIMAL}\nbogus_field = 3\n");
        assert!(matches!(
            load_scenario(&text),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn negative_capacity_is_rejected_with_field_context() {
        let text = MINIMAL.replace("capacity_kbps = 1000.0", "capacity_kbps = -5.0");
        match load_scenario(&text) {
            Err(ScenarioError::Invalid { field, .. }) => {
                assert!(field.contains("capacity_kbps"), "field={field}")
            }
            other => panic!("expected invalid-field error, got {other:?}"),
        }
    }

    #[test]
    fn loss_rate_domain_is_enforced() {
        let text = MINIMAL.replace("loss_rate = 0.02", "loss_rate = 1.0");
        assert!(load_scenario(&text).is_err());
        // Zero is the declared-lossless escape hatch.
        let text = MINIMAL.replace("loss_rate = 0.02", "loss_rate = 0.0");
        let (sc, _) = load_scenario(&text).unwrap();
        let (_, pi_b) = sc.paths[0].gilbert.stationary();
        assert!(pi_b < 1e-11);
    }

    #[test]
    fn constant_and_trace_are_mutually_exclusive() {
        let text = MINIMAL.replace(
            "capacity_kbps = 1000.0",
            "capacity_kbps = 1000.0\ncapacity_trace = [[0.0, 500.0]]",
        );
        assert!(load_scenario(&text).is_err());
    }

    #[test]
    fn unknown_sequence_without_distortion_fails() {
        let text = MINIMAL.replace(
            "encoding_rate_kbps = 800.0",
            "encoding_rate_kbps = 800.0\nsequence = \"mystery\"",
        );
        assert!(load_scenario(&text).is_err());
        let text = MINIMAL.replace(
            "encoding_rate_kbps = 800.0",
            "encoding_rate_kbps = 800.0\nsequence = \"mystery\"\n[video.distortion]\nd0 = 1.0\nalpha = 1000.0\nr0 = 50.0\nbeta = 100.0",
        );
        assert!(load_scenario(&text).is_ok());
    }

    #[test]
    fn schema_round_trips() {
        let file = parse_file(MINIMAL).unwrap();
        let text = serialize_file(&file).unwrap();
        let reparsed = parse_file(&text).unwrap();
        assert_eq!(file, reparsed);
        // And the richer form with traces and availability.
        let rich = ScenarioFile {
            duration_ms: 30_000.0,
            deadline_ms: 200.0,
            loss_requirement: 0.02,
            interval_ms: 250.0,
            omega_ms: 4.0,
            tlv: 1.3,
            receiver_buffer_bytes: 1 << 17,
            send_buffer_bytes: 1 << 17,
            mtu_bytes: 1400,
            video: VideoFile {
                encoding_rate_kbps: None,
                rate_trace: Some(vec![[0.0, 1200.0], [10_000.0, 800.0]]),
                sequence: "stefan".into(),
                distortion: None,
            },
            background: BackgroundFile::default(),
            paths: vec![PathFile {
                name: Some("wlan".into()),
                capacity_kbps: None,
                capacity_trace: Some(vec![[0.0, 500.0], [15_000.0, 250.0]]),
                loss_rate: 0.06,
                mean_burst_ms: 20.0,
                rtt_ms: 50.0,
                availability: Some(vec![[0.0, 20_000.0], [25_000.0, 30_000.0]]),
            }],
        };
        let text = serialize_file(&rich).unwrap();
        assert_eq!(parse_file(&text).unwrap(), rich);
        rich.into_scenario().unwrap();
    }

    #[test]
    fn presets_cover_the_four_sequences() {
        for name in ["foreman", "bus", "stefan", "soccer"] {
            let p = sequence_preset(name).unwrap();
            assert!(p.validate().is_ok());
        }
        assert!(sequence_preset("other").is_none());
    }
}
