//! Scenario files: the initial surface, grid, thresholds and isotopy settings
//! for one run, written as TOML.

use crate::flow::{FlowParams, FlowState};
use crate::geometry::{GeometryError, ProfileSurface};
use crate::isotopy::IsotopyParams;
use crate::surgery::{CapTemplate, SurgeryFlowOptions, SurgeryParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    Sphere {
        radius: f64,
        #[serde(default)]
        center: f64,
    },
    Dumbbell {
        bell_radius: f64,
        neck_radius: f64,
        half_length: f64,
    },
    Torus {
        core_radius: f64,
        tube_radius: f64,
    },
    /// Capped profile given by radii at lattice points `first_index..`.
    Samples {
        first_index: i64,
        radii: Vec<f64>,
        left_pole: f64,
        right_pole: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub dx: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

fn default_cfl() -> f64 {
    FlowParams::default().cfl
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurgerySection {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::eps_cyl")]
    pub eps_cyl: f64,
    #[serde(default = "defaults::window_l")]
    pub window_l: f64,
}

mod defaults {
    use crate::surgery::SurgeryParams;

    fn base() -> SurgeryParams {
        SurgeryParams::new(1.0, 2.0, 3.0)
    }
    pub fn eta() -> f64 {
        base().eta
    }
    pub fn eps_cyl() -> f64 {
        base().eps_cyl
    }
    pub fn window_l() -> f64 {
        base().window_l
    }
    pub fn target_eps() -> f64 {
        crate::isotopy::IsotopyParams::default().target_eps
    }
    pub fn frames_per_stage() -> usize {
        crate::isotopy::IsotopyParams::default().frames_per_stage
    }
    pub fn frame_stride() -> u64 {
        crate::surgery::SurgeryFlowOptions::default().frame_stride
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsotopySection {
    #[serde(default = "defaults::target_eps")]
    pub target_eps: f64,
    #[serde(default = "defaults::frames_per_stage")]
    pub frames_per_stage: usize,
}

impl Default for IsotopySection {
    fn default() -> Self {
        IsotopySection { target_eps: defaults::target_eps(), frames_per_stage: defaults::frames_per_stage() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "defaults::frame_stride")]
    pub frame_stride: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { frame_stride: defaults::frame_stride() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub dim: usize,
    pub initial: InitialProfile,
    pub grid: Grid,
    pub surgery: SurgerySection,
    #[serde(default)]
    pub isotopy: IsotopySection,
    #[serde(default)]
    pub output: OutputSection,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        ScenarioError::Parse { line, column, message: e.message().to_string() }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn to_toml(scenario: &Scenario) -> String {
    toml::to_string(scenario).expect("scenario fields are all representable in TOML")
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Validation(m.to_string()));
        if self.dim < 2 {
            return bad("dim >= 2");
        }
        if !(self.grid.dx > 0.0 && self.grid.cfl > 0.0) {
            return bad("dx > 0 and cfl > 0");
        }
        let s = &self.surgery;
        if !(s.h1 > 0.0 && s.h1 < s.h2 && s.h2 < s.h3) {
            return bad("H1 < H2 < H3");
        }
        if !(s.eta > 0.0 && s.eps_cyl > 0.0 && s.window_l > 0.0) {
            return bad("eta, eps_cyl and window_L positive");
        }
        if !(self.isotopy.target_eps > 0.0 && self.isotopy.frames_per_stage > 0) {
            return bad("target_eps > 0 and frames_per_stage > 0");
        }
        if self.output.frame_stride == 0 {
            return bad("frame_stride > 0");
        }
        let positive = match &self.initial {
            InitialProfile::Sphere { radius, .. } => *radius > 0.0,
            InitialProfile::Dumbbell { bell_radius, neck_radius, half_length } => {
                *neck_radius > 0.0 && neck_radius < bell_radius && *half_length > 0.0
            }
            InitialProfile::Torus { core_radius, tube_radius } => *tube_radius > 0.0 && tube_radius < core_radius,
            InitialProfile::Samples { radii, left_pole, right_pole, .. } => {
                left_pole < right_pole && radii.iter().all(|r| *r > 0.0)
            }
        };
        if !positive {
            return bad("initial profile dimensions positive and consistent");
        }
        Ok(())
    }

    pub fn initial_surface(&self) -> Result<ProfileSurface, ScenarioError> {
        let (n, dx) = (self.dim, self.grid.dx);
        Ok(match &self.initial {
            InitialProfile::Sphere { radius, center } => ProfileSurface::sphere(n, *radius, *center, dx)?,
            InitialProfile::Dumbbell { bell_radius, neck_radius, half_length } => {
                ProfileSurface::dumbbell(n, *bell_radius, *neck_radius, *half_length, dx)?
            }
            InitialProfile::Torus { core_radius, tube_radius } => {
                ProfileSurface::torus(n, *core_radius, *tube_radius, dx)?
            }
            InitialProfile::Samples { first_index, radii, left_pole, right_pole } => {
                ProfileSurface::capped_from_samples(n, dx, *first_index, radii.clone(), *left_pole, *right_pole)?
            }
        })
    }

    pub fn flow_state(&self) -> Result<FlowState, ScenarioError> {
        let params = FlowParams { cfl: self.grid.cfl, ..FlowParams::default() };
        FlowState::new(vec![self.initial_surface()?], params)
            .map_err(|e| ScenarioError::Validation(e.to_string()))
    }

    pub fn surgery_params(&self) -> SurgeryParams {
        let s = &self.surgery;
        SurgeryParams {
            h1: s.h1,
            h2: s.h2,
            h3: s.h3,
            eta: s.eta,
            eps_cyl: s.eps_cyl,
            window_l: s.window_l,
            cap_template: CapTemplate::Spherical,
        }
    }

    pub fn isotopy_params(&self) -> IsotopyParams {
        IsotopyParams { target_eps: self.isotopy.target_eps, frames_per_stage: self.isotopy.frames_per_stage }
    }

    pub fn flow_options(&self) -> SurgeryFlowOptions {
        SurgeryFlowOptions { frame_stride: self.output.frame_stride }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
dim = 2
[initial]
kind = "sphere"
radius = 0.5
[grid]
dx = 0.01
[surgery]
h1 = 20.0
h2 = 60.0
h3 = 120.0
"#;

    #[test]
    fn defaults_fill_optional_sections() {
        let sc = parse_scenario(MINIMAL).unwrap();
        assert_eq!(sc.initial, InitialProfile::Sphere { radius: 0.5, center: 0.0 });
        assert_eq!(sc.grid.cfl, FlowParams::default().cfl);
        assert_eq!(sc.isotopy_params(), IsotopyParams::default());
        assert_eq!(sc.flow_options(), SurgeryFlowOptions::default());
        let p = sc.surgery_params();
        assert_eq!((p.eta, p.eps_cyl, p.window_l), (0.2, 0.2, 5.0));
        assert_eq!(sc.initial_surface().unwrap().poles(), Some((-0.5, 0.5)));
    }

    #[test]
    fn misordered_thresholds_are_invalid() {
        let text = MINIMAL.replace("h2 = 60.0", "h2 = 10.0");
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(&err, ScenarioError::Validation(m) if m.contains("H1 < H2 < H3")), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("dx = 0.01", "dx = 0.01\nspacing = 2");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Parse { .. })));
    }

    #[test]
    fn parse_errors_carry_a_position() {
        let text = MINIMAL.replace("radius = 0.5", "radius = = 0.5");
        let ScenarioError::Parse { line, column, .. } = parse_scenario(&text).unwrap_err() else {
            panic!("expected a parse error");
        };
        assert_eq!(line, 5);
        assert!(column >= 10);
    }

    #[test]
    fn bundled_scenarios_round_trip() {
        for name in ["dumbbell", "sphere", "torus"] {
            let path = format!("{}/../../scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"));
            let sc = parse_scenario(&std::fs::read_to_string(path).unwrap()).unwrap();
            assert_eq!(parse_scenario(&to_toml(&sc)).unwrap(), sc);
        }
    }

    #[test]
    fn torus_must_be_thinner_than_its_core() {
        let text = MINIMAL.replace("kind = \"sphere\"\nradius = 0.5", "kind = \"torus\"\ncore_radius = 0.1\ntube_radius = 0.2");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Validation(_))));
    }
}
