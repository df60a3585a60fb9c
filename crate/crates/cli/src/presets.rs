use schur_ode::poly::{parse_definition, ScaleMap, SystemDefinition};
use schur_ode::Result;

use crate::PresetName;

const DUFFING: &str = "\
var q p
param eps 0.1
dq = 1 p
dp = -1 q
perturb eps
dp = -1 q^3
";

const VANDERPOL: &str = "\
var q p
param eps 0.1
dq = 1 p
dp = -1 q
perturb eps
dp = 1 p ; -1 q^2 p
";

pub const VANDERPOL_SCALE: f64 = 2.0;

pub fn definition(name: PresetName, epsilon: Option<f64>) -> Result<SystemDefinition> {
    let mut def = match name {
        PresetName::Duffing => parse_definition(DUFFING)?,
        PresetName::Vanderpol => parse_definition(VANDERPOL)?,
        PresetName::VanderpolScaled => parse_definition(VANDERPOL)?
            .normalized(&ScaleMap::new(vec![VANDERPOL_SCALE; 2], 1.0)?)?,
    };
    if let Some(e) = epsilon {
        def.set_param("eps", e)?;
    }
    Ok(def)
}

pub fn render(name: PresetName, epsilon: Option<f64>) -> Result<String> {
    let header = match name {
        PresetName::Duffing => "# Duffing oscillator: q'' = -q - eps q^3\n".to_string(),
        PresetName::Vanderpol => "# Van der Pol oscillator: q'' = -q + eps (1 - q^2) q'\n".to_string(),
        PresetName::VanderpolScaled => format!(
            "# Van der Pol oscillator in r = q/{0}, s = p/{0}\n",
            VANDERPOL_SCALE
        ),
    };
    Ok(header + &definition(name, epsilon)?.serialize())
}
