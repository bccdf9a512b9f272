use thiserror::Error;

/// A parameter record violated one of its invariants.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid {field} = {value}: must be {constraint}")]
pub struct ParamError {
    pub field: &'static str,
    pub value: f64,
    pub constraint: &'static str,
}

impl ParamError {
    pub(crate) fn check(
        field: &'static str,
        value: f64,
        ok: bool,
        constraint: &'static str,
    ) -> Result<(), ParamError> {
        if ok && !value.is_nan() {
            Ok(())
        } else {
            Err(ParamError { field, value, constraint })
        }
    }
}
