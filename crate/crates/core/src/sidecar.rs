//! Input sidecar files: scalar arguments and array contents for a kernel.
//!
//! ```json
//! {"args": {"n": 8}, "arrays": {"a": [1, 2, 3], "b": {"fill": 0}, "c": {"seed": 7}}}
//! ```
//!
//! Missing arguments default to 0 and missing arrays to all zeros.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::ast::ParamKind;
use crate::frontend::KernelAst;
use crate::sim::KernelInputs;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    #[serde(default)]
    pub args: BTreeMap<String, i32>,
    #[serde(default)]
    pub arrays: BTreeMap<String, ArrayInit>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArrayInit {
    Values(Vec<i32>),
    Fill {
        fill: i32,
    },
    /// Pseudo-random values in `-16..=16`.
    Seed {
        seed: u64,
    },
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SidecarError {
    #[error("malformed input file: {0}")]
    Json(String),
    #[error("kernel has no parameter '{0}'")]
    Unknown(String),
    #[error("'{0}' is an array, not a scalar")]
    NotScalar(String),
    #[error("'{0}' is a scalar, not an array")]
    NotArray(String),
    #[error("array '{name}' has length {len} but {given} values were given")]
    Length {
        name: String,
        len: u32,
        given: usize,
    },
}

impl InputSpec {
    pub fn from_json(text: &str) -> Result<Self, SidecarError> {
        serde_json::from_str(text).map_err(|e| SidecarError::Json(e.to_string()))
    }

    pub fn resolve(&self, ast: &KernelAst) -> Result<KernelInputs, SidecarError> {
        for name in self.args.keys() {
            match ast.param(name) {
                None => return Err(SidecarError::Unknown(name.clone())),
                Some(p) if p.kind != ParamKind::Scalar => {
                    return Err(SidecarError::NotScalar(name.clone()))
                }
                _ => {}
            }
        }
        for name in self.arrays.keys() {
            match ast.param(name) {
                None => return Err(SidecarError::Unknown(name.clone())),
                Some(p) if p.kind == ParamKind::Scalar => {
                    return Err(SidecarError::NotArray(name.clone()))
                }
                _ => {}
            }
        }
        let args = ast
            .scalar_params()
            .map(|p| self.args.get(&p.name).copied().unwrap_or(0))
            .collect();
        let mut arrays = Vec::new();
        for (p, len) in ast.array_params() {
            let values = match self.arrays.get(&p.name) {
                None => vec![0; len as usize],
                Some(ArrayInit::Fill { fill }) => vec![*fill; len as usize],
                Some(ArrayInit::Seed { seed }) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    (0..len).map(|_| rng.gen_range(-16..=16)).collect()
                }
                Some(ArrayInit::Values(v)) => {
                    if v.len() != len as usize {
                        return Err(SidecarError::Length {
                            name: p.name.clone(),
                            len,
                            given: v.len(),
                        });
                    }
                    v.clone()
                }
            };
            arrays.push(values);
        }
        Ok(KernelInputs { args, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;

    fn kernel() -> KernelAst {
        parse("kernel k(n:i32, a:i32[3], b:i32[4], c:i32[2]) { return n; }").unwrap()
    }

    #[test]
    fn all_three_array_forms() {
        let spec = InputSpec::from_json(
            r#"{"args":{"n":5},"arrays":{"a":[1,2,3],"b":{"fill":9},"c":{"seed":4}}}"#,
        )
        .unwrap();
        let inputs = spec.resolve(&kernel()).unwrap();
        assert_eq!(inputs.args, vec![5]);
        assert_eq!(inputs.arrays[0], vec![1, 2, 3]);
        assert_eq!(inputs.arrays[1], vec![9; 4]);
        assert_eq!(inputs.arrays[2].len(), 2);
        assert!(inputs.arrays[2].iter().all(|v| (-16..=16).contains(v)));
        assert_eq!(spec.resolve(&kernel()).unwrap(), inputs);
    }

    #[test]
    fn defaults_are_zero() {
        let inputs = InputSpec::default().resolve(&kernel()).unwrap();
        assert_eq!(inputs.args, vec![0]);
        assert_eq!(inputs.arrays, vec![vec![0; 3], vec![0; 4], vec![0; 2]]);
    }

    #[test]
    fn mismatches_are_rejected() {
        let k = kernel();
        let bad = |json: &str| InputSpec::from_json(json).unwrap().resolve(&k).unwrap_err();
        assert!(matches!(
            bad(r#"{"args":{"m":1}}"#),
            SidecarError::Unknown(_)
        ));
        assert!(matches!(
            bad(r#"{"args":{"a":1}}"#),
            SidecarError::NotScalar(_)
        ));
        assert!(matches!(
            bad(r#"{"arrays":{"n":[1]}}"#),
            SidecarError::NotArray(_)
        ));
        assert!(matches!(
            bad(r#"{"arrays":{"a":[1]}}"#),
            SidecarError::Length { .. }
        ));
        assert!(InputSpec::from_json(r#"{"argz":{}}"#).is_err());
    }
}
