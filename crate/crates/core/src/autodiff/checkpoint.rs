//! JSON checkpoint format: `{name: {"shape": [r, c], "data": [..]}}`, keys
//! sorted. Floats are written in shortest round-trip form, so any finite
//! parameter set survives write -> read -> write byte-identically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Params, Tensor};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tensor {name:?}: shape {shape:?} does not match {len} values")]
    Shape {
        name: String,
        shape: [usize; 2],
        len: usize,
    },
    #[error("tensor {name:?}: non-finite value")]
    NonFinite { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn from_tensor(t: &Tensor) -> Self {
        TensorRecord {
            shape: [t.rows(), t.cols()],
            data: t.data().to_vec(),
        }
    }

    pub fn into_tensor(self, name: &str) -> Result<Tensor, CheckpointError> {
        let len = self.data.len();
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::NonFinite {
                name: name.to_string(),
            });
        }
        Tensor::from_vec(self.shape[0], self.shape[1], self.data).map_err(|_| {
            CheckpointError::Shape {
                name: name.to_string(),
                shape: self.shape,
                len,
            }
        })
    }
}

pub(crate) fn params_to_records(params: &Params) -> BTreeMap<String, TensorRecord> {
    params
        .iter()
        .map(|(k, v)| (k.clone(), TensorRecord::from_tensor(v)))
        .collect()
}

pub(crate) fn params_from_records(
    records: BTreeMap<String, TensorRecord>,
) -> Result<Params, CheckpointError> {
    let mut params = Params::new();
    for (name, rec) in records {
        let t = rec.into_tensor(&name)?;
        params.insert(name, t);
    }
    Ok(params)
}

pub fn params_to_json(params: &Params) -> String {
    let mut s = serde_json::to_string(&params_to_records(params)).expect("finite params serialize");
    s.push('\n');
    s
}

pub fn params_from_json(text: &str) -> Result<Params, CheckpointError> {
    let records: BTreeMap<String, TensorRecord> = serde_json::from_str(text)?;
    params_from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_byte_identical(
            a in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 6),
            b in proptest::collection::vec(-1e3f64..1e3, 3),
        ) {
            let mut p = Params::new();
            p.insert("layer.w", Tensor::from_vec(2, 3, a).unwrap());
            p.insert("layer.b", Tensor::from_vec(1, 3, b).unwrap());
            let first = params_to_json(&p);
            let back = params_from_json(&first).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(params_to_json(&back), first);
        }
    }

    #[test]
    fn keys_are_sorted_and_shape_checked() {
        let mut p = Params::new();
        p.insert("z", Tensor::zeros(1, 1));
        p.insert("a", Tensor::zeros(1, 2));
        let s = params_to_json(&p);
        assert!(s.find("\"a\"").unwrap() < s.find("\"z\"").unwrap());
        assert!(s.starts_with(r#"{"a":{"shape":[1,2],"data":[0.0,0.0]}"#));

        let bad = r#"{"w":{"shape":[2,2],"data":[1.0]}}"#;
        assert!(matches!(
            params_from_json(bad),
            Err(CheckpointError::Shape { .. })
        ));
    }
}
