//! Single-file tensor container in the safetensors layout.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub tensors: BTreeMap<String, StoredTensor>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorFile {
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.insert(name.into(), StoredTensor { shape, data });
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.get(name)
    }

    /// Tensor `name` with exactly `shape`, or a compatibility error naming both.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<&StoredTensor> {
        match self.tensors.get(name) {
            None => Err(Error::Compatibility(format!(
                "missing tensor {name} (expected shape {shape:?}); found {:?}",
                self.tensors.keys().collect::<Vec<_>>()
            ))),
            Some(t) if t.shape != shape => Err(Error::Compatibility(format!(
                "tensor {name}: expected shape {shape:?}, found {:?}",
                t.shape
            ))),
            Some(t) => Ok(t),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<(&String, Vec<u8>, &Vec<usize>)> = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let raw = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                (name, raw, &t.shape)
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(name, raw, shape)| {
                TensorView::new(Dtype::F32, shape.to_vec(), raw)
                    .map(|v| (name.as_str(), v))
                    .map_err(|e| Error::Format {
                        offset: 0,
                        msg: format!("tensor {name}: {e}"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        let meta = (!meta.is_empty()).then_some(meta);
        safetensors::serialize_to_file(views, meta, path).map_err(|e| Error::Format {
            offset: 0,
            msg: format!("{}: {e}", path.display()),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, header) = SafeTensors::read_metadata(&buf).map_err(|e| Error::Format {
            offset: 0,
            msg: format!("{}: {e}", path.display()),
        })?;
        let st = SafeTensors::deserialize(&buf).map_err(|e| Error::Format {
            offset: 0,
            msg: format!("{}: {e}", path.display()),
        })?;
        let mut out = TensorFile::default();
        if let Some(meta) = header.metadata() {
            out.metadata = meta.clone().into_iter().collect();
        }
        for (name, view) in st.iter() {
            let data: Vec<f32> = match view.dtype() {
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
                    .collect(),
                other => {
                    return Err(Error::Compatibility(format!(
                        "tensor {name} has dtype {other}; expected F32 or F64"
                    )))
                }
            };
            out.insert(name, view.shape().to_vec(), data);
        }
        Ok(out)
    }
}
