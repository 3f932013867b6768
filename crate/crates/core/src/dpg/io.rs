//! Parameter file round-trip: every gate tensor and the expert bank, stored
//! as JSON entries with explicit shape headers.

use super::{DpgError, ExpertBank, StaircaseParams, WeightMode};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsFile {
    tensors: BTreeMap<String, TensorEntry>,
}

/// Dimensions a parameter file must provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpgDims {
    pub channels: usize,
    pub gating_size: usize,
    pub hidden: usize,
    pub num_experts: usize,
    pub num_proposals: usize,
    /// Feature width of the expert bank; usually equal to `channels`.
    pub feature_dim: usize,
}

fn entry3(t: &Array3<f64>) -> TensorEntry {
    let d = t.dim();
    TensorEntry {
        shape: vec![d.0, d.1, d.2],
        data: t.iter().copied().collect(),
    }
}

fn entry2(t: &Array2<f64>) -> TensorEntry {
    let d = t.dim();
    TensorEntry {
        shape: vec![d.0, d.1],
        data: t.iter().copied().collect(),
    }
}

/// Writes the seven tensors (`dw2`, `dw3`, `dw4`, `fc1`, `fc2`, `boxes`,
/// `features`) to `path` as JSON.
pub fn save_params(
    path: &Path,
    params: &StaircaseParams,
    bank: &ExpertBank,
) -> Result<(), DpgError> {
    let mut tensors = BTreeMap::new();
    tensors.insert("dw2".to_string(), entry3(&params.dw2));
    tensors.insert("dw3".to_string(), entry3(&params.dw3));
    tensors.insert("dw4".to_string(), entry3(&params.dw4));
    tensors.insert("fc1".to_string(), entry2(&params.fc1));
    tensors.insert("fc2".to_string(), entry2(&params.fc2));
    tensors.insert("boxes".to_string(), entry3(bank.boxes()));
    tensors.insert("features".to_string(), entry3(bank.features()));
    let file = ParamsFile { tensors };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

fn take(file: &mut ParamsFile, name: &str, expected: &[usize]) -> Result<TensorEntry, DpgError> {
    let entry = file
        .tensors
        .remove(name)
        .ok_or_else(|| DpgError::MissingTensor(name.to_string()))?;
    if entry.shape != expected {
        return Err(DpgError::ShapeMismatch {
            tensor: name.to_string(),
            expected: expected.to_vec(),
            got: entry.shape,
        });
    }
    let want: usize = entry.shape.iter().product();
    if entry.data.len() != want {
        return Err(DpgError::DataSize {
            tensor: name.to_string(),
            shape: entry.shape,
            expected: want,
            got: entry.data.len(),
        });
    }
    Ok(entry)
}

fn tensor3(entry: TensorEntry) -> Array3<f64> {
    let s = entry.shape;
    Array3::from_shape_vec((s[0], s[1], s[2]), entry.data)
        .expect("length was validated against the shape")
}

fn tensor2(entry: TensorEntry) -> Array2<f64> {
    let s = entry.shape;
    Array2::from_shape_vec((s[0], s[1]), entry.data)
        .expect("length was validated against the shape")
}

/// Loads gate parameters and the expert bank, validating every declared
/// shape against `dims` before any tensor is used. `tau` and the weight mode
/// come from configuration, not the file.
pub fn load_params(
    path: &Path,
    dims: &DpgDims,
    tau: f64,
    weight_mode: WeightMode,
) -> Result<(StaircaseParams, ExpertBank), DpgError> {
    let mut file: ParamsFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let c = dims.channels;
    let s2 = dims.gating_size * dims.gating_size;
    let out = match weight_mode {
        WeightMode::PerProposal => dims.num_experts * dims.num_proposals,
        WeightMode::PerExpert => dims.num_experts,
    };
    let dw2 = tensor3(take(&mut file, "dw2", &[c, 3, 3])?);
    let dw3 = tensor3(take(&mut file, "dw3", &[2 * c, 3, 3])?);
    let dw4 = tensor3(take(&mut file, "dw4", &[3 * c, 3, 3])?);
    let fc1 = tensor2(take(&mut file, "fc1", &[s2, dims.hidden])?);
    let fc2 = tensor2(take(&mut file, "fc2", &[dims.hidden, out])?);
    let boxes = tensor3(take(
        &mut file,
        "boxes",
        &[dims.num_experts, dims.num_proposals, 4],
    )?);
    let features = tensor3(take(
        &mut file,
        "features",
        &[dims.num_experts, dims.num_proposals, dims.feature_dim],
    )?);
    let params = StaircaseParams {
        dw2,
        dw3,
        dw4,
        fc1,
        fc2,
        gating_size: dims.gating_size,
        tau,
        weight_mode,
    };
    params.validate(c, dims.num_experts, dims.num_proposals)?;
    let bank = ExpertBank::new(boxes, features)?;
    Ok((params, bank))
}
