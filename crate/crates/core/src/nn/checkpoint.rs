//! Checkpoint files: magic, JSON header, little-endian f64 payload in
//! parameter declaration order, optionally followed by the EMA shadow.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::optim::EmaState;
use crate::nn::store::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DAWMCK01";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    spec: serde_json::Value,
    step: u64,
    ema_present: bool,
    tensor_names: Vec<String>,
    tensor_lens: Vec<usize>,
}

/// A loaded checkpoint; `spec` is the module-specific architecture record
/// needed to rebuild the network before loading values.
#[derive(Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub spec: serde_json::Value,
    pub step: u64,
    pub values: Vec<Vec<f64>>,
    pub ema: Option<Vec<Vec<f64>>>,
    pub tensor_names: Vec<String>,
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    spec: serde_json::Value,
    step: u64,
    store: &ParamStore,
    ema: Option<&EmaState>,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)?;
    let values = store.snapshot();
    let header = CheckpointHeader {
        kind: kind.to_string(),
        spec,
        step,
        ema_present: ema.is_some(),
        tensor_names: store.iter_names().cloned().collect(),
        tensor_lens: values.iter().map(|t| t.len()).collect(),
    };
    let mut hbytes = serde_json::to_vec(&header)?;
    hbytes.push(b'\n');
    w.write_all(&hbytes)?;
    for tensor in &values {
        for v in tensor {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    if let Some(ema) = ema {
        for tensor in ema.shadow() {
            for v in tensor {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Truncated(format!("{}: missing magic", path.display())))?;
    if &magic != CHECKPOINT_MAGIC {
        if magic[..6] == CHECKPOINT_MAGIC[..6] {
            return Err(Error::VersionMismatch {
                expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        return Err(Error::Format(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut header_line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)
            .map_err(|_| Error::Truncated("checkpoint header".into()))?;
        if byte[0] == b'\n' {
            break;
        }
        header_line.push(byte[0]);
        if header_line.len() > 1 << 20 {
            return Err(Error::Format("unterminated checkpoint header".into()));
        }
    }
    let header: CheckpointHeader = serde_json::from_slice(&header_line)?;
    let total: usize = header.tensor_lens.iter().sum();
    let n_payload = if header.ema_present { 2 * total } else { total };
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() < n_payload * 8 {
        return Err(Error::Truncated(format!(
            "checkpoint payload {} bytes, expected {}",
            payload.len(),
            n_payload * 8
        )));
    }
    if payload.len() > n_payload * 8 {
        return Err(Error::DimensionMismatch(
            "checkpoint payload larger than header implies".into(),
        ));
    }
    let mut floats = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut read_block = |lens: &[usize]| -> Vec<Vec<f64>> {
        lens.iter()
            .map(|&len| (0..len).map(|_| floats.next().unwrap()).collect())
            .collect()
    };
    let values = read_block(&header.tensor_lens);
    let ema = header
        .ema_present
        .then(|| read_block(&header.tensor_lens));
    Ok(Checkpoint {
        kind: header.kind,
        spec: header.spec,
        step: header.step,
        values,
        ema,
        tensor_names: header.tensor_names,
    })
}

impl Checkpoint {
    /// Loads the checkpoint values into a freshly built store, verifying the
    /// declaration order matches.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.iter_names().cloned().collect();
        if names != self.tensor_names {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint tensors {:?}... do not match module {:?}...",
                self.tensor_names.first(),
                names.first()
            )));
        }
        store.load_snapshot(&self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::store::Init;
    use crate::rng::Rng;

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let mut rng = Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        store.add("a.w", &[4, 3], Init::KaimingUniform { fan_in: 3 }, &mut rng);
        store.add("a.b", &[4], Init::SmallUniform { scale: 0.3 }, &mut rng);
        let mut ema = EmaState::new(&store, 0.995);
        ema.update(&store);

        let dir = std::env::temp_dir().join("dawm_ck_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.ck");
        save_checkpoint(
            &path,
            "test",
            serde_json::json!({"widths": [3, 4]}),
            42,
            &store,
            Some(&ema),
        )
        .unwrap();

        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.kind, "test");
        assert_eq!(ck.step, 42);
        assert_eq!(ck.values, store.snapshot());
        assert_eq!(ck.ema.as_deref().unwrap(), ema.shadow());

        let mut rebuilt = ParamStore::new();
        let mut rng2 = Rng::seed_from_u64(999);
        rebuilt.add("a.w", &[4, 3], Init::Zero, &mut rng2);
        rebuilt.add("a.b", &[4], Init::Zero, &mut rng2);
        ck.restore_into(&mut rebuilt).unwrap();
        assert_eq!(rebuilt.snapshot(), store.snapshot());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn checkpoint_rejects_wrong_magic() {
        let dir = std::env::temp_dir().join("dawm_ck_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ck");
        std::fs::write(&path, b"WHATEVERjunk").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
        std::fs::remove_file(&path).unwrap();
    }
}
