//! Binary containers: model checkpoints, dictionaries and datasets.
//!
//! Checkpoints and dictionaries share one container: the magic string
//! `SDCN1`, a config block (whose first byte tags the payload kind), then
//! named tensors as (name length, name, rank, dims, little-endian f64 data).
//! Datasets use the magic `SDCD1` with a header (kind, channels, dims,
//! lambda metadata) followed by packed per-sample records (label byte,
//! lambda, noisy tensor, clean tensor). Writes are byte-deterministic and
//! round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{NetworkConfig, NetworkParams};
use crate::src_baseline::Dictionary;
use crate::synth::{ClassLabel, Dataset, DatasetKind, Pol, Sample};
use crate::tensor::Tensor;

const MODEL_MAGIC: &[u8; 5] = b"SDCN1";
const DATASET_MAGIC: &[u8; 5] = b"SDCD1";
const KIND_MODEL: u8 = 1;
const KIND_DICTIONARY: u8 = 2;

// ---------------------------------------------------------------------------
// little-endian primitives
// ---------------------------------------------------------------------------

struct Reader<R: Read> {
    inner: R,
    path: String,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("{}: truncated file ({})", self.path, e)))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.bytes(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.bytes(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 4096 {
            return Err(Error::Format(format!(
                "{}: implausible name length {}",
                self.path, len
            )));
        }
        String::from_utf8(self.bytes(len)?)
            .map_err(|_| Error::Format(format!("{}: non-UTF8 name", self.path)))
    }
}

fn w_u8<W: Write>(w: &mut W, v: u8) -> std::io::Result<()> {
    w.write_all(&[v])
}

fn w_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_f64_slice<W: Write>(w: &mut W, vs: &[f64]) -> std::io::Result<()> {
    for &v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn w_string<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn w_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> std::io::Result<()> {
    w_string(w, name)?;
    w_u32(w, t.rank() as u32)?;
    for &d in t.shape() {
        w_u32(w, d as u32)?;
    }
    w_f64_slice(w, t.data())
}

fn r_tensor<R: Read>(r: &mut Reader<R>) -> Result<(String, Tensor)> {
    let name = r.string()?;
    let rank = r.u32()? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("implausible tensor rank {}", rank)));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let len: usize = shape.iter().product();
    let data = r.f64_vec(len)?;
    Ok((name, Tensor::from_vec(&shape, data)?))
}

fn open_reader(path: &Path) -> Result<Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(Reader {
        inner: BufReader::new(file),
        path: path.display().to_string(),
    })
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn w_channels<W: Write>(w: &mut W, channels: &[Pol]) -> std::io::Result<()> {
    w_u8(w, channels.len() as u8)?;
    for &p in channels {
        w_u8(w, p.code())?;
    }
    Ok(())
}

fn r_channels<R: Read>(r: &mut Reader<R>) -> Result<Vec<Pol>> {
    let n = r.u8()? as usize;
    if n == 0 || n > 3 {
        return Err(Error::Format(format!("bad channel count {}", n)));
    }
    (0..n).map(|_| Pol::from_code(r.u8()?)).collect()
}

// ---------------------------------------------------------------------------
// model checkpoints
// ---------------------------------------------------------------------------

/// Writes a model checkpoint; the round-trip through [`load_model`] is
/// bit-exact.
pub fn save_model(params: &NetworkParams, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(MODEL_MAGIC).map_err(io)?;
    w_u8(&mut w, KIND_MODEL).map_err(io)?;
    let c = &params.config;
    for v in [
        c.d1, c.d2, c.channels, c.chip_h, c.chip_w, c.filters, c.fc1, c.fc2, c.classes,
    ] {
        w_u32(&mut w, v as u32).map_err(io)?;
    }
    w_f64(&mut w, c.gamma).map_err(io)?;

    let names = params.param_names();
    let tensors = params.tensors();
    w_u32(&mut w, tensors.len() as u32).map_err(io)?;
    for (name, t) in names.iter().zip(tensors.iter()) {
        w_tensor(&mut w, name, t).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_model_config<R: Read>(r: &mut Reader<R>) -> Result<NetworkConfig> {
    let mut vals = [0usize; 9];
    for v in &mut vals {
        *v = r.u32()? as usize;
    }
    let gamma = r.f64()?;
    Ok(NetworkConfig {
        d1: vals[0],
        d2: vals[1],
        channels: vals[2],
        chip_h: vals[3],
        chip_w: vals[4],
        filters: vals[5],
        fc1: vals[6],
        fc2: vals[7],
        classes: vals[8],
        gamma,
    })
}

pub fn load_model(path: &Path) -> Result<NetworkParams> {
    let mut r = open_reader(path)?;
    let magic = r.bytes(5)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a model container (bad magic)",
            path.display()
        )));
    }
    let kind = r.u8()?;
    if kind != KIND_MODEL {
        return Err(Error::Format(format!(
            "{}: container holds kind {} (expected a model)",
            path.display(),
            kind
        )));
    }
    let config = read_model_config(&mut r)?;
    config.validate()?;
    let n = r.u32()? as usize;

    let mut params = crate::model::init_params(&config, 0)?;
    let want_names = params.param_names();
    if n != want_names.len() {
        return Err(Error::Format(format!(
            "{}: {} tensors stored, config expects {}",
            path.display(),
            n,
            want_names.len()
        )));
    }
    {
        let mut slots = params.tensors_mut();
        for (i, want) in want_names.iter().enumerate() {
            let (name, tensor) = r_tensor(&mut r)?;
            if &name != want {
                return Err(Error::Format(format!(
                    "{}: tensor {} named '{}', expected '{}'",
                    path.display(),
                    i,
                    name,
                    want
                )));
            }
            if tensor.shape() != slots[i].shape() {
                return Err(Error::Format(format!(
                    "{}: tensor '{}' has shape {:?}, expected {:?}",
                    path.display(),
                    name,
                    tensor.shape(),
                    slots[i].shape()
                )));
            }
            *slots[i] = tensor;
        }
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// dictionaries (same container, kind 2, block-range metadata)
// ---------------------------------------------------------------------------

pub fn save_dictionary(dict: &Dictionary, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(MODEL_MAGIC).map_err(io)?;
    w_u8(&mut w, KIND_DICTIONARY).map_err(io)?;
    w_channels(&mut w, &dict.channels).map_err(io)?;
    for v in [
        dict.chip_h,
        dict.chip_w,
        dict.n_targets,
        dict.n_confusers,
        dict.n_grounds,
    ] {
        w_u32(&mut w, v as u32).map_err(io)?;
    }
    let mats = dict.atom_matrices();
    w_u32(&mut w, mats.len() as u32).map_err(io)?;
    for (ch, mat) in mats.iter().enumerate() {
        w_tensor(&mut w, &format!("atoms.ch{}", ch), mat).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    let mut r = open_reader(path)?;
    let magic = r.bytes(5)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a dictionary container (bad magic)",
            path.display()
        )));
    }
    let kind = r.u8()?;
    if kind != KIND_DICTIONARY {
        return Err(Error::Format(format!(
            "{}: container holds kind {} (expected a dictionary)",
            path.display(),
            kind
        )));
    }
    let channels = r_channels(&mut r)?;
    let chip_h = r.u32()? as usize;
    let chip_w = r.u32()? as usize;
    let n_targets = r.u32()? as usize;
    let n_confusers = r.u32()? as usize;
    let n_grounds = r.u32()? as usize;
    let n = r.u32()? as usize;
    if n != channels.len() {
        return Err(Error::Format(format!(
            "{}: {} atom matrices for {} channels",
            path.display(),
            n,
            channels.len()
        )));
    }
    let mut mats = Vec::with_capacity(n);
    for ch in 0..n {
        let (name, t) = r_tensor(&mut r)?;
        let want = format!("atoms.ch{}", ch);
        if name != want {
            return Err(Error::Format(format!(
                "{}: tensor named '{}', expected '{}'",
                path.display(),
                name,
                want
            )));
        }
        mats.push(t);
    }
    Dictionary::from_parts(channels, chip_h, chip_w, n_targets, n_confusers, n_grounds, mats)
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(DATASET_MAGIC).map_err(io)?;
    match &ds.kind {
        DatasetKind::Train { .. } => w_u8(&mut w, 0).map_err(io)?,
        DatasetKind::Test { .. } => w_u8(&mut w, 1).map_err(io)?,
    }
    w_channels(&mut w, &ds.channels).map_err(io)?;
    w_u32(&mut w, ds.chip_h as u32).map_err(io)?;
    w_u32(&mut w, ds.chip_w as u32).map_err(io)?;
    match &ds.kind {
        DatasetKind::Train {
            lambda_min,
            lambda_max,
        } => {
            w_f64(&mut w, *lambda_min).map_err(io)?;
            w_f64(&mut w, *lambda_max).map_err(io)?;
        }
        DatasetKind::Test { lambdas } => {
            w_u32(&mut w, lambdas.len() as u32).map_err(io)?;
            for &l in lambdas {
                w_f64(&mut w, l).map_err(io)?;
            }
        }
    }
    w_u64(&mut w, ds.samples.len() as u64).map_err(io)?;
    for s in &ds.samples {
        w_u8(&mut w, s.label.index() as u8).map_err(io)?;
        w_f64(&mut w, s.lambda).map_err(io)?;
        w_f64_slice(&mut w, s.noisy.data()).map_err(io)?;
        w_f64_slice(&mut w, s.clean.data()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = open_reader(path)?;
    let magic = r.bytes(5)?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a dataset container (bad magic)",
            path.display()
        )));
    }
    let kind_byte = r.u8()?;
    let channels = r_channels(&mut r)?;
    let chip_h = r.u32()? as usize;
    let chip_w = r.u32()? as usize;
    let kind = match kind_byte {
        0 => DatasetKind::Train {
            lambda_min: r.f64()?,
            lambda_max: r.f64()?,
        },
        1 => {
            let n = r.u32()? as usize;
            let mut lambdas = Vec::with_capacity(n);
            for _ in 0..n {
                lambdas.push(r.f64()?);
            }
            DatasetKind::Test { lambdas }
        }
        other => {
            return Err(Error::Format(format!(
                "{}: unknown dataset kind {}",
                path.display(),
                other
            )))
        }
    };
    let n_samples = r.u64()? as usize;
    let chip_len = channels.len() * chip_h * chip_w;
    let shape = [channels.len(), chip_h, chip_w];
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let label = ClassLabel::from_index(r.u8()? as usize)?;
        let lambda = r.f64()?;
        let noisy = Tensor::from_vec(&shape, r.f64_vec(chip_len)?)?;
        let clean = Tensor::from_vec(&shape, r.f64_vec(chip_len)?)?;
        samples.push(Sample {
            label,
            lambda,
            noisy,
            clean,
        });
    }
    Ok(Dataset {
        channels,
        chip_h,
        chip_w,
        kind,
        samples,
    })
}

// ---------------------------------------------------------------------------
// describe
// ---------------------------------------------------------------------------

/// Human-readable header summary of any container this module writes.
pub fn describe(path: &Path) -> Result<String> {
    let mut r = open_reader(path)?;
    let magic = r.bytes(5)?;
    if magic == DATASET_MAGIC {
        let kind_byte = r.u8()?;
        let channels = r_channels(&mut r)?;
        let chip_h = r.u32()?;
        let chip_w = r.u32()?;
        let lambda_desc = match kind_byte {
            0 => {
                let lo = r.f64()?;
                let hi = r.f64()?;
                format!("train, lambda ~ U[{}, {}]", lo, hi)
            }
            1 => {
                let n = r.u32()? as usize;
                let ls: Vec<String> = (0..n)
                    .map(|_| r.f64().map(|l| format!("{}", l)))
                    .collect::<Result<_>>()?;
                format!("test, lambda levels {{{}}}", ls.join(", "))
            }
            other => return Err(Error::Format(format!("unknown dataset kind {}", other))),
        };
        let n_samples = r.u64()?;
        return Ok(format!(
            "dataset {}\n  kind: {}\n  channels: {}\n  chip: {}x{}\n  samples: {}",
            path.display(),
            lambda_desc,
            Pol::combo_name(&channels),
            chip_h,
            chip_w,
            n_samples
        ));
    }
    if magic == MODEL_MAGIC {
        let kind = r.u8()?;
        match kind {
            KIND_MODEL => {
                let c = read_model_config(&mut r)?;
                let n = r.u32()?;
                return Ok(format!(
                    "model checkpoint {}\n  d1: {}  d2: {}  filters: {}  fc: {}/{}\n  input: {} channel(s), {}x{}\n  gamma: {}\n  tensors: {}",
                    path.display(),
                    c.d1,
                    c.d2,
                    c.filters,
                    c.fc1,
                    c.fc2,
                    c.channels,
                    c.chip_h,
                    c.chip_w,
                    c.gamma,
                    n
                ));
            }
            KIND_DICTIONARY => {
                let channels = r_channels(&mut r)?;
                let chip_h = r.u32()?;
                let chip_w = r.u32()?;
                let n_t = r.u32()?;
                let n_c = r.u32()?;
                let n_g = r.u32()?;
                return Ok(format!(
                    "dictionary {}\n  channels: {}\n  chip: {}x{}\n  columns: {} targets | {} confusers | {} grounds",
                    path.display(),
                    Pol::combo_name(&channels),
                    chip_h,
                    chip_w,
                    n_t,
                    n_c,
                    n_g
                ));
            }
            other => {
                return Err(Error::Format(format!(
                    "{}: unknown container kind {}",
                    path.display(),
                    other
                )))
            }
        }
    }
    Err(Error::Format(format!(
        "{}: unrecognized magic {:?}",
        path.display(),
        magic
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::src_baseline::build_reference_dictionary;
    use crate::synth::{build_test_set, build_training_set, GenConfig};

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            d1: 2,
            d2: 1,
            channels: 2,
            chip_h: 8,
            chip_w: 8,
            filters: 3,
            fc1: 6,
            fc2: 4,
            classes: 2,
            gamma: 1.0,
        }
    }

    fn small_gen() -> GenConfig {
        GenConfig {
            channels: vec![Pol::HH, Pol::VV],
            chip_h: 16,
            chip_w: 16,
            ground_corr: 1.5,
            lambda_range: (0.5, 5.5),
            n_per_class: 4,
            test_lambdas: vec![1.0, 2.0],
            test_angles: 2,
            seed: 3,
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sdcn");
        let params = init_params(&small_config(), 42).unwrap();
        save_model(&params, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(params, loaded);

        // Bytes are stable across a save/load/save cycle.
        let path2 = dir.path().join("model2.sdcn");
        save_model(&loaded, &path2).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(&path2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_round_trip_train_and_test() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_gen();
        for (name, ds) in [
            ("train.sdcd", build_training_set(&cfg).unwrap()),
            ("test.sdcd", build_test_set(&cfg).unwrap()),
        ] {
            let path = dir.path().join(name);
            save_dataset(&ds, &path).unwrap();
            let loaded = load_dataset(&path).unwrap();
            assert_eq!(ds, loaded);
        }
    }

    #[test]
    fn dictionary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.sdcn");
        let dict = build_reference_dictionary(&[Pol::HH], 16, 16, 5, 1.5, 1).unwrap();
        save_dictionary(&dict, &path).unwrap();
        let loaded = load_dictionary(&path).unwrap();
        assert_eq!(dict, loaded);
    }

    #[test]
    fn kind_confusion_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("model.sdcn");
        let dict_path = dir.path().join("dict.sdcn");
        save_model(&init_params(&small_config(), 0).unwrap(), &model_path).unwrap();
        save_dictionary(
            &build_reference_dictionary(&[Pol::HH], 16, 16, 2, 1.5, 1).unwrap(),
            &dict_path,
        )
        .unwrap();
        assert!(load_dictionary(&model_path).is_err());
        assert!(load_model(&dict_path).is_err());
        assert!(load_dataset(&model_path).is_err());
    }

    #[test]
    fn describe_names_every_container() {
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("m.sdcn");
        save_model(&init_params(&small_config(), 0).unwrap(), &model_path).unwrap();
        assert!(describe(&model_path).unwrap().contains("model checkpoint"));

        let ds_path = dir.path().join("d.sdcd");
        save_dataset(&build_training_set(&small_gen()).unwrap(), &ds_path).unwrap();
        let text = describe(&ds_path).unwrap();
        assert!(text.contains("lambda ~ U[0.5, 5.5]"), "{}", text);
        assert!(text.contains("HH-VV"), "{}", text);

        let dict_path = dir.path().join("dict.sdcn");
        save_dictionary(
            &build_reference_dictionary(&[Pol::HH], 16, 16, 2, 1.5, 1).unwrap(),
            &dict_path,
        )
        .unwrap();
        assert!(describe(&dict_path).unwrap().contains("grounds"));
    }

    #[test]
    fn truncated_file_reports_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sdcn");
        save_model(&init_params(&small_config(), 0).unwrap(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format(_))));
    }
}
