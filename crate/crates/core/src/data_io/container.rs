//! HSC1 tensor files and the HSCK checkpoint container.
//!
//! ```text
//! HSC1: "HSC1" | rank u32 | dims u64 × rank | dtype u8 (1 = f32, 2 = f64) | payload
//! HSCK: "HSCK" | version u32 | meta_len u32 | JSON meta | count u32 | (name_len u32 | name | HSC1) × count
//! ```
//!
//! All integers and values are little-endian; payloads are row-major with
//! the last axis fastest.

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::nn::{DType, ParamStore, Real, Tensor};
use crate::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"HSC1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HSCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// A decoded HSC1 block.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl Container {
    pub fn from_slice<T: Real>(dims: &[usize], data: &[T]) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::shape("Container", format!("dims {dims:?} do not match {} values", data.len())));
        }
        let payload = match T::DTYPE {
            DType::F32 => Payload::F32(data.iter().map(|v| v.to_f64_lossy() as f32).collect()),
            DType::F64 => Payload::F64(data.iter().map(|v| v.to_f64_lossy()).collect()),
        };
        Ok(Self { dims: dims.to_vec(), payload })
    }

    pub fn dtype(&self) -> DType {
        match self.payload {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match &self.payload {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f64 (exact for both stored types).
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F64(v) => v.clone(),
        }
    }

    /// Values as `T`; narrowing f64 → f32 is refused.
    pub fn to_vec<T: Real>(&self) -> Result<Vec<T>> {
        match (&self.payload, T::DTYPE) {
            (Payload::F64(_), DType::F32) => Err(Error::Config("refusing to narrow f64 data to f32".into())),
            _ => Ok(self.to_f64().into_iter().map(T::lit).collect()),
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        Tensor::from_vec(self.dims.clone(), self.to_vec()?)
    }

    pub fn to_array3(&self) -> Result<Array3<f64>> {
        match self.dims[..] {
            [h, w, c] => Ok(Array3::from_shape_vec((h, w, c), self.to_f64()).expect("checked length")),
            _ => Err(Error::shape("container", format!("expected a rank-3 tensor, found dims {:?}", self.dims))),
        }
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        match self.dims[..] {
            [h, w] | [h, w, 1] => Ok(Array2::from_shape_vec((h, w), self.to_f64()).expect("checked length")),
            _ => Err(Error::shape("container", format!("expected a rank-2 tensor, found dims {:?}", self.dims))),
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.payload {
            Payload::F32(v) => {
                out.push(1);
                v.iter().for_each(|x| x.write_le(out));
            }
            Payload::F64(v) => {
                out.push(2);
                v.iter().for_each(|x| x.write_le(out));
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    /// Decodes one block that must span all of `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, 0);
        let c = r.container()?;
        r.finish()?;
        Ok(c)
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], base: u64) -> Self {
        Self { bytes, pos: 0, base }
    }

    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.base + at as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(self.err(self.bytes.len(), format!("truncated {what}: need {n} bytes, {left} left")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        if self.bytes.len() - at < 4 {
            return Err(self.err(at, format!("missing {} magic", String::from_utf8_lossy(magic))));
        }
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(self.err(at, format!("bad magic {:?}, expected {}", String::from_utf8_lossy(got), String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.take(n, what)
    }

    pub(crate) fn container(&mut self) -> Result<Container> {
        self.magic(TENSOR_MAGIC)?;
        let rank_at = self.pos;
        let rank = self.u32("rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(self.err(rank_at, format!("rank {rank} outside 1..={MAX_RANK}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut count: usize = 1;
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u64("dims")?;
            let d = usize::try_from(d).map_err(|_| self.err(at, format!("dimension {d} overflows")))?;
            count = count.checked_mul(d).ok_or_else(|| self.err(at, "dimension product overflows"))?;
            dims.push(d);
        }
        let tag_at = self.pos;
        let dtype = match self.take(1, "dtype")?[0] {
            1 => DType::F32,
            2 => DType::F64,
            t => return Err(self.err(tag_at, format!("unknown dtype tag {t}"))),
        };
        let nbytes = count
            .checked_mul(dtype.size())
            .ok_or_else(|| self.err(tag_at, "payload size overflows"))?;
        let raw = self.take(nbytes, "payload")?;
        let payload = match dtype {
            DType::F32 => Payload::F32(raw.chunks_exact(4).map(f32::read_le).collect()),
            DType::F64 => Payload::F64(raw.chunks_exact(8).map(f64::read_le).collect()),
        };
        Ok(Container { dims, payload })
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn save_container(path: impl AsRef<Path>, c: &Container) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, c.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::from_bytes(&bytes)
}

/// Named tensors plus JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub records: Vec<(String, Container)>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            metadata,
            records: Vec::new(),
        }
    }

    /// Appends every parameter of `store` as `{prefix}{name}`.
    pub fn push_params<T: Real>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for p in store.iter() {
            let c = Container::from_slice(p.value.shape(), p.value.data()).expect("consistent tensor");
            self.records.push((format!("{prefix}{}", p.name), c));
        }
    }

    pub fn push_tensor<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let c = Container::from_slice(t.shape(), t.data()).expect("consistent tensor");
        self.records.push((name.into(), c));
    }

    pub fn get(&self, name: &str) -> Option<&Container> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    /// Overwrites every parameter of `store` from the record
    /// `{prefix}{name}`; shapes and dtype must agree.
    pub fn load_params<T: Real>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        for p in store.iter_mut() {
            let key = format!("{prefix}{}", p.name);
            let c = self.get(&key).ok_or_else(|| Error::Config(format!("checkpoint has no tensor `{key}`")))?;
            if c.dims != p.value.shape() {
                return Err(Error::Config(format!(
                    "tensor `{key}`: checkpoint shape {:?}, model shape {:?}",
                    c.dims,
                    p.value.shape()
                )));
            }
            if c.dtype() != T::DTYPE {
                return Err(Error::Config(format!("tensor `{key}`: checkpoint dtype {:?}, model dtype {:?}", c.dtype(), T::DTYPE)));
            }
            p.value = c.to_tensor()?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata).expect("JSON values serialise");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, c) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            c.encode(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, 0);
        r.magic(CHECKPOINT_MAGIC)?;
        let at = r.pos;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err(at, format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let at = r.pos;
        let metadata = serde_json::from_slice(r.bytes(meta_len, "metadata")?).map_err(|e| r.err(at, format!("metadata: {e}")))?;
        let count = r.u32("record count")?;
        let mut records = Vec::new();
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.bytes(len, "name")?).map_err(|_| r.err(at, "record name is not UTF-8"))?;
            let name = name.to_string();
            let c = r.container()?;
            records.push((name, c));
        }
        r.finish()?;
        Ok(Self { metadata, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_input_fails_at_offset_zero() {
        let err = Container::from_bytes(&[]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
        assert!(matches!(Container::from_bytes(b"HSC2\0\0\0\0"), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload_and_bad_tag() {
        let c = Container::from_slice(&[2, 3], &[1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = c.to_bytes();
        let header = 4 + 4 + 16 + 1;
        let err = Container::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { offset, .. } if offset == (bytes.len() - 3) as u64), "{err}");
        let mut bad = bytes.clone();
        bad[header - 1] = 7;
        assert!(matches!(Container::from_bytes(&bad), Err(Error::Format { offset, .. }) if offset == header as u64 - 1));
        let mut extra = bytes;
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
    }

    #[test]
    fn dimension_overflow_is_rejected() {
        let mut b = TENSOR_MAGIC.to_vec();
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&u64::MAX.to_le_bytes());
        b.extend_from_slice(&u64::MAX.to_le_bytes());
        b.push(1);
        assert!(matches!(Container::from_bytes(&b), Err(Error::Format { offset: 16, .. })));
    }

    #[test]
    fn f64_values_survive_exactly() {
        let vals = [0.1, -1e-300, f64::MAX, 1.0 / 3.0];
        let c = Container::from_slice(&[4], &vals).unwrap();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.dtype(), DType::F64);
        assert_eq!(back.to_vec::<f64>().unwrap(), vals);
        assert!(back.to_vec::<f32>().is_err());
    }

    proptest! {
        #[test]
        fn cube_round_trip(vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 32)) {
            let c = Container::from_slice(&[4, 4, 2], &vals).unwrap();
            let back = Container::from_bytes(&c.to_bytes()).unwrap();
            let got: Vec<f32> = back.to_vec().unwrap();
            prop_assert_eq!(got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.dims, vec![4, 4, 2]);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let mut store = ParamStore::<f32>::new();
        store.add("a/weight", Tensor::from_fn(&[2, 3], |i| i as f32 * 0.25));
        store.add("b", Tensor::full(&[1], 7.0));
        let mut ck = Checkpoint::new(serde_json::json!({"step": 3}));
        ck.push_params("", &store);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut fresh = ParamStore::<f32>::new();
        fresh.add("a/weight", Tensor::zeros(&[2, 3]));
        fresh.add("b", Tensor::zeros(&[1]));
        back.load_params("", &mut fresh).unwrap();
        assert_eq!(fresh.get(fresh.id_of("a/weight").unwrap()).value, store.get(store.id_of("a/weight").unwrap()).value);
        let mut wrong = ParamStore::<f32>::new();
        wrong.add("a/weight", Tensor::zeros(&[3, 2]));
        let err = back.load_params("", &mut wrong).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
        let bytes = ck.to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
    }
}
