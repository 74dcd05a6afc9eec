//! Binary checkpoint files.
//!
//! All integers and floats are little-endian. A parameter checkpoint is
//!
//! ```text
//! magic "KGRECCKP" | version u32 | combine u8 | |E| u64 | |U| u64
//! | relation count u32 | d^m u32 per relation | user width u64
//! | entity table 0 .. entity table R-1 (f64, row-major) | user table (f64)
//! ```
//!
//! The resume file wraps two such payloads with optimizer and early-stopping
//! state. The item sidecar holds the layer-summed item table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::embedding::ParameterStore;
use crate::error::{Error, Result};
use crate::propagation::{CombineMode, ItemRepresentation};
use crate::train::{AdamState, BestCheckpoint, EpochRecord, TrainState};

pub const MAGIC: &[u8; 8] = b"KGRECCKP";
pub const STATE_MAGIC: &[u8; 8] = b"KGRECSTA";
pub const ITEMS_MAGIC: &[u8; 8] = b"KGRECITM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub combine: CombineMode,
    pub entity_count: usize,
    pub user_count: usize,
    pub dims: Vec<usize>,
    pub user_width: usize,
}

impl Header {
    pub fn of(params: &ParameterStore, combine: CombineMode) -> Self {
        Header {
            version: VERSION,
            combine,
            entity_count: params.entity_count(),
            user_count: params.user_count(),
            dims: params.dims().to_vec(),
            user_width: params.user_width(),
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "combine={:?} entities={} users={} dims={:?} user_width={}",
            self.combine, self.entity_count, self.user_count, self.dims, self.user_width
        )
    }

    /// Refuses unless `self` describes exactly the `expected` layout.
    pub fn check(&self, expected: &Header) -> Result<()> {
        let same = self.combine == expected.combine
            && self.entity_count == expected.entity_count
            && self.user_count == expected.user_count
            && self.dims == expected.dims
            && self.user_width == expected.user_width;
        if same {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "layout mismatch\n  checkpoint: {}\n  dataset:    {}",
                self.describe(),
                expected.describe()
            )))
        }
    }
}

fn combine_code(mode: CombineMode) -> u8 {
    match mode {
        CombineMode::Concat => 0,
        CombineMode::Mean => 1,
        CombineMode::Sum => 2,
    }
}

fn combine_from(code: u8) -> Result<CombineMode> {
    match code {
        0 => Ok(CombineMode::Concat),
        1 => Ok(CombineMode::Mean),
        2 => Ok(CombineMode::Sum),
        c => Err(Error::Checkpoint(format!("unknown combination code {c}"))),
    }
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64s(&mut self, vs: &[f64]) -> std::io::Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.exact::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.exact()?))
    }
    fn f64s(&mut self, out: &mut [f64]) -> Result<()> {
        for v in out {
            *v = self.f64()?;
        }
        Ok(())
    }
    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got: [u8; 8] = self.exact()?;
        if &got != expected {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expected)
            )));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        Ok(())
    }
    fn at_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::Checkpoint("trailing bytes after payload".into())),
            Err(e) => Err(Error::Checkpoint(e.to_string())),
        }
    }
}

fn write_params<W: Write>(w: &mut Writer<W>, params: &ParameterStore, combine: CombineMode) -> std::io::Result<()> {
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(combine_code(combine))?;
    w.u64(params.entity_count() as u64)?;
    w.u64(params.user_count() as u64)?;
    w.u32(params.dims().len() as u32)?;
    for &d in params.dims() {
        w.u32(d as u32)?;
    }
    w.u64(params.user_width() as u64)?;
    for r in 0..params.relation_count() {
        w.f64s(params.entity_table(r as u32))?;
    }
    w.f64s(params.user_table())
}

fn read_header<R: Read>(r: &mut Reader<R>) -> Result<Header> {
    r.magic(MAGIC)?;
    let combine = combine_from(r.u8()?)?;
    let entity_count = r.usize()?;
    let user_count = r.usize()?;
    let n = r.u32()? as usize;
    let dims = (0..n)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let user_width = r.usize()?;
    Ok(Header {
        version: VERSION,
        combine,
        entity_count,
        user_count,
        dims,
        user_width,
    })
}

fn read_params<R: Read>(r: &mut Reader<R>, expected: Option<&Header>) -> Result<(Header, ParameterStore)> {
    let header = read_header(r)?;
    if let Some(expected) = expected {
        header.check(expected)?;
    }
    let mut params = ParameterStore::zeros(&header.dims, header.entity_count, header.user_count, header.user_width);
    for m in 0..header.dims.len() {
        r.f64s(params.entity_table_mut(m as u32))?;
    }
    r.f64s(params.user_table_mut())?;
    Ok((header, params))
}

fn create(path: &Path) -> Result<Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(Writer {
        inner: BufWriter::new(f),
    })
}

fn open(path: &Path) -> Result<Reader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(Reader {
        inner: BufReader::new(f),
    })
}

fn finish(w: Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.inner
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(path, e))
}

pub fn save_params(path: &Path, params: &ParameterStore, combine: CombineMode) -> Result<()> {
    let mut w = create(path)?;
    write_params(&mut w, params, combine).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn read_checkpoint_header(path: &Path) -> Result<Header> {
    read_header(&mut open(path)?)
}

/// Loads a checkpoint; with `expected`, refuses any other layout before
/// reading the payload.
pub fn load_params(path: &Path, expected: Option<&Header>) -> Result<(Header, ParameterStore)> {
    let mut r = open(path)?;
    let out = read_params(&mut r, expected)?;
    r.at_end()?;
    Ok(out)
}

fn write_rows<W: Write>(w: &mut Writer<W>, rows: &crate::grad::SparseRows) -> std::io::Result<()> {
    w.u64(rows.len() as u64)?;
    for (id, data) in rows.iter() {
        w.u32(id)?;
        w.f64s(data)?;
    }
    Ok(())
}

fn read_rows<R: Read>(r: &mut Reader<R>, rows: &mut crate::grad::SparseRows) -> Result<()> {
    let n = r.usize()?;
    for _ in 0..n {
        let id = r.u32()?;
        r.f64s(rows.row_mut(id))?;
    }
    Ok(())
}

/// Writes everything needed to resume training.
pub fn save_state(path: &Path, state: &TrainState, combine: CombineMode) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.bytes(STATE_MAGIC).map_err(io)?;
    w.u32(VERSION).map_err(io)?;
    w.u64(state.next_epoch as u64).map_err(io)?;
    w.u64(state.epochs_since_best as u64).map_err(io)?;
    w.u64(state.log.len() as u64).map_err(io)?;
    for rec in &state.log {
        w.u64(rec.epoch as u64).map_err(io)?;
        w.f64s(&[rec.mean_loss, rec.recall, rec.ndcg, rec.seconds])
            .map_err(io)?;
    }
    write_params(&mut w, &state.params, combine).map_err(io)?;
    for table in state.adam.tables() {
        write_rows(&mut w, table).map_err(io)?;
    }
    match &state.best {
        Some(best) => {
            w.u8(1).map_err(io)?;
            w.u64(best.epoch as u64).map_err(io)?;
            w.f64(best.recall).map_err(io)?;
            write_params(&mut w, &best.params, combine).map_err(io)?;
        }
        None => w.u8(0).map_err(io)?,
    }
    finish(w, path)
}

pub fn load_state(path: &Path, expected: &Header) -> Result<TrainState> {
    let mut r = open(path)?;
    r.magic(STATE_MAGIC)?;
    let next_epoch = r.usize()?;
    let epochs_since_best = r.usize()?;
    let n_log = r.usize()?;
    let mut log = Vec::with_capacity(n_log.min(1 << 16));
    for _ in 0..n_log {
        let epoch = r.usize()?;
        log.push(EpochRecord {
            epoch,
            mean_loss: r.f64()?,
            recall: r.f64()?,
            ndcg: r.f64()?,
            seconds: r.f64()?,
        });
    }
    let (_, params) = read_params(&mut r, Some(expected))?;
    let mut adam = AdamState::new(&params);
    for table in adam.tables_mut() {
        read_rows(&mut r, table)?;
    }
    let best = match r.u8()? {
        0 => None,
        1 => {
            let epoch = r.usize()?;
            let recall = r.f64()?;
            let (_, params) = read_params(&mut r, Some(expected))?;
            Some(BestCheckpoint { epoch, recall, params })
        }
        b => return Err(Error::Checkpoint(format!("bad best-checkpoint flag {b}"))),
    };
    r.at_end()?;
    Ok(TrainState {
        params,
        adam,
        next_epoch,
        epochs_since_best,
        best,
        log,
    })
}

/// Dumps the layer-summed item table.
pub fn save_item_reps(path: &Path, items: &ItemRepresentation) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.bytes(ITEMS_MAGIC).map_err(io)?;
    w.u32(VERSION).map_err(io)?;
    w.u64(items.item_count() as u64).map_err(io)?;
    w.u64(items.width() as u64).map_err(io)?;
    for i in 0..items.item_count() {
        w.f64s(items.item(i as u32)).map_err(io)?;
    }
    finish(w, path)
}

/// `(item count, width, row-major table)` from an item sidecar.
pub fn load_item_reps(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut r = open(path)?;
    r.magic(ITEMS_MAGIC)?;
    let n = r.usize()?;
    let width = r.usize()?;
    let mut data = vec![0.0; n * width];
    r.f64s(&mut data)?;
    r.at_end()?;
    Ok((n, width, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{build_layout, init_params};

    fn params() -> ParameterStore {
        let layout = build_layout(&[2, 3, 4]).unwrap();
        init_params(&layout, 5, 3, layout.total(), 11)
    }

    #[test]
    fn params_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let mut p = params();
        p.entity_mut(1, 2)[0] = -0.0;
        p.user_mut(0)[1] = f64::MIN_POSITIVE / 4.0;
        save_params(&path, &p, CombineMode::Concat).unwrap();
        let (h, q) = load_params(&path, Some(&Header::of(&p, CombineMode::Concat))).unwrap();
        assert_eq!(h.dims, vec![2, 3, 4]);
        for (a, b) in p.user_table().iter().zip(q.user_table()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for m in 0..3 {
            for (a, b) in p.entity_table(m).iter().zip(q.entity_table(m)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn layout_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let p = params();
        save_params(&path, &p, CombineMode::Concat).unwrap();
        let mut other = Header::of(&p, CombineMode::Concat);
        other.dims = vec![2, 3, 5];
        let err = load_params(&path, Some(&other)).unwrap_err().to_string();
        assert!(err.contains("[2, 3, 4]") && err.contains("[2, 3, 5]"), "{err}");
    }

    #[test]
    fn corrupted_magic_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_params(&path, &params(), CombineMode::Concat).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_params(&path, None), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_file_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_params(&path, &params(), CombineMode::Concat).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_params(&path, None), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        let p = params();
        let mut state = TrainState::new(p.clone());
        for (t, table) in state.adam.tables_mut().enumerate() {
            let w = table.width();
            table.row_mut(t as u32 + 1).copy_from_slice(&vec![0.5 + t as f64; w]);
        }
        state.next_epoch = 4;
        state.epochs_since_best = 1;
        state.log.push(EpochRecord {
            epoch: 3,
            mean_loss: 0.69,
            recall: 0.1,
            ndcg: 0.05,
            seconds: 1.25,
        });
        state.best = Some(BestCheckpoint {
            epoch: 2,
            recall: 0.2,
            params: p.clone(),
        });
        save_state(&path, &state, CombineMode::Concat).unwrap();
        let back = load_state(&path, &Header::of(&p, CombineMode::Concat)).unwrap();
        assert_eq!(back, state);
    }
}
