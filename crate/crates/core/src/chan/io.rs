//! Measurement archives.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! header:  b"PEMM" | version: u32 = 1 | n_subcarriers: u32 | n_antennas: u32 | count: u64
//! record:  t: f64 | pair_gap_s: f64 | snr_db: f64 (NaN when noiseless)
//!          | symbol 0: n_subcarriers * n_antennas x (re: f64, im: f64), row-major
//!          | symbol 1: same
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;

use super::Measurement;
use crate::error::{PemError, Result};

const MAGIC: &[u8; 4] = b"PEMM";
const VERSION: u32 = 1;

/// Streaming archive writer; the record count is fixed up front.
pub struct ArchiveWriter<W: Write> {
    w: W,
    n_subcarriers: usize,
    n_antennas: usize,
    remaining: u64,
}

impl<W: Write> ArchiveWriter<W> {
    pub fn new(mut w: W, n_subcarriers: usize, n_antennas: usize, count: u64) -> Result<Self> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(n_subcarriers as u32)?;
        w.write_u32::<LittleEndian>(n_antennas as u32)?;
        w.write_u64::<LittleEndian>(count)?;
        Ok(ArchiveWriter { w, n_subcarriers, n_antennas, remaining: count })
    }

    pub fn push(&mut self, m: &Measurement) -> Result<()> {
        if m.n_subcarriers != self.n_subcarriers || m.n_antennas != self.n_antennas {
            return Err(PemError::ShapeMismatch("archive measurements must share one shape".into()));
        }
        if self.remaining == 0 {
            return Err(PemError::Format("more records than declared in the archive header".into()));
        }
        self.remaining -= 1;
        let w = &mut self.w;
        w.write_f64::<LittleEndian>(m.t)?;
        w.write_f64::<LittleEndian>(m.pair_gap_s)?;
        w.write_f64::<LittleEndian>(m.snr_db.unwrap_or(f64::NAN))?;
        for sym in &m.h {
            for c in sym {
                w.write_f64::<LittleEndian>(c.re)?;
                w.write_f64::<LittleEndian>(c.im)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.remaining != 0 {
            return Err(PemError::Format(format!("archive is {} records short of its header", self.remaining)));
        }
        self.w.flush()?;
        Ok(self.w)
    }
}

pub fn write_archive<W: Write>(w: W, measurements: &[Measurement]) -> Result<()> {
    let (nsc, nant) = measurements.first().map_or((0, 0), |m| (m.n_subcarriers, m.n_antennas));
    let mut wr = ArchiveWriter::new(w, nsc, nant, measurements.len() as u64)?;
    for m in measurements {
        wr.push(m)?;
    }
    wr.finish()?;
    Ok(())
}

/// Streaming archive reader, one measurement per item.
pub struct ArchiveReader<R: Read> {
    r: R,
    pub n_subcarriers: usize,
    pub n_antennas: usize,
    remaining: u64,
}

impl<R: Read> ArchiveReader<R> {
    pub fn new(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(PemError::Format("not a measurement archive (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(PemError::Format(format!("unsupported archive version {version}")));
        }
        let n_subcarriers = r.read_u32::<LittleEndian>()? as usize;
        let n_antennas = r.read_u32::<LittleEndian>()? as usize;
        let remaining = r.read_u64::<LittleEndian>()?;
        Ok(ArchiveReader { r, n_subcarriers, n_antennas, remaining })
    }

    pub fn len(&self) -> u64 {
        self.remaining
    }

    pub fn is_empty(&self) -> bool {
        self.remaining == 0
    }

    fn read_one(&mut self) -> Result<Measurement> {
        let (nsc, nant) = (self.n_subcarriers, self.n_antennas);
        let r = &mut self.r;
        let t = r.read_f64::<LittleEndian>()?;
        let pair_gap_s = r.read_f64::<LittleEndian>()?;
        let snr = r.read_f64::<LittleEndian>()?;
        let mut h: [Vec<Complex64>; 2] = [Vec::with_capacity(nsc * nant), Vec::with_capacity(nsc * nant)];
        for sym in h.iter_mut() {
            for _ in 0..nsc * nant {
                let re = r.read_f64::<LittleEndian>()?;
                let im = r.read_f64::<LittleEndian>()?;
                sym.push(Complex64::new(re, im));
            }
        }
        Ok(Measurement { t, pair_gap_s, snr_db: (!snr.is_nan()).then_some(snr), n_subcarriers: nsc, n_antennas: nant, h })
    }
}

impl<R: Read> Iterator for ArchiveReader<R> {
    type Item = Result<Measurement>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let m = self.read_one();
        if m.is_err() {
            self.remaining = 0;
        }
        Some(m)
    }
}

pub fn read_archive<R: Read>(r: R) -> Result<Vec<Measurement>> {
    ArchiveReader::new(r)?.collect()
}

/// Long-format CSV (`t,symbol,subcarrier,antenna,re,im`), meant for small cases.
pub fn write_csv<W: Write>(w: W, measurements: &[Measurement]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "symbol", "subcarrier", "antenna", "re", "im"])?;
    for m in measurements {
        for (s, sym) in m.h.iter().enumerate() {
            for (i, c) in sym.iter().enumerate() {
                let (k, a) = (i / m.n_antennas, i % m.n_antennas);
                wr.write_record(&[m.t.to_string(), s.to_string(), k.to_string(), a.to_string(), c.re.to_string(), c.im.to_string()])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}
