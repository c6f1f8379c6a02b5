//! Little-endian field file:
//!
//! ```text
//! "PLM1" | u32 nx | u32 ny | u32 num_slots | f32 cell_size_m | f32 f_ocn
//! land mask: nx*ny bytes (1 = land)
//! per slot: f32 wind_angle | f32 wind_speed | salinity, cur_u, cur_v (nx*ny f32 each, row-major)
//! ```
//!
//! The mouth is not stored; on load it is taken to be the water cell on the
//! domain boundary with the lowest time-mean salinity.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Cell, Domain, FieldFrame, FieldSequence, Grid, Wind};
use crate::error::{Error, Result};

pub const FIELD_MAGIC: &[u8; 4] = b"PLM1";

pub fn write_sequence<W: Write>(seq: &FieldSequence, mut out: W) -> Result<()> {
    let d = seq.domain();
    out.write_all(FIELD_MAGIC)?;
    out.write_all(&(d.nx() as u32).to_le_bytes())?;
    out.write_all(&(d.ny() as u32).to_le_bytes())?;
    out.write_all(&(seq.num_slots() as u32).to_le_bytes())?;
    out.write_all(&(d.cell_size_m() as f32).to_le_bytes())?;
    out.write_all(&(seq.f_ocn() as f32).to_le_bytes())?;
    let mask: Vec<u8> = d.land_mask().iter().map(|&l| l as u8).collect();
    out.write_all(&mask)?;
    let mut buf = Vec::with_capacity(8 + 12 * d.len());
    for f in seq.frames() {
        buf.clear();
        buf.extend_from_slice(&f.wind.angle_rad.to_le_bytes());
        buf.extend_from_slice(&f.wind.speed_mps.to_le_bytes());
        for g in [&f.salinity, &f.cur_u, &f.cur_v] {
            for v in &g.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_sequence(seq: &FieldSequence, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_sequence(seq, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<FieldSequence> {
    let bytes = fs::read(path)?;
    read_sequence(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!("{what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn grid(&mut self, nx: usize, ny: usize, what: &str) -> Result<Grid> {
        let raw = self.take(4 * nx * ny, what)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Grid { nx, ny, data })
    }
}

pub fn read_sequence(bytes: &[u8]) -> Result<FieldSequence> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("header".into()));
    }
    if &bytes[..4] != FIELD_MAGIC {
        if &bytes[..3] == b"PLM" {
            return Err(Error::VersionMismatch(format!(
                "field file version {:?}, expected 1",
                bytes[3] as char
            )));
        }
        return Err(Error::BadMagic);
    }
    let mut c = Cursor { bytes, pos: 4 };
    let nx = c.u32("nx")? as usize;
    let ny = c.u32("ny")? as usize;
    let num_slots = c.u32("num_slots")? as usize;
    let cell = c.f32("cell_size_m")? as f64;
    let f_ocn = c.f32("f_ocn")? as f64;
    if nx < 8 || ny < 8 || num_slots == 0 {
        return Err(Error::DimensionMismatch(format!("{nx}x{ny} grid with {num_slots} slots")));
    }
    let expected = 24usize
        .checked_add(nx * ny)
        .and_then(|n| n.checked_add(num_slots.checked_mul(8 + 12 * nx * ny)?))
        .ok_or_else(|| Error::DimensionMismatch("size overflow".into()))?;
    if bytes.len() > expected {
        return Err(Error::DimensionMismatch(format!(
            "file holds {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let land: Vec<bool> = c.take(nx * ny, "land mask")?.iter().map(|&b| b != 0).collect();
    let mut frames = Vec::with_capacity(num_slots);
    for k in 0..num_slots {
        let angle = c.f32("wind angle")?;
        let speed = c.f32("wind speed")?;
        let salinity = c.grid(nx, ny, "salinity")?;
        let cur_u = c.grid(nx, ny, "cur_u")?;
        let cur_v = c.grid(nx, ny, "cur_v")?;
        frames.push(FieldFrame {
            slot: k as u32,
            salinity,
            cur_u,
            cur_v,
            wind: Wind { angle_rad: angle, speed_mps: speed },
        });
    }
    let mouth = infer_mouth(nx, ny, &land, &frames)
        .ok_or_else(|| Error::invalid("no water cell on the domain boundary"))?;
    let domain = Domain::new(nx, ny, cell, mouth, land)?;
    FieldSequence::new(domain, f_ocn, frames)
}

fn infer_mouth(nx: usize, ny: usize, land: &[bool], frames: &[FieldFrame]) -> Option<Cell> {
    let mut best: Option<(f64, Cell)> = None;
    for j in 0..ny {
        for i in 0..nx {
            let boundary = i == 0 || j == 0 || i == nx - 1 || j == ny - 1;
            let idx = j * nx + i;
            if !boundary || land[idx] {
                continue;
            }
            let mean = frames.iter().map(|f| f.salinity.data[idx] as f64).sum::<f64>() / frames.len() as f64;
            if best.is_none_or(|(b, _)| mean < b) {
                best = Some((mean, Cell::new(i, j)));
            }
        }
    }
    best.map(|(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_sequence, SynthParams};

    fn sample() -> FieldSequence {
        generate_sequence(&SynthParams { seed: 5, ..SynthParams::default() }, &Domain::smoke(), 6).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let seq = sample();
        let mut bytes = Vec::new();
        write_sequence(&seq, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 24 + 32 * 32 + 6 * (8 + 12 * 32 * 32));
        let back = read_sequence(&bytes).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn file_round_trip() {
        let seq = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.plm");
        save_sequence(&seq, &path).unwrap();
        assert_eq!(load_sequence(&path).unwrap(), seq);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let seq = sample();
        let mut bytes = Vec::new();
        write_sequence(&seq, &mut bytes).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_sequence(&bad).unwrap_err().to_string().contains("bad magic"));

        let mut v2 = bytes.clone();
        v2[3] = b'2';
        assert!(matches!(read_sequence(&v2), Err(Error::VersionMismatch(_))));

        let cut = &bytes[..bytes.len() - 10];
        assert!(read_sequence(cut).unwrap_err().to_string().contains("truncated"));

        let mut long = bytes.clone();
        long.extend_from_slice(&[0u8; 4]);
        assert!(matches!(read_sequence(&long), Err(Error::DimensionMismatch(_))));

        let mut tiny = bytes.clone();
        tiny[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(read_sequence(&tiny), Err(Error::DimensionMismatch(_))));
    }
}
