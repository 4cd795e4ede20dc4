//! File formats.
//!
//! DMAP v1 (density raster), little-endian throughout:
//!
//! | offset | size | field                    |
//! |--------|------|--------------------------|
//! | 0      | 4    | magic `DMAP` (`44 4D 41 50`) |
//! | 4      | 2    | version, `1`             |
//! | 6      | 1    | dtype, `0` = f32         |
//! | 7      | 1    | reserved, `0`            |
//! | 8      | 4    | height                   |
//! | 12     | 4    | width                    |
//! | 16     | 4·h·w | values, row-major       |
//!
//! Head lists are CSV with an `x,y` header and one point per line. Scene
//! metadata is JSON lines with `"time"` written as `"HH:MM"`.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{format_time, parse_time, SceneMeta};
use crate::density::{round_half_up, DensityMap, HeadList, Point};
use crate::error::{Error, Result};
use crate::gpr::TraceEntry;

pub const DMAP_MAGIC: [u8; 4] = *b"DMAP";
pub const DMAP_VERSION: u16 = 1;
pub const DMAP_DTYPE_F32: u8 = 0;
pub const DMAP_HEADER_LEN: usize = 16;

pub fn encode_dmap(map: &DensityMap) -> Result<Vec<u8>> {
    let (h, w) = (map.height(), map.width());
    let h32 = u32::try_from(h).map_err(|_| Error::invalid(format!("height {h} exceeds u32")))?;
    let w32 = u32::try_from(w).map_err(|_| Error::invalid(format!("width {w} exceeds u32")))?;
    let mut out = Vec::with_capacity(DMAP_HEADER_LEN + 4 * map.len());
    out.extend_from_slice(&DMAP_MAGIC);
    out.extend_from_slice(&DMAP_VERSION.to_le_bytes());
    out.push(DMAP_DTYPE_F32);
    out.push(0);
    out.extend_from_slice(&h32.to_le_bytes());
    out.extend_from_slice(&w32.to_le_bytes());
    for (i, &v) in map.values().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::invalid(format!("value {v} at index {i} does not fit in f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dmap(bytes: &[u8]) -> Result<DensityMap> {
    if bytes.len() < DMAP_HEADER_LEN {
        return Err(Error::at_byte(bytes.len() as u64, "truncated header"));
    }
    if bytes[0..4] != DMAP_MAGIC {
        return Err(Error::at_byte(0, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DMAP_VERSION {
        return Err(Error::at_byte(4, format!("unsupported version {version}")));
    }
    if bytes[6] != DMAP_DTYPE_F32 {
        return Err(Error::at_byte(6, format!("unsupported dtype {}", bytes[6])));
    }
    if bytes[7] != 0 {
        return Err(Error::at_byte(7, format!("reserved byte is {}", bytes[7])));
    }
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if height == 0 {
        return Err(Error::at_byte(8, "zero height"));
    }
    if width == 0 {
        return Err(Error::at_byte(12, "zero width"));
    }
    let payload = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .filter(|n| n.checked_add(DMAP_HEADER_LEN).is_some())
        .ok_or_else(|| Error::at_byte(8, format!("shape {height}x{width} overflows")))?;
    let data = &bytes[DMAP_HEADER_LEN..];
    if data.len() < payload {
        return Err(Error::at_byte(
            bytes.len() as u64,
            format!("truncated data: expected {payload} bytes of values, found {}", data.len()),
        ));
    }
    if data.len() > payload {
        return Err(Error::at_byte((DMAP_HEADER_LEN + payload) as u64, "trailing bytes after values"));
    }
    let mut values = Vec::with_capacity(height * width);
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::at_byte((DMAP_HEADER_LEN + 4 * i) as u64, "non-finite value"));
        }
        values.push(v as f64);
    }
    DensityMap::from_vec(height, width, values)
}

pub fn load_dmap(path: impl AsRef<Path>) -> Result<DensityMap> {
    decode_dmap(&fs::read(path)?)
}

pub fn save_dmap(path: impl AsRef<Path>, map: &DensityMap) -> Result<()> {
    fs::write(path, encode_dmap(map)?)?;
    Ok(())
}

/// Reads an `x,y` CSV. Fractional coordinates are rounded half-up.
pub fn read_heads_csv(reader: impl BufRead, height: usize, width: usize) -> Result<HeadList> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break (i + 1, line);
                }
            }
            None => return Err(Error::at_line(1, "missing `x,y` header")),
        }
    };
    let cols: Vec<&str> = header.1.split(',').map(str::trim).collect();
    if cols != ["x", "y"] {
        return Err(Error::at_line(header.0, format!("expected header `x,y`, found `{}`", header.1)));
    }
    let mut heads = HeadList::empty(height, width)?;
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::at_line(lineno, format!("expected 2 fields, found {}", fields.len())));
        }
        let coord = |s: &str| -> Result<usize> {
            if let Ok(v) = s.parse::<usize>() {
                return Ok(v);
            }
            let v: f64 = s
                .parse()
                .map_err(|_| Error::at_line(lineno, format!("bad coordinate `{s}`")))?;
            round_half_up(v).map_err(|e| Error::at_line(lineno, e.to_string()))
        };
        let p = Point::new(coord(fields[0])?, coord(fields[1])?);
        heads
            .push(p)
            .map_err(|e| Error::at_line(lineno, e.to_string()))?;
    }
    Ok(heads)
}

pub fn write_heads_csv(mut writer: impl Write, heads: &HeadList) -> Result<()> {
    writeln!(writer, "x,y")?;
    for p in heads.points() {
        writeln!(writer, "{},{}", p.x, p.y)?;
    }
    Ok(())
}

pub fn load_heads_csv(path: impl AsRef<Path>, height: usize, width: usize) -> Result<HeadList> {
    let file = fs::File::open(path)?;
    read_heads_csv(std::io::BufReader::new(file), height, width)
}

pub fn save_heads_csv(path: impl AsRef<Path>, heads: &HeadList) -> Result<()> {
    let mut buf = Vec::new();
    write_heads_csv(&mut buf, heads)?;
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneRecord {
    id: String,
    level: u8,
    time: String,
    weather: u8,
    count: u64,
    ratio: f64,
}

pub fn read_scenes_jsonl(reader: impl BufRead) -> Result<Vec<SceneMeta>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let rec: SceneRecord =
            serde_json::from_str(&line).map_err(|e| Error::at_line(lineno, e.to_string()))?;
        let meta = SceneMeta {
            time_minutes: parse_time(&rec.time).map_err(|e| Error::at_line(lineno, e.to_string()))?,
            id: rec.id,
            level: rec.level,
            weather: rec.weather,
            count: rec.count,
            ratio: rec.ratio,
        };
        meta.validate().map_err(|e| Error::at_line(lineno, e.to_string()))?;
        out.push(meta);
    }
    Ok(out)
}

pub fn write_scenes_jsonl(mut writer: impl Write, metas: &[SceneMeta]) -> Result<()> {
    for m in metas {
        let rec = SceneRecord {
            id: m.id.clone(),
            level: m.level,
            time: format_time(m.time_minutes),
            weather: m.weather,
            count: m.count,
            ratio: m.ratio,
        };
        serde_json::to_writer(&mut writer, &rec).map_err(std::io::Error::from)?;
        writeln!(writer)?;
    }
    Ok(())
}

pub fn load_scenes_jsonl(path: impl AsRef<Path>) -> Result<Vec<SceneMeta>> {
    read_scenes_jsonl(std::io::BufReader::new(fs::File::open(path)?))
}

pub fn save_scenes_jsonl(path: impl AsRef<Path>, metas: &[SceneMeta]) -> Result<()> {
    let mut buf = Vec::new();
    write_scenes_jsonl(&mut buf, metas)?;
    fs::write(path, buf)?;
    Ok(())
}

/// One JSON object per line: `{"j": .., "x": .., "y": .., "p": ..}`.
pub fn write_trace_jsonl(mut writer: impl Write, trace: &[TraceEntry]) -> Result<()> {
    for t in trace {
        serde_json::to_writer(&mut writer, t).map_err(std::io::Error::from)?;
        writeln!(writer)?;
    }
    Ok(())
}

struct PgmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmHeader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::at_byte(start as u64, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::at_byte(start as u64, format!("{what} out of range")))
    }
}

/// Decodes an 8- or 16-bit PGM (binary `P5` or ASCII `P2`) into raw sample
/// values.
pub fn decode_pgm(bytes: &[u8]) -> Result<DensityMap> {
    if bytes.len() < 2 || (bytes[0..2] != *b"P5" && bytes[0..2] != *b"P2") {
        return Err(Error::at_byte(0, "not a PGM (expected P5 or P2)"));
    }
    let ascii = bytes[1] == b'2';
    let mut hdr = PgmHeader { bytes, pos: 2 };
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::at_byte(2, "zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::at_byte(hdr.pos as u64, format!("unsupported maxval {maxval}")));
    }
    let n = height
        .checked_mul(width)
        .ok_or_else(|| Error::at_byte(2, "shape overflows"))?;
    let mut values = Vec::with_capacity(n);
    if ascii {
        for _ in 0..n {
            values.push(hdr.number("sample")? as f64);
        }
    } else {
        if hdr.pos >= bytes.len() || !bytes[hdr.pos].is_ascii_whitespace() {
            return Err(Error::at_byte(hdr.pos as u64, "missing whitespace after maxval"));
        }
        let data = &bytes[hdr.pos + 1..];
        let bps = if maxval < 256 { 1 } else { 2 };
        let needed = n
            .checked_mul(bps)
            .ok_or_else(|| Error::at_byte(2, "shape overflows"))?;
        if data.len() < needed {
            return Err(Error::at_byte(bytes.len() as u64, "truncated pixel data"));
        }
        if bps == 1 {
            values.extend(data[..n].iter().map(|&b| b as f64));
        } else {
            values.extend(data[..needed].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64));
        }
    }
    DensityMap::from_vec(height, width, values)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<DensityMap> {
    decode_pgm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Location;

    fn sample_map() -> DensityMap {
        DensityMap::from_vec(2, 3, vec![0.0, 1.5, -2.25, 1e-6, 3.0, 0.125]).unwrap()
    }

    #[test]
    fn dmap_layout() {
        let bytes = encode_dmap(&sample_map()).unwrap();
        assert_eq!(&bytes[0..4], &[0x44, 0x4D, 0x41, 0x50]);
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(&bytes[16 + 4..16 + 8], &1.5f32.to_le_bytes());
        let back = decode_dmap(&bytes).unwrap();
        assert_eq!(encode_dmap(&back).unwrap(), bytes);
    }

    fn parse_err(bytes: &[u8]) -> (Location, String) {
        match decode_dmap(bytes) {
            Err(Error::Parse { location, message }) => (location, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dmap_errors() {
        let good = encode_dmap(&sample_map()).unwrap();
        let (loc, msg) = parse_err(&good[..12]);
        assert_eq!((loc, msg.as_str()), (Location::Byte(12), "truncated header"));

        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(parse_err(&bad).0, Location::Byte(0));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(parse_err(&bad).0, Location::Byte(4));
        let mut bad = good.clone();
        bad[6] = 1;
        let (loc, msg) = parse_err(&bad);
        assert_eq!(loc, Location::Byte(6));
        assert!(msg.contains("dtype"));
        let mut bad = good.clone();
        bad[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(parse_err(&bad).0, Location::Byte(8));
        let mut bad = good.clone();
        bad[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        bad[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_dmap(&bad).is_err());
        let (loc, msg) = parse_err(&good[..good.len() - 1]);
        assert_eq!(loc, Location::Byte(good.len() as u64 - 1));
        assert!(msg.starts_with("truncated data"));
        let mut long = good.clone();
        long.push(0);
        assert_eq!(parse_err(&long).0, Location::Byte(good.len() as u64));
        let mut nan = good.clone();
        nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(parse_err(&nan).0, Location::Byte(20));
    }

    #[test]
    fn dmap_rejects_values_outside_f32() {
        let m = DensityMap::from_vec(1, 1, vec![1e300]).unwrap();
        assert!(encode_dmap(&m).is_err());
    }

    #[test]
    fn csv_read_write() {
        let csv = "x,y\n15,20\n0,0\n\n3.5,2.49\n";
        let heads = read_heads_csv(csv.as_bytes(), 30, 30).unwrap();
        assert_eq!(heads.points(), &[Point::new(15, 20), Point::new(0, 0), Point::new(4, 2)]);
        let mut out = Vec::new();
        write_heads_csv(&mut out, &heads).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x,y\n15,20\n0,0\n4,2\n");
    }

    #[test]
    fn csv_errors() {
        let lines = |s: &str| match read_heads_csv(s.as_bytes(), 10, 10) {
            Err(Error::Parse { location: Location::Line(l), .. }) => l,
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(lines(""), 1);
        assert_eq!(lines("a,b\n1,2\n"), 1);
        assert_eq!(lines("x,y\n1,2\n1\n"), 3);
        assert_eq!(lines("x,y\n1,2\n10,2\n"), 3);
        assert_eq!(lines("x,y\nfoo,2\n"), 2);
        assert_eq!(lines("x,y\n-1,2\n"), 2);
    }

    #[test]
    fn scenes_round_trip() {
        let text = r#"{"id": "a", "level": 3, "time": "19:59", "weather": 0, "count": 600, "ratio": 0.3}
{"id": "b", "level": 8, "time": "6:05", "weather": 6, "count": 4000, "ratio": 1.0}
"#;
        let metas = read_scenes_jsonl(text.as_bytes()).unwrap();
        assert_eq!(metas.len(), 2);
        assert_eq!(metas[0].time_minutes, 1199);
        assert_eq!(metas[1].time_minutes, 365);
        let mut out = Vec::new();
        write_scenes_jsonl(&mut out, &metas).unwrap();
        assert_eq!(read_scenes_jsonl(out.as_slice()).unwrap(), metas);
        assert!(String::from_utf8(out).unwrap().contains("\"time\":\"06:05\""));
    }

    #[test]
    fn scenes_errors() {
        let bad = r#"{"id": "a", "level": 3, "time": "19:59", "weather": 0, "count": 600, "ratio": 0.3}
{"id": "b", "level": 9, "time": "06:00", "weather": 0, "count": 1, "ratio": 0.3}
"#;
        assert!(matches!(
            read_scenes_jsonl(bad.as_bytes()),
            Err(Error::Parse { location: Location::Line(2), .. })
        ));
        assert!(read_scenes_jsonl("{not json}\n".as_bytes()).is_err());
        let bad_time = r#"{"id": "a", "level": 3, "time": "25:00", "weather": 0, "count": 6, "ratio": 0.3}"#;
        assert!(read_scenes_jsonl(bad_time.as_bytes()).is_err());
    }

    #[test]
    fn trace_lines() {
        let mut out = Vec::new();
        write_trace_jsonl(&mut out, &[TraceEntry { j: 0, x: 3, y: 4, p: 0.5 }]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "{\"j\":0,\"x\":3,\"y\":4,\"p\":0.5}\n");
    }

    #[test]
    fn pgm_8_and_16_bit() {
        let mut p5 = b"P5\n# comment\n3 2\n255\n".to_vec();
        p5.extend_from_slice(&[0, 10, 20, 30, 40, 255]);
        let m = decode_pgm(&p5).unwrap();
        assert_eq!((m.height(), m.width()), (2, 3));
        assert_eq!(m.values(), &[0.0, 10.0, 20.0, 30.0, 40.0, 255.0]);

        let mut p16 = b"P5 2 1 65535\n".to_vec();
        p16.extend_from_slice(&[0x01, 0x00, 0xFF, 0xFF]);
        assert_eq!(decode_pgm(&p16).unwrap().values(), &[256.0, 65535.0]);

        let p2 = b"P2\n2 2\n15\n0 5\n10 15\n";
        assert_eq!(decode_pgm(p2).unwrap().values(), &[0.0, 5.0, 10.0, 15.0]);

        assert!(decode_pgm(b"P6 1 1 255\n\0\0\0").is_err());
        assert!(decode_pgm(b"P5 2 2 255\n\0").is_err());
    }
}
