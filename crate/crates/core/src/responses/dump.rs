//! Binary serialization of a detector's per-scene responses.
//!
//! Layout (all little-endian):
//! magic `IRDK` (4 bytes), format version `u16`, `u32` L, `u32` K, `u32` n,
//! L locations as 3 x f32 (x, y, stride), K x u32 class ids, L*K f32
//! classification logits (location-major), L*4*n f32 edge logits
//! (location-major, edges top/bottom/left/right), then `u32` metadata length
//! followed by UTF-8 metadata text. The metadata text is a small JSON object
//! carrying the scene and detector identifiers.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::responses::{ClassScoreMap, EdgeDistributionMap, Location};

pub const DUMP_MAGIC: [u8; 4] = *b"IRDK";
pub const DUMP_VERSION: u16 = 1;

/// Upper bound on any declared dimension; rejects absurd headers before
/// attempting allocation.
const MAX_DIM: u32 = 16_777_216;

/// Identifies where a dump came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpMetadata {
    pub scene: String,
    pub detector: String,
}

/// A detector's full response for one scene: classification and regression
/// maps over the same locations.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDump {
    pub class_map: ClassScoreMap,
    pub edge_map: EdgeDistributionMap,
    pub metadata: DumpMetadata,
}

impl ResponseDump {
    pub fn new(
        class_map: ClassScoreMap,
        edge_map: EdgeDistributionMap,
        metadata: DumpMetadata,
    ) -> Result<Self> {
        if class_map.locations() != edge_map.locations() {
            return Err(Error::shape(
                "class map and edge map must cover identical locations",
            ));
        }
        Ok(ResponseDump {
            class_map,
            edge_map,
            metadata,
        })
    }
}

use crate::wire::{get_f32, get_f32_vec, get_u16, get_u32, put_f32, put_u16, put_u32, read_exact_or, take};

pub fn write_dump<W: Write>(dump: &ResponseDump, sink: &mut W) -> Result<()> {
    let cls = &dump.class_map;
    let edges = &dump.edge_map;
    sink.write_all(&DUMP_MAGIC)?;
    put_u16(sink, DUMP_VERSION)?;
    put_u32(sink, cls.num_locations() as u32)?;
    put_u32(sink, cls.num_classes() as u32)?;
    put_u32(sink, edges.bins() as u32)?;
    for loc in cls.locations() {
        put_f32(sink, loc.x)?;
        put_f32(sink, loc.y)?;
        put_f32(sink, loc.stride)?;
    }
    for &c in cls.class_ids() {
        put_u32(sink, c)?;
    }
    for &v in cls.logits() {
        put_f32(sink, v)?;
    }
    for &v in edges.logits() {
        put_f32(sink, v)?;
    }
    let meta = serde_json::to_string(&dump.metadata)
        .map_err(|e| Error::invalid(format!("metadata serialization failed: {e}")))?;
    put_u32(sink, meta.len() as u32)?;
    sink.write_all(meta.as_bytes())?;
    Ok(())
}

pub fn read_dump<R: Read>(source: &mut R) -> Result<ResponseDump> {
    let magic = take::<R, 4>(source, "magic")?;
    if magic != DUMP_MAGIC {
        return Err(Error::BadMagic {
            expected: DUMP_MAGIC,
            found: magic,
        });
    }
    let version = get_u16(source, "version")?;
    if version != DUMP_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: DUMP_VERSION,
            found: version,
        });
    }
    let l = get_u32(source, "location count")?;
    let k = get_u32(source, "class count")?;
    let n = get_u32(source, "bin count")?;
    if l == 0 || k == 0 || n < 2 || l > MAX_DIM || k > MAX_DIM || n > MAX_DIM {
        return Err(Error::shape(format!(
            "implausible dump dimensions: L={l}, K={k}, n={n}"
        )));
    }
    let (l, k, n) = (l as usize, k as usize, n as usize);

    let mut locations = Vec::with_capacity(l);
    for _ in 0..l {
        let x = get_f32(source, "locations")?;
        let y = get_f32(source, "locations")?;
        let stride = get_f32(source, "locations")?;
        locations.push(Location::new(x, y, stride)?);
    }
    let mut class_ids = Vec::with_capacity(k);
    for _ in 0..k {
        class_ids.push(get_u32(source, "class ids")?);
    }
    let cls_logits = get_f32_vec(source, l * k, "classification logits")?;
    let edge_logits = get_f32_vec(source, l * 4 * n, "edge logits")?;
    let meta_len = get_u32(source, "metadata length")? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    read_exact_or(source, &mut meta_buf, "metadata")?;
    let meta_text = String::from_utf8(meta_buf)
        .map_err(|_| Error::invalid("metadata is not valid UTF-8"))?;
    let metadata: DumpMetadata = serde_json::from_str(&meta_text)
        .map_err(|e| Error::invalid(format!("metadata is not a valid record: {e}")))?;

    let class_map = ClassScoreMap::new(cls_logits, locations.clone(), class_ids)?;
    let edge_map = EdgeDistributionMap::new(edge_logits, locations, n)?;
    ResponseDump::new(class_map, edge_map, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dump() -> ResponseDump {
        let locations = vec![Location::new(4.0, 4.0, 8.0).unwrap()];
        let class_map = ClassScoreMap::new(vec![0.25], locations.clone(), vec![3]).unwrap();
        let edge_map =
            EdgeDistributionMap::new(vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8], locations, 2)
                .unwrap();
        ResponseDump::new(
            class_map,
            edge_map,
            DumpMetadata {
                scene: "scene-0".into(),
                detector: "teacher".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_identical() {
        let dump = tiny_dump();
        let mut buf = Vec::new();
        write_dump(&dump, &mut buf).unwrap();
        let back = read_dump(&mut buf.as_slice()).unwrap();
        assert_eq!(dump, back);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut buf = Vec::new();
        write_dump(&tiny_dump(), &mut buf).unwrap();
        buf[0] = b'X';
        match read_dump(&mut buf.as_slice()) {
            Err(Error::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut buf = Vec::new();
        write_dump(&tiny_dump(), &mut buf).unwrap();
        buf[4] = 9;
        match read_dump(&mut buf.as_slice()) {
            Err(Error::UnsupportedVersion { found: 9, .. }) => {}
            other => panic!("expected UnsupportedVersion, got {other:?}"),
        }
    }

    #[test]
    fn truncation_mid_tensor_is_rejected() {
        let mut buf = Vec::new();
        write_dump(&tiny_dump(), &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        match read_dump(&mut buf.as_slice()) {
            Err(Error::Truncated { .. }) => {}
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_locations_are_rejected() {
        let a = vec![Location::new(0.0, 0.0, 1.0).unwrap()];
        let b = vec![Location::new(1.0, 0.0, 1.0).unwrap()];
        let class_map = ClassScoreMap::new(vec![0.0], a, vec![0]).unwrap();
        let edge_map = EdgeDistributionMap::new(vec![0.0; 8], b, 2).unwrap();
        let meta = DumpMetadata {
            scene: String::new(),
            detector: String::new(),
        };
        assert!(ResponseDump::new(class_map, edge_map, meta).is_err());
    }
}
