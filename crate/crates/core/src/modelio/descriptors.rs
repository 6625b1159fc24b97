//! Descriptor file format: self-describing binary with a count + dim
//! header, full 32-bit floats.
//!
//! ```text
//! magic  b"HBDD", version u32 (= 1), count u32, dim u32
//! per descriptor: id_len u16, id utf-8 bytes, dim f32 values (LE)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::vpr::Descriptor;

const MAGIC: &[u8; 4] = b"HBDD";
const VERSION: u32 = 1;

pub fn save_descriptors(descriptors: &[Descriptor<f32>]) -> Result<Vec<u8>> {
    let dim = descriptors.first().map_or(0, Descriptor::len);
    if descriptors.iter().any(|d| d.len() != dim) {
        return Err(Error::DescriptorFile("descriptors disagree on dimension".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(descriptors.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for d in descriptors {
        let id = d.id.as_bytes();
        if id.len() > u16::MAX as usize {
            return Err(Error::DescriptorFile(format!("id too long: {} bytes", id.len())));
        }
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        for v in &d.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_descriptors(bytes: &[u8]) -> Result<Vec<Descriptor<f32>>> {
    let err = |msg: &str| Error::DescriptorFile(msg.into());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(err("not a descriptor file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;

    let mut pos = 16;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::DescriptorFile("file truncated".into()));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(id_len)?)
            .map_err(|_| Error::DescriptorFile("id is not utf-8".into()))?
            .to_string();
        let values: Vec<f32> = take(4 * dim)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Descriptor::new(id, values)?);
    }
    if pos != bytes.len() {
        return Err(err("trailing bytes after last descriptor"));
    }
    Ok(out)
}

pub fn save_descriptors_file(
    descriptors: &[Descriptor<f32>],
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, save_descriptors(descriptors)?)?;
    Ok(())
}

pub fn load_descriptors_file(path: impl AsRef<Path>) -> Result<Vec<Descriptor<f32>>> {
    load_descriptors(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_desc(id: &str, seed: usize, dim: usize) -> Descriptor<f32> {
        let values: Vec<f64> = (0..dim).map(|i| ((seed * 31 + i * 7) % 13) as f64 - 6.0).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Descriptor::new(id, values.iter().map(|v| (v / norm) as f32).collect()).unwrap()
    }

    #[test]
    fn roundtrip_preserves_ids_and_values() {
        let ds: Vec<_> = (0..5).map(|i| unit_desc(&format!("img/{i}.png"), i + 1, 24)).collect();
        let bytes = save_descriptors(&ds).unwrap();
        let back = load_descriptors(&bytes).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn header_is_self_describing() {
        let ds = vec![unit_desc("a", 1, 10), unit_desc("b", 2, 10)];
        let bytes = save_descriptors(&ds).unwrap();
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 10);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let ds = vec![unit_desc("a", 3, 8)];
        let bytes = save_descriptors(&ds).unwrap();
        assert!(load_descriptors(&bytes[..bytes.len() - 2]).is_err());
        assert!(load_descriptors(b"nope").is_err());
        let mixed = vec![unit_desc("a", 3, 8), unit_desc("b", 4, 9)];
        assert!(save_descriptors(&mixed).is_err());
    }
}
