//! Little-endian binary formats for global descriptors and keypoints.

use std::path::Path;

use nalgebra::Vector2;

use super::text::display_name;
use super::DataError;
use crate::retrieval::DescriptorSet;
use crate::ImageId;

const DESCRIPTOR_MAGIC: &[u8; 4] = b"LBGD";
const KEYPOINT_MAGIC: &[u8; 4] = b"LBKP";
const VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: String,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| DataError::Parse {
            file: self.file.clone(),
            line: 0,
            reason: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(), DataError> {
        if self.take(4)? != magic {
            return Err(DataError::Parse {
                file: self.file.clone(),
                line: 0,
                reason: format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
            });
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(DataError::UnsupportedVersion {
                file: self.file.clone(),
                version: version.to_string(),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), DataError> {
        if self.pos != self.bytes.len() {
            return Err(DataError::Parse {
                file: self.file.clone(),
                line: 0,
                reason: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| DataError::from_io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| DataError::from_io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| DataError::from_io(path, e))
}

/// Writes `<stem>.bin` and `<stem>.idx`; rows follow image id order.
pub fn write_descriptors(bin: &Path, idx: &Path, set: &DescriptorSet) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(20 + set.len() * set.dimension() * 4);
    bytes.extend_from_slice(DESCRIPTOR_MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(set.dimension() as u32).to_le_bytes());
    bytes.extend_from_slice(&(set.len() as u64).to_le_bytes());
    let mut index = String::new();
    for (id, v) in set.iter() {
        for x in v {
            bytes.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        index.push_str(id);
        index.push('\n');
    }
    write(bin, &bytes)?;
    write(idx, index.as_bytes())
}

pub fn read_descriptors(bin: &Path, idx: &Path) -> Result<DescriptorSet, DataError> {
    let bytes = read(bin)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        file: display_name(bin),
    };
    c.header(DESCRIPTOR_MAGIC)?;
    let dim = c.u32()? as usize;
    let count = c.u64()? as usize;
    let ids: Vec<ImageId> = std::fs::read_to_string(idx)
        .map_err(|e| DataError::from_io(idx, e))?
        .lines()
        .map(str::to_string)
        .collect();
    if ids.len() != count {
        return Err(DataError::Parse {
            file: display_name(idx),
            line: ids.len(),
            reason: format!("{} ids for {count} descriptor rows", ids.len()),
        });
    }
    let mut set = DescriptorSet::new(dim.max(1)).map_err(|e| c_err(&c, e.to_string()))?;
    for (row, id) in ids.into_iter().enumerate() {
        let v = (0..dim).map(|_| c.f32().map(f64::from)).collect::<Result<Vec<_>, _>>()?;
        if id.is_empty() {
            return Err(DataError::Parse {
                file: display_name(idx),
                line: row + 1,
                reason: "empty image id".into(),
            });
        }
        if set.contains(&id) {
            return Err(DataError::Parse {
                file: display_name(idx),
                line: row + 1,
                reason: format!("duplicate image id {id}"),
            });
        }
        set.insert(id, v).map_err(|e| c_err(&c, e.to_string()))?;
    }
    c.finish()?;
    Ok(set)
}

fn c_err(c: &Cursor<'_>, reason: String) -> DataError {
    DataError::Parse {
        file: c.file.clone(),
        line: 0,
        reason,
    }
}

pub fn write_keypoints(path: &Path, keypoints: &[Vector2<f64>]) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(16 + keypoints.len() * 8);
    bytes.extend_from_slice(KEYPOINT_MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(keypoints.len() as u64).to_le_bytes());
    for k in keypoints {
        bytes.extend_from_slice(&(k.x as f32).to_le_bytes());
        bytes.extend_from_slice(&(k.y as f32).to_le_bytes());
    }
    write(path, &bytes)
}

pub fn read_keypoints(path: &Path) -> Result<Vec<Vector2<f64>>, DataError> {
    let bytes = read(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        file: display_name(path),
    };
    c.header(KEYPOINT_MAGIC)?;
    let count = c.u64()? as usize;
    let mut out = Vec::with_capacity(count.min(bytes.len() / 8));
    for i in 0..count {
        let (x, y) = (c.f32()?, c.f32()?);
        if !x.is_finite() || !y.is_finite() {
            return Err(c_err(&c, format!("keypoint {i} is not finite")));
        }
        out.push(Vector2::new(f64::from(x), f64::from(y)));
    }
    c.finish()?;
    Ok(out)
}
