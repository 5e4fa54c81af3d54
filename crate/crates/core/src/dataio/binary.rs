use std::fs;
use std::path::Path;

use super::{FormatError, HyperCube, LabelMask, PixelDataset};

pub(crate) const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub(crate) const MASK_MAGIC: &[u8; 4] = b"MSK1";
pub(crate) const PIXEL_MAGIC: &[u8; 4] = b"PXD1";

/// HSC1 payload without the intensity constraints of [`HyperCube`]; used for
/// continuous model outputs that may be negative.
#[derive(Clone, Debug, PartialEq)]
pub struct RawGrid {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub data: Vec<f32>,
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], magic: &'static [u8; 4]) -> Result<Self, FormatError> {
        let expected = std::str::from_utf8(magic).expect("ascii magic");
        if bytes.len() < 4 && magic.starts_with(bytes) {
            return Err(FormatError::Truncated {
                needed: 4,
                available: bytes.len() as u64,
            });
        }
        if bytes.len() < 4 || &bytes[..4] != magic {
            let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(Reader { bytes, pos: 4 })
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| FormatError::Inconsistent("declared size overflows".into()))?;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                needed: end as u64,
                available: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<usize, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| FormatError::Inconsistent("declared size overflows".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Fails if the declared payload is shorter than the file.
    pub(crate) fn finish(self) -> Result<(), FormatError> {
        if self.pos != self.bytes.len() {
            return Err(FormatError::Inconsistent(format!(
                "{} trailing bytes after declared payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }

    /// Checks, before allocating, that `count` items of `item_bytes` each fit.
    pub(crate) fn expect_remaining(
        &self,
        count: usize,
        item_bytes: usize,
    ) -> Result<(), FormatError> {
        let needed = count
            .checked_mul(item_bytes)
            .and_then(|n| n.checked_add(self.pos))
            .ok_or_else(|| FormatError::Inconsistent("declared size overflows".into()))?;
        if needed > self.bytes.len() {
            return Err(FormatError::Truncated {
                needed: needed as u64,
                available: self.bytes.len() as u64,
            });
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), FormatError> {
    let v = u32::try_from(v)
        .map_err(|_| FormatError::Inconsistent(format!("dimension {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn grid_header(out: &mut Vec<u8>, h: usize, w: usize, b: usize) -> Result<(), FormatError> {
    out.extend_from_slice(CUBE_MAGIC);
    put_u32(out, h)?;
    put_u32(out, w)?;
    put_u32(out, b)
}

pub fn encode_cube(cube: &HyperCube) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(16 + cube.data().len() * 4);
    grid_header(&mut out, cube.height(), cube.width(), cube.bands())?;
    put_f32s(&mut out, cube.data());
    Ok(out)
}

fn decode_grid(bytes: &[u8]) -> Result<RawGrid, FormatError> {
    let mut r = Reader::new(bytes, CUBE_MAGIC)?;
    let height = r.u32()?;
    let width = r.u32()?;
    let bands = r.u32()?;
    let n = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(bands))
        .ok_or_else(|| FormatError::Inconsistent("cube dimensions overflow".into()))?;
    r.expect_remaining(n, 4)?;
    let data = r.f32s(n)?;
    r.finish()?;
    Ok(RawGrid {
        height,
        width,
        bands,
        data,
    })
}

pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube, FormatError> {
    let g = decode_grid(bytes)?;
    HyperCube::new(g.height, g.width, g.bands, g.data)
}

pub fn encode_raw_grid(grid: &RawGrid) -> Result<Vec<u8>, FormatError> {
    if grid.height * grid.width * grid.bands != grid.data.len() {
        return Err(FormatError::Inconsistent(
            "grid dimensions do not match data".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + grid.data.len() * 4);
    grid_header(&mut out, grid.height, grid.width, grid.bands)?;
    put_f32s(&mut out, &grid.data);
    Ok(out)
}

pub fn decode_raw_grid(bytes: &[u8]) -> Result<RawGrid, FormatError> {
    decode_grid(bytes)
}

pub fn encode_mask(mask: &LabelMask) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(12 + mask.labels().len());
    out.extend_from_slice(MASK_MAGIC);
    put_u32(&mut out, mask.height())?;
    put_u32(&mut out, mask.width())?;
    out.extend_from_slice(mask.labels());
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<LabelMask, FormatError> {
    let mut r = Reader::new(bytes, MASK_MAGIC)?;
    let height = r.u32()?;
    let width = r.u32()?;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| FormatError::Inconsistent("mask dimensions overflow".into()))?;
    let labels = r.take(n)?.to_vec();
    r.finish()?;
    LabelMask::new(height, width, labels)
}

pub fn encode_pixels(ds: &PixelDataset) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(12 + ds.len() * (1 + 4 * ds.dim()));
    out.extend_from_slice(PIXEL_MAGIC);
    put_u32(&mut out, ds.len())?;
    put_u32(&mut out, ds.dim())?;
    for i in 0..ds.len() {
        let (label, features) = ds.record(i);
        out.push(label);
        put_f32s(&mut out, features);
    }
    Ok(out)
}

pub fn decode_pixels(bytes: &[u8]) -> Result<PixelDataset, FormatError> {
    let mut r = Reader::new(bytes, PIXEL_MAGIC)?;
    let n = r.u32()?;
    let dim = r.u32()?;
    let record = dim
        .checked_mul(4)
        .and_then(|v| v.checked_add(1))
        .ok_or_else(|| FormatError::Inconsistent("record size overflows".into()))?;
    r.expect_remaining(n, record)?;
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * dim);
    for _ in 0..n {
        labels.push(r.take(1)?[0]);
        features.extend(r.f32s(dim)?);
    }
    r.finish()?;
    PixelDataset::new(dim, labels, features)
}

pub fn write_cube(path: impl AsRef<Path>, cube: &HyperCube) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_cube(cube)?)?)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HyperCube, FormatError> {
    decode_cube(&fs::read(path)?)
}

pub fn write_raw_grid(path: impl AsRef<Path>, grid: &RawGrid) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_raw_grid(grid)?)?)
}

pub fn read_raw_grid(path: impl AsRef<Path>) -> Result<RawGrid, FormatError> {
    decode_raw_grid(&fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &LabelMask) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_mask(mask)?)?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask, FormatError> {
    decode_mask(&fs::read(path)?)
}

pub fn write_pixels(path: impl AsRef<Path>, ds: &PixelDataset) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_pixels(ds)?)?)
}

pub fn read_pixels(path: impl AsRef<Path>) -> Result<PixelDataset, FormatError> {
    decode_pixels(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_round_trips() {
        let cube = HyperCube::new(1, 1, 1, vec![0.0]).unwrap();
        let bytes = encode_cube(&cube).unwrap();
        assert_eq!(bytes.len(), 16 + 4);
        assert_eq!(&bytes[..4], b"HSC1");
        assert_eq!(decode_cube(&bytes).unwrap(), cube);
    }

    #[test]
    fn explicit_cube_layout() {
        let cube = HyperCube::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_cube(&cube).unwrap();
        let mut expected = b"HSC1".to_vec();
        for v in [1u32, 2, 1] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_cube(&HyperCube::new(1, 1, 1, vec![0.0]).unwrap()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_cube(&bytes),
            Err(FormatError::BadMagic { .. })
        ));
        assert!(matches!(
            decode_mask(b"HS"),
            Err(FormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let cube = HyperCube::new(2, 2, 2, vec![1.0; 8]).unwrap();
        let bytes = encode_cube(&cube).unwrap();
        let err = decode_cube(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, FormatError::Truncated { .. }));
        let err = decode_cube(&bytes[..10]).unwrap_err();
        assert!(matches!(err, FormatError::Truncated { .. }));
    }

    #[test]
    fn huge_declared_dims_do_not_allocate() {
        let mut bytes = b"HSC1".to_vec();
        for v in [u32::MAX, u32::MAX, u32::MAX] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(decode_cube(&bytes).is_err());
        let mut bytes = b"PXD1".to_vec();
        for v in [u32::MAX, u32::MAX] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(decode_pixels(&bytes).is_err());
    }

    #[test]
    fn trailing_bytes_are_inconsistent() {
        let mut bytes = encode_mask(&LabelMask::new(1, 2, vec![0, 1]).unwrap()).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode_mask(&bytes),
            Err(FormatError::Inconsistent(_))
        ));
    }

    #[test]
    fn mask_with_label_three_fails_validation() {
        let mut bytes = b"MSK1".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 3]);
        assert!(matches!(
            decode_mask(&bytes),
            Err(FormatError::InvalidLabel { value: 3, .. })
        ));
    }

    #[test]
    fn empty_pixel_dataset_round_trips() {
        let ds = PixelDataset::empty(5);
        let bytes = encode_pixels(&ds).unwrap();
        assert_eq!(bytes.len(), 12);
        assert_eq!(decode_pixels(&bytes).unwrap(), ds);
    }

    #[test]
    fn raw_grid_allows_negative_values() {
        let g = RawGrid {
            height: 1,
            width: 2,
            bands: 1,
            data: vec![-0.5, 1.5],
        };
        let bytes = encode_raw_grid(&g).unwrap();
        assert_eq!(decode_raw_grid(&bytes).unwrap(), g);
        assert!(decode_cube(&bytes).is_err());
    }
}
