//! Binary heatmap (`XHM1`) and attention stack (`XAS1`) files.
//!
//! ```text
//! XHM1 | u32 height | u32 width | height*width f32, row-major
//! XAS1 | u32 layers | u32 tokens | u8 flags (bit0: gradients) | layers*tokens² f32 [| same again for gradients]
//! ```
//!
//! All integers and floats are little-endian. Values are stored as `f32` and
//! widened to `f64` on load.

use crate::attention::{AttentionStack, Heatmap};
use crate::error::{Error, Result};

pub const HEATMAP_MAGIC: &[u8; 4] = b"XHM1";
pub const STACK_MAGIC: &[u8; 4] = b"XAS1";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format("element count overflows".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn check_magic(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<()> {
    let got = r.take(4)?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            std::str::from_utf8(magic).unwrap()
        )));
    }
    Ok(())
}

pub fn read_heatmap(bytes: &[u8]) -> Result<Heatmap> {
    let mut r = Reader { bytes, pos: 0 };
    check_magic(&mut r, HEATMAP_MAGIC)?;
    let (h, w) = (r.u32()? as usize, r.u32()? as usize);
    if h == 0 || w == 0 {
        return Err(Error::Format(format!("empty heatmap {h}x{w}")));
    }
    let count = h
        .checked_mul(w)
        .ok_or_else(|| Error::Format("heatmap size overflows".into()))?;
    let values = r.f32s(count)?;
    r.finish()?;
    Heatmap::new(h, w, values)
}

pub fn write_heatmap(h: &Heatmap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * h.values().len());
    out.extend_from_slice(HEATMAP_MAGIC);
    out.extend_from_slice(&(h.height() as u32).to_le_bytes());
    out.extend_from_slice(&(h.width() as u32).to_le_bytes());
    for &v in h.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_attention_stack(bytes: &[u8]) -> Result<AttentionStack> {
    let mut r = Reader { bytes, pos: 0 };
    check_magic(&mut r, STACK_MAGIC)?;
    let layers = r.u32()? as usize;
    let tokens = r.u32()? as usize;
    let flags = r.take(1)?[0];
    let cells = tokens
        .checked_mul(tokens)
        .ok_or_else(|| Error::Format("token count overflows".into()))?;
    let read_all = |r: &mut Reader<'_>| -> Result<Vec<Vec<f64>>> {
        (0..layers).map(|_| r.f32s(cells)).collect()
    };
    let attn = read_all(&mut r)?;
    let grads = if flags & 1 == 1 {
        Some(read_all(&mut r)?)
    } else {
        None
    };
    r.finish()?;
    AttentionStack::new(tokens, attn, grads)
}

pub fn write_attention_stack(stack: &AttentionStack) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(STACK_MAGIC);
    out.extend_from_slice(&(stack.layers().len() as u32).to_le_bytes());
    out.extend_from_slice(&(stack.tokens() as u32).to_le_bytes());
    out.push(stack.gradients().is_some() as u8);
    let grads = stack.gradients().unwrap_or(&[]);
    for m in stack.layers().iter().chain(grads) {
        for &v in m {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}
