use super::{Result, ValType, WasmError};

/// Cursor over a byte slice with LEB128 helpers. Offsets in errors are
/// relative to `base`, so nested readers still report file offsets.
#[derive(Clone)]
pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0, base: 0 }
    }

    pub fn with_base(data: &'a [u8], base: usize) -> Self {
        Reader { data, pos: 0, base }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    pub fn remaining(&self) -> &'a [u8] {
        &self.data[self.pos..]
    }

    pub fn err<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(WasmError::MalformedBinary {
            offset: self.offset(),
            reason: reason.into(),
        })
    }

    pub fn byte(&mut self) -> Result<u8> {
        match self.data.get(self.pos) {
            Some(b) => {
                self.pos += 1;
                Ok(*b)
            }
            None => self.err("unexpected end of input"),
        }
    }

    pub fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return self.err("unexpected end of input");
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let v = self.uleb(32)?;
        Ok(v as u32)
    }

    #[cfg(test)]
    pub fn u64(&mut self) -> Result<u64> {
        self.uleb(64)
    }

    fn uleb(&mut self, bits: u32) -> Result<u64> {
        let mut result: u64 = 0;
        let mut shift = 0;
        loop {
            let b = self.byte()?;
            if shift >= bits || (shift + 7 > bits && (b & 0x7F) >> (bits - shift) != 0) {
                return self.err("integer too large");
            }
            result |= ((b & 0x7F) as u64) << shift;
            shift += 7;
            if b & 0x80 == 0 {
                return Ok(result);
            }
        }
    }

    pub fn s32(&mut self) -> Result<i32> {
        Ok(self.sleb(32)? as i32)
    }

    pub fn s33(&mut self) -> Result<i64> {
        self.sleb(33)
    }

    pub fn s64(&mut self) -> Result<i64> {
        self.sleb(64)
    }

    fn sleb(&mut self, bits: u32) -> Result<i64> {
        let mut result: i64 = 0;
        let mut shift = 0;
        let max_bytes = bits.div_ceil(7);
        let mut count = 0;
        loop {
            let b = self.byte()?;
            count += 1;
            if count > max_bytes {
                return self.err("integer too large");
            }
            if shift < 64 {
                result |= ((b & 0x7F) as i64) << shift;
            }
            shift += 7;
            if b & 0x80 == 0 {
                if count == max_bytes {
                    // Unused high bits of the last byte must be a sign extension.
                    let used = bits - 7 * (max_bytes - 1);
                    if used < 7 {
                        let payload = b & 0x7F;
                        let sign = (payload >> (used - 1)) & 1;
                        let expected = if sign == 1 { 0x7F >> used } else { 0 };
                        if payload >> used != expected {
                            return self.err("integer too large");
                        }
                    }
                }
                if shift < 64 && b & 0x40 != 0 {
                    result |= -1i64 << shift;
                }
                return Ok(result);
            }
        }
    }

    pub fn f32_bits(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64_bits(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let b = self.bytes(len)?;
        match std::str::from_utf8(b) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => self.err("malformed UTF-8 name"),
        }
    }

    pub fn val_type(&mut self) -> Result<ValType> {
        let b = self.byte()?;
        if b == 0x7B {
            return Err(WasmError::UnsupportedFeature("simd".into()));
        }
        match ValType::from_byte(b) {
            Some(t) => Ok(t),
            None => {
                self.pos -= 1;
                self.err(format!("invalid value type {b:#x}"))
            }
        }
    }

    pub fn ref_type(&mut self) -> Result<ValType> {
        let t = self.val_type()?;
        if !t.is_ref() {
            return self.err("expected reference type");
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uleb_examples() {
        assert_eq!(Reader::new(&[0xE5, 0x8E, 0x26]).u32().unwrap(), 624485);
        assert_eq!(Reader::new(&[0x80, 0x00]).u32().unwrap(), 0);
        assert!(Reader::new(&[0xFF, 0xFF, 0xFF, 0xFF, 0x7F]).u32().is_err());
        assert_eq!(
            Reader::new(&[0xFF, 0xFF, 0xFF, 0xFF, 0x0F]).u32().unwrap(),
            u32::MAX
        );
    }

    #[test]
    fn sleb_examples() {
        assert_eq!(Reader::new(&[0xC0, 0xBB, 0x78]).s32().unwrap(), -123456);
        assert_eq!(Reader::new(&[0x7F]).s32().unwrap(), -1);
        assert_eq!(
            Reader::new(&[0x80, 0x80, 0x80, 0x80, 0x78]).s32().unwrap(),
            i32::MIN
        );
        assert!(Reader::new(&[0x80, 0x80, 0x80, 0x80, 0x70]).s32().is_err());
        assert_eq!(Reader::new(&[0x40]).s33().unwrap(), -64);
    }
}
