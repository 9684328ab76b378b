use super::{DicomElement, DicomError, DicomFile, DicomTag, Vr};

pub const PREAMBLE_LEN: usize = 128;
pub const MAGIC: &[u8; 4] = b"DICM";

const HEADER_LEN: usize = PREAMBLE_LEN + MAGIC.len();

pub fn parse_dicom(bytes: &[u8]) -> Result<DicomFile, DicomError> {
    if bytes.len() < HEADER_LEN || &bytes[PREAMBLE_LEN..HEADER_LEN] != MAGIC {
        return Err(DicomError::MissingMagic);
    }
    let mut reader = Reader {
        bytes,
        pos: HEADER_LEN,
    };
    let mut elements: Vec<DicomElement> = Vec::new();
    while reader.pos < bytes.len() {
        let start = reader.pos;
        let group = reader.u16(start)?;
        let element = reader.u16(start)?;
        let tag = DicomTag::new(group, element);
        let code = reader.take(2, start)?;
        let vr = Vr::from_code([code[0], code[1]])
            .ok_or_else(|| DicomError::UnsupportedVR(String::from_utf8_lossy(code).into_owned()))?;
        if elements.last().is_some_and(|prev| prev.tag >= tag) {
            return Err(DicomError::NonMonotonicTag(tag));
        }
        let len = if vr.has_long_length() {
            reader.take(2, start)?;
            reader.u32(start)? as usize
        } else {
            usize::from(reader.u16(start)?)
        };
        let value = reader.take(len, start)?.to_vec();
        elements.push(DicomElement { tag, vr, value });
    }
    DicomFile::from_ordered(elements)
}

pub fn write_dicom(file: &DicomFile) -> Result<Vec<u8>, DicomError> {
    // Re-check: DicomFile upholds its invariants, but the encoder is the
    // last line before bytes leave the process.
    let file = DicomFile::from_ordered(file.elements().to_vec())?;
    let body: usize = file
        .elements()
        .iter()
        .map(|e| e.value.len() + if e.vr.has_long_length() { 12 } else { 8 })
        .sum();
    let mut out = Vec::with_capacity(HEADER_LEN + body);
    out.resize(PREAMBLE_LEN, 0);
    out.extend_from_slice(MAGIC);
    for e in file.elements() {
        out.extend_from_slice(&e.tag.group.to_le_bytes());
        out.extend_from_slice(&e.tag.element.to_le_bytes());
        out.extend_from_slice(&e.vr.code());
        if e.vr.has_long_length() {
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&(e.value.len() as u32).to_le_bytes());
        } else {
            out.extend_from_slice(&(e.value.len() as u16).to_le_bytes());
        }
        out.extend_from_slice(&e.value);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// `element_start` is reported on truncation so the error points at the
    /// element header rather than somewhere inside it.
    fn take(&mut self, n: usize, element_start: usize) -> Result<&'a [u8], DicomError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or(DicomError::Truncated(element_start))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self, element_start: usize) -> Result<u16, DicomError> {
        let b = self.take(2, element_start)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, element_start: usize) -> Result<u32, DicomError> {
        let b = self.take(4, element_start)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
