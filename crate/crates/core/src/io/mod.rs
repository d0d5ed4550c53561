//! Persistence: binary latents and flow weights, JSON calibration models, TOML
//! run configurations and CSV score tables. Every writer replaces its target
//! atomically.

mod calibration_file;
mod config;
mod flow_file;
mod latents;
mod scores;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use calibration_file::{calibration_from_json, calibration_to_json, read_calibration, write_calibration, CalibrationFile};
pub use config::{OutputSpec, RunConfig, SampleSizes, ScenarioSpec};
pub use flow_file::{decode_flow, encode_flow, read_flow, write_flow, FLOW_MAGIC, FLOW_VERSION};
pub use latents::{
    decode_latents, encode_latents, read_latents, read_latents_with_header, write_latents, Flattening, LatentHeader,
    LATENT_HEADER_LEN, LATENT_MAGIC, LATENT_VERSION,
};
pub use scores::{read_scores, records_from_csv, records_to_csv, write_scores, ScoreColumns};

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Corruption(format!(
                "truncated {what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_target() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(read_bytes(&p).unwrap(), b"two");
        // No temporaries left behind.
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let e = read_bytes(Path::new("/nonexistent/x.bin")).unwrap_err();
        assert_eq!(e.category(), crate::ErrorCategory::Io);
    }

    #[test]
    fn reader_reports_truncation() {
        let mut r = Reader::new(&[1, 0, 0]);
        assert!(matches!(r.u32("field"), Err(Error::Corruption(_))));
    }
}
