//! Binary checkpoint format.
//!
//! ```text
//! magic        4 bytes  "CLRN"
//! version      u16 LE   1
//! param_count  u64 LE
//! values       param_count × f64 LE (IEEE-754)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParameterVector;

pub const MAGIC: [u8; 4] = *b"CLRN";
pub const VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(mut out: W, params: &ParameterVector) -> Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParameterVector> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 2];
    read_exact(&mut input, &mut version, "version")?;
    let version = u16::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut count = [0u8; 8];
    read_exact(&mut input, &mut count, "parameter count")?;
    let count = u64::from_le_bytes(count);
    let count = usize::try_from(count)
        .map_err(|_| Error::Checkpoint(format!("parameter count {count} too large")))?;

    let mut values = Vec::new();
    let mut buf = [0u8; 8];
    for i in 0..count {
        read_exact(&mut input, &mut buf, "parameter")
            .map_err(|_| Error::Checkpoint(format!("truncated after {i} of {count} values")))?;
        values.push(f64::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    ParameterVector::new(values).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

pub fn save(path: impl AsRef<Path>, params: &ParameterVector) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params)
}

pub fn load(path: impl AsRef<Path>) -> Result<ParameterVector> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
