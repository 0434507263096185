use std::io::Read;
use std::path::Path;
use std::process::Command;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lower-case hex SHA-256 of a file.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Downloads `url` to `dest` with `curl`, then checks the digest when one is
/// given. A file already present with the right digest is not fetched again.
/// On mismatch the download is removed.
pub fn fetch(url: &str, dest: &Path, sha256: Option<&str>) -> Result<()> {
    if let (true, Some(want)) = (dest.exists(), sha256) {
        if sha256_file(dest)?.eq_ignore_ascii_case(want) {
            return Ok(());
        }
    }
    if let Some(parent) = dest.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = dest.with_extension("part");
    let out = Command::new("curl")
        .args(["-fsSL", "--retry", "2", "-o"])
        .arg(&tmp)
        .arg(url)
        .output()
        .map_err(|e| Error::io(Path::new("curl"), e))?;
    if !out.status.success() {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::InvalidArgument(format!(
            "download of {url} failed: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    if let Some(want) = sha256 {
        let got = sha256_file(&tmp)?;
        if !got.eq_ignore_ascii_case(want) {
            let _ = std::fs::remove_file(&tmp);
            return Err(Error::InvalidArgument(format!(
                "checksum mismatch for {url}: expected {want}, got {got}"
            )));
        }
    }
    std::fs::rename(&tmp, dest).map_err(|e| Error::io(dest, e))
}
