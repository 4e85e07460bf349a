//! Small filesystem helpers shared by the bundle and sandbox layers.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

fn sorted_children(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    v.sort();
    Ok(v)
}

/// Recursively copies `src` into `dst`, following links so that linked files
/// are copied by content. Top-level names in `skip_top` are left out.
/// Errors carry the offending path.
pub fn copy_tree(src: &Path, dst: &Path, skip_top: &[&str]) -> Result<(), (PathBuf, io::Error)> {
    fn go(src: &Path, dst: &Path, skip: &[&str]) -> Result<(), (PathBuf, io::Error)> {
        fs::create_dir_all(dst).map_err(|e| (dst.to_path_buf(), e))?;
        for p in sorted_children(src).map_err(|e| (src.to_path_buf(), e))? {
            let name = p.file_name().expect("dir entry has a name");
            if skip.iter().any(|s| name == *s) {
                continue;
            }
            let target = dst.join(name);
            let meta = fs::metadata(&p).map_err(|e| (p.clone(), e))?;
            if meta.is_dir() {
                go(&p, &target, &[])?;
            } else {
                fs::copy(&p, &target).map_err(|e| (p.clone(), e))?;
            }
        }
        Ok(())
    }
    go(src, dst, skip_top)
}

/// Sets or clears write permission on every entry below and including `root`.
/// Symlinks are not followed.
pub fn set_tree_writable(root: &Path, writable: bool) -> io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    let meta = fs::symlink_metadata(root)?;
    if meta.file_type().is_symlink() {
        return Ok(());
    }
    let is_dir = meta.is_dir();
    // children first when locking, parent first when unlocking
    let set = |p: &Path, dir: bool| {
        let mode = match (writable, dir) {
            (true, true) => 0o755,
            (true, false) => 0o644,
            (false, true) => 0o555,
            (false, false) => 0o444,
        };
        fs::set_permissions(p, fs::Permissions::from_mode(mode))
    };
    if is_dir && writable {
        set(root, true)?;
    }
    if is_dir {
        for child in sorted_children(root)? {
            set_tree_writable(&child, writable)?;
        }
    }
    if !is_dir || !writable {
        set(root, is_dir)?;
    }
    Ok(())
}
