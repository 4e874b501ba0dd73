//! Output directory bookkeeping and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a C,
    outputs: &'a [String],
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Streams into `name` through a buffered writer.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> transhet_core::Result<()>,
    {
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush().with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    /// Echoes the config file as given, or the resolved config when none was.
    pub fn write_config<C: Serialize>(&mut self, raw: Option<&str>, resolved: &C) -> Result<()> {
        match raw {
            Some(text) => self.write("config.toml", text),
            None => {
                let text = toml::to_string(resolved).context("serializing config")?;
                self.write("config.toml", text)
            }
        }
    }

    /// Writes `manifest.json` listing everything written so far. Contains
    /// no paths or timestamps, so identical runs give identical files.
    pub fn finish<C: Serialize>(mut self, command: &str, seed: u64, config: &C) -> Result<()> {
        let outputs = self.written.clone();
        let manifest = Manifest {
            tool: "transhet",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            outputs: &outputs,
        };
        self.write_json("manifest.json", &manifest)
    }
}
