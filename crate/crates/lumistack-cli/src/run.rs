//! Run plumbing shared by every subcommand: configuration merging, the
//! artifact writer that hashes everything it touches, and the run manifest
//! that makes a run replayable.

use lumistack::error::{Error, Result};
use lumistack::image::{validate_pano_dims, GammaParams, Panorama};
use lumistack::io;
use lumistack::warp::WarpGrid;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Loads a `--config` JSON file. A plain object supplies overrides directly;
/// a run manifest (recognized by its `config` object) replays the
/// configuration it echoes.
pub fn load_config(path: Option<&Path>) -> Result<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Default::default()));
    };
    let v: Value = io::read_json(path)?;
    let v = match v {
        Value::Object(mut m) if m.contains_key("config") => m.remove("config").unwrap(),
        other => other,
    };
    match v {
        Value::Object(_) => Ok(v),
        _ => Err(Error::invalid(format!(
            "config file {} must hold a JSON object",
            path.display()
        ))),
    }
}

/// Typed lookup of one override key; absent or null means "not set".
pub fn cfg_get<T: DeserializeOwned>(cfg: &Value, key: &str) -> Result<Option<T>> {
    match cfg.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::invalid(format!("config key {key}: {e}"))),
    }
}

/// CLI flag, then config file, then default.
pub fn resolve<T: DeserializeOwned>(
    flag: Option<T>,
    cfg: &Value,
    key: &str,
    default: T,
) -> Result<T> {
    Ok(flag
        .or(cfg_get(cfg, key)?)
        .unwrap_or(default))
}

/// Output directory from flag or config; most subcommands cannot run
/// without one.
pub fn require_out(flag: &Option<PathBuf>, cfg: &Value, command: &str) -> Result<PathBuf> {
    flag.clone()
        .or(cfg_get(cfg, "out")?)
        .ok_or_else(|| Error::invalid(format!("{command} requires --out")))
}

/// Parses a `WxH` resolution string and checks panorama invariants
/// (width divisible by 60, three times the height).
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let (ws, hs) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::invalid(format!("resolution must look like 240x80, got {s}")))?;
    let w: usize = ws
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad resolution width in {s}")))?;
    let h: usize = hs
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad resolution height in {s}")))?;
    validate_pano_dims(w, h)?;
    Ok((w, h))
}

/// Display transfer for the configured `gamma` (encode exponent `1/gamma`).
pub fn gamma_params(gamma: f64) -> Result<GammaParams> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    Ok(GammaParams {
        scale: 1.0,
        exponent: 1.0 / gamma,
    })
}

/// Runs `f` on a rayon pool with the requested thread count (0 means the
/// rayon default). One thread forces fully serial execution; parallel runs
/// use order-preserving reductions, so the artifacts come out identical.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
}

/// Collects every artifact a run writes, hashing each file, and emits the
/// run manifest that ties config and artifacts together.
pub struct RunWriter {
    root: PathBuf,
    artifacts: Vec<ArtifactEntry>,
}

impl RunWriter {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::Io {
            path: root.to_path_buf(),
            source: e,
        })?;
        Ok(RunWriter {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.artifacts.push(ArtifactEntry {
            path: rel.to_string(),
            sha256: format!("{:x}", hasher.finalize()),
        });
        Ok(())
    }

    fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        Ok(path)
    }

    pub fn png(&mut self, rel: &str, p: &Panorama) -> Result<()> {
        let path = self.prepare(rel)?;
        io::write_png(&path, p)?;
        self.record(rel)
    }

    /// Raw f32 map plus its JSON sidecar (both recorded).
    pub fn float_map(&mut self, rel: &str, p: &Panorama) -> Result<()> {
        let path = self.prepare(rel)?;
        io::write_float_map(&path, p)?;
        self.record(rel)?;
        self.record(&sidecar_of(rel))
    }

    pub fn warp_grid(&mut self, rel: &str, g: &WarpGrid) -> Result<()> {
        let path = self.prepare(rel)?;
        io::write_warp_grid(&path, g)?;
        self.record(rel)?;
        self.record(&sidecar_of(rel))
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let path = self.prepare(rel)?;
        io::write_json(&path, value)?;
        self.record(rel)
    }

    pub fn text(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.prepare(rel)?;
        fs::write(&path, contents).map_err(|e| Error::Io { path, source: e })?;
        self.record(rel)
    }

    /// Writes the run manifest (not itself listed as an artifact).
    pub fn finish<C: Serialize>(self, command: &str, config: &C) -> Result<()> {
        #[derive(Serialize)]
        struct RunManifest<'a, C> {
            schema: &'a str,
            command: &'a str,
            config: &'a C,
            artifacts: &'a [ArtifactEntry],
        }
        let path = self.root.join(RUN_MANIFEST);
        io::write_json(
            &path,
            &RunManifest {
                schema: "lumistack.run.v1",
                command,
                config,
                artifacts: &self.artifacts,
            },
        )
    }
}

fn sidecar_of(rel: &str) -> String {
    let p = Path::new(rel);
    p.with_extension("json")
        .to_string_lossy()
        .into_owned()
}
