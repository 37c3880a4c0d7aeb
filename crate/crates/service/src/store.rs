//! Disk-backed session store.
//!
//! Uploads keep their original bytes so every later decode is identical.
//! Results are stored as PNG next to a JSON provenance record. Files are
//! written to a temporary name and renamed, so readers never see a partial
//! record.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadRecord {
    pub image_id: String,
    pub memorability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub result_id: String,
    pub image_id: String,
    pub seed_id: String,
    pub alpha: f64,
    pub original_memorability: f64,
    pub measured_memorability: f64,
    pub measured_gap: f64,
    pub predicted_gap: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

/// Fresh random 128-bit id, hex encoded.
pub fn new_id() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

fn valid_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_hexdigit())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, Error> {
        let root = root.into();
        fs::create_dir_all(root.join("images"))?;
        fs::create_dir_all(root.join("results"))?;
        Ok(Self { root })
    }

    fn image_path(&self, id: &str, ext: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.{ext}"))
    }

    fn result_path(&self, id: &str, ext: &str) -> PathBuf {
        self.root.join("results").join(format!("{id}.{ext}"))
    }

    pub fn put_upload(&self, bytes: &[u8], record: &UploadRecord) -> Result<(), Error> {
        write_atomic(&self.image_path(&record.image_id, "bin"), bytes)?;
        // The record is written last; its presence marks a complete upload.
        write_atomic(&self.image_path(&record.image_id, "json"), &serde_json::to_vec(record)?)
    }

    pub fn upload(&self, id: &str) -> Result<UploadRecord, Error> {
        let path = self.image_path(id, "json");
        if !valid_id(id) || !path.exists() {
            return Err(Error::NotFound(format!("image {id}")));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn upload_bytes(&self, id: &str) -> Result<Vec<u8>, Error> {
        self.upload(id)?;
        Ok(fs::read(self.image_path(id, "bin"))?)
    }

    pub fn put_result(&self, png: &[u8], record: &ResultRecord) -> Result<(), Error> {
        write_atomic(&self.result_path(&record.result_id, "png"), png)?;
        write_atomic(&self.result_path(&record.result_id, "json"), &serde_json::to_vec(record)?)
    }

    pub fn result(&self, id: &str) -> Result<ResultRecord, Error> {
        let path = self.result_path(id, "json");
        if !valid_id(id) || !path.exists() {
            return Err(Error::NotFound(format!("result {id}")));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn result_png(&self, id: &str) -> Result<Vec<u8>, Error> {
        self.result(id)?;
        Ok(fs::read(self.result_path(id, "png"))?)
    }
}
