//! Per-patient data keys held by the service: `<dir>/<patient_id>.key`,
//! one line of 64 hex characters.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::Mutex;

use rand::rngs::OsRng;

use crate::vault::DataKey;

#[derive(Debug)]
pub struct Keystore {
    dir: PathBuf,
    cache: Mutex<BTreeMap<u64, DataKey>>,
}

impl Keystore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            cache: Mutex::new(BTreeMap::new()),
        })
    }

    fn path(&self, patient_id: u64) -> PathBuf {
        self.dir.join(format!("{patient_id}.key"))
    }

    pub fn get(&self, patient_id: u64) -> io::Result<Option<DataKey>> {
        let mut cache = self.cache.lock().unwrap();
        if let Some(k) = cache.get(&patient_id) {
            return Ok(Some(k.clone()));
        }
        let text = match fs::read_to_string(self.path(patient_id)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(text.trim(), &mut bytes)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "malformed data key file"))?;
        let key = DataKey::from_bytes(bytes);
        cache.insert(patient_id, key.clone());
        Ok(Some(key))
    }

    /// Returns the patient's key, generating and persisting one on first use.
    pub fn get_or_create(&self, patient_id: u64) -> io::Result<DataKey> {
        if let Some(k) = self.get(patient_id)? {
            return Ok(k);
        }
        let mut cache = self.cache.lock().unwrap();
        if let Some(k) = cache.get(&patient_id) {
            return Ok(k.clone());
        }
        let key = DataKey::generate(&mut OsRng);
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create_new(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        match opts.open(self.path(patient_id)) {
            Ok(mut f) => {
                use std::io::Write;
                f.write_all(hex::encode(key.as_bytes()).as_bytes())?;
                f.write_all(b"\n")?;
                f.sync_all()?;
            }
            // Another process won the race; use its key.
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                drop(cache);
                return self.get(patient_id)?.ok_or(e);
            }
            Err(e) => return Err(e),
        }
        cache.insert(patient_id, key.clone());
        Ok(key)
    }
}
