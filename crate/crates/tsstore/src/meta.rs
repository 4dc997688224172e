//! Small, strongly consistent key-value store for registry, template, rule
//! and ticket records. Values are JSON documents grouped by namespace.
//! Every mutation is appended to `meta.log` and flushed before returning.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::StoreError;

#[derive(Serialize, Deserialize)]
struct Entry {
    ns: String,
    key: String,
    /// `None` marks a deletion.
    value: Option<Value>,
}

struct Inner {
    data: BTreeMap<String, BTreeMap<String, Value>>,
    log: Option<File>,
    log_entries: usize,
}

pub struct MetadataStore {
    path: Option<PathBuf>,
    fsync: bool,
    inner: RwLock<Inner>,
}

impl MetadataStore {
    pub fn in_memory() -> Self {
        MetadataStore {
            path: None,
            fsync: false,
            inner: RwLock::new(Inner {
                data: BTreeMap::new(),
                log: None,
                log_entries: 0,
            }),
        }
    }

    pub fn open(dir: &Path, fsync: bool) -> Result<Self, StoreError> {
        fs::create_dir_all(dir)?;
        let path = dir.join("meta.log");
        let mut data: BTreeMap<String, BTreeMap<String, Value>> = BTreeMap::new();
        let mut entries = 0;
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                let Ok(e) = serde_json::from_str::<Entry>(&line) else {
                    tracing::warn!("skipping unreadable metadata log line");
                    continue;
                };
                entries += 1;
                match e.value {
                    Some(v) => {
                        data.entry(e.ns).or_default().insert(e.key, v);
                    }
                    None => {
                        if let Some(ns) = data.get_mut(&e.ns) {
                            ns.remove(&e.key);
                        }
                    }
                }
            }
        }
        let store = MetadataStore {
            path: Some(path),
            fsync,
            inner: RwLock::new(Inner {
                data,
                log: None,
                log_entries: entries,
            }),
        };
        store.compact()?;
        Ok(store)
    }

    /// Rewrites the log with only live entries.
    pub fn compact(&self) -> Result<(), StoreError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut inner = self.inner.write();
        let tmp = path.with_extension("log.tmp");
        let mut f = File::create(&tmp)?;
        let mut n = 0;
        for (ns, kv) in &inner.data {
            for (key, value) in kv {
                let e = Entry {
                    ns: ns.clone(),
                    key: key.clone(),
                    value: Some(value.clone()),
                };
                serde_json::to_writer(&mut f, &e).map_err(std::io::Error::other)?;
                f.write_all(b"\n")?;
                n += 1;
            }
        }
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        inner.log = Some(OpenOptions::new().append(true).open(path)?);
        inner.log_entries = n;
        Ok(())
    }

    fn append(&self, inner: &mut Inner, entry: &Entry) -> Result<(), StoreError> {
        if let Some(f) = inner.log.as_mut() {
            let mut line = serde_json::to_vec(entry).map_err(std::io::Error::other)?;
            line.push(b'\n');
            f.write_all(&line)?;
            if self.fsync {
                f.sync_data()?;
            }
            inner.log_entries += 1;
        }
        Ok(())
    }

    pub fn put(&self, ns: &str, key: &str, value: Value) -> Result<(), StoreError> {
        let mut inner = self.inner.write();
        let entry = Entry {
            ns: ns.into(),
            key: key.into(),
            value: Some(value),
        };
        self.append(&mut inner, &entry)?;
        inner
            .data
            .entry(entry.ns)
            .or_default()
            .insert(entry.key, entry.value.expect("put carries a value"));
        Ok(())
    }

    pub fn get(&self, ns: &str, key: &str) -> Option<Value> {
        self.inner.read().data.get(ns).and_then(|m| m.get(key)).cloned()
    }

    pub fn delete(&self, ns: &str, key: &str) -> Result<bool, StoreError> {
        let mut inner = self.inner.write();
        let present = inner.data.get(ns).is_some_and(|m| m.contains_key(key));
        if present {
            self.append(
                &mut inner,
                &Entry {
                    ns: ns.into(),
                    key: key.into(),
                    value: None,
                },
            )?;
            if let Some(m) = inner.data.get_mut(ns) {
                m.remove(key);
            }
        }
        Ok(present)
    }

    pub fn list(&self, ns: &str) -> Vec<(String, Value)> {
        self.inner
            .read()
            .data
            .get(ns)
            .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default()
    }

    pub fn put_json<T: Serialize>(&self, ns: &str, key: &str, value: &T) -> Result<(), StoreError> {
        let v = serde_json::to_value(value).map_err(std::io::Error::other)?;
        self.put(ns, key, v)
    }

    pub fn get_json<T: DeserializeOwned>(&self, ns: &str, key: &str) -> Option<T> {
        self.get(ns, key).and_then(|v| serde_json::from_value(v).ok())
    }

    pub fn list_json<T: DeserializeOwned>(&self, ns: &str) -> Vec<T> {
        self.list(ns)
            .into_iter()
            .filter_map(|(_, v)| serde_json::from_value(v).ok())
            .collect()
    }
}
