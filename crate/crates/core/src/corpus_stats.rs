//! Corpus-wide co-occurrence tables and attribute clusters.
//!
//! The tables decide which foil values are plausible for a slot and supply
//! the weights that keep negative captions distributed like positive ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene_graph::{canonical_token, SceneGraph};

/// Leading bytes of every table container.
pub const TABLES_MAGIC: &[u8; 8] = b"HNCLUT\r\n";
pub const TABLES_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TablesError {
    #[error("no corpus: cannot build look-up tables from zero scenes")]
    NoCorpus,
    #[error("not a look-up table file (bad magic header)")]
    BadMagic,
    #[error("unsupported table container version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt table container: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("attribute {attribute:?} listed in clusters {first:?} and {second:?}")]
    DuplicateMember {
        attribute: String,
        first: String,
        second: String,
    },
    #[error("line {line}: expected `cluster: member, member, ...`")]
    Syntax { line: usize },
    #[error("duplicate cluster name {0:?}")]
    DuplicateCluster(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Pair = (String, String);
pub type Triple = (String, String, String);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupTables {
    /// (attribute, class) → occurrences.
    pub attr_obj: BTreeMap<Pair, u64>,
    /// (subject class, predicate) → occurrences.
    pub subj_pred: BTreeMap<Pair, u64>,
    /// (predicate, object class) → occurrences.
    pub pred_obj: BTreeMap<Pair, u64>,
    pub triples: BTreeMap<Triple, u64>,
    /// class → instances per image → number of images.
    pub class_count_hist: BTreeMap<String, BTreeMap<u32, u64>>,
    pub relation_freq: BTreeMap<String, u64>,
    pub attribute_freq: BTreeMap<String, u64>,
    pub scenes: u64,
}

fn bump<K: Ord>(map: &mut BTreeMap<K, u64>, key: K, by: u64) {
    *map.entry(key).or_insert(0) += by;
}

fn pair(a: &str, b: &str) -> Pair {
    (a.to_string(), b.to_string())
}

impl LookupTables {
    fn from_scene(scene: &SceneGraph) -> Self {
        let mut tables = LookupTables {
            scenes: 1,
            ..Default::default()
        };
        for object in scene.objects.values() {
            for attribute in &object.attributes {
                bump(&mut tables.attr_obj, pair(attribute, &object.class_name), 1);
                bump(&mut tables.attribute_freq, attribute.clone(), 1);
            }
            for relation in &object.relations {
                let Some(target) = scene.object(&relation.target) else {
                    continue;
                };
                let (s, p, o) = (&object.class_name, &relation.predicate, &target.class_name);
                bump(&mut tables.subj_pred, pair(s, p), 1);
                bump(&mut tables.pred_obj, pair(p, o), 1);
                bump(&mut tables.triples, (s.clone(), p.clone(), o.clone()), 1);
                bump(&mut tables.relation_freq, p.clone(), 1);
            }
        }
        for (class, count) in scene.class_counts() {
            bump(
                tables.class_count_hist.entry(class.to_string()).or_default(),
                count as u32,
                1,
            );
        }
        tables
    }

    /// Adds `other` into `self`. Associative and commutative.
    pub fn merge(&mut self, other: LookupTables) {
        fn add<K: Ord>(into: &mut BTreeMap<K, u64>, from: BTreeMap<K, u64>) {
            for (k, v) in from {
                bump(into, k, v);
            }
        }
        add(&mut self.attr_obj, other.attr_obj);
        add(&mut self.subj_pred, other.subj_pred);
        add(&mut self.pred_obj, other.pred_obj);
        add(&mut self.triples, other.triples);
        add(&mut self.relation_freq, other.relation_freq);
        add(&mut self.attribute_freq, other.attribute_freq);
        for (class, hist) in other.class_count_hist {
            add(self.class_count_hist.entry(class).or_default(), hist);
        }
        self.scenes += other.scenes;
    }

    pub fn attr_obj(&self, attribute: &str, class: &str) -> u64 {
        self.attr_obj
            .get(&pair(attribute, class))
            .copied()
            .unwrap_or(0)
    }

    pub fn subj_pred(&self, subject: &str, predicate: &str) -> u64 {
        self.subj_pred
            .get(&pair(subject, predicate))
            .copied()
            .unwrap_or(0)
    }

    pub fn pred_obj(&self, predicate: &str, object: &str) -> u64 {
        self.pred_obj
            .get(&pair(predicate, object))
            .copied()
            .unwrap_or(0)
    }

    pub fn triple(&self, subject: &str, predicate: &str, object: &str) -> u64 {
        self.triples
            .get(&(subject.to_string(), predicate.to_string(), object.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// Every class name seen anywhere in the corpus.
    pub fn classes(&self) -> BTreeSet<&str> {
        self.class_count_hist.keys().map(String::as_str).collect()
    }

    pub fn total_relations(&self) -> u64 {
        self.relation_freq.values().sum()
    }
}

/// Exact occurrence counts over `scenes`, computed as a parallel map over
/// scenes followed by a merge; the result does not depend on scene order.
pub fn build_tables<'a, I>(scenes: I) -> Result<LookupTables, TablesError>
where
    I: IntoIterator<Item = &'a SceneGraph>,
{
    let scenes: Vec<&SceneGraph> = scenes.into_iter().collect();
    let tables = scenes
        .into_par_iter()
        .map(LookupTables::from_scene)
        .reduce(LookupTables::default, |mut acc, t| {
            acc.merge(t);
            acc
        });
    if tables.scenes == 0 {
        return Err(TablesError::NoCorpus);
    }
    Ok(tables)
}

// Binary container: magic, u32 version, then seven sections in a fixed order.
// Every section is a u64 entry count followed by entries; strings are u32
// length + UTF-8 bytes; counts are u64. All integers little-endian.

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn str(&mut self, s: &str) -> io::Result<()> {
        let len = u32::try_from(s.len()).map_err(|_| io::Error::other("string too long"))?;
        self.u32(len)?;
        self.0.write_all(s.as_bytes())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], TablesError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TablesError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
    fn u32(&mut self) -> Result<u32, TablesError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, TablesError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, TablesError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| TablesError::Corrupt(format!("invalid UTF-8 at byte {at}")))
    }
    fn count(&mut self) -> Result<u64, TablesError> {
        let v = self.u64()?;
        if v == 0 {
            return Err(TablesError::Corrupt(format!(
                "zero count before byte {}",
                self.pos
            )));
        }
        Ok(v)
    }
}

pub fn write_tables<W: Write>(tables: &LookupTables, out: W) -> io::Result<()> {
    let mut w = Writer(out);
    w.0.write_all(TABLES_MAGIC)?;
    w.u32(TABLES_VERSION)?;
    w.u64(tables.scenes)?;
    for map in [&tables.attr_obj, &tables.subj_pred, &tables.pred_obj] {
        w.u64(map.len() as u64)?;
        for ((a, b), n) in map {
            w.str(a)?;
            w.str(b)?;
            w.u64(*n)?;
        }
    }
    w.u64(tables.triples.len() as u64)?;
    for ((s, p, o), n) in &tables.triples {
        w.str(s)?;
        w.str(p)?;
        w.str(o)?;
        w.u64(*n)?;
    }
    w.u64(tables.class_count_hist.len() as u64)?;
    for (class, hist) in &tables.class_count_hist {
        w.str(class)?;
        w.u64(hist.len() as u64)?;
        for (instances, images) in hist {
            w.u32(*instances)?;
            w.u64(*images)?;
        }
    }
    for map in [&tables.relation_freq, &tables.attribute_freq] {
        w.u64(map.len() as u64)?;
        for (k, n) in map {
            w.str(k)?;
            w.u64(*n)?;
        }
    }
    w.0.flush()
}

pub fn decode_tables(bytes: &[u8]) -> Result<LookupTables, TablesError> {
    if bytes.len() < TABLES_MAGIC.len() || &bytes[..TABLES_MAGIC.len()] != TABLES_MAGIC {
        return Err(TablesError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: TABLES_MAGIC.len(),
    };
    let version = r.u32()?;
    if version != TABLES_VERSION {
        return Err(TablesError::Version {
            found: version,
            expected: TABLES_VERSION,
        });
    }
    let mut t = LookupTables {
        scenes: r.u64()?,
        ..Default::default()
    };
    for map in [&mut t.attr_obj, &mut t.subj_pred, &mut t.pred_obj] {
        for _ in 0..r.u64()? {
            let key = (r.str()?, r.str()?);
            map.insert(key, r.count()?);
        }
    }
    for _ in 0..r.u64()? {
        let key = (r.str()?, r.str()?, r.str()?);
        t.triples.insert(key, r.count()?);
    }
    for _ in 0..r.u64()? {
        let class = r.str()?;
        let mut hist = BTreeMap::new();
        for _ in 0..r.u64()? {
            let instances = r.u32()?;
            hist.insert(instances, r.count()?);
        }
        t.class_count_hist.insert(class, hist);
    }
    for map in [&mut t.relation_freq, &mut t.attribute_freq] {
        for _ in 0..r.u64()? {
            let key = r.str()?;
            map.insert(key, r.count()?);
        }
    }
    if r.pos != bytes.len() {
        return Err(TablesError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(t)
}

pub fn save_tables(tables: &LookupTables, path: &Path) -> Result<(), TablesError> {
    let mut buf = Vec::new();
    write_tables(tables, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_tables(path: &Path) -> Result<LookupTables, TablesError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_tables(&bytes)
}

/// Hand-curated groups of interchangeable attributes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttributeClusters {
    cluster_of: BTreeMap<String, String>,
    members: BTreeMap<String, Vec<String>>,
}

impl AttributeClusters {
    /// Parses `name: member, member, ...` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ClusterError> {
        let mut clusters = AttributeClusters::default();
        for (index, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, rest) = line
                .split_once(':')
                .ok_or(ClusterError::Syntax { line: index + 1 })?;
            let name = canonical_token(name);
            if name.is_empty() {
                return Err(ClusterError::Syntax { line: index + 1 });
            }
            if clusters.members.contains_key(&name) {
                return Err(ClusterError::DuplicateCluster(name));
            }
            let mut list = Vec::new();
            for member in rest.split(',').map(canonical_token).filter(|m| !m.is_empty()) {
                if let Some(first) = clusters.cluster_of.get(&member) {
                    return Err(ClusterError::DuplicateMember {
                        attribute: member,
                        first: first.clone(),
                        second: name,
                    });
                }
                if list.contains(&member) {
                    continue;
                }
                clusters.cluster_of.insert(member.clone(), name.clone());
                list.push(member);
            }
            clusters.members.insert(name, list);
        }
        Ok(clusters)
    }

    pub fn cluster_of(&self, attribute: &str) -> Option<&str> {
        self.cluster_of.get(attribute).map(String::as_str)
    }

    pub fn members(&self, cluster: &str) -> &[String] {
        self.members.get(cluster).map_or(&[], Vec::as_slice)
    }

    /// Other attributes in the same cluster as `attribute`.
    pub fn siblings<'a>(&'a self, attribute: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.cluster_of(attribute)
            .map(|c| self.members(c))
            .unwrap_or(&[])
            .iter()
            .map(String::as_str)
            .filter(move |m| *m != attribute)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn load_attribute_clusters(path: &Path) -> Result<AttributeClusters, ClusterError> {
    AttributeClusters::parse(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::parse_scene_graphs;

    fn scenes(doc: &str) -> Vec<SceneGraph> {
        parse_scene_graphs(doc.as_bytes())
            .unwrap()
            .scenes
            .into_values()
            .collect()
    }

    #[test]
    fn attribute_occurrence_is_counted() {
        let s = scenes(
            r#"{"a": {"width": 9, "height": 9, "objects": {
                "1": {"name": "bowl", "x": 0, "y": 0, "w": 1, "h": 1, "attributes": ["white"]}}}}"#,
        );
        let t = build_tables(&s).unwrap();
        assert_eq!(t.attr_obj("white", "bowl"), 1);
        assert_eq!(t.attr_obj("teal", "bowl"), 0);
    }

    #[test]
    fn triples_sum_across_scenes() {
        let one = r#"{"width": 9, "height": 9, "objects": {
            "1": {"name": "cat", "x": 0, "y": 0, "w": 1, "h": 1,
                  "relations": [{"name": "on", "object": "2"}]},
            "2": {"name": "table", "x": 0, "y": 0, "w": 5, "h": 5}}}"#;
        let s = scenes(&format!(r#"{{"a": {one}, "b": {one}}}"#));
        let t = build_tables(&s).unwrap();
        assert_eq!(t.triple("cat", "on", "table"), 2);
        assert_eq!(t.class_count_hist["cat"][&1], 2);
    }

    #[test]
    fn empty_stream_is_an_error() {
        let none: Vec<SceneGraph> = Vec::new();
        assert!(matches!(build_tables(&none), Err(TablesError::NoCorpus)));
    }

    #[test]
    fn wrong_magic_and_version_are_refused() {
        assert!(matches!(
            decode_tables(b"NOTATABLE......."),
            Err(TablesError::BadMagic)
        ));
        let mut bytes = TABLES_MAGIC.to_vec();
        bytes.extend_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_tables(&bytes),
            Err(TablesError::Version { found: 7, .. })
        ));
    }

    #[test]
    fn truncated_container_is_corrupt() {
        let mut bytes = Vec::new();
        let t = LookupTables {
            scenes: 1,
            relation_freq: BTreeMap::from([("on".to_string(), 3)]),
            ..Default::default()
        };
        write_tables(&t, &mut bytes).unwrap();
        assert_eq!(decode_tables(&bytes).unwrap(), t);
        bytes.pop();
        assert!(matches!(decode_tables(&bytes), Err(TablesError::Corrupt(_))));
    }

    #[test]
    fn clusters_are_bidirectional() {
        let c = AttributeClusters::parse(
            "# starter\ncolor: white, teal, brown, gray, black\nmaterial: wooden, metal\n",
        )
        .unwrap();
        assert_eq!(c.cluster_of("teal"), c.cluster_of("white"));
        assert_eq!(c.cluster_of("teal"), Some("color"));
        assert_eq!(c.cluster_of("fluffy"), None);
        assert_eq!(c.siblings("wooden").collect::<Vec<_>>(), vec!["metal"]);
        for (name, members) in &c.members {
            for m in members {
                assert_eq!(c.cluster_of(m), Some(name.as_str()));
            }
        }
    }

    #[test]
    fn attribute_in_two_clusters_is_rejected() {
        let err = AttributeClusters::parse("color: white, red\nstate: white, clean\n").unwrap_err();
        assert!(matches!(err, ClusterError::DuplicateMember { ref attribute, .. } if attribute == "white"));
    }

    #[test]
    fn bundled_clusters_are_valid() {
        let c = AttributeClusters::parse(crate::assets::ATTRIBUTE_CLUSTERS).unwrap();
        assert!(c.len() >= 4);
        assert_eq!(c.cluster_of("teal"), c.cluster_of("white"));
    }
}
