//! Triple ingestion: TSV parsing, vocabularies, encoded splits, reciprocal
//! relations, the filtered-evaluation index and the prepared binary cache.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type RawTriple = (String, String, String);

/// Reads `head<TAB>relation<TAB>tail` lines in file order.
pub fn load_raw_triples(path: &Path) -> Result<Vec<RawTriple>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            // blank lines carry no triple
            if line.is_empty() {
                continue;
            }
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                fields: fields.len(),
            });
        }
        out.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ));
    }
    Ok(out)
}

/// Bijective string/id maps for entities and relations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    entity_to_id: HashMap<String, u32>,
    id_to_entity: Vec<String>,
    relation_to_id: HashMap<String, u32>,
    id_to_relation: Vec<String>,
}

fn intern(map: &mut HashMap<String, u32>, names: &mut Vec<String>, name: &str) -> u32 {
    if let Some(&id) = map.get(name) {
        return id;
    }
    let id = names.len() as u32;
    map.insert(name.to_string(), id);
    names.push(name.to_string());
    id
}

impl Vocabulary {
    /// Ids are assigned in order of first appearance, scanning head, relation, tail.
    pub fn build(train_raw: &[RawTriple]) -> Result<Self> {
        if train_raw.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut v = Vocabulary::default();
        for (h, r, t) in train_raw {
            intern(&mut v.entity_to_id, &mut v.id_to_entity, h);
            intern(&mut v.relation_to_id, &mut v.id_to_relation, r);
            intern(&mut v.entity_to_id, &mut v.id_to_entity, t);
        }
        Ok(v)
    }

    /// Rebuilds a vocabulary from its id-ordered name lists.
    pub fn from_names(entities: Vec<String>, relations: Vec<String>) -> Result<Self> {
        let mut v = Vocabulary::default();
        for (kind, names, map) in [
            ("entity", &entities, &mut v.entity_to_id),
            ("relation", &relations, &mut v.relation_to_id),
        ] {
            for (i, n) in names.iter().enumerate() {
                if map.insert(n.clone(), i as u32).is_some() {
                    return Err(Error::Format(format!("duplicate {kind} name {n:?}")));
                }
            }
        }
        v.id_to_entity = entities;
        v.id_to_relation = relations;
        Ok(v)
    }

    pub fn n_entities(&self) -> usize {
        self.id_to_entity.len()
    }

    pub fn n_relations(&self) -> usize {
        self.id_to_relation.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<u32> {
        self.entity_to_id.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<u32> {
        self.relation_to_id.get(name).copied()
    }

    pub fn entity_name(&self, id: u32) -> &str {
        &self.id_to_entity[id as usize]
    }

    /// Relation name; ids at or above `n_relations` name the reciprocal of
    /// `id - n_relations`.
    pub fn relation_name(&self, id: u32) -> String {
        let n = self.id_to_relation.len() as u32;
        if id < n {
            self.id_to_relation[id as usize].clone()
        } else {
            format!("{}^-1", self.id_to_relation[(id - n) as usize])
        }
    }

    pub fn entities(&self) -> &[String] {
        &self.id_to_entity
    }

    pub fn relations(&self) -> &[String] {
        &self.id_to_relation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// Integer-encoded split, stored column-wise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripleSet {
    pub name: String,
    pub heads: Vec<u32>,
    pub relations: Vec<u32>,
    pub tails: Vec<u32>,
}

impl TripleSet {
    pub fn new(name: impl Into<String>) -> Self {
        TripleSet {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn from_triples(name: impl Into<String>, triples: &[Triple]) -> Self {
        let mut s = TripleSet::new(name);
        for t in triples {
            s.push(*t);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn push(&mut self, t: Triple) {
        self.heads.push(t.head);
        self.relations.push(t.relation);
        self.tails.push(t.tail);
    }

    pub fn get(&self, i: usize) -> Triple {
        Triple::new(self.heads[i], self.relations[i], self.tails[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = Triple> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

/// Maps raw strings to ids. Valid and test splits must be closed over the
/// training vocabulary.
pub fn encode_split(name: &str, raw: &[RawTriple], vocab: &Vocabulary) -> Result<TripleSet> {
    let mut out = TripleSet::new(name);
    let ent = |s: &str| {
        vocab.entity_id(s).ok_or_else(|| Error::OutOfVocabulary {
            kind: "entity",
            name: s.to_string(),
        })
    };
    for (h, r, t) in raw {
        let rel = vocab.relation_id(r).ok_or_else(|| Error::OutOfVocabulary {
            kind: "relation",
            name: r.clone(),
        })?;
        out.push(Triple::new(ent(h)?, rel, ent(t)?));
    }
    Ok(out)
}

/// Appends `(t, r + n_relations, h)` for every `(h, r, t)`.
pub fn augment_reciprocal(set: &TripleSet, n_relations: usize) -> Result<TripleSet> {
    let limit = n_relations as u32;
    if let Some(&id) = set.relations.iter().find(|&&r| r >= limit) {
        return Err(Error::AlreadyAugmented { id, limit });
    }
    let mut out = TripleSet::new(set.name.clone());
    out.heads.reserve(2 * set.len());
    out.relations.reserve(2 * set.len());
    out.tails.reserve(2 * set.len());
    for t in set.iter() {
        out.push(t);
    }
    for t in set.iter() {
        out.push(Triple::new(t.tail, t.relation + limit, t.head));
    }
    Ok(out)
}

/// Known true answers per `(entity, relation)` query across all splits.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    answers: HashMap<(u32, u32), Vec<u32>>,
}

impl FilterIndex {
    pub fn build(splits: &[&TripleSet]) -> Self {
        let mut answers: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for split in splits {
            for t in split.iter() {
                answers
                    .entry((t.head, t.relation))
                    .or_default()
                    .push(t.tail);
            }
        }
        for v in answers.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        FilterIndex { answers }
    }

    /// Sorted answer ids; empty for unseen queries.
    pub fn answers(&self, entity: u32, relation: u32) -> &[u32] {
        self.answers
            .get(&(entity, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn contains(&self, entity: u32, relation: u32, answer: u32) -> bool {
        self.answers(entity, relation)
            .binary_search(&answer)
            .is_ok()
    }

    pub fn n_queries(&self) -> usize {
        self.answers.len()
    }

    /// Number of distinct indexed (entity, relation, answer) facts.
    pub fn n_facts(&self) -> usize {
        self.answers.values().map(Vec::len).sum()
    }
}

pub fn build_filter_index(train: &TripleSet, valid: &TripleSet, test: &TripleSet) -> FilterIndex {
    FilterIndex::build(&[train, valid, test])
}

/// Encoded splits as they appear on disk (no reciprocal relations).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: TripleSet,
    pub valid: TripleSet,
    pub test: TripleSet,
}

/// Training-ready data: reciprocal relations added to every split and the
/// filter index built over all of them.
#[derive(Debug, Clone)]
pub struct KgData {
    pub vocab: Vocabulary,
    /// Relation count before augmentation.
    pub n_base_relations: usize,
    pub train: TripleSet,
    pub valid: TripleSet,
    pub test: TripleSet,
    pub filter: FilterIndex,
}

impl KgData {
    pub fn n_entities(&self) -> usize {
        self.vocab.n_entities()
    }

    /// Effective relation count, `2 * n_base_relations`.
    pub fn n_relations(&self) -> usize {
        2 * self.n_base_relations
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetStats {
    pub n_entities: usize,
    pub n_relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Dataset {
    /// Loads `train.txt`, `valid.txt` and `test.txt` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let train_raw = load_raw_triples(&dir.join("train.txt"))?;
        let valid_raw = load_raw_triples(&dir.join("valid.txt"))?;
        let test_raw = load_raw_triples(&dir.join("test.txt"))?;
        let vocab = Vocabulary::build(&train_raw)?;
        Ok(Dataset {
            train: encode_split("train", &train_raw, &vocab)?,
            valid: encode_split("valid", &valid_raw, &vocab)?,
            test: encode_split("test", &test_raw, &vocab)?,
            vocab,
        })
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            n_entities: self.vocab.n_entities(),
            n_relations: self.vocab.n_relations(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }

    pub fn prepare(self) -> Result<KgData> {
        let n_r = self.vocab.n_relations();
        let train = augment_reciprocal(&self.train, n_r)?;
        let valid = augment_reciprocal(&self.valid, n_r)?;
        let test = augment_reciprocal(&self.test, n_r)?;
        let filter = build_filter_index(&train, &valid, &test);
        Ok(KgData {
            vocab: self.vocab,
            n_base_relations: n_r,
            train,
            valid,
            test,
            filter,
        })
    }
}

pub const CACHE_MAGIC: &[u8; 4] = b"HALE";
pub const CACHE_VERSION: u32 = 1;
pub const CACHE_FILE: &str = "triples.bin";
pub const VOCAB_FILE: &str = "vocab.json";
pub const STATS_FILE: &str = "stats.json";

#[derive(Serialize, Deserialize)]
struct VocabSidecar {
    entities: Vec<String>,
    relations: Vec<String>,
}

/// Serializes the split arrays: header (magic, version, n_E, n_R, three
/// split sizes) then heads/relations/tails of train, valid, test as
/// little-endian u32.
pub fn encode_cache(data: &Dataset) -> Vec<u8> {
    let splits = [&data.train, &data.valid, &data.test];
    let total: usize = splits.iter().map(|s| s.len()).sum();
    let mut buf = Vec::with_capacity(28 + 12 * total);
    buf.extend_from_slice(CACHE_MAGIC);
    for v in [
        CACHE_VERSION,
        data.vocab.n_entities() as u32,
        data.vocab.n_relations() as u32,
        data.train.len() as u32,
        data.valid.len() as u32,
        data.test.len() as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for s in splits {
        for col in [&s.heads, &s.relations, &s.tails] {
            for &x in col.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    buf
}

fn read_u32s(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

/// Inverse of [`encode_cache`]; returns `(n_entities, n_relations, splits)`.
pub fn decode_cache(bytes: &[u8]) -> Result<(usize, usize, [TripleSet; 3])> {
    if bytes.len() < 28 || &bytes[..4] != CACHE_MAGIC {
        return Err(Error::Format("not a triple cache (bad magic)".into()));
    }
    let header = read_u32s(&bytes[4..28]);
    if header[0] != CACHE_VERSION {
        return Err(Error::VersionMismatch {
            expected: CACHE_VERSION,
            found: header[0],
        });
    }
    let (n_e, n_r) = (header[1] as usize, header[2] as usize);
    let sizes = [header[3] as usize, header[4] as usize, header[5] as usize];
    let expected = 28 + 12 * sizes.iter().sum::<usize>();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "triple cache has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut off = 28;
    let mut take = |n: usize| {
        let v = read_u32s(&bytes[off..off + 4 * n]);
        off += 4 * n;
        v
    };
    let mut splits = [
        TripleSet::new("train"),
        TripleSet::new("valid"),
        TripleSet::new("test"),
    ];
    for (s, &n) in splits.iter_mut().zip(&sizes) {
        s.heads = take(n);
        s.relations = take(n);
        s.tails = take(n);
        let bad = s.heads.iter().chain(&s.tails).any(|&e| e as usize >= n_e)
            || s.relations.iter().any(|&r| r as usize >= n_r);
        if bad {
            return Err(Error::Format(format!(
                "{} split has ids out of range",
                s.name
            )));
        }
    }
    Ok((n_e, n_r, splits))
}

/// Writes the binary cache, vocabulary sidecar and stats summary.
pub fn write_cache(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    write(CACHE_FILE, &encode_cache(data))?;
    let sidecar = VocabSidecar {
        entities: data.vocab.entities().to_vec(),
        relations: data.vocab.relations().to_vec(),
    };
    write(VOCAB_FILE, &serde_json::to_vec(&sidecar)?)?;
    write(STATS_FILE, &serde_json::to_vec_pretty(&data.stats())?)?;
    Ok(())
}

pub fn read_cache(dir: &Path) -> Result<Dataset> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| Error::io(p, e))
    };
    let (n_e, n_r, [train, valid, test]) = decode_cache(&read(CACHE_FILE)?)?;
    let sidecar: VocabSidecar = serde_json::from_slice(&read(VOCAB_FILE)?)?;
    let vocab = Vocabulary::from_names(sidecar.entities, sidecar.relations)?;
    if vocab.n_entities() != n_e || vocab.n_relations() != n_r {
        return Err(Error::Format(
            "vocabulary sidecar disagrees with triple cache header".into(),
        ));
    }
    Ok(Dataset {
        vocab,
        train,
        valid,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn raw(v: &[(&str, &str, &str)]) -> Vec<RawTriple> {
        v.iter()
            .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
            .collect()
    }

    #[test]
    fn load_handles_empty_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.txt");
        fs::write(&empty, "").unwrap();
        assert!(load_raw_triples(&empty).unwrap().is_empty());

        let bad = dir.path().join("bad.txt");
        let mut f = fs::File::create(&bad).unwrap();
        writeln!(f, "x\ty\tz").unwrap();
        writeln!(f, "a\tb").unwrap();
        match load_raw_triples(&bad) {
            Err(Error::MalformedLine { line, fields, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(fields, 2);
            }
            other => panic!("expected malformed line, got {other:?}"),
        }

        assert!(matches!(
            load_raw_triples(&dir.path().join("missing.txt")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn load_keeps_order_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "b\tr\tc\na\tr\tb\nb\tr\tc\n").unwrap();
        let t = load_raw_triples(&p).unwrap();
        assert_eq!(t, raw(&[("b", "r", "c"), ("a", "r", "b"), ("b", "r", "c")]));
    }

    #[test]
    fn vocabulary_first_appearance() {
        let v = Vocabulary::build(&raw(&[("x", "p", "y"), ("z", "q", "x")])).unwrap();
        assert_eq!(v.entities(), &["x", "y", "z"]);
        assert_eq!(v.relations(), &["p", "q"]);
        assert_eq!(v.entity_id("z"), Some(2));

        let self_loop = Vocabulary::build(&raw(&[("a", "r", "a")])).unwrap();
        assert_eq!((self_loop.n_entities(), self_loop.n_relations()), (1, 1));

        assert!(matches!(
            Vocabulary::build(&[]),
            Err(Error::EmptyVocabulary)
        ));
    }

    #[test]
    fn encode_rejects_unseen_and_round_trips() {
        let train = raw(&[("a", "r", "b"), ("b", "s", "c")]);
        let v = Vocabulary::build(&train).unwrap();
        let enc = encode_split("train", &train, &v).unwrap();
        let decoded: Vec<RawTriple> = enc
            .iter()
            .map(|t| {
                (
                    v.entity_name(t.head).to_string(),
                    v.relation_name(t.relation),
                    v.entity_name(t.tail).to_string(),
                )
            })
            .collect();
        assert_eq!(decoded, train);

        let err = encode_split("valid", &raw(&[("a", "r", "zz")]), &v).unwrap_err();
        assert!(matches!(err, Error::OutOfVocabulary { ref name, .. } if name == "zz"));
        assert!(encode_split("test", &[], &v).unwrap().is_empty());
    }

    #[test]
    fn reciprocal_augmentation() {
        let s = TripleSet::from_triples("t", &[Triple::new(0, 0, 1)]);
        let a = augment_reciprocal(&s, 11).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.get(1), Triple::new(1, 11, 0));
        assert!(augment_reciprocal(&TripleSet::new("e"), 3)
            .unwrap()
            .is_empty());
        assert!(matches!(
            augment_reciprocal(&a, 11),
            Err(Error::AlreadyAugmented { id: 11, limit: 11 })
        ));
    }

    #[test]
    fn filter_index_collects_answers() {
        let s = TripleSet::from_triples("t", &[Triple::new(0, 0, 1), Triple::new(0, 0, 2)]);
        let e = TripleSet::new("e");
        let f = build_filter_index(&s, &e, &e);
        assert_eq!(f.answers(0, 0), &[1, 2]);
        assert!(f.answers(5, 0).is_empty());
        assert!(f.contains(0, 0, 2));
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let train = raw(&[("a", "r", "b"), ("b", "s", "c"), ("c", "r", "a")]);
        let vocab = Vocabulary::build(&train).unwrap();
        let data = Dataset {
            train: encode_split("train", &train, &vocab).unwrap(),
            valid: encode_split("valid", &raw(&[("a", "s", "c")]), &vocab).unwrap(),
            test: encode_split("test", &raw(&[("b", "r", "a")]), &vocab).unwrap(),
            vocab,
        };
        let dir = tempfile::tempdir().unwrap();
        write_cache(dir.path(), &data).unwrap();
        assert_eq!(read_cache(dir.path()).unwrap(), data);

        let mut bytes = encode_cache(&data);
        bytes.pop();
        assert!(decode_cache(&bytes).is_err());
        let mut bytes = encode_cache(&data);
        bytes[4] = 9;
        assert!(matches!(
            decode_cache(&bytes),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }
}
