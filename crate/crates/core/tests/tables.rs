use std::collections::BTreeMap;

use hnc_core::corpus_stats::{build_tables, decode_tables, load_tables, save_tables, write_tables, TablesError};
use hnc_core::scene_graph::{parse_scene_graphs, SceneGraph};
use hnc_core::synth::{synthesize, SynthConfig};
use serde_json::Value;

const FIXTURE: &str = include_str!("fixtures/synthetic_scenes.json");

fn fixture_scenes() -> Vec<SceneGraph> {
    parse_scene_graphs(FIXTURE.as_bytes()).unwrap().scenes.into_values().collect()
}

#[test]
fn fixture_matches_synthesizer() {
    let expected = synthesize(&SynthConfig::default());
    assert_eq!(fixture_scenes(), expected);
}

fn bytes(scenes: &[&SceneGraph]) -> Vec<u8> {
    let tables = build_tables(scenes.iter().copied()).unwrap();
    let mut out = Vec::new();
    write_tables(&tables, &mut out).unwrap();
    out
}

#[test]
fn table_bytes_do_not_depend_on_scene_order() {
    let scenes = fixture_scenes();
    let forward: Vec<&SceneGraph> = scenes.iter().collect();
    let backward: Vec<&SceneGraph> = scenes.iter().rev().collect();
    assert_eq!(bytes(&forward), bytes(&backward));
}

type PairCounts = BTreeMap<(String, String), u64>;
type TripleCounts = BTreeMap<(String, String, String), u64>;

/// Counts straight from the JSON document, without the library parser.
fn raw_counts() -> (PairCounts, TripleCounts) {
    let doc: Value = serde_json::from_str(FIXTURE).unwrap();
    let mut attr_obj = BTreeMap::new();
    let mut triples = BTreeMap::new();
    for scene in doc.as_object().unwrap().values() {
        let objects = scene["objects"].as_object().unwrap();
        for object in objects.values() {
            let class = object["name"].as_str().unwrap().to_string();
            for a in object["attributes"].as_array().into_iter().flatten() {
                *attr_obj.entry((a.as_str().unwrap().to_string(), class.clone())).or_insert(0) += 1;
            }
            for r in object["relations"].as_array().into_iter().flatten() {
                let target = &objects[r["object"].as_str().unwrap()];
                let key = (
                    class.clone(),
                    r["name"].as_str().unwrap().to_string(),
                    target["name"].as_str().unwrap().to_string(),
                );
                *triples.entry(key).or_insert(0) += 1;
            }
        }
    }
    (attr_obj, triples)
}

#[test]
fn counts_match_a_direct_json_scan() {
    let tables = build_tables(&fixture_scenes()).unwrap();
    let (attr_obj, triples) = raw_counts();
    assert_eq!(tables.attr_obj, attr_obj);
    assert_eq!(tables.triples, triples);
    assert_eq!(tables.scenes, 60);
}

#[test]
fn saved_tables_round_trip() {
    let tables = build_tables(&fixture_scenes()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tables.bin");
    save_tables(&tables, &path).unwrap();
    assert_eq!(load_tables(&path).unwrap(), tables);
}

#[test]
fn damaged_files_are_rejected() {
    let tables = build_tables(&fixture_scenes()).unwrap();
    let mut good = Vec::new();
    write_tables(&tables, &mut good).unwrap();

    let mut magic = good.clone();
    magic[0] ^= 0xff;
    assert!(matches!(decode_tables(&magic), Err(TablesError::BadMagic)));

    let mut version = good.clone();
    version[8..12].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(decode_tables(&version), Err(TablesError::Version { found: 99, .. })));

    assert!(decode_tables(&good[..good.len() - 3]).is_err());
    let mut trailing = good.clone();
    trailing.push(0);
    assert!(decode_tables(&trailing).is_err());
}
