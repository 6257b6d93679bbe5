mod support;

use std::path::Path;

use half::f16;
use kappatune::rng::Stream;
use kappatune::tensor_io::{
    encode_checkpoint, ingest_raw, load_checkpoint, read_tensor, write_checkpoint, DType, TensorRecord, MAGIC,
};
use kappatune::Error;
use proptest::prelude::*;

fn seq(name: &str, shape: Vec<usize>) -> TensorRecord {
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|i| i as f32).collect();
    TensorRecord::from_f32(name, shape, &v).unwrap()
}

/// Preamble plus the given header and data, bypassing the encoder.
fn raw_file(header: &str, data: &[u8]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(data);
    out
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn two_tensor_view() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ktan");
    write_checkpoint(&[seq("a", vec![2, 2]), seq("b", vec![3])], &p).unwrap();
    let view = load_checkpoint(&p).unwrap();
    assert_eq!(view.names().collect::<Vec<_>>(), ["a", "b"]);
    assert_eq!(view.get("a").unwrap().shape, vec![2, 2]);
    assert_eq!(view.total_bytes(), std::fs::metadata(&p).unwrap().len());
}

#[test]
fn empty_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.ktan");
    write_checkpoint(&[], &p).unwrap();
    let view = load_checkpoint(&p).unwrap();
    assert!(view.is_empty());
    assert_eq!(std::fs::read(&p).unwrap(), raw_file("{}", &[]));
}

#[test]
fn sequential_tensor_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.ktan");
    let t = seq("w", vec![3, 4]);
    write_checkpoint(std::slice::from_ref(&t), &p).unwrap();
    let back = read_tensor(&load_checkpoint(&p).unwrap(), "w").unwrap();
    assert_eq!(back, t);
    assert_eq!(back.values_f32(), (0..12).map(|i| i as f32).collect::<Vec<_>>());
}

#[test]
fn f16_one_promotes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.ktan");
    let t = TensorRecord::from_f16("h", vec![2], &[f16::from_f32(1.0); 2]).unwrap();
    write_checkpoint(&[t], &p).unwrap();
    let back = read_tensor(&load_checkpoint(&p).unwrap(), "h").unwrap();
    assert_eq!(back.dtype(), DType::F16);
    assert_eq!(back.values_f32(), vec![1.0, 1.0]);
    assert_eq!(back.raw_bytes(), &[0x00, 0x3c, 0x00, 0x3c]);
}

#[test]
fn nan_is_reported_with_flat_index() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: Vec<f32> = (0..12).map(|i| i as f32).collect();
    v[7] = f32::NAN;
    // from_f32 does not screen values, so the encoder can write a bad file
    let t = TensorRecord::from_f32("bad", vec![3, 4], &v).unwrap();
    let p = write(dir.path(), "n.ktan", &encode_checkpoint(&[t]).unwrap());
    let view = load_checkpoint(&p).unwrap();
    match read_tensor(&view, "bad") {
        Err(Error::NonFiniteData { name, index }) => assert_eq!((name.as_str(), index), ("bad", 7)),
        other => panic!("{other:?}"),
    }
    let mut v16 = vec![f16::from_f32(0.5); 4];
    v16[2] = f16::INFINITY;
    let t = TensorRecord::from_f16("inf", vec![4], &v16).unwrap();
    let p = write(dir.path(), "i.ktan", &encode_checkpoint(&[t]).unwrap());
    assert!(matches!(
        read_tensor(&load_checkpoint(&p).unwrap(), "inf"),
        Err(Error::NonFiniteData { index: 2, .. })
    ));
}

#[test]
fn missing_name_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ktan");
    write_checkpoint(&[seq("a", vec![1])], &p).unwrap();
    assert!(matches!(read_tensor(&load_checkpoint(&p).unwrap(), "b"), Err(Error::NotFound(n)) if n == "b"));
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let entry = |offset: u64| format!(r#"{{"a":{{"dtype":"f32","nbytes":16,"offset":{offset},"shape":[2,2]}}}}"#);
    let data = [0u8; 16];

    // offset beyond EOF
    let p = write(dir.path(), "eof.ktan", &raw_file(&entry(8), &data));
    assert!(matches!(load_checkpoint(&p), Err(Error::CorruptHeader(_))));
    // the same header with the right offset is fine
    let p = write(dir.path(), "ok.ktan", &raw_file(&entry(0), &data));
    assert_eq!(load_checkpoint(&p).unwrap().len(), 1);

    let mut bad_magic = raw_file(&entry(0), &data);
    bad_magic[0] = b'X';
    let p = write(dir.path(), "magic.ktan", &bad_magic);
    assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));

    let mut bad_version = raw_file(&entry(0), &data);
    bad_version[4] = 2;
    let p = write(dir.path(), "ver.ktan", &bad_version);
    assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));

    let p = write(dir.path(), "short.ktan", b"KTAN");
    assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));

    // header length running past the end of the file
    let mut long_header = raw_file(&entry(0), &data);
    long_header[8..16].copy_from_slice(&10_000u64.to_le_bytes());
    let p = write(dir.path(), "hlen.ktan", &long_header);
    assert!(matches!(load_checkpoint(&p), Err(Error::CorruptHeader(_))));

    let overlap = r#"{"a":{"dtype":"f32","nbytes":8,"offset":0,"shape":[2]},"b":{"dtype":"f32","nbytes":8,"offset":4,"shape":[2]}}"#;
    let p = write(dir.path(), "overlap.ktan", &raw_file(overlap, &data));
    assert!(matches!(load_checkpoint(&p), Err(Error::CorruptHeader(_))));

    let dup = r#"{"a":{"dtype":"f32","nbytes":8,"offset":0,"shape":[2]},"a":{"dtype":"f32","nbytes":8,"offset":8,"shape":[2]}}"#;
    let p = write(dir.path(), "dup.ktan", &raw_file(dup, &data));
    assert!(matches!(load_checkpoint(&p), Err(Error::DuplicateTensor(n)) if n == "a"));

    let nbytes = r#"{"a":{"dtype":"f32","nbytes":12,"offset":0,"shape":[2,2]}}"#;
    let p = write(dir.path(), "nbytes.ktan", &raw_file(nbytes, &data));
    assert!(matches!(load_checkpoint(&p), Err(Error::CorruptHeader(_))));

    let dtype = r#"{"a":{"dtype":"i8","nbytes":4,"offset":0,"shape":[4]}}"#;
    let p = write(dir.path(), "dtype.ktan", &raw_file(dtype, &data));
    assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));

    let p = write(dir.path(), "json.ktan", &raw_file("{not json", &data));
    assert!(matches!(load_checkpoint(&p), Err(Error::CorruptHeader(_))));

    assert!(matches!(load_checkpoint(dir.path().join("absent.ktan")), Err(Error::IoAt { .. })));
}

#[test]
fn canonical_and_deterministic() {
    let a = seq("a", vec![2, 2]);
    let b = seq("b", vec![3]);
    let ab = encode_checkpoint(&[a.clone(), b.clone()]).unwrap();
    let ba = encode_checkpoint(&[b.clone(), a.clone()]).unwrap();
    assert_eq!(ab, ba);
    assert_eq!(ab, encode_checkpoint(&[a.clone(), b]).unwrap());
    assert!(matches!(encode_checkpoint(&[a.clone(), a]), Err(Error::DuplicateTensor(_))));
}

#[test]
fn reads_are_lazy() {
    // a NaN in one tensor does not stop the others from loading, and a
    // tensor's bytes are fetched from disk when it is read, not at load
    let dir = tempfile::tempdir().unwrap();
    let mut records: Vec<TensorRecord> = (0..200).map(|i| seq(&format!("t{i:03}"), vec![4, 4])).collect();
    records[150] = TensorRecord::from_f32("t150", vec![4, 4], &[f32::NAN; 16]).unwrap();
    let p = write(dir.path(), "many.ktan", &encode_checkpoint(&records).unwrap());
    let view = load_checkpoint(&p).unwrap();
    assert_eq!(view.len(), 200);
    assert_eq!(read_tensor(&view, "t003").unwrap(), records[3]);

    let entry = view.get("t004").unwrap().clone();
    let mut bytes = std::fs::read(&p).unwrap();
    let start = (bytes.len() as u64 - view.entries().values().map(|e| e.nbytes).sum::<u64>() + entry.offset) as usize;
    bytes[start..start + 4].copy_from_slice(&42f32.to_le_bytes());
    std::fs::write(&p, &bytes).unwrap();
    assert_eq!(read_tensor(&view, "t004").unwrap().values_f32()[0], 42.0);
}

#[test]
fn fuzz_corpus_of_100_tensors_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Stream::new(99);
    let records: Vec<TensorRecord> = (0..100)
        .map(|i| {
            let rank = 1 + s.index(4);
            let shape: Vec<usize> = (0..rank).map(|_| 1 + s.index(5)).collect();
            let n: usize = shape.iter().product();
            if s.index(2) == 0 {
                let v: Vec<f32> = (0..n).map(|_| f32::from_bits(s.next_u64() as u32 & 0xbf7f_ffff)).collect();
                TensorRecord::from_f32(format!("f32.{i}"), shape, &v).unwrap()
            } else {
                let v: Vec<f16> = (0..n).map(|_| f16::from_bits(s.next_u64() as u16 & 0xbbff)).collect();
                TensorRecord::from_f16(format!("f16.{i}"), shape, &v).unwrap()
            }
        })
        .collect();
    let p = dir.path().join("fuzz.ktan");
    write_checkpoint(&records, &p).unwrap();
    let first = std::fs::read(&p).unwrap();
    let view = load_checkpoint(&p).unwrap();
    let mut back = view.read_all().unwrap();
    let mut expected = records.clone();
    expected.sort_by(|a, b| a.name().cmp(b.name()));
    back.sort_by(|a, b| a.name().cmp(b.name()));
    assert_eq!(back, expected);
    write_checkpoint(&back, &p).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), first);
}

#[test]
fn manifest_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let blob: Vec<u8> = [1.0f32, 2.0, 3.0, 4.0].iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::create_dir(dir.path().join("blobs")).unwrap();
    write(&dir.path().join("blobs"), "w.bin", &blob);
    write(&dir.path().join("blobs"), "short.bin", &blob[..15]);
    let h: Vec<u8> = [f16::from_f32(0.5); 3].iter().flat_map(|v| v.to_le_bytes()).collect();
    write(&dir.path().join("blobs"), "h.bin", &h);

    let manifest = write(
        dir.path(),
        "one.json",
        br#"[{"name":"w","dtype":"f32","shape":[2,2],"file":"blobs/w.bin"}]"#,
    );
    let out = dir.path().join("one.ktan");
    ingest_raw(&manifest, &out).unwrap();
    let view = load_checkpoint(&out).unwrap();
    assert_eq!(view.get("w").unwrap().shape, vec![2, 2]);
    assert_eq!(read_tensor(&view, "w").unwrap().values_f32(), vec![1.0, 2.0, 3.0, 4.0]);

    let manifest = write(
        dir.path(),
        "two.json",
        br#"[{"name":"w","dtype":"f32","shape":[4],"file":"blobs/w.bin"},
            {"name":"h","dtype":"f16","shape":[3],"file":"blobs/h.bin"}]"#,
    );
    let out = dir.path().join("two.ktan");
    ingest_raw(&manifest, &out).unwrap();
    let view = load_checkpoint(&out).unwrap();
    assert_eq!(view.names().collect::<Vec<_>>(), ["h", "w"]);
    assert_eq!(read_tensor(&view, "h").unwrap().values_f32(), vec![0.5; 3]);

    let manifest = write(
        dir.path(),
        "short.json",
        br#"[{"name":"w","dtype":"f32","shape":[2,2],"file":"blobs/short.bin"}]"#,
    );
    let out = dir.path().join("short.ktan");
    assert!(matches!(
        ingest_raw(&manifest, &out),
        Err(Error::SizeMismatch { expected: 16, actual: 15, .. })
    ));
    assert!(!out.exists());

    let manifest = write(
        dir.path(),
        "dtype.json",
        br#"[{"name":"w","dtype":"bf16","shape":[8],"file":"blobs/w.bin"}]"#,
    );
    assert!(matches!(ingest_raw(&manifest, dir.path().join("x.ktan")), Err(Error::Format(_))));
}

fn record_strategy() -> impl Strategy<Value = Vec<TensorRecord>> {
    prop::collection::btree_map(
        "[a-z][a-z0-9_.]{0,8}",
        (prop::collection::vec(1usize..4, 1..4), any::<bool>(), any::<u64>()),
        0..8,
    )
    .prop_map(|m| {
        m.into_iter()
            .map(|(name, (shape, half, seed))| {
                let mut s = Stream::new(seed);
                let n: usize = shape.iter().product();
                if half {
                    let v: Vec<f16> = (0..n).map(|_| f16::from_f64(s.uniform_in(-4.0, 4.0))).collect();
                    TensorRecord::from_f16(name, shape, &v).unwrap()
                } else {
                    let v: Vec<f32> = (0..n).map(|_| s.normal() as f32).collect();
                    TensorRecord::from_f32(name, shape, &v).unwrap()
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(support::prop_config(64))]

    #[test]
    fn prop_round_trip(records in record_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.ktan");
        write_checkpoint(&records, &p).unwrap();
        let view = load_checkpoint(&p).unwrap();
        prop_assert_eq!(view.len(), records.len());
        for r in &records {
            let back = read_tensor(&view, r.name()).unwrap();
            prop_assert_eq!(back.raw_bytes(), r.raw_bytes());
            prop_assert_eq!(&back, r);
        }
    }

    #[test]
    fn prop_encoding_ignores_input_order(records in record_strategy(), seed in any::<u64>()) {
        let mut shuffled = records.clone();
        Stream::new(seed).shuffle(&mut shuffled);
        prop_assert_eq!(encode_checkpoint(&records).unwrap(), encode_checkpoint(&shuffled).unwrap());
    }

    #[test]
    fn prop_offsets_ascend_in_name_order(records in record_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.ktan");
        write_checkpoint(&records, &p).unwrap();
        let view = load_checkpoint(&p).unwrap();
        let offsets: Vec<u64> = view.entries().values().map(|e| e.offset).collect();
        prop_assert!(offsets.windows(2).all(|w| w[0] < w[1]));
    }
}
