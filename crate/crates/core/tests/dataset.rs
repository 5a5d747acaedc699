use std::fs;

use microdesign::dataset::*;
use microdesign::microgen::GenConfig;
use microdesign::oracle::effective_conductivity;
use microdesign::{Error, Task};

fn bytes(dir: &std::path::Path, f: &str) -> Vec<u8> {
    fs::read(dir.join(f)).unwrap()
}

#[test]
fn generation_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        Dataset::generate(&GenConfig::new(10, 16, 7)).unwrap().write(d.path()).unwrap();
    }
    assert_eq!(bytes(a.path(), "micro.u8"), bytes(b.path(), "micro.u8"));
    assert_eq!(bytes(a.path(), "micro.u8").len(), 10 * 256);
    assert_eq!(bytes(a.path(), "meta.json"), bytes(b.path(), "meta.json"));
}

#[test]
fn labeled_dataset_round_trips_byte_identically() {
    let mut d = Dataset::generate(&GenConfig::new(4, 8, 1)).unwrap();
    d.label(16, &[Task::Property, Task::Field]).unwrap();
    let a = tempfile::tempdir().unwrap();
    d.write(a.path()).unwrap();
    let back = Dataset::read(a.path()).unwrap();
    assert_eq!(back, d);
    let b = tempfile::tempdir().unwrap();
    back.write(b.path()).unwrap();
    for f in ["meta.json", "micro.u8", "fields_property.f32", "fields_field.f32", "kappa.f32"] {
        assert_eq!(bytes(a.path(), f), bytes(b.path(), f), "{f}");
    }
    assert_eq!(bytes(a.path(), "fields_property.f32").len(), 4 * 4 * 6 * 256);
}

#[test]
fn kappa_file_matches_fresh_oracle_calls() {
    let mut d = Dataset::generate(&GenConfig::new(5, 16, 2)).unwrap();
    d.label(32, &[Task::Property]).unwrap();
    let first = d.kappa.clone();
    d.label(32, &[Task::Property]).unwrap();
    assert_eq!(d.kappa, first);
    for (i, m) in d.micro.iter().enumerate() {
        let e = effective_conductivity(m, 32).unwrap();
        assert_eq!(d.kappa[i], [e.kappa_h as f32, e.kappa_v as f32]);
    }
}

#[test]
fn label_preconditions() {
    let mut d = Dataset::generate(&GenConfig::new(2, 16, 3)).unwrap();
    assert!(matches!(d.label(63, &[Task::Property]), Err(Error::InvalidArgument(_))));
    assert!(d.label(32, &[]).is_err());
    assert!(d.task_fields(Task::Field).is_err());
    d.label(16, &[Task::Field, Task::Field]).unwrap();
    assert_eq!(d.meta.labels.as_ref().unwrap().tasks, vec![Task::Field]);
    assert_eq!(d.sample_fields(Task::Field, 1).unwrap().len(), 256);
    assert!(d.sample_fields(Task::Field, 2).is_err());
}

#[test]
fn subset_keeps_samples_and_labels_aligned() {
    let mut d = Dataset::generate(&GenConfig::new(4, 8, 4)).unwrap();
    d.label(8, &[Task::Property]).unwrap();
    let s = d.subset(&[3, 1]).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s.micro[0], d.micro[3]);
    assert_eq!(s.kappa(1).unwrap(), d.kappa(1).unwrap());
    assert_eq!(s.sample_fields(Task::Property, 0).unwrap(), d.sample_fields(Task::Property, 3).unwrap());
    assert_eq!(s.meta.phis, vec![d.meta.phis[3], d.meta.phis[1]]);
    assert!(d.subset(&[4]).is_err());
}

#[test]
fn malformed_directories_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Dataset::read(dir.path()), Err(Error::Format { .. })));
    Dataset::generate(&GenConfig::new(2, 8, 5)).unwrap().write(dir.path()).unwrap();
    let micro = dir.path().join("micro.u8");
    let mut b = fs::read(&micro).unwrap();
    b.pop();
    fs::write(&micro, &b).unwrap();
    assert!(matches!(Dataset::read(dir.path()), Err(Error::Format { .. })));
    b.push(2);
    fs::write(&micro, &b).unwrap();
    assert!(matches!(Dataset::read(dir.path()), Err(Error::Format { .. })));
}
