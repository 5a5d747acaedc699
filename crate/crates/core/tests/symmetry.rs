use std::collections::HashSet;

use microdesign::microgen::{generate_dataset, GenConfig, Microstructure};
use microdesign::oracle::label_dataset;
use microdesign::symmetry::Symmetry;
use microdesign::Task;

#[test]
fn groups_have_the_expected_elements() {
    let p: HashSet<_> = Symmetry::group(Task::Property).into_iter().collect();
    assert_eq!(p.len(), 8);
    assert_eq!(Symmetry::group(Task::Field), vec![Symmetry::IDENTITY, Symmetry { flip_y: true, ..Symmetry::IDENTITY }]);
}

#[test]
fn source_cells_are_permutations() {
    for s in Symmetry::group(Task::Property) {
        let mut seen: Vec<usize> = (0..25).map(|c| s.source_cell(5, c)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..25).collect::<Vec<_>>(), "{s:?}");
    }
    let t = Symmetry {
        transpose: true,
        ..Symmetry::IDENTITY
    };
    // Row 0, column 1 of the output reads row 1, column 0.
    assert_eq!(t.source_cell(3, 1), 3);
}

#[test]
fn transformed_labels_match_the_oracle_on_transformed_microstructures() {
    let (micro, _) = generate_dataset(&GenConfig::new(2, 8, 31)).unwrap();
    let grid = 16;
    for task in [Task::Property, Task::Field] {
        let base = label_dataset(&micro, grid, task).unwrap();
        for s in Symmetry::group(task) {
            let moved: Vec<Microstructure> = micro.iter().map(|m| s.apply_micro(m).unwrap()).collect();
            let direct = label_dataset(&moved, grid, task).unwrap();
            for (b, d) in base.iter().zip(&direct) {
                let f32s: Vec<f32> = b.fields.iter().map(|&v| v as f32).collect();
                let mapped = s.apply_labels(task, grid, &f32s);
                let worst = mapped.iter().zip(&d.fields).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                // f32 storage plus the solver tolerance.
                assert!(worst < 1e-5, "{task} {s:?}: {worst:e}");
            }
        }
    }
}

#[test]
fn transpose_swaps_effective_conductivities() {
    let (micro, _) = generate_dataset(&GenConfig::new(1, 8, 32)).unwrap();
    let t = Symmetry {
        transpose: true,
        ..Symmetry::IDENTITY
    };
    let a = &label_dataset(&micro, 16, Task::Property).unwrap()[0].kappa;
    let b = &label_dataset(&[t.apply_micro(&micro[0]).unwrap()], 16, Task::Property).unwrap()[0].kappa;
    assert!((a.kappa_h - b.kappa_v).abs() < 1e-6 && (a.kappa_v - b.kappa_h).abs() < 1e-6);
}
