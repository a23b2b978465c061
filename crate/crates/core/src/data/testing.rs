//! Small hand-built fixtures for unit tests.

use super::dataset::MultilevelDataset;
use super::table::{Column, Table};

/// Schools A (3 students) and B (1 student).
pub(crate) fn two_school_fixture() -> MultilevelDataset {
    let parent = Table::new(
        "school",
        vec!["B".into(), "A".into()],
        vec![
            Column::from_labels("locale", &["rural", "city"]),
            Column::numeric("climate", vec![2.0, 1.0]),
        ],
    );
    let child = Table::new(
        "student",
        vec!["s1".into(), "s2".into(), "s3".into(), "s4".into()],
        vec![
            Column::numeric("ses", vec![1.0, 2.0, 7.0, 3.0]),
            Column::from_labels("female", &["y", "n", "y", "n"]),
        ],
    );
    MultilevelDataset::from_tables(
        parent,
        "school_id",
        child,
        "student_id",
        "school_id",
        vec!["A".into(), "A".into(), "B".into(), "A".into()],
    )
    .unwrap()
}
