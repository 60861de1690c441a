use std::collections::BTreeSet;

use super::{DatasetError, Manifest, Record};

/// Moves every record of the `held_out` subjects into the second manifest.
pub fn split_by_subject<R: Record>(
    manifest: &Manifest<R>,
    held_out: &BTreeSet<String>,
) -> Result<(Manifest<R>, Manifest<R>), DatasetError> {
    let known: BTreeSet<&str> = manifest.subjects().collect();
    if let Some(unknown) = held_out.iter().find(|s| !known.contains(s.as_str())) {
        return Err(DatasetError::UnknownSubject(unknown.clone()));
    }
    let (val, train): (Vec<R>, Vec<R>) =
        manifest.records().iter().cloned().partition(|r| held_out.contains(&r.subject()));
    Ok((manifest.with_records(train), manifest.with_records(val)))
}

/// One leave-one-subject-out fold.
#[derive(Debug, Clone)]
pub struct Fold<R> {
    pub subject: String,
    pub train: Manifest<R>,
    pub test: Manifest<R>,
}

/// One fold per subject, ordered by subject id. Records inside each fold are
/// in canonical (subject, locator) order, so folds do not depend on the
/// line order of the manifest file.
pub fn loso_folds<R: Record>(manifest: &Manifest<R>) -> Result<Vec<Fold<R>>, DatasetError> {
    let n = manifest.subject_count();
    if n < 2 {
        return Err(DatasetError::TooFewSubjects(n));
    }
    let mut canonical: Vec<R> = manifest.records().to_vec();
    canonical.sort_by(|a, b| (a.subject(), a.locator()).cmp(&(b.subject(), b.locator())));
    Ok(manifest
        .subjects()
        .map(|subject| {
            let (test, train): (Vec<R>, Vec<R>) = canonical.iter().cloned().partition(|r| r.subject() == subject);
            Fold {
                subject: subject.to_string(),
                train: manifest.with_records(train),
                test: manifest.with_records(test),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::GazeSample;
    use proptest::prelude::*;

    fn manifest(subjects: usize, per_subject: usize) -> Manifest<GazeSample> {
        let records = (0..subjects)
            .flat_map(|s| {
                (0..per_subject).map(move |i| GazeSample {
                    image: format!("img/{s}_{i}.png").into(),
                    subject: format!("p{s:02}"),
                    pitch: 0.0,
                    yaw: 0.0,
                    face: None,
                })
            })
            .collect();
        Manifest::new("", records)
    }

    #[test]
    fn holds_out_eight_of_eighty() {
        let m = manifest(80, 2);
        let held: BTreeSet<String> = (0..8).map(|s| format!("p{s:02}")).collect();
        let (train, val) = split_by_subject(&m, &held).unwrap();
        assert_eq!(train.subject_count(), 72);
        assert_eq!(val.subject_count(), 8);
        assert_eq!(train.len() + val.len(), m.len());
    }

    #[test]
    fn empty_hold_out_and_unknown_subject() {
        let m = manifest(3, 2);
        let (train, val) = split_by_subject(&m, &BTreeSet::new()).unwrap();
        assert_eq!(train, m);
        assert!(val.is_empty());
        let held: BTreeSet<String> = ["ghost".to_string()].into();
        assert!(matches!(split_by_subject(&m, &held), Err(DatasetError::UnknownSubject(s)) if s == "ghost"));
    }

    #[test]
    fn loso_needs_two_subjects() {
        assert!(matches!(loso_folds(&manifest(1, 4)), Err(DatasetError::TooFewSubjects(1))));
        assert_eq!(loso_folds(&manifest(8, 3)).unwrap().len(), 8);
    }

    #[test]
    fn loso_ignores_line_order() {
        let m = manifest(4, 3);
        let mut reversed = m.records().to_vec();
        reversed.reverse();
        let r = m.with_records(reversed);
        let a = loso_folds(&m).unwrap();
        let b = loso_folds(&r).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.subject, fb.subject);
            assert_eq!(fa.train.records(), fb.train.records());
            assert_eq!(fa.test.records(), fb.test.records());
        }
    }

    proptest! {
        #[test]
        fn split_is_an_exact_partition(subjects in 1usize..12, per in 1usize..5, mask in any::<u16>()) {
            let m = manifest(subjects, per);
            let held: BTreeSet<String> = (0..subjects).filter(|s| mask & (1 << s) != 0).map(|s| format!("p{s:02}")).collect();
            let (train, val) = split_by_subject(&m, &held).unwrap();
            prop_assert_eq!(train.len() + val.len(), m.len());
            let ts: BTreeSet<&str> = train.subjects().collect();
            let vs: BTreeSet<&str> = val.subjects().collect();
            prop_assert!(ts.is_disjoint(&vs));
            prop_assert_eq!(vs.len(), held.len());
        }
    }
}
