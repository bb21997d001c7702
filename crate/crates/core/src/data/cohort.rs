//! Binary-labelled cohorts and their train/validation/test split.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Label, Manifest, View};
use super::{DataError, Result};

/// Fractions used for the random train/validation/test partition.
pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.64, 0.16, 0.20];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainPolicy {
    /// Drop uncertain and unmentioned records.
    #[default]
    Exclude,
    /// Uncertain and unmentioned become negative.
    AsNegative,
    /// Uncertain becomes positive, unmentioned negative.
    AsPositive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewFilter {
    #[default]
    FrontalOnly,
    All,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    #[default]
    PerImage,
    PerPatient,
}

macro_rules! str_enum {
    ($ty:ident { $($var:ident = $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$var => $s),+ }
            }
        }
        impl FromStr for $ty {
            type Err = DataError;
            fn from_str(s: &str) -> Result<Self> {
                match s { $($s => Ok($ty::$var),)+ other => Err(DataError::Parse(format!(
                    concat!("unknown ", stringify!($ty), " {:?}"), other))) }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

str_enum!(UncertainPolicy { Exclude = "exclude", AsNegative = "as_negative", AsPositive = "as_positive" });
str_enum!(ViewFilter { FrontalOnly = "frontal_only", All = "all" });
str_enum!(SplitUnit { PerImage = "per_image", PerPatient = "per_patient" });
str_enum!(Split { Train = "train", Val = "val", Test = "test" });

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

/// A record reduced to a binary label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledRecord {
    pub path: String,
    pub patient_id: Option<String>,
    pub positive: bool,
}

/// Filters by view, then resolves non-binary labels per `policy`.
pub fn extract_cohort(
    manifest: &Manifest,
    pathology: &str,
    policy: UncertainPolicy,
    view_filter: ViewFilter,
) -> Result<Vec<LabeledRecord>> {
    let col = manifest.pathology_index(pathology).ok_or_else(|| DataError::UnknownPathology(pathology.to_string()))?;
    let out: Vec<LabeledRecord> = manifest
        .records
        .iter()
        .filter(|r| view_filter == ViewFilter::All || r.view == View::Frontal)
        .filter_map(|r| {
            let positive = match (r.labels[col], policy) {
                (Label::Positive, _) => true,
                (Label::Negative, _) => false,
                (Label::Uncertain | Label::Unmentioned, UncertainPolicy::Exclude) => return None,
                (Label::Uncertain, UncertainPolicy::AsPositive) => true,
                (Label::Uncertain, UncertainPolicy::AsNegative) | (Label::Unmentioned, _) => false,
            };
            Some(LabeledRecord { path: r.path.clone(), patient_id: r.patient_id.clone(), positive })
        })
        .collect();
    if out.is_empty() {
        return Err(DataError::EmptyCohort(pathology.to_string()));
    }
    Ok(out)
}

/// Published full-dataset cohort sizes, for side-by-side reporting only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ReferenceCohort {
    pub pathology: &'static str,
    /// `(positive, negative)` in training plus validation.
    pub train_val: (usize, usize),
    /// `(positive, negative)` in testing.
    pub test: (usize, usize),
    /// `(positive, negative)` totals as stated in the accompanying text,
    /// which need not equal the table sums.
    pub stated_total: (usize, usize),
}

pub const REFERENCE_COHORTS: [ReferenceCohort; 2] = [
    ReferenceCohort { pathology: "Lung Lesion", train_val: (935, 7430), test: (335, 1756), stated_total: (1270, 9189) },
    ReferenceCohort {
        pathology: "Cardiomegaly",
        train_val: (8552, 21941),
        test: (2564, 5059),
        stated_total: (11116, 27000),
    },
];

pub fn reference_cohort(pathology: &str) -> Option<&'static ReferenceCohort> {
    REFERENCE_COHORTS.iter().find(|r| r.pathology == pathology)
}

impl ReferenceCohort {
    /// `(positive, negative)` summed over the table rows.
    pub fn table_total(&self) -> (usize, usize) {
        (self.train_val.0 + self.test.0, self.train_val.1 + self.test.1)
    }
}

/// Unit counts per split: `⌊r·n⌋` each, then the remainder one by one to the
/// largest fractional parts (ties go to the earlier split).
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    // stable sort keeps split order on equal fractions
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).expect("finite ratios")
    });
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CohortRecord {
    pub path: String,
    pub positive: bool,
    pub split: Split,
}

/// A split, binary-labelled dataset and the settings that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub pathology: String,
    pub seed: u64,
    pub unit: SplitUnit,
    pub records: Vec<CohortRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
}

impl Cohort {
    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &CohortRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn counts(&self, split: Split) -> ClassCounts {
        let mut c = ClassCounts::default();
        for r in self.records_in(split) {
            if r.positive {
                c.positive += 1
            } else {
                c.negative += 1
            }
        }
        c
    }

    /// Writes the `path,label,split` cohort CSV.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["path", "label", "split"])?;
        for r in &self.records {
            w.write_record([r.path.as_str(), if r.positive { "1" } else { "0" }, r.split.as_str()])?;
        }
        w.flush().map_err(|e| DataError::Io { path: "<cohort>".into(), source: e })?;
        Ok(())
    }

    /// Reads a cohort CSV. The pathology and seed are not stored in the file
    /// and must be supplied by the caller.
    pub fn read_csv(reader: impl Read, pathology: &str, seed: u64, unit: SplitUnit) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["path", "label", "split"] {
            return Err(DataError::MissingColumn("path,label,split".into()));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |column: &str| DataError::BadValue {
                row: i + 1,
                column: column.to_string(),
                value: row
                    .get(["path", "label", "split"].iter().position(|c| *c == column).unwrap_or(0))
                    .unwrap_or_default()
                    .to_string(),
            };
            let positive = match row[1].trim() {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label")),
            };
            let split = row[2].trim().parse().map_err(|_| bad("split"))?;
            records.push(CohortRecord { path: row[0].to_string(), positive, split });
        }
        Ok(Cohort { pathology: pathology.to_string(), seed, unit, records })
    }
}

/// Seeded shuffle of split units followed by contiguous assignment.
///
/// Records keep their input order in the result; only the split tag is set.
pub fn split(
    records: &[LabeledRecord],
    ratios: [f64; 3],
    seed: u64,
    unit: SplitUnit,
    pathology: &str,
) -> Result<Cohort> {
    if ratios.iter().any(|r| r.is_nan() || *r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios(ratios));
    }
    // unit key → record indices, in first-appearance order
    let mut keys: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = match unit {
            SplitUnit::PerImage => r.path.as_str(),
            SplitUnit::PerPatient => r.patient_id.as_deref().unwrap_or(r.path.as_str()),
        };
        let slot = members.entry(key).or_default();
        if slot.is_empty() {
            keys.push(key);
        }
        slot.push(i);
    }
    if unit == SplitUnit::PerImage && keys.len() != records.len() {
        return Err(DataError::Parse("duplicate image paths in cohort".into()));
    }
    if keys.len() < 3 {
        return Err(DataError::TooFewUnits { units: keys.len(), splits: 3 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    let sizes = split_sizes(keys.len(), ratios);

    let mut tags = vec![Split::Train; records.len()];
    let mut start = 0;
    for (split, size) in Split::ALL.into_iter().zip(sizes) {
        for key in &keys[start..start + size] {
            for &i in &members[key] {
                tags[i] = split;
            }
        }
        start += size;
    }
    Ok(Cohort {
        pathology: pathology.to_string(),
        seed,
        unit,
        records: records
            .iter()
            .zip(tags)
            .map(|(r, split)| CohortRecord { path: r.path.clone(), positive: r.positive, split })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::parse_manifest;
    use proptest::prelude::*;

    fn records(n: usize) -> Vec<LabeledRecord> {
        (0..n)
            .map(|i| LabeledRecord {
                path: format!("train/patient{:05}/study1/view{}_frontal.png", i / 2, i % 2 + 1),
                patient_id: Some(format!("patient{:05}", i / 2)),
                positive: i % 7 == 0,
            })
            .collect()
    }

    #[test]
    fn reference_tables_keep_both_totals() {
        let nodule = reference_cohort("Lung Lesion").unwrap();
        assert_eq!(nodule.table_total(), (1270, 9186));
        assert_eq!(nodule.stated_total, (1270, 9189));
        let cardio = reference_cohort("Cardiomegaly").unwrap();
        assert_eq!(cardio.table_total(), cardio.stated_total);
    }

    #[test]
    fn default_ratios_on_100() {
        assert_eq!(split_sizes(100, DEFAULT_SPLIT_RATIOS), [64, 16, 20]);
        assert_eq!(split_sizes(1250, DEFAULT_SPLIT_RATIOS), [800, 200, 250]);
        // 0.92/0.48/0.6 fractional parts → train then test get the extras
        assert_eq!(split_sizes(3, DEFAULT_SPLIT_RATIOS), [2, 0, 1]);
    }

    #[test]
    fn split_is_seeded() {
        let recs = records(100);
        let a = split(&recs, DEFAULT_SPLIT_RATIOS, 5, SplitUnit::PerImage, "x").unwrap();
        let b = split(&recs, DEFAULT_SPLIT_RATIOS, 5, SplitUnit::PerImage, "x").unwrap();
        let c = split(&recs, DEFAULT_SPLIT_RATIOS, 6, SplitUnit::PerImage, "x").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let n: Vec<usize> = Split::ALL.iter().map(|&s| a.records_in(s).count()).collect();
        assert_eq!(n, [64, 16, 20]);
    }

    #[test]
    fn per_patient_keeps_patients_together() {
        let recs = records(40);
        let c = split(&recs, DEFAULT_SPLIT_RATIOS, 1, SplitUnit::PerPatient, "x").unwrap();
        for pair in c.records.chunks(2) {
            assert_eq!(pair[0].split, pair[1].split);
        }
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split(&records(2), DEFAULT_SPLIT_RATIOS, 0, SplitUnit::PerImage, "x"),
            Err(DataError::TooFewUnits { units: 2, .. })
        ));
        assert!(split(&records(10), [0.5, 0.5, 0.1], 0, SplitUnit::PerImage, "x").is_err());
    }

    #[test]
    fn extraction_policies() {
        let csv = "\
Path,Frontal/Lateral,AP/PA,Lung Lesion
a/patient1/v.jpg,Frontal,AP,1.0
a/patient2/v.jpg,Lateral,,1.0
a/patient3/v.jpg,Frontal,PA,-1.0
a/patient4/v.jpg,Frontal,PA,
a/patient5/v.jpg,Frontal,PA,0.0
";
        let m = parse_manifest(csv.as_bytes()).unwrap();
        let ex = extract_cohort(&m, "Lung Lesion", UncertainPolicy::Exclude, ViewFilter::FrontalOnly).unwrap();
        assert_eq!(ex.iter().map(|r| r.positive).collect::<Vec<_>>(), [true, false]);
        let all = extract_cohort(&m, "Lung Lesion", UncertainPolicy::Exclude, ViewFilter::All).unwrap();
        assert_eq!(all.len(), 3);
        let neg = extract_cohort(&m, "Lung Lesion", UncertainPolicy::AsNegative, ViewFilter::FrontalOnly).unwrap();
        assert_eq!(neg.iter().map(|r| r.positive).collect::<Vec<_>>(), [true, false, false, false]);
        let pos = extract_cohort(&m, "Lung Lesion", UncertainPolicy::AsPositive, ViewFilter::FrontalOnly).unwrap();
        assert_eq!(pos.iter().map(|r| r.positive).collect::<Vec<_>>(), [true, true, false, false]);
        assert!(matches!(
            extract_cohort(&m, "Edema", UncertainPolicy::Exclude, ViewFilter::All),
            Err(DataError::UnknownPathology(_))
        ));
        let only_lateral = "Path,Frontal/Lateral,AP/PA,Lung Lesion\nb/patient9/v.jpg,Lateral,,1.0\n";
        let m = parse_manifest(only_lateral.as_bytes()).unwrap();
        assert!(matches!(
            extract_cohort(&m, "Lung Lesion", UncertainPolicy::Exclude, ViewFilter::FrontalOnly),
            Err(DataError::EmptyCohort(_))
        ));
    }

    #[test]
    fn cohort_csv_round_trip() {
        let c = split(&records(30), DEFAULT_SPLIT_RATIOS, 2, SplitUnit::PerImage, "Lung Lesion").unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"path,label,split\n"));
        assert_eq!(Cohort::read_csv(buf.as_slice(), "Lung Lesion", 2, SplitUnit::PerImage).unwrap(), c);
    }

    proptest! {
        #[test]
        fn split_partitions_units(n in 3usize..400, seed in any::<u64>(), per_patient in any::<bool>()) {
            let recs = records(n);
            let unit = if per_patient { SplitUnit::PerPatient } else { SplitUnit::PerImage };
            let units = if per_patient { n.div_ceil(2) } else { n };
            prop_assume!(units >= 3);
            let c = split(&recs, DEFAULT_SPLIT_RATIOS, seed, unit, "x").unwrap();
            prop_assert_eq!(c.records.len(), n);
            let sizes = split_sizes(units, DEFAULT_SPLIT_RATIOS);
            prop_assert_eq!(sizes.iter().sum::<usize>(), units);
            for (s, r) in sizes.iter().zip(DEFAULT_SPLIT_RATIOS) {
                prop_assert!((*s as f64 - r * units as f64).abs() < 1.0);
            }
            if per_patient {
                let mut seen: HashMap<&str, Split> = HashMap::new();
                for (rec, tagged) in recs.iter().zip(&c.records) {
                    let pid = rec.patient_id.as_deref().unwrap();
                    prop_assert_eq!(*seen.entry(pid).or_insert(tagged.split), tagged.split);
                }
            } else {
                for (split, size) in Split::ALL.iter().zip(sizes) {
                    prop_assert_eq!(c.records_in(*split).count(), size);
                }
            }
        }

        #[test]
        fn exclude_policy_only_shrinks(labels in proptest::collection::vec(0u8..4, 1..60)) {
            let mut csv = String::from("Path,Frontal/Lateral,AP/PA,Lung Lesion\n");
            for (i, l) in labels.iter().enumerate() {
                let cell = ["1.0", "0.0", "-1.0", ""][*l as usize];
                csv.push_str(&format!("p/patient{i}/v.jpg,Frontal,AP,{cell}\n"));
            }
            let m = parse_manifest(csv.as_bytes()).unwrap();
            match extract_cohort(&m, "Lung Lesion", UncertainPolicy::Exclude, ViewFilter::FrontalOnly) {
                Ok(out) => {
                    prop_assert!(out.len() <= labels.len());
                    prop_assert_eq!(out.len(), labels.iter().filter(|&&l| l < 2).count());
                }
                Err(DataError::EmptyCohort(_)) => prop_assert!(labels.iter().all(|&l| l >= 2)),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
