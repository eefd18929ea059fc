//! Published benchmark datasets and their reference statistics.

use crate::error::{Error, Result};
use crate::kg::{DatasetStats, KgFormat};

#[derive(Debug, Clone, Copy)]
pub struct KnownDataset {
    pub name: &'static str,
    pub format: KgFormat,
    pub reference: DatasetStats,
}

const fn stats(entities: usize, relations: usize, train: usize, valid: usize, test: usize) -> DatasetStats {
    DatasetStats {
        entities,
        relations,
        train,
        valid,
        test,
    }
}

pub const KNOWN_DATASETS: [KnownDataset; 5] = [
    KnownDataset {
        name: "WN18RR",
        format: KgFormat::Static,
        reference: stats(40943, 11, 86835, 3034, 3134),
    },
    KnownDataset {
        name: "FB15k-237",
        format: KgFormat::Static,
        reference: stats(14541, 237, 272115, 17535, 20466),
    },
    KnownDataset {
        name: "FB15k-237N",
        format: KgFormat::Static,
        reference: stats(13104, 93, 87282, 1827, 1828),
    },
    KnownDataset {
        name: "ICEWS14",
        format: KgFormat::Temporal,
        reference: stats(6869, 230, 74845, 8514, 7371),
    },
    KnownDataset {
        name: "ICEWS05-15",
        format: KgFormat::Temporal,
        reference: stats(10094, 251, 368868, 46302, 46159),
    },
];

/// Case-insensitive lookup.
pub fn lookup(name: &str) -> Result<&'static KnownDataset> {
    KNOWN_DATASETS
        .iter()
        .find(|d| d.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::UnknownDataset(name.to_owned()))
}

/// Columns where `observed` differs from the reference, as `(column, expected, observed)`.
pub fn compare(reference: &DatasetStats, observed: &DatasetStats) -> Vec<(&'static str, usize, usize)> {
    [
        ("#entity", reference.entities, observed.entities),
        ("#relation", reference.relations, observed.relations),
        ("#train", reference.train, observed.train),
        ("#valid", reference.valid, observed.valid),
        ("#test", reference.test, observed.test),
    ]
    .into_iter()
    .filter(|(_, want, got)| want != got)
    .collect()
}
