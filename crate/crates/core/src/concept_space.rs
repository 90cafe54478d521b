//! Cosine top-m concept extraction and Representative Concept Set (RCS)
//! construction.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::embstore::{self, ConceptSpace, EmbeddingMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_TOP_M: usize = 10;

pub const RCS_NAMES_FILE: &str = "concepts.txt";
pub const RCS_EMBEDDINGS_FILE: &str = "concepts.ebin";
pub const RCS_META_FILE: &str = "rcs.meta";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredConcept {
    pub concept: usize,
    pub score: f64,
}

/// Order used for concept rankings: score descending, then index ascending.
fn rank_order(a: &ScoredConcept, b: &ScoredConcept) -> Ordering {
    b.score.total_cmp(&a.score).then(a.concept.cmp(&b.concept))
}

/// The top concepts of one image, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptAssignment {
    image: usize,
    concepts: Vec<ScoredConcept>,
}

impl ConceptAssignment {
    pub fn new(image: usize, concepts: Vec<ScoredConcept>) -> Result<Self> {
        for c in &concepts {
            if !(-1.0..=1.0).contains(&c.score) {
                return Err(Error::InvalidData(format!(
                    "concept {} has similarity {} outside [-1, 1]",
                    c.concept, c.score
                )));
            }
        }
        for pair in concepts.windows(2) {
            if rank_order(&pair[0], &pair[1]) != Ordering::Less {
                return Err(Error::InvalidData(format!(
                    "concepts {} and {} are not in (score desc, index asc) order",
                    pair[0].concept, pair[1].concept
                )));
            }
        }
        let mut seen: Vec<usize> = concepts.iter().map(|c| c.concept).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidData("duplicate concept in one assignment".into()));
        }
        Ok(Self { image, concepts })
    }

    /// Assignment with the given concepts, all scored 1.0. Useful for
    /// fixtures where only concept identity matters.
    pub fn from_indices(image: usize, indices: &[usize]) -> Result<Self> {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        Self::new(
            image,
            sorted
                .into_iter()
                .map(|concept| ScoredConcept { concept, score: 1.0 })
                .collect(),
        )
    }

    pub fn image(&self) -> usize {
        self.image
    }

    pub fn concepts(&self) -> &[ScoredConcept] {
        &self.concepts
    }

    pub fn indices(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.concepts.iter().map(|c| c.concept)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

/// Concept matrix with cached row norms, for repeated cosine queries.
#[derive(Debug, Clone)]
pub struct ConceptMatcher<'a> {
    concepts: &'a EmbeddingMatrix,
    norms: Vec<f64>,
}

impl<'a> ConceptMatcher<'a> {
    pub fn new(concepts: &'a EmbeddingMatrix) -> Result<Self> {
        let norms: Vec<f64> = concepts.iter_rows().map(norm).collect();
        if let Some(row) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::DegenerateVector { what: "concept", row });
        }
        Ok(Self { concepts, norms })
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    /// Cosine similarity of `image` (row `row` of its batch) to every concept.
    pub fn similarities(&self, image: &[f32], row: usize) -> Result<Vec<f64>> {
        if image.len() != self.concepts.cols() {
            return Err(Error::Shape(format!(
                "image has dimension {}, concepts have {}",
                image.len(),
                self.concepts.cols()
            )));
        }
        let image_norm = norm(image);
        if image_norm == 0.0 {
            return Err(Error::DegenerateVector { what: "image", row });
        }
        Ok(self
            .concepts
            .iter_rows()
            .zip(&self.norms)
            .map(|(c, &cn)| (dot(image, c) / (image_norm * cn)).clamp(-1.0, 1.0))
            .collect())
    }

    pub fn top_m(&self, image_index: usize, image: &[f32], m: usize) -> Result<ConceptAssignment> {
        if m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        let sims = self.similarities(image, image_index)?;
        let mut scored: Vec<ScoredConcept> = sims
            .into_iter()
            .enumerate()
            .map(|(concept, score)| ScoredConcept { concept, score })
            .collect();
        if m < scored.len() {
            scored.select_nth_unstable_by(m - 1, rank_order);
            scored.truncate(m);
        }
        scored.sort_unstable_by(rank_order);
        Ok(ConceptAssignment {
            image: image_index,
            concepts: scored,
        })
    }

    /// Top-m concepts for every row of `images`. Rows are processed in
    /// parallel; the result is identical to a serial pass.
    pub fn assign_all(&self, images: &EmbeddingMatrix, m: usize) -> Result<Vec<ConceptAssignment>> {
        let results: Vec<Result<ConceptAssignment>> = (0..images.rows())
            .into_par_iter()
            .map(|i| self.top_m(i, images.row(i), m))
            .collect();
        results.into_iter().collect()
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of one vector against every concept row.
pub fn cosine_similarity_row(image: &[f32], concepts: &EmbeddingMatrix) -> Result<Vec<f64>> {
    ConceptMatcher::new(concepts)?.similarities(image, 0)
}

/// The `min(m, k)` most similar concepts, ties broken by lower index.
pub fn top_m(image: &[f32], concepts: &ConceptSpace, m: usize) -> Result<ConceptAssignment> {
    ConceptMatcher::new(concepts.embeddings())?.top_m(0, image, m)
}

/// Top-m assignments of every row against a concept space.
pub fn assign_concepts(images: &EmbeddingMatrix, concepts: &ConceptSpace, m: usize) -> Result<Vec<ConceptAssignment>> {
    ConceptMatcher::new(concepts.embeddings())?.assign_all(images, m)
}

/// Representative Concept Set: the knowledge-base concepts that appear in
/// at least one training image's top-m, kept in knowledge-base order.
#[derive(Debug, Clone, PartialEq)]
pub struct Rcs {
    space: ConceptSpace,
    knb_indices: Vec<usize>,
    m: usize,
    source_size: usize,
}

impl Rcs {
    pub fn space(&self) -> &ConceptSpace {
        &self.space
    }

    /// Original knowledge-base index of each RCS concept.
    pub fn knb_indices(&self) -> &[usize] {
        &self.knb_indices
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }
}

pub fn build_rcs(train_shared: &EmbeddingMatrix, knb: &ConceptSpace, m: usize) -> Result<Rcs> {
    if train_shared.rows() == 0 {
        return Err(Error::Config("RCS construction needs at least one training embedding".into()));
    }
    if knb.is_empty() {
        return Err(Error::Config("knowledge base is empty".into()));
    }
    let assignments = assign_concepts(train_shared, knb, m)?;
    let mut used = vec![false; knb.len()];
    for a in &assignments {
        for c in a.indices() {
            used[c] = true;
        }
    }
    let knb_indices: Vec<usize> = (0..knb.len()).filter(|&i| used[i]).collect();
    Ok(Rcs {
        space: knb.subset(&knb_indices)?,
        knb_indices,
        m,
        source_size: train_shared.rows(),
    })
}

/// Writes `concepts.txt`, `concepts.ebin` and `rcs.meta` into `dir`.
pub fn save_rcs(rcs: &Rcs, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    embstore::save_concept_names(rcs.space.names(), dir.join(RCS_NAMES_FILE))?;
    embstore::save_matrix(rcs.space.embeddings(), dir.join(RCS_EMBEDDINGS_FILE))?;
    let indices: Vec<String> = rcs.knb_indices.iter().map(usize::to_string).collect();
    let meta = format!(
        "m={}\nsource_size={}\nconcepts={}\nknb_indices={}\n",
        rcs.m,
        rcs.source_size,
        rcs.len(),
        indices.join(",")
    );
    let path = dir.join(RCS_META_FILE);
    fs::write(&path, meta).map_err(|e| Error::io(path, e))
}

pub fn load_rcs(dir: impl AsRef<Path>) -> Result<Rcs> {
    let dir = dir.as_ref();
    let space = embstore::load_concepts(dir.join(RCS_NAMES_FILE), dir.join(RCS_EMBEDDINGS_FILE))?;
    let meta_path = dir.join(RCS_META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: BTreeMap<&str, &str> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let number = |key: &str| -> Result<usize> {
        meta.get(key)
            .ok_or_else(|| Error::InvalidData(format!("{}: missing key {key}", meta_path.display())))?
            .parse()
            .map_err(|_| Error::InvalidData(format!("{}: {key} is not a count", meta_path.display())))
    };
    let m = number("m")?;
    let source_size = number("source_size")?;
    if let Some(count) = meta.get("concepts") {
        if count.parse::<usize>().ok() != Some(space.len()) {
            return Err(Error::Alignment {
                names: count.parse().unwrap_or(0),
                rows: space.len(),
            });
        }
    }
    let knb_indices = match meta.get("knb_indices") {
        Some(list) if !list.is_empty() => list
            .split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::InvalidData(format!("bad knowledge-base index {s:?}")))
            })
            .collect::<Result<Vec<usize>>>()?,
        _ => (0..space.len()).collect(),
    };
    if knb_indices.len() != space.len() {
        return Err(Error::Alignment {
            names: space.len(),
            rows: knb_indices.len(),
        });
    }
    Ok(Rcs {
        space,
        knb_indices,
        m,
        source_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use std::collections::BTreeSet;

    fn space(rows: &[&[f32]]) -> ConceptSpace {
        let names = (0..rows.len()).map(|i| format!("c{i}")).collect();
        ConceptSpace::new(names, EmbeddingMatrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn cosine_hand_values() {
        let concepts = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        let s = cosine_similarity_row(&[1.0, 1.0], &concepts).unwrap();
        let half_root2 = 2f64.sqrt() / 2.0;
        assert!((s[0] - half_root2).abs() < 1e-12);
        assert!((s[1] - half_root2).abs() < 1e-12);

        assert_eq!(cosine_similarity_row(&[0.0, 3.0], &concepts).unwrap()[0], 0.0);
        assert_eq!(cosine_similarity_row(&[0.0, 3.0], &concepts).unwrap()[1], 1.0);
    }

    #[test]
    fn zero_norm_rows_are_named() {
        let concepts = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            cosine_similarity_row(&[1.0, 1.0], &concepts),
            Err(Error::DegenerateVector { what: "concept", row: 1 })
        ));
        let ok = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        assert!(matches!(
            cosine_similarity_row(&[0.0, 0.0], &ok),
            Err(Error::DegenerateVector { what: "image", .. })
        ));
        let images = EmbeddingMatrix::from_rows(&[[1.0f32, 1.0], [0.0, 0.0]]).unwrap();
        let err = ConceptMatcher::new(&ok).unwrap().assign_all(&images, 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateVector { what: "image", row: 1 }));
    }

    #[test]
    fn ties_break_by_index() {
        // similarities [0.2, 0.9, 0.9] against image e0
        let a = (1.0f32 - 0.04).sqrt();
        let b = (1.0f32 - 0.81).sqrt();
        let concepts = space(&[&[0.2, a], &[0.9, b], &[0.9, b]]);
        let top = top_m(&[1.0, 0.0], &concepts, 2).unwrap();
        assert_eq!(top.indices().collect::<Vec<_>>(), vec![1, 2]);

        let all = top_m(&[1.0, 0.0], &concepts, 5).unwrap();
        assert_eq!(all.indices().collect::<Vec<_>>(), vec![1, 2, 0]);
        assert!(top_m(&[1.0, 0.0], &concepts, 0).is_err());
    }

    #[test]
    fn top_m_matches_full_sort() {
        let concepts = synth::gaussian_matrix(50, 16, 1.0, 10);
        let knb = ConceptSpace::new((0..50).map(|i| i.to_string()).collect(), concepts.clone()).unwrap();
        let images = synth::gaussian_matrix(20, 16, 1.0, 11);
        for image in images.iter_rows() {
            let sims = cosine_similarity_row(image, &concepts).unwrap();
            let mut order: Vec<usize> = (0..50).collect();
            order.sort_by(|&i, &j| sims[j].partial_cmp(&sims[i]).unwrap().then(i.cmp(&j)));
            let got: Vec<usize> = top_m(image, &knb, 10).unwrap().indices().collect();
            assert_eq!(got, order[..10]);
        }
    }

    #[test]
    fn assignment_validation() {
        assert!(ConceptAssignment::from_indices(0, &[3, 1, 2]).is_ok());
        assert!(ConceptAssignment::from_indices(0, &[1, 1]).is_err());
        let unordered = vec![
            ScoredConcept { concept: 0, score: 0.1 },
            ScoredConcept { concept: 1, score: 0.5 },
        ];
        assert!(ConceptAssignment::new(0, unordered).is_err());
    }

    #[test]
    fn single_image_rcs_has_m_concepts() {
        let knb_emb = synth::gaussian_matrix(100, 8, 1.0, 1);
        let knb = ConceptSpace::new((0..100).map(|i| format!("k{i}")).collect(), knb_emb).unwrap();
        let one = synth::gaussian_matrix(1, 8, 1.0, 2);
        let rcs = build_rcs(&one, &knb, 5).unwrap();
        assert_eq!(rcs.len(), 5);
        assert!(rcs.knb_indices().windows(2).all(|w| w[0] < w[1]));

        let twice = EmbeddingMatrix::from_rows(&[one.row(0), one.row(0)]).unwrap();
        let rcs2 = build_rcs(&twice, &knb, 5).unwrap();
        assert_eq!(rcs2.knb_indices(), rcs.knb_indices());
        assert_eq!(rcs2.space(), rcs.space());
    }

    #[test]
    fn rcs_matches_union_oracle() {
        let knb_emb = synth::gaussian_matrix(300, 12, 1.0, 21);
        let knb = ConceptSpace::new((0..300).map(|i| format!("k{i}")).collect(), knb_emb.clone()).unwrap();
        let train = synth::gaussian_matrix(200, 12, 1.0, 22);
        let rcs = build_rcs(&train, &knb, 10).unwrap();

        let mut union = BTreeSet::new();
        for image in train.iter_rows() {
            let sims = cosine_similarity_row(image, &knb_emb).unwrap();
            let mut order: Vec<usize> = (0..300).collect();
            order.sort_by(|&i, &j| sims[j].partial_cmp(&sims[i]).unwrap().then(i.cmp(&j)));
            union.extend(order[..10].iter().copied());
        }
        assert_eq!(rcs.knb_indices(), union.into_iter().collect::<Vec<_>>().as_slice());
        for (pos, &k) in rcs.knb_indices().iter().enumerate() {
            assert_eq!(rcs.space().names()[pos], format!("k{k}"));
            assert_eq!(rcs.space().embeddings().row(pos), knb_emb.row(k));
        }
    }

    #[test]
    fn rcs_persists() {
        let knb_emb = synth::gaussian_matrix(40, 6, 1.0, 3);
        let knb = ConceptSpace::new((0..40).map(|i| format!("concept {i}")).collect(), knb_emb).unwrap();
        let train = synth::gaussian_matrix(10, 6, 1.0, 4);
        let rcs = build_rcs(&train, &knb, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_rcs(&rcs, dir.path()).unwrap();
        let meta = std::fs::read_to_string(dir.path().join(RCS_META_FILE)).unwrap();
        assert!(meta.starts_with("m=3\nsource_size=10\n"));
        assert_eq!(load_rcs(dir.path()).unwrap(), rcs);
    }
}
