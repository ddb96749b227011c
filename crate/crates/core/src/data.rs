//! Cells, patient bags and datasets.
//!
//! A [`Dataset`] is kept in canonical order: cells sorted by id, bags sorted
//! by patient id, and each bag's cell list sorted ascending. The text format
//! written by [`save_dataset`] stores the bag membership implicitly (through
//! each cell's patient id), so canonical order is what makes
//! `load(save(d)) == d` hold exactly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// The two label spaces used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSpace {
    /// `[non-leukemic, leukemic]`
    Binary,
    /// `[PML-RARA, NPM1, CBFB-MYH11, RUNX1-RUNX1T1]`
    Mutation,
}

impl LabelSpace {
    pub const BINARY_NAMES: [&'static str; 2] = ["non-leukemic", "leukemic"];
    pub const MUTATION_NAMES: [&'static str; 4] =
        ["PML-RARA", "NPM1", "CBFB-MYH11", "RUNX1-RUNX1T1"];

    pub fn num_classes(self) -> usize {
        self.names().len()
    }

    pub fn names(self) -> &'static [&'static str] {
        match self {
            LabelSpace::Binary => &Self::BINARY_NAMES,
            LabelSpace::Mutation => &Self::MUTATION_NAMES,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            LabelSpace::Binary => "binary",
            LabelSpace::Mutation => "mutation",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "binary" => Some(LabelSpace::Binary),
            "mutation" => Some(LabelSpace::Mutation),
            _ => None,
        }
    }

    /// The label space with `k` classes, if there is one.
    pub fn for_class_count(k: usize) -> Option<Self> {
        match k {
            2 => Some(LabelSpace::Binary),
            4 => Some(LabelSpace::Mutation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub cell_id: u64,
    pub patient_id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub patient_id: u64,
    pub cell_ids: Vec<u64>,
    pub bag_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    label_space: LabelSpace,
    dim: usize,
    cells: Vec<CellRecord>,
    bags: Vec<Bag>,
}

impl Dataset {
    /// Builds a dataset, putting it in canonical order and checking every
    /// invariant.
    pub fn new(
        label_space: LabelSpace,
        dim: usize,
        mut cells: Vec<CellRecord>,
        mut bags: Vec<Bag>,
    ) -> Result<Self> {
        cells.sort_by_key(|c| c.cell_id);
        bags.sort_by_key(|b| b.patient_id);
        for bag in &mut bags {
            bag.cell_ids.sort_unstable();
        }
        let ds = Dataset {
            label_space,
            dim,
            cells,
            bags,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset whose bags are derived from the cells' patient ids.
    pub fn from_cells(
        label_space: LabelSpace,
        dim: usize,
        cells: Vec<CellRecord>,
        bag_labels: &BTreeMap<u64, usize>,
    ) -> Result<Self> {
        let mut members: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for c in &cells {
            members.entry(c.patient_id).or_default().push(c.cell_id);
        }
        let mut bags = Vec::with_capacity(members.len());
        for (pid, cell_ids) in members {
            let bag_label = *bag_labels.get(&pid).ok_or_else(|| {
                Error::InvalidDataset(format!("no bag label for patient {pid}"))
            })?;
            bags.push(Bag {
                patient_id: pid,
                cell_ids,
                bag_label,
            });
        }
        Dataset::new(label_space, dim, cells, bags)
    }

    fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        let mut owner: HashMap<u64, u64> = HashMap::with_capacity(self.cells.len());
        for w in self.cells.windows(2) {
            if w[0].cell_id == w[1].cell_id {
                return Err(Error::InvalidDataset(format!(
                    "duplicate cell id {}",
                    w[0].cell_id
                )));
            }
        }
        for c in &self.cells {
            if c.features.len() != self.dim {
                return Err(Error::InvalidDataset(format!(
                    "cell {} has {} features, expected {}",
                    c.cell_id,
                    c.features.len(),
                    self.dim
                )));
            }
            if c.label >= k {
                return Err(Error::LabelOutOfRange {
                    label: c.label,
                    classes: k,
                });
            }
            if let Some(v) = c.features.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "cell {} has non-finite feature {v}",
                    c.cell_id
                )));
            }
            owner.insert(c.cell_id, c.patient_id);
        }
        let mut assigned = 0usize;
        for w in self.bags.windows(2) {
            if w[0].patient_id == w[1].patient_id {
                return Err(Error::InvalidDataset(format!(
                    "duplicate patient id {}",
                    w[0].patient_id
                )));
            }
        }
        for bag in &self.bags {
            if bag.cell_ids.is_empty() {
                return Err(Error::EmptyBag(bag.patient_id));
            }
            if bag.bag_label >= k {
                return Err(Error::LabelOutOfRange {
                    label: bag.bag_label,
                    classes: k,
                });
            }
            for w in bag.cell_ids.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::InvalidDataset(format!(
                        "cell {} listed twice in bag {}",
                        w[0], bag.patient_id
                    )));
                }
            }
            for id in &bag.cell_ids {
                match owner.get(id) {
                    Some(&pid) if pid == bag.patient_id => assigned += 1,
                    Some(&pid) => {
                        return Err(Error::InvalidDataset(format!(
                            "bag {} lists cell {id} owned by patient {pid}",
                            bag.patient_id
                        )))
                    }
                    None => {
                        return Err(Error::InvalidDataset(format!(
                            "bag {} lists unknown cell {id}",
                            bag.patient_id
                        )))
                    }
                }
            }
        }
        if assigned != self.cells.len() {
            return Err(Error::InvalidDataset(format!(
                "{} cells are not in their patient's bag",
                self.cells.len() - assigned
            )));
        }
        Ok(())
    }

    pub fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[CellRecord] {
        &self.cells
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.label).collect()
    }

    /// Position of each cell id in [`Dataset::cells`].
    pub fn cell_positions(&self) -> HashMap<u64, usize> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, c)| (c.cell_id, i))
            .collect()
    }

    /// Cell positions of every bag, in bag order.
    pub fn bag_positions(&self) -> Vec<Vec<usize>> {
        let pos = self.cell_positions();
        self.bags
            .iter()
            .map(|b| b.cell_ids.iter().map(|id| pos[id]).collect())
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for c in &self.cells {
            counts[c.label] += 1;
        }
        counts
    }

    pub fn bag_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for b in &self.bags {
            counts[b.bag_label] += 1;
        }
        counts
    }

    fn bag_label_map(&self) -> BTreeMap<u64, usize> {
        self.bags.iter().map(|b| (b.patient_id, b.bag_label)).collect()
    }

    /// Keeps the cells accepted by `keep`; bags left empty are dropped.
    pub fn filter_cells(&self, mut keep: impl FnMut(&CellRecord) -> bool) -> Result<Dataset> {
        let cells: Vec<CellRecord> = self.cells.iter().filter(|c| keep(c)).cloned().collect();
        Dataset::from_cells(self.label_space, self.dim, cells, &self.bag_label_map())
    }

    /// Restriction to the given patients.
    pub fn select_patients(&self, patients: &HashSet<u64>) -> Result<Dataset> {
        self.filter_cells(|c| patients.contains(&c.patient_id))
    }

    /// Same cells and bags with replaced per-cell labels (in cell order).
    pub fn with_cell_labels(&self, labels: &[usize]) -> Result<Dataset> {
        if labels.len() != self.cells.len() {
            return Err(Error::LengthMismatch(format!(
                "{} labels for {} cells",
                labels.len(),
                self.cells.len()
            )));
        }
        let cells = self
            .cells
            .iter()
            .zip(labels)
            .map(|(c, &label)| CellRecord { label, ..c.clone() })
            .collect();
        Dataset::new(self.label_space, self.dim, cells, self.bags.clone())
    }

    /// Union of two datasets over disjoint cells and patients.
    pub fn merge(&self, other: &Dataset) -> Result<Dataset> {
        if self.label_space != other.label_space || self.dim != other.dim {
            return Err(Error::LabelSpaceMismatch(
                "cannot merge datasets with different label spaces or dimensions".into(),
            ));
        }
        let cells = self.cells.iter().chain(&other.cells).cloned().collect();
        let bags = self.bags.iter().chain(&other.bags).cloned().collect();
        Dataset::new(self.label_space, self.dim, cells, bags)
    }

    pub fn patient_ids(&self) -> Vec<u64> {
        self.bags.iter().map(|b| b.patient_id).collect()
    }

    /// Short human-readable description: counts per class and per bag.
    pub fn summary(&self) -> String {
        let names = self.label_space.names();
        let mut s = format!(
            "{} cells in {} bags, D={}, KIND={}\n",
            self.cells.len(),
            self.bags.len(),
            self.dim,
            self.label_space.keyword()
        );
        let cells = self.class_counts();
        let bags = self.bag_class_counts();
        for (k, name) in names.iter().enumerate() {
            let _ = writeln!(s, "  {name:<14} cells={:<6} bags={}", cells[k], bags[k]);
        }
        if !self.bags.is_empty() {
            let sizes: Vec<usize> = self.bags.iter().map(|b| b.cell_ids.len()).collect();
            let _ = writeln!(
                s,
                "  cells per bag: min={} max={} mean={:.1}",
                sizes.iter().min().unwrap(),
                sizes.iter().max().unwrap(),
                self.cells.len() as f64 / self.bags.len() as f64
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub patients_per_class: usize,
    pub cells_per_patient_min: usize,
    pub cells_per_patient_max: usize,
    pub class_center_separation: f64,
    pub within_class_stddev: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 4,
            dim: 16,
            patients_per_class: 40,
            cells_per_patient_min: 90,
            cells_per_patient_max: 110,
            class_center_separation: 6.0,
            within_class_stddev: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Checks the spec, requiring room for `centers` distinct axis centers.
    fn validate_for(&self, centers: usize) -> Result<LabelSpace> {
        let space = LabelSpace::for_class_count(self.num_classes).ok_or_else(|| {
            Error::config(
                "num_classes",
                format!("{} (supported: 2 binary, 4 mutation)", self.num_classes),
            )
        })?;
        if self.dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if centers > self.dim {
            return Err(Error::config(
                "dim",
                format!("{} is too small to place {centers} axis-aligned class centers", self.dim),
            ));
        }
        if self.patients_per_class == 0 {
            return Err(Error::config("patients_per_class", "must be at least 1"));
        }
        if self.cells_per_patient_min == 0 {
            return Err(Error::config("cells_per_patient_min", "must be at least 1"));
        }
        if self.cells_per_patient_max < self.cells_per_patient_min {
            return Err(Error::config(
                "cells_per_patient_max",
                "must be at least cells_per_patient_min",
            ));
        }
        if !(self.class_center_separation >= 0.0 && self.class_center_separation.is_finite()) {
            return Err(Error::config(
                "class_center_separation",
                "must be finite and non-negative",
            ));
        }
        // zero is accepted as the degenerate "every cell on its center" case
        if !(self.within_class_stddev >= 0.0 && self.within_class_stddev.is_finite()) {
            return Err(Error::config(
                "within_class_stddev",
                "must be finite and non-negative",
            ));
        }
        Ok(space)
    }

    pub fn validate(&self) -> Result<LabelSpace> {
        self.validate_for(self.num_classes)
    }
}

/// Center of class `class`: the `class`-th axis unit vector scaled so that
/// any two centers are exactly `separation` apart.
pub fn class_center(class: usize, dim: usize, separation: f64) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    c[class] = separation / std::f64::consts::SQRT_2;
    c
}

struct CellSampler<'a> {
    spec: &'a SyntheticSpec,
    rng: Rng,
    next_patient: u64,
    next_cell: u64,
}

impl CellSampler<'_> {
    /// Draws one patient around `center`; returns the patient id.
    fn patient(&mut self, center: &[f64], label: usize, cells: &mut Vec<CellRecord>) -> u64 {
        let pid = self.next_patient;
        self.next_patient += 1;
        let span = self.spec.cells_per_patient_max - self.spec.cells_per_patient_min + 1;
        let n = self.spec.cells_per_patient_min + self.rng.below(span);
        for _ in 0..n {
            let features = center
                .iter()
                .map(|&m| m + self.spec.within_class_stddev * self.rng.normal())
                .collect();
            cells.push(CellRecord {
                cell_id: self.next_cell,
                patient_id: pid,
                features,
                label,
            });
            self.next_cell += 1;
        }
        pid
    }
}

/// Draws `patients_per_class` pure bags per class from isotropic Gaussians
/// around axis-aligned class centers.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let space = spec.validate()?;
    let mut sampler = CellSampler {
        spec,
        rng: Rng::new(spec.seed),
        next_patient: 0,
        next_cell: 0,
    };
    let mut cells = Vec::new();
    let mut labels = BTreeMap::new();
    for class in 0..spec.num_classes {
        let center = class_center(class, spec.dim, spec.class_center_separation);
        for _ in 0..spec.patients_per_class {
            let pid = sampler.patient(&center, class, &mut cells);
            labels.insert(pid, class);
        }
    }
    Dataset::from_cells(space, spec.dim, cells, &labels)
}

/// A two-stage cohort over one feature space: leukemic patients from the
/// four subtype classes plus healthy controls drawn around a fifth center.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    /// Every patient, labelled non-leukemic (controls) or leukemic.
    pub detection: Dataset,
    /// Leukemic patients only, labelled by subtype. Ids match `detection`.
    pub mutation: Dataset,
}

impl Cohort {
    /// Subtype of each leukemic patient; controls map to `None`.
    pub fn truth(&self) -> BTreeMap<u64, Option<usize>> {
        let subtypes: HashMap<u64, usize> = self
            .mutation
            .bags()
            .iter()
            .map(|b| (b.patient_id, b.bag_label))
            .collect();
        self.detection
            .bags()
            .iter()
            .map(|b| (b.patient_id, subtypes.get(&b.patient_id).copied()))
            .collect()
    }
}

/// Generates a [`Cohort`]. `spec.num_classes` must be 4 and `spec.dim` at
/// least 5; `control_patients` healthy patients are added.
pub fn generate_cohort(spec: &SyntheticSpec, control_patients: usize) -> Result<Cohort> {
    if spec.num_classes != 4 {
        return Err(Error::config(
            "num_classes",
            "a two-stage cohort needs the 4-class mutation label space",
        ));
    }
    spec.validate_for(spec.num_classes + 1)?;
    if control_patients == 0 {
        return Err(Error::config("control_patients", "must be at least 1"));
    }
    let mut sampler = CellSampler {
        spec,
        rng: Rng::new(spec.seed),
        next_patient: 0,
        next_cell: 0,
    };
    let mut cells = Vec::new();
    let mut subtype = BTreeMap::new();
    for class in 0..4 {
        let center = class_center(class, spec.dim, spec.class_center_separation);
        for _ in 0..spec.patients_per_class {
            let pid = sampler.patient(&center, class, &mut cells);
            subtype.insert(pid, class);
        }
    }
    let mutation_cells = cells.len();
    let control_center = class_center(4, spec.dim, spec.class_center_separation);
    let mut binary: BTreeMap<u64, usize> = subtype.keys().map(|&p| (p, 1)).collect();
    for _ in 0..control_patients {
        let pid = sampler.patient(&control_center, 0, &mut cells);
        binary.insert(pid, 0);
    }
    let mutation = Dataset::from_cells(
        LabelSpace::Mutation,
        spec.dim,
        cells[..mutation_cells].to_vec(),
        &subtype,
    )?;
    let detection_cells = cells
        .into_iter()
        .enumerate()
        .map(|(i, c)| CellRecord {
            label: usize::from(i < mutation_cells),
            ..c
        })
        .collect();
    let detection = Dataset::from_cells(LabelSpace::Binary, spec.dim, detection_cells, &binary)?;
    Ok(Cohort {
        detection,
        mutation,
    })
}

const SECTION_BREAK: &str = "---";

/// Renders a dataset in the text format.
///
/// ```text
/// K=<int> D=<int> KIND=<binary|mutation>
/// ---
/// <patient_id>,<bag_label>          one line per bag
/// ---
/// <cell_id>,<patient_id>,<label>,<f_1>,...,<f_D>
/// ```
///
/// Features use the shortest decimal that round-trips the `f64`.
pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = String::with_capacity(ds.cells.len() * (ds.dim * 20 + 16) + 64);
    let _ = writeln!(
        out,
        "K={} D={} KIND={}",
        ds.num_classes(),
        ds.dim,
        ds.label_space.keyword()
    );
    out.push_str(SECTION_BREAK);
    out.push('\n');
    for b in &ds.bags {
        let _ = writeln!(out, "{},{}", b.patient_id, b.bag_label);
    }
    out.push_str(SECTION_BREAK);
    out.push('\n');
    for c in &ds.cells {
        let _ = write!(out, "{},{},{}", c.cell_id, c.patient_id, c.label);
        for f in &c.features {
            let _ = write!(out, ",{f:?}");
        }
        out.push('\n');
    }
    out
}

fn parse_int<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("invalid {what} {s:?}"),
    })
}

pub(crate) fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("invalid number {s:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            line,
            value: s.to_string(),
        });
    }
    Ok(v)
}

fn parse_header(line: &str) -> Result<(usize, usize, LabelSpace)> {
    let bad = |reason: String| Error::MalformedHeader { line: 1, reason };
    let tokens: Vec<&str> = line.split(' ').collect();
    if tokens.len() != 3 {
        return Err(bad(format!("expected 3 fields, found {}", tokens.len())));
    }
    let field = |tok: &str, key: &str| -> Result<String> {
        tok.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected {key}=..., found {tok:?}")))
    };
    let k: usize = field(tokens[0], "K")?
        .parse()
        .map_err(|_| bad(format!("invalid K in {:?}", tokens[0])))?;
    let d: usize = field(tokens[1], "D")?
        .parse()
        .map_err(|_| bad(format!("invalid D in {:?}", tokens[1])))?;
    let kind = field(tokens[2], "KIND")?;
    let space = LabelSpace::from_keyword(&kind).ok_or_else(|| bad(format!("unknown KIND {kind:?}")))?;
    if space.num_classes() != k {
        return Err(bad(format!("KIND={kind} requires K={}", space.num_classes())));
    }
    Ok((k, d, space))
}

/// Parses the text format produced by [`format_dataset`].
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let lines: Vec<&str> = if body.is_empty() {
        Vec::new()
    } else {
        body.split('\n').collect()
    };
    let header = lines.first().ok_or(Error::MalformedHeader {
        line: 1,
        reason: "empty file".into(),
    })?;
    let (k, dim, space) = parse_header(header)?;
    let breaks: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == SECTION_BREAK)
        .map(|(i, _)| i)
        .collect();
    if breaks.len() != 2 || breaks[0] != 1 {
        return Err(Error::MalformedHeader {
            line: 2,
            reason: "expected header, bag table and cell table separated by '---' lines".into(),
        });
    }

    let mut bag_labels: BTreeMap<u64, usize> = BTreeMap::new();
    let mut bag_lines: HashMap<u64, usize> = HashMap::new();
    for (i, line) in lines.iter().enumerate().take(breaks[1]).skip(2) {
        let n = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(Error::Arity {
                line: n,
                expected: 2,
                found: fields.len(),
            });
        }
        let pid: u64 = parse_int(fields[0], n, "patient id")?;
        let label: usize = parse_int(fields[1], n, "bag label")?;
        if label >= k {
            return Err(Error::Parse {
                line: n,
                reason: format!("bag label {label} out of range for K={k}"),
            });
        }
        if bag_labels.insert(pid, label).is_some() {
            return Err(Error::Parse {
                line: n,
                reason: format!("duplicate patient id {pid}"),
            });
        }
        bag_lines.insert(pid, n);
    }

    let mut cells = Vec::with_capacity(lines.len().saturating_sub(breaks[1] + 1));
    let mut seen = HashSet::new();
    for (i, line) in lines.iter().enumerate().skip(breaks[1] + 1) {
        let n = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(Error::Arity {
                line: n,
                expected: dim + 3,
                found: fields.len(),
            });
        }
        let cell_id: u64 = parse_int(fields[0], n, "cell id")?;
        let patient_id: u64 = parse_int(fields[1], n, "patient id")?;
        let label: usize = parse_int(fields[2], n, "label")?;
        if label >= k {
            return Err(Error::Parse {
                line: n,
                reason: format!("label {label} out of range for K={k}"),
            });
        }
        if !bag_labels.contains_key(&patient_id) {
            return Err(Error::DanglingReference {
                line: n,
                reason: format!("cell {cell_id} refers to patient {patient_id}, absent from the bag table"),
            });
        }
        if !seen.insert(cell_id) {
            return Err(Error::Parse {
                line: n,
                reason: format!("duplicate cell id {cell_id}"),
            });
        }
        let features = fields[3..]
            .iter()
            .map(|f| parse_f64(f, n))
            .collect::<Result<Vec<_>>>()?;
        cells.push(CellRecord {
            cell_id,
            patient_id,
            features,
            label,
        });
    }

    let used: HashSet<u64> = cells.iter().map(|c| c.patient_id).collect();
    if let Some((pid, line)) = bag_lines
        .iter()
        .filter(|(pid, _)| !used.contains(pid))
        .min_by_key(|(_, line)| **line)
    {
        return Err(Error::DanglingReference {
            line: *line,
            reason: format!("patient {pid} has no cells"),
        });
    }
    Dataset::from_cells(space, dim, cells, &bag_labels)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(&path, format_dataset(ds)).map_err(|e| Error::file(&path, e))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    parse_dataset(&text)
}
