//! Sparse multi-source categorical claims.
//!
//! Sources and objects are identified externally by strings and internally
//! by dense indices assigned in order of first appearance. Each object has
//! its own categorical domain, induced from the labels claimed for it and
//! optionally extended by a domain file.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimFormat {
    Csv,
    Json,
}

impl ClaimFormat {
    /// Guess the format from a file extension; anything but `.json` is CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ClaimFormat::Json,
            _ => ClaimFormat::Csv,
        }
    }
}

/// The categorical domain of one object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectDomain {
    id: String,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl ObjectDomain {
    pub fn new(id: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        let id = id.into();
        if labels.is_empty() {
            return Err(Error::InvalidInput(format!("object `{id}` has an empty domain")));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (k, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), k).is_some() {
                return Err(Error::InvalidInput(format!(
                    "object `{id}` lists label `{label}` twice"
                )));
            }
        }
        Ok(Self { id, labels, index })
    }

    fn empty(id: String) -> Self {
        Self {
            id,
            labels: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, label: &str) -> usize {
        if let Some(&k) = self.index.get(label) {
            return k;
        }
        let k = self.labels.len();
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), k);
        k
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, k: usize) -> Option<&str> {
        self.labels.get(k).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}

/// One observation: source `source` asserts value `value` for object `object`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Claim {
    pub source: usize,
    pub object: usize,
    pub value: usize,
}

/// Immutable sparse claim matrix with row (per-source) and column
/// (per-object) views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimSet {
    source_ids: Vec<String>,
    objects: Vec<ObjectDomain>,
    claims: Vec<Claim>,
    row_offsets: Vec<usize>,
    by_source: Vec<Claim>,
    col_offsets: Vec<usize>,
    by_object: Vec<Claim>,
}

impl ClaimSet {
    /// Build from already-indexed parts. Validates indices and uniqueness
    /// of (source, object) pairs.
    pub fn new(
        source_ids: Vec<String>,
        objects: Vec<ObjectDomain>,
        claims: Vec<Claim>,
    ) -> Result<Self> {
        let n = source_ids.len();
        let m = objects.len();
        let mut seen = HashSet::with_capacity(claims.len());
        for (i, c) in claims.iter().enumerate() {
            if c.source >= n {
                return Err(Error::OutOfRange { index: c.source, len: n });
            }
            if c.object >= m {
                return Err(Error::OutOfRange { index: c.object, len: m });
            }
            let k = objects[c.object].size();
            if c.value >= k {
                return Err(Error::OutOfRange { index: c.value, len: k });
            }
            if !seen.insert((c.source, c.object)) {
                return Err(Error::Conflict {
                    source_id: source_ids[c.source].clone(),
                    object_id: objects[c.object].id.clone(),
                    line: i + 1,
                });
            }
        }
        for obj in &objects {
            if obj.size() == 0 {
                return Err(Error::InvalidInput(format!(
                    "object `{}` has an empty domain",
                    obj.id
                )));
            }
        }

        let (row_offsets, by_source) = bucket(&claims, n, |c| (c.source, c.object));
        let (col_offsets, by_object) = bucket(&claims, m, |c| (c.object, c.source));
        Ok(Self {
            source_ids,
            objects,
            claims,
            row_offsets,
            by_source,
            col_offsets,
            by_object,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.source_ids.len()
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_claims(&self) -> usize {
        self.claims.len()
    }

    pub fn claims(&self) -> &[Claim] {
        &self.claims
    }

    pub fn objects(&self) -> &[ObjectDomain] {
        &self.objects
    }

    pub fn object(&self, m: usize) -> &ObjectDomain {
        &self.objects[m]
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn source_id(&self, n: usize) -> &str {
        &self.source_ids[n]
    }

    pub fn domain_size(&self, m: usize) -> usize {
        self.objects[m].size()
    }

    /// Claims made by source `n`, ordered by object index.
    pub fn row(&self, n: usize) -> &[Claim] {
        &self.by_source[self.row_offsets[n]..self.row_offsets[n + 1]]
    }

    /// Claims on object `m`, ordered by source index.
    pub fn column(&self, m: usize) -> &[Claim] {
        &self.by_object[self.col_offsets[m]..self.col_offsets[m + 1]]
    }

    /// Sources with a claim on object `m`.
    pub fn column_sources(&self, m: usize) -> Result<Vec<usize>> {
        if m >= self.num_objects() {
            return Err(Error::OutOfRange { index: m, len: self.num_objects() });
        }
        Ok(self.column(m).iter().map(|c| c.source).collect())
    }

    /// Objects claimed by source `n`.
    pub fn row_objects(&self, n: usize) -> Result<Vec<usize>> {
        if n >= self.num_sources() {
            return Err(Error::OutOfRange { index: n, len: self.num_sources() });
        }
        Ok(self.row(n).iter().map(|c| c.object).collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["source_id", "object_id", "value_label"])
            .map_err(csv_io)?;
        for c in &self.claims {
            w.write_record([
                self.source_ids[c.source].as_str(),
                self.objects[c.object].id.as_str(),
                self.objects[c.object].labels[c.value].as_str(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let records: Vec<JsonClaim> = self
            .claims
            .iter()
            .map(|c| JsonClaim {
                source: self.source_ids[c.source].clone(),
                object: self.objects[c.object].id.clone(),
                value: self.objects[c.object].labels[c.value].clone(),
            })
            .collect();
        serde_json::to_writer_pretty(writer, &records)?;
        Ok(())
    }

    pub fn write<W: Write>(&self, writer: W, format: ClaimFormat) -> Result<()> {
        match format {
            ClaimFormat::Csv => self.write_csv(writer),
            ClaimFormat::Json => self.write_json(writer),
        }
    }
}

fn bucket<F>(claims: &[Claim], len: usize, key: F) -> (Vec<usize>, Vec<Claim>)
where
    F: Fn(&Claim) -> (usize, usize),
{
    let mut offsets = vec![0usize; len + 1];
    for c in claims {
        offsets[key(c).0 + 1] += 1;
    }
    for i in 0..len {
        offsets[i + 1] += offsets[i];
    }
    let mut sorted = claims.to_vec();
    sorted.sort_by_key(|c| key(c));
    (offsets, sorted)
}

fn csv_io(err: csv::Error) -> Error {
    Error::Io(std::io::Error::other(err))
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonClaim {
    source: String,
    object: String,
    value: String,
}

/// Incremental construction from string-identified claims.
#[derive(Debug, Default)]
pub struct ClaimSetBuilder {
    source_ids: Vec<String>,
    source_index: HashMap<String, usize>,
    objects: Vec<ObjectDomain>,
    object_index: HashMap<String, usize>,
    claims: Vec<Claim>,
    seen: HashSet<(usize, usize)>,
}

impl ClaimSetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn object_slot(&mut self, object: &str) -> usize {
        if let Some(&m) = self.object_index.get(object) {
            return m;
        }
        let m = self.objects.len();
        self.objects.push(ObjectDomain::empty(object.to_owned()));
        self.object_index.insert(object.to_owned(), m);
        m
    }

    /// Record a claim. `line` is used only for error reporting.
    pub fn add(&mut self, source: &str, object: &str, value: &str, line: usize) -> Result<()> {
        let n = match self.source_index.get(source) {
            Some(&n) => n,
            None => {
                let n = self.source_ids.len();
                self.source_ids.push(source.to_owned());
                self.source_index.insert(source.to_owned(), n);
                n
            }
        };
        let m = self.object_slot(object);
        if !self.seen.insert((n, m)) {
            return Err(Error::Conflict {
                source_id: source.to_owned(),
                object_id: object.to_owned(),
                line,
            });
        }
        let k = self.objects[m].intern(value);
        self.claims.push(Claim { source: n, object: m, value: k });
        Ok(())
    }

    /// Extend object domains with labels that may never be claimed. Objects
    /// not yet seen are created and will carry no claims.
    pub fn add_domains(&mut self, domains: &BTreeMap<String, Vec<String>>) {
        for (object, labels) in domains {
            let m = self.object_slot(object);
            for label in labels {
                self.objects[m].intern(label);
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty() && self.objects.is_empty()
    }

    pub fn build(self) -> Result<ClaimSet> {
        ClaimSet::new(self.source_ids, self.objects, self.claims)
    }
}

/// Parse claims in the given format. Empty input is an error.
pub fn parse_claims<R: Read>(input: R, format: ClaimFormat) -> Result<ClaimSet> {
    parse_claims_with_domains(input, format, None)
}

pub fn parse_claims_with_domains<R: Read>(
    input: R,
    format: ClaimFormat,
    domains: Option<&BTreeMap<String, Vec<String>>>,
) -> Result<ClaimSet> {
    let mut builder = ClaimSetBuilder::new();
    match format {
        ClaimFormat::Csv => read_csv(input, &mut builder)?,
        ClaimFormat::Json => read_json(input, &mut builder)?,
    }
    if builder.claims.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(domains) = domains {
        builder.add_domains(domains);
    }
    builder.build()
}

fn read_csv<R: Read>(input: R, builder: &mut ClaimSetBuilder) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput);
    }
    if headers.len() != 3 {
        return Err(Error::parse(
            1,
            format!("expected header `source_id,object_id,value_label`, got {} fields", headers.len()),
        ));
    }
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 3 {
            return Err(Error::parse(
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let (source, object, value) = (&record[0], &record[1], &record[2]);
        if source.is_empty() || object.is_empty() || value.is_empty() {
            return Err(Error::parse(line, "empty field"));
        }
        builder.add(source, object, value, line)?;
    }
    Ok(())
}

fn read_json<R: Read>(input: R, builder: &mut ClaimSetBuilder) -> Result<()> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let records: Vec<JsonClaim> =
        serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    for (i, rec) in records.iter().enumerate() {
        builder.add(&rec.source, &rec.object, &rec.value, i + 1)?;
    }
    Ok(())
}

/// Parse a domain file: a JSON map `object_id -> [labels]`.
pub fn parse_domains<R: Read>(input: R) -> Result<BTreeMap<String, Vec<String>>> {
    let map: BTreeMap<String, Vec<String>> =
        serde_json::from_reader(input).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv(text: &str) -> Result<ClaimSet> {
        parse_claims(text.as_bytes(), ClaimFormat::Csv)
    }

    const HEADER: &str = "source_id,object_id,value_label\n";

    #[test]
    fn two_sources_one_object() {
        let cs = csv(&format!("{HEADER}s1,b1,authorA\ns2,b1,authorB")).unwrap();
        assert_eq!(cs.num_sources(), 2);
        assert_eq!(cs.num_objects(), 1);
        assert_eq!(cs.domain_size(0), 2);
        let got: Vec<_> = cs.claims().iter().map(|c| (c.source, c.object, c.value)).collect();
        assert_eq!(got, vec![(0, 0, 0), (1, 0, 1)]);
        assert_eq!(cs.column_sources(0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn duplicate_pair_is_conflict() {
        let err = csv(&format!("{HEADER}s1,b1,authorA\ns1,b1,authorA")).unwrap_err();
        assert!(matches!(err, Error::Conflict { line: 3, .. }), "{err}");
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(csv(""), Err(Error::EmptyInput)));
        assert!(matches!(csv(HEADER), Err(Error::EmptyInput)));
        assert!(matches!(
            parse_claims("[]".as_bytes(), ClaimFormat::Json),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            parse_claims("".as_bytes(), ClaimFormat::Json),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = csv(&format!("{HEADER}s1,b1,a\ns2,b1\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn quoted_fields_follow_rfc4180() {
        let cs = csv(&format!("{HEADER}\"s,1\",b1,\"Doe, \"\"J\"\"\"\n")).unwrap();
        assert_eq!(cs.source_id(0), "s,1");
        assert_eq!(cs.object(0).labels(), ["Doe, \"J\""]);
    }

    #[test]
    fn json_fixture_builds_consistent_indexes() {
        let text = r#"[
            {"source": "a", "object": "x", "value": "1"},
            {"source": "b", "object": "x", "value": "2"},
            {"source": "c", "object": "y", "value": "1"},
            {"source": "a", "object": "y", "value": "3"}
        ]"#;
        let cs = parse_claims(text.as_bytes(), ClaimFormat::Json).unwrap();
        assert_eq!(cs.num_claims(), 4);
        assert_eq!(cs.num_sources(), 3);
        assert_eq!(cs.num_objects(), 2);
        let expected = vec![
            Claim { source: 0, object: 0, value: 0 },
            Claim { source: 1, object: 0, value: 1 },
            Claim { source: 2, object: 1, value: 0 },
            Claim { source: 0, object: 1, value: 1 },
        ];
        assert_eq!(cs.claims(), expected.as_slice());
        assert_eq!(cs.object(1).labels(), ["1", "3"]);
        assert_eq!(cs.row_objects(0).unwrap(), vec![0, 1]);
        assert_eq!(cs.row_objects(2).unwrap(), vec![1]);

        // linear scan oracle
        for m in 0..cs.num_objects() {
            let mut scan: Vec<usize> = expected
                .iter()
                .filter(|c| c.object == m)
                .map(|c| c.source)
                .collect();
            scan.sort_unstable();
            assert_eq!(cs.column_sources(m).unwrap(), scan);
        }
        assert!(matches!(cs.column_sources(2), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn domain_file_adds_labels_and_unclaimed_objects() {
        let domains: BTreeMap<String, Vec<String>> = serde_json::from_str(
            r#"{"b1": ["authorC", "authorA"], "b9": ["yes", "no"]}"#,
        )
        .unwrap();
        let cs = parse_claims_with_domains(
            format!("{HEADER}s1,b1,authorA\n").as_bytes(),
            ClaimFormat::Csv,
            Some(&domains),
        )
        .unwrap();
        assert_eq!(cs.object(0).labels(), ["authorA", "authorC"]);
        assert_eq!(cs.num_objects(), 2);
        assert_eq!(cs.object(1).id(), "b9");
        assert!(cs.column_sources(1).unwrap().is_empty());
    }

    #[test]
    fn new_rejects_bad_indices() {
        let obj = ObjectDomain::new("o", vec!["a".into()]).unwrap();
        let bad = ClaimSet::new(
            vec!["s".into()],
            vec![obj.clone()],
            vec![Claim { source: 0, object: 0, value: 1 }],
        );
        assert!(matches!(bad, Err(Error::OutOfRange { .. })));
        assert!(ObjectDomain::new("o", vec!["a".into(), "a".into()]).is_err());
        assert!(ObjectDomain::new("o", vec![]).is_err());
    }

    fn claim_rows() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
        prop::collection::vec((0u8..8, 0u8..6, 0u8..4), 1..40).prop_map(|mut rows| {
            let mut seen = HashSet::new();
            rows.retain(|&(s, o, _)| seen.insert((s, o)));
            rows
        })
    }

    fn to_csv(rows: &[(u8, u8, u8)]) -> String {
        let mut text = String::from(HEADER);
        for (s, o, v) in rows {
            text.push_str(&format!("src{s},obj{o},val{v}\n"));
        }
        text
    }

    proptest! {
        #[test]
        fn csv_and_json_round_trip(rows in claim_rows()) {
            let cs = csv(&to_csv(&rows)).unwrap();
            let mut buf = Vec::new();
            cs.write_csv(&mut buf).unwrap();
            prop_assert_eq!(&parse_claims(buf.as_slice(), ClaimFormat::Csv).unwrap(), &cs);
            let mut buf = Vec::new();
            cs.write_json(&mut buf).unwrap();
            prop_assert_eq!(&parse_claims(buf.as_slice(), ClaimFormat::Json).unwrap(), &cs);
        }

        #[test]
        fn row_and_column_indexes_agree(rows in claim_rows()) {
            let cs = csv(&to_csv(&rows)).unwrap();
            let row_total: usize = (0..cs.num_sources()).map(|n| cs.row(n).len()).sum();
            let col_total: usize = (0..cs.num_objects()).map(|m| cs.column(m).len()).sum();
            prop_assert_eq!(row_total, cs.num_claims());
            prop_assert_eq!(col_total, cs.num_claims());
            for n in 0..cs.num_sources() {
                for m in 0..cs.num_objects() {
                    let in_row = cs.row_objects(n).unwrap().contains(&m);
                    let in_col = cs.column_sources(m).unwrap().contains(&n);
                    prop_assert_eq!(in_row, in_col);
                }
            }
        }
    }
}
