//! Lossless compression of a table into per-design-row sufficient statistics.
//!
//! Weighted least squares only sees the data through XᵀWX, XᵀWy, and yᵀWy,
//! so rows sharing a design pattern (and cluster, when one is declared)
//! collapse into one group carrying `(count, Σy, Σy²)` per KPI. Fits,
//! homoskedastic and HC0/HC1 covariances, and cluster-robust covariances are
//! recoverable from groups exactly; only row-level leverage diagnostics are
//! not.
//!
//! Group identity is the bit pattern of the sparse design row. Groups are
//! canonically ordered (cluster, then pattern), and per-group sums use
//! compensated accumulation, so the compressed dataset is independent of row
//! order and thread count.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::design::{ColumnLayout, RowPatterns};
use crate::error::{Error, Result};
use crate::exec;
use crate::ingest::EncodedTable;
use crate::stats::Acc;

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedDataset {
    p: usize,
    m: usize,
    n_total: u64,
    /// Group g's pattern spans `pattern_cols[group_ptr[g]..group_ptr[g+1]]`.
    group_ptr: Vec<usize>,
    pattern_cols: Vec<u32>,
    pattern_vals: Vec<f64>,
    count: Vec<u64>,
    /// Σy per group and KPI, group-major: entry `g·m + j`.
    sum_y: Vec<f64>,
    sum_y_sq: Vec<f64>,
    /// Cluster code per group when the table declares a cluster column.
    cluster: Option<Vec<u32>>,
    term_names: Vec<String>,
    kpi_names: Vec<String>,
}

/// Borrowed view of one group.
#[derive(Debug, Clone, Copy)]
pub struct Group<'a> {
    pub cols: &'a [u32],
    pub vals: &'a [f64],
    pub count: u64,
    pub sum_y: &'a [f64],
    pub sum_y_sq: &'a [f64],
    pub cluster: Option<u32>,
}

impl CompressedDataset {
    pub fn n_groups(&self) -> usize {
        self.count.len()
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn n_design_cols(&self) -> usize {
        self.p
    }

    pub fn n_kpis(&self) -> usize {
        self.m
    }

    pub fn term_names(&self) -> &[String] {
        &self.term_names
    }

    pub fn kpi_names(&self) -> &[String] {
        &self.kpi_names
    }

    pub fn has_clusters(&self) -> bool {
        self.cluster.is_some()
    }

    pub fn group(&self, g: usize) -> Group<'_> {
        let span = self.group_ptr[g]..self.group_ptr[g + 1];
        Group {
            cols: &self.pattern_cols[span.clone()],
            vals: &self.pattern_vals[span],
            count: self.count[g],
            sum_y: &self.sum_y[g * self.m..(g + 1) * self.m],
            sum_y_sq: &self.sum_y_sq[g * self.m..(g + 1) * self.m],
            cluster: self.cluster.as_ref().map(|c| c[g]),
        }
    }

    pub fn groups(&self) -> impl Iterator<Item = Group<'_>> {
        (0..self.n_groups()).map(|g| self.group(g))
    }

    /// Rows per group, n / G.
    pub fn compression_ratio(&self) -> f64 {
        if self.n_groups() == 0 {
            return 1.0;
        }
        self.n_total as f64 / self.n_groups() as f64
    }

    pub fn heap_bytes(&self) -> usize {
        self.group_ptr.len() * size_of::<usize>()
            + self.pattern_cols.len() * size_of::<u32>()
            + self.pattern_vals.len() * size_of::<f64>()
            + self.count.len() * size_of::<u64>()
            + (self.sum_y.len() + self.sum_y_sq.len()) * size_of::<f64>()
            + self
                .cluster
                .as_ref()
                .map_or(0, |c| c.len() * size_of::<u32>())
    }
}

fn key_bytes(buf: &mut Vec<u8>, cluster: u32, cols: &[u32], vals: &[f64]) {
    buf.clear();
    buf.extend_from_slice(&cluster.to_le_bytes());
    for (&c, &v) in cols.iter().zip(vals) {
        buf.extend_from_slice(&c.to_le_bytes());
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

/// Accumulates groups for one chunk of rows; chunk results merge in order.
struct Builder {
    m: usize,
    map: HashMap<Box<[u8]>, usize>,
    group_ptr: Vec<usize>,
    pattern_cols: Vec<u32>,
    pattern_vals: Vec<f64>,
    cluster: Vec<u32>,
    count: Vec<u64>,
    sum_y: Vec<Acc>,
    sum_y_sq: Vec<Acc>,
    key_buf: Vec<u8>,
}

impl Builder {
    fn new(m: usize) -> Self {
        Builder {
            m,
            map: HashMap::new(),
            group_ptr: vec![0],
            pattern_cols: Vec::new(),
            pattern_vals: Vec::new(),
            cluster: Vec::new(),
            count: Vec::new(),
            sum_y: Vec::new(),
            sum_y_sq: Vec::new(),
            key_buf: Vec::new(),
        }
    }

    fn group_index(&mut self, cluster: u32, cols: &[u32], vals: &[f64]) -> usize {
        let mut buf = std::mem::take(&mut self.key_buf);
        key_bytes(&mut buf, cluster, cols, vals);
        let g = match self.map.get(buf.as_slice()) {
            Some(&g) => g,
            None => {
                let g = self.count.len();
                self.map.insert(buf.clone().into_boxed_slice(), g);
                self.pattern_cols.extend_from_slice(cols);
                self.pattern_vals.extend_from_slice(vals);
                self.group_ptr.push(self.pattern_cols.len());
                self.cluster.push(cluster);
                self.count.push(0);
                self.sum_y.extend(std::iter::repeat_n(Acc::new(), self.m));
                self.sum_y_sq.extend(std::iter::repeat_n(Acc::new(), self.m));
                g
            }
        };
        self.key_buf = buf;
        g
    }

    fn add_row(&mut self, cluster: u32, cols: &[u32], vals: &[f64], y: impl Iterator<Item = f64>) {
        let g = self.group_index(cluster, cols, vals);
        self.count[g] += 1;
        for (j, yj) in y.enumerate() {
            self.sum_y[g * self.m + j].add(yj);
            self.sum_y_sq[g * self.m + j].add(yj * yj);
        }
    }

    fn merge(&mut self, other: Builder) {
        for g in 0..other.count.len() {
            let span = other.group_ptr[g]..other.group_ptr[g + 1];
            let cols = &other.pattern_cols[span.clone()];
            let vals = &other.pattern_vals[span];
            let me = self.group_index(other.cluster[g], cols, vals);
            self.count[me] += other.count[g];
            for j in 0..self.m {
                self.sum_y[me * self.m + j].merge(other.sum_y[g * self.m + j]);
                self.sum_y_sq[me * self.m + j].merge(other.sum_y_sq[g * self.m + j]);
            }
        }
    }
}

/// Orders groups by (cluster, pattern) so the result does not depend on row
/// order. Patterns compare lexicographically over (column, value) pairs.
fn canonical_order(b: &Builder) -> Vec<usize> {
    let mut order: Vec<usize> = (0..b.count.len()).collect();
    let pattern = |g: usize| {
        let span = b.group_ptr[g]..b.group_ptr[g + 1];
        (&b.pattern_cols[span.clone()], &b.pattern_vals[span])
    };
    order.sort_unstable_by(|&a, &z| {
        b.cluster[a].cmp(&b.cluster[z]).then_with(|| {
            let (ca, va) = pattern(a);
            let (cz, vz) = pattern(z);
            for i in 0..ca.len().min(cz.len()) {
                match ca[i].cmp(&cz[i]).then(va[i].total_cmp(&vz[i])) {
                    std::cmp::Ordering::Equal => {}
                    other => return other,
                }
            }
            ca.len().cmp(&cz.len())
        })
    });
    order
}

/// Collapses the table into design-row groups under `layout`.
pub fn compress(table: &EncodedTable, layout: &ColumnLayout) -> Result<CompressedDataset> {
    let patterns = RowPatterns::new(table, layout)?;
    let kpis = table.kpi_columns();
    let m = kpis.len();
    let n = table.n_rows();
    let cluster_codes = table.cluster().map(|c| c.codes.as_slice());

    let chunks = exec::map_chunks(n, exec::ROW_CHUNK, |range| {
        let mut b = Builder::new(m);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in range {
            patterns.fill(i, &mut cols, &mut vals);
            let cl = cluster_codes.map_or(0, |c| c[i]);
            b.add_row(cl, &cols, &vals, kpis.iter().map(|k| k[i]));
        }
        b
    });

    let mut total = Builder::new(m);
    for chunk in chunks {
        total.merge(chunk);
    }

    let order = canonical_order(&total);
    let g_count = order.len();
    let mut group_ptr = Vec::with_capacity(g_count + 1);
    let mut pattern_cols = Vec::with_capacity(total.pattern_cols.len());
    let mut pattern_vals = Vec::with_capacity(total.pattern_vals.len());
    let mut count = Vec::with_capacity(g_count);
    let mut cluster = Vec::with_capacity(g_count);
    let mut sum_y = Vec::with_capacity(g_count * m);
    let mut sum_y_sq = Vec::with_capacity(g_count * m);
    group_ptr.push(0);
    for &g in &order {
        let span = total.group_ptr[g]..total.group_ptr[g + 1];
        pattern_cols.extend_from_slice(&total.pattern_cols[span.clone()]);
        pattern_vals.extend_from_slice(&total.pattern_vals[span]);
        group_ptr.push(pattern_cols.len());
        count.push(total.count[g]);
        cluster.push(total.cluster[g]);
        for j in 0..m {
            sum_y.push(total.sum_y[g * m + j].value());
            sum_y_sq.push(total.sum_y_sq[g * m + j].value());
        }
    }

    Ok(CompressedDataset {
        p: layout.n_cols(),
        m,
        n_total: n as u64,
        group_ptr,
        pattern_cols,
        pattern_vals,
        count,
        sum_y,
        sum_y_sq,
        cluster: cluster_codes.map(|_| cluster),
        term_names: layout.names().to_vec(),
        kpi_names: table.kpi_names().iter().map(|s| s.to_string()).collect(),
    })
}

const MAGIC: &[u8; 4] = b"EFXC";
const VERSION: u32 = 1;

fn write_strings(w: &mut impl Write, strings: &[String]) -> std::io::Result<()> {
    w.write_all(&(strings.len() as u64).to_le_bytes())?;
    for s in strings {
        w.write_all(&(s.len() as u64).to_le_bytes())?;
        w.write_all(s.as_bytes())?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_strings(r: &mut impl Read, limit: u64) -> std::io::Result<Vec<String>> {
    let n = read_u64(r)?.min(limit);
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let len = read_u64(r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        out.push(String::from_utf8_lossy(&buf).into_owned());
    }
    Ok(out)
}

impl CompressedDataset {
    /// Writes the dataset in a versioned little-endian binary layout.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.p as u64).to_le_bytes())?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&self.n_total.to_le_bytes())?;
        w.write_all(&(self.n_groups() as u64).to_le_bytes())?;
        w.write_all(&(self.pattern_cols.len() as u64).to_le_bytes())?;
        w.write_all(&[self.cluster.is_some() as u8])?;
        for &v in &self.group_ptr {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for &c in &self.pattern_cols {
            w.write_all(&c.to_le_bytes())?;
        }
        for &v in &self.pattern_vals {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        for &c in &self.count {
            w.write_all(&c.to_le_bytes())?;
        }
        for &v in &self.sum_y {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        for &v in &self.sum_y_sq {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        if let Some(cluster) = &self.cluster {
            for &c in cluster {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        write_strings(w, &self.term_names)?;
        write_strings(w, &self.kpi_names)?;
        Ok(())
    }

    /// Reads a dataset written by [`CompressedDataset::write_to`]. `label`
    /// names the source in error messages.
    pub fn read_from(r: &mut impl Read, label: &str) -> Result<Self> {
        let bad = |msg: &str| Error::CorruptArtifact {
            path: label.to_string(),
            detail: msg.to_string(),
        };
        let io = |source: std::io::Error| Error::Io {
            path: label.to_string(),
            source,
        };

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("not a compressed dataset (bad magic)"));
        }
        let mut vbuf = [0u8; 4];
        r.read_exact(&mut vbuf).map_err(io)?;
        let version = u32::from_le_bytes(vbuf);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let p = read_u64(r).map_err(io)? as usize;
        let m = read_u64(r).map_err(io)? as usize;
        let n_total = read_u64(r).map_err(io)?;
        let g = read_u64(r).map_err(io)? as usize;
        let nnz = read_u64(r).map_err(io)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(io)?;
        let has_cluster = flag[0] != 0;

        let mut group_ptr = Vec::with_capacity(g + 1);
        for _ in 0..=g {
            group_ptr.push(read_u64(r).map_err(io)? as usize);
        }
        if group_ptr.first() != Some(&0)
            || group_ptr.last() != Some(&nnz)
            || group_ptr.windows(2).any(|w| w[0] > w[1])
        {
            return Err(bad("group offsets are not monotone"));
        }
        let mut pattern_cols = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(io)?;
            let c = u32::from_le_bytes(b);
            if c as usize >= p {
                return Err(bad("pattern column out of range"));
            }
            pattern_cols.push(c);
        }
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                out.push(f64::from_bits(read_u64(r).map_err(io)?));
            }
            Ok(out)
        };
        let pattern_vals = read_f64s(nnz)?;
        let mut count = Vec::with_capacity(g);
        for _ in 0..g {
            let c = read_u64(r).map_err(io)?;
            if c == 0 {
                return Err(bad("empty group"));
            }
            count.push(c);
        }
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                out.push(f64::from_bits(read_u64(r).map_err(io)?));
            }
            Ok(out)
        };
        let sum_y = read_f64s(g * m)?;
        let sum_y_sq = read_f64s(g * m)?;
        let cluster = if has_cluster {
            let mut out = Vec::with_capacity(g);
            for _ in 0..g {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(io)?;
                out.push(u32::from_le_bytes(b));
            }
            Some(out)
        } else {
            None
        };
        let term_names = read_strings(r, p as u64).map_err(io)?;
        let kpi_names = read_strings(r, m as u64).map_err(io)?;
        if term_names.len() != p || kpi_names.len() != m {
            return Err(bad("name tables truncated"));
        }
        if count.iter().sum::<u64>() != n_total {
            return Err(bad("group counts do not sum to the row total"));
        }

        Ok(CompressedDataset {
            p,
            m,
            n_total,
            group_ptr,
            pattern_cols,
            pattern_vals,
            count,
            sum_y,
            sum_y_sq,
            cluster,
            term_names,
            kpi_names,
        })
    }
}

/// n / G for a freshly compressed table, without keeping the dataset.
pub fn compression_ratio(table: &EncodedTable, layout: &ColumnLayout) -> Result<f64> {
    Ok(compress(table, layout)?.compression_ratio())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_layout, DesignSpec};
    use crate::ingest::{load_table_from_reader, ColumnKind, ColumnSpec, Schema};

    fn schema(cols: &[(&str, ColumnKind)]) -> Schema {
        Schema::new(
            cols.iter()
                .map(|(n, k)| ColumnSpec {
                    name: n.to_string(),
                    kind: *k,
                })
                .collect(),
        )
        .unwrap()
    }

    fn two_arm(csv: &str) -> (EncodedTable, ColumnLayout) {
        let s = schema(&[("a", ColumnKind::Treatment), ("y", ColumnKind::Kpi)]);
        let t = load_table_from_reader(csv.as_bytes(), &s, "t").unwrap();
        let layout = build_layout(&t, &DesignSpec::main_effects("a")).unwrap();
        (t, layout)
    }

    #[test]
    fn two_arm_table_collapses_to_two_groups() {
        let (t, layout) = two_arm("a,y\nctl,1\nctl,3\ntrt,2\ntrt,6\n");
        let cd = compress(&t, &layout).unwrap();
        assert_eq!(cd.n_groups(), 2);
        assert_eq!(cd.compression_ratio(), 2.0);
        // Canonical order: control pattern {0:1} sorts before {0:1, 1:1}.
        let g0 = cd.group(0);
        assert_eq!((g0.cols, g0.vals), (&[0u32][..], &[1.0][..]));
        assert_eq!((g0.count, g0.sum_y[0], g0.sum_y_sq[0]), (2, 4.0, 10.0));
        let g1 = cd.group(1);
        assert_eq!((g1.cols, g1.vals), (&[0u32, 1][..], &[1.0, 1.0][..]));
        assert_eq!((g1.count, g1.sum_y[0], g1.sum_y_sq[0]), (2, 8.0, 40.0));
    }

    #[test]
    fn result_is_invariant_under_row_permutation() {
        let (t1, l1) = two_arm("a,y\nctl,1\nctl,3\ntrt,2\ntrt,6\nctl,5\n");
        let (t2, l2) = two_arm("a,y\ntrt,6\nctl,5\nctl,1\ntrt,2\nctl,3\n");
        let a = compress(&t1, &l1).unwrap();
        let b = compress(&t2, &l2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clusters_split_identical_patterns() {
        let s = schema(&[
            ("a", ColumnKind::Treatment),
            ("site", ColumnKind::ClusterId),
            ("y", ColumnKind::Kpi),
        ]);
        let t = load_table_from_reader(
            "a,site,y\nctl,s1,1\nctl,s2,2\nctl,s1,3\ntrt,s1,4\n".as_bytes(),
            &s,
            "t",
        )
        .unwrap();
        let layout = build_layout(&t, &DesignSpec::main_effects("a")).unwrap();
        let cd = compress(&t, &layout).unwrap();
        assert_eq!(cd.n_groups(), 3);
        assert!(cd.has_clusters());
        let clusters: Vec<Option<u32>> = cd.groups().map(|g| g.cluster).collect();
        assert_eq!(clusters, vec![Some(0), Some(0), Some(1)]);
        let counts: Vec<u64> = cd.groups().map(|g| g.count).collect();
        assert_eq!(counts, vec![2, 1, 1]);
    }

    #[test]
    fn multi_kpi_sums_accumulate_per_outcome() {
        let s = schema(&[
            ("a", ColumnKind::Treatment),
            ("y1", ColumnKind::Kpi),
            ("y2", ColumnKind::Kpi),
        ]);
        let t =
            load_table_from_reader("a,y1,y2\nctl,1,10\nctl,3,20\n".as_bytes(), &s, "t").unwrap();
        let layout = build_layout(&t, &DesignSpec::main_effects("a"));
        // Single-level treatment is rejected before compression.
        assert!(layout.is_err());

        let t = load_table_from_reader(
            "a,y1,y2\nctl,1,10\nctl,3,20\ntrt,5,30\n".as_bytes(),
            &s,
            "t",
        )
        .unwrap();
        let layout = build_layout(&t, &DesignSpec::main_effects("a")).unwrap();
        let cd = compress(&t, &layout).unwrap();
        assert_eq!(cd.n_kpis(), 2);
        let g0 = cd.group(0);
        assert_eq!(g0.sum_y, &[4.0, 30.0]);
        assert_eq!(g0.sum_y_sq, &[10.0, 500.0]);
    }

    #[test]
    fn all_distinct_rows_compress_to_ratio_one() {
        let s = schema(&[
            ("a", ColumnKind::Treatment),
            ("x", ColumnKind::Numeric),
            ("y", ColumnKind::Kpi),
        ]);
        let t = load_table_from_reader(
            "a,x,y\nctl,1,0\nctl,2,0\ntrt,3,0\ntrt,4,0\n".as_bytes(),
            &s,
            "t",
        )
        .unwrap();
        let layout = build_layout(
            &t,
            &DesignSpec {
                treatment: "a".into(),
                covariates: vec!["x".into()],
                interact_treatment_covariates: false,
                interact_treatment_time: false,
            },
        )
        .unwrap();
        let cd = compress(&t, &layout).unwrap();
        assert_eq!(cd.n_groups(), 4);
        assert_eq!(cd.compression_ratio(), 1.0);
    }

    #[test]
    fn binary_round_trip_preserves_everything() {
        let s = schema(&[
            ("a", ColumnKind::Treatment),
            ("site", ColumnKind::ClusterId),
            ("y", ColumnKind::Kpi),
        ]);
        let t = load_table_from_reader(
            "a,site,y\nctl,s1,1.5\nctl,s2,-2.25\ntrt,s1,3.75\ntrt,s2,0.5\nctl,s1,1.5\n".as_bytes(),
            &s,
            "t",
        )
        .unwrap();
        let layout = build_layout(&t, &DesignSpec::main_effects("a")).unwrap();
        let cd = compress(&t, &layout).unwrap();
        let mut bytes = Vec::new();
        cd.write_to(&mut bytes).unwrap();
        let back = CompressedDataset::read_from(&mut bytes.as_slice(), "mem").unwrap();
        assert_eq!(cd, back);
        assert_eq!(back.term_names(), &["intercept", "a[trt]"]);
        assert_eq!(back.kpi_names(), &["y"]);
    }

    #[test]
    fn corrupt_streams_are_rejected() {
        let err = CompressedDataset::read_from(&mut &b"NOPE"[..], "mem").unwrap_err();
        assert!(matches!(err, Error::CorruptArtifact { .. }));
        let (t, layout) = two_arm("a,y\nctl,1\ntrt,2\n");
        let cd = compress(&t, &layout).unwrap();
        let mut bytes = Vec::new();
        cd.write_to(&mut bytes).unwrap();
        let truncated = &bytes[..bytes.len() / 2];
        assert!(CompressedDataset::read_from(&mut &truncated[..], "mem").is_err());
    }
}
