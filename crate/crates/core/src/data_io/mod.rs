//! Text formats for embeddings, orthogonal maps and bilingual lexicons, plus
//! the synthetic instance generator.
//!
//! `.vec` grammar: a header `n SP d LF`, then one line per word,
//! `word (SP float)×d LF`. Words may not contain ASCII spaces. Gzip input is
//! detected from the magic bytes and decompressed transparently.

mod synth;

pub use synth::{
    random_orthogonal, synth_generate, synth_generate_with, with_relative_noise, GaussianStream, SynthConfig,
    SyntheticInstance,
};

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::procrustes::Orthogonal;
use crate::scalar::Real;

/// Orthogonality tolerance enforced when reading a stored map.
pub const MAP_LOAD_TOL: f64 = 1e-6;

/// Vocabulary in frequency order together with its vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    labels: Vec<String>,
    matrix: Matrix<T>,
}

impl<T: Real> EmbeddingSet<T> {
    pub fn new(labels: Vec<String>, matrix: Matrix<T>) -> Result<Self> {
        if labels.len() != matrix.rows() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} rows",
                labels.len(),
                matrix.rows()
            )));
        }
        let mut seen = HashSet::with_capacity(labels.len());
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate label '{l}'")));
            }
        }
        Ok(Self { labels, matrix })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn with_matrix(&self, matrix: Matrix<T>) -> Result<Self> {
        Self::new(self.labels.clone(), matrix)
    }

    /// Label → row index.
    pub fn index(&self) -> std::collections::HashMap<&str, usize> {
        self.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect()
    }
}

fn open_text(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let head = std::io::Cursor::new(magic[..n].to_vec());
    let chained = head.chain(file);
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(chained))))
    } else {
        Ok(Box::new(BufReader::new(chained)))
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Strips the line terminator (`LF` or `CRLF`) and trailing blanks that
/// fastText writers leave after the last component.
fn strip_eol(line: &str) -> &str {
    line.trim_end_matches(['\n', '\r']).trim_end_matches(' ')
}

/// Loads the first `min(n, max_rows)` vectors of a `.vec` file, in file order.
pub fn load_vec<T: Real>(path: impl AsRef<Path>, max_rows: Option<usize>) -> Result<EmbeddingSet<T>> {
    let path = path.as_ref();
    let mut reader = open_text(path)?;
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Err(parse_err(path, 1, "empty file, expected header '<n> <d>'"));
    }
    let header: Vec<&str> = strip_eol(&line).split(' ').collect();
    let (n, d) = match header.as_slice() {
        [n, d] => match (n.parse::<usize>(), d.parse::<usize>()) {
            (Ok(n), Ok(d)) if d > 0 => (n, d),
            _ => return Err(parse_err(path, 1, format!("malformed header '{}'", strip_eol(&line)))),
        },
        _ => return Err(parse_err(path, 1, format!("malformed header '{}'", strip_eol(&line)))),
    };
    let want = max_rows.map_or(n, |m| m.min(n));
    let mut labels = Vec::with_capacity(want);
    let mut data = Vec::with_capacity(want * d);
    let mut seen = HashSet::with_capacity(want);
    let mut lineno = 1;
    while labels.len() < want {
        line.clear();
        lineno += 1;
        if reader.read_line(&mut line)? == 0 {
            return Err(parse_err(path, lineno, format!("unexpected end of file: header promised {n} rows")));
        }
        let body = strip_eol(&line);
        let mut tokens = body.split(' ');
        let word = tokens.next().unwrap_or("");
        if word.is_empty() {
            return Err(parse_err(path, lineno, "empty word"));
        }
        let mut count = 0;
        for tok in tokens {
            if count == d {
                return Err(parse_err(path, lineno, format!("more than {d} components")));
            }
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("invalid float '{tok}'")))?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, format!("non-finite value '{tok}'")));
            }
            data.push(T::lit(v));
            count += 1;
        }
        if count != d {
            return Err(parse_err(path, lineno, format!("expected {d} components, found {count}")));
        }
        if !seen.insert(word.to_string()) {
            return Err(parse_err(path, lineno, format!("duplicate word '{word}'")));
        }
        labels.push(word.to_string());
    }
    let matrix = Matrix::new(labels.len(), d, data)?;
    Ok(EmbeddingSet { labels, matrix })
}

/// Writes a `.vec` file; values use the shortest representation that round-trips.
pub fn save_vec<T: Real>(path: impl AsRef<Path>, e: &EmbeddingSet<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{} {}", e.len(), e.dim())?;
    for (label, row) in e.labels.iter().zip(e.matrix.row_iter()) {
        if label.contains(' ') || label.is_empty() {
            return Err(Error::InvalidInput(format!("label '{label}' cannot be written to .vec")));
        }
        write!(w, "{label}")?;
        for v in row {
            write!(w, " {}", v.as_f64())?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Map format: first line `d`, then `d` lines of `d` space-separated values.
pub fn save_map<T: Real>(path: impl AsRef<Path>, q: &Orthogonal<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let m = q.matrix();
    writeln!(w, "{}", q.dim())?;
    for row in m.row_iter() {
        let parts: Vec<String> = row.iter().map(|v| format!("{}", v.as_f64())).collect();
        writeln!(w, "{}", parts.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a map written by [`save_map`], rejecting it unless `QᵀQ = I` within [`MAP_LOAD_TOL`].
pub fn load_map<T: Real>(path: impl AsRef<Path>) -> Result<Orthogonal<T>> {
    let path = path.as_ref();
    let reader = open_text(path)?;
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| parse_err(path, 1, "empty map file"))??;
    let d: usize = strip_eol(&header)
        .trim()
        .parse()
        .map_err(|_| parse_err(path, 1, format!("malformed dimension '{header}'")))?;
    let mut data = Vec::with_capacity(d * d);
    for i in 0..d {
        let lineno = i + 2;
        let line = lines
            .next()
            .ok_or_else(|| parse_err(path, lineno, format!("expected {d} rows")))??;
        let row: Vec<f64> = strip_eol(&line)
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, lineno, format!("invalid float '{t}'"))))
            .collect::<Result<_>>()?;
        if row.len() != d {
            return Err(parse_err(path, lineno, format!("expected {d} values, found {}", row.len())));
        }
        data.extend(row.into_iter().map(T::lit));
    }
    if let Some(extra) = lines.next() {
        if !extra?.trim().is_empty() {
            return Err(parse_err(path, d + 2, "trailing data after map"));
        }
    }
    let m = Matrix::new(d, d, data).map_err(|e| parse_err(path, 0, e.to_string()))?;
    Orthogonal::new(m, T::lit(MAP_LOAD_TOL))
        .map_err(|e| Error::Integrity(format!("{}: {}", path.display(), e)))
}

/// Source/target word pairs; a source may appear with several targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pairs: Vec<(String, String)>,
}

impl Lexicon {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("lexicon is empty".into()));
        }
        if pairs.iter().any(|(s, t)| s.is_empty() || t.is_empty()) {
            return Err(Error::InvalidInput("lexicon contains an empty word".into()));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// One `source SP target LF` line per pair.
pub fn save_lexicon(path: impl AsRef<Path>, lex: &Lexicon) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (s, t) in lex.pairs() {
        if s.chars().any(char::is_whitespace) || t.chars().any(char::is_whitespace) {
            return Err(Error::InvalidInput(format!("lexicon pair '{s}' / '{t}' contains whitespace")));
        }
        writeln!(w, "{s} {t}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `<source> <target>` lines (any ASCII whitespace separates the two words).
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let reader = open_text(path)?;
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
        match tokens.as_slice() {
            [s, t] => pairs.push((s.to_string(), t.to_string())),
            _ => {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("expected 2 tokens, found {}", tokens.len()),
                ))
            }
        }
    }
    Lexicon::new(pairs).map_err(|e| parse_err(path, 0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn lexicon_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.txt");
        let lex = Lexicon::new(vec![("a".into(), "b".into()), ("a".into(), "c".into())]).unwrap();
        save_lexicon(&p, &lex).unwrap();
        assert_eq!(load_lexicon(&p).unwrap(), lex);
        let bad = Lexicon::new(vec![("a b".into(), "c".into())]).unwrap();
        assert!(save_lexicon(&p, &bad).is_err());
    }

    #[test]
    fn loads_minimal_vec() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.vec", b"2 3\na 1 0 0\nb 0 1 0\n");
        let e: EmbeddingSet<f64> = load_vec(&p, None).unwrap();
        assert_eq!(e.labels(), &["a", "b"]);
        assert_eq!(e.matrix().shape(), (2, 3));
        assert_eq!(e.matrix()[(1, 1)], 1.0);
        let e: EmbeddingSet<f64> = load_vec(&p, Some(1)).unwrap();
        assert_eq!(e.labels(), &["a"]);
    }

    #[test]
    fn tolerates_fasttext_trailing_space_and_crlf() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.vec", b"2 2 \r\nx 1 2 \r\ny 3 4\r\n");
        let e: EmbeddingSet<f64> = load_vec(&p, None).unwrap();
        assert_eq!(e.matrix().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn vec_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let cases: [(&[u8], usize); 6] = [
            (b"2\na 1\n", 1),
            (b"2 2\na 1 2\nb 1\n", 3),
            (b"2 2\na 1 2\na 3 4\n", 3),
            (b"2 2\na 1 2\n", 3),
            (b"1 2\na 1 x\n", 2),
            (b"1 2\na 1 2 3\n", 2),
        ];
        for (k, (bytes, line)) in cases.iter().enumerate() {
            let p = write(&dir, &format!("bad{k}.vec"), bytes);
            match load_vec::<f64>(&p, None) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, *line, "case {k}"),
                other => panic!("case {k}: {other:?}"),
            }
        }
    }

    #[test]
    fn gzip_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vec.gz");
        let mut enc = flate2::write::GzEncoder::new(File::create(&p).unwrap(), flate2::Compression::fast());
        enc.write_all(b"1 2\nw 0.5 -1\n").unwrap();
        enc.finish().unwrap();
        let e: EmbeddingSet<f64> = load_vec(&p, None).unwrap();
        assert_eq!(e.matrix().data(), &[0.5, -1.0]);
    }

    #[test]
    fn map_round_trip_and_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("id.map");
        save_map(&p, &Orthogonal::<f64>::identity(3)).unwrap();
        let q: Orthogonal<f64> = load_map(&p).unwrap();
        assert_eq!(q.matrix(), &Matrix::identity(3));

        let r = random_orthogonal::<f64>(6, 5);
        save_map(&p, &r).unwrap();
        let q: Orthogonal<f64> = load_map(&p).unwrap();
        assert!(q.matrix().sub(r.matrix()).unwrap().frobenius() < 1e-9);

        let scaled = Orthogonal::from_trusted(r.matrix().scale(2.0));
        save_map(&p, &scaled).unwrap();
        assert!(matches!(load_map::<f64>(&p), Err(Error::Integrity(_))));
    }

    #[test]
    fn lexicon_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "lf.txt", b"cat chat\ndog chien\ncat minou\n");
        let lex = load_lexicon(&p).unwrap();
        assert_eq!(lex.len(), 3);
        assert_eq!(lex.pairs()[2], ("cat".to_string(), "minou".to_string()));

        let crlf = write(&dir, "crlf.txt", b"cat chat\r\ndog chien\r\ncat minou\r\n");
        assert_eq!(load_lexicon(&crlf).unwrap(), lex);

        let bad = write(&dir, "bad.txt", b"cat chat\ndog\n");
        assert!(matches!(load_lexicon(&bad), Err(Error::Parse { line: 2, .. })));
        let empty = write(&dir, "empty.txt", b"");
        assert!(load_lexicon(&empty).is_err());
    }

    #[test]
    fn embedding_set_rejects_duplicates() {
        let m = Matrix::<f64>::zeros(2, 2);
        assert!(EmbeddingSet::new(vec!["a".into(), "a".into()], m).is_err());
    }
}
