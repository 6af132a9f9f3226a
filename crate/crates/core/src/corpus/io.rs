//! On-disk corpus layout:
//!
//! ```text
//! <root>/docs/<doc_id>/page_0001.png   (1-based, zero-padded to 4 digits)
//! <root>/docs/<doc_id>/page_0001.txt   (optional UTF-8 text layer)
//! <root>/qa.jsonl                      (one QaItem per line)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{Corpus, CorpusError, Document, Page, QaItem};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn page_file_name(index: u32, ext: &str) -> String {
    format!("page_{index:04}.{ext}")
}

fn parse_page_file(name: &str) -> Option<(u32, &str)> {
    let rest = name.strip_prefix("page_")?;
    let (digits, ext) = rest.split_once('.')?;
    if digits.len() < 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((digits.parse().ok()?, ext))
}

fn read_text_layer(path: &Path) -> Result<Option<Vec<String>>, CorpusError> {
    if !path.exists() {
        return Ok(None);
    }
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(Some(raw.lines().map(str::to_owned).collect()))
}

fn load_document(doc_id: &str, dir: &Path) -> Result<Document, CorpusError> {
    let mut images: BTreeMap<u32, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some((index, "png")) = parse_page_file(name) {
            images.insert(index, entry.path());
        }
    }
    let Some(&last) = images.keys().next_back() else {
        return Err(CorpusError::EmptyDocument { doc_id: doc_id.to_owned() });
    };
    let mut pages = Vec::with_capacity(last as usize);
    for index in 1..=last {
        let path =
            images.remove(&index).ok_or_else(|| CorpusError::MissingPage { doc_id: doc_id.to_owned(), index })?;
        let (w, h) =
            image::image_dimensions(&path).map_err(|source| CorpusError::Image { path: path.clone(), source })?;
        let text = read_text_layer(&dir.join(page_file_name(index, "txt")))?;
        pages.push(Page::from_file(index, path, w, h, text));
    }
    Ok(Document { doc_id: doc_id.to_owned(), pages })
}

/// Loads a corpus directory. Page images are decoded lazily; their stored
/// size is already capped. QA items are validated against the documents.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let root = root.as_ref();
    let docs_dir = root.join("docs");
    let mut doc_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&docs_dir).map_err(io_err(&docs_dir))? {
        let entry = entry.map_err(io_err(&docs_dir))?;
        if entry.file_type().map_err(io_err(&docs_dir))?.is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                doc_dirs.push((name.to_owned(), entry.path()));
            }
        }
    }
    doc_dirs.sort();
    let documents = doc_dirs.iter().map(|(id, dir)| load_document(id, dir)).collect::<Result<Vec<_>, _>>()?;

    let qa_path = root.join("qa.jsonl");
    let file = fs::File::open(&qa_path).map_err(io_err(&qa_path))?;
    let mut qa_items = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&qa_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let qa: QaItem =
            serde_json::from_str(&line).map_err(|e| CorpusError::BadQaLine { line: n + 1, message: e.to_string() })?;
        qa_items.push(qa);
    }

    let corpus = Corpus::new(documents, qa_items);
    let violations = corpus.validate();
    if violations.is_empty() {
        Ok(corpus)
    } else {
        Err(CorpusError::Validation(violations))
    }
}

/// Writes `corpus` in the on-disk layout, rendering every page raster.
pub fn save_corpus(corpus: &Corpus, root: impl AsRef<Path>) -> Result<(), CorpusError> {
    let root = root.as_ref();
    for (doc_id, doc) in &corpus.documents {
        let dir = root.join("docs").join(doc_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for page in &doc.pages {
            let png = dir.join(page_file_name(page.index, "png"));
            page.raster()?.save(&png).map_err(|source| CorpusError::Image { path: png.clone(), source })?;
            if let Some(lines) = &page.text {
                let txt = dir.join(page_file_name(page.index, "txt"));
                let mut body = lines.join("\n");
                body.push('\n');
                fs::write(&txt, body).map_err(io_err(&txt))?;
            }
        }
    }
    let qa_path = root.join("qa.jsonl");
    let mut f = fs::File::create(&qa_path).map_err(io_err(&qa_path))?;
    for qa in &corpus.qa_items {
        let line = serde_json::to_string(qa).expect("QaItem serializes");
        writeln!(f, "{line}").map_err(io_err(&qa_path))?;
    }
    Ok(())
}
