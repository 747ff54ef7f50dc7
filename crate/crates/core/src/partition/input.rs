//! Flat input corpora: newline-delimited JSON, plain text and CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// One JSON object per line.
    Jsonl,
    /// One example per line, exposed as the single field `text`.
    Text,
    /// Comma-separated values with a header row.
    Csv,
}

impl InputFormat {
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "ndjson" | "json" => Some(InputFormat::Jsonl),
            "txt" | "text" => Some(InputFormat::Text),
            "csv" => Some(InputFormat::Csv),
            _ => None,
        }
    }

    /// Field holding the example text when payloads are structured.
    pub fn default_text_field(self) -> Option<&'static str> {
        match self {
            InputFormat::Text => None,
            InputFormat::Jsonl | InputFormat::Csv => Some("text"),
        }
    }
}

/// One input example, numbered by its 0-based position in the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub index: u64,
    pub fields: Map<String, Value>,
    /// Bytes stored in the shard: the raw line for JSONL and text input, a
    /// canonical JSON object for CSV rows.
    pub payload: Vec<u8>,
}

impl Example {
    pub fn text(index: u64, line: &str) -> Self {
        let mut fields = Map::new();
        fields.insert("text".to_owned(), Value::String(line.to_owned()));
        Example {
            index,
            fields,
            payload: line.as_bytes().to_vec(),
        }
    }

    pub fn from_json_line(index: u64, line: &[u8]) -> Result<Self> {
        let value: Value = serde_json::from_slice(line).map_err(|e| Error::Input {
            line: index + 1,
            message: e.to_string(),
        })?;
        match value {
            Value::Object(fields) => Ok(Example {
                index,
                fields,
                payload: line.to_vec(),
            }),
            _ => Err(Error::Input {
                line: index + 1,
                message: "expected a JSON object".into(),
            }),
        }
    }
}

pub type ExampleIter = Box<dyn Iterator<Item = Result<Example>> + Send>;

/// Opens `path` and yields its examples in input order.
pub fn read_corpus(path: &Path, format: InputFormat) -> Result<ExampleIter> {
    let file = File::open(path).map_err(|e| Error::io_at(format!("opening {}", path.display()), e))?;
    Ok(read_corpus_from(BufReader::new(file), format))
}

pub fn read_corpus_from<R: Read + Send + 'static>(reader: R, format: InputFormat) -> ExampleIter {
    match format {
        InputFormat::Jsonl => Box::new(LineExamples::new(reader, true)),
        InputFormat::Text => Box::new(LineExamples::new(reader, false)),
        InputFormat::Csv => Box::new(CsvExamples::new(reader)),
    }
}

struct LineExamples<R> {
    reader: BufReader<R>,
    json: bool,
    next_index: u64,
    line_no: u64,
    buf: Vec<u8>,
    done: bool,
}

impl<R: Read> LineExamples<R> {
    fn new(reader: R, json: bool) -> Self {
        LineExamples {
            reader: BufReader::new(reader),
            json,
            next_index: 0,
            line_no: 0,
            buf: Vec::new(),
            done: false,
        }
    }
}

impl<R: Read> Iterator for LineExamples<R> {
    type Item = Result<Example>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
            self.line_no += 1;
            let mut line = self.buf.as_slice();
            if let Some(stripped) = line.strip_suffix(b"\n") {
                line = stripped;
            }
            if let Some(stripped) = line.strip_suffix(b"\r") {
                line = stripped;
            }
            if self.json {
                // Blank lines are not records in newline-delimited JSON.
                if line.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                let index = self.next_index;
                self.next_index += 1;
                let line_no = self.line_no;
                return Some(Example::from_json_line(index, line).map_err(|e| match e {
                    Error::Input { message, .. } => Error::Input { line: line_no, message },
                    other => other,
                }));
            }
            let index = self.next_index;
            self.next_index += 1;
            let mut example = Example::text(index, &String::from_utf8_lossy(line));
            example.payload = line.to_vec();
            return Some(Ok(example));
        }
        None
    }
}

struct CsvExamples<R: Read> {
    reader: csv::Reader<R>,
    headers: Option<Vec<String>>,
    next_index: u64,
    done: bool,
}

impl<R: Read> CsvExamples<R> {
    fn new(reader: R) -> Self {
        CsvExamples {
            reader: csv::ReaderBuilder::new().has_headers(true).from_reader(reader),
            headers: None,
            next_index: 0,
            done: false,
        }
    }
}

impl<R: Read> Iterator for CsvExamples<R> {
    type Item = Result<Example>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.headers.is_none() {
            match self.reader.headers() {
                Ok(h) => self.headers = Some(h.iter().map(str::to_owned).collect()),
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
        }
        let mut record = csv::StringRecord::new();
        match self.reader.read_record(&mut record) {
            Ok(false) => {
                self.done = true;
                None
            }
            Ok(true) => {
                let headers = self.headers.as_ref().expect("headers read above");
                let mut fields = Map::new();
                for (name, value) in headers.iter().zip(record.iter()) {
                    fields.insert(name.clone(), Value::String(value.to_owned()));
                }
                let index = self.next_index;
                self.next_index += 1;
                let payload = match serde_json::to_vec(&fields) {
                    Ok(p) => p,
                    Err(e) => return Some(Err(e.into())),
                };
                Some(Ok(Example {
                    index,
                    fields,
                    payload,
                }))
            }
            Err(e) => {
                self.done = true;
                Some(Err(e.into()))
            }
        }
    }
}
