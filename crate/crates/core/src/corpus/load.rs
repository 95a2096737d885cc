use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnswerOption, Corpus, CorpusError, GoldLabel, Page, PageKey, Question};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PageRecord {
    doc_id: String,
    page: i64,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct QuestionRecord {
    question_id: String,
    question: String,
    options: Vec<OptionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<GoldRecord>,
}

/// Options are normally bare strings labeled implicitly A, B, C, ...; an
/// explicit `{label, text}` form is accepted and validated.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum OptionRecord {
    Text(String),
    Labeled { label: String, text: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct GoldRecord {
    answer: String,
    doc_id: String,
    page: i64,
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn records<'a, T: Deserialize<'a>>(
    input: &'a str,
) -> impl Iterator<Item = Result<(usize, T), CorpusError>> + 'a {
    input
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map(|rec| (i + 1, rec))
                .map_err(|e| CorpusError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
}

fn page_number(raw: i64, line: usize) -> Result<u32, CorpusError> {
    u32::try_from(raw)
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CorpusError::Parse {
            line,
            message: format!("page must be an integer >= 1, got {raw}"),
        })
}

pub fn load_corpus(path: impl AsRef<Path>, allow_empty_pages: bool) -> Result<Corpus, CorpusError> {
    parse_corpus(&read(path.as_ref())?, allow_empty_pages)
}

/// Parses line-delimited `{doc_id, page, text}` records.
pub fn parse_corpus(input: &str, allow_empty_pages: bool) -> Result<Corpus, CorpusError> {
    let mut pages = Vec::new();
    let mut seen = HashSet::new();
    for rec in records::<PageRecord>(input) {
        let (line, rec) = rec?;
        let key = PageKey::new(rec.doc_id, page_number(rec.page, line)?);
        if !allow_empty_pages && rec.text.trim().is_empty() {
            return Err(CorpusError::EmptyPage {
                doc_id: key.doc_id,
                page_number: key.page_number,
                line,
            });
        }
        if !seen.insert(key.clone()) {
            return Err(CorpusError::DuplicatePage {
                doc_id: key.doc_id,
                page_number: key.page_number,
                line,
            });
        }
        pages.push(Page {
            key,
            text: rec.text,
        });
    }
    Corpus::from_pages(pages, allow_empty_pages)
}

/// Writes the corpus in its canonical (sorted) order.
pub fn write_corpus(corpus: &Corpus, mut out: impl Write) -> std::io::Result<()> {
    for page in corpus.pages() {
        let rec = PageRecord {
            doc_id: page.key.doc_id.clone(),
            page: page.key.page_number as i64,
            text: page.text.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<Question>, CorpusError> {
    parse_questions(&read(path.as_ref())?)
}

pub fn parse_questions(input: &str) -> Result<Vec<Question>, CorpusError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for rec in records::<QuestionRecord>(input) {
        let (line, rec) = rec?;
        if !ids.insert(rec.question_id.clone()) {
            return Err(CorpusError::DuplicateQuestionId(rec.question_id));
        }
        let bad = |message: String| CorpusError::BadOptionLabels {
            question_id: rec.question_id.clone(),
            message,
        };
        let mut options = Vec::with_capacity(rec.options.len());
        for (i, opt) in rec.options.iter().enumerate() {
            let option = match opt {
                OptionRecord::Text(text) => AnswerOption {
                    label: super::label_for_index(i).unwrap_or('?'),
                    text: text.clone(),
                },
                OptionRecord::Labeled { label, text } => AnswerOption {
                    label: single_letter(label)
                        .ok_or_else(|| bad(format!("label {label:?} is not a single letter")))?,
                    text: text.clone(),
                },
            };
            options.push(option);
        }
        let gold = match rec.gold {
            None => None,
            Some(g) => Some(GoldLabel {
                answer: single_letter(&g.answer)
                    .ok_or_else(|| bad(format!("gold answer {:?} is not a letter", g.answer)))?,
                page: PageKey::new(g.doc_id, page_number(g.page, line)?),
            }),
        };
        let question = Question {
            question_id: rec.question_id,
            text: rec.question,
            options,
            gold,
        };
        question.validate()?;
        out.push(question);
    }
    Ok(out)
}

pub fn write_questions(questions: &[Question], mut out: impl Write) -> std::io::Result<()> {
    for q in questions {
        let rec = QuestionRecord {
            question_id: q.question_id.clone(),
            question: q.text.clone(),
            options: q
                .options
                .iter()
                .map(|o| OptionRecord::Text(o.text.clone()))
                .collect(),
            gold: q.gold.as_ref().map(|g| GoldRecord {
                answer: g.answer.to_string(),
                doc_id: g.page.doc_id.clone(),
                page: g.page.page_number as i64,
            }),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn single_letter(s: &str) -> Option<char> {
    let mut chars = s.trim().chars();
    let c = chars.next()?.to_ascii_uppercase();
    (chars.next().is_none() && c.is_ascii_uppercase()).then_some(c)
}
