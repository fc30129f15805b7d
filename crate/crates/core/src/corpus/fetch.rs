//! Review mining over the GitHub GraphQL API.
//!
//! Pull requests are paged oldest first. For each review thread on a `.java`
//! file whose first comment was followed by a revision (the thread is outdated
//! and the file differs between the commented commit and the PR head), the
//! two file versions and the comment become a [`ReviewTriplet`]. The cursor of
//! the last completed page is written to a checkpoint file so an interrupted
//! crawl resumes where it stopped.
//!
//! The HTTP layer is abstracted behind [`GraphqlTransport`] so the crawl logic
//! runs offline against canned responses.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use serde_json::{json, Value};

use super::{to_jsonl_line, ReviewMeta, ReviewTriplet};

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited, retry after {retry_after_secs}s")]
    RateLimited { retry_after_secs: u64 },
    #[error("unexpected response shape: {0}")]
    Schema(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    /// Value of a `Retry-After` header, in seconds, when present.
    pub retry_after: Option<u64>,
    pub body: String,
}

/// Sends one GraphQL POST. Implementations attach the bearer token.
pub trait GraphqlTransport {
    fn post(&mut self, endpoint: &str, token: &str, body: &str) -> Result<HttpResponse, FetchError>;
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub endpoint: String,
    /// `owner/name`.
    pub repo: String,
    pub auth_token: String,
    pub max_prs: usize,
    pub page_size: usize,
    pub out_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchStats {
    pub prs_seen: usize,
    pub threads_seen: usize,
    pub written: usize,
    pub skipped_non_java: usize,
    pub skipped_unrevised: usize,
    pub schema_errors: usize,
}

const PR_QUERY: &str = "query($owner: String!, $name: String!, $first: Int!, $after: String) {
  repository(owner: $owner, name: $name) {
    pullRequests(first: $first, after: $after, orderBy: {field: CREATED_AT, direction: ASC}) {
      pageInfo { hasNextPage endCursor }
      nodes {
        number
        headRefOid
        reviewThreads(first: 50) {
          nodes {
            path
            isOutdated
            comments(first: 1) {
              nodes { id body createdAt author { login } originalCommit { oid } }
            }
          }
        }
      }
    }
  }
}";

const BLOB_QUERY: &str = "query($owner: String!, $name: String!, $sub: String!, $rev: String!) {
  repository(owner: $owner, name: $name) {
    sub: object(expression: $sub) { ... on Blob { text } }
    rev: object(expression: $rev) { ... on Blob { text } }
  }
}";

fn split_repo(repo: &str) -> Result<(&str, &str), FetchError> {
    repo.split_once('/')
        .filter(|(o, n)| !o.is_empty() && !n.is_empty())
        .ok_or_else(|| FetchError::Schema(format!("repository must be owner/name, got {repo:?}")))
}

pub fn build_pull_request_query(repo: &str, first: usize, after: Option<&str>) -> Result<Value, FetchError> {
    let (owner, name) = split_repo(repo)?;
    Ok(json!({
        "query": PR_QUERY,
        "variables": { "owner": owner, "name": name, "first": first, "after": after },
    }))
}

pub fn build_blob_query(repo: &str, sub_commit: &str, rev_commit: &str, path: &str) -> Result<Value, FetchError> {
    let (owner, name) = split_repo(repo)?;
    Ok(json!({
        "query": BLOB_QUERY,
        "variables": {
            "owner": owner,
            "name": name,
            "sub": format!("{sub_commit}:{path}"),
            "rev": format!("{rev_commit}:{path}"),
        },
    }))
}

fn call(transport: &mut dyn GraphqlTransport, cfg: &FetchConfig, body: &Value) -> Result<Value, FetchError> {
    let resp = transport.post(&cfg.endpoint, &cfg.auth_token, &body.to_string())?;
    match resp.status {
        200..=299 => {}
        401 => return Err(FetchError::Auth(format!("HTTP 401: {}", resp.body.trim()))),
        403 | 429 => {
            return Err(FetchError::RateLimited {
                retry_after_secs: resp.retry_after.unwrap_or(60),
            })
        }
        s => return Err(FetchError::Transport(format!("HTTP {s}: {}", resp.body.trim()))),
    }
    let v: Value = serde_json::from_str(&resp.body).map_err(|e| FetchError::Schema(e.to_string()))?;
    if let Some(errors) = v.get("errors").and_then(Value::as_array) {
        let kinds: Vec<&str> = errors.iter().filter_map(|e| e.get("type").and_then(Value::as_str)).collect();
        if kinds.contains(&"RATE_LIMITED") {
            return Err(FetchError::RateLimited {
                retry_after_secs: resp.retry_after.unwrap_or(60),
            });
        }
        if v.get("data").is_none_or(Value::is_null) {
            return Err(FetchError::Schema(format!("GraphQL errors: {}", Value::Array(errors.clone()))));
        }
    }
    Ok(v)
}

struct Thread<'a> {
    path: &'a str,
    outdated: bool,
    comment_id: &'a str,
    body: &'a str,
    created_at: &'a str,
    author: &'a str,
    commit: &'a str,
}

fn parse_thread(v: &Value) -> Option<Thread<'_>> {
    let c = v.pointer("/comments/nodes/0")?;
    Some(Thread {
        path: v.get("path")?.as_str()?,
        outdated: v.get("isOutdated")?.as_bool()?,
        comment_id: c.get("id")?.as_str()?,
        body: c.get("body")?.as_str()?,
        created_at: c.get("createdAt")?.as_str()?,
        // Deleted accounts come back as a null author.
        author: c.pointer("/author/login").and_then(Value::as_str).unwrap_or("ghost"),
        commit: c.pointer("/originalCommit/oid")?.as_str()?,
    })
}

/// Crawls the repository, appending triplets to `cfg.out_path` and the cursor
/// to `cfg.checkpoint_path` after every page.
pub fn fetch_reviews(transport: &mut dyn GraphqlTransport, cfg: &FetchConfig) -> Result<FetchStats, FetchError> {
    if cfg.auth_token.trim().is_empty() {
        return Err(FetchError::Auth("missing token".into()));
    }
    let mut cursor = fs::read_to_string(&cfg.checkpoint_path)
        .ok()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let mut out = OpenOptions::new().create(true).append(true).open(&cfg.out_path)?;
    let mut stats = FetchStats::default();

    while stats.prs_seen < cfg.max_prs {
        let first = cfg.page_size.min(cfg.max_prs - stats.prs_seen).max(1);
        let page = call(transport, cfg, &build_pull_request_query(&cfg.repo, first, cursor.as_deref())?)?;
        let prs = page
            .pointer("/data/repository/pullRequests")
            .ok_or_else(|| FetchError::Schema("missing data.repository.pullRequests".into()))?;
        let nodes = prs
            .get("nodes")
            .and_then(Value::as_array)
            .ok_or_else(|| FetchError::Schema("missing pullRequests.nodes".into()))?;

        for pr in nodes {
            stats.prs_seen += 1;
            let (Some(number), Some(head)) = (
                pr.get("number").and_then(Value::as_u64),
                pr.get("headRefOid").and_then(Value::as_str),
            ) else {
                stats.schema_errors += 1;
                continue;
            };
            let threads = pr.pointer("/reviewThreads/nodes").and_then(Value::as_array);
            for tv in threads.into_iter().flatten() {
                stats.threads_seen += 1;
                let Some(th) = parse_thread(tv) else {
                    stats.schema_errors += 1;
                    continue;
                };
                if !th.path.ends_with(".java") {
                    stats.skipped_non_java += 1;
                    continue;
                }
                if !th.outdated {
                    stats.skipped_unrevised += 1;
                    continue;
                }
                let blobs = call(transport, cfg, &build_blob_query(&cfg.repo, th.commit, head, th.path)?)?;
                let sub = blobs.pointer("/data/repository/sub/text").and_then(Value::as_str);
                let rev = blobs.pointer("/data/repository/rev/text").and_then(Value::as_str);
                let (Some(sub), Some(rev)) = (sub, rev) else {
                    stats.schema_errors += 1;
                    continue;
                };
                if sub == rev {
                    stats.skipped_unrevised += 1;
                    continue;
                }
                let triplet = ReviewTriplet {
                    id: format!("{}#{}:{}", cfg.repo, number, th.comment_id),
                    repo: cfg.repo.clone(),
                    sub_code: sub.to_string(),
                    rev_code: rev.to_string(),
                    comment: th.body.to_string(),
                    meta: ReviewMeta {
                        timestamp: th.created_at.to_string(),
                        author: th.author.to_string(),
                        pr_number: number,
                    },
                };
                writeln!(out, "{}", to_jsonl_line(&triplet))?;
                stats.written += 1;
            }
        }
        out.flush()?;

        let has_next = prs.pointer("/pageInfo/hasNextPage").and_then(Value::as_bool).unwrap_or(false);
        let end = prs.pointer("/pageInfo/endCursor").and_then(Value::as_str);
        if let Some(end) = end {
            fs::write(&cfg.checkpoint_path, end)?;
            cursor = Some(end.to_string());
        }
        if !has_next || end.is_none() || nodes.is_empty() {
            break;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Replays canned responses and records every request body.
    struct Canned {
        responses: VecDeque<HttpResponse>,
        requests: Vec<Value>,
    }

    impl Canned {
        fn new(bodies: Vec<(u16, Value)>) -> Self {
            Self {
                responses: bodies
                    .into_iter()
                    .map(|(status, b)| HttpResponse {
                        status,
                        retry_after: None,
                        body: b.to_string(),
                    })
                    .collect(),
                requests: Vec::new(),
            }
        }
    }

    impl GraphqlTransport for Canned {
        fn post(&mut self, _endpoint: &str, _token: &str, body: &str) -> Result<HttpResponse, FetchError> {
            self.requests.push(serde_json::from_str(body).unwrap());
            self.responses
                .pop_front()
                .ok_or_else(|| FetchError::Transport("no more canned responses".into()))
        }
    }

    fn cfg(dir: &std::path::Path) -> FetchConfig {
        FetchConfig {
            endpoint: "https://api.github.com/graphql".into(),
            repo: "acme/shop".into(),
            auth_token: "t0ken".into(),
            max_prs: 100,
            page_size: 50,
            out_path: dir.join("raw.jsonl"),
            checkpoint_path: dir.join("cursor.txt"),
        }
    }

    fn thread(path: &str, outdated: bool, id: &str) -> Value {
        json!({
            "path": path,
            "isOutdated": outdated,
            "comments": { "nodes": [{
                "id": id, "body": "Please check for null here.", "createdAt": "2022-05-01T12:00:00Z",
                "author": { "login": "rev1" }, "originalCommit": { "oid": "abc" }
            }]}
        })
    }

    fn page(prs: Value, next: bool, cursor: &str) -> Value {
        json!({ "data": { "repository": { "pullRequests": {
            "pageInfo": { "hasNextPage": next, "endCursor": cursor },
            "nodes": prs
        }}}})
    }

    fn blobs(sub: &str, rev: &str) -> Value {
        json!({ "data": { "repository": { "sub": { "text": sub }, "rev": { "text": rev } } } })
    }

    #[test]
    fn empty_repo_is_success() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Canned::new(vec![(200, page(json!([]), false, "c0"))]);
        let stats = fetch_reviews(&mut t, &cfg(dir.path())).unwrap();
        assert_eq!(stats.written, 0);
        assert_eq!(fs::read_to_string(dir.path().join("raw.jsonl")).unwrap(), "");
    }

    #[test]
    fn revoked_token() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Canned::new(vec![(401, json!({"message": "Bad credentials"}))]);
        assert!(matches!(fetch_reviews(&mut t, &cfg(dir.path())), Err(FetchError::Auth(_))));
        let mut c = cfg(dir.path());
        c.auth_token = String::new();
        assert!(matches!(fetch_reviews(&mut t, &c), Err(FetchError::Auth(_))));
    }

    #[test]
    fn rate_limit_carries_retry_after() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Canned::new(vec![]);
        t.responses.push_back(HttpResponse {
            status: 429,
            retry_after: Some(17),
            body: String::new(),
        });
        assert!(matches!(
            fetch_reviews(&mut t, &cfg(dir.path())),
            Err(FetchError::RateLimited { retry_after_secs: 17 })
        ));
        let mut t = Canned::new(vec![(200, json!({"errors": [{"type": "RATE_LIMITED", "message": "slow down"}]}))]);
        assert!(matches!(fetch_reviews(&mut t, &cfg(dir.path())), Err(FetchError::RateLimited { .. })));
    }

    #[test]
    fn keeps_revised_java_threads_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let prs = json!([
            { "number": 5, "headRefOid": "head5", "reviewThreads": { "nodes": [
                thread("src/A.java", true, "c1"),
                thread("README.md", true, "c2"),
                thread("src/B.java", false, "c3"),
                { "path": "src/C.java" },
                thread("src/D.java", true, "c4"),
            ]}},
            { "headRefOid": "broken" }
        ]);
        let mut t = Canned::new(vec![
            (200, page(prs, true, "cursor-1")),
            (200, blobs("class A { void f() { a(); } }", "class A { void f() { b(); } }")),
            (200, blobs("same", "same")),
            (200, page(json!([]), false, "cursor-2")),
        ]);
        let c = cfg(dir.path());
        let stats = fetch_reviews(&mut t, &c).unwrap();
        assert_eq!(stats.written, 1);
        assert_eq!(stats.skipped_non_java, 1);
        assert_eq!(stats.skipped_unrevised, 2);
        assert_eq!(stats.schema_errors, 2);
        assert_eq!(fs::read_to_string(&c.checkpoint_path).unwrap(), "cursor-2");

        let raw: Vec<ReviewTriplet> = crate::corpus::read_jsonl(&c.out_path).unwrap();
        assert_eq!(raw[0].id, "acme/shop#5:c1");
        assert_eq!(raw[0].meta.pr_number, 5);
        assert_eq!(t.requests[1]["variables"]["sub"], "abc:src/A.java");
        assert_eq!(t.requests[1]["variables"]["rev"], "head5:src/A.java");
        assert_eq!(t.requests[3]["variables"]["after"], "cursor-1");

        // A second run starts from the stored cursor.
        let mut t2 = Canned::new(vec![(200, page(json!([]), false, "cursor-2"))]);
        fetch_reviews(&mut t2, &c).unwrap();
        assert_eq!(t2.requests[0]["variables"]["after"], "cursor-2");
    }

    #[test]
    fn max_prs_limits_page_size() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(dir.path());
        c.max_prs = 3;
        let mut t = Canned::new(vec![(200, page(json!([]), false, "x"))]);
        fetch_reviews(&mut t, &c).unwrap();
        assert_eq!(t.requests[0]["variables"]["first"], 3);
    }
}
