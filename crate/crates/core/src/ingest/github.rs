use serde::Deserialize;

use super::{check_http_url, now_rfc3339, send, FetchConfig, IngestError};
use crate::model::{normalize_text, Document, Modality, Provenance};
use crate::segment::SegmentationPolicy;
use crate::transport::{HttpResponse, Transport};

const MAX_COMMENT_PAGES: usize = 20;

/// An issue or pull request on github.com.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadRef {
    pub owner: String,
    pub repo: String,
    pub number: u64,
}

/// Accepts `https://github.com/<owner>/<repo>/(issues|pull)/<n>` with any
/// trailing path, query or fragment.
pub fn parse_thread_url(url: &str) -> Result<ThreadRef, IngestError> {
    let not_thread = || IngestError::NotAThread(url.to_string());
    let parsed = check_http_url(url).map_err(|_| not_thread())?;
    let host = parsed.host_str().unwrap_or_default();
    if host != "github.com" && host != "www.github.com" {
        return Err(not_thread());
    }
    let parts: Vec<&str> = parsed.path_segments().map(|s| s.collect()).unwrap_or_default();
    match parts.as_slice() {
        [owner, repo, kind, number, ..] if matches!(*kind, "issues" | "pull") => Ok(ThreadRef {
            owner: owner.to_string(),
            repo: repo.to_string(),
            number: number.parse().map_err(|_| not_thread())?,
        }),
        _ => Err(not_thread()),
    }
}

#[derive(Deserialize)]
struct User {
    login: String,
}

#[derive(Deserialize)]
struct Issue {
    title: String,
    #[serde(default)]
    body: Option<String>,
    #[serde(default)]
    html_url: Option<String>,
}

#[derive(Deserialize)]
struct Comment {
    user: Option<User>,
    #[serde(default)]
    body: Option<String>,
}

/// Fetches an issue or pull request thread through the REST API. The text is
/// the title, a blank line, the body, then each comment prefixed
/// `«[Cn] author:»`.
pub async fn fetch_github(
    url: &str,
    config: &FetchConfig,
    transport: &dyn Transport,
    policy: &SegmentationPolicy,
) -> Result<Document, IngestError> {
    let thread = parse_thread_url(url)?;
    let base = config.github_api_base.trim_end_matches('/');
    let issue_url = format!("{base}/repos/{}/{}/issues/{}", thread.owner, thread.repo, thread.number);
    let token = config
        .github_token_env_var
        .as_deref()
        .and_then(|var| std::env::var(var).ok())
        .filter(|t| !t.trim().is_empty());

    let get = |u: &str| {
        let mut req = config
            .get(u)
            .header("accept", "application/vnd.github+json")
            .header("x-github-api-version", "2022-11-28");
        if let Some(token) = &token {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        req
    };

    let response = check(send(transport, get(&issue_url), config).await?, &issue_url)?;
    let issue: Issue = serde_json::from_slice(&response.body)
        .map_err(|e| IngestError::FetchFailed(format!("{issue_url}: unexpected response: {e}")))?;

    let mut comments: Vec<Comment> = Vec::new();
    let mut next = Some(format!("{issue_url}/comments?per_page=100"));
    let mut pages = 0;
    while let Some(page_url) = next.take() {
        pages += 1;
        let response = check(send(transport, get(&page_url), config).await?, &page_url)?;
        let page: Vec<Comment> = serde_json::from_slice(&response.body)
            .map_err(|e| IngestError::FetchFailed(format!("{page_url}: unexpected response: {e}")))?;
        comments.extend(page);
        if pages < MAX_COMMENT_PAGES {
            next = response.header("link").and_then(next_link);
        }
    }

    let mut parts = vec![normalize_text(&issue.title)];
    let body = normalize_text(issue.body.as_deref().unwrap_or(""));
    if !body.is_empty() {
        parts.push(body);
    }
    for (i, comment) in comments.iter().enumerate() {
        let author = comment.user.as_ref().map_or("ghost", |u| u.login.as_str());
        let body = normalize_text(comment.body.as_deref().unwrap_or(""));
        parts.push(format!("«[C{}] {author}:» {body}", i + 1).trim_end().to_string());
    }
    let text = parts.join("\n\n");
    config.check_size(text.len())?;
    let origin = issue.html_url.unwrap_or_else(|| url.to_string());
    Ok(
        Document::from_text(&text, Provenance::new(Modality::GithubLink, Some(origin)), policy)?
            .with_metadata("title", normalize_text(&issue.title))
            .with_metadata("comment_count", comments.len().to_string())
            .with_metadata("fetched_at", now_rfc3339()),
    )
}

fn check(response: HttpResponse, url: &str) -> Result<HttpResponse, IngestError> {
    let exhausted = response.header("x-ratelimit-remaining") == Some("0");
    match response.status {
        200..=299 => Ok(response),
        429 => Err(rate_limited(&response)),
        403 if exhausted || response.header("retry-after").is_some() => Err(rate_limited(&response)),
        status => Err(IngestError::FetchFailed(format!("{url}: HTTP {status}"))),
    }
}

fn rate_limited(response: &HttpResponse) -> IngestError {
    let retry_after_secs = response
        .header("retry-after")
        .and_then(|v| v.trim().parse().ok())
        .or_else(|| {
            let reset: i64 = response.header("x-ratelimit-reset")?.trim().parse().ok()?;
            Some((reset - chrono::Utc::now().timestamp()).max(0) as u64)
        });
    IngestError::RateLimited { retry_after_secs }
}

/// Target of the `rel="next"` entry in a `Link` header.
fn next_link(header: &str) -> Option<String> {
    header.split(',').find_map(|part| {
        let (target, params) = part.split_once(';')?;
        params
            .split(';')
            .any(|p| p.trim() == "rel=\"next\"")
            .then(|| target.trim().trim_start_matches('<').trim_end_matches('>').to_string())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::ReplayTransport;

    #[test]
    fn thread_urls() {
        let t = parse_thread_url("https://github.com/rust-lang/rust/issues/123#issuecomment-9").unwrap();
        assert_eq!((t.owner.as_str(), t.repo.as_str(), t.number), ("rust-lang", "rust", 123));
        assert!(parse_thread_url("https://github.com/o/r/pull/7/files").is_ok());
        for bad in [
            "https://example.com/foo",
            "https://github.com/o/r",
            "https://github.com/o/r/issues/abc",
            "https://github.com/o/r/discussions/5",
        ] {
            assert!(matches!(parse_thread_url(bad), Err(IngestError::NotAThread(_))), "{bad}");
        }
    }

    #[test]
    fn link_header() {
        let h = "<https://api.github.com/x?page=2>; rel=\"next\", <https://api.github.com/x?page=5>; rel=\"last\"";
        assert_eq!(next_link(h).as_deref(), Some("https://api.github.com/x?page=2"));
        assert_eq!(next_link("<a>; rel=\"prev\""), None);
    }

    #[tokio::test]
    async fn rate_limit_and_not_found() {
        let mut t = ReplayTransport::new();
        let api = "https://api.github.com/repos/o/r/issues/1";
        t.insert(
            "GET",
            api,
            HttpResponse::new(403, "{}")
                .with_header("x-ratelimit-remaining", "0")
                .with_header("retry-after", "42"),
        );
        let err = fetch_github(
            "https://github.com/o/r/issues/1",
            &FetchConfig::default(),
            &t,
            &SegmentationPolicy::default(),
        )
        .await
        .unwrap_err();
        assert_eq!(err, IngestError::RateLimited { retry_after_secs: Some(42) });

        let err = fetch_github(
            "https://github.com/o/r/issues/2",
            &FetchConfig::default(),
            &t,
            &SegmentationPolicy::default(),
        )
        .await
        .unwrap_err();
        assert!(matches!(err, IngestError::FetchFailed(_)));
    }
}
