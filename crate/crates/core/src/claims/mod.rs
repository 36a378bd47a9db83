//! Claim extraction: factual sentences are rewritten into standalone claims
//! and each claim is verified against its source sentence before anything
//! downstream may use it.

use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Sentence};
use crate::gateway::{Gateway, GatewayError, TemplateName};
use crate::hashing::short_hash;
use crate::normalize::parse_yes_no;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub sentence_id: String,
    pub article_id: String,
    pub text: String,
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_reason: Option<String>,
    /// Empty until the clustering stage embeds verified claims.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embedding: Vec<f64>,
}

/// Decides whether a sentence states a checkable fact. The default
/// implementation asks the configured model; `AcceptAll` exists for
/// pipelines over pre-filtered corpora.
pub trait FactJudge {
    fn is_factual(&self, sentence: &Sentence) -> Result<Option<bool>, GatewayError>;
}

pub struct AcceptAll;

impl FactJudge for AcceptAll {
    fn is_factual(&self, _sentence: &Sentence) -> Result<Option<bool>, GatewayError> {
        Ok(Some(true))
    }
}

/// Prompted classifier. Not part of the main template registry; uses the
/// gateway's raw completion path with the same caching and retries.
pub struct LlmFactJudge<'a> {
    gateway: &'a Gateway,
}

const FACT_JUDGE_SYSTEM: &str = "You are an AI assistant that reads a single sentence from a news article. Classify the sentence as Factual or Opinion. A factual sentence reports a checkable event, statistic, statement, or decision. An opinion sentence expresses a judgment, belief, speculation, or recommendation.\nOutput format: Factual / Opinion";

impl<'a> LlmFactJudge<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        LlmFactJudge { gateway }
    }
}

impl FactJudge for LlmFactJudge<'_> {
    /// `Ok(None)` means the verdict did not parse; the caller counts it and
    /// drops the sentence rather than guessing.
    fn is_factual(&self, sentence: &Sentence) -> Result<Option<bool>, GatewayError> {
        let user = format!("Sentence: {}", sentence.text);
        let resp = self.gateway.complete_text(FACT_JUDGE_SYSTEM, &user)?;
        match crate::normalize::fold(&resp.text).as_str() {
            "factual" => Ok(Some(true)),
            "opinion" => Ok(Some(false)),
            _ => {
                log::warn!(
                    "fact judge verdict did not parse for {}: {:?}",
                    sentence.id,
                    resp.text.chars().take(80).collect::<String>()
                );
                Ok(None)
            }
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassifyReport {
    pub kept: usize,
    pub dropped_opinion: usize,
    pub verdict_parse_misses: usize,
}

/// Keeps only sentences the judge marks factual.
pub fn classify_factual(
    sentences: &[Sentence],
    judge: &dyn FactJudge,
) -> Result<(Vec<Sentence>, ClassifyReport), GatewayError> {
    let mut kept = Vec::new();
    let mut report = ClassifyReport::default();
    for s in sentences {
        match judge.is_factual(s)? {
            Some(true) => kept.push(s.clone()),
            Some(false) => report.dropped_opinion += 1,
            None => report.verdict_parse_misses += 1,
        }
    }
    report.kept = kept.len();
    Ok((kept, report))
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClaimsReport {
    pub generated: usize,
    pub blank: usize,
    pub verified: usize,
    pub failed_verification: usize,
}

/// Rewrites one sentence into a standalone claim. `None` when the model
/// returns a blank claim (nothing checkable could be extracted).
pub fn decontextualize(
    sentence: &Sentence,
    article: &Article,
    gateway: &Gateway,
) -> Result<Option<Claim>, GatewayError> {
    let vars = [
        ("context".to_string(), article.text.clone()),
        ("evidence".to_string(), sentence.text.clone()),
    ]
    .into_iter()
    .collect();
    let resp = gateway.complete(TemplateName::ClaimGeneration, &vars)?;
    let text = resp.text.trim();
    if text.is_empty() {
        return Ok(None);
    }
    Ok(Some(Claim {
        id: format!("clm-{}", short_hash(format!("{}\u{1}{text}", sentence.id))),
        sentence_id: sentence.id.clone(),
        article_id: sentence.article_id.clone(),
        text: text.to_string(),
        verified: false,
        drop_reason: None,
        embedding: Vec::new(),
    }))
}

/// Checks a claim for consistency with its source sentence. Verdicts that do
/// not parse leave the claim unverified, with the raw reply logged.
pub fn verify(claim: &mut Claim, sentence: &Sentence, gateway: &Gateway) -> Result<(), GatewayError> {
    let vars = [
        ("sentence".to_string(), sentence.text.clone()),
        ("claim".to_string(), claim.text.clone()),
    ]
    .into_iter()
    .collect();
    let resp = gateway.complete(TemplateName::ConsistencyCheck, &vars)?;
    match parse_yes_no(&resp.text) {
        Some(true) => {
            claim.verified = true;
            claim.drop_reason = None;
        }
        Some(false) => {
            claim.verified = false;
            claim.drop_reason = Some("consistency_failed".into());
        }
        None => {
            log::warn!(
                "consistency verdict did not parse for {}: {:?}",
                claim.id,
                resp.text.chars().take(80).collect::<String>()
            );
            claim.verified = false;
            claim.drop_reason = Some("consistency_verdict_unparseable".into());
        }
    }
    Ok(())
}

/// Full claim stage over classified sentences: decontextualize then verify.
pub fn build_claims(
    sentences: &[Sentence],
    articles: &[Article],
    gateway: &Gateway,
) -> Result<(Vec<Claim>, ClaimsReport), GatewayError> {
    let by_id: std::collections::BTreeMap<&str, &Article> =
        articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut claims = Vec::new();
    let mut report = ClaimsReport::default();
    for sentence in sentences {
        let Some(article) = by_id.get(sentence.article_id.as_str()) else {
            log::warn!("sentence {} references unknown article", sentence.id);
            continue;
        };
        match decontextualize(sentence, article, gateway)? {
            None => report.blank += 1,
            Some(mut claim) => {
                report.generated += 1;
                verify(&mut claim, sentence, gateway)?;
                if claim.verified {
                    report.verified += 1;
                } else {
                    report.failed_verification += 1;
                }
                claims.push(claim);
            }
        }
    }
    Ok((claims, report))
}
