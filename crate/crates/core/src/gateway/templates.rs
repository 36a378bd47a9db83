//! Prompt templates for every model-facing operation. Placeholders use
//! `{name}` syntax and rendering fails if any placeholder is left unbound.
//! Repeated sections (numbered sentences, triple/claim pairs) are bound as a
//! single pre-formatted block by the caller.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    ClaimGeneration,
    ConsistencyCheck,
    TripleExtraction,
    EquivalenceSearch,
    QaGeneration,
    QaValidation,
    RagAnswer,
    Judge,
}

impl TemplateName {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::ClaimGeneration => "claim_generation",
            TemplateName::ConsistencyCheck => "consistency_check",
            TemplateName::TripleExtraction => "triple_extraction",
            TemplateName::EquivalenceSearch => "equivalence_search",
            TemplateName::QaGeneration => "qa_generation",
            TemplateName::QaValidation => "qa_validation",
            TemplateName::RagAnswer => "rag_answer",
            TemplateName::Judge => "judge",
        }
    }

    pub fn all() -> &'static [TemplateName] {
        &[
            TemplateName::ClaimGeneration,
            TemplateName::ConsistencyCheck,
            TemplateName::TripleExtraction,
            TemplateName::EquivalenceSearch,
            TemplateName::QaGeneration,
            TemplateName::QaValidation,
            TemplateName::RagAnswer,
            TemplateName::Judge,
        ]
    }
}

pub struct PromptTemplate {
    pub name: TemplateName,
    pub system: &'static str,
    pub user: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

const CLAIM_GENERATION: PromptTemplate = PromptTemplate {
    name: TemplateName::ClaimGeneration,
    system: r#"A **claim** is a statement or assertion made within a text that expresses a belief, opinion, or fact. Given the evidence and the original context, please transform the evidence into a claim.

Note:
- The claim should be a clear and concise statement that logically follows from the provided evidence.
- The claim should not contain ambiguous references such as "he," "she," or "it." Use complete names or specify entities where necessary.
- The claim must be a paraphrased version of the evidence, stating the point or fact clearly, without adding extra information.
- If there is no claim that can be drawn from the evidence, please leave the response blank."#,
    user: r#"Context: {context}

Evidence: {evidence}

Claim:"#,
};

const CONSISTENCY_CHECK: PromptTemplate = PromptTemplate {
    name: TemplateName::ConsistencyCheck,
    system: r#"You are an AI assistant that receives pairs of sentences and claims.
Your task is to determine whether each claim is consistent with its corresponding sentence.
Focus solely on whether the claim accurately reflects the core factual content of the sentence.
Ignore style, tone, attitude, or figurative language.
Respond with "Yes" if the claim is factually consistent with the sentence.
Respond with "No" if the claim introduces information that is not supported or is inconsistent.
Output format: Yes / No"#,
    user: r#"Sentence: {sentence}

Claim: {claim}"#,
};

const TRIPLE_EXTRACTION: PromptTemplate = PromptTemplate {
    name: TemplateName::TripleExtraction,
    system: r#"You are an AI assistant that extracts entities and their relationships from a list of sentences. Each sentence has an associated sentence ID.

Your task is to extract triplets from each sentence in the form of:
(source_entity|relationship|target_entity|sentence_id)

Please follow these guidelines:
- An entity can be a person, place, object, concept, or any meaningful noun phrase that participates in a relationship.
- Extract all valid (source_entity|relationship|target_entity) triplets from each sentence.
- Append the sentence ID at the end of each triplet to indicate which sentence it came from.
- If multiple triplets can be extracted from a single sentence, list all of them.
- Do not include duplicate triplets where only the order of source and target is reversed.

IMPORTANT: Resolve pronouns
- Replace pronouns such as he, she, it, they, this, that with the most specific entity mentioned in the sentence.

Output format:
(source_entity|relationship|target_entity|1)
(source_entity|relationship|target_entity|2)
(source_entity|relationship|target_entity|2)
(source_entity|relationship|target_entity|3)"#,
    user: "{sentences}",
};

const EQUIVALENCE_SEARCH: PromptTemplate = PromptTemplate {
    name: TemplateName::EquivalenceSearch,
    system: r#"You are an AI assistant tasked with identifying entities that refer to the same concept based on a given set of triples and their supporting claims.

Each input consists of multiple (source_entity, relationship, target_entity) triples along with their corresponding claim context.
Your task is to group entities that can be considered the same, based on both the triples and their claim contexts.

There are two types of equivalence:
1. Always equivalent: Entities that refer to the same real-world object or concept in any context (e.g., "USA" and "United States").
2. Context-dependent equivalent: Entities that refer to the same thing only in the context of the given triples and claim(s) (e.g., "study co-author" and "microplastics researcher").

Format your output as follows:
Group identical entities together inside square brackets [].
Separate each entity with a vertical bar |.
At the end of each group, append either "always" or "context" (in quotes) to indicate the type of equivalence.
Write one group per line.
If no identical entities are found, output exactly: No identical entities found."#,
    user: r#"Example output:
{examples}

{pairs}"#,
};

const QA_GENERATION: PromptTemplate = PromptTemplate {
    name: TemplateName::QaGeneration,
    system: r#"You are an AI assistant designed to generate multi-hop questions and answers based on triples in the form of (source_entity, relationship, target_entity), along with the associated claims and context.

Your task is to generate a multi-hop question-answer pair based on the given triples. The number of hops should correspond to the number of triples provided. If there are N triples, generate a question that connects all N triples, and use them to form a coherent, logical path for the answer.

Ensure that:
- The question should begin with "Question:" and the answer should begin with "Answer:".
- The question should clearly reference the entities and relationships, and should be designed such that the answer is a concise, **specific entity or short phrase** (e.g., "Microsoft", "United States", "2025", "GLP-1 drugs").
- The answer should **not be abstract** (e.g., "noticeable effects", "study participants", "potential limitations") but should be a **clear entity, specific term, or concise concept** that can be derived directly from the triples.
- The question and answer should be linked with a pipe (|) on the same line.
- Do not add external knowledge or assumptions beyond the given triples.

Notes for clarification:
- For N triples: The question should logically connect all N triples and form a coherent path that leads to a **specific, concrete answer** derived solely from the entities in the triples.
- Make sure the question is specific and each relationship in the chain is clearly traceable to lead to the final answer."#,
    user: r#"Example output format:
{examples}

Triples: {triples}
Claims: {claims}
Context: {chunks}"#,
};

const QA_VALIDATION: PromptTemplate = PromptTemplate {
    name: TemplateName::QaValidation,
    system: r#"You are an AI assistant tasked with reviewing question and answer pairs for ambiguity or vagueness.
Your goal is to evaluate whether each pair is clear and self-contained — that is, whether it can be understood without relying on external or missing context.

Use the following criteria to make your judgment:
The question and answer must be decontextualized — meaning they should be understandable on their own, without requiring additional background information.
If the answer includes vague references such as "other countries," "certain individuals," or "this technology," and the question does not provide enough information to specify what these refer to, then it is considered ambiguous.
Similarly, if the question uses pronouns or context-dependent expressions like "he," "they," "this," or "that" without clearly indicating the referent, the pair is not decontextualized and should be marked as ambiguous.

Based on these criteria:
If the question-answer pair is decontextualized and unambiguous, output True.
If it relies on missing context or includes vague or ambiguous expressions, output False.

Output format:
True / False"#,
    user: r#"Question: {question}
Answer: {answer}"#,
};

const RAG_ANSWER: PromptTemplate = PromptTemplate {
    name: TemplateName::RagAnswer,
    system: r#"You are an AI assistant designed to generate answers for multi-hop questions. Given a question and its corresponding context, use only the information in the context to generate a **specific, concise answer**.

The answer should be **a clear, short entity, concept, or term**, such as "Microsoft", "United States", or "2020". Do not provide detailed explanations or longer sentences.

Do not use any external knowledge or make assumptions. Focus solely on the information provided in the context to answer the question.

Output format:
Answer"#,
    user: r#"Question: {question}
Context: {top_chunks}"#,
};

const JUDGE: PromptTemplate = PromptTemplate {
    name: TemplateName::Judge,
    system: r#"You are an AI assistant that receives a question along with two answers: a ground truth answer and a generated response. Your task is to evaluate whether the generated response is correct or not, and provide a binary judgment (True or False).

Output format:
True/False"#,
    user: r#"Question: {question}
Ground Truth Answer: {gt_answer}
Response: {rag_answer}"#,
};

pub fn template(name: TemplateName) -> &'static PromptTemplate {
    match name {
        TemplateName::ClaimGeneration => &CLAIM_GENERATION,
        TemplateName::ConsistencyCheck => &CONSISTENCY_CHECK,
        TemplateName::TripleExtraction => &TRIPLE_EXTRACTION,
        TemplateName::EquivalenceSearch => &EQUIVALENCE_SEARCH,
        TemplateName::QaGeneration => &QA_GENERATION,
        TemplateName::QaValidation => &QA_VALIDATION,
        TemplateName::RagAnswer => &RAG_ANSWER,
        TemplateName::Judge => &JUDGE,
    }
}

fn substitute(
    template_name: TemplateName,
    text: &str,
    vars: &BTreeMap<String, String>,
) -> Result<String, GatewayError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if !after[..close].is_empty()
                    && after[..close]
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') =>
            {
                let key = &after[..close];
                match vars.get(key) {
                    Some(value) => out.push_str(value),
                    None => {
                        return Err(GatewayError::UnboundPlaceholder {
                            template: template_name.as_str(),
                            placeholder: key.to_string(),
                        })
                    }
                }
                rest = &after[close + 1..];
            }
            _ => {
                // Literal brace, not a placeholder.
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders a template into concrete system and user messages.
pub fn render(
    name: TemplateName,
    vars: &BTreeMap<String, String>,
) -> Result<RenderedPrompt, GatewayError> {
    let t = template(name);
    Ok(RenderedPrompt {
        system: substitute(name, t.system, vars)?,
        user: substitute(name, t.user, vars)?,
    })
}
