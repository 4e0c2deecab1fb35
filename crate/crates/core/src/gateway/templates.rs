//! Prompt templates for every chat-completion call in the pipeline.
//!
//! Placeholders use `{name}` syntax and every placeholder must be bound at
//! render time; rendering with a missing binding is an error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template} has unbound placeholder `{name}`")]
    UnboundPlaceholder { template: String, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    TopicSummarization,
    RagOutlineGeneration,
    AttributesExtraction,
    AttributesToQueries,
    QueriesMerging,
    OperationGeneration,
    OutlineRefinement,
    PlanGeneration,
    SectionWriting,
}

impl TemplateId {
    pub const ALL: [TemplateId; 9] = [
        TemplateId::TopicSummarization,
        TemplateId::RagOutlineGeneration,
        TemplateId::AttributesExtraction,
        TemplateId::AttributesToQueries,
        TemplateId::QueriesMerging,
        TemplateId::OperationGeneration,
        TemplateId::OutlineRefinement,
        TemplateId::PlanGeneration,
        TemplateId::SectionWriting,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateId::TopicSummarization => "TopicSummarization",
            TemplateId::RagOutlineGeneration => "RagOutlineGeneration",
            TemplateId::AttributesExtraction => "AttributesExtraction",
            TemplateId::AttributesToQueries => "AttributesToQueries",
            TemplateId::QueriesMerging => "QueriesMerging",
            TemplateId::OperationGeneration => "OperationGeneration",
            TemplateId::OutlineRefinement => "OutlineRefinement",
            TemplateId::PlanGeneration => "PlanGeneration",
            TemplateId::SectionWriting => "SectionWriting",
        }
    }

    pub fn body(&self) -> &'static str {
        match self {
            TemplateId::TopicSummarization => TOPIC_SUMMARIZATION,
            TemplateId::RagOutlineGeneration => RAG_OUTLINE_GENERATION,
            TemplateId::AttributesExtraction => ATTRIBUTES_EXTRACTION,
            TemplateId::AttributesToQueries => ATTRIBUTES_TO_QUERIES,
            TemplateId::QueriesMerging => QUERIES_MERGING,
            TemplateId::OperationGeneration => OPERATION_GENERATION,
            TemplateId::OutlineRefinement => OUTLINE_REFINEMENT,
            TemplateId::PlanGeneration => PLAN_GENERATION,
            TemplateId::SectionWriting => SECTION_WRITING,
        }
    }

    /// Renders the template with the given bindings. Placeholders are
    /// `{lower_snake_case}` tokens; every one must be bound. Extra bindings
    /// are permitted and ignored.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        let body = self.body();
        let mut out = String::with_capacity(body.len());
        let mut rest = body;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open + 1..];
            match tail.find('}') {
                Some(close) if is_placeholder_name(&tail[..close]) => {
                    let name = &tail[..close];
                    match bindings.get(name) {
                        Some(value) => out.push_str(value),
                        None => {
                            return Err(TemplateError::UnboundPlaceholder {
                                template: self.as_str().to_string(),
                                name: name.to_string(),
                            })
                        }
                    }
                    rest = &tail[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = tail;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

const TOPIC_SUMMARIZATION: &str = "\
You are an expert in utilizing search engines effectively. You are currently compiling \
information for a wiki page based on a given topic. Now that you have obtained content \
returned by search engines regarding this topic, please analyze whether there are any \
ambiguities or multiple concepts associated with it. If the topic is clear, generate a \
brief introduction based on the search engine content to clarify the concept for \
subsequent writing, ensuring that the introduction remains within three sentences.

Topic you are discussing about: {topic}

Gathered information from search engines: {search_results}

Now give your response. Make sure that only the introduction is outputted. Do not repeat the input prompt.";

const RAG_OUTLINE_GENERATION: &str = "\
Write an outline for a Wikipedia page.
Here is the format of your writing:
1. Use \"# Title\" to indicate section title, \"## Title\" to indicate subsection title, \
\"### Title\" to indicate subsubsection title, and so on.
2. Do not include other information.
3. Do not include topic name itself in the outline.

The topic you want to write: {topic}

Brief intro of the topic: {brief_intro}

Gathered information from search engines: {search_results}

Outlines of similar topics: {exemplar_outlines}

Write the outline of the topic:";

const ATTRIBUTES_EXTRACTION: &str = "\
Generate attributes for a specified topic with its outline. The generated attributes \
should summarize all information needed to write the wiki page for this topic. Please \
avoid creating complex attributes; ensure that each attribute represents a distinct and \
indivisible aspect.
Here is the format of your response:
1. Generate attributes, each on a new line, ensuring no additional tags or formatting are included.
2. Do not include other information.
3. Do not include topic name itself in the attribute list.

Topic: {topic}

Outline: {outline}

Attributes:";

const ATTRIBUTES_TO_QUERIES: &str = "\
You want to search the info of attributes of the topic using Google search. What do you \
type in the search box? Write the queries you will use in the following format:
- query 1
- query 2
- ...
- query n

Topic you are discussing about: {topic}

The attributes of the topic: {attributes}

Now give your response. Make sure that only queries are output. Do not repeat the input prompt";

const QUERIES_MERGING: &str = "\
I want you to act as a researcher gathering information to compose a wiki article on a \
specific topic. You are now presented with a topic and a list of queries designed to \
gather information for the topic. Your task is to modify or enhance the query list based \
on the relevant topics and their queries. Ensure that the final queries comprehensively \
encompass information beneficial for writing about the topic and are suitable for use in \
Google searches. Do not repeat the input prompt.
Here is the format of your response:
- query 1
- query 2
- ...
- query n

The topic you are discussing about: {topic}

The queries of the topic: {queries}

The similar topics with their queries: {exemplar_queries}

The final response of the queries:";

const OPERATION_GENERATION: &str = "\
You are improving an outline for a wiki page. Now I will give you a draft outline and \
some titles of the searched results. You can do three operations:
add section
delete section
do nothing

Please list the operations you need to do:
-[add section] : section_title
-[delete section] : section_title
If nothing is needed to do, please just generate:
-[do nothing]

Directly write the operations and do not include any other information.

The topic you want to write: {topic}

The draft outline: {outline}

Titles of the searched results: {reference_titles}

Please generate the operations:";

const OUTLINE_REFINEMENT: &str = "\
You are improving an outline for a wiki page. Now I will give you a draft outline and \
some operations like:
-[add section]
-[delete section]
-[do nothing]

Please proceed with the operations for the outline and then refine the overall outline. \
Directly write the refined outline and do not include any other information.

The topic you want to write: {topic}

The draft outline: {outline}

The operations: {operations}

Please generate the refined outline:";

const PLAN_GENERATION: &str = "\
You are an experienced wiki writer. I will provide you with a topic with its outline to \
write. I want you to generate a writing plan for this outline to improve the coherence of \
the article. The plan defines which sections is needed to be generated before the current \
section. Try to choose the sections that can help improve the coherence and fluency of \
the current section. For example, sections like 'Background' don't need extra information \
while sections like 'Introduction' or 'Conclusion' need all other sections. Please just \
generate the plan for the first level sections and make sure that the plan is in a valid \
topological order. If no extra information is needed, generate \"None\". All the needed \
sections are connected by '<-' and make sure that they are all from the first level \
sections of outline. Just output the plan and do not explain.

Here is an example: {example}

Topic: {topic}

Outline: {outline}

Generate the plan of the given topic and outline(do not repeat the outline):";

const SECTION_WRITING: &str = "\
Write a Wikipedia section based on the collected information. Here is the format of your writing:
1. Use \"# Title\" to indicate section title, \"## Title\" to indicate subsection title, \
\"### Title\" to indicate subsubsection title, and so on.
2. Use [1], [2], ..., [n] in line (for example, \"The capital of the United States is \
Washington, D.C.[1][3].\").
You DO NOT need to include a References or Sources section to list the sources at the end.

The collected information: {collected_info}

The topic of the page: {topic}

The other sections of the page: {other_sections}

The section you need to write: {section_title}

The outline of the section: {section_outline}

Write the section with proper inline citations (Start your writing with # section title. \
Don't include the page title or try to write other sections):";

/// Built-in few-shot example for plan generation, in the `<-` line grammar.
pub const DEFAULT_PLAN_EXAMPLE: &str = "\
Topic: Solar Power
Outline:
# Background
# Technology
# Deployment
# Economics
# Environmental Impact
Plan:
Background <- None
Technology <- Background
Deployment <- Technology
Economics <- Deployment
Environmental Impact <- Technology <- Deployment";
