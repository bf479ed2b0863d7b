#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "carpas/corpus.hpp"
#include "carpas/embed.hpp"
#include "carpas/errors.hpp"
#include "carpas/llm.hpp"
#include "carpas/rng.hpp"
#include "carpas/textmetrics.hpp"

namespace carpas::datagen {

struct DefaultAspectSet {
    corpus::Domain domain = corpus::Domain::ECT;
    std::vector<std::string> names;
};

// Placeholder vocabularies sized to match the released ones (18 earnings-call
// aspects, 26 press-conference aspects); swap in the official sets if needed.
inline DefaultAspectSet load_default_aspect_set(corpus::Domain domain) {
    static const std::vector<std::string> ect_names = {
        "Revenue", "Gross Margin", "Operating Expenses", "Net Income", "Earnings Per Share",
        "Cash Flow", "Capital Expenditures", "Guidance", "Market Share", "New Product Launches",
        "Research And Development", "Supply Chain", "Customer Demand", "Geographic Performance",
        "Pricing Strategy", "Share Buybacks", "Dividends", "Foundry Customer"};
    static const std::vector<std::string> covid_names = {
        "New Confirmed Cases", "Deaths", "Recovered Cases", "Local Transmission",
        "Imported Cases", "Contact Tracing", "Quarantine Measures", "Border Control",
        "Testing Capacity", "Vaccination Progress", "Vaccine Supply", "Vaccine Side Effects",
        "Hospital Capacity", "Medical Supplies", "Mask Mandates", "Social Distancing Rules",
        "School Closures", "Business Restrictions", "Travel Advisories", "Variant Surveillance",
        "Public Compliance", "Economic Relief", "Frontline Workers", "Outbreak Clusters",
        "Public Hotline", "International Cooperation"};
    switch (domain) {
        case corpus::Domain::ECT:
        case corpus::Domain::RWECT: // real-world ECT shares the earnings-call set
            return {domain, ect_names};
        case corpus::Domain::COVID19PC:
            return {domain, covid_names};
    }
    throw ConfigError("unknown domain for default aspect set");
}

inline DefaultAspectSet load_aspect_set_file(corpus::Domain domain, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open aspect set file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    DefaultAspectSet set{domain, j.at("names").get<std::vector<std::string>>()};
    std::set<std::string> seen;
    for (const auto& n : set.names) {
        if (!seen.insert(corpus::normalize_aspect_name(n)).second)
            throw ValidationError(path + ": duplicate aspect name \"" + n + "\"");
    }
    return set;
}

struct DedupThresholds {
    double cosine = 0.85;
    double jaccard = 0.45;
    double bleu = 0.3;
};

// Uniformly draws an aspect count in [4, 8], then that many names without
// replacement.
inline std::vector<std::string> sample_aspects(const DefaultAspectSet& set, Rng& rng) {
    if (set.names.size() < 8)
        throw ValidationError("default aspect set has " + std::to_string(set.names.size()) +
                              " names; need at least 8");
    const auto count = static_cast<std::size_t>(rng.between(4, 8));
    return rng.sample(set.names, count);
}

// --- transcript templates ---------------------------------------------------

struct TranscriptTemplate {
    std::string id;
    std::string text; // contains [OPENING], [DISCUSSION], [HIGHLIGHTS], [QA] slots
};

inline std::vector<TranscriptTemplate> builtin_templates(corpus::Domain domain) {
    const bool ect = domain != corpus::Domain::COVID19PC;
    const std::string who = ect ? "the management team" : "the command center officials";
    const std::string event = ect ? "earnings call" : "press conference";
    std::vector<TranscriptTemplate> out;
    for (int i = 1; i <= 3; ++i) {
        TranscriptTemplate t;
        t.id = corpus::domain_name(domain) + "-t" + std::to_string(i);
        t.text = "Opening remarks by " + who + " for this " + event + ".\n[OPENING]\n\n"
                 "Main discussion:\n[DISCUSSION]\n\n"
                 "Topic highlights:\n[HIGHLIGHTS]\n\n"
                 "Q&A session:\n[QA]\n";
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<TranscriptTemplate> load_templates(corpus::Domain domain,
                                                      const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root = fs::path(dir) / corpus::domain_name(domain);
    if (!fs::is_directory(root))
        throw ConfigError("template directory not found: " + root.string());
    std::vector<TranscriptTemplate> out;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.path().extension() == ".txt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        out.push_back({f.stem().string(), std::move(text)});
    }
    if (out.empty()) throw ConfigError("no .txt templates under " + root.string());
    return out;
}

// Prompt markers recognized by scripted providers.
inline constexpr const char* kParagraphMarker = "Write a content paragraph";
inline constexpr const char* kSynthesisMarker = "Synthesize the following into a transcript";
inline constexpr const char* kGroundTruthMarker = "Write the ground-truth aspect-based summary";

// Three-stage generation: per-aspect content paragraphs, transcript
// synthesis against a template, then per-paragraph ground-truth summaries.
inline corpus::Document generate_document(llm::ChatProvider& provider,
                                          const TranscriptTemplate& tmpl,
                                          const std::vector<std::string>& aspects,
                                          corpus::Domain domain, const std::string& id,
                                          const llm::GenerationConfig& config,
                                          const embed::RetryPolicy& retry = {}) {
    const auto stage_call = [&](const std::string& stage, const std::string& system,
                                const std::string& user) {
        try {
            return llm::complete_with_retry(
                       provider, {{llm::Role::System, system}, {llm::Role::User, user}}, config,
                       retry)
                .text;
        } catch (const Error& e) {
            throw ProviderError("generation stage \"" + stage + "\" failed for document " + id +
                                ": " + e.what());
        }
    };

    std::vector<std::string> paragraphs;
    for (const auto& aspect : aspects) {
        paragraphs.push_back(stage_call(
            "content", "You write realistic transcript material.",
            std::string(kParagraphMarker) + " with specific and plausible details for the aspect \"" +
                aspect + "\" of a " + corpus::domain_name(domain) + " document (id " + id + ")."));
    }

    std::string synthesis_input;
    for (std::size_t i = 0; i < aspects.size(); ++i)
        synthesis_input += "### " + aspects[i] + "\n" + paragraphs[i] + "\n\n";
    const std::string text = stage_call(
        "synthesis", "You assemble transcripts.",
        std::string(kSynthesisMarker) + " following this template:\n\n" + tmpl.text +
            "\n\nContent paragraphs:\n\n" + synthesis_input);

    corpus::Document doc;
    doc.id = id;
    doc.domain = domain;
    doc.text = text;
    for (std::size_t i = 0; i < aspects.size(); ++i) {
        const std::string summary = stage_call(
            "summary", "You summarize transcript paragraphs.",
            std::string(kGroundTruthMarker) + " for the aspect \"" + aspects[i] +
                "\" given this paragraph:\n\n" + paragraphs[i]);
        doc.ground_truth.push_back({aspects[i], llm::trim(summary)});
    }
    return doc;
}

// --- deduplication ----------------------------------------------------------

struct Removal {
    std::string removed_id;
    std::string kept_id;
    std::vector<std::string> triggers; // metric names at/above threshold
    double cosine = 0.0;
    double jaccard = 0.0;
    double bleu = 0.0;
};

struct DedupResult {
    std::vector<corpus::Document> kept;
    std::vector<Removal> removed;
};

// Pairwise near-duplicate scan. A later document is dropped when ANY of
// cosine / Jaccard / BLEU (max of both directions) reaches its threshold
// against an earlier kept document. Order-preserving, earliest kept.
inline DedupResult dedup(const std::vector<corpus::Document>& docs,
                         embed::EmbeddingProvider& provider, const DedupThresholds& thresholds,
                         embed::EmbeddingCache* cache = nullptr) {
    DedupResult result;
    std::vector<embed::EmbeddingVector> kept_embeddings;
    std::vector<textmetrics::TokenSequence> kept_tokens;

    for (const auto& doc : docs) {
        const auto emb = embed::embed_document(provider, doc.text, cache);
        const auto tokens = textmetrics::tokenize(doc.text);
        bool redundant = false;
        for (std::size_t i = 0; i < result.kept.size() && !redundant; ++i) {
            Removal r;
            r.removed_id = doc.id;
            r.kept_id = result.kept[i].id;
            r.cosine = embed::cosine(emb, kept_embeddings[i]);
            r.jaccard = textmetrics::jaccard(tokens, kept_tokens[i]);
            r.bleu = std::max(textmetrics::bleu(tokens, kept_tokens[i]),
                              textmetrics::bleu(kept_tokens[i], tokens));
            if (r.cosine >= thresholds.cosine) r.triggers.push_back("cosine");
            if (r.jaccard >= thresholds.jaccard) r.triggers.push_back("jaccard");
            if (r.bleu >= thresholds.bleu) r.triggers.push_back("bleu");
            if (!r.triggers.empty()) {
                redundant = true;
                result.removed.push_back(std::move(r));
            }
        }
        if (!redundant) {
            result.kept.push_back(doc);
            kept_embeddings.push_back(emb);
            kept_tokens.push_back(tokens);
        }
    }
    return result;
}

inline nlohmann::json removal_report_json(const DedupResult& result) {
    nlohmann::json removals = nlohmann::json::array();
    for (const auto& r : result.removed) {
        removals.push_back({{"removed_id", r.removed_id},
                            {"kept_id", r.kept_id},
                            {"triggers", r.triggers},
                            {"cosine", r.cosine},
                            {"jaccard", r.jaccard},
                            {"bleu", r.bleu}});
    }
    return {{"schema_version", corpus::kSchemaVersion},
            {"kept", result.kept.size()},
            {"removed", removals}};
}

} // namespace carpas::datagen
