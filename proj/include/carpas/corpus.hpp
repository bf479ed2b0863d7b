#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "carpas/errors.hpp"
#include "carpas/rng.hpp"

namespace carpas::corpus {

inline constexpr int kSchemaVersion = 1;

enum class Domain { ECT, COVID19PC, RWECT };

inline std::string domain_name(Domain d) {
    switch (d) {
        case Domain::ECT: return "ect";
        case Domain::COVID19PC: return "covid19pc";
        case Domain::RWECT: return "rwect";
    }
    throw ConfigError("unknown domain");
}

inline Domain parse_domain(const std::string& s) {
    if (s == "ect") return Domain::ECT;
    if (s == "covid19pc") return Domain::COVID19PC;
    if (s == "rwect") return Domain::RWECT;
    throw ConfigError("unknown domain: " + s);
}

// Trim + case-fold; aspect-name equality is defined over this form.
inline std::string normalize_aspect_name(const std::string& name) {
    std::size_t b = 0, e = name.size();
    while (b < e && std::isspace(static_cast<unsigned char>(name[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(name[e - 1]))) --e;
    std::string out = name.substr(b, e - b);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

struct AspectEntry {
    std::string name;
    std::string summary;

    bool operator==(const AspectEntry&) const = default;
};

struct Document {
    std::string id;
    Domain domain = Domain::ECT;
    std::string text;
    std::vector<AspectEntry> ground_truth;

    bool operator==(const Document&) const = default;

    std::set<std::string> ground_truth_names() const {
        std::set<std::string> names;
        for (const auto& a : ground_truth) names.insert(normalize_aspect_name(a.name));
        return names;
    }
};

// The (correct, incorrect) provided-aspect count pair, shorthand "y2n2".
struct ProvidedAspectSetting {
    int y = 0;
    int n = 0;

    bool operator==(const ProvidedAspectSetting&) const = default;

    std::string render() const {
        return "y" + std::to_string(y) + "n" + std::to_string(n);
    }
};

struct SimulatedInput {
    std::string document_id;
    std::vector<std::string> provided_aspects;
    ProvidedAspectSetting setting;
    int correct_given = 0;
    std::uint64_t seed = 0;
};

struct DatasetSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

inline ProvidedAspectSetting parse_setting(const std::string& token) {
    const auto fail = [&]() -> ParseError {
        return ParseError("malformed setting token: \"" + token +
                          "\" (expected y<digits>n<digits>)");
    };
    if (token.size() < 4 || token[0] != 'y') throw fail();
    std::size_t i = 1;
    std::string ys, ns;
    while (i < token.size() && std::isdigit(static_cast<unsigned char>(token[i]))) ys += token[i++];
    if (ys.empty() || i >= token.size() || token[i] != 'n') throw fail();
    ++i;
    while (i < token.size() && std::isdigit(static_cast<unsigned char>(token[i]))) ns += token[i++];
    if (ns.empty() || i != token.size()) throw fail();
    return ProvidedAspectSetting{std::stoi(ys), std::stoi(ns)};
}

// Builds the noisy provided-aspect list for one document: min(y, |GT|)
// correct names plus n distractors from the default set, shuffled together.
// Deterministic in (doc id, setting, seed).
inline SimulatedInput simulate_provided_aspects(const Document& doc,
                                                const ProvidedAspectSetting& setting,
                                                const std::vector<std::string>& default_set,
                                                std::uint64_t seed) {
    if (setting.y + setting.n <= 0)
        throw ValidationError("setting " + setting.render() + ": y + n must be positive");

    const auto gt_names = doc.ground_truth_names();
    std::vector<std::string> correct_pool, incorrect_pool;
    for (const auto& a : doc.ground_truth) correct_pool.push_back(a.name);
    for (const auto& name : default_set) {
        if (!gt_names.count(normalize_aspect_name(name))) incorrect_pool.push_back(name);
    }
    if (static_cast<int>(incorrect_pool.size()) < setting.n) {
        throw ValidationError("setting " + setting.render() + ": need " +
                              std::to_string(setting.n) + " incorrect aspects but only " +
                              std::to_string(incorrect_pool.size()) + " candidates available");
    }

    Rng rng(derive_seed(seed, doc.id + "|" + setting.render()));
    const int correct_given = std::min(setting.y, static_cast<int>(correct_pool.size()));

    SimulatedInput out;
    out.document_id = doc.id;
    out.setting = setting;
    out.correct_given = correct_given;
    out.seed = seed;
    out.provided_aspects = rng.sample(correct_pool, static_cast<std::size_t>(correct_given));
    for (auto& name : rng.sample(incorrect_pool, static_cast<std::size_t>(setting.n)))
        out.provided_aspects.push_back(std::move(name));
    rng.shuffle(out.provided_aspects);
    return out;
}

inline DatasetSplit split_dataset(const std::vector<Document>& docs, std::size_t train_count,
                                  std::size_t test_count, std::uint64_t seed) {
    if (train_count + test_count != docs.size()) {
        throw ConfigError("split counts " + std::to_string(train_count) + "+" +
                          std::to_string(test_count) + " do not cover corpus of size " +
                          std::to_string(docs.size()));
    }
    std::vector<std::string> ids;
    ids.reserve(docs.size());
    for (const auto& d : docs) ids.push_back(d.id);
    Rng rng(seed);
    rng.shuffle(ids);
    DatasetSplit split;
    split.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train_count));
    split.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(train_count), ids.end());
    return split;
}

// --- JSON serialization -----------------------------------------------------

inline nlohmann::json to_json(const Document& doc) {
    nlohmann::json gt = nlohmann::json::array();
    for (const auto& a : doc.ground_truth) gt.push_back({{"name", a.name}, {"summary", a.summary}});
    return {{"schema_version", kSchemaVersion},
            {"id", doc.id},
            {"domain", domain_name(doc.domain)},
            {"text", doc.text},
            {"ground_truth", gt}};
}

inline Document document_from_json(const nlohmann::json& j) {
    Document doc;
    doc.id = j.at("id").get<std::string>();
    doc.domain = parse_domain(j.at("domain").get<std::string>());
    doc.text = j.at("text").get<std::string>();
    for (const auto& a : j.at("ground_truth")) {
        doc.ground_truth.push_back(
            {a.at("name").get<std::string>(), a.at("summary").get<std::string>()});
    }
    return doc;
}

inline void save_corpus(const std::vector<Document>& docs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    for (const auto& doc : docs) out << to_json(doc).dump() << "\n";
}

inline std::vector<Document> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open: " + path);
    std::vector<Document> docs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            if (j.is_object() && j.value("kind", "") == "manifest") continue;
            docs.push_back(document_from_json(j));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return docs;
}

inline nlohmann::json to_json(const SimulatedInput& sim) {
    return {{"schema_version", kSchemaVersion},
            {"document_id", sim.document_id},
            {"setting", sim.setting.render()},
            {"provided_aspects", sim.provided_aspects},
            {"correct_given", sim.correct_given},
            {"seed", sim.seed}};
}

inline SimulatedInput simulated_input_from_json(const nlohmann::json& j) {
    SimulatedInput sim;
    sim.document_id = j.at("document_id").get<std::string>();
    sim.setting = parse_setting(j.at("setting").get<std::string>());
    sim.provided_aspects = j.at("provided_aspects").get<std::vector<std::string>>();
    sim.correct_given = j.at("correct_given").get<int>();
    sim.seed = j.at("seed").get<std::uint64_t>();
    return sim;
}

inline nlohmann::json to_json(const DatasetSplit& split, std::uint64_t seed) {
    return {{"train", split.train_ids}, {"test", split.test_ids}, {"seed", seed}};
}

} // namespace carpas::corpus
