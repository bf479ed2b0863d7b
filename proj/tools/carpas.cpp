// carpas: command-line surface for the aspect-refinement pipeline.
//
// Subcommands: generate, simulate, train-rm, run, eval, report.
// Exit codes: 0 success, 1 runtime/provider failure, 2 usage/config error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "carpas/corpus.hpp"
#include "carpas/datagen.hpp"
#include "carpas/embed.hpp"
#include "carpas/evalharness.hpp"
#include "carpas/http_providers.hpp"
#include "carpas/llm.hpp"
#include "carpas/matching.hpp"
#include "carpas/offline_provider.hpp"
#include "carpas/regressor.hpp"
#include "carpas/strategies.hpp"

namespace {

using nlohmann::json;
using namespace carpas;

std::string config_digest(const json& config) { return fnv1a64_hex(config.dump()); }

// Every JSONL artifact starts with a manifest line carrying the producing
// config and its digest; loaders skip lines with kind == "manifest".
json manifest_line(const json& config) {
    return {{"kind", "manifest"},
            {"schema_version", corpus::kSchemaVersion},
            {"config", config},
            {"config_digest", config_digest(config)}};
}

std::vector<json> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open: " + path);
    std::vector<json> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            if (j.is_object() && j.value("kind", "") == "manifest") continue;
            out.push_back(std::move(j));
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string require_env(const std::string& name) {
    const char* value = std::getenv(name.c_str());
    if (!value || !*value)
        throw ConfigError("environment variable " + name + " is not set");
    return value;
}

struct ProviderOptions {
    std::string chat = "offline";      // offline | http
    std::string chat_base_url = "https://api.openai.com";
    std::string chat_model = "gpt-4o-mini";
    std::string embedder = "mock";     // mock | http
    std::string embed_base_url = "https://api.openai.com";
    std::string embed_model = "text-embedding-3-small";
    std::uint64_t embed_seed = 7;
    std::size_t embed_dim = 64;
    std::string cache_path;
};

void add_provider_flags(CLI::App* cmd, ProviderOptions& opts, bool chat, bool embedding) {
    if (chat) {
        cmd->add_option("--provider", opts.chat, "Chat provider: offline or http")
            ->check(CLI::IsMember({"offline", "http"}));
        cmd->add_option("--chat-base-url", opts.chat_base_url, "Chat endpoint base URL");
        cmd->add_option("--model", opts.chat_model, "Chat model id");
    }
    if (embedding) {
        cmd->add_option("--embed-provider", opts.embedder, "Embedding provider: mock or http")
            ->check(CLI::IsMember({"mock", "http"}));
        cmd->add_option("--embed-base-url", opts.embed_base_url, "Embedding endpoint base URL");
        cmd->add_option("--embed-model", opts.embed_model, "Embedding model id");
        cmd->add_option("--embed-seed", opts.embed_seed, "Mock embedding seed");
        cmd->add_option("--embed-dim", opts.embed_dim, "Mock embedding dimension");
        cmd->add_option("--cache", opts.cache_path, "Embedding cache file");
    }
}

std::unique_ptr<llm::ChatProvider> make_chat_provider(const ProviderOptions& opts) {
    if (opts.chat == "offline") return std::make_unique<offline::OfflineChatProvider>();
    return std::make_unique<http::HttpChatProvider>(opts.chat_base_url, opts.chat_model,
                                                    require_env("CHAT_API_KEY"));
}

std::unique_ptr<embed::EmbeddingProvider> make_embed_provider(const ProviderOptions& opts) {
    if (opts.embedder == "mock")
        return std::make_unique<embed::MockEmbeddingProvider>(opts.embed_seed, opts.embed_dim);
    return std::make_unique<http::HttpEmbeddingProvider>(opts.embed_base_url, opts.embed_model,
                                                         require_env("EMBED_API_KEY"));
}

json provider_config_json(const ProviderOptions& opts) {
    return {{"chat", opts.chat},
            {"chat_model", opts.chat_model},
            {"embedder", opts.embedder},
            {"embed_model", opts.embed_model},
            {"embed_seed", opts.embed_seed},
            {"embed_dim", opts.embed_dim}};
}

// --- generate ---------------------------------------------------------------

int cmd_generate(const std::string& domain_name, int count, std::uint64_t seed,
                 const std::string& out_path, const std::string& report_path,
                 const std::string& templates_dir, const std::string& aspects_file,
                 const ProviderOptions& popts) {
    const auto domain = corpus::parse_domain(domain_name);
    const auto aspect_set = aspects_file.empty()
                                ? datagen::load_default_aspect_set(domain)
                                : datagen::load_aspect_set_file(domain, aspects_file);
    const auto templates = templates_dir.empty() ? datagen::builtin_templates(domain)
                                                 : datagen::load_templates(domain, templates_dir);
    auto chat = make_chat_provider(popts);
    auto embedder = make_embed_provider(popts);
    embed::EmbeddingCache cache =
        popts.cache_path.empty() ? embed::EmbeddingCache() : embed::EmbeddingCache(popts.cache_path);

    llm::GenerationConfig gen_config;
    gen_config.model = popts.chat_model;

    Rng rng(seed);
    std::vector<corpus::Document> docs;
    for (int i = 0; i < count; ++i) {
        const std::string id = domain_name + "-" + std::to_string(seed) + "-" +
                               std::to_string(i);
        const auto aspects = datagen::sample_aspects(aspect_set, rng);
        const auto& tmpl = templates[static_cast<std::size_t>(i) % templates.size()];
        docs.push_back(datagen::generate_document(*chat, tmpl, aspects, domain, id, gen_config));
    }

    const auto result = datagen::dedup(docs, *embedder, datagen::DedupThresholds{}, &cache);

    const json config{{"command", "generate"}, {"domain", domain_name}, {"count", count},
                      {"seed", seed}, {"providers", provider_config_json(popts)}};
    std::ofstream out(out_path);
    if (!out) throw ConfigError("cannot open for writing: " + out_path);
    out << manifest_line(config).dump() << "\n";
    for (const auto& doc : result.kept) out << corpus::to_json(doc).dump() << "\n";

    if (!report_path.empty()) {
        json report = datagen::removal_report_json(result);
        report["config_digest"] = config_digest(config);
        std::ofstream rep(report_path);
        rep << report.dump(2) << "\n";
    }
    std::cout << "generated " << docs.size() << " documents, kept " << result.kept.size()
              << " after dedup\n";
    return 0;
}

// --- simulate ---------------------------------------------------------------

int cmd_simulate(const std::string& corpus_path, const std::string& settings_csv,
                 std::uint64_t seed, const std::string& out_path,
                 const std::string& aspects_file) {
    const auto docs = corpus::load_corpus(corpus_path);
    if (docs.empty()) throw ConfigError("empty corpus: " + corpus_path);

    std::vector<corpus::ProvidedAspectSetting> settings;
    std::stringstream ss(settings_csv);
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (!token.empty()) settings.push_back(corpus::parse_setting(token));
    }
    if (settings.empty()) throw ConfigError("no settings given");

    const json config{{"command", "simulate"}, {"corpus", corpus_path},
                      {"settings", settings_csv}, {"seed", seed}};
    std::ofstream out(out_path);
    if (!out) throw ConfigError("cannot open for writing: " + out_path);
    out << manifest_line(config).dump() << "\n";
    std::size_t emitted = 0;
    for (const auto& doc : docs) {
        const auto set = aspects_file.empty()
                             ? datagen::load_default_aspect_set(doc.domain)
                             : datagen::load_aspect_set_file(doc.domain, aspects_file);
        for (const auto& setting : settings) {
            out << corpus::to_json(
                       corpus::simulate_provided_aspects(doc, setting, set.names, seed))
                       .dump()
                << "\n";
            ++emitted;
        }
    }
    std::cout << "wrote " << emitted << " simulated inputs\n";
    return 0;
}

// --- train-rm ---------------------------------------------------------------

int cmd_train_rm(const std::string& corpus_path, const std::string& split_path, int epochs,
                 double lr, std::uint64_t seed, const std::string& head_out,
                 const std::string& loss_out, const ProviderOptions& popts) {
    if (epochs < 1) throw ConfigError("--epochs must be >= 1");
    const auto docs = corpus::load_corpus(corpus_path);
    auto embedder = make_embed_provider(popts);
    embed::EmbeddingCache cache =
        popts.cache_path.empty() ? embed::EmbeddingCache() : embed::EmbeddingCache(popts.cache_path);

    std::set<std::string> train_ids;
    if (!split_path.empty()) {
        std::ifstream in(split_path);
        if (!in) throw ConfigError("cannot open split: " + split_path);
        json j;
        in >> j;
        for (const auto& id : j.at("train")) train_ids.insert(id.get<std::string>());
    } else {
        for (const auto& doc : docs) train_ids.insert(doc.id);
    }

    std::vector<regressor::TrainingExample> examples;
    for (const auto& doc : docs) {
        if (!train_ids.count(doc.id)) continue;
        examples.push_back({embed::embed_document(*embedder, doc.text, &cache),
                            static_cast<double>(doc.ground_truth.size())});
    }
    if (examples.empty()) throw ConfigError("train split is empty");

    regressor::TrainConfig train_config;
    train_config.epochs = epochs;
    train_config.learning_rate = lr;
    train_config.seed = seed;
    const auto result = regressor::train(examples, train_config);
    regressor::save_head(result.head, head_out);

    const json config{{"command", "train-rm"},      {"corpus", corpus_path},
                      {"epochs", epochs},           {"learning_rate", lr},
                      {"batch_size", train_config.batch_size},
                      {"seed", seed},               {"providers", provider_config_json(popts)}};
    if (!loss_out.empty()) {
        std::ofstream out(loss_out);
        out << json{{"config", config},
                    {"config_digest", config_digest(config)},
                    {"epoch_mean_mae", result.epoch_mean_mae}}
                   .dump(2)
            << "\n";
    }
    std::cout << "trained on " << examples.size() << " examples; final epoch MAE "
              << result.epoch_mean_mae.back() << "\n";
    return 0;
}

// --- run --------------------------------------------------------------------

int cmd_run(const std::string& inputs_path, const std::string& corpus_path,
            const std::string& strategy_name, const std::string& guidance_name,
            const std::string& head_path, const std::string& out_path, int max_iterations,
            int paths, const ProviderOptions& popts) {
    strategies::StrategyKind strategy;
    if (strategy_name == "dp") strategy = strategies::StrategyKind::dp();
    else if (strategy_name == "cot") strategy = strategies::StrategyKind::cot();
    else if (strategy_name == "cotsc") strategy = strategies::StrategyKind::cot_sc(paths);
    else if (strategy_name == "selfrefine")
        strategy = strategies::StrategyKind::self_refine(max_iterations);
    else throw ConfigError("unknown strategy: " + strategy_name);

    strategies::GuidanceMode guidance;
    if (guidance_name == "prelim") guidance = strategies::GuidanceMode::preliminary();
    else if (guidance_name == "llm") guidance = strategies::GuidanceMode::aspect_llm();
    else if (guidance_name == "rm") guidance = strategies::GuidanceMode::aspect_rm();
    else throw ConfigError("unknown guidance: " + guidance_name);

    if (guidance.kind == strategies::GuidanceMode::Kind::AspectRM && head_path.empty())
        throw ConfigError("--guidance rm requires --head");

    const auto docs = corpus::load_corpus(corpus_path);
    std::map<std::string, const corpus::Document*> by_id;
    for (const auto& doc : docs) by_id[doc.id] = &doc;

    auto chat = make_chat_provider(popts);
    auto embedder = make_embed_provider(popts);
    embed::EmbeddingCache cache =
        popts.cache_path.empty() ? embed::EmbeddingCache() : embed::EmbeddingCache(popts.cache_path);
    std::optional<regressor::RegressionHead> head;
    if (!head_path.empty()) head = regressor::load_head(head_path);

    llm::GenerationConfig gen_config;
    gen_config.model = popts.chat_model;

    // Resume: skip (doc, strategy, guidance, setting) keys already present.
    std::set<std::string> done;
    {
        std::ifstream existing(out_path);
        if (existing) {
            for (const auto& j : load_jsonl(out_path)) {
                done.insert(j.at("document_id").get<std::string>() + "|" +
                            j.at("strategy").get<std::string>() + "|" +
                            j.at("guidance").get<std::string>() + "|" +
                            j.value("setting", ""));
            }
        }
    }

    const json config{{"command", "run"},
                      {"strategy", strategy_name},
                      {"guidance", guidance_name},
                      {"max_iterations", max_iterations},
                      {"paths", paths},
                      {"providers", provider_config_json(popts)}};
    std::ofstream out(out_path, done.empty() ? std::ios::trunc : std::ios::app);
    if (!out) throw ConfigError("cannot open for writing: " + out_path);
    if (done.empty()) out << manifest_line(config).dump() << "\n";

    std::size_t executed = 0, skipped = 0;
    for (const auto& j : load_jsonl(inputs_path)) {
        const auto sim = corpus::simulated_input_from_json(j);
        auto it = by_id.find(sim.document_id);
        if (it == by_id.end())
            throw ConfigError("simulated input references unknown document id: " +
                              sim.document_id);
        const std::string key = sim.document_id + "|" + strategy_name + "|" + guidance_name +
                                "|" + sim.setting.render();
        if (done.count(key)) {
            ++skipped;
            continue;
        }
        const auto resolved = strategies::resolve_guidance(
            guidance, *it->second, chat.get(), head ? &*head : nullptr, embedder.get(),
            gen_config, &cache);
        auto run = strategies::run_strategy(*chat, *it->second, sim.provided_aspects, resolved,
                                            strategy, gen_config);
        json record = strategies::to_json(run);
        record["setting"] = sim.setting.render();
        out << record.dump() << "\n";
        ++executed;
    }
    std::cout << "executed " << executed << " runs (" << skipped << " resumed)\n";
    return 0;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const std::string& runs_path, const std::string& corpus_path,
             const std::string& judge_name, const std::string& out_path,
             const ProviderOptions& popts) {
    const auto docs = corpus::load_corpus(corpus_path);
    std::map<std::string, const corpus::Document*> by_id;
    for (const auto& doc : docs) by_id[doc.id] = &doc;

    auto embedder = make_embed_provider(popts);
    embed::EmbeddingCache cache =
        popts.cache_path.empty() ? embed::EmbeddingCache() : embed::EmbeddingCache(popts.cache_path);
    embed::EmbeddingSimilarityScorer scorer(*embedder, &cache);

    std::unique_ptr<llm::ChatProvider> judge;
    if (!judge_name.empty()) {
        ProviderOptions judge_opts = popts;
        judge_opts.chat = judge_name;
        judge = make_chat_provider(judge_opts);
    }
    llm::GenerationConfig gen_config;
    gen_config.model = popts.chat_model;

    const auto run_records = load_jsonl(runs_path);
    std::vector<std::string> unknown;
    for (const auto& j : run_records) {
        const auto id = j.at("document_id").get<std::string>();
        if (!by_id.count(id)) unknown.push_back(id);
    }
    if (!unknown.empty()) {
        std::string msg = "runs reference unknown document ids:";
        for (const auto& id : unknown) msg += " " + id;
        throw ConfigError(msg);
    }

    const json config{{"command", "eval"}, {"runs", runs_path}, {"corpus", corpus_path},
                      {"judge", judge_name}, {"providers", provider_config_json(popts)}};
    std::ofstream out(out_path);
    if (!out) throw ConfigError("cannot open for writing: " + out_path);
    out << manifest_line(config).dump() << "\n";

    for (const auto& j : run_records) {
        const auto run = strategies::run_from_json(j);
        const auto& doc = *by_id.at(run.document_id);
        auto record = evalharness::evaluate_run(run, doc, j.value("setting", ""), scorer);
        if (judge && !run.output.entries.empty()) {
            try {
                record.likert =
                    evalharness::judge_aspects(*judge, doc, run.output.entries, gen_config);
            } catch (const Error&) {
                // Judging failed; Likert fields stay absent.
            }
        }
        out << evalharness::to_json(record).dump() << "\n";
    }
    std::cout << "evaluated " << run_records.size() << " runs\n";
    return 0;
}

// --- report -----------------------------------------------------------------

int cmd_report(const std::string& eval_path, const std::string& group_by_csv,
               const std::string& format, const std::string& out_path,
               const std::string& plot_metric, const std::string& plot_out) {
    std::vector<evalharness::EvalRecord> records;
    for (const auto& j : load_jsonl(eval_path)) records.push_back(evalharness::record_from_json(j));

    std::vector<std::string> group_by;
    std::stringstream ss(group_by_csv);
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (!token.empty()) group_by.push_back(token);
    }
    if (group_by.empty()) throw ConfigError("--group-by must name at least one key");

    const auto report = evalharness::aggregate(records, group_by);
    evalharness::export_report(report, format, out_path);
    if (!plot_metric.empty()) {
        if (plot_out.empty()) throw ConfigError("--plot-metric requires --plot-out");
        evalharness::emit_plot_data(report, plot_metric, plot_out);
    }
    std::cout << "report with " << report.groups.size() << " groups -> " << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CARPAS pipeline: corpus synthesis, aspect-count guidance, strategy runs, "
                 "and evaluation"};
    app.require_subcommand(1);

    ProviderOptions popts;

    // generate
    auto* generate = app.add_subcommand("generate", "Synthesize a corpus and deduplicate it");
    std::string gen_domain = "ect", gen_out, gen_report, gen_templates, gen_aspects;
    int gen_count = 10;
    std::uint64_t gen_seed = 42;
    generate->add_option("--domain", gen_domain, "ect | covid19pc | rwect")->required();
    generate->add_option("--count", gen_count, "Documents to generate")->required();
    generate->add_option("--seed", gen_seed, "RNG seed");
    generate->add_option("--out", gen_out, "Corpus JSONL output")->required();
    generate->add_option("--report-out", gen_report, "Dedup removal report JSON");
    generate->add_option("--templates", gen_templates, "Template directory (templates/<domain>/*.txt)");
    generate->add_option("--aspects-file", gen_aspects, "Default aspect set JSON file");
    add_provider_flags(generate, popts, true, true);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Emit noisy provided-aspect inputs");
    std::string sim_corpus, sim_settings, sim_out, sim_aspects;
    std::uint64_t sim_seed = 42;
    simulate->add_option("--corpus", sim_corpus, "Corpus JSONL")->required();
    simulate->add_option("--settings", sim_settings, "Comma-separated y/n settings, e.g. y2n2,y0n4")
        ->required();
    simulate->add_option("--seed", sim_seed, "RNG seed");
    simulate->add_option("--out", sim_out, "SimulatedInput JSONL output")->required();
    simulate->add_option("--aspects-file", sim_aspects, "Default aspect set JSON file");

    // train-rm
    auto* train = app.add_subcommand("train-rm", "Train the aspect-count regression head");
    std::string tr_corpus, tr_split, tr_head_out, tr_loss_out;
    int tr_epochs = 30;
    double tr_lr = 2e-5;
    std::uint64_t tr_seed = 42;
    train->add_option("--corpus", tr_corpus, "Corpus JSONL")->required();
    train->add_option("--split", tr_split, "Split manifest JSON (train on its train ids)");
    train->add_option("--epochs", tr_epochs, "Training epochs");
    train->add_option("--lr", tr_lr, "Learning rate");
    train->add_option("--seed", tr_seed, "RNG seed");
    train->add_option("--head-out", tr_head_out, "Head file output")->required();
    train->add_option("--loss-out", tr_loss_out, "Loss history JSON output");
    add_provider_flags(train, popts, false, true);

    // run
    auto* run = app.add_subcommand("run", "Execute a strategy x guidance over simulated inputs");
    std::string run_inputs, run_corpus, run_strategy, run_guidance, run_head, run_out;
    int run_max_iter = 16, run_paths = 5;
    run->add_option("--inputs", run_inputs, "SimulatedInput JSONL")->required();
    run->add_option("--corpus", run_corpus, "Corpus JSONL")->required();
    run->add_option("--strategy", run_strategy, "dp | cot | cotsc | selfrefine")->required();
    run->add_option("--guidance", run_guidance, "prelim | llm | rm")->required();
    run->add_option("--head", run_head, "Regression head file (for --guidance rm)");
    run->add_option("--out", run_out, "StrategyRun JSONL output")->required();
    run->add_option("--max-iterations", run_max_iter, "Self-Refine evaluator cap");
    run->add_option("--paths", run_paths, "CoT-SC path count");
    add_provider_flags(run, popts, true, true);

    // eval
    auto* eval = app.add_subcommand("eval", "Score strategy runs against the corpus");
    std::string ev_runs, ev_corpus, ev_judge, ev_out;
    eval->add_option("--runs", ev_runs, "StrategyRun JSONL")->required();
    eval->add_option("--corpus", ev_corpus, "Corpus JSONL")->required();
    eval->add_option("--judge", ev_judge, "Judge provider (offline | http); omit to skip judging");
    eval->add_option("--out", ev_out, "EvalRecord JSONL output")->required();
    add_provider_flags(eval, popts, false, true);

    // report
    auto* report = app.add_subcommand("report", "Aggregate eval records into a report");
    std::string rp_eval, rp_group = "strategy,guidance", rp_format = "json", rp_out,
                rp_plot_metric, rp_plot_out;
    report->add_option("--eval", rp_eval, "EvalRecord JSONL")->required();
    report->add_option("--group-by", rp_group, "Comma-separated keys: strategy,guidance,setting,domain");
    report->add_option("--format", rp_format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
    report->add_option("--out", rp_out, "Report output path")->required();
    report->add_option("--plot-metric", rp_plot_metric, "Metric for plot data");
    report->add_option("--plot-out", rp_plot_out, "Plot data JSON output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed())
            return cmd_generate(gen_domain, gen_count, gen_seed, gen_out, gen_report,
                                gen_templates, gen_aspects, popts);
        if (simulate->parsed())
            return cmd_simulate(sim_corpus, sim_settings, sim_seed, sim_out, sim_aspects);
        if (train->parsed())
            return cmd_train_rm(tr_corpus, tr_split, tr_epochs, tr_lr, tr_seed, tr_head_out,
                                tr_loss_out, popts);
        if (run->parsed())
            return cmd_run(run_inputs, run_corpus, run_strategy, run_guidance, run_head, run_out,
                           run_max_iter, run_paths, popts);
        if (eval->parsed()) return cmd_eval(ev_runs, ev_corpus, ev_judge, ev_out, popts);
        if (report->parsed())
            return cmd_report(rp_eval, rp_group, rp_format, rp_out, rp_plot_metric, rp_plot_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
