// textveil - batch CLI for guarding text against language-model
// memorization and for running the evaluation harness.
//
// Exit codes: 0 success, 2 invalid configuration, 3 I/O failure,
// 4 planning/processing failure. Logs go to stderr, results to files.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "textveil/remote.hpp"
#include "textveil/textveil.hpp"

namespace fs = std::filesystem;
namespace tv = textveil;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitPlan = 4;

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw tv::IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    if (f.bad()) throw tv::IoError("read failed: " + path);
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw tv::IoError("cannot open for write: " + path);
    f.write(bytes.data(), (std::streamsize)bytes.size());
    if (!f) throw tv::IoError("write failed: " + path);
}

bool is_html_path(const std::string& path) {
    std::string ext = fs::path(path).extension().string();
    for (char& c : ext) c = (char)std::tolower((unsigned char)c);
    return ext == ".html" || ext == ".htm";
}

struct ProtectOptions {
    std::vector<std::string> inputs;
    std::string vocab_path;
    std::string proxy_model_path;
    std::string remote_endpoint;
    std::string out_dir;
    std::string strategy = "tp-oov";
    std::string mode = "chars";
    double budget = 0.4;
    uint64_t seed = 0;
    int min_tokens = 8;
    int beta1 = -1, beta2 = -1;
    int tau = 50, batch_B = 32, cand_k = 16;
    int jobs = 1;
};

struct ProtectResult {
    std::string out_name;
    std::string out_bytes;
    nlohmann::json plan_sidecar;
    nlohmann::json report_sidecar;
};

tv::GuardConfig guard_config_of(const ProtectOptions& opt) {
    tv::GuardConfig cfg;
    cfg.strategy = tv::parse_strategy(opt.strategy);
    cfg.b = opt.budget;
    cfg.seed = opt.seed;
    cfg.invisible_mode = tv::parse_invisible_mode(opt.mode);
    cfg.beta1 = opt.beta1;
    cfg.beta2 = opt.beta2;
    cfg.tau = opt.tau;
    cfg.batch_B = opt.batch_B;
    cfg.cand_k = opt.cand_k;
    cfg.min_tokens = opt.min_tokens;
    cfg.validate();
    return cfg;
}

nlohmann::json guard_config_echo(const tv::GuardConfig& cfg) {
    return {{"strategy", tv::strategy_name(cfg.strategy)},
            {"b", cfg.b},
            {"mode", tv::invisible_mode_name(cfg.invisible_mode)},
            {"seed", cfg.seed},
            {"beta1", cfg.beta1},
            {"beta2", cfg.beta2},
            {"tau", cfg.tau},
            {"batch_B", cfg.batch_B},
            {"cand_k", cfg.cand_k},
            {"min_tokens", cfg.min_tokens}};
}

// Remote proxies can only deliver per-token scores, so only the strategies
// that consume a ScoreVector are available through them.
tv::PerturbationPlan plan_with_remote(const tv::GuardConfig& cfg, const tv::TokenSeq& seq,
                                      const tv::Vocabulary& vocab,
                                      const tv::RemoteScorerConfig& remote) {
    switch (cfg.strategy) {
        case tv::Strategy::NP: {
            tv::PerturbationPlan p;
            p.strategy = tv::Strategy::NP;
            return p;
        }
        case tv::Strategy::UDP: return tv::plan_udp(cfg, seq, vocab);
        case tv::Strategy::UNP: return tv::plan_unp(cfg, seq, vocab);
        case tv::Strategy::TP: return tv::plan_tp(cfg, seq, vocab, tv::remote_score(remote, seq.ids));
        case tv::Strategy::TP_OOV:
            return tv::plan_tp_oov(cfg, seq, vocab, tv::remote_score(remote, seq.ids));
        default:
            throw tv::ConfigError("strategy " + tv::strategy_name(cfg.strategy) +
                                  " needs a local proxy model, not a remote endpoint");
    }
}

ProtectResult protect_one(const std::string& path, const ProtectOptions& opt,
                          const tv::GuardConfig& cfg, const tv::Vocabulary& vocab,
                          const tv::NGramModel* proxy) {
    ProtectResult res;
    std::string name = fs::path(path).filename().string();
    res.out_name = name;
    std::string bytes = read_file(path);

    tv::RemoteScorerConfig remote;
    bool use_remote = !opt.remote_endpoint.empty();
    if (use_remote) {
        remote.endpoint = opt.remote_endpoint;
        remote.supports_token_ids = true;
    }

    nlohmann::json plans = nlohmann::json::array();
    nlohmann::json nodes = nlohmann::json::array();

    if (is_html_path(path)) {
        tv::HtmlDoc doc = tv::HtmlDoc::parse(bytes);
        if (use_remote)
            throw tv::ConfigError("remote proxies are limited to plain-text inputs");
        tv::ProtectedHtml prot = tv::protect_html(doc, cfg, vocab, proxy, name);
        res.out_bytes = prot.doc.serialize();
        for (const auto& ng : prot.nodes) {
            plans.push_back({{"node", ng.addr}, {"plan", ng.plan.to_json()}});
            nodes.push_back({{"node", ng.addr},
                             {"budget",
                              {{"edit_distance_tokens", ng.budget.edit_distance_tokens},
                               {"ratio", ng.budget.ratio},
                               {"insertion_events", ng.budget.insertion_events},
                               {"multiset_ok", ng.budget.multiset_ok}}},
                             {"warnings", ng.plan.warnings}});
        }
        // post-write self-check: the reader must see an unchanged page
        if (tv::visible_text(tv::HtmlDoc::parse(res.out_bytes)) != tv::visible_text(doc))
            throw tv::Error("protect: visible text changed for " + name);
    } else {
        tv::TokenSeq seq = tv::encode(vocab, bytes);
        tv::GuardConfig doc_cfg = cfg;
        doc_cfg.seed = tv::derive_stream(cfg.seed, "guard/" + name);
        tv::PerturbationPlan plan;
        if ((int)seq.size() < cfg.min_tokens) {
            plan.strategy = cfg.strategy;
            plan.warnings.push_back("document below min_tokens; left unguarded");
        } else {
            plan = use_remote ? plan_with_remote(doc_cfg, seq, vocab, remote)
                              : tv::plan_for(doc_cfg, seq, vocab, proxy);
        }
        tv::GuardedText guarded = tv::apply_plan(bytes, seq, plan, cfg.invisible_mode, vocab);
        res.out_bytes = cfg.invisible_mode == tv::InvisibleMode::Chars ? guarded.guarded_plain_text
                                                                       : guarded.guarded_html;
        std::vector<int32_t> view = tv::plan_token_view(vocab, seq, plan, bytes);
        tv::BudgetReport budget = tv::verify_constraints(vocab, seq.ids, view, cfg.b, &plan);
        plans.push_back({{"node", 0}, {"plan", plan.to_json()}});
        nodes.push_back({{"node", 0},
                         {"budget",
                          {{"edit_distance_tokens", budget.edit_distance_tokens},
                           {"ratio", budget.ratio},
                           {"insertion_events", budget.insertion_events},
                           {"multiset_ok", budget.multiset_ok}}},
                         {"warnings", plan.warnings}});
        for (const auto& w : plan.warnings) std::cerr << name << ": warning: " << w << "\n";
    }

    res.plan_sidecar = {{"document", name},
                        {"strategy", opt.strategy},
                        {"mode", opt.mode},
                        {"seed", opt.seed},
                        {"plans", plans}};
    res.report_sidecar = {{"document", name}, {"config", guard_config_echo(cfg)}, {"nodes", nodes}};
    return res;
}

int cmd_protect(const ProtectOptions& opt) {
    tv::GuardConfig cfg = guard_config_of(opt);
    tv::Vocabulary vocab = tv::Vocabulary::load(opt.vocab_path);
    tv::NGramModel proxy_model;
    const tv::NGramModel* proxy = nullptr;
    if (!opt.proxy_model_path.empty()) {
        proxy_model = tv::NGramModel::load(opt.proxy_model_path);
        proxy = &proxy_model;
    }
    bool needs_scores = cfg.strategy != tv::Strategy::NP && cfg.strategy != tv::Strategy::UDP &&
                        cfg.strategy != tv::Strategy::UNP;
    if (needs_scores && !proxy && opt.remote_endpoint.empty())
        throw tv::ConfigError("strategy " + opt.strategy +
                              " requires --proxy-model or --remote-endpoint");

    std::vector<ProtectResult> results(opt.inputs.size());
    std::vector<std::string> errors(opt.inputs.size());
    std::atomic<size_t> next{0};
    int jobs = std::max(1, opt.jobs);
    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= opt.inputs.size()) return;
            try {
                results[i] = protect_one(opt.inputs[i], opt, cfg, vocab, proxy);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    if (jobs == 1 || opt.inputs.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (size_t j = 0; j < std::min((size_t)jobs, opt.inputs.size()); ++j)
            pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (size_t i = 0; i < opt.inputs.size(); ++i)
        if (!errors[i].empty()) throw tv::Error(opt.inputs[i] + ": " + errors[i]);

    for (const auto& r : results) {
        fs::path base = fs::path(opt.out_dir) / r.out_name;
        write_file(base.string(), r.out_bytes);
        fs::path stem = base;
        stem.replace_extension();
        write_file(stem.string() + ".plan.json", r.plan_sidecar.dump(2) + "\n");
        write_file(stem.string() + ".report.json", r.report_sidecar.dump(2) + "\n");
    }
    std::cerr << "protected " << results.size() << " document(s) -> " << opt.out_dir << "\n";
    return kExitOk;
}

std::vector<std::string> corpus_texts(const std::vector<std::string>& inputs) {
    std::vector<std::string> texts;
    for (const auto& path : inputs) {
        if (fs::path(path).extension() == ".jsonl") {
            tv::Corpus c = tv::load_corpus_jsonl(path);
            for (auto& d : c.docs) texts.push_back(std::move(d.text));
        } else {
            texts.push_back(read_file(path));
        }
    }
    return texts;
}

int cmd_train_tokenizer(const std::vector<std::string>& inputs, int merges,
                        const std::string& out) {
    tv::Vocabulary vocab = tv::train_bpe(corpus_texts(inputs), merges);
    vocab.save(out);
    std::cerr << "vocabulary: " << vocab.size() << " tokens (" << vocab.merge_count
              << " merges) -> " << out << "\n";
    return kExitOk;
}

int cmd_train_scorer(const std::vector<std::string>& inputs, const std::string& vocab_path,
                     int order, double alpha, double weight, const std::string& tag,
                     const std::string& out) {
    tv::Vocabulary vocab = tv::Vocabulary::load(vocab_path);
    std::vector<tv::TokenSeq> seqs;
    for (const auto& text : corpus_texts(inputs)) seqs.push_back(tv::encode(vocab, text));
    tv::NGramModel model = tv::fit(seqs, order, (int32_t)vocab.size(), alpha, weight, tag);
    model.save(out);
    std::cerr << "scorer: order " << order << ", " << model.counts.size() << " contexts -> " << out
              << "\n";
    return kExitOk;
}

int cmd_strip(const std::string& input, const std::string& out) {
    write_file(out, tv::strip_guard(read_file(input)));
    return kExitOk;
}

struct EvaluateOptions {
    std::string config_path;
    std::string out_dir = ".";
    std::string strategy, mode, level = "both";
    double budget = -1.0;
    int64_t seed = -1;
    bool backdoor = false;
    int continual = 0;
};

int cmd_evaluate(const EvaluateOptions& opt) {
    tv::ExperimentConfig cfg;
    if (!opt.config_path.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(opt.config_path));
        } catch (const nlohmann::json::exception& e) {
            throw tv::ConfigError(std::string("config: ") + e.what());
        }
        cfg = tv::ExperimentConfig::from_json(j);
    }
    if (!opt.strategy.empty()) cfg.guard.strategy = tv::parse_strategy(opt.strategy);
    if (!opt.mode.empty()) cfg.guard.invisible_mode = tv::parse_invisible_mode(opt.mode);
    if (opt.budget >= 0) cfg.guard.b = opt.budget;
    if (opt.seed >= 0) cfg.seed = (uint64_t)opt.seed;
    if (opt.backdoor) cfg.backdoor = true;
    if (opt.continual > 0) cfg.continual_stages = opt.continual;
    cfg.validate();

    if (cfg.continual_stages > 1) {
        std::vector<tv::ContinualStage> stages = tv::run_continual(cfg);
        nlohmann::json j = nlohmann::json::array();
        for (const auto& s : stages)
            j.push_back({{"stage", s.stage},
                         {"sample", s.sample_level.to_json()},
                         {"user", s.user_level.to_json()}});
        write_file((fs::path(opt.out_dir) / "stages.json").string(),
                   nlohmann::json{{"config", cfg.to_json()}, {"stages", j}}.dump(2) + "\n");
        for (const auto& s : stages)
            std::cerr << "stage " << s.stage << ": max sample AUC " << s.sample_level.max_auc
                      << "\n";
        return kExitOk;
    }

    tv::ExperimentReport rep = tv::run_protection_experiment(cfg);
    write_file((fs::path(opt.out_dir) / "report.json").string(), rep.to_json_string());
    std::string jsonl;
    for (const auto& r : rep.exploitation) jsonl += r.to_json().dump() + "\n";
    write_file((fs::path(opt.out_dir) / "exploitation.jsonl").string(), jsonl);
    for (const auto& level : {std::make_pair("sample", &rep.sample_level),
                              std::make_pair("user", &rep.user_level)}) {
        for (const auto& [name, result] : level.second->by_signal) {
            std::string csv = "fpr,tpr\n";
            for (const auto& [f, t] : result.roc) {
                csv += nlohmann::json(f).dump() + "," + nlohmann::json(t).dump() + "\n";
            }
            write_file((fs::path(opt.out_dir) / ("roc_" + name + "_" + level.first + ".csv"))
                           .string(),
                       csv);
        }
    }
    if (opt.level != "user")
        std::cerr << "sample-level max AUC " << rep.sample_level.max_auc << "\n";
    if (opt.level != "sample")
        std::cerr << "user-level max AUC " << rep.user_level.max_auc << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"textveil: guard web text against LM memorization and evaluate the risk"};
    app.require_subcommand(1);

    ProtectOptions popt;
    auto* protect = app.add_subcommand("protect", "guard documents before release");
    protect->add_option("inputs", popt.inputs, "input files (.html/.htm or plain text)")
        ->required()
        ->check(CLI::ExistingFile);
    protect->add_option("--vocab", popt.vocab_path, "vocabulary JSON")->required();
    protect->add_option("--proxy-model", popt.proxy_model_path, "proxy n-gram model JSON");
    protect->add_option("--remote-endpoint", popt.remote_endpoint,
                        "remote scorer endpoint (score-only strategies)");
    protect->add_option("--strategy", popt.strategy,
                        "np|udp|unp|tp|tp-p|tp-op|tp-oov|tp-oov++");
    protect->add_option("--budget", popt.budget, "perturbation budget b in (0,1]");
    protect->add_option("--mode", popt.mode,
                        "chars|style-display-none|style-offscreen|style-fontzero");
    protect->add_option("--seed", popt.seed, "base seed");
    protect->add_option("--min-tokens", popt.min_tokens, "minimum tokens per eligible node");
    protect->add_option("--beta1", popt.beta1, "objective coefficient beta1");
    protect->add_option("--beta2", popt.beta2, "objective coefficient beta2");
    protect->add_option("--tau", popt.tau, "search iterations");
    protect->add_option("--batch", popt.batch_B, "search batch size");
    protect->add_option("--cand-k", popt.cand_k, "candidates per position");
    protect->add_option("--jobs", popt.jobs, "parallel documents");
    protect->add_option("--out", popt.out_dir, "output directory")->required();

    std::vector<std::string> tok_inputs;
    int tok_merges = 2000;
    std::string tok_out;
    auto* ttok = app.add_subcommand("train-tokenizer", "train a subword vocabulary");
    ttok->add_option("inputs", tok_inputs, "corpus files (.jsonl or plain text)")
        ->required()
        ->check(CLI::ExistingFile);
    ttok->add_option("--merges", tok_merges, "number of byte-pair merges");
    ttok->add_option("--out", tok_out, "output vocabulary JSON")->required();

    std::vector<std::string> sc_inputs;
    std::string sc_vocab, sc_out, sc_tag = "corpus";
    int sc_order = 4;
    double sc_alpha = 0.1, sc_weight = 1.0;
    auto* tsc = app.add_subcommand("train-scorer", "fit an n-gram scorer");
    tsc->add_option("inputs", sc_inputs, "corpus files (.jsonl or plain text)")
        ->required()
        ->check(CLI::ExistingFile);
    tsc->add_option("--vocab", sc_vocab, "vocabulary JSON")->required();
    tsc->add_option("--order", sc_order, "n-gram order");
    tsc->add_option("--alpha", sc_alpha, "add-alpha smoothing");
    tsc->add_option("--weight", sc_weight, "training weight");
    tsc->add_option("--tag", sc_tag, "corpus tag for the training log");
    tsc->add_option("--out", sc_out, "output model JSON")->required();

    EvaluateOptions eopt;
    auto* eval = app.add_subcommand("evaluate", "run a protection experiment");
    eval->add_option("--config", eopt.config_path, "experiment config JSON")
        ->check(CLI::ExistingFile);
    eval->add_option("--out", eopt.out_dir, "output directory");
    eval->add_option("--strategy", eopt.strategy, "override guard strategy");
    eval->add_option("--mode", eopt.mode, "override invisibility mode");
    eval->add_option("--budget", eopt.budget, "override budget b");
    eval->add_option("--seed", eopt.seed, "override master seed");
    eval->add_flag("--backdoor", eopt.backdoor, "warm the target on auxiliary data");
    eval->add_option("--continual", eopt.continual, "run N continual stages");
    eval->add_option("--level", eopt.level, "sample|user|both (summary verbosity)");

    std::string strip_in, strip_out;
    auto* strip = app.add_subcommand("strip", "remove guards (bypass simulation)");
    strip->add_option("input", strip_in, "guarded file")->required()->check(CLI::ExistingFile);
    strip->add_option("--out", strip_out, "output file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (protect->parsed()) return cmd_protect(popt);
        if (ttok->parsed()) return cmd_train_tokenizer(tok_inputs, tok_merges, tok_out);
        if (tsc->parsed())
            return cmd_train_scorer(sc_inputs, sc_vocab, sc_order, sc_alpha, sc_weight, sc_tag,
                                    sc_out);
        if (eval->parsed()) return cmd_evaluate(eopt);
        if (strip->parsed()) return cmd_strip(strip_in, strip_out);
    } catch (const tv::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const tv::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitPlan;
    }
    return kExitConfig;
}
