#pragma once

// End-to-end experiment machinery: synthetic corpus generation, the
// aux/train/non/test split with a protected fraction, protection of the
// marked documents, target training on the crawled form, MIA and
// exploitation reporting, plus the backdoor, continual-training,
// detectability and watermark studies.
//
// What the target trains on is always the crawler view of the published
// text, never the owner's original when protection is on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "textveil/cloak.hpp"
#include "textveil/metrics.hpp"
#include "textveil/mia.hpp"
#include "textveil/optimize.hpp"
#include "textveil/perturb.hpp"
#include "textveil/scorer.hpp"
#include "textveil/tokenizer.hpp"

namespace textveil {

struct Document {
    std::string id;
    std::string user_id;
    std::string text;
};

struct Corpus {
    std::vector<Document> docs;
    std::string provenance;
};

// Seeded order-2 Markov source over a word lexicon with per-document rare
// word injections, so every document carries hard-to-predict tokens and
// trigger identification is non-degenerate. lexicon_seed (defaulting to
// seed) controls the word inventory separately from the document stream, so
// continual stages can draw fresh documents over the same alphabet.
inline Corpus synth_corpus(uint64_t seed, int n_docs, int len_lo, int len_hi, int alphabet_size,
                           int n_users, uint64_t lexicon_seed = 0) {
    if (n_docs <= 0) throw InvalidInputError("synth_corpus: n_docs must be positive");
    if (len_lo < 4 || len_hi < len_lo)
        throw InvalidInputError("synth_corpus: bad document length range");
    if (alphabet_size < 8) throw InvalidInputError("synth_corpus: alphabet too small");
    if (n_users < 1 || n_users > n_docs)
        throw InvalidInputError("synth_corpus: users must be in [1, n_docs]");
    if (lexicon_seed == 0) lexicon_seed = seed;

    SplitMix64 lex_rng(derive_stream(lexicon_seed, "synth/lexicon"));
    SplitMix64 rng(derive_stream(seed, "synth/docs"));
    std::set<std::string> taken;
    std::vector<std::string> lexicon;
    while ((int)lexicon.size() < alphabet_size) {
        size_t len = 2 + lex_rng.below(6);
        std::string w;
        for (size_t k = 0; k < len; ++k) w.push_back((char)('a' + lex_rng.below(26)));
        if (taken.insert(w).second) lexicon.push_back(w);
    }

    // rare-word syllables: consonant+vowel pairs frequent enough in the
    // lexicon text that merge training turns them into multi-character
    // tokens, keeping rare words split-eligible
    auto syllable = [](int v) {
        static const char* cons = "bdgkmpt";
        static const char* vow = "aeiouwy";
        std::string s;
        s.push_back(cons[v % 7]);
        s.push_back(vow[(v / 7) % 7]);
        return s;
    };

    // pool of rare marker words: frequent enough corpus-wide that merge
    // training fuses each into a single multi-character token, rare enough
    // that a proxy flags every occurrence as hard to predict
    std::vector<std::string> rare_pool;
    for (int v = 0; (int)rare_pool.size() < 60 && v < 49 * 49; ++v) {
        int a = v % 49, block = v / 49;
        std::string r = "zq" + syllable(a) + syllable((a + 11 * block + 17) % 49);
        if (taken.insert(r).second) rare_pool.push_back(r);
    }

    Corpus corpus;
    corpus.provenance = "synthetic(seed=" + std::to_string(seed) + ")";
    // heterogeneous user sizes: quotas average n_docs/n_users but spread
    // from 1 to roughly twice the mean
    std::vector<int> user_of(n_docs);
    {
        int avg = std::max(1, n_docs / n_users);
        int user = 0, quota = avg == 1 ? 1 : 1 + (int)rng.below((uint64_t)(2 * avg - 1));
        for (int i = 0; i < n_docs; ++i) {
            if (quota == 0) {
                ++user;
                quota = avg == 1 ? 1 : 1 + (int)rng.below((uint64_t)(2 * avg - 1));
            }
            user_of[i] = user;
            --quota;
        }
    }
    for (int i = 0; i < n_docs; ++i) {
        int length = len_lo + (int)rng.below((uint64_t)(len_hi - len_lo + 1));
        size_t p2 = rng.index(lexicon.size()), p1 = rng.index(lexicon.size());
        // per-document predictability, so clean perplexities spread out the
        // way real writing styles do
        double style = 0.25 + 0.7 * rng.real();
        std::vector<std::string> words;
        words.reserve((size_t)length + 16);
        for (int j = 0; j < length; ++j) {
            // three continuations per context, all frequent: common windows
            // carry no per-document signal, only the rare words do
            uint64_t h = derive_stream(lexicon_seed, lexicon[p2] + "|" + lexicon[p1]);
            double u = rng.real();
            int r = u < style ? 0 : (u < style + 0.6 * (1.0 - style) ? 1 : 2);
            size_t idx = (size_t)((h + (uint64_t)r * 0x9e3779b9ull) % (uint64_t)alphabet_size);
            words.push_back(lexicon[idx]);
            p2 = p1;
            p1 = idx;
        }
        // scatter a few pool rares through the document; the (context, rare)
        // windows are document-specific even though the words are shared.
        // The wide density range keeps the per-document perplexity spread
        // comparable to natural text.
        int n_rare = 2 + (int)rng.below(9);
        for (int k = 0; k < n_rare; ++k) {
            const std::string& rare = rare_pool[rng.index(rare_pool.size())];
            int repeats = 2 + (int)rng.below(5);
            for (int rep = 0; rep < repeats; ++rep)
                words.insert(words.begin() + (long)rng.index(words.size() + 1), rare);
        }
        std::string text;
        for (size_t w = 0; w < words.size(); ++w) {
            if (w) text.push_back(' ');
            text += words[w];
        }
        // web text carries stray zero-width characters; sprinkle a few
        // non-delimiter catalog codepoints so they are not a guard tell
        {
            std::u32string t32 = utf8_to_u32(text);
            std::vector<char32_t> stray = default_catalog().split_chars();
            int n_stray = (int)rng.below(6);
            for (int k = 0; k < n_stray; ++k)
                t32.insert(t32.begin() + (long)rng.index(t32.size() + 1),
                           stray[rng.index(stray.size())]);
            text = u32_to_utf8(t32);
        }
        Document d;
        d.id = "d" + std::to_string(100000 + i).substr(1);
        d.user_id = "u" + std::to_string(100000 + user_of[i]).substr(1);
        d.text = std::move(text);
        corpus.docs.push_back(std::move(d));
    }
    return corpus;
}

inline Corpus load_corpus_jsonl(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open corpus: " + path);
    Corpus corpus;
    corpus.provenance = path;
    std::string line;
    size_t lineno = 0;
    std::set<std::string> seen_ids;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInputError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        Document d;
        d.id = j.at("id").get<std::string>();
        d.user_id = j.value("user_id", std::string());
        d.text = j.at("text").get<std::string>();
        if (d.text.empty())
            throw InvalidInputError(path + ":" + std::to_string(lineno) + ": empty text");
        if (!seen_ids.insert(d.id).second)
            throw InvalidInputError(path + ":" + std::to_string(lineno) + ": duplicate id " + d.id);
        corpus.docs.push_back(std::move(d));
    }
    return corpus;
}

inline void save_corpus_jsonl(const Corpus& corpus, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    for (const auto& d : corpus.docs) {
        nlohmann::json j{{"id", d.id}, {"user_id", d.user_id}, {"text", d.text}};
        f << j.dump() << "\n";
    }
    if (!f) throw IoError("write failed: " + path);
}

struct SplitSpec {
    double aux = 1, train = 4, non = 4, test = 1;
    double r = 0.1; // protected fraction of the training part
    uint64_t seed = 0;
};

struct CorpusSplit {
    std::vector<Document> aux, train, non, test;
    std::vector<char> protected_mask; // aligned with train

    std::vector<const Document*> protected_docs() const {
        std::vector<const Document*> out;
        for (size_t i = 0; i < train.size(); ++i)
            if (protected_mask[i]) out.push_back(&train[i]);
        return out;
    }
    std::vector<const Document*> unprotected_docs() const {
        std::vector<const Document*> out;
        for (size_t i = 0; i < train.size(); ++i)
            if (!protected_mask[i]) out.push_back(&train[i]);
        return out;
    }
};

inline CorpusSplit split_corpus(const Corpus& corpus, const SplitSpec& spec) {
    if (spec.aux < 0 || spec.train <= 0 || spec.non <= 0 || spec.test < 0)
        throw InvalidInputError("split_corpus: ratios must be positive");
    if (!(spec.r > 0.0 && spec.r <= 1.0)) throw InvalidInputError("split_corpus: r must be in (0,1]");
    const size_t n = corpus.docs.size();
    const double total = spec.aux + spec.train + spec.non + spec.test;

    SplitMix64 rng(derive_stream(spec.seed, "split"));
    bool have_users = true;
    for (const auto& d : corpus.docs)
        if (d.user_id.empty()) {
            have_users = false;
            break;
        }

    std::vector<Document> shuffled;
    if (have_users) {
        // user-disjoint: shuffle user groups, keep each group contiguous
        std::vector<std::string> order;
        std::map<std::string, std::vector<const Document*>> groups;
        for (const auto& d : corpus.docs) {
            auto [it, fresh] = groups.try_emplace(d.user_id);
            if (fresh) order.push_back(d.user_id);
            it->second.push_back(&d);
        }
        rng.shuffle(order);
        for (const auto& u : order)
            for (const Document* d : groups[u]) shuffled.push_back(*d);
    } else {
        shuffled = corpus.docs;
        rng.shuffle(shuffled);
    }

    auto boundary = [&](double cum) { return (size_t)std::llround(cum / total * (double)n); };
    size_t b1 = boundary(spec.aux);
    size_t b2 = boundary(spec.aux + spec.train);
    size_t b3 = boundary(spec.aux + spec.train + spec.non);
    if (have_users) {
        // move boundaries forward to the next user-group edge
        auto align = [&](size_t b) {
            while (b > 0 && b < n && shuffled[b].user_id == shuffled[b - 1].user_id) ++b;
            return b;
        };
        b1 = align(b1);
        b2 = align(std::max(b1, b2));
        b3 = align(std::max(b2, b3));
    }
    CorpusSplit out;
    out.aux.assign(shuffled.begin(), shuffled.begin() + (long)b1);
    out.train.assign(shuffled.begin() + (long)b1, shuffled.begin() + (long)b2);
    out.non.assign(shuffled.begin() + (long)b2, shuffled.begin() + (long)b3);
    out.test.assign(shuffled.begin() + (long)b3, shuffled.end());
    if ((spec.aux > 0 && out.aux.empty()) || out.train.empty() || out.non.empty() ||
        (spec.test > 0 && out.test.empty()))
        throw InvalidInputError("split_corpus: corpus too small for the requested ratios");

    size_t n_pro = (size_t)((double)out.train.size() * spec.r + 1e-9);
    if (n_pro < 1) n_pro = 1;
    out.protected_mask.assign(out.train.size(), 0);
    for (size_t idx : rng.sample_without_replacement(out.train.size(), n_pro))
        out.protected_mask[idx] = 1;
    return out;
}

struct ScorerConfig {
    int order = 4;
    double alpha = 0.1;
    int vocab_merges = 250;
    double weight = 1.0;
};

struct MiaConfig {
    double mink_k_frac = 0.2;
    std::vector<double> fpr_grid{0.01};
    int bootstrap_iters = 1000;
    int chunk_window = 64;
};

struct SynthConfig {
    int n_docs = 1000;
    int len_lo = 60;
    int len_hi = 120;
    int alphabet_size = 24;
    int users = 250;
};

struct ExperimentConfig {
    uint64_t seed = 20250811;
    std::string corpus_path; // empty => synthetic
    SynthConfig synth;
    SplitSpec split; // split.seed is derived from the master seed
    GuardConfig guard;
    ScorerConfig scorer;
    MiaConfig mia;
    bool backdoor = false;
    int continual_stages = 1;
    int continual_docs_per_stage = 100;

    void validate() const {
        guard.validate();
        if (scorer.order < 1) throw ConfigError("scorer.order must be >= 1");
        if (scorer.alpha <= 0) throw ConfigError("scorer.alpha must be positive");
        if (scorer.weight <= 0) throw ConfigError("scorer.weight must be positive");
        if (mia.chunk_window < 1) throw ConfigError("mia.chunk_window must be >= 1");
        if (mia.bootstrap_iters < 0) throw ConfigError("mia.bootstrap_iters must be >= 0");
        if (!(mia.mink_k_frac > 0 && mia.mink_k_frac <= 1))
            throw ConfigError("mia.mink_k_frac must be in (0,1]");
        if (continual_stages < 1) throw ConfigError("continual stages must be >= 1");
        if (backdoor && aux_split_absent())
            throw ConfigError("backdoor requires a non-empty auxiliary split");
    }
    bool aux_split_absent() const { return split.aux <= 0.0; }

    nlohmann::json to_json() const {
        return {
            {"seed", seed},
            {"corpus",
             {{"source", corpus_path.empty() ? "synthetic" : "jsonl"},
              {"path", corpus_path},
              {"n_docs", synth.n_docs},
              {"len_lo", synth.len_lo},
              {"len_hi", synth.len_hi},
              {"alphabet", synth.alphabet_size},
              {"users", synth.users}}},
            {"split",
             {{"ratios", {split.aux, split.train, split.non, split.test}}, {"r", split.r}}},
            {"guard",
             {{"strategy", strategy_name(guard.strategy)},
              {"b", guard.b},
              {"mode", invisible_mode_name(guard.invisible_mode)},
              {"beta1", guard.beta1},
              {"beta2", guard.beta2},
              {"tau", guard.tau},
              {"batch_B", guard.batch_B},
              {"cand_k", guard.cand_k},
              {"min_tokens", guard.min_tokens}}},
            {"scorer",
             {{"order", scorer.order},
              {"alpha", scorer.alpha},
              {"vocab_merges", scorer.vocab_merges},
              {"weight", scorer.weight}}},
            {"mia",
             {{"mink_k_frac", mia.mink_k_frac},
              {"fpr_grid", mia.fpr_grid},
              {"bootstrap_iters", mia.bootstrap_iters},
              {"chunk_window", mia.chunk_window}}},
            {"backdoor", backdoor},
            {"continual", {{"stages", continual_stages}, {"docs_per_stage", continual_docs_per_stage}}}};
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig cfg;
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("corpus")) {
            const auto& c = j.at("corpus");
            cfg.corpus_path = c.value("path", std::string());
            if (c.value("source", std::string("synthetic")) == "synthetic") cfg.corpus_path.clear();
            cfg.synth.n_docs = c.value("n_docs", cfg.synth.n_docs);
            cfg.synth.len_lo = c.value("len_lo", cfg.synth.len_lo);
            cfg.synth.len_hi = c.value("len_hi", cfg.synth.len_hi);
            cfg.synth.alphabet_size = c.value("alphabet", cfg.synth.alphabet_size);
            cfg.synth.users = c.value("users", cfg.synth.users);
        }
        if (j.contains("split")) {
            const auto& s = j.at("split");
            if (s.contains("ratios")) {
                auto r = s.at("ratios");
                if (!r.is_array() || r.size() != 4)
                    throw ConfigError("split.ratios must have 4 entries");
                cfg.split.aux = r[0].get<double>();
                cfg.split.train = r[1].get<double>();
                cfg.split.non = r[2].get<double>();
                cfg.split.test = r[3].get<double>();
            }
            cfg.split.r = s.value("r", cfg.split.r);
        }
        if (j.contains("guard")) {
            const auto& g = j.at("guard");
            cfg.guard.strategy = parse_strategy(g.value("strategy", std::string("tp-oov")));
            cfg.guard.b = g.value("b", cfg.guard.b);
            cfg.guard.invisible_mode =
                parse_invisible_mode(g.value("mode", std::string("chars")));
            cfg.guard.beta1 = g.value("beta1", cfg.guard.beta1);
            cfg.guard.beta2 = g.value("beta2", cfg.guard.beta2);
            cfg.guard.tau = g.value("tau", cfg.guard.tau);
            cfg.guard.batch_B = g.value("batch_B", cfg.guard.batch_B);
            cfg.guard.cand_k = g.value("cand_k", cfg.guard.cand_k);
            cfg.guard.min_tokens = g.value("min_tokens", cfg.guard.min_tokens);
        }
        if (j.contains("scorer")) {
            const auto& s = j.at("scorer");
            cfg.scorer.order = s.value("order", cfg.scorer.order);
            cfg.scorer.alpha = s.value("alpha", cfg.scorer.alpha);
            cfg.scorer.vocab_merges = s.value("vocab_merges", cfg.scorer.vocab_merges);
            cfg.scorer.weight = s.value("weight", cfg.scorer.weight);
        }
        if (j.contains("mia")) {
            const auto& m = j.at("mia");
            cfg.mia.mink_k_frac = m.value("mink_k_frac", cfg.mia.mink_k_frac);
            if (m.contains("fpr_grid")) cfg.mia.fpr_grid = m.at("fpr_grid").get<std::vector<double>>();
            cfg.mia.bootstrap_iters = m.value("bootstrap_iters", cfg.mia.bootstrap_iters);
            cfg.mia.chunk_window = m.value("chunk_window", cfg.mia.chunk_window);
        }
        cfg.backdoor = j.value("backdoor", false);
        if (j.contains("continual")) {
            cfg.continual_stages = j.at("continual").value("stages", cfg.continual_stages);
            cfg.continual_docs_per_stage =
                j.at("continual").value("docs_per_stage", cfg.continual_docs_per_stage);
        }
        cfg.validate();
        return cfg;
    }
};

inline std::vector<TokenSeq> chunk_sequence(const TokenSeq& seq, int window) {
    std::vector<TokenSeq> out;
    for (size_t start = 0; start < seq.size(); start += (size_t)window) {
        size_t end = std::min(seq.size(), start + (size_t)window);
        TokenSeq c;
        c.ids.assign(seq.ids.begin() + (long)start, seq.ids.begin() + (long)end);
        c.spans.assign(seq.spans.begin() + (long)start, seq.spans.begin() + (long)end);
        out.push_back(std::move(c));
    }
    return out;
}

struct UtilityBlock {
    double val_loss_target = 0, val_loss_np = 0, val_loss_initial = 0;
    double val_ppl_target = 0, val_ppl_np = 0, val_ppl_initial = 0;
    double train_loss_target = 0;
    double mem_loss_target = 0, mem_loss_np = 0;

    nlohmann::json to_json() const {
        return {{"val_loss", {{"target", val_loss_target}, {"np", val_loss_np}, {"initial", val_loss_initial}}},
                {"val_ppl", {{"target", val_ppl_target}, {"np", val_ppl_np}, {"initial", val_ppl_initial}}},
                {"train_loss", train_loss_target},
                {"mem_loss", {{"target", mem_loss_target}, {"np", mem_loss_np}}}};
    }
};

inline double mean_doc_loss(const NGramModel& model, const std::vector<TokenSeq>& seqs) {
    if (seqs.empty()) throw InvalidInputError("mean_doc_loss: empty set");
    double sum = 0.0;
    for (const auto& s : seqs) sum += sequence_loss(score_sequence(model, s));
    return sum / (double)seqs.size();
}

inline UtilityBlock utility_report(const NGramModel& target, const NGramModel& baseline_np,
                                   const NGramModel& initial,
                                   const std::vector<TokenSeq>& test_set,
                                   const std::vector<TokenSeq>& protected_originals,
                                   const std::vector<TokenSeq>& train_as_trained) {
    if (target.vocab_size != baseline_np.vocab_size || target.vocab_size != initial.vocab_size)
        throw VocabMismatchError("utility_report: models disagree on vocabulary size");
    UtilityBlock u;
    u.val_loss_target = mean_doc_loss(target, test_set);
    u.val_loss_np = mean_doc_loss(baseline_np, test_set);
    u.val_loss_initial = mean_doc_loss(initial, test_set);
    u.val_ppl_target = std::exp(u.val_loss_target);
    u.val_ppl_np = std::exp(u.val_loss_np);
    u.val_ppl_initial = std::exp(u.val_loss_initial);
    u.train_loss_target = mean_doc_loss(target, train_as_trained);
    u.mem_loss_target = mean_doc_loss(target, protected_originals);
    u.mem_loss_np = mean_doc_loss(baseline_np, protected_originals);
    return u;
}

struct LevelResults {
    std::map<std::string, MiaResult> by_signal;
    double max_auc = 0.0;

    double max_tpr_at(double fpr) const {
        double best = 0.0;
        for (const auto& [name, r] : by_signal) {
            auto it = r.tpr_at_fpr.find(fpr);
            if (it != r.tpr_at_fpr.end()) best = std::max(best, it->second);
        }
        return best;
    }
    nlohmann::json to_json() const {
        nlohmann::json sj = nlohmann::json::object();
        for (const auto& [name, r] : by_signal) sj[name] = r.to_json();
        return {{"signals", sj}, {"max_auc", max_auc}};
    }
};

struct ExperimentState {
    ExperimentConfig cfg;
    Corpus corpus;
    CorpusSplit split;
    Vocabulary vocab;
    std::vector<TokenSeq> aux_seqs, non_seqs, test_seqs;
    std::vector<TokenSeq> train_original_seqs; // aligned with split.train
    std::vector<TokenSeq> train_as_trained;    // crawled form for protected docs
    std::vector<GuardedText> guards;           // aligned with protected docs order
    std::vector<const Document*> protected_ptrs;
    std::vector<const Document*> nonmember_sample;
    NGramModel initial, ref_mia, exposure_ref, target, np_target;
    std::string exposure_ref_kind;
    int plan_warning_count = 0;
};

struct ExperimentReport {
    nlohmann::json config_echo;
    std::string compressor;
    LevelResults sample_level, user_level;
    std::vector<ExploitationRecord> exploitation;
    std::optional<SkewNormalFit> population_fit;
    std::string population_fit_error;
    UtilityBlock utility;
    int plan_warning_count = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["config"] = config_echo;
        j["compressor"] = compressor;
        j["mia"] = {{"sample", sample_level.to_json()}, {"user", user_level.to_json()}};
        nlohmann::json ex = nlohmann::json::array();
        for (const auto& r : exploitation) ex.push_back(r.to_json());
        j["exploitation"] = ex;
        if (population_fit) {
            j["population_fit"] = {{"xi", population_fit->xi},     {"omega", population_fit->omega},
                                   {"alpha", population_fit->alpha}, {"ks_stat", population_fit->ks_stat},
                                   {"ks_p", population_fit->ks_p},   {"valid", population_fit->valid},
                                   {"n", population_fit->sample_n}};
        } else {
            j["population_fit"] = {{"error", population_fit_error}};
        }
        j["utility"] = utility.to_json();
        j["plan_warnings"] = plan_warning_count;
        return j;
    }
    std::string to_json_string() const { return to_json().dump(2) + "\n"; }
};

// Corpus plus trained vocabulary; a pure function of the config's seed,
// corpus parameters and merge count, so callers running several strategies
// on the same pinned corpus can build it once and share it.
struct PreparedCorpus {
    Corpus corpus;
    Vocabulary vocab;
};

inline PreparedCorpus prepare_corpus(const ExperimentConfig& cfg) {
    PreparedCorpus prep;
    prep.corpus = cfg.corpus_path.empty()
                      ? synth_corpus(derive_stream(cfg.seed, "corpus"), cfg.synth.n_docs,
                                     cfg.synth.len_lo, cfg.synth.len_hi, cfg.synth.alphabet_size,
                                     cfg.synth.users)
                      : load_corpus_jsonl(cfg.corpus_path);
    std::vector<std::string> texts;
    texts.reserve(prep.corpus.docs.size());
    for (const auto& d : prep.corpus.docs) texts.push_back(d.text);
    prep.vocab = train_bpe(texts, cfg.scorer.vocab_merges);
    return prep;
}

inline ExperimentState prepare_experiment(const ExperimentConfig& cfg_in,
                                          const PreparedCorpus* shared = nullptr) {
    ExperimentConfig cfg = cfg_in;
    cfg.validate();
    ExperimentState st;
    st.cfg = cfg;

    if (shared) {
        st.corpus = shared->corpus;
        st.vocab = shared->vocab;
    } else {
        PreparedCorpus prep = prepare_corpus(cfg);
        st.corpus = std::move(prep.corpus);
        st.vocab = std::move(prep.vocab);
    }

    SplitSpec split_spec = cfg.split;
    split_spec.seed = derive_stream(cfg.seed, "split");
    st.split = split_corpus(st.corpus, split_spec);

    auto encode_all = [&](const std::vector<Document>& docs) {
        std::vector<TokenSeq> out;
        out.reserve(docs.size());
        for (const auto& d : docs) out.push_back(encode(st.vocab, d.text));
        return out;
    };
    st.aux_seqs = encode_all(st.split.aux);
    st.non_seqs = encode_all(st.split.non);
    st.test_seqs = encode_all(st.split.test);
    st.train_original_seqs = encode_all(st.split.train);

    const int order = cfg.scorer.order;
    const double alpha = cfg.scorer.alpha;
    const int32_t V = (int32_t)st.vocab.size();

    st.initial.order = order;
    st.initial.alpha = alpha;
    st.initial.vocab_size = V;

    if (cfg.backdoor) {
        // adversarial warm-up: two extra passes over the auxiliary data, and
        // the warmed model doubles as the MIA reference
        st.ref_mia = fit(st.aux_seqs, order, V, alpha, 2.0, "D_aux_warmup");
    } else {
        st.ref_mia = st.aux_seqs.empty()
                         ? st.initial
                         : fit(st.aux_seqs, order, V, alpha, 1.0, "D_aux");
    }
    const NGramModel& proxy = st.ref_mia; // trigger identification proxy

    // Protect the marked documents; the crawler view of the guarded form is
    // what enters training.
    st.protected_ptrs = st.split.protected_docs();
    st.train_as_trained = st.train_original_seqs;
    for (size_t i = 0; i < st.split.train.size(); ++i) {
        if (!st.split.protected_mask[i]) continue;
        const Document& doc = st.split.train[i];
        GuardConfig gc = cfg.guard;
        gc.seed = derive_stream(cfg.seed, "guard/" + doc.id);
        PerturbationPlan plan = plan_for(gc, st.train_original_seqs[i], st.vocab, &proxy);
        GuardedText guard = apply_plan(doc.text, st.train_original_seqs[i], plan,
                                       cfg.guard.invisible_mode, st.vocab);
        st.plan_warning_count += (int)plan.warnings.size();
        st.train_as_trained[i] = encode(st.vocab, guard.guarded_plain_text);
        st.guards.push_back(std::move(guard));
    }

    auto train_target = [&](const std::vector<TokenSeq>& corpus, const char* tag) {
        if (cfg.backdoor) {
            NGramModel m = st.ref_mia;
            continual_update(m, corpus, cfg.scorer.weight, tag);
            return m;
        }
        return fit(corpus, order, V, alpha, cfg.scorer.weight, tag);
    };
    st.target = train_target(st.train_as_trained, "D_train");
    if (cfg.guard.strategy == Strategy::NP) {
        st.np_target = st.target;
    } else {
        st.np_target = train_target(st.train_original_seqs, "D_train_np");
    }

    // Exposure reference excludes the protected portion; if everything is
    // protected, fall back to the initial (or warmed) model.
    std::vector<TokenSeq> unprotected;
    for (size_t i = 0; i < st.split.train.size(); ++i)
        if (!st.split.protected_mask[i]) unprotected.push_back(st.train_original_seqs[i]);
    if (unprotected.empty()) {
        st.exposure_ref = cfg.backdoor ? st.ref_mia : st.initial;
        st.exposure_ref_kind = "initial";
    } else {
        st.exposure_ref = train_target(unprotected, "D_minus_Dpro");
        st.exposure_ref_kind = "approx_excl_protected";
    }

    // Balanced non-member sample for MIA.
    SplitMix64 rng(derive_stream(cfg.seed, "nonmember_sample"));
    size_t want = std::min(st.split.non.size(), st.protected_ptrs.size());
    std::vector<size_t> pick = rng.sample_without_replacement(st.split.non.size(), want);
    std::sort(pick.begin(), pick.end());
    for (size_t idx : pick) st.nonmember_sample.push_back(&st.split.non[idx]);
    return st;
}

namespace detail {

inline std::vector<SignalRecord> signal_records(const ExperimentState& st,
                                                const std::vector<const Document*>& docs,
                                                const NGramModel& target,
                                                const NGramModel& reference) {
    std::vector<SignalRecord> out;
    for (const Document* doc : docs) {
        TokenSeq seq = encode(st.vocab, doc->text);
        std::vector<TokenSeq> chunks = chunk_sequence(seq, st.cfg.mia.chunk_window);
        for (size_t c = 0; c < chunks.size(); ++c) {
            ScoreVector ts = score_sequence(target, chunks[c]);
            ScoreVector rs = score_sequence(reference, chunks[c]);
            SignalRecord rec;
            rec.instance_id = doc->id + "#" + std::to_string(c);
            rec.user_id = doc->user_id.empty() ? doc->id : doc->user_id;
            rec.signals["loss"] = signal_loss(ts);
            rec.signals["loss_ref"] = signal_loss_ref(ts, rs);
            rec.signals["mink"] = signal_mink(ts, st.cfg.mia.mink_k_frac);
            rec.signals["zlib"] = signal_zlib(ts, decode(st.vocab, chunks[c]));
            out.push_back(std::move(rec));
        }
    }
    return out;
}

inline LevelResults eval_level(const std::vector<SignalRecord>& members,
                               const std::vector<SignalRecord>& nonmembers,
                               const MiaConfig& mia, uint64_t seed, const std::string& tag) {
    LevelResults out;
    static const char* kSignals[] = {"loss", "loss_ref", "mink", "zlib"};
    for (const char* name : kSignals) {
        std::vector<double> m, n;
        for (const auto& r : members) {
            auto it = r.signals.find(name);
            if (it != r.signals.end()) m.push_back(it->second);
        }
        for (const auto& r : nonmembers) {
            auto it = r.signals.find(name);
            if (it != r.signals.end()) n.push_back(it->second);
        }
        if (m.empty() || n.empty()) continue; // signal unavailable (no reference)
        MiaResult res = evaluate_signal(name, m, n, mia.fpr_grid, mia.bootstrap_iters,
                                        derive_stream(seed, tag + "/" + name));
        out.max_auc = std::max(out.max_auc, res.auc);
        out.by_signal.emplace(name, std::move(res));
    }
    return out;
}

} // namespace detail

// MIA + exploitation + utility for an already-prepared experiment, scored
// against the given target (the state's target by default; continual stages
// pass updated models).
inline ExperimentReport evaluate_experiment(const ExperimentState& st,
                                            const NGramModel* target_override = nullptr) {
    const NGramModel& target = target_override ? *target_override : st.target;
    ExperimentReport rep;
    rep.config_echo = st.cfg.to_json();
    rep.compressor = kCompressorId;
    rep.plan_warning_count = st.plan_warning_count;

    std::vector<SignalRecord> member_recs =
        detail::signal_records(st, st.protected_ptrs, target, st.ref_mia);
    std::vector<SignalRecord> non_recs =
        detail::signal_records(st, st.nonmember_sample, target, st.ref_mia);

    rep.sample_level = detail::eval_level(member_recs, non_recs, st.cfg.mia,
                                          derive_stream(st.cfg.seed, "mia/sample"), "sample");
    rep.user_level = detail::eval_level(aggregate_user_level(member_recs),
                                        aggregate_user_level(non_recs), st.cfg.mia,
                                        derive_stream(st.cfg.seed, "mia/user"), "user");

    // Exposure population: the scored non-member split (disjoint from training).
    std::vector<double> pop_target, pop_ref;
    pop_target.reserve(st.non_seqs.size());
    pop_ref.reserve(st.non_seqs.size());
    for (const auto& s : st.non_seqs) {
        pop_target.push_back(sequence_loss(score_sequence(target, s)));
        pop_ref.push_back(sequence_loss(score_sequence(st.exposure_ref, s)));
    }
    try {
        rep.population_fit = fit_skew_normal(pop_target);
    } catch (const Error& e) {
        rep.population_fit_error = e.what();
    }
    for (size_t i = 0; i < st.protected_ptrs.size(); ++i) {
        const Document* doc = st.protected_ptrs[i];
        TokenSeq seq = encode(st.vocab, doc->text);
        double px_t = sequence_loss(score_sequence(target, seq));
        double px_r = sequence_loss(score_sequence(st.exposure_ref, seq));
        ExploitationRecord rec;
        rec.id = doc->id;
        rec.px = px_t;
        rec.e_target = rank_exposure(px_t, pop_target);
        rec.e_ref = rank_exposure(px_r, pop_ref);
        rec.ex = exploitation(rec.e_target, rec.e_ref);
        rec.ref_kind = st.exposure_ref_kind;
        rep.exploitation.push_back(std::move(rec));
    }

    std::vector<TokenSeq> protected_originals;
    for (size_t i = 0; i < st.split.train.size(); ++i)
        if (st.split.protected_mask[i]) protected_originals.push_back(st.train_original_seqs[i]);
    rep.utility = utility_report(target, st.np_target, st.initial, st.test_seqs,
                                 protected_originals, st.train_as_trained);
    return rep;
}

inline ExperimentReport run_protection_experiment(const ExperimentConfig& cfg,
                                                  const PreparedCorpus* shared = nullptr) {
    ExperimentState st = prepare_experiment(cfg, shared);
    return evaluate_experiment(st);
}

inline ExperimentReport run_backdoor(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.backdoor = true;
    cfg.validate();
    return run_protection_experiment(cfg);
}

struct ContinualStage {
    int stage = 0;
    LevelResults sample_level, user_level;
};

inline std::vector<ContinualStage> run_continual(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    if (cfg.continual_stages < 2)
        throw ConfigError("run_continual: needs at least 2 stages");
    if (!cfg.corpus_path.empty())
        throw InvalidInputError(
            "run_continual: external corpora carry no spare documents for continual stages");
    ExperimentState st = prepare_experiment(cfg);
    std::vector<ContinualStage> out;

    NGramModel model = st.target;
    for (int stage = 0; stage < cfg.continual_stages; ++stage) {
        if (stage > 0) {
            // fresh disjoint documents over the same language as the base corpus
            Corpus fresh = synth_corpus(derive_stream(cfg.seed, "continual/" + std::to_string(stage)),
                                        cfg.continual_docs_per_stage, cfg.synth.len_lo,
                                        cfg.synth.len_hi, cfg.synth.alphabet_size,
                                        std::max(1, cfg.continual_docs_per_stage / 4),
                                        derive_stream(cfg.seed, "corpus"));
            std::vector<TokenSeq> fresh_seqs;
            fresh_seqs.reserve(fresh.docs.size());
            for (const auto& d : fresh.docs) fresh_seqs.push_back(encode(st.vocab, d.text));
            continual_update(model, fresh_seqs, cfg.scorer.weight,
                             "D_new_stage" + std::to_string(stage));
        }
        ExperimentReport rep = evaluate_experiment(st, &model);
        ContinualStage cs;
        cs.stage = stage;
        cs.sample_level = std::move(rep.sample_level);
        cs.user_level = std::move(rep.user_level);
        out.push_back(std::move(cs));
    }
    return out;
}

struct DetectabilityReport {
    double ks_distance = 0.0;
    double detector_auc = 0.5;
};

// Two-sample comparison of per-text log-perplexities: KS distance between
// the guarded and clean populations, and the AUC of a perplexity-threshold
// detector (larger px flagged as guarded).
inline DetectabilityReport detectability(const std::vector<std::string>& guarded_texts,
                                         const std::vector<std::string>& clean_texts,
                                         const Vocabulary& vocab, const NGramModel& scorer) {
    if (guarded_texts.empty() || clean_texts.empty())
        throw InvalidInputError("detectability: both text sets must be non-empty");
    auto px_of = [&](const std::vector<std::string>& texts) {
        std::vector<double> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(sequence_loss(score_sequence(scorer, encode(vocab, t))));
        return out;
    };
    std::vector<double> g = px_of(guarded_texts), c = px_of(clean_texts);
    DetectabilityReport rep;
    rep.detector_auc = auc(g, c);
    std::sort(g.begin(), g.end());
    std::sort(c.begin(), c.end());
    size_t i = 0, j = 0;
    double d = 0.0;
    while (i < g.size() || j < c.size()) {
        double x = i < g.size() && (j >= c.size() || g[i] <= c[j]) ? g[i] : c[j];
        while (i < g.size() && g[i] == x) ++i;
        while (j < c.size() && c[j] == x) ++j;
        d = std::max(d, std::fabs((double)i / (double)g.size() - (double)j / (double)c.size()));
    }
    rep.ks_distance = d;
    return rep;
}

struct WatermarkResult {
    double z = 0.0;
    double p = 0.5;
    double observed = 0.0;
    double null_mean = 0.0;
    double null_std = 0.0;
    int n_null = 0;
};

namespace detail {

// Mean target NLL over the perturbation tokens of a set of guarded samples.
// A token is a perturbation token when its span covers inserted codepoints.
inline double watermark_statistic(const NGramModel& target, const Vocabulary& vocab,
                                  const std::vector<GuardedText>& guards, bool with_context) {
    double sum = 0.0;
    size_t count = 0;
    for (const auto& g : guards) {
        if (g.inserted_ranges.empty()) continue;
        TokenSeq seq = encode(vocab, g.guarded_plain_text);
        std::vector<char> inserted(seq.size(), 0);
        size_t ri = 0;
        for (size_t p = 0; p < seq.size(); ++p) {
            auto [s, e] = seq.spans[p];
            while (ri < g.inserted_ranges.size() && g.inserted_ranges[ri].second <= s) ++ri;
            if (ri < g.inserted_ranges.size() && g.inserted_ranges[ri].first < e &&
                s < g.inserted_ranges[ri].second)
                inserted[p] = 1;
        }
        if (with_context) {
            ScoreVector sv = score_sequence(target, seq);
            for (size_t p = 0; p < seq.size(); ++p) {
                if (!inserted[p]) continue;
                sum += -sv.logprobs[p];
                ++count;
            }
        } else {
            size_t p = 0;
            while (p < seq.size()) {
                if (!inserted[p]) {
                    ++p;
                    continue;
                }
                size_t q = p;
                while (q < seq.size() && inserted[q]) ++q;
                std::vector<int32_t> run(seq.ids.begin() + (long)p, seq.ids.begin() + (long)q);
                ScoreVector sv = score_ids(target, run);
                for (double lp : sv.logprobs) {
                    sum += -lp;
                    ++count;
                }
                p = q;
            }
        }
    }
    if (count == 0) throw InvalidInputError("watermark: no perturbation tokens to score");
    return sum / (double)count;
}

} // namespace detail

// Hypothesis test: the observed statistic is the mean target loss of the
// trained-in perturbation tokens; the null distribution repeats the same
// statistic over fresh random perturbations that were never trained on.
// One-sided p = Phi(z); trained-in watermarks sit far in the left tail.
inline WatermarkResult watermark_detect(const NGramModel& target, const Vocabulary& vocab,
                                        const std::vector<Document>& docs,
                                        const std::vector<TokenSeq>& doc_seqs,
                                        const std::vector<GuardedText>& trained_guards,
                                        const GuardConfig& cfg, const NGramModel* proxy,
                                        bool with_context, int n_null, uint64_t seed) {
    if (n_null < 100) throw InvalidInputError("watermark_detect: n_null must be >= 100");
    if (docs.size() != doc_seqs.size())
        throw InvalidInputError("watermark_detect: docs and sequences misaligned");
    WatermarkResult res;
    res.n_null = n_null;
    res.observed = detail::watermark_statistic(target, vocab, trained_guards, with_context);

    double sum = 0.0, sum2 = 0.0;
    for (int j = 0; j < n_null; ++j) {
        std::vector<GuardedText> fresh;
        fresh.reserve(docs.size());
        for (size_t i = 0; i < docs.size(); ++i) {
            GuardConfig gc = cfg;
            gc.seed = derive_stream(seed, "null/" + std::to_string(j) + "/" + docs[i].id);
            PerturbationPlan plan = plan_for(gc, doc_seqs[i], vocab, proxy);
            fresh.push_back(apply_plan(docs[i].text, doc_seqs[i], plan, cfg.invisible_mode, vocab));
        }
        double stat = detail::watermark_statistic(target, vocab, fresh, with_context);
        sum += stat;
        sum2 += stat * stat;
    }
    res.null_mean = sum / (double)n_null;
    double var = (sum2 - sum * sum / (double)n_null) / (double)(n_null - 1);
    if (var <= 0.0) throw DegenerateDistributionError("watermark_detect: null distribution has zero variance");
    res.null_std = std::sqrt(var);
    res.z = (res.observed - res.null_mean) / res.null_std;
    res.p = std_normal_cdf(res.z);
    return res;
}

} // namespace textveil
