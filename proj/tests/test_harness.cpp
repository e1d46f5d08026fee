#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "textveil/harness.hpp"

using namespace textveil;

namespace {

// Pinned desk-scale experiment seed; the acceptance suite uses the same one.
constexpr uint64_t kPinnedSeed = 20250818;

ExperimentConfig small_config(uint64_t seed = 99) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.synth.n_docs = 160;
    cfg.synth.users = 40;
    cfg.mia.bootstrap_iters = 20;
    return cfg;
}

// Homogeneous corpus without style variance: every document is equally
// predictable, so an overfit target separates members perfectly at both
// aggregation levels.
Corpus homogeneous_corpus(uint64_t seed, int n_docs) {
    SplitMix64 rng(seed);
    std::vector<std::string> lexicon;
    for (int i = 0; i < 20; ++i) lexicon.push_back(std::string("w") + (char)('a' + i % 26) +
                                                   (char)('a' + (i * 7) % 26));
    Corpus corpus;
    corpus.provenance = "homogeneous";
    for (int i = 0; i < n_docs; ++i) {
        std::vector<std::string> words;
        for (int j = 0; j < 80; ++j) words.push_back(lexicon[rng.index(lexicon.size())]);
        std::string rare = "zz" + std::to_string(i);
        for (int k = 0; k < 4; ++k)
            words.insert(words.begin() + (long)rng.index(words.size() + 1), rare);
        std::string text;
        for (size_t w = 0; w < words.size(); ++w) {
            if (w) text.push_back(' ');
            text += words[w];
        }
        corpus.docs.push_back({"h" + std::to_string(1000 + i), "u" + std::to_string(i / 4), text});
    }
    return corpus;
}

} // namespace

TEST_CASE("synth_corpus is deterministic and validates inputs") {
    Corpus a = synth_corpus(7, 50, 40, 80, 24, 10);
    Corpus b = synth_corpus(7, 50, 40, 80, 24, 10);
    REQUIRE(a.docs.size() == 50);
    for (size_t i = 0; i < a.docs.size(); ++i) {
        CHECK(a.docs[i].id == b.docs[i].id);
        CHECK(a.docs[i].user_id == b.docs[i].user_id);
        CHECK(a.docs[i].text == b.docs[i].text);
    }
    CHECK_THROWS_AS(synth_corpus(7, 0, 40, 80, 24, 10), InvalidInputError);
    CHECK_THROWS_AS(synth_corpus(7, 10, 40, 80, 24, 20), InvalidInputError);
}

TEST_CASE("synth_corpus unigram distribution is heavily non-uniform") {
    Corpus c = synth_corpus(11, 200, 60, 120, 24, 50);
    std::map<std::string, long> freq;
    for (const auto& d : c.docs) {
        std::istringstream in(d.text);
        std::string w;
        while (in >> w) ++freq[w];
    }
    long max_common = 0, min_common = 1L << 60;
    for (const auto& [w, n] : freq) {
        if (w.rfind("zq", 0) == 0) continue; // rare markers live in their own regime
        max_common = std::max(max_common, n);
        min_common = std::min(min_common, n);
    }
    CHECK((double)max_common / (double)min_common > 5.0);
}

TEST_CASE("corpus JSONL round-trips and validates") {
    Corpus c = synth_corpus(13, 12, 40, 60, 24, 4);
    auto path = std::filesystem::temp_directory_path() / "textveil_corpus.jsonl";
    save_corpus_jsonl(c, path.string());
    Corpus r = load_corpus_jsonl(path.string());
    REQUIRE(r.docs.size() == c.docs.size());
    for (size_t i = 0; i < c.docs.size(); ++i) CHECK(r.docs[i].text == c.docs[i].text);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_corpus_jsonl("/nonexistent/corpus.jsonl"), IoError);
}

TEST_CASE("split_corpus cuts exact ratios and marks the protected fraction") {
    Corpus c;
    for (int i = 0; i < 100; ++i)
        c.docs.push_back({"d" + std::to_string(i), "u" + std::to_string(i), "text here"});
    SplitSpec split_spec;
    split_spec.seed = 3;
    CorpusSplit split = split_corpus(c, split_spec);
    CHECK(split.aux.size() == 10);
    CHECK(split.train.size() == 40);
    CHECK(split.non.size() == 40);
    CHECK(split.test.size() == 10);
    CHECK(split.protected_docs().size() == 4); // r=0.1 of 40

    SplitSpec all = split_spec;
    all.r = 1.0;
    CHECK(split_corpus(c, all).protected_docs().size() == 40);

    Corpus tiny;
    tiny.docs.push_back({"only", "u", "t"});
    CHECK_THROWS_AS(split_corpus(tiny, split_spec), InvalidInputError);
}

TEST_CASE("split_corpus keeps users disjoint across parts") {
    Corpus c = synth_corpus(17, 120, 40, 80, 24, 30);
    SplitSpec split_spec;
    split_spec.seed = 5;
    CorpusSplit split = split_corpus(c, split_spec);
    auto users_of = [](const std::vector<Document>& docs) {
        std::set<std::string> out;
        for (const auto& d : docs) out.insert(d.user_id);
        return out;
    };
    std::set<std::string> a = users_of(split.aux), t = users_of(split.train),
                          n = users_of(split.non), e = users_of(split.test);
    for (const auto& u : t) {
        CHECK(a.count(u) == 0);
        CHECK(n.count(u) == 0);
        CHECK(e.count(u) == 0);
    }
    for (const auto& u : n) CHECK(e.count(u) == 0);
}

TEST_CASE("protection experiment end to end on a small corpus") {
    ExperimentConfig np = small_config();
    np.guard.strategy = Strategy::NP;
    ExperimentReport rep_np = run_protection_experiment(np);

    ExperimentConfig oov = small_config();
    oov.guard.strategy = Strategy::TP_OOV;
    oov.guard.b = 1.0;
    ExperimentReport rep_oov = run_protection_experiment(oov);

    // exploitation records cover every protected instance exactly once
    CHECK(rep_np.exploitation.size() == run_protection_experiment(np).exploitation.size());
    std::set<std::string> ids;
    for (const auto& r : rep_np.exploitation) ids.insert(r.id);
    CHECK(ids.size() == rep_np.exploitation.size());

    // the defense strictly reduces the max-signal AUC
    CHECK(rep_oov.sample_level.max_auc < rep_np.sample_level.max_auc);
    // all four signals are present at both levels
    for (const auto* lvl : {&rep_np.sample_level, &rep_np.user_level}) {
        CHECK(lvl->by_signal.count("loss") == 1);
        CHECK(lvl->by_signal.count("loss_ref") == 1);
        CHECK(lvl->by_signal.count("mink") == 1);
        CHECK(lvl->by_signal.count("zlib") == 1);
    }
    // calibrated loss is at least as discriminative as raw loss
    CHECK(rep_np.sample_level.by_signal.at("loss_ref").auc >=
          rep_np.sample_level.by_signal.at("loss").auc - 0.02);
    // utility sanity: learning beats the untrained model, guarding keeps
    // memorization loss above the unprotected baseline
    CHECK(rep_np.utility.val_loss_np < rep_np.utility.val_loss_initial);
    CHECK(rep_oov.utility.mem_loss_target > rep_oov.utility.mem_loss_np);
}

TEST_CASE("experiment reports are byte-identical for identical configs") {
    ExperimentConfig cfg = small_config(123);
    cfg.guard.strategy = Strategy::TP_OOV;
    cfg.guard.b = 0.4;
    std::string a = run_protection_experiment(cfg).to_json_string();
    std::string b = run_protection_experiment(cfg).to_json_string();
    CHECK(a == b);
}

TEST_CASE("backdoor warm-up is recorded and requires auxiliary data") {
    ExperimentConfig cfg = small_config(31);
    cfg.backdoor = true;
    ExperimentState st = prepare_experiment(cfg);
    REQUIRE(st.target.train_weight_log.size() == 2);
    CHECK(st.target.train_weight_log[0].second == 2.0);
    CHECK(st.target.train_weight_log[1].second == 1.0);
    CHECK(st.ref_mia.train_weight_log.size() == 1);

    ExperimentConfig noaux = cfg;
    noaux.split.aux = 0.0;
    noaux.split.test = 2.0;
    CHECK_THROWS_AS(noaux.validate(), ConfigError);
}

TEST_CASE("continual stages re-evaluate the original protected instances") {
    ExperimentConfig cfg = small_config(41);
    cfg.guard.strategy = Strategy::TP_OOV;
    cfg.guard.b = 0.4;
    cfg.continual_stages = 3;
    cfg.continual_docs_per_stage = 40;
    std::vector<ContinualStage> stages = run_continual(cfg);
    REQUIRE(stages.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(stages[(size_t)i].stage == i);

    ExperimentConfig bad = cfg;
    bad.continual_stages = 1;
    CHECK_THROWS_AS(run_continual(bad), ConfigError);
    ExperimentConfig external = cfg;
    external.corpus_path = "corpus.jsonl";
    CHECK_THROWS_AS(run_continual(external), InvalidInputError);
}

TEST_CASE("detectability on identical sets is exactly neutral") {
    Corpus c = synth_corpus(51, 60, 40, 80, 24, 12);
    std::vector<std::string> texts;
    for (const auto& d : c.docs) texts.push_back(d.text);
    Vocabulary vocab = train_bpe(texts, 120);
    std::vector<TokenSeq> seqs;
    for (const auto& t : texts) seqs.push_back(encode(vocab, t));
    NGramModel scorer = fit(seqs, 4, (int32_t)vocab.size(), 0.1, 1.0, "det");
    DetectabilityReport rep = detectability(texts, texts, vocab, scorer);
    CHECK(rep.detector_auc == doctest::Approx(0.5));
    CHECK(rep.ks_distance == doctest::Approx(0.0));
    CHECK_THROWS_AS(detectability({}, texts, vocab, scorer), InvalidInputError);
}

TEST_CASE("low-budget guards stay hard to filter; saturated ones do not") {
    ExperimentConfig cfg;
    cfg.seed = kPinnedSeed;
    PreparedCorpus prep = prepare_corpus(cfg);
    ExperimentState st = prepare_experiment(cfg, &prep);
    auto guarded = [&](double b) {
        std::vector<std::string> out;
        for (size_t i = 0; i < st.split.train.size() && out.size() < 60; ++i) {
            GuardConfig gc;
            gc.strategy = Strategy::TP_OOV;
            gc.b = b;
            gc.seed = derive_stream(cfg.seed, "detect/" + st.split.train[i].id);
            TokenSeq seq = encode(st.vocab, st.split.train[i].text);
            PerturbationPlan plan = plan_for(gc, seq, st.vocab, &st.ref_mia);
            out.push_back(
                apply_plan(st.split.train[i].text, seq, plan, InvisibleMode::Chars, st.vocab)
                    .guarded_plain_text);
        }
        return out;
    };
    std::vector<std::string> clean;
    for (size_t i = 0; i < st.split.non.size() && clean.size() < 60; ++i)
        clean.push_back(st.split.non[i].text);
    DetectabilityReport low = detectability(guarded(0.1), clean, st.vocab, st.ref_mia);
    DetectabilityReport high = detectability(guarded(1.0), clean, st.vocab, st.ref_mia);
    CHECK(low.detector_auc <= 0.65);
    CHECK(high.detector_auc > low.detector_auc);
}

TEST_CASE("every targeted strategy at b=0.4 sits strictly below no protection") {
    ExperimentConfig cfg;
    cfg.seed = kPinnedSeed;
    cfg.mia.bootstrap_iters = 50;
    PreparedCorpus prep = prepare_corpus(cfg);
    auto auc_of = [&](Strategy s, double b) {
        ExperimentConfig e = cfg;
        e.guard.strategy = s;
        e.guard.b = b;
        return run_protection_experiment(e, &prep).sample_level.max_auc;
    };
    double np = auc_of(Strategy::NP, 1.0);
    for (Strategy s : {Strategy::UNP, Strategy::TP, Strategy::TP_P, Strategy::TP_OOV})
        CHECK(auc_of(s, 0.4) < np);
}

TEST_CASE("proxies of different orders agree on triggers (transferability)") {
    ExperimentConfig cfg;
    cfg.seed = kPinnedSeed;
    PreparedCorpus prep = prepare_corpus(cfg);
    ExperimentState st = prepare_experiment(cfg, &prep);
    NGramModel p3 = fit(st.aux_seqs, 3, (int32_t)st.vocab.size(), 0.1, 1.0, "p3");
    NGramModel p5 = fit(st.aux_seqs, 5, (int32_t)st.vocab.size(), 0.1, 1.0, "p5");
    double jsum = 0;
    int jn = 0;
    for (size_t i = 0; i < 40; ++i) {
        TokenSeq s = encode(st.vocab, st.split.train[i].text);
        int k = std::max(1, (int)(0.4 * (double)s.size()));
        auto a = identify_triggers(score_sequence(p3, s), k).indices;
        auto b = identify_triggers(score_sequence(p5, s), k).indices;
        std::set<int32_t> sa(a.begin(), a.end()), uni = sa, inter;
        for (int32_t x : b) {
            if (sa.count(x)) inter.insert(x);
            uni.insert(x);
        }
        jsum += (double)inter.size() / (double)uni.size();
        ++jn;
    }
    CHECK(jsum / jn >= 0.3);
}

TEST_CASE("user-level aggregation does not beat sample-level on the overfit corpus") {
    Corpus corpus = homogeneous_corpus(7, 120);
    auto path = std::filesystem::temp_directory_path() / "textveil_homog.jsonl";
    save_corpus_jsonl(corpus, path.string());
    ExperimentConfig cfg;
    cfg.seed = 7;
    cfg.corpus_path = path.string();
    cfg.guard.strategy = Strategy::NP;
    cfg.scorer.weight = 8.0; // overfit regime
    cfg.mia.bootstrap_iters = 10;
    ExperimentReport rep = run_protection_experiment(cfg);
    std::filesystem::remove(path);
    CHECK(rep.user_level.max_auc <= rep.sample_level.max_auc + 1e-9);
}

TEST_CASE("watermark detection separates trained-in from fresh perturbations") {
    ExperimentConfig cfg = small_config(61);
    cfg.split.r = 0.125;
    cfg.guard.strategy = Strategy::UNP;
    cfg.guard.b = 0.4;
    ExperimentState st = prepare_experiment(cfg);
    std::vector<Document> docs;
    std::vector<TokenSeq> seqs;
    for (size_t i = 0; i < st.split.train.size(); ++i)
        if (st.split.protected_mask[i]) {
            docs.push_back(st.split.train[i]);
            seqs.push_back(st.train_original_seqs[i]);
        }
    WatermarkResult trained = watermark_detect(st.target, st.vocab, docs, seqs, st.guards,
                                               cfg.guard, &st.ref_mia, true, 100,
                                               derive_stream(cfg.seed, "wm"));
    CHECK(trained.z < 0);
    CHECK(trained.p < 0.01);

    std::vector<GuardedText> fresh;
    for (size_t i = 0; i < docs.size(); ++i) {
        GuardConfig g2 = cfg.guard;
        g2.seed = derive_stream(cfg.seed, "fresh/" + docs[i].id);
        PerturbationPlan plan = plan_for(g2, seqs[i], st.vocab, &st.ref_mia);
        fresh.push_back(apply_plan(docs[i].text, seqs[i], plan, cfg.guard.invisible_mode, st.vocab));
    }
    WatermarkResult untrained = watermark_detect(st.target, st.vocab, docs, seqs, fresh, cfg.guard,
                                                 &st.ref_mia, true, 100,
                                                 derive_stream(cfg.seed, "wm"));
    CHECK(untrained.p > 0.05);
    // the standalone-run variant is well-defined and deterministic; short
    // insert runs carry little of their training context, so only validity
    // is asserted here
    WatermarkResult nocontext = watermark_detect(st.target, st.vocab, docs, seqs, st.guards,
                                                 cfg.guard, &st.ref_mia, false, 100,
                                                 derive_stream(cfg.seed, "wm"));
    CHECK(nocontext.p >= 0.0);
    CHECK(nocontext.p <= 1.0);
    CHECK(nocontext.null_std > 0.0);
    WatermarkResult again = watermark_detect(st.target, st.vocab, docs, seqs, st.guards,
                                             cfg.guard, &st.ref_mia, false, 100,
                                             derive_stream(cfg.seed, "wm"));
    CHECK(again.z == nocontext.z);
    CHECK_THROWS_AS(watermark_detect(st.target, st.vocab, docs, seqs, st.guards, cfg.guard,
                                     &st.ref_mia, true, 10, 1),
                    InvalidInputError);
}

TEST_CASE("experiment config JSON round-trips with validation") {
    ExperimentConfig cfg = small_config(71);
    cfg.guard.strategy = Strategy::TP_OP;
    cfg.guard.tau = 9;
    cfg.backdoor = true;
    nlohmann::json j = cfg.to_json();
    ExperimentConfig r = ExperimentConfig::from_json(j);
    CHECK(r.to_json() == j);
    nlohmann::json bad = j;
    bad["guard"]["b"] = 2.0;
    CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ConfigError);
}

TEST_CASE("the crawled training text never equals the original for guarded docs") {
    ExperimentConfig cfg = small_config(81);
    cfg.guard.strategy = Strategy::TP_OOV;
    cfg.guard.b = 1.0;
    ExperimentState st = prepare_experiment(cfg);
    size_t g = 0;
    for (size_t i = 0; i < st.split.train.size(); ++i) {
        if (!st.split.protected_mask[i]) {
            CHECK(st.train_as_trained[i].ids == st.train_original_seqs[i].ids);
        } else {
            if (!st.guards[g].plan.empty())
                CHECK(st.train_as_trained[i].ids != st.train_original_seqs[i].ids);
            // the crawler view of the guard is exactly what trained
            CHECK(st.train_as_trained[i].ids ==
                  encode(st.vocab, st.guards[g].guarded_plain_text).ids);
            ++g;
        }
    }
    CHECK(g == st.guards.size());
}
