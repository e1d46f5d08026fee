// Acceptance suite: thirteen checks covering exact oracles, numerical
// accuracy, and the direction-preserving seeded experiments on the pinned
// synthetic corpus. Prints one PASS/FAIL line per criterion; the exit code
// is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "textveil/remote.hpp"
#include "textveil/textveil.hpp"

using namespace textveil;
using Clock = std::chrono::steady_clock;

namespace {

constexpr uint64_t kPinnedSeed = 20250818; // master seed of the desk-scale corpus

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail,
            Clock::time_point t0) {
    double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("%s criterion %2d: %s (%s) [%.1fs]\n", pass ? "PASS" : "FAIL", id, name.c_str(),
                detail.c_str(), secs);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// ---------------------------------------------------------------- oracles

double auc_pairwise_oracle(const std::vector<double>& m, const std::vector<double>& n) {
    double wins = 0.0;
    for (double a : m)
        for (double b : n) {
            if (a > b) wins += 1.0;
            else if (a == b) wins += 0.5;
        }
    return wins / ((double)m.size() * (double)n.size());
}

int edit_distance_oracle(const std::vector<int32_t>& a, const std::vector<int32_t>& b) {
    std::vector<std::vector<int>> dp(a.size() + 1, std::vector<int>(b.size() + 1));
    for (size_t i = 0; i <= a.size(); ++i) dp[i][0] = (int)i;
    for (size_t j = 0; j <= b.size(); ++j) dp[0][j] = (int)j;
    for (size_t i = 1; i <= a.size(); ++i)
        for (size_t j = 1; j <= b.size(); ++j)
            dp[i][j] = std::min({dp[i - 1][j] + 1, dp[i][j - 1] + 1,
                                 dp[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    return dp[a.size()][b.size()];
}

// fixed-step Simpson integration of the density, independent of the Owen's T
// evaluation path
double cdf_quadrature(const SkewNormalFit& fit, double x) {
    double lo = fit.xi - 40.0 * fit.omega;
    if (x <= lo) return 0.0;
    const int steps = 40000;
    double h = (x - lo) / steps;
    double sum = skew_normal_pdf(fit, lo) + skew_normal_pdf(fit, x);
    for (int i = 1; i < steps; ++i) sum += skew_normal_pdf(fit, lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return sum * h / 3.0;
}

std::vector<double> skew_normal_sample(double xi, double omega, double alpha, size_t n,
                                       uint64_t seed) {
    SplitMix64 rng(seed);
    double delta = alpha / std::sqrt(1.0 + alpha * alpha);
    std::vector<double> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        double z0 = rng.normal(), z1 = rng.normal();
        out.push_back(xi + omega * (delta * std::fabs(z0) + std::sqrt(1.0 - delta * delta) * z1));
    }
    return out;
}

// ------------------------------------------------------------ experiments

ExperimentConfig pinned_config() {
    ExperimentConfig cfg;
    cfg.seed = kPinnedSeed;
    return cfg; // |D|=400 via 1000 docs at 1:4:4:1, r=0.1, 4-gram, alpha=0.1
}

struct PinnedRuns {
    PreparedCorpus prep;
    ExperimentReport np, unp04, oov04, oov1, np_bd, oov1_bd;
};

PinnedRuns run_pinned() {
    PinnedRuns out;
    ExperimentConfig cfg = pinned_config();
    out.prep = prepare_corpus(cfg);
    auto run = [&](Strategy s, double b, bool bd) {
        ExperimentConfig e = cfg;
        e.guard.strategy = s;
        e.guard.b = b;
        e.backdoor = bd;
        return run_protection_experiment(e, &out.prep);
    };
    out.np = run(Strategy::NP, 1.0, false);
    out.unp04 = run(Strategy::UNP, 0.4, false);
    out.oov04 = run(Strategy::TP_OOV, 0.4, false);
    out.oov1 = run(Strategy::TP_OOV, 1.0, false);
    out.np_bd = run(Strategy::NP, 1.0, true);
    out.oov1_bd = run(Strategy::TP_OOV, 1.0, true);
    return out;
}

} // namespace

int main() {
    std::printf("textveil acceptance suite (pinned seed %llu)\n",
                (unsigned long long)kPinnedSeed);

    // 1. rank-based AUC equals brute-force pairwise counting exactly
    {
        auto t0 = Clock::now();
        SplitMix64 rng(101);
        int bad = 0;
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> m(1 + rng.below(200)), n(1 + rng.below(200));
            for (auto& x : m) x = std::floor(rng.real() * 64.0) / 16.0;
            for (auto& x : n) x = std::floor(rng.real() * 64.0) / 16.0;
            if (auc(m, n) != auc_pairwise_oracle(m, n)) ++bad;
        }
        report(1, "AUC equals the O(n^2) pairwise oracle", bad == 0,
               bad == 0 ? "100/100 exact" : std::to_string(bad) + " mismatches", t0);
    }

    // 2. token edit distance equals an independent DP oracle
    {
        auto t0 = Clock::now();
        SplitMix64 rng(202);
        int bad = 0;
        for (int trial = 0; trial < 1000; ++trial) {
            std::vector<int32_t> a(rng.below(13)), b(rng.below(13));
            for (auto& x : a) x = (int32_t)rng.below(6);
            for (auto& x : b) x = (int32_t)rng.below(6);
            if (token_edit_distance(a, b) != edit_distance_oracle(a, b)) ++bad;
        }
        report(2, "edit distance equals the DP oracle", bad == 0,
               bad == 0 ? "1000/1000 exact" : std::to_string(bad) + " mismatches", t0);
    }

    // 3. skew-normal CDF vs density quadrature within 1e-6
    {
        auto t0 = Clock::now();
        double worst = 0.0;
        const double params[5][3] = {
            {0.0, 1.0, 0.0}, {0.0, 1.0, 3.0}, {2.0, 0.5, -2.0}, {-1.0, 2.0, 8.0}, {5.0, 1.5, -5.0}};
        for (const auto& p : params) {
            SkewNormalFit fit;
            fit.xi = p[0];
            fit.omega = p[1];
            fit.alpha = p[2];
            for (int i = 0; i <= 20; ++i) {
                double x = fit.xi + fit.omega * (-3.0 + 0.3 * i);
                worst = std::max(worst, std::fabs(skew_normal_cdf(fit, x) - cdf_quadrature(fit, x)));
            }
        }
        report(3, "skew-normal CDF matches quadrature", worst <= 1e-6,
               "max abs err " + fmt(worst * 1e6) + "e-6 over 21x5 grid", t0);
    }

    // 4. fitted exposure tracks rank exposure on a fitted-family population
    {
        auto t0 = Clock::now();
        std::vector<double> pop = skew_normal_sample(4.0, 0.8, 2.0, 2000, 404);
        SkewNormalFit fit = fit_skew_normal(pop);
        std::vector<double> sorted = pop;
        std::sort(sorted.begin(), sorted.end());
        double worst = 0.0;
        for (int q = 10; q <= 90; ++q) {
            double px = sorted[(size_t)(q / 100.0 * sorted.size())];
            worst = std::max(worst, std::fabs(rank_exposure(px, pop) - approx_exposure(fit, px)));
        }
        bool pass = worst <= 0.15 && fit.ks_p > 0.1;
        report(4, "fitted vs rank exposure within 0.15",
               pass, "max gap " + fmt(worst) + ", KS p " + fmt(fit.ks_p), t0);
    }

    // 5-7 and 13 share the pinned corpus
    auto t5 = Clock::now();
    PinnedRuns runs = run_pinned();
    {
        double np = runs.np.sample_level.max_auc;
        double unp = runs.unp04.sample_level.max_auc;
        double oov04 = runs.oov04.sample_level.max_auc;
        double oov1 = runs.oov1.sample_level.max_auc;
        bool pass = np >= 0.75 && oov1 <= np - 0.15 && np > unp - 0.02 && unp > oov04 - 0.02;
        report(5, "defense direction on the pinned corpus", pass,
               "NP " + fmt(np) + " > UNP(.4) " + fmt(unp) + " > TP-OOV(.4) " + fmt(oov04) +
                   "; TP-OOV(1) " + fmt(oov1),
               t5);
    }
    {
        auto t0 = Clock::now();
        size_t np_pos = 0, oov_low = 0;
        for (const auto& r : runs.np.exploitation) np_pos += r.ex > 0;
        for (const auto& r : runs.oov1.exploitation) oov_low += r.ex <= 0.5;
        double np_frac = (double)np_pos / (double)runs.np.exploitation.size();
        double oov_frac = (double)oov_low / (double)runs.oov1.exploitation.size();
        bool pass = np_frac >= 0.95 && oov_frac >= 0.90;
        report(6, "exploitation collapse", pass,
               "NP ex>0 " + fmt(np_frac * 100) + "%, TP-OOV(1) ex<=0.5 " + fmt(oov_frac * 100) + "%",
               t0);
    }
    {
        auto t0 = Clock::now();
        double np = runs.np.sample_level.max_auc;
        double np_bd = runs.np_bd.sample_level.max_auc;
        double oov_bd = runs.oov1_bd.sample_level.max_auc;
        bool pass = np_bd >= np && oov_bd <= np_bd - 0.15;
        report(7, "backdoor amplification", pass,
               "NP " + fmt(np) + " -> backdoored " + fmt(np_bd) + "; defended " + fmt(oov_bd), t0);
    }

    // 8. readability and perfect-strip recovery across strategies and modes
    {
        auto t0 = Clock::now();
        const Corpus& corpus = runs.prep.corpus;
        const Vocabulary& vocab = runs.prep.vocab;
        std::vector<TokenSeq> aux_seqs;
        SplitSpec split_spec;
        split_spec.seed = derive_stream(kPinnedSeed, "split");
        CorpusSplit split = split_corpus(corpus, split_spec);
        for (const auto& d : split.aux) aux_seqs.push_back(encode(vocab, d.text));
        NGramModel proxy = fit(aux_seqs, 4, (int32_t)vocab.size(), 0.1, 1.0, "proxy");

        std::vector<std::string> fixtures;
        for (int i = 0; i < 50; ++i) {
            std::u32string text = utf8_to_u32(split.train[(size_t)i].text);
            std::u32string head = text.substr(0, std::min<size_t>(text.size(), 420));
            while (!head.empty() && head.back() != U' ') head.pop_back();
            if (!head.empty()) head.pop_back();
            std::u32string tail = text.substr(text.size() / 2);
            fixtures.push_back("<html><head><title>fixture</title></head><body><p>" +
                               u32_to_utf8(head) + "</p><p>" + u32_to_utf8(tail) +
                               "</p></body></html>");
        }
        const Strategy strategies[] = {Strategy::NP,   Strategy::UDP,    Strategy::UNP,
                                       Strategy::TP,   Strategy::TP_P,   Strategy::TP_OP,
                                       Strategy::TP_OOV, Strategy::TP_OOV_PP};
        const InvisibleMode modes[] = {InvisibleMode::Chars, InvisibleMode::StyleDisplayNone,
                                       InvisibleMode::StyleOffscreen, InvisibleMode::StyleFontZero};
        long checked = 0, bad = 0;
        for (size_t f = 0; f < fixtures.size(); ++f) {
            HtmlDoc doc = HtmlDoc::parse(fixtures[f]);
            std::string want_visible = visible_text(doc);
            std::string want_crawl = u32_to_utf8(remove_guard_marks(utf8_to_u32(crawler_text(doc))));
            for (Strategy s : strategies) {
                for (InvisibleMode mode : modes) {
                    GuardConfig cfg;
                    cfg.strategy = s;
                    cfg.b = 0.4;
                    cfg.seed = derive_stream(kPinnedSeed, "fixture/" + std::to_string(f));
                    cfg.invisible_mode = mode;
                    cfg.min_tokens = 8;
                    cfg.tau = 6;
                    cfg.batch_B = 8;
                    cfg.cand_k = 8;
                    ProtectedHtml prot = protect_html(doc, cfg, vocab, &proxy, "fx");
                    std::string out = prot.doc.serialize();
                    HtmlDoc re = HtmlDoc::parse(out);
                    ++checked;
                    if (visible_text(re) != want_visible ||
                        strip_guard(crawler_text(re)) != want_crawl)
                        ++bad;
                }
            }
        }
        report(8, "readability and perfect-strip recovery", bad == 0,
               std::to_string(checked) + " fixture renderings, " + std::to_string(bad) +
                   " violations",
               t0);
    }

    // 9. splitting property, exhaustive over a 2000-token vocabulary
    {
        auto t0 = Clock::now();
        std::vector<std::string> texts;
        for (const auto& d : runs.prep.corpus.docs) texts.push_back(d.text);
        Vocabulary big = train_bpe(texts, 2000 - 31); // ~2000 tokens incl. base alphabet
        long checked = 0, bad = 0;
        for (int32_t id = 0; id < (int32_t)big.size(); ++id) {
            const std::u32string& tok = big.tokens32[(size_t)id];
            if (tok.size() < 2) continue;
            for (char32_t c : default_catalog().codepoints) {
                for (size_t off = 1; off < tok.size(); ++off) {
                    std::u32string split = tok.substr(0, off) + std::u32string(1, c) +
                                           tok.substr(off);
                    TokenSeq enc = encode(big, u32_to_utf8(split));
                    ++checked;
                    bool ok = enc.size() >= 2;
                    for (int32_t out : enc.ids) ok = ok && out != id;
                    if (!ok) ++bad;
                }
            }
        }
        report(9, "OOV splitting property (exhaustive)", bad == 0,
               std::to_string(big.size()) + "-token vocabulary, " + std::to_string(checked) +
                   " splits, " + std::to_string(bad) + " violations",
               t0);
    }

    // 10. coordinate search reaches the exhaustive optimum
    {
        auto t0 = Clock::now();
        SplitMix64 rng(1010);
        CandidateSource source = [](const NGramModel& model, const std::vector<int32_t>& s,
                                    int32_t pos, int k, SplitMix64& r) {
            return propose_candidates(model, s, pos, k, r);
        };
        int hits = 0;
        bool monotone = true;
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<TokenSeq> corpus;
            for (int d = 0; d < 4; ++d) {
                TokenSeq s;
                size_t len = 8 + rng.below(10);
                for (size_t i = 0; i < len; ++i) s.ids.push_back((int32_t)rng.below(10));
                s.spans.resize(s.ids.size(), {0, 0});
                corpus.push_back(std::move(s));
            }
            NGramModel m = fit(corpus, 2, 10, 0.1, 1.0, "toy");
            std::vector<int32_t> seq(8);
            for (auto& x : seq) x = (int32_t)rng.below(10);
            std::vector<int32_t> I{2, 5};
            double best = 1e300;
            std::vector<int32_t> work = seq;
            for (int32_t a = 0; a < 10; ++a)
                for (int32_t b = 0; b < 10; ++b) {
                    work[2] = a;
                    work[5] = b;
                    best = std::min(best, pitfall_objective(m, work, I, -1, -1));
                }
            GcgResult res = gcg_search(m, seq, I, source, 20, 16, 8, rng.next(), -1, -1);
            for (size_t i = 1; i < res.objective_trace.size(); ++i)
                monotone = monotone &&
                           res.objective_trace[i] <= res.objective_trace[i - 1] + 1e-12;
            if (res.objective <= best + 1e-9) ++hits;
        }
        bool pass = hits >= 95 && monotone;
        report(10, "search optimality on the tiny instance", pass,
               std::to_string(hits) + "/100 optima, traces " +
                   (monotone ? "monotone" : "non-monotone"),
               t0);
    }

    // 11. watermark detection over 50 seeded trials
    {
        auto t0 = Clock::now();
        int trained_ok = 0, untrained_ok = 0;
        const int trials = 50;
        for (int trial = 0; trial < trials; ++trial) {
            ExperimentConfig cfg;
            cfg.seed = derive_stream(kPinnedSeed, "wm/" + std::to_string(trial));
            cfg.synth.n_docs = 160;
            cfg.synth.users = 40;
            cfg.split.r = 0.125;
            cfg.guard.strategy = Strategy::UNP;
            cfg.guard.b = 0.4;
            cfg.mia.bootstrap_iters = 0;
            ExperimentState st = prepare_experiment(cfg);
            std::vector<Document> docs;
            std::vector<TokenSeq> seqs;
            for (size_t i = 0; i < st.split.train.size(); ++i)
                if (st.split.protected_mask[i]) {
                    docs.push_back(st.split.train[i]);
                    seqs.push_back(st.train_original_seqs[i]);
                }
            uint64_t wm_seed = derive_stream(cfg.seed, "wm-null");
            WatermarkResult trained = watermark_detect(st.target, st.vocab, docs, seqs, st.guards,
                                                       cfg.guard, &st.ref_mia, true, 100, wm_seed);
            std::vector<GuardedText> fresh;
            for (size_t i = 0; i < docs.size(); ++i) {
                GuardConfig g2 = cfg.guard;
                g2.seed = derive_stream(cfg.seed, "fresh/" + docs[i].id);
                PerturbationPlan plan = plan_for(g2, seqs[i], st.vocab, &st.ref_mia);
                fresh.push_back(
                    apply_plan(docs[i].text, seqs[i], plan, cfg.guard.invisible_mode, st.vocab));
            }
            WatermarkResult untrained = watermark_detect(st.target, st.vocab, docs, seqs, fresh,
                                                         cfg.guard, &st.ref_mia, true, 100,
                                                         wm_seed);
            trained_ok += trained.p < 0.01 && trained.z < 0;
            untrained_ok += untrained.p > 0.05;
        }
        bool pass = trained_ok >= 45 && untrained_ok >= 45;
        report(11, "watermark detection", pass,
               "trained " + std::to_string(trained_ok) + "/50, untrained " +
                   std::to_string(untrained_ok) + "/50",
               t0);
    }

    // 12. continual training keeps MIA risk non-increasing, with the
    //     defended run benefiting at least as much as the baseline
    {
        auto t0 = Clock::now();
        ExperimentConfig cfg = pinned_config();
        cfg.guard.strategy = Strategy::TP_OOV;
        cfg.guard.b = 0.4;
        cfg.continual_stages = 3;
        cfg.continual_docs_per_stage = 150;
        std::vector<ContinualStage> stages = run_continual(cfg);
        ExperimentConfig np_cfg = cfg;
        np_cfg.guard.strategy = Strategy::NP;
        std::vector<ContinualStage> np_stages = run_continual(np_cfg);
        bool pass = true;
        std::string trace;
        for (size_t i = 0; i < stages.size(); ++i) {
            if (i) {
                pass = pass && stages[i].sample_level.max_auc <=
                                   stages[i - 1].sample_level.max_auc + 0.02;
                trace += " -> ";
            }
            trace += fmt(stages[i].sample_level.max_auc);
        }
        double guarded_drop =
            stages.front().sample_level.max_auc - stages.back().sample_level.max_auc;
        double np_drop =
            np_stages.front().sample_level.max_auc - np_stages.back().sample_level.max_auc;
        pass = pass && guarded_drop >= np_drop;
        report(12, "continual-training direction", pass,
               trace + "; drop " + fmt(guarded_drop) + " vs NP " + fmt(np_drop), t0);
    }

    // 13. full determinism of the experiment pipeline
    {
        auto t0 = Clock::now();
        ExperimentConfig cfg = pinned_config();
        cfg.guard.strategy = Strategy::TP_OOV;
        cfg.guard.b = 0.4;
        std::string a = run_protection_experiment(cfg).to_json_string();
        std::string b = run_protection_experiment(cfg).to_json_string();
        bool pass = a == b;
        report(13, "byte-identical reports for identical configs", pass,
               pass ? std::to_string(a.size()) + " bytes, identical" : "reports differ", t0);
    }

    std::printf("%s: %d/13 criteria passed\n", g_failures == 0 ? "SUCCESS" : "FAILURE",
                13 - g_failures);
    return g_failures;
}
