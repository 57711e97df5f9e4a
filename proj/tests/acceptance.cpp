// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>

#include "kt/harness.hpp"
#include "oracles.hpp"

#ifndef KTCLI_PATH
#error "KTCLI_PATH must name the ktcli executable"
#endif

using namespace kt;
namespace fs = std::filesystem;

namespace {

// Tolerances
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr std::size_t kGradSamples = 30;
constexpr double kGradSeconds = 60.0;
constexpr double kSyntheticAucMin = 0.75;
constexpr double kParityGap = 0.02;
constexpr std::size_t kMaxEpochs = 30;
constexpr double kPfaLow = 0.55, kPfaHigh = 0.72;
constexpr double kDeepIrtOverPfa = 0.05;
constexpr double kIrtPearsonMin = 0.9;
constexpr double kAucTol = 1e-12;
constexpr double kTTestTol = 1e-6;
constexpr double kPearsonTol = 1e-12;
constexpr double kAttentionTol = 1e-9;
constexpr double kRateTarget = 0.625, kRateTol = 0.01;

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << detail << std::endl;
    if (!ok) ++failures;
}

template <class F>
void run(int id, const std::string& name, F&& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(id, name, false, std::string("exception: ") + e.what());
    }
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(precision);
    s << v;
    return s.str();
}

std::string sci(double v) {
    std::ostringstream s;
    s.setf(std::ios::scientific);
    s.precision(2);
    s << v;
    return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PaddedBatch toy_batch() {
    const std::vector<InteractionSequence> seqs{{"1", {{1, 1}, {3, 0}, {2, 1}, {4, 0}, {1, 1}, {2, 0}}},
                                                {"2", {{4, 0}, {4, 1}, {3, 1}, {1, 0}, {2, 1}, {3, 1}}}};
    return pad_and_mask(seqs, 6, 4);
}

void gradient_fidelity() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batch = toy_batch();
    double worst = 0.0;
    std::size_t checked = 0;
    for (auto kind : {NetworkKind::dkvmn, NetworkKind::deep_irt, NetworkKind::dkt}) {
        const Network net = init_params({kind, 4, 5, 3, 6}, 0.5, 21);
        std::vector<Tensor> leaves;
        for (const auto& p : net.parameters()) leaves.push_back(p.tensor);
        const auto r = oracle::check_gradients(
            leaves, [&] { return sequence_loss(net.forward(batch), batch).total; }, kGradSamples, 31, kGradStep);
        worst = std::max(worst, r.worst);
        checked += r.checked == kGradSamples ? 1 : 0;
    }
    const double elapsed = seconds_since(t0);
    report(1, "gradient fidelity", worst < kGradRelTol && checked == 3 && elapsed < kGradSeconds,
           "worst rel err " + sci(worst) + " over 3x" + std::to_string(kGradSamples) + " params, " + fmt(elapsed, 2) + " s");
}

struct SyntheticRun {
    SyntheticData data;
    Dataset train_set, test_set;
    std::optional<Network> deep_irt;
    double deep_irt_auc = std::numeric_limits<double>::quiet_NaN();
};

TrainConfig synthetic_config(ModelType model) {
    TrainConfig c;
    c.model = model;
    c.memory_size = 20;
    c.state_dim = 50;
    c.feature_dim = 50;
    c.epochs = kMaxEpochs;
    c.seed = 1;
    return c;
}

void synthetic_learning(SyntheticRun& run) {
    const auto t0 = std::chrono::steady_clock::now();
    double aucs[2];
    const ModelType models[2] = {ModelType::deep_irt, ModelType::dkvmn};
    for (int i = 0; i < 2; ++i) {
        const auto cfg = synthetic_config(models[i]);
        TrainResult tr = train(cfg, run.train_set);
        aucs[i] = auc(predict(tr.network, run.test_set, cfg.seq_len));
        std::cout << "      " << to_string(models[i]) << " test AUC " << fmt(aucs[i]) << " (kept epoch "
                  << tr.log.best_epoch << ")" << std::endl;
        if (i == 0) run.deep_irt = std::move(tr.network);
    }
    run.deep_irt_auc = aucs[0];
    const double gap = std::fabs(aucs[0] - aucs[1]);
    report(2, "synthetic learning signal",
           aucs[0] >= kSyntheticAucMin && aucs[1] >= kSyntheticAucMin && gap <= kParityGap,
           "deep_irt " + fmt(aucs[0]) + ", dkvmn " + fmt(aucs[1]) + ", gap " + fmt(gap) + ", " +
               fmt(seconds_since(t0), 1) + " s");
}

void baseline_ordering(const SyntheticRun& run) {
    BaselineFit fit = fit_baseline(ModelType::pfa, run.train_set);
    const double pfa = auc(predict_baseline(fit, run.test_set));
    const double margin = run.deep_irt_auc - pfa;
    report(3, "baseline ordering", pfa > kPfaLow && pfa < kPfaHigh && margin >= kDeepIrtOverPfa,
           "pfa " + fmt(pfa) + ", deep_irt - pfa " + fmt(margin));
}

void irt_recovery() {
    SyntheticConfig s;
    s.guess_c = 0.0;
    s.seed = 5;
    const auto data = generate_synthetic(s);
    const auto fit = fit_irt(first_attempts(data.dataset.sequences));
    std::vector<double> est, truth;
    for (std::size_t j = 0; j < fit.questions.size(); ++j) {
        est.push_back(fit.beta[j]);
        truth.push_back(data.beta[static_cast<std::size_t>(fit.questions[j] - 1)]);
    }
    const double r = pearson(est, truth);
    report(4, "IRT difficulty recovery", r >= kIrtPearsonMin && fit.converged,
           "pearson " + fmt(r) + " over " + std::to_string(est.size()) + " questions");
}

double pairwise_auc(const PredictionSet& p) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < p.size(); ++j)
            if (p.labels[i] == 1 && p.labels[j] == 0) {
                pairs += 1;
                wins += p.scores[i] > p.scores[j] ? 1.0 : p.scores[i] == p.scores[j] ? 0.5 : 0.0;
            }
    return wins / pairs;
}

/// Two-tailed Student t tail by composite Simpson integration of the density
/// in long double.
long double t_tail_oracle(long double t, long double dof) {
    const long double pi = 3.141592653589793238462643383279502884L;
    const long double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) / std::sqrt(dof * pi);
    auto pdf = [&](long double x) { return c * std::pow(1.0L + x * x / dof, -(dof + 1) / 2); };
    const int n = 400000;
    const long double a = std::fabs(t), h = a / n;
    long double s = pdf(0) + pdf(a);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0L : 2.0L) * pdf(i * h);
    return 1.0L - 2.0L * s * h / 3.0L;
}

void metric_oracles() {
    Rng rng(2024);
    double auc_err = 0.0;
    for (int k = 0; k < 200; ++k) {
        PredictionSet p;
        const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 80);
        const double levels = 2.0 + std::floor(rng.uniform() * 10);
        for (std::size_t i = 0; i < n; ++i) {
            const int label = rng.bernoulli(0.5) ? 1 : 0;
            p.add(std::round((rng.uniform() + 0.3 * label) * levels) / levels, label);
        }
        p.labels[0] = 1;
        p.labels[1] = 0;
        auc_err = std::max(auc_err, std::fabs(auc(p) - pairwise_auc(p)));
    }

    const std::vector<double> xs{0.8298, 0.8291, 0.8305, 0.8302, 0.8289}, ys{0.8297, 0.8310, 0.8281, 0.8302, 0.8295, 0.8290};
    auto moments = [](const std::vector<double>& v) {
        long double m = 0, s = 0;
        for (double x : v) m += x;
        m /= v.size();
        for (double x : v) s += (x - m) * (x - m);
        return std::pair{m, s / (v.size() - 1)};
    };
    const auto [mx, vx] = moments(xs);
    const auto [my, vy] = moments(ys);
    const long double sx = vx / xs.size(), sy = vy / ys.size();
    const long double t = (mx - my) / std::sqrt(sx + sy);
    const long double dof = (sx + sy) * (sx + sy) / (sx * sx / (xs.size() - 1) + sy * sy / (ys.size() - 1));
    const auto r = ttest_two_tailed(xs, ys);
    const double t_err = std::fabs(r.p - static_cast<double>(t_tail_oracle(t, dof)));

    std::vector<double> a(50), b(50);
    for (std::size_t i = 0; i < 50; ++i) {
        a[i] = rng.normal();
        b[i] = 0.3 * a[i] + rng.normal();
    }
    long double ma = 0, mb = 0;
    for (std::size_t i = 0; i < 50; ++i) ma += a[i], mb += b[i];
    ma /= 50, mb /= 50;
    long double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < 50; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    const double p_err = std::fabs(pearson(a, b) - static_cast<double>(sab / std::sqrt(saa * sbb)));

    report(5, "metric oracles", auc_err <= kAucTol && t_err <= kTTestTol && p_err <= kPearsonTol,
           "auc max err " + sci(auc_err) + " (200 sets), t-test p err " + sci(t_err) + " (p=" + fmt(r.p) +
               "), pearson err " + sci(p_err));
}

struct Snapshot {
    double loss_total;
    std::size_t count;
    double auc, acc, xent;
    std::vector<std::vector<double>> grads;
};

Snapshot evaluate(const Network& net, const PaddedBatch& batch) {
    const ParamSet params = net.parameters();
    params.zero_grad();
    const StepOutputs out = net.forward(batch);
    const SequenceLoss loss = sequence_loss(out, batch);
    backward(loss.mean_tensor());
    PredictionSet p;
    for (std::size_t i = 0; i < out.prediction_mask.size(); ++i)
        if (out.prediction_mask[i]) p.add(out.p.values()[i], batch.answers[i]);
    Snapshot s{loss.total.item(), loss.count, auc(p), accuracy(p), mean_xent(p), {}};
    for (auto g : params.grads()) s.grads.emplace_back(g.begin(), g.end());
    return s;
}

bool same(const Snapshot& a, const Snapshot& b) {
    return a.loss_total == b.loss_total && a.count == b.count && a.auc == b.auc && a.acc == b.acc && a.xent == b.xent &&
           a.grads == b.grads;
}

void masking_invariance() {
    SyntheticConfig s;
    s.num_students = 12;
    s.num_questions = 9;
    s.num_concepts = 3;
    s.seed = 8;
    auto data = generate_synthetic(s).dataset;
    Rng rng(77);
    for (auto& seq : data.sequences) seq.steps.resize(1 + static_cast<std::size_t>(rng.uniform() * 9));
    std::size_t longest = 0;
    for (const auto& seq : data.sequences) longest = std::max(longest, seq.steps.size());
    const PaddedBatch base = pad_and_mask(data.sequences, longest, data.num_kcs);
    std::size_t compared = 0;
    bool ok = true;
    for (auto kind : {NetworkKind::dkvmn, NetworkKind::deep_irt, NetworkKind::dkt}) {
        const Network net = init_params({kind, data.num_kcs, 6, 4, 5}, 0.3, 13);
        const Snapshot ref = evaluate(net, base);
        for (std::size_t extra : {1u, 2u, 7u, 25u}) {
            ok = ok && same(ref, evaluate(net, base.with_extra_padding(extra)));
            ++compared;
        }
    }
    report(6, "masking invariance", ok,
           std::to_string(compared) + " padded variants, loss/metrics/gradients " + (ok ? "bit-identical" : "differ"));
}

void interpretability_ranges(const SyntheticRun& run) {
    const Network& net = *run.deep_irt;
    NoGradGuard guard;
    const auto rows = chunk_sequences(run.test_set.sequences, 200);
    bool ok = true;
    std::size_t steps = 0;
    double worst_attention = 0.0;
    for (std::size_t start = 0; start < rows.size(); start += 64) {
        const std::size_t len = std::min<std::size_t>(64, rows.size() - start);
        std::vector<InteractionSequence> part(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                              rows.begin() + static_cast<std::ptrdiff_t>(start + len));
        std::size_t longest = 0;
        for (const auto& r : part) longest = std::max(longest, r.steps.size());
        const PaddedBatch batch = pad_and_mask(part, longest, run.test_set.num_kcs);
        const StepOutputs out = net.forward(batch);
        for (std::size_t b = 0; b < batch.rows; ++b)
            for (std::size_t t = 0; t < batch.length; ++t) {
                if (!batch.active(b, t)) continue;
                ++steps;
                const double th = out.theta(b, t), be = out.beta(b, t), p = out.p(b, t);
                ok = ok && th > -1.0 && th < 1.0 && be > -1.0 && be < 1.0 && p > 0.0 && p < 1.0;
                double total = 0.0;
                for (double w : out.attention_at(b, t)) total += w;
                worst_attention = std::max(worst_attention, std::fabs(total - 1.0));
            }
    }
    for (const auto& r : export_difficulty(net)) ok = ok && r.difficulty > -1.0 && r.difficulty < 1.0;
    for (std::size_t i = 0; i < std::min<std::size_t>(20, run.test_set.size()); ++i)
        for (const auto& r : export_trajectory(net, run.test_set.sequences[i]))
            ok = ok && r.theta > -1.0 && r.theta < 1.0 && r.beta > -1.0 && r.beta < 1.0 && r.p > 0.0 && r.p < 1.0;
    report(7, "interpretability ranges", ok && worst_attention <= kAttentionTol,
           std::to_string(steps) + " test steps, ranges " + (ok ? "hold" : "violated") + ", max |sum(w)-1| " +
               sci(worst_attention));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int shell(const std::string& cmd) { return std::system((cmd + " > /dev/null").c_str()); }

void cli_determinism() {
    const fs::path work = fs::temp_directory_path() / "kt_acceptance_determinism";
    fs::remove_all(work);
    fs::create_directories(work);
    const std::string cli = KTCLI_PATH;
    bool ok = shell(cli + " gen-synthetic --out " + (work / "data").string() + " --students 120 --questions 15 --seed 4") == 0;
    std::ofstream(work / "config.json")
        << R"({"model":"deep_irt","epochs":3,"trials":2,"cv_folds":2,"workers":2,"lr":0.01,)"
        << R"("arch":{"feature_dim":8},"grid":{"state_dims":[4,8],"memory_sizes":[3]}})";
    const std::string base = cli + " experiment --config " + (work / "config.json").string() + " --data " +
                             (work / "data" / "synthetic.csv").string() + " --report ";
    ok = ok && shell(base + (work / "a.json").string()) == 0;
    ok = ok && shell(base + (work / "b.json").string()) == 0;
    const std::string a = slurp(work / "a.json"), b = slurp(work / "b.json");
    ok = ok && !a.empty() && a == b;
    report(8, "experiment determinism", ok, std::to_string(a.size()) + "-byte reports " + (a == b ? "identical" : "differ"));
    fs::remove_all(work);
}

void generator_calibration() {
    const auto data = generate_synthetic(SyntheticConfig{}).dataset;
    double correct = 0;
    for (const auto& s : data.sequences)
        for (const auto& step : s.steps) correct += step.a;
    const double rate = correct / static_cast<double>(data.interaction_count());
    report(9, "generator calibration", std::fabs(rate - kRateTarget) <= kRateTol,
           "correct rate " + fmt(rate) + " over " + std::to_string(data.interaction_count()) + " responses");
}

}  // namespace

int main() {
    run(1, "gradient fidelity", gradient_fidelity);

    SyntheticRun syn;
    syn.data = generate_synthetic(SyntheticConfig{});
    std::tie(syn.train_set, syn.test_set) = split_train_test(syn.data.dataset, 0.3, 1);
    run(2, "synthetic learning signal", [&] { synthetic_learning(syn); });
    run(3, "baseline ordering", [&] { baseline_ordering(syn); });
    run(4, "IRT difficulty recovery", irt_recovery);
    run(5, "metric oracles", metric_oracles);
    run(6, "masking invariance", masking_invariance);
    run(7, "interpretability ranges", [&] {
        if (!syn.deep_irt) throw TrainingError("no trained deep_irt network");
        interpretability_ranges(syn);
    });
    run(8, "experiment determinism", cli_determinism);
    run(9, "generator calibration", generator_calibration);

    std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criterion(s) failed" : "acceptance: all criteria passed")
              << std::endl;
    return failures ? 1 : 0;
}
