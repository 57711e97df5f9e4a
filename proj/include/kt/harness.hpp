#ifndef KT_HARNESS_HPP
#define KT_HARNESS_HPP

// Training loop, cross-validated grid search, repeated-trial experiments,
// classical baselines behind the same report format, and the difficulty /
// trajectory exports.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kt/baselines.hpp"
#include "kt/checkpoint.hpp"
#include "kt/datasets.hpp"
#include "kt/eval.hpp"
#include "kt/models.hpp"
#include "kt/optim.hpp"

namespace kt {

enum class ModelType { dkt, dkvmn, deep_irt, pfa, lfa, irt, item_analysis };

inline std::string to_string(ModelType m) {
    switch (m) {
        case ModelType::dkt: return "dkt";
        case ModelType::dkvmn: return "dkvmn";
        case ModelType::deep_irt: return "deep_irt";
        case ModelType::pfa: return "pfa";
        case ModelType::lfa: return "lfa";
        case ModelType::irt: return "irt";
        case ModelType::item_analysis: return "item_analysis";
    }
    return "?";
}

inline ModelType parse_model_type(const std::string& s) {
    for (auto m : {ModelType::dkt, ModelType::dkvmn, ModelType::deep_irt, ModelType::pfa, ModelType::lfa,
                   ModelType::irt, ModelType::item_analysis})
        if (to_string(m) == s) return m;
    if (s == "item") return ModelType::item_analysis;
    throw ValidationError("unknown model '" + s + "'");
}

inline bool is_network(ModelType m) {
    return m == ModelType::dkt || m == ModelType::dkvmn || m == ModelType::deep_irt;
}

inline NetworkKind network_kind(ModelType m) {
    switch (m) {
        case ModelType::dkt: return NetworkKind::dkt;
        case ModelType::dkvmn: return NetworkKind::dkvmn;
        case ModelType::deep_irt: return NetworkKind::deep_irt;
        default: throw ValidationError(to_string(m) + " is not a neural model");
    }
}

struct GridSpec {
    std::vector<std::size_t> state_dims{10, 50, 100, 200};
    std::vector<std::size_t> memory_sizes{5, 10, 20, 50, 100};
};

struct TrainConfig {
    ModelType model = ModelType::deep_irt;
    double lr = 0.003;
    std::size_t batch_size = 32;
    double clip_norm = 10.0;
    std::size_t seq_len = 200;
    std::size_t epochs = 50;
    double init_std = 0.05;
    std::size_t state_dim = 50;    ///< d_k = d_v for memory models, hidden size for DKT
    std::size_t memory_size = 20;  ///< N
    std::size_t feature_dim = 50;  ///< d_f
    std::uint64_t seed = 1;
    double test_fraction = 0.3;
    std::size_t cv_folds = 5;
    std::size_t trials = 5;
    bool best_epoch = true;        ///< keep the epoch with the lowest training loss
    std::size_t workers = 1;       ///< threads for grid points / folds / trials
    GridSpec grid;

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0)) throw ValidationError(std::string(name) + " must be positive");
        };
        positive(lr, "lr");
        positive(static_cast<double>(batch_size), "batch_size");
        positive(clip_norm, "clip_norm");
        positive(static_cast<double>(seq_len), "seq_len");
        positive(init_std, "init_std");
        positive(static_cast<double>(state_dim), "state_dim");
        positive(static_cast<double>(memory_size), "memory_size");
        positive(static_cast<double>(feature_dim), "feature_dim");
        positive(static_cast<double>(trials), "trials");
        positive(static_cast<double>(workers), "workers");
        if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must lie in (0, 1)");
        if (cv_folds < 2) throw ValidationError("cv_folds must be at least 2");
        if (grid.state_dims.empty() || grid.memory_sizes.empty()) throw ValidationError("grid value sets must be non-empty");
        for (auto v : grid.state_dims) positive(static_cast<double>(v), "grid.state_dims");
        for (auto v : grid.memory_sizes) positive(static_cast<double>(v), "grid.memory_sizes");
    }

    ArchSpec arch(std::size_t num_kcs) const {
        return {network_kind(model), num_kcs, state_dim, memory_size, feature_dim};
    }
};

// ---------------------------------------------------------------------------
// Config JSON. Unknown keys are rejected. "arch" may give state_dim, or
// key_dim/value_dim (which must agree), or hidden for DKT.

inline nlohmann::json config_to_json(const TrainConfig& c) {
    return {{"model", to_string(c.model)},
            {"lr", c.lr},
            {"batch_size", c.batch_size},
            {"clip_norm", c.clip_norm},
            {"seq_len", c.seq_len},
            {"epochs", c.epochs},
            {"init_std", c.init_std},
            {"arch", {{"state_dim", c.state_dim}, {"memory_size", c.memory_size}, {"feature_dim", c.feature_dim}}},
            {"seed", c.seed},
            {"test_fraction", c.test_fraction},
            {"cv_folds", c.cv_folds},
            {"trials", c.trials},
            {"best_epoch", c.best_epoch},
            {"grid", {{"state_dims", c.grid.state_dims}, {"memory_sizes", c.grid.memory_sizes}}}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    static const std::set<std::string> known{"model", "lr",     "batch_size",    "clip_norm", "seq_len",
                                             "epochs", "init_std", "arch",        "seed",      "test_fraction",
                                             "cv_folds", "trials", "best_epoch", "workers",   "grid"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ValidationError("unknown config key '" + key + "'");
    TrainConfig c;
    try {
        if (j.contains("model")) c.model = parse_model_type(j["model"].get<std::string>());
        if (j.contains("lr")) c.lr = j["lr"].get<double>();
        if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("clip_norm")) c.clip_norm = j["clip_norm"].get<double>();
        if (j.contains("seq_len")) c.seq_len = j["seq_len"].get<std::size_t>();
        if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
        if (j.contains("init_std")) c.init_std = j["init_std"].get<double>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("test_fraction")) c.test_fraction = j["test_fraction"].get<double>();
        if (j.contains("cv_folds")) c.cv_folds = j["cv_folds"].get<std::size_t>();
        if (j.contains("trials")) c.trials = j["trials"].get<std::size_t>();
        if (j.contains("best_epoch")) c.best_epoch = j["best_epoch"].get<bool>();
        if (j.contains("workers")) c.workers = j["workers"].get<std::size_t>();
        if (j.contains("arch")) {
            const auto& a = j["arch"];
            static const std::set<std::string> arch_keys{"state_dim", "key_dim", "value_dim", "hidden", "memory_size",
                                                         "feature_dim"};
            for (const auto& [key, value] : a.items())
                if (!arch_keys.count(key)) throw ValidationError("unknown arch key '" + key + "'");
            if (a.contains("key_dim") && a.contains("value_dim") &&
                a["key_dim"].get<std::size_t>() != a["value_dim"].get<std::size_t>())
                throw ValidationError("key_dim and value_dim must be equal");
            for (const char* key : {"state_dim", "key_dim", "value_dim", "hidden"})
                if (a.contains(key)) c.state_dim = a[key].get<std::size_t>();
            if (a.contains("memory_size")) c.memory_size = a["memory_size"].get<std::size_t>();
            if (a.contains("feature_dim")) c.feature_dim = a["feature_dim"].get<std::size_t>();
        }
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            if (g.contains("state_dims")) c.grid.state_dims = g["state_dims"].get<std::vector<std::size_t>>();
            if (g.contains("memory_sizes")) c.grid.memory_sizes = g["memory_sizes"].get<std::vector<std::size_t>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Parallel helper: runs jobs [0, n) on up to `workers` threads. Each job
// writes only its own result slot, so output order never depends on timing.

inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    job(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Training

struct TrainLog {
    std::vector<double> epoch_loss;       ///< mean per-prediction training loss
    std::vector<double> epoch_max_norm;   ///< largest post-clip global gradient norm
    std::size_t best_epoch = 0;           ///< 1-based; 0 when no epoch ran
    std::size_t steps = 0;
};

struct TrainResult {
    Network network;
    TrainLog log;
};

namespace detail {

inline PaddedBatch batch_of(const std::vector<InteractionSequence>& rows, std::span<const std::size_t> order,
                            std::size_t num_kcs) {
    std::vector<InteractionSequence> picked;
    picked.reserve(order.size());
    std::size_t len = 1;
    for (std::size_t i : order) {
        picked.push_back(rows[i]);
        len = std::max(len, rows[i].steps.size());
    }
    return pad_and_mask(picked, len, num_kcs);
}

}  // namespace detail

/// Minibatch Adam with global-norm clipping. Sequences are chunked to
/// seq_len; each batch is padded only to its longest row.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    if (data.size() == 0) throw ValidationError("train: empty dataset");
    TrainResult result{init_params(cfg.arch(data.num_kcs), cfg.init_std, cfg.seed), {}};
    const ParamSet params = result.network.parameters();
    AdamState adam(params);
    const auto rows = chunk_sequences(data.sequences, cfg.seq_len);

    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffled_indices(rows.size(), cfg.seed, 1000 + epoch);
        double loss_sum = 0.0, max_norm = 0.0;
        std::size_t count = 0;
        for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            const PaddedBatch batch = detail::batch_of(rows, std::span(order).subspan(start, len), data.num_kcs);
            const StepOutputs out = result.network.forward(batch);
            const SequenceLoss loss = sequence_loss(out, batch);
            if (!std::isfinite(loss.total.item()))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                    std::to_string(b + 1));
            if (loss.count == 0) continue;
            loss_sum += loss.total.item();
            count += loss.count;
            backward(loss.mean_tensor());
            clip_global_norm(params, cfg.clip_norm);
            auto g = params.grads();
            max_norm = std::max(max_norm, global_norm(std::span<const std::span<double>>(g)));
            adam_step(params, adam, cfg.lr);
            ++result.log.steps;
        }
        const double epoch_loss = count ? loss_sum / static_cast<double>(count) : 0.0;
        result.log.epoch_loss.push_back(epoch_loss);
        result.log.epoch_max_norm.push_back(max_norm);
        if (cfg.best_epoch && epoch_loss < best_loss) {
            best_loss = epoch_loss;
            best = params.snapshot();
            result.log.best_epoch = epoch + 1;
        }
    }
    if (cfg.best_epoch && !best.empty()) {
        params.restore(best);
    } else if (cfg.epochs > 0) {
        result.log.best_epoch = cfg.epochs;
    }
    return result;
}

/// Predictions on every predicted step of `data`, in sequence order.
inline PredictionSet predict(const Network& net, const Dataset& data, std::size_t seq_len, std::size_t batch_size = 64) {
    NoGradGuard guard;
    const auto rows = chunk_sequences(data.sequences, seq_len);
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    PredictionSet out;
    for (std::size_t start = 0; start < rows.size(); start += batch_size) {
        const std::size_t len = std::min(batch_size, rows.size() - start);
        const PaddedBatch batch = detail::batch_of(rows, std::span(order).subspan(start, len), data.num_kcs);
        const StepOutputs res = net.forward(batch);
        for (std::size_t i = 0; i < batch.mask.size(); ++i)
            if (res.prediction_mask[i]) out.add(res.p.values()[i], batch.answers[i]);
    }
    return out;
}

inline TrialMetrics score(const PredictionSet& p, std::uint64_t seed = 0) {
    return {seed, auc(p), accuracy(p), mean_xent(p)};
}

// ---------------------------------------------------------------------------
// Grid search

struct GridRow {
    std::size_t state_dim = 0;
    std::size_t memory_size = 0;
    std::size_t param_count = 0;
    std::vector<double> fold_losses;
    double mean_loss = std::numeric_limits<double>::quiet_NaN();
};

struct GridResult {
    std::vector<GridRow> rows;
    std::size_t best_index = 0;
    TrainConfig best;
    bool cross_validated = false;
};

/// Grid points in declaration order: state dims outer, memory sizes inner.
/// The LSTM ignores memory sizes.
inline std::vector<GridRow> grid_points(const GridSpec& grid, const TrainConfig& base, std::size_t num_kcs) {
    std::vector<GridRow> rows;
    for (auto d : grid.state_dims) {
        if (base.model == ModelType::dkt) {
            GridRow r{d, base.memory_size, 0, {}, std::numeric_limits<double>::quiet_NaN()};
            rows.push_back(r);
            continue;
        }
        for (auto n : grid.memory_sizes) rows.push_back({d, n, 0, {}, std::numeric_limits<double>::quiet_NaN()});
    }
    for (auto& r : rows) {
        ArchSpec spec = base.arch(num_kcs);
        spec.state_dim = r.state_dim;
        spec.memory_size = r.memory_size;
        r.param_count = init_params(spec, 1.0, 0).parameters().scalar_count();
    }
    return rows;
}

/// Lowest mean CV loss; ties go to fewer parameters, then earlier rows.
inline std::size_t select_best(std::span<const GridRow> rows) {
    if (rows.empty()) throw ValidationError("select_best: empty grid");
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& a = rows[i];
        const auto& b = rows[best];
        if (a.mean_loss < b.mean_loss || (a.mean_loss == b.mean_loss && a.param_count < b.param_count)) best = i;
    }
    return best;
}

inline TrainConfig with_point(TrainConfig cfg, const GridRow& row) {
    cfg.state_dim = row.state_dim;
    cfg.memory_size = row.memory_size;
    return cfg;
}

/// k-fold CV of every grid point on `train_set`. A single-point grid is
/// returned without running CV.
inline GridResult grid_search(const GridSpec& grid, const TrainConfig& base, const Dataset& train_set) {
    base.validate();
    GridResult res;
    res.rows = grid_points(grid, base, train_set.num_kcs);
    if (res.rows.size() == 1) {
        res.best_index = 0;
        res.best = with_point(base, res.rows[0]);
        return res;
    }
    const auto folds = kfold(train_set, base.cv_folds, base.seed);
    const std::size_t k = folds.size();
    for (auto& r : res.rows) r.fold_losses.assign(k, 0.0);
    parallel_for(res.rows.size() * k, base.workers, [&](std::size_t job) {
        auto& row = res.rows[job / k];
        const auto& fold = folds[job % k];
        TrainConfig cfg = with_point(base, row);
        cfg.workers = 1;
        const TrainResult tr = train(cfg, fold.train);
        row.fold_losses[job % k] = mean_xent(predict(tr.network, fold.validation, cfg.seq_len));
    });
    for (auto& r : res.rows) r.mean_loss = mean(r.fold_losses);
    res.cross_validated = true;
    res.best_index = select_best(res.rows);
    res.best = with_point(base, res.rows[res.best_index]);
    return res;
}

// ---------------------------------------------------------------------------
// Baselines behind the report format

struct BaselineFit {
    ModelType model = ModelType::pfa;
    std::optional<LogisticModel> logistic;
    std::optional<IrtParams> irt;
    std::map<int, double> item_difficulty;
    std::size_t unknown_predictions = 0;  ///< test steps scored 0.5 for lack of a fitted skill/item
};

inline BaselineFit fit_baseline(ModelType model, const Dataset& train_set) {
    BaselineFit fit;
    fit.model = model;
    switch (model) {
        case ModelType::pfa:
        case ModelType::lfa: {
            const auto obs = build_pfa_features(train_set.sequences);
            fit.logistic = fit_logistic(obs, model == ModelType::pfa ? LogisticDesign::pfa : LogisticDesign::lfa);
            break;
        }
        case ModelType::irt: fit.irt = fit_irt(first_attempts(train_set.sequences)); break;
        case ModelType::item_analysis: fit.item_difficulty = item_analysis(train_set.sequences, 1); break;
        default: throw ValidationError(to_string(model) + " is not a baseline model");
    }
    return fit;
}

/// Scores every step of `test_set`. IRT and item analysis treat test students
/// as unseen (ability at the anchored mean, 0).
inline PredictionSet predict_baseline(BaselineFit& fit, const Dataset& test_set) {
    PredictionSet out;
    fit.unknown_predictions = 0;
    if (fit.logistic) {
        for (const auto& obs : build_pfa_features(test_set.sequences)) {
            const auto pred = predict_skill(*fit.logistic, obs);
            if (!pred.known_skill) ++fit.unknown_predictions;
            out.add(pred.p, obs.label);
        }
        return out;
    }
    for (const auto& seq : test_set.sequences)
        for (const auto& step : seq.steps) {
            double p = 0.5;
            bool known = false;
            if (fit.irt) {
                if (auto beta = fit.irt->difficulty(step.q)) {
                    p = irt_predict(0.0, *beta);
                    known = true;
                }
            } else if (auto it = fit.item_difficulty.find(step.q); it != fit.item_difficulty.end()) {
                p = 1.0 - it->second;
                known = true;
            }
            if (!known) ++fit.unknown_predictions;
            out.add(p, step.a);
        }
    return out;
}

/// Difficulty rows (question_id, source, difficulty) from a fitted baseline.
struct DifficultyRow {
    int question_id = 0;
    std::string source;
    double difficulty = 0.0;
};

inline std::vector<DifficultyRow> baseline_difficulties(const BaselineFit& fit) {
    std::vector<DifficultyRow> rows;
    if (fit.logistic && fit.model == ModelType::pfa)
        for (const auto& [q, c] : fit.logistic->skills) rows.push_back({q, "pfa_beta", c.beta});
    if (fit.irt)
        for (std::size_t j = 0; j < fit.irt->questions.size(); ++j) rows.push_back({fit.irt->questions[j], "irt", fit.irt->beta[j]});
    for (const auto& [q, d] : fit.item_difficulty) rows.push_back({q, "item_analysis", d});
    return rows;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentResult {
    std::string dataset;
    TrainConfig config;
    std::optional<GridResult> grid;
    TrainConfig chosen;
    EvalReport report;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

/// Seeded train/test split, grid search on the training part, then `trials`
/// retrain-and-evaluate runs with seeds seed + i. Baseline models are fit once.
inline ExperimentResult run_experiment(const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    ExperimentResult res;
    res.dataset = data.name;
    res.config = cfg;
    auto [train_set, test_set] = split_train_test(data, cfg.test_fraction, cfg.seed);
    res.train_size = train_set.size();
    res.test_size = test_set.size();
    for (const auto& s : train_set.sequences) res.train_ids.push_back(s.student_id);
    for (const auto& s : test_set.sequences) res.test_ids.push_back(s.student_id);

    if (!is_network(cfg.model)) {
        BaselineFit fit = fit_baseline(cfg.model, train_set);
        const TrialMetrics m = score(predict_baseline(fit, test_set), cfg.seed);
        res.chosen = cfg;
        res.report = aggregate_trials(std::span(&m, 1));
        return res;
    }

    res.grid = grid_search(cfg.grid, cfg, train_set);
    res.chosen = res.grid->best;
    std::vector<TrialMetrics> trials(cfg.trials);
    parallel_for(cfg.trials, cfg.workers, [&](std::size_t i) {
        TrainConfig t = res.chosen;
        t.seed = cfg.seed + i;
        t.workers = 1;
        const TrainResult tr = train(t, train_set);
        trials[i] = score(predict(tr.network, test_set, t.seq_len), t.seed);
    });
    res.report = aggregate_trials(trials);
    return res;
}

inline nlohmann::json metrics_json(const MetricSummary& m) { return {{"auc", m.auc}, {"acc", m.acc}, {"loss", m.loss}}; }

/// Report document: {dataset, model, config, trials: [{seed, auc, acc, loss}],
/// mean, std, n_trials, std_convention, ...}.
inline nlohmann::json report_to_json(const ExperimentResult& r) {
    nlohmann::json j;
    j["dataset"] = r.dataset;
    j["model"] = to_string(r.config.model);
    j["config"] = config_to_json(r.config);
    j["selected"] = {{"state_dim", r.chosen.state_dim}, {"memory_size", r.chosen.memory_size}};
    j["split"] = {{"train", r.train_size}, {"test", r.test_size}};
    if (r.grid) {
        nlohmann::json table = nlohmann::json::array();
        for (const auto& row : r.grid->rows) {
            nlohmann::json e{{"state_dim", row.state_dim}, {"memory_size", row.memory_size}, {"params", row.param_count}};
            if (r.grid->cross_validated) {
                e["fold_losses"] = row.fold_losses;
                e["mean_loss"] = row.mean_loss;
            }
            table.push_back(e);
        }
        j["cv"] = {{"cross_validated", r.grid->cross_validated}, {"best_index", r.grid->best_index}, {"table", table}};
    }
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : r.report.trials) trials.push_back({{"seed", t.seed}, {"auc", t.auc}, {"acc", t.acc}, {"loss", t.loss}});
    j["trials"] = trials;
    j["n_trials"] = r.report.trials.size();
    j["mean"] = metrics_json(r.report.mean);
    j["std"] = metrics_json(r.report.std);
    j["std_convention"] = r.report.single_trial ? "single_trial_zero" : "sample";
    return j;
}

// ---------------------------------------------------------------------------
// Exports

/// tanh(W_beta A[q] + b_beta) for every question id 1..Q of the network.
inline std::vector<DifficultyRow> export_difficulty(const Network& net) {
    if (net.kind != NetworkKind::deep_irt) throw ValidationError("difficulty export needs a deep_irt checkpoint");
    const std::size_t q = net.num_kcs();
    std::vector<int> ids(q);
    for (std::size_t i = 0; i < q; ++i) ids[i] = static_cast<int>(i + 1);
    const auto beta = kc_difficulties(net.memory(), ids);
    std::vector<DifficultyRow> rows;
    for (std::size_t i = 0; i < q; ++i) rows.push_back({ids[i], "deep_irt_beta", beta[i]});
    return rows;
}

inline void write_difficulty_csv(std::ostream& out, std::span<const DifficultyRow> rows) {
    out << std::setprecision(17) << "question_id,source,difficulty\n";
    for (const auto& r : rows) out << r.question_id << ',' << r.source << ',' << r.difficulty << '\n';
}

inline std::vector<DifficultyRow> read_difficulty_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open difficulty file " + path.string());
    std::vector<DifficultyRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || (lineno == 1 && line.rfind("question_id", 0) == 0)) continue;
        std::stringstream ss(line);
        std::string q, source, d;
        if (!std::getline(ss, q, ',') || !std::getline(ss, source, ',') || !std::getline(ss, d))
            throw ParseError("expected question_id,source,difficulty", lineno);
        DifficultyRow r;
        r.question_id = static_cast<int>(detail::parse_int(q, lineno));
        r.source = source;
        try {
            std::size_t used = 0;
            r.difficulty = std::stod(d, &used);
            if (used != d.size()) throw std::invalid_argument(d);
        } catch (const std::exception&) {
            throw ParseError("bad difficulty value '" + d + "'", lineno);
        }
        rows.push_back(r);
    }
    return rows;
}

struct PearsonRow {
    std::string source_a;
    std::string source_b;
    std::size_t n = 0;
    std::optional<double> r;  ///< empty when fewer than 2 shared questions or zero variance
};

/// Pearson r between every pair of sources over their shared question ids.
inline std::vector<PearsonRow> pairwise_pearson(std::span<const DifficultyRow> rows) {
    std::map<std::string, std::map<int, double>> by_source;
    for (const auto& r : rows) by_source[r.source][r.question_id] = r.difficulty;
    std::vector<PearsonRow> out;
    for (auto a = by_source.begin(); a != by_source.end(); ++a)
        for (auto b = std::next(a); b != by_source.end(); ++b) {
            std::vector<double> xs, ys;
            for (const auto& [q, v] : a->second)
                if (auto it = b->second.find(q); it != b->second.end()) {
                    xs.push_back(v);
                    ys.push_back(it->second);
                }
            PearsonRow row{a->first, b->first, xs.size(), std::nullopt};
            try {
                row.r = pearson(xs, ys);
            } catch (const UndefinedMetricError&) {
            }
            out.push_back(row);
        }
    return out;
}

inline void write_pearson_csv(std::ostream& out, std::span<const PearsonRow> rows) {
    out << std::setprecision(17) << "source_a,source_b,n,r\n";
    for (const auto& r : rows) {
        out << r.source_a << ',' << r.source_b << ',' << r.n << ',';
        if (r.r) out << *r.r;
        out << '\n';
    }
}

struct TrajectoryRow {
    std::size_t t = 0;  ///< 1-based step
    int q = 0;
    int a = 0;
    double theta = 0.0;
    double beta = 0.0;
    double p = 0.0;
};

/// Per-step ability, difficulty and probability for one whole sequence.
inline std::vector<TrajectoryRow> export_trajectory(const Network& net, const InteractionSequence& seq) {
    if (net.kind != NetworkKind::deep_irt) throw ValidationError("trajectory export needs a deep_irt checkpoint");
    if (seq.steps.empty()) throw ValidationError("trajectory export needs a non-empty sequence");
    NoGradGuard guard;
    const PaddedBatch batch = pad_and_mask(std::span(&seq, 1), seq.steps.size(), net.num_kcs());
    const StepOutputs out = net.forward(batch);
    std::vector<TrajectoryRow> rows;
    for (std::size_t t = 0; t < seq.steps.size(); ++t)
        rows.push_back({t + 1, seq.steps[t].q, seq.steps[t].a, out.theta(0, t), out.beta(0, t), out.p(0, t)});
    return rows;
}

inline void write_trajectory_csv(std::ostream& out, std::span<const TrajectoryRow> rows) {
    out << std::setprecision(17) << "t,q,a,theta,beta,p\n";
    for (const auto& r : rows) out << r.t << ',' << r.q << ',' << r.a << ',' << r.theta << ',' << r.beta << ',' << r.p << '\n';
}

}  // namespace kt

#endif  // KT_HARNESS_HPP
