#ifndef KT_MODELS_HPP
#define KT_MODELS_HPP

// Knowledge-tracing networks over padded batches:
//  - memory networks (key-value memory with attention read and erase/add
//    write) with either a plain logistic output head or the ability /
//    difficulty head feeding the scaled IRT link sigmoid(3*theta - beta);
//  - an LSTM tracer over one-hot interaction ids.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kt/datasets.hpp"
#include "kt/error.hpp"
#include "kt/optim.hpp"
#include "kt/rng.hpp"
#include "kt/tensor.hpp"

namespace kt {

/// Scale applied to the ability estimate inside the IRT link.
inline constexpr double kAbilityScale = 3.0;

enum class NetworkKind { dkvmn, deep_irt, dkt };

inline std::string to_string(NetworkKind k) {
    switch (k) {
        case NetworkKind::dkvmn: return "dkvmn";
        case NetworkKind::deep_irt: return "deep_irt";
        case NetworkKind::dkt: return "dkt";
    }
    return "?";
}

struct MemoryArch {
    std::size_t num_kcs = 0;
    std::size_t memory_size = 20;  ///< N, number of memory slots
    std::size_t key_dim = 50;      ///< d_k
    std::size_t value_dim = 50;    ///< d_v
    std::size_t feature_dim = 50;  ///< d_f, width of the summary layer
};

struct LstmArch {
    std::size_t num_kcs = 0;
    std::size_t hidden = 50;
};

/// Learned state of a key-value memory network. Weights are stored
/// (in x out); biases are 1 x out rows.
struct MemoryNetwork {
    MemoryArch arch;
    bool irt_head = false;
    Tensor kc_embedding;          ///< A: Q x d_k
    Tensor response_embedding;    ///< B: 2Q x d_v
    Tensor key_memory;            ///< N x d_k
    Tensor initial_value_memory;  ///< N x d_v
    Tensor feature_w, feature_b;  ///< (d_v + d_k) -> d_f
    Tensor erase_w, erase_b;      ///< d_v -> d_v
    Tensor add_w, add_b;          ///< d_v -> d_v
    Tensor output_w, output_b;    ///< d_f -> 1 (plain head)
    Tensor ability_w, ability_b;  ///< d_f -> 1 (IRT head)
    Tensor difficulty_w, difficulty_b;  ///< d_k -> 1 (IRT head)

    ParamSet parameters() const {
        ParamSet ps;
        ps.add("A", kc_embedding);
        ps.add("B", response_embedding);
        ps.add("Mk", key_memory);
        ps.add("Mv0", initial_value_memory);
        ps.add("W_f", feature_w);
        ps.add("b_f", feature_b);
        ps.add("W_e", erase_w);
        ps.add("b_e", erase_b);
        ps.add("W_a", add_w);
        ps.add("b_a", add_b);
        if (irt_head) {
            ps.add("W_theta", ability_w);
            ps.add("b_theta", ability_b);
            ps.add("W_beta", difficulty_w);
            ps.add("b_beta", difficulty_b);
        } else {
            ps.add("W_p", output_w);
            ps.add("b_p", output_b);
        }
        return ps;
    }
};

/// Gate columns are laid out [input, forget, candidate, output].
struct LstmNetwork {
    LstmArch arch;
    Tensor input_w;      ///< 2Q x 4H (one-hot input, so a row lookup)
    Tensor recurrent_w;  ///< H x 4H
    Tensor gate_b;       ///< 1 x 4H
    Tensor output_w;     ///< H x Q
    Tensor output_b;     ///< 1 x Q

    ParamSet parameters() const {
        ParamSet ps;
        ps.add("W_x", input_w);
        ps.add("W_h", recurrent_w);
        ps.add("b_gates", gate_b);
        ps.add("W_y", output_w);
        ps.add("b_y", output_b);
        return ps;
    }
};

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

inline Tensor gaussian_param(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = rng.normal(0.0, stddev);
    return Tensor::parameter(rows, cols, std::move(v));
}

}  // namespace detail

inline MemoryNetwork init_memory_network(const MemoryArch& arch, bool irt_head, double stddev, std::uint64_t seed) {
    if (!(stddev > 0.0)) throw ValidationError("init std must be positive");
    if (arch.num_kcs < 1 || arch.memory_size < 1 || arch.key_dim < 1 || arch.value_dim < 1 || arch.feature_dim < 1)
        throw ValidationError("memory network sizes must be positive");
    Rng rng(seed, 0x1417);
    const std::size_t q = arch.num_kcs, n = arch.memory_size, dk = arch.key_dim, dv = arch.value_dim,
                      df = arch.feature_dim;
    MemoryNetwork net;
    net.arch = arch;
    net.irt_head = irt_head;
    net.kc_embedding = detail::gaussian_param(rng, q, dk, stddev);
    net.response_embedding = detail::gaussian_param(rng, 2 * q, dv, stddev);
    net.key_memory = detail::gaussian_param(rng, n, dk, stddev);
    net.initial_value_memory = detail::gaussian_param(rng, n, dv, stddev);
    net.feature_w = detail::gaussian_param(rng, dv + dk, df, stddev);
    net.feature_b = detail::gaussian_param(rng, 1, df, stddev);
    net.erase_w = detail::gaussian_param(rng, dv, dv, stddev);
    net.erase_b = detail::gaussian_param(rng, 1, dv, stddev);
    net.add_w = detail::gaussian_param(rng, dv, dv, stddev);
    net.add_b = detail::gaussian_param(rng, 1, dv, stddev);
    if (irt_head) {
        net.ability_w = detail::gaussian_param(rng, df, 1, stddev);
        net.ability_b = detail::gaussian_param(rng, 1, 1, stddev);
        net.difficulty_w = detail::gaussian_param(rng, dk, 1, stddev);
        net.difficulty_b = detail::gaussian_param(rng, 1, 1, stddev);
    } else {
        net.output_w = detail::gaussian_param(rng, df, 1, stddev);
        net.output_b = detail::gaussian_param(rng, 1, 1, stddev);
    }
    return net;
}

inline LstmNetwork init_lstm_network(const LstmArch& arch, double stddev, std::uint64_t seed) {
    if (!(stddev > 0.0)) throw ValidationError("init std must be positive");
    if (arch.num_kcs < 1 || arch.hidden < 1) throw ValidationError("LSTM sizes must be positive");
    Rng rng(seed, 0x157);
    const std::size_t q = arch.num_kcs, h = arch.hidden;
    LstmNetwork net;
    net.arch = arch;
    net.input_w = detail::gaussian_param(rng, 2 * q, 4 * h, stddev);
    net.recurrent_w = detail::gaussian_param(rng, h, 4 * h, stddev);
    net.gate_b = detail::gaussian_param(rng, 1, 4 * h, stddev);
    net.output_w = detail::gaussian_param(rng, h, q, stddev);
    net.output_b = detail::gaussian_param(rng, 1, q, stddev);
    return net;
}

// ---------------------------------------------------------------------------
// Memory network building blocks (batched: one row per sequence)

/// Softmax over slots of the inner products between k (B x d_k) and each
/// key-memory row. Returns B x N.
inline Tensor attention(const Tensor& key_memory, const Tensor& kc_embed) {
    return softmax_rows(matmul_nt(kc_embed, key_memory));
}

/// Attention-weighted sum of value-memory slots. memory is B x (N*d_v).
inline Tensor read(const Tensor& memory, const Tensor& weights, std::size_t value_dim) {
    return memory_read(memory, weights, value_dim);
}

inline Tensor summary_features(const Tensor& read_vec, const Tensor& kc_embed, const MemoryNetwork& net) {
    return tanh(linear(concat_cols(read_vec, kc_embed), net.feature_w, net.feature_b));
}

struct DkvmnPrediction {
    Tensor p;
    Tensor features;
};

inline DkvmnPrediction predict_dkvmn(const Tensor& read_vec, const Tensor& kc_embed, const MemoryNetwork& net) {
    Tensor f = summary_features(read_vec, kc_embed, net);
    return {sigmoid(linear(f, net.output_w, net.output_b)), f};
}

struct IrtPrediction {
    Tensor p;
    Tensor theta;
    Tensor beta;
};

/// Ability from the summary features, difficulty from the KC embedding alone.
inline IrtPrediction predict_deep_irt(const Tensor& read_vec, const Tensor& kc_embed, const MemoryNetwork& net) {
    Tensor f = summary_features(read_vec, kc_embed, net);
    Tensor theta = tanh(linear(f, net.ability_w, net.ability_b));
    Tensor beta = tanh(linear(kc_embed, net.difficulty_w, net.difficulty_b));
    Tensor p = sigmoid(sub(scale(theta, kAbilityScale), beta));
    return {p, theta, beta};
}

/// Erase/add update of the value memory with the interaction embedding v.
inline Tensor write(const Tensor& memory, const Tensor& weights, const Tensor& response_embed,
                    const MemoryNetwork& net, std::span<const unsigned char> active = {}) {
    Tensor erase = sigmoid(linear(response_embed, net.erase_w, net.erase_b));
    Tensor add_vec = tanh(linear(response_embed, net.add_w, net.add_b));
    return memory_write(memory, weights, erase, add_vec, active);
}

/// Difficulty per KC id (1-based ids in `ids`), no graph recorded.
inline std::vector<double> kc_difficulties(const MemoryNetwork& net, std::span<const int> ids) {
    if (!net.irt_head) throw ValidationError("difficulties need a network with the IRT head");
    NoGradGuard guard;
    Tensor k = gather_rows(net.kc_embedding, ids);
    Tensor beta = tanh(linear(k, net.difficulty_w, net.difficulty_b));
    return {beta.values().begin(), beta.values().end()};
}

// ---------------------------------------------------------------------------
// Sequence-level forward passes

struct StepOutputs {
    std::size_t rows = 0;
    std::size_t length = 0;
    Tensor p;                      ///< rows x length
    Tensor theta;                  ///< rows x length, IRT head only
    Tensor beta;                   ///< rows x length, IRT head only
    std::size_t slots = 0;
    std::vector<double> attention; ///< rows x length x slots, memory networks only
    /// Steps that carry a prediction. Memory networks predict every real
    /// step; the LSTM predicts steps 2..T of each row.
    std::vector<unsigned char> prediction_mask;

    double prob(std::size_t b, std::size_t t) const { return p(b, t); }
    std::span<const double> attention_at(std::size_t b, std::size_t t) const {
        return std::span<const double>(attention).subspan((b * length + t) * slots, slots);
    }
};

namespace detail {

/// Ids of column t with padding replaced by 1; padded rows' results are
/// never consumed.
inline std::vector<int> column_ids(const std::vector<int>& grid, const PaddedBatch& batch, std::size_t t) {
    std::vector<int> ids(batch.rows);
    for (std::size_t b = 0; b < batch.rows; ++b) {
        const int id = grid[batch.index(b, t)];
        ids[b] = id == 0 ? 1 : id;
    }
    return ids;
}

inline std::vector<unsigned char> column_mask(const PaddedBatch& batch, std::size_t t) {
    std::vector<unsigned char> m(batch.rows);
    for (std::size_t b = 0; b < batch.rows; ++b) m[b] = batch.mask[batch.index(b, t)];
    return m;
}

inline bool any_active(const std::vector<unsigned char>& m) {
    for (auto v : m)
        if (v) return true;
    return false;
}

inline void check_ids(const PaddedBatch& batch, std::size_t num_kcs) {
    for (std::size_t i = 0; i < batch.q_ids.size(); ++i) {
        const int q = batch.q_ids[i], qa = batch.qa_ids[i];
        if (q < 0 || static_cast<std::size_t>(q) > num_kcs)
            throw IndexError("question id " + std::to_string(q) + " exceeds model KC count " + std::to_string(num_kcs), q);
        if (qa < 0 || static_cast<std::size_t>(qa) > 2 * num_kcs)
            throw IndexError("interaction id " + std::to_string(qa) + " exceeds " + std::to_string(2 * num_kcs), qa);
    }
}

inline Tensor constant_column(std::size_t rows, double v) {
    return Tensor::from(rows, 1, std::vector<double>(rows, v));
}

}  // namespace detail

/// Runs a memory network over a padded batch. At each step the prediction
/// uses the value memory before that step's write; padded steps leave the
/// memory untouched. Fully padded columns are skipped.
inline StepOutputs forward_sequence(const MemoryNetwork& net, const PaddedBatch& batch) {
    detail::check_ids(batch, net.arch.num_kcs);
    const std::size_t rows = batch.rows, len = batch.length, n = net.arch.memory_size, dv = net.arch.value_dim;
    StepOutputs out;
    out.rows = rows;
    out.length = len;
    out.slots = n;
    out.attention.assign(rows * len * n, 0.0);
    out.prediction_mask = batch.mask;

    std::vector<Tensor> ps, thetas, betas;
    ps.reserve(len);
    Tensor memory = tile_rows(reshape(net.initial_value_memory, 1, n * dv), rows);
    for (std::size_t t = 0; t < len; ++t) {
        const auto active = detail::column_mask(batch, t);
        if (!detail::any_active(active)) {
            ps.push_back(detail::constant_column(rows, 0.5));
            if (net.irt_head) {
                thetas.push_back(detail::constant_column(rows, 0.0));
                betas.push_back(detail::constant_column(rows, 0.0));
            }
            continue;
        }
        const auto q = detail::column_ids(batch.q_ids, batch, t);
        Tensor k = gather_rows(net.kc_embedding, q);
        Tensor w = attention(net.key_memory, k);
        for (std::size_t b = 0; b < rows; ++b)
            std::copy_n(w.values().data() + b * n, n, out.attention.data() + (b * len + t) * n);
        Tensor r = read(memory, w, dv);
        if (net.irt_head) {
            auto pred = predict_deep_irt(r, k, net);
            ps.push_back(pred.p);
            thetas.push_back(pred.theta);
            betas.push_back(pred.beta);
        } else {
            ps.push_back(predict_dkvmn(r, k, net).p);
        }
        if (t + 1 < len) {
            const auto qa = detail::column_ids(batch.qa_ids, batch, t);
            Tensor v = gather_rows(net.response_embedding, qa);
            memory = write(memory, w, v, net, active);
        }
    }
    out.p = stack_cols(ps);
    if (net.irt_head) {
        out.theta = stack_cols(thetas);
        out.beta = stack_cols(betas);
    }
    return out;
}

struct LstmState {
    Tensor h;
    Tensor c;
};

/// One LSTM step on interaction ids (one-hot input realized as a row lookup).
inline LstmState lstm_step(const LstmNetwork& net, const LstmState& state, std::span<const int> qa_ids) {
    const std::size_t h = net.arch.hidden;
    Tensor z = add_row(add(gather_rows(net.input_w, qa_ids), matmul(state.h, net.recurrent_w)), net.gate_b);
    Tensor in_gate = sigmoid(slice_cols(z, 0, h));
    Tensor forget_gate = sigmoid(slice_cols(z, h, h));
    Tensor candidate = tanh(slice_cols(z, 2 * h, h));
    Tensor out_gate = sigmoid(slice_cols(z, 3 * h, h));
    Tensor c = add(mul(forget_gate, state.c), mul(in_gate, candidate));
    return {mul(out_gate, tanh(c)), c};
}

/// Per-KC probabilities y = sigmoid(W_y h + b_y), B x Q.
inline Tensor dkt_output(const LstmNetwork& net, const Tensor& hidden) {
    return sigmoid(linear(hidden, net.output_w, net.output_b));
}

/// Runs the LSTM tracer. Column t of `p` holds the prediction for step t made
/// from y_{t-1}; column 0 is a placeholder outside prediction_mask.
inline StepOutputs forward_dkt(const LstmNetwork& net, const PaddedBatch& batch) {
    detail::check_ids(batch, net.arch.num_kcs);
    const std::size_t rows = batch.rows, len = batch.length, hsz = net.arch.hidden;
    StepOutputs out;
    out.rows = rows;
    out.length = len;
    out.prediction_mask.assign(rows * len, 0);
    for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t t = 1; t < len; ++t) out.prediction_mask[batch.index(b, t)] = batch.mask[batch.index(b, t)];

    std::vector<Tensor> ps;
    ps.reserve(len);
    ps.push_back(detail::constant_column(rows, 0.5));
    LstmState state{Tensor::zeros(rows, hsz), Tensor::zeros(rows, hsz)};
    for (std::size_t t = 1; t < len; ++t) {
        const auto active = detail::column_mask(batch, t);
        if (!detail::any_active(active)) {
            ps.push_back(detail::constant_column(rows, 0.5));
            continue;
        }
        state = lstm_step(net, state, detail::column_ids(batch.qa_ids, batch, t - 1));
        std::vector<std::size_t> next_q(rows);
        for (std::size_t b = 0; b < rows; ++b) {
            const int q = batch.q(b, t);
            next_q[b] = q == 0 ? 0 : static_cast<std::size_t>(q - 1);
        }
        Tensor logit = pick_cols(linear(state.h, net.output_w, net.output_b), next_q);
        ps.push_back(sigmoid(logit));
    }
    out.p = stack_cols(ps);
    return out;
}

// ---------------------------------------------------------------------------
// Type-erased network

struct Network {
    NetworkKind kind = NetworkKind::deep_irt;
    std::variant<MemoryNetwork, LstmNetwork> impl;

    ParamSet parameters() const {
        return std::visit([](const auto& n) { return n.parameters(); }, impl);
    }

    StepOutputs forward(const PaddedBatch& batch) const {
        if (kind == NetworkKind::dkt) return forward_dkt(std::get<LstmNetwork>(impl), batch);
        return forward_sequence(std::get<MemoryNetwork>(impl), batch);
    }

    std::size_t num_kcs() const {
        return std::visit([](const auto& n) { return n.arch.num_kcs; }, impl);
    }

    const MemoryNetwork& memory() const { return std::get<MemoryNetwork>(impl); }
    const LstmNetwork& lstm() const { return std::get<LstmNetwork>(impl); }
};

/// Architecture sizes for any network kind. For memory networks `state_dim`
/// is d_k = d_v; for the LSTM it is the hidden size.
struct ArchSpec {
    NetworkKind kind = NetworkKind::deep_irt;
    std::size_t num_kcs = 0;
    std::size_t state_dim = 50;
    std::size_t memory_size = 20;
    std::size_t feature_dim = 50;

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

inline Network init_params(const ArchSpec& spec, double stddev, std::uint64_t seed) {
    Network net;
    net.kind = spec.kind;
    if (spec.kind == NetworkKind::dkt) {
        net.impl = init_lstm_network({spec.num_kcs, spec.state_dim}, stddev, seed);
    } else {
        const MemoryArch arch{spec.num_kcs, spec.memory_size, spec.state_dim, spec.state_dim, spec.feature_dim};
        net.impl = init_memory_network(arch, spec.kind == NetworkKind::deep_irt, stddev, seed);
    }
    return net;
}

inline ArchSpec arch_of(const Network& net) {
    ArchSpec spec;
    spec.kind = net.kind;
    if (net.kind == NetworkKind::dkt) {
        spec.num_kcs = net.lstm().arch.num_kcs;
        spec.state_dim = net.lstm().arch.hidden;
    } else {
        const auto& a = net.memory().arch;
        spec.num_kcs = a.num_kcs;
        spec.state_dim = a.key_dim;
        spec.memory_size = a.memory_size;
        spec.feature_dim = a.feature_dim;
    }
    return spec;
}

/// Independent deep copy.
inline Network clone(const Network& net) {
    Network copy = init_params(arch_of(net), 1.0, 0);
    copy.parameters().restore(net.parameters().snapshot());
    return copy;
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbabilityEpsilon = 1e-7;

struct SequenceLoss {
    Tensor total;        ///< summed cross-entropy over predicted steps (1x1)
    std::size_t count = 0;

    double mean() const { return count ? total.item() / static_cast<double>(count) : 0.0; }
    Tensor mean_tensor() const { return scale(total, count ? 1.0 / static_cast<double>(count) : 0.0); }
};

inline SequenceLoss sequence_loss(const StepOutputs& outputs, const PaddedBatch& batch) {
    if (outputs.rows != batch.rows || outputs.length != batch.length)
        throw DimensionError("sequence_loss: outputs and batch shapes differ");
    const std::size_t n = batch.rows * batch.length;
    std::vector<double> targets(n), weights(n);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        targets[i] = batch.answers[i];
        weights[i] = outputs.prediction_mask[i] ? 1.0 : 0.0;
        count += outputs.prediction_mask[i] ? 1 : 0;
    }
    return {binary_cross_entropy_sum(outputs.p, targets, weights, kProbabilityEpsilon), count};
}

}  // namespace kt

#endif  // KT_MODELS_HPP
