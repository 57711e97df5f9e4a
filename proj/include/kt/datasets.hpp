#ifndef KT_DATASETS_HPP
#define KT_DATASETS_HPP

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kt/error.hpp"
#include "kt/rng.hpp"
#include "kt/tensor.hpp"

namespace kt {

struct Interaction {
    int q = 0;  ///< knowledge-component id, 1-based
    int a = 0;  ///< 1 correct, 0 incorrect

    friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct InteractionSequence {
    std::string student_id;
    std::vector<Interaction> steps;

    friend bool operator==(const InteractionSequence&, const InteractionSequence&) = default;
};

struct Dataset {
    std::string name;
    std::size_t num_kcs = 0;
    std::vector<InteractionSequence> sequences;

    std::size_t size() const noexcept { return sequences.size(); }
    std::size_t interaction_count() const {
        std::size_t n = 0;
        for (const auto& s : sequences) n += s.steps.size();
        return n;
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Interaction id q + a*Q, in [1, 2Q].
inline int encode_interaction(int q, int a, std::size_t num_kcs) {
    if (q < 1 || static_cast<std::size_t>(q) > num_kcs) {
        throw IndexError("question id " + std::to_string(q) + " outside [1, " + std::to_string(num_kcs) + "]", q);
    }
    if (a != 0 && a != 1) throw ValidationError("answer must be 0 or 1, got " + std::to_string(a));
    return q + a * static_cast<int>(num_kcs);
}

// ---------------------------------------------------------------------------
// Sequence files: three lines per student (count, question ids, answers).

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline long long parse_int(std::string_view token, std::size_t line) {
    token = trim(token);
    long long v = 0;
    const auto* first = token.data();
    const auto* last = token.data() + token.size();
    if (!token.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (token.empty() || ec != std::errc{} || ptr != last) {
        throw ParseError("expected an integer, got '" + std::string(token) + "'", line);
    }
    return v;
}

inline std::vector<long long> parse_int_list(std::string_view text, std::size_t line) {
    std::vector<long long> out;
    text = trim(text);
    if (text.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = text.find(',', start);
        const std::string_view tok = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
        const bool last = comma == std::string_view::npos;
        // A single trailing comma is tolerated.
        if (!(last && trim(tok).empty() && !out.empty())) out.push_back(parse_int(tok, line));
        if (last) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace detail

/// Parses triplet records. Student ids are assigned as 1-based ordinals.
/// When `num_kcs` is given it must cover every id; otherwise Q = max id.
inline Dataset parse_sequences(std::istream& in, std::optional<std::size_t> num_kcs = std::nullopt,
                               std::string name = "") {
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();

    Dataset ds;
    ds.name = std::move(name);
    std::size_t max_id = 0;
    std::size_t i = 0;
    while (i < lines.size()) {
        const std::size_t count_line = i + 1;
        if (i + 2 >= lines.size()) throw ParseError("incomplete record; expected 3 lines", lines.size() + 1);
        const long long n = detail::parse_int(lines[i], count_line);
        if (n < 1) throw ValidationError("line " + std::to_string(count_line) + ": step count must be positive");
        const auto qs = detail::parse_int_list(lines[i + 1], count_line + 1);
        if (static_cast<long long>(qs.size()) != n) {
            throw ParseError("expected " + std::to_string(n) + " question ids, found " + std::to_string(qs.size()),
                             count_line + 1);
        }
        const auto as = detail::parse_int_list(lines[i + 2], count_line + 2);
        if (static_cast<long long>(as.size()) != n) {
            throw ParseError("expected " + std::to_string(n) + " answers, found " + std::to_string(as.size()),
                             count_line + 2);
        }
        InteractionSequence seq;
        seq.student_id = std::to_string(ds.sequences.size() + 1);
        seq.steps.reserve(qs.size());
        for (std::size_t t = 0; t < qs.size(); ++t) {
            if (qs[t] < 1) {
                throw ValidationError("line " + std::to_string(count_line + 1) + ": question id " +
                                      std::to_string(qs[t]) + " is below 1");
            }
            if (as[t] != 0 && as[t] != 1) {
                throw ValidationError("line " + std::to_string(count_line + 2) + ": answer " + std::to_string(as[t]) +
                                      " is not 0 or 1");
            }
            max_id = std::max(max_id, static_cast<std::size_t>(qs[t]));
            seq.steps.push_back({static_cast<int>(qs[t]), static_cast<int>(as[t])});
        }
        ds.sequences.push_back(std::move(seq));
        i += 3;
    }
    if (num_kcs) {
        if (*num_kcs < max_id) {
            throw ValidationError("declared KC count " + std::to_string(*num_kcs) + " is below max id " +
                                  std::to_string(max_id));
        }
        ds.num_kcs = *num_kcs;
    } else {
        ds.num_kcs = max_id;
    }
    return ds;
}

inline Dataset load_sequences(const std::filesystem::path& path, std::optional<std::size_t> num_kcs = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open sequence file " + path.string());
    return parse_sequences(in, num_kcs, path.stem().string());
}

inline void write_sequences(std::ostream& out, const Dataset& ds) {
    for (const auto& seq : ds.sequences) {
        out << seq.steps.size() << '\n';
        for (std::size_t t = 0; t < seq.steps.size(); ++t) out << (t ? "," : "") << seq.steps[t].q;
        out << '\n';
        for (std::size_t t = 0; t < seq.steps.size(); ++t) out << (t ? "," : "") << seq.steps[t].a;
        out << '\n';
    }
}

inline void save_sequences(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    write_sequences(out, ds);
}

// ---------------------------------------------------------------------------
// Padding

/// Fixed-length id grids for a batch of (chunks of) sequences. Index 0 is
/// padding; `mask` is 1 exactly where q_ids is nonzero.
struct PaddedBatch {
    std::size_t rows = 0;
    std::size_t length = 0;
    std::size_t num_kcs = 0;
    std::vector<int> q_ids;
    std::vector<int> qa_ids;
    std::vector<int> answers;
    std::vector<unsigned char> mask;

    std::size_t index(std::size_t b, std::size_t t) const { return b * length + t; }
    int q(std::size_t b, std::size_t t) const { return q_ids[index(b, t)]; }
    int qa(std::size_t b, std::size_t t) const { return qa_ids[index(b, t)]; }
    int answer(std::size_t b, std::size_t t) const { return answers[index(b, t)]; }
    bool active(std::size_t b, std::size_t t) const { return mask[index(b, t)] != 0; }

    std::size_t active_count() const {
        return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), static_cast<unsigned char>(1)));
    }

    /// Same batch with `extra` padding steps appended to every row.
    PaddedBatch with_extra_padding(std::size_t extra) const {
        PaddedBatch out;
        out.rows = rows;
        out.length = length + extra;
        out.num_kcs = num_kcs;
        const std::size_t n = out.rows * out.length;
        out.q_ids.assign(n, 0);
        out.qa_ids.assign(n, 0);
        out.answers.assign(n, 0);
        out.mask.assign(n, 0);
        for (std::size_t b = 0; b < rows; ++b)
            for (std::size_t t = 0; t < length; ++t) {
                out.q_ids[out.index(b, t)] = q(b, t);
                out.qa_ids[out.index(b, t)] = qa(b, t);
                out.answers[out.index(b, t)] = answer(b, t);
                out.mask[out.index(b, t)] = mask[index(b, t)];
            }
        return out;
    }
};

/// Splits every sequence into consecutive chunks of at most `max_len` steps.
inline std::vector<InteractionSequence> chunk_sequences(std::span<const InteractionSequence> seqs, std::size_t max_len) {
    if (max_len < 1) throw ValidationError("sequence length must be at least 1");
    std::vector<InteractionSequence> out;
    for (const auto& s : seqs) {
        for (std::size_t start = 0; start < s.steps.size(); start += max_len) {
            const std::size_t end = std::min(s.steps.size(), start + max_len);
            out.push_back({s.student_id, {s.steps.begin() + static_cast<std::ptrdiff_t>(start),
                                          s.steps.begin() + static_cast<std::ptrdiff_t>(end)}});
        }
    }
    return out;
}

/// Chunks sequences longer than L, zero-pads the rest to L, and fills the mask.
inline PaddedBatch pad_and_mask(std::span<const InteractionSequence> seqs, std::size_t length, std::size_t num_kcs) {
    const auto chunks = chunk_sequences(seqs, length);
    PaddedBatch batch;
    batch.rows = chunks.size();
    batch.length = length;
    batch.num_kcs = num_kcs;
    const std::size_t n = batch.rows * length;
    batch.q_ids.assign(n, 0);
    batch.qa_ids.assign(n, 0);
    batch.answers.assign(n, 0);
    batch.mask.assign(n, 0);
    for (std::size_t b = 0; b < chunks.size(); ++b)
        for (std::size_t t = 0; t < chunks[b].steps.size(); ++t) {
            const auto [q, a] = chunks[b].steps[t];
            const std::size_t i = batch.index(b, t);
            batch.q_ids[i] = q;
            batch.qa_ids[i] = encode_interaction(q, a, num_kcs);
            batch.answers[i] = a;
            batch.mask[i] = 1;
        }
    return batch;
}

// ---------------------------------------------------------------------------
// Splits

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::uint64_t stream = 0) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed, stream);
    rng.shuffle(idx);
    return idx;
}

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> indices, std::string suffix = "") {
    Dataset out;
    out.name = ds.name + suffix;
    out.num_kcs = ds.num_kcs;
    out.sequences.reserve(indices.size());
    for (std::size_t i : indices) out.sequences.push_back(ds.sequences[i]);
    return out;
}

/// Seeded shuffle then split; the test part gets round(n * test_fraction)
/// sequences, clamped so both parts are non-empty.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test fraction must lie in (0, 1)");
    const std::size_t n = ds.size();
    if (n < 2) throw ValidationError("need at least 2 sequences to split, have " + std::to_string(n));
    const auto idx = shuffled_indices(n, seed);
    auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    const std::span<const std::size_t> all(idx);
    return {subset(ds, all.subspan(0, n - n_test), "/train"), subset(ds, all.subspan(n - n_test), "/test")};
}

struct Fold {
    Dataset train;
    Dataset validation;
};

/// k disjoint validation folds after a seeded shuffle; the first n % k folds
/// hold one extra sequence.
inline std::vector<Fold> kfold(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("k-fold needs k >= 2");
    const std::size_t n = ds.size();
    if (n < k) throw ValidationError("k-fold with k=" + std::to_string(k) + " needs at least k sequences, have " +
                                     std::to_string(n));
    const auto idx = shuffled_indices(n, seed, 1);
    std::vector<Fold> folds;
    std::size_t start = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t len = n / k + (f < n % k ? 1 : 0);
        std::vector<std::size_t> train_idx, val_idx;
        for (std::size_t i = 0; i < n; ++i) (i >= start && i < start + len ? val_idx : train_idx).push_back(idx[i]);
        const std::string tag = "/fold" + std::to_string(f);
        folds.push_back({subset(ds, train_idx, tag + "-train"), subset(ds, val_idx, tag + "-val")});
        start += len;
    }
    return folds;
}

// ---------------------------------------------------------------------------
// Synthetic students

struct SyntheticConfig {
    std::size_t num_students = 2000;
    std::size_t num_questions = 50;
    std::size_t num_concepts = 5;
    double guess_c = 0.25;
    double ability_std = 3.0;
    double difficulty_std = 1.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (num_students < 1 || num_questions < 1 || num_concepts < 1)
            throw ValidationError("synthetic counts must be positive");
        if (num_concepts > num_questions) throw ValidationError("more concepts than questions");
        if (!(guess_c >= 0.0 && guess_c <= 1.0)) throw ValidationError("guess probability must lie in [0, 1]");
        if (!(ability_std > 0.0) || !(difficulty_std > 0.0)) throw ValidationError("standard deviations must be positive");
    }
};

struct SyntheticData {
    Dataset dataset;
    std::vector<int> concept_of_question;     ///< 1-based concept per question (index q-1)
    std::vector<double> beta;                 ///< difficulty per question (index q-1)
    std::vector<std::vector<double>> theta;   ///< [student][concept-1]
};

/// Response probability c + (1 - c) * sigmoid(theta - beta).
inline double guessing_irt_probability(double theta, double beta, double guess_c) {
    return guess_c + (1.0 - guess_c) * sigmoid(theta - beta);
}

/// Every student answers questions 1..M in order. Concepts are dealt out
/// round-robin then shuffled, so each concept covers M/K questions (+-1).
/// Difficulties are drawn i.i.d. normal then centred to mean zero; abilities
/// are drawn per (student, concept). Stream 0 drives the question parameters,
/// stream i+1 drives student i.
inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    SyntheticData out;
    out.dataset.name = "synthetic";
    out.dataset.num_kcs = cfg.num_questions;

    Rng items(cfg.seed, 0);
    out.concept_of_question.resize(cfg.num_questions);
    for (std::size_t j = 0; j < cfg.num_questions; ++j)
        out.concept_of_question[j] = static_cast<int>(j % cfg.num_concepts) + 1;
    items.shuffle(out.concept_of_question);
    out.beta.resize(cfg.num_questions);
    double mean = 0.0;
    for (double& b : out.beta) {
        b = items.normal(0.0, cfg.difficulty_std);
        mean += b;
    }
    mean /= static_cast<double>(cfg.num_questions);
    for (double& b : out.beta) b -= mean;

    out.theta.resize(cfg.num_students);
    out.dataset.sequences.resize(cfg.num_students);
    for (std::size_t i = 0; i < cfg.num_students; ++i) {
        Rng rng(cfg.seed, i + 1);
        auto& theta = out.theta[i];
        theta.resize(cfg.num_concepts);
        for (double& t : theta) t = rng.normal(0.0, cfg.ability_std);
        auto& seq = out.dataset.sequences[i];
        seq.student_id = std::to_string(i + 1);
        seq.steps.resize(cfg.num_questions);
        for (std::size_t j = 0; j < cfg.num_questions; ++j) {
            const double p = guessing_irt_probability(theta[static_cast<std::size_t>(out.concept_of_question[j] - 1)],
                                                      out.beta[j], cfg.guess_c);
            seq.steps[j] = {static_cast<int>(j + 1), rng.bernoulli(p) ? 1 : 0};
        }
    }
    return out;
}

/// Writes questions.csv (question_id,concept_id,beta) and abilities.csv
/// (student_id,concept_id,theta) into `dir`.
inline void save_ground_truth(const std::filesystem::path& dir, const SyntheticData& data) {
    std::ofstream q(dir / "questions.csv");
    std::ofstream s(dir / "abilities.csv");
    if (!q || !s) throw ValidationError("cannot write ground truth into " + dir.string());
    q << std::setprecision(17) << "question_id,concept_id,beta\n";
    for (std::size_t j = 0; j < data.beta.size(); ++j) q << j + 1 << ',' << data.concept_of_question[j] << ',' << data.beta[j] << '\n';
    s << std::setprecision(17) << "student_id,concept_id,theta\n";
    for (std::size_t i = 0; i < data.theta.size(); ++i)
        for (std::size_t c = 0; c < data.theta[i].size(); ++c) s << i + 1 << ',' << c + 1 << ',' << data.theta[i][c] << '\n';
}

}  // namespace kt

#endif  // KT_DATASETS_HPP
