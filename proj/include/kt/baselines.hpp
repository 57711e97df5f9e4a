#ifndef KT_BASELINES_HPP
#define KT_BASELINES_HPP

// Classical reference models: one-parameter IRT, LFA and PFA logistic
// models, and item-analysis difficulty.
//
// All iterative fits minimize an L2-penalized Bernoulli negative
// log-likelihood by Newton steps with Armijo backtracking, so the objective
// never gets worse beyond rounding. Iteration stops once the full gradient norm drops below
// the tolerance.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kt/datasets.hpp"
#include "kt/error.hpp"
#include "kt/tensor.hpp"

namespace kt {

struct FitOptions {
    double l2 = 1e-4;
    std::size_t max_iterations = 500;
    double tolerance = 1e-6;
};

// ---------------------------------------------------------------------------
// 1PL IRT

inline double irt_predict(double theta, double beta) { return sigmoid(theta - beta); }

struct Response {
    std::string student;
    int question = 0;
    int answer = 0;
};

/// First attempt of each student at each question, in sequence order.
inline std::vector<Response> first_attempts(std::span<const InteractionSequence> seqs) {
    std::vector<Response> out;
    for (const auto& s : seqs) {
        std::unordered_map<int, bool> seen;
        for (const auto& step : s.steps)
            if (seen.emplace(step.q, true).second) out.push_back({s.student_id, step.q, step.a});
    }
    return out;
}

struct IrtParams {
    std::vector<std::string> students;
    std::vector<double> theta;
    std::vector<int> questions;  ///< ascending
    std::vector<double> beta;
    bool converged = false;
    double gradient_norm = 0.0;
    std::size_t iterations = 0;

    std::optional<double> difficulty(int question) const {
        auto it = std::lower_bound(questions.begin(), questions.end(), question);
        if (it == questions.end() || *it != question) return std::nullopt;
        return beta[static_cast<std::size_t>(it - questions.begin())];
    }
};
namespace detail {

inline double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

/// Negative log-likelihood term for one observation with logit z.
inline double nll(double z, int y) { return y ? log1pexp(-z) : log1pexp(z); }

/// Solves A x = b for a symmetric positive-definite n x n row-major A.
inline std::vector<double> cholesky_solve(std::vector<double> a, std::size_t n, std::vector<double> b) {
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        const double l = std::sqrt(std::max(d, 1e-300));
        a[j * n + j] = l;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / l;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
        b[i] = s / a[i * n + i];
    }
    return b;
}

inline constexpr double kArmijo = 1e-4;
inline constexpr int kMaxHalvings = 50;

/// Sufficient decrease, or a full Newton step whose change is lost in the
/// rounding of an objective summed over many terms.
inline bool accept_step(double candidate, double current, double t, double decrease) {
    if (candidate <= current - kArmijo * t * decrease) return true;
    return t == 1.0 && candidate <= current + 1e-12 * std::fabs(current);
}

}  // namespace detail

/// Fits sigmoid(theta_i - beta_j) to first-attempt responses by damped
/// Newton on the penalized negative log-likelihood. The ability block of
/// the Hessian is diagonal, so each step eliminates it and solves a dense
/// system over the difficulties. The result is shifted so mean(theta) = 0.
inline IrtParams fit_irt(std::span<const Response> responses, const FitOptions& opt = {}) {
    if (responses.empty()) throw ValidationError("fit_irt: no responses");
    IrtParams out;
    std::unordered_map<std::string, std::size_t> student_index;
    std::map<int, std::size_t> question_set;
    for (const auto& r : responses) {
        if (student_index.emplace(r.student, out.students.size()).second) out.students.push_back(r.student);
        question_set.emplace(r.question, 0);
    }
    for (auto& [q, idx] : question_set) {
        idx = out.questions.size();
        out.questions.push_back(q);
    }
    const std::size_t ns = out.students.size(), nq = out.questions.size(), n = responses.size();
    std::vector<std::size_t> si(n), qi(n);
    std::vector<int> y(n);
    std::vector<std::vector<std::size_t>> by_student(ns);
    for (std::size_t k = 0; k < n; ++k) {
        si[k] = student_index.at(responses[k].student);
        qi[k] = question_set.at(responses[k].question);
        y[k] = responses[k].answer;
        by_student[si[k]].push_back(k);
    }
    out.theta.assign(ns, 0.0);
    out.beta.assign(nq, 0.0);

    auto objective = [&](const std::vector<double>& th, const std::vector<double>& be) {
        double f = 0.0;
        for (std::size_t k = 0; k < n; ++k) f += detail::nll(th[si[k]] - be[qi[k]], y[k]);
        for (double t : th) f += 0.5 * opt.l2 * t * t;
        for (double b : be) f += 0.5 * opt.l2 * b * b;
        return f;
    };

    std::vector<double> w(n), g_th(ns), a(ns), g_be(nq), b_diag(nq);
    auto gradient = [&] {
        std::fill(g_th.begin(), g_th.end(), 0.0);
        std::fill(a.begin(), a.end(), opt.l2);
        std::fill(g_be.begin(), g_be.end(), 0.0);
        std::fill(b_diag.begin(), b_diag.end(), opt.l2);
        for (std::size_t k = 0; k < n; ++k) {
            const double p = irt_predict(out.theta[si[k]], out.beta[qi[k]]);
            const double r = p - y[k];
            w[k] = p * (1.0 - p);
            g_th[si[k]] += r;
            a[si[k]] += w[k];
            g_be[qi[k]] -= r;
            b_diag[qi[k]] += w[k];
        }
        double sq = 0.0;
        for (std::size_t i = 0; i < ns; ++i) {
            g_th[i] += opt.l2 * out.theta[i];
            sq += g_th[i] * g_th[i];
        }
        for (std::size_t j = 0; j < nq; ++j) {
            g_be[j] += opt.l2 * out.beta[j];
            sq += g_be[j] * g_be[j];
        }
        return std::sqrt(sq);
    };

    double f = objective(out.theta, out.beta);
    for (out.iterations = 0; out.iterations < opt.max_iterations; ++out.iterations) {
        out.gradient_norm = gradient();
        if (out.gradient_norm < opt.tolerance) {
            out.converged = true;
            break;
        }
        // Schur complement S = diag(b) - C^T diag(a)^-1 C with C_ij = -w_ij.
        std::vector<double> s(nq * nq, 0.0), rhs = g_be;
        for (std::size_t j = 0; j < nq; ++j) s[j * nq + j] = b_diag[j];
        for (std::size_t i = 0; i < ns; ++i) {
            const auto& ks = by_student[i];
            for (std::size_t k : ks) {
                rhs[qi[k]] -= -w[k] * g_th[i] / a[i];
                for (std::size_t l : ks) s[qi[k] * nq + qi[l]] -= w[k] * w[l] / a[i];
            }
        }
        const auto d_be = detail::cholesky_solve(std::move(s), nq, std::move(rhs));
        std::vector<double> d_th(ns);
        double decrease = 0.0;
        for (std::size_t i = 0; i < ns; ++i) {
            double c = 0.0;
            for (std::size_t k : by_student[i]) c += -w[k] * d_be[qi[k]];
            d_th[i] = (g_th[i] - c) / a[i];
            decrease += g_th[i] * d_th[i];
        }
        for (std::size_t j = 0; j < nq; ++j) decrease += g_be[j] * d_be[j];

        bool moved = false;
        double t = 1.0;
        std::vector<double> th(ns), be(nq);
        for (int tries = 0; tries < detail::kMaxHalvings; ++tries, t *= 0.5) {
            for (std::size_t i = 0; i < ns; ++i) th[i] = out.theta[i] - t * d_th[i];
            for (std::size_t j = 0; j < nq; ++j) be[j] = out.beta[j] - t * d_be[j];
            const double cand = objective(th, be);
            if (detail::accept_step(cand, f, t, decrease)) {
                out.theta.swap(th);
                out.beta.swap(be);
                f = cand;
                moved = true;
                break;
            }
        }
        if (!moved) break;
    }
    if (!out.converged) {
        out.gradient_norm = gradient();
        out.converged = out.gradient_norm < opt.tolerance;
    }

    double shift = 0.0;
    for (double t : out.theta) shift += t;
    shift /= static_cast<double>(ns);
    for (double& t : out.theta) t -= shift;
    for (double& b : out.beta) b -= shift;
    return out;
}

// ---------------------------------------------------------------------------
// PFA / LFA

struct PfaObservation {
    std::size_t sequence = 0;  ///< index into the input sequences
    int skill = 0;
    int successes = 0;  ///< prior correct attempts on this skill by this student
    int failures = 0;   ///< prior incorrect attempts
    int label = 0;

    int attempts() const { return successes + failures; }
};

/// Success/failure counts of each step's earlier same-skill steps.
inline std::vector<PfaObservation> build_pfa_features(std::span<const InteractionSequence> seqs) {
    std::vector<PfaObservation> out;
    for (std::size_t s = 0; s < seqs.size(); ++s) {
        std::unordered_map<int, std::array<int, 2>> counts;
        for (const auto& step : seqs[s].steps) {
            auto& c = counts[step.q];
            out.push_back({s, step.q, c[1], c[0], step.a});
            ++c[step.a ? 1 : 0];
        }
    }
    return out;
}

enum class LogisticDesign { pfa, lfa };

/// PFA: logit = alpha*S + rho*F - beta. LFA: logit = theta + gamma*N - beta.
struct SkillCoefficients {
    double alpha = 0.0;  ///< PFA success weight
    double rho = 0.0;    ///< PFA failure weight
    double gamma = 0.0;  ///< LFA learning rate per attempt
    double beta = 0.0;   ///< difficulty
};

struct LogisticModel {
    LogisticDesign design = LogisticDesign::pfa;
    std::map<int, SkillCoefficients> skills;
    double theta = 0.0;  ///< LFA shared ability
    bool converged = false;
    double gradient_norm = 0.0;
    std::size_t iterations = 0;
    std::vector<int> separated_skills;  ///< skills whose data the fit separates perfectly
    std::vector<double> objective_history;  ///< penalized negative log-likelihood per sweep

    bool separation_warning() const { return !separated_skills.empty(); }
};

inline double pfa_logit(const SkillCoefficients& c, double successes, double failures) {
    return c.alpha * successes + c.rho * failures - c.beta;
}

inline double lfa_logit(double theta, const SkillCoefficients& c, double attempts) {
    return theta + c.gamma * attempts - c.beta;
}

struct SkillPrediction {
    double p = 0.5;
    bool known_skill = false;
};

/// Falls back to 0.5 for skills the model never saw.
inline SkillPrediction predict_skill(const LogisticModel& m, const PfaObservation& obs) {
    auto it = m.skills.find(obs.skill);
    if (it == m.skills.end()) return {0.5, false};
    const double z = m.design == LogisticDesign::pfa ? pfa_logit(it->second, obs.successes, obs.failures)
                                                     : lfa_logit(m.theta, it->second, obs.attempts());
    return {sigmoid(z), true};
}

inline double pfa_predict(const LogisticModel& m, int successes, int failures, int skill) {
    return predict_skill(m, {0, skill, successes, failures, 0}).p;
}

inline double lfa_predict(const LogisticModel& m, int attempts, int skill) {
    return predict_skill(m, {0, skill, attempts, 0, 0}).p;
}

namespace detail {

/// Solves the small symmetric positive-definite system H x = g.
template <std::size_t D>
std::array<double, D> solve_spd(std::array<std::array<double, D>, D> h, std::array<double, D> g) {
    for (std::size_t c = 0; c < D; ++c) {
        std::size_t pivot = c;
        for (std::size_t r = c + 1; r < D; ++r)
            if (std::fabs(h[r][c]) > std::fabs(h[pivot][c])) pivot = r;
        std::swap(h[c], h[pivot]);
        std::swap(g[c], g[pivot]);
        for (std::size_t r = c + 1; r < D; ++r) {
            const double f = h[r][c] / h[c][c];
            for (std::size_t k = c; k < D; ++k) h[r][k] -= f * h[c][k];
            g[r] -= f * g[c];
        }
    }
    std::array<double, D> x{};
    for (std::size_t c = D; c-- > 0;) {
        double s = g[c];
        for (std::size_t k = c + 1; k < D; ++k) s -= h[c][k] * x[k];
        x[c] = s / h[c][c];
    }
    return x;
}

/// Observations of one skill sharing a feature vector.
template <std::size_t D>
struct Cell {
    std::array<double, D> x{};
    double successes = 0.0;
    double failures = 0.0;
};

template <std::size_t D>
struct SkillBlock {
    int skill = 0;
    std::vector<Cell<D>> cells;
    std::array<double, D> w{};
};

}  // namespace detail

/// Fits the PFA or LFA design by damped Newton on the penalized negative
/// log-likelihood. Per-skill features are (S, F, -1) for PFA and (N, -1) for
/// LFA; LFA adds a shared intercept theta, which couples the skill blocks
/// and is eliminated through its Schur complement.
inline LogisticModel fit_logistic(std::span<const PfaObservation> obs, LogisticDesign design,
                                  const FitOptions& opt = {}) {
    if (obs.empty()) throw ValidationError("fit_logistic: no observations");
    LogisticModel model;
    model.design = design;
    constexpr std::size_t D = 3;  // PFA uses all three; LFA leaves the last slot fixed at 0
    const std::size_t dim = design == LogisticDesign::pfa ? 3 : 2;
    const bool shared = design == LogisticDesign::lfa;
    using Vec = std::array<double, D>;
    using Mat = std::array<Vec, D>;

    std::vector<detail::SkillBlock<D>> blocks;
    {
        std::map<int, std::map<Vec, std::size_t>> cell_index;
        std::map<int, std::size_t> block_index;
        for (const auto& o : obs) block_index.emplace(o.skill, 0);
        for (auto& [skill, idx] : block_index) {
            idx = blocks.size();
            blocks.push_back({skill, {}, {}});
        }
        for (const auto& o : obs) {
            auto& b = blocks[block_index.at(o.skill)];
            const Vec x = design == LogisticDesign::pfa
                              ? Vec{static_cast<double>(o.successes), static_cast<double>(o.failures), -1.0}
                              : Vec{static_cast<double>(o.attempts()), -1.0, 0.0};
            auto [it, fresh] = cell_index[o.skill].emplace(x, b.cells.size());
            if (fresh) b.cells.push_back({x, 0.0, 0.0});
            auto& c = b.cells[it->second];
            (o.label ? c.successes : c.failures) += 1.0;
        }
    }
    const std::size_t nb = blocks.size();
    double theta = 0.0;

    auto logit = [&](const detail::Cell<D>& c, const Vec& w, double th) {
        double z = th;
        for (std::size_t d = 0; d < dim; ++d) z += w[d] * c.x[d];
        return z;
    };
    auto objective = [&](const std::vector<Vec>& ws, double th) {
        double f = 0.5 * opt.l2 * th * th;
        for (std::size_t bi = 0; bi < nb; ++bi) {
            for (const auto& c : blocks[bi].cells) {
                const double z = logit(c, ws[bi], th);
                f += c.successes * detail::log1pexp(-z) + c.failures * detail::log1pexp(z);
            }
            for (std::size_t d = 0; d < dim; ++d) f += 0.5 * opt.l2 * ws[bi][d] * ws[bi][d];
        }
        return f;
    };
    auto weights = [&] {
        std::vector<Vec> ws(nb);
        for (std::size_t bi = 0; bi < nb; ++bi) ws[bi] = blocks[bi].w;
        return ws;
    };

    std::vector<Vec> g(nb), cross(nb);
    std::vector<Mat> h(nb);
    double g_th = 0.0, h_th = 0.0;
    auto gradient = [&] {
        g_th = opt.l2 * theta;
        h_th = opt.l2;
        double sq = 0.0;
        for (std::size_t bi = 0; bi < nb; ++bi) {
            const auto& b = blocks[bi];
            g[bi] = {};
            h[bi] = {};
            cross[bi] = {};
            for (const auto& c : b.cells) {
                const double p = sigmoid(logit(c, b.w, theta)), n = c.successes + c.failures;
                const double r = n * p - c.successes, wk = n * p * (1.0 - p);
                for (std::size_t d = 0; d < dim; ++d) {
                    g[bi][d] += r * c.x[d];
                    cross[bi][d] += wk * c.x[d];
                    for (std::size_t e = 0; e < dim; ++e) h[bi][d][e] += wk * c.x[d] * c.x[e];
                }
                g_th += r;
                h_th += wk;
            }
            for (std::size_t d = 0; d < D; ++d) {
                if (d < dim) {
                    g[bi][d] += opt.l2 * b.w[d];
                    h[bi][d][d] += opt.l2;
                    sq += g[bi][d] * g[bi][d];
                } else {
                    h[bi][d][d] = 1.0;  // inactive slot
                }
            }
        }
        if (shared) sq += g_th * g_th;
        return std::sqrt(sq);
    };

    double current = objective(weights(), theta);
    model.objective_history.push_back(current);
    for (model.iterations = 0; model.iterations < opt.max_iterations; ++model.iterations) {
        model.gradient_norm = gradient();
        if (model.gradient_norm < opt.tolerance) {
            model.converged = true;
            break;
        }
        std::vector<Vec> step(nb);
        double d_th = 0.0;
        if (shared) {
            std::vector<Vec> u(nb);
            double schur = h_th, rhs = g_th;
            for (std::size_t bi = 0; bi < nb; ++bi) {
                u[bi] = detail::solve_spd<D>(h[bi], cross[bi]);
                step[bi] = detail::solve_spd<D>(h[bi], g[bi]);
                for (std::size_t d = 0; d < dim; ++d) {
                    schur -= cross[bi][d] * u[bi][d];
                    rhs -= cross[bi][d] * step[bi][d];
                }
            }
            d_th = rhs / schur;
            for (std::size_t bi = 0; bi < nb; ++bi)
                for (std::size_t d = 0; d < dim; ++d) step[bi][d] -= u[bi][d] * d_th;
        } else {
            for (std::size_t bi = 0; bi < nb; ++bi) step[bi] = detail::solve_spd<D>(h[bi], g[bi]);
        }
        double decrease = shared ? g_th * d_th : 0.0;
        for (std::size_t bi = 0; bi < nb; ++bi)
            for (std::size_t d = 0; d < dim; ++d) decrease += g[bi][d] * step[bi][d];

        bool moved = false;
        double t = 1.0;
        for (int tries = 0; tries < detail::kMaxHalvings; ++tries, t *= 0.5) {
            std::vector<Vec> ws = weights();
            for (std::size_t bi = 0; bi < nb; ++bi)
                for (std::size_t d = 0; d < dim; ++d) ws[bi][d] -= t * step[bi][d];
            const double th = theta - t * d_th;
            const double cand = objective(ws, th);
            if (detail::accept_step(cand, current, t, decrease)) {
                for (std::size_t bi = 0; bi < nb; ++bi) blocks[bi].w = ws[bi];
                theta = th;
                current = cand;
                moved = true;
                break;
            }
        }
        if (!moved) break;
        model.objective_history.push_back(current);
    }
    if (!model.converged) {
        model.gradient_norm = gradient();
        model.converged = model.gradient_norm < opt.tolerance;
    }

    model.theta = theta;
    for (const auto& b : blocks) {
        SkillCoefficients c;
        if (design == LogisticDesign::pfa) {
            c.alpha = b.w[0];
            c.rho = b.w[1];
            c.beta = b.w[2];
        } else {
            c.gamma = b.w[0];
            c.beta = b.w[1];
        }
        model.skills[b.skill] = c;
        bool separated = true;
        for (const auto& cell : b.cells) {
            const bool positive = logit(cell, b.w, theta) > 0.0;
            if ((cell.successes > 0 && !positive) || (cell.failures > 0 && positive)) {
                separated = false;
                break;
            }
        }
        if (separated) model.separated_skills.push_back(b.skill);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Item analysis

/// Fraction of incorrect first attempts per question, over questions answered
/// by at least `min_students` distinct students. Keyed by question id.
inline std::map<int, double> item_analysis(std::span<const InteractionSequence> seqs, std::size_t min_students = 10) {
    if (min_students < 1) throw ValidationError("item_analysis: min_students must be at least 1");
    struct Tally {
        std::size_t students = 0;
        std::size_t incorrect = 0;
    };
    std::map<int, Tally> tallies;
    std::map<std::string, std::map<int, bool>> seen_by_student;
    for (const auto& s : seqs) {
        auto& seen = seen_by_student[s.student_id];
        for (const auto& step : s.steps) {
            if (!seen.emplace(step.q, true).second) continue;
            auto& t = tallies[step.q];
            ++t.students;
            if (!step.a) ++t.incorrect;
        }
    }
    std::map<int, double> out;
    for (const auto& [q, t] : tallies)
        if (t.students >= min_students) out[q] = static_cast<double>(t.incorrect) / static_cast<double>(t.students);
    return out;
}

}  // namespace kt

#endif  // KT_BASELINES_HPP
