// Command-line front end for the knowledge-tracing toolkit.
//
// Exit codes: 0 success, 1 validation error (bad flags, files, ids),
// 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kt/kt.hpp"

namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::optional<std::string> model;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> trials;
    std::optional<std::size_t> workers;

    void attach(CLI::App* cmd) {
        cmd->add_option("--model", model, "Override the model");
        cmd->add_option("--seed", seed, "Override the seed");
        cmd->add_option("--epochs", epochs, "Override the epoch count");
        cmd->add_option("--trials", trials, "Override the number of trials");
        cmd->add_option("--workers", workers, "Worker threads");
    }

    kt::TrainConfig apply(kt::TrainConfig c) const {
        if (model) c.model = kt::parse_model_type(*model);
        if (seed) c.seed = *seed;
        if (epochs) c.epochs = *epochs;
        if (trials) c.trials = *trials;
        if (workers) c.workers = *workers;
        c.validate();
        return c;
    }
};

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw kt::ValidationError("cannot write " + path.string());
    return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) { open_out(path) << j.dump(2) << '\n'; }

const kt::InteractionSequence& find_student(const kt::Dataset& ds, const std::string& id) {
    for (const auto& s : ds.sequences)
        if (s.student_id == id) return s;
    throw kt::ValidationError("no student '" + id + "' in " + ds.name);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge tracing: Deep-IRT, DKVMN, DKT and classical baselines"};
    app.require_subcommand(1);

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "Generate synthetic students and ground truth");
    fs::path gen_out;
    kt::SyntheticConfig syn;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--students", syn.num_students, "Number of students")->capture_default_str();
    gen->add_option("--questions", syn.num_questions, "Number of questions")->capture_default_str();
    gen->add_option("--concepts", syn.num_concepts, "Number of concepts")->capture_default_str();
    gen->add_option("--guess", syn.guess_c, "Guessing probability c")->capture_default_str();
    gen->add_option("--ability-std", syn.ability_std, "Ability standard deviation")->capture_default_str();
    gen->add_option("--difficulty-std", syn.difficulty_std, "Difficulty standard deviation")->capture_default_str();
    gen->add_option("--seed", syn.seed, "Seed")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a network on a sequence file and save a checkpoint");
    fs::path config_path, data_path, out_path, report_path;
    Overrides overrides;
    train_cmd->add_option("--config", config_path, "Config JSON")->required();
    train_cmd->add_option("--data", data_path, "Sequence file")->required();
    train_cmd->add_option("--out", out_path, "Checkpoint path")->required();
    overrides.attach(train_cmd);

    // grid
    auto* grid_cmd = app.add_subcommand("grid", "Cross-validated grid search");
    grid_cmd->add_option("--config", config_path, "Config JSON")->required();
    grid_cmd->add_option("--data", data_path, "Sequence file")->required();
    grid_cmd->add_option("--out", out_path, "Write the CV table JSON here instead of stdout");
    overrides.attach(grid_cmd);

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "Split, grid search, repeated trials, report");
    exp_cmd->add_option("--config", config_path, "Config JSON")->required();
    exp_cmd->add_option("--data", data_path, "Sequence file")->required();
    exp_cmd->add_option("--report", report_path, "Report JSON")->required();
    overrides.attach(exp_cmd);

    // baseline
    auto* base_cmd = app.add_subcommand("baseline", "Fit and evaluate a classical baseline");
    std::string baseline_model;
    double test_fraction = 0.3;
    std::uint64_t baseline_seed = 1;
    fs::path difficulty_out;
    base_cmd->add_option("--model", baseline_model, "pfa | lfa | irt | item")
        ->required()
        ->check(CLI::IsMember({"pfa", "lfa", "irt", "item"}));
    base_cmd->add_option("--data", data_path, "Sequence file")->required();
    base_cmd->add_option("--report", report_path, "Report JSON")->required();
    base_cmd->add_option("--seed", baseline_seed, "Split seed")->capture_default_str();
    base_cmd->add_option("--test-fraction", test_fraction, "Held-out fraction")->capture_default_str();
    base_cmd->add_option("--difficulty-out", difficulty_out, "Also write fitted difficulties (CSV)");

    // export-difficulty
    auto* diff_cmd = app.add_subcommand("export-difficulty", "Export Deep-IRT difficulties and correlations");
    fs::path ckpt_path, pearson_out;
    std::vector<fs::path> joins;
    diff_cmd->add_option("--ckpt", ckpt_path, "Deep-IRT checkpoint")->required();
    diff_cmd->add_option("--data", data_path, "Sequence file")->required();
    diff_cmd->add_option("--out", out_path, "Difficulty CSV")->required();
    diff_cmd->add_option("--join", joins, "Other difficulty CSVs to join");
    diff_cmd->add_option("--pearson-out", pearson_out, "Pairwise Pearson CSV (default: <out>_pearson.csv)");

    // export-trajectory
    auto* traj_cmd = app.add_subcommand("export-trajectory", "Export one student's ability trajectory");
    std::string student;
    traj_cmd->add_option("--ckpt", ckpt_path, "Deep-IRT checkpoint")->required();
    traj_cmd->add_option("--data", data_path, "Sequence file")->required();
    traj_cmd->add_option("--student", student, "Student id (1-based record ordinal)")->required();
    traj_cmd->add_option("--out", out_path, "Trajectory CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            fs::create_directories(gen_out);
            const auto data = kt::generate_synthetic(syn);
            kt::save_sequences(gen_out / "synthetic.csv", data.dataset);
            kt::save_ground_truth(gen_out, data);
            std::cout << "wrote " << data.dataset.size() << " sequences to " << (gen_out / "synthetic.csv").string() << '\n';
        } else if (*train_cmd) {
            const auto cfg = overrides.apply(kt::load_config(config_path));
            const auto data = kt::load_sequences(data_path);
            const auto result = kt::train(cfg, data);
            kt::save_checkpoint(out_path, {result.network, cfg.seed, cfg.init_std});
            for (std::size_t e = 0; e < result.log.epoch_loss.size(); ++e)
                std::cout << "epoch " << e + 1 << " loss " << result.log.epoch_loss[e] << '\n';
            std::cout << "kept epoch " << result.log.best_epoch << ", saved " << out_path.string() << '\n';
        } else if (*grid_cmd) {
            const auto cfg = overrides.apply(kt::load_config(config_path));
            const auto data = kt::load_sequences(data_path);
            const auto res = kt::grid_search(cfg.grid, cfg, data);
            nlohmann::json table = nlohmann::json::array();
            for (const auto& r : res.rows)
                table.push_back({{"state_dim", r.state_dim},
                                 {"memory_size", r.memory_size},
                                 {"params", r.param_count},
                                 {"fold_losses", r.fold_losses},
                                 {"mean_loss", res.cross_validated ? nlohmann::json(r.mean_loss) : nlohmann::json()}});
            const nlohmann::json j{{"model", kt::to_string(cfg.model)},
                                   {"cross_validated", res.cross_validated},
                                   {"best_index", res.best_index},
                                   {"table", table}};
            if (out_path.empty())
                std::cout << j.dump(2) << '\n';
            else
                write_json(out_path, j);
        } else if (*exp_cmd) {
            const auto cfg = overrides.apply(kt::load_config(config_path));
            const auto data = kt::load_sequences(data_path);
            const auto res = kt::run_experiment(cfg, data);
            write_json(report_path, kt::report_to_json(res));
            std::cout << "auc " << res.report.mean.auc << " +- " << res.report.std.auc << " over "
                      << res.report.trials.size() << " trial(s)\n";
        } else if (*base_cmd) {
            kt::TrainConfig cfg;
            cfg.model = kt::parse_model_type(baseline_model);
            cfg.seed = baseline_seed;
            cfg.test_fraction = test_fraction;
            cfg.trials = 1;
            cfg.validate();
            const auto data = kt::load_sequences(data_path);
            const auto res = kt::run_experiment(cfg, data);
            write_json(report_path, kt::report_to_json(res));
            if (!difficulty_out.empty()) {
                auto [train_set, test_set] = kt::split_train_test(data, cfg.test_fraction, cfg.seed);
                const auto fit = kt::fit_baseline(cfg.model, train_set);
                auto out = open_out(difficulty_out);
                kt::write_difficulty_csv(out, kt::baseline_difficulties(fit));
            }
            std::cout << "auc " << res.report.mean.auc << '\n';
        } else if (*diff_cmd) {
            const auto ckpt = kt::load_checkpoint(ckpt_path);
            const auto data = kt::load_sequences(data_path);
            if (data.num_kcs > ckpt.network.num_kcs())
                throw kt::ValidationError("data uses ids beyond the checkpoint's KC count");
            auto rows = kt::export_difficulty(ckpt.network);
            for (const auto& j : joins) {
                const auto extra = kt::read_difficulty_csv(j);
                rows.insert(rows.end(), extra.begin(), extra.end());
            }
            {
                auto out = open_out(out_path);
                kt::write_difficulty_csv(out, rows);
            }
            if (pearson_out.empty())
                pearson_out = out_path.parent_path() / (out_path.stem().string() + "_pearson.csv");
            auto out = open_out(pearson_out);
            kt::write_pearson_csv(out, kt::pairwise_pearson(rows));
        } else if (*traj_cmd) {
            const auto ckpt = kt::load_checkpoint(ckpt_path);
            const auto data = kt::load_sequences(data_path);
            const auto rows = kt::export_trajectory(ckpt.network, find_student(data, student));
            auto out = open_out(out_path);
            kt::write_trajectory_csv(out, rows);
        }
    } catch (const kt::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const kt::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const kt::IndexError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
