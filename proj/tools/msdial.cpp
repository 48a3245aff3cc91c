// Command-line front end: leave-one-domain-out training with SRC/TAR
// baselines, the lambda ablation sweep, synthetic data generation, feature
// export and 2-D projection.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "msdial/experiment.hpp"

namespace {

using namespace msdial;

struct CommonFlags {
    std::string config_path;
    std::string target;
    std::string method;
    double lambda = -1.0;
    long replications = -1;
    long seed = -1;
    std::string out_dir;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
    auto* config = cmd->add_option("--config", flags.config_path, "experiment config file");
    if (config_required) config->required();
    cmd->add_option("--target", flags.target, "target domain name, or 'all' for leave-one-out");
    cmd->add_option("--method", flags.method, "src, tar or msdial (comma list allowed)");
    cmd->add_option("--lambda", flags.lambda, "entropy weight");
    cmd->add_option("--replications", flags.replications, "replications per experiment");
    cmd->add_option("--seed", flags.seed, "base seed");
    cmd->add_option("--out", flags.out_dir, "output directory");
}

ExperimentConfig load_config(const CommonFlags& flags) {
    ExperimentConfig cfg = parse_config_file(flags.config_path);
    if (!flags.target.empty() && flags.target != "all") cfg.target_name = flags.target;
    if (flags.lambda >= 0.0) cfg.lambda = flags.lambda;
    if (flags.replications > 0) cfg.replications = static_cast<std::size_t>(flags.replications);
    if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
    if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
    return cfg;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos) {
            if (pos < text.size()) out.push_back(text.substr(pos));
            break;
        }
        out.push_back(text.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

std::string ensure_output_dir(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.output_dir);
    return cfg.output_dir;
}

void print_record(const ResultRecord& record) {
    std::printf("%-8s target=%-12s lambda=%-8g mean=%.4f stderr=%.4f (%zu/%zu replications)\n",
                method_name(record.method).c_str(), record.target_name.c_str(), record.lambda,
                record.mean, record.standard_error, record.accuracies.size(),
                record.replications);
    for (const std::string& reason : record.abort_reasons) {
        std::printf("  aborted: %s\n", reason.c_str());
    }
}

int cmd_train(const CommonFlags& flags) {
    ExperimentConfig base = load_config(flags);
    std::vector<std::string> targets;
    if (flags.target == "all") {
        targets = base.domain_names();
    } else {
        targets.push_back(base.target_name);
    }
    std::vector<Method> methods;
    if (flags.method.empty()) {
        methods.push_back(base.method);
    } else {
        for (const std::string& name : split_list(flags.method)) {
            methods.push_back(parse_method(name));
        }
    }

    std::vector<ResultRecord> records;
    for (const std::string& target : targets) {
        for (Method method : methods) {
            ExperimentConfig cfg = base;
            cfg.target_name = target;
            cfg.method = method;
            records.push_back(run_experiment(cfg));
            print_record(records.back());
        }
    }
    const std::string out = ensure_output_dir(base) + "/results.csv";
    emit_results(records, out);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_ablate(const CommonFlags& flags, const std::string& lambdas_text) {
    ExperimentConfig cfg = load_config(flags);
    std::vector<double> lambdas;
    for (const std::string& value : split_list(lambdas_text)) lambdas.push_back(std::stod(value));
    const auto records = lambda_sweep(cfg, lambdas);
    for (const ResultRecord& record : records) print_record(record);
    const std::string out = ensure_output_dir(cfg) + "/ablation.csv";
    emit_results(records, out);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_gen_synth(const CommonFlags& flags) {
    ExperimentConfig cfg = load_config(flags);
    if (!cfg.synthetic()) {
        throw std::invalid_argument("gen-synth needs synth_domain entries in the config");
    }
    SyntheticShiftSpec spec;
    spec.latent_dim = cfg.synth_latent_dim;
    spec.class_count = cfg.synth_classes;
    spec.class_separation = cfg.synth_separation;
    spec.train_per_domain = cfg.synth_train_per_domain;
    spec.test_per_domain = cfg.synth_test_per_domain;
    spec.seed = cfg.seed;

    std::vector<std::string> names;
    for (const NamedAffine& d : cfg.synth_domains) {
        if (d.name != cfg.target_name) names.push_back(d.name);
    }
    names.push_back(cfg.target_name);
    for (const std::string& name : names) {
        for (const NamedAffine& d : cfg.synth_domains) {
            if (d.name == name) spec.domain_maps.push_back(d.map);
        }
    }

    SynthDomains domains = synth_affine_domains(spec);
    const std::string dir = ensure_output_dir(cfg);
    for (std::size_t d = 0; d < names.size(); ++d) {
        const std::string train_path = dir + "/" + names[d] + "_train.tsv";
        const std::string test_path = dir + "/" + names[d] + "_test.tsv";
        save_feature_table(train_path, domains.train[d].samples, domains.train[d].labels);
        save_feature_table(test_path, domains.test[d].samples, domains.test[d].labels);
        std::printf("wrote %s and %s\n", train_path.c_str(), test_path.c_str());
    }
    // Target ground truth stays out of band, in separate label files.
    auto write_labels = [&](const std::string& path, const std::vector<int>& labels) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error(path + ": cannot open for writing");
        for (int label : labels) out << label << '\n';
        std::printf("wrote %s\n", path.c_str());
    };
    write_labels(dir + "/" + cfg.target_name + "_train_labels.txt", domains.target_train_truth);
    write_labels(dir + "/" + cfg.target_name + "_test_labels.txt", domains.target_test_truth);
    return 0;
}

int cmd_export_features(const CommonFlags& flags) {
    ExperimentConfig cfg = load_config(flags);
    if (!flags.method.empty()) cfg.method = parse_method(flags.method);
    TrainedModel trained = train_single_replication(cfg);
    std::printf("trained %s on target '%s': accuracy %.4f\n", method_name(cfg.method).c_str(),
                cfg.target_name.c_str(), trained.accuracy);
    const std::string out =
        ensure_output_dir(cfg) + "/features_" + cfg.target_name + "_" + method_name(cfg.method) +
        ".tsv";
    export_features(trained.model, trained.target_test, out);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-source domain alignment experiments"};
    app.require_subcommand(1);

    CommonFlags train_flags;
    auto* train = app.add_subcommand("train", "leave-one-domain-out experiment");
    add_common_flags(train, train_flags);

    CommonFlags ablate_flags;
    std::string lambdas = "0.001,0.005,0.01,0.05,0.1";
    auto* ablate = app.add_subcommand("ablate", "lambda sweep");
    add_common_flags(ablate, ablate_flags);
    ablate->add_option("--lambdas", lambdas, "comma-separated lambda grid");

    CommonFlags gen_flags;
    auto* gen = app.add_subcommand("gen-synth", "generate synthetic domains as feature tables");
    add_common_flags(gen, gen_flags);

    CommonFlags export_flags;
    auto* export_cmd =
        app.add_subcommand("export-features", "train once and export classifier-input features");
    add_common_flags(export_cmd, export_flags);

    std::string project_in;
    std::string project_out = "projection.csv";
    auto* project = app.add_subcommand("project", "2-D principal-component projection");
    project->add_option("table", project_in, "feature table to project")->required();
    project->add_option("--out", project_out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_flags);
        if (ablate->parsed()) return cmd_ablate(ablate_flags, lambdas);
        if (gen->parsed()) return cmd_gen_synth(gen_flags);
        if (export_cmd->parsed()) return cmd_export_features(export_flags);
        if (project->parsed()) {
            pca_project(project_in, project_out);
            std::printf("wrote %s\n", project_out.c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
