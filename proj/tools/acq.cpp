#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "acq/attack.hpp"
#include "acq/dataset.hpp"
#include "acq/errors.hpp"
#include "acq/evaluate.hpp"
#include "acq/fusion.hpp"
#include "acq/harness.hpp"
#include "acq/lenet.hpp"
#include "acq/parallel.hpp"
#include "acq/transforms.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kInput = 2, kRuntime = 3 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Globals {
    unsigned threads = acq::default_thread_count();
    std::string manifest;
};

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * fraction);
    return buf;
}

// Key-value record of one run: every option of the subcommand as resolved,
// plus whatever the command adds (hashes, counts).
class Manifest {
public:
    Manifest(const CLI::App& command, const Globals& globals) {
        add("subcommand", command.get_name());
        add("timestamp", utc_timestamp());
        add("threads", std::to_string(globals.threads));
        for (const CLI::Option* opt : command.get_options()) {
            if (opt->get_name() == "--help") continue;
            std::string value;
            if (opt->count() > 0 && opt->get_type_size() == 0) {
                value = "true";
            } else if (opt->count() > 0) {
                for (const auto& r : opt->results()) value += (value.empty() ? "" : " ") + r;
            } else {
                value = opt->get_default_str();
                if (value.empty() && opt->get_type_size() == 0) value = "false";
            }
            add("option." + opt->get_name(false, true).substr(opt->get_name(false, true).find_first_not_of('-')), value);
        }
    }

    void add(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }

    void write(const fs::path& path) const {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw acq::IoError("cannot write manifest " + path.string());
        for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
        std::cout << "manifest: " << path.string() << '\n';
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

acq::EvalOptions plain(const Globals& g) {
    acq::EvalOptions options;
    options.threads = g.threads;
    return options;
}

fs::path manifest_path(const Globals& g, const fs::path& fallback) { return g.manifest.empty() ? fallback : fs::path(g.manifest); }

void require_files(std::initializer_list<std::pair<const char*, const std::string*>> files) {
    for (const auto& [what, path] : files)
        if (!fs::is_regular_file(*path)) throw acq::IoError(std::string(what) + " not found: " + *path);
}

std::string histogram_text(const acq::Dataset& d) {
    std::string out;
    const auto hist = d.label_histogram();
    for (std::size_t c = 0; c < hist.size(); ++c)
        out += (c ? " " : "") + std::to_string(c) + ":" + std::to_string(hist[c]);
    return out;
}

void dump_pgm(const fs::path& dir, const std::vector<acq::Image>& images, const std::string& stem) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
        char name[96];
        std::snprintf(name, sizeof name, "%s_%04zu_label%d.pgm", stem.c_str(), i, images[i].label.value_or(-1));
        std::ofstream out(dir / name, std::ios::trunc);
        if (!out) throw acq::IoError("cannot write " + (dir / name).string());
        out << acq::to_pgm(images[i]);
    }
    std::cout << "wrote " << images.size() << " previews to " << dir.string() << '\n';
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
    std::string idx_dir, out_dir;
    std::string images, labels, out;
    std::string split = "test";
};

int cmd_prepare(const PrepareArgs& a, const CLI::App& cmd, const Globals& g) {
    Manifest manifest(cmd, g);
    struct Job {
        std::string images, labels, out;
        acq::Provenance provenance;
    };
    std::vector<Job> jobs;
    if (!a.idx_dir.empty()) {
        if (a.out_dir.empty()) throw UsageError("--idx-dir needs --out-dir");
        const fs::path in(a.idx_dir), out(a.out_dir);
        jobs.push_back({(in / "train-images-idx3-ubyte").string(), (in / "train-labels-idx1-ubyte").string(),
                        (out / "mnist_train.aqds").string(), acq::Provenance::MnistTrain});
        jobs.push_back({(in / "t10k-images-idx3-ubyte").string(), (in / "t10k-labels-idx1-ubyte").string(),
                        (out / "mnist_test.aqds").string(), acq::Provenance::MnistTest});
    } else {
        if (a.images.empty() || a.labels.empty() || a.out.empty())
            throw UsageError("prepare needs either --idx-dir/--out-dir or --images/--labels/--out");
        jobs.push_back({a.images, a.labels, a.out,
                        a.split == "train" ? acq::Provenance::MnistTrain : acq::Provenance::MnistTest});
    }
    for (const Job& job : jobs) require_files({{"image file", &job.images}, {"label file", &job.labels}});
    for (const Job& job : jobs) {
        acq::Dataset d = acq::load_idx(job.images, job.labels, job.provenance);
        d.name = std::string(acq::to_string(job.provenance));
        if (fs::path(job.out).has_parent_path()) fs::create_directories(fs::path(job.out).parent_path());
        acq::save_dataset(d, job.out);
        std::cout << job.out << ": " << d.size() << " images (" << acq::to_string(job.provenance) << ")\n"
                  << "  labels " << histogram_text(d) << '\n';
        manifest.add("output", job.out);
        manifest.add("output.count", std::to_string(d.size()));
    }
    manifest.write(manifest_path(g, a.idx_dir.empty() ? fs::path(a.out + ".manifest")
                                                      : fs::path(a.out_dir) / "prepare.manifest"));
    return kOk;
}

// ---------------------------------------------------------------- train / finetune

struct TrainArgs {
    std::string model;  // finetune only
    std::string train, test, out;
    acq::TrainConfig config;
    std::size_t limit = 0;
    std::uint64_t corpus_seed = 7;
    acq::TransformSpec transform = acq::TransformSpec::of(acq::TransformKind::Combination, 7);
    std::string noise_scale = "unit";
};

void print_epoch(const acq::EpochReport& r, const char* validation_name) {
    std::printf("epoch %d  loss %.5f", r.epoch, r.train_loss);
    if (r.validation_accuracy >= 0.0) std::printf("  %s accuracy %s", validation_name, percent(r.validation_accuracy).c_str());
    std::printf("  (%.1fs)\n", r.seconds);
    std::fflush(stdout);
}

acq::Dataset take_prefix(acq::Dataset d, std::size_t limit) {
    if (limit && limit < d.size()) d.images.resize(limit);
    return d;
}

int cmd_train(const TrainArgs& a, const CLI::App& cmd, const Globals& g) {
    require_files({{"training set", &a.train}});
    if (!a.test.empty()) require_files({{"test set", &a.test}});
    Manifest manifest(cmd, g);
    a.config.validate();
    const acq::Dataset train = take_prefix(acq::load_dataset(a.train), a.limit);
    std::optional<acq::Dataset> test;
    if (!a.test.empty()) test = acq::load_dataset(a.test);
    std::cout << "training on " << train.size() << " images, " << a.config.epochs << " epochs, seed " << a.config.seed
              << '\n';
    auto result = acq::train(acq::LeNet::build(a.config.seed), train, a.config, test ? &*test : nullptr,
                             [](const acq::EpochReport& r) { print_epoch(r, "test"); });
    if (test) {
        const double accuracy = acq::evaluate(result.model, *test, plain(g));
        result.model.metadata()["test_accuracy"] = std::to_string(accuracy);
        std::cout << "test accuracy: " << percent(accuracy) << '\n';
        manifest.add("test_accuracy", std::to_string(accuracy));
    }
    acq::save_checkpoint(result.model, a.out);
    const std::string hash = acq::checkpoint_hash(result.model);
    std::cout << "checkpoint " << a.out << " (" << hash << ")\n";
    manifest.add("seed", std::to_string(a.config.seed));
    manifest.add("checkpoint", a.out);
    manifest.add("checkpoint_hash", hash);
    manifest.write(manifest_path(g, a.out + ".manifest"));
    return kOk;
}

acq::FinetuneSizes sizes_for(std::size_t source) {
    acq::FinetuneSizes sizes;
    sizes.source = source;
    sizes.train = (2 * source * 5) / 6;
    sizes.validation = 2 * source - sizes.train;
    return sizes;
}

int cmd_finetune(const TrainArgs& a, const CLI::App& cmd, const Globals& g) {
    require_files({{"checkpoint", &a.model}, {"training set", &a.train}});
    if (!a.test.empty()) require_files({{"test set", &a.test}});
    Manifest manifest(cmd, g);
    a.config.validate();
    acq::LeNet model = acq::load_checkpoint(a.model);
    const acq::Dataset source = take_prefix(acq::load_dataset(a.train), a.limit);
    acq::TransformSpec transform = a.transform;
    transform.seed = a.corpus_seed;
    transform.noise_scale = a.noise_scale == "byte" ? acq::NoiseScale::Byte : acq::NoiseScale::Unit;
    const acq::FinetuneSizes sizes = sizes_for(source.size());
    std::cout << "building fine-tune corpus: " << sizes.train << " train / " << sizes.validation
              << " validation from " << source.size() << " clean images + " << transform.to_text() << '\n';
    const acq::FinetuneSplit corpus = acq::build_finetune_corpus(source, transform, a.corpus_seed, sizes);
    auto result = acq::finetune(std::move(model), corpus, a.config,
                                [](const acq::EpochReport& r) { print_epoch(r, "validation"); });
    const double validation = acq::evaluate(result.model, corpus.validation, plain(g));
    std::cout << "validation accuracy: " << percent(validation) << '\n';
    manifest.add("validation_accuracy", std::to_string(validation));
    if (!a.test.empty()) {
        const double accuracy = acq::evaluate(result.model, acq::load_dataset(a.test), plain(g));
        result.model.metadata()["test_accuracy"] = std::to_string(accuracy);
        std::cout << "test accuracy: " << percent(accuracy) << '\n';
        manifest.add("test_accuracy", std::to_string(accuracy));
    }
    acq::save_checkpoint(result.model, a.out);
    const std::string hash = acq::checkpoint_hash(result.model);
    std::cout << "checkpoint " << a.out << " (" << hash << ")\n";
    manifest.add("seed", std::to_string(a.config.seed));
    manifest.add("corpus_seed", std::to_string(a.corpus_seed));
    manifest.add("corpus_transform", transform.to_text());
    manifest.add("base_checkpoint_hash", acq::checkpoint_hash(acq::load_checkpoint(a.model)));
    manifest.add("checkpoint", a.out);
    manifest.add("checkpoint_hash", hash);
    manifest.write(manifest_path(g, a.out + ".manifest"));
    return kOk;
}

// ---------------------------------------------------------------- attack

struct AttackArgs {
    std::string model, data, out, method = "fgs", dump_pgm;
    acq::AttackConfig config;
    bool no_clip = false;
    std::size_t count = 10000;
    std::size_t dump_count = 16;
    std::uint64_t seed = 1;
};

int cmd_attack(AttackArgs a, const CLI::App& cmd, const Globals& g) {
    require_files({{"checkpoint", &a.model}, {"dataset", &a.data}});
    Manifest manifest(cmd, g);
    a.config.method = acq::parse_attack_method(a.method);
    a.config.clip = !a.no_clip;
    a.config.validate();
    const acq::LeNet model = acq::load_checkpoint(a.model);
    const acq::Dataset source = acq::load_dataset(a.data);
    const acq::AttackSet set = acq::generate_attack_set(source, model, a.config, a.count, a.seed, g.threads);

    double eps_sum = 0.0, l2_sum = 0.0, linf_sum = 0.0;
    for (const auto& r : set.records) {
        eps_sum += r.epsilon;
        l2_sum += r.l2;
        linf_sum += r.linf;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, set.records.size()));
    const std::size_t correct = set.attempted - set.skipped_misclassified;
    std::printf("%s: attacked %zu images, %zu correctly classified, %zu adversarial found (success rate %s), %zu "
                "not found\n",
                a.method.c_str(), set.attempted, correct, set.successes,
                percent(correct ? static_cast<double>(set.successes) / correct : 0.0).c_str(), set.not_found);
    std::printf("mean epsilon %.4f  mean L2 %.2f  mean Linf %.2f (gray levels)\n", eps_sum / n, l2_sum / n,
                linf_sum / n);
    if (set.shortfall) std::printf("warning: %zu records short of the requested %zu\n", set.shortfall, a.count);

    acq::save_dataset(set.perturbed, a.out);
    const std::string sidecar = a.out + ".metrics.csv";
    acq::write_metrics_sidecar(set.records, sidecar);
    const double accuracy = set.perturbed.empty() ? 0.0 : acq::evaluate(model, set.perturbed, plain(g));
    std::printf("wrote %zu records to %s (metrics %s)\npost-attack accuracy: %s\n", set.records.size(), a.out.c_str(),
                sidecar.c_str(), percent(accuracy).c_str());
    if (!a.dump_pgm.empty()) {
        std::vector<acq::Image> previews;
        for (std::size_t i = 0; i < std::min(a.dump_count, set.records.size()); ++i) {
            previews.push_back(set.records[i].original);
            previews.push_back(set.perturbed.images[i]);
        }
        dump_pgm(a.dump_pgm, previews, a.method + "_pairs");
    }
    manifest.add("seed", std::to_string(a.seed));
    manifest.add("checkpoint_hash", acq::checkpoint_hash(model));
    manifest.add("attempted", std::to_string(set.attempted));
    manifest.add("successes", std::to_string(set.successes));
    manifest.add("records", std::to_string(set.records.size()));
    manifest.add("shortfall", std::to_string(set.shortfall));
    manifest.add("post_attack_accuracy", std::to_string(accuracy));
    manifest.add("output", a.out);
    manifest.add("metrics", sidecar);
    manifest.write(manifest_path(g, a.out + ".manifest"));
    return kOk;
}

// ---------------------------------------------------------------- eval

struct NoiseArgs {
    double stddev = 0.25;
    std::string scale = "unit";

    acq::NoiseScale parsed() const { return scale == "byte" ? acq::NoiseScale::Byte : acq::NoiseScale::Unit; }
};

struct EvalArgs {
    std::string model, data, transform = "none", out, dump_pgm, model_name = "raw", dataset_name;
    bool fusion = false;
    std::uint64_t seed = 1;
    std::size_t dump_count = 16;
    NoiseArgs noise;
};

int cmd_eval(const EvalArgs& a, const CLI::App& cmd, const Globals& g) {
    require_files({{"checkpoint", &a.model}, {"dataset", &a.data}});
    Manifest manifest(cmd, g);
    acq::GridConfig grid;
    grid.seed = a.seed;
    grid.noise_stddev = a.noise.stddev;
    grid.noise_scale = a.noise.parsed();
    const acq::RowPlan plan = acq::plan_row(a.transform, grid);
    acq::EvalOptions options;
    options.transform = plan.transform;
    options.fusion = plan.fusion || a.fusion;
    options.threads = g.threads;

    const acq::LeNet model = acq::load_checkpoint(a.model);
    const acq::Dataset data = acq::load_dataset(a.data);
    const acq::EvalCount count = acq::evaluate_count(model, data, options);
    const std::string row = options.fusion && a.transform == "none" ? "five-crops" : a.transform;
    std::printf("accuracy: %s (%zu/%zu) transform=%s%s\n", percent(count.accuracy()).c_str(), count.correct,
                count.total, a.transform.c_str(), options.fusion ? " fused" : "");
    if (plan.transform) std::cout << "  " << plan.transform->to_text() << '\n';
    if (plan.transform && (plan.transform->kind == acq::TransformKind::Noise ||
                           plan.transform->kind == acq::TransformKind::Combination))
        std::cout << "  " << acq::noise_scale_interpretation(grid.noise_scale, grid.noise_stddev) << '\n';

    if (!a.out.empty()) {
        const std::string dataset_id =
            a.dataset_name.empty() ? std::string(acq::to_string(data.provenance)) : a.dataset_name;
        const bool fresh = !fs::exists(a.out) || fs::file_size(a.out) == 0;
        std::ofstream out(a.out, std::ios::app);
        if (!out) throw acq::IoError("cannot append to " + a.out);
        if (fresh) out << acq::kMachineHeader << '\n';
        char acc[32];
        std::snprintf(acc, sizeof acc, "%.17g", count.accuracy());
        out << dataset_id << ',' << row << ',' << a.model_name << ',' << acc << ',' << count.total << ',' << a.seed
            << '\n';
        std::cout << "appended row to " << a.out << '\n';
    }
    if (!a.dump_pgm.empty()) {
        std::vector<acq::Image> previews;
        for (std::size_t i = 0; i < std::min(a.dump_count, data.size()); ++i) {
            if (options.fusion) {
                const acq::CropSet crops = acq::five_crops(options.transform ? acq::apply_transform(*options.transform, data.images[i]) : data.images[i]);
                for (const acq::Image& c : crops.crops) {
                    previews.push_back(c);
                    previews.back().label = data.images[i].label;
                }
            } else {
                previews.push_back(options.transform ? acq::apply_transform(*options.transform, data.images[i])
                                                     : data.images[i]);
                previews.back().label = data.images[i].label;
            }
        }
        dump_pgm(a.dump_pgm, previews, row);
    }
    manifest.add("seed", std::to_string(a.seed));
    manifest.add("checkpoint_hash", acq::checkpoint_hash(model));
    manifest.add("accuracy", std::to_string(count.accuracy()));
    manifest.add("correct", std::to_string(count.correct));
    manifest.add("total", std::to_string(count.total));
    manifest.write(manifest_path(g, a.out.empty() ? fs::path("acq_eval.manifest") : fs::path(a.out + ".manifest")));
    return kOk;
}

// ---------------------------------------------------------------- grid

struct GridArgs {
    std::string raw, finetuned, test, fgs, fgv, out_dir;
    std::uint64_t seed = 1;
    int fgv_multiplier = 1;
    NoiseArgs noise;
};

int cmd_grid(const GridArgs& a, const CLI::App& cmd, const Globals& g) {
    require_files({{"raw checkpoint", &a.raw},
                   {"fine-tuned checkpoint", &a.finetuned},
                   {"test set", &a.test},
                   {"FGS set", &a.fgs},
                   {"FGV set", &a.fgv}});
    Manifest manifest(cmd, g);
    acq::GridConfig config;
    config.seed = a.seed;
    config.noise_stddev = a.noise.stddev;
    config.noise_scale = a.noise.parsed();
    config.fgv_multiplier = a.fgv_multiplier;
    config.threads = g.threads;

    const acq::LeNet raw = acq::load_checkpoint(a.raw);
    const acq::LeNet finetuned = acq::load_checkpoint(a.finetuned);
    const acq::Dataset test = acq::load_dataset(a.test);
    const acq::Dataset fgs = acq::load_dataset(a.fgs);
    const acq::Dataset fgv = acq::load_dataset(a.fgv);
    const std::vector<acq::NamedDataset> datasets = {{"mnist_test", &test}, {"fgs_adv", &fgs}, {"fgv_adv", &fgv}};

    std::vector<acq::EvalReport> reports;
    std::vector<acq::DeltaRow> deltas;
    for (const acq::NamedDataset& d : datasets) {
        std::cout << "evaluating " << d.id << " (" << d.data->size() << " images)\n" << std::flush;
        reports.push_back(acq::evaluate_grid(raw, "raw", d, config));
        reports.push_back(acq::evaluate_grid(finetuned, "finetuned", d, config));
        const auto rows = acq::compare_models(reports[reports.size() - 2], reports.back());
        deltas.insert(deltas.end(), rows.begin(), rows.end());
    }

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    const std::string text = acq::render_report(reports, acq::ReportFormat::Text);
    const std::string csv = acq::render_report(reports, acq::ReportFormat::Csv);
    const std::string delta_text = acq::render_delta_table(deltas);
    for (const auto& [name, body] : {std::pair{"report.txt", &text}, {"report.csv", &csv}, {"deltas.txt", &delta_text}}) {
        std::ofstream out(dir / name, std::ios::trunc | std::ios::binary);
        if (!out) throw acq::IoError("cannot write " + (dir / name).string());
        out << *body;
    }
    std::cout << text << "\nFine-tuned minus raw:" << delta_text << '\n';
    manifest.add("seed", std::to_string(a.seed));
    manifest.add("noise_seed", std::to_string(a.seed));
    manifest.add("raw_checkpoint_hash", acq::checkpoint_hash(raw));
    manifest.add("finetuned_checkpoint_hash", acq::checkpoint_hash(finetuned));
    for (const auto& [key, model] : {std::pair{"raw", &raw}, {"finetuned", &finetuned}})
        for (const char* meta : {"seed", "finetune_seed"}) {
            const auto it = model->metadata().find(meta);
            if (it != model->metadata().end()) manifest.add(std::string(key) + "." + meta, it->second);
        }
    manifest.add("report", (dir / "report.csv").string());
    manifest.write(manifest_path(g, dir / "manifest.txt"));
    return kOk;
}

// ---------------------------------------------------------------- risk

struct RiskArgs {
    acq::RiskQuery query;
};

int cmd_risk(const RiskArgs& a, const CLI::App& cmd, const Globals& g) {
    try {
        a.query.validate();
    } catch (const acq::ContractError& e) {
        throw UsageError(e.what());
    }
    Manifest manifest(cmd, g);
    const double single = acq::risk_single_term(a.query);
    const double tail = acq::risk_majority_tail(a.query);
    const int n = a.query.frames, k = a.query.wrong;
    std::printf("single term    C(%d,%d) p^%d = %.4g\n", n, k, k, single);
    std::printf("binomial tail  sum over j >= %d of C(%d,j) p^j (1-p)^(%d-j) = %.4g\n", k, n, n, tail);
    std::printf("(p = %g per frame; the single term omits the (1-p)^(n-k) factor)\n", a.query.p);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", single);
    manifest.add("single_term", buf);
    std::snprintf(buf, sizeof buf, "%.17g", tail);
    manifest.add("tail", buf);
    manifest.write(manifest_path(g, "acq_risk.manifest"));
    return kOk;
}

void add_noise_options(CLI::App* cmd, NoiseArgs& noise) {
    cmd->add_option("--noise-stddev", noise.stddev, "Noise standard deviation")->capture_default_str();
    cmd->add_option("--noise-scale", noise.scale, "Read the stddev on the unit [0,1] or byte [0,255] scale")
        ->check(CLI::IsMember({"unit", "byte"}))
        ->capture_default_str();
}

void add_train_options(CLI::App* cmd, TrainArgs& a) {
    cmd->add_option("--train", a.train, "Training set (.aqds)")->required();
    cmd->add_option("--test", a.test, "Test set reported after every epoch");
    cmd->add_option("--out", a.out, "Output checkpoint")->required();
    cmd->add_option("--epochs", a.config.epochs)->capture_default_str();
    cmd->add_option("--batch-size", a.config.batch_size)->capture_default_str();
    cmd->add_option("--lr", a.config.learning_rate, "Base learning rate")->capture_default_str();
    cmd->add_option("--lr-gamma", a.config.lr_gamma)->capture_default_str();
    cmd->add_option("--lr-power", a.config.lr_power)->capture_default_str();
    cmd->add_option("--momentum", a.config.momentum)->capture_default_str();
    cmd->add_option("--weight-decay", a.config.weight_decay)->capture_default_str();
    cmd->add_option("--seed", a.config.seed)->capture_default_str();
    cmd->add_option("--limit", a.limit, "Use only the first N training images (0 = all)")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial examples versus acquisition transforms on MNIST"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML or INI file with option defaults; flags on the command line win");
    Globals globals;
    app.add_option("--threads", globals.threads, "Worker threads for evaluation and attacks")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--manifest", globals.manifest, "Write the run manifest here instead of next to the outputs");

    PrepareArgs prepare;
    auto* prepare_cmd = app.add_subcommand("prepare", "Convert MNIST IDX files to native datasets");
    prepare_cmd->add_option("--idx-dir", prepare.idx_dir, "Directory holding the four standard MNIST IDX files");
    prepare_cmd->add_option("--out-dir", prepare.out_dir, "Where mnist_train.aqds and mnist_test.aqds go");
    prepare_cmd->add_option("--images", prepare.images, "Single IDX image file");
    prepare_cmd->add_option("--labels", prepare.labels, "Matching IDX label file");
    prepare_cmd->add_option("--out", prepare.out, "Output dataset for --images/--labels");
    prepare_cmd->add_option("--split", prepare.split, "Provenance of a single pair")
        ->check(CLI::IsMember({"train", "test"}))
        ->capture_default_str();

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train LeNet from scratch");
    add_train_options(train_cmd, train);

    TrainArgs finetune;
    finetune.config = acq::TrainConfig::finetune_defaults();
    auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune on clean plus combination-transformed images");
    add_train_options(finetune_cmd, finetune);
    finetune_cmd->add_option("--model", finetune.model, "Checkpoint to start from")->required();
    finetune_cmd->add_option("--corpus-seed", finetune.corpus_seed, "Seed for the transformed copies and the split")
        ->capture_default_str();
    finetune_cmd->add_option("--noise-stddev", finetune.transform.noise_stddev)->capture_default_str();
    finetune_cmd->add_option("--noise-scale", finetune.noise_scale)
        ->check(CLI::IsMember({"unit", "byte"}))
        ->capture_default_str();

    AttackArgs attack;
    auto* attack_cmd = app.add_subcommand("attack", "Build a minimal-epsilon FGS or FGV adversarial set");
    attack_cmd->add_option("--model", attack.model, "Generating checkpoint")->required();
    attack_cmd->add_option("--data", attack.data, "Source dataset")->required();
    attack_cmd->add_option("--method", attack.method)->check(CLI::IsMember({"fgs", "fgv"}))->capture_default_str();
    attack_cmd->add_option("--out", attack.out, "Output adversarial set (.aqds)")->required();
    attack_cmd->add_option("--count", attack.count, "Records to keep")->capture_default_str();
    attack_cmd->add_option("--seed", attack.seed, "Seed for sampling down to --count")->capture_default_str();
    attack_cmd->add_option("--eps-start", attack.config.epsilon_start)->capture_default_str();
    attack_cmd->add_option("--eps-step", attack.config.epsilon_step)->capture_default_str();
    attack_cmd->add_option("--eps-max", attack.config.epsilon_max)->capture_default_str();
    attack_cmd->add_option("--fgv-multiplier", attack.config.fgv_multiplier)
        ->check(CLI::Range(1, 5))
        ->capture_default_str();
    attack_cmd->add_flag("--no-clip", attack.no_clip, "Do not clip perturbed pixels to [0,1]");
    attack_cmd->add_option("--dump-pgm", attack.dump_pgm, "Write original/adversarial preview pairs here");
    attack_cmd->add_option("--dump-count", attack.dump_count)->capture_default_str();

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a checkpoint on a dataset under one transform");
    eval_cmd->add_option("--model", eval.model)->required();
    eval_cmd->add_option("--data", eval.data)->required();
    std::vector<std::string> row_names(acq::kGridRows.begin(), acq::kGridRows.end());
    eval_cmd->add_option("--transform", eval.transform)->check(CLI::IsMember(row_names))->capture_default_str();
    eval_cmd->add_flag("--fusion", eval.fusion, "Classify with five-crop fusion");
    eval_cmd->add_option("--seed", eval.seed, "Noise seed")->capture_default_str();
    add_noise_options(eval_cmd, eval.noise);
    eval_cmd->add_option("--out", eval.out, "Append a machine-format row to this file");
    eval_cmd->add_option("--model-name", eval.model_name, "Model column of the appended row")->capture_default_str();
    eval_cmd->add_option("--dataset-name", eval.dataset_name, "Dataset column (defaults to the set's provenance)");
    eval_cmd->add_option("--dump-pgm", eval.dump_pgm, "Write transformed previews here");
    eval_cmd->add_option("--dump-count", eval.dump_count)->capture_default_str();

    GridArgs grid;
    auto* grid_cmd = app.add_subcommand("grid", "Full transform grid for both models on all three datasets");
    grid_cmd->add_option("--raw", grid.raw)->required();
    grid_cmd->add_option("--finetuned", grid.finetuned)->required();
    grid_cmd->add_option("--test", grid.test)->required();
    grid_cmd->add_option("--fgs", grid.fgs)->required();
    grid_cmd->add_option("--fgv", grid.fgv)->required();
    grid_cmd->add_option("--out-dir", grid.out_dir)->required();
    grid_cmd->add_option("--seed", grid.seed, "Noise seed")->capture_default_str();
    grid_cmd->add_option("--fgv-multiplier", grid.fgv_multiplier, "Multiplier the FGV set was built with")
        ->capture_default_str();
    add_noise_options(grid_cmd, grid.noise);

    RiskArgs risk;
    auto* risk_cmd = app.add_subcommand("risk", "Chance that k of n frames are misclassified");
    risk_cmd->add_option("frames", risk.query.frames, "n")->required();
    risk_cmd->add_option("wrong", risk.query.wrong, "k")->required();
    risk_cmd->add_option("p", risk.query.p, "Per-frame error probability")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*prepare_cmd) return cmd_prepare(prepare, *prepare_cmd, globals);
        if (*train_cmd) return cmd_train(train, *train_cmd, globals);
        if (*finetune_cmd) return cmd_finetune(finetune, *finetune_cmd, globals);
        if (*attack_cmd) return cmd_attack(attack, *attack_cmd, globals);
        if (*eval_cmd) return cmd_eval(eval, *eval_cmd, globals);
        if (*grid_cmd) return cmd_grid(grid, *grid_cmd, globals);
        if (*risk_cmd) return cmd_risk(risk, *risk_cmd, globals);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const acq::ContractError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const acq::TrainingError& e) {
        std::cerr << "training failed: " << e.what() << '\n';
        return kRuntime;
    } catch (const acq::IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInput;
    } catch (const acq::FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInput;
    } catch (const acq::ConsistencyError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInput;
    } catch (const acq::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}
