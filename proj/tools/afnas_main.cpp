// afnas: operator surface for the quantized-CNN search/train/deploy pipeline.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 infeasible
// model, 4 internal error. Errors print to stderr as
//   afnas: error: <usage|data|infeasible|internal>: <message>

#include <algorithm>
#include <climits>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "afnas/cost.hpp"
#include "afnas/data.hpp"
#include "afnas/deploy.hpp"
#include "afnas/errors.hpp"
#include "afnas/genome.hpp"
#include "afnas/metrics.hpp"
#include "afnas/nas.hpp"
#include "afnas/nn.hpp"
#include "afnas/train.hpp"

namespace fs = std::filesystem;
using namespace afnas;

namespace {

constexpr const char* kVersion = "afnas 0.1.0";

struct RunConfig {
    std::string profile;
    std::uint64_t seed = 1;
    std::string out = "afnas-out";
    std::string dataset; // directory of CSV/RAW records; empty = synthetic
    double sample_rate_hz = 128.0;
    int generations = 10;
    int offspring = 8;
    int epochs = 30;
    int max_kernel = 32;
    int max_layers = 5;
    std::int64_t max_params = 1000000;
    std::int64_t max_macs_per_window = 0;
    double metric_floor = 0.7;
    double lr = 0.01;
    int batch_size = 32;
    double bn_momentum = 0.99;
    int probands = 24;
    int windows_per_proband = 12;
    std::string genome;
    std::string checkpoint;
    std::string model;
    std::string log;
    std::string format = "csv"; // synth-data output: csv | raw
    int threads = 1;
    bool resume = false;
};

void apply_profile(RunConfig& c, const std::string& name) {
    if (name.empty()) return;
    if (name == "paper") {
        c.generations = 190;
        c.offspring = 8;
        c.epochs = 30;
        c.sample_rate_hz = 128.0;
    } else if (name == "desk") {
        c.generations = 10;
        c.offspring = 8;
        c.epochs = 10;
        c.sample_rate_hz = 32.0;
        c.probands = 12;
        c.windows_per_proband = 6;
        c.batch_size = 8;
        c.bn_momentum = 0.9; // running stats must converge within ~60 steps
        c.max_macs_per_window = 1500000;
    } else {
        throw ConfigError("unknown profile '" + name + "' (expected paper or desk)");
    }
    c.profile = name;
}

// --- config file -------------------------------------------------------------

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const auto r = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an unsigned integer: '" + v + "'");
    }
}

std::int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const auto r = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an integer: '" + v + "'");
    }
}

int parse_int(const std::string& key, const std::string& v) {
    const auto r = parse_i64(key, v);
    if (r < INT_MIN || r > INT_MAX) throw ConfigError("config key '" + key + "': out of range");
    return static_cast<int>(r);
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': not a boolean: '" + v + "'");
}

// Flat key=value lines; '#' starts a comment; unknown keys fail fast.
std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto last = line.find_last_not_of(" \t\r");
        if (last == std::string::npos) continue;
        line = line.substr(0, last + 1);
        const auto first = line.find_first_not_of(" \t");
        line = line.substr(first);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (kv.count(key))
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" +
                              key + "'");
        kv[key] = value;
    }
    return kv;
}

void apply_kv(RunConfig& c, const std::string& key, const std::string& v) {
    if (key == "profile")
        ; // applied before all other keys
    else if (key == "seed")
        c.seed = parse_u64(key, v);
    else if (key == "out")
        c.out = v;
    else if (key == "dataset")
        c.dataset = v;
    else if (key == "sample-rate-hz")
        c.sample_rate_hz = parse_real(key, v);
    else if (key == "generations")
        c.generations = parse_int(key, v);
    else if (key == "offspring")
        c.offspring = parse_int(key, v);
    else if (key == "epochs")
        c.epochs = parse_int(key, v);
    else if (key == "max-kernel")
        c.max_kernel = parse_int(key, v);
    else if (key == "max-layers")
        c.max_layers = parse_int(key, v);
    else if (key == "max-params")
        c.max_params = parse_i64(key, v);
    else if (key == "max-macs-per-window")
        c.max_macs_per_window = parse_i64(key, v);
    else if (key == "metric-floor")
        c.metric_floor = parse_real(key, v);
    else if (key == "lr")
        c.lr = parse_real(key, v);
    else if (key == "batch-size")
        c.batch_size = parse_int(key, v);
    else if (key == "bn-momentum")
        c.bn_momentum = parse_real(key, v);
    else if (key == "probands")
        c.probands = parse_int(key, v);
    else if (key == "windows-per-proband")
        c.windows_per_proband = parse_int(key, v);
    else if (key == "genome")
        c.genome = v;
    else if (key == "checkpoint")
        c.checkpoint = v;
    else if (key == "model")
        c.model = v;
    else if (key == "log")
        c.log = v;
    else if (key == "format")
        c.format = v;
    else if (key == "threads")
        c.threads = parse_int(key, v);
    else if (key == "resume")
        c.resume = parse_bool(key, v);
    else
        throw ConfigError("unknown config key '" + key + "'");
}

// --- flag plumbing -------------------------------------------------------------

// Every config key has a flag twin. Flags land in a scratch RunConfig; after
// profile and file keys are applied, flags seen on the command line override.
struct CommonFlags {
    RunConfig scratch;
    std::string config_path;
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&, const RunConfig&)>>> binds;
    CLI::Option* profile_opt = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "flat key=value config file");
        profile_opt = cmd->add_option("--profile", scratch.profile, "preset: paper or desk");
        auto bind = [&](CLI::Option* o, auto copy) { binds.emplace_back(o, copy); };
        bind(cmd->add_option("--seed", scratch.seed, "master seed"),
             [](RunConfig& c, const RunConfig& s) { c.seed = s.seed; });
        bind(cmd->add_option("--out", scratch.out, "output directory"),
             [](RunConfig& c, const RunConfig& s) { c.out = s.out; });
        bind(cmd->add_option("--dataset", scratch.dataset, "directory of CSV/RAW records"),
             [](RunConfig& c, const RunConfig& s) { c.dataset = s.dataset; });
        bind(cmd->add_option("--sample-rate-hz", scratch.sample_rate_hz, "sampling rate"),
             [](RunConfig& c, const RunConfig& s) { c.sample_rate_hz = s.sample_rate_hz; });
        bind(cmd->add_option("--generations", scratch.generations, "search generations"),
             [](RunConfig& c, const RunConfig& s) { c.generations = s.generations; });
        bind(cmd->add_option("--offspring", scratch.offspring, "offspring per generation"),
             [](RunConfig& c, const RunConfig& s) { c.offspring = s.offspring; });
        bind(cmd->add_option("--epochs", scratch.epochs, "training epochs"),
             [](RunConfig& c, const RunConfig& s) { c.epochs = s.epochs; });
        bind(cmd->add_option("--max-kernel", scratch.max_kernel, "kernel size cap"),
             [](RunConfig& c, const RunConfig& s) { c.max_kernel = s.max_kernel; });
        bind(cmd->add_option("--max-layers", scratch.max_layers, "layer count cap"),
             [](RunConfig& c, const RunConfig& s) { c.max_layers = s.max_layers; });
        bind(cmd->add_option("--max-params", scratch.max_params, "parameter cap"),
             [](RunConfig& c, const RunConfig& s) { c.max_params = s.max_params; });
        bind(cmd->add_option("--max-macs-per-window", scratch.max_macs_per_window,
                             "per-window MAC cap (0 disables)"),
             [](RunConfig& c, const RunConfig& s) { c.max_macs_per_window = s.max_macs_per_window; });
        bind(cmd->add_option("--metric-floor", scratch.metric_floor, "feasibility floor"),
             [](RunConfig& c, const RunConfig& s) { c.metric_floor = s.metric_floor; });
        bind(cmd->add_option("--lr", scratch.lr, "initial learning rate"),
             [](RunConfig& c, const RunConfig& s) { c.lr = s.lr; });
        bind(cmd->add_option("--batch-size", scratch.batch_size, "minibatch size"),
             [](RunConfig& c, const RunConfig& s) { c.batch_size = s.batch_size; });
        bind(cmd->add_option("--bn-momentum", scratch.bn_momentum, "batchnorm moving-average momentum"),
             [](RunConfig& c, const RunConfig& s) { c.bn_momentum = s.bn_momentum; });
        bind(cmd->add_option("--probands", scratch.probands, "synthetic probands"),
             [](RunConfig& c, const RunConfig& s) { c.probands = s.probands; });
        bind(cmd->add_option("--windows-per-proband", scratch.windows_per_proband,
                             "synthetic windows per proband"),
             [](RunConfig& c, const RunConfig& s) { c.windows_per_proband = s.windows_per_proband; });
        bind(cmd->add_option("--genome", scratch.genome, "genome text 'K,C,S;...@ww,pw,wa,pa'"),
             [](RunConfig& c, const RunConfig& s) { c.genome = s.genome; });
        bind(cmd->add_option("--checkpoint", scratch.checkpoint, "checkpoint path"),
             [](RunConfig& c, const RunConfig& s) { c.checkpoint = s.checkpoint; });
        bind(cmd->add_option("--model", scratch.model, "deployment blob path"),
             [](RunConfig& c, const RunConfig& s) { c.model = s.model; });
        bind(cmd->add_option("--log", scratch.log, "run log path"),
             [](RunConfig& c, const RunConfig& s) { c.log = s.log; });
        bind(cmd->add_option("--format", scratch.format, "synth-data output format: csv or raw"),
             [](RunConfig& c, const RunConfig& s) { c.format = s.format; });
        bind(cmd->add_option("--threads", scratch.threads, "evaluation threads"),
             [](RunConfig& c, const RunConfig& s) { c.threads = s.threads; });
        bind(cmd->add_flag("--resume", scratch.resume, "continue from an existing run log"),
             [](RunConfig& c, const RunConfig& s) { c.resume = s.resume; });
    }

    RunConfig resolve() const {
        std::map<std::string, std::string> kv;
        if (!config_path.empty()) kv = read_config_file(config_path);
        RunConfig cfg;
        std::string profile = kv.count("profile") ? kv.at("profile") : "";
        if (profile_opt->count() > 0) profile = scratch.profile;
        apply_profile(cfg, profile);
        for (const auto& [k, v] : kv) apply_kv(cfg, k, v);
        cfg.profile = profile; // the file's other keys may not overwrite it
        for (const auto& [opt, copy] : binds)
            if (opt->count() > 0) copy(cfg, scratch);
        if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
        if (const char* env = std::getenv("AFNAS_THREADS")) {
            const int cap = parse_int("AFNAS_THREADS", env);
            if (cap < 1) throw ConfigError("AFNAS_THREADS must be >= 1");
            cfg.threads = std::min(cfg.threads, cap);
        }
        if (!(cfg.sample_rate_hz > 0)) throw ConfigError("sample-rate-hz must be positive");
        return cfg;
    }
};

// --- shared helpers ------------------------------------------------------------

cost::ConstraintConfig constraints_of(const RunConfig& c) {
    cost::ConstraintConfig cc;
    cc.max_params = c.max_params;
    cc.max_layers = c.max_layers;
    cc.max_kernel = c.max_kernel;
    cc.metric_floor = c.metric_floor;
    cc.max_macs_per_window = c.max_macs_per_window;
    return cc;
}

train::TrainConfig train_config_of(const RunConfig& c) {
    train::TrainConfig tc;
    tc.epochs = c.epochs;
    tc.lr_initial = c.lr;
    tc.batch_size = c.batch_size;
    tc.bn_momentum = c.bn_momentum;
    tc.seed = c.seed;
    return tc;
}

std::vector<data::LabeledWindow> load_records(const RunConfig& c) {
    if (c.dataset.empty()) {
        data::SynthDatasetConfig sc;
        sc.probands = c.probands;
        sc.windows_per_proband = c.windows_per_proband;
        sc.sample_rate_hz = c.sample_rate_hz;
        sc.seed = c.seed;
        return data::synth_dataset(sc);
    }
    if (!fs::is_directory(c.dataset))
        throw ConfigError("dataset is not a directory: " + c.dataset);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(c.dataset))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<data::LabeledWindow> all;
    for (const auto& p : files) {
        if (p.extension() == ".csv") {
            auto ws = data::read_csv_record(p.string(), c.sample_rate_hz);
            all.insert(all.end(), ws.begin(), ws.end());
        } else if (p.extension() == ".raw") {
            fs::path meta_path = p;
            meta_path.replace_extension(".meta");
            if (!fs::exists(meta_path))
                throw ConfigError("raw record lacks its sidecar: " + meta_path.string());
            const auto meta = data::read_raw_meta(meta_path.string());
            auto ws = data::read_raw_record(p.string(), meta);
            all.insert(all.end(), ws.begin(), ws.end());
        }
    }
    if (all.empty()) throw ConfigError("no windows found under " + c.dataset);
    return all;
}

data::DatasetSplit load_split(const RunConfig& c) {
    return data::make_split(load_records(c), c.seed);
}

std::string manifest_text(const std::string& command, const RunConfig& c) {
    std::ostringstream os;
    char buf[64];
    const auto real = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
    };
    os << "version " << kVersion << "\n";
    os << "command " << command << "\n";
    os << "profile " << (c.profile.empty() ? "-" : c.profile) << "\n";
    os << "seed " << c.seed << "\n";
    os << "out " << c.out << "\n";
    os << "dataset " << (c.dataset.empty() ? "synthetic" : c.dataset) << "\n";
    os << "sample-rate-hz " << real(c.sample_rate_hz) << "\n";
    os << "generations " << c.generations << "\n";
    os << "offspring " << c.offspring << "\n";
    os << "epochs " << c.epochs << "\n";
    os << "max-kernel " << c.max_kernel << "\n";
    os << "max-layers " << c.max_layers << "\n";
    os << "max-params " << c.max_params << "\n";
    os << "max-macs-per-window " << c.max_macs_per_window << "\n";
    os << "metric-floor " << real(c.metric_floor) << "\n";
    os << "lr " << real(c.lr) << "\n";
    os << "batch-size " << c.batch_size << "\n";
    os << "bn-momentum " << real(c.bn_momentum) << "\n";
    os << "probands " << c.probands << "\n";
    os << "windows-per-proband " << c.windows_per_proband << "\n";
    os << "genome " << (c.genome.empty() ? "-" : c.genome) << "\n";
    os << "checkpoint " << (c.checkpoint.empty() ? "-" : c.checkpoint) << "\n";
    os << "model " << (c.model.empty() ? "-" : c.model) << "\n";
    os << "log " << (c.log.empty() ? "-" : c.log) << "\n";
    os << "format " << c.format << "\n";
    os << "threads " << c.threads << "\n";
    os << "resume " << (c.resume ? "true" : "false") << "\n";
    return os.str();
}

void write_manifest(const std::string& command, const RunConfig& c) {
    fs::create_directories(c.out);
    const std::string path = (fs::path(c.out) / "manifest.txt").string();
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot write manifest: " + path);
    f << manifest_text(command, c);
}

void require_key(const std::string& value, const std::string& key, const std::string& cmd) {
    if (value.empty())
        throw ConfigError(cmd + " needs '" + key + "' (flag --" + key + " or config key)");
}

// --- subcommands ---------------------------------------------------------------

int cmd_synth_data(const RunConfig& c) {
    write_manifest("synth-data", c);
    if (c.format != "csv" && c.format != "raw")
        throw ConfigError("format must be csv or raw, got '" + c.format + "'");
    const auto windows = [&] {
        RunConfig synth = c;
        synth.dataset.clear(); // always generate
        return load_records(synth);
    }();
    std::map<std::string, std::vector<data::LabeledWindow>> by_source;
    for (const auto& w : windows) by_source[w.source_id].push_back(w);
    for (const auto& [source, ws] : by_source) {
        const fs::path base = fs::path(c.out) / source;
        if (c.format == "csv") {
            data::write_csv_record(base.string() + ".csv", ws);
        } else {
            data::write_raw_record(base.string() + ".raw", base.string() + ".meta", ws);
        }
    }
    std::cout << "wrote " << by_source.size() << " records (" << windows.size() << " windows of "
              << data::canonical_window_length(c.sample_rate_hz) << " samples) to " << c.out
              << "\n";
    return 0;
}

int cmd_train(const RunConfig& c) {
    require_key(c.genome, "genome", "train");
    write_manifest("train", c);
    const Genome genome = genome_from_string(c.genome);
    const auto split = load_split(c);
    const int input_length = split.train.front().samples.length;

    const auto violations = cost::validate(genome, constraints_of(c), input_length);
    if (!violations.empty()) {
        std::string msg = "genome violates constraints:";
        for (const auto& v : violations)
            msg += std::string(" [") + cost::violation_name(v.code) + "] " + v.message;
        throw InfeasibleShapeError(msg);
    }

    nn::QuantizedNetwork net = nn::build_network(genome, 2);
    train::initialize_parameters(net, c.seed);
    const auto history = train::train(net, split, train_config_of(c));

    const std::string ck = (fs::path(c.out) / "checkpoint.bin").string();
    train::save_checkpoint(ck, genome, net, history);

    std::ostringstream report;
    report << "validation:\n" << metrics::report_text(metrics::evaluate(net, split.validation));
    report << "test:\n" << metrics::report_text(metrics::evaluate(net, split.test));
    const std::string metrics_path = (fs::path(c.out) / "metrics.txt").string();
    std::ofstream mf(metrics_path, std::ios::trunc);
    mf << report.str();

    const auto& last = history.epochs.back();
    std::cout << "trained " << c.genome << " for " << c.epochs << " epochs (final train loss "
              << last.train_loss << ")\n"
              << report.str() << "checkpoint " << ck << "\n";
    return 0;
}

int cmd_eval(const RunConfig& c) {
    require_key(c.checkpoint, "checkpoint", "eval");
    write_manifest("eval", c);
    auto ck = train::load_checkpoint(c.checkpoint);
    const auto split = load_split(c);
    const std::string text = metrics::report_text(metrics::evaluate(ck.net, split.test));
    std::ofstream((fs::path(c.out) / "metrics.txt").string(), std::ios::trunc) << text;
    std::cout << text;
    return 0;
}

int cmd_search(const RunConfig& c) {
    write_manifest("search", c);
    const auto split = load_split(c);

    nas::SearchConfig sc;
    sc.generations = c.generations;
    sc.offspring_per_gen = c.offspring;
    sc.seed = c.seed;
    sc.budget = train_config_of(c);
    sc.limits = constraints_of(c);
    sc.log_path = c.log.empty() ? (fs::path(c.out) / "search_log.jsonl").string() : c.log;
    sc.resume = c.resume;
    sc.threads = c.threads;

    const auto result = nas::run_search(sc, split);
    nas::write_front_csv((fs::path(c.out) / "front.csv").string(), result.front);

    for (const auto& g : result.generations)
        std::cout << "generation " << g.generation << ": front " << g.front_size << " (feasible "
                  << g.feasible_front_size << "), hypervolume " << g.hypervolume << "\n";
    std::size_t feasible = 0;
    for (const auto& ind : result.front) feasible += ind.feasible ? 1 : 0;
    std::cout << "final front: " << result.front.size() << " members, " << feasible
              << " feasible\nlog " << sc.log_path << "\nfront " << (fs::path(c.out) / "front.csv").string()
              << "\n";
    return 0;
}

int cmd_export(const RunConfig& c) {
    require_key(c.checkpoint, "checkpoint", "export");
    write_manifest("export", c);
    auto ck = train::load_checkpoint(c.checkpoint);
    deploy::FoldedModel folded = deploy::fold_batchnorm(ck.net);

    // accumulator ranges are profiled on the training + validation windows
    const auto split = load_split(c);
    std::vector<data::LabeledWindow> profile = split.train;
    profile.insert(profile.end(), split.validation.begin(), split.validation.end());
    deploy::profile_accumulators(folded, profile);

    const std::string path =
        c.model.empty() ? (fs::path(c.out) / "model.afnn").string() : c.model;
    deploy::export_model(folded, path);
    std::cout << "exported " << folded.code_count() << " codes, payload "
              << deploy::payload_bytes(folded) << " bytes, to " << path << "\n";
    return 0;
}

int cmd_infer(const RunConfig& c) {
    require_key(c.model, "model", "infer");
    write_manifest("infer", c);
    const deploy::FoldedModel m = deploy::load_model(c.model);
    const auto split = load_split(c);

    std::vector<deploy::Prediction> rows;
    std::vector<double> logits;
    std::vector<data::Label> labels;
    std::map<std::string, int> counters;
    for (const auto& w : split.test) {
        const deploy::StreamResult r = deploy::stream_infer(m, w.samples);
        deploy::Prediction p;
        p.window_id = w.source_id + "#" + std::to_string(counters[w.source_id]++);
        p.logit_code = r.logit_code;
        p.af = r.af;
        rows.push_back(std::move(p));
        logits.push_back(r.logit);
        labels.push_back(w.label);
    }
    const std::string pred_path = (fs::path(c.out) / "predictions.csv").string();
    deploy::write_predictions_csv(pred_path, rows);
    const std::string text = metrics::report_text(metrics::tally(logits, labels));
    std::cout << text << "predictions " << pred_path << "\n";
    return 0;
}

int cmd_report(const RunConfig& c) {
    const std::string log_path =
        c.log.empty() ? (fs::path(c.out) / "search_log.jsonl").string() : c.log;
    if (!fs::exists(log_path)) throw ConfigError("run log not found: " + log_path);
    write_manifest("report", c);

    const auto evals = nas::read_log_individuals(log_path);
    const auto front = nas::pareto_front(evals);
    nas::write_front_csv((fs::path(c.out) / "report_front.csv").string(), front);

    const int input_length = data::canonical_window_length(c.sample_rate_hz);
    const std::string costs_path = (fs::path(c.out) / "report_costs.csv").string();
    std::ofstream costs(costs_path, std::ios::trunc);
    if (!costs) throw ConfigError("cannot write " + costs_path);
    costs << "genome,params,weight_bytes,macs_per_window,max_layer_output,activation_bytes,"
             "linebuffer_bytes,total_bits\n";
    for (const auto& ind : front) {
        const auto r = cost::report(ind.genome, input_length, 2);
        costs << '"' << genome_to_string(ind.genome) << "\"," << r.params << ',' << r.weight_bytes
              << ',' << r.macs_per_window << ',' << r.max_layer_output << ',' << r.activation_bytes
              << ',' << r.linebuffer_bytes << ',' << r.total_bits << '\n';
    }

    std::cout << "evaluations " << evals.size() << ", front " << front.size() << "\n";
    for (const auto& ind : front) {
        const auto& o = ind.objectives;
        std::cout << (ind.feasible ? "feasible   " : "infeasible ") << genome_to_string(ind.genome)
                  << " fnr " << o.fnr << " fpr " << o.fpr << " noise_fpr " << o.noise_fpr
                  << " params " << o.params << "\n";
    }
    return 0;
}

int dispatch(const std::string& name, const RunConfig& cfg) {
    if (name == "synth-data") return cmd_synth_data(cfg);
    if (name == "train") return cmd_train(cfg);
    if (name == "eval") return cmd_eval(cfg);
    if (name == "search") return cmd_search(cfg);
    if (name == "export") return cmd_export(cfg);
    if (name == "infer") return cmd_infer(cfg);
    if (name == "report") return cmd_report(cfg);
    throw InternalError("unknown subcommand " + name);
}

int fail(const char* category, const std::string& msg) {
    std::cerr << "afnas: error: " << category << ": " << msg << "\n";
    return category == std::string("usage")     ? 1
           : category == std::string("data")    ? 2
           : category == std::string("infeasible") ? 3
                                                 : 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"quantized 1D-CNN search, training and streaming deployment"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    const char* names[] = {"synth-data", "train", "eval", "search", "export", "infer", "report"};
    const char* descs[] = {"generate synthetic ECG records",
                           "train one genome and write a checkpoint",
                           "score a checkpoint on the test split",
                           "evolutionary architecture search",
                           "fold a checkpoint and write the deployment blob",
                           "stream windows through a deployment blob",
                           "render front + cost tables from a run log"};
    std::vector<std::unique_ptr<CommonFlags>> flags;
    for (std::size_t i = 0; i < 7; ++i) {
        auto* cmd = app.add_subcommand(names[i], descs[i]);
        flags.push_back(std::make_unique<CommonFlags>());
        flags.back()->attach(cmd);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        for (std::size_t i = 0; i < 7; ++i)
            if (app.get_subcommands().front()->get_name() == names[i])
                return dispatch(names[i], flags[i]->resolve());
        throw InternalError("no subcommand dispatched");
    } catch (const ConfigError& e) {
        return fail("usage", e.what());
    } catch (const ContractError& e) {
        return fail("usage", e.what());
    } catch (const ParseError& e) {
        return fail("data", e.what());
    } catch (const FormatError& e) {
        return fail("data", e.what());
    } catch (const UndefinedMetricError& e) {
        return fail("data", e.what());
    } catch (const InfeasibleShapeError& e) {
        return fail("infeasible", e.what());
    } catch (const GenerationError& e) {
        return fail("infeasible", e.what());
    } catch (const TrainingFailureError& e) {
        return fail("internal", e.what());
    } catch (const InternalError& e) {
        return fail("internal", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
}
