#include "afnas/nas.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "afnas/metrics.hpp"
#include "afnas/nn.hpp"
#include "afnas/rng.hpp"
#include "json.hpp"

namespace afnas::nas {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::int64_t kWorstInt = std::numeric_limits<std::int64_t>::max();

// Objective vector as a flat array for dominance/crowding loops.
std::array<double, 7> as_array(const ObjectiveVector& o) {
    return {o.fnr,
            o.fpr,
            o.noise_fpr,
            static_cast<double>(o.n_layers),
            static_cast<double>(o.params),
            static_cast<double>(o.total_bits),
            static_cast<double>(o.max_layer_output)};
}

template <std::size_t N>
int choice_index(const std::array<int, N>& choices, int value) {
    for (std::size_t i = 0; i < N; ++i)
        if (choices[i] == value) return static_cast<int>(i);
    throw ContractError("value " + std::to_string(value) + " not in the search set");
}

template <std::size_t N>
int step(const std::array<int, N>& choices, int value, bool up) {
    int idx = choice_index(choices, value) + (up ? 1 : -1);
    idx = std::clamp(idx, 0, static_cast<int>(N) - 1);
    return choices[idx];
}

// Largest choice <= cap (every set starts at 1 or 4, so cap >= 1 always works
// for kernels/strides).
template <std::size_t N>
int clamp_to(const std::array<int, N>& choices, int cap) {
    int best = choices[0];
    for (int c : choices)
        if (c <= cap) best = c;
    return best;
}

LayerGene random_layer(const cost::ConstraintConfig& limits, Rng& rng) {
    std::vector<int> kernels;
    for (int k : kKernelChoices)
        if (k <= limits.max_kernel) kernels.push_back(k);
    if (kernels.empty()) throw GenerationError("max_kernel below every kernel choice");
    LayerGene l;
    l.kernel = kernels[rng.uniform_index(kernels.size())];
    l.out_channels = kChannelChoices[rng.uniform_index(kChannelChoices.size())];
    std::vector<int> strides;
    for (int s : kStrideChoices)
        if (!limits.require_stride_le_kernel || s <= l.kernel) strides.push_back(s);
    l.stride = strides[rng.uniform_index(strides.size())];
    return l;
}

fxp::QuantPair random_quant(Rng& rng) {
    const auto& fmt_w = fxp::kSearchFormats[rng.uniform_index(fxp::kSearchFormats.size())];
    // The search set pairs weight and activation formats identically indexed;
    // weights and activations are drawn as one pair, matching the genome form.
    fxp::QuantPair q;
    q.weights = fmt_w;
    q.activations = fmt_w;
    return q;
}

void repair(Genome& g, const cost::ConstraintConfig& limits) {
    for (auto& layer : g.layers) {
        if (layer.kernel > limits.max_kernel)
            layer.kernel = clamp_to(kKernelChoices, limits.max_kernel);
        if (limits.require_stride_le_kernel && layer.stride > layer.kernel)
            layer.stride = clamp_to(kStrideChoices, layer.kernel);
    }
}

bool valid(const Genome& g, const cost::ConstraintConfig& limits, int input_length) {
    return cost::validate(g, limits, input_length).empty();
}

} // namespace

Genome random_genome(const cost::ConstraintConfig& limits, int input_length,
                     std::uint64_t seed) {
    constexpr int kRetries = 10000;
    const int max_layers = std::min(kMaxLayers, limits.max_layers);
    if (max_layers < 1) throw GenerationError("max_layers below 1");
    for (int attempt = 0; attempt < kRetries; ++attempt) {
        Rng rng(Rng::derive(seed, "random-genome-" + std::to_string(attempt)));
        Genome g;
        const int n = 1 + static_cast<int>(rng.uniform_index(max_layers));
        for (int i = 0; i < n; ++i) g.layers.push_back(random_layer(limits, rng));
        g.quant = random_quant(rng);
        if (valid(g, limits, input_length)) return g;
    }
    throw GenerationError("no valid genome found in 10000 draws");
}

Genome mutate(const Genome& g, const cost::ConstraintConfig& limits, int input_length,
              std::uint64_t seed, double rate) {
    constexpr int kRetries = 64;
    const int max_layers = std::min(kMaxLayers, limits.max_layers);
    for (int attempt = 0; attempt < kRetries; ++attempt) {
        Rng rng(Rng::derive(seed, "mutate-" + std::to_string(attempt)));
        Genome m = g;
        for (auto& layer : m.layers) {
            if (rng.coin(rate)) layer.kernel = step(kKernelChoices, layer.kernel, rng.coin());
            if (rng.coin(rate))
                layer.out_channels = step(kChannelChoices, layer.out_channels, rng.coin());
            if (rng.coin(rate)) layer.stride = step(kStrideChoices, layer.stride, rng.coin());
        }
        if (rng.coin(rate)) m.quant = random_quant(rng);
        if (rng.coin(rate)) {
            const bool can_add = static_cast<int>(m.layers.size()) < max_layers;
            const bool can_remove = m.layers.size() > 1;
            const bool add = can_add && (!can_remove || rng.coin());
            if (add) {
                const auto pos = rng.uniform_index(m.layers.size() + 1);
                m.layers.insert(m.layers.begin() + static_cast<std::ptrdiff_t>(pos),
                                random_layer(limits, rng));
            } else if (can_remove) {
                const auto pos = rng.uniform_index(m.layers.size());
                m.layers.erase(m.layers.begin() + static_cast<std::ptrdiff_t>(pos));
            }
        }
        repair(m, limits);
        if (valid(m, limits, input_length)) return m;
    }
    return g; // parent is valid by precondition
}

Genome crossover(const Genome& a, const Genome& b, const cost::ConstraintConfig& limits,
                 int input_length, std::uint64_t seed) {
    constexpr int kRetries = 64;
    for (int attempt = 0; attempt < kRetries; ++attempt) {
        Rng rng(Rng::derive(seed, "crossover-" + std::to_string(attempt)));
        const std::size_t max_cut = std::min(a.layers.size(), b.layers.size());
        const std::size_t cut = 1 + rng.uniform_index(max_cut);
        Genome child;
        child.layers.assign(a.layers.begin(),
                            a.layers.begin() + static_cast<std::ptrdiff_t>(cut));
        child.layers.insert(child.layers.end(),
                            b.layers.begin() + static_cast<std::ptrdiff_t>(cut),
                            b.layers.end());
        child.quant = rng.coin() ? a.quant : b.quant;
        repair(child, limits);
        if (valid(child, limits, input_length)) return child;
    }
    return a;
}

Individual evaluate(const Genome& g, const data::DatasetSplit& split,
                    const train::TrainConfig& budget, const cost::ConstraintConfig& limits,
                    std::uint64_t train_seed) {
    if (split.train.empty() || split.validation.empty())
        throw ContractError("evaluate: needs train and validation windows");
    const int input_length = split.train.front().samples.length;

    Individual ind;
    ind.genome = g;
    ind.train_seed = train_seed;
    ind.objectives.n_layers = static_cast<int>(g.layers.size());
    ind.objectives.total_bits = g.quant.weights.width_bits + g.quant.activations.width_bits;
    ind.objectives.params = nn::param_count(g, 2);

    const auto violations = cost::validate(g, limits, input_length);
    if (!violations.empty()) {
        // Worst-case rates (metrics treated as zero) plus one unit per broken
        // hard constraint; always worse than any trained candidate.
        ind.objectives.fnr = 1.0;
        ind.objectives.fpr = 1.0;
        ind.objectives.noise_fpr = 1.0;
        ind.objectives.max_layer_output = kWorstInt;
        ind.violation = 3.0 * limits.metric_floor + static_cast<double>(violations.size());
        ind.feasible = false;
        return ind;
    }

    const auto report = cost::report(g, input_length, 2);
    ind.objectives.max_layer_output = report.max_layer_output;

    auto net = nn::build_network(g, 2);
    train::initialize_parameters(net, train_seed);
    train::TrainConfig cfg = budget;
    cfg.seed = train_seed;
    try {
        train::train(net, split, cfg);
    } catch (const TrainingFailureError&) {
        ind.failed = true;
        ind.objectives.fnr = 1.0;
        ind.objectives.fpr = 1.0;
        ind.objectives.noise_fpr = 1.0;
        ind.violation = 3.0 * limits.metric_floor;
        return ind;
    }

    const auto r = metrics::evaluate(net, split.validation);
    auto rate = [](double metric) { return 1.0 - metric; };
    double sens = 0.0, spec = 0.0, noise_spec = 0.0;
    try {
        sens = metrics::sensitivity(r.overall);
    } catch (const UndefinedMetricError&) {
    }
    try {
        spec = metrics::specificity(r.overall);
    } catch (const UndefinedMetricError&) {
    }
    try {
        noise_spec = metrics::noise_specificity(r.noise);
    } catch (const UndefinedMetricError&) {
    }
    ind.objectives.fnr = rate(sens);
    ind.objectives.fpr = rate(spec);
    ind.objectives.noise_fpr = rate(noise_spec);
    ind.violation = floor_violation(sens, spec, noise_spec, limits.metric_floor);
    ind.feasible = ind.violation == 0.0;
    return ind;
}

double floor_violation(double sensitivity, double specificity, double noise_specificity,
                       double floor) {
    return std::max(0.0, floor - sensitivity) + std::max(0.0, floor - specificity) +
           std::max(0.0, floor - noise_specificity);
}

bool dominates(const Individual& a, const Individual& b) {
    if (a.failed || b.failed) return false;
    if (a.feasible != b.feasible) return a.feasible;
    if (!a.feasible) return a.violation < b.violation;
    const auto va = as_array(a.objectives);
    const auto vb = as_array(b.objectives);
    bool strict = false;
    for (std::size_t i = 0; i < va.size(); ++i) {
        if (va[i] > vb[i]) return false;
        if (va[i] < vb[i]) strict = true;
    }
    return strict;
}

std::vector<Individual> pareto_front(const std::vector<Individual>& population) {
    std::vector<const Individual*> alive;
    for (const auto& ind : population)
        if (!ind.failed) alive.push_back(&ind);
    // Fast non-dominated sort, rank 0 only: count dominators per member.
    std::vector<int> dominated_by(alive.size(), 0);
    for (std::size_t i = 0; i < alive.size(); ++i)
        for (std::size_t j = i + 1; j < alive.size(); ++j) {
            if (dominates(*alive[i], *alive[j])) ++dominated_by[j];
            else if (dominates(*alive[j], *alive[i])) ++dominated_by[i];
        }
    std::vector<Individual> front;
    for (std::size_t i = 0; i < alive.size(); ++i)
        if (dominated_by[i] == 0) front.push_back(*alive[i]);
    return front;
}

std::vector<double> crowding_distance(const std::vector<Individual>& front) {
    const std::size_t n = front.size();
    std::vector<double> dist(n, 0.0);
    if (n <= 2) {
        std::fill(dist.begin(), dist.end(), kInf);
        return dist;
    }
    for (std::size_t obj = 0; obj < 7; ++obj) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        auto key = [&](std::size_t i) { return as_array(front[i].objectives)[obj]; };
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
        const double span = key(order.back()) - key(order.front());
        if (span <= 0.0) continue; // constant objective separates nobody
        dist[order.front()] = kInf;
        dist[order.back()] = kInf;
        for (std::size_t r = 1; r + 1 < n; ++r)
            dist[order[r]] += (key(order[r + 1]) - key(order[r - 1])) / span;
    }
    return dist;
}

double hypervolume(const std::vector<Individual>& front) {
    constexpr std::array<double, 7> kRef = {1.0, 1.0, 1.0, 5.0, 1e6, 64.0, 1e7};
    constexpr int kSamples = 8192;
    std::vector<std::array<double, 7>> points;
    for (const auto& ind : front)
        if (ind.feasible && !ind.failed) points.push_back(as_array(ind.objectives));
    if (points.empty()) return 0.0;
    // Common random numbers: the fixed seed makes estimates comparable across
    // calls, so elitist front growth is visible as a monotone series.
    Rng rng(0x9e3779b97f4a7c15ull);
    int dominated = 0;
    for (int s = 0; s < kSamples; ++s) {
        std::array<double, 7> sample;
        for (std::size_t d = 0; d < 7; ++d) sample[d] = rng.uniform() * kRef[d];
        for (const auto& p : points) {
            bool covers = true;
            for (std::size_t d = 0; d < 7; ++d)
                if (p[d] > sample[d]) {
                    covers = false;
                    break;
                }
            if (covers) {
                ++dominated;
                break;
            }
        }
    }
    return static_cast<double>(dominated) / kSamples;
}

// --- search loop ---------------------------------------------------------------

namespace {

using nlohmann::json;

json objectives_json(const ObjectiveVector& o) {
    return {{"fnr", o.fnr},
            {"fpr", o.fpr},
            {"noise_fpr", o.noise_fpr},
            {"n_layers", o.n_layers},
            {"params", o.params},
            {"total_bits", o.total_bits},
            {"max_layer_output", o.max_layer_output}};
}

json individual_json(const Individual& ind, int generation, int slot) {
    return {{"type", "eval"},
            {"generation", generation},
            {"slot", slot},
            {"genome", genome_to_string(ind.genome)},
            {"train_seed", ind.train_seed},
            {"failed", ind.failed},
            {"feasible", ind.feasible},
            {"violation", ind.violation},
            {"objectives", objectives_json(ind.objectives)}};
}

Individual individual_from_json(const json& rec) {
    Individual ind;
    ind.genome = genome_from_string(rec.at("genome").get<std::string>());
    ind.train_seed = rec.at("train_seed").get<std::uint64_t>();
    ind.failed = rec.at("failed").get<bool>();
    ind.feasible = rec.at("feasible").get<bool>();
    ind.violation = rec.at("violation").get<double>();
    const json& o = rec.at("objectives");
    ind.objectives.fnr = o.at("fnr").get<double>();
    ind.objectives.fpr = o.at("fpr").get<double>();
    ind.objectives.noise_fpr = o.at("noise_fpr").get<double>();
    ind.objectives.n_layers = o.at("n_layers").get<int>();
    ind.objectives.params = o.at("params").get<std::int64_t>();
    ind.objectives.total_bits = o.at("total_bits").get<int>();
    ind.objectives.max_layer_output = o.at("max_layer_output").get<std::int64_t>();
    return ind;
}

struct LogState {
    std::vector<Individual> evaluated;
    int last_generation = 0;
};

LogState read_log(const std::string& path) {
    LogState state;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open run log: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("run log: ") + e.what(), lineno);
        }
        const std::string type = rec.value("type", "");
        if (type == "eval") {
            state.evaluated.push_back(individual_from_json(rec));
            state.last_generation =
                std::max(state.last_generation, rec.at("generation").get<int>());
        } else if (type == "front") {
            state.last_generation =
                std::max(state.last_generation, rec.at("generation").get<int>());
        }
    }
    return state;
}

std::size_t tournament_pick(const std::vector<double>& crowding, Rng& rng) {
    const std::size_t i = rng.uniform_index(crowding.size());
    const std::size_t j = rng.uniform_index(crowding.size());
    return crowding[j] > crowding[i] ? j : i;
}

} // namespace

SearchResult run_search(const SearchConfig& cfg, const data::DatasetSplit& split) {
    if (cfg.generations < 1 || cfg.offspring_per_gen < 1)
        throw ContractError("run_search: generations and offspring must be positive");
    if (split.train.empty() || split.validation.empty())
        throw ContractError("run_search: needs train and validation windows");
    const int input_length = split.train.front().samples.length;

    std::vector<Individual> archive;
    int start_gen = 1;
    if (cfg.resume && !cfg.log_path.empty()) {
        const LogState state = read_log(cfg.log_path);
        archive = pareto_front(state.evaluated);
        start_gen = state.last_generation + 1;
    }

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path, cfg.resume ? std::ios::app : std::ios::trunc);
        if (!log) throw ConfigError("cannot open run log for writing: " + cfg.log_path);
    }

    SearchResult result;
    const int threads = std::max(1, cfg.threads);
    for (int gen = start_gen; gen <= cfg.generations; ++gen) {
        Rng rng(Rng::derive(cfg.seed, "gen-" + std::to_string(gen)));

        // All random draws happen up front so evaluation order cannot matter.
        std::vector<Genome> offspring;
        if (archive.empty()) {
            for (int k = 0; k < cfg.offspring_per_gen; ++k)
                offspring.push_back(random_genome(cfg.limits, input_length, rng.next_u64()));
        } else {
            const auto crowding = crowding_distance(archive);
            for (int k = 0; k < cfg.offspring_per_gen; ++k) {
                const auto& pa = archive[tournament_pick(crowding, rng)];
                const auto& pb = archive[tournament_pick(crowding, rng)];
                Genome child = crossover(pa.genome, pb.genome, cfg.limits, input_length,
                                         rng.next_u64());
                offspring.push_back(
                    mutate(child, cfg.limits, input_length, rng.next_u64()));
            }
        }

        std::vector<std::uint64_t> seeds;
        for (int k = 0; k < cfg.offspring_per_gen; ++k)
            seeds.push_back(Rng::derive(
                cfg.seed, "train-" + std::to_string(gen) + "-" + std::to_string(k)));

        std::vector<Individual> evaluated(offspring.size());
        std::exception_ptr first_error;
        std::mutex error_mutex;
        std::atomic<std::size_t> cursor{0};
        auto worker = [&] {
            for (;;) {
                const std::size_t k = cursor.fetch_add(1);
                if (k >= offspring.size()) return;
                try {
                    evaluated[k] =
                        evaluate(offspring[k], split, cfg.budget, cfg.limits, seeds[k]);
                } catch (...) {
                    const std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        };
        if (threads == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            const int nthreads = std::min<int>(threads, cfg.offspring_per_gen);
            for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
        if (first_error) std::rethrow_exception(first_error);

        if (log.is_open())
            for (std::size_t k = 0; k < evaluated.size(); ++k)
                log << individual_json(evaluated[k], gen, static_cast<int>(k)).dump()
                    << '\n';

        std::vector<Individual> merged = archive;
        merged.insert(merged.end(), evaluated.begin(), evaluated.end());
        archive = pareto_front(merged);

        GenerationStats stats;
        stats.generation = gen;
        stats.front_size = archive.size();
        for (const auto& ind : archive)
            if (ind.feasible) ++stats.feasible_front_size;
        stats.hypervolume = hypervolume(archive);
        result.generations.push_back(stats);

        if (log.is_open()) {
            json front_rec = {{"type", "front"},
                              {"generation", gen},
                              {"size", archive.size()},
                              {"feasible", stats.feasible_front_size},
                              {"hypervolume", stats.hypervolume}};
            json members = json::array();
            for (const auto& ind : archive) members.push_back(genome_to_string(ind.genome));
            front_rec["members"] = members;
            log << front_rec.dump() << '\n';
            log.flush();
        }
    }
    result.front = archive;
    return result;
}

std::vector<Individual> read_log_individuals(const std::string& path) {
    return read_log(path).evaluated;
}

void write_front_csv(const std::string& path, const std::vector<Individual>& front) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write front csv: " + path);
    out << "fnr,fpr,noise_fpr,n_layers,params,total_bits,max_layer_output,feasible,"
           "violation,genome\n";
    char buf[64];
    for (const auto& ind : front) {
        const auto& o = ind.objectives;
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,", o.fnr, o.fpr, o.noise_fpr);
        out << buf << o.n_layers << ',' << o.params << ',' << o.total_bits << ','
            << o.max_layer_output << ',' << (ind.feasible ? 1 : 0) << ',';
        std::snprintf(buf, sizeof buf, "%.6f", ind.violation);
        out << buf << ",\"" << genome_to_string(ind.genome) << "\"\n";
    }
}

} // namespace afnas::nas
