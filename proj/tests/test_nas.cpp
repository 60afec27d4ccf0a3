#include "afnas/nas.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "afnas/rng.hpp"
#include "doctest.h"

using namespace afnas;

namespace {

constexpr int kWindow = 3840; // 120 s at 32 Hz

bool in_set(int v, const auto& choices) {
    return std::find(choices.begin(), choices.end(), v) != choices.end();
}

nas::Individual feasible_point(double fnr, double fpr, double noise_fpr, int n_layers,
                               std::int64_t params, int total_bits,
                               std::int64_t max_out) {
    nas::Individual ind;
    ind.objectives = {fnr, fpr, noise_fpr, n_layers, params, total_bits, max_out};
    ind.feasible = true;
    ind.violation = 0.0;
    return ind;
}

nas::Individual random_individual(Rng& rng) {
    nas::Individual ind;
    // Coarse draws on purpose: collisions exercise the tie/duplicate rules.
    ind.objectives.fnr = rng.uniform_index(5) * 0.25;
    ind.objectives.fpr = rng.uniform_index(5) * 0.25;
    ind.objectives.noise_fpr = rng.uniform_index(5) * 0.25;
    ind.objectives.n_layers = 1 + static_cast<int>(rng.uniform_index(5));
    ind.objectives.params = 1000 * (1 + static_cast<std::int64_t>(rng.uniform_index(4)));
    ind.objectives.total_bits = 24 + 8 * static_cast<int>(rng.uniform_index(3));
    ind.objectives.max_layer_output = 1 << rng.uniform_index(4);
    ind.failed = rng.uniform_index(12) == 0;
    const auto kind = rng.uniform_index(3);
    if (kind == 0) {
        ind.feasible = true;
        ind.violation = 0.0;
    } else {
        ind.feasible = false;
        ind.violation = 0.1 * (1 + static_cast<double>(rng.uniform_index(8)));
    }
    return ind;
}

// Small separable task shared by the evaluate/search tests.
data::DatasetSplit small_split(int train_per_class, int val_per_class, std::uint64_t seed) {
    data::DatasetSplit s;
    const data::Label classes[3] = {data::Label::kAf, data::Label::kNormal,
                                    data::Label::kNoise};
    for (int c = 0; c < 3; ++c) {
        auto tr = data::synthesize_record(classes[c], 120.0 * train_per_class, 32.0,
                                          seed + static_cast<std::uint64_t>(c),
                                          "tr-" + std::to_string(c));
        s.train.insert(s.train.end(), tr.begin(), tr.end());
        auto va = data::synthesize_record(classes[c], 120.0 * val_per_class, 32.0,
                                          seed + 100 + static_cast<std::uint64_t>(c),
                                          "va-" + std::to_string(c));
        s.validation.insert(s.validation.end(), va.begin(), va.end());
    }
    return s;
}

cost::ConstraintConfig tiny_limits() {
    cost::ConstraintConfig limits;
    limits.max_macs_per_window = 200000; // keeps each candidate cheap to train
    return limits;
}

} // namespace

TEST_CASE("random_genome: deterministic, always valid, inside the search sets") {
    const cost::ConstraintConfig limits;
    const auto a = nas::random_genome(limits, kWindow, 42);
    const auto b = nas::random_genome(limits, kWindow, 42);
    CHECK(genome_to_string(a) == genome_to_string(b));

    std::set<int> seen_kernels;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const auto g = nas::random_genome(limits, kWindow, s);
        CHECK(cost::validate(g, limits, kWindow).empty());
        CHECK(g.layers.size() >= 1);
        CHECK(g.layers.size() <= 5);
        for (const auto& l : g.layers) {
            CHECK(in_set(l.kernel, kKernelChoices));
            CHECK(in_set(l.out_channels, kChannelChoices));
            CHECK(in_set(l.stride, kStrideChoices));
            seen_kernels.insert(l.kernel);
        }
        bool in_quant_set = false;
        for (const auto& f : fxp::kSearchFormats)
            if (f.width_bits == g.quant.weights.width_bits &&
                f.precision_bits == g.quant.weights.precision_bits)
                in_quant_set = true;
        CHECK(in_quant_set);
    }
    // Draws roam the whole kernel range permitted by the default limits.
    CHECK(seen_kernels.size() >= 4);

    cost::ConstraintConfig impossible;
    impossible.max_params = 1;
    CHECK_THROWS_AS(nas::random_genome(impossible, kWindow, 1), GenerationError);
}

TEST_CASE("mutate: rate 0 is identity, offspring always valid, deterministic") {
    const cost::ConstraintConfig limits;
    const auto parent = nas::random_genome(limits, kWindow, 7);

    CHECK(genome_to_string(nas::mutate(parent, limits, kWindow, 99, 0.0)) ==
          genome_to_string(parent));

    int changed = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const auto base = nas::random_genome(limits, kWindow, s * 31 + 5);
        const auto child = nas::mutate(base, limits, kWindow, s);
        CHECK(cost::validate(child, limits, kWindow).empty());
        if (genome_to_string(child) != genome_to_string(base)) ++changed;
    }
    CHECK(changed > 400); // default rate flips most offspring

    const auto m1 = nas::mutate(parent, limits, kWindow, 3);
    const auto m2 = nas::mutate(parent, limits, kWindow, 3);
    CHECK(genome_to_string(m1) == genome_to_string(m2));
}

TEST_CASE("crossover: self-cross is identity, children valid and deterministic") {
    const cost::ConstraintConfig limits;
    const auto a = nas::random_genome(limits, kWindow, 11);
    const auto b = nas::random_genome(limits, kWindow, 12);

    for (std::uint64_t s = 0; s < 50; ++s)
        CHECK(genome_to_string(nas::crossover(a, a, limits, kWindow, s)) ==
              genome_to_string(a));

    for (std::uint64_t s = 0; s < 500; ++s) {
        const auto child = nas::crossover(a, b, limits, kWindow, s);
        CHECK(cost::validate(child, limits, kWindow).empty());
        CHECK(child.layers.size() <= 5);
    }
    CHECK(genome_to_string(nas::crossover(a, b, limits, kWindow, 4)) ==
          genome_to_string(nas::crossover(a, b, limits, kWindow, 4)));
}

TEST_CASE("floor arithmetic: sensitivity 0.65 contributes 0.05") {
    CHECK(nas::floor_violation(0.65, 0.9, 0.9, 0.7) == doctest::Approx(0.05));
    CHECK(nas::floor_violation(1.0, 1.0, 1.0, 0.7) == 0.0);
    CHECK(nas::floor_violation(0.0, 0.0, 0.0, 0.7) == doctest::Approx(2.1));
    CHECK(nas::floor_violation(0.7, 0.7, 0.7, 0.7) == 0.0);
}

TEST_CASE("dominates: spec'd comparisons and partial-order laws") {
    auto first = feasible_point(0.1, 0.2, 0.1, 2, 5000, 24, 64);
    auto second = feasible_point(0.2, 0.3, 0.1, 2, 6000, 24, 64);
    CHECK(nas::dominates(first, second));
    CHECK_FALSE(nas::dominates(second, first));

    // Identical vectors never dominate each other.
    CHECK_FALSE(nas::dominates(first, first));

    // Feasible beats infeasible regardless of objectives.
    nas::Individual bad = feasible_point(0.0, 0.0, 0.0, 1, 10, 24, 1);
    bad.feasible = false;
    bad.violation = 0.01;
    nas::Individual mediocre = feasible_point(0.9, 0.9, 0.9, 5, 999999, 64, 1 << 20);
    CHECK(nas::dominates(mediocre, bad));
    CHECK_FALSE(nas::dominates(bad, mediocre));

    // Lower violation wins between infeasibles.
    nas::Individual worse = bad;
    worse.violation = 0.5;
    CHECK(nas::dominates(bad, worse));

    // Failed individuals neither dominate nor get dominated.
    nas::Individual dead = feasible_point(0.0, 0.0, 0.0, 1, 10, 24, 1);
    dead.failed = true;
    CHECK_FALSE(nas::dominates(dead, second));
    CHECK_FALSE(nas::dominates(second, dead));

    Rng rng(2024);
    int transitive_hits = 0;
    for (int trial = 0; trial < 20000; ++trial) {
        auto x = random_individual(rng);
        auto y = random_individual(rng);
        auto z = random_individual(rng);
        CHECK_FALSE(nas::dominates(x, x)); // irreflexive
        if (nas::dominates(x, y)) CHECK_FALSE(nas::dominates(y, x)); // antisymmetric
        if (nas::dominates(x, y) && nas::dominates(y, z)) {
            CHECK(nas::dominates(x, z)); // transitive
            ++transitive_hits;
        }
    }
    CHECK(transitive_hits > 100); // the law was actually exercised
}

TEST_CASE("pareto_front matches a brute-force oracle on random populations") {
    Rng rng(77);
    for (int run = 0; run < 10; ++run) {
        std::vector<nas::Individual> pop;
        for (int i = 0; i < 200; ++i) pop.push_back(random_individual(rng));

        // Oracle: keep i iff no j dominates it, skipping failed members.
        std::vector<nas::Individual> expected;
        for (std::size_t i = 0; i < pop.size(); ++i) {
            if (pop[i].failed) continue;
            bool dominated = false;
            for (std::size_t j = 0; j < pop.size(); ++j)
                if (j != i && nas::dominates(pop[j], pop[i])) dominated = true;
            if (!dominated) expected.push_back(pop[i]);
        }

        const auto front = nas::pareto_front(pop);
        REQUIRE(front.size() == expected.size());
        for (std::size_t i = 0; i < front.size(); ++i) {
            CHECK(front[i].feasible == expected[i].feasible);
            CHECK(front[i].violation == expected[i].violation);
            CHECK(front[i].objectives.fnr == expected[i].objectives.fnr);
            CHECK(front[i].objectives.params == expected[i].objectives.params);
        }
    }

    // Singleton and duplicate behavior.
    auto solo = feasible_point(0.5, 0.5, 0.5, 3, 100, 24, 8);
    CHECK(nas::pareto_front({solo}).size() == 1);
    CHECK(nas::pareto_front({solo, solo}).size() == 2);
}

TEST_CASE("crowding distance: boundaries infinite, interior gap-scaled") {
    std::vector<nas::Individual> front = {
        feasible_point(0.1, 0.5, 0.5, 2, 100, 24, 8),
        feasible_point(0.2, 0.5, 0.5, 2, 100, 24, 8),
        feasible_point(0.4, 0.5, 0.5, 2, 100, 24, 8),
    };
    const auto d = nas::crowding_distance(front);
    REQUIRE(d.size() == 3);
    CHECK(std::isinf(d[0]));
    CHECK(std::isinf(d[2]));
    CHECK(d[1] == doctest::Approx(1.0)); // (0.4 - 0.1) / span over the only live axis

    CHECK(nas::crowding_distance({front[0]}).size() == 1);
    CHECK(std::isinf(nas::crowding_distance({front[0], front[1]})[0]));
}

TEST_CASE("hypervolume: analytic box volume, monotone under inserts") {
    CHECK(nas::hypervolume({}) == 0.0);

    auto p = feasible_point(0.0, 0.0, 0.0, 1, 100, 24, 100);
    // Exact dominated fraction of the reference box: product of (1 - p_d/ref_d).
    const double exact = 1.0 * 1.0 * 1.0 * (1.0 - 1.0 / 5.0) * (1.0 - 100.0 / 1e6) *
                         (1.0 - 24.0 / 64.0) * (1.0 - 100.0 / 1e7);
    const double est = nas::hypervolume({p});
    CHECK(est == doctest::Approx(exact).epsilon(0.06));

    auto q = feasible_point(0.5, 0.5, 0.5, 1, 100, 24, 100);
    CHECK(nas::hypervolume({q}) <= est);
    CHECK(nas::hypervolume({q, p}) >= nas::hypervolume({q})); // common samples: exact

    auto inf = q;
    inf.feasible = false;
    inf.violation = 0.3;
    CHECK(nas::hypervolume({inf}) == 0.0);
}

TEST_CASE("evaluate fills objectives and the feasibility contract") {
    auto split = small_split(2, 1, 500);
    const auto limits = tiny_limits();
    train::TrainConfig budget;
    budget.epochs = 2;
    budget.batch_size = 6;

    const Genome g = genome_from_string("8,8,4@16,8,16,8");
    const auto ind = nas::evaluate(g, split, budget, limits, 333);
    CHECK_FALSE(ind.failed);
    CHECK(ind.objectives.n_layers == 1);
    CHECK(ind.objectives.params == nn::param_count(g, 2));
    CHECK(ind.objectives.total_bits == 32);
    CHECK(ind.objectives.fnr >= 0.0);
    CHECK(ind.objectives.fnr <= 1.0);
    CHECK(ind.objectives.fpr >= 0.0);
    CHECK(ind.objectives.fpr <= 1.0);
    CHECK(ind.objectives.max_layer_output ==
          cost::report(g, kWindow, 2).max_layer_output);
    CHECK((ind.feasible == (ind.violation == 0.0)));

    // Determinism across repeated evaluations.
    const auto again = nas::evaluate(g, split, budget, limits, 333);
    CHECK(again.objectives.fnr == ind.objectives.fnr);
    CHECK(again.objectives.fpr == ind.objectives.fpr);
    CHECK(again.violation == ind.violation);
}

TEST_CASE("evaluate: shape-infeasible genome gets worst case and stays off fronts") {
    auto split = small_split(1, 1, 600);
    const auto limits = tiny_limits();
    train::TrainConfig budget;
    budget.epochs = 1;

    // Two aggressive downsampling layers cannot fit a 3840-sample window.
    const Genome g = genome_from_string("256,8,64;256,8,64@16,8,16,8");
    const auto ind = nas::evaluate(g, split, budget, limits, 1);
    CHECK_FALSE(ind.feasible);
    CHECK_FALSE(ind.failed);
    CHECK(ind.objectives.fnr == 1.0);
    CHECK(ind.objectives.fpr == 1.0);
    CHECK(ind.objectives.noise_fpr == 1.0);
    CHECK(ind.violation > 2.1); // beyond any trained candidate's worst

    const Genome ok = genome_from_string("8,8,4@16,8,16,8");
    const auto trained = nas::evaluate(ok, split, budget, limits, 2);
    const auto front = nas::pareto_front({ind, trained});
    REQUIRE(front.size() == 1);
    CHECK(genome_to_string(front[0].genome) == genome_to_string(ok));
}

TEST_CASE("run_search: deterministic elitist loop with a resumable log") {
    auto split = small_split(2, 1, 700);
    nas::SearchConfig cfg;
    cfg.generations = 3;
    cfg.offspring_per_gen = 4;
    cfg.seed = 99;
    cfg.limits = tiny_limits();
    cfg.budget.epochs = 2;
    cfg.budget.batch_size = 6;
    cfg.log_path = "nas_run.jsonl";

    const auto r1 = nas::run_search(cfg, split);
    REQUIRE(r1.generations.size() == 3);
    CHECK(r1.front.size() >= 1);

    // Hypervolume of the elitist archive never shrinks.
    for (std::size_t i = 1; i < r1.generations.size(); ++i)
        CHECK(r1.generations[i].hypervolume >= r1.generations[i - 1].hypervolume);

    // Every archived member satisfies every hard constraint.
    for (const auto& ind : r1.front) {
        CHECK(cost::validate(ind.genome, cfg.limits, kWindow).empty());
        CHECK_FALSE(ind.failed);
    }

    // Determinism: identical run, identical front.
    const auto r2 = nas::run_search(cfg, split);
    REQUIRE(r2.front.size() == r1.front.size());
    for (std::size_t i = 0; i < r1.front.size(); ++i) {
        CHECK(genome_to_string(r2.front[i].genome) == genome_to_string(r1.front[i].genome));
        CHECK(r2.front[i].objectives.fnr == r1.front[i].objectives.fnr);
        CHECK(r2.front[i].violation == r1.front[i].violation);
    }

    // Log contains one eval line per offspring plus one front line per generation.
    std::ifstream log(cfg.log_path);
    REQUIRE(log.good());
    int evals = 0, fronts = 0;
    std::string line;
    while (std::getline(log, line)) {
        if (line.find("\"type\":\"eval\"") != std::string::npos) ++evals;
        if (line.find("\"type\":\"front\"") != std::string::npos) ++fronts;
    }
    CHECK(evals == 12);
    CHECK(fronts == 3);
    std::remove(cfg.log_path.c_str());
}

TEST_CASE("run_search: resume reproduces the uninterrupted run") {
    auto split = small_split(2, 1, 800);
    nas::SearchConfig cfg;
    cfg.generations = 4;
    cfg.offspring_per_gen = 3;
    cfg.seed = 5;
    cfg.limits = tiny_limits();
    cfg.budget.epochs = 2;
    cfg.budget.batch_size = 6;

    cfg.log_path = "nas_full.jsonl";
    const auto full = nas::run_search(cfg, split);

    cfg.log_path = "nas_part.jsonl";
    cfg.generations = 2;
    nas::run_search(cfg, split);
    cfg.generations = 4;
    cfg.resume = true;
    const auto resumed = nas::run_search(cfg, split);

    REQUIRE(resumed.front.size() == full.front.size());
    for (std::size_t i = 0; i < full.front.size(); ++i) {
        CHECK(genome_to_string(resumed.front[i].genome) ==
              genome_to_string(full.front[i].genome));
        CHECK(resumed.front[i].objectives.fnr == full.front[i].objectives.fnr);
        CHECK(resumed.front[i].train_seed == full.front[i].train_seed);
    }
    // The resumed pass only ran generations 3 and 4.
    REQUIRE(resumed.generations.size() == 2);
    CHECK(resumed.generations[0].generation == 3);
    CHECK(resumed.generations.back().hypervolume ==
          full.generations.back().hypervolume);
    std::remove("nas_full.jsonl");
    std::remove("nas_part.jsonl");
}

TEST_CASE("run_search: threaded evaluation matches single-threaded results") {
    auto split = small_split(1, 1, 900);
    nas::SearchConfig cfg;
    cfg.generations = 2;
    cfg.offspring_per_gen = 4;
    cfg.seed = 21;
    cfg.limits = tiny_limits();
    cfg.budget.epochs = 1;
    cfg.budget.batch_size = 6;

    const auto serial = nas::run_search(cfg, split);
    cfg.threads = 4;
    const auto parallel = nas::run_search(cfg, split);
    REQUIRE(parallel.front.size() == serial.front.size());
    for (std::size_t i = 0; i < serial.front.size(); ++i) {
        CHECK(genome_to_string(parallel.front[i].genome) ==
              genome_to_string(serial.front[i].genome));
        CHECK(parallel.front[i].objectives.fnr == serial.front[i].objectives.fnr);
    }
}

TEST_CASE("front csv is quoted and complete") {
    std::vector<nas::Individual> front = {feasible_point(0.125, 0.25, 0.0, 2, 5000, 24, 64)};
    front[0].genome = genome_from_string("8,16,2;4,64,4@16,10,12,6");
    nas::write_front_csv("front.csv", front);
    std::ifstream in("front.csv");
    REQUIRE(in.good());
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header ==
          "fnr,fpr,noise_fpr,n_layers,params,total_bits,max_layer_output,feasible,"
          "violation,genome");
    CHECK(row.find("0.125000,0.250000,0.000000,2,5000,24,64,1,0.000000") == 0);
    CHECK(row.find("\"8,16,2;4,64,4@16,10,12,6\"") != std::string::npos);
    std::remove("front.csv");
}
