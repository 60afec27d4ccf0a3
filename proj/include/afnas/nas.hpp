#ifndef AFNAS_NAS_HPP
#define AFNAS_NAS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "afnas/cost.hpp"
#include "afnas/data.hpp"
#include "afnas/genome.hpp"
#include "afnas/train.hpp"

namespace afnas::nas {

// All components minimized.
struct ObjectiveVector {
    double fnr = 1.0;       // 1 - sensitivity
    double fpr = 1.0;       // 1 - specificity
    double noise_fpr = 1.0; // 1 - noise specificity
    int n_layers = 0;
    std::int64_t params = 0;
    int total_bits = 0; // weight width + activation width
    std::int64_t max_layer_output = 0;
};

struct Individual {
    Genome genome;
    ObjectiveVector objectives;
    bool feasible = false;
    // Sum of max(0, floor - metric) over the three rate floors plus normalized
    // hard-constraint excesses; zero iff feasible.
    double violation = 0.0;
    std::uint64_t train_seed = 0;
    bool failed = false; // training diverged; never enters a front
};

// Uniform draws from the search sets, resampled until cost::validate passes.
// Throws GenerationError once the retry budget is exhausted.
Genome random_genome(const cost::ConstraintConfig& limits, int input_length,
                     std::uint64_t seed);

// Per-field probability `rate`: step K/C/S one slot up or down, re-draw the
// quant pair, add or remove a layer. Repairs clamp S <= K and K <= max_kernel;
// a child that still fails validation is retried and finally falls back to the
// parent, so valid in implies valid out.
Genome mutate(const Genome& g, const cost::ConstraintConfig& limits, int input_length,
              std::uint64_t seed, double rate = 0.2);

// Single-point splice of the layer lists at a shared cut index plus a coin
// flip between the parents' quant pairs. Same repair policy as mutate.
Genome crossover(const Genome& a, const Genome& b, const cost::ConstraintConfig& limits,
                 int input_length, std::uint64_t seed);

// Trains the genome on split.train and scores split.validation. Hard-invalid
// genomes skip training and come back with worst-case objectives and maximal
// violation; a diverging run sets `failed`.
Individual evaluate(const Genome& g, const data::DatasetSplit& split,
                    const train::TrainConfig& budget, const cost::ConstraintConfig& limits,
                    std::uint64_t train_seed);

// Sum of max(0, floor - metric) over the three rate metrics.
double floor_violation(double sensitivity, double specificity, double noise_specificity,
                       double floor);

// Constraint-domination: feasible beats infeasible, lower violation decides
// between infeasibles, Pareto order on all seven objectives between feasibles.
bool dominates(const Individual& a, const Individual& b);

// Non-dominated subset under constraint-domination, `failed` members dropped.
std::vector<Individual> pareto_front(const std::vector<Individual>& population);

// NSGA-II crowding distance per member (boundary members get +inf).
std::vector<double> crowding_distance(const std::vector<Individual>& front);

// Dominated fraction of the reference box (1,1,1,5,1e6,64,1e7), estimated on a
// fixed pseudo-random sample so repeated calls are comparable and an elitist
// front sequence yields a non-decreasing series. Only feasible members count.
double hypervolume(const std::vector<Individual>& front);

struct SearchConfig {
    int generations = 10;
    int offspring_per_gen = 8;
    std::uint64_t seed = 1;
    train::TrainConfig budget;
    cost::ConstraintConfig limits;
    std::string log_path; // empty disables logging (and resume)
    bool resume = false;  // continue from an existing log
    int threads = 1;      // concurrent evaluations per generation
};

struct GenerationStats {
    int generation = 0;
    std::size_t front_size = 0;
    std::size_t feasible_front_size = 0;
    double hypervolume = 0.0;
};

struct SearchResult {
    std::vector<Individual> front; // elitist archive after the last generation
    std::vector<GenerationStats> generations;
};

// Generation loop: uniform parent draws from the archive with binary crowding
// tournaments, crossover + mutation, seeded parallel evaluation, elitist merge.
// Appends one line per evaluation and per generation front to the log.
SearchResult run_search(const SearchConfig& cfg, const data::DatasetSplit& split);

// FNR-vs-FPR table (plus the other objectives) for external plotting.
void write_front_csv(const std::string& path, const std::vector<Individual>& front);

// Every evaluation record from a run log, in file order.
std::vector<Individual> read_log_individuals(const std::string& path);

} // namespace afnas::nas

#endif
