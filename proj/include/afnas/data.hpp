#ifndef AFNAS_DATA_HPP
#define AFNAS_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "afnas/errors.hpp"
#include "afnas/nn.hpp"
#include "afnas/rng.hpp"

namespace afnas::data {

enum class Label { kAf, kNormal, kNoise };

const char* label_name(Label l);
Label label_from_name(const std::string& name);

// One 120 s two-channel ECG segment in millivolts.
struct LabeledWindow {
    nn::FeatureMap samples; // H x 2
    double sample_rate = 128.0;
    Label label = Label::kNormal;
    std::string source_id;
};

struct DatasetSplit {
    std::vector<LabeledWindow> train;
    std::vector<LabeledWindow> validation;
    std::vector<LabeledWindow> test;
};

struct AugmentConfig {
    double noise_band_lo_hz = 25.0;
    double noise_band_hi_hz = 100.0;
    double noise_amplitude_frac = 0.05; // of per-channel peak-to-peak
    double baseline_shift_frac = 0.10;
    double amplitude_scale_frac = 0.20;
    double frequency_shift_frac = 0.10;
    std::uint64_t seed = 0;
};

// --- synthesis ---------------------------------------------------------------

// Deterministic synthetic ECG: NORMAL has periodic P-QRS-T complexes with
// small RR jitter, AF has irregular RR intervals and a 4-9 Hz fibrillatory
// baseline instead of P waves, NOISE is artifact bursts plus wander. Returns
// floor(duration/120) windows sharing `source_id`.
std::vector<LabeledWindow> synthesize_record(Label cls, double duration_s,
                                             double sample_rate_hz, std::uint64_t seed,
                                             const std::string& source_id);

struct SynthDatasetConfig {
    int probands = 24;
    int windows_per_proband = 12;
    double sample_rate_hz = 128.0;
    std::uint64_t seed = 1;
};

// Each proband's windows cycle through the three classes (records mix rhythms,
// like real recordings), so any proband-level split keeps every class as long
// as windows_per_proband >= 3. Window (p, j) gets a derived seed.
std::vector<LabeledWindow> synth_dataset(const SynthDatasetConfig& cfg);

// --- augmentation ------------------------------------------------------------

// Draw order: band noise amplitude, baseline offset, gain, resample factor.
// A fraction of zero leaves the corresponding channel of the pipeline
// bit-identical.
LabeledWindow augment(const LabeledWindow& w, const AugmentConfig& cfg, Rng& rng);
LabeledWindow augment(const LabeledWindow& w, const AugmentConfig& cfg);

// Band-limited unit-amplitude-class noise used by augment(); exposed for the
// spectral test. Tones sit on exact DFT bins of `length` so their power is
// fully contained in-band.
std::vector<double> band_noise(int length, double sample_rate_hz, double lo_hz, double hi_hz,
                               double amplitude, Rng& rng);

// --- file ingestion ----------------------------------------------------------

// CSV: one row per sample, `ch1,ch2[,chN...][,label]`. A non-numeric last
// token is the per-sample label; extra numeric columns beyond the first two
// channels are ignored.
std::vector<LabeledWindow> read_csv_record(const std::string& path, double sample_rate_hz);

struct RawLabelInterval {
    double start_s = 0;
    double end_s = 0;
    Label label = Label::kNormal;
};

struct RawMeta {
    double sample_rate_hz = 0;
    double gain_uv_per_lsb = 1.0;
    int channels = 2;
    std::vector<RawLabelInterval> labels;
};

RawMeta read_raw_meta(const std::string& meta_path);

// RAW: interleaved little-endian int16 frames; first two channels kept.
std::vector<LabeledWindow> read_raw_record(const std::string& path, const RawMeta& meta);

void write_csv_record(const std::string& path, const std::vector<LabeledWindow>& windows);

// Inverse of read_raw_record: int16 codes at the given gain plus the sidecar
// metadata file with one label interval per window.
void write_raw_record(const std::string& path, const std::string& meta_path,
                      const std::vector<LabeledWindow>& windows,
                      double gain_uv_per_lsb = 5.0);

// --- splitting ---------------------------------------------------------------

// Proband-level 70/15/15 split: sources shuffled by seed, then greedily
// assigned to the partition with the largest remaining window deficit.
DatasetSplit make_split(const std::vector<LabeledWindow>& records, std::uint64_t seed);

int canonical_window_length(double sample_rate_hz);

} // namespace afnas::data

#endif
