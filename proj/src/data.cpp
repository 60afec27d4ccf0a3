#include "afnas/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace afnas::data {

namespace {

constexpr double kWindowSeconds = 120.0;
constexpr double kTau = 2.0 * std::numbers::pi;

// Adds a Gaussian bump centered at time `t0` (seconds) to one channel.
void add_bump(nn::FeatureMap& m, int channel, double sample_rate, double t0, double amp,
              double sigma_s) {
    const double sigma_n = sigma_s * sample_rate;
    const double center = t0 * sample_rate;
    const int lo = std::max(0, static_cast<int>(std::floor(center - 4 * sigma_n)));
    const int hi = std::min(m.length - 1, static_cast<int>(std::ceil(center + 4 * sigma_n)));
    for (int i = lo; i <= hi; ++i) {
        const double d = (i - center) / sigma_n;
        m.at(i, channel) += amp * std::exp(-0.5 * d * d);
    }
}

// One cardiac cycle: QRS complex and T wave on both channels, P wave only
// when `with_p` (AF replaces it with fibrillatory baseline).
void add_beat(nn::FeatureMap& m, double rate, double t_r, bool with_p, Rng& rng) {
    const double r_amp = rng.uniform(1.2, 1.6);
    add_bump(m, 0, rate, t_r - 0.045, -0.15, 0.015); // Q
    add_bump(m, 0, rate, t_r, r_amp, 0.025);         // R
    add_bump(m, 0, rate, t_r + 0.045, -0.20, 0.018); // S
    add_bump(m, 0, rate, t_r + 0.30, 0.30, 0.06);    // T
    if (with_p) add_bump(m, 0, rate, t_r - 0.17, 0.15, 0.03);

    add_bump(m, 1, rate, t_r, 0.75 * r_amp, 0.025);
    add_bump(m, 1, rate, t_r + 0.30, 0.35, 0.06);
    if (with_p) add_bump(m, 1, rate, t_r - 0.17, 0.10, 0.03);
}

void add_fibrillation(nn::FeatureMap& m, double rate, Rng& rng) {
    // 4-9 Hz oscillation standing in for absent P waves.
    for (int tone = 0; tone < 3; ++tone) {
        const double f = rng.uniform(4.0, 9.0);
        const double phase = rng.uniform(0.0, kTau);
        const double amp = rng.uniform(0.05, 0.10);
        for (int i = 0; i < m.length; ++i) {
            const double v = amp * std::sin(kTau * f * i / rate + phase);
            m.at(i, 0) += v;
            m.at(i, 1) += 0.8 * v;
        }
    }
}

void add_measurement_noise(nn::FeatureMap& m, Rng& rng, double sd) {
    for (double& v : m.values) v += rng.normal(0.0, sd);
}

nn::FeatureMap synth_noise_window(int len, double rate, Rng& rng) {
    nn::FeatureMap m(len, 2);
    // Baseline wander.
    for (int tone = 0; tone < 2; ++tone) {
        const double f = rng.uniform(0.05, 0.5);
        const double phase = rng.uniform(0.0, kTau);
        const double amp = rng.uniform(0.3, 0.7);
        for (int i = 0; i < len; ++i) {
            m.at(i, 0) += amp * std::sin(kTau * f * i / rate + phase);
            m.at(i, 1) += 0.9 * amp * std::sin(kTau * f * i / rate + 0.8 * phase);
        }
    }
    // Artifact bursts: band-limited tone clusters over random segments.
    const double duration = len / rate;
    double t = rng.uniform(0.0, 2.0);
    while (t < duration) {
        const double burst_len = rng.uniform(1.0, 5.0);
        const int i0 = static_cast<int>(t * rate);
        const int i1 = std::min(len, static_cast<int>((t + burst_len) * rate));
        const double hi_f = std::min(45.0, 0.45 * rate);
        for (int tone = 0; tone < 4; ++tone) {
            const double f = rng.uniform(2.0, hi_f);
            const double phase = rng.uniform(0.0, kTau);
            const double amp = rng.uniform(0.3, 1.0);
            const int ch = tone % 2;
            for (int i = i0; i < i1; ++i)
                m.at(i, ch) += amp * std::sin(kTau * f * i / rate + phase);
        }
        t += burst_len + rng.uniform(0.5, 4.0);
    }
    add_measurement_noise(m, rng, 0.05);
    return m;
}

nn::FeatureMap synth_beat_window(Label cls, int len, double rate, Rng& rng) {
    nn::FeatureMap m(len, 2);
    const double rr0 = 60.0 / rng.uniform(55.0, 95.0);
    const double duration = len / rate;
    double t = rng.uniform(0.3, 0.8);
    while (t < duration + 0.5) {
        add_beat(m, rate, t, cls == Label::kNormal, rng);
        if (cls == Label::kNormal)
            t += rr0 * (1.0 + rng.uniform(-0.03, 0.03));
        else
            t += rr0 * rng.uniform(0.6, 1.4); // i.i.d., CV ~ 0.23
    }
    if (cls == Label::kAf) add_fibrillation(m, rate, rng);
    add_measurement_noise(m, rng, 0.01);
    return m;
}

bool parse_double(const std::string& tok, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(tok, &pos);
        while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) ++pos;
        return pos == tok.size();
    } catch (const std::exception&) {
        return false;
    }
}

Label window_label_from_counts(std::size_t n, std::size_t noise, std::size_t af) {
    if (2 * noise >= n) return Label::kNoise;
    if (af > 0) return Label::kAf;
    return Label::kNormal;
}

} // namespace

const char* label_name(Label l) {
    switch (l) {
        case Label::kAf: return "AF";
        case Label::kNormal: return "NORMAL";
        case Label::kNoise: return "NOISE";
    }
    throw ContractError("label_name: bad enum value");
}

Label label_from_name(const std::string& name) {
    if (name == "AF") return Label::kAf;
    if (name == "NORMAL") return Label::kNormal;
    if (name == "NOISE") return Label::kNoise;
    throw ParseError("unknown label '" + name + "'", 0);
}

int canonical_window_length(double sample_rate_hz) {
    if (!(sample_rate_hz > 0)) throw ContractError("sample rate must be positive");
    return static_cast<int>(std::lround(kWindowSeconds * sample_rate_hz));
}

std::vector<LabeledWindow> synthesize_record(Label cls, double duration_s,
                                             double sample_rate_hz, std::uint64_t seed,
                                             const std::string& source_id) {
    if (!(sample_rate_hz > 0)) throw ContractError("synthesize_record: sample rate must be positive");
    if (!(duration_s > 0)) throw ContractError("synthesize_record: duration must be positive");
    const int n_windows = static_cast<int>(duration_s / kWindowSeconds);
    if (n_windows < 1)
        throw ContractError("synthesize_record: duration shorter than one 120 s window");

    const int len = canonical_window_length(sample_rate_hz);
    Rng rng(seed);
    std::vector<LabeledWindow> out;
    out.reserve(n_windows);
    for (int w = 0; w < n_windows; ++w) {
        LabeledWindow lw;
        lw.sample_rate = sample_rate_hz;
        lw.label = cls;
        lw.source_id = source_id;
        lw.samples = cls == Label::kNoise ? synth_noise_window(len, sample_rate_hz, rng)
                                          : synth_beat_window(cls, len, sample_rate_hz, rng);
        out.push_back(std::move(lw));
    }
    return out;
}

std::vector<LabeledWindow> synth_dataset(const SynthDatasetConfig& cfg) {
    if (cfg.probands < 1 || cfg.windows_per_proband < 1)
        throw ContractError("synth_dataset: counts must be positive");
    static constexpr Label kCycle[3] = {Label::kAf, Label::kNormal, Label::kNoise};
    std::vector<LabeledWindow> all;
    for (int p = 0; p < cfg.probands; ++p) {
        char id[32];
        std::snprintf(id, sizeof id, "synth-%04d", p);
        for (int j = 0; j < cfg.windows_per_proband; ++j) {
            const std::uint64_t seed =
                Rng::derive(cfg.seed, "proband-" + std::to_string(p) + "-" + std::to_string(j));
            auto rec = synthesize_record(kCycle[(p + j) % 3], kWindowSeconds, cfg.sample_rate_hz,
                                         seed, id);
            for (auto& w : rec) all.push_back(std::move(w));
        }
    }
    return all;
}

std::vector<double> band_noise(int length, double sample_rate_hz, double lo_hz, double hi_hz,
                               double amplitude, Rng& rng) {
    const double nyquist = sample_rate_hz / 2.0;
    double lo = lo_hz, hi = std::min(hi_hz, 0.95 * nyquist);
    if (lo >= hi) {
        // Band entirely above Nyquist at low sample rates: fold to the upper
        // representable part of the spectrum.
        hi = 0.95 * nyquist;
        lo = 0.5 * nyquist;
    }
    const double t_total = length / sample_rate_hz;
    const int k_lo = static_cast<int>(std::ceil(lo * t_total));
    const int k_hi = std::max(k_lo, static_cast<int>(std::floor(hi * t_total)));

    constexpr int kTones = 24;
    std::vector<double> noise(length, 0.0);
    for (int tone = 0; tone < kTones; ++tone) {
        const int k = k_lo + static_cast<int>(rng.uniform_index(k_hi - k_lo + 1));
        const double phase = rng.uniform(0.0, kTau);
        const double w = kTau * k / length;
        for (int i = 0; i < length; ++i) noise[i] += std::sin(w * i + phase);
    }
    double peak = 0.0;
    for (double v : noise) peak = std::max(peak, std::abs(v));
    if (peak <= 0.0) return noise;
    const double scale = amplitude / peak;
    for (double& v : noise) v *= scale;
    return noise;
}

LabeledWindow augment(const LabeledWindow& w, const AugmentConfig& cfg, Rng& rng) {
    for (double f : {cfg.noise_amplitude_frac, cfg.baseline_shift_frac, cfg.amplitude_scale_frac,
                     cfg.frequency_shift_frac})
        if (f < 0.0 || f > 1.0) throw ContractError("augment: fractions must lie in [0,1]");

    const int len = w.samples.length;
    const int channels = w.samples.channels;

    // Fixed draw order keeps augmentation reproducible regardless of which
    // fractions are enabled.
    const double noise_amp_frac =
        cfg.noise_amplitude_frac > 0 ? rng.uniform(0.0, cfg.noise_amplitude_frac) : 0.0;
    const double baseline_frac =
        cfg.baseline_shift_frac > 0 ? rng.uniform(-cfg.baseline_shift_frac, cfg.baseline_shift_frac)
                                    : 0.0;
    const double gain = cfg.amplitude_scale_frac > 0
                            ? rng.uniform(1.0 - cfg.amplitude_scale_frac, 1.0 + cfg.amplitude_scale_frac)
                            : 1.0;
    const double factor = cfg.frequency_shift_frac > 0
                              ? rng.uniform(1.0 - cfg.frequency_shift_frac, 1.0 + cfg.frequency_shift_frac)
                              : 1.0;

    LabeledWindow out = w;

    // (d) time-axis resampling, then crop/pad with the edge value.
    if (factor != 1.0) {
        nn::FeatureMap resampled(len, channels);
        for (int i = 0; i < len; ++i) {
            const double pos = i * factor;
            for (int c = 0; c < channels; ++c) {
                if (pos >= len - 1) {
                    resampled.at(i, c) = w.samples.at(len - 1, c);
                } else {
                    const int idx = static_cast<int>(pos);
                    const double frac = pos - idx;
                    resampled.at(i, c) = w.samples.at(idx, c) * (1.0 - frac) +
                                         w.samples.at(idx + 1, c) * frac;
                }
            }
        }
        out.samples = std::move(resampled);
    }

    // (c) global gain.
    if (gain != 1.0)
        for (double& v : out.samples.values) v *= gain;

    // Per-channel peak-to-peak of the clean signal scales (b) and (a).
    std::vector<double> p2p(channels, 0.0);
    for (int c = 0; c < channels; ++c) {
        double lo = out.samples.at(0, c), hi = lo;
        for (int i = 1; i < len; ++i) {
            lo = std::min(lo, out.samples.at(i, c));
            hi = std::max(hi, out.samples.at(i, c));
        }
        p2p[c] = hi - lo;
    }

    // (b) constant baseline offset.
    if (baseline_frac != 0.0)
        for (int c = 0; c < channels; ++c) {
            const double offset = baseline_frac * p2p[c];
            for (int i = 0; i < len; ++i) out.samples.at(i, c) += offset;
        }

    // (a) additive band-limited noise, independent per channel.
    if (noise_amp_frac > 0.0)
        for (int c = 0; c < channels; ++c) {
            const auto noise = band_noise(len, w.sample_rate, cfg.noise_band_lo_hz,
                                          cfg.noise_band_hi_hz, noise_amp_frac * p2p[c], rng);
            for (int i = 0; i < len; ++i) out.samples.at(i, c) += noise[i];
        }
    return out;
}

LabeledWindow augment(const LabeledWindow& w, const AugmentConfig& cfg) {
    Rng rng(cfg.seed);
    return augment(w, cfg, rng);
}

std::vector<LabeledWindow> read_csv_record(const std::string& path, double sample_rate_hz) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file: " + path);
    const int len = canonical_window_length(sample_rate_hz);

    std::string stem = path;
    if (const auto slash = stem.find_last_of('/'); slash != std::string::npos)
        stem = stem.substr(slash + 1);
    if (const auto dot = stem.find_last_of('.'); dot != std::string::npos) stem = stem.substr(0, dot);

    std::vector<double> ch1, ch2;
    std::vector<Label> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> tokens;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) tokens.push_back(tok);
        if (!line.empty() && line.back() == ',') tokens.push_back("");

        Label label = Label::kNormal;
        double trailing = 0.0;
        if (!tokens.empty() && !parse_double(tokens.back(), trailing)) {
            try {
                label = label_from_name(tokens.back());
            } catch (const ParseError&) {
                throw ParseError("bad label '" + tokens.back() + "'", line_no);
            }
            tokens.pop_back();
        }
        if (tokens.size() < 2) throw ParseError("need at least 2 channel columns", line_no);
        double v1 = 0, v2 = 0;
        if (!parse_double(tokens[0], v1) || !parse_double(tokens[1], v2))
            throw ParseError("non-numeric channel value", line_no);
        for (std::size_t i = 2; i < tokens.size(); ++i) {
            double ignored;
            if (!parse_double(tokens[i], ignored))
                throw ParseError("non-numeric channel value", line_no);
        }
        ch1.push_back(v1);
        ch2.push_back(v2);
        labels.push_back(label);
    }

    std::vector<LabeledWindow> out;
    for (std::size_t start = 0; start + len <= ch1.size(); start += len) {
        LabeledWindow w;
        w.sample_rate = sample_rate_hz;
        w.source_id = stem;
        w.samples = nn::FeatureMap(len, 2);
        std::size_t noise = 0, af = 0;
        for (int i = 0; i < len; ++i) {
            w.samples.at(i, 0) = ch1[start + i];
            w.samples.at(i, 1) = ch2[start + i];
            noise += labels[start + i] == Label::kNoise;
            af += labels[start + i] == Label::kAf;
        }
        w.label = window_label_from_counts(len, noise, af);
        out.push_back(std::move(w));
    }
    return out;
}

RawMeta read_raw_meta(const std::string& meta_path) {
    std::ifstream in(meta_path);
    if (!in) throw ConfigError("cannot open metadata file: " + meta_path);
    RawMeta meta;
    bool have_rate = false;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("metadata line lacks '='", line_no);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "sample_rate_hz") {
            if (!parse_double(value, meta.sample_rate_hz))
                throw ParseError("bad sample_rate_hz", line_no);
            have_rate = true;
        } else if (key == "gain_uv_per_lsb") {
            if (!parse_double(value, meta.gain_uv_per_lsb))
                throw ParseError("bad gain_uv_per_lsb", line_no);
        } else if (key == "channels") {
            double ch;
            if (!parse_double(value, ch) || ch < 2) throw ParseError("bad channels", line_no);
            meta.channels = static_cast<int>(ch);
        } else if (key == "labels") {
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ';')) {
                if (item.empty()) continue;
                const auto c1 = item.find(':');
                const auto c2 = item.find(':', c1 + 1);
                if (c1 == std::string::npos || c2 == std::string::npos)
                    throw ParseError("label interval needs start:end:name", line_no);
                RawLabelInterval iv;
                if (!parse_double(item.substr(0, c1), iv.start_s) ||
                    !parse_double(item.substr(c1 + 1, c2 - c1 - 1), iv.end_s))
                    throw ParseError("bad label interval bounds", line_no);
                iv.label = label_from_name(item.substr(c2 + 1));
                meta.labels.push_back(iv);
            }
        } else {
            throw ConfigError("unknown metadata key '" + key + "' in " + meta_path);
        }
    }
    if (!have_rate) throw ConfigError("metadata missing sample_rate_hz: " + meta_path);
    if (!(meta.sample_rate_hz > 0)) throw ConfigError("sample_rate_hz must be positive");
    return meta;
}

std::vector<LabeledWindow> read_raw_record(const std::string& path, const RawMeta& meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open raw file: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const std::size_t frame_bytes = 2 * static_cast<std::size_t>(meta.channels);
    if (bytes.size() % frame_bytes != 0)
        throw ParseError("truncated frame: file size " + std::to_string(bytes.size()) +
                             " not a multiple of " + std::to_string(frame_bytes),
                         bytes.size() - bytes.size() % frame_bytes);
    const std::size_t n_samples = bytes.size() / frame_bytes;

    std::string stem = path;
    if (const auto slash = stem.find_last_of('/'); slash != std::string::npos)
        stem = stem.substr(slash + 1);
    if (const auto dot = stem.find_last_of('.'); dot != std::string::npos) stem = stem.substr(0, dot);

    const int len = canonical_window_length(meta.sample_rate_hz);
    const double to_mv = meta.gain_uv_per_lsb / 1000.0;

    std::vector<LabeledWindow> out;
    for (std::size_t start = 0; start + static_cast<std::size_t>(len) <= n_samples; start += len) {
        LabeledWindow w;
        w.sample_rate = meta.sample_rate_hz;
        w.source_id = stem;
        w.samples = nn::FeatureMap(len, 2);
        for (int i = 0; i < len; ++i) {
            const std::size_t off = (start + i) * frame_bytes;
            for (int c = 0; c < 2; ++c) {
                const auto lo = static_cast<unsigned char>(bytes[off + 2 * c]);
                const auto hi = static_cast<unsigned char>(bytes[off + 2 * c + 1]);
                const auto code = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo) |
                                                            (static_cast<std::uint16_t>(hi) << 8));
                w.samples.at(i, c) = code * to_mv;
            }
        }
        // Interval overlap decides the window label.
        const double t0 = start / meta.sample_rate_hz;
        const double t1 = (start + len) / meta.sample_rate_hz;
        double noise_overlap = 0.0, af_overlap = 0.0;
        for (const auto& iv : meta.labels) {
            const double o = std::max(0.0, std::min(t1, iv.end_s) - std::max(t0, iv.start_s));
            if (iv.label == Label::kNoise) noise_overlap += o;
            if (iv.label == Label::kAf) af_overlap += o;
        }
        if (noise_overlap >= 0.5 * (t1 - t0))
            w.label = Label::kNoise;
        else if (af_overlap > 0)
            w.label = Label::kAf;
        else
            w.label = Label::kNormal;
        out.push_back(std::move(w));
    }
    return out;
}

void write_csv_record(const std::string& path, const std::vector<LabeledWindow>& windows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write CSV file: " + path);
    char buf[96];
    for (const auto& w : windows)
        for (int i = 0; i < w.samples.length; ++i) {
            std::snprintf(buf, sizeof buf, "%.6f,%.6f,%s\n", w.samples.at(i, 0), w.samples.at(i, 1),
                          label_name(w.label));
            out << buf;
        }
}

void write_raw_record(const std::string& path, const std::string& meta_path,
                      const std::vector<LabeledWindow>& windows, double gain_uv_per_lsb) {
    if (windows.empty()) throw ContractError("write_raw_record: no windows");
    if (!(gain_uv_per_lsb > 0)) throw ContractError("write_raw_record: gain must be positive");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write raw file: " + path);
    const double from_mv = 1000.0 / gain_uv_per_lsb;
    for (const auto& w : windows)
        for (int i = 0; i < w.samples.length; ++i)
            for (int c = 0; c < 2; ++c) {
                double code = std::round(w.samples.at(i, c) * from_mv);
                code = std::clamp(code, -32768.0, 32767.0);
                const auto v = static_cast<std::int16_t>(code);
                const auto u = static_cast<std::uint16_t>(v);
                out.put(static_cast<char>(u & 0xff));
                out.put(static_cast<char>((u >> 8) & 0xff));
            }
    if (!out) throw ConfigError("short write to raw file: " + path);

    std::ofstream meta(meta_path, std::ios::trunc);
    if (!meta) throw ConfigError("cannot write metadata file: " + meta_path);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", windows.front().sample_rate);
    meta << "sample_rate_hz=" << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.6g", gain_uv_per_lsb);
    meta << "gain_uv_per_lsb=" << buf << "\n";
    meta << "channels=2\n";
    meta << "labels=";
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (i > 0) meta << ';';
        std::snprintf(buf, sizeof buf, "%.6g:%.6g:", i * kWindowSeconds, (i + 1) * kWindowSeconds);
        meta << buf << label_name(windows[i].label);
    }
    meta << "\n";
    if (!meta) throw ConfigError("short write to metadata file: " + meta_path);
}

DatasetSplit make_split(const std::vector<LabeledWindow>& records, std::uint64_t seed) {
    std::map<std::string, std::vector<std::size_t>> by_source;
    for (std::size_t i = 0; i < records.size(); ++i)
        by_source[records[i].source_id].push_back(i);
    if (by_source.size() < 3)
        throw ContractError("make_split: need at least 3 distinct probands, have " +
                            std::to_string(by_source.size()));

    std::vector<std::string> sources;
    sources.reserve(by_source.size());
    for (const auto& [id, _] : by_source) sources.push_back(id);
    Rng rng(Rng::derive(seed, "split"));
    for (std::size_t i = sources.size(); i > 1; --i)
        std::swap(sources[i - 1], sources[rng.uniform_index(i)]);

    const double total = static_cast<double>(records.size());
    const double targets[3] = {0.70 * total, 0.15 * total, 0.15 * total};
    double counts[3] = {0, 0, 0};
    DatasetSplit split;
    std::vector<LabeledWindow>* bins[3] = {&split.train, &split.validation, &split.test};
    for (const auto& id : sources) {
        int best = 0;
        double best_deficit = targets[0] - counts[0];
        for (int p = 1; p < 3; ++p) {
            const double deficit = targets[p] - counts[p];
            if (deficit > best_deficit) {
                best = p;
                best_deficit = deficit;
            }
        }
        for (std::size_t idx : by_source[id]) bins[best]->push_back(records[idx]);
        counts[best] += static_cast<double>(by_source[id].size());
    }
    return split;
}

} // namespace afnas::data
