#ifndef AFNAS_GENOME_HPP
#define AFNAS_GENOME_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "afnas/fxp.hpp"

namespace afnas {

// One depthwise-separable layer candidate: kernel size, output channels and
// depthwise stride.
struct LayerGene {
    int kernel = 1;
    int out_channels = 4;
    int stride = 1;

    friend bool operator==(const LayerGene&, const LayerGene&) = default;
};

struct Genome {
    std::vector<LayerGene> layers; // 1..5 entries
    fxp::QuantPair quant;

    friend bool operator==(const Genome&, const Genome&) = default;
};

inline constexpr std::array<int, 9> kKernelChoices = {1, 2, 4, 8, 16, 32, 64, 128, 256};
inline constexpr std::array<int, 9> kChannelChoices = {4, 8, 16, 32, 64, 128, 256, 512, 1024};
inline constexpr std::array<int, 7> kStrideChoices = {1, 2, 4, 8, 16, 32, 64};
inline constexpr int kMaxLayers = 5;

// Text form used by logs, checkpoints and the CLI:
//   "K,C,S;K,C,S@ww,pw,wa,pa"
std::string genome_to_string(const Genome& g);
Genome genome_from_string(const std::string& text);

} // namespace afnas

#endif
