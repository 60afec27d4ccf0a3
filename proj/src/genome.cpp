#include "afnas/genome.hpp"

#include <charconv>
#include <sstream>

#include "afnas/errors.hpp"

namespace afnas {

namespace {

int parse_int(std::string_view token, const char* what) {
    int value = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size())
        throw ParseError(std::string("bad ") + what + " '" + std::string(token) + "'", 0);
    return value;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.push_back(s.substr(start));
            return parts;
        }
        parts.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

} // namespace

std::string genome_to_string(const Genome& g) {
    std::ostringstream out;
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        if (i) out << ';';
        out << g.layers[i].kernel << ',' << g.layers[i].out_channels << ',' << g.layers[i].stride;
    }
    out << '@' << g.quant.weights.width_bits << ',' << g.quant.weights.precision_bits << ','
        << g.quant.activations.width_bits << ',' << g.quant.activations.precision_bits;
    return out.str();
}

Genome genome_from_string(const std::string& text) {
    const std::size_t at = text.find('@');
    if (at == std::string::npos) throw ParseError("missing '@' quant separator", 0);

    Genome g;
    for (std::string_view layer : split(std::string_view(text).substr(0, at), ';')) {
        const auto f = split(layer, ',');
        if (f.size() != 3) throw ParseError("layer needs K,C,S", 0);
        g.layers.push_back({parse_int(f[0], "kernel"), parse_int(f[1], "channels"),
                            parse_int(f[2], "stride")});
    }
    if (g.layers.empty()) throw ParseError("no layers", 0);

    const auto q = split(std::string_view(text).substr(at + 1), ',');
    if (q.size() != 4) throw ParseError("quant needs ww,pw,wa,pa", 0);
    g.quant.weights = {parse_int(q[0], "weight width"), parse_int(q[1], "weight precision")};
    g.quant.activations = {parse_int(q[2], "activation width"), parse_int(q[3], "activation precision")};
    fxp::check_format(g.quant.weights);
    fxp::check_format(g.quant.activations);
    return g;
}

} // namespace afnas
