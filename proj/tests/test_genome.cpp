#include "doctest.h"

#include "afnas/errors.hpp"
#include "afnas/genome.hpp"

using namespace afnas;

TEST_SUITE_BEGIN("genome");

TEST_CASE("string round-trip") {
    Genome g;
    g.layers = {{8, 16, 2}, {4, 64, 4}};
    g.quant = {{16, 10}, {12, 6}};
    const std::string s = genome_to_string(g);
    CHECK(s == "8,16,2;4,64,4@16,10,12,6");
    CHECK(genome_from_string(s) == g);
}

TEST_CASE("single layer") {
    const Genome g = genome_from_string("32,128,8@12,8,12,8");
    REQUIRE(g.layers.size() == 1);
    CHECK(g.layers[0].kernel == 32);
    CHECK(g.layers[0].out_channels == 128);
    CHECK(g.layers[0].stride == 8);
    CHECK(g.quant.weights.width_bits == 12);
    CHECK(g.quant.activations.precision_bits == 8);
}

TEST_CASE("malformed text rejected") {
    CHECK_THROWS_AS(genome_from_string("8,16,2"), ParseError);          // no quant
    CHECK_THROWS_AS(genome_from_string("8,16@16,8,16,8"), ParseError);  // short layer
    CHECK_THROWS_AS(genome_from_string("@16,8,16,8"), ParseError);      // no layers
    CHECK_THROWS_AS(genome_from_string("8,16,2@16,8"), ParseError);     // short quant
    CHECK_THROWS_AS(genome_from_string("a,b,c@16,8,16,8"), ParseError); // junk ints
    CHECK_THROWS_AS(genome_from_string("8,16,2@64,8,16,8"), ContractError); // bad width
}

TEST_SUITE_END();
