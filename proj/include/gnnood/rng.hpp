#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace gnnood {

// Counter-based deterministic generator. A stream is identified by a 64-bit
// key; derive() hashes extra context (purpose strings, run/layer indices) into
// a child key, so independent parts of an experiment draw from independent
// streams without sharing mutable state. Output is identical across platforms
// and thread schedules, which is what makes reruns byte-reproducible.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : key_(seed), counter_(0) {}

    RngStream derive(std::string_view purpose) const;
    RngStream derive(std::uint64_t index) const;

    std::uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller (both uniforms drawn fresh; no caching,
    // so the draw count per call is fixed).
    double normal();

    bool bernoulli(double p);

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    // Gamma(shape, 1) via Marsaglia-Tsang; shape > 0.
    double gamma(double shape);

    // Beta(a, b) from two gamma draws.
    double beta(double a, double b);

    // Fisher-Yates permutation of {0, ..., n-1}.
    std::vector<std::int64_t> permutation(std::int64_t n);

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

} // namespace gnnood
