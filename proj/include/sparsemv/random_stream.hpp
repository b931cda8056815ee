#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include "sparsemv/numkit.hpp"

namespace sparsemv {

// Counter-based random stream: the state is a pure function of (seed, stream id),
// so trial t draws the same numbers whichever worker runs it.
class RandomStream {
public:
    using result_type = std::uint64_t;

    RandomStream(std::uint64_t seed, std::uint64_t stream_id);

    static RandomStream stream(std::uint64_t seed, std::uint64_t stream_id) {
        return {seed, stream_id};
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()();

    double normal();
    Vector normal_vector(Index n);

    // Independent child stream, e.g. per sweep point.
    [[nodiscard]] RandomStream split(std::uint64_t child_id) const;

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::normal_distribution<double> gauss_{0.0, 1.0};
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace sparsemv
