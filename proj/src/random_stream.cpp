#include "sparsemv/random_stream.hpp"

namespace sparsemv {

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream_id)
    : key_(mix64(mix64(seed + 0x9e3779b97f4a7c15ULL) ^ (stream_id * 0xd1342543de82ef95ULL + 1))) {}

RandomStream::result_type RandomStream::operator()() {
    // splitmix64 over a Weyl sequence keyed by the stream
    ++counter_;
    return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
}

double RandomStream::normal() { return gauss_(*this); }

Vector RandomStream::normal_vector(Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = normal();
    return v;
}

RandomStream RandomStream::split(std::uint64_t child_id) const {
    return {key_ ^ 0x5851f42d4c957f2dULL, child_id};
}

}  // namespace sparsemv
