#include "cfm/rng.hpp"

#include <cmath>
#include <numbers>

#include "cfm/errors.hpp"

namespace cfm {

namespace {
__extension__ using uint128 = unsigned __int128;
}  // namespace

std::uint64_t mix64(std::uint64_t x) noexcept {
    // splitmix64 finalizer
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t position) : seed_(seed), position_(position) {}

std::uint64_t RngStream::next_u64() {
    const std::uint64_t key = mix64(seed_ ^ 0x6A09E667F3BCC909ULL);
    return mix64(key ^ mix64(position_++));
}

double RngStream::next_uniform() {
    // 53 random bits, shifted by half an ulp so 0 is never produced.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
    require(bound > 0, ErrorKind::contract, "next_below requires a positive bound");
    // Lemire's multiply-shift; bias is below 2^-64 * bound, irrelevant here.
    return static_cast<std::uint64_t>((static_cast<uint128>(next_u64()) * bound) >> 64);
}

double RngStream::next_normal() {
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::split(std::uint64_t tag) {
    const std::uint64_t child_seed = mix64(next_u64() ^ mix64(tag + 0x243F6A8885A308D3ULL));
    RngStream child(child_seed);
    child.lineage_ = lineage_;
    child.lineage_.push_back(seed_);
    return child;
}

Tensor sample_standard_normal(RngStream& stream, const Shape& shape) {
    Tensor out(shape);
    for (double& v : out.values()) {
        v = stream.next_normal();
    }
    return out;
}

Tensor sample_uniform(RngStream& stream, const Shape& shape, double low, double high) {
    Tensor out(shape);
    for (double& v : out.values()) {
        v = low + (high - low) * stream.next_uniform();
    }
    return out;
}

double DropoutMask::kept_fraction() const {
    if (bits.empty()) {
        return 1.0;
    }
    std::size_t kept = 0;
    for (auto b : bits) {
        kept += b;
    }
    return static_cast<double>(kept) / static_cast<double>(bits.size());
}

Tensor DropoutMask::apply(const Tensor& x) const {
    require(x.shape() == shape, ErrorKind::dimension,
            "dropout mask shape " + shape_string(shape) + " does not match " + shape_string(x.shape()));
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = bits[i] ? x[i] * scale : 0.0;
    }
    return out;
}

DropoutMask make_dropout_mask(RngStream& stream, const Shape& shape, double rate) {
    require(rate >= 0.0 && rate < 1.0, ErrorKind::config, "dropout rate must lie in [0, 1), got " + std::to_string(rate));
    DropoutMask mask;
    mask.shape = shape;
    mask.keep_probability = 1.0 - rate;
    mask.scale = 1.0 / mask.keep_probability;
    mask.fingerprint = mix64(stream.seed() ^ mix64(stream.position()));
    mask.bits.resize(shape_size(shape));
    for (auto& b : mask.bits) {
        // rate 0 still consumes draws so stream positions do not depend on the rate.
        b = stream.next_uniform() >= rate ? 1 : 0;
    }
    return mask;
}

}  // namespace cfm
