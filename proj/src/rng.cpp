#include "tesim/rng.hpp"

#include <cmath>
#include <numbers>

namespace tesim::rng {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void round_once(std::array<std::uint32_t, 4>& x, const std::array<std::uint32_t, 2>& k) {
    const std::uint64_t p0 = std::uint64_t(kMul0) * x[0];
    const std::uint64_t p1 = std::uint64_t(kMul1) * x[2];
    x = {std::uint32_t(p1 >> 32) ^ x[1] ^ k[0], std::uint32_t(p1),
         std::uint32_t(p0 >> 32) ^ x[3] ^ k[1], std::uint32_t(p0)};
}

} // namespace

std::array<std::uint32_t, 4> Philox4x32::block(std::array<std::uint32_t, 4> counter,
                                               std::array<std::uint32_t, 2> key) {
    round_once(counter, key);
    for (int r = 1; r < 10; ++r) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
        round_once(counter, key);
    }
    return counter;
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream)
    : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)},
      stream_{std::uint32_t(stream), std::uint32_t(stream >> 32)} {}

void CounterRng::refill() {
    buf_ = Philox4x32::block(
        {stream_[0], stream_[1], std::uint32_t(block_), std::uint32_t(block_ >> 32)}, key_);
    ++block_;
    used_ = 0;
}

std::uint32_t CounterRng::next_u32() {
    if (used_ == 4)
        refill();
    return buf_[std::size_t(used_++)];
}

std::uint64_t CounterRng::next_u64() {
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return lo | (hi << 32);
}

double CounterRng::uniform() {
    return double(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::uniform_pos() {
    return double((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double CounterRng::gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_gauss_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_gauss_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
}

} // namespace tesim::rng
